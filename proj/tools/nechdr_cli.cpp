#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "nechdr/checkpoint.hpp"
#include "nechdr/data_synth.hpp"
#include "nechdr/flow_ops.hpp"
#include "nechdr/image_io.hpp"
#include "nechdr/metrics.hpp"
#include "nechdr/run_config.hpp"
#include "nechdr/trainer.hpp"

namespace fs = std::filesystem;
using namespace nechdr;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kShape = 3 };

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> steps;
  std::optional<std::string> variant;
  bool lightweight = false;
  bool overwrite = false;
  bool print_config = false;
  std::vector<std::string> sets;
  std::optional<std::string> input, output, dataset, checkpoint, rendered, gt, scene;
  std::optional<int> row;
};

void add_common(CLI::App* app, CommonOptions& o) {
  app->add_option("--config", o.config, "key = value configuration file");
  app->add_option("--seed", o.seed, "random seed");
  app->add_option("--steps", o.steps, "training steps");
  app->add_option("--variant", o.variant, "two | three")->check(CLI::IsMember({"two", "three"}));
  app->add_flag("--lightweight", o.lightweight, "use the lightweight channel widths");
  app->add_flag("--overwrite", o.overwrite, "replace existing outputs");
  app->add_flag("--print-config", o.print_config, "print the resolved configuration and exit");
  app->add_option("--set", o.sets, "extra key=value override (repeatable)");
}

RunConfig resolve(const CommonOptions& o) {
  RunConfig c;
  if (!o.config.empty()) c.load_file(o.config);
  auto put = [&](const char* key, const std::optional<std::string>& v) {
    if (v) c.set(key, *v);
  };
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
    c.set(s.substr(0, eq), s.substr(eq + 1));
  }
  if (o.seed) c.seed = *o.seed;
  if (o.steps) c.steps = *o.steps;
  put("variant", o.variant);
  if (o.lightweight) c.lightweight = true;
  put("input", o.input);
  put("output", o.output);
  put("dataset", o.dataset);
  put("checkpoint", o.checkpoint);
  put("rendered", o.rendered);
  put("gt", o.gt);
  put("scene", o.scene);
  if (o.row) c.row = *o.row;
  c.validate();
  return c;
}

void require(const std::string& value, const char* key) {
  if (value.empty()) throw UsageError(std::string("missing required setting '") + key + "'");
}

// Single instance per output location, released on scope exit.
class OutputLock {
 public:
  explicit OutputLock(const fs::path& target) : path_(fs::absolute(target).lexically_normal()) {
    path_ += ".lock";
    if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) throw DataError("output is locked by another run: " + path_.string());
  }
  ~OutputLock() {
    ::close(fd_);
    std::error_code ec;
    fs::remove(path_, ec);
  }
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

// Builds a directory under a staging name and moves it into place at the end.
class StagedDir {
 public:
  StagedDir(const fs::path& target, bool overwrite) : target_(target) {
    if (fs::exists(target_) && !overwrite) {
      throw DataError(target_.string() + " already exists (use --overwrite to replace it)");
    }
    staging_ = target_;
    staging_ += ".staging";
    fs::remove_all(staging_);
    fs::create_directories(staging_);
  }
  ~StagedDir() {
    if (!committed_) {
      std::error_code ec;
      fs::remove_all(staging_, ec);
    }
  }
  const fs::path& path() const { return staging_; }
  void commit() {
    fs::path old = target_;
    old += ".old";
    fs::remove_all(old);
    if (fs::exists(target_)) fs::rename(target_, old);
    fs::rename(staging_, target_);
    fs::remove_all(old);
    committed_ = true;
  }

 private:
  fs::path target_, staging_;
  bool committed_ = false;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("short write to " + path.string());
}

std::string frame_file(int i, const std::string& suffix) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "f%04d", i);
  return buf + suffix;
}

int cmd_synth(const RunConfig& c, bool overwrite) {
  require(c.output, "output");
  if (c.input.empty() && c.scene.empty()) throw UsageError("synth needs --input DIR or --scene NAME");
  const ExposureConfig exposure = c.exposure();
  double norm_max = 1.0;
  std::vector<HdrImage> hdr;
  std::string name;
  if (!c.input.empty()) {
    hdr = load_hdr_frames(c.input, &norm_max);
    name = fs::path(c.input).filename().string();
    if (name.empty()) name = "sequence";
  } else {
    hdr = make_toy_scene(parse_toy_scene(c.scene), c.frames, c.height, c.width);
    name = c.scene;
  }
  SynthOptions opts;
  opts.start_phase = c.start_phase;
  opts.quantize = c.quantize;
  opts.noise_sigma = c.noise_sigma;
  opts.noise_seed = c.seed;
  const SynthesizedSequence seq = synthesize_sequence(hdr, exposure, opts);

  OutputLock lock(c.output);
  StagedDir out(c.output, overwrite);
  write_sequence(seq, out.path() / name);
  DatasetManifest manifest;
  manifest.exposure = exposure;
  manifest.sequences.push_back({name, seq.frame_count(), norm_max, c.start_phase});
  manifest.write(out.path() / "manifest.txt");
  manifest.validate(out.path());
  out.commit();
  std::cout << "wrote " << seq.frame_count() << " frames of " << name << " to " << c.output << "\n";
  return kOk;
}

int cmd_train(const RunConfig& c, bool overwrite) {
  require(c.dataset, "dataset");
  require(c.output, "output");
  const fs::path manifest_path(c.dataset);
  const DatasetManifest manifest = DatasetManifest::read(manifest_path);
  const fs::path root = manifest_path.parent_path();
  manifest.validate(root);
  TrainConfig tc = c.train_config();
  if (manifest.exposure.epsilons != tc.exposure.epsilons) {
    throw ConfigError("dataset exposures do not match the configured " + to_string(c.variant) +
                      "-exposure schedule");
  }
  std::vector<Sample> samples;
  for (const auto& entry : manifest.sequences) {
    const SynthesizedSequence seq = load_sequence(root / entry.path, tc.exposure, entry.start_phase);
    auto s = window_samples(seq, c.crop, c.crop, c.stride, c.seed);
    samples.insert(samples.end(), s.begin(), s.end());
  }
  std::optional<Checkpoint> resume;
  if (!c.checkpoint.empty()) resume = load_checkpoint(c.checkpoint, tc.arch);

  OutputLock lock(c.output);
  StagedDir out(c.output, overwrite);
  std::string csv = loss_csv_header() + "\n";
  const auto start = std::chrono::steady_clock::now();
  TrainResult result = train(samples, tc, resume, [&](std::int64_t step, const LossBreakdown& b) {
    csv += loss_csv_row(step, b) + "\n";
    if (step % 50 == 0) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::fprintf(stderr, "step %lld total %.6f (%.1fs)\n", static_cast<long long>(step), b.total, secs);
    }
  });
  save_checkpoint(result.checkpoint, out.path() / "checkpoint.bin");
  write_text(out.path() / "loss.csv", csv);
  write_text(out.path() / "config.txt", c.dump());
  out.commit();
  std::cout << "trained to step " << result.checkpoint.optim->step << ", "
            << count_params(result.checkpoint.params) << " parameters, output in " << c.output << "\n";
  return kOk;
}

int cmd_infer(const RunConfig& c, bool overwrite) {
  require(c.checkpoint, "checkpoint");
  require(c.input, "input");
  require(c.output, "output");
  const ArchConfig arch = c.arch();
  const ExposureConfig exposure = c.exposure();
  const Checkpoint ckpt = load_checkpoint(c.checkpoint, arch);
  fs::path input_dir(c.input);
  if (fs::is_directory(input_dir / "input")) input_dir /= "input";
  std::vector<Tensor> frames;
  std::vector<int> indices;
  int i = 1;
  for (const auto& p : sequence_scan(input_dir, "f*.png")) {
    frames.push_back(to_tensor(read_png8(p)));
    indices.push_back(exposure_index(exposure, i++ + c.start_phase));
  }
  const InferResult r = infer_video(frames, indices, ckpt.params, arch, exposure);

  OutputLock lock(c.output);
  StagedDir out(c.output, overwrite);
  fs::create_directories(out.path() / "hdr");
  fs::create_directories(out.path() / "tonemapped");
  fs::create_directories(out.path() / "completed");
  for (std::size_t t = 0; t < r.hdr.size(); ++t) {
    const int f = static_cast<int>(t) + 1;
    write_pfm(image_from_tensor<HdrTag>(r.hdr[t]), out.path() / "hdr" / frame_file(f, ".pfm"));
    write_png8(image_from_tensor<LdrTag>(tonemap_mu(r.hdr[t], exposure.mu)),
               out.path() / "tonemapped" / frame_file(f, ".png"));
    for (std::size_t m = 0; m < r.completed[t].size(); ++m) {
      write_png8(image_from_tensor<LdrTag>(r.completed[t][m]),
                 out.path() / "completed" /
                     frame_file(f, "_e" + std::to_string(r.completed_indices[t][m]) + ".png"));
    }
  }
  out.commit();
  std::cout << "rendered " << r.hdr.size() << " frames to " << c.output << "\n";
  return kOk;
}

std::vector<Tensor> load_hdr_dir(fs::path dir) {
  if (fs::is_directory(dir / "hdr")) dir /= "hdr";
  else if (fs::is_directory(dir / "gt_hdr")) dir /= "gt_hdr";
  std::vector<Tensor> out;
  for (const auto& p : sequence_scan(dir, "f*.pfm")) out.push_back(to_tensor(read_pfm(p)));
  return out;
}

int cmd_eval(const RunConfig& c, bool overwrite) {
  require(c.rendered, "rendered");
  require(c.gt, "gt");
  require(c.output, "output");
  const auto rendered = load_hdr_dir(c.rendered);
  const auto gt = load_hdr_dir(c.gt);
  EvalReport report = evaluate(rendered, gt, c.mu);
  report.config = {{"rendered", c.rendered}, {"gt", c.gt}, {"mu", std::to_string(c.mu)},
                   {"variant", to_string(c.variant)}};
  OutputLock lock(c.output);
  StagedDir out(c.output, overwrite);
  write_text(out.path() / "report.txt", report.text());
  write_text(out.path() / "report.json", report.json());
  out.commit();
  std::cout << report.text();
  return kOk;
}

int cmd_profile(const RunConfig& c, bool overwrite) {
  require(c.rendered, "rendered");
  require(c.output, "output");
  const auto frames = load_hdr_dir(c.rendered);
  const Tensor profile = temporal_profile(frames, c.row, c.mu);
  const fs::path target(c.output);
  if (fs::exists(target) && !overwrite) {
    throw DataError(target.string() + " already exists (use --overwrite to replace it)");
  }
  OutputLock lock(target);
  fs::path tmp = target;
  tmp += ".tmp.png";
  write_png8(image_from_tensor<LdrTag>(profile), tmp);
  fs::rename(tmp, target);
  std::cout << "profile " << profile.shape().h << "x" << profile.shape().w << " written to " << target.string()
            << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Alternating-exposure HDR video reconstruction"};
  app.require_subcommand(1);
  CommonOptions opts;

  auto* synth = app.add_subcommand("synth", "synthesize an alternating-exposure dataset");
  add_common(synth, opts);
  synth->add_option("--input", opts.input, "directory of fNNNN.pfm linear HDR frames");
  synth->add_option("--scene", opts.scene, "procedural scene: static | shift | brightness-ramp");
  synth->add_option("--output", opts.output, "dataset directory");

  auto* train_cmd = app.add_subcommand("train", "train a model");
  add_common(train_cmd, opts);
  train_cmd->add_option("--dataset", opts.dataset, "manifest.txt from synth");
  train_cmd->add_option("--checkpoint", opts.checkpoint, "checkpoint to resume from");
  train_cmd->add_option("--output", opts.output, "run directory");

  auto* infer = app.add_subcommand("infer", "render HDR frames from an LDR sequence");
  add_common(infer, opts);
  infer->add_option("--checkpoint", opts.checkpoint, "trained checkpoint");
  infer->add_option("--input", opts.input, "sequence directory with fNNNN.png frames");
  infer->add_option("--output", opts.output, "output directory");

  auto* eval = app.add_subcommand("eval", "tone-mapped PSNR/SSIM against ground truth");
  add_common(eval, opts);
  eval->add_option("--rendered", opts.rendered, "directory of rendered fNNNN.pfm");
  eval->add_option("--gt", opts.gt, "directory of ground-truth fNNNN.pfm");
  eval->add_option("--output", opts.output, "report directory");

  auto* profile = app.add_subcommand("profile", "temporal profile of a rendered sequence");
  add_common(profile, opts);
  profile->add_option("--rendered", opts.rendered, "directory of rendered fNNNN.pfm");
  profile->add_option("--row", opts.row, "top row of the two-pixel strip");
  profile->add_option("--output", opts.output, "profile PNG path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    const RunConfig config = resolve(opts);
    if (opts.print_config) {
      std::cout << config.dump();
      return kOk;
    }
    if (synth->parsed()) return cmd_synth(config, opts.overwrite);
    if (train_cmd->parsed()) return cmd_train(config, opts.overwrite);
    if (infer->parsed()) return cmd_infer(config, opts.overwrite);
    if (eval->parsed()) return cmd_eval(config, opts.overwrite);
    if (profile->parsed()) return cmd_profile(config, opts.overwrite);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const FormatError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::invalid_argument& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kShape;
  } catch (const std::out_of_range& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kShape;
  } catch (const CheckpointError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kShape;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}
