#include "nechdr/data_synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

namespace nechdr {

namespace fs = std::filesystem;

namespace {

std::string frame_name(int i, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "f%04d.%s", i, ext);
  return buf;
}

LdrImage expose(const HdrImage& hdr, double exposure, double gamma) {
  LdrImage out(hdr.height(), hdr.width());
  auto src = hdr.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const double v = std::clamp(static_cast<double>(src[i]) * exposure, 0.0, 1.0);
    dst[i] = static_cast<float>(std::pow(v, 1.0 / gamma));
  }
  return out;
}

void quantize(LdrImage& image) {
  for (float& v : image.values()) v = dequantize8(quantize8(v));
}

Tensor crop_image(const Image3<LdrTag>& image, int y0, int x0, int h, int w) {
  Tensor t({1, 3, h, w});
  auto d = t.mutable_data();
  std::size_t k = 0;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) d[k++] = image.at(c, y0 + y, x0 + x);
  return t;
}

Tensor crop_image(const Image3<HdrTag>& image, int y0, int x0, int h, int w) {
  Tensor t({1, 3, h, w});
  auto d = t.mutable_data();
  std::size_t k = 0;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) d[k++] = image.at(c, y0 + y, x0 + x);
  return t;
}

double texture(double x, double y, int c) {
  const double phase = 0.7 * c;
  const double a = 0.5 + 0.25 * std::sin(0.31 * x + 0.9 * std::sin(0.11 * y) + phase) +
                   0.25 * std::cos(0.23 * y - 0.17 * x);
  const double d = 0.5 + 0.5 * std::sin(0.9 * x + phase) * std::sin(0.7 * y);
  const double v = 0.7 * a + 0.3 * d;
  return 0.004 + 0.9 * std::pow(v, 2.2);
}

}  // namespace

SynthesizedSequence synthesize_sequence(std::span<const HdrImage> hdr_frames,
                                        const ExposureConfig& config, const SynthOptions& options) {
  config.validate();
  if (hdr_frames.empty()) throw DataError("synthesize_sequence: empty sequence");
  if (options.start_phase < 0) throw std::invalid_argument("start_phase must be >= 0");
  SynthesizedSequence seq;
  seq.config = config;
  seq.start_phase = options.start_phase;
  seq.hdr.assign(hdr_frames.begin(), hdr_frames.end());
  std::mt19937_64 rng(options.noise_seed);
  std::normal_distribution<double> noise(0.0, options.noise_sigma.value_or(0.0));
  for (std::size_t f = 0; f < hdr_frames.size(); ++f) {
    const HdrImage& h = hdr_frames[f];
    if (h.height() != hdr_frames[0].height() || h.width() != hdr_frames[0].width()) {
      throw DataError("synthesize_sequence: frame " + std::to_string(f + 1) + " has a different size");
    }
    std::vector<LdrImage> renders;
    for (int e = 0; e < config.z; ++e) {
      LdrImage r = expose(h, config.epsilons[e], config.gamma);
      if (options.quantize) quantize(r);
      renders.push_back(std::move(r));
    }
    const int idx = exposure_index(config, static_cast<int>(f) + 1 + options.start_phase);
    LdrImage input = expose(h, config.epsilons[idx], config.gamma);
    if (options.noise_sigma && idx == 0) {
      for (float& v : input.values()) {
        v = static_cast<float>(std::clamp(v + noise(rng), 0.0, 1.0));
      }
    }
    if (options.quantize) quantize(input);
    seq.inputs.push_back(std::move(input));
    seq.input_exposure.push_back(idx);
    seq.renders.push_back(std::move(renders));
  }
  return seq;
}

int window_radius(int z) {
  if (z == 2) return 1;
  if (z == 3) return 2;
  throw std::invalid_argument("exposure count z must be 2 or 3");
}

namespace {

Tensor flip(const Tensor& t, bool horizontal, bool vertical) {
  if (!horizontal && !vertical) return t;
  const Shape& s = t.shape();
  Tensor out(s);
  auto src = t.data();
  auto dst = out.mutable_data();
  for (int p = 0; p < s.n * s.c; ++p)
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) {
        const int sy = vertical ? s.h - 1 - y : y;
        const int sx = horizontal ? s.w - 1 - x : x;
        dst[(static_cast<std::size_t>(p) * s.h + y) * s.w + x] = src[(static_cast<std::size_t>(p) * s.h + sy) * s.w + sx];
      }
  return out;
}

}  // namespace

std::string Augmentation::str() const {
  std::string out;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += "+";
    out += name;
  };
  add(flip_h, "hflip");
  add(flip_v, "vflip");
  add(reverse, "reverse");
  return out.empty() ? "none" : out;
}

Sample augment(const Sample& sample, const Augmentation& aug) {
  if (aug.reverse && sample.frames.size() != 3) {
    throw std::invalid_argument("temporal reversal needs a three-frame window, got " +
                                std::to_string(sample.frames.size()));
  }
  Sample out = sample;
  auto apply = [&](std::vector<Tensor>& ts) {
    for (auto& t : ts) t = flip(t, aug.flip_h, aug.flip_v);
  };
  apply(out.frames);
  apply(out.gt_completed);
  apply(out.gt_neighbor_hdr);
  out.gt_hdr = flip(out.gt_hdr, aug.flip_h, aug.flip_v);
  if (aug.reverse) {
    std::reverse(out.frames.begin(), out.frames.end());
    std::reverse(out.exposure_indices.begin(), out.exposure_indices.end());
    std::reverse(out.exposures.begin(), out.exposures.end());
    std::reverse(out.gt_neighbor_hdr.begin(), out.gt_neighbor_hdr.end());
  }
  out.augmentation = aug.str();
  return out;
}

Augmentation augmentation_for_step(std::uint64_t seed, std::int64_t step, int z) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32), 0x61756775u};
  std::mt19937_64 rng(seq);
  const std::uint64_t bits = rng();
  return {(bits & 1) != 0, (bits & 2) != 0, z == 2 && (bits & 4) != 0};
}

std::vector<Sample> window_samples(const SynthesizedSequence& seq, int crop_h, int crop_w,
                                   int stride, std::uint64_t seed) {
  const int r = window_radius(seq.config.z);
  const int n = seq.frame_count();
  if (n < 2 * r + 1) {
    throw DataError("sequence of " + std::to_string(n) + " frames is shorter than one window");
  }
  if (stride < 1) throw std::invalid_argument("window stride must be >= 1");
  const int height = seq.hdr[0].height();
  const int width = seq.hdr[0].width();
  const int h = crop_h > 0 ? crop_h : height;
  const int w = crop_w > 0 ? crop_w : width;
  if (h > height || w > width) {
    throw std::invalid_argument("crop " + std::to_string(h) + "x" + std::to_string(w) +
                                " larger than frame " + std::to_string(height) + "x" +
                                std::to_string(width));
  }
  std::mt19937_64 rng(seed);
  std::vector<Sample> out;
  for (int t = r + 1; t <= n - r; t += stride) {
    Sample s;
    s.t = t;
    s.crop_y = std::uniform_int_distribution<int>(0, height - h)(rng);
    s.crop_x = std::uniform_int_distribution<int>(0, width - w)(rng);
    for (int i = t - r; i <= t + r; ++i) {
      s.frames.push_back(crop_image(seq.inputs[i - 1], s.crop_y, s.crop_x, h, w));
      const int idx = seq.input_exposure[i - 1];
      s.exposure_indices.push_back(idx);
      s.exposures.push_back(seq.config.epsilons[idx]);
    }
    // Neighbour order matches the network: every window frame except t.
    for (int i = t - r; i <= t + r; ++i) {
      if (i != t) s.gt_neighbor_hdr.push_back(crop_image(seq.hdr[i - 1], s.crop_y, s.crop_x, h, w));
    }
    // Each missing exposure is carried by the nearest earlier neighbours.
    for (int d = r; d >= 1; --d) {
      const int idx = seq.input_exposure[t - d - 1];
      s.gt_completed_indices.push_back(idx);
      s.gt_completed.push_back(crop_image(seq.renders[t - 1][idx], s.crop_y, s.crop_x, h, w));
    }
    s.gt_hdr = crop_image(seq.hdr[t - 1], s.crop_y, s.crop_x, h, w);
    out.push_back(std::move(s));
  }
  return out;
}

ToySceneKind parse_toy_scene(const std::string& name) {
  if (name == "static") return ToySceneKind::kStatic;
  if (name == "shift") return ToySceneKind::kShift;
  if (name == "brightness-ramp") return ToySceneKind::kBrightnessRamp;
  throw std::invalid_argument("unknown toy scene '" + name + "' (static|shift|brightness-ramp)");
}

std::string to_string(ToySceneKind kind) {
  switch (kind) {
    case ToySceneKind::kStatic: return "static";
    case ToySceneKind::kShift: return "shift";
    case ToySceneKind::kBrightnessRamp: return "brightness-ramp";
  }
  return "static";
}

std::vector<HdrImage> make_toy_scene(ToySceneKind kind, int frames, int height, int width) {
  if (frames < 5) throw std::invalid_argument("toy scenes need at least 5 frames");
  if (height < 1 || width < 1) throw std::invalid_argument("toy scene size must be positive");
  std::vector<HdrImage> out;
  const double cy = 0.5 * (height - 1), cx = 0.5 * (width - 1);
  const double radius = std::min(height, width) / 5.0;
  for (int i = 0; i < frames; ++i) {
    HdrImage img(height, width);
    const double dx = kind == ToySceneKind::kShift ? i : 0;
    const double highlight = std::min(1.0, 0.3 + 0.7 * i / (frames - 1));
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
          double v = texture(x + dx, y, c);
          if (kind == ToySceneKind::kBrightnessRamp && std::hypot(y - cy, x - cx) <= radius) {
            v = highlight;
          }
          img.at(c, y, x) = static_cast<float>(v);
        }
    out.push_back(std::move(img));
  }
  return out;
}

void DatasetManifest::write(const fs::path& path) const {
  std::ostringstream os;
  os.precision(17);
  os << "exposures";
  for (double e : exposure.epsilons) os << ' ' << e;
  os << "\ngamma " << exposure.gamma << "\n";
  for (const auto& s : sequences) {
    os << "sequence " << s.path << ' ' << s.frames << ' ' << s.norm_max << ' ' << s.start_phase << "\n";
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write manifest " + path.string());
  out << os.str();
  if (!out) throw DataError("short write to manifest " + path.string());
}

DatasetManifest DatasetManifest::read(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  DatasetManifest m;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key) || key[0] == '#') continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (key == "exposures") {
      m.exposure.epsilons.clear();
      double e;
      while (ls >> e) m.exposure.epsilons.push_back(e);
      m.exposure.z = static_cast<int>(m.exposure.epsilons.size());
    } else if (key == "gamma") {
      if (!(ls >> m.exposure.gamma)) throw DataError(where + ": bad gamma");
    } else if (key == "sequence") {
      ManifestEntry e;
      if (!(ls >> e.path >> e.frames >> e.norm_max)) throw DataError(where + ": bad sequence line");
      ls >> e.start_phase;
      if (!(e.norm_max > 0)) throw DataError(where + ": normalization max must be > 0");
      m.sequences.push_back(e);
    } else {
      throw DataError(where + ": unknown key '" + key + "'");
    }
  }
  try {
    m.exposure.validate();
  } catch (const std::invalid_argument& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return m;
}

void DatasetManifest::validate(const fs::path& root) const {
  if (sequences.empty()) throw DataError("manifest lists no sequences");
  for (const auto& s : sequences) {
    const fs::path dir = root / s.path;
    for (int i = 1; i <= s.frames; ++i) {
      const fs::path files[] = {dir / "input" / frame_name(i, "png"), dir / "gt_hdr" / frame_name(i, "pfm")};
      for (const auto& f : files) {
        if (!fs::exists(f)) throw DataError("missing dataset file " + f.string());
      }
      for (int e = 0; e < exposure.z; ++e) {
        const fs::path f = dir / "gt_ldr" / ("e" + std::to_string(e)) / frame_name(i, "png");
        if (!fs::exists(f)) throw DataError("missing dataset file " + f.string());
      }
    }
  }
}

void write_sequence(const SynthesizedSequence& seq, const fs::path& dir) {
  fs::create_directories(dir / "input");
  fs::create_directories(dir / "gt_hdr");
  for (int e = 0; e < seq.config.z; ++e) fs::create_directories(dir / "gt_ldr" / ("e" + std::to_string(e)));
  for (int i = 1; i <= seq.frame_count(); ++i) {
    write_png8(seq.inputs[i - 1], dir / "input" / frame_name(i, "png"));
    write_pfm(seq.hdr[i - 1], dir / "gt_hdr" / frame_name(i, "pfm"));
    for (int e = 0; e < seq.config.z; ++e) {
      write_png8(seq.renders[i - 1][e], dir / "gt_ldr" / ("e" + std::to_string(e)) / frame_name(i, "png"));
    }
  }
}

SynthesizedSequence load_sequence(const fs::path& dir, const ExposureConfig& config, int start_phase) {
  config.validate();
  SynthesizedSequence seq;
  seq.config = config;
  seq.start_phase = start_phase;
  for (const auto& p : sequence_scan(dir / "gt_hdr", "f*.pfm")) seq.hdr.push_back(read_pfm(p));
  const auto inputs = sequence_scan(dir / "input", "f*.png");
  if (inputs.size() != seq.hdr.size()) {
    throw DataError(dir.string() + ": " + std::to_string(inputs.size()) + " input frames but " +
                    std::to_string(seq.hdr.size()) + " HDR frames");
  }
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    seq.inputs.push_back(read_png8(inputs[i]));
    seq.input_exposure.push_back(exposure_index(config, static_cast<int>(i) + 1 + start_phase));
  }
  seq.renders.resize(seq.hdr.size());
  for (int e = 0; e < config.z; ++e) {
    const auto files = sequence_scan(dir / "gt_ldr" / ("e" + std::to_string(e)), "f*.png");
    if (files.size() != seq.hdr.size()) {
      throw DataError(dir.string() + ": exposure " + std::to_string(e) + " renders are incomplete");
    }
    for (std::size_t i = 0; i < files.size(); ++i) seq.renders[i].push_back(read_png8(files[i]));
  }
  return seq;
}

std::vector<HdrImage> load_hdr_frames(const fs::path& dir, double* norm_max) {
  std::vector<HdrImage> frames;
  for (const auto& p : sequence_scan(dir, "f*.pfm")) frames.push_back(read_pfm(p));
  double peak = 0;
  for (const auto& f : frames) {
    for (float v : f.values()) {
      if (!std::isfinite(v) || v < 0) throw DataError(dir.string() + ": negative or non-finite HDR value");
      peak = std::max(peak, static_cast<double>(v));
    }
  }
  if (!(peak > 0)) throw DataError(dir.string() + ": sequence is entirely black");
  for (auto& f : frames) {
    for (float& v : f.values()) v = static_cast<float>(v / peak);
  }
  if (norm_max) *norm_max = peak;
  return frames;
}

}  // namespace nechdr
