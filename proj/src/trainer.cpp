#include "nechdr/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"
#include "nechdr/ops.hpp"

namespace nechdr {

LossTerms<float> sample_losses(const RenderOutput<float>& out, const Sample& sample,
                               const ModelParams& params, const ArchConfig& arch,
                               const ExposureConfig& exposure) {
  if (out.completed_ldr.size() != sample.gt_completed.size()) {
    throw std::invalid_argument("sample has " + std::to_string(sample.gt_completed.size()) +
                                " completion targets, network produced " +
                                std::to_string(out.completed_ldr.size()));
  }
  const double mu = exposure.mu;
  LossTerms<float> terms;
  std::vector<FramePyramid<float>> completed_gt;
  FramePyramid<float> rendered_gt;
  {
    NoGradGuard guard;
    for (const auto& g : sample.gt_completed) completed_gt.push_back(encode(g, params, arch));
    rendered_gt = encode(tonemap_mu(sample.gt_hdr, mu), params, arch);
  }

  std::vector<Tensor> psi_gt(rendered_gt.levels.begin(), rendered_gt.levels.end() - 1);
  for (std::size_t m = 0; m < out.completed_ldr.size(); ++m) {
    Tensor l = l1_loss(out.completed_ldr[m], sample.gt_completed[m]);
    terms.l_i_com = terms.l_i_com.defined() ? terms.l_i_com + l : l;
    std::vector<Tensor> phi_gt(completed_gt[m].levels.begin(), completed_gt[m].levels.end() - 1);
    auto [g, r] = feature_geometry_loss<float>(out.completed_features[m], phi_gt, out.hdr_features, psi_gt);
    terms.l_g_com = terms.l_g_com.defined() ? terms.l_g_com + g : g;
    if (m == 0) terms.l_g_ren = r;
  }
  terms.l_i_ren = l1_loss(tonemap_mu(out.hdr, mu), tonemap_mu(sample.gt_hdr, mu));
  const int reference = static_cast<int>(sample.frames.size()) / 2;
  const Tensor mask = well_exposed_mask(sample.frames[reference], exposure.delta_low, exposure.delta_high);
  terms.l_f = flow_alignment_loss<float>(out.flows, sample.gt_neighbor_hdr, sample.gt_hdr, mask, mu);
  return terms;
}

LossBreakdown train_step(ModelParams& params, OptimState& state, const Sample& sample,
                         const TrainConfig& config) {
  params.zero_grad();
  const RenderOutput<float> out = forward(sample.window(), params, config.arch, config.exposure.gamma);
  const LossTerms<float> terms = sample_losses(out, sample, params, config.arch, config.exposure);
  const Tensor total = total_loss(terms, config.weights);
  const LossBreakdown b = breakdown(terms, config.weights);
  backward(total);
  adamw_step(params, state);
  return b;
}

std::size_t sample_for_step(std::size_t sample_count, std::int64_t step, std::uint64_t seed) {
  if (sample_count == 0) throw DataError("training set is empty");
  if (step < 1) throw std::invalid_argument("steps are numbered from 1");
  const std::uint64_t epoch = static_cast<std::uint64_t>(step - 1) / sample_count;
  const std::size_t pos = static_cast<std::size_t>(step - 1) % sample_count;
  std::vector<std::size_t> order(sample_count);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed + epoch);
  // Fisher-Yates with explicit draws so the order does not depend on the
  // standard library's shuffle.
  for (std::size_t i = sample_count - 1; i > 0; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % (i + 1));
    std::swap(order[i], order[j]);
  }
  return order[pos];
}

TrainResult train(std::span<const Sample> samples, const TrainConfig& config,
                  std::optional<Checkpoint> resume,
                  const std::function<void(std::int64_t, const LossBreakdown&)>& on_step) {
  if (samples.empty()) throw DataError("training set is empty");
  config.arch.validate();
  config.exposure.validate();
  config.optim.validate();
  if (config.steps < 0) throw std::invalid_argument("steps must be >= 0");
  TrainResult result;
  Checkpoint& ck = result.checkpoint;
  if (resume) {
    check_compatible(*resume, config.arch);
    ck = std::move(*resume);
    if (!ck.optim) {
      ck.optim = OptimState{};
      ck.optim->config = config.optim;
    }
  } else {
    ck.arch = config.arch;
    ck.params = init_params(config.arch, config.seed);
    ck.optim = OptimState{};
    ck.optim->config = config.optim;
  }
  ck.params.set_requires_grad(true);
  OptimState& state = *ck.optim;
  while (state.step < config.steps) {
    const std::int64_t step = state.step + 1;
    const Sample& s = samples[sample_for_step(samples.size(), step, config.seed)];
    const LossBreakdown b =
        config.augment
            ? train_step(ck.params, state, augment(s, augmentation_for_step(config.seed, step, config.exposure.z)),
                         config)
            : train_step(ck.params, state, s, config);
    result.losses.emplace_back(step, b);
    if (on_step) on_step(step, b);
  }
  ck.params.zero_grad();
  return result;
}

std::string loss_csv_header() { return "step,l_i_com,l_i_ren,l_g_com,l_g_ren,l_f,total"; }

std::string loss_csv_row(std::int64_t step, const LossBreakdown& b) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", static_cast<long long>(step),
                b.l_i_com, b.l_i_ren, b.l_g_com, b.l_g_ren, b.l_f, b.total);
  return buf;
}

void check_exposure_pattern(std::span<const int> idx, const ExposureConfig& exposure) {
  exposure.validate();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= exposure.z) {
      throw std::invalid_argument("frame " + std::to_string(i + 1) + " has exposure index " +
                                  std::to_string(idx[i]) + " outside 0.." + std::to_string(exposure.z - 1));
    }
    if (i > 0 && idx[i] != (idx[i - 1] + 1) % exposure.z) {
      throw std::invalid_argument("exposure pattern breaks at frame " + std::to_string(i + 1) +
                                  ": index " + std::to_string(idx[i]) + " follows " +
                                  std::to_string(idx[i - 1]));
    }
  }
}

InferResult infer_video(std::span<const Tensor> frames, std::span<const int> exposure_indices,
                        const ModelParams& params, const ArchConfig& arch,
                        const ExposureConfig& exposure) {
  if (exposure.z != (arch.variant == Variant::kTwoExposure ? 2 : 3)) {
    throw std::invalid_argument("exposure count " + std::to_string(exposure.z) + " does not match the " +
                                to_string(arch.variant) + "-exposure network");
  }
  if (frames.size() != exposure_indices.size()) {
    throw std::invalid_argument("one exposure index per frame required");
  }
  check_exposure_pattern(exposure_indices, exposure);
  const int n = static_cast<int>(frames.size());
  const int r = window_radius(exposure.z);
  if (n < 2 * r + 1) {
    throw DataError("sequence of " + std::to_string(n) + " frames is shorter than one window");
  }
  const int height = frames[0].shape().h, width = frames[0].shape().w;
  std::vector<Tensor> padded;
  for (const auto& f : frames) {
    if (!(f.shape() == frames[0].shape())) throw ShapeError("infer_video: frame sizes differ");
    padded.push_back(pad_reflect(f, 16));
  }

  NoGradGuard guard;
  InferResult result;
  for (int t = 0; t < n; ++t) {
    FrameWindow<float> window;
    for (int d = -r; d <= r; ++d) {
      int src = t + d;
      // Out-of-range slots borrow the nearest frame with the same exposure.
      for (int k = 1; src < 0 || src >= n; ++k) {
        const int lo = t + d - k * exposure.z, hi = t + d + k * exposure.z;
        if (hi >= 0 && hi < n) src = hi;
        else if (lo >= 0 && lo < n) src = lo;
        if (k > n) throw DataError("cannot fill window for frame " + std::to_string(t + 1));
      }
      window.frames.push_back(padded[src]);
      window.exposures.push_back(exposure.epsilons[exposure_indices[src]]);
    }
    const RenderOutput<float> out = forward(window, params, arch, exposure.gamma);
    result.hdr.push_back(crop(out.hdr, height, width));
    std::vector<Tensor> completed;
    std::vector<int> indices;
    for (std::size_t m = 0; m < out.completed_ldr.size(); ++m) {
      completed.push_back(crop(out.completed_ldr[m], height, width));
      indices.push_back(((exposure_indices[t] - r + static_cast<int>(m)) % exposure.z + exposure.z) %
                        exposure.z);
    }
    result.completed.push_back(std::move(completed));
    result.completed_indices.push_back(std::move(indices));
  }
  return result;
}

EvalReport evaluate(std::span<const Tensor> rendered, std::span<const Tensor> ground_truth, double mu) {
  if (rendered.size() != ground_truth.size()) {
    throw DataError("evaluate: " + std::to_string(rendered.size()) + " rendered frames vs " +
                    std::to_string(ground_truth.size()) + " ground-truth frames");
  }
  if (rendered.empty()) throw DataError("evaluate: no frames");
  const auto start = std::chrono::steady_clock::now();
  EvalReport report;
  double psnr_sum = 0, ssim_sum = 0;
  int finite = 0;
  for (std::size_t i = 0; i < rendered.size(); ++i) {
    FrameScore s;
    s.frame = static_cast<int>(i) + 1;
    s.psnr = psnr_t(rendered[i], ground_truth[i], mu);
    s.ssim = ssim_t(rendered[i], ground_truth[i], mu);
    if (!s.psnr.infinite) {
      psnr_sum += s.psnr.db;
      ++finite;
    }
    ssim_sum += s.ssim;
    report.frames.push_back(s);
  }
  report.mean_psnr = finite ? PsnrValue{psnr_sum / finite, false} : PsnrValue{0, true};
  report.mean_ssim = ssim_sum / static_cast<double>(rendered.size());
  report.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

std::string EvalReport::text() const {
  std::ostringstream os;
  for (const auto& [k, v] : config) os << "# " << k << " = " << v << "\n";
  char buf[128];
  for (const auto& f : frames) {
    std::snprintf(buf, sizeof(buf), "frame %d psnr_t %s ssim_t %.6f\n", f.frame, f.psnr.str().c_str(), f.ssim);
    os << buf;
  }
  std::snprintf(buf, sizeof(buf), "mean psnr_t %s ssim_t %.6f\n", mean_psnr.str().c_str(), mean_ssim);
  os << buf;
  std::snprintf(buf, sizeof(buf), "runtime_seconds %.3f\n", runtime_seconds);
  os << buf;
  return os.str();
}

std::string EvalReport::json() const {
  auto psnr_json = [](const PsnrValue& p) -> nlohmann::json {
    if (p.infinite) return "inf";
    return p.db;
  };
  nlohmann::json j;
  j["config"] = config;
  j["frames"] = nlohmann::json::array();
  for (const auto& f : frames) {
    j["frames"].push_back({{"frame", f.frame}, {"psnr_t", psnr_json(f.psnr)}, {"ssim_t", f.ssim}});
  }
  j["mean_psnr_t"] = psnr_json(mean_psnr);
  j["mean_ssim_t"] = mean_ssim;
  j["runtime_seconds"] = runtime_seconds;
  return j.dump(2) + "\n";
}

}  // namespace nechdr
