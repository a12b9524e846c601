#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nechdr/checkpoint.hpp"
#include "nechdr/data_synth.hpp"
#include "nechdr/hdr_domain.hpp"
#include "nechdr/losses.hpp"
#include "nechdr/metrics.hpp"
#include "nechdr/model.hpp"
#include "nechdr/optim.hpp"

namespace nechdr {

struct TrainConfig {
  ArchConfig arch;
  ExposureConfig exposure;
  AdamWConfig optim;
  LossWeights weights;
  int steps = 500;
  std::uint64_t seed = 0;
  /// Random flips and temporal reversal per step.
  bool augment = true;
};

/// Differentiable loss terms of one forward pass against a sample's targets.
LossTerms<float> sample_losses(const RenderOutput<float>& out, const Sample& sample,
                               const ModelParams& params, const ArchConfig& arch,
                               const ExposureConfig& exposure);

/// Forward, backward, and one AdamW update. Returns the pre-update losses.
LossBreakdown train_step(ModelParams& params, OptimState& state, const Sample& sample,
                         const TrainConfig& config);

/// Index of the sample used at 1-based `step`: a fresh permutation per epoch
/// seeded by seed + epoch.
std::size_t sample_for_step(std::size_t sample_count, std::int64_t step, std::uint64_t seed);

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<std::pair<std::int64_t, LossBreakdown>> losses;
};

/// Runs steps until config.steps in total have been taken, starting from
/// `resume` when given (otherwise from init_params(arch, seed)).
TrainResult train(std::span<const Sample> samples, const TrainConfig& config,
                  std::optional<Checkpoint> resume = std::nullopt,
                  const std::function<void(std::int64_t, const LossBreakdown&)>& on_step = {});

std::string loss_csv_header();
std::string loss_csv_row(std::int64_t step, const LossBreakdown& loss);

struct InferResult {
  std::vector<Tensor> hdr;                         ///< one per input frame
  std::vector<std::vector<Tensor>> completed;      ///< completed LDR frames per time stamp
  std::vector<std::vector<int>> completed_indices; ///< their exposure indices
};

/// Checks that `exposure_indices` cycles through 0..z-1 in order.
void check_exposure_pattern(std::span<const int> exposure_indices, const ExposureConfig& exposure);

/// Renders every frame. Window slots that fall outside the sequence take the
/// nearest in-range frame with the exposure that slot requires. Frames are
/// reflection-padded to a multiple of 16 and cropped back.
InferResult infer_video(std::span<const Tensor> frames, std::span<const int> exposure_indices,
                        const ModelParams& params, const ArchConfig& arch,
                        const ExposureConfig& exposure);

struct FrameScore {
  int frame = 0;
  PsnrValue psnr;
  double ssim = 0;
};

struct EvalReport {
  std::vector<FrameScore> frames;
  PsnrValue mean_psnr;  ///< over finite frames; infinite only if every frame is
  double mean_ssim = 0;
  double runtime_seconds = 0;
  std::map<std::string, std::string> config;

  std::string text() const;
  std::string json() const;
};

EvalReport evaluate(std::span<const Tensor> rendered, std::span<const Tensor> ground_truth,
                    double mu);

}  // namespace nechdr
