#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nechdr/hdr_domain.hpp"
#include "nechdr/image_io.hpp"
#include "nechdr/model.hpp"

namespace nechdr {

struct SynthOptions {
  /// Frame i (one-based) is captured with exposure_at(i + start_phase).
  int start_phase = 0;
  bool quantize = true;
  /// Gaussian read noise in the LDR domain, shortest exposure only.
  std::optional<double> noise_sigma;
  std::uint64_t noise_seed = 0;
};

/// Alternating-exposure LDR sequence plus every frame at every exposure.
struct SynthesizedSequence {
  ExposureConfig config;
  int start_phase = 0;
  std::vector<HdrImage> hdr;                  ///< normalized linear ground truth
  std::vector<LdrImage> inputs;               ///< captured frames
  std::vector<int> input_exposure;            ///< exposure index per captured frame
  std::vector<std::vector<LdrImage>> renders; ///< renders[frame][exposure index]

  int frame_count() const { return static_cast<int>(hdr.size()); }
};

SynthesizedSequence synthesize_sequence(std::span<const HdrImage> hdr_frames,
                                        const ExposureConfig& config,
                                        const SynthOptions& options = {});

/// One training/evaluation window, already cropped.
struct Sample {
  int t = 0;                          ///< one-based reference frame index
  int crop_y = 0;
  int crop_x = 0;
  std::string augmentation = "none";
  std::vector<Tensor> frames;         ///< (1,3,h,w) each, temporal order
  std::vector<int> exposure_indices;
  std::vector<double> exposures;
  /// Reference time rendered at the missing exposure(s), in the order the
  /// network completes them.
  std::vector<Tensor> gt_completed;
  std::vector<int> gt_completed_indices;
  Tensor gt_hdr;
  /// Ground-truth HDR of the flow neighbours, in the network's neighbour order.
  std::vector<Tensor> gt_neighbor_hdr;

  FrameWindow<float> window() const { return {frames, exposures}; }
};

/// Geometric augmentation of one training window. Flips mirror every frame;
/// `reverse` plays a three-frame window backwards, which keeps its exposure
/// pattern.
struct Augmentation {
  bool flip_h = false;
  bool flip_v = false;
  bool reverse = false;

  std::string str() const;
};

/// Applies `aug` to frames and targets alike. Reversal needs a three-frame window.
Sample augment(const Sample& sample, const Augmentation& aug);

/// Deterministic augmentation for a 1-based training step.
Augmentation augmentation_for_step(std::uint64_t seed, std::int64_t step, int z);

/// Window radius for z exposures (1 for z = 2, 2 for z = 3).
int window_radius(int z);

/// Sliding windows over every valid centre t, `stride` apart. Each window gets
/// one random crop origin (shared by all its frames) drawn from `seed`;
/// crop_h/crop_w of 0 keep the full frame.
std::vector<Sample> window_samples(const SynthesizedSequence& sequence, int crop_h, int crop_w,
                                   int stride, std::uint64_t seed);

enum class ToySceneKind { kStatic, kShift, kBrightnessRamp };

ToySceneKind parse_toy_scene(const std::string& name);
std::string to_string(ToySceneKind kind);

/// Procedural linear-HDR scenes with values in (0, 1]. "shift" translates the
/// texture by one pixel per frame: frame i+1 at x equals frame i at x + 1.
std::vector<HdrImage> make_toy_scene(ToySceneKind kind, int frames, int height, int width);

struct ManifestEntry {
  std::string path;  ///< relative to the manifest directory
  int frames = 0;
  double norm_max = 1.0;
  int start_phase = 0;
};

/// Line-oriented dataset description.
struct DatasetManifest {
  ExposureConfig exposure;
  std::vector<ManifestEntry> sequences;

  void write(const std::filesystem::path& path) const;
  static DatasetManifest read(const std::filesystem::path& path);
  /// Checks that every referenced frame file exists; throws DataError.
  void validate(const std::filesystem::path& root) const;
};

/// Writes a synthesized sequence as
/// `<dir>/input/fNNNN.png`, `<dir>/gt_hdr/fNNNN.pfm`, `<dir>/gt_ldr/e<k>/fNNNN.png`.
void write_sequence(const SynthesizedSequence& sequence, const std::filesystem::path& dir);

/// Reloads a sequence written by write_sequence.
SynthesizedSequence load_sequence(const std::filesystem::path& dir, const ExposureConfig& config,
                                  int start_phase);

/// Reads `*.pfm` frames from a directory and divides by the sequence maximum.
std::vector<HdrImage> load_hdr_frames(const std::filesystem::path& dir, double* norm_max = nullptr);

}  // namespace nechdr
