#pragma once

#include <vector>

#include "nechdr/tensor.hpp"

namespace nechdr {

/// Exposure schedule and the scalar constants of the LDR/HDR mappings.
struct ExposureConfig {
  int z = 2;
  std::vector<double> epsilons{1.0, 8.0};
  double gamma = 2.2;
  double mu = 5000.0;
  double delta_low = 0.2;
  double delta_high = 0.8;

  /// Throws std::invalid_argument when any invariant is violated.
  void validate() const;

  static ExposureConfig two_exposure();
  static ExposureConfig three_exposure();
  static ExposureConfig for_count(int z);
};

/// Zero-based index into epsilons of the exposure captured at frame i >= 1.
int exposure_index(const ExposureConfig& config, int i);
/// e_i = eps[(i mod z) + 1], one-based frame index.
double exposure_at(const ExposureConfig& config, int i);

/// x = l^gamma / e.
template <typename T>
BasicTensor<T> ldr_to_linear(const BasicTensor<T>& ldr, double exposure, double gamma);

/// l = clamp(x * e, 0, 1)^(1/gamma), optionally snapped to 8-bit levels.
template <typename T>
BasicTensor<T> linear_to_ldr(const BasicTensor<T>& linear, double exposure, double gamma,
                             bool quantize);

/// mu-law compression log(1 + mu h) / log(1 + mu), applied after clamping h
/// to [0,1].
template <typename T>
BasicTensor<T> tonemap_mu(const BasicTensor<T>& hdr, double mu);
double tonemap_mu(double h, double mu);

/// BT.601 luma of an RGB tensor, one output channel.
template <typename T>
BasicTensor<T> luminance_y(const BasicTensor<T>& rgb);

/// 1 where delta_low < Y < delta_high, else 0. Never tape-tracked.
template <typename T>
BasicTensor<T> well_exposed_mask(const BasicTensor<T>& reference_ldr, double delta_low,
                                 double delta_high);

}  // namespace nechdr
