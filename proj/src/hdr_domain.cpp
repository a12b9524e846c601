#include "nechdr/hdr_domain.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>

#include "nechdr/image_io.hpp"
#include "nechdr/ops.hpp"

namespace nechdr {

void ExposureConfig::validate() const {
  if (z != 2 && z != 3) throw std::invalid_argument("exposure count z must be 2 or 3");
  if (static_cast<int>(epsilons.size()) != z) {
    throw std::invalid_argument("expected " + std::to_string(z) + " exposure values, got " +
                                std::to_string(epsilons.size()));
  }
  for (std::size_t i = 0; i < epsilons.size(); ++i) {
    if (!(epsilons[i] > 0)) throw std::invalid_argument("exposure values must be positive");
    if (i > 0 && !(epsilons[i] > epsilons[i - 1])) {
      throw std::invalid_argument("exposure values must be strictly increasing");
    }
  }
  if (!(gamma > 0)) throw std::invalid_argument("gamma must be positive");
  if (!(mu > 0)) throw std::invalid_argument("mu must be positive");
  if (!(delta_low > 0 && delta_low < delta_high && delta_high < 1)) {
    throw std::invalid_argument("thresholds must satisfy 0 < delta_low < delta_high < 1");
  }
}

ExposureConfig ExposureConfig::two_exposure() { return {}; }

ExposureConfig ExposureConfig::three_exposure() {
  ExposureConfig c;
  c.z = 3;
  c.epsilons = {1.0, 4.0, 16.0};
  return c;
}

ExposureConfig ExposureConfig::for_count(int z) {
  if (z == 2) return two_exposure();
  if (z == 3) return three_exposure();
  throw std::invalid_argument("exposure count z must be 2 or 3");
}

int exposure_index(const ExposureConfig& config, int i) {
  if (i < 1) throw std::invalid_argument("frame index must be >= 1");
  return i % config.z;
}

double exposure_at(const ExposureConfig& config, int i) {
  return config.epsilons[exposure_index(config, i)];
}

template <typename T>
BasicTensor<T> ldr_to_linear(const BasicTensor<T>& ldr, double exposure, double gamma) {
  return mul_scalar(pow_scalar(ldr, gamma), 1.0 / exposure);
}

template <typename T>
BasicTensor<T> linear_to_ldr(const BasicTensor<T>& linear, double exposure, double gamma,
                             bool quantize) {
  BasicTensor<T> ldr = pow_scalar(clamp(mul_scalar(linear, exposure), 0.0, 1.0), 1.0 / gamma);
  if (!quantize) return ldr;
  BasicTensor<T> q = ldr.detach();
  for (auto& v : q.mutable_data()) v = static_cast<T>(dequantize8(quantize8(static_cast<float>(v))));
  return q;
}

double tonemap_mu(double h, double mu) {
  const double c = std::min(std::max(h, 0.0), 1.0);
  return std::log1p(mu * c) / std::log1p(mu);
}

template <typename T>
BasicTensor<T> tonemap_mu(const BasicTensor<T>& hdr, double mu) {
#ifndef NDEBUG
  for (T v : hdr.data()) {
    if (v < T(0) || v > T(1)) {
      std::fprintf(stderr, "tonemap_mu: input outside [0,1] clamped (%g)\n", static_cast<double>(v));
      break;
    }
  }
#endif
  return mul_scalar(log1p(mul_scalar(clamp(hdr, 0.0, 1.0), mu)), 1.0 / std::log1p(mu));
}

template <typename T>
BasicTensor<T> luminance_y(const BasicTensor<T>& rgb) {
  if (rgb.shape().c != 3) {
    throw ShapeError("luminance_y: channel count " + std::to_string(rgb.shape().c) + " != 3");
  }
  return mul_scalar(slice_channels(rgb, 0, 1), 0.299) + mul_scalar(slice_channels(rgb, 1, 1), 0.587) +
         mul_scalar(slice_channels(rgb, 2, 1), 0.114);
}

template <typename T>
BasicTensor<T> well_exposed_mask(const BasicTensor<T>& reference_ldr, double delta_low,
                                 double delta_high) {
  NoGradGuard guard;
  BasicTensor<T> y = luminance_y(reference_ldr);
  BasicTensor<T> mask(y.shape());
  auto md = mask.mutable_data();
  auto yd = y.data();
  for (std::size_t i = 0; i < md.size(); ++i) {
    md[i] = (yd[i] > delta_low && yd[i] < delta_high) ? T(1) : T(0);
  }
  return mask;
}

#define NECHDR_INSTANTIATE_DOMAIN(T)                                                     \
  template BasicTensor<T> ldr_to_linear(const BasicTensor<T>&, double, double);          \
  template BasicTensor<T> linear_to_ldr(const BasicTensor<T>&, double, double, bool);    \
  template BasicTensor<T> tonemap_mu(const BasicTensor<T>&, double);                     \
  template BasicTensor<T> luminance_y(const BasicTensor<T>&);                            \
  template BasicTensor<T> well_exposed_mask(const BasicTensor<T>&, double, double);

NECHDR_INSTANTIATE_DOMAIN(float)
NECHDR_INSTANTIATE_DOMAIN(double)

}  // namespace nechdr
