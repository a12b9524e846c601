#pragma once

#include <span>
#include <vector>

#include "nechdr/tensor.hpp"

namespace nechdr {

// Spatial operators. Weights follow the (out, in, kh, kw) layout for conv2d and
// (in, out, kh, kw) for deconv2d, so the same tensor serves a conv/deconv pair.

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, int stride, int padding);

template <typename T>
BasicTensor<T> deconv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                        const BasicTensor<T>& bias, int stride, int padding);

/// slope holds 1 or C values.
template <typename T>
BasicTensor<T> prelu(const BasicTensor<T>& input, const BasicTensor<T>& slope);

/// Bilinear resize by an integer factor with half-pixel centres.
template <typename T>
BasicTensor<T> upsample_bilinear(const BasicTensor<T>& input, int scale);

// Elementwise binary ops. Each extent of the two operands must match or be 1
// on one side.

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
/// Rejects exact zeros in the denominator while the tape is recording.
template <typename T>
BasicTensor<T> div(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> add_scalar(const BasicTensor<T>& a, double s);
template <typename T>
BasicTensor<T> mul_scalar(const BasicTensor<T>& a, double s);
/// x^p for x >= 0; the derivative at x == 0 is taken as 0.
template <typename T>
BasicTensor<T> pow_scalar(const BasicTensor<T>& a, double p);

template <typename T>
BasicTensor<T> log1p(const BasicTensor<T>& a);
template <typename T>
BasicTensor<T> abs(const BasicTensor<T>& a);
/// Gradient passes unchanged inside [lo, hi] (inclusive) and is 0 outside.
template <typename T>
BasicTensor<T> clamp(const BasicTensor<T>& a, double lo, double hi);
template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& a);
template <typename T>
BasicTensor<T> softplus(const BasicTensor<T>& a);

template <typename T>
BasicTensor<T> concat_channels(std::span<const BasicTensor<T>> parts);
template <typename T>
BasicTensor<T> concat_channels(std::initializer_list<BasicTensor<T>> parts) {
  std::vector<BasicTensor<T>> v(parts);
  return concat_channels<T>(std::span<const BasicTensor<T>>(v));
}
template <typename T>
BasicTensor<T> slice_channels(const BasicTensor<T>& a, int start, int count);

// Full reductions to a (1,1,1,1) scalar.
template <typename T>
BasicTensor<T> reduce_sum(const BasicTensor<T>& a);
template <typename T>
BasicTensor<T> reduce_mean(const BasicTensor<T>& a);

template <typename T>
BasicTensor<T> operator+(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return add(a, b);
}
template <typename T>
BasicTensor<T> operator-(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return sub(a, b);
}
template <typename T>
BasicTensor<T> operator*(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return mul(a, b);
}
template <typename T>
BasicTensor<T> operator/(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return div(a, b);
}
template <typename T>
BasicTensor<T> operator*(const BasicTensor<T>& a, double s) {
  return mul_scalar(a, s);
}
template <typename T>
BasicTensor<T> operator*(double s, const BasicTensor<T>& a) {
  return mul_scalar(a, s);
}
template <typename T>
BasicTensor<T> operator+(const BasicTensor<T>& a, double s) {
  return add_scalar(a, s);
}

}  // namespace nechdr
