#pragma once

#include <span>
#include <string>

#include "nechdr/tensor.hpp"

namespace nechdr {

/// PSNR in dB; identical inputs set `infinite` instead of dividing by zero.
struct PsnrValue {
  double db = 0;
  bool infinite = false;

  std::string str() const;
};

/// 10 log10(1 / mse); mse == 0 gives the infinite sentinel.
PsnrValue psnr_from_mse(double mse);

/// 10 log10(1 / MSE) between the mu-law tone-mapped images, peak 1.
PsnrValue psnr_t(const Tensor& pred_hdr, const Tensor& gt_hdr, double mu = 5000.0);
/// PSNR between two images already in display range.
PsnrValue psnr(const Tensor& a, const Tensor& b);

/// Mean SSIM of the tone-mapped images: 11x11 Gaussian window (sigma 1.5),
/// K1 = 0.01, K2 = 0.03, dynamic range 1, per channel over the valid region.
double ssim_t(const Tensor& pred_hdr, const Tensor& gt_hdr, double mu = 5000.0);
double ssim(const Tensor& a, const Tensor& b);

/// Stacks rows [row, row+2) of every tone-mapped frame into a (1,3,2n,W) image.
Tensor temporal_profile(std::span<const Tensor> frames, int row, double mu = 5000.0);

}  // namespace nechdr
