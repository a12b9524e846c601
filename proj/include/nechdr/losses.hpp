#pragma once

#include <array>
#include <span>
#include <utility>

#include "nechdr/tensor.hpp"

namespace nechdr {

struct LossWeights {
  double alpha = 0.01;  ///< feature geometry terms
  double beta = 0.01;   ///< flow alignment term
};

/// Scalar values of one loss evaluation.
struct LossBreakdown {
  double l_i_com = 0;
  double l_i_ren = 0;
  double l_g_com = 0;
  double l_g_ren = 0;
  double l_f = 0;
  double total = 0;
};

/// Differentiable (1,1,1,1) loss terms.
template <typename T>
struct LossTerms {
  BasicTensor<T> l_i_com, l_i_ren, l_g_com, l_g_ren, l_f;
};

/// Mean absolute difference.
template <typename T>
BasicTensor<T> l1_loss(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// (mean |l_hat - l_bar|, mean |T(h_hat) - T(h_bar)|).
template <typename T>
std::pair<BasicTensor<T>, BasicTensor<T>> image_loss(const BasicTensor<T>& ldr_pred,
                                                     const BasicTensor<T>& ldr_gt,
                                                     const BasicTensor<T>& hdr_pred,
                                                     const BasicTensor<T>& hdr_gt, double mu);

/// Soft Hamming distance between per-channel ternary census descriptors over
/// 3x3 neighbourhoods, averaged over interior pixels.
template <typename T>
BasicTensor<T> census_loss(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Census losses summed over pyramid levels 1..3 (index 0 holds level 1) for
/// the completing and rendering branches. The targets are detached.
template <typename T>
std::pair<BasicTensor<T>, BasicTensor<T>> feature_geometry_loss(
    std::span<const BasicTensor<T>> completed, std::span<const BasicTensor<T>> completed_gt,
    std::span<const BasicTensor<T>> rendered, std::span<const BasicTensor<T>> rendered_gt);

/// For every neighbour j and level k, warps T(gt_neighbors[j]) at full
/// resolution by flow_upscale(flows[j][k], 2^k), takes the per-pixel L1
/// distance to T(gt_reference), sums, masks by (1 - mask), and averages.
/// Gradients reach the flows only.
template <typename T>
BasicTensor<T> flow_alignment_loss(std::span<const std::array<BasicTensor<T>, 4>> flows,
                                   std::span<const BasicTensor<T>> gt_neighbors,
                                   const BasicTensor<T>& gt_reference, const BasicTensor<T>& mask,
                                   double mu);

/// total = (l_i_com + l_i_ren) + alpha (l_g_com + l_g_ren) + beta l_f
LossBreakdown total_loss(double l_i_com, double l_i_ren, double l_g_com, double l_g_ren, double l_f,
                         const LossWeights& weights = {});

template <typename T>
BasicTensor<T> total_loss(const LossTerms<T>& terms, const LossWeights& weights = {});

template <typename T>
LossBreakdown breakdown(const LossTerms<T>& terms, const LossWeights& weights = {});

}  // namespace nechdr
