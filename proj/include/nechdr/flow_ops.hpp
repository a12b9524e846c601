#pragma once

#include <filesystem>

#include "nechdr/tensor.hpp"

namespace nechdr {

// A flow is an (N, 2, H, W) tensor of pixel displacements at the resolution it
// acts on: channel 0 horizontal, channel 1 vertical.

/// Backward warp: out(p) = source sampled bilinearly at p + flow(p), with
/// sample coordinates clamped to the image border.
template <typename T>
BasicTensor<T> warp(const BasicTensor<T>& source, const BasicTensor<T>& flow);

/// Bilinear spatial upsampling by `scale` with displacements multiplied by
/// `scale`.
template <typename T>
BasicTensor<T> flow_upscale(const BasicTensor<T>& flow, int scale);

/// Debug dump of batch entry 0 as a 3-channel PFM (third channel zero).
void write_flow_pfm(const Tensor& flow, const std::filesystem::path& path);

}  // namespace nechdr
