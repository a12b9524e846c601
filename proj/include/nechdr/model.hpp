#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nechdr/tensor.hpp"

namespace nechdr {

enum class Variant { kTwoExposure, kThreeExposure };

std::string to_string(Variant v);
/// Accepts "two" / "three".
Variant parse_variant(const std::string& text);

/// Channel widths of the network. Encoder level k emits channels[k-1].
struct ArchConfig {
  std::array<int, 4> channels{24, 36, 54, 72};
  std::array<int, 2> blend_hidden{16, 32};
  Variant variant = Variant::kTwoExposure;

  static ArchConfig lightweight(Variant v);
  static ArchConfig standard(Variant v);

  void validate() const;

  int frame_count() const { return variant == Variant::kTwoExposure ? 3 : 5; }
  int neighbor_count() const { return frame_count() - 1; }
  int completion_count() const { return variant == Variant::kTwoExposure ? 1 : 2; }
  /// LDR + linear copies of every input and completed frame, plus the coarse HDR.
  int blend_image_count() const { return 2 * (frame_count() + completion_count()) + 1; }
  /// Coarse HDR, completed frames, and original frames in the linear domain.
  int fused_count() const { return 1 + completion_count() + frame_count(); }

  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

enum class LayerKind { kConv, kDeconv };

/// One learnable layer: `<name>.weight`, `<name>.bias`, and `<name>.slope`
/// when followed by a PReLU.
struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::kConv;
  int in = 0;
  int out = 0;
  int kernel = 3;
  int stride = 1;
  bool prelu = false;
  bool zero_init = false;
};

std::vector<LayerSpec> describe_layers(const ArchConfig& arch);

/// Named parameter tensors, ordered by name.
template <typename T>
class BasicModelParams {
 public:
  using Map = std::map<std::string, BasicTensor<T>>;

  const BasicTensor<T>& at(const std::string& name) const;
  void set(const std::string& name, BasicTensor<T> tensor) { tensors_[name] = std::move(tensor); }
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  std::size_t size() const { return tensors_.size(); }

  typename Map::const_iterator begin() const { return tensors_.begin(); }
  typename Map::const_iterator end() const { return tensors_.end(); }
  typename Map::iterator begin() { return tensors_.begin(); }
  typename Map::iterator end() { return tensors_.end(); }

  void set_requires_grad(bool on);
  void zero_grad();
  /// Deep copy, so the result never shares storage with this set.
  BasicModelParams clone() const;

  template <typename U>
  BasicModelParams<U> cast() const {
    BasicModelParams<U> out;
    for (const auto& [name, t] : tensors_) {
      BasicTensor<U> c = t.template cast<U>();
      c.set_requires_grad(t.requires_grad());
      out.set(name, std::move(c));
    }
    return out;
  }

 private:
  Map tensors_;
};

using ModelParams = BasicModelParams<float>;

/// Deterministic initialisation: fan-in scaled uniform weights, zero biases,
/// PReLU slopes 0.25, zero flow heads.
ModelParams init_params(const ArchConfig& arch, std::uint64_t seed);
std::size_t count_params(const ModelParams& params);

/// Encoder features phi^1..phi^4 (index 0 holds level 1).
template <typename T>
struct FramePyramid {
  std::array<BasicTensor<T>, 4> levels;
  const BasicTensor<T>& level(int k) const { return levels.at(static_cast<std::size_t>(k - 1)); }
};

template <typename T>
struct RenderLevelOutput {
  BasicTensor<T> feature;          ///< psi^{k-1}; the full-resolution feature at k = 1
  std::vector<BasicTensor<T>> flows;  ///< f^{k-1}, one per neighbour
  BasicTensor<T> coarse_hdr;       ///< only at k = 1
};

/// Everything one forward pass produces.
template <typename T>
struct RenderOutput {
  std::vector<BasicTensor<T>> completed_ldr;                  ///< one per missing exposure
  std::vector<std::array<BasicTensor<T>, 3>> completed_features;  ///< phi-hat^1..3 per completion
  std::array<BasicTensor<T>, 3> hdr_features;                 ///< psi-hat^1..3
  BasicTensor<T> coarse_hdr;
  BasicTensor<T> hdr;
  /// flows[j][k] = f^k from neighbour j to the reference, k = 0..3.
  std::vector<std::array<BasicTensor<T>, 4>> flows;
  BasicTensor<T> weights;                ///< (N, fused_count, H, W)
  std::vector<BasicTensor<T>> fused;     ///< linear-domain images in weight order
  std::vector<FramePyramid<T>> pyramids; ///< per input frame
  int blend_input_images = 0;
  int completion_calls = 0;
};

/// Input window: frames in temporal order with the exposure value of each.
template <typename T>
struct FrameWindow {
  std::vector<BasicTensor<T>> frames;
  std::vector<double> exposures;
};

template <typename T>
FramePyramid<T> encode(const BasicTensor<T>& frame, const BasicModelParams<T>& params,
                       const ArchConfig& arch);

/// One level of the completing decoder. k = 3 takes no coarser input; k = 0
/// consumes warped frames and returns the completed LDR frame.
template <typename T>
BasicTensor<T> complete_level(const BasicTensor<T>& warped_prev, const BasicTensor<T>& warped_next,
                              const std::optional<BasicTensor<T>>& upsampled_coarser,
                              const BasicModelParams<T>& params, int k);

/// One level of the rendering decoder. At k = 4 `inputs` holds the level-4
/// encoder features of every frame; below that it holds
/// [phi_t, phi-hat..., psi-hat, flows..., warped neighbours...].
template <typename T>
RenderLevelOutput<T> render_level(std::span<const BasicTensor<T>> inputs,
                                  std::span<const BasicTensor<T>> incoming_flows,
                                  const BasicModelParams<T>& params, const ArchConfig& arch, int k);

/// Normalised weighted average sum_j w_j I_j / (sum_j w_j + 1e-8).
template <typename T>
BasicTensor<T> fuse(std::span<const BasicTensor<T>> images, const BasicTensor<T>& weights);

template <typename T>
struct BlendResult {
  BasicTensor<T> hdr;
  BasicTensor<T> weights;
  int input_images = 0;
};

/// Weight network over LDR and linear copies of the original and completed
/// frames plus the coarse HDR. `fused` lists the linear-domain images in the
/// order the weights apply to.
template <typename T>
BlendResult<T> blend(std::span<const BasicTensor<T>> ldr_images,
                     std::span<const BasicTensor<T>> linear_images,
                     const BasicTensor<T>& coarse_hdr, std::span<const BasicTensor<T>> fused,
                     const BasicModelParams<T>& params, const ArchConfig& arch);

template <typename T>
RenderOutput<T> forward_two_exposure(const FrameWindow<T>& window,
                                     const BasicModelParams<T>& params, const ArchConfig& arch,
                                     double gamma);

template <typename T>
RenderOutput<T> forward_three_exposure(const FrameWindow<T>& window,
                                       const BasicModelParams<T>& params, const ArchConfig& arch,
                                       double gamma);

/// Dispatches on arch.variant.
template <typename T>
RenderOutput<T> forward(const FrameWindow<T>& window, const BasicModelParams<T>& params,
                        const ArchConfig& arch, double gamma);

/// Reflection padding on the bottom/right edges up to a multiple of `multiple`.
Tensor pad_reflect(const Tensor& t, int multiple);
/// Top-left crop to (height, width).
Tensor crop(const Tensor& t, int height, int width);

}  // namespace nechdr
