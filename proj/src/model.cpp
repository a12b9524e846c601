#include "nechdr/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "nechdr/flow_ops.hpp"
#include "nechdr/hdr_domain.hpp"
#include "nechdr/ops.hpp"

namespace nechdr {

std::string to_string(Variant v) { return v == Variant::kTwoExposure ? "two" : "three"; }

Variant parse_variant(const std::string& text) {
  if (text == "two" || text == "2") return Variant::kTwoExposure;
  if (text == "three" || text == "3") return Variant::kThreeExposure;
  throw std::invalid_argument("unknown variant '" + text + "' (expected two|three)");
}

ArchConfig ArchConfig::lightweight(Variant v) {
  ArchConfig a;
  a.variant = v;
  return a;
}

ArchConfig ArchConfig::standard(Variant v) {
  ArchConfig a;
  a.channels = {32, 48, 72, 96};
  a.blend_hidden = {32, 64};
  a.variant = v;
  return a;
}

void ArchConfig::validate() const {
  for (int c : channels) {
    if (c < 1) throw std::invalid_argument("encoder channel counts must be >= 1");
  }
  for (int i = 1; i < 4; ++i) {
    if (channels[i] <= channels[i - 1]) {
      throw std::invalid_argument("encoder channel counts must strictly increase");
    }
  }
  for (int c : blend_hidden) {
    if (c < 1) throw std::invalid_argument("blend channel counts must be >= 1");
  }
}

namespace {

std::string level_name(const char* block, int k) {
  return std::string(block) + ".level" + std::to_string(k);
}

}  // namespace

std::vector<LayerSpec> describe_layers(const ArchConfig& arch) {
  arch.validate();
  const auto& c = arch.channels;
  const int frames = arch.frame_count();
  const int neighbors = arch.neighbor_count();
  const int completions = arch.completion_count();
  std::vector<LayerSpec> layers;
  auto conv = [&](std::string name, int in, int out, int stride = 1) {
    layers.push_back({std::move(name), LayerKind::kConv, in, out, 3, stride, true, false});
  };

  int prev = 3;
  for (int k = 1; k <= 4; ++k) {
    conv(level_name("encoder", k) + ".conv1", prev, c[k - 1], 2);
    conv(level_name("encoder", k) + ".conv2", c[k - 1], c[k - 1]);
    prev = c[k - 1];
  }

  for (int k = 3; k >= 1; --k) {
    const int in = 2 * c[k - 1] + (k < 3 ? c[k] : 0);
    conv(level_name("complete", k) + ".conv1", in, c[k - 1]);
    conv(level_name("complete", k) + ".conv2", c[k - 1], c[k - 1]);
  }
  conv("complete.level0.conv1", 6 + c[0], c[0]);
  conv("complete.level0.conv2", c[0], c[0]);
  layers.push_back({"complete.level0.head", LayerKind::kConv, c[0], 4, 3, 1, false, false});

  for (int k = 4; k >= 1; --k) {
    const int ck = c[k - 1];
    const int in = k == 4 ? frames * ck : ck * (2 + completions + neighbors) + 2 * neighbors;
    const int finer = k >= 2 ? c[k - 2] : c[0];
    conv(level_name("render", k) + ".conv1", in, ck);
    conv(level_name("render", k) + ".conv2", ck, ck);
    layers.push_back({level_name("render", k) + ".up", LayerKind::kDeconv, ck, finer, 4, 2, false, false});
    layers.push_back({level_name("render", k) + ".flow", LayerKind::kConv, ck, 2 * neighbors, 3, 1, false, true});
  }
  layers.push_back({"render.level1.hdr", LayerKind::kConv, c[0], 3, 3, 1, false, false});

  const int blend_in = 3 * arch.blend_image_count();
  const auto& b = arch.blend_hidden;
  conv("blend.enc1", blend_in, b[0]);
  conv("blend.enc2", b[0], b[1], 2);
  conv("blend.mid", b[1], b[1]);
  layers.push_back({"blend.up", LayerKind::kDeconv, b[1], b[0], 4, 2, false, false});
  conv("blend.dec", 2 * b[0], b[0]);
  layers.push_back({"blend.head", LayerKind::kConv, b[0], arch.fused_count(), 3, 1, false, false});
  return layers;
}

template <typename T>
const BasicTensor<T>& BasicModelParams<T>::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw std::out_of_range("no parameter named " + name);
  return it->second;
}

template <typename T>
void BasicModelParams<T>::set_requires_grad(bool on) {
  for (auto& [name, t] : tensors_) t.set_requires_grad(on);
}

template <typename T>
void BasicModelParams<T>::zero_grad() {
  for (auto& [name, t] : tensors_) t.zero_grad();
}

template <typename T>
BasicModelParams<T> BasicModelParams<T>::clone() const {
  BasicModelParams out;
  for (const auto& [name, t] : tensors_) {
    BasicTensor<T> c = t.detach();
    c.set_requires_grad(t.requires_grad());
    out.set(name, std::move(c));
  }
  return out;
}

template class BasicModelParams<float>;
template class BasicModelParams<double>;

ModelParams init_params(const ArchConfig& arch, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ModelParams params;
  for (const auto& layer : describe_layers(arch)) {
    const Shape ws = layer.kind == LayerKind::kConv
                         ? Shape{layer.out, layer.in, layer.kernel, layer.kernel}
                         : Shape{layer.in, layer.out, layer.kernel, layer.kernel};
    Tensor weight(ws);
    if (!layer.zero_init) {
      double fan_in = static_cast<double>(layer.in) * layer.kernel * layer.kernel;
      if (layer.kind == LayerKind::kDeconv) fan_in /= static_cast<double>(layer.stride * layer.stride);
      // He-uniform for PReLU(0.25) layers, variance-preserving for linear heads.
      const double bound = layer.prelu ? std::sqrt(6.0 / ((1.0 + 0.0625) * fan_in))
                                       : std::sqrt(3.0 / fan_in);
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (auto& v : weight.mutable_data()) v = static_cast<float>(dist(rng));
    }
    params.set(layer.name + ".weight", weight);
    params.set(layer.name + ".bias", Tensor({1, layer.out, 1, 1}));
    if (layer.prelu) params.set(layer.name + ".slope", Tensor({1, layer.out, 1, 1}, 0.25f));
  }
  params.set_requires_grad(true);
  return params;
}

std::size_t count_params(const ModelParams& params) {
  std::size_t total = 0;
  for (const auto& [name, t] : params) total += t.numel();
  return total;
}

namespace {

template <typename T>
BasicTensor<T> conv_layer(const BasicTensor<T>& x, const BasicModelParams<T>& p,
                          const std::string& name, int stride = 1) {
  BasicTensor<T> y = conv2d(x, p.at(name + ".weight"), p.at(name + ".bias"), stride, 1);
  if (p.contains(name + ".slope")) y = prelu(y, p.at(name + ".slope"));
  return y;
}

template <typename T>
BasicTensor<T> deconv_layer(const BasicTensor<T>& x, const BasicModelParams<T>& p,
                            const std::string& name) {
  return deconv2d(x, p.at(name + ".weight"), p.at(name + ".bias"), 2, 1);
}

template <typename T>
void require_same_extent(std::span<const BasicTensor<T>> parts, const char* where) {
  for (const auto& t : parts) {
    if (t.shape().h != parts[0].shape().h || t.shape().w != parts[0].shape().w) {
      throw ShapeError(std::string(where) + ": input extents " + t.shape().str() + " and " +
                       parts[0].shape().str() + " are at different pyramid levels");
    }
  }
}

}  // namespace

template <typename T>
FramePyramid<T> encode(const BasicTensor<T>& frame, const BasicModelParams<T>& params,
                       const ArchConfig& arch) {
  const Shape& s = frame.shape();
  if (s.c != 3) throw ShapeError("encode: frame has " + std::to_string(s.c) + " channels, expected 3");
  if (s.h % 16 != 0) throw ShapeError("encode: height " + std::to_string(s.h) + " not divisible by 16");
  if (s.w % 16 != 0) throw ShapeError("encode: width " + std::to_string(s.w) + " not divisible by 16");
  (void)arch;
  FramePyramid<T> pyr;
  BasicTensor<T> x = frame;
  for (int k = 1; k <= 4; ++k) {
    const std::string base = level_name("encoder", k);
    x = conv_layer(x, params, base + ".conv1", 2);
    x = conv_layer(x, params, base + ".conv2");
    pyr.levels[k - 1] = x;
  }
  return pyr;
}

template <typename T>
BasicTensor<T> complete_level(const BasicTensor<T>& warped_prev, const BasicTensor<T>& warped_next,
                              const std::optional<BasicTensor<T>>& upsampled_coarser,
                              const BasicModelParams<T>& params, int k) {
  if (k < 0 || k > 3) throw std::invalid_argument("complete_level: level must be in 0..3");
  if (k < 3 && !upsampled_coarser) {
    throw std::invalid_argument("complete_level: level " + std::to_string(k) +
                                " needs the upsampled coarser completed feature");
  }
  if (k == 3 && upsampled_coarser) {
    throw std::invalid_argument("complete_level: level 3 takes no coarser input");
  }
  std::vector<BasicTensor<T>> parts{warped_prev, warped_next};
  if (upsampled_coarser) parts.push_back(*upsampled_coarser);
  require_same_extent<T>(parts, "complete_level");
  const std::string base = level_name("complete", k);
  BasicTensor<T> h = conv_layer(concat_channels<T>(parts), params, base + ".conv1");
  h = conv_layer(h, params, base + ".conv2");
  if (k > 0) return h;

  // Mask-weighted average of the warped neighbours plus a residual correction.
  BasicTensor<T> head = conv_layer(h, params, base + ".head");
  BasicTensor<T> mask = sigmoid(slice_channels(head, 0, 1));
  BasicTensor<T> residual = slice_channels(head, 1, 3);
  BasicTensor<T> mixed = warped_next + mask * (warped_prev - warped_next);
  return clamp(mixed + residual, 0.0, 1.0);
}

template <typename T>
RenderLevelOutput<T> render_level(std::span<const BasicTensor<T>> inputs,
                                  std::span<const BasicTensor<T>> incoming_flows,
                                  const BasicModelParams<T>& params, const ArchConfig& arch, int k) {
  if (k < 1 || k > 4) throw std::invalid_argument("render_level: level must be in 1..4");
  const int neighbors = arch.neighbor_count();
  if (k == 4 && !incoming_flows.empty()) {
    throw std::invalid_argument("render_level: level 4 has no incoming flows");
  }
  if (k < 4 && static_cast<int>(incoming_flows.size()) != neighbors) {
    throw std::invalid_argument("render_level: expected " + std::to_string(neighbors) +
                                " incoming flows at level " + std::to_string(k));
  }
  require_same_extent<T>(inputs, "render_level");
  const int ck = arch.channels[k - 1];
  int in_channels = 0;
  for (const auto& t : inputs) in_channels += t.shape().c;
  const int expected = k == 4 ? arch.frame_count() * ck
                              : ck * (2 + arch.completion_count() + neighbors) + 2 * neighbors;
  if (in_channels != expected) {
    throw ShapeError("render_level " + std::to_string(k) + ": got " + std::to_string(in_channels) +
                     " input channels, expected " + std::to_string(expected) +
                     " (input at wrong pyramid level?)");
  }

  const std::string base = level_name("render", k);
  BasicTensor<T> h = conv_layer(concat_channels<T>(inputs), params, base + ".conv1");
  h = conv_layer(h, params, base + ".conv2");

  RenderLevelOutput<T> out;
  out.feature = deconv_layer(h, params, base + ".up");
  BasicTensor<T> delta = conv_layer(h, params, base + ".flow");
  for (int j = 0; j < neighbors; ++j) {
    BasicTensor<T> f = slice_channels(delta, 2 * j, 2);
    if (k < 4) f = incoming_flows[j] + f;
    out.flows.push_back(flow_upscale(f, 2));
  }
  if (k == 1) out.coarse_hdr = softplus(conv_layer(out.feature, params, "render.level1.hdr"));
  return out;
}

template <typename T>
BasicTensor<T> fuse(std::span<const BasicTensor<T>> images, const BasicTensor<T>& weights) {
  if (static_cast<int>(images.size()) != weights.shape().c) {
    throw ShapeError("fuse: " + std::to_string(weights.shape().c) + " weights for " +
                     std::to_string(images.size()) + " images");
  }
  BasicTensor<T> numerator;
  BasicTensor<T> denominator;
  for (std::size_t j = 0; j < images.size(); ++j) {
    BasicTensor<T> w = slice_channels(weights, static_cast<int>(j), 1);
    BasicTensor<T> term = w * images[j];
    numerator = numerator.defined() ? numerator + term : term;
    denominator = denominator.defined() ? denominator + w : w;
  }
  return numerator / add_scalar(denominator, 1e-8);
}

template <typename T>
BlendResult<T> blend(std::span<const BasicTensor<T>> ldr_images,
                     std::span<const BasicTensor<T>> linear_images,
                     const BasicTensor<T>& coarse_hdr, std::span<const BasicTensor<T>> fused,
                     const BasicModelParams<T>& params, const ArchConfig& arch) {
  if (ldr_images.size() != linear_images.size()) {
    throw ShapeError("blend: LDR and linear image counts differ");
  }
  if (static_cast<int>(fused.size()) != arch.fused_count()) {
    throw ShapeError("blend: " + std::to_string(fused.size()) + " fused images, expected " +
                     std::to_string(arch.fused_count()));
  }
  std::vector<BasicTensor<T>> parts(ldr_images.begin(), ldr_images.end());
  parts.insert(parts.end(), linear_images.begin(), linear_images.end());
  parts.push_back(coarse_hdr);
  if (static_cast<int>(parts.size()) != arch.blend_image_count()) {
    throw ShapeError("blend: " + std::to_string(parts.size()) + " input images, expected " +
                     std::to_string(arch.blend_image_count()));
  }

  BasicTensor<T> e1 = conv_layer(concat_channels<T>(parts), params, "blend.enc1");
  BasicTensor<T> e2 = conv_layer(e1, params, "blend.enc2", 2);
  e2 = conv_layer(e2, params, "blend.mid");
  BasicTensor<T> up = deconv_layer(e2, params, "blend.up");
  BasicTensor<T> d = conv_layer(concat_channels<T>({up, e1}), params, "blend.dec");
  BlendResult<T> result;
  result.weights = sigmoid(conv_layer(d, params, "blend.head"));
  result.hdr = fuse(fused, result.weights);
  result.input_images = static_cast<int>(parts.size());
  return result;
}

namespace {

template <typename T>
void check_window(const FrameWindow<T>& window, int expected) {
  if (static_cast<int>(window.frames.size()) != expected) {
    throw std::invalid_argument("forward: expected " + std::to_string(expected) + " frames, got " +
                                std::to_string(window.frames.size()));
  }
  if (window.exposures.size() != window.frames.size()) {
    throw std::invalid_argument("forward: one exposure value per frame required");
  }
  for (const auto& f : window.frames) {
    if (f.shape() != window.frames[0].shape()) {
      throw ShapeError("forward: frame shapes differ: " + f.shape().str() + " vs " +
                       window.frames[0].shape().str());
    }
  }
}

// Shared coarse-to-fine body. `completions` lists, per missing exposure, the
// two neighbour slots (indices into `neighbors`) that carry it.
template <typename T>
RenderOutput<T> run_network(const FrameWindow<T>& window, int reference,
                            const std::vector<int>& neighbors,
                            const std::vector<std::array<int, 2>>& completions,
                            const BasicModelParams<T>& params, const ArchConfig& arch, double gamma) {
  RenderOutput<T> out;
  const int nf = static_cast<int>(window.frames.size());
  for (const auto& f : window.frames) out.pyramids.push_back(encode(f, params, arch));
  const auto& pyr = out.pyramids;
  const auto& ref = pyr[reference];

  std::vector<BasicTensor<T>> level4;
  for (int i = 0; i < nf; ++i) level4.push_back(pyr[i].level(4));
  RenderLevelOutput<T> r = render_level<T>(level4, {}, params, arch, 4);

  out.flows.resize(neighbors.size());
  out.completed_features.resize(completions.size());
  std::vector<BasicTensor<T>> completed(completions.size());
  std::vector<BasicTensor<T>> flows = r.flows;
  BasicTensor<T> psi = r.feature;

  for (int k = 3; k >= 1; --k) {
    for (std::size_t j = 0; j < neighbors.size(); ++j) out.flows[j][k] = flows[j];
    out.hdr_features[k - 1] = psi;
    std::vector<BasicTensor<T>> warped;
    for (std::size_t j = 0; j < neighbors.size(); ++j) {
      warped.push_back(warp(pyr[neighbors[j]].level(k), flows[j]));
    }
    for (std::size_t m = 0; m < completions.size(); ++m) {
      std::optional<BasicTensor<T>> coarser;
      if (k < 3) coarser = upsample_bilinear(completed[m], 2);
      completed[m] = complete_level(warped[completions[m][0]], warped[completions[m][1]], coarser,
                                    params, k);
      out.completed_features[m][k - 1] = completed[m];
      ++out.completion_calls;
    }
    std::vector<BasicTensor<T>> inputs{ref.level(k)};
    inputs.insert(inputs.end(), completed.begin(), completed.end());
    inputs.push_back(psi);
    inputs.insert(inputs.end(), flows.begin(), flows.end());
    inputs.insert(inputs.end(), warped.begin(), warped.end());
    r = render_level<T>(inputs, flows, params, arch, k);
    flows = r.flows;
    psi = r.feature;
  }
  for (std::size_t j = 0; j < neighbors.size(); ++j) out.flows[j][0] = flows[j];
  out.coarse_hdr = r.coarse_hdr;

  std::vector<BasicTensor<T>> warped_frames;
  for (std::size_t j = 0; j < neighbors.size(); ++j) {
    warped_frames.push_back(warp(window.frames[neighbors[j]], flows[j]));
  }
  std::vector<BasicTensor<T>> completed_linear;
  for (std::size_t m = 0; m < completions.size(); ++m) {
    BasicTensor<T> lhat = complete_level(warped_frames[completions[m][0]],
                                         warped_frames[completions[m][1]],
                                         std::optional<BasicTensor<T>>(upsample_bilinear(completed[m], 2)),
                                         params, 0);
    ++out.completion_calls;
    out.completed_ldr.push_back(lhat);
    const double e = window.exposures[neighbors[completions[m][0]]];
    completed_linear.push_back(ldr_to_linear(lhat, e, gamma));
  }

  std::vector<BasicTensor<T>> originals_linear;
  for (int i = 0; i < nf; ++i) {
    originals_linear.push_back(ldr_to_linear(window.frames[i], window.exposures[i], gamma));
  }
  std::vector<BasicTensor<T>> ldr_images = window.frames;
  ldr_images.insert(ldr_images.end(), out.completed_ldr.begin(), out.completed_ldr.end());
  std::vector<BasicTensor<T>> linear_images = originals_linear;
  linear_images.insert(linear_images.end(), completed_linear.begin(), completed_linear.end());

  // Weight order: coarse, completed frames, reference, then the remaining
  // originals in temporal order.
  out.fused.push_back(out.coarse_hdr);
  out.fused.insert(out.fused.end(), completed_linear.begin(), completed_linear.end());
  out.fused.push_back(originals_linear[reference]);
  for (int i = 0; i < nf; ++i) {
    if (i != reference) out.fused.push_back(originals_linear[i]);
  }
  BlendResult<T> b = blend<T>(ldr_images, linear_images, out.coarse_hdr, out.fused, params, arch);
  out.hdr = b.hdr;
  out.weights = b.weights;
  out.blend_input_images = b.input_images;
  return out;
}

}  // namespace

template <typename T>
RenderOutput<T> forward_two_exposure(const FrameWindow<T>& window,
                                     const BasicModelParams<T>& params, const ArchConfig& arch,
                                     double gamma) {
  if (arch.variant != Variant::kTwoExposure) {
    throw std::invalid_argument("forward_two_exposure: architecture is the three-exposure variant");
  }
  check_window(window, 3);
  // Neighbours t-1, t+1 share the missing exposure.
  return run_network(window, 1, {0, 2}, {{0, 1}}, params, arch, gamma);
}

template <typename T>
RenderOutput<T> forward_three_exposure(const FrameWindow<T>& window,
                                       const BasicModelParams<T>& params, const ArchConfig& arch,
                                       double gamma) {
  if (arch.variant != Variant::kThreeExposure) {
    throw std::invalid_argument("forward_three_exposure: architecture is the two-exposure variant");
  }
  check_window(window, 5);
  // Neighbour slots: t-2, t-1, t+1, t+2. {t-2, t+1} share one exposure,
  // {t-1, t+2} the other.
  return run_network(window, 2, {0, 1, 3, 4}, {{0, 2}, {1, 3}}, params, arch, gamma);
}

template <typename T>
RenderOutput<T> forward(const FrameWindow<T>& window, const BasicModelParams<T>& params,
                        const ArchConfig& arch, double gamma) {
  return arch.variant == Variant::kTwoExposure ? forward_two_exposure(window, params, arch, gamma)
                                               : forward_three_exposure(window, params, arch, gamma);
}

Tensor pad_reflect(const Tensor& t, int multiple) {
  const Shape& s = t.shape();
  const int h = (s.h + multiple - 1) / multiple * multiple;
  const int w = (s.w + multiple - 1) / multiple * multiple;
  if (h == s.h && w == s.w) return t;
  if (h - s.h >= s.h || w - s.w >= s.w) {
    throw ShapeError("pad_reflect: image " + s.str() + " too small to reflect-pad to " +
                     std::to_string(h) + "x" + std::to_string(w));
  }
  auto reflect = [](int i, int n) { return i < n ? i : 2 * (n - 1) - i; };
  Tensor out({s.n, s.c, h, w});
  auto od = out.mutable_data();
  std::size_t k = 0;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) od[k++] = t.at(n, c, reflect(y, s.h), reflect(x, s.w));
  return out;
}

Tensor crop(const Tensor& t, int height, int width) {
  const Shape& s = t.shape();
  if (height > s.h || width > s.w) throw ShapeError("crop: target larger than " + s.str());
  Tensor out({s.n, s.c, height, width});
  auto od = out.mutable_data();
  std::size_t k = 0;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) od[k++] = t.at(n, c, y, x);
  return out;
}

#define NECHDR_INSTANTIATE_MODEL(T)                                                                \
  template FramePyramid<T> encode(const BasicTensor<T>&, const BasicModelParams<T>&,               \
                                  const ArchConfig&);                                              \
  template BasicTensor<T> complete_level(const BasicTensor<T>&, const BasicTensor<T>&,             \
                                         const std::optional<BasicTensor<T>>&,                     \
                                         const BasicModelParams<T>&, int);                         \
  template RenderLevelOutput<T> render_level(std::span<const BasicTensor<T>>,                      \
                                             std::span<const BasicTensor<T>>,                      \
                                             const BasicModelParams<T>&, const ArchConfig&, int);  \
  template BasicTensor<T> fuse(std::span<const BasicTensor<T>>, const BasicTensor<T>&);            \
  template BlendResult<T> blend(std::span<const BasicTensor<T>>, std::span<const BasicTensor<T>>,  \
                                const BasicTensor<T>&, std::span<const BasicTensor<T>>,            \
                                const BasicModelParams<T>&, const ArchConfig&);                    \
  template RenderOutput<T> forward_two_exposure(const FrameWindow<T>&, const BasicModelParams<T>&, \
                                                const ArchConfig&, double);                        \
  template RenderOutput<T> forward_three_exposure(const FrameWindow<T>&,                           \
                                                  const BasicModelParams<T>&, const ArchConfig&,   \
                                                  double);                                         \
  template RenderOutput<T> forward(const FrameWindow<T>&, const BasicModelParams<T>&,              \
                                   const ArchConfig&, double);

NECHDR_INSTANTIATE_MODEL(float)
NECHDR_INSTANTIATE_MODEL(double)

}  // namespace nechdr
