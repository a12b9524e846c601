#include "nechdr/losses.hpp"

#include <cmath>
#include <string>

#include "nechdr/flow_ops.hpp"
#include "nechdr/hdr_domain.hpp"
#include "nechdr/ops.hpp"

namespace nechdr {

namespace {

constexpr double kSoftSignEps = 0.81;
constexpr double kRobustEps = 0.1;

void require_same(const Shape& a, const Shape& b, const char* op) {
  if (!(a == b)) throw ShapeError(std::string(op) + ": shapes " + a.str() + " and " + b.str() + " differ");
}

constexpr int kOffsets[8][2] = {{-1, -1}, {-1, 0}, {-1, 1}, {0, -1}, {0, 1}, {1, -1}, {1, 0}, {1, 1}};

}  // namespace

template <typename T>
BasicTensor<T> l1_loss(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same(a.shape(), b.shape(), "l1_loss");
  return reduce_mean(abs(a - b));
}

template <typename T>
std::pair<BasicTensor<T>, BasicTensor<T>> image_loss(const BasicTensor<T>& ldr_pred,
                                                     const BasicTensor<T>& ldr_gt,
                                                     const BasicTensor<T>& hdr_pred,
                                                     const BasicTensor<T>& hdr_gt, double mu) {
  require_same(ldr_pred.shape(), ldr_gt.shape(), "image_loss");
  require_same(hdr_pred.shape(), hdr_gt.shape(), "image_loss");
  return {l1_loss(ldr_pred, ldr_gt), l1_loss(tonemap_mu(hdr_pred, mu), tonemap_mu(hdr_gt, mu))};
}

template <typename T>
BasicTensor<T> census_loss(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same(a.shape(), b.shape(), "census_loss");
  const Shape s = a.shape();
  if (s.h < 3 || s.w < 3) throw ShapeError("census_loss: spatial extent " + s.str() + " below 3x3");
  const std::size_t plane = s.plane();
  const std::size_t planes = static_cast<std::size_t>(s.n) * s.c;
  const double count = static_cast<double>(planes) * (s.h - 2) * (s.w - 2);
  auto ad = a.data();
  auto bd = b.data();

  auto soft_sign = [](double d) { return d / std::sqrt(kSoftSignEps + d * d); };
  double total = 0;
  for (std::size_t p = 0; p < planes; ++p) {
    const T* pa = ad.data() + p * plane;
    const T* pb = bd.data() + p * plane;
    for (int y = 1; y < s.h - 1; ++y) {
      for (int x = 1; x < s.w - 1; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * s.w + x;
        for (const auto& o : kOffsets) {
          const std::size_t j = static_cast<std::size_t>(y + o[0]) * s.w + (x + o[1]);
          const double q = soft_sign(double(pa[j]) - double(pa[i])) - soft_sign(double(pb[j]) - double(pb[i]));
          total += q * q / (kRobustEps + q * q);
        }
      }
    }
  }
  BasicTensor<T> out = BasicTensor<T>::scalar(static_cast<T>(total / count));

  if (detail::should_record({&a, &b})) {
    detail::record(out, [a, b, s, plane, planes, count](std::span<const T> g) {
      auto soft_sign = [](double d) { return d / std::sqrt(kSoftSignEps + d * d); };
      auto soft_sign_grad = [](double d) {
        const double r = kSoftSignEps + d * d;
        return kSoftSignEps / (r * std::sqrt(r));
      };
      const double scale = static_cast<double>(g[0]) / count;
      auto ad = a.data();
      auto bd = b.data();
      std::span<T> ga = a.requires_grad() ? a.grad_buffer() : std::span<T>();
      std::span<T> gb = b.requires_grad() ? b.grad_buffer() : std::span<T>();
      for (std::size_t p = 0; p < planes; ++p) {
        const T* pa = ad.data() + p * plane;
        const T* pb = bd.data() + p * plane;
        for (int y = 1; y < s.h - 1; ++y) {
          for (int x = 1; x < s.w - 1; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * s.w + x;
            for (const auto& o : kOffsets) {
              const std::size_t j = static_cast<std::size_t>(y + o[0]) * s.w + (x + o[1]);
              const double da = double(pa[j]) - double(pa[i]);
              const double db = double(pb[j]) - double(pb[i]);
              const double q = soft_sign(da) - soft_sign(db);
              const double den = kRobustEps + q * q;
              const double dq = scale * 2.0 * kRobustEps * q / (den * den);
              if (!ga.empty()) {
                const T v = static_cast<T>(dq * soft_sign_grad(da));
                ga[p * plane + j] += v;
                ga[p * plane + i] -= v;
              }
              if (!gb.empty()) {
                const T v = static_cast<T>(dq * soft_sign_grad(db));
                gb[p * plane + j] -= v;
                gb[p * plane + i] += v;
              }
            }
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
std::pair<BasicTensor<T>, BasicTensor<T>> feature_geometry_loss(
    std::span<const BasicTensor<T>> completed, std::span<const BasicTensor<T>> completed_gt,
    std::span<const BasicTensor<T>> rendered, std::span<const BasicTensor<T>> rendered_gt) {
  auto branch = [](std::span<const BasicTensor<T>> pred, std::span<const BasicTensor<T>> gt,
                   const char* which) {
    if (pred.size() != 3 || gt.size() != 3) {
      throw std::invalid_argument(std::string("feature_geometry_loss: ") + which +
                                  " pyramids need levels 1..3");
    }
    BasicTensor<T> sum;
    for (std::size_t k = 0; k < 3; ++k) {
      if (!pred[k].defined() || !gt[k].defined()) {
        throw std::invalid_argument(std::string("feature_geometry_loss: ") + which + " level " +
                                    std::to_string(k + 1) + " missing");
      }
      BasicTensor<T> term = census_loss(pred[k], gt[k].detach());
      sum = sum.defined() ? sum + term : term;
    }
    return sum;
  };
  return {branch(completed, completed_gt, "completed"), branch(rendered, rendered_gt, "rendered")};
}

template <typename T>
BasicTensor<T> flow_alignment_loss(std::span<const std::array<BasicTensor<T>, 4>> flows,
                                   std::span<const BasicTensor<T>> gt_neighbors,
                                   const BasicTensor<T>& gt_reference, const BasicTensor<T>& mask,
                                   double mu) {
  if (flows.size() != gt_neighbors.size()) {
    throw std::invalid_argument("flow_alignment_loss: " + std::to_string(flows.size()) +
                                " flow pyramids for " + std::to_string(gt_neighbors.size()) +
                                " neighbours");
  }
  const Shape& rs = gt_reference.shape();
  if (mask.shape().c != 1 || mask.shape().h != rs.h || mask.shape().w != rs.w || mask.shape().n != rs.n) {
    throw ShapeError("flow_alignment_loss: mask " + mask.shape().str() + " does not match " + rs.str());
  }
  BasicTensor<T> target = tonemap_mu(gt_reference.detach(), mu);
  BasicTensor<T> per_pixel;
  for (std::size_t j = 0; j < flows.size(); ++j) {
    require_same(gt_neighbors[j].shape(), rs, "flow_alignment_loss");
    BasicTensor<T> source = tonemap_mu(gt_neighbors[j].detach(), mu);
    for (int k = 0; k < 4; ++k) {
      const BasicTensor<T>& f = flows[j][k];
      const int scale = 1 << k;
      if (f.shape().h * scale != rs.h || f.shape().w * scale != rs.w) {
        throw ShapeError("flow_alignment_loss: level " + std::to_string(k) + " flow " +
                         f.shape().str() + " is not at 1/" + std::to_string(scale) +
                         " of " + rs.str());
      }
      BasicTensor<T> diff = abs(warp(source, flow_upscale(f, scale)) - target);
      BasicTensor<T> l1 = slice_channels(diff, 0, 1);
      for (int c = 1; c < rs.c; ++c) l1 = l1 + slice_channels(diff, c, 1);
      per_pixel = per_pixel.defined() ? per_pixel + l1 : l1;
    }
  }
  BasicTensor<T> weight = add_scalar(mul_scalar(mask.detach(), -1.0), 1.0);
  return reduce_mean(per_pixel * weight);
}

LossBreakdown total_loss(double l_i_com, double l_i_ren, double l_g_com, double l_g_ren, double l_f,
                         const LossWeights& w) {
  LossBreakdown b{l_i_com, l_i_ren, l_g_com, l_g_ren, l_f, 0};
  b.total = (l_i_com + l_i_ren) + w.alpha * (l_g_com + l_g_ren) + w.beta * l_f;
  return b;
}

template <typename T>
BasicTensor<T> total_loss(const LossTerms<T>& t, const LossWeights& w) {
  return (t.l_i_com + t.l_i_ren) + mul_scalar(t.l_g_com + t.l_g_ren, w.alpha) + mul_scalar(t.l_f, w.beta);
}

template <typename T>
LossBreakdown breakdown(const LossTerms<T>& t, const LossWeights& w) {
  return total_loss(t.l_i_com.item(), t.l_i_ren.item(), t.l_g_com.item(), t.l_g_ren.item(),
                    t.l_f.item(), w);
}

#define NECHDR_INSTANTIATE_LOSSES(T)                                                              \
  template BasicTensor<T> l1_loss(const BasicTensor<T>&, const BasicTensor<T>&);                  \
  template std::pair<BasicTensor<T>, BasicTensor<T>> image_loss(                                  \
      const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, \
      double);                                                                                    \
  template BasicTensor<T> census_loss(const BasicTensor<T>&, const BasicTensor<T>&);              \
  template std::pair<BasicTensor<T>, BasicTensor<T>> feature_geometry_loss(                       \
      std::span<const BasicTensor<T>>, std::span<const BasicTensor<T>>,                           \
      std::span<const BasicTensor<T>>, std::span<const BasicTensor<T>>);                          \
  template BasicTensor<T> flow_alignment_loss(std::span<const std::array<BasicTensor<T>, 4>>,     \
                                              std::span<const BasicTensor<T>>,                    \
                                              const BasicTensor<T>&, const BasicTensor<T>&,       \
                                              double);                                            \
  template BasicTensor<T> total_loss(const LossTerms<T>&, const LossWeights&);                    \
  template LossBreakdown breakdown(const LossTerms<T>&, const LossWeights&);

NECHDR_INSTANTIATE_LOSSES(float)
NECHDR_INSTANTIATE_LOSSES(double)

}  // namespace nechdr
