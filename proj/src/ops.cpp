#include "nechdr/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>

#include "sampling.hpp"

namespace nechdr {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

std::string dim_mismatch(const char* op, const char* what, int got, int want) {
  return std::string(op) + ": " + what + " is " + std::to_string(got) + ", expected " +
         std::to_string(want);
}

// Column layout: row (c*kh + i)*kw + j, column oy*wo + ox.
template <typename T>
void im2col(const T* img, int channels, int height, int width, int kh, int kw, int stride,
            int pad, int ho, int wo, T* col) {
  for (int c = 0; c < channels; ++c) {
    const T* plane = img + static_cast<std::size_t>(c) * height * width;
    for (int i = 0; i < kh; ++i) {
      for (int j = 0; j < kw; ++j) {
        T* row = col + (static_cast<std::size_t>(c * kh + i) * kw + j) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + i;
          T* dst = row + static_cast<std::size_t>(oy) * wo;
          if (iy < 0 || iy >= height) {
            std::fill(dst, dst + wo, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * width;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + j;
            dst[ox] = (ix >= 0 && ix < width) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, int channels, int height, int width, int kh, int kw, int stride,
            int pad, int ho, int wo, T* img) {
  for (int c = 0; c < channels; ++c) {
    T* plane = img + static_cast<std::size_t>(c) * height * width;
    for (int i = 0; i < kh; ++i) {
      for (int j = 0; j < kw; ++j) {
        const T* row = col + (static_cast<std::size_t>(c * kh + i) * kw + j) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + i;
          if (iy < 0 || iy >= height) continue;
          const T* src = row + static_cast<std::size_t>(oy) * wo;
          T* dst = plane + static_cast<std::size_t>(iy) * width;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + j;
            if (ix >= 0 && ix < width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

struct ConvGeometry {
  int batch, in_ch, out_ch, h, w, kh, kw, ho, wo, stride, pad;
};

template <typename T>
void check_bias(const char* op, const BasicTensor<T>& bias, int out_ch) {
  if (static_cast<int>(bias.numel()) != out_ch) {
    throw ShapeError(dim_mismatch(op, "bias length", static_cast<int>(bias.numel()), out_ch));
  }
}

// Broadcast bookkeeping for elementwise binaries.
struct Broadcast {
  Shape out;
  std::array<std::size_t, 4> sa{}, sb{};
};

std::array<std::size_t, 4> strides_for(const Shape& s, const Shape& out) {
  const std::array<int, 4> ext{s.n, s.c, s.h, s.w};
  const std::array<int, 4> oext{out.n, out.c, out.h, out.w};
  std::array<std::size_t, 4> st{};
  std::size_t acc = 1;
  for (int d = 3; d >= 0; --d) {
    st[d] = (ext[d] == 1 && oext[d] != 1) ? 0 : acc;
    acc *= static_cast<std::size_t>(ext[d]);
  }
  return st;
}

Broadcast broadcast(const char* op, const Shape& a, const Shape& b) {
  const std::array<int, 4> ea{a.n, a.c, a.h, a.w}, eb{b.n, b.c, b.h, b.w};
  static const char* names[4] = {"batch", "channel", "height", "width"};
  std::array<int, 4> eo{};
  for (int d = 0; d < 4; ++d) {
    if (ea[d] == eb[d] || eb[d] == 1) {
      eo[d] = ea[d];
    } else if (ea[d] == 1) {
      eo[d] = eb[d];
    } else {
      throw ShapeError(std::string(op) + ": " + names[d] + " extent " + std::to_string(ea[d]) +
                       " vs " + std::to_string(eb[d]) + " (" + a.str() + " vs " + b.str() + ")");
    }
  }
  Broadcast bc;
  bc.out = {eo[0], eo[1], eo[2], eo[3]};
  bc.sa = strides_for(a, bc.out);
  bc.sb = strides_for(b, bc.out);
  return bc;
}

template <typename Fn>
void for_each_broadcast(const Broadcast& bc, Fn&& fn) {
  const Shape& o = bc.out;
  std::size_t k = 0;
  for (int n = 0; n < o.n; ++n)
    for (int c = 0; c < o.c; ++c)
      for (int y = 0; y < o.h; ++y) {
        const std::size_t ba = n * bc.sa[0] + c * bc.sa[1] + y * bc.sa[2];
        const std::size_t bb = n * bc.sb[0] + c * bc.sb[1] + y * bc.sb[2];
        for (int x = 0; x < o.w; ++x, ++k) fn(k, ba + x * bc.sa[3], bb + x * bc.sb[3]);
      }
}

// Shared driver for binaries: f(a, b) forward; dfa/dfb are partial derivatives.
template <typename T, typename F, typename DA, typename DB>
BasicTensor<T> binary(const char* op, const BasicTensor<T>& a, const BasicTensor<T>& b, F f,
                      DA dfa, DB dfb) {
  const Broadcast bc = broadcast(op, a.shape(), b.shape());
  BasicTensor<T> out(bc.out);
  auto od = out.mutable_data();
  auto ad = a.data();
  auto bd = b.data();
  for_each_broadcast(bc, [&](std::size_t k, std::size_t ia, std::size_t ib) {
    od[k] = f(ad[ia], bd[ib]);
  });
  if (detail::should_record({&a, &b})) {
    detail::record(out, [a, b, bc, dfa, dfb](std::span<const T> g) {
      auto ad = a.data();
      auto bd = b.data();
      if (a.requires_grad()) {
        auto ga = a.grad_buffer();
        for_each_broadcast(bc, [&](std::size_t k, std::size_t ia, std::size_t ib) {
          ga[ia] += g[k] * dfa(ad[ia], bd[ib]);
        });
      }
      if (b.requires_grad()) {
        auto gb = b.grad_buffer();
        for_each_broadcast(bc, [&](std::size_t k, std::size_t ia, std::size_t ib) {
          gb[ib] += g[k] * dfb(ad[ia], bd[ib]);
        });
      }
    });
  }
  return out;
}

// Shared driver for unaries; df receives (x, f(x)).
template <typename T, typename F, typename DF>
BasicTensor<T> unary(const BasicTensor<T>& a, F f, DF df) {
  BasicTensor<T> out(a.shape());
  auto od = out.mutable_data();
  auto ad = a.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = f(ad[i]);
  if (detail::should_record({&a})) {
    BasicTensor<T> saved = out;
    detail::record(out, [a, saved, df](std::span<const T> g) {
      auto ga = a.grad_buffer();
      auto ad = a.data();
      auto yd = saved.data();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * df(ad[i], yd[i]);
    });
  }
  return out;
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, int stride, int padding) {
  const Shape& is = input.shape();
  const Shape& ws = weight.shape();
  if (stride < 1) throw ShapeError("conv2d: stride must be positive");
  if (padding < 0) throw ShapeError("conv2d: padding must be non-negative");
  if (ws.c != is.c) throw ShapeError(dim_mismatch("conv2d", "input channel count", is.c, ws.c));
  check_bias("conv2d", bias, ws.n);
  const int ho = (is.h + 2 * padding - ws.h) / stride + 1;
  const int wo = (is.w + 2 * padding - ws.w) / stride + 1;
  if (is.h + 2 * padding < ws.h || ho <= 0) {
    throw ShapeError(dim_mismatch("conv2d", "padded input height", is.h + 2 * padding, ws.h));
  }
  if (is.w + 2 * padding < ws.w || wo <= 0) {
    throw ShapeError(dim_mismatch("conv2d", "padded input width", is.w + 2 * padding, ws.w));
  }
  const ConvGeometry g{is.n, is.c, ws.n, is.h, is.w, ws.h, ws.w, ho, wo, stride, padding};
  const int k = g.in_ch * g.kh * g.kw;
  const int p = g.ho * g.wo;

  BasicTensor<T> out({g.batch, g.out_ch, g.ho, g.wo});
  std::vector<T> col(static_cast<std::size_t>(k) * p);
  ConstMatMap<T> wmat(weight.data().data(), g.out_ch, k);
  const T* bd = bias.data().data();
  for (int n = 0; n < g.batch; ++n) {
    im2col(input.data().data() + static_cast<std::size_t>(n) * g.in_ch * g.h * g.w, g.in_ch,
           g.h, g.w, g.kh, g.kw, g.stride, g.pad, g.ho, g.wo, col.data());
    MatMap<T> omat(out.mutable_data().data() + static_cast<std::size_t>(n) * g.out_ch * p,
                   g.out_ch, p);
    omat.noalias() = wmat * ConstMatMap<T>(col.data(), k, p);
    for (int o = 0; o < g.out_ch; ++o) omat.row(o).array() += bd[o];
  }

  if (detail::should_record({&input, &weight, &bias})) {
    detail::record(out, [input, weight, bias, g, k, p](std::span<const T> grad) {
      std::vector<T> col(static_cast<std::size_t>(k) * p);
      std::vector<T> dcol(static_cast<std::size_t>(k) * p);
      ConstMatMap<T> wmat(weight.data().data(), g.out_ch, k);
      for (int n = 0; n < g.batch; ++n) {
        ConstMatMap<T> gmat(grad.data() + static_cast<std::size_t>(n) * g.out_ch * p, g.out_ch,
                            p);
        if (weight.requires_grad()) {
          im2col(input.data().data() + static_cast<std::size_t>(n) * g.in_ch * g.h * g.w,
                 g.in_ch, g.h, g.w, g.kh, g.kw, g.stride, g.pad, g.ho, g.wo, col.data());
          MatMap<T> dw(weight.grad_buffer().data(), g.out_ch, k);
          dw.noalias() += gmat * ConstMatMap<T>(col.data(), k, p).transpose();
        }
        if (bias.requires_grad()) {
          auto db = bias.grad_buffer();
          for (int o = 0; o < g.out_ch; ++o) db[o] += gmat.row(o).sum();
        }
        if (input.requires_grad()) {
          MatMap<T> dc(dcol.data(), k, p);
          dc.noalias() = wmat.transpose() * gmat;
          col2im(dcol.data(), g.in_ch, g.h, g.w, g.kh, g.kw, g.stride, g.pad, g.ho, g.wo,
                 input.grad_buffer().data() + static_cast<std::size_t>(n) * g.in_ch * g.h * g.w);
        }
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> deconv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                        const BasicTensor<T>& bias, int stride, int padding) {
  const Shape& is = input.shape();
  const Shape& ws = weight.shape();
  if (stride < 1) throw ShapeError("deconv2d: stride must be positive");
  if (padding < 0) throw ShapeError("deconv2d: padding must be non-negative");
  if (ws.n != is.c) {
    throw ShapeError(dim_mismatch("deconv2d", "input channel count", is.c, ws.n));
  }
  check_bias("deconv2d", bias, ws.c);
  const int ho = (is.h - 1) * stride - 2 * padding + ws.h;
  const int wo = (is.w - 1) * stride - 2 * padding + ws.w;
  if (ho <= 0) throw ShapeError(dim_mismatch("deconv2d", "output height", ho, 1));
  if (wo <= 0) throw ShapeError(dim_mismatch("deconv2d", "output width", wo, 1));
  // Geometry seen from the equivalent forward conv: image = deconv output.
  const ConvGeometry g{is.n, ws.c, is.c, ho, wo, ws.h, ws.w, is.h, is.w, stride, padding};
  const int k = g.in_ch * g.kh * g.kw;  // (deconv out channels) * kh * kw
  const int p = g.ho * g.wo;            // deconv input pixels

  BasicTensor<T> out({g.batch, g.in_ch, g.h, g.w});
  std::vector<T> col(static_cast<std::size_t>(k) * p);
  ConstMatMap<T> wmat(weight.data().data(), g.out_ch, k);
  const T* bd = bias.data().data();
  for (int n = 0; n < g.batch; ++n) {
    ConstMatMap<T> xmat(input.data().data() + static_cast<std::size_t>(n) * g.out_ch * p,
                        g.out_ch, p);
    MatMap<T>(col.data(), k, p).noalias() = wmat.transpose() * xmat;
    T* plane = out.mutable_data().data() + static_cast<std::size_t>(n) * g.in_ch * g.h * g.w;
    col2im(col.data(), g.in_ch, g.h, g.w, g.kh, g.kw, g.stride, g.pad, g.ho, g.wo, plane);
    for (int c = 0; c < g.in_ch; ++c) {
      T* pc = plane + static_cast<std::size_t>(c) * g.h * g.w;
      for (int i = 0; i < g.h * g.w; ++i) pc[i] += bd[c];
    }
  }

  if (detail::should_record({&input, &weight, &bias})) {
    detail::record(out, [input, weight, bias, g, k, p](std::span<const T> grad) {
      std::vector<T> colg(static_cast<std::size_t>(k) * p);
      ConstMatMap<T> wmat(weight.data().data(), g.out_ch, k);
      for (int n = 0; n < g.batch; ++n) {
        const T* gplane = grad.data() + static_cast<std::size_t>(n) * g.in_ch * g.h * g.w;
        im2col(gplane, g.in_ch, g.h, g.w, g.kh, g.kw, g.stride, g.pad, g.ho, g.wo, colg.data());
        ConstMatMap<T> cg(colg.data(), k, p);
        if (input.requires_grad()) {
          MatMap<T> dx(input.grad_buffer().data() + static_cast<std::size_t>(n) * g.out_ch * p,
                       g.out_ch, p);
          dx.noalias() += wmat * cg;
        }
        if (weight.requires_grad()) {
          ConstMatMap<T> xmat(input.data().data() + static_cast<std::size_t>(n) * g.out_ch * p,
                              g.out_ch, p);
          MatMap<T> dw(weight.grad_buffer().data(), g.out_ch, k);
          dw.noalias() += xmat * cg.transpose();
        }
        if (bias.requires_grad()) {
          auto db = bias.grad_buffer();
          for (int c = 0; c < g.in_ch; ++c) {
            const T* gc = gplane + static_cast<std::size_t>(c) * g.h * g.w;
            T s = 0;
            for (int i = 0; i < g.h * g.w; ++i) s += gc[i];
            db[c] += s;
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> prelu(const BasicTensor<T>& input, const BasicTensor<T>& slope) {
  const Shape& s = input.shape();
  const int ns = static_cast<int>(slope.numel());
  if (ns != 1 && ns != s.c) {
    throw ShapeError("prelu: slope length " + std::to_string(ns) + " is neither 1 nor channel count " +
                     std::to_string(s.c));
  }
  const std::size_t plane = s.plane();
  auto slope_of = [ns, plane, s](std::size_t i) {
    return ns == 1 ? std::size_t{0} : (i / plane) % static_cast<std::size_t>(s.c);
  };
  BasicTensor<T> out(s);
  auto od = out.mutable_data();
  auto xd = input.data();
  auto ad = slope.data();
  for (std::size_t i = 0; i < od.size(); ++i) {
    od[i] = xd[i] >= T(0) ? xd[i] : ad[slope_of(i)] * xd[i];
  }
  if (detail::should_record({&input, &slope})) {
    detail::record(out, [input, slope, slope_of](std::span<const T> g) {
      auto xd = input.data();
      auto ad = slope.data();
      if (input.requires_grad()) {
        auto gx = input.grad_buffer();
        for (std::size_t i = 0; i < gx.size(); ++i) {
          gx[i] += xd[i] >= T(0) ? g[i] : ad[slope_of(i)] * g[i];
        }
      }
      if (slope.requires_grad()) {
        auto ga = slope.grad_buffer();
        for (std::size_t i = 0; i < xd.size(); ++i) {
          if (xd[i] < T(0)) ga[slope_of(i)] += g[i] * xd[i];
        }
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> upsample_bilinear(const BasicTensor<T>& input, int scale) {
  if (scale < 1) throw ShapeError("upsample_bilinear: scale must be >= 1");
  const Shape& s = input.shape();
  const Shape os{s.n, s.c, s.h * scale, s.w * scale};
  std::vector<detail::Tap> ty(os.h), tx(os.w);
  for (int y = 0; y < os.h; ++y) ty[y] = detail::resize_tap(y, scale, s.h);
  for (int x = 0; x < os.w; ++x) tx[x] = detail::resize_tap(x, scale, s.w);

  BasicTensor<T> out(os);
  auto od = out.mutable_data();
  auto id = input.data();
  const std::size_t planes = static_cast<std::size_t>(s.n) * s.c;
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const T* src = id.data() + pl * s.plane();
    T* dst = od.data() + pl * os.plane();
    for (int y = 0; y < os.h; ++y) {
      const auto& a = ty[y];
      const T* r0 = src + static_cast<std::size_t>(a.i0) * s.w;
      const T* r1 = src + static_cast<std::size_t>(a.i1) * s.w;
      const T fy = static_cast<T>(a.frac);
      for (int x = 0; x < os.w; ++x) {
        const auto& b = tx[x];
        const T fx = static_cast<T>(b.frac);
        const T top = r0[b.i0] + fx * (r0[b.i1] - r0[b.i0]);
        const T bot = r1[b.i0] + fx * (r1[b.i1] - r1[b.i0]);
        dst[static_cast<std::size_t>(y) * os.w + x] = top + fy * (bot - top);
      }
    }
  }
  if (detail::should_record({&input})) {
    detail::record(out, [input, ty, tx, s, os, planes](std::span<const T> g) {
      auto gi = input.grad_buffer();
      for (std::size_t pl = 0; pl < planes; ++pl) {
        T* dst = gi.data() + pl * s.plane();
        const T* gsrc = g.data() + pl * os.plane();
        for (int y = 0; y < os.h; ++y) {
          const auto& a = ty[y];
          const T fy = static_cast<T>(a.frac);
          T* r0 = dst + static_cast<std::size_t>(a.i0) * s.w;
          T* r1 = dst + static_cast<std::size_t>(a.i1) * s.w;
          for (int x = 0; x < os.w; ++x) {
            const auto& b = tx[x];
            const T fx = static_cast<T>(b.frac);
            const T gv = gsrc[static_cast<std::size_t>(y) * os.w + x];
            r0[b.i0] += gv * (1 - fy) * (1 - fx);
            r0[b.i1] += gv * (1 - fy) * fx;
            r1[b.i0] += gv * fy * (1 - fx);
            r1[b.i1] += gv * fy * fx;
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
      [](T, T) { return T(1); });
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
      [](T, T) { return T(-1); });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; },
      [](T x, T) { return x; });
}

template <typename T>
BasicTensor<T> div(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (detail::should_record({&a, &b})) {
    for (T v : b.data()) {
      if (v == T(0)) throw std::domain_error("div: exact zero in denominator");
    }
  }
  return binary(
      "div", a, b, [](T x, T y) { return x / y; }, [](T, T y) { return T(1) / y; },
      [](T x, T y) { return -x / (y * y); });
}

template <typename T>
BasicTensor<T> add_scalar(const BasicTensor<T>& a, double s) {
  const T v = static_cast<T>(s);
  return unary(a, [v](T x) { return x + v; }, [](T, T) { return T(1); });
}

template <typename T>
BasicTensor<T> mul_scalar(const BasicTensor<T>& a, double s) {
  const T v = static_cast<T>(s);
  return unary(a, [v](T x) { return x * v; }, [v](T, T) { return v; });
}

template <typename T>
BasicTensor<T> pow_scalar(const BasicTensor<T>& a, double p) {
  const T e = static_cast<T>(p);
  return unary(
      a, [e](T x) { return std::pow(x, e); },
      [e](T x, T) { return x == T(0) ? T(0) : e * std::pow(x, e - 1); });
}

template <typename T>
BasicTensor<T> log1p(const BasicTensor<T>& a) {
  return unary(a, [](T x) { return std::log1p(x); }, [](T x, T) { return T(1) / (T(1) + x); });
}

template <typename T>
BasicTensor<T> abs(const BasicTensor<T>& a) {
  return unary(
      a, [](T x) { return std::abs(x); },
      [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

template <typename T>
BasicTensor<T> clamp(const BasicTensor<T>& a, double lo, double hi) {
  const T l = static_cast<T>(lo), h = static_cast<T>(hi);
  return unary(
      a, [l, h](T x) { return std::clamp(x, l, h); },
      [l, h](T x, T) { return (x >= l && x <= h) ? T(1) : T(0); });
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& a) {
  return unary(
      a, [](T x) { return T(1) / (T(1) + std::exp(-x)); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
BasicTensor<T> softplus(const BasicTensor<T>& a) {
  return unary(
      a,
      [](T x) { return x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](T x, T) { return T(1) / (T(1) + std::exp(-x)); });
}

template <typename T>
BasicTensor<T> concat_channels(std::span<const BasicTensor<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape& s0 = parts[0].shape();
  int channels = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.n != s0.n) throw ShapeError(dim_mismatch("concat_channels", "batch", s.n, s0.n));
    if (s.h != s0.h) throw ShapeError(dim_mismatch("concat_channels", "height", s.h, s0.h));
    if (s.w != s0.w) throw ShapeError(dim_mismatch("concat_channels", "width", s.w, s0.w));
    channels += s.c;
  }
  const std::size_t plane = s0.plane();
  BasicTensor<T> out({s0.n, channels, s0.h, s0.w});
  auto od = out.mutable_data();
  for (int n = 0; n < s0.n; ++n) {
    std::size_t off = static_cast<std::size_t>(n) * channels * plane;
    for (const auto& p : parts) {
      const std::size_t len = static_cast<std::size_t>(p.shape().c) * plane;
      auto src = p.data().subspan(static_cast<std::size_t>(n) * len, len);
      std::copy(src.begin(), src.end(), od.begin() + off);
      off += len;
    }
  }
  bool track = false;
  if (grad_enabled()) {
    for (const auto& p : parts) track = track || p.requires_grad();
  }
  if (track) {
    std::vector<BasicTensor<T>> inputs(parts.begin(), parts.end());
    detail::record(out, [inputs, channels, plane](std::span<const T> g) {
      const int batch = inputs[0].shape().n;
      for (int n = 0; n < batch; ++n) {
        std::size_t off = static_cast<std::size_t>(n) * channels * plane;
        for (const auto& p : inputs) {
          const std::size_t len = static_cast<std::size_t>(p.shape().c) * plane;
          if (p.requires_grad()) {
            auto dst = p.grad_buffer().subspan(static_cast<std::size_t>(n) * len, len);
            for (std::size_t i = 0; i < len; ++i) dst[i] += g[off + i];
          }
          off += len;
        }
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> slice_channels(const BasicTensor<T>& a, int start, int count) {
  const Shape& s = a.shape();
  if (start < 0 || count < 0 || start + count > s.c) {
    throw ShapeError("slice_channels: range [" + std::to_string(start) + "," +
                     std::to_string(start + count) + ") outside channel extent " +
                     std::to_string(s.c));
  }
  const std::size_t plane = s.plane();
  BasicTensor<T> out({s.n, count, s.h, s.w});
  auto od = out.mutable_data();
  auto ad = a.data();
  for (int n = 0; n < s.n; ++n) {
    const std::size_t src = (static_cast<std::size_t>(n) * s.c + start) * plane;
    const std::size_t dst = static_cast<std::size_t>(n) * count * plane;
    std::copy_n(ad.begin() + src, count * plane, od.begin() + dst);
  }
  if (detail::should_record({&a})) {
    detail::record(out, [a, start, count, plane](std::span<const T> g) {
      const Shape& s = a.shape();
      auto ga = a.grad_buffer();
      for (int n = 0; n < s.n; ++n) {
        const std::size_t src = (static_cast<std::size_t>(n) * s.c + start) * plane;
        const std::size_t dst = static_cast<std::size_t>(n) * count * plane;
        for (std::size_t i = 0; i < count * plane; ++i) ga[src + i] += g[dst + i];
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> reduce_sum(const BasicTensor<T>& a) {
  // Double accumulation keeps the 32-bit path order-stable and accurate.
  double acc = 0;
  for (T v : a.data()) acc += v;
  BasicTensor<T> out = BasicTensor<T>::scalar(static_cast<T>(acc));
  if (detail::should_record({&a})) {
    detail::record(out, [a](std::span<const T> g) {
      for (auto& v : a.grad_buffer()) v += g[0];
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> reduce_mean(const BasicTensor<T>& a) {
  if (a.numel() == 0) throw ShapeError("reduce_mean: empty tensor");
  double acc = 0;
  for (T v : a.data()) acc += v;
  const double count = static_cast<double>(a.numel());
  BasicTensor<T> out = BasicTensor<T>::scalar(static_cast<T>(acc / count));
  if (detail::should_record({&a})) {
    detail::record(out, [a, count](std::span<const T> g) {
      const T share = static_cast<T>(g[0] / count);
      for (auto& v : a.grad_buffer()) v += share;
    });
  }
  return out;
}

#define NECHDR_INSTANTIATE_OPS(T)                                                              \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&,                 \
                                 const BasicTensor<T>&, int, int);                             \
  template BasicTensor<T> deconv2d(const BasicTensor<T>&, const BasicTensor<T>&,               \
                                   const BasicTensor<T>&, int, int);                           \
  template BasicTensor<T> prelu(const BasicTensor<T>&, const BasicTensor<T>&);                 \
  template BasicTensor<T> upsample_bilinear(const BasicTensor<T>&, int);                       \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                   \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                   \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                   \
  template BasicTensor<T> div(const BasicTensor<T>&, const BasicTensor<T>&);                   \
  template BasicTensor<T> add_scalar(const BasicTensor<T>&, double);                           \
  template BasicTensor<T> mul_scalar(const BasicTensor<T>&, double);                           \
  template BasicTensor<T> pow_scalar(const BasicTensor<T>&, double);                           \
  template BasicTensor<T> log1p(const BasicTensor<T>&);                                        \
  template BasicTensor<T> abs(const BasicTensor<T>&);                                          \
  template BasicTensor<T> clamp(const BasicTensor<T>&, double, double);                        \
  template BasicTensor<T> sigmoid(const BasicTensor<T>&);                                      \
  template BasicTensor<T> softplus(const BasicTensor<T>&);                                     \
  template BasicTensor<T> concat_channels(std::span<const BasicTensor<T>>);                    \
  template BasicTensor<T> slice_channels(const BasicTensor<T>&, int, int);                     \
  template BasicTensor<T> reduce_sum(const BasicTensor<T>&);                                   \
  template BasicTensor<T> reduce_mean(const BasicTensor<T>&);

NECHDR_INSTANTIATE_OPS(float)
NECHDR_INSTANTIATE_OPS(double)

}  // namespace nechdr
