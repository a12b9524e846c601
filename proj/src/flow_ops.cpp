#include "nechdr/flow_ops.hpp"

#include <cmath>
#include <string>

#include "nechdr/image_io.hpp"
#include "nechdr/ops.hpp"
#include "sampling.hpp"

namespace nechdr {

namespace {

void check_flow(const Shape& s, const char* op) {
  if (s.c != 2) {
    throw ShapeError(std::string(op) + ": flow channel count " + std::to_string(s.c) + " != 2");
  }
}

// Per-pixel stencil; `inside` is false when the coordinate was clamped, which
// zeroes the derivative with respect to that displacement component.
struct WarpTap {
  detail::Tap tx, ty;
  bool inside_x = true;
  bool inside_y = true;
};

}  // namespace

template <typename T>
BasicTensor<T> warp(const BasicTensor<T>& source, const BasicTensor<T>& flow) {
  const Shape& s = source.shape();
  const Shape& fs = flow.shape();
  check_flow(fs, "warp");
  if (fs.n != s.n) throw ShapeError("warp: flow batch " + std::to_string(fs.n) + " != source batch " + std::to_string(s.n));
  if (fs.h != s.h) throw ShapeError("warp: flow height " + std::to_string(fs.h) + " != source height " + std::to_string(s.h));
  if (fs.w != s.w) throw ShapeError("warp: flow width " + std::to_string(fs.w) + " != source width " + std::to_string(s.w));

  const std::size_t plane = s.plane();
  std::vector<WarpTap> taps(static_cast<std::size_t>(s.n) * plane);
  auto fd = flow.data();
  for (int n = 0; n < s.n; ++n) {
    const T* u = fd.data() + static_cast<std::size_t>(n) * 2 * plane;
    const T* v = u + plane;
    for (int y = 0; y < s.h; ++y) {
      for (int x = 0; x < s.w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * s.w + x;
        const double sx = x + static_cast<double>(u[i]);
        const double sy = y + static_cast<double>(v[i]);
        WarpTap& t = taps[n * plane + i];
        t.tx = detail::clamp_tap(sx, s.w);
        t.ty = detail::clamp_tap(sy, s.h);
        t.inside_x = sx >= 0 && sx <= s.w - 1;
        t.inside_y = sy >= 0 && sy <= s.h - 1;
      }
    }
  }

  BasicTensor<T> out(s);
  auto od = out.mutable_data();
  auto sd = source.data();
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const T* src = sd.data() + (static_cast<std::size_t>(n) * s.c + c) * plane;
      T* dst = od.data() + (static_cast<std::size_t>(n) * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const WarpTap& t = taps[n * plane + i];
        const T fx = static_cast<T>(t.tx.frac), fy = static_cast<T>(t.ty.frac);
        const T* r0 = src + static_cast<std::size_t>(t.ty.i0) * s.w;
        const T* r1 = src + static_cast<std::size_t>(t.ty.i1) * s.w;
        const T top = r0[t.tx.i0] + fx * (r0[t.tx.i1] - r0[t.tx.i0]);
        const T bot = r1[t.tx.i0] + fx * (r1[t.tx.i1] - r1[t.tx.i0]);
        dst[i] = top + fy * (bot - top);
      }
    }
  }

  if (detail::should_record({&source, &flow})) {
    detail::record(out, [source, flow, taps, s, plane](std::span<const T> g) {
      auto sd = source.data();
      std::span<T> gs = source.requires_grad() ? source.grad_buffer() : std::span<T>();
      std::span<T> gf = flow.requires_grad() ? flow.grad_buffer() : std::span<T>();
      for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
          const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
          const T* src = sd.data() + base;
          const T* gc = g.data() + base;
          for (std::size_t i = 0; i < plane; ++i) {
            const WarpTap& t = taps[n * plane + i];
            const T fx = static_cast<T>(t.tx.frac), fy = static_cast<T>(t.ty.frac);
            const std::size_t r0 = static_cast<std::size_t>(t.ty.i0) * s.w;
            const std::size_t r1 = static_cast<std::size_t>(t.ty.i1) * s.w;
            const T gv = gc[i];
            if (!gs.empty()) {
              T* gsc = gs.data() + base;
              gsc[r0 + t.tx.i0] += gv * (1 - fy) * (1 - fx);
              gsc[r0 + t.tx.i1] += gv * (1 - fy) * fx;
              gsc[r1 + t.tx.i0] += gv * fy * (1 - fx);
              gsc[r1 + t.tx.i1] += gv * fy * fx;
            }
            if (!gf.empty()) {
              const T p00 = src[r0 + t.tx.i0], p01 = src[r0 + t.tx.i1];
              const T p10 = src[r1 + t.tx.i0], p11 = src[r1 + t.tx.i1];
              T* gu = gf.data() + static_cast<std::size_t>(n) * 2 * plane;
              if (t.inside_x) gu[i] += gv * ((1 - fy) * (p01 - p00) + fy * (p11 - p10));
              if (t.inside_y) gu[plane + i] += gv * ((1 - fx) * (p10 - p00) + fx * (p11 - p01));
            }
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> flow_upscale(const BasicTensor<T>& flow, int scale) {
  check_flow(flow.shape(), "flow_upscale");
  if (scale < 1) throw ShapeError("flow_upscale: scale must be >= 1");
  if (scale == 1) return flow;
  return mul_scalar(upsample_bilinear(flow, scale), static_cast<double>(scale));
}

void write_flow_pfm(const Tensor& flow, const std::filesystem::path& path) {
  check_flow(flow.shape(), "write_flow_pfm");
  const Shape& s = flow.shape();
  HdrImage image(s.h, s.w);
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x) {
      image.at(0, y, x) = flow.at(0, 0, y, x);
      image.at(1, y, x) = flow.at(0, 1, y, x);
    }
  write_pfm(image, path);
}

template BasicTensor<float> warp(const BasicTensor<float>&, const BasicTensor<float>&);
template BasicTensor<double> warp(const BasicTensor<double>&, const BasicTensor<double>&);
template BasicTensor<float> flow_upscale(const BasicTensor<float>&, int);
template BasicTensor<double> flow_upscale(const BasicTensor<double>&, int);

}  // namespace nechdr
