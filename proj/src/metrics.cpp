#include "nechdr/metrics.hpp"

#include <array>
#include <cmath>
#include <sstream>
#include <vector>

#include "nechdr/hdr_domain.hpp"

namespace nechdr {

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError(std::string(op) + ": shapes " + a.shape().str() + " and " + b.shape().str() + " differ");
  }
}

std::vector<double> tonemapped(const Tensor& t, double mu) {
  std::vector<double> out;
  out.reserve(t.numel());
  for (float v : t.data()) out.push_back(tonemap_mu(static_cast<double>(v), mu));
  return out;
}

std::vector<double> as_double(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

PsnrValue psnr_of(const std::vector<double>& a, const std::vector<double>& b) {
  double se = 0;
  for (std::size_t i = 0; i < a.size(); ++i) se += (a[i] - b[i]) * (a[i] - b[i]);
  return psnr_from_mse(se / static_cast<double>(a.size()));
}

std::array<double, kWindow> gaussian_1d() {
  std::array<double, kWindow> g{};
  double sum = 0;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - kWindow / 2;
    g[i] = std::exp(-d * d / (2 * kSigma * kSigma));
    sum += g[i];
  }
  for (double& v : g) v /= sum;
  return g;
}

double ssim_of(const std::vector<double>& a, const std::vector<double>& b, const Shape& s) {
  if (s.h < kWindow || s.w < kWindow) {
    throw ShapeError("ssim: spatial extent " + s.str() + " below the 11x11 window");
  }
  const auto g = gaussian_1d();
  const int oh = s.h - kWindow + 1, ow = s.w - kWindow + 1;
  const std::size_t plane = s.plane();
  double total = 0;
  for (std::size_t p = 0; p < static_cast<std::size_t>(s.n) * s.c; ++p) {
    const double* pa = a.data() + p * plane;
    const double* pb = b.data() + p * plane;
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (int i = 0; i < kWindow; ++i) {
          for (int j = 0; j < kWindow; ++j) {
            const double w = g[i] * g[j];
            const std::size_t k = static_cast<std::size_t>(y + i) * s.w + (x + j);
            ma += w * pa[k];
            mb += w * pb[k];
            saa += w * pa[k] * pa[k];
            sbb += w * pb[k] * pb[k];
            sab += w * pa[k] * pb[k];
          }
        }
        const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
        total += ((2 * ma * mb + kC1) * (2 * cov + kC2)) /
                 ((ma * ma + mb * mb + kC1) * (va + vb + kC2));
      }
    }
  }
  return total / (static_cast<double>(s.n) * s.c * oh * ow);
}

}  // namespace

std::string PsnrValue::str() const {
  if (infinite) return "inf";
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << db;
  return os.str();
}

PsnrValue psnr_from_mse(double mse) {
  if (mse < 0) throw std::invalid_argument("psnr: negative mse");
  if (mse == 0) return {0, true};
  return {10.0 * std::log10(1.0 / mse), false};
}

PsnrValue psnr_t(const Tensor& pred, const Tensor& gt, double mu) {
  require_same(pred, gt, "psnr_t");
  return psnr_of(tonemapped(pred, mu), tonemapped(gt, mu));
}

PsnrValue psnr(const Tensor& a, const Tensor& b) {
  require_same(a, b, "psnr");
  return psnr_of(as_double(a), as_double(b));
}

double ssim_t(const Tensor& pred, const Tensor& gt, double mu) {
  require_same(pred, gt, "ssim_t");
  return ssim_of(tonemapped(pred, mu), tonemapped(gt, mu), pred.shape());
}

double ssim(const Tensor& a, const Tensor& b) {
  require_same(a, b, "ssim");
  return ssim_of(as_double(a), as_double(b), a.shape());
}

Tensor temporal_profile(std::span<const Tensor> frames, int row, double mu) {
  if (frames.empty()) throw std::invalid_argument("temporal_profile: no frames");
  const Shape& s = frames[0].shape();
  if (s.n != 1 || s.c != 3) throw ShapeError("temporal_profile: frames must be (1,3,H,W), got " + s.str());
  if (row < 0 || row + 2 > s.h) {
    throw std::out_of_range("temporal_profile: row " + std::to_string(row) + " out of range for height " +
                            std::to_string(s.h));
  }
  const int n = static_cast<int>(frames.size());
  Tensor out({1, 3, 2 * n, s.w});
  auto od = out.mutable_data();
  for (int f = 0; f < n; ++f) {
    if (!(frames[f].shape() == s)) {
      throw ShapeError("temporal_profile: frame " + std::to_string(f) + " has shape " +
                       frames[f].shape().str() + ", expected " + s.str());
    }
    for (int c = 0; c < 3; ++c)
      for (int r = 0; r < 2; ++r)
        for (int x = 0; x < s.w; ++x) {
          const std::size_t k = (static_cast<std::size_t>(c) * 2 * n + 2 * f + r) * s.w + x;
          od[k] = static_cast<float>(tonemap_mu(static_cast<double>(frames[f].at(0, c, row + r, x)), mu));
        }
  }
  return out;
}

}  // namespace nechdr
