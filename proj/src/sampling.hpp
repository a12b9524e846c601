#pragma once

#include <algorithm>
#include <cmath>

namespace nechdr::detail {

/// Two-tap linear interpolation stencil along one axis.
struct Tap {
  int i0 = 0;
  int i1 = 0;
  double frac = 0;
};

/// Half-pixel-centre source coordinate, clamped to the border.
inline Tap clamp_tap(double coord, int extent) {
  const double c = std::clamp(coord, 0.0, static_cast<double>(extent - 1));
  Tap t;
  t.i0 = static_cast<int>(std::floor(c));
  t.i1 = std::min(t.i0 + 1, extent - 1);
  t.frac = c - t.i0;
  return t;
}

inline Tap resize_tap(int dst, int scale, int extent) {
  return clamp_tap((dst + 0.5) / scale - 0.5, extent);
}

}  // namespace nechdr::detail
