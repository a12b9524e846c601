#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "nechdr/model.hpp"

namespace nechdr {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.0;
  double eps = 1e-8;

  void validate() const;
  friend bool operator==(const AdamWConfig&, const AdamWConfig&) = default;
};

/// Moment buffers keyed by parameter name.
struct OptimState {
  AdamWConfig config;
  std::int64_t step = 0;
  std::map<std::string, std::vector<float>> m;
  std::map<std::string, std::vector<float>> v;
};

/// One decoupled-weight-decay Adam update on a flat buffer. `step` is the
/// 1-based step count used for bias correction.
void adamw_update(std::span<float> theta, std::span<const float> grad, std::span<float> m,
                  std::span<float> v, const AdamWConfig& config, std::int64_t step);

/// Applies one step to every parameter using its accumulated gradient.
/// Throws std::invalid_argument naming the first parameter without a gradient.
void adamw_step(ModelParams& params, OptimState& state);

}  // namespace nechdr
