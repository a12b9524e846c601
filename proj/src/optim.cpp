#include "nechdr/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace nechdr {

void AdamWConfig::validate() const {
  if (!(lr > 0)) throw std::invalid_argument("learning rate must be positive");
  if (!(beta1 >= 0 && beta1 < 1)) throw std::invalid_argument("beta1 must be in [0,1)");
  if (!(beta2 >= 0 && beta2 < 1)) throw std::invalid_argument("beta2 must be in [0,1)");
  if (!(weight_decay >= 0)) throw std::invalid_argument("weight decay must be >= 0");
  if (!(eps > 0)) throw std::invalid_argument("eps must be positive");
}

void adamw_update(std::span<float> theta, std::span<const float> grad, std::span<float> m,
                  std::span<float> v, const AdamWConfig& c, std::int64_t step) {
  if (grad.size() != theta.size() || m.size() != theta.size() || v.size() != theta.size()) {
    throw std::invalid_argument("adamw_update: buffer sizes differ");
  }
  if (step < 1) throw std::invalid_argument("adamw_update: step must be >= 1");
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double g = grad[i];
    const double mi = c.beta1 * m[i] + (1.0 - c.beta1) * g;
    const double vi = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
    m[i] = static_cast<float>(mi);
    v[i] = static_cast<float>(vi);
    const double mhat = mi / bc1;
    const double vhat = vi / bc2;
    const double t = theta[i];
    theta[i] = static_cast<float>(t - c.lr * (mhat / (std::sqrt(vhat) + c.eps) + c.weight_decay * t));
  }
}

void adamw_step(ModelParams& params, OptimState& state) {
  for (const auto& [name, t] : params) {
    if (!t.has_grad()) throw std::invalid_argument("adamw_step: no gradient for " + name);
  }
  ++state.step;
  for (auto& [name, t] : params) {
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.empty()) m.assign(t.numel(), 0.0f);
    if (v.empty()) v.assign(t.numel(), 0.0f);
    if (m.size() != t.numel() || v.size() != t.numel()) {
      throw std::invalid_argument("adamw_step: moment buffer size mismatch for " + name);
    }
    adamw_update(t.mutable_data(), t.grad(), m, v, state.config, state.step);
  }
}

}  // namespace nechdr
