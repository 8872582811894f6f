#include "icll/adam.hpp"

#include <cmath>

#include "icll/error.hpp"

namespace icll {

Adam::Adam(AdamConfig config, std::size_t n_params) : config_(config) {
  state_.m.assign(n_params, 0.0f);
  state_.v.assign(n_params, 0.0f);
}

Adam::Adam(AdamConfig config, AdamState state) : config_(config), state_(std::move(state)) {
  if (state_.m.size() != state_.v.size()) throw DimensionError("Adam: moment sizes differ");
}

void Adam::step(std::span<Parameter<float>> params) {
  std::size_t total = 0;
  for (const auto& p : params) total += p.tensor.numel();
  if (total != state_.m.size()) {
    throw DimensionError("Adam: state has " + std::to_string(state_.m.size()) +
                         " entries, parameters have " + std::to_string(total));
  }
  ++state_.step;
  const double t = static_cast<double>(state_.step);
  const float b1 = static_cast<float>(config_.beta1);
  const float b2 = static_cast<float>(config_.beta2);
  const float c1 = static_cast<float>(1.0 / (1.0 - std::pow(config_.beta1, t)));
  const float c2 = static_cast<float>(1.0 / (1.0 - std::pow(config_.beta2, t)));
  const float lr = static_cast<float>(config_.lr);
  const float eps = static_cast<float>(config_.eps);

  std::size_t offset = 0;
  for (auto& p : params) {
    auto w = p.tensor.data();
    const bool has = p.tensor.has_grad();
    auto g = p.tensor.grad();
    float* m = state_.m.data() + offset;
    float* v = state_.v.data() + offset;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const float gi = has ? g[i] : 0.0f;
      m[i] = b1 * m[i] + (1.0f - b1) * gi;
      v[i] = b2 * v[i] + (1.0f - b2) * gi * gi;
      const float m_hat = m[i] * c1;
      const float v_hat = v[i] * c2;
      w[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
    offset += w.size();
  }
}

}  // namespace icll
