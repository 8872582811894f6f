#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "icll/model.hpp"

namespace icll {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second moment estimates over the flattened parameter vector.
struct AdamState {
  std::uint64_t step = 0;
  std::vector<float> m;
  std::vector<float> v;

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

// Adam with bias correction; no schedule, clipping or weight decay.
class Adam {
 public:
  Adam(AdamConfig config, std::size_t n_params);
  Adam(AdamConfig config, AdamState state);

  // Applies one update using the gradients currently stored on `params`.
  // Parameters without a gradient are treated as having zero gradient.
  void step(std::span<Parameter<float>> params);

  const AdamConfig& config() const { return config_; }
  const AdamState& state() const { return state_; }

 private:
  AdamConfig config_;
  AdamState state_;
};

}  // namespace icll
