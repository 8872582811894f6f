#pragma once

#include <string>
#include <utility>
#include <variant>

#include "icll/rng.hpp"

namespace icll {

struct NormalLaw {
  double mu = 0.0;
  double sigma = 1.0;
};

struct UniformLaw {
  double lo = -1.0;
  double hi = 1.0;
};

// weight * N(mu1, s1) + (1 - weight) * N(mu2, s2)
struct BimodalLaw {
  double mu1 = -1.0;
  double s1 = 1.0;
  double mu2 = 1.0;
  double s2 = 1.0;
  double weight = 0.5;
};

// Sampling law for function coefficients (D_F) or prompt inputs (D_I).
//
// Text form: `normal:<mu>:<sigma>`, `uniform:<lo>:<hi>`,
// `bimodal:<mu1>:<s1>:<mu2>:<s2>:<w>`.
class DistributionSpec {
 public:
  using Law = std::variant<NormalLaw, UniformLaw, BimodalLaw>;

  DistributionSpec() : law_(NormalLaw{}) {}
  // Throws SpecError when an invariant (sigma > 0, lo < hi, 0 < w < 1) fails.
  explicit DistributionSpec(Law law);

  static DistributionSpec normal(double mu, double sigma) { return DistributionSpec(NormalLaw{mu, sigma}); }
  static DistributionSpec uniform(double lo, double hi) { return DistributionSpec(UniformLaw{lo, hi}); }
  static DistributionSpec bimodal(double mu1, double s1, double mu2, double s2, double w) {
    return DistributionSpec(BimodalLaw{mu1, s1, mu2, s2, w});
  }
  static DistributionSpec parse(const std::string& text);

  const Law& law() const { return law_; }
  std::string to_string() const;
  double sample(SeededRng& rng) const;

  // Standard deviation of a normal law, NaN otherwise (used for CSV sigma columns).
  double normal_sigma() const;

  friend bool operator==(const DistributionSpec& a, const DistributionSpec& b) {
    return a.to_string() == b.to_string();
  }

 private:
  Law law_;
};

struct LinearFunction {
  double a = 0.0;
  double b = 0.0;

  double operator()(double x) const { return a * x + b; }
};

// a and b drawn i.i.d. from the same law, a first.
LinearFunction sample_function(const DistributionSpec& spec, SeededRng& rng);

// Exact extrema of a*x + b over a, b, x in [lo, hi] (checked at the corners).
// Only defined for uniform laws; other laws throw SpecError.
std::pair<double, double> theoretical_value_bound(const DistributionSpec& spec);

}  // namespace icll
