#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "icll/distributions.hpp"
#include "icll/rng.hpp"

namespace icll {

struct PromptOptions {
  bool sorted = false;     // ascending x within each row
  double noise_std = 0.0;  // additive Gaussian noise on y tokens only
};

// Rows of interleaved (x1, y1, ..., xn, yn) prompts. Values are kept in double;
// tokens() produces the float token matrix consumed by the model. The
// prediction for point k of a row is made from (x1, y1, ..., xk).
struct PromptBatch {
  std::size_t rows = 0;
  std::size_t n_points = 0;
  std::vector<double> xs;       // [rows, n_points]
  std::vector<double> ys;       // y tokens: targets plus noise
  std::vector<double> targets;  // exact f(x)
  std::vector<LinearFunction> functions;
  bool sorted = false;
  double noise_std = 0.0;

  double x(std::size_t row, std::size_t k) const { return xs[row * n_points + k]; }
  double y(std::size_t row, std::size_t k) const { return ys[row * n_points + k]; }
  double target(std::size_t row, std::size_t k) const { return targets[row * n_points + k]; }

  // [rows, 2 * n_points] as float, row-major.
  std::vector<float> tokens() const;

  // Appends the rows of `other`; point counts and options must match.
  void append(const PromptBatch& other);
};

// One row for function f with inputs drawn from `inputs`.
PromptBatch build_prompt(const LinearFunction& f, const DistributionSpec& inputs,
                         std::size_t n_points, SeededRng& rng, const PromptOptions& opts = {});

// One row for function f at explicit inputs. Noise (if any) is drawn from rng.
PromptBatch build_prompt_at(const LinearFunction& f, std::span<const double> xs, SeededRng& rng,
                            const PromptOptions& opts = {});

// `rows` prompts, each with a fresh function from `functions` and fresh inputs.
PromptBatch sample_batch(const DistributionSpec& functions, const DistributionSpec& inputs,
                         std::size_t rows, std::size_t n_points, SeededRng& rng,
                         const PromptOptions& opts = {});

// Monte Carlo estimate of P(lo <= f(x) <= hi), f ~ functions, x ~ inputs.
double coverage_probability(const DistributionSpec& functions, const DistributionSpec& inputs,
                            double lo, double hi, std::size_t n_samples, SeededRng& rng);

}  // namespace icll
