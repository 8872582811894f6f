#include "icll/prompt.hpp"

#include <algorithm>

#include "icll/error.hpp"

namespace icll {

std::vector<float> PromptBatch::tokens() const {
  std::vector<float> out(rows * 2 * n_points);
  for (std::size_t r = 0; r < rows; ++r) {
    float* row = out.data() + r * 2 * n_points;
    for (std::size_t k = 0; k < n_points; ++k) {
      row[2 * k] = static_cast<float>(x(r, k));
      row[2 * k + 1] = static_cast<float>(y(r, k));
    }
  }
  return out;
}

void PromptBatch::append(const PromptBatch& other) {
  if (rows == 0 && xs.empty()) {
    *this = other;
    return;
  }
  if (other.n_points != n_points || other.sorted != sorted || other.noise_std != noise_std) {
    throw DimensionError("PromptBatch::append: incompatible batches");
  }
  xs.insert(xs.end(), other.xs.begin(), other.xs.end());
  ys.insert(ys.end(), other.ys.begin(), other.ys.end());
  targets.insert(targets.end(), other.targets.begin(), other.targets.end());
  functions.insert(functions.end(), other.functions.begin(), other.functions.end());
  rows += other.rows;
}

PromptBatch build_prompt_at(const LinearFunction& f, std::span<const double> xs, SeededRng& rng,
                            const PromptOptions& opts) {
  if (xs.size() < 2) throw UsageError("build_prompt: n_points must be >= 2");
  if (!(opts.noise_std >= 0)) throw SpecError("noise_std must be nonnegative");
  PromptBatch batch;
  batch.rows = 1;
  batch.n_points = xs.size();
  batch.sorted = opts.sorted;
  batch.noise_std = opts.noise_std;
  batch.functions = {f};
  batch.xs.assign(xs.begin(), xs.end());
  if (opts.sorted) std::sort(batch.xs.begin(), batch.xs.end());
  batch.targets.resize(xs.size());
  batch.ys.resize(xs.size());
  for (std::size_t k = 0; k < xs.size(); ++k) {
    batch.targets[k] = f(batch.xs[k]);
    batch.ys[k] = batch.targets[k];
    if (opts.noise_std > 0) batch.ys[k] += rng.normal(0.0, opts.noise_std);
  }
  return batch;
}

PromptBatch build_prompt(const LinearFunction& f, const DistributionSpec& inputs,
                         std::size_t n_points, SeededRng& rng, const PromptOptions& opts) {
  if (n_points < 2) throw UsageError("build_prompt: n_points must be >= 2");
  std::vector<double> xs(n_points);
  for (double& x : xs) x = inputs.sample(rng);
  return build_prompt_at(f, xs, rng, opts);
}

PromptBatch sample_batch(const DistributionSpec& functions, const DistributionSpec& inputs,
                         std::size_t rows, std::size_t n_points, SeededRng& rng,
                         const PromptOptions& opts) {
  PromptBatch batch;
  batch.n_points = n_points;
  batch.sorted = opts.sorted;
  batch.noise_std = opts.noise_std;
  for (std::size_t r = 0; r < rows; ++r) {
    const LinearFunction f = sample_function(functions, rng);
    batch.append(build_prompt(f, inputs, n_points, rng, opts));
  }
  return batch;
}

double coverage_probability(const DistributionSpec& functions, const DistributionSpec& inputs,
                            double lo, double hi, std::size_t n_samples, SeededRng& rng) {
  if (n_samples == 0) throw UsageError("coverage_probability: n_samples must be >= 1");
  std::size_t inside = 0;
  for (std::size_t i = 0; i < n_samples; ++i) {
    const LinearFunction f = sample_function(functions, rng);
    const double v = f(inputs.sample(rng));
    if (v >= lo && v <= hi) ++inside;
  }
  return static_cast<double>(inside) / static_cast<double>(n_samples);
}

}  // namespace icll
