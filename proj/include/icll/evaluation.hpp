#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "icll/distributions.hpp"
#include "icll/model.hpp"
#include "icll/predictors.hpp"
#include "icll/prompt.hpp"

namespace icll {

// Test protocol: n_functions functions drawn in sequence from function_seed;
// function j gets n_batches prompts of n_points points whose inputs come from
// the stream derive(point_seed, j). The first `skip` predictions of every
// prompt are left out of the error.
struct EvalProtocol {
  DistributionSpec spec_f = DistributionSpec::normal(0, 1);
  DistributionSpec spec_i = DistributionSpec::normal(0, 1);
  std::size_t n_functions = 100;
  std::size_t n_batches = 64;
  std::size_t n_points = 41;
  std::uint64_t function_seed = 1234;
  std::uint64_t point_seed = 5678;
  std::size_t skip = 2;
  bool sorted = false;
  double noise_std = 0.0;

  void validate() const;
  std::vector<LinearFunction> functions() const;
  // All prompts for function j.
  PromptBatch prompts(std::size_t j, const LinearFunction& f) const;
};

// Mean over rows of the mean over points k >= skip of (pred - target)^2.
double prompt_set_error(std::span<const double> predictions, const PromptBatch& batch,
                        std::size_t skip);

struct EpsilonResult {
  double value = 0.0;                  // mean of per_function
  std::vector<double> per_function;    // in function-index order
  std::vector<double> per_position;    // mean squared error at each point index
};

// Functions are spread over `workers` threads; the reduction always runs in
// function-index order so the result does not depend on the worker count.
EpsilonResult epsilon_sigma(const Predictor& predictor, const EvalProtocol& protocol,
                            std::size_t workers = 1);

// eps / |eps_star - eps_zero|; throws UndefinedRateError on a zero gap.
double error_rate(double eps, double eps_star, double eps_zero);

struct EvalReport {
  std::string predictor;
  EvalProtocol protocol;
  double epsilon_sigma = 0.0;
  double epsilon_star = 0.0;  // least-squares reference
  double epsilon_zero = 0.0;  // zero-predictor reference
  std::optional<double> error_rate;  // empty when the reference gap is zero
  std::vector<double> per_function;
  std::vector<double> per_position;
};

EvalReport evaluate(const Predictor& predictor, const EvalProtocol& protocol,
                    std::size_t workers = 1);

struct SweepCell {
  double sigma1 = 0.0;  // inputs ~ N(0, sigma1)
  double sigma2 = 0.0;  // coefficients ~ N(0, sigma2)
  double epsilon = 0.0;
};

// One epsilon per (sigma1, sigma2) pair, row-major over sigma1. Every cell
// reuses base's seeds and sizes.
std::vector<SweepCell> shift_sweep(const Predictor& predictor, const EvalProtocol& base,
                                   std::span<const double> sigma1_grid,
                                   std::span<const double> sigma2_grid, std::size_t workers = 1);

// Attention weights averaged over the rows of `prompts` (batch = 1 in the
// result): entry (l, h, i, j) is the mean mass query position i puts on
// source position j. Prompts are fed as 2 * n_points - 1 tokens.
AttentionMaps attention_summary(const TransformerModel<float>& model, const PromptBatch& prompts);

// Runs a one-row token sequence and returns its predictions.
using TokenForward = std::function<std::vector<float>(std::span<const float> tokens)>;

// True iff every prediction of `prompt` is bit-identical to the prediction at
// the same position when `extension` is appended.
bool no_revision_check(const TokenForward& forward, std::span<const float> prompt,
                       std::span<const float> extension);
bool no_revision_check(const TransformerModel<float>& model, std::span<const float> prompt,
                       std::span<const float> extension);

// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> a, std::span<const double> b);

// CSV writers. Numbers use the shortest round-trip text.
void write_eval_csv(std::ostream& out, std::span<const EvalReport> reports);
void write_sweep_csv(std::ostream& out, std::span<const SweepCell> cells);
void write_attention_csv(std::ostream& out, const AttentionMaps& maps,
                         std::optional<std::size_t> layer = std::nullopt);

// Runs fn(i) for i in [0, n) on up to `workers` threads; rethrows the first
// exception after all threads stop.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

}  // namespace icll
