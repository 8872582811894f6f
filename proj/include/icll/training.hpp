#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "icll/adam.hpp"
#include "icll/autodiff.hpp"
#include "icll/distributions.hpp"
#include "icll/model.hpp"
#include "icll/prompt.hpp"

namespace icll {

struct TrainConfig {
  std::size_t steps = 20000;
  std::size_t batch_size = 64;
  double lr = 1e-4;
  std::size_t n_points = 41;
  DistributionSpec spec_f = DistributionSpec::normal(0, 1);
  DistributionSpec spec_i = DistributionSpec::normal(0, 1);
  std::uint64_t seed = 7;
  std::size_t checkpoint_every = 5000;
  std::size_t log_every = 100;
  bool sorted_prompts = false;
  double noise_std = 0.0;
  // Points per training prompt; smaller than n_points for curriculum runs.
  std::size_t train_prompt_len = 41;

  // Throws SpecError; training requires spec_f == spec_i.
  void validate() const;
  std::string to_json() const;
};

// Mean over rows and over every prediction position of (pred - f(x))^2.
template <typename T>
ad::Tensor<T> prompt_loss(ad::Graph<T>& graph, const TransformerModel<T>& model,
                          const PromptBatch& batch);

// Same objective on precomputed predictions [rows, n_points].
double prompt_loss(std::span<const double> predictions, const PromptBatch& batch);

struct TrainedRun {
  TransformerModel<float> model;
  AdamState optimizer;
  std::vector<std::pair<std::size_t, double>> loss_log;  // (step, loss)
  std::vector<std::filesystem::path> checkpoints;
};

// Progress hook invoked after every logged step.
using TrainObserver = std::function<void(std::size_t step, double loss)>;

// Runs the training loop. With a run directory, writes config.json, loss.csv
// (step,loss every log_every steps) and ckpt_<step>.icll files; the final step
// is always checkpointed. On a non-finite loss or gradient the last good
// parameters are checkpointed and NumericError is thrown.
TrainedRun train(TransformerModel<float> model, const TrainConfig& cfg,
                 const std::optional<std::filesystem::path>& run_dir = std::nullopt,
                 const TrainObserver& observer = {});

// Model initialization seed stream used by the CLI for a training seed.
std::uint64_t init_seed(std::uint64_t train_seed);

}  // namespace icll
