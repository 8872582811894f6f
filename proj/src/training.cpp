#include "icll/training.hpp"

#include <cmath>
#include <fstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "icll/checkpoint.hpp"
#include "icll/error.hpp"
#include "icll/format.hpp"
#include "json.hpp"

namespace icll {

void TrainConfig::validate() const {
  if (batch_size == 0) throw SpecError("batch_size must be positive");
  if (!(lr > 0) || !std::isfinite(lr)) throw SpecError("lr must be positive");
  if (n_points < 2) throw SpecError("n_points must be at least 2");
  if (train_prompt_len < 2 || train_prompt_len > n_points) {
    throw SpecError("train_prompt_len must lie in [2, n_points]");
  }
  if (!(spec_f == spec_i)) {
    throw SpecError("training requires D_F == D_I (got " + spec_f.to_string() + " and " +
                    spec_i.to_string() + ")");
  }
  if (!(noise_std >= 0)) throw SpecError("noise_std must be nonnegative");
  if (log_every == 0) throw SpecError("log_every must be positive");
}

std::string TrainConfig::to_json() const {
  nlohmann::json j;
  j["steps"] = steps;
  j["batch_size"] = batch_size;
  j["lr"] = lr;
  j["n_points"] = n_points;
  j["df"] = spec_f.to_string();
  j["di"] = spec_i.to_string();
  j["seed"] = seed;
  j["checkpoint_every"] = checkpoint_every;
  j["log_every"] = log_every;
  j["sorted"] = sorted_prompts;
  j["noise"] = noise_std;
  j["train_prompt_len"] = train_prompt_len;
  return j.dump();
}

template <typename T>
ad::Tensor<T> prompt_loss(ad::Graph<T>& graph, const TransformerModel<T>& model,
                          const PromptBatch& batch) {
  const auto tok = batch.tokens();
  std::vector<T> tokens(tok.begin(), tok.end());
  auto pred = model.forward(graph, tokens, batch.rows, 2 * batch.n_points);
  std::vector<T> targets(batch.targets.begin(), batch.targets.end());
  auto target = ad::Tensor<T>::from({batch.rows, batch.n_points}, std::move(targets));
  return graph.mse_loss(pred, target);
}

template ad::Tensor<float> prompt_loss(ad::Graph<float>&, const TransformerModel<float>&,
                                       const PromptBatch&);
template ad::Tensor<double> prompt_loss(ad::Graph<double>&, const TransformerModel<double>&,
                                        const PromptBatch&);

double prompt_loss(std::span<const double> predictions, const PromptBatch& batch) {
  if (predictions.size() != batch.targets.size()) {
    throw DimensionError("prompt_loss: prediction count does not match batch");
  }
  double total = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double e = predictions[i] - batch.targets[i];
    total += e * e;
  }
  return total / static_cast<double>(predictions.size());
}

std::uint64_t init_seed(std::uint64_t train_seed) { return SeededRng::derive(train_seed, 0); }

namespace {

// Every step allocates and frees the same set of large activation buffers.
// Keeping them on the heap instead of fresh mmap pages avoids paying a page
// fault per touched page on every step.
void keep_heap_buffers() {
#if defined(__GLIBC__)
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
  }();
  (void)done;
#endif
}

bool gradients_finite(const std::vector<Parameter<float>>& params) {
  for (const auto& p : params)
    for (float g : p.tensor.grad())
      if (!std::isfinite(g)) return false;
  return true;
}

}  // namespace

TrainedRun train(TransformerModel<float> model, const TrainConfig& cfg,
                 const std::optional<std::filesystem::path>& run_dir,
                 const TrainObserver& observer) {
  cfg.validate();
  keep_heap_buffers();
  if (2 * cfg.train_prompt_len > model.config().max_positions) {
    throw CapacityError("training prompts need " + std::to_string(2 * cfg.train_prompt_len) +
                        " positions, model has " + std::to_string(model.config().max_positions));
  }

  Adam adam(AdamConfig{.lr = cfg.lr}, model.parameter_count());
  SeededRng data_rng(SeededRng::derive(cfg.seed, 1));
  const PromptOptions opts{cfg.sorted_prompts, cfg.noise_std};

  std::ofstream loss_csv;
  if (run_dir) {
    std::filesystem::create_directories(*run_dir);
    nlohmann::json j;
    j["train"] = nlohmann::json::parse(cfg.to_json());
    j["model"] = nlohmann::json::parse(model.config().to_json());
    std::ofstream(*run_dir / "config.json") << j.dump(2) << '\n';
    loss_csv.open(*run_dir / "loss.csv", std::ios::trunc);
    if (!loss_csv) throw IoError("cannot write " + (*run_dir / "loss.csv").string());
    loss_csv << "step,loss\n";
  }

  TrainedRun run{model, {}, {}, {}};
  auto checkpoint = [&](std::size_t step) {
    if (!run_dir) return;
    const auto path = *run_dir / ("ckpt_" + std::to_string(step) + ".icll");
    save_checkpoint(model, path, &adam.state());
    run.checkpoints.push_back(path);
  };

  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    const PromptBatch batch = sample_batch(cfg.spec_f, cfg.spec_i, cfg.batch_size,
                                           cfg.train_prompt_len, data_rng, opts);
    ad::Graph<float> graph;
    float loss_value = 0;
    try {
      auto loss = prompt_loss(graph, model, batch);
      loss_value = loss.item();
      if (!std::isfinite(loss_value)) throw NumericError("non-finite loss");
      model.zero_grad();
      graph.backward(loss);
      if (!gradients_finite(model.parameters())) throw NumericError("non-finite gradient");
    } catch (const NumericError& e) {
      checkpoint(step - 1);
      throw NumericError("training aborted at step " + std::to_string(step) + ": " + e.what() +
                         "; last good parameters saved");
    }
    adam.step(model.parameters());

    if (step % cfg.log_every == 0) {
      run.loss_log.emplace_back(step, loss_value);
      if (loss_csv.is_open()) loss_csv << step << ',' << format_number(loss_value) << '\n';
      if (observer) observer(step, loss_value);
    }
    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step != cfg.steps) {
      checkpoint(step);
    }
  }
  model.zero_grad();
  checkpoint(cfg.steps);
  run.model = std::move(model);
  run.optimizer = adam.state();
  return run;
}

}  // namespace icll
