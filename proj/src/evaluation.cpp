#include "icll/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>

#include "icll/error.hpp"
#include "icll/format.hpp"

namespace icll {

void EvalProtocol::validate() const {
  if (n_functions == 0) throw SpecError("n_functions must be positive");
  if (n_batches == 0) throw SpecError("n_batches must be positive");
  if (n_points < 2) throw SpecError("n_points must be at least 2");
  if (skip >= n_points) throw SpecError("skip must leave at least one scored point");
  if (!(noise_std >= 0)) throw SpecError("noise_std must be nonnegative");
}

std::vector<LinearFunction> EvalProtocol::functions() const {
  SeededRng rng(function_seed);
  std::vector<LinearFunction> fs;
  fs.reserve(n_functions);
  for (std::size_t j = 0; j < n_functions; ++j) fs.push_back(sample_function(spec_f, rng));
  return fs;
}

PromptBatch EvalProtocol::prompts(std::size_t j, const LinearFunction& f) const {
  SeededRng rng(SeededRng::derive(point_seed, j));
  const PromptOptions opts{sorted, noise_std};
  PromptBatch batch = build_prompt(f, spec_i, n_points, rng, opts);
  for (std::size_t b = 1; b < n_batches; ++b) batch.append(build_prompt(f, spec_i, n_points, rng, opts));
  return batch;
}

double prompt_set_error(std::span<const double> predictions, const PromptBatch& batch,
                        std::size_t skip) {
  if (predictions.size() != batch.rows * batch.n_points) {
    throw DimensionError("prompt_set_error: prediction count does not match batch");
  }
  if (batch.rows == 0 || skip >= batch.n_points) {
    throw UsageError("prompt_set_error: nothing to score");
  }
  double total = 0;
  for (std::size_t r = 0; r < batch.rows; ++r) {
    double row = 0;
    for (std::size_t k = skip; k < batch.n_points; ++k) {
      const double e = predictions[r * batch.n_points + k] - batch.target(r, k);
      row += e * e;
    }
    total += row / static_cast<double>(batch.n_points - skip);
  }
  return total / static_cast<double>(batch.rows);
}

void parallel_for(std::size_t n, std::size_t workers,
                  const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&] {
    for (std::size_t i = next++; i < n && !failed; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        failed = true;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

EpsilonResult epsilon_sigma(const Predictor& predictor, const EvalProtocol& protocol,
                            std::size_t workers) {
  protocol.validate();
  const auto fs = protocol.functions();
  const std::size_t np = protocol.n_points;
  std::vector<double> per_function(fs.size());
  std::vector<std::vector<double>> position_sums(fs.size(), std::vector<double>(np, 0.0));

  parallel_for(fs.size(), workers, [&](std::size_t j) {
    const PromptBatch batch = protocol.prompts(j, fs[j]);
    const auto pred = predictor.predict(batch);
    if (pred.size() != batch.rows * np) {
      throw DimensionError(predictor.name() + " returned the wrong number of predictions");
    }
    per_function[j] = prompt_set_error(pred, batch, protocol.skip);
    auto& sums = position_sums[j];
    for (std::size_t r = 0; r < batch.rows; ++r)
      for (std::size_t k = 0; k < np; ++k) {
        const double e = pred[r * np + k] - batch.target(r, k);
        sums[k] += e * e;
      }
  });

  EpsilonResult result;
  result.per_function = std::move(per_function);
  double total = 0;
  for (double v : result.per_function) total += v;
  result.value = total / static_cast<double>(fs.size());
  result.per_position.assign(np, 0.0);
  for (const auto& sums : position_sums)
    for (std::size_t k = 0; k < np; ++k) result.per_position[k] += sums[k];
  const double rows = static_cast<double>(fs.size() * protocol.n_batches);
  for (double& v : result.per_position) v /= rows;
  return result;
}

double error_rate(double eps, double eps_star, double eps_zero) {
  const double gap = std::abs(eps_star - eps_zero);
  if (gap == 0) throw UndefinedRateError("error rate undefined: eps_star == eps_zero");
  return eps / gap;
}

EvalReport evaluate(const Predictor& predictor, const EvalProtocol& protocol,
                    std::size_t workers) {
  EvalReport report;
  report.predictor = predictor.name();
  report.protocol = protocol;
  auto eps = epsilon_sigma(predictor, protocol, workers);
  report.epsilon_sigma = eps.value;
  report.per_function = std::move(eps.per_function);
  report.per_position = std::move(eps.per_position);
  report.epsilon_star = epsilon_sigma(LeastSquaresPredictor{}, protocol, workers).value;
  report.epsilon_zero = epsilon_sigma(ZeroPredictor{}, protocol, workers).value;
  if (report.epsilon_star != report.epsilon_zero) {
    report.error_rate = error_rate(report.epsilon_sigma, report.epsilon_star, report.epsilon_zero);
  }
  return report;
}

std::vector<SweepCell> shift_sweep(const Predictor& predictor, const EvalProtocol& base,
                                   std::span<const double> sigma1_grid,
                                   std::span<const double> sigma2_grid, std::size_t workers) {
  std::vector<SweepCell> cells;
  cells.reserve(sigma1_grid.size() * sigma2_grid.size());
  for (double s1 : sigma1_grid)
    for (double s2 : sigma2_grid) {
      EvalProtocol p = base;
      p.spec_i = DistributionSpec::normal(0, s1);
      p.spec_f = DistributionSpec::normal(0, s2);
      cells.push_back({s1, s2, epsilon_sigma(predictor, p, workers).value});
    }
  return cells;
}

AttentionMaps attention_summary(const TransformerModel<float>& model, const PromptBatch& prompts) {
  if (prompts.rows == 0) throw UsageError("attention_summary: no prompts");
  constexpr std::size_t kChunk = 64;
  const std::size_t n = prompts.n_points;
  const std::size_t seq = 2 * n - 1;
  const auto tokens = prompts.tokens();

  AttentionMaps mean;
  std::vector<float> chunk;
  for (std::size_t r0 = 0; r0 < prompts.rows; r0 += kChunk) {
    const std::size_t rows = std::min(kChunk, prompts.rows - r0);
    chunk.clear();
    for (std::size_t r = r0; r < r0 + rows; ++r)
      chunk.insert(chunk.end(), tokens.data() + r * 2 * n, tokens.data() + r * 2 * n + seq);
    AttentionMaps maps;
    ad::Graph<float> graph(false);
    model.forward(graph, chunk, rows, seq, &maps);
    if (r0 == 0) {
      mean.batch = 1;
      mean.layers = maps.layers;
      mean.heads = maps.heads;
      mean.seq = maps.seq;
      mean.weights.assign(maps.layers * maps.heads * seq * seq, 0.0);
    }
    const std::size_t block = mean.weights.size();
    for (std::size_t b = 0; b < rows; ++b)
      for (std::size_t i = 0; i < block; ++i) mean.weights[i] += maps.weights[b * block + i];
  }
  for (double& w : mean.weights) w /= static_cast<double>(prompts.rows);
  return mean;
}

bool no_revision_check(const TokenForward& forward, std::span<const float> prompt,
                       std::span<const float> extension) {
  std::vector<float> longer(prompt.begin(), prompt.end());
  longer.insert(longer.end(), extension.begin(), extension.end());
  const auto a = forward(prompt);
  const auto b = forward(longer);
  if (b.size() < a.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::bit_cast<std::uint32_t>(a[i]) != std::bit_cast<std::uint32_t>(b[i])) return false;
  return true;
}

bool no_revision_check(const TransformerModel<float>& model, std::span<const float> prompt,
                       std::span<const float> extension) {
  return no_revision_check(
      [&](std::span<const float> tokens) {
        ad::Graph<float> graph(false);
        auto pred = model.forward(graph, tokens, 1, tokens.size());
        return std::vector<float>(pred.data().begin(), pred.data().end());
      },
      prompt, extension);
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
  std::vector<double> rank(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t t = i; t <= j; ++t) rank[order[t]] = r;
    i = j + 1;
  }
  return rank;
}

std::string sigma_text(const DistributionSpec& spec) {
  const double s = spec.normal_sigma();
  return std::isnan(s) ? spec.to_string() : format_number(s);
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw DimensionError("spearman: need two equally long samples of size >= 2");
  }
  const auto ra = average_ranks(a), rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0 || sbb == 0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

void write_eval_csv(std::ostream& out, std::span<const EvalReport> reports) {
  out << "predictor,sigma1,sigma2,eps,eps_star,eps_zero,r\n";
  for (const auto& r : reports) {
    out << r.predictor << ',' << sigma_text(r.protocol.spec_i) << ','
        << sigma_text(r.protocol.spec_f) << ',' << format_number(r.epsilon_sigma) << ','
        << format_number(r.epsilon_star) << ',' << format_number(r.epsilon_zero) << ','
        << (r.error_rate ? format_number(*r.error_rate) : std::string("undefined")) << '\n';
  }
}

void write_sweep_csv(std::ostream& out, std::span<const SweepCell> cells) {
  out << "sigma1,sigma2,log_eps\n";
  for (const auto& c : cells) {
    out << format_number(c.sigma1) << ',' << format_number(c.sigma2) << ','
        << format_number(std::log10(std::max(c.epsilon, 1e-30))) << '\n';
  }
}

void write_attention_csv(std::ostream& out, const AttentionMaps& maps,
                         std::optional<std::size_t> layer) {
  if (layer && *layer >= maps.layers) {
    throw UsageError("attention layer " + std::to_string(*layer) + " out of range (model has " +
                     std::to_string(maps.layers) + ")");
  }
  out << "layer,head,row,col,weight\n";
  for (std::size_t l = 0; l < maps.layers; ++l) {
    if (layer && l != *layer) continue;
    for (std::size_t h = 0; h < maps.heads; ++h)
      for (std::size_t i = 0; i < maps.seq; ++i)
        for (std::size_t j = 0; j < maps.seq; ++j)
          out << l << ',' << h << ',' << i << ',' << j << ',' << format_number(maps.at(0, l, h, i, j))
              << '\n';
  }
}

}  // namespace icll
