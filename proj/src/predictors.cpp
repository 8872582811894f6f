#include "icll/predictors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "icll/error.hpp"
#include "icll/format.hpp"

namespace icll {

double knn_predict(std::span<const double> xs, std::span<const double> ys, double query,
                   std::size_t k) {
  if (xs.size() != ys.size()) throw DimensionError("knn_predict: xs and ys differ in length");
  if (xs.empty() || k == 0) return 0.0;
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t take = std::min(k, xs.size());
  // (distance, index) is a strict total order, so ties resolve to the earliest pair.
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                    [&](std::size_t i, std::size_t j) {
                      const double di = std::abs(xs[i] - query), dj = std::abs(xs[j] - query);
                      return di < dj || (di == dj && i < j);
                    });
  double total = 0;
  for (std::size_t i = 0; i < take; ++i) total += ys[order[i]];
  return total / static_cast<double>(take);
}

double ridge_predict(std::span<const double> xs, std::span<const double> ys, double query,
                     double lambda) {
  if (xs.size() != ys.size()) throw DimensionError("ridge_predict: xs and ys differ in length");
  if (xs.empty()) return 0.0;
  double sx = 0, sxx = 0, sy = 0, sxy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sx += xs[i];
    sxx += xs[i] * xs[i];
    sy += ys[i];
    sxy += xs[i] * ys[i];
  }
  const double n = static_cast<double>(xs.size());
  // [sxx + l, sx; sx, n + l] [a; b] = [sxy; sy]
  const double m00 = sxx + lambda, m11 = n + lambda;
  const double det = m00 * m11 - sx * sx;
  if (det == 0) return 0.0;
  const double a = (sxy * m11 - sx * sy) / det;
  const double b = (m00 * sy - sx * sxy) / det;
  return a * query + b;
}

double least_squares_predict(std::span<const double> xs, std::span<const double> ys,
                             double query) {
  if (xs.size() != ys.size()) {
    throw DimensionError("least_squares_predict: xs and ys differ in length");
  }
  if (xs.empty()) return 0.0;
  const double n = static_cast<double>(xs.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  if (sxx == 0) return ridge_predict(xs, ys, query, 1e-6);
  const double a = sxy / sxx;
  return my + a * (query - mx);
}

std::vector<double> PrefixPredictor::predict(const PromptBatch& batch) const {
  std::vector<double> out(batch.rows * batch.n_points);
  for (std::size_t r = 0; r < batch.rows; ++r) {
    const std::span<const double> xs(batch.xs.data() + r * batch.n_points, batch.n_points);
    const std::span<const double> ys(batch.ys.data() + r * batch.n_points, batch.n_points);
    for (std::size_t k = 0; k < batch.n_points; ++k) {
      out[r * batch.n_points + k] = predict_prefix(xs.first(k), ys.first(k), xs[k]);
    }
  }
  return out;
}

RidgePredictor::RidgePredictor(double lambda) : lambda_(lambda) {
  if (!(lambda >= 0) || !std::isfinite(lambda)) throw SpecError("ridge lambda must be >= 0");
}

std::string RidgePredictor::name() const { return "ridge(" + format_number(lambda_) + ")"; }

KnnPredictor::KnnPredictor(std::size_t k) : k_(k) {
  if (k == 0) throw SpecError("knn k must be positive");
}

std::string KnnPredictor::name() const { return std::to_string(k_) + "nn"; }

NearestSequencePredictor::NearestSequencePredictor(std::size_t k,
                                                   const DistributionSpec& bank_spec,
                                                   std::size_t bank_size, std::uint64_t seed)
    : k_(k) {
  if (k == 0 || bank_size < k) throw SpecError("nearest_sequence needs 0 < k <= bank size");
  SeededRng rng(seed);
  bank_.reserve(bank_size);
  for (std::size_t i = 0; i < bank_size; ++i) bank_.push_back(sample_function(bank_spec, rng));
}

std::string NearestSequencePredictor::name() const {
  return "nearest_sequence(" + std::to_string(k_) + ")";
}

double NearestSequencePredictor::predict_prefix(std::span<const double> xs,
                                                std::span<const double> ys,
                                                double query) const {
  std::vector<std::pair<double, std::size_t>> scored(bank_.size());
  for (std::size_t i = 0; i < bank_.size(); ++i) {
    double r = 0;
    for (std::size_t j = 0; j < xs.size(); ++j) {
      const double e = bank_[i](xs[j]) - ys[j];
      r += e * e;
    }
    scored[i] = {r, i};
  }
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k_),
                    scored.end());
  double total = 0;
  for (std::size_t i = 0; i < k_; ++i) total += bank_[scored[i].second](query);
  return total / static_cast<double>(k_);
}

ClampOracle::ClampOracle(double c) : c_(c) {
  if (!(c > 0) || !std::isfinite(c)) throw SpecError("clamp level must be positive");
}

std::string ClampOracle::name() const { return "clamp(" + format_number(c_) + ")"; }

std::vector<double> ClampOracle::predict(const PromptBatch& batch) const {
  std::vector<double> out(batch.rows * batch.n_points);
  for (std::size_t r = 0; r < batch.rows; ++r)
    for (std::size_t k = 0; k < batch.n_points; ++k)
      out[r * batch.n_points + k] = std::clamp(batch.functions[r](batch.x(r, k)), -c_, c_);
  return out;
}

ModelPredictor::ModelPredictor(TransformerModel<float> model, std::string label)
    : model_(std::move(model)), label_(std::move(label)) {}

std::vector<double> ModelPredictor::predict(const PromptBatch& batch) const {
  constexpr std::size_t kChunk = 64;
  const std::size_t n = batch.n_points;
  const std::size_t seq = 2 * n - 1;
  const std::vector<float> tokens = batch.tokens();
  std::vector<double> out(batch.rows * n);
  std::vector<float> chunk;
  for (std::size_t r0 = 0; r0 < batch.rows; r0 += kChunk) {
    const std::size_t rows = std::min(kChunk, batch.rows - r0);
    chunk.clear();
    for (std::size_t r = r0; r < r0 + rows; ++r) {
      const float* row = tokens.data() + r * 2 * n;
      chunk.insert(chunk.end(), row, row + seq);
    }
    ad::Graph<float> graph(false);
    const auto pred = model_.forward(graph, chunk, rows, seq);
    std::copy(pred.data().begin(), pred.data().end(), out.begin() + static_cast<std::ptrdiff_t>(r0 * n));
  }
  return out;
}

}  // namespace icll
