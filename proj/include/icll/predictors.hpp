#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "icll/distributions.hpp"
#include "icll/model.hpp"
#include "icll/prompt.hpp"

namespace icll {

// Anything that maps a prompt prefix (x1, y1, ..., xk) to a scalar guess for
// f(xk). predict() returns [rows, n_points]; entry k uses only points < k of
// its row plus the query x_k. Implementations must be safe to call from
// several threads at once.
class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual std::string name() const = 0;
  virtual std::vector<double> predict(const PromptBatch& batch) const = 0;
};

// Mean y of the k pairs whose x is nearest the query; ties go to the earliest
// pair. With fewer than k pairs, averages all of them. Empty prefix -> 0.
double knn_predict(std::span<const double> xs, std::span<const double> ys, double query,
                   std::size_t k = 3);
inline double knn3_predict(std::span<const double> xs, std::span<const double> ys, double query) {
  return knn_predict(xs, ys, query, 3);
}

// Ordinary least squares line through the pairs. When the x values do not
// determine a slope (one pair, or all x equal) it falls back to ridge with
// lambda = 1e-6. Empty prefix -> 0.
double least_squares_predict(std::span<const double> xs, std::span<const double> ys, double query);

// Minimizes sum (a x + b - y)^2 + lambda (a^2 + b^2). Empty prefix -> 0.
double ridge_predict(std::span<const double> xs, std::span<const double> ys, double query,
                     double lambda);

// Baselines that see one row prefix at a time.
class PrefixPredictor : public Predictor {
 public:
  std::vector<double> predict(const PromptBatch& batch) const override;
  virtual double predict_prefix(std::span<const double> xs, std::span<const double> ys,
                                double query) const = 0;
};

class ZeroPredictor final : public PrefixPredictor {
 public:
  std::string name() const override { return "zero"; }
  double predict_prefix(std::span<const double>, std::span<const double>, double) const override {
    return 0.0;
  }
};

class LeastSquaresPredictor final : public PrefixPredictor {
 public:
  std::string name() const override { return "ls"; }
  double predict_prefix(std::span<const double> xs, std::span<const double> ys,
                        double query) const override {
    return least_squares_predict(xs, ys, query);
  }
};

class RidgePredictor final : public PrefixPredictor {
 public:
  explicit RidgePredictor(double lambda);
  std::string name() const override;
  double predict_prefix(std::span<const double> xs, std::span<const double> ys,
                        double query) const override {
    return ridge_predict(xs, ys, query, lambda_);
  }

 private:
  double lambda_;
};

class KnnPredictor final : public PrefixPredictor {
 public:
  explicit KnnPredictor(std::size_t k = 3);
  std::string name() const override;
  double predict_prefix(std::span<const double> xs, std::span<const double> ys,
                        double query) const override {
    return knn_predict(xs, ys, query, k_);
  }

 private:
  std::size_t k_;
};

// Sequence-similarity interpolator: keeps a bank of linear functions drawn
// from `bank_spec`, ranks them by squared residual on the prefix pairs and
// returns the mean of the k best candidates evaluated at the query. With an
// empty prefix all candidates tie and the first k are used.
class NearestSequencePredictor final : public PrefixPredictor {
 public:
  NearestSequencePredictor(std::size_t k, const DistributionSpec& bank_spec,
                           std::size_t bank_size, std::uint64_t seed);
  std::string name() const override;
  double predict_prefix(std::span<const double> xs, std::span<const double> ys,
                        double query) const override;

 private:
  std::size_t k_;
  std::vector<LinearFunction> bank_;
};

// Knows the prompt's true function and reports clamp(f(x), -c, c). Used as an
// exact reference for boundary detection.
class ClampOracle final : public Predictor {
 public:
  explicit ClampOracle(double c);
  std::string name() const override;
  std::vector<double> predict(const PromptBatch& batch) const override;

 private:
  double c_;
};

// A trained transformer. The last y token of each row is never needed, so rows
// are fed as 2 * n_points - 1 tokens.
class ModelPredictor final : public Predictor {
 public:
  explicit ModelPredictor(TransformerModel<float> model, std::string label = "model");
  std::string name() const override { return label_; }
  std::vector<double> predict(const PromptBatch& batch) const override;
  const TransformerModel<float>& model() const { return model_; }

 private:
  TransformerModel<float> model_;
  std::string label_;
};

}  // namespace icll
