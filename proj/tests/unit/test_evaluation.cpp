#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "icll/error.hpp"
#include "icll/evaluation.hpp"
#include "reference_model.hpp"

using namespace icll;

namespace {

// Predicts target + 0.5 * (k + 1) at point k.
class OffsetPredictor final : public Predictor {
 public:
  std::string name() const override { return "offset"; }
  std::vector<double> predict(const PromptBatch& b) const override {
    std::vector<double> out(b.rows * b.n_points);
    for (std::size_t r = 0; r < b.rows; ++r)
      for (std::size_t k = 0; k < b.n_points; ++k)
        out[r * b.n_points + k] = b.target(r, k) + 0.5 * static_cast<double>(k + 1);
    return out;
  }
};

EvalProtocol small_protocol(std::size_t functions = 20) {
  EvalProtocol p;
  p.n_functions = functions;
  p.n_batches = 8;
  return p;
}

}  // namespace

TEST_CASE("hand-computed prompt error") {
  SeededRng rng(1);
  const std::vector<double> xs = {0, 1, 2, 3};
  const auto batch = build_prompt_at({2, 1}, xs, rng);  // targets 1, 3, 5, 7
  const std::vector<double> pred = {0, 0, 5.5, 4};
  // Points 2 and 3: (0.5^2 + 3^2) / 2
  CHECK(prompt_set_error(pred, batch, 2) == 4.625);
  // All points: (1 + 9 + 0.25 + 9) / 4
  CHECK(prompt_set_error(pred, batch, 0) == 4.8125);
  CHECK_THROWS_AS(prompt_set_error(std::vector<double>(3), batch, 2), DimensionError);
}

TEST_CASE("epsilon on a one-function, one-prompt, four-point protocol") {
  EvalProtocol p;
  p.n_functions = 1;
  p.n_batches = 1;
  p.n_points = 4;
  const auto eps = epsilon_sigma(OffsetPredictor{}, p);
  // Offsets at k = 2, 3 are 1.5 and 2.0: (2.25 + 4) / 2.
  CHECK(eps.value == 3.125);
  REQUIRE(eps.per_function.size() == 1);
  CHECK(eps.per_position == std::vector<double>{0.25, 1.0, 2.25, 4.0});
}

TEST_CASE("protocol draws") {
  const auto p = small_protocol();
  const auto fs = p.functions();
  CHECK(fs.size() == 20);
  SeededRng rng(p.function_seed);
  const auto first = sample_function(p.spec_f, rng);
  CHECK(fs[0].a == first.a);
  const auto b3 = p.prompts(3, fs[3]);
  CHECK(b3.rows == 8);
  CHECK(b3.n_points == 41);
  CHECK(p.prompts(3, fs[3]).xs == b3.xs);
  CHECK(p.prompts(4, fs[3]).xs != b3.xs);
  EvalProtocol bad = p;
  bad.skip = 41;
  CHECK_THROWS_AS(bad.validate(), SpecError);
}

TEST_CASE("least squares is exact on clean prompts") {
  for (const char* spec : {"normal:0:1", "uniform:-5:5", "normal:0:7"}) {
    EvalProtocol p = small_protocol();
    p.spec_f = p.spec_i = DistributionSpec::parse(spec);
    CHECK(epsilon_sigma(LeastSquaresPredictor{}, p).value <= 1e-10);
  }
}

TEST_CASE("zero predictor sits near 2 sigma^2") {
  const auto p = EvalProtocol{};
  const double eps = epsilon_sigma(ZeroPredictor{}, p).value;
  CHECK(eps >= 1.4);
  CHECK(eps <= 3.0);
}

TEST_CASE("worker count and scheduling do not change results") {
  const auto p = small_protocol(13);
  const KnnPredictor knn(3);
  const auto a = epsilon_sigma(knn, p, 1);
  const auto b = epsilon_sigma(knn, p, 4);
  CHECK(a.value == b.value);
  CHECK(a.per_function == b.per_function);
  CHECK(a.per_position == b.per_position);
}

TEST_CASE("parallel_for") {
  std::vector<std::atomic<int>> hits(100);
  parallel_for(100, 3, [&](std::size_t i) { hits[i]++; });
  for (auto& h : hits) CHECK(h.load() == 1);
  CHECK_THROWS_AS(parallel_for(10, 2, [](std::size_t i) {
                    if (i == 7) throw NumericError("boom");
                  }),
                  NumericError);
}

TEST_CASE("error rate") {
  CHECK(error_rate(0, 0, 2) == 0);
  CHECK(error_rate(1, 0.5, 2.5) == 0.5);
  CHECK_THROWS_AS(error_rate(1, 2, 2), UndefinedRateError);
}

TEST_CASE("evaluate fills references") {
  const auto r = evaluate(ZeroPredictor{}, small_protocol());
  CHECK(r.predictor == "zero");
  CHECK(r.epsilon_sigma == r.epsilon_zero);
  CHECK(r.epsilon_star <= 1e-10);
  REQUIRE(r.error_rate.has_value());
  CHECK(*r.error_rate == doctest::Approx(1.0));
  std::ostringstream csv;
  write_eval_csv(csv, std::span(&r, 1));
  CHECK(csv.str().rfind("predictor,sigma1,sigma2,eps,eps_star,eps_zero,r\nzero,1,1,", 0) == 0);

  EvalReport undefined = r;
  undefined.error_rate.reset();
  undefined.protocol.spec_i = DistributionSpec::uniform(-5, 5);
  std::ostringstream csv2;
  write_eval_csv(csv2, std::span(&undefined, 1));
  CHECK(csv2.str().find(",uniform:-5:5,1,") != std::string::npos);
  CHECK(csv2.str().find(",undefined\n") != std::string::npos);
}

TEST_CASE("k nearest neighbours") {
  const std::vector<double> xs = {0.0144, -0.4471, -0.6244};
  CHECK(std::abs(knn3_predict(xs, xs, -0.5978) + 0.3524) <= 5e-4);
  CHECK(std::abs(knn3_predict(xs, xs, -0.5978) - (0.0144 - 0.4471 - 0.6244) / 3) < 1e-15);
  const std::vector<double> same = {0.7, 0.7, 0.7};
  CHECK(knn3_predict(same, same, 3.0) == doctest::Approx(0.7));
  CHECK(knn_predict({}, {}, 1.0) == 0.0);
  const std::vector<double> two = {1, 2};
  CHECK(knn3_predict(two, two, 0) == 1.5);
  // Equal distances resolve to the earlier pair.
  const std::vector<double> tx = {-1, 1, 5}, ty = {10, 20, 30};
  CHECK(knn_predict(tx, ty, 0, 1) == 10);

  // Exhaustive distance sort as the oracle.
  SeededRng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + static_cast<std::size_t>(rng.uniform() * 12);
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = rng.uniform(-3, 3);
      y[i] = 2 * x[i];
    }
    const double q = rng.uniform(-3, 3);
    std::vector<std::pair<double, std::size_t>> d;
    for (std::size_t i = 0; i < n; ++i) d.push_back({std::abs(x[i] - q), i});
    std::sort(d.begin(), d.end());
    const std::size_t take = std::min<std::size_t>(3, n);
    double s = 0;
    for (std::size_t i = 0; i < take; ++i) s += y[d[i].second];
    CHECK(knn3_predict(x, y, q) == doctest::Approx(s / take).epsilon(1e-14));
  }
}

TEST_CASE("least squares and ridge") {
  const std::vector<double> x01 = {0, 1};
  CHECK(least_squares_predict(x01, x01, 2) == doctest::Approx(2));
  const std::vector<double> px = {-0.3, 1.7}, py = {40 * -0.3 + 40, 40 * 1.7 + 40};
  for (double q : {-5.0, 0.0, 2.5, 100.0})
    CHECK(least_squares_predict(px, py, q) == doctest::Approx(40 * q + 40).epsilon(1e-12));
  CHECK(least_squares_predict({}, {}, 3) == 0.0);
  // One pair: the slope is undetermined, the tiny ridge fallback nearly
  // reproduces the seen value.
  const std::vector<double> one_x = {2}, one_y = {4};
  CHECK(least_squares_predict(one_x, one_y, 2) == doctest::Approx(4).epsilon(1e-5));

  SeededRng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 3 + static_cast<std::size_t>(rng.uniform() * 10);
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = rng.normal();
      y[i] = rng.normal(0, 2);
    }
    const double lambda = rng.uniform(0.01, 3);
    // Recover (a, b) from two predictions and check the first-order conditions.
    const double b = ridge_predict(x, y, 0, lambda);
    const double a = ridge_predict(x, y, 1, lambda) - b;
    double ga = lambda * a, gb = lambda * b;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = a * x[i] + b - y[i];
      ga += r * x[i];
      gb += r;
    }
    CHECK(std::abs(ga) < 1e-9);
    CHECK(std::abs(gb) < 1e-9);
    // Unpenalized: residuals are orthogonal to 1 and x.
    const double b0 = least_squares_predict(x, y, 0);
    const double a0 = least_squares_predict(x, y, 1) - b0;
    double o1 = 0, ox = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = a0 * x[i] + b0 - y[i];
      o1 += r;
      ox += r * x[i];
    }
    CHECK(std::abs(o1) < 1e-9);
    CHECK(std::abs(ox) < 1e-9);
    CHECK(ridge_predict(x, y, 0.3, 1e-12) == doctest::Approx(least_squares_predict(x, y, 0.3)).epsilon(1e-8));
  }
  CHECK_THROWS_AS(RidgePredictor(-1), SpecError);
  CHECK(RidgePredictor(0.001).name() == "ridge(0.001)");
}

TEST_CASE("nearest sequence predictor recovers a bank function") {
  const auto spec = DistributionSpec::normal(0, 1);
  const NearestSequencePredictor pred(1, spec, 50, 99);
  SeededRng bank(99);
  LinearFunction f;
  for (int i = 0; i < 17; ++i) f = sample_function(spec, bank);
  const std::vector<double> xs = {0.3, -1.2, 2.0};
  std::vector<double> ys;
  for (double x : xs) ys.push_back(f(x));
  CHECK(pred.predict_prefix(xs, ys, 0.7) == f(0.7));
  CHECK_THROWS_AS(NearestSequencePredictor(5, spec, 3, 1), SpecError);
}

TEST_CASE("clamp oracle") {
  SeededRng rng(4);
  const std::vector<double> xs = {-5, -1, 0, 2, 5};
  const auto batch = build_prompt_at({9, 0}, xs, rng);
  CHECK(ClampOracle(30).predict(batch) == std::vector<double>{-30, -9, 0, 18, 30});
}

TEST_CASE("shift sweep") {
  auto p = small_protocol(30);
  const std::vector<double> s1 = {1, 2}, s2 = {1, 3};
  for (const auto& c : shift_sweep(LeastSquaresPredictor{}, p, s1, s2)) CHECK(c.epsilon <= 1e-10);
  const auto zero = shift_sweep(ZeroPredictor{}, p, s1, s2);
  REQUIRE(zero.size() == 4);
  CHECK(zero[1].sigma1 == 1);
  CHECK(zero[1].sigma2 == 3);
  for (const auto& c : zero) {
    const double expect = c.sigma2 * c.sigma2 * (c.sigma1 * c.sigma1 + 1);
    CHECK(c.epsilon == doctest::Approx(expect).epsilon(0.5));
  }
  std::ostringstream csv;
  write_sweep_csv(csv, zero);
  CHECK(csv.str().rfind("sigma1,sigma2,log_eps\n1,1,", 0) == 0);
  std::vector<SweepCell> exact = {{1, 1, 0.0}};
  std::ostringstream csv2;
  write_sweep_csv(csv2, exact);
  CHECK(csv2.str() == "sigma1,sigma2,log_eps\n1,1,-30\n");
}

TEST_CASE("spearman") {
  const std::vector<double> a = {1, 2, 3, 4, 5};
  const std::vector<double> up = {0.1, 0.5, 0.7, 2, 9}, down = {5, 4, 3, 2, 1};
  CHECK(spearman(a, up) == doctest::Approx(1));
  CHECK(spearman(a, down) == doctest::Approx(-1));
  // Ranks (1, 2.5, 2.5, 4) vs (1, 2, 3, 4): rho = 4.5 / sqrt(4.5 * 5).
  const std::vector<double> tied = {1, 2, 2, 3}, b = {1, 2, 3, 4};
  CHECK(spearman(tied, b) == doctest::Approx(4.5 / std::sqrt(4.5 * 5)));
  const std::vector<double> x = {1, 2, 3, 4, 5}, y = {2, 1, 4, 3, 5};
  // d^2 = 1 + 1 + 1 + 1 + 0: 1 - 6 * 4 / (5 * 24)
  CHECK(spearman(x, y) == doctest::Approx(0.8));
}

TEST_CASE("model predictor and attention summary") {
  SeededRng rng(5);
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.n_heads = 4;
  TransformerModel<float> m(cfg, rng);
  const auto batch = sample_batch(DistributionSpec::normal(0, 1), DistributionSpec::normal(0, 1), 70,
                                  41, rng);
  const ModelPredictor pred(m, "tiny");
  CHECK(pred.name() == "tiny");
  const auto out = pred.predict(batch);
  REQUIRE(out.size() == 70 * 41);
  const auto tokens = batch.tokens();
  ad::Graph<float> g(false);
  auto direct = m.forward(g, tokens, 70, 82);
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == static_cast<double>(direct.data()[i]));

  const auto maps = attention_summary(m, batch);
  CHECK(maps.batch == 1);
  CHECK(maps.seq == 81);
  double worst_ratio = 0;
  for (std::size_t l = 0; l < 2; ++l)
    for (std::size_t h = 0; h < 4; ++h)
      for (std::size_t i = 0; i < 81; ++i) {
        double s = 0, lo = 1e9, hi = 0;
        for (std::size_t j = 0; j <= i; ++j) {
          const double w = maps.at(0, l, h, i, j);
          s += w;
          lo = std::min(lo, w);
          hi = std::max(hi, w);
        }
        CHECK(std::abs(s - 1) <= 1e-5);
        worst_ratio = std::max(worst_ratio, hi / lo);
      }
  CHECK(worst_ratio <= 3);
  std::ostringstream csv;
  write_attention_csv(csv, maps, 1);
  CHECK(csv.str().rfind("layer,head,row,col,weight\n1,0,0,0,1\n", 0) == 0);
  CHECK_THROWS_AS(write_attention_csv(csv, maps, 2), UsageError);
}

TEST_CASE("no revision") {
  SeededRng rng(6);
  ModelConfig cfg;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.d_emb = 8;
  cfg.max_positions = 20;
  TransformerModel<float> m(cfg, rng);
  TransformerModel<double> md = m.cast<double>();
  for (auto& p : md.parameters())
    for (auto& v : p.tensor.data()) v = rng.uniform(-1, 1);
  const testutil::ReferenceModel causal(md, true), mutant(md, false);
  auto as_forward = [](const testutil::ReferenceModel& ref) {
    return [&ref](std::span<const float> t) {
      const auto out = ref.forward(std::vector<double>(t.begin(), t.end()));
      return std::vector<float>(out.begin(), out.end());
    };
  };
  int mutant_caught = 0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<float> prompt(9), ext(4);
    for (auto& v : prompt) v = static_cast<float>(rng.normal());
    for (auto& v : ext) v = static_cast<float>(rng.normal());
    CHECK(no_revision_check(m, prompt, ext));
    CHECK(no_revision_check(as_forward(causal), prompt, ext));
    mutant_caught += no_revision_check(as_forward(mutant), prompt, ext) ? 0 : 1;
  }
  CHECK(mutant_caught == 20);
}
