#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "icll/adam.hpp"
#include "icll/checkpoint.hpp"
#include "icll/error.hpp"
#include "icll/training.hpp"

using namespace icll;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "icll_training_test" / name;
  fs::remove_all(dir);
  return dir;
}

ModelConfig tiny() {
  ModelConfig c;
  c.d_emb = 16;
  c.n_heads = 2;
  c.max_positions = 22;
  return c;
}

TrainConfig short_run(std::size_t steps) {
  TrainConfig t;
  t.steps = steps;
  t.batch_size = 8;
  t.n_points = 11;
  t.train_prompt_len = 11;
  t.log_every = 1;
  t.checkpoint_every = 0;
  t.lr = 1e-3;
  return t;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("loss on precomputed predictions") {
  SeededRng rng(1);
  const std::vector<double> xs = {1, 2};
  const auto batch = build_prompt_at({1, 0}, xs, rng);
  const std::vector<double> zeros(2, 0.0);
  CHECK(prompt_loss(zeros, batch) == 2.5);
  CHECK(prompt_loss(batch.targets, batch) == 0.0);
}

TEST_CASE("graph loss equals the loss of the model's predictions") {
  SeededRng rng(2);
  TransformerModel<double> m(tiny(), rng);
  const auto n = DistributionSpec::normal(0, 1);
  const auto batch = sample_batch(n, n, 4, 11, rng);
  ad::Graph<double> g(false);
  const double graph_loss = prompt_loss(g, m, batch).item();
  // Tokens always pass through the float token matrix, even in double mode.
  std::vector<double> tokens(batch.rows * 22);
  for (std::size_t r = 0; r < batch.rows; ++r)
    for (std::size_t k = 0; k < 11; ++k) {
      tokens[r * 22 + 2 * k] = static_cast<float>(batch.x(r, k));
      tokens[r * 22 + 2 * k + 1] = static_cast<float>(batch.y(r, k));
    }
  auto pred = m.forward(g, tokens, batch.rows, 22);
  double sum = 0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const double e = pred.data()[i] - batch.targets[i];
    sum += e * e;
  }
  CHECK(graph_loss == doctest::Approx(sum / pred.numel()).epsilon(1e-12));
}

TEST_CASE("one Adam step matches the textbook update") {
  auto p = ad::Tensor<float>::from({2}, {1.0f, -2.0f}, true);
  std::vector<Parameter<float>> params = {{"p", p}};
  Adam adam(AdamConfig{.lr = 0.1}, 2);
  auto apply_grad = [&](std::vector<float> g_values) {
    ad::Graph<float> g;
    auto c = ad::Tensor<float>::from({2}, std::move(g_values));
    p.zero_grad();
    g.backward(g.sum(g.mul(p, c)));
  };
  // Scalar reference in double.
  double theta[2] = {1.0, -2.0}, m[2] = {0, 0}, v[2] = {0, 0};
  const double grads[2][2] = {{0.5, 3.0}, {-1.0, 0.25}};
  for (int t = 1; t <= 2; ++t) {
    apply_grad({static_cast<float>(grads[t - 1][0]), static_cast<float>(grads[t - 1][1])});
    adam.step(params);
    for (int i = 0; i < 2; ++i) {
      const double g = grads[t - 1][i];
      m[i] = 0.9 * m[i] + 0.1 * g;
      v[i] = 0.999 * v[i] + 0.001 * g * g;
      const double mh = m[i] / (1 - std::pow(0.9, t));
      const double vh = v[i] / (1 - std::pow(0.999, t));
      theta[i] -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
      CHECK(p.data()[i] == doctest::Approx(theta[i]).epsilon(1e-6));
    }
  }
  CHECK(adam.state().step == 2);
}

TEST_CASE("zero steps returns the initial model and one checkpoint") {
  SeededRng rng(3);
  TransformerModel<float> m(tiny(), rng);
  const auto dir = fresh_dir("zero");
  auto run = train(m, short_run(0), dir);
  CHECK(run.model.flat_parameters() == m.flat_parameters());
  REQUIRE(run.checkpoints.size() == 1);
  CHECK(run.checkpoints[0].filename() == "ckpt_0.icll");
  CHECK(load_checkpoint(run.checkpoints[0]).flat_parameters() == m.flat_parameters());
  CHECK(run.loss_log.empty());
  CHECK(fs::exists(dir / "config.json"));
  CHECK(slurp(dir / "loss.csv") == "step,loss\n");
}

TEST_CASE("training is bit-reproducible") {
  auto once = [](const std::string& name) {
    SeededRng rng(init_seed(7));
    TransformerModel<float> m(tiny(), rng);
    auto cfg = short_run(30);
    cfg.checkpoint_every = 10;
    const auto dir = fresh_dir(name);
    auto run = train(m, cfg, dir);
    return std::make_tuple(run.loss_log, run.model.flat_parameters(), slurp(dir / "loss.csv"),
                           slurp(dir / "ckpt_30.icll"), run.checkpoints.size());
  };
  const auto a = once("rep_a");
  const auto b = once("rep_b");
  CHECK(std::get<0>(a) == std::get<0>(b));
  CHECK(std::get<1>(a) == std::get<1>(b));
  CHECK(std::get<2>(a) == std::get<2>(b));
  CHECK(std::get<3>(a) == std::get<3>(b));
  CHECK(std::get<4>(a) == 3);
  CHECK(std::get<0>(a).size() == 30);
}

TEST_CASE("a non-finite loss aborts and keeps the last good parameters") {
  SeededRng rng(4);
  TransformerModel<float> m(tiny(), rng);
  auto cfg = short_run(50);
  cfg.lr = 1e37;
  const auto dir = fresh_dir("nan");
  CHECK_THROWS_AS(train(m, cfg, dir), NumericError);
  std::vector<fs::path> ckpts;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".icll") ckpts.push_back(e.path());
  REQUIRE(ckpts.size() == 1);
  const auto saved = load_checkpoint(ckpts[0]).flat_parameters();
  for (float v : saved) CHECK(std::isfinite(v));
}

TEST_CASE("config validation") {
  auto cfg = short_run(1);
  cfg.spec_i = DistributionSpec::normal(0, 2);
  CHECK_THROWS_AS(cfg.validate(), SpecError);
  cfg = short_run(1);
  cfg.train_prompt_len = 12;
  CHECK_THROWS_AS(cfg.validate(), SpecError);
  cfg = short_run(1);
  cfg.n_points = 41;
  cfg.train_prompt_len = 41;
  SeededRng rng(5);
  CHECK_THROWS_AS(train(TransformerModel<float>(tiny(), rng), cfg), CapacityError);
}

TEST_CASE("smoothed training loss halves over the first 5k steps") {
  // A single attention layer cannot pair an x token with its y token, so the
  // tiny model needs two layers to get past the shrinkage plateau.
  SeededRng rng(init_seed(7));
  ModelConfig cfg = tiny();
  cfg.n_layers = 2;
  TransformerModel<float> m(cfg, rng);
  TrainConfig t;
  t.steps = 5000;
  t.batch_size = 64;
  t.n_points = 11;
  t.train_prompt_len = 11;
  t.log_every = 1;
  t.checkpoint_every = 0;
  const auto run = train(m, t);
  REQUIRE(run.loss_log.size() == 5000);
  std::vector<double> windows;
  for (std::size_t w = 0; w < 10; ++w) {
    double s = 0;
    for (std::size_t i = w * 500; i < (w + 1) * 500; ++i) s += run.loss_log[i].second;
    windows.push_back(s / 500);
  }
  for (std::size_t w = 1; w < windows.size(); ++w) CHECK(windows[w] <= windows[w - 1]);
  INFO("first window " << windows.front() << ", last window " << windows.back());
  CHECK(windows.back() <= 0.5 * windows.front());
}
