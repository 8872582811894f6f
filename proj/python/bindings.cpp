#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "icll/boundary.hpp"
#include "icll/checkpoint.hpp"
#include "icll/cli.hpp"
#include "icll/error.hpp"
#include "icll/evaluation.hpp"
#include "icll/training.hpp"

namespace py = pybind11;
using namespace icll;

namespace {

py::array_t<double> matrix(const std::vector<double>& v, std::size_t rows, std::size_t cols) {
  py::array_t<double> out({rows, cols});
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

std::vector<double> column(const std::vector<SweepPoint>& pts, double SweepPoint::*field) {
  std::vector<double> out;
  for (const auto& p : pts) out.push_back(p.*field);
  return out;
}

EvalProtocol make_protocol(const std::string& df, const std::string& di, std::size_t functions,
                           std::size_t batches, std::size_t points, std::size_t skip,
                           std::uint64_t function_seed, std::uint64_t point_seed, bool sorted,
                           double noise) {
  EvalProtocol p;
  p.spec_f = DistributionSpec::parse(df);
  p.spec_i = DistributionSpec::parse(di);
  p.n_functions = functions;
  p.n_batches = batches;
  p.n_points = points;
  p.skip = skip;
  p.function_seed = function_seed;
  p.point_seed = point_seed;
  p.sorted = sorted;
  p.noise_std = noise;
  p.validate();
  return p;
}

}  // namespace

PYBIND11_MODULE(_icll, m) {
  m.doc() = "Transformer in-context learning laboratory (C++ core)";

  py::register_exception<SpecError>(m, "SpecError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<CapacityError>(m, "CapacityError", PyExc_ValueError);
  py::register_exception<UsageError>(m, "UsageError", PyExc_RuntimeError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<UndefinedRateError>(m, "UndefinedRateError", PyExc_ArithmeticError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_IOError);
  py::register_exception<IoError>(m, "IoError", PyExc_IOError);

  m.def("normalize_spec", [](const std::string& text) { return DistributionSpec::parse(text).to_string(); },
        "Parse a distribution spec string and return its canonical form.");
  m.def("theoretical_value_bound",
        [](const std::string& spec) { return theoretical_value_bound(DistributionSpec::parse(spec)); });
  m.def("coverage_probability",
        [](const std::string& df, const std::string& di, double lo, double hi, std::size_t n,
           std::uint64_t seed) {
          SeededRng rng(seed);
          return coverage_probability(DistributionSpec::parse(df), DistributionSpec::parse(di), lo, hi, n, rng);
        },
        py::arg("df"), py::arg("di"), py::arg("lo"), py::arg("hi"), py::arg("n_samples") = 100000,
        py::arg("seed") = 0);

  py::class_<PromptBatch>(m, "PromptBatch")
      .def_readonly("rows", &PromptBatch::rows)
      .def_readonly("n_points", &PromptBatch::n_points)
      .def_property_readonly("xs", [](const PromptBatch& b) { return matrix(b.xs, b.rows, b.n_points); })
      .def_property_readonly("ys", [](const PromptBatch& b) { return matrix(b.ys, b.rows, b.n_points); })
      .def_property_readonly("targets",
                             [](const PromptBatch& b) { return matrix(b.targets, b.rows, b.n_points); })
      .def_property_readonly("tokens", [](const PromptBatch& b) {
        const auto t = b.tokens();
        py::array_t<float> out({b.rows, 2 * b.n_points});
        std::copy(t.begin(), t.end(), out.mutable_data());
        return out;
      });

  m.def("sample_batch",
        [](const std::string& df, const std::string& di, std::size_t rows, std::size_t n_points,
           std::uint64_t seed, bool sorted, double noise) {
          SeededRng rng(seed);
          return sample_batch(DistributionSpec::parse(df), DistributionSpec::parse(di), rows, n_points,
                              rng, PromptOptions{sorted, noise});
        },
        py::arg("df") = "normal:0:1", py::arg("di") = "normal:0:1", py::arg("rows") = 1,
        py::arg("n_points") = 41, py::arg("seed") = 0, py::arg("sorted") = false, py::arg("noise") = 0.0);
  m.def("prompt_at",
        [](double a, double b, const std::vector<double>& xs) {
          SeededRng rng(0);
          return build_prompt_at({a, b}, xs, rng);
        },
        py::arg("a"), py::arg("b"), py::arg("xs"), "One noise-free prompt for f(x) = a x + b.");

  using Vec = std::vector<double>;
  m.def("knn_predict",
        [](const Vec& xs, const Vec& ys, double q, std::size_t k) { return knn_predict(xs, ys, q, k); },
        py::arg("xs"), py::arg("ys"), py::arg("query"), py::arg("k") = 3);
  m.def("least_squares_predict",
        [](const Vec& xs, const Vec& ys, double q) { return least_squares_predict(xs, ys, q); },
        py::arg("xs"), py::arg("ys"), py::arg("query"));
  m.def("ridge_predict",
        [](const Vec& xs, const Vec& ys, double q, double lam) { return ridge_predict(xs, ys, q, lam); },
        py::arg("xs"), py::arg("ys"), py::arg("query"), py::arg("lam"));

  py::class_<Predictor, std::shared_ptr<Predictor>>(m, "Predictor")
      .def_property_readonly("name", &Predictor::name)
      .def("predict", [](const Predictor& p, const PromptBatch& b) {
        return matrix(p.predict(b), b.rows, b.n_points);
      });

  m.def("baseline",
        [](const std::string& kind, double lam, std::size_t k, double clamp) -> std::shared_ptr<Predictor> {
          if (kind == "ls") return std::make_shared<LeastSquaresPredictor>();
          if (kind == "ridge") return std::make_shared<RidgePredictor>(lam);
          if (kind == "zero") return std::make_shared<ZeroPredictor>();
          if (kind == "3nn") return std::make_shared<KnnPredictor>(3);
          if (kind == "knn") return std::make_shared<KnnPredictor>(k);
          if (kind == "clamp") return std::make_shared<ClampOracle>(clamp);
          throw SpecError("unknown baseline '" + kind + "'");
        },
        py::arg("kind"), py::arg("lam") = 1e-3, py::arg("k") = 3, py::arg("clamp") = 30.0);
  m.def("load_model",
        [](const std::filesystem::path& path, const std::string& label) -> std::shared_ptr<Predictor> {
          return std::make_shared<ModelPredictor>(load_checkpoint(path), label);
        },
        py::arg("path"), py::arg("label") = "model", "Load a checkpoint as a predictor.");

  m.def("epsilon",
        [](const Predictor& p, const std::string& df, const std::string& di, std::size_t functions,
           std::size_t batches, std::size_t points, std::size_t skip, std::uint64_t function_seed,
           std::uint64_t point_seed, bool sorted, double noise, std::size_t workers) {
          const auto proto = make_protocol(df, di, functions, batches, points, skip, function_seed,
                                           point_seed, sorted, noise);
          py::gil_scoped_release release;
          const auto r = evaluate(p, proto, workers);
          py::gil_scoped_acquire acquire;
          py::dict d;
          d["eps"] = r.epsilon_sigma;
          d["eps_star"] = r.epsilon_star;
          d["eps_zero"] = r.epsilon_zero;
          d["error_rate"] = r.error_rate ? py::cast(*r.error_rate) : py::none();
          d["per_function"] = r.per_function;
          d["per_position"] = r.per_position;
          return d;
        },
        py::arg("predictor"), py::arg("df") = "normal:0:1", py::arg("di") = "normal:0:1",
        py::arg("functions") = 100, py::arg("batches") = 64, py::arg("points") = 41, py::arg("skip") = 2,
        py::arg("function_seed") = 1234, py::arg("point_seed") = 5678, py::arg("sorted") = false,
        py::arg("noise") = 0.0, py::arg("workers") = 1);
  m.def("error_rate", &error_rate, py::arg("eps"), py::arg("eps_star"), py::arg("eps_zero"));
  m.def("spearman", [](const std::vector<double>& a, const std::vector<double>& b) { return spearman(a, b); });

  m.def("boundary",
        [](const Predictor& p, double slope, double intercept, double x_lo, double x_hi, double step,
           std::size_t context_points, std::uint64_t seed) {
          BoundarySweep s;
          s.f = {slope, intercept};
          s.x_lo = x_lo;
          s.x_hi = x_hi;
          s.step = step;
          s.context_points = context_points;
          s.seed = seed;
          const auto prof = detect_boundaries(p, s);
          auto opt = [](const std::optional<double>& v) { return v ? py::cast(*v) : py::none(); };
          py::dict d;
          d["b_minus"] = opt(prof.b_minus);
          d["b_plus"] = opt(prof.b_plus);
          d["alpha"] = opt(prof.alpha);
          d["contains_predictions"] = prof.contains_predictions();
          d["x"] = column(prof.points, &SweepPoint::x);
          d["f_x"] = column(prof.points, &SweepPoint::f_x);
          d["pred"] = column(prof.points, &SweepPoint::pred);
          return d;
        },
        py::arg("predictor"), py::arg("slope") = 9.0, py::arg("intercept") = 0.0, py::arg("x_lo") = -5.0,
        py::arg("x_hi") = 5.0, py::arg("step") = 0.05, py::arg("context_points") = 40, py::arg("seed") = 11);

  m.def("train",
        [](std::size_t layers, std::size_t heads, std::size_t emb, std::size_t max_positions,
           const std::string& variant, const std::string& df, std::size_t steps, std::size_t batch,
           double lr, std::size_t n_points, std::uint64_t seed,
           std::optional<std::filesystem::path> out_dir) {
          ModelConfig mc;
          mc.n_layers = layers;
          mc.n_heads = heads;
          mc.d_emb = emb;
          mc.max_positions = max_positions;
          mc.variant = parse_variant(variant);
          mc.validate();
          TrainConfig tc;
          tc.steps = steps;
          tc.batch_size = batch;
          tc.lr = lr;
          tc.n_points = tc.train_prompt_len = n_points;
          tc.seed = seed;
          tc.spec_f = tc.spec_i = DistributionSpec::parse(df);
          tc.log_every = 1;
          SeededRng init(init_seed(seed));
          TransformerModel<float> model(mc, init);
          std::optional<TrainedRun> run;
          {
            py::gil_scoped_release release;
            run = train(std::move(model), tc, out_dir);
          }
          std::vector<double> losses;
          for (const auto& [s, l] : run->loss_log) losses.push_back(l);
          return py::make_tuple(std::shared_ptr<Predictor>(std::make_shared<ModelPredictor>(run->model)),
                                losses);
        },
        py::arg("layers") = 1, py::arg("heads") = 1, py::arg("emb") = 64, py::arg("max_positions") = 82,
        py::arg("variant") = "full", py::arg("df") = "normal:0:1", py::arg("steps") = 100,
        py::arg("batch") = 64, py::arg("lr") = 1e-4, py::arg("n_points") = 41, py::arg("seed") = 7,
        py::arg("out_dir") = py::none(),
        "Train a model; returns (predictor, per-step losses).");

  m.def("run_cli",
        [](const std::vector<std::string>& args) {
          std::ostringstream out, err;
          int code;
          {
            py::gil_scoped_release release;
            code = run_cli(args, out, err);
          }
          return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Run the command-line tool in-process; returns (exit_code, stdout, stderr).");
}
