#include "icll/boundary.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "icll/error.hpp"
#include "icll/format.hpp"
#include "icll/prompt.hpp"
#include "json.hpp"

namespace icll {

void BoundarySweep::validate() const {
  if (!(step > 0) || !std::isfinite(step)) throw SpecError("sweep step must be positive");
  if (!(x_lo < x_hi)) throw SpecError("sweep needs x_lo < x_hi");
  if (context_points == 0) throw SpecError("sweep needs at least one context pair");
  if (window < 2) throw SpecError("plateau window must be at least 2");
  if (!(rel_tol > 0)) throw SpecError("plateau tolerance must be positive");
}

std::vector<SweepPoint> run_boundary_sweep(const Predictor& predictor, const BoundarySweep& sweep) {
  sweep.validate();
  SeededRng rng(sweep.seed);
  std::vector<double> xs(sweep.context_points + 1);
  for (std::size_t i = 0; i < sweep.context_points; ++i) xs[i] = sweep.context.sample(rng);

  const auto count = static_cast<std::size_t>(std::floor((sweep.x_hi - sweep.x_lo) / sweep.step + 1e-9)) + 1;
  PromptBatch batch;
  SeededRng noiseless(0);  // no noise is drawn
  for (std::size_t q = 0; q < count; ++q) {
    xs.back() = sweep.x_lo + static_cast<double>(q) * sweep.step;
    batch.append(build_prompt_at(sweep.f, xs, noiseless));
  }
  const auto pred = predictor.predict(batch);
  const std::size_t n = batch.n_points;
  std::vector<SweepPoint> points(count);
  for (std::size_t q = 0; q < count; ++q) {
    const double x = batch.x(q, n - 1);
    points[q] = {x, sweep.f(x), pred[q * n + n - 1]};
  }
  return points;
}

namespace {

struct Run {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
};

struct Moments {
  double mean = 0;
  double std = 0;
};

Moments moments(const std::vector<double>& v, std::size_t begin, std::size_t end) {
  const double n = static_cast<double>(end - begin);
  double mean = 0;
  for (std::size_t i = begin; i < end; ++i) mean += v[i];
  mean /= n;
  double var = 0;
  for (std::size_t i = begin; i < end; ++i) var += (v[i] - mean) * (v[i] - mean);
  return {mean, std::sqrt(var / n)};
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

// f and pred are ordered so that f moves away from zero (increasing for the
// upper side, decreasing for the lower side); `sign` is +1 or -1. Returns the
// first plateau run.
std::optional<Run> find_plateau(const std::vector<double>& f, const std::vector<double>& pred,
                                double sign, std::size_t window, double rel_tol) {
  const std::size_t n = f.size();
  if (n < window) return std::nullopt;
  auto flat = [&](std::size_t b, std::size_t e) {
    const auto m = moments(pred, b, e);
    return m.std <= rel_tol * std::abs(m.mean);
  };
  for (std::size_t s = 0; s + window <= n; ++s) {
    const auto m = moments(pred, s, s + window);
    if (sign * m.mean <= 0 || !flat(s, s + window)) continue;
    // The truth must sit at or beyond the level everywhere in the window.
    if (sign * f[s] < sign * m.mean) continue;
    std::size_t e = s + window;
    while (e < n && flat(s, e + 1)) ++e;
    return Run{s, e};
  }
  return std::nullopt;
}

}  // namespace

BoundaryProfile detect_boundaries(std::vector<SweepPoint> points, std::size_t window,
                                  double rel_tol) {
  BoundaryProfile profile;
  profile.method = "plateau: >= " + std::to_string(window) +
                   " consecutive points ordered by f with std <= " + format_number(rel_tol) +
                   " * |mean| and truth beyond the level; B = median over the first run; "
                   "alpha = f-width of that run";
  profile.points = points;
  if (points.empty()) return profile;

  std::vector<std::size_t> order(points.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return points[i].f_x < points[j].f_x; });

  for (double sign : {1.0, -1.0}) {
    std::vector<double> f, pred;
    for (std::size_t t = 0; t < order.size(); ++t) {
      const auto& p = points[sign > 0 ? order[t] : order[order.size() - 1 - t]];
      f.push_back(p.f_x);
      pred.push_back(p.pred);
    }
    const auto run = find_plateau(f, pred, sign, window, rel_tol);
    if (!run) continue;
    const double level =
        median(std::vector<double>(pred.begin() + static_cast<std::ptrdiff_t>(run->begin),
                                   pred.begin() + static_cast<std::ptrdiff_t>(run->end)));
    const double width = sign * (f[run->end - 1] - level);
    const bool censored = run->end == f.size();
    if (sign > 0) {
      profile.b_plus = level;
      profile.alpha_plus = width;
      profile.alpha_plus_censored = censored;
    } else {
      profile.b_minus = level;
      profile.alpha_minus = width;
      profile.alpha_minus_censored = censored;
    }
  }
  if (profile.alpha_plus && profile.alpha_minus) {
    profile.alpha = std::min(*profile.alpha_plus, *profile.alpha_minus);
  } else if (profile.alpha_plus) {
    profile.alpha = profile.alpha_plus;
  } else if (profile.alpha_minus) {
    profile.alpha = profile.alpha_minus;
  }
  return profile;
}

BoundaryProfile detect_boundaries(const Predictor& predictor, const BoundarySweep& sweep) {
  return detect_boundaries(run_boundary_sweep(predictor, sweep), sweep.window, sweep.rel_tol);
}

bool BoundaryProfile::contains_predictions() const {
  if (!alpha) return true;
  for (const auto& p : points) {
    if (b_plus && p.pred > *b_plus + *alpha) return false;
    if (b_minus && p.pred < *b_minus - *alpha) return false;
  }
  return true;
}

void write_boundary_csv(std::ostream& out, const BoundaryProfile& profile) {
  out << "x,f_x,pred\n";
  for (const auto& p : profile.points) {
    out << format_number(p.x) << ',' << format_number(p.f_x) << ',' << format_number(p.pred) << '\n';
  }
}

std::string boundary_profile_json(const BoundaryProfile& profile) {
  auto opt = [](const std::optional<double>& v) -> nlohmann::json {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  nlohmann::json j;
  j["b_minus"] = opt(profile.b_minus);
  j["b_plus"] = opt(profile.b_plus);
  j["alpha"] = opt(profile.alpha);
  j["alpha_minus"] = opt(profile.alpha_minus);
  j["alpha_plus"] = opt(profile.alpha_plus);
  j["alpha_minus_censored"] = profile.alpha_minus_censored;
  j["alpha_plus_censored"] = profile.alpha_plus_censored;
  j["contains_predictions"] = profile.contains_predictions();
  j["method"] = profile.method;
  j["points"] = profile.points.size();
  return j.dump(2);
}

}  // namespace icll
