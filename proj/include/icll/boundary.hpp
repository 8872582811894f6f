#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "icll/distributions.hpp"
#include "icll/predictors.hpp"

namespace icll {

// Adversarial sweep: a fixed context of `context_points` pairs (x ~ context,
// y = f(x)) followed by a query x stepping from x_lo to x_hi. The prediction
// for each query is read at the query position.
struct BoundarySweep {
  LinearFunction f{9.0, 0.0};
  double x_lo = -5.0;
  double x_hi = 5.0;
  double step = 0.05;
  DistributionSpec context = DistributionSpec::uniform(-5, 5);
  std::size_t context_points = 40;
  std::uint64_t seed = 11;
  // Plateau rule: at least `window` consecutive sweep points (ordered by f)
  // whose predictions have std <= rel_tol * |mean|.
  std::size_t window = 10;
  double rel_tol = 0.05;

  void validate() const;
};

struct SweepPoint {
  double x = 0.0;
  double f_x = 0.0;
  double pred = 0.0;
};

// Plateau levels and clamp-band widths found on a sweep.
//
// An upper plateau is a run of sweep points, taken in increasing f, whose
// predictions stay within the plateau rule, whose level is positive and sits
// at or below every true value in the run (the model is clamping rather than
// tracking f). B+ is the median prediction over the first such run. alpha+ is
// the f-distance from B+ to the last true value of that run; when the run
// reaches the sweep edge the width is only a lower bound (censored). The lower
// side mirrors this. `alpha` is the smaller of the detected widths.
struct BoundaryProfile {
  std::optional<double> b_minus;
  std::optional<double> b_plus;
  std::optional<double> alpha_minus;
  std::optional<double> alpha_plus;
  std::optional<double> alpha;
  bool alpha_minus_censored = false;
  bool alpha_plus_censored = false;
  std::vector<SweepPoint> points;  // in sweep order
  std::string method;

  // Every prediction lies in [B- - alpha, B+ + alpha]; sides without a
  // plateau are unconstrained. True when nothing was detected.
  bool contains_predictions() const;
};

std::vector<SweepPoint> run_boundary_sweep(const Predictor& predictor, const BoundarySweep& sweep);

// Detection on an existing sweep (points in any order).
BoundaryProfile detect_boundaries(std::vector<SweepPoint> points, std::size_t window,
                                  double rel_tol);

BoundaryProfile detect_boundaries(const Predictor& predictor, const BoundarySweep& sweep);

void write_boundary_csv(std::ostream& out, const BoundaryProfile& profile);
// JSON summary of the detected values (absent values are null).
std::string boundary_profile_json(const BoundaryProfile& profile);

}  // namespace icll
