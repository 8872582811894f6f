#include "icll/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <vector>

#include "icll/error.hpp"
#include "icll/format.hpp"

namespace icll {
namespace {

void check_finite(double v, const char* name) {
  if (!std::isfinite(v)) throw SpecError(std::string(name) + " must be finite");
}

void validate(const NormalLaw& n) {
  check_finite(n.mu, "mu");
  check_finite(n.sigma, "sigma");
  if (!(n.sigma > 0)) throw SpecError("sigma > 0 violated");
}

void validate(const UniformLaw& u) {
  check_finite(u.lo, "lo");
  check_finite(u.hi, "hi");
  if (!(u.lo < u.hi)) throw SpecError("lo < hi violated");
}

void validate(const BimodalLaw& m) {
  validate(NormalLaw{m.mu1, m.s1});
  validate(NormalLaw{m.mu2, m.s2});
  if (!(m.weight > 0 && m.weight < 1)) throw SpecError("0 < weight < 1 violated");
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream is(text);
  while (std::getline(is, cur, sep)) parts.push_back(cur);
  if (!text.empty() && text.back() == sep) parts.emplace_back();
  return parts;
}

}  // namespace

DistributionSpec::DistributionSpec(Law law) : law_(std::move(law)) {
  std::visit([](const auto& l) { validate(l); }, law_);
}

DistributionSpec DistributionSpec::parse(const std::string& text) {
  const auto parts = split(text, ':');
  if (parts.empty() || parts[0].empty()) throw SpecError("empty distribution spec '" + text + "'");
  const std::string& kind = parts[0];
  auto expect = [&](std::size_t n) {
    if (parts.size() != n + 1) {
      throw SpecError("distribution '" + kind + "' expects " + std::to_string(n) +
                      " parameters in '" + text + "'");
    }
  };
  auto num = [&](std::size_t i) { return parse_number(parts[i], "parameter '" + parts[i] + "' of '" + text + "'"); };
  if (kind == "normal") {
    expect(2);
    return normal(num(1), num(2));
  }
  if (kind == "uniform") {
    expect(2);
    return uniform(num(1), num(2));
  }
  if (kind == "bimodal") {
    expect(5);
    return bimodal(num(1), num(2), num(3), num(4), num(5));
  }
  throw SpecError("unknown distribution kind '" + kind + "' in '" + text + "'");
}

std::string DistributionSpec::to_string() const {
  struct Visitor {
    std::string operator()(const NormalLaw& n) const {
      return "normal:" + format_number(n.mu) + ":" + format_number(n.sigma);
    }
    std::string operator()(const UniformLaw& u) const {
      return "uniform:" + format_number(u.lo) + ":" + format_number(u.hi);
    }
    std::string operator()(const BimodalLaw& m) const {
      return "bimodal:" + format_number(m.mu1) + ":" + format_number(m.s1) + ":" +
             format_number(m.mu2) + ":" + format_number(m.s2) + ":" + format_number(m.weight);
    }
  };
  return std::visit(Visitor{}, law_);
}

double DistributionSpec::sample(SeededRng& rng) const {
  struct Visitor {
    SeededRng& rng;
    double operator()(const NormalLaw& n) const { return rng.normal(n.mu, n.sigma); }
    double operator()(const UniformLaw& u) const { return rng.uniform(u.lo, u.hi); }
    double operator()(const BimodalLaw& m) const {
      return rng.uniform() < m.weight ? rng.normal(m.mu1, m.s1) : rng.normal(m.mu2, m.s2);
    }
  };
  return std::visit(Visitor{rng}, law_);
}

double DistributionSpec::normal_sigma() const {
  if (const auto* n = std::get_if<NormalLaw>(&law_)) return n->sigma;
  return std::numeric_limits<double>::quiet_NaN();
}

LinearFunction sample_function(const DistributionSpec& spec, SeededRng& rng) {
  LinearFunction f;
  f.a = spec.sample(rng);
  f.b = spec.sample(rng);
  return f;
}

std::pair<double, double> theoretical_value_bound(const DistributionSpec& spec) {
  const auto* u = std::get_if<UniformLaw>(&spec.law());
  if (u == nullptr) {
    throw SpecError("theoretical_value_bound: unsupported for " + spec.to_string() +
                    " (uniform laws only)");
  }
  const double corners[2] = {u->lo, u->hi};
  double lo = INFINITY, hi = -INFINITY;
  for (double a : corners)
    for (double x : corners)
      for (double b : corners) {
        lo = std::min(lo, a * x + b);
        hi = std::max(hi, a * x + b);
      }
  return {lo, hi};
}

}  // namespace icll
