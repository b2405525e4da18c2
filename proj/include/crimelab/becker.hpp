#pragma once

// Becker-Ehrlich crime supply: a person offends when the expected value of
// crime exceeds that of legal work, with the apprehension probability rising
// linearly in aggregate crime and in police strength.

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "crimelab/csv.hpp"
#include "crimelab/errors.hpp"

namespace crimelab::becker {

struct Params {
  double P = 0.0;       // gain from crime
  double S = 0.0;       // sanction cost if apprehended
  double pi = 0.0;      // apprehension probability (standalone expected value only)
  double W = 0.0;       // wage
  double B = 0.0;       // benefits
  double u = 0.0;       // unemployment probability
  double kappa1 = 0.0;  // detection slope in crime
  double kappa2 = 0.0;  // detection slope in police strength
  double kappa3 = 0.0;  // baseline detection
  double O = 0.0;       // police strength
};

struct Equilibrium {
  double C = 0.0;
  double elasticity = 0.0;
  double implied_probability = 0.0;
  double residual = 0.0;  // ev_crime − ev_work at C, relative to the payoff scale
  std::vector<std::string> warnings;
};

/// (1 − π)P − πS.
inline double ev_crime(double P, double S, double pi) { return (1.0 - pi) * P - pi * S; }

/// (1 − u)W + uB.
inline double ev_work(double W, double B, double u) { return (1.0 - u) * W + u * B; }

inline double apprehension_probability(const Params& p, double C) {
  return p.kappa1 * C + p.kappa2 * p.O + p.kappa3;
}

/// Indifference condition at crime level C: EV(crime) − EV(work), with the
/// apprehension probability evaluated at C.
inline double indifference_gap(const Params& p, double C) {
  return ev_crime(p.P, p.S, apprehension_probability(p, C)) - ev_work(p.W, p.B, p.u);
}

inline void check(const Params& p) {
  if (!(p.kappa1 > 0.0)) throw DomainError("kappa1 must be positive");
  if (!(p.P + p.S > 0.0)) throw DomainError("P + S must be positive");
  if (!(p.u >= 0.0 && p.u <= 1.0)) throw DomainError("unemployment probability must lie in [0, 1]");
  if (p.kappa2 < 0.0) throw DomainError("kappa2 must be non-negative");
  if (p.O < 0.0) throw DomainError("police strength must be non-negative");
}

/// d log C / d log B at crime level C: −uB / (κ1 (P + S) C).
inline double benefit_elasticity(const Params& p, double C) {
  check(p);
  if (!(C > 0.0)) throw DomainError("elasticity needs positive crime");
  return -p.u * p.B / (p.kappa1 * (p.P + p.S) * C);
}

/// Closed-form crime level equating the two expected values.
inline Equilibrium equilibrium_crime(const Params& p) {
  check(p);
  const double ps = p.P + p.S;
  Equilibrium e;
  e.C = (p.P - (1.0 - p.u) * p.W - p.u * p.B - ps * (p.kappa2 * p.O + p.kappa3)) / (p.kappa1 * ps);
  e.implied_probability = apprehension_probability(p, e.C);
  const double scale = std::max({std::abs(p.P), std::abs(p.S), std::abs(p.W), std::abs(p.B), 1e-300});
  e.residual = indifference_gap(p, e.C) / scale;
  e.elasticity = e.C > 0.0 ? benefit_elasticity(p, e.C) : std::numeric_limits<double>::quiet_NaN();
  if (!(e.implied_probability >= 0.0 && e.implied_probability <= 1.0)) {
    e.warnings.push_back("implied apprehension probability " + std::to_string(e.implied_probability) +
                         " lies outside [0, 1]");
  }
  if (e.C < 0.0) e.warnings.push_back("equilibrium crime is negative: crime never pays at these parameters");
  return e;
}

inline void write_report(std::ostream& out, const Params& p, const Equilibrium& e) {
  const std::pair<const char*, double> rows[]{
      {"P", p.P},           {"S", p.S},           {"W", p.W},           {"B", p.B},
      {"u", p.u},           {"kappa1", p.kappa1}, {"kappa2", p.kappa2}, {"kappa3", p.kappa3},
      {"O", p.O},           {"C", e.C},           {"implied_probability", e.implied_probability},
      {"elasticity_benefits", e.elasticity},      {"residual", e.residual}};
  out << "parameter,value\n";
  for (const auto& [name, v] : rows) out << name << ',' << (std::isfinite(v) ? csv::format_double(v) : "") << '\n';
}

}  // namespace crimelab::becker
