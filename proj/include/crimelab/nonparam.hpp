#pragma once

// Functional-form probe: partial out controls and fixed effects from the
// outcome and the treatment term, then run a local linear regression of one
// on the other with a district-cluster bootstrap band.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "crimelab/errors.hpp"
#include "crimelab/parallel.hpp"
#include "crimelab/regress.hpp"
#include "crimelab/rng.hpp"
#include "crimelab/specs.hpp"

namespace crimelab {

struct ResidualizedPair {
  VectorXd y;
  VectorXd d;
  VectorXd weights;
  std::vector<int> clusters;
  int n_clusters = 0;
};

/// Residuals of the outcome and of the pooled Post × Austerity term after
/// the spec's controls and fixed effects.
inline ResidualizedPair fwl_residualize(const ObservationSet& set, SpecConfig spec) {
  spec.post = PostKind::pooled;
  const auto terms = make_terms(set, spec);
  const auto design = assemble_design(set, spec, terms);
  const MatrixXd controls = design.X.rightCols(design.X.cols() - 1);
  ResidualizedPair p;
  p.y = residualize(design.y, controls, design.weights, design.fixed_effects, spec.absorb);
  p.d = residualize(design.X.col(0), controls, design.weights, design.fixed_effects, spec.absorb);
  p.weights = design.weights;
  p.clusters = design.clusters;
  p.n_clusters = design.n_clusters;
  return p;
}

/// Weighted least-squares slope through the origin of y-res on d-res.
inline double fwl_slope(const ResidualizedPair& p) {
  const VectorXd wd = p.d.cwiseProduct(p.weights);
  const double den = wd.dot(p.d);
  if (!(den > 0.0)) throw EstimationError("residualized treatment has no variation");
  return wd.dot(p.y) / den;
}

enum class Kernel { epanechnikov, gaussian, uniform, triangular };

inline Kernel parse_kernel(const std::string& s) {
  if (s == "epanechnikov") return Kernel::epanechnikov;
  if (s == "gaussian") return Kernel::gaussian;
  if (s == "uniform") return Kernel::uniform;
  if (s == "triangular") return Kernel::triangular;
  throw SchemaError("unknown kernel \"" + s + "\"");
}

inline std::string to_string(Kernel k) {
  switch (k) {
    case Kernel::epanechnikov: return "epanechnikov";
    case Kernel::gaussian: return "gaussian";
    case Kernel::uniform: return "uniform";
    case Kernel::triangular: return "triangular";
  }
  return "?";
}

inline double kernel_weight(Kernel k, double u) {
  const double a = std::abs(u);
  switch (k) {
    case Kernel::epanechnikov: return a < 1.0 ? 0.75 * (1.0 - u * u) : 0.0;
    case Kernel::gaussian: return std::exp(-0.5 * u * u) * 0.3989422804014327;
    case Kernel::uniform: return a <= 1.0 ? 0.5 : 0.0;
    case Kernel::triangular: return a < 1.0 ? 1.0 - a : 0.0;
  }
  return 0.0;
}

/// Half-width beyond which the kernel vanishes (infinite for the Gaussian).
inline double kernel_support(Kernel k) { return k == Kernel::gaussian ? 8.0 : 1.0; }

enum class BandKind { uniform, pointwise };

struct LocalLinearOptions {
  double bandwidth = 0.0;  // 0 = rule of thumb 1.06·SD·N^(−1/5)
  Kernel kernel = Kernel::epanechnikov;
  int grid_points = 100;
  double lower_quantile = 0.01;
  double upper_quantile = 0.99;
  int bootstrap = 500;
  std::uint64_t seed = 1;
  double min_effective = 10.0;
  int min_clusters = 5;  // distinct clusters inside the kernel window
  BandKind band = BandKind::uniform;
  int threads = 1;
};

struct LocalLinearCurve {
  std::vector<double> grid;
  std::vector<double> fit;
  std::vector<double> slope;
  std::vector<double> lo95;
  std::vector<double> hi95;
  std::vector<double> density;
  std::vector<char> masked;
  double bandwidth = 0.0;
  double critical = 1.96;
  Kernel kernel = Kernel::epanechnikov;
  BandKind band = BandKind::uniform;
  int bootstrap = 0;
};

namespace detail {

/// Type-7 sample quantile of sorted data.
inline double quantile_sorted(const std::vector<double>& s, double q) {
  const double h = (static_cast<double>(s.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (h - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

struct SortedSample {
  std::vector<double> d, y, w;
  std::vector<int> cluster;
};

struct PointFit {
  double fit = std::numeric_limits<double>::quiet_NaN();
  double slope = std::numeric_limits<double>::quiet_NaN();
  double effective = 0.0;
  double kernel_mass = 0.0;
  int clusters = 0;
};

/// Weighted local linear fit at x0; `mult` scales each cluster's weight
/// (bootstrap multiplicities), empty for the original sample.
inline PointFit local_fit(const SortedSample& s, double x0, double h, Kernel k,
                          const std::vector<int>& mult) {
  const double reach = kernel_support(k) * h;
  const auto begin = std::lower_bound(s.d.begin(), s.d.end(), x0 - reach) - s.d.begin();
  const auto end = std::upper_bound(s.d.begin(), s.d.end(), x0 + reach) - s.d.begin();
  double s0 = 0, s1 = 0, s2 = 0, t0 = 0, t1 = 0, sq = 0;
  std::vector<int> seen;
  for (auto i = begin; i < end; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    const double m = mult.empty() ? 1.0 : static_cast<double>(mult[static_cast<std::size_t>(s.cluster[ui])]);
    if (m == 0.0) continue;
    const double u = s.d[ui] - x0;
    const double a = m * s.w[ui] * kernel_weight(k, u / h);
    if (a == 0.0) continue;
    s0 += a;
    s1 += a * u;
    s2 += a * u * u;
    t0 += a * s.y[ui];
    t1 += a * u * s.y[ui];
    sq += a * a;
    if (mult.empty()) seen.push_back(s.cluster[ui]);
  }
  PointFit f;
  std::sort(seen.begin(), seen.end());
  f.clusters = static_cast<int>(std::unique(seen.begin(), seen.end()) - seen.begin());
  f.kernel_mass = s0;
  f.effective = sq > 0.0 ? s0 * s0 / sq : 0.0;
  // Solve the 2×2 system in centred form so a huge bandwidth reduces cleanly
  // to the global weighted fit.
  if (s0 <= 0.0) return f;
  const double mu = s1 / s0;
  const double var = s2 / s0 - mu * mu;
  const double ybar = t0 / s0;
  const double cov = t1 / s0 - mu * ybar;
  if (!(var > 1e-300)) return f;
  f.slope = cov / var;
  f.fit = ybar - f.slope * mu;
  return f;
}

}  // namespace detail

/// Local linear regression of pair.y on pair.d over an equally spaced grid
/// spanning the central quantiles of d. The band is fit ± c·SD(bootstrap
/// fits), c = 1.96 (pointwise) or the 95th percentile of the bootstrap
/// max-|t| over the grid (uniform). Grid points with fewer than
/// `min_effective` Kish-effective observations or fewer than `min_clusters`
/// clusters in the window are masked: a window drawn from one or two
/// districts has a degenerate cluster bootstrap.
inline LocalLinearCurve local_linear_fit(const ResidualizedPair& pair, const LocalLinearOptions& opt = {}) {
  const auto n = static_cast<std::size_t>(pair.d.size());
  if (n < 3) throw DomainError("local linear fit needs at least three observations");
  if (opt.grid_points < 2) throw DomainError("grid needs at least two points");
  if (opt.bandwidth < 0.0) throw DomainError("bandwidth must be positive");
  if (opt.bootstrap < 0) throw DomainError("bootstrap count must be non-negative");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return pair.d[static_cast<Eigen::Index>(a)] < pair.d[static_cast<Eigen::Index>(b)]; });
  detail::SortedSample s;
  for (auto i : order) {
    const auto e = static_cast<Eigen::Index>(i);
    s.d.push_back(pair.d[e]);
    s.y.push_back(pair.y[e]);
    s.w.push_back(pair.weights[e]);
    s.cluster.push_back(pair.clusters.empty() ? static_cast<int>(i) : pair.clusters[i]);
  }
  const int n_clusters = pair.clusters.empty() ? static_cast<int>(n) : pair.n_clusters;

  LocalLinearCurve c;
  c.kernel = opt.kernel;
  c.band = opt.band;
  c.bootstrap = opt.bootstrap;
  double h = opt.bandwidth;
  if (h == 0.0) {
    double mean = 0.0;
    for (double v : s.d) mean += v;
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (double v : s.d) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    h = 1.06 * sd * std::pow(static_cast<double>(n), -0.2);
    if (!(h > 0.0)) throw DomainError("treatment residuals have no spread; bandwidth undefined");
  }
  c.bandwidth = h;

  const double lo = detail::quantile_sorted(s.d, opt.lower_quantile);
  const double hi = detail::quantile_sorted(s.d, opt.upper_quantile);
  if (!(hi > lo)) throw DomainError("grid support is degenerate");
  const auto g = static_cast<std::size_t>(opt.grid_points);
  double wsum = 0.0;
  for (double w : s.w) wsum += w;
  for (std::size_t k = 0; k < g; ++k) {
    const double x = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(g - 1);
    c.grid.push_back(x);
    const auto f = detail::local_fit(s, x, h, opt.kernel, {});
    const bool masked = f.effective < opt.min_effective || f.clusters < opt.min_clusters || !std::isfinite(f.fit);
    c.masked.push_back(masked ? 1 : 0);
    c.fit.push_back(masked ? kNaN : f.fit);
    c.slope.push_back(masked ? kNaN : f.slope);
    c.density.push_back(f.kernel_mass / (wsum * h));
  }

  c.lo95.assign(g, kNaN);
  c.hi95.assign(g, kNaN);
  if (opt.bootstrap == 0) return c;

  // Pairs-cluster bootstrap: resample whole clusters with replacement.
  const auto B = static_cast<std::size_t>(opt.bootstrap);
  std::vector<std::vector<double>> boot(B, std::vector<double>(g, kNaN));
  parallel_for(B, opt.threads, [&](std::size_t b) {
    Xoshiro256 rng(derive_seed(opt.seed, static_cast<std::uint64_t>(b)));
    std::vector<int> mult(static_cast<std::size_t>(n_clusters), 0);
    for (int j = 0; j < n_clusters; ++j) ++mult[rng.below(static_cast<std::uint64_t>(n_clusters))];
    for (std::size_t k = 0; k < g; ++k) {
      if (c.masked[k]) continue;
      boot[b][k] = detail::local_fit(s, c.grid[k], h, opt.kernel, mult).fit;
    }
  });

  std::vector<double> sd(g, kNaN), centre(g, kNaN);
  for (std::size_t k = 0; k < g; ++k) {
    if (c.masked[k]) continue;
    double sum = 0.0, sum2 = 0.0;
    std::size_t m = 0;
    for (std::size_t b = 0; b < B; ++b) {
      const double v = boot[b][k];
      if (!std::isfinite(v)) continue;
      sum += v;
      sum2 += v * v;
      ++m;
    }
    if (m < 2) continue;
    centre[k] = sum / static_cast<double>(m);
    sd[k] = std::sqrt(std::max(0.0, (sum2 - static_cast<double>(m) * centre[k] * centre[k]) / static_cast<double>(m - 1)));
  }
  double crit = 1.96;
  if (opt.band == BandKind::uniform) {
    std::vector<double> maxt;
    for (std::size_t b = 0; b < B; ++b) {
      double t = 0.0;
      for (std::size_t k = 0; k < g; ++k) {
        if (!(sd[k] > 0.0) || !std::isfinite(boot[b][k])) continue;
        t = std::max(t, std::abs(boot[b][k] - centre[k]) / sd[k]);
      }
      maxt.push_back(t);
    }
    std::sort(maxt.begin(), maxt.end());
    crit = std::max(1.96, detail::quantile_sorted(maxt, 0.95));
  }
  c.critical = crit;
  for (std::size_t k = 0; k < g; ++k) {
    if (c.masked[k] || !std::isfinite(sd[k])) continue;
    c.lo95[k] = c.fit[k] - crit * sd[k];
    c.hi95[k] = c.fit[k] + crit * sd[k];
  }
  return c;
}

inline void write_curve_csv(std::ostream& out, const LocalLinearCurve& c) {
  csv::write_row(out, {"grid", "fit", "lo95", "hi95", "density"});
  for (std::size_t k = 0; k < c.grid.size(); ++k) {
    csv::write_row(out, {detail::num(c.grid[k]), detail::num(c.fit[k]), detail::num(c.lo95[k]),
                         detail::num(c.hi95[k]), detail::num(c.density[k])});
  }
}

}  // namespace crimelab
