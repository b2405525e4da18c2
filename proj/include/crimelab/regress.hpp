#pragma once

// Weighted least squares with multi-way fixed-effect absorption and
// cluster-robust covariance.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "crimelab/errors.hpp"
#include "crimelab/parallel.hpp"
#include "crimelab/rng.hpp"

namespace crimelab {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// One categorical dimension coded 0..n_groups-1.
struct FixedEffect {
  std::string name;
  std::vector<int> group;
  int n_groups = 0;
};

/// Codes arbitrary labels by their sorted order.
template <class Label>
std::vector<int> encode_labels(const std::vector<Label>& labels, int* n_groups = nullptr) {
  std::map<Label, int> codes;
  for (const auto& l : labels) codes.emplace(l, 0);
  int next = 0;
  for (auto& [l, c] : codes) c = next++;
  std::vector<int> out;
  out.reserve(labels.size());
  for (const auto& l : labels) out.push_back(codes.at(l));
  if (n_groups) *n_groups = next;
  return out;
}

template <class Label>
FixedEffect make_fixed_effect(std::string name, const std::vector<Label>& labels) {
  FixedEffect fe;
  fe.name = std::move(name);
  fe.group = encode_labels(labels, &fe.n_groups);
  return fe;
}

struct DesignMatrix {
  VectorXd y;
  MatrixXd X;  // treatment terms first, then controls
  std::vector<std::string> names;
  VectorXd weights;
  std::vector<FixedEffect> fixed_effects;
  std::vector<int> clusters;  // coded 0..n_clusters-1; empty when unclustered
  int n_clusters = 0;

  Eigen::Index rows() const { return y.size(); }

  void validate() const {
    const auto n = y.size();
    if (X.rows() != n || weights.size() != n) throw DomainError("design vectors differ in length");
    if (static_cast<Eigen::Index>(names.size()) != X.cols()) throw DomainError("one name per regressor required");
    if (!clusters.empty() && static_cast<Eigen::Index>(clusters.size()) != n) {
      throw DomainError("cluster labels differ in length");
    }
    for (const auto& fe : fixed_effects) {
      if (static_cast<Eigen::Index>(fe.group.size()) != n) throw DomainError("fixed effect " + fe.name + " differs in length");
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!(weights[i] > 0.0)) throw DomainError("weights must be positive");
    }
  }
};

struct AbsorbOptions {
  double tol = 1e-10;  // max absolute cell change per sweep
  int max_iter = 10000;
};

struct AbsorbedDesign {
  VectorXd y;
  MatrixXd X;
  int iterations = 0;
  double last_change = 0.0;
};

namespace detail {

/// Weighted within-group demeaning of every column of M, in place.
/// Returns the largest absolute change applied.
inline double demean_once(MatrixXd& M, const VectorXd& w, const FixedEffect& fe) {
  const auto cols = M.cols();
  MatrixXd sums = MatrixXd::Zero(fe.n_groups, cols);
  VectorXd wsum = VectorXd::Zero(fe.n_groups);
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    const int g = fe.group[static_cast<std::size_t>(i)];
    wsum[g] += w[i];
    sums.row(g) += w[i] * M.row(i);
  }
  for (int g = 0; g < fe.n_groups; ++g) {
    if (wsum[g] > 0.0) sums.row(g) /= wsum[g];
  }
  double change = 0.0;
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    const auto mean = sums.row(fe.group[static_cast<std::size_t>(i)]);
    change = std::max(change, mean.cwiseAbs().maxCoeff());
    M.row(i) -= mean;
  }
  return change;
}

}  // namespace detail

/// Demeans the outcome and every regressor within each fixed-effect dimension
/// by alternating weighted projections until no cell moves by more than
/// `tol` in a full sweep. One dimension is exact after a single pass.
inline AbsorbedDesign absorb_fixed_effects(const DesignMatrix& d, const AbsorbOptions& opt = {}) {
  if (!(opt.tol > 0.0)) throw DomainError("absorption tolerance must be positive");
  MatrixXd M(d.rows(), d.X.cols() + 1);
  M.col(0) = d.y;
  if (d.X.cols() > 0) M.rightCols(d.X.cols()) = d.X;

  AbsorbedDesign out;
  if (!d.fixed_effects.empty()) {
    if (d.fixed_effects.size() == 1) {
      out.last_change = detail::demean_once(M, d.weights, d.fixed_effects[0]);
      out.iterations = 1;
    } else {
      for (;;) {
        double change = 0.0;
        for (const auto& fe : d.fixed_effects) change = std::max(change, detail::demean_once(M, d.weights, fe));
        ++out.iterations;
        out.last_change = change;
        if (change < opt.tol) break;
        if (out.iterations >= opt.max_iter) {
          throw ConvergenceError("fixed-effect absorption did not converge in " +
                                     std::to_string(opt.max_iter) + " sweeps (last change " +
                                     std::to_string(change) + ")",
                                 change);
        }
      }
    }
  }
  out.y = M.col(0);
  out.X = M.rightCols(d.X.cols());
  return out;
}

/// Degrees of freedom consumed by the absorbed effects: the first two
/// dimensions are counted exactly (groups minus connected components of their
/// bipartite graph); each further dimension loses one redundancy.
inline int absorbed_dof(const std::vector<FixedEffect>& fes) {
  if (fes.empty()) return 0;
  if (fes.size() == 1) return fes[0].n_groups;
  const auto& a = fes[0];
  const auto& b = fes[1];
  std::vector<int> parent(static_cast<std::size_t>(a.n_groups + b.n_groups));
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  std::vector<char> seen(parent.size(), 0);
  for (std::size_t i = 0; i < a.group.size(); ++i) {
    const int u = a.group[i], v = a.n_groups + b.group[i];
    seen[u] = seen[v] = 1;
    parent[find(u)] = find(v);
  }
  int components = 0, present = 0;
  for (int x = 0; x < static_cast<int>(parent.size()); ++x) {
    if (!seen[x]) continue;
    ++present;
    if (find(x) == x) ++components;
  }
  int dof = present - components;
  for (std::size_t k = 2; k < fes.size(); ++k) dof += fes[k].n_groups - 1;
  return dof;
}

struct WlsSolution {
  VectorXd coef;                      // for kept columns
  VectorXd residuals;                 // absorbed-scale residuals, length N
  std::vector<Eigen::Index> kept;     // column indices into X
  std::vector<Eigen::Index> dropped;
};

/// Minimises Σ w (y − Xb)² on √w-scaled data by Householder QR. Columns are
/// screened left to right: a column whose component orthogonal to the kept
/// columns is below `drop_tol` times its pre-absorption norm is dropped.
inline WlsSolution wls_solve(const VectorXd& y, const MatrixXd& X, const VectorXd& w,
                             const VectorXd& reference_norms, double drop_tol = 1e-8) {
  const VectorXd sw = w.cwiseSqrt();
  const MatrixXd Xs = X.array().colwise() * sw.array();
  const VectorXd ys = y.cwiseProduct(sw);

  WlsSolution out;
  std::vector<VectorXd> basis;
  for (Eigen::Index j = 0; j < Xs.cols(); ++j) {
    VectorXd v = Xs.col(j);
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& q : basis) v -= q.dot(v) * q;
    }
    const double norm = v.norm();
    const double ref = reference_norms.size() > j ? reference_norms[j] : Xs.col(j).norm();
    if (!(norm > drop_tol * ref) || ref == 0.0) {
      out.dropped.push_back(j);
      continue;
    }
    basis.push_back(v / norm);
    out.kept.push_back(j);
  }
  if (out.kept.empty()) {
    out.residuals = y;
    return out;
  }
  if (static_cast<Eigen::Index>(out.kept.size()) >= X.rows()) {
    throw EstimationError("fewer observations than regressors");
  }
  MatrixXd Xk(Xs.rows(), static_cast<Eigen::Index>(out.kept.size()));
  for (std::size_t c = 0; c < out.kept.size(); ++c) Xk.col(static_cast<Eigen::Index>(c)) = Xs.col(out.kept[c]);
  out.coef = Xk.householderQr().solve(ys);
  MatrixXd Xu(X.rows(), Xk.cols());
  for (std::size_t c = 0; c < out.kept.size(); ++c) Xu.col(static_cast<Eigen::Index>(c)) = X.col(out.kept[c]);
  out.residuals = y - Xu * out.coef;
  return out;
}

enum class VcovKind { CR0, CR1 };

inline std::string to_string(VcovKind k) { return k == VcovKind::CR0 ? "CR0" : "CR1"; }

inline VcovKind parse_vcov_kind(const std::string& s) {
  if (s == "CR0" || s == "cr0") return VcovKind::CR0;
  if (s == "CR1" || s == "cr1") return VcovKind::CR1;
  throw SchemaError("unknown covariance kind \"" + s + "\"");
}

/// Sandwich (X'WX)^-1 (Σ_g s_g s_g') (X'WX)^-1 with s_g = Σ_{i∈g} w_i x_i e_i.
/// CR1 scales by G/(G−1) · (N−1)/(N−k_total).
inline MatrixXd cluster_robust_vcov(const MatrixXd& X, const VectorXd& w, const VectorXd& e,
                                    const std::vector<int>& clusters, int n_clusters,
                                    int k_total, VcovKind kind = VcovKind::CR1) {
  if (n_clusters < 2) throw EstimationError("clustered inference needs at least two clusters");
  const auto n = X.rows();
  const auto k = X.cols();
  const MatrixXd xtwx = X.transpose() * (X.array().colwise() * w.array()).matrix();
  Eigen::LDLT<MatrixXd> ldlt(xtwx);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
      ldlt.vectorD().minCoeff() <= 1e-14 * std::max(1.0, ldlt.vectorD().maxCoeff())) {
    throw EstimationError("singular X'WX in covariance bread");
  }
  const MatrixXd bread = ldlt.solve(MatrixXd::Identity(k, k));
  MatrixXd scores = MatrixXd::Zero(n_clusters, k);
  for (Eigen::Index i = 0; i < n; ++i) scores.row(clusters[static_cast<std::size_t>(i)]) += (w[i] * e[i]) * X.row(i);
  const MatrixXd meat = scores.transpose() * scores;
  MatrixXd V = bread * meat * bread;
  if (kind == VcovKind::CR1) {
    const double G = n_clusters;
    const double N = static_cast<double>(n);
    if (N - k_total <= 0) throw EstimationError("no residual degrees of freedom");
    V *= (G / (G - 1.0)) * ((N - 1.0) / (N - static_cast<double>(k_total)));
  }
  return 0.5 * (V + V.transpose());
}

struct WaldTest {
  double statistic = 0.0;  // F = W / q
  int df1 = 0;
  int df2 = 0;
  double p_value = 1.0;
  // Wild cluster bootstrap p-value, when computed.
  double bootstrap_p = std::numeric_limits<double>::quiet_NaN();
  int bootstrap_reps = 0;
};

struct FitResult {
  std::vector<std::string> names;  // kept regressors
  VectorXd coef;
  MatrixXd vcov;
  std::size_t n = 0;
  std::size_t k = 0;
  std::size_t g = 0;
  std::vector<int> fe_groups;
  int fe_dof = 0;
  int iterations = 0;
  std::vector<std::string> dropped;
  VectorXd residuals;
  VcovKind vcov_kind = VcovKind::CR1;
  bool has_vcov = false;

  std::optional<std::size_t> index_of(const std::string& name) const {
    auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) return std::nullopt;
    return static_cast<std::size_t>(it - names.begin());
  }

  double coefficient(const std::string& name) const {
    auto i = index_of(name);
    if (!i) throw EstimationError("term " + name + " not in fit (dropped or absent)");
    return coef[static_cast<Eigen::Index>(*i)];
  }

  double se(std::size_t i) const { return std::sqrt(std::max(0.0, vcov(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)))); }
  double se(const std::string& name) const {
    auto i = index_of(name);
    if (!i) throw EstimationError("term " + name + " not in fit (dropped or absent)");
    return se(*i);
  }

  /// Inference uses t with G − 1 degrees of freedom.
  int inference_df() const { return std::max<int>(1, static_cast<int>(g) - 1); }

  double t_stat(std::size_t i) const { return coef[static_cast<Eigen::Index>(i)] / se(i); }

  double p_value(std::size_t i) const {
    const double t = t_stat(i);
    if (!std::isfinite(t)) return 0.0;
    boost::math::students_t dist(inference_df());
    return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
  }

  double critical_value(double level = 0.95) const {
    boost::math::students_t dist(inference_df());
    return boost::math::quantile(dist, 0.5 + level / 2.0);
  }

  /// Tests R b = r.
  WaldTest wald(const MatrixXd& R, const VectorXd& r) const {
    const VectorXd diff = R * coef - r;
    const MatrixXd middle = R * vcov * R.transpose();
    Eigen::FullPivLU<MatrixXd> lu(middle);
    if (!lu.isInvertible()) throw EstimationError("Wald test covariance is singular");
    WaldTest t;
    t.df1 = static_cast<int>(R.rows());
    t.df2 = inference_df();
    t.statistic = diff.dot(lu.solve(diff)) / t.df1;
    boost::math::fisher_f dist(t.df1, t.df2);
    t.p_value = std::isfinite(t.statistic) ? boost::math::cdf(boost::math::complement(dist, std::max(0.0, t.statistic))) : 0.0;
    return t;
  }

  /// Joint test that the named coefficients are all equal.
  WaldTest equality_test(const std::vector<std::string>& terms) const {
    if (terms.size() < 2) throw EstimationError("equality test needs two or more terms");
    MatrixXd R = MatrixXd::Zero(static_cast<Eigen::Index>(terms.size() - 1), coef.size());
    for (std::size_t j = 0; j + 1 < terms.size(); ++j) {
      auto a = index_of(terms[j]);
      auto b = index_of(terms[j + 1]);
      if (!a || !b) throw EstimationError("equality test term missing from fit");
      R(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(*a)) = 1.0;
      R(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(*b)) = -1.0;
    }
    return wald(R, VectorXd::Zero(R.rows()));
  }
};

struct FitOptions {
  AbsorbOptions absorb{};
  VcovKind vcov = VcovKind::CR1;
  double drop_tol = 1e-8;
  bool compute_vcov = true;
};

/// Absorb, solve, and compute the clustered covariance. Deterministic.
inline FitResult fit(const DesignMatrix& d, const FitOptions& opt = {}) {
  d.validate();
  if (d.X.cols() == 0) throw EstimationError("design has no regressors");
  const auto absorbed = absorb_fixed_effects(d, opt.absorb);
  const VectorXd sw = d.weights.cwiseSqrt();
  VectorXd ref(d.X.cols());
  for (Eigen::Index j = 0; j < d.X.cols(); ++j) ref[j] = d.X.col(j).cwiseProduct(sw).norm();
  auto sol = wls_solve(absorbed.y, absorbed.X, d.weights, ref, opt.drop_tol);

  FitResult r;
  for (auto j : sol.dropped) r.dropped.push_back(d.names[static_cast<std::size_t>(j)]);
  if (sol.kept.empty()) throw EstimationError("all regressors dropped (no variation after absorption)");
  for (auto j : sol.kept) r.names.push_back(d.names[static_cast<std::size_t>(j)]);
  r.coef = sol.coef;
  r.residuals = sol.residuals;
  r.n = static_cast<std::size_t>(d.rows());
  r.k = sol.kept.size();
  r.g = static_cast<std::size_t>(d.n_clusters);
  for (const auto& fe : d.fixed_effects) r.fe_groups.push_back(fe.n_groups);
  r.fe_dof = absorbed_dof(d.fixed_effects);
  r.iterations = absorbed.iterations;
  r.vcov_kind = opt.vcov;
  if (opt.compute_vcov) {
    MatrixXd Xk(d.rows(), static_cast<Eigen::Index>(sol.kept.size()));
    for (std::size_t c = 0; c < sol.kept.size(); ++c) Xk.col(static_cast<Eigen::Index>(c)) = absorbed.X.col(sol.kept[c]);
    r.vcov = cluster_robust_vcov(Xk, d.weights, sol.residuals, d.clusters, d.n_clusters,
                                 r.fe_dof + static_cast<int>(r.k), opt.vcov);
    r.has_vcov = true;
  } else {
    r.vcov = MatrixXd::Zero(r.coef.size(), r.coef.size());
  }
  return r;
}

/// Residuals of y after absorbing `fes` and partialling out `controls`
/// (which may have zero columns). Collinear controls are dropped silently.
inline VectorXd residualize(const VectorXd& y, const MatrixXd& controls, const VectorXd& w,
                            const std::vector<FixedEffect>& fes, const AbsorbOptions& opt = {}) {
  DesignMatrix d;
  d.y = y;
  d.X = controls;
  d.weights = w;
  d.fixed_effects = fes;
  d.names.resize(static_cast<std::size_t>(controls.cols()));
  d.validate();
  const auto absorbed = absorb_fixed_effects(d, opt);
  if (controls.cols() == 0) return absorbed.y;
  const VectorXd sw = w.cwiseSqrt();
  VectorXd ref(controls.cols());
  for (Eigen::Index j = 0; j < controls.cols(); ++j) ref[j] = controls.col(j).cwiseProduct(sw).norm();
  return wls_solve(absorbed.y, absorbed.X, w, ref).residuals;
}

struct WildBootstrapOptions {
  int reps = 399;
  std::uint64_t seed = 1;
  unsigned threads = 1;
};

/// Wild cluster restricted bootstrap for R b = 0 (Rademacher weights per
/// cluster, null imposed). Each draw re-absorbs the perturbed residuals, refits
/// and recomputes the clustered Wald statistic; the p-value is the share of
/// draws at least as large as the observed statistic.
inline double wild_cluster_wald_p(const DesignMatrix& d, const FitResult& r, const MatrixXd& R,
                                  const WildBootstrapOptions& opt = {}, const AbsorbOptions& absorb = {}) {
  if (opt.reps < 1) throw DomainError("bootstrap needs at least one replication");
  if (d.clusters.empty()) throw EstimationError("wild cluster bootstrap needs clusters");
  if (R.cols() != r.coef.size()) throw DomainError("restriction matrix does not match the fit");
  const auto absorbed = absorb_fixed_effects(d, absorb);
  MatrixXd X(d.rows(), static_cast<Eigen::Index>(r.names.size()));
  for (std::size_t c = 0; c < r.names.size(); ++c) {
    const auto j = std::find(d.names.begin(), d.names.end(), r.names[c]) - d.names.begin();
    X.col(static_cast<Eigen::Index>(c)) = absorbed.X.col(j);
  }
  const VectorXd& w = d.weights;
  const MatrixXd xtwx = X.transpose() * (X.array().colwise() * w.array()).matrix();
  const Eigen::LDLT<MatrixXd> bread(xtwx);
  const int k_total = r.fe_dof + static_cast<int>(r.k);
  auto statistic = [&](const VectorXd& b, const VectorXd& e) {
    const MatrixXd V = cluster_robust_vcov(X, w, e, d.clusters, d.n_clusters, k_total, r.vcov_kind);
    const VectorXd diff = R * b;
    Eigen::FullPivLU<MatrixXd> lu(R * V * R.transpose());
    if (!lu.isInvertible()) return std::numeric_limits<double>::infinity();
    return diff.dot(lu.solve(diff));
  };
  const double observed = statistic(r.coef, absorbed.y - X * r.coef);

  // Restricted estimate b_r = b − A R'(R A R')^-1 R b with A = (X'WX)^-1.
  const MatrixXd ARt = bread.solve(R.transpose());
  const VectorXd b_r = r.coef - ARt * (R * ARt).ldlt().solve(R * r.coef);
  const VectorXd fitted = X * b_r;
  const VectorXd u = absorbed.y - fitted;

  std::vector<char> exceed(static_cast<std::size_t>(opt.reps), 0);
  parallel_for(exceed.size(), opt.threads, [&](std::size_t b) {
    Xoshiro256 rng(derive_seed(opt.seed, static_cast<std::uint64_t>(b)));
    std::vector<double> sign(static_cast<std::size_t>(d.n_clusters));
    for (auto& v : sign) v = rng.below(2) == 0 ? -1.0 : 1.0;
    DesignMatrix z;
    z.y.resize(d.rows());
    for (Eigen::Index i = 0; i < d.rows(); ++i) z.y[i] = sign[static_cast<std::size_t>(d.clusters[static_cast<std::size_t>(i)])] * u[i];
    z.X = MatrixXd(d.rows(), 0);
    z.weights = w;
    z.fixed_effects = d.fixed_effects;
    const VectorXd ystar = fitted + absorb_fixed_effects(z, absorb).y;
    const VectorXd bstar = bread.solve(X.transpose() * ystar.cwiseProduct(w));
    exceed[b] = statistic(bstar, ystar - X * bstar) >= observed ? 1 : 0;
  });
  double count = 0.0;
  for (char e : exceed) count += e;
  return count / static_cast<double>(opt.reps);
}

/// Restriction matrix for "all named coefficients are equal" (adjacent differences).
inline MatrixXd equality_restrictions(const FitResult& r, const std::vector<std::string>& terms) {
  if (terms.size() < 2) throw EstimationError("equality test needs two or more terms");
  MatrixXd R = MatrixXd::Zero(static_cast<Eigen::Index>(terms.size() - 1), r.coef.size());
  for (std::size_t j = 0; j + 1 < terms.size(); ++j) {
    auto a = r.index_of(terms[j]);
    auto b = r.index_of(terms[j + 1]);
    if (!a || !b) throw EstimationError("equality test term missing from fit");
    R(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(*a)) = 1.0;
    R(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(*b)) = -1.0;
  }
  return R;
}

}  // namespace crimelab
