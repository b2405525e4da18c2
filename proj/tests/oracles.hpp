#pragma once

// Independent reference computations used only by tests. Nothing here calls
// into the library routine it is used to check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

/// Concentration by explicit sort of per-street counts.
inline double sorted_concentration(std::vector<long> counts, long streets, double k) {
  long total = 0;
  for (long c : counts) total += c;
  std::sort(counts.begin(), counts.end(), std::greater<>());
  long cum = 0;
  long m = 0;
  for (long c : counts) {
    cum += c;
    ++m;
    if (static_cast<double>(cum) >= k * static_cast<double>(total)) break;
  }
  return static_cast<double>(m) / static_cast<double>(streets);
}

struct McEstimate {
  double mean;
  double se;
};

/// Uniform allocation simulated with std::mt19937_64 and a hash map of
/// occupied streets.
inline McEstimate uniform_cc(long n_crimes, long n_streets, double k, long runs,
                             std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_int_distribution<long> pick(0, n_streets - 1);
  double sum = 0.0, sum2 = 0.0;
  std::map<long, long> occupied;
  for (long r = 0; r < runs; ++r) {
    occupied.clear();
    for (long i = 0; i < n_crimes; ++i) ++occupied[pick(gen)];
    std::vector<long> counts;
    counts.reserve(occupied.size());
    for (const auto& [s, c] : occupied) counts.push_back(c);
    const double cc = sorted_concentration(counts, n_streets, k);
    sum += cc;
    sum2 += cc * cc;
  }
  const double mean = sum / runs;
  const double var = (sum2 - runs * mean * mean) / (runs - 1);
  return {mean, std::sqrt(std::max(0.0, var) / runs)};
}

struct DummyFit {
  Eigen::VectorXd coef;  // regressors only
  Eigen::VectorXd se;    // CR1 clustered
  Eigen::VectorXd se_cr0;
  Eigen::VectorXd residuals;
  int rank = 0;
};

/// Weighted least squares with explicit dummy columns for every fixed-effect
/// group, solved by complete orthogonal decomposition (minimum norm), with
/// the sandwich taken from the pseudo-inverse of Z'WZ.
inline DummyFit dummy_wls(const Eigen::VectorXd& y, const Eigen::MatrixXd& X,
                          const Eigen::VectorXd& w,
                          const std::vector<std::vector<int>>& fes,
                          const std::vector<int>& clusters) {
  const Eigen::Index n = y.size();
  const Eigen::Index k = X.cols();
  Eigen::Index extra = 0;
  std::vector<int> sizes;
  for (const auto& fe : fes) {
    const int g = *std::max_element(fe.begin(), fe.end()) + 1;
    sizes.push_back(g);
    extra += g;
  }
  Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(n, k + extra);
  Z.leftCols(k) = X;
  Eigen::Index offset = k;
  for (std::size_t d = 0; d < fes.size(); ++d) {
    for (Eigen::Index i = 0; i < n; ++i) Z(i, offset + fes[d][static_cast<std::size_t>(i)]) = 1.0;
    offset += sizes[d];
  }
  const Eigen::VectorXd sw = w.cwiseSqrt();
  const Eigen::MatrixXd Zs = Z.array().colwise() * sw.array();
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(Zs);
  cod.setThreshold(1e-10);
  const Eigen::VectorXd b = cod.solve(y.cwiseProduct(sw));
  DummyFit out;
  out.rank = static_cast<int>(cod.rank());
  out.coef = b.head(k);
  out.residuals = y - Z * b;

  const Eigen::MatrixXd ztwz = Z.transpose() * (Z.array().colwise() * w.array()).matrix();
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> codb(ztwz);
  codb.setThreshold(1e-10);
  const Eigen::MatrixXd bread = codb.pseudoInverse();
  const int G = *std::max_element(clusters.begin(), clusters.end()) + 1;
  Eigen::MatrixXd scores = Eigen::MatrixXd::Zero(G, Z.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    scores.row(clusters[static_cast<std::size_t>(i)]) += w[i] * out.residuals[i] * Z.row(i);
  }
  const Eigen::MatrixXd V0 = bread * (scores.transpose() * scores) * bread;
  const double factor = (static_cast<double>(G) / (G - 1)) *
                        (static_cast<double>(n - 1) / static_cast<double>(n - out.rank));
  out.se_cr0 = V0.diagonal().head(k).cwiseSqrt();
  out.se = (factor * V0.diagonal().head(k)).cwiseSqrt();
  return out;
}

/// Plain normal-equations weighted least squares.
inline Eigen::VectorXd normal_equations(const Eigen::VectorXd& y, const Eigen::MatrixXd& X,
                                        const Eigen::VectorXd& w) {
  const Eigen::MatrixXd xtwx = X.transpose() * w.asDiagonal() * X;
  const Eigen::VectorXd xtwy = X.transpose() * w.asDiagonal() * y;
  return xtwx.inverse() * xtwy;
}

}  // namespace oracle
