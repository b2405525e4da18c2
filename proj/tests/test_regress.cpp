#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "crimelab/regress.hpp"
#include "oracles.hpp"

using namespace crimelab;

namespace {

struct Instance {
  DesignMatrix design;
  std::vector<std::vector<int>> fe_codes;
};

/// Random unbalanced instance with two crossed fixed-effect dimensions,
/// positive weights and clusters nested in the first dimension.
Instance random_instance(std::mt19937_64& gen, int n, int k, int g1, int g2) {
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> u(0.5, 3.0);
  Instance inst;
  auto& d = inst.design;
  d.y.resize(n);
  d.X.resize(n, k);
  d.weights.resize(n);
  std::vector<int> a(n), b(n);
  for (int i = 0; i < n; ++i) {
    a[i] = i < g1 ? i : static_cast<int>(gen() % g1);
    b[i] = i < g2 ? i : static_cast<int>(gen() % g2);
    d.weights[i] = u(gen);
    for (int j = 0; j < k; ++j) d.X(i, j) = z(gen) + 0.3 * a[i] - 0.2 * b[i];
    d.y[i] = 0.5 * d.X(i, 0) + (k > 1 ? -0.25 * d.X(i, 1) : 0.0) + 0.1 * a[i] + 0.05 * b[i] + z(gen);
  }
  for (int j = 0; j < k; ++j) d.names.push_back("x" + std::to_string(j));
  d.fixed_effects = {make_fixed_effect("a", a), make_fixed_effect("b", b)};
  inst.fe_codes = {d.fixed_effects[0].group, d.fixed_effects[1].group};
  d.clusters = d.fixed_effects[0].group;
  d.n_clusters = d.fixed_effects[0].n_groups;
  return inst;
}

DesignMatrix simple_design(std::vector<double> y, std::vector<std::vector<double>> cols,
                           std::vector<double> w) {
  DesignMatrix d;
  const auto n = static_cast<Eigen::Index>(y.size());
  d.y = Eigen::Map<VectorXd>(y.data(), n);
  d.weights = Eigen::Map<VectorXd>(w.data(), n);
  d.X.resize(n, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    d.X.col(static_cast<Eigen::Index>(j)) = Eigen::Map<VectorXd>(cols[j].data(), n);
    d.names.push_back("c" + std::to_string(j));
  }
  return d;
}

}  // namespace

TEST(Absorb, OneDimensionGroupDemeaning) {
  auto d = simple_design({1, 2, 3, 5}, {{0, 0, 0, 0}}, {1, 1, 1, 1});
  d.fixed_effects = {make_fixed_effect("g", std::vector<std::string>{"a", "a", "b", "b"})};
  const auto out = absorb_fixed_effects(d);
  EXPECT_EQ(out.iterations, 1);
  EXPECT_NEAR(out.y[0], -0.5, 1e-15);
  EXPECT_NEAR(out.y[1], 0.5, 1e-15);
  EXPECT_NEAR(out.y[2], -1.0, 1e-15);
  EXPECT_NEAR(out.y[3], 1.0, 1e-15);
}

TEST(Absorb, WeightedMean) {
  auto d = simple_design({4, 8}, {{1, 2}}, {1, 3});
  d.fixed_effects = {make_fixed_effect("g", std::vector<int>{0, 0})};
  const auto out = absorb_fixed_effects(d);
  EXPECT_NEAR(out.y[0], -3.0, 1e-15);
  EXPECT_NEAR(out.y[1], 1.0, 1e-15);
}

TEST(Absorb, TwoCrossedDimensionsMatchDummyResiduals) {
  std::mt19937_64 gen(3);
  auto inst = random_instance(gen, 12, 1, 3, 4);
  const auto out = absorb_fixed_effects(inst.design);
  // Residual of y on the dummies alone equals the absorbed y.
  const Eigen::MatrixXd none(12, 0);
  std::vector<int> clusters(12);
  std::iota(clusters.begin(), clusters.end(), 0);
  const auto ref = oracle::dummy_wls(inst.design.y, none, inst.design.weights, inst.fe_codes, clusters);
  for (int i = 0; i < 12; ++i) EXPECT_NEAR(out.y[i], ref.residuals[i], 1e-8);
}

TEST(Absorb, IdempotentAndNonConvergenceReported) {
  std::mt19937_64 gen(5);
  auto inst = random_instance(gen, 200, 2, 15, 9);
  const auto once = absorb_fixed_effects(inst.design);
  DesignMatrix again = inst.design;
  again.y = once.y;
  again.X = once.X;
  const auto twice = absorb_fixed_effects(again);
  EXPECT_LT((twice.y - once.y).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((twice.X - once.X).cwiseAbs().maxCoeff(), 1e-10);
  try {
    absorb_fixed_effects(inst.design, {1e-10, 1});
    FAIL() << "expected ConvergenceError";
  } catch (const ConvergenceError& e) {
    EXPECT_GT(e.last_change, 1e-10);
  }
}

TEST(WlsSolve, ExactFitAndDuplicateColumn) {
  auto d = simple_design({2, 4, 6, 8, 10}, {{1, 2, 3, 4, 5}, {1, 2, 3, 4, 5}}, {1, 2, 3, 1, 5});
  const VectorXd ref = VectorXd::Ones(2);
  const auto sol = wls_solve(d.y, d.X, d.weights, ref * 10.0);
  ASSERT_EQ(sol.kept.size(), 1u);
  EXPECT_EQ(sol.kept[0], 0);
  ASSERT_EQ(sol.dropped.size(), 1u);
  EXPECT_EQ(sol.dropped[0], 1);
  EXPECT_NEAR(sol.coef[0], 2.0, 1e-13);
  EXPECT_LT(sol.residuals.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(WlsSolve, MatchesNormalEquations) {
  std::mt19937_64 gen(9);
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> u(0.2, 4.0);
  for (int trial = 0; trial < 10; ++trial) {
    MatrixXd X(50, 3);
    VectorXd y(50), w(50);
    for (int i = 0; i < 50; ++i) {
      for (int j = 0; j < 3; ++j) X(i, j) = z(gen);
      y[i] = z(gen);
      w[i] = u(gen);
    }
    const auto sol = wls_solve(y, X, w, VectorXd());
    const VectorXd ref = oracle::normal_equations(y, X, w);
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(sol.coef[j], ref[j], 1e-9 * std::max(1.0, std::abs(ref[j])));
  }
}

TEST(Fit, AllColumnsDroppedIsError) {
  auto d = simple_design({1, 2, 3, 4}, {{1, 1, 2, 2}}, {1, 1, 1, 1});
  d.fixed_effects = {make_fixed_effect("g", std::vector<int>{0, 0, 1, 1})};
  d.clusters = {0, 0, 1, 1};
  d.n_clusters = 2;
  EXPECT_THROW(fit(d), EstimationError);
}

TEST(Fit, ZeroVarianceTreatmentDroppedWithReport) {
  std::mt19937_64 gen(21);
  auto inst = random_instance(gen, 120, 2, 10, 6);
  auto& d = inst.design;
  // Treatment constant within first-dimension groups: absorbed entirely.
  MatrixXd X(d.rows(), 3);
  X.col(0) = VectorXd::NullaryExpr(d.rows(), [&](Eigen::Index i) { return 1.0 + 0.7 * d.fixed_effects[0].group[i]; });
  X.rightCols(2) = d.X;
  d.X = X;
  d.names = {"treat", "x0", "x1"};
  const auto r = fit(d);
  ASSERT_EQ(r.dropped.size(), 1u);
  EXPECT_EQ(r.dropped[0], "treat");
  EXPECT_EQ(r.k, 2u);
  EXPECT_FALSE(r.index_of("treat").has_value());
}

TEST(Fit, MatchesDummyOracleOnRandomInstances) {
  std::mt19937_64 gen(1234);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 60 + static_cast<int>(gen() % 400);
    const int g1 = 5 + static_cast<int>(gen() % 20);
    const int g2 = 3 + static_cast<int>(gen() % 25);
    auto inst = random_instance(gen, n, 3, g1, g2);
    const auto r = fit(inst.design);
    const auto ref = oracle::dummy_wls(inst.design.y, inst.design.X, inst.design.weights,
                                       inst.fe_codes, inst.design.clusters);
    EXPECT_EQ(r.fe_dof + static_cast<int>(r.k), ref.rank) << "trial " << trial;
    for (int j = 0; j < 3; ++j) {
      EXPECT_NEAR(r.coef[j], ref.coef[j], 1e-6 * std::abs(ref.coef[j]) + 1e-12) << "trial " << trial;
      EXPECT_NEAR(r.se(j), ref.se[j], 1e-6 * ref.se[j]) << "trial " << trial;
    }
  }
}

TEST(Fit, OrthogonalityOfResiduals) {
  std::mt19937_64 gen(77);
  auto inst = random_instance(gen, 300, 2, 20, 12);
  const auto r = fit(inst.design);
  for (const auto& fe : inst.design.fixed_effects) {
    VectorXd sums = VectorXd::Zero(fe.n_groups);
    for (Eigen::Index i = 0; i < inst.design.rows(); ++i) sums[fe.group[i]] += inst.design.weights[i] * r.residuals[i];
    EXPECT_LT(sums.cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(Fit, WeightScaleInvariance) {
  std::mt19937_64 gen(8);
  auto inst = random_instance(gen, 200, 2, 12, 7);
  const auto a = fit(inst.design);
  auto scaled = inst.design;
  scaled.weights *= 37.5;
  const auto b = fit(scaled);
  for (int j = 0; j < 2; ++j) {
    EXPECT_NEAR(a.coef[j], b.coef[j], 1e-10 * std::abs(a.coef[j]));
    EXPECT_NEAR(a.se(j), b.se(j), 1e-10 * a.se(j));
  }
  auto unit = inst.design;
  unit.weights.setOnes();
  auto constant = unit;
  constant.weights.setConstant(4.0);
  const auto c = fit(unit), e = fit(constant);
  for (int j = 0; j < 2; ++j) {
    EXPECT_NEAR(c.coef[j], e.coef[j], 1e-12 * std::abs(c.coef[j]));
    EXPECT_NEAR(c.se(j), e.se(j), 1e-12 * c.se(j));
  }
}

TEST(Fit, FrischWaughSlope) {
  std::mt19937_64 gen(19);
  auto inst = random_instance(gen, 250, 3, 10, 8);
  const auto full = fit(inst.design);
  const MatrixXd controls = inst.design.X.rightCols(2);
  const VectorXd ry = residualize(inst.design.y, controls, inst.design.weights, inst.design.fixed_effects);
  const VectorXd rd = residualize(inst.design.X.col(0), controls, inst.design.weights, inst.design.fixed_effects);
  const double slope = (rd.cwiseProduct(inst.design.weights)).dot(ry) / (rd.cwiseProduct(inst.design.weights)).dot(rd);
  EXPECT_NEAR(slope, full.coef[0], 1e-8);
}

TEST(ClusterVcov, SingletonClustersMatchHc1) {
  std::mt19937_64 gen(4);
  std::normal_distribution<double> z;
  const int n = 80;
  MatrixXd X(n, 2);
  VectorXd y(n), w = VectorXd::Ones(n);
  std::vector<int> cl(n);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = z(gen);
    y[i] = 1.0 + 2.0 * X(i, 1) + z(gen) * (1.0 + std::abs(X(i, 1)));
    cl[i] = i;
  }
  const auto sol = wls_solve(y, X, w, VectorXd());
  const MatrixXd V = cluster_robust_vcov(X, w, sol.residuals, cl, n, 2, VcovKind::CR1);
  // HC1 by direct formula: (X'X)^-1 X' diag(e²) X (X'X)^-1 · n/(n−k),
  // times the clustered correction's extra n/(n−1)·(n−1)/n = 1.
  const MatrixXd inv = (X.transpose() * X).inverse();
  const MatrixXd meat = X.transpose() * sol.residuals.array().square().matrix().asDiagonal() * X;
  const MatrixXd hc1 = inv * meat * inv * (static_cast<double>(n) / (n - 2));
  for (int j = 0; j < 2; ++j) EXPECT_NEAR(V(j, j), hc1(j, j), 1e-12 * hc1(j, j));
}

TEST(ClusterVcov, DuplicatedRowsKeepEstimates) {
  std::mt19937_64 gen(31);
  auto inst = random_instance(gen, 100, 2, 10, 5);
  const auto a = fit(inst.design);
  DesignMatrix dup = inst.design;
  const auto n = inst.design.rows();
  dup.y.resize(2 * n);
  dup.X.resize(2 * n, 2);
  dup.weights.resize(2 * n);
  dup.y << inst.design.y, inst.design.y;
  dup.X << inst.design.X, inst.design.X;
  dup.weights << inst.design.weights, inst.design.weights;
  for (auto& fe : dup.fixed_effects) {
    auto g = fe.group;
    fe.group.insert(fe.group.end(), g.begin(), g.end());
  }
  auto c = dup.clusters;
  dup.clusters.insert(dup.clusters.end(), c.begin(), c.end());
  const auto b = fit(dup);
  const double n1 = static_cast<double>(n), k1 = a.fe_dof + a.k;
  const double small_a = (n1 - 1) / (n1 - k1), small_b = (2 * n1 - 1) / (2 * n1 - k1);
  for (int j = 0; j < 2; ++j) {
    EXPECT_NEAR(a.coef[j], b.coef[j], 1e-9);
    // Scores double and the bread halves: CR0 is unchanged.
    EXPECT_NEAR(a.se(j) / std::sqrt(small_a), b.se(j) / std::sqrt(small_b), 1e-9);
  }
}

TEST(ClusterVcov, HomoskedasticClusteredCloseToClassical) {
  std::mt19937_64 gen(55);
  std::normal_distribution<double> z;
  double ratio_sum = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const int G = 200, per = 5, n = G * per;
    DesignMatrix d;
    d.y.resize(n);
    d.X.resize(n, 1);
    d.weights = VectorXd::Ones(n);
    std::vector<int> g(n);
    for (int i = 0; i < n; ++i) {
      g[i] = i / per;
      d.X(i, 0) = z(gen);
      d.y[i] = 0.3 * d.X(i, 0) + z(gen);
    }
    d.names = {"x"};
    d.fixed_effects = {make_fixed_effect("g", g)};
    d.clusters = d.fixed_effects[0].group;
    d.n_clusters = G;
    FitOptions cr0;
    cr0.vcov = VcovKind::CR0;
    const auto r = fit(d, cr0);
    const auto r1 = fit(d);
    const double factor = (G / (G - 1.0)) * ((n - 1.0) / (n - G - 1.0));
    EXPECT_NEAR(r1.vcov(0, 0), factor * r.vcov(0, 0), 1e-12 * r1.vcov(0, 0));
    const double s2 = r.residuals.squaredNorm() / (n - G - 1);
    VectorXd xt = absorb_fixed_effects(d).X.col(0);
    const double classical = std::sqrt(s2 / xt.squaredNorm());
    ratio_sum += std::pow(r.se(0) / classical, 2);
  }
  // With effects nested in clusters the uncorrected sandwich tracks the
  // classical variance on average.
  EXPECT_NEAR(ratio_sum / 100.0, 1.0, 0.05);
}

TEST(Fit, WaldEqualityTest) {
  std::mt19937_64 gen(66);
  auto inst = random_instance(gen, 300, 2, 20, 6);
  const auto r = fit(inst.design);
  const auto t = r.equality_test({"x0", "x1"});
  EXPECT_EQ(t.df1, 1);
  EXPECT_EQ(t.df2, static_cast<int>(r.g) - 1);
  const double diff = r.coef[0] - r.coef[1];
  const double var = r.vcov(0, 0) + r.vcov(1, 1) - 2 * r.vcov(0, 1);
  EXPECT_NEAR(t.statistic, diff * diff / var, 1e-9 * t.statistic);
}

TEST(AbsorbedDof, ConnectedComponents) {
  // Two disconnected blocks: {a0,a1}x{b0} and {a2}x{b1,b2}.
  std::vector<FixedEffect> fes{make_fixed_effect("a", std::vector<int>{0, 1, 2, 2}),
                               make_fixed_effect("b", std::vector<int>{0, 0, 1, 2})};
  EXPECT_EQ(absorbed_dof(fes), 3 + 3 - 2);
  EXPECT_EQ(absorbed_dof({fes[0]}), 3);
}

TEST(Fit, TwoHundredRowPanelMatchesDummyCoefficients) {
  std::mt19937_64 gen(200);
  auto inst = random_instance(gen, 200, 2, 20, 10);
  const auto r = fit(inst.design);
  const auto ref = oracle::dummy_wls(inst.design.y, inst.design.X, inst.design.weights, inst.fe_codes,
                                     inst.design.clusters);
  for (int j = 0; j < 2; ++j) EXPECT_NEAR(r.coef[j], ref.coef[j], 1e-8 * std::abs(ref.coef[j]));
}

TEST(ClusterVcov, HomoskedasticWithoutAbsorptionWithin15Percent) {
  std::mt19937_64 gen(56);
  std::normal_distribution<double> z;
  int within = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const int G = 400, per = 5, n = G * per;
    DesignMatrix d;
    d.y.resize(n);
    d.X.resize(n, 2);
    d.weights = VectorXd::Ones(n);
    d.clusters.resize(n);
    for (int i = 0; i < n; ++i) {
      d.clusters[i] = i / per;
      d.X(i, 0) = 1.0;
      d.X(i, 1) = z(gen);
      d.y[i] = 1.0 + 0.3 * d.X(i, 1) + z(gen);
    }
    d.names = {"const", "x"};
    d.n_clusters = G;
    const auto r = fit(d);
    const double s2 = r.residuals.squaredNorm() / (n - 2);
    const double classical = std::sqrt(s2 * (d.X.transpose() * d.X).inverse()(1, 1));
    if (std::abs(r.se(1) / classical - 1.0) < 0.15) ++within;
  }
  EXPECT_GE(within, 90);
}
