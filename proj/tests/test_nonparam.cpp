#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "crimelab/nonparam.hpp"
#include "crimelab/synthlab.hpp"

using namespace crimelab;

namespace {

struct World {
  synth::DGPConfig dgp;
  synth::SynthData data;
  SpecConfig spec;
  ObservationSet set;
};

World make_world(double beta, std::uint64_t seed) {
  World w;
  w.dgp.districts = 30;
  w.dgp.regions = 5;
  w.dgp.beta = beta;
  w.dgp.seed = seed;
  w.data = synth::generate_panel(w.dgp);
  w.spec = synth::detail::suite_spec(w.dgp);
  w.set = observations_from_panel(w.data.panel, w.spec, "log_rate_total");
  return w;
}

ResidualizedPair line_pair(std::size_t n, double slope) {
  ResidualizedPair p;
  p.d.resize(static_cast<Eigen::Index>(n));
  p.y.resize(static_cast<Eigen::Index>(n));
  p.weights.resize(static_cast<Eigen::Index>(n));
  Xoshiro256 rng(5);
  for (std::size_t i = 0; i < n; ++i) {
    const auto e = static_cast<Eigen::Index>(i);
    p.d[e] = rng.normal();
    p.y[e] = slope * p.d[e];
    p.weights[e] = 0.5 + rng.uniform();
  }
  return p;
}

}  // namespace

TEST(Fwl, SlopeEqualsFullModelCoefficient) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto w = make_world(0.02, seed);
    const auto dd = run_dd(w.data.panel, w.spec, "log_rate_total");
    const auto pair = fwl_residualize(w.set, w.spec);
    EXPECT_NEAR(fwl_slope(pair), dd.fit.coefficient("post_x_austerity"), 1e-8);
  }
}

TEST(LocalLinear, ReproducesLinesForEveryKernel) {
  const auto p = line_pair(400, 0.5);
  for (auto k : {Kernel::epanechnikov, Kernel::gaussian, Kernel::uniform, Kernel::triangular}) {
    for (double h : {0.2, 0.7, 5.0}) {
      LocalLinearOptions opt;
      opt.kernel = k;
      opt.bandwidth = h;
      opt.bootstrap = 0;
      const auto c = local_linear_fit(p, opt);
      for (std::size_t i = 0; i < c.grid.size(); ++i) {
        if (c.masked[i]) continue;
        EXPECT_NEAR(c.fit[i], 0.5 * c.grid[i], 1e-6) << to_string(k) << " h=" << h;
        EXPECT_NEAR(c.slope[i], 0.5, 1e-6);
      }
    }
  }
}

TEST(LocalLinear, HugeBandwidthGivesGlobalSlope) {
  const auto w = make_world(0.02, 4);
  const auto pair = fwl_residualize(w.set, w.spec);
  const double global = fwl_slope(pair);
  LocalLinearOptions opt;
  opt.bandwidth = 1e7;
  opt.bootstrap = 0;
  const auto c = local_linear_fit(pair, opt);
  for (std::size_t i = 0; i < c.grid.size(); ++i) {
    ASSERT_FALSE(c.masked[i]);
    EXPECT_NEAR(c.slope[i], global, 1e-6);
  }
}

TEST(LocalLinear, GridAndDefaults) {
  const auto p = line_pair(500, 1.0);
  LocalLinearOptions opt;
  opt.bootstrap = 0;
  const auto c = local_linear_fit(p, opt);
  ASSERT_EQ(c.grid.size(), 100u);
  for (std::size_t i = 1; i < c.grid.size(); ++i) EXPECT_GT(c.grid[i], c.grid[i - 1]);

  std::vector<double> d(p.d.data(), p.d.data() + p.d.size());
  double mean = 0.0;
  for (double v : d) mean += v;
  mean /= static_cast<double>(d.size());
  double ss = 0.0;
  for (double v : d) ss += (v - mean) * (v - mean);
  EXPECT_NEAR(c.bandwidth, 1.06 * std::sqrt(ss / 499.0) * std::pow(500.0, -0.2), 1e-12);
  std::sort(d.begin(), d.end());
  EXPECT_NEAR(c.grid.front(), d[4] + 0.99 * (d[5] - d[4]), 1e-12);
  EXPECT_EQ(c.kernel, Kernel::epanechnikov);
}

TEST(LocalLinear, BandsAreDeterministicAndContainFit) {
  const auto w = make_world(0.0, 6);
  const auto pair = fwl_residualize(w.set, w.spec);
  LocalLinearOptions opt;
  opt.bootstrap = 100;
  opt.seed = 77;
  const auto a = local_linear_fit(pair, opt);
  opt.threads = 3;
  const auto b = local_linear_fit(pair, opt);
  std::size_t shown = 0;
  for (std::size_t i = 0; i < a.grid.size(); ++i) {
    if (a.masked[i]) {
      EXPECT_TRUE(std::isnan(a.lo95[i]));
      continue;
    }
    ++shown;
    EXPECT_EQ(a.lo95[i], b.lo95[i]);
    EXPECT_EQ(a.hi95[i], b.hi95[i]);
    EXPECT_LE(a.lo95[i], a.fit[i]);
    EXPECT_GE(a.hi95[i], a.fit[i]);
  }
  EXPECT_GT(shown, 50u);
  EXPECT_GE(a.critical, 1.96);

  opt.band = BandKind::pointwise;
  const auto pw = local_linear_fit(pair, opt);
  EXPECT_EQ(pw.critical, 1.96);
}

TEST(LocalLinear, ThinWindowsAreMasked) {
  auto p = line_pair(200, 1.0);
  p.clusters.assign(200, 0);
  for (std::size_t i = 0; i < 200; ++i) p.clusters[i] = static_cast<int>(i % 4);
  p.n_clusters = 4;
  LocalLinearOptions opt;
  opt.bootstrap = 0;
  const auto c = local_linear_fit(p, opt);
  for (char m : c.masked) EXPECT_TRUE(m);
  opt.min_clusters = 4;
  const auto d = local_linear_fit(p, opt);
  EXPECT_FALSE(d.masked[50]);
}

TEST(LocalLinear, Errors) {
  const auto p = line_pair(50, 1.0);
  LocalLinearOptions opt;
  opt.bandwidth = -1.0;
  EXPECT_THROW(local_linear_fit(p, opt), DomainError);
  EXPECT_THROW(parse_kernel("biweight"), SchemaError);
  EXPECT_EQ(parse_kernel("triangular"), Kernel::triangular);
  ResidualizedPair flat = p;
  flat.d.setZero();
  EXPECT_THROW(local_linear_fit(flat, {}), DomainError);
}

TEST(LocalLinear, CurveCsv) {
  const auto p = line_pair(300, 1.0);
  LocalLinearOptions opt;
  opt.bootstrap = 20;
  opt.grid_points = 5;
  std::ostringstream out;
  write_curve_csv(out, local_linear_fit(p, opt));
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "grid,fit,lo95,hi95,density");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 5);
}
