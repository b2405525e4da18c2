#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "crimelab/becker.hpp"
#include "crimelab/rng.hpp"

using namespace crimelab;
using namespace crimelab::becker;

namespace {

Params draw(Xoshiro256& rng) {
  Params p;
  p.P = 50.0 + 450.0 * rng.uniform();
  p.S = 100.0 + 900.0 * rng.uniform();
  p.W = 100.0 + 400.0 * rng.uniform();
  p.B = 50.0 + 150.0 * rng.uniform();
  p.u = 0.02 + 0.3 * rng.uniform();
  p.kappa1 = 1e-4 + 1e-2 * rng.uniform();
  p.kappa2 = 1e-3 * rng.uniform();
  p.kappa3 = 0.05 * rng.uniform();
  p.O = 3.0 * rng.uniform();
  return p;
}

}  // namespace

TEST(Becker, ExpectedValues) {
  EXPECT_DOUBLE_EQ(ev_crime(100.0, 400.0, 0.2), 0.8 * 100.0 - 0.2 * 400.0);
  EXPECT_DOUBLE_EQ(ev_work(300.0, 80.0, 0.1), 0.9 * 300.0 + 0.1 * 80.0);
}

TEST(Becker, ClosedFormSolvesIndifference) {
  Xoshiro256 rng(2024);
  for (int i = 0; i < 1000; ++i) {
    const auto p = draw(rng);
    const auto e = equilibrium_crime(p);
    EXPECT_LT(std::abs(e.residual), 1e-10) << i;
    EXPECT_NEAR(e.implied_probability, p.kappa1 * e.C + p.kappa2 * p.O + p.kappa3, 1e-12);
  }
}

TEST(Becker, BenefitDerivativeMatchesFiniteDifference) {
  Xoshiro256 rng(99);
  for (int i = 0; i < 200; ++i) {
    auto p = draw(rng);
    const double h = 1e-3;
    auto up = p, down = p;
    up.B += h;
    down.B -= h;
    const double fd = (equilibrium_crime(up).C - equilibrium_crime(down).C) / (2.0 * h);
    const double analytic = -p.u / (p.kappa1 * (p.P + p.S));
    EXPECT_NEAR(fd, analytic, 1e-6 * std::max(1.0, std::abs(analytic)));
  }
}

TEST(Becker, ElasticityNegativeWhenCrimePositive) {
  Xoshiro256 rng(7);
  int positive = 0;
  for (int i = 0; i < 1000; ++i) {
    auto p = draw(rng);
    p.P += 2000.0;  // make crime pay so C > 0 for most draws
    const auto e = equilibrium_crime(p);
    if (p.u * p.B * e.C > 0.0) {
      ++positive;
      EXPECT_LT(e.elasticity, 0.0);
      EXPECT_NEAR(e.elasticity, -p.u * p.B / (p.kappa1 * (p.P + p.S) * e.C), 1e-12 * std::abs(e.elasticity));
    }
  }
  EXPECT_GT(positive, 900);
}

TEST(Becker, WarningsAndDomain) {
  Params p{100.0, 400.0, 0.0, 300.0, 80.0, 0.1, 0.01, 0.0, 0.0, 0.0};
  const auto e = equilibrium_crime(p);
  EXPECT_LT(e.C, 0.0);
  EXPECT_FALSE(e.warnings.empty());
  EXPECT_TRUE(std::isnan(e.elasticity));

  auto bad = p;
  bad.kappa1 = 0.0;
  EXPECT_THROW(equilibrium_crime(bad), DomainError);
  bad = p;
  bad.P = -500.0;
  EXPECT_THROW(equilibrium_crime(bad), DomainError);
  bad = p;
  bad.u = 1.5;
  EXPECT_THROW(equilibrium_crime(bad), DomainError);
  EXPECT_THROW(benefit_elasticity(p, 0.0), DomainError);
}

TEST(Becker, ReportListsSolution) {
  Params p{3000.0, 400.0, 0.0, 300.0, 80.0, 0.1, 0.01, 0.001, 0.02, 2.0};
  std::ostringstream out;
  write_report(out, p, equilibrium_crime(p));
  EXPECT_EQ(out.str().rfind("parameter,value\n", 0), 0u);
  EXPECT_NE(out.str().find("\nC,"), std::string::npos);
  EXPECT_NE(out.str().find("elasticity_benefits,"), std::string::npos);
}
