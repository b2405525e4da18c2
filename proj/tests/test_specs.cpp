#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "crimelab/specs.hpp"
#include "crimelab/synthlab.hpp"

using namespace crimelab;

namespace {

synth::DGPConfig noiseless() {
  synth::DGPConfig c;
  c.districts = 20;
  c.regions = 4;
  c.kind = PeriodKind::fiscal_year;
  c.noise_sd = 0.0;
  c.seed = 11;
  return c;
}

SpecConfig spec_for(const synth::DGPConfig& c) { return synth::detail::suite_spec(c); }

double sig4(double x) {
  const double mag = std::pow(10.0, 3 - static_cast<int>(std::floor(std::log10(std::abs(x)))));
  return std::round(x * mag) / mag;
}

}  // namespace

TEST(WeightedMedian, EqualAndUnequalWeights) {
  EXPECT_DOUBLE_EQ(weighted_median({4, 1, 3, 2}, {1, 1, 1, 1}), 2.0);
  EXPECT_DOUBLE_EQ(weighted_median({1, 2, 3}, {1, 1, 5}), 3.0);
  EXPECT_DOUBLE_EQ(weighted_median({1, 2, 3}, {5, 1, 1}), 1.0);
}

TEST(SpecParse, RoundTripAndRejections) {
  const SpecConfig base;
  const auto j = to_json(base);
  EXPECT_EQ(to_json(parse_spec(j)), j);

  auto with_family = j;
  with_family["family"] = "dd";
  EXPECT_NO_THROW(parse_spec(with_family));

  auto typo = j;
  typo["post_strat_fy"] = 2013;
  EXPECT_THROW(parse_spec(typo), SchemaError);

  auto wrong_type = j;
  wrong_type["first_fy"] = "2011";
  EXPECT_THROW(parse_spec(wrong_type), SchemaError);

  auto bad_enum = j;
  bad_enum["post"] = "quarterly";
  EXPECT_THROW(parse_spec(bad_enum), SchemaError);

  auto bad_placebo = j;
  bad_placebo["placebo_post_fy"] = 2013;
  EXPECT_THROW(parse_spec(bad_placebo), SchemaError);
}

TEST(FractionalPost, CohortSchedule) {
  const YearMonth start{2013, 1};
  EXPECT_EQ(fractional_post({2012, 1}, start), 0.0);
  EXPECT_EQ(fractional_post({2012, 4}, start), 0.25);
  EXPECT_EQ(fractional_post({2012, 7}, start), 0.5);
  EXPECT_EQ(fractional_post({2012, 10}, start), 0.75);
  EXPECT_EQ(fractional_post({2013, 1}, start), 1.0);
  EXPECT_EQ(fractional_post({2014, 7}, start), 1.0);
  EXPECT_THROW(fractional_post({2012, 1}, start, 0), DomainError);
}

TEST(Recidivism, OutcomeArithmetic) {
  RecidivismCohort c;
  c.offenders = 100;
  c.reoffenders = 30;
  c.reoffences = 103;
  c.prior_offences = 500;
  const auto o = compute_recidivism_outcomes(c);
  EXPECT_DOUBLE_EQ(*o.reoffending_rate, 0.30);
  EXPECT_DOUBLE_EQ(*o.reoffences_per_offender, 1.03);
  EXPECT_NEAR(*o.reoffences_per_reoffender, 3.4333333333, 1e-9);
  EXPECT_NEAR(*o.intensity_ratio, (103.0 / 30.0) / 5.0, 1e-12);

  c.reoffenders = 0;
  c.reoffences = 0;
  const auto z = compute_recidivism_outcomes(c);
  EXPECT_DOUBLE_EQ(*z.reoffending_rate, 0.0);
  EXPECT_FALSE(z.reoffences_per_reoffender);
  EXPECT_FALSE(z.intensity_ratio);

  c.reoffenders = 10;
  c.prior_offences = 0;
  EXPECT_FALSE(compute_recidivism_outcomes(c).intensity_ratio);

  c.offenders = 0;
  const auto none = compute_recidivism_outcomes(c);
  EXPECT_FALSE(none.reoffending_rate);
  EXPECT_FALSE(none.reoffences_per_offender);
}

TEST(EffectSummary, PublishedMagnitudes) {
  const auto total = summarize_effect(0.0155, 1.1862);
  EXPECT_DOUBLE_EQ(sig4(total.percent_per_sd), 1.839);
  EXPECT_NEAR(total.percent_per_sd, 1.84, 0.005);
  EXPECT_DOUBLE_EQ(sig4(summarize_effect(0.0373, 1.1862).percent_binary), 3.73);
  EXPECT_DOUBLE_EQ(sig4(summarize_effect(0.0484, 1.1862).percent_binary), 4.84);
  const auto mcc = summarize_effect(0.00062, 1.1862, 0.124);
  EXPECT_DOUBLE_EQ(sig4(mcc.percent_per_sd), 0.5931);
  EXPECT_NEAR(mcc.percent_per_sd, 0.6, 0.01);
  EXPECT_THROW(summarize_effect(0.1, 1.0, 0.0), DomainError);
}

TEST(AdjustedImd, ConvexCombination) {
  const double total = 0.135 + 0.135 + 0.093 + 0.093;
  EXPECT_NEAR(adjusted_imd({1, 0, 0, 0}), 0.135 / total, 1e-12);
  EXPECT_NEAR(adjusted_imd({0, 1, 0, 0}), 0.135 / total, 1e-12);
  EXPECT_NEAR(adjusted_imd({0, 0, 1, 0}), 0.093 / total, 1e-12);
  EXPECT_NEAR(adjusted_imd({0, 0, 0, 1}), 0.093 / total, 1e-12);
  EXPECT_NEAR(adjusted_imd({1, 1, 1, 1}), 1.0, 1e-12);
  EXPECT_NEAR(adjusted_imd({-2.5, -2.5, -2.5, -2.5}), -2.5, 1e-12);
}

TEST(Stars, Thresholds) {
  EXPECT_EQ(stars(0.005), "***");
  EXPECT_EQ(stars(0.03), "**");
  EXPECT_EQ(stars(0.07), "*");
  EXPECT_EQ(stars(0.2), "");
}

TEST(DdFamilies, NoiselessPanelRecoversInjectedEffects) {
  auto c = noiseless();
  c.beta = 0.02;
  const auto spec = spec_for(c);
  const auto dd = run_dd(synth::generate_panel(c).panel, spec, "log_rate_total");
  EXPECT_NEAR(dd.fit.coefficient("post_x_austerity"), 0.02, 1e-9);

  // A pre-trend biases the pooled estimate but is what the placebo picks up.
  c.pre_trend = 0.004;
  const auto data = synth::generate_panel(c);
  EXPECT_GT(std::abs(run_dd(data.panel, spec, "log_rate_total").fit.coefficient("post_x_austerity") - 0.02), 1e-4);
  const auto placebo = run_placebo_dd(data.panel, spec, "log_rate_total");
  EXPECT_NEAR(placebo.fit.coefficient("placebo_post_x_austerity"), 0.004, 1e-9);
  EXPECT_EQ(placebo.n, static_cast<std::size_t>(c.districts * 2));

  c.beta = 0.0;
  c.pre_trend = 0.0;
  c.beta_by_year = {0.013, 0.021, 0.012};
  const auto dyn = run_dynamic_dd(synth::generate_panel(c).panel, spec, "log_rate_total");
  ASSERT_EQ(dyn.terms.size(), 3u);
  EXPECT_NEAR(dyn.fit.coefficient("post2013_x_austerity"), 0.013, 1e-9);
  EXPECT_NEAR(dyn.fit.coefficient("post2014_x_austerity"), 0.021, 1e-9);
  EXPECT_NEAR(dyn.fit.coefficient("post2015_x_austerity"), 0.012, 1e-9);
}

TEST(DdFamilies, BinaryTreatmentOnBinaryDgp) {
  auto c = noiseless();
  c.binary_treatment = true;
  c.beta = 0.0373;
  const auto data = synth::generate_panel(c);
  const auto r = run_binary_dd(data.panel, spec_for(c), "log_rate_total");
  EXPECT_NEAR(r.fit.coefficient("post_x_austerity"), 0.0373, 1e-9);
}

TEST(DdFamilies, TruncatedPostWindowDropsLastYear) {
  auto c = noiseless();
  c.beta_by_year = {0.013, 0.021, 0.012};
  auto spec = spec_for(c);
  spec.last_fy = 2014;
  const auto r = run_dynamic_dd(synth::generate_panel(c).panel, spec, "log_rate_total");
  ASSERT_EQ(r.terms.size(), 2u);
  EXPECT_FALSE(r.fit.index_of("post2015_x_austerity"));
  EXPECT_NEAR(r.fit.coefficient("post2014_x_austerity"), 0.021, 1e-9);
}

TEST(DdFamilies, MismatchAndDegenerateTreatment) {
  const auto c = noiseless();
  const auto data = synth::generate_panel(c);
  auto spec = spec_for(c);
  EXPECT_THROW(run_dd(data.panel, spec, "log_rate_arson"), MismatchError);
  spec.controls.push_back("unemployment_rate");
  EXPECT_THROW(run_dd(data.panel, spec, "log_rate_total"), MismatchError);

  auto flat = data.panel;
  for (auto& row : flat.rows) row.sai_pounds = 500.0;
  EXPECT_THROW(run_dd(flat, spec_for(c), "log_rate_total"), EstimationError);
}

TEST(DdFamilies, LaborBatteryUsesRegionByYear) {
  auto c = noiseless();
  c.labor_beta = 0.01;
  auto spec = spec_for(c);
  spec.outcomes = {"employment_rate", "log_weekly_hours"};
  const auto rs = run_labor_market_dd(synth::generate_panel(c).panel, spec);
  ASSERT_EQ(rs.size(), 2u);
  EXPECT_EQ(rs[0].outcome, "employment_rate");
  EXPECT_EQ(rs[1].family, "labor");
}

TEST(Quintiles, EqualPopulationsSplitEvenly) {
  std::map<std::string, double> value, weight;
  for (int i = 0; i < 5; ++i) {
    value["d" + std::to_string(i)] = 10.0 - i;
    weight["d" + std::to_string(i)] = 1.0;
  }
  const auto q = weighted_quintiles(value, weight);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(q.at("d" + std::to_string(i)), 5 - i);

  for (int i = 5; i < 10; ++i) {
    value["d" + std::to_string(i)] = 0.5 + i;
    weight["d" + std::to_string(i)] = 1.0;
  }
  std::map<int, int> sizes;
  for (const auto& [d, k] : weighted_quintiles(value, weight)) ++sizes[k];
  for (int k = 1; k <= 5; ++k) EXPECT_EQ(sizes[k], 2);
}

TEST(Quintiles, HeavyDistrictFillsItsOwnQuintiles) {
  const std::map<std::string, double> value{{"a", 1}, {"b", 2}, {"c", 3}};
  const std::map<std::string, double> weight{{"a", 1}, {"b", 8}, {"c", 1}};
  const auto q = weighted_quintiles(value, weight);
  EXPECT_EQ(q.at("a"), 1);
  EXPECT_EQ(q.at("b"), 3);
  EXPECT_EQ(q.at("c"), 5);
}

TEST(Quintiles, NoiselessTripleDifferenceRecoversProfile) {
  auto c = noiseless();
  c.beta_by_quintile = {0.01, 0.01575, 0.0215, 0.02725, 0.033};
  const auto data = synth::generate_panel(c);
  const auto spec = spec_for(c);
  const auto set = observations_from_panel(data.panel, spec, "log_rate_total");
  const auto r = run_ddd_quintiles(set, data.latent_quintiles, spec, "ddd-mcc");
  for (int k = 1; k <= 5; ++k) {
    EXPECT_NEAR(r.fit.coefficient("post_x_austerity_x_q" + std::to_string(k)),
                c.beta_by_quintile[static_cast<std::size_t>(k - 1)], 1e-9);
  }
  ASSERT_TRUE(r.ratio);
  EXPECT_NEAR(*r.ratio, 3.3, 1e-6);
}

TEST(Quintiles, ResidualizedBasisWithDistrictEffectsOnlyEqualsRaw) {
  auto c = noiseless();
  c.streets = true;
  c.streets_min = 30;
  c.streets_max = 60;
  const auto data = synth::generate_panel(c);
  const auto records = annual_concentration_panel(data.streets, nullptr, 0.25, 50, 3).records;
  auto spec = spec_for(c);
  spec.controls.clear();
  spec.region_fe = FeGranularity::none;
  const auto [raw, res] = build_mcc_change_quintiles(records, data.panel, spec);
  ASSERT_EQ(raw.value.size(), static_cast<std::size_t>(c.districts));
  for (const auto& [d, v] : raw.value) EXPECT_NEAR(res.value.at(d), v, 1e-12) << d;
  EXPECT_EQ(raw.quintile, res.quintile);
}

TEST(Recidivism, CohortObservationsCarryFractionalPost) {
  auto c = noiseless();
  c.kind = PeriodKind::month;
  c.cohorts = true;
  const auto data = synth::generate_panel(c);
  const auto spec = spec_for(c);
  const auto set = observations_from_cohorts(data.cohorts, data.panel, spec, "reoffending_rate", "adults");
  ASSERT_FALSE(set.rows.empty());
  int straddling = 0;
  for (const auto& o : set.rows) {
    EXPECT_GE(o.post_fraction, 0.0);
    EXPECT_LE(o.post_fraction, 1.0);
    if (o.post_fraction > 0.0 && o.post_fraction < 1.0) ++straddling;
  }
  EXPECT_EQ(straddling, 3 * c.districts);
  const auto rs = run_recidivism_dd(data.cohorts, data.panel, spec);
  EXPECT_EQ(rs.size(), recidivism_outcome_names().size());
  EXPECT_THROW(observations_from_cohorts(data.cohorts, DistrictPanel{}, spec, "reoffending_rate", "adults"),
               MismatchError);
}

TEST(Neighborhood, ResidualizedEqualsRawWithoutDistrictYearShocks) {
  auto c = noiseless();
  c.neighborhoods_per_district = 12;
  const auto data = synth::generate_panel(c);
  const auto p = neighborhood_change_profile(data.neighborhoods, data.imd, {2011, 2012}, {2013, 2014, 2015});
  EXPECT_TRUE(p.excluded.empty());
  ASSERT_EQ(p.change.size(), static_cast<std::size_t>(12 * c.districts));
  for (const auto& [lsoa, res] : p.change) {
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(res[k], p.raw_change.at(lsoa)[k], 1e-9) << lsoa;
  }
  for (const auto& [lsoa, pct] : p.percentile) {
    EXPECT_GE(pct, 1);
    EXPECT_LE(pct, 100);
  }

  c.neighborhood_shock_sd = 0.2;
  const auto shocked = synth::generate_panel(c);
  const auto q = neighborhood_change_profile(shocked.neighborhoods, shocked.imd, {2011, 2012}, {2013, 2014, 2015});
  double gap = 0.0;
  for (const auto& [lsoa, res] : q.change) gap = std::max(gap, std::abs(res[0] - q.raw_change.at(lsoa)[0]));
  EXPECT_GT(gap, 1.0);
}

TEST(Neighborhood, IncompleteNeighborhoodsAreExcluded) {
  auto c = noiseless();
  c.neighborhoods_per_district = 5;
  auto data = synth::generate_panel(c);
  const std::string dropped = data.neighborhoods.front().lsoa_code;
  data.neighborhoods.erase(data.neighborhoods.begin());
  data.imd.erase(data.neighborhoods.back().lsoa_code);
  const auto p = neighborhood_change_profile(data.neighborhoods, data.imd, {2011, 2012}, {2013, 2014, 2015});
  ASSERT_EQ(p.excluded.size(), 2u);
  EXPECT_FALSE(p.change.count(dropped));
}

TEST(TableOutput, HeaderStarsAndEqualityRows) {
  auto c = noiseless();
  c.noise_sd = 0.05;
  c.beta_by_year = {0.013, 0.021, 0.012};
  auto spec = spec_for(c);
  spec.equality_bootstrap = 49;
  const auto r = run_dynamic_dd(synth::generate_panel(c).panel, spec, "log_rate_total");
  std::ostringstream out;
  write_table(out, {r}, TreatmentKind::continuous);
  const std::string text = out.str();
  EXPECT_EQ(text.rfind("family,outcome,term,coef,se,t,p,stars,ci_lo,ci_hi,n,districts,pre_mean,treatment_sd,effect_pct,note", 0), 0u);
  EXPECT_NE(text.find("dynamic,log_rate_total,post2014_x_austerity,"), std::string::npos);
  EXPECT_NE(text.find("equality_F"), std::string::npos);
  EXPECT_NE(text.find("equality_wild_bootstrap"), std::string::npos);
  ASSERT_TRUE(r.equality);
  EXPECT_EQ(r.equality->df1, 2);
  EXPECT_EQ(r.equality->bootstrap_reps, 49);

  const auto again = run_dynamic_dd(synth::generate_panel(c).panel, spec, "log_rate_total");
  EXPECT_EQ(again.equality->bootstrap_p, r.equality->bootstrap_p);
}
