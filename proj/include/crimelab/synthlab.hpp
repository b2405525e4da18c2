#pragma once

// Synthetic district panels with known treatment effects, and a recovery
// suite that measures bias, RMSE and interval coverage of the estimators.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "crimelab/concentration.hpp"
#include "crimelab/errors.hpp"
#include "crimelab/ingest.hpp"
#include "crimelab/nonparam.hpp"
#include "crimelab/parallel.hpp"
#include "crimelab/rng.hpp"
#include "crimelab/specs.hpp"

namespace crimelab::synth {

struct DGPConfig {
  int districts = 50;
  int regions = 10;
  PeriodKind kind = PeriodKind::month;
  int first_fy = 2011;
  int last_fy = 2015;
  int post_start_fy = 2013;
  int placebo_post_fy = 2012;

  double base_log_rate = 1.7228;  // log 5.6 crimes per 1000 per month
  double district_fe_sd = 0.3;
  double region_period_sd = 0.03;
  double noise_sd = 0.05;
  double rho = 0.3;
  double population_mean = 250000.0;
  double population_sd = 0.4;  // log-normal spread of district populations

  bool binary_treatment = false;
  double sai_mean = 479.58;
  double sai_sd = 118.62;
  double sai_min = 247.0;
  double sai_max = 914.0;

  double beta = 0.0;                     // pooled effect per treatment unit
  std::vector<double> beta_by_year;      // one per post fiscal year; overrides beta
  std::vector<double> beta_by_quintile;  // five; overrides beta, keyed by the latent basis quintile
  double pre_trend = 0.0;                // extra effect in the placebo post year
  std::vector<double> control_effects;   // one per default control, zero when empty

  double labor_beta = 0.0;
  double recidivism_beta = 0.0;
  bool cohorts = false;
  double cohort_offenders = 300.0;

  int neighborhoods_per_district = 0;
  int neighborhood_growth_step = 1;  // within-district centred count change per deprivation rank
  double neighborhood_shock_sd = 0.0;
  bool neighborhood_noise = false;

  bool streets = false;
  int streets_min = 100;
  int streets_max = 400;
  double crimes_per_street = 2.0;  // per fiscal year
  double hotspot_sd = 0.8;         // log-normal spread of street propensities
  double concentration_move = 0.0; // post-period share of crimes moved onto the top decile

  std::uint64_t seed = 1;

  void validate() const {
    if (districts < 10) throw DomainError("DGP needs at least 10 districts");
    if (regions < 2) throw DomainError("DGP needs at least 2 regions");
    if (regions > districts) throw DomainError("more regions than districts");
    if (last_fy - first_fy < 1) throw DomainError("DGP needs at least 2 periods");
    for (double sd : {district_fe_sd, region_period_sd, noise_sd, sai_sd, hotspot_sd, neighborhood_shock_sd}) {
      if (sd < 0.0) throw DomainError("DGP standard deviations must be non-negative");
    }
    if (!(rho >= 0.0 && rho < 1.0)) throw DomainError("serial correlation must lie in [0, 1)");
    if (!(sai_min < sai_max)) throw DomainError("SAI bounds are empty");
    if (!beta_by_quintile.empty() && beta_by_quintile.size() != 5) throw DomainError("beta_by_quintile needs five values");
    if (!beta_by_year.empty() && static_cast<int>(beta_by_year.size()) != last_fy - post_start_fy + 1) {
      throw DomainError("beta_by_year needs one value per post fiscal year");
    }
    if (!control_effects.empty() && control_effects.size() != default_controls().size()) {
      throw DomainError("control_effects needs one value per default control");
    }
    if (streets && !(streets_min >= 10 && streets_max >= streets_min)) throw DomainError("bad street range");
    if (!(concentration_move >= 0.0 && concentration_move <= 1.0)) throw DomainError("concentration_move must lie in [0, 1]");
    if (!(population_mean > 0.0)) throw DomainError("population_mean must be positive");
  }
};

inline DGPConfig parse_dgp(const nlohmann::json& j) {
  if (!j.is_object()) throw SchemaError("DGP config must be a JSON object");
  DGPConfig c;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "districts") c.districts = v.get<int>();
      else if (key == "regions") c.regions = v.get<int>();
      else if (key == "period_kind") c.kind = parse_period_kind(v.get<std::string>());
      else if (key == "first_fy") c.first_fy = v.get<int>();
      else if (key == "last_fy") c.last_fy = v.get<int>();
      else if (key == "post_start_fy") c.post_start_fy = v.get<int>();
      else if (key == "placebo_post_fy") c.placebo_post_fy = v.get<int>();
      else if (key == "base_log_rate") c.base_log_rate = v.get<double>();
      else if (key == "district_fe_sd") c.district_fe_sd = v.get<double>();
      else if (key == "region_period_sd") c.region_period_sd = v.get<double>();
      else if (key == "noise_sd") c.noise_sd = v.get<double>();
      else if (key == "rho") c.rho = v.get<double>();
      else if (key == "population_mean") c.population_mean = v.get<double>();
      else if (key == "population_sd") c.population_sd = v.get<double>();
      else if (key == "binary_treatment") c.binary_treatment = v.get<bool>();
      else if (key == "sai_mean") c.sai_mean = v.get<double>();
      else if (key == "sai_sd") c.sai_sd = v.get<double>();
      else if (key == "sai_min") c.sai_min = v.get<double>();
      else if (key == "sai_max") c.sai_max = v.get<double>();
      else if (key == "beta") c.beta = v.get<double>();
      else if (key == "beta_by_year") c.beta_by_year = v.get<std::vector<double>>();
      else if (key == "beta_by_quintile") c.beta_by_quintile = v.get<std::vector<double>>();
      else if (key == "pre_trend") c.pre_trend = v.get<double>();
      else if (key == "control_effects") c.control_effects = v.get<std::vector<double>>();
      else if (key == "labor_beta") c.labor_beta = v.get<double>();
      else if (key == "recidivism_beta") c.recidivism_beta = v.get<double>();
      else if (key == "cohorts") c.cohorts = v.get<bool>();
      else if (key == "cohort_offenders") c.cohort_offenders = v.get<double>();
      else if (key == "neighborhoods_per_district") c.neighborhoods_per_district = v.get<int>();
      else if (key == "neighborhood_growth_step") c.neighborhood_growth_step = v.get<int>();
      else if (key == "neighborhood_shock_sd") c.neighborhood_shock_sd = v.get<double>();
      else if (key == "neighborhood_noise") c.neighborhood_noise = v.get<bool>();
      else if (key == "streets") c.streets = v.get<bool>();
      else if (key == "streets_min") c.streets_min = v.get<int>();
      else if (key == "streets_max") c.streets_max = v.get<int>();
      else if (key == "crimes_per_street") c.crimes_per_street = v.get<double>();
      else if (key == "hotspot_sd") c.hotspot_sd = v.get<double>();
      else if (key == "concentration_move") c.concentration_move = v.get<double>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "comment") continue;
      else throw SchemaError("unknown DGP field \"" + key + "\"");
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("DGP config has a field of the wrong type: ") + e.what());
  }
  c.validate();
  return c;
}

struct DistrictTruth {
  std::string district_id;
  std::string region_id;
  double sai_pounds = 0.0;
  double treatment = 0.0;  // in estimation units (£100s or the indicator)
  double latent_basis = 0.0;
  int latent_quintile = 0;
  double concentration_move = 0.0;
};

struct SynthData {
  DistrictPanel panel;
  std::vector<DistrictTruth> districts;
  QuintileAssignment latent_quintiles;
  std::vector<RecidivismCohort> cohorts;
  std::vector<NeighborhoodCount> neighborhoods;
  std::map<std::string, ImdDomains> imd;
  StreetCountTable streets;
};

namespace detail {

inline std::string pad_id(char prefix, int i, int width) {
  std::string s = std::to_string(i);
  return std::string(1, prefix) + std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(s.size()))), '0') + s;
}

inline std::int64_t binomial(Xoshiro256& rng, std::int64_t n, double p) {
  p = std::clamp(p, 0.0, 1.0);
  std::int64_t k = 0;
  for (std::int64_t i = 0; i < n; ++i) k += rng.uniform() < p ? 1 : 0;
  return k;
}

inline double effect_at(const DGPConfig& c, const DistrictTruth& d, int fy) {
  if (fy >= c.post_start_fy) {
    if (!c.beta_by_quintile.empty()) return c.beta_by_quintile[static_cast<std::size_t>(d.latent_quintile - 1)];
    if (!c.beta_by_year.empty()) return c.beta_by_year[static_cast<std::size_t>(fy - c.post_start_fy)];
    return c.beta;
  }
  return fy == c.placebo_post_fy ? c.pre_trend : 0.0;
}

}  // namespace detail

/// Streets per district with log-normal crime propensities; in post years a
/// share of each year's crimes is moved onto the top decile of streets.
inline StreetCountTable generate_street_counts(const DGPConfig& c, const std::vector<DistrictTruth>& ds) {
  StreetCountTable t;
  static const std::array<std::pair<const char*, double>, 3> shares{{{"property", 0.55}, {"violent", 0.3}, {"other", 0.15}}};
  for (std::size_t i = 0; i < ds.size(); ++i) {
    Xoshiro256 rng(derive_seed(derive_seed(c.seed, "streets"), i));
    const auto n_streets = static_cast<std::int64_t>(c.streets_min + static_cast<int>(rng.below(static_cast<std::uint64_t>(c.streets_max - c.streets_min + 1))));
    std::vector<double> propensity(static_cast<std::size_t>(n_streets));
    for (auto& p : propensity) p = std::exp(c.hotspot_sd * rng.normal());
    std::vector<std::size_t> order(propensity.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return propensity[a] > propensity[b]; });
    const std::size_t top = std::max<std::size_t>(1, propensity.size() / 10);
    std::vector<double> cum(propensity.size());
    std::partial_sum(propensity.begin(), propensity.end(), cum.begin());
    auto pick = [&]() {
      const double u = rng.uniform() * cum.back();
      return static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), u) - cum.begin());
    };
    for (int fy = c.first_fy; fy <= c.last_fy; ++fy) {
      const auto crimes = std::max<std::int64_t>(1, rng.poisson(c.crimes_per_street * static_cast<double>(n_streets)));
      const double move = fy >= c.post_start_fy ? ds[i].concentration_move : 0.0;
      for (std::int64_t k = 0; k < crimes; ++k) {
        std::size_t s = pick();
        if (move > 0.0 && rng.uniform() < move) s = order[rng.below(top)];
        const double u = rng.uniform();
        const char* cat = u < shares[0].second ? shares[0].first : u < shares[0].second + shares[1].second ? shares[1].first : shares[2].first;
        ++t.cells[{ds[i].district_id, fy, cat}][StreetKey{static_cast<std::int64_t>(s), static_cast<std::int64_t>(i), "street " + std::to_string(s)}];
      }
    }
  }
  return t;
}

/// Draws one synthetic world. Everything is a function of the config.
inline SynthData generate_panel(const DGPConfig& c) {
  c.validate();
  SynthData out;
  const int width = static_cast<int>(std::to_string(c.districts).size());
  Xoshiro256 drng(derive_seed(c.seed, "districts"));

  std::vector<double> pop_base(static_cast<std::size_t>(c.districts)), fe(pop_base.size()), police0(pop_base.size()),
      police_trend(pop_base.size()), wage0(pop_base.size());
  std::vector<std::array<double, 5>> shares0(pop_base.size());
  static const std::array<double, 5> share_means{0.045, 0.05, 0.035, 0.065, 0.07};
  for (int i = 0; i < c.districts; ++i) {
    DistrictTruth d;
    d.district_id = detail::pad_id('D', i + 1, width);
    d.region_id = detail::pad_id('R', i % c.regions + 1, 2);
    do {
      d.sai_pounds = drng.normal(c.sai_mean, c.sai_sd);
    } while (d.sai_pounds < c.sai_min || d.sai_pounds > c.sai_max);
    d.latent_basis = drng.normal();
    const auto u = static_cast<std::size_t>(i);
    pop_base[u] = c.population_mean * std::exp(c.population_sd * drng.normal());
    fe[u] = c.district_fe_sd * drng.normal();
    police0[u] = 2.2 + 0.3 * drng.normal();
    police_trend[u] = -0.05 + 0.03 * drng.normal();
    wage0[u] = 500.0 + 50.0 * drng.normal();
    for (std::size_t j = 0; j < 5; ++j) shares0[u][j] = share_means[j] * (1.0 + 0.1 * drng.normal());
    out.districts.push_back(std::move(d));
  }
  {
    std::map<std::string, double> basis, weight;
    for (std::size_t i = 0; i < out.districts.size(); ++i) {
      basis[out.districts[i].district_id] = out.districts[i].latent_basis;
      weight[out.districts[i].district_id] = pop_base[i];
    }
    out.latent_quintiles.basis = QuintileBasis::mcc_change_raw;
    out.latent_quintiles.value = basis;
    out.latent_quintiles.quintile = weighted_quintiles(basis, weight);
    std::vector<double> values, weights;
    for (std::size_t i = 0; i < out.districts.size(); ++i) {
      values.push_back(out.districts[i].sai_pounds);
      weights.push_back(pop_base[i]);
    }
    const double median = weighted_median(values, weights);
    for (auto& d : out.districts) {
      d.latent_quintile = out.latent_quintiles.quintile.at(d.district_id);
      d.treatment = c.binary_treatment ? (d.sai_pounds >= median ? 1.0 : 0.0) : d.sai_pounds / 100.0;
      d.concentration_move = c.concentration_move;
    }
  }

  SampleWindow window;
  window.first = YearMonth{c.first_fy, 4};
  window.last = YearMonth{c.last_fy + 1, 3};
  const auto periods = window_periods(window, c.kind);
  const double per_year = c.kind == PeriodKind::month ? 12.0 : 1.0;

  std::map<std::pair<std::string, int>, double> shocks;
  Xoshiro256 srng(derive_seed(c.seed, "region_period"));
  for (int r = 0; r < c.regions; ++r) {
    for (int p : periods) shocks[{detail::pad_id('R', r + 1, 2), p}] = c.region_period_sd * srng.normal();
  }
  const auto controls = default_controls();
  std::vector<double> gamma = c.control_effects;
  if (gamma.empty()) gamma.assign(controls.size(), 0.0);

  out.panel.kind = c.kind;
  for (std::size_t i = 0; i < out.districts.size(); ++i) {
    const auto& d = out.districts[i];
    Xoshiro256 rng(derive_seed(derive_seed(c.seed, "noise"), i));
    double e = c.noise_sd * rng.normal();
    double e_prop = 0.5 * c.noise_sd * rng.normal();
    double e_viol = 0.5 * c.noise_sd * rng.normal();
    const double innov = std::sqrt(1.0 - c.rho * c.rho);
    for (std::size_t p = 0; p < periods.size(); ++p) {
      if (p > 0) {
        e = c.rho * e + innov * c.noise_sd * rng.normal();
        e_prop = c.rho * e_prop + innov * 0.5 * c.noise_sd * rng.normal();
        e_viol = c.rho * e_viol + innov * 0.5 * c.noise_sd * rng.normal();
      }
      const double years = static_cast<double>(p) / per_year;
      PanelRow row;
      row.district_id = d.district_id;
      row.region_id = d.region_id;
      row.period = periods[p];
      row.fiscal_year = fiscal_year_of_period(periods[p], c.kind);
      row.population = std::round(pop_base[i] * (1.0 + 0.005 * years));
      row.working_age_population = std::round(0.63 * row.population);
      row.weight = row.population;
      row.sai_pounds = d.sai_pounds;
      row.police_per_1000 = police0[i] + police_trend[i] * years + 0.02 * rng.normal();
      row.median_weekly_wage = wage0[i] + 5.0 * years + 5.0 * rng.normal();
      for (std::size_t j = 0; j < 5; ++j) row.male_shares[j] = shares0[i][j] * (1.0 + 0.01 * rng.normal());

      double x_gamma = 0.0;
      for (std::size_t j = 0; j < controls.size(); ++j) x_gamma += gamma[j] * *row.column(controls[j]);
      const double effect = detail::effect_at(c, d, row.fiscal_year) * d.treatment;
      const double log_total = c.base_log_rate + fe[i] + shocks.at({d.region_id, periods[p]}) + x_gamma + effect + e;
      const double scale = c.kind == PeriodKind::month ? 1.0 : 12.0;
      auto put = [&](const std::string& name, double log_rate) {
        const double rate = std::exp(log_rate);
        row.values["log_rate_" + name] = log_rate;
        row.values["rate_" + name] = rate;
        row.values["count_" + name] = std::round(rate * row.population / 1000.0);
      };
      put("total", log_total + std::log(scale));
      put("property", log_total + std::log(0.55 * scale) + e_prop);
      put("violent", log_total + std::log(0.3 * scale) + e_viol);
      const double post = row.fiscal_year >= c.post_start_fy ? 1.0 : 0.0;
      row.values["employment_rate"] = 0.72 + 0.01 * fe[i] + c.labor_beta * post * d.treatment + 0.01 * rng.normal();
      row.values["log_weekly_hours"] = std::log(32.0) + c.labor_beta * post * d.treatment + 0.01 * rng.normal();
      out.panel.rows.push_back(std::move(row));
    }
  }

  if (c.cohorts) {
    Xoshiro256 rng(derive_seed(c.seed, "cohorts"));
    for (const auto& d : out.districts) {
      for (YearMonth m{c.first_fy, 4}; m.index() <= YearMonth{c.last_fy + 1, 1}.index(); m = YearMonth::from_index(m.index() + 3)) {
        RecidivismCohort co;
        co.district_id = d.district_id;
        co.cohort_start = m;
        co.group = "adults";
        co.offenders = std::max<std::int64_t>(1, rng.poisson(c.cohort_offenders));
        const double post = fractional_post(m, YearMonth{c.post_start_fy, 1});
        const double p = 0.30 + c.recidivism_beta * post * d.treatment + 0.01 * rng.normal();
        co.reoffenders = detail::binomial(rng, co.offenders, p);
        co.reoffences = co.reoffenders + rng.poisson(2.4 * static_cast<double>(co.reoffenders));
        co.prior_offences = rng.poisson(3.0 * static_cast<double>(co.offenders));
        out.cohorts.push_back(co);
      }
    }
  }

  if (c.neighborhoods_per_district > 0) {
    Xoshiro256 rng(derive_seed(c.seed, "neighborhoods"));
    const int L = c.neighborhoods_per_district;
    for (const auto& d : out.districts) {
      std::vector<std::pair<double, std::string>> ranked;
      std::vector<std::array<double, 3>> base;  // property, violent, other
      const double floor_count = 2.0 * L * std::abs(c.neighborhood_growth_step);
      for (int j = 0; j < L; ++j) {
        const std::string lsoa = d.district_id + detail::pad_id('N', j + 1, 3);
        ImdDomains dom{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
        out.imd[lsoa] = dom;
        ranked.emplace_back(adjusted_imd(dom), lsoa);
        const double scale = std::exp(0.3 * rng.normal());
        base.push_back({std::round(33.0 * scale) + floor_count, std::round(18.0 * scale) + floor_count,
                        std::round(9.0 * scale)});
      }
      std::vector<std::size_t> idx(ranked.size());
      std::iota(idx.begin(), idx.end(), 0);
      std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return ranked[a] < ranked[b]; });
      // Changes sum to zero within the district, so district-year means stay
      // put when there are no shocks.
      std::vector<double> change(ranked.size());
      for (std::size_t r = 0; r < idx.size(); ++r) {
        change[idx[r]] = static_cast<double>(c.neighborhood_growth_step) * static_cast<double>(2 * static_cast<int>(r + 1) - L - 1);
      }
      for (int fy = c.first_fy; fy <= c.last_fy; ++fy) {
        const double shock = 1.0 + c.neighborhood_shock_sd * rng.normal();
        const double post = fy >= c.post_start_fy ? 1.0 : 0.0;
        for (std::size_t j = 0; j < ranked.size(); ++j) {
          std::array<std::int64_t, 3> k{};
          for (std::size_t cat = 0; cat < 3; ++cat) {
            const double mean = std::max(0.0, (base[j][cat] + (cat < 2 ? post * change[j] : 0.0)) * shock);
            k[cat] = c.neighborhood_noise ? rng.poisson(mean) : static_cast<std::int64_t>(std::llround(mean));
          }
          NeighborhoodCount n;
          n.lsoa_code = ranked[j].second;
          n.district_id = d.district_id;
          n.year = fy;
          n.property = k[0];
          n.violent = k[1];
          n.total = k[0] + k[1] + k[2];
          out.neighborhoods.push_back(n);
        }
      }
    }
  }

  if (c.streets) out.streets = generate_street_counts(c, out.districts);
  return out;
}

// ---------------------------------------------------------------------------
// Recovery suite

struct SuiteConfig {
  DGPConfig dgp;
  std::vector<std::string> estimators{"dd", "binary", "dynamic", "placebo", "ddd-mcc", "ddd-police", "recidivism", "nonparam", "mcc"};
  int reps = 200;
  std::uint64_t seed = 1;
  int threads = 1;
  int mcc_runs = 200;
  int bootstrap = 200;
};

/// Per-replication outcome of one estimator term.
struct Draw {
  double estimate = kNaN;
  double se = kNaN;
  double lo = kNaN;
  double hi = kNaN;
  double p = kNaN;
};

struct RecoveryRow {
  std::string estimator;
  std::string term;
  double truth = kNaN;
  int reps = 0;
  double mean_estimate = kNaN;
  double bias = kNaN;
  double rmse = kNaN;
  double coverage = kNaN;
  double rejection_rate = kNaN;
  double median_estimate = kNaN;
};

struct RecoveryReport {
  std::vector<RecoveryRow> rows;
  std::map<std::string, double> metrics;  // estimator-specific summaries
};

namespace detail {

struct RepResult {
  std::map<std::pair<std::string, std::string>, Draw> draws;
  std::map<std::string, double> flags;
};

inline Draw draw_of(const SpecResult& r, const std::string& term) {
  Draw d;
  const auto i = *r.fit.index_of(term);
  d.estimate = r.fit.coef[static_cast<Eigen::Index>(i)];
  d.se = r.fit.se(i);
  const double crit = r.fit.critical_value(0.95);
  d.lo = d.estimate - crit * d.se;
  d.hi = d.estimate + crit * d.se;
  d.p = r.fit.p_value(i);
  return d;
}

/// The bootstrap decision when available, the analytic F otherwise; both
/// are kept so the report shows the size of each.
inline void record_equality(RepResult& out, const std::string& est, const WaldTest& t) {
  out.flags[est + "_equality_reject_analytic"] = t.p_value < 0.05 ? 1.0 : 0.0;
  const double p = t.bootstrap_reps > 0 ? t.bootstrap_p : t.p_value;
  out.flags[est + "_equality_reject"] = p < 0.05 ? 1.0 : 0.0;
}

inline SpecConfig suite_spec(const DGPConfig& c) {
  SpecConfig s;
  s.first_fy = c.first_fy;
  s.last_fy = c.last_fy;
  s.post_start_fy = c.post_start_fy;
  s.placebo_post_fy = c.placebo_post_fy;
  return s;
}

inline double truth_for(const DGPConfig& c, const std::string& est, const std::string& term) {
  if (est == "dynamic") {
    const int fy = std::stoi(term.substr(4, 4));
    return c.beta_by_year.empty() ? c.beta : c.beta_by_year[static_cast<std::size_t>(fy - c.post_start_fy)];
  }
  if (est == "placebo") return c.pre_trend;
  if (est == "ddd-mcc") {
    const int q = term.back() - '0';
    return c.beta_by_quintile.empty() ? c.beta : c.beta_by_quintile[static_cast<std::size_t>(q - 1)];
  }
  if (est == "ddd-police") return c.beta_by_quintile.empty() ? c.beta : kNaN;
  if (est == "recidivism") return c.recidivism_beta;
  if (est == "nonparam") return c.beta;
  if (est == "mcc") return kNaN;
  if (est == "binary" && !c.binary_treatment) return kNaN;
  return c.beta_by_quintile.empty() && c.beta_by_year.empty() ? c.beta : kNaN;
}

inline RepResult run_replication(const SuiteConfig& suite, std::size_t rep) {
  DGPConfig c = suite.dgp;
  c.seed = derive_seed(suite.seed, static_cast<std::uint64_t>(rep));
  auto has = [&](const char* e) {
    return std::find(suite.estimators.begin(), suite.estimators.end(), e) != suite.estimators.end();
  };
  c.cohorts = c.cohorts || has("recidivism");
  c.streets = c.streets || has("mcc");
  const auto data = generate_panel(c);
  const auto spec = suite_spec(c);
  RepResult out;
  const std::string outcome = "log_rate_total";
  for (const auto& est : suite.estimators) {
    if (est == "dd" || est == "binary" || est == "dynamic" || est == "placebo") {
      SpecResult r = est == "dd"       ? run_dd(data.panel, spec, outcome)
                     : est == "binary" ? run_binary_dd(data.panel, spec, outcome)
                     : est == "dynamic" ? run_dynamic_dd(data.panel, spec, outcome)
                                        : run_placebo_dd(data.panel, spec, outcome);
      for (const auto& t : r.terms) out.draws[{est, t}] = draw_of(r, t);
      if (est == "dynamic" && r.terms.size() == 3) {
        const double b1 = r.fit.coefficient(r.terms[0]), b2 = r.fit.coefficient(r.terms[1]), b3 = r.fit.coefficient(r.terms[2]);
        out.flags["dynamic_inverse_u"] = (b2 > b1 && b2 > b3) ? 1.0 : 0.0;
      }
      if (est == "dynamic" && r.equality) record_equality(out, est, *r.equality);
    } else if (est == "ddd-mcc" || est == "ddd-police") {
      const auto set = observations_from_panel(data.panel, spec, outcome);
      const auto q = est == "ddd-mcc" ? data.latent_quintiles
                                      : build_police_quintiles(data.panel, spec, QuintileBasis::police_level);
      const auto r = run_ddd_quintiles(set, q, spec, est);
      for (const auto& t : r.terms) out.draws[{est, t}] = draw_of(r, t);
      out.flags[est + "_ratio"] = *r.ratio;
      record_equality(out, est, *r.equality);
      bool monotone = true;
      for (std::size_t k = 1; k < r.terms.size(); ++k) {
        monotone = monotone && r.fit.coefficient(r.terms[k]) > r.fit.coefficient(r.terms[k - 1]);
      }
      out.flags[est + "_monotone"] = monotone ? 1.0 : 0.0;
    } else if (est == "recidivism") {
      auto s = spec;
      s.outcomes = {"reoffending_rate"};
      const auto rs = run_recidivism_dd(data.cohorts, data.panel, s);
      for (const auto& r : rs) out.draws[{est, r.outcome}] = draw_of(r, r.terms[0]);
    } else if (est == "nonparam") {
      const auto set = observations_from_panel(data.panel, spec, outcome);
      const auto pair = fwl_residualize(set, spec);
      LocalLinearOptions opt;
      opt.bootstrap = suite.bootstrap;
      opt.seed = derive_seed(c.seed, "bootstrap");
      const auto curve = local_linear_fit(pair, opt);
      bool contains = true;
      for (std::size_t k = 0; k < curve.grid.size(); ++k) {
        if (curve.masked[k]) continue;
        contains = contains && curve.lo95[k] <= 0.0 && curve.hi95[k] >= 0.0;
      }
      out.flags["nonparam_band_contains_zero"] = contains ? 1.0 : 0.0;
      Draw d;
      d.estimate = fwl_slope(pair);
      out.draws[{est, "fwl_slope"}] = d;
    } else if (est == "mcc") {
      const auto panel = annual_concentration_panel(data.streets, nullptr, 0.25, suite.mcc_runs,
                                                    derive_seed(c.seed, "mcc"), 1);
      double pre = 0.0, post = 0.0;
      int npre = 0, npost = 0;
      for (const auto& r : panel.records) {
        if (r.category != "total") continue;
        if (r.year >= c.post_start_fy) {
          post += r.mcc;
          ++npost;
        } else {
          pre += r.mcc;
          ++npre;
        }
      }
      Draw d;
      d.estimate = post / npost - pre / npre;
      out.draws[{est, "mean_mcc_change"}] = d;
    } else {
      throw SchemaError("unknown estimator \"" + est + "\" in recovery suite");
    }
  }
  return out;
}

}  // namespace detail

/// Replications run in parallel with per-replication seeds; aggregation is
/// in replication order, so the report does not depend on thread count.
/// {"dgp": {...}, "estimators": [...], "reps", "seed", "threads", "mcc_runs", "bootstrap"}.
inline SuiteConfig parse_suite(const nlohmann::json& j) {
  if (!j.is_object()) throw SchemaError("suite config must be a JSON object");
  SuiteConfig s;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "dgp") s.dgp = parse_dgp(v);
      else if (key == "estimators") s.estimators = v.get<std::vector<std::string>>();
      else if (key == "reps") s.reps = v.get<int>();
      else if (key == "seed") s.seed = v.get<std::uint64_t>();
      else if (key == "threads") s.threads = v.get<int>();
      else if (key == "mcc_runs") s.mcc_runs = v.get<int>();
      else if (key == "bootstrap") s.bootstrap = v.get<int>();
      else if (key == "comment") continue;
      else throw SchemaError("unknown suite field \"" + key + "\"");
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("suite config has a field of the wrong type: ") + e.what());
  }
  if (s.estimators.empty()) throw SchemaError("suite lists no estimators");
  return s;
}

inline RecoveryReport run_recovery_suite(const SuiteConfig& suite) {
  if (suite.reps < 2) throw DomainError("recovery suite needs at least two replications");
  suite.dgp.validate();
  std::vector<detail::RepResult> reps(static_cast<std::size_t>(suite.reps));
  parallel_for(reps.size(), static_cast<unsigned>(std::max(1, suite.threads)),
               [&](std::size_t r) { reps[r] = detail::run_replication(suite, r); });

  RecoveryReport report;
  std::map<std::pair<std::string, std::string>, std::vector<Draw>> by_term;
  std::vector<std::pair<std::string, std::string>> order;
  for (const auto& rep : reps) {
    for (const auto& [key, d] : rep.draws) {
      if (!by_term.count(key)) order.push_back(key);
      by_term[key].push_back(d);
    }
  }
  // Keep the configured estimator order, terms in first-seen order.
  std::stable_sort(order.begin(), order.end(), [&](const auto& a, const auto& b) {
    auto pos = [&](const std::string& e) { return std::find(suite.estimators.begin(), suite.estimators.end(), e) - suite.estimators.begin(); };
    return pos(a.first) < pos(b.first);
  });
  for (const auto& key : order) {
    const auto& draws = by_term[key];
    RecoveryRow row;
    row.estimator = key.first;
    row.term = key.second;
    row.truth = detail::truth_for(suite.dgp, key.first, key.second);
    row.reps = static_cast<int>(draws.size());
    double sum = 0.0, sq = 0.0;
    int covered = 0, rejected = 0, with_ci = 0;
    std::vector<double> est;
    for (const auto& d : draws) {
      sum += d.estimate;
      est.push_back(d.estimate);
      if (std::isfinite(row.truth)) sq += (d.estimate - row.truth) * (d.estimate - row.truth);
      if (std::isfinite(d.lo)) {
        ++with_ci;
        if (std::isfinite(row.truth) && d.lo <= row.truth && row.truth <= d.hi) ++covered;
        if (d.p < 0.05) ++rejected;
      }
    }
    const double n = static_cast<double>(draws.size());
    row.mean_estimate = sum / n;
    std::sort(est.begin(), est.end());
    row.median_estimate = crimelab::detail::quantile_sorted(est, 0.5);
    if (std::isfinite(row.truth)) {
      row.bias = row.mean_estimate - row.truth;
      row.rmse = std::sqrt(sq / n);
      if (with_ci > 0) row.coverage = static_cast<double>(covered) / with_ci;
    }
    if (with_ci > 0) row.rejection_rate = static_cast<double>(rejected) / with_ci;
    report.rows.push_back(row);
  }
  std::map<std::string, std::vector<double>> flags;
  for (const auto& rep : reps) {
    for (const auto& [k, v] : rep.flags) flags[k].push_back(v);
  }
  for (auto& [k, v] : flags) {
    if (k.size() > 6 && k.substr(k.size() - 6) == "_ratio") {
      std::sort(v.begin(), v.end());
      report.metrics[k + "_median"] = crimelab::detail::quantile_sorted(v, 0.5);
    } else {
      double s = 0.0;
      for (double x : v) s += x;
      report.metrics[k + "_rate"] = s / static_cast<double>(v.size());
    }
  }
  return report;
}

inline void write_report_csv(std::ostream& out, const RecoveryReport& r) {
  csv::write_row(out, {"estimator", "term", "truth", "reps", "mean_estimate", "median_estimate", "bias", "rmse",
                       "coverage", "rejection_rate"});
  for (const auto& row : r.rows) {
    csv::write_row(out, {row.estimator, row.term, crimelab::detail::num(row.truth), std::to_string(row.reps),
                         crimelab::detail::num(row.mean_estimate), crimelab::detail::num(row.median_estimate),
                         crimelab::detail::num(row.bias), crimelab::detail::num(row.rmse),
                         crimelab::detail::num(row.coverage), crimelab::detail::num(row.rejection_rate)});
  }
}

inline nlohmann::json report_json(const RecoveryReport& r) {
  auto num = [](double v) -> nlohmann::json { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"estimator", row.estimator}, {"term", row.term}, {"truth", num(row.truth)},
                    {"reps", row.reps}, {"mean_estimate", num(row.mean_estimate)},
                    {"median_estimate", num(row.median_estimate)}, {"bias", num(row.bias)},
                    {"rmse", num(row.rmse)}, {"coverage", num(row.coverage)},
                    {"rejection_rate", num(row.rejection_rate)}});
  }
  nlohmann::json metrics = nlohmann::json::object();
  for (const auto& [k, v] : r.metrics) metrics[k] = num(v);
  return {{"rows", rows}, {"metrics", metrics}};
}

}  // namespace crimelab::synth
