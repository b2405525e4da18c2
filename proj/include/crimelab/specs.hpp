#pragma once

// Difference-in-differences specifications on the district panel: pooled,
// binary, dynamic, placebo, triple differences by quintile, recidivism with a
// fractional post indicator, labor-market batteries, effect-size summaries,
// and the neighborhood deprivation profile.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "crimelab/concentration.hpp"
#include "crimelab/csv.hpp"
#include "crimelab/errors.hpp"
#include "crimelab/ingest.hpp"
#include "crimelab/regress.hpp"

namespace crimelab {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// Smallest v whose cumulative weight (values ≤ v) reaches half the total.
/// At exactly half the lower value wins.
inline double weighted_median(const std::vector<double>& values, const std::vector<double>& weights) {
  if (values.empty()) throw DomainError("weighted median of an empty set");
  if (values.size() != weights.size()) throw DomainError("values and weights differ in length");
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
  double total = 0.0;
  for (double w : weights) {
    if (!(w > 0.0)) throw DomainError("weighted median needs positive weights");
    total += w;
  }
  double cum = 0.0;
  for (auto i : order) {
    cum += weights[i];
    if (2.0 * cum >= total) return values[i];
  }
  return values[order.back()];
}

// ---------------------------------------------------------------------------
// Configuration

enum class TreatmentKind { continuous, binary };
enum class PostKind { pooled, dynamic, placebo, fractional };
enum class FeGranularity { period, fiscal_year, none };
enum class WeightMode { panel, base_year, none };

inline std::vector<std::string> default_controls() {
  std::vector<std::string> c{"police_per_1000", "median_weekly_wage"};
  c.insert(c.end(), kMaleShareColumns.begin(), kMaleShareColumns.end());
  return c;
}

struct SpecConfig {
  std::vector<std::string> outcomes{"log_rate_total"};
  TreatmentKind treatment = TreatmentKind::continuous;
  PostKind post = PostKind::pooled;
  std::vector<std::string> controls = default_controls();
  bool district_fe = true;
  FeGranularity region_fe = FeGranularity::period;
  WeightMode weights = WeightMode::panel;
  VcovKind vcov = VcovKind::CR1;
  int first_fy = 2011;
  int last_fy = 2015;
  int post_start_fy = 2013;
  int placebo_post_fy = 2012;
  YearMonth fractional_post_start{2013, 1};
  int cohort_months = 12;
  double treatment_scale = 100.0;  // pounds per treatment unit
  std::string group;               // recidivism offender group; empty = every group
  std::string category = "total";  // concentration category for quintile bases
  int basis_from_fy = 2012;
  int basis_to_fy = 2015;
  AbsorbOptions absorb{};
  int equality_bootstrap = 399;  // wild cluster draws for joint equality tests; 0 = analytic only
  std::uint64_t bootstrap_seed = 1;
};

namespace detail {

template <class E>
E enum_from(const std::string& s, std::initializer_list<std::pair<const char*, E>> table,
            const std::string& field) {
  for (const auto& [name, value] : table) {
    if (s == name) return value;
  }
  throw SchemaError("spec field " + field + ": unknown value \"" + s + "\"");
}

template <class E>
std::string enum_name(E v, std::initializer_list<std::pair<const char*, E>> table) {
  for (const auto& [name, value] : table) {
    if (v == value) return name;
  }
  return "?";
}

inline const auto& treatment_names() {
  static const std::initializer_list<std::pair<const char*, TreatmentKind>> t{
      {"continuous", TreatmentKind::continuous}, {"binary", TreatmentKind::binary}};
  return t;
}
inline const auto& post_names() {
  static const std::initializer_list<std::pair<const char*, PostKind>> t{
      {"pooled", PostKind::pooled},
      {"dynamic", PostKind::dynamic},
      {"placebo", PostKind::placebo},
      {"fractional", PostKind::fractional}};
  return t;
}
inline const auto& fe_names() {
  static const std::initializer_list<std::pair<const char*, FeGranularity>> t{
      {"period", FeGranularity::period},
      {"fiscal_year", FeGranularity::fiscal_year},
      {"none", FeGranularity::none}};
  return t;
}
inline const auto& weight_names() {
  static const std::initializer_list<std::pair<const char*, WeightMode>> t{
      {"panel", WeightMode::panel}, {"base_year", WeightMode::base_year}, {"none", WeightMode::none}};
  return t;
}

}  // namespace detail

inline nlohmann::json to_json(const SpecConfig& s) {
  return {
      {"outcomes", s.outcomes},
      {"treatment", detail::enum_name(s.treatment, detail::treatment_names())},
      {"post", detail::enum_name(s.post, detail::post_names())},
      {"controls", s.controls},
      {"district_fe", s.district_fe},
      {"region_fe", detail::enum_name(s.region_fe, detail::fe_names())},
      {"weights", detail::enum_name(s.weights, detail::weight_names())},
      {"vcov", to_string(s.vcov)},
      {"first_fy", s.first_fy},
      {"last_fy", s.last_fy},
      {"post_start_fy", s.post_start_fy},
      {"placebo_post_fy", s.placebo_post_fy},
      {"fractional_post_start", s.fractional_post_start.str()},
      {"cohort_months", s.cohort_months},
      {"treatment_scale", s.treatment_scale},
      {"group", s.group},
      {"category", s.category},
      {"basis_from_fy", s.basis_from_fy},
      {"basis_to_fy", s.basis_to_fy},
      {"absorb_tol", s.absorb.tol},
      {"absorb_max_iter", s.absorb.max_iter},
      {"equality_bootstrap", s.equality_bootstrap},
      {"bootstrap_seed", s.bootstrap_seed},
  };
}

/// Reads a spec from JSON. Unknown keys are rejected so typos surface.
inline SpecConfig parse_spec(const nlohmann::json& j) {
  if (!j.is_object()) throw SchemaError("spec must be a JSON object");
  SpecConfig s;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "outcomes") s.outcomes = v.get<std::vector<std::string>>();
      else if (key == "outcome") s.outcomes = {v.get<std::string>()};
      else if (key == "treatment") s.treatment = detail::enum_from(v.get<std::string>(), detail::treatment_names(), key);
      else if (key == "post") s.post = detail::enum_from(v.get<std::string>(), detail::post_names(), key);
      else if (key == "controls") s.controls = v.get<std::vector<std::string>>();
      else if (key == "district_fe") s.district_fe = v.get<bool>();
      else if (key == "region_fe") s.region_fe = detail::enum_from(v.get<std::string>(), detail::fe_names(), key);
      else if (key == "weights") s.weights = detail::enum_from(v.get<std::string>(), detail::weight_names(), key);
      else if (key == "vcov") s.vcov = parse_vcov_kind(v.get<std::string>());
      else if (key == "first_fy") s.first_fy = v.get<int>();
      else if (key == "last_fy") s.last_fy = v.get<int>();
      else if (key == "post_start_fy") s.post_start_fy = v.get<int>();
      else if (key == "placebo_post_fy") s.placebo_post_fy = v.get<int>();
      else if (key == "fractional_post_start") {
        auto m = YearMonth::parse(v.get<std::string>());
        if (!m) throw SchemaError("spec field fractional_post_start must be YYYY-MM");
        s.fractional_post_start = *m;
      } else if (key == "cohort_months") s.cohort_months = v.get<int>();
      else if (key == "treatment_scale") s.treatment_scale = v.get<double>();
      else if (key == "group") s.group = v.get<std::string>();
      else if (key == "category") s.category = v.get<std::string>();
      else if (key == "basis_from_fy") s.basis_from_fy = v.get<int>();
      else if (key == "basis_to_fy") s.basis_to_fy = v.get<int>();
      else if (key == "absorb_tol") s.absorb.tol = v.get<double>();
      else if (key == "absorb_max_iter") s.absorb.max_iter = v.get<int>();
      else if (key == "equality_bootstrap") s.equality_bootstrap = v.get<int>();
      else if (key == "bootstrap_seed") s.bootstrap_seed = v.get<std::uint64_t>();
      else if (key == "family" || key == "comment") continue;
      else throw SchemaError("unknown spec field \"" + key + "\"");
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("spec has a field of the wrong type: ") + e.what());
  }
  if (s.outcomes.empty()) throw SchemaError("spec lists no outcomes");
  if (s.first_fy > s.last_fy) throw SchemaError("spec window is empty");
  if (!(s.treatment_scale > 0.0)) throw SchemaError("treatment_scale must be positive");
  if (s.cohort_months < 1) throw SchemaError("cohort_months must be at least 1");
  if (s.equality_bootstrap < 0) throw SchemaError("equality_bootstrap must be non-negative");
  if (s.placebo_post_fy >= s.post_start_fy || s.placebo_post_fy <= s.first_fy) {
    throw SchemaError("placebo_post_fy must fall strictly inside the pre-policy years");
  }
  return s;
}

// ---------------------------------------------------------------------------
// Observations

/// One estimation row, independent of where it came from (district panel,
/// concentration panel, recidivism cohorts).
struct Observation {
  std::string district_id;
  std::string region_id;
  int period = 0;  // fixed-effect time key
  int fiscal_year = 0;
  double weight = 1.0;
  double sai_pounds = 0.0;
  double post_fraction = 0.0;
  double y = 0.0;
  std::vector<double> controls;
};

struct ObservationSet {
  std::string outcome;
  std::vector<std::string> control_names;
  std::vector<Observation> rows;
  std::size_t skipped_undefined = 0;
};

namespace detail {

inline std::vector<double> read_controls(const PanelRow& row, const std::vector<std::string>& names) {
  std::vector<double> out;
  out.reserve(names.size());
  for (const auto& n : names) {
    auto v = row.column(n);
    if (!v) throw MismatchError("panel has no control column \"" + n + "\" (district " + row.district_id + ")");
    out.push_back(*v);
  }
  return out;
}

/// Weight of each district's first row in the panel.
inline std::map<std::string, double> base_year_weights(const DistrictPanel& panel) {
  std::map<std::string, std::pair<int, double>> first;
  for (const auto& r : panel.rows) {
    auto [it, fresh] = first.emplace(r.district_id, std::make_pair(r.period, r.weight));
    if (!fresh && r.period < it->second.first) it->second = {r.period, r.weight};
  }
  std::map<std::string, double> out;
  for (const auto& [d, pw] : first) out[d] = pw.second;
  return out;
}

inline double pick_weight(const PanelRow& r, WeightMode mode, const std::map<std::string, double>& base) {
  switch (mode) {
    case WeightMode::panel: return r.weight;
    case WeightMode::base_year: return base.at(r.district_id);
    case WeightMode::none: return 1.0;
  }
  return 1.0;
}

}  // namespace detail

/// Rows of the district panel inside the spec's fiscal-year window with a
/// defined value for `outcome`.
inline ObservationSet observations_from_panel(const DistrictPanel& panel, const SpecConfig& spec,
                                              const std::string& outcome) {
  ObservationSet set;
  set.outcome = outcome;
  set.control_names = spec.controls;
  const auto base = detail::base_year_weights(panel);
  bool seen = false;
  for (const auto& r : panel.rows) {
    if (r.fiscal_year < spec.first_fy || r.fiscal_year > spec.last_fy) continue;
    auto y = r.column(outcome);
    if (!y) {
      ++set.skipped_undefined;
      continue;
    }
    seen = true;
    Observation o;
    o.district_id = r.district_id;
    o.region_id = r.region_id;
    o.period = spec.region_fe == FeGranularity::fiscal_year ? r.fiscal_year : r.period;
    o.fiscal_year = r.fiscal_year;
    o.weight = detail::pick_weight(r, spec.weights, base);
    o.sai_pounds = r.sai_pounds;
    o.y = *y;
    o.controls = detail::read_controls(r, spec.controls);
    set.rows.push_back(std::move(o));
  }
  if (!seen) throw MismatchError("outcome \"" + outcome + "\" is not defined in any panel row of the window");
  return set;
}

/// District covariates averaged within fiscal year, for joining annual data
/// (concentration) onto a monthly panel.
inline std::map<std::pair<std::string, int>, PanelRow> annual_rows(const DistrictPanel& panel) {
  std::map<std::pair<std::string, int>, std::pair<PanelRow, int>> acc;
  for (const auto& r : panel.rows) {
    auto& [sum, n] = acc[{r.district_id, r.fiscal_year}];
    if (n == 0) {
      sum = r;
      sum.values.clear();
      sum.period = r.fiscal_year;
    } else {
      sum.population += r.population;
      sum.working_age_population += r.working_age_population;
      sum.weight += r.weight;
      sum.police_per_1000 += r.police_per_1000;
      sum.median_weekly_wage += r.median_weekly_wage;
      for (std::size_t j = 0; j < 5; ++j) sum.male_shares[j] += r.male_shares[j];
    }
    ++n;
  }
  std::map<std::pair<std::string, int>, PanelRow> out;
  for (auto& [key, sn] : acc) {
    auto& [r, n] = sn;
    const double k = n;
    r.population /= k;
    r.working_age_population /= k;
    r.weight /= k;
    r.police_per_1000 /= k;
    r.median_weekly_wage /= k;
    for (auto& s : r.male_shares) s /= k;
    out.emplace(key, std::move(r));
  }
  return out;
}

/// Concentration outcomes ("mcc_total", "cc_raw_violent", ...) joined onto
/// annual district covariates. The time key is the fiscal year.
inline ObservationSet observations_from_concentration(const std::vector<ConcentrationRecord>& records,
                                                      const DistrictPanel& panel, const SpecConfig& spec,
                                                      const std::string& outcome) {
  std::string measure, category;
  for (const char* m : {"mcc_", "cc_raw_", "cc_sim_mean_"}) {
    if (outcome.rfind(m, 0) == 0) {
      measure = std::string(m, std::strlen(m) - 1);
      category = outcome.substr(std::strlen(m));
    }
  }
  if (measure.empty()) throw MismatchError("concentration outcome must be mcc_<category>, cc_raw_<category> or cc_sim_mean_<category>");
  const auto annual = annual_rows(panel);
  std::map<std::string, double> base;
  for (const auto& [key, r] : annual) {
    auto it = base.find(key.first);
    if (it == base.end()) base[key.first] = r.weight;
  }
  ObservationSet set;
  set.outcome = outcome;
  set.control_names = spec.controls;
  for (const auto& rec : records) {
    if (rec.category != category || rec.year < spec.first_fy || rec.year > spec.last_fy) continue;
    auto it = annual.find({rec.district_id, rec.year});
    if (it == annual.end()) {
      throw MismatchError("no panel covariates for district " + rec.district_id + " fiscal year " +
                          std::to_string(rec.year));
    }
    const PanelRow& r = it->second;
    Observation o;
    o.district_id = rec.district_id;
    o.region_id = r.region_id;
    o.period = rec.year;
    o.fiscal_year = rec.year;
    o.weight = detail::pick_weight(r, spec.weights, base);
    o.sai_pounds = r.sai_pounds;
    o.y = measure == "mcc" ? rec.mcc : measure == "cc_raw" ? rec.cc_raw : rec.cc_sim_mean;
    o.controls = detail::read_controls(r, spec.controls);
    set.rows.push_back(std::move(o));
  }
  if (set.rows.empty()) throw MismatchError("no concentration records for category " + category + " in the window");
  return set;
}

// ---------------------------------------------------------------------------
// Design construction

/// District-level weight: mean of the district's row weights.
inline std::map<std::string, double> district_weights(const ObservationSet& set) {
  std::map<std::string, std::pair<double, int>> acc;
  for (const auto& o : set.rows) {
    auto& [s, n] = acc[o.district_id];
    s += o.weight;
    ++n;
  }
  std::map<std::string, double> out;
  for (const auto& [d, sn] : acc) out[d] = sn.first / sn.second;
  return out;
}

/// Treatment intensity per district: SAI in `treatment_scale` units, or the
/// indicator SAI ≥ weighted median across districts.
inline std::map<std::string, double> district_treatment(const ObservationSet& set, const SpecConfig& spec) {
  std::map<std::string, double> sai;
  for (const auto& o : set.rows) sai[o.district_id] = o.sai_pounds;
  std::map<std::string, double> out;
  if (spec.treatment == TreatmentKind::continuous) {
    for (const auto& [d, v] : sai) out[d] = v / spec.treatment_scale;
    return out;
  }
  const auto w = district_weights(set);
  std::vector<double> values, weights;
  for (const auto& [d, v] : sai) {
    values.push_back(v);
    weights.push_back(w.at(d));
  }
  const double median = weighted_median(values, weights);
  for (const auto& [d, v] : sai) out[d] = v >= median ? 1.0 : 0.0;
  return out;
}

/// SD across districts of the treatment in estimation units.
inline double treatment_sd(const ObservationSet& set, const SpecConfig& spec) {
  std::map<std::string, double> sai;
  for (const auto& o : set.rows) sai[o.district_id] = o.sai_pounds / spec.treatment_scale;
  if (sai.size() < 2) return kNaN;
  double mean = 0.0;
  for (const auto& [d, v] : sai) mean += v;
  mean /= static_cast<double>(sai.size());
  double ss = 0.0;
  for (const auto& [d, v] : sai) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(sai.size() - 1));
}

/// Treatment terms evaluated on a subset of rows.
struct SpecTerms {
  std::vector<std::string> names;
  std::vector<std::size_t> rows;
  MatrixXd values;  // rows.size() × names.size()
  std::vector<char> pre;  // per selected row: belongs to the pre-period
};

inline DesignMatrix assemble_design(const ObservationSet& set, const SpecConfig& spec, const SpecTerms& terms) {
  const auto n = static_cast<Eigen::Index>(terms.rows.size());
  const auto t = static_cast<Eigen::Index>(terms.names.size());
  const auto c = static_cast<Eigen::Index>(set.control_names.size());
  if (n == 0) throw EstimationError("no observations in the estimation sample");
  DesignMatrix d;
  d.y.resize(n);
  d.X.resize(n, t + c);
  d.weights.resize(n);
  d.names = terms.names;
  d.names.insert(d.names.end(), set.control_names.begin(), set.control_names.end());
  std::vector<std::string> district(static_cast<std::size_t>(n)), region_time(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& o = set.rows[terms.rows[static_cast<std::size_t>(i)]];
    d.y[i] = o.y;
    d.weights[i] = o.weight;
    d.X.row(i).head(t) = terms.values.row(i);
    for (Eigen::Index j = 0; j < c; ++j) d.X(i, t + j) = o.controls[static_cast<std::size_t>(j)];
    district[static_cast<std::size_t>(i)] = o.district_id;
    const int key = spec.region_fe == FeGranularity::fiscal_year ? o.fiscal_year : o.period;
    region_time[static_cast<std::size_t>(i)] = o.region_id + "|" + std::to_string(key);
  }
  if (spec.district_fe) d.fixed_effects.push_back(make_fixed_effect("district", district));
  if (spec.region_fe != FeGranularity::none) d.fixed_effects.push_back(make_fixed_effect("region_x_time", region_time));
  d.clusters = encode_labels(district, &d.n_clusters);
  return d;
}

struct SpecResult {
  std::string family;
  std::string outcome;
  FitResult fit;
  std::vector<std::string> terms;
  std::size_t n = 0;
  std::size_t districts = 0;
  double pre_mean = kNaN;
  double treatment_sd = kNaN;
  std::optional<WaldTest> equality;
  std::optional<double> ratio;  // β5/β1 for quintile triple differences
  std::size_t skipped = 0;
  std::string note;
};

namespace detail {

inline bool is_post(const Observation& o, const SpecConfig& spec) { return o.fiscal_year >= spec.post_start_fy; }

inline SpecResult finish(const ObservationSet& set, const SpecConfig& spec, const SpecTerms& terms,
                         std::string family, bool equality = false) {
  const auto design = assemble_design(set, spec, terms);
  FitOptions opt;
  opt.absorb = spec.absorb;
  opt.vcov = spec.vcov;
  SpecResult r;
  r.fit = fit(design, opt);
  for (const auto& name : terms.names) {
    if (std::find(r.fit.dropped.begin(), r.fit.dropped.end(), name) != r.fit.dropped.end()) {
      throw EstimationError("treatment term " + name + " has no variation after absorbing fixed effects");
    }
  }
  if (equality && terms.names.size() >= 2) {
    // A singular contrast covariance (e.g. an exact fit) leaves the
    // coefficients usable; the test is reported as unavailable.
    try {
      r.equality = r.fit.equality_test(terms.names);
      if (spec.equality_bootstrap > 0) {
        WildBootstrapOptions wb;
        wb.reps = spec.equality_bootstrap;
        wb.seed = spec.bootstrap_seed;
        r.equality->bootstrap_p = wild_cluster_wald_p(design, r.fit, equality_restrictions(r.fit, terms.names), wb, spec.absorb);
        r.equality->bootstrap_reps = spec.equality_bootstrap;
      }
    } catch (const EstimationError& e) {
      r.equality.reset();
      r.note = std::string("equality test unavailable: ") + e.what();
    }
  }
  r.family = std::move(family);
  r.outcome = set.outcome;
  r.terms = terms.names;
  r.n = terms.rows.size();
  std::set<std::string> ds;
  double wy = 0.0, ws = 0.0;
  for (std::size_t i = 0; i < terms.rows.size(); ++i) {
    const auto& o = set.rows[terms.rows[i]];
    ds.insert(o.district_id);
    if (terms.pre[i]) {
      wy += o.weight * o.y;
      ws += o.weight;
    }
  }
  r.districts = ds.size();
  r.pre_mean = ws > 0.0 ? wy / ws : kNaN;
  r.treatment_sd = treatment_sd(set, spec);
  r.skipped = set.skipped_undefined;
  return r;
}

}  // namespace detail

/// Treatment terms for `spec.post`: one pooled, placebo or fractional term,
/// or one term per post-period fiscal year.
inline SpecTerms make_terms(const ObservationSet& set, const SpecConfig& spec) {
  const auto treat = district_treatment(set, spec);
  SpecTerms terms;
  std::vector<int> post_years;
  if (spec.post == PostKind::dynamic) {
    std::set<int> years;
    for (const auto& o : set.rows) {
      if (detail::is_post(o, spec)) years.insert(o.fiscal_year);
    }
    post_years.assign(years.begin(), years.end());
    for (int y : post_years) terms.names.push_back("post" + std::to_string(y) + "_x_austerity");
  } else if (spec.post == PostKind::placebo) {
    terms.names = {"placebo_post_x_austerity"};
  } else {
    terms.names = {"post_x_austerity"};
  }
  if (terms.names.empty()) throw EstimationError("no post-period rows for the dynamic specification");

  std::vector<std::vector<double>> cols;
  for (std::size_t i = 0; i < set.rows.size(); ++i) {
    const auto& o = set.rows[i];
    const double a = treat.at(o.district_id);
    std::vector<double> v(terms.names.size(), 0.0);
    bool pre = false;
    switch (spec.post) {
      case PostKind::pooled:
        v[0] = detail::is_post(o, spec) ? a : 0.0;
        pre = !detail::is_post(o, spec);
        break;
      case PostKind::dynamic:
        for (std::size_t k = 0; k < post_years.size(); ++k) v[k] = o.fiscal_year == post_years[k] ? a : 0.0;
        pre = !detail::is_post(o, spec);
        break;
      case PostKind::placebo:
        if (detail::is_post(o, spec)) continue;  // never touches policy-era rows
        v[0] = o.fiscal_year >= spec.placebo_post_fy ? a : 0.0;
        pre = o.fiscal_year < spec.placebo_post_fy;
        break;
      case PostKind::fractional:
        v[0] = o.post_fraction * a;
        pre = o.post_fraction == 0.0;
        break;
    }
    terms.rows.push_back(i);
    terms.pre.push_back(pre ? 1 : 0);
    cols.push_back(std::move(v));
  }
  terms.values.resize(static_cast<Eigen::Index>(cols.size()), static_cast<Eigen::Index>(terms.names.size()));
  for (std::size_t i = 0; i < cols.size(); ++i) {
    for (std::size_t k = 0; k < cols[i].size(); ++k) terms.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = cols[i][k];
  }
  return terms;
}

/// Pooled, dynamic, placebo or fractional DD according to `spec.post`.
inline SpecResult run_spec(const ObservationSet& set, const SpecConfig& spec, const std::string& family) {
  const auto terms = make_terms(set, spec);
  return detail::finish(set, spec, terms, family, spec.post == PostKind::dynamic);
}

inline SpecResult run_dd(const DistrictPanel& panel, SpecConfig spec, const std::string& outcome) {
  spec.treatment = TreatmentKind::continuous;
  spec.post = PostKind::pooled;
  return run_spec(observations_from_panel(panel, spec, outcome), spec, "dd");
}

inline SpecResult run_binary_dd(const DistrictPanel& panel, SpecConfig spec, const std::string& outcome) {
  spec.treatment = TreatmentKind::binary;
  spec.post = PostKind::pooled;
  return run_spec(observations_from_panel(panel, spec, outcome), spec, "binary");
}

inline SpecResult run_dynamic_dd(const DistrictPanel& panel, SpecConfig spec, const std::string& outcome) {
  spec.post = PostKind::dynamic;
  return run_spec(observations_from_panel(panel, spec, outcome), spec, "dynamic");
}

inline SpecResult run_placebo_dd(const DistrictPanel& panel, SpecConfig spec, const std::string& outcome) {
  spec.post = PostKind::placebo;
  return run_spec(observations_from_panel(panel, spec, outcome), spec, "placebo");
}

/// The labor-market battery: the pooled DD on each outcome with
/// region-by-year effects.
inline std::vector<SpecResult> run_labor_market_dd(const DistrictPanel& panel, SpecConfig spec) {
  spec.post = PostKind::pooled;
  if (spec.region_fe == FeGranularity::period) spec.region_fe = FeGranularity::fiscal_year;
  std::vector<SpecResult> out;
  for (const auto& outcome : spec.outcomes) {
    out.push_back(run_spec(observations_from_panel(panel, spec, outcome), spec, "labor"));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Quintiles and triple differences

enum class QuintileBasis { mcc_change_raw, mcc_change_residualized, police_level, police_change };

inline std::string to_string(QuintileBasis b) {
  switch (b) {
    case QuintileBasis::mcc_change_raw: return "mcc-change-raw";
    case QuintileBasis::mcc_change_residualized: return "mcc-change-residualized";
    case QuintileBasis::police_level: return "police-level";
    case QuintileBasis::police_change: return "police-change";
  }
  return "?";
}

struct QuintileAssignment {
  QuintileBasis basis = QuintileBasis::mcc_change_raw;
  std::map<std::string, double> value;
  std::map<std::string, int> quintile;
  std::vector<std::string> excluded;  // districts without a basis value
};

/// Population-weighted fifths: districts sorted by value (ties by id); each
/// goes to the fifth containing the midpoint of its weight interval, with
/// midpoints exactly on a cut going to the lower quintile.
inline std::map<std::string, int> weighted_quintiles(const std::map<std::string, double>& value,
                                                     const std::map<std::string, double>& weight) {
  std::vector<std::pair<double, std::string>> order;
  double total = 0.0;
  for (const auto& [d, v] : value) {
    const double w = weight.at(d);
    if (!(w > 0.0)) throw DomainError("quintile weights must be positive");
    order.emplace_back(v, d);
    total += w;
  }
  std::sort(order.begin(), order.end());
  std::map<std::string, int> out;
  double cum = 0.0;
  for (const auto& [v, d] : order) {
    const double w = weight.at(d);
    const double mid = (cum + 0.5 * w) / total;
    cum += w;
    out[d] = std::clamp(static_cast<int>(std::ceil(5.0 * mid)), 1, 5);
  }
  return out;
}

inline std::map<std::string, double> district_populations(const DistrictPanel& panel) {
  std::map<std::string, std::pair<double, int>> acc;
  for (const auto& r : panel.rows) {
    auto& [s, n] = acc[r.district_id];
    s += r.population;
    ++n;
  }
  std::map<std::string, double> out;
  for (const auto& [d, sn] : acc) out[d] = sn.first / sn.second;
  return out;
}

namespace detail {

inline QuintileAssignment assign(QuintileBasis basis, std::map<std::string, double> value,
                                 const DistrictPanel& panel) {
  QuintileAssignment q;
  q.basis = basis;
  const auto pop = district_populations(panel);
  for (const auto& [d, p] : pop) {
    if (!value.count(d)) q.excluded.push_back(d);
  }
  for (auto it = value.begin(); it != value.end();) {
    if (!pop.count(it->first)) it = value.erase(it);
    else ++it;
  }
  if (value.size() < 5) throw EstimationError("fewer than five districts with a quintile basis value");
  q.quintile = weighted_quintiles(value, pop);
  q.value = std::move(value);
  return q;
}

}  // namespace detail

/// Raw and residualized changes in concentration between two fiscal years.
/// The residualized basis takes residuals from the restricted model (controls,
/// district and region-by-year effects, no treatment) fitted on every year of
/// the concentration panel, then differences the two years' residuals.
inline std::pair<QuintileAssignment, QuintileAssignment> build_mcc_change_quintiles(
    const std::vector<ConcentrationRecord>& records, const DistrictPanel& panel, SpecConfig spec) {
  if (spec.region_fe == FeGranularity::period) spec.region_fe = FeGranularity::fiscal_year;
  const auto set = observations_from_concentration(records, panel, spec, "mcc_" + spec.category);
  std::map<std::string, double> from_raw, to_raw, from_res, to_res;

  const auto n = static_cast<Eigen::Index>(set.rows.size());
  VectorXd y(n), w(n);
  MatrixXd controls(n, static_cast<Eigen::Index>(set.control_names.size()));
  std::vector<std::string> district(set.rows.size()), region_year(set.rows.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& o = set.rows[static_cast<std::size_t>(i)];
    y[i] = o.y;
    w[i] = o.weight;
    for (std::size_t j = 0; j < o.controls.size(); ++j) controls(i, static_cast<Eigen::Index>(j)) = o.controls[j];
    district[static_cast<std::size_t>(i)] = o.district_id;
    region_year[static_cast<std::size_t>(i)] = o.region_id + "|" + std::to_string(o.fiscal_year);
  }
  std::vector<FixedEffect> fes;
  if (spec.district_fe) fes.push_back(make_fixed_effect("district", district));
  if (spec.region_fe != FeGranularity::none) fes.push_back(make_fixed_effect("region_x_year", region_year));
  const VectorXd e = residualize(y, controls, w, fes, spec.absorb);

  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& o = set.rows[static_cast<std::size_t>(i)];
    if (o.fiscal_year == spec.basis_from_fy) {
      from_raw[o.district_id] = o.y;
      from_res[o.district_id] = e[i];
    } else if (o.fiscal_year == spec.basis_to_fy) {
      to_raw[o.district_id] = o.y;
      to_res[o.district_id] = e[i];
    }
  }
  std::map<std::string, double> raw, res;
  for (const auto& [d, v] : to_raw) {
    auto it = from_raw.find(d);
    if (it == from_raw.end()) continue;
    raw[d] = v - it->second;
    res[d] = to_res.at(d) - from_res.at(d);
  }
  return {detail::assign(QuintileBasis::mcc_change_raw, std::move(raw), panel),
          detail::assign(QuintileBasis::mcc_change_residualized, std::move(res), panel)};
}

/// Police strength in the earliest fiscal year of the window (the pre-sample
/// level) or its change from the first to the last year of the window.
inline QuintileAssignment build_police_quintiles(const DistrictPanel& panel, const SpecConfig& spec,
                                                 QuintileBasis basis) {
  if (basis != QuintileBasis::police_level && basis != QuintileBasis::police_change) {
    throw DomainError("police quintiles need a police basis");
  }
  std::map<std::pair<std::string, int>, std::pair<double, int>> acc;
  for (const auto& r : panel.rows) {
    auto& [s, n] = acc[{r.district_id, r.fiscal_year}];
    s += r.police_per_1000;
    ++n;
  }
  auto mean_at = [&](const std::string& d, int fy) -> std::optional<double> {
    auto it = acc.find({d, fy});
    if (it == acc.end()) return std::nullopt;
    return it->second.first / it->second.second;
  };
  std::map<std::string, double> value;
  for (const auto& d : panel.districts()) {
    auto first = mean_at(d, spec.first_fy);
    auto last = mean_at(d, spec.last_fy);
    if (basis == QuintileBasis::police_level) {
      if (first) value[d] = *first;
    } else if (first && last) {
      value[d] = *last - *first;
    }
  }
  return detail::assign(basis, std::move(value), panel);
}

/// Pooled DD with the treatment term split by quintile.
inline SpecResult run_ddd_quintiles(const ObservationSet& set, const QuintileAssignment& q,
                                    SpecConfig spec, const std::string& family) {
  spec.post = PostKind::pooled;
  const auto treat = district_treatment(set, spec);
  SpecTerms terms;
  for (int k = 1; k <= 5; ++k) terms.names.push_back("post_x_austerity_x_q" + std::to_string(k));
  std::vector<std::pair<std::size_t, int>> keep;
  for (std::size_t i = 0; i < set.rows.size(); ++i) {
    auto it = q.quintile.find(set.rows[i].district_id);
    if (it != q.quintile.end()) keep.emplace_back(i, it->second);
  }
  terms.values = MatrixXd::Zero(static_cast<Eigen::Index>(keep.size()), 5);
  for (std::size_t r = 0; r < keep.size(); ++r) {
    const auto& o = set.rows[keep[r].first];
    const bool post = o.fiscal_year >= spec.post_start_fy;
    terms.rows.push_back(keep[r].first);
    terms.pre.push_back(post ? 0 : 1);
    if (post) terms.values(static_cast<Eigen::Index>(r), keep[r].second - 1) = treat.at(o.district_id);
  }
  auto r = detail::finish(set, spec, terms, family, true);
  r.ratio = r.fit.coefficient(terms.names[4]) / r.fit.coefficient(terms.names[0]);
  r.note = "basis=" + to_string(q.basis);
  return r;
}

// ---------------------------------------------------------------------------
// Recidivism

struct RecidivismOutcomes {
  std::optional<double> reoffending_rate;
  std::optional<double> reoffences_per_offender;
  std::optional<double> reoffences_per_reoffender;
  std::optional<double> intensity_ratio;

  std::optional<double> get(const std::string& name) const {
    if (name == "reoffending_rate") return reoffending_rate;
    if (name == "reoffences_per_offender") return reoffences_per_offender;
    if (name == "reoffences_per_reoffender") return reoffences_per_reoffender;
    if (name == "intensity_ratio") return intensity_ratio;
    throw MismatchError("unknown recidivism outcome \"" + name + "\"");
  }
};

inline const std::vector<std::string>& recidivism_outcome_names() {
  static const std::vector<std::string> names{"reoffending_rate", "reoffences_per_offender",
                                              "reoffences_per_reoffender", "intensity_ratio"};
  return names;
}

inline RecidivismOutcomes compute_recidivism_outcomes(const RecidivismCohort& c) {
  RecidivismOutcomes o;
  if (c.offenders <= 0) return o;
  const double offenders = static_cast<double>(c.offenders);
  o.reoffending_rate = static_cast<double>(c.reoffenders) / offenders;
  o.reoffences_per_offender = static_cast<double>(c.reoffences) / offenders;
  if (c.reoffenders > 0) {
    o.reoffences_per_reoffender = static_cast<double>(c.reoffences) / static_cast<double>(c.reoffenders);
    if (c.prior_offences > 0) {
      o.intensity_ratio = *o.reoffences_per_reoffender / (static_cast<double>(c.prior_offences) / offenders);
    }
  }
  return o;
}

/// Share of the cohort window's months falling on or after `post_start`.
inline double fractional_post(YearMonth cohort_start, YearMonth post_start, int months = 12) {
  if (months < 1) throw DomainError("cohort window must span at least one month");
  const int after = cohort_start.index() + months - post_start.index();
  return static_cast<double>(std::clamp(after, 0, months)) / static_cast<double>(months);
}

/// Cohort rows for one outcome and offender group. Covariates come from the
/// panel row of the cohort's first month (or its fiscal year on an annual
/// panel); the time key is the cohort start so region effects are
/// region-by-rolling-window.
inline ObservationSet observations_from_cohorts(const std::vector<RecidivismCohort>& cohorts,
                                                const DistrictPanel& panel, const SpecConfig& spec,
                                                const std::string& outcome, const std::string& group,
                                                std::vector<std::string>* report = nullptr) {
  std::map<std::pair<std::string, int>, const PanelRow*> index;
  for (const auto& r : panel.rows) index[{r.district_id, r.period}] = &r;
  const auto base = detail::base_year_weights(panel);
  ObservationSet set;
  set.outcome = outcome;
  set.control_names = spec.controls;
  for (const auto& c : cohorts) {
    if (c.group != group) continue;
    const int fy = c.cohort_start.fiscal_year();
    if (fy < spec.first_fy || fy > spec.last_fy) continue;
    const auto values = compute_recidivism_outcomes(c);
    const auto y = values.get(outcome);
    if (!y) {
      ++set.skipped_undefined;
      if (report) {
        report->push_back(c.district_id + " " + c.cohort_start.str() + " " + group + ": " + outcome +
                          (c.offenders == 0 ? " undefined (no offenders)" : " undefined"));
      }
      continue;
    }
    auto it = index.find({c.district_id, period_code(c.cohort_start, panel.kind)});
    if (it == index.end()) {
      throw MismatchError("no panel covariates for cohort " + c.district_id + " " + c.cohort_start.str());
    }
    const PanelRow& r = *it->second;
    Observation o;
    o.district_id = c.district_id;
    o.region_id = r.region_id;
    o.period = c.cohort_start.index();
    o.fiscal_year = fy;
    o.weight = detail::pick_weight(r, spec.weights, base);
    o.sai_pounds = r.sai_pounds;
    o.post_fraction = fractional_post(c.cohort_start, spec.fractional_post_start, spec.cohort_months);
    o.y = *y;
    o.controls = detail::read_controls(r, spec.controls);
    set.rows.push_back(std::move(o));
  }
  return set;
}

/// Every recidivism outcome for every offender group (or the configured one).
inline std::vector<SpecResult> run_recidivism_dd(const std::vector<RecidivismCohort>& cohorts,
                                                 const DistrictPanel& panel, SpecConfig spec,
                                                 std::vector<std::string>* report = nullptr) {
  spec.post = PostKind::fractional;
  spec.region_fe = FeGranularity::period;
  std::set<std::string> groups;
  for (const auto& c : cohorts) groups.insert(c.group);
  if (!spec.group.empty()) {
    if (!groups.count(spec.group)) throw MismatchError("no cohorts for offender group " + spec.group);
    groups = {spec.group};
  }
  std::vector<std::string> outcomes;
  for (const auto& o : spec.outcomes) {
    if (std::find(recidivism_outcome_names().begin(), recidivism_outcome_names().end(), o) !=
        recidivism_outcome_names().end()) {
      outcomes.push_back(o);
    }
  }
  if (outcomes.empty()) outcomes = recidivism_outcome_names();
  std::vector<SpecResult> out;
  for (const auto& g : groups) {
    for (const auto& outcome : outcomes) {
      const auto set = observations_from_cohorts(cohorts, panel, spec, outcome, g, report);
      if (set.rows.empty()) continue;
      auto r = run_spec(set, spec, "recidivism");
      r.note = "group=" + g;
      out.push_back(std::move(r));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Effect sizes

struct EffectSummary {
  double coefficient = 0.0;
  double treatment_sd = kNaN;
  double baseline = kNaN;
  double percent_per_sd = kNaN;
  double percent_binary = kNaN;
};

/// Log outcomes: coefficient × SD × 100 per SD, coefficient × 100 for a
/// binary treatment. Level outcomes (concentration): the same per-SD change
/// as a percentage of the baseline level.
inline EffectSummary summarize_effect(double coefficient, double sd, std::optional<double> baseline = std::nullopt) {
  EffectSummary s;
  s.coefficient = coefficient;
  s.treatment_sd = sd;
  if (baseline) {
    if (*baseline == 0.0) throw DomainError("effect summary baseline is zero");
    s.baseline = *baseline;
    s.percent_per_sd = coefficient * sd / *baseline * 100.0;
    s.percent_binary = coefficient / *baseline * 100.0;
  } else {
    s.percent_per_sd = coefficient * sd * 100.0;
    s.percent_binary = coefficient * 100.0;
  }
  return s;
}

inline bool is_log_outcome(const std::string& name) { return name.rfind("log_", 0) == 0; }

// ---------------------------------------------------------------------------
// Neighborhood deprivation profile

inline double adjusted_imd(const ImdDomains& d) {
  return (0.135 * d.health + 0.135 * d.education + 0.093 * d.housing_barriers + 0.093 * d.living_env) /
         (0.135 + 0.135 + 0.093 + 0.093);
}

struct ProfilePoint {
  int percentile = 0;
  std::size_t neighborhoods = 0;
  double total = kNaN;
  double property = kNaN;
  double violent = kNaN;
};

struct NeighborhoodProfile {
  std::vector<ProfilePoint> residualized;
  std::vector<ProfilePoint> raw;
  std::map<std::string, int> percentile;                       // per neighborhood
  std::map<std::string, std::array<double, 3>> change;         // residualized, per neighborhood
  std::map<std::string, std::array<double, 3>> raw_change;
  std::vector<std::string> excluded;
};

/// Per year, neighborhood counts minus their district-year mean; then the
/// mean residual over post years minus the mean over pre years, averaged
/// within adjusted-IMD percentiles (1 = least deprived). Neighborhoods
/// missing any year or an IMD score are excluded and listed.
inline NeighborhoodProfile neighborhood_change_profile(const std::vector<NeighborhoodCount>& counts,
                                                       const std::map<std::string, ImdDomains>& imd,
                                                       const std::vector<int>& pre_years,
                                                       const std::vector<int>& post_years) {
  if (pre_years.empty() || post_years.empty()) throw DomainError("profile needs pre and post years");
  static const std::array<const char*, 3> cats{"total", "property", "violent"};
  std::set<int> years(pre_years.begin(), pre_years.end());
  years.insert(post_years.begin(), post_years.end());

  std::map<std::string, std::map<int, const NeighborhoodCount*>> by_lsoa;
  for (const auto& c : counts) {
    if (years.count(c.year)) by_lsoa[c.lsoa_code][c.year] = &c;
  }
  NeighborhoodProfile out;
  std::map<std::string, std::map<int, const NeighborhoodCount*>> kept;
  for (auto& [lsoa, ys] : by_lsoa) {
    if (ys.size() != years.size()) {
      out.excluded.push_back(lsoa + ": missing year");
      continue;
    }
    if (!imd.count(lsoa)) {
      out.excluded.push_back(lsoa + ": no IMD score");
      continue;
    }
    std::string district = ys.begin()->second->district_id;
    if (std::any_of(ys.begin(), ys.end(), [&](const auto& p) { return p.second->district_id != district; })) {
      out.excluded.push_back(lsoa + ": district changes across years");
      continue;
    }
    kept.emplace(lsoa, std::move(ys));
  }
  if (kept.empty()) throw DomainError("no neighborhood observed in every year");

  // District-year means over the retained neighborhoods.
  std::map<std::pair<std::string, int>, std::array<double, 4>> sums;  // 3 categories + count
  for (const auto& [lsoa, ys] : kept) {
    for (const auto& [y, c] : ys) {
      auto& s = sums[{c->district_id, y}];
      for (std::size_t k = 0; k < 3; ++k) s[k] += static_cast<double>(c->of(cats[k]));
      s[3] += 1.0;
    }
  }
  auto window_mean = [](const std::map<int, double>& v, const std::vector<int>& ys) {
    double s = 0.0;
    for (int y : ys) s += v.at(y);
    return s / static_cast<double>(ys.size());
  };
  for (const auto& [lsoa, ys] : kept) {
    std::array<double, 3> res{}, raw{};
    for (std::size_t k = 0; k < 3; ++k) {
      std::map<int, double> r, c;
      for (const auto& [y, cell] : ys) {
        const auto& s = sums.at({cell->district_id, y});
        c[y] = static_cast<double>(cell->of(cats[k]));
        r[y] = c[y] - s[k] / s[3];
      }
      res[k] = window_mean(r, post_years) - window_mean(r, pre_years);
      raw[k] = window_mean(c, post_years) - window_mean(c, pre_years);
    }
    out.change[lsoa] = res;
    out.raw_change[lsoa] = raw;
  }

  std::vector<std::pair<double, std::string>> order;
  for (const auto& [lsoa, ys] : kept) order.emplace_back(adjusted_imd(imd.at(lsoa)), lsoa);
  std::sort(order.begin(), order.end());
  const double n = static_cast<double>(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    out.percentile[order[i].second] = std::clamp(static_cast<int>(std::ceil(100.0 * static_cast<double>(i + 1) / n)), 1, 100);
  }
  auto profile = [&](const std::map<std::string, std::array<double, 3>>& change) {
    std::map<int, std::pair<std::array<double, 3>, std::size_t>> acc;
    for (const auto& [lsoa, p] : out.percentile) {
      auto& [s, k] = acc[p];
      for (std::size_t c = 0; c < 3; ++c) s[c] += change.at(lsoa)[c];
      ++k;
    }
    std::vector<ProfilePoint> pts;
    for (const auto& [p, sk] : acc) {
      const double k = static_cast<double>(sk.second);
      pts.push_back({p, sk.second, sk.first[0] / k, sk.first[1] / k, sk.first[2] / k});
    }
    return pts;
  };
  out.residualized = profile(out.change);
  out.raw = profile(out.raw_change);
  return out;
}

// ---------------------------------------------------------------------------
// Table output

inline std::string stars(double p) {
  if (!(p < 0.10)) return "";
  if (p < 0.01) return "***";
  if (p < 0.05) return "**";
  return "*";
}

inline const std::vector<std::string>& table_columns() {
  static const std::vector<std::string> cols{
      "family", "outcome", "term", "coef", "se", "t", "p", "stars", "ci_lo", "ci_hi",
      "n", "districts", "pre_mean", "treatment_sd", "effect_pct", "note"};
  return cols;
}

namespace detail {

inline std::string num(double v) { return std::isfinite(v) ? csv::format_double(v) : ""; }

}  // namespace detail

/// Percentage effect for one term: per treatment SD (continuous) or for
/// switching the indicator on (binary); relative to the pre-period mean
/// unless the outcome is in logs.
inline double effect_percent(const SpecResult& r, double coef, TreatmentKind kind) {
  const bool binary = kind == TreatmentKind::binary;
  std::optional<double> baseline;
  if (!is_log_outcome(r.outcome)) {
    if (!std::isfinite(r.pre_mean) || r.pre_mean == 0.0) return kNaN;
    baseline = r.pre_mean;
  }
  const auto s = summarize_effect(coef, r.treatment_sd, baseline);
  return binary ? s.percent_binary : s.percent_per_sd;
}

inline void write_table_rows(std::ostream& out, const SpecResult& r, TreatmentKind kind) {
  const double crit = r.fit.critical_value(0.95);
  for (const auto& term : r.terms) {
    const auto i = *r.fit.index_of(term);
    const double b = r.fit.coef[static_cast<Eigen::Index>(i)];
    const double se = r.fit.se(i);
    const double p = r.fit.p_value(i);
    csv::write_row(out, {r.family, r.outcome, term, detail::num(b), detail::num(se),
                         detail::num(r.fit.t_stat(i)), detail::num(p), stars(p),
                         detail::num(b - crit * se), detail::num(b + crit * se), std::to_string(r.n),
                         std::to_string(r.districts), detail::num(r.pre_mean),
                         detail::num(r.treatment_sd), detail::num(effect_percent(r, b, kind)), r.note});
  }
  if (r.equality) {
    csv::write_row(out, {r.family, r.outcome, "equality_F", detail::num(r.equality->statistic), "", "",
                         detail::num(r.equality->p_value), stars(r.equality->p_value), "", "",
                         std::to_string(r.n), std::to_string(r.districts), "", "", "",
                         "df=" + std::to_string(r.equality->df1) + "," + std::to_string(r.equality->df2)});
    if (r.equality->bootstrap_reps > 0) {
      csv::write_row(out, {r.family, r.outcome, "equality_wild_bootstrap", detail::num(r.equality->statistic), "", "",
                           detail::num(r.equality->bootstrap_p), stars(r.equality->bootstrap_p), "", "",
                           std::to_string(r.n), std::to_string(r.districts), "", "", "",
                           "B=" + std::to_string(r.equality->bootstrap_reps) + ",rademacher,null imposed"});
    }
  }
  if (r.ratio) {
    csv::write_row(out, {r.family, r.outcome, "ratio_q5_q1", detail::num(*r.ratio), "", "", "", "", "", "",
                         std::to_string(r.n), std::to_string(r.districts), "", "", "", r.note});
  }
}

inline void write_table(std::ostream& out, const std::vector<SpecResult>& results, TreatmentKind kind) {
  csv::write_row(out, table_columns());
  for (const auto& r : results) write_table_rows(out, r, kind);
}

inline void write_profile_csv(std::ostream& out, const NeighborhoodProfile& p) {
  csv::write_row(out, {"percentile", "neighborhoods", "total", "property", "violent", "raw_total",
                       "raw_property", "raw_violent"});
  for (std::size_t i = 0; i < p.residualized.size(); ++i) {
    const auto& a = p.residualized[i];
    const auto& b = p.raw[i];
    csv::write_row(out, {std::to_string(a.percentile), std::to_string(a.neighborhoods), detail::num(a.total),
                         detail::num(a.property), detail::num(a.violent), detail::num(b.total),
                         detail::num(b.property), detail::num(b.violent)});
  }
}

}  // namespace crimelab
