#pragma once

// Command-line front end. Every command buffers its outputs, writes them
// atomically into --out once the whole computation succeeded, and then writes
// manifest.json listing inputs (with SHA-256), the configuration snapshot, the
// seed and every output file.

#include <openssl/evp.h>

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "crimelab/becker.hpp"
#include "crimelab/concentration.hpp"
#include "crimelab/errors.hpp"
#include "crimelab/ingest.hpp"
#include "crimelab/nonparam.hpp"
#include "crimelab/parallel.hpp"
#include "crimelab/specs.hpp"
#include "crimelab/synthlab.hpp"

namespace crimelab::app {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr const char* kVersion = "0.1.0";

/// Bad command-line usage (unknown family, missing config); exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Too many crime records could not be placed in a district; exit code 3.
struct UnresolvedError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A replay produced different bytes; exit code 5.
struct ReplayMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum ExitCode : int { ok = 0, failure = 1, schema = 2, unresolved = 3, mismatch = 4, replay_differs = 5 };

inline const std::vector<std::string>& families() {
  static const std::vector<std::string> f{"dd",          "binary",     "dynamic", "placebo",      "ddd-mcc",
                                          "ddd-police",  "recidivism", "labor",   "neighborhood", "nonparam",
                                          "becker"};
  return f;
}

// ---------------------------------------------------------------------------
// Hashing, time, files

namespace detail {

inline std::string hex(const unsigned char* p, std::size_t n) {
  static const char* digits = "0123456789abcdef";
  std::string s;
  s.reserve(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    s.push_back(digits[p[i] >> 4]);
    s.push_back(digits[p[i] & 0xf]);
  }
  return s;
}

}  // namespace detail

inline std::string sha256(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw IoError("SHA-256 digest failed");
  }
  return detail::hex(md, len);
}

inline std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw IoError("SHA-256 init failed");
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  return detail::hex(md, len);
}

inline std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Fresh seed for runs that were not given one; kept below 2^53 so that any
/// JSON reader round-trips it.
inline std::uint64_t fresh_seed() {
  std::random_device rd;
  const std::uint64_t s = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
  return s & ((std::uint64_t{1} << 53) - 1);
}

inline json read_json_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw SchemaError(path.string() + " is not valid JSON: " + e.what());
  }
}

/// Writes `content` to dir/name through a temporary file and a rename.
inline void write_atomic(const fs::path& dir, const std::string& name, const std::string& content) {
  const fs::path target = dir / name;
  const fs::path tmp = dir / ("." + name + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  fs::rename(tmp, target);
}

inline std::vector<fs::path> csv_files_under(const fs::path& p) {
  std::vector<fs::path> files;
  if (fs::is_directory(p)) {
    for (const auto& e : fs::recursive_directory_iterator(p)) {
      if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(p);
  }
  return files;
}

// ---------------------------------------------------------------------------
// Run state and manifest

class Run {
 public:
  std::string command;
  json args = json::object();
  json config;  // parsed config file snapshot, null when the command takes none
  json seed;    // master seed, null when the command draws no random numbers
  json replay_of;
  std::vector<std::string> notes;

  explicit Run(std::string cmd) : command(std::move(cmd)), started_(utc_now()) {}

  void input(const fs::path& path, const std::string& role) {
    for (const auto& f : csv_files_under(path)) {
      if (!fs::exists(f)) throw IoError("input " + f.string() + " does not exist");
      inputs_.push_back({{"role", role},
                         {"path", fs::absolute(f).lexically_normal().string()},
                         {"sha256", sha256_file(f)},
                         {"bytes", fs::file_size(f)}});
    }
  }

  void output(const std::string& name, std::string content) {
    for (const auto& [n, c] : outputs_) {
      if (n == name) throw std::logic_error("output " + name + " written twice");
    }
    outputs_.emplace_back(name, std::move(content));
  }

  const std::vector<std::pair<std::string, std::string>>& outputs() const { return outputs_; }

  std::string arg(const std::string& key) const {
    auto it = args.find(key);
    return it == args.end() || it->is_null() ? std::string() : it->get<std::string>();
  }

  unsigned threads() const {
    auto it = args.find("threads");
    const int t = it == args.end() || it->is_null() ? 0 : it->get<int>();
    return t > 0 ? static_cast<unsigned>(t) : default_threads();
  }

  fs::path out_dir() const { return fs::path(arg("out")); }

  json manifest() const {
    json outs = json::array();
    for (const auto& [name, content] : outputs_) {
      outs.push_back({{"file", name}, {"sha256", sha256(content)}, {"bytes", content.size()}});
    }
    json m = {{"tool", "crimelab"},
              {"version", kVersion},
              {"command", command},
              {"args", args},
              {"config", config},
              {"seed", seed},
              {"inputs", inputs_},
              {"outputs", outs},
              {"notes", notes},
              {"started_at", started_},
              {"finished_at", utc_now()}};
    if (!replay_of.is_null()) m["replay_of"] = replay_of;
    return m;
  }

  /// Writes every buffered output, then the manifest.
  void commit() const {
    const fs::path dir = out_dir();
    if (dir.empty()) throw UsageError("--out is required");
    fs::create_directories(dir);
    for (const auto& [name, content] : outputs_) write_atomic(dir, name, content);
    write_atomic(dir, "manifest.json", manifest().dump(2) + "\n");
  }

 private:
  std::string started_;
  json inputs_ = json::array();
  std::vector<std::pair<std::string, std::string>> outputs_;
};

// ---------------------------------------------------------------------------
// Commands

namespace detail {

template <class F>
std::string render(F&& f) {
  std::ostringstream out;
  f(out);
  return out.str();
}

inline std::string absolute(const std::string& p) {
  return p.empty() ? p : fs::absolute(fs::path(p)).lexically_normal().string();
}

inline void write_rejections(std::ostream& out, const std::vector<Rejection>& rows) {
  csv::write_row(out, {"source", "row", "reason"});
  for (const auto& r : rows) csv::write_row(out, {r.source, std::to_string(r.row), r.reason});
}

inline void cmd_ingest(Run& run) {
  const auto kind = parse_period_kind(run.arg("period"));
  const auto window = SampleWindow::fiscal_years(run.args["first_fy"].get<int>(), run.args["last_fy"].get<int>());
  const bool urban_only = !run.args["include_rural"].get<bool>();
  const double max_share = run.args["max_unresolved"].get<double>();
  WeightSource weights;
  if (run.arg("weights") == "period") weights = WeightSource::period_population;
  else if (run.arg("weights") == "base-year") weights = WeightSource::base_year_population;
  else throw UsageError("--weights must be period or base-year");
  TheftDefinition theft;
  if (!run.args["theft_types"].empty()) {
    theft.types.clear();
    for (const auto& t : run.args["theft_types"]) theft.types.insert(normalize_type(t.get<std::string>()));
  }

  run.input(run.arg("crime"), "crime");
  run.input(run.arg("lookup"), "lookup");
  run.input(run.arg("covariates"), "covariates");
  run.input(run.arg("austerity"), "austerity");

  auto parsed = parse_crime_path(run.arg("crime"), {}, window);
  const auto lookup = load_lookup(run.arg("lookup"));
  const auto covariates = load_covariates(run.arg("covariates"), kind);
  const auto austerity = load_austerity(run.arg("austerity"));

  const std::size_t total = parsed.records.size();
  auto unknown_lsoa = resolve_districts(parsed.records, lookup);
  const double share = total == 0 ? 0.0 : static_cast<double>(unknown_lsoa.size()) / static_cast<double>(total);
  if (share > max_share) {
    std::ostringstream msg;
    msg << unknown_lsoa.size() << " of " << total << " records (" << 100.0 * share
        << "%) have an LSOA outside the lookup; the limit is " << 100.0 * max_share << "%";
    throw UnresolvedError(msg.str());
  }

  const auto counts = aggregate_district_period(parsed.records, lookup, kind, theft, urban_only);
  const auto panel = assemble_panel(counts, covariates, austerity, lookup, PanelConfig{kind, window, weights});
  const auto streets = street_counts_from_records(parsed.records, lookup, urban_only);
  const auto hoods = aggregate_neighborhood_year(parsed.records, lookup, urban_only);

  std::vector<Rejection> rejected = parsed.rejections;
  rejected.insert(rejected.end(), unknown_lsoa.begin(), unknown_lsoa.end());
  rejected.insert(rejected.end(), counts.rejections.begin(), counts.rejections.end());
  for (const auto& f : panel.flags) {
    rejected.push_back({"panel", 0, f.district_id + " " + format_period(f.period, kind) + ": " + f.reason});
  }

  run.output("panel.csv", render([&](std::ostream& o) { write_panel_csv(o, panel); }));
  run.output("street_counts.csv", render([&](std::ostream& o) { write_street_counts_csv(o, streets); }));
  run.output("neighborhood_counts.csv", render([&](std::ostream& o) { write_neighborhood_csv(o, hoods); }));
  run.output("rejections.csv", render([&](std::ostream& o) { write_rejections(o, rejected); }));
  run.notes.push_back(std::to_string(total) + " records parsed, " + std::to_string(unknown_lsoa.size()) +
                      " unresolved, " + std::to_string(counts.non_urban_records) + " in non-urban districts");
}

/// `path` may be a directory produced by ingest/synth or the file itself.
inline fs::path in_dir(const std::string& path, const char* name) {
  const fs::path p(path);
  return fs::is_directory(p) ? p / name : p;
}

inline void cmd_mcc(Run& run) {
  const double k = run.args["k"].get<double>();
  const auto runs = run.args["runs"].get<std::int64_t>();
  if (run.args["seed"].is_null()) run.args["seed"] = fresh_seed();
  const auto seed = run.args["seed"].get<std::uint64_t>();
  run.seed = seed;

  const fs::path counts_path = in_dir(run.arg("panel"), "street_counts.csv");
  run.input(counts_path, "street_counts");
  const auto table = read_street_counts_csv(counts_path);
  StreetUniverse universe;
  const bool with_universe = !run.arg("streets").empty();
  if (with_universe) {
    run.input(run.arg("streets"), "street_universe");
    universe = load_street_universe(run.arg("streets"));
  }
  const auto result = annual_concentration_panel(table, with_universe ? &universe : nullptr, k, runs, seed, run.threads());

  run.output("concentration.csv", render([&](std::ostream& o) { write_concentration_csv(o, result.records); }));
  run.output("concentration_skipped.csv", render([&](std::ostream& o) { write_rejections(o, result.skipped); }));

  // Yearly averages by category, the data behind a concentration-over-time plot.
  std::map<std::pair<int, std::string>, std::array<double, 4>> acc;
  for (const auto& r : result.records) {
    auto& a = acc[{r.year, r.category}];
    a[0] += 1.0;
    a[1] += r.cc_raw;
    a[2] += r.cc_sim_mean;
    a[3] += r.mcc;
  }
  run.output("concentration_by_year.csv", render([&](std::ostream& o) {
               csv::write_row(o, {"year", "category", "districts", "cc_raw", "cc_sim_mean", "mcc"});
               for (const auto& [key, a] : acc) {
                 csv::write_row(o, {std::to_string(key.first), key.second, csv::format_double(a[0]),
                                    csv::format_double(a[1] / a[0]), csv::format_double(a[2] / a[0]),
                                    csv::format_double(a[3] / a[0])});
               }
             }));
}

inline becker::Params parse_becker(const json& j) {
  if (!j.is_object()) throw SchemaError("becker parameters must be a JSON object");
  becker::Params p;
  const std::map<std::string, double*> fields{{"P", &p.P},           {"S", &p.S},           {"pi", &p.pi},
                                              {"W", &p.W},           {"B", &p.B},           {"u", &p.u},
                                              {"kappa1", &p.kappa1}, {"kappa2", &p.kappa2}, {"kappa3", &p.kappa3},
                                              {"O", &p.O}};
  for (const auto& [key, v] : j.items()) {
    if (key == "comment") continue;
    auto it = fields.find(key);
    if (it == fields.end()) throw SchemaError("unknown becker parameter \"" + key + "\"");
    if (!v.is_number()) throw SchemaError("becker parameter " + key + " must be a number");
    *it->second = v.get<double>();
  }
  for (const char* req : {"P", "S", "W", "B", "u", "kappa1"}) {
    if (!j.contains(req)) throw SchemaError(std::string("becker parameters lack ") + req);
  }
  return p;
}

inline bool is_concentration_outcome(const std::string& o) {
  return o.rfind("mcc_", 0) == 0 || o.rfind("cc_raw_", 0) == 0 || o.rfind("cc_sim_mean_", 0) == 0;
}

/// Resolves an auxiliary input: the explicit option or the file of that name
/// next to the panel. The resolved path is written back into the arguments
/// so a replay reads the same file.
inline fs::path aux_input(Run& run, const std::string& key, const char* default_name) {
  std::string p = run.arg(key);
  if (p.empty()) {
    const fs::path panel(run.arg("panel"));
    const fs::path dir = fs::is_directory(panel) ? panel : panel.parent_path();
    p = absolute((dir / default_name).string());
    if (!fs::exists(p)) throw UsageError("this family needs --" + key + " (no " + default_name + " next to the panel)");
    run.args[key] = p;
  }
  run.input(p, key);
  return p;
}

inline void write_quintile_outputs(Run& run, const std::vector<SpecResult>& results,
                                   const std::vector<QuintileAssignment>& bases) {
  run.output("quintile_effects.csv", render([&](std::ostream& o) {
               csv::write_row(o, {"family", "basis", "outcome", "quintile", "coef", "se", "ci_lo", "ci_hi"});
               for (const auto& r : results) {
                 const double crit = r.fit.critical_value(0.95);
                 for (std::size_t q = 0; q < r.terms.size(); ++q) {
                   const auto i = *r.fit.index_of(r.terms[q]);
                   const double b = r.fit.coef[static_cast<Eigen::Index>(i)];
                   const double se = r.fit.se(i);
                   csv::write_row(o, {r.family, r.note.substr(r.note.find('=') + 1), r.outcome, std::to_string(q + 1),
                                      crimelab::detail::num(b), crimelab::detail::num(se),
                                      crimelab::detail::num(b - crit * se), crimelab::detail::num(b + crit * se)});
                 }
               }
             }));
  run.output("quintiles.csv", render([&](std::ostream& o) {
               csv::write_row(o, {"basis", "district_id", "value", "quintile"});
               for (const auto& q : bases) {
                 for (const auto& [d, v] : q.value) {
                   csv::write_row(o, {to_string(q.basis), d, csv::format_double(v), std::to_string(q.quintile.at(d))});
                 }
                 for (const auto& d : q.excluded) csv::write_row(o, {to_string(q.basis), d, "", ""});
               }
             }));
}

inline void cmd_estimate(Run& run) {
  const std::string family = run.arg("family");
  if (std::find(families().begin(), families().end(), family) == families().end()) {
    std::string list;
    for (const auto& f : families()) list += (list.empty() ? "" : ", ") + f;
    throw UsageError("unknown family \"" + family + "\"; expected one of " + list);
  }

  if (family == "becker") {
    const auto p = parse_becker(run.config);
    const auto e = becker::equilibrium_crime(p);
    for (const auto& w : e.warnings) run.notes.push_back(w);
    run.output("becker.csv", render([&](std::ostream& o) { becker::write_report(o, p, e); }));
    return;
  }

  SpecConfig spec = parse_spec(run.config);
  run.seed = spec.bootstrap_seed;
  if (run.arg("panel").empty()) throw UsageError("--panel is required for family " + family);
  const fs::path panel_path = in_dir(run.arg("panel"), "panel.csv");
  run.input(panel_path, "panel");
  const auto panel = read_panel_csv(panel_path);

  std::vector<ConcentrationRecord> conc;
  auto need_concentration = [&] {
    if (conc.empty()) conc = read_concentration_csv(aux_input(run, "concentration", "concentration.csv"));
  };

  std::vector<SpecResult> results;
  TreatmentKind kind = spec.treatment;
  if (family == "dd" || family == "binary" || family == "dynamic" || family == "placebo") {
    SpecConfig s = spec;
    if (family == "dd") s.treatment = TreatmentKind::continuous;
    if (family == "binary") s.treatment = TreatmentKind::binary;
    s.post = family == "dynamic" ? PostKind::dynamic : family == "placebo" ? PostKind::placebo : PostKind::pooled;
    kind = s.treatment;
    for (const auto& outcome : s.outcomes) {
      if (is_concentration_outcome(outcome)) {
        need_concentration();
        SpecConfig a = s;
        if (a.region_fe == FeGranularity::period) a.region_fe = FeGranularity::fiscal_year;
        results.push_back(run_spec(observations_from_concentration(conc, panel, a, outcome), a, family));
      } else {
        results.push_back(run_spec(observations_from_panel(panel, s, outcome), s, family));
      }
    }
  } else if (family == "labor") {
    results = run_labor_market_dd(panel, spec);
  } else if (family == "ddd-mcc" || family == "ddd-police") {
    std::vector<QuintileAssignment> bases;
    if (family == "ddd-mcc") {
      need_concentration();
      auto [raw, res] = build_mcc_change_quintiles(conc, panel, spec);
      bases = {raw, res};
    } else {
      bases = {build_police_quintiles(panel, spec, QuintileBasis::police_level),
               build_police_quintiles(panel, spec, QuintileBasis::police_change)};
    }
    for (const auto& outcome : spec.outcomes) {
      const auto set = observations_from_panel(panel, spec, outcome);
      for (const auto& q : bases) results.push_back(run_ddd_quintiles(set, q, spec, family));
    }
    write_quintile_outputs(run, results, bases);
  } else if (family == "recidivism") {
    const auto cohorts = load_recidivism(aux_input(run, "recidivism", "recidivism.csv"));
    std::vector<std::string> report;
    results = run_recidivism_dd(cohorts, panel, spec, &report);
    kind = spec.treatment;
    run.notes.insert(run.notes.end(), report.begin(), report.end());
  } else if (family == "neighborhood") {
    const auto counts = read_neighborhood_csv(aux_input(run, "neighborhoods", "neighborhood_counts.csv"));
    const auto imd = load_imd(aux_input(run, "imd", "imd.csv"));
    std::vector<int> pre, post;
    for (int y = spec.first_fy; y <= spec.last_fy; ++y) (y < spec.post_start_fy ? pre : post).push_back(y);
    const auto profile = neighborhood_change_profile(counts, imd, pre, post);
    run.output("neighborhood_profile.csv", render([&](std::ostream& o) { write_profile_csv(o, profile); }));
    run.output("neighborhood_excluded.csv", render([&](std::ostream& o) {
                 csv::write_row(o, {"neighborhood"});
                 for (const auto& e : profile.excluded) csv::write_row(o, {e});
               }));
    return;
  } else if (family == "nonparam") {
    if (run.args["seed"].is_null()) run.args["seed"] = fresh_seed();
    LocalLinearOptions opt;
    opt.bandwidth = run.args["bandwidth"].get<double>();
    opt.kernel = parse_kernel(run.arg("kernel"));
    opt.bootstrap = run.args["bootstrap"].get<int>();
    opt.seed = run.args["seed"].get<std::uint64_t>();
    if (run.arg("band") == "uniform") opt.band = BandKind::uniform;
    else if (run.arg("band") == "pointwise") opt.band = BandKind::pointwise;
    else throw UsageError("--band must be uniform or pointwise");
    opt.threads = static_cast<int>(run.threads());
    run.seed = opt.seed;
    SpecConfig s = spec;
    s.post = PostKind::pooled;
    std::ostringstream summary;
    csv::write_row(summary, {"outcome", "fwl_slope", "bandwidth", "kernel", "band", "critical", "bootstrap",
                             "grid_points", "masked_points", "curve_file"});
    for (const auto& outcome : s.outcomes) {
      const auto set = observations_from_panel(panel, s, outcome);
      const auto pair = fwl_residualize(set, s);
      const auto curve = local_linear_fit(pair, opt);
      const std::string file = "curve_" + outcome + ".csv";
      run.output(file, render([&](std::ostream& o) { write_curve_csv(o, curve); }));
      const auto masked = std::count(curve.masked.begin(), curve.masked.end(), char{1});
      csv::write_row(summary, {outcome, csv::format_double(fwl_slope(pair)), csv::format_double(curve.bandwidth),
                               to_string(curve.kernel), run.arg("band"), csv::format_double(curve.critical),
                               std::to_string(curve.bootstrap), std::to_string(curve.grid.size()),
                               std::to_string(masked), file});
      results.push_back(run_spec(set, s, "nonparam"));
    }
    run.output("nonparam_summary.csv", summary.str());
  }
  run.output("table.csv", render([&](std::ostream& o) { write_table(o, results, kind); }));
}

inline void cmd_synth(Run& run) {
  auto dgp = synth::parse_dgp(run.config);
  if (!run.args["seed"].is_null()) dgp.seed = run.args["seed"].get<std::uint64_t>();
  run.seed = dgp.seed;
  const auto d = synth::generate_panel(dgp);
  run.output("panel.csv", render([&](std::ostream& o) { write_panel_csv(o, d.panel); }));
  run.output("truth.csv", render([&](std::ostream& o) {
               csv::write_row(o, {"district_id", "region_id", "sai_pounds", "treatment", "latent_basis",
                                  "latent_quintile", "concentration_move"});
               for (const auto& t : d.districts) {
                 csv::write_row(o, {t.district_id, t.region_id, csv::format_double(t.sai_pounds),
                                    csv::format_double(t.treatment), csv::format_double(t.latent_basis),
                                    std::to_string(t.latent_quintile), csv::format_double(t.concentration_move)});
               }
             }));
  if (!d.streets.cells.empty()) {
    run.output("street_counts.csv", render([&](std::ostream& o) { write_street_counts_csv(o, d.streets); }));
  }
  if (!d.cohorts.empty()) {
    run.output("recidivism.csv", render([&](std::ostream& o) { write_recidivism_csv(o, d.cohorts); }));
  }
  if (!d.neighborhoods.empty()) {
    run.output("neighborhood_counts.csv", render([&](std::ostream& o) { write_neighborhood_csv(o, d.neighborhoods); }));
    run.output("imd.csv", render([&](std::ostream& o) { write_imd_csv(o, d.imd); }));
  }
}

inline void cmd_recover(Run& run) {
  auto suite = synth::parse_suite(run.config);
  if (!run.args["reps"].is_null()) suite.reps = run.args["reps"].get<int>();
  if (!run.args["seed"].is_null()) suite.seed = run.args["seed"].get<std::uint64_t>();
  suite.threads = static_cast<int>(run.threads());
  run.seed = suite.seed;
  const auto report = synth::run_recovery_suite(suite);
  run.output("recovery.csv", render([&](std::ostream& o) { synth::write_report_csv(o, report); }));
  run.output("recovery.json", synth::report_json(report).dump(2) + "\n");
}

inline const std::map<std::string, std::function<void(Run&)>>& handlers() {
  static const std::map<std::string, std::function<void(Run&)>> h{
      {"ingest", cmd_ingest}, {"mcc", cmd_mcc},         {"estimate", cmd_estimate},
      {"synth", cmd_synth},   {"recover", cmd_recover}};
  return h;
}

}  // namespace detail

/// Runs a command and commits its outputs and manifest.
inline void execute(Run& run) {
  auto it = detail::handlers().find(run.command);
  if (it == detail::handlers().end()) throw UsageError("unknown command " + run.command);
  it->second(run);
  run.commit();
}

/// Re-runs the command recorded in a manifest into `out` and compares the
/// output bytes. Inputs whose hash changed are refused.
inline Run replay(const fs::path& manifest_path, const std::string& out, int threads) {
  const json m = read_json_file(manifest_path);
  for (const char* key : {"command", "args", "config", "inputs", "outputs"}) {
    if (!m.contains(key)) throw SchemaError("manifest lacks \"" + std::string(key) + "\"");
  }
  const fs::path original = fs::weakly_canonical(fs::absolute(manifest_path).parent_path());
  if (fs::weakly_canonical(fs::absolute(out)) == original) {
    throw UsageError("replay --out must differ from the directory holding the manifest");
  }
  for (const auto& in : m["inputs"]) {
    const fs::path p = in["path"].get<std::string>();
    if (!fs::exists(p)) throw MismatchError("input " + p.string() + " is missing");
    if (sha256_file(p) != in["sha256"].get<std::string>()) {
      throw MismatchError("input " + p.string() + " changed since the manifest was written");
    }
  }
  Run run(m["command"].get<std::string>());
  run.args = m["args"];
  run.config = m["config"];
  run.args["out"] = detail::absolute(out);
  if (threads > 0) run.args["threads"] = threads;
  run.replay_of = {{"manifest", fs::absolute(manifest_path).lexically_normal().string()},
                   {"sha256", sha256_file(manifest_path)}};
  execute(run);

  std::map<std::string, std::string> expected, got;
  for (const auto& o : m["outputs"]) expected[o["file"].get<std::string>()] = o["sha256"].get<std::string>();
  for (const auto& [name, content] : run.outputs()) got[name] = sha256(content);
  std::string diff;
  for (const auto& [name, h] : expected) {
    auto g = got.find(name);
    if (g == got.end()) diff += " missing:" + name;
    else if (g->second != h) diff += " differs:" + name;
  }
  for (const auto& [name, h] : got) {
    if (!expected.count(name)) diff += " extra:" + name;
  }
  if (!diff.empty()) throw ReplayMismatch("replay output does not match the manifest:" + diff);
  return run;
}

// ---------------------------------------------------------------------------
// Entry point

inline int run(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App cli{"crimelab: crime concentration and austerity analysis toolkit", "crimelab"};
  cli.require_subcommand(1);
  cli.set_version_flag("--version", std::string("crimelab ") + kVersion);

  int threads = 0;
  std::string out_dir;

  // ingest
  std::string crime, lookup, covariates, austerity, period = "month", weights = "period";
  int first_fy = 2011, last_fy = 2015;
  bool include_rural = false;
  double max_unresolved = 0.01;
  std::vector<std::string> theft_types;
  auto* ingest = cli.add_subcommand("ingest", "Build the district-period panel from street-level records");
  ingest->add_option("--crime", crime, "Crime CSV file or directory of monthly files")->required();
  ingest->add_option("--lookup", lookup, "LSOA to district/region lookup CSV")->required();
  ingest->add_option("--covariates", covariates, "District-period covariates CSV")->required();
  ingest->add_option("--austerity", austerity, "District austerity exposure CSV")->required();
  ingest->add_option("--out", out_dir, "Output directory")->required();
  ingest->add_option("--period", period, "month or fiscal_year")->capture_default_str();
  ingest->add_option("--first-fy", first_fy)->capture_default_str();
  ingest->add_option("--last-fy", last_fy)->capture_default_str();
  ingest->add_option("--weights", weights, "period or base-year population weights")->capture_default_str();
  ingest->add_flag("--include-rural", include_rural, "Keep districts not flagged urban");
  ingest->add_option("--max-unresolved", max_unresolved, "Largest tolerated share of unresolved LSOAs")
      ->capture_default_str();
  ingest->add_option("--theft-types", theft_types, "Raw crime types forming the theft column");

  // mcc
  std::string panel, streets;
  double k = 0.25;
  std::int64_t runs = 10000;
  std::uint64_t seed = 0;
  auto* mcc = cli.add_subcommand("mcc", "Marginal crime concentration per district, year and category");
  mcc->add_option("--panel", panel, "Directory holding street_counts.csv, or the file itself")->required();
  mcc->add_option("--streets", streets, "Street universe CSV (streets without recorded crime)");
  mcc->add_option("--k", k, "Crime share defining concentration")->capture_default_str();
  mcc->add_option("--runs", runs, "Simulations per cell")->capture_default_str();
  auto* mcc_seed = mcc->add_option("--seed", seed, "Master seed (generated when omitted)");
  mcc->add_option("--out", out_dir)->required();
  mcc->add_option("--threads", threads);

  // estimate
  std::string spec_file, family, concentration, recidivism, neighborhoods, imd, kernel = "epanechnikov",
                                                                                band = "uniform";
  double bandwidth = 0.0;
  int bootstrap = 500;
  auto* est = cli.add_subcommand("estimate", "Fit one family of specifications");
  est->add_option("--panel", panel, "Panel directory or panel.csv");
  est->add_option("--spec", spec_file, "Specification JSON (parameters JSON for becker)")->required();
  est->add_option("--family", family, "dd, binary, dynamic, placebo, ddd-mcc, ddd-police, recidivism, labor, "
                                      "neighborhood, nonparam or becker")
      ->required();
  est->add_option("--concentration", concentration, "concentration.csv from the mcc command");
  est->add_option("--recidivism", recidivism);
  est->add_option("--neighborhoods", neighborhoods);
  est->add_option("--imd", imd);
  est->add_option("--bandwidth", bandwidth, "Local linear bandwidth; 0 = rule of thumb")->capture_default_str();
  est->add_option("--kernel", kernel)->capture_default_str();
  est->add_option("--bootstrap", bootstrap, "Cluster bootstrap draws for the bands")->capture_default_str();
  est->add_option("--band", band, "uniform or pointwise")->capture_default_str();
  auto* est_seed = est->add_option("--seed", seed, "Band bootstrap seed (generated when omitted)");
  est->add_option("--out", out_dir)->required();
  est->add_option("--threads", threads);

  // synth
  std::string config_file;
  auto* syn = cli.add_subcommand("synth", "Generate a synthetic world with known effects");
  syn->add_option("--config", config_file, "DGP JSON")->required();
  auto* syn_seed = syn->add_option("--seed", seed, "Overrides the config seed");
  syn->add_option("--out", out_dir)->required();

  // recover
  int reps = 0;
  auto* rec = cli.add_subcommand("recover", "Monte Carlo recovery suite over synthetic worlds");
  rec->add_option("--config", config_file, "Suite JSON")->required();
  auto* rec_reps = rec->add_option("--reps", reps);
  auto* rec_seed = rec->add_option("--seed", seed);
  rec->add_option("--out", out_dir)->required();
  rec->add_option("--threads", threads);

  // replay
  std::string manifest;
  auto* rep = cli.add_subcommand("replay", "Re-run a manifest and compare output bytes");
  rep->add_option("--manifest", manifest)->required();
  rep->add_option("--out", out_dir)->required();
  rep->add_option("--threads", threads);

  try {
    cli.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return cli.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return cli.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    cli.exit(e, out, err);
    return ExitCode::schema;
  }

  auto load_config = [&](const std::string& path) {
    try {
      return read_json_file(path);
    } catch (const IoError& e) {
      throw UsageError(e.what());
    }
  };
  auto opt_seed = [&](CLI::Option* o) { return o->count() ? json(seed) : json(nullptr); };

  try {
    if (rep->parsed()) {
      const auto r = replay(manifest, out_dir, threads);
      out << "replay matches: " << r.outputs().size() << " outputs identical in " << r.arg("out") << '\n';
      return ExitCode::ok;
    }
    std::unique_ptr<Run> r;
    if (ingest->parsed()) {
      r = std::make_unique<Run>("ingest");
      r->args = {{"crime", detail::absolute(crime)},
                 {"lookup", detail::absolute(lookup)},
                 {"covariates", detail::absolute(covariates)},
                 {"austerity", detail::absolute(austerity)},
                 {"period", period},
                 {"first_fy", first_fy},
                 {"last_fy", last_fy},
                 {"weights", weights},
                 {"include_rural", include_rural},
                 {"max_unresolved", max_unresolved},
                 {"theft_types", theft_types}};
    } else if (mcc->parsed()) {
      r = std::make_unique<Run>("mcc");
      r->args = {{"panel", detail::absolute(panel)}, {"streets", detail::absolute(streets)},
                 {"k", k}, {"runs", runs}, {"seed", opt_seed(mcc_seed)}};
    } else if (est->parsed()) {
      r = std::make_unique<Run>("estimate");
      r->config = load_config(spec_file);
      r->args = {{"family", family},
                 {"spec", detail::absolute(spec_file)},
                 {"panel", detail::absolute(panel)},
                 {"concentration", detail::absolute(concentration)},
                 {"recidivism", detail::absolute(recidivism)},
                 {"neighborhoods", detail::absolute(neighborhoods)},
                 {"imd", detail::absolute(imd)},
                 {"bandwidth", bandwidth},
                 {"kernel", kernel},
                 {"bootstrap", bootstrap},
                 {"band", band},
                 {"seed", opt_seed(est_seed)}};
    } else if (syn->parsed()) {
      r = std::make_unique<Run>("synth");
      r->config = load_config(config_file);
      r->args = {{"config", detail::absolute(config_file)}, {"seed", opt_seed(syn_seed)}};
    } else if (rec->parsed()) {
      r = std::make_unique<Run>("recover");
      r->config = load_config(config_file);
      r->args = {{"config", detail::absolute(config_file)},
                 {"reps", rec_reps->count() ? json(reps) : json(nullptr)},
                 {"seed", opt_seed(rec_seed)}};
    }
    r->args["out"] = detail::absolute(out_dir);
    r->args["threads"] = threads;
    execute(*r);
    for (const auto& n : r->notes) err << "note: " << n << '\n';
    out << "wrote " << r->outputs().size() << " outputs and manifest.json to " << r->arg("out") << '\n';
    return ExitCode::ok;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return ExitCode::schema;
  } catch (const SchemaError& e) {
    err << "schema error: " << e.what() << '\n';
    return ExitCode::schema;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << '\n';
    return ExitCode::schema;
  } catch (const UnresolvedError& e) {
    err << "unresolved geography: " << e.what() << '\n';
    return ExitCode::unresolved;
  } catch (const MismatchError& e) {
    err << "mismatch: " << e.what() << '\n';
    return ExitCode::mismatch;
  } catch (const ReplayMismatch& e) {
    err << "replay: " << e.what() << '\n';
    return ExitCode::replay_differs;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return ExitCode::failure;
  }
}

/// Convenience overload for tests: args exclude the program name.
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<std::string> storage{"crimelab"};
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : storage) argv.push_back(s.data());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace crimelab::app
