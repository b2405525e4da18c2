#pragma once

// Street-level crime ingestion and district-period panel assembly.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>
#include <utility>
#include <vector>

#include "crimelab/csv.hpp"
#include "crimelab/errors.hpp"

namespace crimelab {

// ---------------------------------------------------------------------------
// Calendar

struct YearMonth {
  int year = 0;
  int month = 0;  // 1..12

  /// Months since year 0; a total order usable as an index.
  constexpr int index() const { return year * 12 + (month - 1); }
  static constexpr YearMonth from_index(int idx) { return {idx / 12, idx % 12 + 1}; }

  /// UK fiscal year: April Y .. March Y+1 belongs to Y.
  constexpr int fiscal_year() const { return month >= 4 ? year : year - 1; }

  friend constexpr auto operator<=>(const YearMonth&, const YearMonth&) = default;

  std::string str() const {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02d", year, month);
    return buf;
  }

  /// Parses "YYYY-MM".
  static std::optional<YearMonth> parse(std::string_view s) {
    s = trim_view(s);
    if (s.size() != 7 || s[4] != '-') return std::nullopt;
    auto y = csv::parse_int(s.substr(0, 4));
    auto m = csv::parse_int(s.substr(5, 2));
    if (!y || !m || *m < 1 || *m > 12) return std::nullopt;
    return YearMonth{static_cast<int>(*y), static_cast<int>(*m)};
  }

 private:
  static std::string_view trim_view(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
  }
};

/// Inclusive month range. The default is fiscal 2011..2015.
struct SampleWindow {
  YearMonth first{2011, 4};
  YearMonth last{2016, 3};

  bool contains(YearMonth m) const { return first <= m && m <= last; }

  static SampleWindow fiscal_years(int first_fy, int last_fy) {
    return {YearMonth{first_fy, 4}, YearMonth{last_fy + 1, 3}};
  }
};

enum class PeriodKind { month, fiscal_year };

inline std::string to_string(PeriodKind k) {
  return k == PeriodKind::month ? "month" : "fiscal-year";
}

inline PeriodKind parse_period_kind(std::string_view s) {
  if (s == "month" || s == "monthly") return PeriodKind::month;
  if (s == "fiscal-year" || s == "fiscal_year" || s == "year") return PeriodKind::fiscal_year;
  throw SchemaError("unknown period kind \"" + std::string(s) + "\"");
}

/// Period code: YYYYMM for months, YYYY for fiscal years.
inline int period_code(YearMonth m, PeriodKind kind) {
  return kind == PeriodKind::month ? m.year * 100 + m.month : m.fiscal_year();
}

inline int fiscal_year_of_period(int code, PeriodKind kind) {
  if (kind == PeriodKind::fiscal_year) return code;
  return YearMonth{code / 100, code % 100}.fiscal_year();
}

inline std::string format_period(int code, PeriodKind kind) {
  if (kind == PeriodKind::fiscal_year) return std::to_string(code);
  return YearMonth{code / 100, code % 100}.str();
}

inline std::optional<int> parse_period(std::string_view s, PeriodKind kind) {
  if (kind == PeriodKind::month) {
    auto m = YearMonth::parse(s);
    if (!m) return std::nullopt;
    return period_code(*m, kind);
  }
  auto y = csv::parse_int(s);
  if (!y) return std::nullopt;
  return static_cast<int>(*y);
}

/// All period codes covered by a window, ascending.
inline std::vector<int> window_periods(const SampleWindow& w, PeriodKind kind) {
  std::vector<int> out;
  for (int i = w.first.index(); i <= w.last.index(); ++i) {
    const int code = period_code(YearMonth::from_index(i), kind);
    if (out.empty() || out.back() != code) out.push_back(code);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Crime types

enum class Category { property, violent, other };

inline constexpr std::array<Category, 3> kCategories{Category::property, Category::violent,
                                                     Category::other};

inline std::string to_string(Category c) {
  switch (c) {
    case Category::property: return "property";
    case Category::violent: return "violent";
    case Category::other: return "other";
  }
  return "other";
}

inline Category parse_category(std::string_view s) {
  if (s == "property") return Category::property;
  if (s == "violent") return Category::violent;
  if (s == "other") return Category::other;
  throw SchemaError("unknown crime category \"" + std::string(s) + "\"");
}

/// Lower-cases, trims and collapses internal whitespace runs to one space.
inline std::string normalize_type(std::string_view raw) {
  std::string out;
  bool pending_space = false;
  for (unsigned char c : raw) {
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

/// Identifier-safe slug of a raw crime type ("Theft from the person" →
/// "theft_from_the_person").
inline std::string type_slug(std::string_view raw) {
  std::string out;
  for (unsigned char c : normalize_type(raw)) {
    if (std::isalnum(c)) {
      out.push_back(static_cast<char>(c));
    } else if (!out.empty() && out.back() != '_') {
      out.push_back('_');
    }
  }
  while (!out.empty() && out.back() == '_') out.pop_back();
  return out;
}

namespace detail {
inline const std::set<std::string>& property_types() {
  static const std::set<std::string> s{
      "bicycle theft",   "burglary",    "criminal damage and arson",
      "other theft",     "robbery",     "shoplifting",
      "theft from the person", "vehicle crime"};
  return s;
}

inline const std::set<std::string>& violent_types() {
  // British and American spellings; "violent crime" is the pre-May-2013
  // police.uk label for the violence series.
  static const std::set<std::string> s{
      "possession of weapons",
      "public order",
      "violence and sexual offences",
      "violence and sexual offenses",
      "public disorder and weapons",
      "violent crime"};
  return s;
}
}  // namespace detail

/// Total mapping from a raw police.uk crime type to a category.
inline Category classify_crime(std::string_view raw_type) {
  const std::string t = normalize_type(raw_type);
  if (detail::property_types().count(t)) return Category::property;
  if (detail::violent_types().count(t)) return Category::violent;
  return Category::other;
}

/// Raw types forming the "theft" aggregate column.
struct TheftDefinition {
  std::set<std::string> types{"other theft", "theft from the person", "shoplifting",
                              "bicycle theft"};

  bool contains(std::string_view raw) const { return types.count(normalize_type(raw)) > 0; }
};

// ---------------------------------------------------------------------------
// Records

struct CrimeRecord {
  YearMonth month;
  double longitude = 0.0;
  double latitude = 0.0;
  std::string location_label;
  std::string lsoa_code;
  std::string raw_type;
  Category category = Category::other;
  std::string district_id;  // empty until resolved
};

/// Street identity: snap-point coordinates at 1e-6 degrees plus the label.
struct StreetKey {
  std::int64_t longitude_fixed = 0;
  std::int64_t latitude_fixed = 0;
  std::string location_label;

  friend auto operator<=>(const StreetKey&, const StreetKey&) = default;
  friend bool operator==(const StreetKey&, const StreetKey&) = default;
};

/// llround rounds half away from zero.
inline std::int64_t to_fixed_degrees(double degrees) { return std::llround(degrees * 1e6); }

inline StreetKey street_key(const CrimeRecord& r) {
  return {to_fixed_degrees(r.longitude), to_fixed_degrees(r.latitude), r.location_label};
}

struct StreetKeyHash {
  std::size_t operator()(const StreetKey& k) const noexcept {
    std::size_t h = std::hash<std::int64_t>{}(k.longitude_fixed);
    h ^= std::hash<std::int64_t>{}(k.latitude_fixed) + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2);
    h ^= std::hash<std::string>{}(k.location_label) + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2);
    return h;
  }
};

struct Rejection {
  std::string source;
  std::size_t row = 0;  // physical line number, 1-based; 0 when not row-bound
  std::string reason;
};

struct CrimeSchema {
  std::string month = "Month";
  std::string longitude = "Longitude";
  std::string latitude = "Latitude";
  std::string location = "Location";
  std::string lsoa = "LSOA code";
  std::string crime_type = "Crime type";
};

struct ParseResult {
  std::vector<CrimeRecord> records;
  std::vector<Rejection> rejections;
};

inline constexpr double kMinLongitude = -8.65, kMaxLongitude = 1.77;
inline constexpr double kMinLatitude = 49.8, kMaxLatitude = 60.9;

/// Parses one police.uk street-level CSV. Malformed rows are rejected with
/// their line number; a missing required column throws SchemaError.
inline ParseResult parse_crime_csv(std::istream& in, const std::string& source,
                                   const CrimeSchema& schema = {},
                                   const SampleWindow& window = {}) {
  csv::Reader reader(in);
  csv::Row row;
  std::size_t line = 0;
  if (!reader.next(row, &line)) throw SchemaError(source + ": header row missing");
  const csv::Header header(row);
  const auto c_month = header.require(schema.month, source);
  const auto c_lon = header.require(schema.longitude, source);
  const auto c_lat = header.require(schema.latitude, source);
  const auto c_loc = header.require(schema.location, source);
  const auto c_lsoa = header.require(schema.lsoa, source);
  const auto c_type = header.require(schema.crime_type, source);
  const std::size_t width = std::max({c_month, c_lon, c_lat, c_loc, c_lsoa, c_type}) + 1;

  ParseResult out;
  while (reader.next(row, &line)) {
    if (row.size() == 1 && row[0].empty()) continue;
    auto reject = [&](std::string reason) {
      out.rejections.push_back({source, line, std::move(reason)});
    };
    if (row.size() < width) {
      reject("too few fields");
      continue;
    }
    auto month = YearMonth::parse(row[c_month]);
    if (!month) {
      reject("unparseable month \"" + row[c_month] + "\"");
      continue;
    }
    if (!window.contains(*month)) {
      reject("month " + month->str() + " outside sample window");
      continue;
    }
    auto lon = csv::parse_double(row[c_lon]);
    auto lat = csv::parse_double(row[c_lat]);
    if (!lon || !lat) {
      reject("unparseable coordinate");
      continue;
    }
    if (*lon < kMinLongitude || *lon > kMaxLongitude || *lat < kMinLatitude ||
        *lat > kMaxLatitude) {
      reject("coordinate outside Great Britain bounding box");
      continue;
    }
    const std::string type = csv::Header::trim(row[c_type]);
    if (type.empty()) {
      reject("empty crime type");
      continue;
    }
    CrimeRecord r;
    r.month = *month;
    r.longitude = *lon;
    r.latitude = *lat;
    r.location_label = csv::Header::trim(row[c_loc]);
    r.lsoa_code = csv::Header::trim(row[c_lsoa]);
    r.raw_type = type;
    r.category = classify_crime(type);
    out.records.push_back(std::move(r));
  }
  return out;
}

inline ParseResult parse_crime_csv(const std::filesystem::path& path,
                                   const CrimeSchema& schema = {},
                                   const SampleWindow& window = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return parse_crime_csv(in, path.string(), schema, window);
}

/// Parses every *.csv under `path` (recursively, in lexicographic path order)
/// or the single file `path`.
inline ParseResult parse_crime_path(const std::filesystem::path& path,
                                    const CrimeSchema& schema = {},
                                    const SampleWindow& window = {}) {
  namespace fs = std::filesystem;
  std::vector<fs::path> files;
  if (fs::is_directory(path)) {
    for (const auto& e : fs::recursive_directory_iterator(path)) {
      if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(path);
  }
  ParseResult all;
  for (const auto& f : files) {
    auto part = parse_crime_csv(f, schema, window);
    all.records.insert(all.records.end(), std::make_move_iterator(part.records.begin()),
                       std::make_move_iterator(part.records.end()));
    all.rejections.insert(all.rejections.end(), part.rejections.begin(), part.rejections.end());
  }
  return all;
}

// ---------------------------------------------------------------------------
// Geography

struct GeoLookup {
  std::unordered_map<std::string, std::string> lsoa_to_district;
  std::map<std::string, std::string> district_to_region;
  std::map<std::string, bool> district_urban_flag;

  const std::string* district_of(const std::string& lsoa) const {
    auto it = lsoa_to_district.find(lsoa);
    return it == lsoa_to_district.end() ? nullptr : &it->second;
  }

  const std::string& region_of(const std::string& district) const {
    auto it = district_to_region.find(district);
    if (it == district_to_region.end()) throw MismatchError("district " + district + " has no region");
    return it->second;
  }

  bool is_urban(const std::string& district) const {
    auto it = district_urban_flag.find(district);
    return it != district_urban_flag.end() && it->second;
  }

  void add(const std::string& lsoa, const std::string& district, const std::string& region,
           bool urban) {
    auto [it, inserted] = district_to_region.emplace(district, region);
    if (!inserted && it->second != region) {
      throw SchemaError("district " + district + " mapped to regions " + it->second + " and " +
                        region);
    }
    district_urban_flag[district] = urban;
    lsoa_to_district[lsoa] = district;
  }
};

inline bool parse_flag(std::string_view s) {
  const std::string t = normalize_type(s);
  return t == "1" || t == "true" || t == "yes" || t == "urban";
}

/// Lookup CSV: lsoa_code,district_id,region_id,urban_flag.
inline GeoLookup load_lookup(const std::filesystem::path& path) {
  const auto t = csv::read_table(path);
  const auto src = path.string();
  const auto c_lsoa = t.header.require("lsoa_code", src);
  const auto c_dist = t.header.require("district_id", src);
  const auto c_reg = t.header.require("region_id", src);
  const auto c_urb = t.header.require("urban_flag", src);
  GeoLookup g;
  for (const auto& r : t.rows) {
    g.add(csv::Header::trim(r.at(c_lsoa)), csv::Header::trim(r.at(c_dist)),
          csv::Header::trim(r.at(c_reg)), parse_flag(r.at(c_urb)));
  }
  return g;
}

/// Resolves district ids in place. Records with unknown LSOAs are removed and
/// reported.
inline std::vector<Rejection> resolve_districts(std::vector<CrimeRecord>& records,
                                                const GeoLookup& lookup) {
  std::vector<Rejection> rejected;
  std::vector<CrimeRecord> kept;
  kept.reserve(records.size());
  for (auto& r : records) {
    if (const auto* d = lookup.district_of(r.lsoa_code)) {
      r.district_id = *d;
      kept.push_back(std::move(r));
    } else {
      rejected.push_back({"lookup", 0, "unresolved LSOA \"" + r.lsoa_code + "\""});
    }
  }
  records = std::move(kept);
  return rejected;
}

// ---------------------------------------------------------------------------
// Counting

struct CategoryCounts {
  std::int64_t total = 0;
  std::int64_t property = 0;
  std::int64_t violent = 0;
  std::int64_t other = 0;
  std::int64_t theft = 0;
  std::map<std::string, std::int64_t> by_type;  // keyed by type_slug

  void add(const CrimeRecord& r, const TheftDefinition& theft_def) {
    ++total;
    switch (r.category) {
      case Category::property: ++property; break;
      case Category::violent: ++violent; break;
      case Category::other: ++other; break;
    }
    if (theft_def.contains(r.raw_type)) ++theft;
    ++by_type[type_slug(r.raw_type)];
  }

  std::int64_t of(Category c) const {
    switch (c) {
      case Category::property: return property;
      case Category::violent: return violent;
      case Category::other: return other;
    }
    return 0;
  }

  friend bool operator==(const CategoryCounts&, const CategoryCounts&) = default;
};

struct CountTable {
  PeriodKind kind = PeriodKind::month;
  std::map<std::pair<std::string, int>, CategoryCounts> cells;  // (district, period)
  std::vector<Rejection> rejections;
  std::size_t non_urban_records = 0;
};

/// Exact district × period counts. Records must carry a resolvable LSOA;
/// unresolvable ones are reported. Non-urban districts are dropped and
/// tallied when `urban_only`.
inline CountTable aggregate_district_period(const std::vector<CrimeRecord>& records,
                                            const GeoLookup& lookup, PeriodKind kind,
                                            const TheftDefinition& theft_def = {},
                                            bool urban_only = true) {
  CountTable t;
  t.kind = kind;
  for (const auto& r : records) {
    const std::string* district = r.district_id.empty() ? lookup.district_of(r.lsoa_code)
                                                        : &r.district_id;
    if (!district) {
      t.rejections.push_back({"lookup", 0, "unresolved LSOA \"" + r.lsoa_code + "\""});
      continue;
    }
    if (urban_only && !lookup.is_urban(*district)) {
      ++t.non_urban_records;
      continue;
    }
    t.cells[{*district, period_code(r.month, kind)}].add(r, theft_def);
  }
  return t;
}

// ---------------------------------------------------------------------------
// Auxiliary tables

inline constexpr std::array<const char*, 5> kMaleShareColumns{
    "share_m_10_17", "share_m_18_24", "share_m_25_30", "share_m_31_40", "share_m_41_50"};

struct CovariateRow {
  double population = 0.0;
  double working_age_population = 0.0;
  double police_per_1000 = 0.0;
  double median_weekly_wage = 0.0;
  std::array<double, 5> male_shares{};
  std::map<std::string, double> extra;  // additional numeric columns (labor outcomes)
};

using CovariateTable = std::map<std::pair<std::string, int>, CovariateRow>;

/// Covariate CSV keyed by (district_id, period). Columns beyond the required
/// set are kept as named extras.
inline CovariateTable load_covariates(const std::filesystem::path& path, PeriodKind kind) {
  const auto t = csv::read_table(path);
  const auto src = path.string();
  const auto c_dist = t.header.require("district_id", src);
  const auto c_per = t.header.require("period", src);
  const auto c_pop = t.header.require("population", src);
  const auto c_wap = t.header.require("working_age_population", src);
  const auto c_pol = t.header.require("police_per_1000", src);
  const auto c_wage = t.header.require("median_weekly_wage", src);
  std::array<std::size_t, 5> c_share{};
  for (std::size_t j = 0; j < 5; ++j) c_share[j] = t.header.require(kMaleShareColumns[j], src);
  std::set<std::size_t> known{c_dist, c_per, c_pop, c_wap, c_pol, c_wage};
  known.insert(c_share.begin(), c_share.end());

  CovariateTable out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    const std::string where = src + " line " + std::to_string(t.lines[i]);
    auto num = [&](std::size_t c) {
      auto v = csv::parse_double(r.at(c));
      if (!v) throw SchemaError(where + ": non-numeric " + t.header.names()[c]);
      return *v;
    };
    auto period = parse_period(r.at(c_per), kind);
    if (!period) throw SchemaError(where + ": bad period \"" + r.at(c_per) + "\"");
    CovariateRow row;
    row.population = num(c_pop);
    row.working_age_population = num(c_wap);
    row.police_per_1000 = num(c_pol);
    row.median_weekly_wage = num(c_wage);
    for (std::size_t j = 0; j < 5; ++j) row.male_shares[j] = num(c_share[j]);
    for (std::size_t c = 0; c < r.size() && c < t.header.names().size(); ++c) {
      if (known.count(c)) continue;
      if (auto v = csv::parse_double(r[c])) row.extra[csv::Header::trim(t.header.names()[c])] = *v;
    }
    out[{csv::Header::trim(r.at(c_dist)), *period}] = std::move(row);
  }
  return out;
}

/// Austerity CSV: district_id,sai_pounds.
inline std::map<std::string, double> load_austerity(const std::filesystem::path& path) {
  const auto t = csv::read_table(path);
  const auto src = path.string();
  const auto c_dist = t.header.require("district_id", src);
  const auto c_sai = t.header.require("sai_pounds", src);
  std::map<std::string, double> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    auto v = csv::parse_double(t.rows[i].at(c_sai));
    if (!v) throw SchemaError(src + " line " + std::to_string(t.lines[i]) + ": bad sai_pounds");
    out[csv::Header::trim(t.rows[i].at(c_dist))] = *v;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Panel

enum class WeightSource { period_population, base_year_population };

struct PanelConfig {
  PeriodKind kind = PeriodKind::month;
  SampleWindow window{};
  WeightSource weights = WeightSource::period_population;
};

/// One district-period observation. Crime and labor outcomes live in
/// `values` under names such as "count_total", "rate_violent",
/// "log_rate_burglary"; a missing log rate means the count was zero.
struct PanelRow {
  std::string district_id;
  std::string region_id;
  int period = 0;
  int fiscal_year = 0;
  double population = 0.0;
  double working_age_population = 0.0;
  double weight = 0.0;
  double sai_pounds = 0.0;
  double police_per_1000 = 0.0;
  double median_weekly_wage = 0.0;
  std::array<double, 5> male_shares{};
  std::map<std::string, double> values;

  /// Treatment intensity in £100s per working-age adult.
  double austerity() const { return sai_pounds / 100.0; }

  std::optional<double> value(const std::string& name) const {
    auto it = values.find(name);
    if (it == values.end()) return std::nullopt;
    return it->second;
  }

  /// Named numeric column, including the fixed control columns.
  std::optional<double> column(const std::string& name) const {
    if (name == "police_per_1000") return police_per_1000;
    if (name == "median_weekly_wage") return median_weekly_wage;
    if (name == "population") return population;
    if (name == "working_age_population") return working_age_population;
    if (name == "sai_pounds") return sai_pounds;
    if (name == "austerity") return austerity();
    for (std::size_t j = 0; j < 5; ++j) {
      if (name == kMaleShareColumns[j]) return male_shares[j];
    }
    return value(name);
  }
};

struct PanelFlag {
  std::string district_id;
  int period = 0;
  std::string reason;
};

struct DistrictPanel {
  PeriodKind kind = PeriodKind::month;
  std::vector<PanelRow> rows;  // sorted by (district, period)
  std::vector<PanelFlag> flags;

  std::set<std::string> districts() const {
    std::set<std::string> s;
    for (const auto& r : rows) s.insert(r.district_id);
    return s;
  }
};

inline void set_count_values(PanelRow& row, const std::string& name, std::int64_t count,
                             std::vector<PanelFlag>& flags) {
  const double rate = 1000.0 * static_cast<double>(count) / row.population;
  row.values["count_" + name] = static_cast<double>(count);
  row.values["rate_" + name] = rate;
  if (count > 0) {
    row.values["log_rate_" + name] = std::log(rate);
  } else if (name == "total" || name == "property" || name == "violent") {
    flags.push_back({row.district_id, row.period, "zero " + name + " count: log rate undefined"});
  }
}

/// Builds the analysis panel over every urban district with crime data and
/// every period of the window. Missing covariates or austerity for an
/// in-sample district-period throw MismatchError naming the gap.
inline DistrictPanel assemble_panel(const CountTable& counts, const CovariateTable& covariates,
                                    const std::map<std::string, double>& austerity,
                                    const GeoLookup& lookup, const PanelConfig& config) {
  if (counts.kind != config.kind) throw MismatchError("count table period kind differs from config");
  DistrictPanel panel;
  panel.kind = config.kind;
  std::set<std::string> districts;
  std::set<std::string> slugs;
  for (const auto& [key, c] : counts.cells) {
    districts.insert(key.first);
    for (const auto& [slug, n] : c.by_type) slugs.insert(slug);
  }
  const auto periods = window_periods(config.window, config.kind);
  const CategoryCounts empty{};

  for (const auto& d : districts) {
    auto sai = austerity.find(d);
    if (sai == austerity.end()) throw MismatchError("no austerity value for district " + d);
    double base_population = 0.0;
    for (std::size_t p = 0; p < periods.size(); ++p) {
      const int period = periods[p];
      auto cov = covariates.find({d, period});
      if (cov == covariates.end()) {
        throw MismatchError("missing covariates for district " + d + " period " +
                            format_period(period, config.kind));
      }
      const CovariateRow& cv = cov->second;
      if (!(cv.population > 0.0)) {
        throw MismatchError("non-positive population for district " + d + " period " +
                            format_period(period, config.kind));
      }
      double share_sum = 0.0;
      for (double s : cv.male_shares) {
        if (!(s > 0.0 && s < 1.0)) {
          throw MismatchError("male population share outside (0,1) for district " + d);
        }
        share_sum += s;
      }
      if (!(share_sum < 1.0)) throw MismatchError("male population shares sum to >= 1 for " + d);
      if (p == 0) base_population = cv.population;

      PanelRow row;
      row.district_id = d;
      row.region_id = lookup.region_of(d);
      row.period = period;
      row.fiscal_year = fiscal_year_of_period(period, config.kind);
      row.population = cv.population;
      row.working_age_population = cv.working_age_population;
      row.weight = config.weights == WeightSource::period_population ? cv.population
                                                                      : base_population;
      row.sai_pounds = sai->second;
      row.police_per_1000 = cv.police_per_1000;
      row.median_weekly_wage = cv.median_weekly_wage;
      row.male_shares = cv.male_shares;
      for (const auto& [k, v] : cv.extra) row.values[k] = v;

      auto cell = counts.cells.find({d, period});
      const CategoryCounts& c = cell == counts.cells.end() ? empty : cell->second;
      set_count_values(row, "total", c.total, panel.flags);
      set_count_values(row, "property", c.property, panel.flags);
      set_count_values(row, "violent", c.violent, panel.flags);
      set_count_values(row, "other", c.other, panel.flags);
      set_count_values(row, "theft", c.theft, panel.flags);
      for (const auto& slug : slugs) {
        auto it = c.by_type.find(slug);
        set_count_values(row, slug, it == c.by_type.end() ? 0 : it->second, panel.flags);
      }
      panel.rows.push_back(std::move(row));
    }
  }
  return panel;
}

// Columnar panel CSV: fixed columns, then one column per value name (sorted);
// an empty field means "undefined".

inline const std::vector<std::string>& panel_fixed_columns() {
  static const std::vector<std::string> cols{
      "district_id", "region_id", "period", "fiscal_year", "population",
      "working_age_population", "weight", "sai_pounds", "police_per_1000",
      "median_weekly_wage", "share_m_10_17", "share_m_18_24", "share_m_25_30",
      "share_m_31_40", "share_m_41_50"};
  return cols;
}

inline void write_panel_csv(std::ostream& out, const DistrictPanel& panel) {
  std::set<std::string> names;
  for (const auto& r : panel.rows) {
    for (const auto& [k, v] : r.values) names.insert(k);
  }
  csv::Row header = panel_fixed_columns();
  header.insert(header.end(), names.begin(), names.end());
  out << "# period_kind=" << to_string(panel.kind) << '\n';
  csv::write_row(out, header);
  for (const auto& r : panel.rows) {
    csv::Row row{r.district_id,
                 r.region_id,
                 format_period(r.period, panel.kind),
                 std::to_string(r.fiscal_year),
                 csv::format_double(r.population),
                 csv::format_double(r.working_age_population),
                 csv::format_double(r.weight),
                 csv::format_double(r.sai_pounds),
                 csv::format_double(r.police_per_1000),
                 csv::format_double(r.median_weekly_wage)};
    for (double s : r.male_shares) row.push_back(csv::format_double(s));
    for (const auto& n : names) {
      auto it = r.values.find(n);
      row.push_back(it == r.values.end() ? "" : csv::format_double(it->second));
    }
    csv::write_row(out, row);
  }
}

inline DistrictPanel read_panel_csv(std::istream& in, const std::string& source = "panel") {
  std::string first;
  std::getline(in, first);
  const std::string tag = "# period_kind=";
  if (first.rfind(tag, 0) != 0) throw SchemaError(source + ": missing period_kind comment line");
  std::string kind_text = first.substr(tag.size());
  while (!kind_text.empty() && (kind_text.back() == '\r' || kind_text.back() == ' ')) kind_text.pop_back();
  DistrictPanel panel;
  panel.kind = parse_period_kind(kind_text);
  const auto t = csv::read_table(in);
  const auto& fixed = panel_fixed_columns();
  std::vector<std::size_t> idx;
  for (const auto& c : fixed) idx.push_back(t.header.require(c, source));
  std::vector<std::pair<std::size_t, std::string>> extra;
  for (std::size_t c = 0; c < t.header.names().size(); ++c) {
    const std::string name = csv::Header::trim(t.header.names()[c]);
    if (std::find(fixed.begin(), fixed.end(), name) == fixed.end()) extra.emplace_back(c, name);
  }
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    const std::string where = source + " line " + std::to_string(t.lines[i] + 1);
    auto num = [&](std::size_t k) {
      auto v = csv::parse_double(r.at(idx[k]));
      if (!v) throw SchemaError(where + ": non-numeric " + fixed[k]);
      return *v;
    };
    PanelRow row;
    row.district_id = r.at(idx[0]);
    row.region_id = r.at(idx[1]);
    auto period = parse_period(r.at(idx[2]), panel.kind);
    if (!period) throw SchemaError(where + ": bad period");
    row.period = *period;
    row.fiscal_year = static_cast<int>(num(3));
    row.population = num(4);
    row.working_age_population = num(5);
    row.weight = num(6);
    row.sai_pounds = num(7);
    row.police_per_1000 = num(8);
    row.median_weekly_wage = num(9);
    for (std::size_t j = 0; j < 5; ++j) row.male_shares[j] = num(10 + j);
    for (const auto& [c, name] : extra) {
      if (c < r.size()) {
        if (auto v = csv::parse_double(r[c])) row.values[name] = *v;
      }
    }
    panel.rows.push_back(std::move(row));
  }
  return panel;
}

inline DistrictPanel read_panel_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_panel_csv(in, path.string());
}

// ---------------------------------------------------------------------------
// Neighborhood inputs

struct ImdDomains {
  double health = 0.0;
  double education = 0.0;
  double housing_barriers = 0.0;
  double living_env = 0.0;
};

/// IMD CSV: lsoa_code,health,education,housing_barriers,living_env.
inline std::map<std::string, ImdDomains> load_imd(const std::filesystem::path& path) {
  const auto t = csv::read_table(path);
  const auto src = path.string();
  const auto c_lsoa = t.header.require("lsoa_code", src);
  const std::array<std::size_t, 4> c{
      t.header.require("health", src), t.header.require("education", src),
      t.header.require("housing_barriers", src), t.header.require("living_env", src)};
  std::map<std::string, ImdDomains> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    std::array<double, 4> v{};
    for (std::size_t j = 0; j < 4; ++j) {
      auto x = csv::parse_double(t.rows[i].at(c[j]));
      if (!x) throw SchemaError(src + " line " + std::to_string(t.lines[i]) + ": non-numeric domain score");
      v[j] = *x;
    }
    out[csv::Header::trim(t.rows[i].at(c_lsoa))] = {v[0], v[1], v[2], v[3]};
  }
  return out;
}

inline void write_imd_csv(std::ostream& out, const std::map<std::string, ImdDomains>& imd) {
  csv::write_row(out, {"lsoa_code", "health", "education", "housing_barriers", "living_env"});
  for (const auto& [lsoa, d] : imd) {
    csv::write_row(out, {lsoa, csv::format_double(d.health), csv::format_double(d.education),
                         csv::format_double(d.housing_barriers), csv::format_double(d.living_env)});
  }
}

/// Crime counts for one neighborhood (LSOA) in one fiscal year.
struct NeighborhoodCount {
  std::string lsoa_code;
  std::string district_id;
  int year = 0;
  std::int64_t total = 0;
  std::int64_t property = 0;
  std::int64_t violent = 0;

  std::int64_t of(std::string_view category) const {
    if (category == "property") return property;
    if (category == "violent") return violent;
    return total;
  }
};

inline std::vector<NeighborhoodCount> aggregate_neighborhood_year(
    const std::vector<CrimeRecord>& records, const GeoLookup& lookup, bool urban_only = true) {
  std::map<std::pair<std::string, int>, NeighborhoodCount> cells;
  for (const auto& r : records) {
    const std::string* district = r.district_id.empty() ? lookup.district_of(r.lsoa_code)
                                                        : &r.district_id;
    if (!district) continue;
    if (urban_only && !lookup.is_urban(*district)) continue;
    auto& c = cells[{r.lsoa_code, r.month.fiscal_year()}];
    c.lsoa_code = r.lsoa_code;
    c.district_id = *district;
    c.year = r.month.fiscal_year();
    ++c.total;
    if (r.category == Category::property) ++c.property;
    if (r.category == Category::violent) ++c.violent;
  }
  std::vector<NeighborhoodCount> out;
  out.reserve(cells.size());
  for (auto& [k, v] : cells) out.push_back(std::move(v));
  return out;
}

inline void write_neighborhood_csv(std::ostream& out, const std::vector<NeighborhoodCount>& rows) {
  csv::write_row(out, {"lsoa_code", "district_id", "year", "total", "property", "violent"});
  for (const auto& r : rows) {
    csv::write_row(out, {r.lsoa_code, r.district_id, std::to_string(r.year),
                         std::to_string(r.total), std::to_string(r.property),
                         std::to_string(r.violent)});
  }
}

inline std::vector<NeighborhoodCount> read_neighborhood_csv(const std::filesystem::path& path) {
  const auto t = csv::read_table(path);
  const auto src = path.string();
  const std::array<std::size_t, 6> c{
      t.header.require("lsoa_code", src), t.header.require("district_id", src),
      t.header.require("year", src),      t.header.require("total", src),
      t.header.require("property", src),  t.header.require("violent", src)};
  std::vector<NeighborhoodCount> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    auto num = [&](std::size_t k) {
      auto v = csv::parse_int(r.at(c[k]));
      if (!v) throw SchemaError(src + " line " + std::to_string(t.lines[i]) + ": non-integer field");
      return *v;
    };
    out.push_back({r.at(c[0]), r.at(c[1]), static_cast<int>(num(2)), num(3), num(4), num(5)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Recidivism

struct RecidivismCohort {
  std::string district_id;
  YearMonth cohort_start;  // first month of a four-quarter window
  std::string group;
  std::int64_t offenders = 0;
  std::int64_t reoffenders = 0;
  std::int64_t reoffences = 0;
  std::int64_t prior_offences = 0;
};

/// Accepts "YYYY-MM" or "YYYYQn" (calendar quarter n).
inline std::optional<YearMonth> parse_cohort_start(std::string_view s) {
  if (auto m = YearMonth::parse(s)) return m;
  if (s.size() == 6 && (s[4] == 'Q' || s[4] == 'q')) {
    auto y = csv::parse_int(s.substr(0, 4));
    auto q = csv::parse_int(s.substr(5, 1));
    if (y && q && *q >= 1 && *q <= 4) return YearMonth{static_cast<int>(*y), static_cast<int>(*q * 3 - 2)};
  }
  return std::nullopt;
}

/// Recidivism CSV: district_id,cohort_start_quarter,group,offenders,
/// reoffenders,reoffences,prior_offences.
inline std::vector<RecidivismCohort> load_recidivism(const std::filesystem::path& path) {
  const auto t = csv::read_table(path);
  const auto src = path.string();
  const std::array<std::size_t, 7> c{
      t.header.require("district_id", src), t.header.require("cohort_start_quarter", src),
      t.header.require("group", src),       t.header.require("offenders", src),
      t.header.require("reoffenders", src), t.header.require("reoffences", src),
      t.header.require("prior_offences", src)};
  std::vector<RecidivismCohort> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    const std::string where = src + " line " + std::to_string(t.lines[i]);
    auto start = parse_cohort_start(r.at(c[1]));
    if (!start) throw SchemaError(where + ": bad cohort_start_quarter \"" + r.at(c[1]) + "\"");
    auto num = [&](std::size_t k) {
      auto v = csv::parse_int(r.at(c[k]));
      if (!v || *v < 0) throw SchemaError(where + ": counts must be non-negative integers");
      return *v;
    };
    RecidivismCohort cohort{r.at(c[0]), *start, r.at(c[2]), num(3), num(4), num(5), num(6)};
    if (cohort.reoffenders > cohort.offenders) throw SchemaError(where + ": reoffenders exceed offenders");
    out.push_back(std::move(cohort));
  }
  return out;
}

inline void write_recidivism_csv(std::ostream& out, const std::vector<RecidivismCohort>& rows) {
  csv::write_row(out, {"district_id", "cohort_start_quarter", "group", "offenders", "reoffenders",
                       "reoffences", "prior_offences"});
  for (const auto& r : rows) {
    csv::write_row(out, {r.district_id, r.cohort_start.str(), r.group, std::to_string(r.offenders),
                         std::to_string(r.reoffenders), std::to_string(r.reoffences),
                         std::to_string(r.prior_offences)});
  }
}

}  // namespace crimelab
