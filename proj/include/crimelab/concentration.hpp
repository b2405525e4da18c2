#pragma once

// Crime concentration, its uniform-allocation simulation, and marginal crime
// concentration (simulated minus observed).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "crimelab/csv.hpp"
#include "crimelab/errors.hpp"
#include "crimelab/ingest.hpp"
#include "crimelab/parallel.hpp"
#include "crimelab/rng.hpp"

namespace crimelab {

/// Per-street counts for one area-period-category. `streets` is the size of
/// the street universe, so it also covers streets with no crime.
struct StreetCountVector {
  std::vector<std::int64_t> counts;
  std::int64_t streets = 0;

  std::int64_t total() const {
    std::int64_t t = 0;
    for (auto c : counts) t += c;
    return t;
  }

  static StreetCountVector from_counts(std::vector<std::int64_t> counts) {
    StreetCountVector v;
    v.streets = static_cast<std::int64_t>(counts.size());
    v.counts = std::move(counts);
    return v;
  }
};

namespace detail {

inline void check_share(double k) {
  if (!(k > 0.0 && k <= 1.0)) throw DomainError("concentration share k must lie in (0, 1]");
}

/// Fewest streets, at `level` crimes each, that lift `covered` to `threshold`.
inline std::int64_t streets_to_reach(double threshold, std::int64_t covered, std::int64_t level) {
  auto j = static_cast<std::int64_t>(
      std::ceil((threshold - static_cast<double>(covered)) / static_cast<double>(level)));
  if (j < 1) j = 1;
  while (j > 1 && static_cast<double>(covered + (j - 1) * level) >= threshold) --j;
  while (static_cast<double>(covered + j * level) < threshold) ++j;
  return j;
}

/// Minimal street count reaching `threshold` given a histogram
/// hist[c] = number of streets with exactly c crimes.
inline std::int64_t streets_needed_from_histogram(const std::vector<std::int64_t>& hist,
                                                  double threshold) {
  std::int64_t covered = 0;
  std::int64_t used = 0;
  for (std::size_t c = hist.size(); c-- > 1;) {
    const std::int64_t h = hist[c];
    if (h == 0) continue;
    const auto level = static_cast<std::int64_t>(c);
    if (static_cast<double>(covered + h * level) >= threshold) {
      return used + streets_to_reach(threshold, covered, level);
    }
    covered += h * level;
    used += h;
  }
  return used;
}

}  // namespace detail

/// Proportion of streets, taken in descending count order, needed for their
/// cumulative count to reach k × total. Throws DomainError on an empty cell.
inline double crime_concentration(const StreetCountVector& v, double k) {
  detail::check_share(k);
  const std::int64_t total = v.total();
  if (total <= 0) throw DomainError("crime concentration undefined for a cell with no crime");
  if (v.streets < static_cast<std::int64_t>(
                      std::count_if(v.counts.begin(), v.counts.end(), [](auto c) { return c > 0; }))) {
    throw DomainError("street universe smaller than the number of streets with crime");
  }
  std::vector<std::int64_t> sorted = v.counts;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const double threshold = k * static_cast<double>(total);
  std::int64_t covered = 0;
  std::int64_t m = 0;
  for (auto c : sorted) {
    covered += c;
    ++m;
    if (static_cast<double>(covered) >= threshold) break;
  }
  return static_cast<double>(m) / static_cast<double>(v.streets);
}

struct SimulationResult {
  double mean = 0.0;       // mean simulated concentration over runs
  double std_error = 0.0;  // Monte Carlo standard error of `mean`
  std::int64_t runs = 0;
};

/// Mean concentration when each of n_crimes crimes is placed on one of
/// n_streets streets uniformly with replacement, over `runs` replications.
/// Run r uses the stream derive_seed(seed, r), and per-run street counts are
/// summed as integers, so the result does not depend on `threads`.
inline SimulationResult simulate_uniform_cc(std::int64_t n_crimes, std::int64_t n_streets,
                                            double k, std::int64_t runs, std::uint64_t seed,
                                            unsigned threads = 1) {
  detail::check_share(k);
  if (n_crimes < 1 || n_streets < 1 || runs < 1) {
    throw DomainError("simulation requires n_crimes >= 1, n_streets >= 1 and runs >= 1");
  }
  const double threshold = k * static_cast<double>(n_crimes);
  constexpr std::int64_t kChunk = 64;
  const auto chunks = static_cast<std::size_t>((runs + kChunk - 1) / kChunk);
  std::vector<std::int64_t> sum_m(chunks, 0);
  std::vector<long double> sum_m2(chunks, 0.0L);

  parallel_for(chunks, threads, [&](std::size_t chunk) {
    std::vector<std::int32_t> street(static_cast<std::size_t>(n_streets));
    std::vector<std::int64_t> hist;
    const std::int64_t first = static_cast<std::int64_t>(chunk) * kChunk;
    const std::int64_t last = std::min(runs, first + kChunk);
    for (std::int64_t r = first; r < last; ++r) {
      Xoshiro256 rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
      std::fill(street.begin(), street.end(), 0);
      std::int32_t max_count = 0;
      for (std::int64_t i = 0; i < n_crimes; ++i) {
        const auto s = rng.below(static_cast<std::uint64_t>(n_streets));
        max_count = std::max(max_count, ++street[s]);
      }
      hist.assign(static_cast<std::size_t>(max_count) + 1, 0);
      for (auto c : street) ++hist[static_cast<std::size_t>(c)];
      const std::int64_t m = detail::streets_needed_from_histogram(hist, threshold);
      sum_m[chunk] += m;
      sum_m2[chunk] += static_cast<long double>(m) * static_cast<long double>(m);
    }
  });

  std::int64_t total_m = 0;
  long double total_m2 = 0.0L;
  for (std::size_t c = 0; c < chunks; ++c) {
    total_m += sum_m[c];
    total_m2 += sum_m2[c];
  }
  const auto S = static_cast<long double>(n_streets);
  const auto R = static_cast<long double>(runs);
  SimulationResult out;
  out.runs = runs;
  out.mean = static_cast<double>(static_cast<long double>(total_m) / (R * S));
  if (runs > 1) {
    const long double mean_m = static_cast<long double>(total_m) / R;
    long double var_m = (total_m2 - R * mean_m * mean_m) / (R - 1.0L);
    if (var_m < 0.0L) var_m = 0.0L;
    out.std_error = static_cast<double>(std::sqrt(var_m / R) / S);
  }
  return out;
}

struct ConcentrationRecord {
  std::string district_id;
  int year = 0;
  std::string category;
  double k = 0.25;
  double cc_raw = 0.0;
  double cc_sim_mean = 0.0;
  double cc_sim_se = 0.0;
  double mcc = 0.0;
  std::int64_t n_crimes = 0;
  std::int64_t n_streets = 0;
  std::int64_t runs = 0;
  std::uint64_t seed = 0;
};

/// Marginal crime concentration: simulated uniform concentration minus the
/// observed one.
inline ConcentrationRecord marginal_concentration(const StreetCountVector& v, double k,
                                                  std::int64_t runs, std::uint64_t seed,
                                                  unsigned threads = 1) {
  ConcentrationRecord rec;
  rec.k = k;
  rec.n_crimes = v.total();
  rec.n_streets = v.streets;
  rec.runs = runs;
  rec.seed = seed;
  rec.cc_raw = crime_concentration(v, k);
  const auto sim = simulate_uniform_cc(rec.n_crimes, rec.n_streets, k, runs, seed, threads);
  rec.cc_sim_mean = sim.mean;
  rec.cc_sim_se = sim.std_error;
  rec.mcc = rec.cc_sim_mean - rec.cc_raw;
  return rec;
}

// ---------------------------------------------------------------------------
// District-year panels

/// Street-level counts keyed by (district, fiscal year, category) where the
/// category is property/violent/other; "total" is derived.
struct StreetCountTable {
  std::map<std::tuple<std::string, int, std::string>, std::map<StreetKey, std::int64_t>> cells;
};

inline StreetCountTable street_counts_from_records(const std::vector<CrimeRecord>& records,
                                                   const GeoLookup& lookup,
                                                   bool urban_only = true) {
  StreetCountTable t;
  for (const auto& r : records) {
    const std::string* district = r.district_id.empty() ? lookup.district_of(r.lsoa_code)
                                                        : &r.district_id;
    if (!district) continue;
    if (urban_only && !lookup.is_urban(*district)) continue;
    ++t.cells[{*district, r.month.fiscal_year(), to_string(r.category)}][street_key(r)];
  }
  return t;
}

inline void write_street_counts_csv(std::ostream& out, const StreetCountTable& t) {
  csv::write_row(out, {"district_id", "year", "category", "longitude_fixed", "latitude_fixed",
                       "location", "count"});
  for (const auto& [key, streets] : t.cells) {
    const auto& [district, year, category] = key;
    for (const auto& [street, n] : streets) {
      csv::write_row(out, {district, std::to_string(year), category,
                           std::to_string(street.longitude_fixed),
                           std::to_string(street.latitude_fixed), street.location_label,
                           std::to_string(n)});
    }
  }
}

inline StreetCountTable read_street_counts_csv(const std::filesystem::path& path) {
  const auto t = csv::read_table(path);
  const auto src = path.string();
  const std::array<std::size_t, 7> c{
      t.header.require("district_id", src),     t.header.require("year", src),
      t.header.require("category", src),        t.header.require("longitude_fixed", src),
      t.header.require("latitude_fixed", src),  t.header.require("location", src),
      t.header.require("count", src)};
  StreetCountTable out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    auto num = [&](std::size_t k) {
      auto v = csv::parse_int(r.at(c[k]));
      if (!v) throw SchemaError(src + " line " + std::to_string(t.lines[i]) + ": non-integer field");
      return *v;
    };
    StreetKey key{num(3), num(4), r.at(c[5])};
    out.cells[{r.at(c[0]), static_cast<int>(num(1)), r.at(c[2])}][key] += num(6);
  }
  return out;
}

using StreetUniverse = std::map<std::string, std::set<StreetKey>>;

/// Universe CSV: district_id,longitude,latitude,location.
inline StreetUniverse load_street_universe(const std::filesystem::path& path) {
  const auto t = csv::read_table(path);
  const auto src = path.string();
  const auto c_d = t.header.require("district_id", src);
  const auto c_lon = t.header.require("longitude", src);
  const auto c_lat = t.header.require("latitude", src);
  const auto c_loc = t.header.require("location", src);
  StreetUniverse u;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    auto lon = csv::parse_double(r.at(c_lon));
    auto lat = csv::parse_double(r.at(c_lat));
    if (!lon || !lat) throw SchemaError(src + " line " + std::to_string(t.lines[i]) + ": bad coordinate");
    u[r.at(c_d)].insert({to_fixed_degrees(*lon), to_fixed_degrees(*lat), csv::Header::trim(r.at(c_loc))});
  }
  return u;
}

/// Every street observed for each district anywhere in the table.
inline StreetUniverse observed_street_universe(const StreetCountTable& t) {
  StreetUniverse u;
  for (const auto& [key, streets] : t.cells) {
    auto& set = u[std::get<0>(key)];
    for (const auto& [street, n] : streets) set.insert(street);
  }
  return u;
}

inline std::uint64_t cell_seed(std::uint64_t master_seed, const std::string& district, int year,
                               const std::string& category) {
  return derive_seed(derive_seed(derive_seed(master_seed, district), static_cast<std::uint64_t>(year)),
                     category);
}

struct ConcentrationPanel {
  std::vector<ConcentrationRecord> records;  // canonical (district, year, category) order
  std::vector<Rejection> skipped;
};

inline const std::vector<std::string>& concentration_categories() {
  static const std::vector<std::string> c{"other", "property", "total", "violent"};
  return c;
}

/// One ConcentrationRecord per district × fiscal year × category (including
/// "total"). The street universe of a district is `universe` (if given)
/// united with every street observed in the table; cells without crime are
/// skipped and reported.
inline ConcentrationPanel annual_concentration_panel(const StreetCountTable& table,
                                                     const StreetUniverse* universe, double k,
                                                     std::int64_t runs, std::uint64_t master_seed,
                                                     unsigned threads = 1) {
  StreetUniverse streets = observed_street_universe(table);
  if (universe) {
    for (const auto& [d, set] : *universe) {
      if (streets.count(d)) streets[d].insert(set.begin(), set.end());
    }
  }

  struct Cell {
    std::string district;
    int year;
    std::string category;
    StreetCountVector counts;
  };
  std::set<std::pair<std::string, int>> district_years;
  for (const auto& [key, s] : table.cells) district_years.insert({std::get<0>(key), std::get<1>(key)});

  std::vector<Cell> cells;
  ConcentrationPanel out;
  for (const auto& [district, year] : district_years) {
    const auto& universe_set = streets.at(district);
    std::map<StreetKey, std::int64_t> totals;
    for (const auto& category : concentration_categories()) {
      if (category == "total") continue;
      auto it = table.cells.find({district, year, category});
      if (it == table.cells.end()) continue;
      for (const auto& [street, n] : it->second) totals[street] += n;
    }
    for (const auto& category : concentration_categories()) {
      StreetCountVector v;
      v.streets = static_cast<std::int64_t>(universe_set.size());
      if (category == "total") {
        for (const auto& [street, n] : totals) v.counts.push_back(n);
      } else {
        auto it = table.cells.find({district, year, category});
        if (it != table.cells.end()) {
          for (const auto& [street, n] : it->second) v.counts.push_back(n);
        }
      }
      cells.push_back({district, year, category, std::move(v)});
    }
  }
  std::sort(cells.begin(), cells.end(), [](const Cell& a, const Cell& b) {
    return std::tie(a.district, a.year, a.category) < std::tie(b.district, b.year, b.category);
  });

  std::vector<std::optional<ConcentrationRecord>> results(cells.size());
  parallel_for(cells.size(), threads, [&](std::size_t i) {
    const Cell& c = cells[i];
    if (c.counts.total() == 0) return;
    auto rec = marginal_concentration(c.counts, k, runs,
                                      cell_seed(master_seed, c.district, c.year, c.category));
    rec.district_id = c.district;
    rec.year = c.year;
    rec.category = c.category;
    results[i] = std::move(rec);
  });
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (results[i]) {
      out.records.push_back(std::move(*results[i]));
    } else {
      out.skipped.push_back({"concentration", 0,
                             "no " + cells[i].category + " crime in district " + cells[i].district +
                                 " year " + std::to_string(cells[i].year)});
    }
  }
  return out;
}

inline void write_concentration_csv(std::ostream& out, const std::vector<ConcentrationRecord>& recs) {
  csv::write_row(out, {"district_id", "year", "category", "k", "n_crimes", "n_streets", "cc_raw",
                       "cc_sim_mean", "mcc", "runs", "seed"});
  for (const auto& r : recs) {
    csv::write_row(out, {r.district_id, std::to_string(r.year), r.category, csv::format_double(r.k),
                         std::to_string(r.n_crimes), std::to_string(r.n_streets),
                         csv::format_double(r.cc_raw), csv::format_double(r.cc_sim_mean),
                         csv::format_double(r.mcc), std::to_string(r.runs), std::to_string(r.seed)});
  }
}

inline std::vector<ConcentrationRecord> read_concentration_csv(const std::filesystem::path& path) {
  const auto t = csv::read_table(path);
  const auto src = path.string();
  const auto c_d = t.header.require("district_id", src);
  const auto c_y = t.header.require("year", src);
  const auto c_c = t.header.require("category", src);
  const auto c_mcc = t.header.require("mcc", src);
  const auto c_raw = t.header.find("cc_raw");
  const auto c_sim = t.header.find("cc_sim_mean");
  std::vector<ConcentrationRecord> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    ConcentrationRecord rec;
    rec.district_id = r.at(c_d);
    auto y = csv::parse_int(r.at(c_y));
    auto m = csv::parse_double(r.at(c_mcc));
    if (!y || !m) throw SchemaError(src + " line " + std::to_string(t.lines[i]) + ": bad year or mcc");
    rec.year = static_cast<int>(*y);
    rec.category = r.at(c_c);
    rec.mcc = *m;
    if (c_raw) rec.cc_raw = csv::parse_double(r.at(*c_raw)).value_or(0.0);
    if (c_sim) rec.cc_sim_mean = csv::parse_double(r.at(*c_sim)).value_or(0.0);
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace crimelab
