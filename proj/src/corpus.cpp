#include "shift/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "shift/error.hpp"
#include "shift/rng.hpp"

namespace shift::corpus {

namespace {

std::int64_t parse_count(const std::string& field, std::size_t line_no) {
  std::int64_t v = 0;
  auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (res.ec != std::errc{} || res.ptr != field.data() + field.size() || v < 0) {
    fail(ErrorCode::malformed_row,
         "line " + std::to_string(line_no) + ": bad visit count '" + field + "'");
  }
  return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  // Fields are plain (no quoting); the category is the only free-text field
  // and commas inside it are not supported by this format.
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

/// Poisson sampler: Knuth for small means, rounded normal approximation for
/// large ones. Both paths draw only from the supplied SplitMix64 stream.
std::int64_t sample_poisson(SplitMix64& rng, double mean) {
  if (mean <= 0.0) return 0;
  if (mean < 60.0) {
    double l = std::exp(-mean);
    std::int64_t k = 0;
    double p = 1.0;
    do {
      ++k;
      p *= rng.uniform();
    } while (p > l);
    return k - 1;
  }
  double v = mean + std::sqrt(mean) * rng.normal();
  return v < 0.0 ? 0 : static_cast<std::int64_t>(std::llround(v));
}

}  // namespace

bool PoiRecord::complete() const {
  return std::none_of(visits.begin(), visits.end(), [](std::int64_t v) { return v < 0; });
}

bool PoiDataset::complete() const {
  return std::all_of(pois.begin(), pois.end(), [](const PoiRecord& r) { return r.complete(); });
}

PoiDataset load_visits(const std::string& path) {
  std::ifstream in(path);
  require(in.is_open(), ErrorCode::io_error, "cannot open '" + path + "'");

  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorCode::malformed_row, "missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  require(line == "poi_id,category,date,visits", ErrorCode::malformed_row,
          "unexpected header '" + line + "'");

  struct Row {
    Date date;
    std::int64_t visits;
  };
  std::map<std::int64_t, std::string> categories;
  std::map<std::int64_t, std::vector<Row>> rows;
  Date min_date, max_date;
  bool any = false;
  std::size_t line_no = 1;

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    require(fields.size() == 4, ErrorCode::malformed_row,
            "line " + std::to_string(line_no) + ": expected 4 fields");
    std::int64_t poi = parse_count(fields[0], line_no);
    Date date;
    try {
      date = Date::parse_iso(fields[2]);
    } catch (const Error&) {
      fail(ErrorCode::malformed_row,
           "line " + std::to_string(line_no) + ": bad date '" + fields[2] + "'");
    }
    std::int64_t visits = parse_count(fields[3], line_no);

    auto [it, inserted] = categories.emplace(poi, fields[1]);
    if (!inserted && it->second != fields[1]) {
      fail(ErrorCode::inconsistent_category,
           "POI " + std::to_string(poi) + " has categories '" + it->second + "' and '" +
               fields[1] + "'");
    }
    rows[poi].push_back({date, visits});
    if (!any || date < min_date) min_date = date;
    if (!any || max_date < date) max_date = date;
    any = true;
  }
  require(any, ErrorCode::empty_dataset, "no data rows in '" + path + "'");

  PoiDataset ds;
  ds.start_date = min_date;
  ds.end_date = max_date;
  const auto n_days = ds.num_days();
  for (auto& [poi, poi_rows] : rows) {
    PoiRecord rec;
    rec.poi_id = poi;
    rec.category = categories[poi];
    rec.visits.assign(static_cast<std::size_t>(n_days), -1);
    for (const Row& r : poi_rows) {
      auto idx = static_cast<std::size_t>(r.date.to_days() - min_date.to_days());
      require(rec.visits[idx] < 0, ErrorCode::malformed_row,
              "duplicate row for POI " + std::to_string(poi) + " on " + r.date.iso());
      rec.visits[idx] = r.visits;
    }
    ds.pois.push_back(std::move(rec));
  }
  return ds;
}

void save_visits(const PoiDataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.is_open(), ErrorCode::io_error, "cannot write '" + path + "'");
  out << "poi_id,category,date,visits\n";
  for (const PoiRecord& rec : ds.pois) {
    for (std::size_t i = 0; i < rec.visits.size(); ++i) {
      if (rec.visits[i] < 0) continue;
      Date d = ds.start_date.plus_days(static_cast<std::int64_t>(i));
      out << rec.poi_id << ',' << rec.category << ',' << d.iso() << ',' << rec.visits[i]
          << '\n';
    }
  }
  require(out.good(), ErrorCode::io_error, "write failed for '" + path + "'");
}

PoiDataset filter_complete(const PoiDataset& ds) {
  PoiDataset out;
  out.start_date = ds.start_date;
  out.end_date = ds.end_date;
  for (const PoiRecord& rec : ds.pois) {
    if (rec.complete()) out.pois.push_back(rec);
  }
  return out;
}

std::vector<Sample> windowize(const PoiDataset& ds, std::int64_t obs) {
  require(obs >= 1, ErrorCode::invalid_argument, "obs must be >= 1");
  require(ds.num_days() >= obs + 1, ErrorCode::window_too_long,
          "need at least obs+1 = " + std::to_string(obs + 1) + " days, have " +
              std::to_string(ds.num_days()));
  require(ds.complete(), ErrorCode::incomplete_dataset,
          "windowize requires complete records; run filter_complete first");

  std::vector<Sample> out;
  const auto n_days = static_cast<std::size_t>(ds.num_days());
  for (const PoiRecord& rec : ds.pois) {
    for (std::size_t start = 0; start + obs < n_days; ++start) {
      Sample s;
      s.poi_id = rec.poi_id;
      s.category = rec.category;
      for (std::int64_t k = 0; k < obs; ++k) {
        s.obs_dates.push_back(ds.start_date.plus_days(static_cast<std::int64_t>(start) + k));
        s.obs_values.push_back(rec.visits[start + static_cast<std::size_t>(k)]);
      }
      s.target_date = ds.start_date.plus_days(static_cast<std::int64_t>(start) + obs);
      s.target_value = rec.visits[start + static_cast<std::size_t>(obs)];
      out.push_back(std::move(s));
    }
  }
  return out;
}

namespace {

void check_ratios(double train_ratio, double val_ratio, double test_ratio) {
  bool ok = train_ratio >= 0 && val_ratio >= 0 && test_ratio >= 0 &&
            std::abs(train_ratio + val_ratio + test_ratio - 1.0) <= 1e-9;
  require(ok, ErrorCode::invalid_ratios, "ratios must be non-negative and sum to 1");
}

}  // namespace

SplitSamples split(const std::vector<Sample>& samples, double train_ratio, double val_ratio,
                   double test_ratio, std::uint64_t seed) {
  check_ratios(train_ratio, val_ratio, test_ratio);
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  deterministic_shuffle(order, seed);

  const auto n = samples.size();
  const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * val_ratio));
  const auto n_test = static_cast<std::size_t>(std::floor(static_cast<double>(n) * test_ratio));
  const auto n_train = n - n_val - n_test;

  SplitSamples out;
  for (std::size_t i = 0; i < n; ++i) {
    const Sample& s = samples[order[i]];
    if (i < n_train) {
      out.train.push_back(s);
    } else if (i < n_train + n_val) {
      out.val.push_back(s);
    } else {
      out.test.push_back(s);
    }
  }
  return out;
}

SplitSamples split_by_poi(const PoiDataset& ds, std::int64_t obs, double train_ratio,
                          double val_ratio, double test_ratio, std::uint64_t seed) {
  check_ratios(train_ratio, val_ratio, test_ratio);
  std::vector<std::size_t> order(ds.pois.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  deterministic_shuffle(order, seed);

  const auto n = order.size();
  const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * val_ratio));
  const auto n_test = static_cast<std::size_t>(std::floor(static_cast<double>(n) * test_ratio));
  const auto n_train = n - n_val - n_test;

  auto subset = [&](std::size_t lo, std::size_t hi) {
    PoiDataset sub;
    sub.start_date = ds.start_date;
    sub.end_date = ds.end_date;
    for (std::size_t i = lo; i < hi; ++i) sub.pois.push_back(ds.pois[order[i]]);
    return sub.pois.empty() ? std::vector<Sample>{} : windowize(sub, obs);
  };

  SplitSamples out;
  out.train = subset(0, n_train);
  out.val = subset(n_train, n_train + n_val);
  out.test = subset(n_train + n_val, n);
  return out;
}

namespace {

void validate_profile(const SynthProfile& p) {
  bool ok = p.num_pois >= 1 && p.num_categories >= 1 && p.days >= 2 &&
            p.base_rate_min >= 0 && p.base_rate_max >= p.base_rate_min &&
            p.weekly_amplitude_min >= 0 && p.weekly_amplitude_max >= p.weekly_amplitude_min &&
            p.weekly_amplitude_max <= 1.0 && p.noise >= 0 && p.max_visits >= 1 &&
            p.start_date.valid();
  require(ok, ErrorCode::invalid_profile, "invalid synthesis profile");
}

}  // namespace

PoiDataset synthesize(const SynthProfile& p) {
  validate_profile(p);

  static const std::vector<std::string> kCategoryStems = {
      "Restaurant",       "Park",           "Optical Goods Store", "Grocery Store",
      "Fitness Center",   "Museum",         "Coffee Shop",         "Pharmacy",
      "Book Store",       "Hardware Store", "Pet Store",           "Bakery",
      "Clothing Store",   "Cinema",         "Library",             "Hotel",
      "Gas Station",      "Bank",           "Hair Salon",          "Toy Store"};

  PoiDataset ds;
  ds.start_date = p.start_date;
  ds.end_date = p.start_date.plus_days(p.days - 1);

  for (std::int64_t i = 0; i < p.num_pois; ++i) {
    // Per-POI stream, so the dataset is stable under changes to num_pois.
    SplitMix64 rng(mix_seed(p.seed, 0x706f69ull, static_cast<std::uint64_t>(i)));
    const double base = rng.uniform(p.base_rate_min, p.base_rate_max);
    const double amp = rng.uniform(p.weekly_amplitude_min, p.weekly_amplitude_max);
    const double phase = rng.uniform(0.0, 7.0);

    PoiRecord rec;
    rec.poi_id = i;
    std::int64_t cat = i % p.num_categories;
    rec.category = kCategoryStems[static_cast<std::size_t>(cat) % kCategoryStems.size()];
    if (static_cast<std::size_t>(cat) >= kCategoryStems.size()) {
      rec.category += " " + std::to_string(cat / static_cast<std::int64_t>(kCategoryStems.size()));
    }

    rec.visits.reserve(static_cast<std::size_t>(p.days));
    for (std::int64_t t = 0; t < p.days; ++t) {
      int wd = ds.start_date.plus_days(t).weekday();
      double shape = std::cos(2.0 * 3.141592653589793 * (wd - phase) / 7.0);
      double mean = base * (1.0 + amp * shape);
      std::int64_t count;
      if (p.noise == 0.0) {
        count = static_cast<std::int64_t>(std::llround(mean));
      } else {
        // Lognormal-mixed Poisson: preserves the mean, dispersion grows
        // with the noise parameter.
        double z = rng.normal();
        double rate = mean * std::exp(p.noise * z - 0.5 * p.noise * p.noise);
        count = sample_poisson(rng, rate);
      }
      rec.visits.push_back(std::clamp<std::int64_t>(count, 0, p.max_visits));
    }
    ds.pois.push_back(std::move(rec));
  }
  return ds;
}

DatasetStats stats(const PoiDataset& ds) {
  require(!ds.pois.empty(), ErrorCode::empty_dataset, "stats of empty dataset");
  DatasetStats s;
  s.num_pois = static_cast<std::int64_t>(ds.pois.size());
  std::set<std::string> cats;
  std::int64_t total = 0;
  std::int64_t cells = 0;
  for (const PoiRecord& rec : ds.pois) {
    cats.insert(rec.category);
    for (std::int64_t v : rec.visits) {
      if (v < 0) continue;
      total += v;
      ++cells;
      s.max_visits = std::max(s.max_visits, v);
    }
  }
  require(cells > 0, ErrorCode::empty_dataset, "dataset has no recorded days");
  s.num_categories = static_cast<std::int64_t>(cats.size());
  s.avg_visits_per_day = static_cast<double>(total) / static_cast<double>(cells);
  return s;
}

std::string stats_json(const DatasetStats& s) {
  nlohmann::json j;
  j["avg_visits"] = s.avg_visits_per_day;
  j["max_visits"] = s.max_visits;
  j["num_pois"] = s.num_pois;
  j["num_categories"] = s.num_categories;
  return j.dump();
}

SynthProfile profile_from_json(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::invalid_profile, std::string("bad profile JSON: ") + e.what());
  }
  SynthProfile p;
  try {
    if (j.contains("num_pois")) p.num_pois = j["num_pois"].get<std::int64_t>();
    if (j.contains("num_categories")) p.num_categories = j["num_categories"].get<std::int64_t>();
    if (j.contains("days")) p.days = j["days"].get<std::int64_t>();
    if (j.contains("base_rate_range")) {
      p.base_rate_min = j["base_rate_range"][0].get<double>();
      p.base_rate_max = j["base_rate_range"][1].get<double>();
    }
    if (j.contains("weekly_amplitude_range")) {
      p.weekly_amplitude_min = j["weekly_amplitude_range"][0].get<double>();
      p.weekly_amplitude_max = j["weekly_amplitude_range"][1].get<double>();
    }
    if (j.contains("noise")) p.noise = j["noise"].get<double>();
    if (j.contains("max_visits")) p.max_visits = j["max_visits"].get<std::int64_t>();
    if (j.contains("start_date")) p.start_date = Date::parse_iso(j["start_date"].get<std::string>());
    if (j.contains("seed")) p.seed = j["seed"].get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::invalid_profile, std::string("bad profile field: ") + e.what());
  }
  validate_profile(p);
  return p;
}

}  // namespace shift::corpus
