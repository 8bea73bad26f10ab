#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "shift/date.hpp"

namespace shift::corpus {

/// Daily visit counts of one POI over the dataset date range. A negative
/// entry marks a day with no record; filter_complete() drops such POIs.
struct PoiRecord {
  std::int64_t poi_id = 0;
  std::string category;
  std::vector<std::int64_t> visits;  // one per calendar day, -1 = missing

  bool complete() const;
};

struct PoiDataset {
  std::vector<PoiRecord> pois;
  Date start_date;
  Date end_date;

  std::int64_t num_days() const { return end_date.to_days() - start_date.to_days() + 1; }
  bool complete() const;
};

/// One forecasting instance: an observation window and the next-day target.
struct Sample {
  std::int64_t poi_id = 0;
  std::string category;
  std::vector<Date> obs_dates;
  std::vector<std::int64_t> obs_values;
  Date target_date;
  std::int64_t target_value = 0;
};

struct DatasetStats {
  double avg_visits_per_day = 0.0;
  std::int64_t max_visits = 0;
  std::int64_t num_pois = 0;
  std::int64_t num_categories = 0;
};

struct SynthProfile {
  std::int64_t num_pois = 100;
  std::int64_t num_categories = 10;
  std::int64_t days = 120;
  double base_rate_min = 8.0;
  double base_rate_max = 26.0;
  double weekly_amplitude_min = 0.0;
  double weekly_amplitude_max = 0.5;
  double noise = 0.1;  // dispersion of the count distribution; 0 = deterministic
  std::int64_t max_visits = 9999;
  Date start_date{2020, 6, 15};
  std::uint64_t seed = 0;
};

struct SplitSamples {
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sample> test;
};

/// CSV with header `poi_id,category,date,visits`, one row per (poi, day).
PoiDataset load_visits(const std::string& path);
void save_visits(const PoiDataset& ds, const std::string& path);

/// Keep only POIs with a count for every day of the dataset range.
PoiDataset filter_complete(const PoiDataset& ds);

/// Sliding windows of length obs with stride 1, target = next day.
std::vector<Sample> windowize(const PoiDataset& ds, std::int64_t obs);

/// Deterministic shuffled partition of samples; floor allocation for val
/// and test, remainder goes to train.
SplitSamples split(const std::vector<Sample>& samples, double train_ratio,
                   double val_ratio, double test_ratio, std::uint64_t seed);

/// Partition at the POI level, then windowize each side (leakage-free split).
SplitSamples split_by_poi(const PoiDataset& ds, std::int64_t obs, double train_ratio,
                          double val_ratio, double test_ratio, std::uint64_t seed);

PoiDataset synthesize(const SynthProfile& profile);

DatasetStats stats(const PoiDataset& ds);

std::string stats_json(const DatasetStats& s);

SynthProfile profile_from_json(const std::string& json_text);

}  // namespace shift::corpus
