#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedsim/metric_stream.hpp"
#include "fedsim/types.hpp"

namespace fedsim::forecast {

struct TrialSummary {
  std::string metric;
  std::vector<std::uint64_t> rounds;
  std::vector<double> median;
  std::vector<double> lower;
  std::vector<double> upper;
  std::size_t n_trials = 0;
};

// Sum of started-task durations, in hours.
double total_device_time_hours(const std::vector<Seconds>& task_durations);
double total_device_time_hours(const engine::SystemMetrics& metrics);

struct BandwidthForecast {
  double updates_per_s = 0.0;
  double ingest_mb_per_s = 0.0;
};

// Ingest rate a secure aggregator must sustain: attempted updates (aggregated
// plus stale-rejected) per virtual second, times the update size.
BandwidthForecast aggregator_bandwidth(const engine::SystemMetrics& metrics, double update_mb);

struct FillSummary {
  std::size_t n_fills = 0;
  double mean_s = 0.0;
  double p50_s = 0.0;
  double p90_s = 0.0;
  double max_s = 0.0;
};

// Inter-aggregation durations from the flush timestamps of one run.
std::vector<Seconds> buffer_fill_durations(const std::vector<Seconds>& aggregation_times);
FillSummary summarize_fills(const std::vector<Seconds>& fill_durations);

// Per-round median and min/max bounds across trials, aligned on round index.
// Streams must agree on length and round numbering.
TrialSummary error_bounded(const std::vector<std::vector<engine::MetricRecord>>& trials,
                           const std::string& which);  // "loss" | metric name

// First virtual time at which `loss` drops to `target` (final-partial records
// excluded); NaN if never.
double time_to_loss(const std::vector<engine::MetricRecord>& records, double target);

struct ForecastReport {
  double device_hours = 0.0;
  BandwidthForecast bandwidth;
  FillSummary fills;
  std::size_t n_trials = 0;
  std::vector<TrialSummary> summaries;
};

ForecastReport build_report(const std::vector<std::vector<engine::MetricRecord>>& trials,
                            double update_mb);
std::string render_report(const ForecastReport& report);
void write_report_csv(const std::string& path, const ForecastReport& report);

}  // namespace fedsim::forecast
