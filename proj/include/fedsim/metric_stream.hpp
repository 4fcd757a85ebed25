#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedsim/types.hpp"

namespace fedsim::engine {

// Cumulative system counters carried on every metric record.
struct SystemMetrics {
  std::uint64_t tasks_started = 0;
  std::uint64_t succeeded = 0;
  std::uint64_t interrupted = 0;
  std::uint64_t stale = 0;
  std::uint64_t updates_aggregated = 0;
  double device_compute_s = 0.0;
  Seconds virtual_wall_s = 0.0;

  // Updates the aggregator had to ingest: aggregated plus stale-rejected.
  std::uint64_t updates_attempted() const { return updates_aggregated + stale; }
  std::uint64_t in_flight(std::uint64_t started = 0) const;
  void validate() const;
};

// One line of the newline-delimited metric stream.
struct MetricRecord {
  Seconds virtual_time_s = 0;
  std::uint64_t round = 0;
  double loss = 0.0;
  std::string metric_name = "aupr";  // "aupr" | "ndcg"
  double metric_value = 0.0;
  std::uint64_t tasks_started = 0;
  std::uint64_t succeeded = 0;
  std::uint64_t interrupted = 0;
  std::uint64_t stale = 0;
  double device_compute_s = 0.0;
  double updates_per_s = 0.0;
  bool final_partial = false;  // horizon flush of a non-full buffer
};

std::string to_ndjson_line(const MetricRecord& rec);
MetricRecord metric_record_from_json(const std::string& line);

void write_metric_stream(const std::string& path, const std::vector<MetricRecord>& records);
std::vector<MetricRecord> read_metric_stream(const std::string& path);

}  // namespace fedsim::engine
