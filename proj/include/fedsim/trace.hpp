#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "fedsim/rng.hpp"
#include "fedsim/types.hpp"

namespace fedsim::trace {

// One contiguous app segment from a raw session log.
struct RawSegment {
  Seconds start = 0;
  Seconds end = 0;
  bool foreground = true;
};

struct RawSession {
  ClientId client_id = 0;
  std::vector<RawSegment> segments;  // non-overlapping, time-ordered
};

// A window during which a device can participate in training.
struct AvailabilitySession {
  ClientId client_id = 0;
  Seconds start = 0;
  Seconds end = 0;

  Seconds duration() const { return end - start; }
  friend bool operator==(const AvailabilitySession&, const AvailabilitySession&) = default;
};

// Piecewise-constant probability over time-of-week.  Scalar criteria use a
// single bin.
class WeeklyCurve {
 public:
  WeeklyCurve() : bins_(1, 1.0) {}
  explicit WeeklyCurve(double constant) : bins_(1, constant) { validate(); }
  explicit WeeklyCurve(std::vector<double> hourly_bins) : bins_(std::move(hourly_bins)) {
    validate();
  }

  double at(Seconds time) const;
  std::size_t bin_count() const { return bins_.size(); }

 private:
  void validate() const;
  std::vector<double> bins_;
};

// Participation criteria applied as a weighted coin flip per session.  The
// criteria are independent, so the keep probability is their product.
struct CriteriaModel {
  WeeklyCurve p_wifi;
  WeeklyCurve p_battery;
  double os_pass_rate = 1.0;
  bool independent = true;

  double keep_probability(Seconds session_start) const {
    return p_wifi.at(session_start) * p_battery.at(session_start) * os_pass_rate;
  }
};

// Per-example training time for one device model, from on-device benchmarks.
// Either a set of empirical samples or a truncated normal.
struct DeviceProfile {
  std::string device_model;
  std::vector<double> time_samples;  // seconds/example; used when non-empty
  double mean_time = 0.0;            // seconds/example
  double stdev_time = 0.0;
  double max_cpu_pct = 100.0;

  double sample_time_per_example(Rng& rng) const;
};

// Edge network bandwidth in MB/s: empirical samples or lognormal(mu, sigma).
struct BandwidthModel {
  std::vector<double> samples_mbps;  // used when non-empty
  double lognormal_mu = 0.0;
  double lognormal_sigma = 0.0;

  double sample_mbps(Rng& rng) const;
};

// Which device model each client owns, plus the population marginal.
struct DevicePopulation {
  std::unordered_map<ClientId, std::string> assignment;
  std::vector<std::pair<std::string, double>> marginal;  // shares sum to 1

  void validate() const;
  // Deterministically assigns device models to clients by marginal share.
  static DevicePopulation assign(const std::vector<ClientId>& clients,
                                 std::vector<std::pair<std::string, double>> marginal,
                                 std::uint64_t seed);
};

// --- Operations ------------------------------------------------------------

// Splits a raw segment log into availability sessions.  Background gaps of
// length <= short_gap_max are subtracted from the session's usable duration;
// anything longer splits the session (conservative: a gap between the two
// thresholds also splits).
std::vector<AvailabilitySession> split_sessions(const RawSession& raw,
                                                Seconds short_gap_max,
                                                Seconds long_gap_min);

// Weighted coin flip per session keyed on its start time.  One canonical u01
// draw per session, in input order.
std::vector<AvailabilitySession> filter_by_criteria(
    const std::vector<AvailabilitySession>& sessions, const CriteriaModel& criteria,
    std::uint64_t seed);

// Fraction of sessions passing each criterion alone and all of them jointly.
// Row order: wifi, battery, os, intersection.
struct FunnelRow {
  std::string name;
  double retained = 0.0;
};
std::vector<FunnelRow> availability_funnel(const std::vector<AvailabilitySession>& sessions,
                                           const CriteriaModel& criteria, std::uint64_t seed);

// Count of sessions overlapping each [i*bin, (i+1)*bin) window.
std::vector<std::uint64_t> availability_curve(const std::vector<AvailabilitySession>& sessions,
                                              Seconds bin);

// Start-sorted session index answering "next available client" queries for
// the scheduler.  Owned by the single-threaded engine loop; queries must be
// issued with non-decreasing `now`.
class AvailabilityIndex {
 public:
  explicit AvailabilityIndex(std::vector<AvailabilitySession> sessions);

  struct Candidate {
    ClientId client_id;
    AvailabilitySession session;  // start adjusted to the effective start
  };

  // Eligible session with the smallest effective start >= now whose client is
  // not busy.  A session spanning `now` has effective start = now.  Ties on
  // effective start break by ascending client_id, then session end.
  std::optional<Candidate> next_available(Seconds now,
                                          const std::unordered_set<ClientId>& busy) const;

  std::size_t session_count() const { return sessions_.size(); }
  const std::vector<AvailabilitySession>& sessions() const { return sessions_; }

 private:
  void advance(Seconds now) const;

  std::vector<AvailabilitySession> sessions_;  // sorted by (start, client, end)
  // Sessions with start <= now, keyed for "smallest client among spanning".
  mutable std::set<std::pair<ClientId, std::size_t>> active_;
  mutable std::size_t cursor_ = 0;
  mutable Seconds last_now_ = -1.0;
};

// --- Synthetic trace generation ---------------------------------------------

// Diurnal sinusoid x weekly envelope + noise; stands in for production session
// logs.  trough_level sets the target trough/peak availability ratio.
struct SyntheticTraceConfig {
  std::uint64_t n_clients = 1000;
  Seconds horizon = 2.0 * kSecondsPerWeek;
  double mean_sessions_per_client_day = 4.0;
  Seconds mean_session_s = 1200.0;
  double session_log_sigma = 0.8;     // lognormal spread of session lengths
  double trough_level = 0.15;         // envelope floor relative to peak
  double diurnal_sharpness = 1.0;
  double weekend_dip = 0.25;          // relative reduction on days 5..6
  Seconds peak_time_of_day = 13.0 * kSecondsPerHour;
};

double envelope_at(const SyntheticTraceConfig& cfg, Seconds t);
std::vector<AvailabilitySession> generate_synthetic_sessions(const SyntheticTraceConfig& cfg,
                                                             std::uint64_t seed);

// --- Trace file I/O ----------------------------------------------------------

// Format: header "client,start,end", then one `client_id,start,end` line per
// session, seconds as non-negative integers.
void write_trace_file(const std::string& path, const std::vector<AvailabilitySession>& sessions);
std::vector<AvailabilitySession> read_trace_file(const std::string& path);

// Raw segment logs: header "client,start,end,foreground", foreground in {0,1}.
// Rows are grouped per client and ordered by start on ingest.
std::vector<RawSession> read_raw_log(const std::string& path);

// Canonical order used everywhere sessions are ingested: (client, start, end).
void sort_sessions(std::vector<AvailabilitySession>& sessions);
void validate_sessions(const std::vector<AvailabilitySession>& sessions);

}  // namespace fedsim::trace
