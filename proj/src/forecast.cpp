#include "fedsim/forecast.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace fedsim::forecast {

double total_device_time_hours(const std::vector<Seconds>& task_durations) {
  const double total = std::accumulate(task_durations.begin(), task_durations.end(), 0.0);
  return total / kSecondsPerHour;
}

double total_device_time_hours(const engine::SystemMetrics& metrics) {
  return metrics.device_compute_s / kSecondsPerHour;
}

BandwidthForecast aggregator_bandwidth(const engine::SystemMetrics& metrics, double update_mb) {
  if (!(metrics.virtual_wall_s > 0))
    throw ValidationError("aggregator_bandwidth: virtual wall time must be positive");
  BandwidthForecast out;
  out.updates_per_s =
      static_cast<double>(metrics.updates_attempted()) / metrics.virtual_wall_s;
  out.ingest_mb_per_s = out.updates_per_s * update_mb;
  return out;
}

std::vector<Seconds> buffer_fill_durations(const std::vector<Seconds>& aggregation_times) {
  if (aggregation_times.size() < 2)
    throw ValidationError("buffer_fill_durations: need at least two aggregations");
  if (!std::is_sorted(aggregation_times.begin(), aggregation_times.end()))
    throw ValidationError("buffer_fill_durations: timestamps must be non-decreasing");
  std::vector<Seconds> fills(aggregation_times.size() - 1);
  for (std::size_t i = 1; i < aggregation_times.size(); ++i)
    fills[i - 1] = aggregation_times[i] - aggregation_times[i - 1];
  return fills;
}

static double percentile(std::vector<double> sorted, double q) {
  if (sorted.empty()) return 0;
  const auto idx = static_cast<std::size_t>(
      std::ceil(q * static_cast<double>(sorted.size()))) ;
  return sorted[std::min(idx == 0 ? 0 : idx - 1, sorted.size() - 1)];
}

FillSummary summarize_fills(const std::vector<Seconds>& fill_durations) {
  FillSummary s;
  s.n_fills = fill_durations.size();
  if (fill_durations.empty()) return s;
  std::vector<double> sorted = fill_durations;
  std::sort(sorted.begin(), sorted.end());
  s.mean_s = std::accumulate(sorted.begin(), sorted.end(), 0.0) /
             static_cast<double>(sorted.size());
  s.p50_s = percentile(sorted, 0.5);
  s.p90_s = percentile(sorted, 0.9);
  s.max_s = sorted.back();
  return s;
}

static double record_field(const engine::MetricRecord& rec, const std::string& which) {
  if (which == "loss") return rec.loss;
  if (which == rec.metric_name) return rec.metric_value;
  throw ValidationError("unknown metric field: " + which);
}

TrialSummary error_bounded(const std::vector<std::vector<engine::MetricRecord>>& trials,
                           const std::string& which) {
  if (trials.size() < 2) throw ValidationError("error_bounded: need at least two trials");
  const std::size_t n_rounds = trials[0].size();
  for (const auto& t : trials) {
    if (t.size() != n_rounds)
      throw ValidationError("error_bounded: trial streams have different lengths");
    for (std::size_t i = 0; i < n_rounds; ++i)
      if (t[i].round != trials[0][i].round)
        throw ValidationError("error_bounded: trial streams misaligned on round index");
  }
  TrialSummary summary;
  summary.metric = which;
  summary.n_trials = trials.size();
  for (std::size_t i = 0; i < n_rounds; ++i) {
    std::vector<double> values;
    values.reserve(trials.size());
    for (const auto& t : trials) values.push_back(record_field(t[i], which));
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    const double median =
        n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
    summary.rounds.push_back(trials[0][i].round);
    summary.median.push_back(median);
    summary.lower.push_back(values.front());  // min/max bands for small N
    summary.upper.push_back(values.back());
  }
  return summary;
}

double time_to_loss(const std::vector<engine::MetricRecord>& records, double target) {
  for (const auto& rec : records) {
    if (rec.final_partial) continue;
    if (rec.loss <= target) return rec.virtual_time_s;
  }
  return std::numeric_limits<double>::quiet_NaN();
}

ForecastReport build_report(const std::vector<std::vector<engine::MetricRecord>>& trials,
                            double update_mb) {
  if (trials.empty()) throw ValidationError("forecast: need at least one metric stream");
  ForecastReport report;
  report.n_trials = trials.size();

  // Device time and bandwidth come from the last cumulative record per trial,
  // averaged across trials.
  double hours = 0, upd = 0, mb = 0;
  std::size_t counted = 0;
  for (const auto& t : trials) {
    if (t.empty()) continue;
    const auto& last = t.back();
    engine::SystemMetrics m;
    m.updates_aggregated = last.succeeded;
    m.stale = last.stale;
    m.virtual_wall_s = last.virtual_time_s;
    m.device_compute_s = last.device_compute_s;
    hours += m.device_compute_s / kSecondsPerHour;
    if (m.virtual_wall_s > 0) {
      const auto bw = aggregator_bandwidth(m, update_mb);
      upd += bw.updates_per_s;
      mb += bw.ingest_mb_per_s;
    }
    ++counted;
  }
  if (counted == 0) throw ValidationError("forecast: all metric streams are empty");
  report.device_hours = hours / static_cast<double>(counted);
  report.bandwidth.updates_per_s = upd / static_cast<double>(counted);
  report.bandwidth.ingest_mb_per_s = mb / static_cast<double>(counted);

  // Buffer fill: inter-aggregation gaps of the first trial.
  if (trials[0].size() >= 2) {
    std::vector<Seconds> times;
    for (const auto& rec : trials[0])
      if (!rec.final_partial) times.push_back(rec.virtual_time_s);
    if (times.size() >= 2) report.fills = summarize_fills(buffer_fill_durations(times));
  }

  if (trials.size() >= 2) {
    // Trials may end after different aggregation counts; bands cover the
    // common prefix of rounds.
    std::size_t common = trials[0].size();
    for (const auto& t : trials) common = std::min(common, t.size());
    std::vector<std::vector<engine::MetricRecord>> aligned;
    for (const auto& t : trials)
      aligned.emplace_back(t.begin(), t.begin() + static_cast<std::ptrdiff_t>(common));
    if (common >= 1) {
      report.summaries.push_back(error_bounded(aligned, "loss"));
      report.summaries.push_back(error_bounded(aligned, aligned[0][0].metric_name));
    }
  }
  return report;
}

std::string render_report(const ForecastReport& report) {
  std::ostringstream os;
  os.precision(6);
  os << "forecast report\n";
  os << "  trials:               " << report.n_trials << "\n";
  os << "  total device time:    " << report.device_hours << " hours ("
     << report.device_hours / 24.0 << " days)\n";
  os << "  aggregator ingest:    " << report.bandwidth.updates_per_s << " updates/s\n";
  os << "  aggregator bandwidth: " << report.bandwidth.ingest_mb_per_s << " MB/s\n";
  if (report.fills.n_fills > 0) {
    os << "  buffer fill (n=" << report.fills.n_fills << "): mean " << report.fills.mean_s
       << " s, p50 " << report.fills.p50_s << " s, p90 " << report.fills.p90_s << " s, max "
       << report.fills.max_s << " s\n";
  }
  for (const auto& s : report.summaries) {
    if (s.median.empty()) continue;
    os << "  " << s.metric << " (median over " << s.n_trials << " trials): final "
       << s.median.back() << " [" << s.lower.back() << ", " << s.upper.back() << "]\n";
  }
  return os.str();
}

void write_report_csv(const std::string& path, const ForecastReport& report) {
  std::ofstream f(path);
  if (!f) throw ValidationError("cannot open report csv for writing: " + path);
  f << "metric,round,median,lower,upper\n";
  f.precision(17);
  for (const auto& s : report.summaries)
    for (std::size_t i = 0; i < s.median.size(); ++i)
      f << s.metric << ',' << s.rounds[i] << ',' << s.median[i] << ',' << s.lower[i] << ','
        << s.upper[i] << '\n';
}

}  // namespace fedsim::forecast
