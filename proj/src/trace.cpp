#include "fedsim/trace.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace fedsim::trace {

double WeeklyCurve::at(Seconds time) const {
  double tow = std::fmod(time, kSecondsPerWeek);
  if (tow < 0) tow += kSecondsPerWeek;
  const double width = kSecondsPerWeek / static_cast<double>(bins_.size());
  auto idx = static_cast<std::size_t>(tow / width);
  if (idx >= bins_.size()) idx = bins_.size() - 1;
  return bins_[idx];
}

void WeeklyCurve::validate() const {
  if (bins_.empty()) throw ValidationError("probability curve needs at least one bin");
  for (double p : bins_) {
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("criterion probability outside [0,1]");
  }
}

double DeviceProfile::sample_time_per_example(Rng& rng) const {
  if (!time_samples.empty()) {
    const auto i = static_cast<std::size_t>(canonical_u01(rng) * time_samples.size());
    return time_samples[std::min(i, time_samples.size() - 1)];
  }
  std::normal_distribution<double> dist(mean_time, stdev_time);
  return dist(rng);
}

double BandwidthModel::sample_mbps(Rng& rng) const {
  if (!samples_mbps.empty()) {
    const auto i = static_cast<std::size_t>(canonical_u01(rng) * samples_mbps.size());
    return samples_mbps[std::min(i, samples_mbps.size() - 1)];
  }
  std::normal_distribution<double> normal(lognormal_mu, lognormal_sigma);
  return std::exp(normal(rng));
}

void DevicePopulation::validate() const {
  double total = 0;
  for (const auto& [name, share] : marginal) {
    if (share < 0) throw ValidationError("device share must be non-negative: " + name);
    total += share;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ValidationError("device shares must sum to 1");
  for (const auto& [client, model] : assignment) {
    (void)client;
    const bool known = std::any_of(marginal.begin(), marginal.end(),
                                   [&](const auto& m) { return m.first == model; });
    if (!known) throw ValidationError("client assigned to unprofiled device model " + model);
  }
}

DevicePopulation DevicePopulation::assign(const std::vector<ClientId>& clients,
                                          std::vector<std::pair<std::string, double>> marginal,
                                          std::uint64_t seed) {
  DevicePopulation pop;
  pop.marginal = std::move(marginal);
  std::vector<double> cumulative;
  double total = 0;
  for (const auto& [name, share] : pop.marginal) {
    (void)name;
    total += share;
    cumulative.push_back(total);
  }
  if (pop.marginal.empty() || std::abs(total - 1.0) > 1e-9)
    throw ValidationError("device shares must sum to 1");

  std::vector<ClientId> ordered = clients;
  std::sort(ordered.begin(), ordered.end());
  Rng rng(mix64(seed));
  for (ClientId c : ordered) {
    const double u = canonical_u01(rng) * total;
    const auto it = std::lower_bound(cumulative.begin(), cumulative.end(), u);
    const auto idx = static_cast<std::size_t>(it - cumulative.begin());
    pop.assignment[c] = pop.marginal[std::min(idx, pop.marginal.size() - 1)].first;
  }
  pop.validate();
  return pop;
}

// --- split_sessions -----------------------------------------------------------

static void validate_segments(const RawSession& raw) {
  Seconds prev_end = -1;
  for (const auto& seg : raw.segments) {
    if (!(seg.start < seg.end))
      throw ValidationError("segment start must precede end (client " +
                            std::to_string(raw.client_id) + ")");
    if (seg.start < prev_end)
      throw ValidationError("segments overlap or are unordered (client " +
                            std::to_string(raw.client_id) + ")");
    prev_end = seg.end;
  }
}

std::vector<AvailabilitySession> split_sessions(const RawSession& raw, Seconds short_gap_max,
                                                Seconds long_gap_min) {
  if (short_gap_max > long_gap_min)
    throw ValidationError("short_gap_max must not exceed long_gap_min");
  validate_segments(raw);

  std::vector<AvailabilitySession> out;
  bool open = false;
  Seconds start = 0;
  Seconds usable = 0;  // foreground duration of the open session
  Seconds last_fg_end = 0;

  auto close = [&]() {
    if (open && usable > 0) out.push_back({raw.client_id, start, start + usable});
    open = false;
    usable = 0;
  };

  for (const auto& seg : raw.segments) {
    if (!seg.foreground) continue;  // gaps are measured between foreground segments
    if (!open) {
      open = true;
      start = seg.start;
      usable = seg.end - seg.start;
      last_fg_end = seg.end;
      continue;
    }
    const Seconds gap = seg.start - last_fg_end;
    if (gap <= short_gap_max) {
      // Short background gap: subtracted, the session stays contiguous.
      usable += seg.end - seg.start;
    } else {
      // Anything longer splits; erring toward "not FL-ready" for mid-range gaps.
      close();
      open = true;
      start = seg.start;
      usable = seg.end - seg.start;
    }
    last_fg_end = seg.end;
  }
  close();
  return out;
}

// --- filter_by_criteria ---------------------------------------------------------

std::vector<AvailabilitySession> filter_by_criteria(
    const std::vector<AvailabilitySession>& sessions, const CriteriaModel& criteria,
    std::uint64_t seed) {
  Rng rng(mix64(seed));
  std::vector<AvailabilitySession> kept;
  kept.reserve(sessions.size());
  for (const auto& s : sessions) {
    const double p = criteria.keep_probability(s.start);
    if (canonical_u01(rng) < p) kept.push_back(s);
  }
  return kept;
}

std::vector<FunnelRow> availability_funnel(const std::vector<AvailabilitySession>& sessions,
                                           const CriteriaModel& criteria, std::uint64_t seed) {
  if (sessions.empty()) return {{"wifi", 0}, {"battery", 0}, {"os", 0}, {"all", 0}};
  const auto n = static_cast<double>(sessions.size());

  auto survival = [&](auto prob, std::uint64_t salt) {
    Rng rng(mix64(hash_combine(seed, salt)));
    std::uint64_t kept = 0;
    for (const auto& s : sessions)
      if (canonical_u01(rng) < prob(s)) ++kept;
    return static_cast<double>(kept) / n;
  };

  std::vector<FunnelRow> rows;
  rows.push_back({"wifi", survival([&](const auto& s) { return criteria.p_wifi.at(s.start); }, 1)});
  rows.push_back(
      {"battery", survival([&](const auto& s) { return criteria.p_battery.at(s.start); }, 2)});
  rows.push_back({"os", survival([&](const auto& s) {
                    (void)s;
                    return criteria.os_pass_rate;
                  }, 3)});
  // The joint row uses the same draws as filter_by_criteria itself.
  rows.push_back({"all", static_cast<double>(filter_by_criteria(sessions, criteria, seed).size()) / n});
  return rows;
}

// --- availability_curve -----------------------------------------------------------

std::vector<std::uint64_t> availability_curve(const std::vector<AvailabilitySession>& sessions,
                                              Seconds bin) {
  if (!(bin > 0)) throw ValidationError("availability_curve bin must be positive");
  Seconds max_end = 0;
  for (const auto& s : sessions) max_end = std::max(max_end, s.end);
  const auto n_bins = static_cast<std::size_t>(std::ceil(max_end / bin));
  std::vector<std::uint64_t> counts(n_bins, 0);
  for (const auto& s : sessions) {
    auto first = static_cast<std::size_t>(s.start / bin);
    for (std::size_t i = first; i < n_bins; ++i) {
      const Seconds bin_start = static_cast<double>(i) * bin;
      if (bin_start >= s.end) break;
      if (s.start < bin_start + bin && s.end > bin_start) ++counts[i];
    }
  }
  return counts;
}

// --- AvailabilityIndex -------------------------------------------------------------

AvailabilityIndex::AvailabilityIndex(std::vector<AvailabilitySession> sessions)
    : sessions_(std::move(sessions)) {
  sort_sessions(sessions_);  // canonical (client, start) order for validation
  validate_sessions(sessions_);
  std::sort(sessions_.begin(), sessions_.end(), [](const auto& a, const auto& b) {
    return std::tie(a.start, a.client_id, a.end) < std::tie(b.start, b.client_id, b.end);
  });
}

void AvailabilityIndex::advance(Seconds now) const {
  while (cursor_ < sessions_.size() && sessions_[cursor_].start <= now) {
    active_.insert({sessions_[cursor_].client_id, cursor_});
    ++cursor_;
  }
  last_now_ = now;
}

std::optional<AvailabilityIndex::Candidate> AvailabilityIndex::next_available(
    Seconds now, const std::unordered_set<ClientId>& busy) const {
  advance(now);

  // Spanning sessions: effective start = now; smallest eligible client wins.
  std::optional<Candidate> spanning;
  for (auto it = active_.begin(); it != active_.end();) {
    const auto& s = sessions_[it->second];
    if (s.end < now) {
      it = active_.erase(it);  // over for good: queries move forward in time
      continue;
    }
    if (busy.contains(s.client_id)) {
      ++it;
      continue;
    }
    spanning = Candidate{s.client_id, {s.client_id, now, s.end}};
    break;
  }

  // Earliest future session: sessions_ is (start, client) sorted, so the
  // first non-busy entry past the cursor already wins its start group.
  std::optional<Candidate> future;
  for (std::size_t i = cursor_; i < sessions_.size(); ++i) {
    if (busy.contains(sessions_[i].client_id)) continue;
    future = Candidate{sessions_[i].client_id, sessions_[i]};
    break;
  }

  if (spanning && future) {
    const auto ka = std::make_pair(spanning->session.start, spanning->client_id);
    const auto kb = std::make_pair(future->session.start, future->client_id);
    return ka <= kb ? spanning : future;
  }
  return spanning ? spanning : future;
}

// --- synthetic traces ----------------------------------------------------------------

double envelope_at(const SyntheticTraceConfig& cfg, Seconds t) {
  const double phase = 2.0 * M_PI * (t - cfg.peak_time_of_day) / kSecondsPerDay;
  double diurnal = 0.5 * (1.0 + std::cos(phase));
  diurnal = std::pow(diurnal, cfg.diurnal_sharpness);
  const int day = static_cast<int>(std::fmod(t, kSecondsPerWeek) / kSecondsPerDay);
  const double weekly = (day >= 5) ? (1.0 - cfg.weekend_dip) : 1.0;
  return cfg.trough_level + (1.0 - cfg.trough_level) * diurnal * weekly;
}

std::vector<AvailabilitySession> generate_synthetic_sessions(const SyntheticTraceConfig& cfg,
                                                             std::uint64_t seed) {
  if (cfg.n_clients == 0 || cfg.horizon <= 0)
    throw ValidationError("synthetic trace config needs clients and a positive horizon");
  std::vector<AvailabilitySession> out;
  const double mean_gap =
      kSecondsPerDay / std::max(cfg.mean_sessions_per_client_day, 1e-9);
  const double log_mu = std::log(cfg.mean_session_s) - 0.5 * cfg.session_log_sigma * cfg.session_log_sigma;

  for (std::uint64_t c = 0; c < cfg.n_clients; ++c) {
    Rng rng(hash_combine(seed, 0x7261636573ULL + c));
    std::exponential_distribution<double> gap_dist(1.0 / mean_gap);
    std::normal_distribution<double> log_len(log_mu, cfg.session_log_sigma);
    Seconds t = canonical_u01(rng) * mean_gap;  // desynchronize clients
    while (t < cfg.horizon) {
      // Thin a homogeneous candidate process by the diurnal/weekly envelope.
      if (canonical_u01(rng) < envelope_at(cfg, t)) {
        const Seconds len = std::exp(log_len(rng));
        const Seconds end = std::min(t + len, cfg.horizon);
        if (end > t) out.push_back({static_cast<ClientId>(c), t, end});
        t = end;
      }
      t += gap_dist(rng);
    }
  }
  sort_sessions(out);
  return out;
}

// --- file I/O ------------------------------------------------------------------------

void write_trace_file(const std::string& path, const std::vector<AvailabilitySession>& sessions) {
  std::ofstream f(path);
  if (!f) throw ValidationError("cannot open trace file for writing: " + path);
  f << "client,start,end\n";
  for (const auto& s : sessions) {
    f << s.client_id << ',' << static_cast<std::int64_t>(s.start) << ','
      << static_cast<std::int64_t>(s.end) << '\n';
  }
  if (!f) throw ValidationError("failed writing trace file: " + path);
}

std::vector<AvailabilitySession> read_trace_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot open trace file: " + path);
  std::string line;
  if (!std::getline(f, line) || line.rfind("client,start,end", 0) != 0)
    throw ValidationError("trace file missing 'client,start,end' header: " + path);
  std::vector<AvailabilitySession> out;
  std::size_t line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    AvailabilitySession s;
    std::int64_t start = 0, end = 0;
    char c1 = 0, c2 = 0;
    if (!(ss >> s.client_id >> c1 >> start >> c2 >> end) || c1 != ',' || c2 != ',')
      throw ValidationError("bad trace line " + std::to_string(line_no) + " in " + path);
    if (start < 0 || end < 0)
      throw ValidationError("negative time on trace line " + std::to_string(line_no));
    s.start = static_cast<Seconds>(start);
    s.end = static_cast<Seconds>(end);
    out.push_back(s);
  }
  sort_sessions(out);
  validate_sessions(out);
  return out;
}

std::vector<RawSession> read_raw_log(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot open raw session log: " + path);
  std::string line;
  if (!std::getline(f, line) || line.rfind("client,start,end,foreground", 0) != 0)
    throw ValidationError("raw log missing 'client,start,end,foreground' header: " + path);
  std::map<ClientId, std::vector<RawSegment>> by_client;
  std::size_t line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    ClientId client = 0;
    std::int64_t start = 0, end = 0;
    int fg = 0;
    char c1 = 0, c2 = 0, c3 = 0;
    if (!(ss >> client >> c1 >> start >> c2 >> end >> c3 >> fg) || c1 != ',' || c2 != ',' ||
        c3 != ',')
      throw ValidationError("bad raw log line " + std::to_string(line_no) + " in " + path);
    by_client[client].push_back(
        {static_cast<Seconds>(start), static_cast<Seconds>(end), fg != 0});
  }
  std::vector<RawSession> out;
  for (auto& [client, segments] : by_client) {
    std::sort(segments.begin(), segments.end(),
              [](const auto& a, const auto& b) { return a.start < b.start; });
    out.push_back({client, std::move(segments)});
  }
  return out;
}

void sort_sessions(std::vector<AvailabilitySession>& sessions) {
  std::sort(sessions.begin(), sessions.end(), [](const auto& a, const auto& b) {
    return std::tie(a.client_id, a.start, a.end) < std::tie(b.client_id, b.start, b.end);
  });
}

void validate_sessions(const std::vector<AvailabilitySession>& sessions) {
  for (std::size_t i = 0; i < sessions.size(); ++i) {
    const auto& s = sessions[i];
    if (!(s.start < s.end))
      throw ValidationError("session start must precede end (client " +
                            std::to_string(s.client_id) + ")");
    if (i > 0 && sessions[i - 1].client_id == s.client_id && sessions[i - 1].end > s.start &&
        sessions[i - 1].start <= s.start)
      throw ValidationError("overlapping sessions for client " + std::to_string(s.client_id));
  }
}

}  // namespace fedsim::trace
