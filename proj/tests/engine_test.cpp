#include "doctest.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <set>

#include "fedsim/checkpoint.hpp"
#include "fedsim/engine.hpp"

using namespace fedsim;
using namespace fedsim::engine;
using fedsim::trace::AvailabilityIndex;
using fedsim::trace::AvailabilitySession;

namespace {

struct Dispatched {
  ClientId client;
  Seconds start;
  Seconds end;
  bool operator==(const Dispatched&) const = default;
};

Seconds test_duration(ClientId client, Seconds start) {
  // Deterministic pseudo-random duration shared by scheduler and oracle.
  const auto h = hash_combine(static_cast<std::uint64_t>(client),
                              std::hash<double>{}(start));
  return 1.0 + static_cast<double>(h % 997) / 100.0;
}

// Exhaustive agenda oracle: no priority queue, each step linear-scans every
// pending event; same creation policy as the scheduler.
std::vector<Dispatched> agenda_oracle(const std::vector<AvailabilitySession>& sessions, int C,
                                      Seconds horizon) {
  struct OTask {
    ClientId client;
    Seconds sess_end;
    Seconds start, end;
    bool started = false, ended = false;
  };
  std::vector<OTask> tasks;
  std::set<ClientId> busy;
  std::vector<Dispatched> out;
  Seconds now = 0;
  int c = 0, committed = 0;
  bool deferred = false;

  auto create = [&]() -> bool {
    // brute-force next_available
    bool found = false;
    Seconds best_eff = 0, best_end = 0;
    ClientId best_client = 0;
    for (const auto& s : sessions) {
      if (busy.contains(s.client_id)) continue;
      Seconds eff;
      if (s.start >= now)
        eff = s.start;
      else if (s.end >= now)
        eff = now;
      else
        continue;
      const auto key = std::make_tuple(eff, s.client_id, s.end);
      if (!found || key < std::make_tuple(best_eff, best_client, best_end)) {
        found = true;
        best_eff = eff;
        best_client = s.client_id;
        best_end = s.end;
      }
    }
    if (!found || best_eff > horizon) return false;
    OTask t;
    t.client = best_client;
    t.sess_end = best_end;
    t.start = best_eff;
    t.end = best_eff + test_duration(best_client, best_eff);
    tasks.push_back(t);
    busy.insert(best_client);
    ++committed;
    return true;
  };
  auto try_create = [&](bool gate) {
    if (!gate && !(deferred && committed < C)) return;
    deferred = !create();
  };

  if (!create()) deferred = true;
  for (;;) {
    // linear scan for the minimum event: key (time, END<START, client)
    int best = -1;
    bool best_is_end = false;
    for (int i = 0; i < static_cast<int>(tasks.size()); ++i) {
      auto key_of = [&](int idx, bool is_end) {
        return std::make_tuple(is_end ? tasks[idx].end : tasks[idx].start, is_end ? 0 : 1,
                               tasks[idx].client);
      };
      if (!tasks[i].started) {
        if (best < 0 || key_of(i, false) < key_of(best, best_is_end)) {
          best = i;
          best_is_end = false;
        }
      } else if (!tasks[i].ended) {
        if (best < 0 || key_of(i, true) < key_of(best, best_is_end)) {
          best = i;
          best_is_end = true;
        }
      }
    }
    if (best < 0) break;  // agenda empty
    if (!best_is_end) {
      tasks[best].started = true;
      ++c;
      try_create(c < C);
    } else {
      tasks[best].ended = true;
      --c;
      --committed;
      now = tasks[best].end;
      try_create(c == C - 1);
      busy.erase(tasks[best].client);
      out.push_back({tasks[best].client, tasks[best].start, tasks[best].end});
      if (now > horizon) break;
    }
  }
  return out;
}

std::vector<Dispatched> run_scheduler(const std::vector<AvailabilitySession>& sessions, int C,
                                      Seconds horizon) {
  AvailabilityIndex index(sessions);
  AsyncScheduler sched(
      index,
      [](ClientId client, const AvailabilitySession&, Seconds start) {
        return test_duration(client, start);
      },
      {C, horizon, false});
  std::vector<Dispatched> out;
  AsyncScheduler::Callbacks cb;
  cb.on_dispatch = [&](ClientTask& task) {
    out.push_back({task.client_id, task.start, task.end()});
    return true;
  };
  sched.run(cb);
  return out;
}

std::vector<AvailabilitySession> random_sessions(std::mt19937_64& rng, int max_clients) {
  const int n_clients = 1 + static_cast<int>(rng() % max_clients);
  std::vector<AvailabilitySession> sessions;
  for (int c = 0; c < n_clients; ++c) {
    Seconds t = static_cast<double>(rng() % 40);
    const int n_sessions = static_cast<int>(rng() % 5);
    for (int s = 0; s < n_sessions; ++s) {
      const Seconds len = 5 + static_cast<double>(rng() % 120);
      sessions.push_back({c, t, t + len});
      t += len + 1 + static_cast<double>(rng() % 50);
    }
  }
  return sessions;
}

config::RunConfig make_test_config() {
  config::RunConfig cfg;
  cfg.traces.use_synthetic = true;
  cfg.traces.synthetic.n_clients = 120;
  cfg.traces.synthetic.horizon = 86400;
  cfg.traces.synthetic.mean_sessions_per_client_day = 6;
  cfg.traces.synthetic.mean_session_s = 900;
  cfg.traces.synthetic.session_log_sigma = 0.5;
  cfg.traces.synthetic.trough_level = 0.3;

  trace::DeviceProfile prof;
  prof.device_model = "default";
  prof.mean_time = 1.0;  // s/example: tasks take tens of seconds
  prof.stdev_time = 0.2;
  cfg.traces.device_profiles = {prof};
  cfg.traces.device_marginal = {{"default", 1.0}};
  cfg.traces.bandwidth.lognormal_mu = std::log(5.0);
  cfg.traces.bandwidth.lognormal_sigma = 0.3;

  cfg.data.use_synthetic = true;
  cfg.data.synthetic.n_records = 2400;
  cfg.data.synthetic.n_clients = 120;
  cfg.data.synthetic.feature_dim = 5;
  cfg.data.synthetic.label_noise = 0.05;
  cfg.data.n_executors = 4;
  cfg.data.test_fraction = 0.2;

  cfg.model.arch = {model::ArchKind::LogisticRegression, 5};
  cfg.model.hyper.lr0 = 0.3;
  cfg.model.hyper.local_epochs = 1;
  cfg.model.hyper.batch_size = 16;

  cfg.schedule.mode = config::Mode::FedBuff;
  cfg.schedule.horizon_s = 7200;
  cfg.schedule.concurrency = 8;
  cfg.schedule.buffer_size = 5;
  cfg.schedule.max_staleness = 20;
  return cfg;
}

std::vector<std::string> record_lines(const std::vector<MetricRecord>& records) {
  std::vector<std::string> lines;
  for (const auto& r : records) lines.push_back(to_ndjson_line(r));
  return lines;
}

}  // namespace

TEST_CASE("task_duration formula cases") {
  Rng rng(1);
  trace::DeviceProfile prof;
  prof.device_model = "m";
  prof.time_samples = {0.01};
  trace::BandwidthModel bw;
  bw.samples_mbps = {4.0};
  CHECK(task_duration(prof, bw, 2, 100, 1.0, rng) == doctest::Approx(2.5).epsilon(1e-15));

  // N -> infinity leaves only the compute term.
  trace::BandwidthModel fast;
  fast.samples_mbps = {1e18};
  CHECK(task_duration(prof, fast, 2, 100, 1.0, rng) == doctest::Approx(2.0).epsilon(1e-12));

  // MLP-with-sparse-features benchmark: 61.81 s per 5000 records.
  trace::DeviceProfile model_b;
  model_b.device_model = "b";
  model_b.time_samples = {61.81 / 5000.0};
  trace::BandwidthModel five;
  five.samples_mbps = {5.0};
  const double expect = (61.81 / 5000.0) * 1.0 * 184.0 + 2.0 * 0.76 / 5.0;
  CHECK(task_duration(model_b, five, 1, 184, 0.76, rng) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(std::abs(task_duration(model_b, five, 1, 184, 0.76, rng) - 2.578608) < 1e-9);

  // Non-positive samples resample, then fail after bounded retries.
  trace::DeviceProfile bad;
  bad.device_model = "bad";
  bad.mean_time = -5.0;
  bad.stdev_time = 1e-9;
  CHECK_THROWS_AS(task_duration(bad, bw, 1, 10, 1.0, rng), SimulationError);
}

TEST_CASE("serial schedule with C=1 dispatches in order") {
  std::vector<AvailabilitySession> sessions{{'A', 0, 100}, {'B', 40, 200}};
  AvailabilityIndex index(sessions);
  AsyncScheduler sched(
      index, [](ClientId, const AvailabilitySession&, Seconds) { return 10.0; }, {1, 1000, false});
  std::vector<Dispatched> out;
  int max_c = 0;
  AsyncScheduler::Callbacks cb;
  cb.on_dispatch = [&](ClientTask& task) {
    out.push_back({task.client_id, task.start, task.end()});
    return true;
  };
  cb.on_start = [&](ClientTask&) { max_c = std::max(max_c, sched.concurrency()); };
  sched.run(cb);
  REQUIRE(out.size() >= 2);
  CHECK(out[0] == Dispatched{'A', 0, 10});
  CHECK(out[1] == Dispatched{'B', 40, 50});
  CHECK(max_c <= 1);
}

TEST_CASE("scheduler equals the exhaustive agenda oracle on random instances") {
  std::mt19937_64 rng(404);
  int non_trivial = 0;
  for (int iter = 0; iter < 50; ++iter) {
    const auto sessions = random_sessions(rng, 50);
    if (sessions.empty()) continue;
    const int C = std::array<int, 3>{1, 2, 5}[rng() % 3];
    const Seconds horizon = 100 + static_cast<double>(rng() % 400);
    const auto got = run_scheduler(sessions, C, horizon);
    const auto expect = agenda_oracle(sessions, C, horizon);
    REQUIRE(got.size() == expect.size());
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == expect[i]);
    if (got.size() > 3) ++non_trivial;
  }
  CHECK(non_trivial > 20);
}

TEST_CASE("dispatched END times are non-decreasing") {
  std::mt19937_64 rng(7);
  for (int iter = 0; iter < 20; ++iter) {
    const auto sessions = random_sessions(rng, 30);
    if (sessions.empty()) continue;
    const auto out = run_scheduler(sessions, 1 + static_cast<int>(rng() % 6), 500);
    for (std::size_t i = 1; i < out.size(); ++i) CHECK(out[i].end >= out[i - 1].end);
  }
}

TEST_CASE("classify_outcome precedence") {
  CHECK(classify_outcome(90, 100, 0, 10) == TaskOutcome::Succeeded);
  CHECK(classify_outcome(110, 100, 0, 10) == TaskOutcome::Interrupted);
  CHECK(classify_outcome(110, 100, 99, 10) == TaskOutcome::Interrupted);  // precedence
  CHECK(classify_outcome(90, 100, 12, 10) == TaskOutcome::Stale);
  CHECK(classify_outcome(90, 100, 10, 10) == TaskOutcome::Succeeded);  // at the limit
}

TEST_CASE("fedavg aggregation basics and naive-loop oracle") {
  model::ModelParams params;
  params.weights = {1.0, 2.0};
  params.version = 3;

  model::ClientUpdate u1;
  u1.delta = {0.5, -0.5};
  u1.base_version = 3;
  u1.n_examples = 1;
  auto p1 = params;
  fedavg_apply({u1}, p1, 1.0);
  CHECK(p1.weights[0] == doctest::Approx(1.5));
  CHECK(p1.weights[1] == doctest::Approx(1.5));
  CHECK(p1.version == 4);

  model::ClientUpdate u2;
  u2.delta = {1.0, 1.0};
  u2.base_version = 3;
  u2.n_examples = 3;
  auto p2 = params;
  fedavg_apply({u1, u2}, p2, 1.0);
  // weights + (1*d1 + 3*d2)/4
  CHECK(p2.weights[0] == doctest::Approx(1.0 + (0.5 + 3.0) / 4.0));
  CHECK(p2.weights[1] == doctest::Approx(2.0 + (-0.5 + 3.0) / 4.0));

  // 5 random updates against an independently coded loop.
  std::mt19937_64 rng(88);
  std::normal_distribution<double> normal(0, 1);
  std::vector<model::ClientUpdate> updates(5);
  for (auto& u : updates) {
    u.base_version = 3;
    u.n_examples = 1 + rng() % 50;
    u.delta = {normal(rng), normal(rng)};
  }
  auto p3 = params;
  const double server_lr = 0.7;
  fedavg_apply(updates, p3, server_lr);
  for (std::size_t j = 0; j < 2; ++j) {
    double num = 0, den = 0;
    for (const auto& u : updates) {
      num += static_cast<double>(u.n_examples) * u.delta[j];
      den += static_cast<double>(u.n_examples);
    }
    CHECK(std::abs(p3.weights[j] - (params.weights[j] + server_lr * num / den)) < 1e-12);
  }

  // Mixed base versions are an internal-consistency error.
  auto bad = updates;
  bad[2].base_version = 2;
  auto p4 = params;
  CHECK_THROWS_AS(fedavg_apply(bad, p4, 1.0), SimulationError);
}

TEST_CASE("fedbuff aggregation with staleness discount") {
  model::ModelParams params;
  params.weights = {10.0};
  params.version = 5;

  BufferAggState state;
  state.buffer_size = 1;
  model::ClientUpdate u;
  u.delta = {2.0};
  u.base_version = 5;
  u.n_examples = 1;
  state.buffer.push_back(u);
  CHECK(fedbuff_apply(state, params, 0.5));
  CHECK(params.weights[0] == doctest::Approx(11.0));  // + 0.5 * 2
  CHECK(params.version == 6);
  CHECK(state.buffer.empty());

  // two updates, staleness {0, 3}: weights (1, 1/2), normalized by 1.5
  model::ModelParams p2;
  p2.weights = {0.0};
  p2.version = 3;
  BufferAggState s2;
  s2.buffer_size = 2;
  model::ClientUpdate a, b;
  a.delta = {1.0};
  a.base_version = 3;  // staleness 0
  b.delta = {1.0};
  b.base_version = 0;  // staleness 3, w = 1/sqrt(4) = 0.5
  s2.buffer = {a, b};
  CHECK(fedbuff_apply(s2, p2, 1.0));
  CHECK(p2.weights[0] == doctest::Approx((1.0 + 0.5) / 1.5));

  // not-full buffer is a no-op unless forced
  BufferAggState s3;
  s3.buffer_size = 4;
  s3.buffer = {a};
  model::ModelParams p3;
  p3.weights = {0.0};
  p3.version = 3;
  CHECK(!fedbuff_apply(s3, p3, 1.0));
  CHECK(p3.version == 3);
  CHECK(fedbuff_apply(s3, p3, 1.0, /*force=*/true));
  CHECK(p3.version == 4);
}

TEST_CASE("staleness weight is the inverse square root") {
  CHECK(staleness_weight(0) == doctest::Approx(1.0));
  CHECK(staleness_weight(3) == doctest::Approx(0.5));
  CHECK(staleness_weight(8) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("plan_sync_round aggregates the first S completions") {
  // Durations keyed by client id for transparency.
  auto durfn = [](ClientId client, const AvailabilitySession&, Seconds) {
    return 10.0 * static_cast<double>(client + 1);
  };
  std::vector<AvailabilitySession> sessions{{0, 0, 1000}, {1, 0, 1000}, {2, 0, 1000}};

  SUBCASE("both finish in session, no stragglers") {
    AvailabilityIndex index({{0, 0, 1000}, {1, 0, 1000}});
    const auto plan = plan_sync_round(index, 0, {}, 2, 1.0, 500, durfn);
    CHECK(!plan.failed);
    CHECK(plan.aggregated.size() == 2);
    CHECK(plan.stragglers.empty());
    CHECK(plan.interrupted.empty());
    CHECK(plan.round_end == doctest::Approx(20.0));  // client 1 finishes second
  }

  SUBCASE("overcommit 1.5 selects 3, slowest misses the deadline") {
    AvailabilityIndex index(sessions);
    const auto plan = plan_sync_round(index, 0, {}, 2, 1.5, 25, durfn);
    CHECK(!plan.failed);
    CHECK(plan.selected.size() == 3);
    CHECK(plan.aggregated.size() == 2);
    CHECK(plan.stragglers.size() == 1);
    CHECK(plan.selected[plan.stragglers[0]].client_id == 2);  // 30 > 25 deadline
    CHECK(plan.round_end == doctest::Approx(20.0));
  }

  SUBCASE("fewer than S completions fails the round") {
    AvailabilityIndex index(sessions);
    const auto plan = plan_sync_round(index, 0, {}, 3, 1.0, 15, durfn);
    CHECK(plan.failed);
    CHECK(plan.aggregated.empty());
    CHECK(plan.round_end == doctest::Approx(15.0));  // deadline
  }

  SUBCASE("device leaving its session is interrupted") {
    AvailabilityIndex index({{0, 0, 1000}, {1, 0, 12}});  // client 1 needs 20s
    const auto plan = plan_sync_round(index, 0, {}, 1, 2.0, 500, durfn);
    CHECK(plan.interrupted.size() == 1);
    CHECK(plan.selected[plan.interrupted[0]].client_id == 1);
  }
}

TEST_CASE("plan_sync_round matches a completion-sort oracle on random instances") {
  std::mt19937_64 rng(606);
  for (int iter = 0; iter < 40; ++iter) {
    const auto sessions = random_sessions(rng, 30);
    if (sessions.empty()) continue;
    AvailabilityIndex index(sessions);
    const std::size_t S = 1 + rng() % 5;
    const double overcommit = 1.0 + static_cast<double>(rng() % 10) / 10.0;
    const Seconds now = static_cast<double>(rng() % 60);
    const Seconds deadline_s = 20 + static_cast<double>(rng() % 200);
    auto durfn = [](ClientId client, const AvailabilitySession&, Seconds start) {
      return test_duration(client, start);
    };
    const auto plan = plan_sync_round(index, now, {}, S, overcommit, deadline_s, durfn);
    if (plan.selected.empty()) continue;

    // Oracle: simulate all selected clients, sort completions, take first S.
    std::vector<std::pair<Seconds, std::size_t>> completions;
    std::set<std::size_t> interrupted;
    for (std::size_t i = 0; i < plan.selected.size(); ++i) {
      const auto& t = plan.selected[i];
      const Seconds done = t.start + test_duration(t.client_id, t.start);
      if (done > t.session.end)
        interrupted.insert(i);
      else if (done <= now + deadline_s)
        completions.emplace_back(done, i);
    }
    std::sort(completions.begin(), completions.end());
    CHECK(interrupted == std::set<std::size_t>(plan.interrupted.begin(), plan.interrupted.end()));
    if (completions.size() >= S) {
      REQUIRE(!plan.failed);
      REQUIRE(plan.aggregated.size() == S);
      for (std::size_t i = 0; i < S; ++i) CHECK(plan.aggregated[i] == completions[i].second);
      CHECK(plan.round_end == doctest::Approx(completions[S - 1].first));
    } else {
      CHECK(plan.failed);
      CHECK(plan.round_end == doctest::Approx(now + deadline_s));
    }
  }
}

TEST_CASE("horizon zero produces an empty metric stream and untouched model") {
  auto cfg = make_test_config();
  cfg.schedule.horizon_s = 0;
  Simulation sim(cfg, 5);
  const auto before = sim.params().weights;
  const auto result = sim.run();
  CHECK(result.records.empty());
  CHECK(result.final_params.weights == before);
  CHECK(result.final_params.version == 0);
}

TEST_CASE("fedbuff run is deterministic and worker-count independent") {
  auto cfg = make_test_config();
  cfg.schedule.horizon_s = 3600;

  Simulation sim1(cfg, 42);
  RunControls c1;
  c1.n_workers = 1;
  const auto r1 = sim1.run(c1);

  Simulation sim8(cfg, 42);
  RunControls c8;
  c8.n_workers = 8;
  const auto r8 = sim8.run(c8);

  REQUIRE(r1.records.size() == r8.records.size());
  CHECK(record_lines(r1.records) == record_lines(r8.records));
  CHECK(r1.final_params.weights == r8.final_params.weights);
  CHECK(r1.final_params.version == r8.final_params.version);
  CHECK(r1.metrics.tasks_started == r8.metrics.tasks_started);
  REQUIRE(!r1.records.empty());

  // Conservation: started = succeeded + interrupted + stale + in-flight.
  CHECK(r1.metrics.tasks_started >=
        r1.metrics.succeeded + r1.metrics.interrupted + r1.metrics.stale);

  // Aggregation timestamps are non-decreasing.
  for (std::size_t i = 1; i < r1.records.size(); ++i)
    CHECK(r1.records[i].virtual_time_s >= r1.records[i - 1].virtual_time_s);

  // A different seed gives a different stream.
  Simulation sim_other(cfg, 43);
  const auto r_other = sim_other.run(c1);
  CHECK(record_lines(r_other.records) != record_lines(r1.records));
}

TEST_CASE("fedavg run is deterministic and conserves tasks per round") {
  auto cfg = make_test_config();
  cfg.schedule.mode = config::Mode::FedAvg;
  cfg.schedule.cohort_size = 6;
  cfg.schedule.overcommit = 1.5;
  cfg.schedule.horizon_s = 3600;

  Simulation a(cfg, 9), b(cfg, 9);
  RunControls one;
  one.n_workers = 1;
  RunControls four;
  four.n_workers = 4;
  const auto ra = a.run(one);
  const auto rb = b.run(four);
  CHECK(record_lines(ra.records) == record_lines(rb.records));
  CHECK(ra.final_params.weights == rb.final_params.weights);
  REQUIRE(!ra.records.empty());
  CHECK(ra.metrics.tasks_started ==
        ra.metrics.succeeded + ra.metrics.interrupted + ra.metrics.stale);
  CHECK(ra.final_params.version > 0);
}

TEST_CASE("fedbuff checkpoint resume reproduces the uninterrupted run") {
  namespace fs = std::filesystem;
  auto cfg = make_test_config();
  cfg.schedule.horizon_s = 2400;
  const std::string ckpt = "engine_test_ckpt.bin";

  Simulation full(cfg, 3);
  const auto full_result = full.run();
  REQUIRE(full_result.records.size() >= 6);

  Simulation partial(cfg, 3);
  RunControls stop;
  stop.checkpoint_path = ckpt;
  stop.checkpoint_interval = 1;
  stop.stop_after_aggregations = 3;
  const auto partial_result = partial.run(stop);
  CHECK(partial_result.aggregations == 3);

  auto resumed = Simulation::resume(cfg, ckpt);
  const auto rest = resumed->run();

  // Records from round 4 on must match the uninterrupted run byte for byte.
  std::vector<MetricRecord> tail(full_result.records.begin() + 3, full_result.records.end());
  REQUIRE(rest.records.size() == tail.size());
  CHECK(record_lines(rest.records) == record_lines(tail));
  CHECK(rest.final_params.weights == full_result.final_params.weights);
  CHECK(rest.final_params.version == full_result.final_params.version);
  CHECK(rest.metrics.tasks_started == full_result.metrics.tasks_started);

  // Kill-and-resume recomputes at most one round: the resumed stream starts
  // exactly at round 4.
  CHECK(rest.records.front().round == 4);
  fs::remove(ckpt);
}

TEST_CASE("fedavg checkpoint resume reproduces the uninterrupted run") {
  namespace fs = std::filesystem;
  auto cfg = make_test_config();
  cfg.schedule.mode = config::Mode::FedAvg;
  cfg.schedule.cohort_size = 4;
  cfg.schedule.overcommit = 1.25;
  cfg.schedule.horizon_s = 6000;
  const std::string ckpt = "engine_test_ckpt_avg.bin";

  Simulation full(cfg, 3);
  const auto full_result = full.run();
  REQUIRE(full_result.records.size() >= 4);

  Simulation partial(cfg, 3);
  RunControls stop;
  stop.checkpoint_path = ckpt;
  stop.stop_after_aggregations = 2;
  partial.run(stop);

  auto resumed = Simulation::resume(cfg, ckpt);
  const auto rest = resumed->run();
  std::vector<MetricRecord> tail(full_result.records.begin() + 2, full_result.records.end());
  CHECK(record_lines(rest.records) == record_lines(tail));
  CHECK(rest.final_params.weights == full_result.final_params.weights);
  fs::remove(ckpt);
}

TEST_CASE("resume refuses mismatched config or data") {
  namespace fs = std::filesystem;
  auto cfg = make_test_config();
  cfg.schedule.horizon_s = 1200;
  const std::string ckpt = "engine_test_ckpt_guard.bin";
  Simulation sim(cfg, 4);
  RunControls stop;
  stop.checkpoint_path = ckpt;
  stop.stop_after_aggregations = 1;
  sim.run(stop);

  auto altered = cfg;
  altered.schedule.buffer_size += 1;  // config digest changes
  CHECK_THROWS_AS(Simulation::resume(altered, ckpt), SimulationError);

  auto altered_data = cfg;
  altered_data.data.synthetic.n_records += 1;  // shard digest changes
  CHECK_THROWS_AS(Simulation::resume(altered_data, ckpt), SimulationError);

  fs::remove(ckpt);
}

TEST_CASE("worker crash mid-run recovers with identical results") {
  auto cfg = make_test_config();
  cfg.schedule.horizon_s = 1800;

  Simulation clean(cfg, 12);
  RunControls normal;
  normal.n_workers = 4;
  const auto expect = clean.run(normal);

  Simulation crashy(cfg, 12);
  RunControls crash;
  crash.n_workers = 4;
  crash.crash.worker = 1;
  crash.crash.after_jobs = 3;
  const auto got = crashy.run(crash);

  CHECK(record_lines(got.records) == record_lines(expect.records));
  CHECK(got.final_params.weights == expect.final_params.weights);
}

TEST_CASE("throughput smoke: simulated tasks per wall-clock hour") {
  auto cfg = make_test_config();
  cfg.schedule.horizon_s = 5400;
  Simulation sim(cfg, 21);
  RunControls controls;
  controls.n_workers = 4;
  const auto t0 = std::chrono::steady_clock::now();
  const auto result = sim.run(controls);
  const auto elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  REQUIRE(result.metrics.tasks_started > 100);
  const double per_hour = static_cast<double>(result.metrics.tasks_started) / elapsed * 3600.0;
  MESSAGE("tasks/hour: ", per_hour);
  CHECK(per_hour > 10000.0);
}

TEST_CASE("checkpoint file round-trips") {
  CheckpointData data;
  data.config_digest = 1;
  data.shard_digest = 2;
  data.trace_digest = 3;
  data.master_seed = 4;
  data.mode = 1;
  data.virtual_time = 123.5;
  data.round = 9;
  data.params.version = 9;
  data.params.weights = {1.0, -2.0};
  data.metrics.tasks_started = 100;
  data.metrics.succeeded = 90;
  data.metrics.stale = 4;
  data.metrics.interrupted = 5;
  data.metrics.device_compute_s = 1e4;
  data.metrics.virtual_wall_s = 123.5;
  data.scheduler.now = 123.5;
  data.scheduler.concurrency = 2;
  data.scheduler.committed = 3;
  data.scheduler.next_task_id = 44;
  data.scheduler.next_seq = 90;
  ClientTask t;
  t.task_id = 43;
  t.client_id = 17;
  t.session = {17, 100, 300};
  t.start = 110;
  t.duration = 50;
  t.base_version = 8;
  t.started = true;
  data.scheduler.tasks.push_back(t);
  data.scheduler.queue.push_back({160, EventFlag::End, 43, 17, 89});
  model::ClientUpdate u;
  u.delta = {0.5, 0.5};
  u.base_version = 8;
  u.client_id = 17;
  u.n_examples = 3;
  data.buffer.push_back(u);
  data.inflight_updates.emplace_back(43, u);
  data.busy_until.emplace_back(17, 160.0);

  write_checkpoint("ckpt_roundtrip.bin", data);
  const auto loaded = read_checkpoint("ckpt_roundtrip.bin");
  CHECK(loaded.config_digest == 1);
  CHECK(loaded.params.weights == data.params.weights);
  CHECK(loaded.metrics.tasks_started == 100);
  REQUIRE(loaded.scheduler.tasks.size() == 1);
  CHECK(loaded.scheduler.tasks[0].client_id == 17);
  CHECK(loaded.scheduler.tasks[0].started);
  REQUIRE(loaded.scheduler.queue.size() == 1);
  CHECK(loaded.scheduler.queue[0].flag == EventFlag::End);
  REQUIRE(loaded.buffer.size() == 1);
  CHECK(loaded.buffer[0].delta == u.delta);
  REQUIRE(loaded.inflight_updates.size() == 1);
  CHECK(loaded.inflight_updates[0].first == 43);
  REQUIRE(loaded.busy_until.size() == 1);
  CHECK(loaded.busy_until[0].second == doctest::Approx(160.0));
  std::remove("ckpt_roundtrip.bin");
}
