#include "fedsim/engine.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <sstream>

#include "fedsim/checkpoint.hpp"
#include "fedsim/metrics.hpp"

namespace fedsim::engine {

double task_duration(const trace::DeviceProfile& profile, const trace::BandwidthModel& bandwidth,
                     int local_epochs, std::uint64_t partition_size, double update_mb, Rng& rng) {
  if (local_epochs < 1) throw ValidationError("task_duration: local_epochs >= 1");
  if (partition_size < 1) throw ValidationError("task_duration: partition must be non-empty");
  constexpr int kMaxResample = 16;
  auto draw_positive = [&](auto sample, const char* what) {
    for (int i = 0; i < kMaxResample; ++i) {
      const double v = sample();
      if (v > 0) return v;
    }
    throw SimulationError(std::string("task_duration: could not draw a positive ") + what);
  };
  const double t = draw_positive([&] { return profile.sample_time_per_example(rng); },
                                 "per-example time");
  const double n = draw_positive([&] { return bandwidth.sample_mbps(rng); }, "bandwidth");
  return t * static_cast<double>(local_epochs) * static_cast<double>(partition_size) +
         2.0 * update_mb / n;
}

TaskOutcome classify_outcome(Seconds task_end, Seconds session_end, std::uint64_t staleness,
                             std::uint64_t max_staleness) {
  if (task_end > session_end) return TaskOutcome::Interrupted;
  if (staleness > max_staleness) return TaskOutcome::Stale;
  return TaskOutcome::Succeeded;
}

void fedavg_apply(const std::vector<model::ClientUpdate>& updates, model::ModelParams& params,
                  double server_lr) {
  if (updates.empty()) throw ValidationError("fedavg_apply: no updates");
  double total_examples = 0;
  for (const auto& u : updates) {
    if (u.base_version != params.version)
      throw SimulationError("fedavg_apply: update base version " +
                            std::to_string(u.base_version) + " != model version " +
                            std::to_string(params.version));
    if (u.delta.size() != params.weights.size())
      throw SimulationError("fedavg_apply: delta length mismatch");
    total_examples += static_cast<double>(u.n_examples);
  }
  const std::size_t dim = params.weights.size();
  std::vector<double> acc(dim, 0.0);
  for (const auto& u : updates) {
    const double w = static_cast<double>(u.n_examples);
    for (std::size_t j = 0; j < dim; ++j) acc[j] += w * u.delta[j];
  }
  for (std::size_t j = 0; j < dim; ++j) params.weights[j] += server_lr * acc[j] / total_examples;
  params.version += 1;
}

double staleness_weight(std::uint64_t staleness) {
  return 1.0 / std::sqrt(1.0 + static_cast<double>(staleness));
}

bool fedbuff_apply(BufferAggState& state, model::ModelParams& params, double server_lr,
                   bool force) {
  if (state.buffer.size() < state.buffer_size && !force) return false;
  if (state.buffer.empty()) return false;
  const std::size_t dim = params.weights.size();
  double total_w = 0;
  std::vector<double> acc(dim, 0.0);
  for (const auto& u : state.buffer) {
    if (u.delta.size() != dim) throw SimulationError("fedbuff_apply: delta length mismatch");
    if (params.version < u.base_version)
      throw SimulationError("fedbuff_apply: update from the future");
    const double w = staleness_weight(params.version - u.base_version);
    total_w += w;
    for (std::size_t j = 0; j < dim; ++j) acc[j] += w * u.delta[j];
  }
  for (std::size_t j = 0; j < dim; ++j) params.weights[j] += server_lr * acc[j] / total_w;
  params.version += 1;
  state.buffer.clear();
  return true;
}

// --- sync rounds -----------------------------------------------------------------

RoundPlan plan_sync_round(const trace::AvailabilityIndex& index, Seconds now,
                          const std::unordered_map<ClientId, Seconds>& busy_until,
                          std::size_t cohort_size, double overcommit, Seconds deadline_s,
                          const AsyncScheduler::DurationFn& duration_fn) {
  if (cohort_size < 1) throw ValidationError("cohort size must be >= 1");
  if (overcommit < 1.0) throw ValidationError("overcommit factor must be >= 1");

  RoundPlan plan;
  const auto n_select =
      static_cast<std::size_t>(std::ceil(static_cast<double>(cohort_size) * overcommit));

  std::unordered_set<ClientId> busy;
  for (const auto& [client, until] : busy_until)
    if (until > now) busy.insert(client);

  for (std::size_t i = 0; i < n_select; ++i) {
    auto cand = index.next_available(now, busy);
    if (!cand) break;
    busy.insert(cand->client_id);
    PlannedTask task;
    task.client_id = cand->client_id;
    task.session = cand->session;
    task.start = cand->session.start;
    task.duration = duration_fn(cand->client_id, cand->session, task.start);
    if (!(task.duration > 0)) throw SimulationError("task duration must be positive");
    plan.selected.push_back(task);
  }
  if (plan.selected.empty()) {
    plan.failed = true;
    plan.deadline = now;
    plan.round_end = now;
    return plan;
  }

  if (deadline_s > 0) {
    plan.deadline = now + deadline_s;
  } else {
    // Default: 95th percentile of the projected completion offsets.
    std::vector<double> offsets;
    offsets.reserve(plan.selected.size());
    for (const auto& t : plan.selected) offsets.push_back(t.completion() - now);
    std::sort(offsets.begin(), offsets.end());
    const auto idx = static_cast<std::size_t>(
        std::ceil(0.95 * static_cast<double>(offsets.size()))) - 1;
    plan.deadline = now + offsets[std::min(idx, offsets.size() - 1)];
  }

  std::vector<std::pair<Seconds, std::size_t>> completions;  // in-deadline, in-session
  for (std::size_t i = 0; i < plan.selected.size(); ++i) {
    const auto& t = plan.selected[i];
    if (t.completion() > t.session.end) {
      plan.interrupted.push_back(i);
    } else if (t.completion() <= plan.deadline) {
      completions.emplace_back(t.completion(), i);
    } else {
      plan.stragglers.push_back(i);
    }
  }
  std::sort(completions.begin(), completions.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return plan.selected[a.second].client_id < plan.selected[b.second].client_id;
  });

  if (completions.size() >= cohort_size) {
    for (std::size_t i = 0; i < completions.size(); ++i) {
      if (i < cohort_size)
        plan.aggregated.push_back(completions[i].second);
      else
        plan.stragglers.push_back(completions[i].second);  // finished, thrown away
    }
    plan.round_end = completions[cohort_size - 1].first;
  } else {
    plan.failed = true;
    for (const auto& [end, idx] : completions) {
      (void)end;
      plan.stragglers.push_back(idx);
    }
    plan.round_end = plan.deadline;
  }
  return plan;
}

// --- Simulation -------------------------------------------------------------------

namespace {

std::uint64_t double_bits(double v) { return std::bit_cast<std::uint64_t>(v); }

std::uint64_t sessions_digest(const std::vector<trace::AvailabilitySession>& sessions) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mixin = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& s : sessions) {
    mixin(static_cast<std::uint64_t>(s.client_id));
    mixin(double_bits(s.start));
    mixin(double_bits(s.end));
  }
  return h;
}

std::uint64_t partitions_digest(const std::vector<data::ClientPartition>& parts) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mixin = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& p : parts) {
    mixin(static_cast<std::uint64_t>(p.client_id));
    mixin(p.records.size());
    for (const auto& r : p.records) {
      mixin(static_cast<std::uint64_t>(static_cast<std::int64_t>(r.label)));
      for (double x : r.features) mixin(double_bits(x));
    }
  }
  return h;
}

}  // namespace

Simulation::Simulation(const config::RunConfig& cfg, std::uint64_t master_seed)
    : cfg_(cfg), master_seed_(master_seed) {
  cfg_.validate();
  build_inputs();
  params_ = model::init_params(cfg_.model.arch, hash_combine(master_seed_, 0x6d6f64656cULL));
}

Simulation::Simulation(const config::RunConfig& cfg, std::uint64_t master_seed, bool)
    : cfg_(cfg), master_seed_(master_seed) {
  cfg_.validate();
  build_inputs();
}

void Simulation::build_inputs() {
  // Traces.
  std::vector<trace::AvailabilitySession> sessions;
  if (!cfg_.traces.file.empty()) {
    sessions = trace::read_trace_file(cfg_.traces.file);
    inputs_.trace_digest = data::file_digest(cfg_.traces.file);
  } else {
    sessions = trace::generate_synthetic_sessions(cfg_.traces.synthetic,
                                                  hash_combine(master_seed_, 0x74726163ULL));
    sessions = trace::filter_by_criteria(sessions, cfg_.traces.criteria.to_model(),
                                         hash_combine(master_seed_, 0x66696c74ULL));
    trace::sort_sessions(sessions);
    inputs_.trace_digest = sessions_digest(sessions);
  }
  if (sessions.empty()) throw ValidationError("no availability sessions after filtering");
  inputs_.index = trace::AvailabilityIndex(std::move(sessions));

  // Records -> test split -> partitions (or pre-built shard files).
  if (!cfg_.data.shard_dir.empty()) {
    namespace fs = std::filesystem;
    std::vector<std::string> shard_paths;
    for (const auto& entry : fs::directory_iterator(cfg_.data.shard_dir)) {
      const auto name = entry.path().filename().string();
      if (name.rfind("shard_", 0) == 0 && entry.path().extension() == ".bin")
        shard_paths.push_back(entry.path().string());
    }
    if (shard_paths.empty())
      throw ValidationError("no shard_*.bin files in " + cfg_.data.shard_dir);
    std::sort(shard_paths.begin(), shard_paths.end());
    std::uint64_t digest = 0xcbf29ce484222325ULL;
    for (const auto& p : shard_paths) {
      digest = hash_combine(digest, data::file_digest(p));
      auto shard = data::read_shard_file(p);
      for (auto& part : shard.partitions) inputs_.partitions.push_back(std::move(part));
    }
    const auto test_path = (fs::path(cfg_.data.shard_dir) / "test.bin").string();
    if (!fs::exists(test_path))
      throw ValidationError("shard directory missing test.bin: " + cfg_.data.shard_dir);
    auto test_shard = data::read_shard_file(test_path);
    for (auto& part : test_shard.partitions)
      for (auto& r : part.records) inputs_.test_records.push_back(std::move(r));
    digest = hash_combine(digest, data::file_digest(test_path));
    inputs_.shard_digest = digest;
  } else {
    data::KeyedDataset ds;
    if (!cfg_.data.csv_path.empty()) {
      ds = data::read_csv_dataset(cfg_.data.csv_path, cfg_.data.csv_schema);
    } else {
      ds = data::generate_synthetic_dataset(cfg_.data.synthetic,
                                            hash_combine(master_seed_, 0x64617461ULL));
    }
    // Held-out test split before partitioning.
    std::vector<std::size_t> order(ds.records.size());
    std::iota(order.begin(), order.end(), 0);
    Rng split_rng(hash_combine(master_seed_, 0x73706c6974ULL));
    std::shuffle(order.begin(), order.end(), split_rng);
    const auto n_test = static_cast<std::size_t>(
        cfg_.data.test_fraction * static_cast<double>(ds.records.size()));
    std::vector<data::ClientRecord> train_records;
    std::vector<std::string> train_keys;
    for (std::size_t i = 0; i < order.size(); ++i) {
      if (i < n_test) {
        inputs_.test_records.push_back(ds.records[order[i]]);
      } else {
        train_records.push_back(ds.records[order[i]]);
        train_keys.push_back(ds.keys[order[i]]);
      }
    }
    if (train_records.empty()) throw ValidationError("test fraction leaves no training records");

    const auto& part = cfg_.data.partition;
    if (part.kind == "dirichlet") {
      inputs_.partitions = data::partition_dirichlet(
          train_records, part.n_clients, part.alpha_label, part.alpha_quantity,
          hash_combine(master_seed_, 0x64697269ULL));
    } else {
      inputs_.partitions = data::partition_natural(train_records, train_keys);
    }
    inputs_.shard_digest = partitions_digest(inputs_.partitions);
  }
  std::sort(inputs_.partitions.begin(), inputs_.partitions.end(),
            [](const auto& a, const auto& b) { return a.client_id < b.client_id; });
  if (inputs_.test_records.empty())
    throw ValidationError("empty test set; increase test_fraction or provide test.bin");

  // Device population and profiles.
  if (cfg_.traces.device_profiles.empty())
    throw ValidationError("at least one device profile is required");
  for (const auto& p : cfg_.traces.device_profiles) inputs_.profiles[p.device_model] = p;
  std::vector<ClientId> clients;
  for (const auto& s : inputs_.index.sessions()) clients.push_back(s.client_id);
  std::sort(clients.begin(), clients.end());
  clients.erase(std::unique(clients.begin(), clients.end()), clients.end());
  auto marginal = cfg_.traces.device_marginal;
  if (marginal.empty()) marginal = {{cfg_.traces.device_profiles[0].device_model, 1.0}};
  inputs_.population = trace::DevicePopulation::assign(
      clients, marginal, hash_combine(master_seed_, 0x64657669ULL));
  for (const auto& [name, share] : marginal) {
    (void)share;
    if (!inputs_.profiles.contains(name))
      throw ValidationError("device marginal references unknown profile " + name);
  }
  inputs_.bandwidth = cfg_.traces.bandwidth;
}

const data::ClientPartition& Simulation::partition_for(ClientId client) const {
  const auto n = inputs_.partitions.size();
  const auto idx = static_cast<std::size_t>(
      ((client % static_cast<ClientId>(n)) + static_cast<ClientId>(n)) %
      static_cast<ClientId>(n));
  return inputs_.partitions[idx];
}

std::uint32_t Simulation::shard_of(ClientId client) const {
  const auto n = inputs_.partitions.size();
  const auto idx = static_cast<std::size_t>(
      ((client % static_cast<ClientId>(n)) + static_cast<ClientId>(n)) %
      static_cast<ClientId>(n));
  return static_cast<std::uint32_t>(idx % cfg_.data.n_executors);
}

double Simulation::update_mb() const {
  if (cfg_.model.update_size_override_bytes > 0)
    return model::bytes_to_mb(cfg_.model.update_size_override_bytes);
  model::ModelParams sized;
  sized.weights.assign(cfg_.model.arch.param_count(), 0.0);
  return model::bytes_to_mb(model::update_size_bytes(sized, cfg_.model.encoding));
}

Seconds Simulation::duration_for(ClientId client, Seconds start, std::uint64_t salt) const {
  const auto it = inputs_.population.assignment.find(client);
  if (it == inputs_.population.assignment.end())
    throw SimulationError("no device assigned to client " + std::to_string(client));
  const auto& profile = inputs_.profiles.at(it->second);
  Rng rng(hash_combine(task_seed(master_seed_, client, salt), double_bits(start)));
  return task_duration(profile, inputs_.bandwidth, cfg_.model.hyper.local_epochs,
                       partition_for(client).records.size(), update_mb(), rng);
}

void Simulation::eval_model(double& loss, double& metric_value) const {
  loss = model::log_loss(cfg_.model.arch, params_.weights, inputs_.test_records);
  if (cfg_.model.metric == "ndcg") {
    metric_value =
        model::eval_ndcg(cfg_.model.arch, params_, inputs_.test_records, cfg_.model.ndcg_k);
  } else {
    metric_value = model::eval_aupr(cfg_.model.arch, params_, inputs_.test_records);
  }
}

void Simulation::emit_record(std::vector<MetricRecord>& out, Seconds now, std::uint64_t round,
                             bool final_partial) {
  MetricRecord rec;
  rec.virtual_time_s = now;
  rec.round = round;
  eval_model(rec.loss, rec.metric_value);
  rec.metric_name = cfg_.model.metric;
  rec.tasks_started = metrics_.tasks_started;
  rec.succeeded = metrics_.succeeded;
  rec.interrupted = metrics_.interrupted;
  rec.stale = metrics_.stale;
  rec.device_compute_s = metrics_.device_compute_s;
  rec.updates_per_s =
      now > 0 ? static_cast<double>(metrics_.updates_attempted()) / now : 0.0;
  rec.final_partial = final_partial;
  metrics_.validate();
  out.push_back(std::move(rec));
}

void Simulation::maybe_emit_interval_records(std::vector<MetricRecord>& out, Seconds now) {
  if (cfg_.schedule.eval_interval_s <= 0) return;
  while (next_eval_mark_ <= now) {
    emit_record(out, next_eval_mark_, round_);
    next_eval_mark_ += cfg_.schedule.eval_interval_s;
  }
}

void Simulation::write_checkpoint_file(const std::string& path,
                                       const SchedulerSnapshot* sched,
                                       const std::vector<std::pair<std::uint64_t, model::ClientUpdate>>*
                                           inflight) const {
  CheckpointData data;
  data.config_digest = config::config_digest(cfg_);
  data.shard_digest = inputs_.shard_digest;
  data.trace_digest = inputs_.trace_digest;
  data.master_seed = master_seed_;
  data.mode = static_cast<std::uint8_t>(cfg_.schedule.mode);
  data.virtual_time = clock_now_;
  data.round = round_;
  data.params = params_;
  data.metrics = metrics_;
  data.next_eval_mark = next_eval_mark_;
  if (sched) data.scheduler = *sched;
  data.buffer = buffer_.buffer;
  if (inflight) data.inflight_updates = *inflight;
  for (const auto& [client, until] : busy_until_) data.busy_until.emplace_back(client, until);
  std::sort(data.busy_until.begin(), data.busy_until.end());
  const auto tmp = path + ".tmp";
  write_checkpoint(tmp, data);
  std::filesystem::rename(tmp, path);
}

std::unique_ptr<Simulation> Simulation::resume(const config::RunConfig& cfg,
                                               const std::string& checkpoint_path) {
  const CheckpointData data = read_checkpoint(checkpoint_path);
  if (data.config_digest != config::config_digest(cfg))
    throw SimulationError("refusing to resume: config digest mismatch");
  std::unique_ptr<Simulation> sim(new Simulation(cfg, data.master_seed, true));
  if (data.shard_digest != sim->inputs_.shard_digest)
    throw SimulationError("refusing to resume: shard digest mismatch");
  if (data.trace_digest != sim->inputs_.trace_digest)
    throw SimulationError("refusing to resume: trace digest mismatch");
  if (data.mode != static_cast<std::uint8_t>(cfg.schedule.mode))
    throw SimulationError("refusing to resume: mode mismatch");
  if (data.params.weights.size() != cfg.model.arch.param_count())
    throw SimulationError("refusing to resume: architecture mismatch");

  sim->params_ = data.params;
  sim->metrics_ = data.metrics;
  sim->round_ = data.round;
  sim->clock_now_ = data.virtual_time;
  sim->next_eval_mark_ = data.next_eval_mark;
  sim->buffer_.buffer = data.buffer;
  sim->resume_snapshot_ = data.scheduler;
  for (const auto& [task_id, update] : data.inflight_updates)
    sim->resume_updates_[task_id] = update;
  for (const auto& [client, until] : data.busy_until) sim->busy_until_[client] = until;
  sim->resumed_ = true;
  return sim;
}

RunResult Simulation::run(const RunControls& controls) {
  if (cfg_.schedule.mode == config::Mode::FedBuff) return run_fedbuff(controls);
  return run_fedavg(controls);
}

// --- FedBuff -------------------------------------------------------------------------

RunResult Simulation::run_fedbuff(const RunControls& controls) {
  RunResult result;
  buffer_.buffer_size = cfg_.schedule.buffer_size;
  buffer_.max_staleness = cfg_.schedule.max_staleness;
  if (cfg_.schedule.eval_interval_s > 0 && next_eval_mark_ == 0 && !resumed_)
    next_eval_mark_ = cfg_.schedule.eval_interval_s;

  WorkerPool pool(controls.n_workers, controls.crash);
  AsyncScheduler sched(
      inputs_.index,
      [this](ClientId client, const trace::AvailabilitySession&, Seconds start) {
        return duration_for(client, start, 0);
      },
      {cfg_.schedule.concurrency, cfg_.schedule.horizon_s, cfg_.schedule.strict_paper_schedule,
       cfg_.traces.cooldown_s});
  if (resume_snapshot_) sched.restore(*resume_snapshot_);

  struct InFlight {
    std::future<model::ClientUpdate> future;
    WorkerPool::Job job;
    std::uint32_t shard = 0;
  };
  std::unordered_map<std::uint64_t, InFlight> inflight;
  auto& ready = resume_updates_;  // task_id -> precomputed update (resume path)

  auto submit_task = [&](const ClientTask& task) {
    if (ready.contains(task.task_id)) return;
    const auto& partition = partition_for(task.client_id);
    const auto seed = task_seed(master_seed_, task.client_id, task.base_version);
    model::ModelParams snapshot = params_;  // model "downloaded" at task start
    const auto arch = cfg_.model.arch;
    const auto hyper = cfg_.model.hyper;
    WorkerPool::Job job = [arch, snapshot = std::move(snapshot), &partition, hyper, seed] {
      return model::local_train(arch, snapshot, partition, hyper, seed);
    };
    InFlight fl;
    fl.shard = shard_of(task.client_id);
    fl.future = pool.submit(fl.shard, job);
    fl.job = std::move(job);
    inflight.emplace(task.task_id, std::move(fl));
  };

  // Tasks restored mid-flight resume training immediately (results were not
  // checkpointed for tasks that never produce updates).
  if (resume_snapshot_) {
    for (const auto& task : resume_snapshot_->tasks) {
      if (task.started && !(task.end() > task.session.end)) submit_task(task);
    }
  }

  auto drain_inflight = [&]() {
    std::vector<std::pair<std::uint64_t, model::ClientUpdate>> drained(ready.begin(), ready.end());
    for (auto& [task_id, fl] : inflight) {
      auto update = pool.collect(fl.future, fl.shard, fl.job);
      ready[task_id] = update;
      drained.emplace_back(task_id, std::move(update));
    }
    inflight.clear();
    std::sort(drained.begin(), drained.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    return drained;
  };

  bool stop_requested = false;

  AsyncScheduler::Callbacks callbacks;
  callbacks.on_start = [&](ClientTask& task) {
    task.base_version = params_.version;
    metrics_.tasks_started += 1;
    metrics_.device_compute_s += task.duration;
    if (task.end() > task.session.end) return;  // interrupted: never finishes training
    submit_task(task);
  };
  callbacks.on_dispatch = [&](ClientTask& task) -> bool {
    maybe_emit_interval_records(result.records, task.end());
    clock_now_ = task.end();
    metrics_.virtual_wall_s = clock_now_;

    const std::uint64_t staleness = params_.version - task.base_version;
    task.outcome =
        classify_outcome(task.end(), task.session.end, staleness, cfg_.schedule.max_staleness);
    if (task.outcome == TaskOutcome::Interrupted) {
      metrics_.interrupted += 1;
      return true;
    }

    // The aggregator ingests the update either way; stale ones are rejected.
    model::ClientUpdate update;
    if (auto it = ready.find(task.task_id); it != ready.end()) {
      update = std::move(it->second);
      ready.erase(it);
    } else {
      auto it2 = inflight.find(task.task_id);
      if (it2 == inflight.end()) throw SimulationError("missing training job for task");
      update = pool.collect(it2->second.future, it2->second.shard, it2->second.job);
      inflight.erase(it2);
    }
    if (task.outcome == TaskOutcome::Stale) {
      metrics_.stale += 1;
      return true;
    }

    metrics_.succeeded += 1;
    update.duration = task.duration;
    buffer_.buffer.push_back(std::move(update));
    if (buffer_.buffer.size() < buffer_.buffer_size) return true;

    const auto flushed = buffer_.buffer.size();
    fedbuff_apply(buffer_, params_, cfg_.model.hyper.server_lr);
    metrics_.updates_aggregated += flushed;
    round_ += 1;
    emit_record(result.records, clock_now_, round_);

    if (!controls.checkpoint_path.empty() && round_ % controls.checkpoint_interval == 0) {
      auto snap = sched.snapshot();
      auto drained = drain_inflight();
      write_checkpoint_file(controls.checkpoint_path, &snap, &drained);
    }
    if (controls.stop_after_aggregations > 0 && round_ >= controls.stop_after_aggregations) {
      stop_requested = true;
      return false;
    }
    if (cfg_.schedule.max_rounds > 0 && round_ >= cfg_.schedule.max_rounds) {
      stop_requested = true;
      return false;
    }
    return true;
  };

  const auto summary = sched.run(callbacks);
  result.truncated = summary.truncated;
  clock_now_ = std::max(clock_now_, summary.final_time);

  // Partial buffer at the horizon: flushed and reported separately.
  if (!stop_requested && cfg_.schedule.final_flush && !buffer_.buffer.empty()) {
    const auto flushed = buffer_.buffer.size();
    if (fedbuff_apply(buffer_, params_, cfg_.model.hyper.server_lr, /*force=*/true)) {
      metrics_.updates_aggregated += flushed;
      round_ += 1;
      emit_record(result.records, clock_now_, round_, /*final_partial=*/true);
    }
  }

  result.final_params = params_;
  result.metrics = metrics_;
  result.aggregations = round_;
  return result;
}

// --- FedAvg ---------------------------------------------------------------------------

RunResult Simulation::run_fedavg(const RunControls& controls) {
  RunResult result;
  WorkerPool pool(controls.n_workers, controls.crash);
  const auto& sched_cfg = cfg_.schedule;
  Seconds now = clock_now_;

  while (now <= sched_cfg.horizon_s) {
    if (sched_cfg.max_rounds > 0 && round_ >= sched_cfg.max_rounds) break;
    const std::uint64_t round_salt = round_ + 1;  // fresh draws per attempt
    auto plan = plan_sync_round(
        inputs_.index, now, busy_until_, sched_cfg.cohort_size, sched_cfg.overcommit,
        sched_cfg.deadline_s,
        [this, round_salt](ClientId client, const trace::AvailabilitySession&, Seconds start) {
          return duration_for(client, start, round_salt);
        });
    if (plan.selected.empty()) {
      result.truncated = true;  // trace exhausted
      break;
    }

    maybe_emit_interval_records(result.records, plan.round_end);

    for (const auto& t : plan.selected) {
      metrics_.tasks_started += 1;
      metrics_.device_compute_s += t.duration;
      busy_until_[t.client_id] =
          std::min(t.completion(), t.session.end) + cfg_.traces.cooldown_s;
    }
    metrics_.interrupted += plan.interrupted.size();
    metrics_.stale += plan.stragglers.size();  // FedAvg throws stragglers away

    if (!plan.failed) {
      // Train the aggregated cohort; updates are applied in completion order.
      std::vector<std::pair<std::uint32_t, WorkerPool::Job>> jobs;
      std::vector<std::future<model::ClientUpdate>> futures;
      for (const auto idx : plan.aggregated) {
        const auto& t = plan.selected[idx];
        const auto& partition = partition_for(t.client_id);
        const auto seed = task_seed(master_seed_, t.client_id, params_.version);
        model::ModelParams snapshot = params_;
        const auto arch = cfg_.model.arch;
        const auto hyper = cfg_.model.hyper;
        WorkerPool::Job job = [arch, snapshot = std::move(snapshot), &partition, hyper, seed] {
          return model::local_train(arch, snapshot, partition, hyper, seed);
        };
        const auto shard = shard_of(t.client_id);
        futures.push_back(pool.submit(shard, job));
        jobs.emplace_back(shard, std::move(job));
      }
      std::vector<model::ClientUpdate> updates;
      for (std::size_t i = 0; i < futures.size(); ++i) {
        auto update = pool.collect(futures[i], jobs[i].first, jobs[i].second);
        update.duration = plan.selected[plan.aggregated[i]].duration;
        updates.push_back(std::move(update));
      }
      fedavg_apply(updates, params_, cfg_.model.hyper.server_lr);
      metrics_.updates_aggregated += updates.size();
      metrics_.succeeded += updates.size();
    }

    round_ += 1;
    now = plan.round_end;
    clock_now_ = now;
    metrics_.virtual_wall_s = now;
    emit_record(result.records, now, round_);

    if (!controls.checkpoint_path.empty() && round_ % controls.checkpoint_interval == 0)
      write_checkpoint_file(controls.checkpoint_path, nullptr, nullptr);
    if (controls.stop_after_aggregations > 0 && round_ >= controls.stop_after_aggregations) break;
  }

  result.final_params = params_;
  result.metrics = metrics_;
  result.aggregations = round_;
  return result;
}

}  // namespace fedsim::engine
