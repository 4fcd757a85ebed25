#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "fedsim/config.hpp"
#include "fedsim/data.hpp"
#include "fedsim/metric_stream.hpp"
#include "fedsim/model.hpp"
#include "fedsim/scheduler.hpp"
#include "fedsim/trace.hpp"
#include "fedsim/types.hpp"
#include "fedsim/worker_pool.hpp"

namespace fedsim::engine {

// taskDuration(k) = t * E * |D_k| + 2M / N, with t drawn from the device's
// per-example-time distribution and N from the bandwidth model.  Non-positive
// samples are redrawn a bounded number of times.
double task_duration(const trace::DeviceProfile& profile, const trace::BandwidthModel& bandwidth,
                     int local_epochs, std::uint64_t partition_size, double update_mb, Rng& rng);

// Interrupted (left the session) takes precedence over stale.
TaskOutcome classify_outcome(Seconds task_end, Seconds session_end, std::uint64_t staleness,
                             std::uint64_t max_staleness);

// weights += server_lr * sum(n_k * delta_k) / sum(n_k); version += 1.
void fedavg_apply(const std::vector<model::ClientUpdate>& updates, model::ModelParams& params,
                  double server_lr);

double staleness_weight(std::uint64_t staleness);  // 1 / sqrt(1 + s)

struct BufferAggState {
  std::vector<model::ClientUpdate> buffer;
  std::size_t buffer_size = 1;       // K_buf
  std::uint64_t max_staleness = 10;  // admission gate, checked by the caller
};

// Flushes a full buffer: weights += server_lr * sum(w(s_k) delta_k) / sum(w(s_k));
// version += 1; buffer cleared.  Returns false (no-op) while the buffer is not
// full unless `force` (final horizon flush).
bool fedbuff_apply(BufferAggState& state, model::ModelParams& params, double server_lr,
                   bool force = false);

// --- Synchronous rounds -------------------------------------------------------

struct PlannedTask {
  ClientId client_id = 0;
  trace::AvailabilitySession session;
  Seconds start = 0;
  Seconds duration = 0;
  Seconds completion() const { return start + duration; }
};

struct RoundPlan {
  std::vector<PlannedTask> selected;       // selection order
  std::vector<std::size_t> aggregated;     // first S in-deadline completions
  std::vector<std::size_t> stragglers;     // in-session but late or beyond S
  std::vector<std::size_t> interrupted;    // left the session before finishing
  Seconds deadline = 0;                    // absolute
  Seconds round_end = 0;
  bool failed = false;
};

// Selects ceil(S * overcommit) next-available clients at `now` and classifies
// their projected completions.  deadline_s == 0 uses the 95th percentile of
// projected completion offsets.  Pure given the duration function; the oracle
// tests re-derive it by sorting completions.
RoundPlan plan_sync_round(const trace::AvailabilityIndex& index, Seconds now,
                          const std::unordered_map<ClientId, Seconds>& busy_until,
                          std::size_t cohort_size, double overcommit, Seconds deadline_s,
                          const AsyncScheduler::DurationFn& duration_fn);

// --- Simulation driver ----------------------------------------------------------

struct RunControls {
  int n_workers = 1;
  std::string checkpoint_path;            // empty disables checkpointing
  std::uint64_t checkpoint_interval = 1;  // aggregation boundaries between writes
  std::uint64_t stop_after_aggregations = 0;  // 0 = run to horizon
  WorkerPool::CrashInjection crash;
};

struct RunResult {
  std::vector<MetricRecord> records;
  model::ModelParams final_params;
  SystemMetrics metrics;
  bool truncated = false;
  std::uint64_t aggregations = 0;
};

// Loaded, validated inputs shared by a run and its resume.
struct SimulationInputs {
  trace::AvailabilityIndex index;
  std::vector<data::ClientPartition> partitions;  // client_id-sorted
  std::vector<data::ClientRecord> test_records;
  trace::DevicePopulation population;
  std::unordered_map<std::string, trace::DeviceProfile> profiles;
  trace::BandwidthModel bandwidth;
  std::uint64_t shard_digest = 0;
  std::uint64_t trace_digest = 0;

  SimulationInputs() : index(std::vector<trace::AvailabilitySession>{}) {}
};

class Simulation {
 public:
  // Builds inputs from the config (loading files or generating synthetics)
  // and starts from a fresh model.
  Simulation(const config::RunConfig& cfg, std::uint64_t master_seed);

  // Restores a checkpointed run; refuses on config/shard digest mismatch.
  static std::unique_ptr<Simulation> resume(const config::RunConfig& cfg,
                                            const std::string& checkpoint_path);

  RunResult run(const RunControls& controls = {});

  const model::ModelParams& params() const { return params_; }
  const SystemMetrics& metrics() const { return metrics_; }
  const std::vector<data::ClientRecord>& test_records() const { return inputs_.test_records; }
  const SimulationInputs& inputs() const { return inputs_; }

 private:
  friend struct SimulationAccess;  // test hook

  Simulation(const config::RunConfig& cfg, std::uint64_t master_seed, bool deferred_init);
  void build_inputs();

  const data::ClientPartition& partition_for(ClientId client) const;
  std::uint32_t shard_of(ClientId client) const;
  double update_mb() const;
  Seconds duration_for(ClientId client, Seconds start, std::uint64_t salt) const;
  void eval_model(double& loss, double& metric_value) const;
  void emit_record(std::vector<MetricRecord>& out, Seconds now, std::uint64_t round,
                   bool final_partial = false);
  void maybe_emit_interval_records(std::vector<MetricRecord>& out, Seconds now);
  void write_checkpoint_file(
      const std::string& path, const SchedulerSnapshot* sched,
      const std::vector<std::pair<std::uint64_t, model::ClientUpdate>>* inflight) const;

  RunResult run_fedbuff(const RunControls& controls);
  RunResult run_fedavg(const RunControls& controls);

  config::RunConfig cfg_;
  std::uint64_t master_seed_ = 0;
  SimulationInputs inputs_;

  model::ModelParams params_;
  SystemMetrics metrics_;
  std::uint64_t round_ = 0;  // aggregations completed (fedbuff) / attempts (fedavg)
  Seconds next_eval_mark_ = 0;

  // fedbuff resume state
  BufferAggState buffer_;
  std::optional<SchedulerSnapshot> resume_snapshot_;
  std::unordered_map<std::uint64_t, model::ClientUpdate> resume_updates_;

  // fedavg resume state
  std::unordered_map<ClientId, Seconds> busy_until_;
  Seconds clock_now_ = 0;

  bool resumed_ = false;
};

}  // namespace fedsim::engine
