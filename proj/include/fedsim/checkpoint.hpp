#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fedsim/metric_stream.hpp"
#include "fedsim/model.hpp"
#include "fedsim/scheduler.hpp"
#include "fedsim/types.hpp"

namespace fedsim::engine {

// Everything needed to reproduce the remainder of a run bit-identically.
// There is no live RNG state: all randomness is derived from the master seed
// via per-task/per-trial hashes.
struct CheckpointData {
  static constexpr std::uint32_t kFormatVersion = 1;

  std::uint64_t config_digest = 0;
  std::uint64_t shard_digest = 0;
  std::uint64_t trace_digest = 0;
  std::uint64_t master_seed = 0;
  std::uint8_t mode = 0;  // config::Mode

  Seconds virtual_time = 0;
  std::uint64_t round = 0;
  model::ModelParams params;
  SystemMetrics metrics;
  Seconds next_eval_mark = 0;

  // fedbuff
  SchedulerSnapshot scheduler;
  std::vector<model::ClientUpdate> buffer;
  // Drained results of in-flight tasks, keyed by task id.  Tasks without an
  // entry (interrupted at creation) produce no update.
  std::vector<std::pair<std::uint64_t, model::ClientUpdate>> inflight_updates;

  // fedavg
  std::vector<std::pair<ClientId, Seconds>> busy_until;
};

void write_checkpoint(const std::string& path, const CheckpointData& data);
CheckpointData read_checkpoint(const std::string& path);

}  // namespace fedsim::engine
