#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <queue>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "fedsim/trace.hpp"
#include "fedsim/types.hpp"

namespace fedsim::engine {

enum class TaskOutcome : std::uint8_t { Pending = 0, Succeeded, Interrupted, Stale };

struct ClientTask {
  std::uint64_t task_id = 0;
  ClientId client_id = 0;
  trace::AvailabilitySession session;  // effective session (start = claim time)
  Seconds start = 0;
  Seconds duration = 0;
  std::uint64_t base_version = 0;
  TaskOutcome outcome = TaskOutcome::Pending;
  bool started = false;

  Seconds end() const { return start + duration; }
};

enum class EventFlag : std::uint8_t { End = 0, Start = 1 };  // END pops first on ties

struct TaskEvent {
  Seconds time = 0;
  EventFlag flag = EventFlag::Start;
  std::uint64_t task_id = 0;
  ClientId client_id = 0;
  std::uint64_t seq = 0;  // insertion order, final tie-break
};

struct VirtualClock {
  Seconds now = 0;
  Seconds horizon = 0;
};

// Serializable scheduler state for checkpointing.
struct SchedulerSnapshot {
  Seconds now = 0;
  int concurrency = 0;
  int committed = 0;
  std::uint64_t next_task_id = 0;
  std::uint64_t next_seq = 0;
  std::uint64_t tasks_created = 0;
  bool truncated = false;
  bool deferred_create = false;  // a creation attempt found no client
  std::vector<std::pair<ClientId, Seconds>> cooldowns;  // client -> eligible again at
  std::vector<ClientTask> tasks;      // committed (END still queued)
  std::vector<TaskEvent> queue;       // pending events
};

// The async task scheduler: a min priority queue over START/END events drives
// task creation so that END events (the aggregation stream) are emitted in
// non-decreasing time order.
//
// Task creation is gated on the number of committed tasks (created, END not
// yet processed) staying below the concurrency limit C.  At saturation this
// reduces to the classic rules: create on START while c < C, create on END
// when c drops to C-1.  When a creation attempt found no eligible client, the
// gate re-opens on later events instead of starving.  strict_paper mode keeps
// the unconditional create-on-START behavior for comparison.
class AsyncScheduler {
 public:
  struct Options {
    int concurrency_limit = 1;
    Seconds horizon = 0;
    bool strict_paper = false;
    Seconds cooldown = 0;  // re-participation gate after a task ends; 0 = off
  };

  // Computes a task's duration at creation time.
  using DurationFn =
      std::function<Seconds(ClientId, const trace::AvailabilitySession&, Seconds start)>;

  AsyncScheduler(const trace::AvailabilityIndex& index, DurationFn duration_fn, Options opts);

  struct Callbacks {
    // START popped: the task begins training against the current model.
    std::function<void(ClientTask&)> on_start;
    // END popped: tasks arrive here in non-decreasing end time.  Returning
    // false stops the run (used to halt at checkpoints in tests).
    std::function<bool(ClientTask&)> on_dispatch;
  };

  struct RunSummary {
    bool truncated = false;   // queue drained before the horizon
    Seconds final_time = 0;
    std::uint64_t tasks_created = 0;
  };

  RunSummary run(const Callbacks& callbacks);

  int concurrency() const { return concurrency_; }
  int concurrency_limit() const { return opts_.concurrency_limit; }
  Seconds now() const { return clock_.now; }

  SchedulerSnapshot snapshot() const;
  void restore(const SchedulerSnapshot& snap);

 private:
  bool create_task();
  void push_event(Seconds time, EventFlag flag, const ClientTask& task);

  struct EventOrder {
    bool operator()(const TaskEvent& a, const TaskEvent& b) const;
  };

  const trace::AvailabilityIndex& index_;
  DurationFn duration_fn_;
  Options opts_;
  VirtualClock clock_;

  std::priority_queue<TaskEvent, std::vector<TaskEvent>, EventOrder> queue_;
  std::unordered_map<std::uint64_t, ClientTask> tasks_;
  std::unordered_set<ClientId> busy_;
  std::map<ClientId, Seconds> cooldowns_;
  int concurrency_ = 0;  // c: started, END not yet processed
  int committed_ = 0;    // created, END not yet processed
  std::uint64_t next_task_id_ = 0;
  std::uint64_t next_seq_ = 0;
  std::uint64_t tasks_created_ = 0;
  bool truncated_ = false;
  bool deferred_ = false;
  bool resumed_ = false;
};

}  // namespace fedsim::engine
