#include "fedsim/scheduler.hpp"

#include <algorithm>
#include <cassert>

namespace fedsim::engine {

bool AsyncScheduler::EventOrder::operator()(const TaskEvent& a, const TaskEvent& b) const {
  // std::priority_queue is a max-heap; invert for min-first.  Ties: END before
  // START (frees capacity first), then client id, then insertion order.
  const auto ka = std::tie(a.time, a.flag, a.client_id, a.seq);
  const auto kb = std::tie(b.time, b.flag, b.client_id, b.seq);
  return kb < ka;
}

AsyncScheduler::AsyncScheduler(const trace::AvailabilityIndex& index, DurationFn duration_fn,
                               Options opts)
    : index_(index), duration_fn_(std::move(duration_fn)), opts_(opts) {
  if (opts_.concurrency_limit < 1) throw ValidationError("concurrency limit must be >= 1");
  if (opts_.horizon < 0) throw ValidationError("horizon must be non-negative");
  clock_.horizon = opts_.horizon;
}

void AsyncScheduler::push_event(Seconds time, EventFlag flag, const ClientTask& task) {
  queue_.push(TaskEvent{time, flag, task.task_id, task.client_id, next_seq_++});
}

bool AsyncScheduler::create_task() {
  // Cooled-down clients re-enter the pool once their window passes.
  for (auto it = cooldowns_.begin(); it != cooldowns_.end();) {
    if (it->second <= clock_.now) {
      busy_.erase(it->first);
      it = cooldowns_.erase(it);
    } else {
      ++it;
    }
  }
  auto cand = index_.next_available(clock_.now, busy_);
  if (!cand || cand->session.start > clock_.horizon) return false;

  ClientTask task;
  task.task_id = next_task_id_++;
  task.client_id = cand->client_id;
  task.session = cand->session;
  task.start = cand->session.start;
  task.duration = duration_fn_(cand->client_id, cand->session, task.start);
  if (!(task.duration > 0)) throw SimulationError("task duration must be positive");

  push_event(task.start, EventFlag::Start, task);
  push_event(task.end(), EventFlag::End, task);
  busy_.insert(task.client_id);
  tasks_.emplace(task.task_id, std::move(task));
  ++committed_;
  ++tasks_created_;
  return true;
}

AsyncScheduler::RunSummary AsyncScheduler::run(const Callbacks& callbacks) {
  // A failed creation re-arms on later events once capacity allows, instead
  // of starving when the trace runs dry of eligible clients for a while.
  auto try_create = [&](bool primary_gate) {
    if (!primary_gate && !(deferred_ && committed_ < opts_.concurrency_limit)) return;
    deferred_ = !create_task();
  };

  if (!resumed_) {
    if (!create_task()) deferred_ = true;
  }

  bool stopped = false;
  while (!queue_.empty() && !stopped) {
    const TaskEvent ev = queue_.top();
    queue_.pop();

    if (ev.flag == EventFlag::Start) {
      auto& task = tasks_.at(ev.task_id);
      task.started = true;
      ++concurrency_;
      if (callbacks.on_start) callbacks.on_start(task);
      if (opts_.strict_paper) {
        create_task();  // printed behavior: unconditional
      } else {
        try_create(concurrency_ < opts_.concurrency_limit);
      }
    } else {
      ClientTask task = std::move(tasks_.at(ev.task_id));
      tasks_.erase(ev.task_id);
      --concurrency_;
      --committed_;
      if (!opts_.strict_paper) clock_.now = ev.time;  // sample at the END's time
      // The ending client stays excluded from this creation; it re-enters the
      // pool afterwards for the rest of its session.
      if (opts_.strict_paper) {
        if (concurrency_ == opts_.concurrency_limit - 1) create_task();
      } else {
        try_create(concurrency_ == opts_.concurrency_limit - 1);
      }
      if (opts_.cooldown > 0) {
        cooldowns_[task.client_id] = ev.time + opts_.cooldown;  // stays busy
      } else {
        busy_.erase(task.client_id);
      }
      if (callbacks.on_dispatch && !callbacks.on_dispatch(task)) stopped = true;
      clock_.now = ev.time;
      if (clock_.now > clock_.horizon) break;
    }

    if (!opts_.strict_paper &&
        (concurrency_ < 0 || concurrency_ > opts_.concurrency_limit))
      throw SimulationError("concurrency bound violated: c=" + std::to_string(concurrency_) +
                            " C=" + std::to_string(opts_.concurrency_limit));
  }

  truncated_ = !stopped && queue_.empty() && clock_.now <= clock_.horizon;
  RunSummary summary;
  summary.truncated = truncated_;
  summary.final_time = clock_.now;
  summary.tasks_created = tasks_created_;
  return summary;
}

SchedulerSnapshot AsyncScheduler::snapshot() const {
  SchedulerSnapshot snap;
  snap.now = clock_.now;
  snap.concurrency = concurrency_;
  snap.committed = committed_;
  snap.next_task_id = next_task_id_;
  snap.next_seq = next_seq_;
  snap.tasks_created = tasks_created_;
  snap.truncated = truncated_;
  snap.deferred_create = deferred_;
  for (const auto& [client, until] : cooldowns_) snap.cooldowns.emplace_back(client, until);
  for (const auto& [id, task] : tasks_) snap.tasks.push_back(task);
  std::sort(snap.tasks.begin(), snap.tasks.end(),
            [](const auto& a, const auto& b) { return a.task_id < b.task_id; });
  auto copy = queue_;
  while (!copy.empty()) {
    snap.queue.push_back(copy.top());
    copy.pop();
  }
  return snap;
}

void AsyncScheduler::restore(const SchedulerSnapshot& snap) {
  clock_.now = snap.now;
  concurrency_ = snap.concurrency;
  committed_ = snap.committed;
  next_task_id_ = snap.next_task_id;
  next_seq_ = snap.next_seq;
  tasks_created_ = snap.tasks_created;
  truncated_ = snap.truncated;
  deferred_ = snap.deferred_create;
  tasks_.clear();
  busy_.clear();
  cooldowns_.clear();
  queue_ = {};
  for (const auto& task : snap.tasks) {
    busy_.insert(task.client_id);
    tasks_.emplace(task.task_id, task);
  }
  for (const auto& [client, until] : snap.cooldowns) {
    cooldowns_[client] = until;
    busy_.insert(client);
  }
  for (const auto& ev : snap.queue) queue_.push(ev);
  resumed_ = true;
}

}  // namespace fedsim::engine
