#include "fedsim/worker_pool.hpp"

namespace fedsim::engine {

WorkerPool::WorkerPool(int n_workers, CrashInjection crash) : crash_(crash) {
  if (n_workers < 1) throw ValidationError("worker pool needs at least one worker");
  for (int i = 0; i < n_workers; ++i) workers_.push_back(std::make_unique<Worker>());
  for (int i = 0; i < n_workers; ++i) workers_[i]->thread = std::thread([this, i] { worker_loop(i); });
}

WorkerPool::~WorkerPool() {
  {
    std::lock_guard lock(mu_);
    for (auto& w : workers_) w->stop = true;
  }
  cv_.notify_all();
  for (auto& w : workers_)
    if (w->thread.joinable()) w->thread.join();
}

void WorkerPool::worker_loop(int idx) {
  for (;;) {
    Pending pending;
    {
      std::unique_lock lock(mu_);
      auto& me = *workers_[idx];
      me.healthy = true;  // ping: back online and polling
      cv_.notify_all();
      cv_.wait(lock, [&] { return me.stop || !me.queue.empty(); });
      if (me.stop) return;
      pending = std::move(me.queue.front());
      me.queue.pop_front();
      ++me.jobs_taken;
      if (crash_.worker == idx && me.jobs_taken == crash_.after_jobs) {
        // Simulated executor failure: die with the job unfinished.
        me.healthy = false;
        ++crashes_;
        pending.promise.set_exception(
            std::make_exception_ptr(WorkerCrashed("worker " + std::to_string(idx) + " crashed")));
        return;
      }
    }
    try {
      pending.promise.set_value(pending.job());
    } catch (...) {
      pending.promise.set_exception(std::current_exception());
    }
  }
}

std::future<model::ClientUpdate> WorkerPool::submit(std::uint32_t shard, Job job) {
  const int idx = static_cast<int>(shard % workers_.size());
  Pending pending;
  pending.job = std::move(job);
  auto fut = pending.promise.get_future();
  {
    std::lock_guard lock(mu_);
    workers_[idx]->queue.push_back(std::move(pending));
  }
  cv_.notify_all();
  return fut;
}

void WorkerPool::recover(int idx) {
  std::unique_lock lock(mu_);
  auto& w = *workers_[idx];
  if (w.thread.joinable()) w.thread.join();
  w.healthy = false;
  w.thread = std::thread([this, idx] { worker_loop(idx); });
  // Dispatching halts until every worker reports healthy again.
  cv_.wait(lock, [&] {
    for (const auto& worker : workers_)
      if (!worker->healthy) return false;
    return true;
  });
}

model::ClientUpdate WorkerPool::collect(std::future<model::ClientUpdate>& fut, std::uint32_t shard,
                                        const Job& job) {
  try {
    return fut.get();
  } catch (const WorkerCrashed&) {
    recover(static_cast<int>(shard % workers_.size()));
    auto retry = submit(shard, job);
    return retry.get();  // the job is pure; the rerun reproduces the result
  }
}

}  // namespace fedsim::engine
