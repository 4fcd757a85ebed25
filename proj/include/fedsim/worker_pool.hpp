#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <future>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

#include "fedsim/model.hpp"
#include "fedsim/types.hpp"

namespace fedsim::engine {

// Raised into a job's future when its worker dies mid-task.
class WorkerCrashed : public std::runtime_error {
 public:
  explicit WorkerCrashed(const std::string& what) : std::runtime_error(what) {}
};

// Leader/worker execution pool.  The leader (the single-threaded event loop)
// submits training jobs to the worker owning the client's shard and collects
// results through futures, so results are re-ordered into virtual-time order
// regardless of wall-clock interleaving.  Jobs are pure functions of their
// inputs; a re-queued job after a crash reproduces the same result.
class WorkerPool {
 public:
  struct CrashInjection {
    int worker = -1;            // worker index to kill, -1 disables
    std::uint64_t after_jobs = 0;  // crash when it picks up this many jobs
  };

  using Job = std::function<model::ClientUpdate()>;

  explicit WorkerPool(int n_workers) : WorkerPool(n_workers, CrashInjection{}) {}
  WorkerPool(int n_workers, CrashInjection crash);
  ~WorkerPool();

  WorkerPool(const WorkerPool&) = delete;
  WorkerPool& operator=(const WorkerPool&) = delete;

  int size() const { return static_cast<int>(workers_.size()); }

  // Submits to the worker owning `shard`; shard s is owned by worker s % W.
  std::future<model::ClientUpdate> submit(std::uint32_t shard, Job job);

  // Collects a result; on a worker crash, halts dispatching, restarts the
  // dead worker, waits for its healthy ping, re-queues the job, and retries.
  model::ClientUpdate collect(std::future<model::ClientUpdate>& fut, std::uint32_t shard,
                              const Job& job);

  std::uint64_t crash_count() const { return crashes_; }

 private:
  struct Pending {
    Job job;
    std::promise<model::ClientUpdate> promise;
  };

  struct Worker {
    std::thread thread;
    std::deque<Pending> queue;
    bool healthy = true;
    bool stop = false;
    std::uint64_t jobs_taken = 0;
  };

  void worker_loop(int idx);
  void recover(int idx);

  std::vector<std::unique_ptr<Worker>> workers_;
  std::mutex mu_;
  std::condition_variable cv_;
  CrashInjection crash_;
  std::uint64_t crashes_ = 0;
};

}  // namespace fedsim::engine
