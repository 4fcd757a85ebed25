#include "fedsim/checkpoint.hpp"

#include <fstream>

namespace fedsim::engine {

namespace {

constexpr std::uint32_t kCheckpointMagic = 0x4653434bU;  // "FSCK"

template <typename T>
void put(std::ostream& os, const T& v) {
  static_assert(std::is_trivially_copyable_v<T>);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw ValidationError("truncated checkpoint file");
  return v;
}

void put_doubles(std::ostream& os, const std::vector<double>& v) {
  put(os, static_cast<std::uint64_t>(v.size()));
  os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(8 * v.size()));
}

std::vector<double> get_doubles(std::istream& is) {
  const auto n = get<std::uint64_t>(is);
  std::vector<double> v(n);
  is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(8 * n));
  if (!is) throw ValidationError("truncated checkpoint file");
  return v;
}

void put_update(std::ostream& os, const model::ClientUpdate& u) {
  put_doubles(os, u.delta);
  put(os, u.base_version);
  put(os, static_cast<std::int64_t>(u.client_id));
  put(os, u.n_examples);
  put(os, u.duration);
}

model::ClientUpdate get_update(std::istream& is) {
  model::ClientUpdate u;
  u.delta = get_doubles(is);
  u.base_version = get<std::uint64_t>(is);
  u.client_id = get<std::int64_t>(is);
  u.n_examples = get<std::uint64_t>(is);
  u.duration = get<double>(is);
  return u;
}

void put_task(std::ostream& os, const ClientTask& t) {
  put(os, t.task_id);
  put(os, static_cast<std::int64_t>(t.client_id));
  put(os, static_cast<std::int64_t>(t.session.client_id));
  put(os, t.session.start);
  put(os, t.session.end);
  put(os, t.start);
  put(os, t.duration);
  put(os, t.base_version);
  put(os, static_cast<std::uint8_t>(t.outcome));
  put(os, static_cast<std::uint8_t>(t.started ? 1 : 0));
}

ClientTask get_task(std::istream& is) {
  ClientTask t;
  t.task_id = get<std::uint64_t>(is);
  t.client_id = get<std::int64_t>(is);
  t.session.client_id = get<std::int64_t>(is);
  t.session.start = get<double>(is);
  t.session.end = get<double>(is);
  t.start = get<double>(is);
  t.duration = get<double>(is);
  t.base_version = get<std::uint64_t>(is);
  t.outcome = static_cast<TaskOutcome>(get<std::uint8_t>(is));
  t.started = get<std::uint8_t>(is) != 0;
  return t;
}

}  // namespace

void write_checkpoint(const std::string& path, const CheckpointData& data) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open checkpoint for writing: " + path);
  put(f, kCheckpointMagic);
  put(f, CheckpointData::kFormatVersion);
  put(f, data.config_digest);
  put(f, data.shard_digest);
  put(f, data.trace_digest);
  put(f, data.master_seed);
  put(f, data.mode);
  put(f, data.virtual_time);
  put(f, data.round);
  put(f, data.params.version);
  put_doubles(f, data.params.weights);
  put(f, data.metrics.tasks_started);
  put(f, data.metrics.succeeded);
  put(f, data.metrics.interrupted);
  put(f, data.metrics.stale);
  put(f, data.metrics.updates_aggregated);
  put(f, data.metrics.device_compute_s);
  put(f, data.metrics.virtual_wall_s);
  put(f, data.next_eval_mark);

  const auto& s = data.scheduler;
  put(f, s.now);
  put(f, static_cast<std::int32_t>(s.concurrency));
  put(f, static_cast<std::int32_t>(s.committed));
  put(f, s.next_task_id);
  put(f, s.next_seq);
  put(f, s.tasks_created);
  put(f, static_cast<std::uint8_t>(s.truncated ? 1 : 0));
  put(f, static_cast<std::uint8_t>(s.deferred_create ? 1 : 0));
  put(f, static_cast<std::uint64_t>(s.tasks.size()));
  for (const auto& t : s.tasks) put_task(f, t);
  put(f, static_cast<std::uint64_t>(s.cooldowns.size()));
  for (const auto& [client, until] : s.cooldowns) {
    put(f, static_cast<std::int64_t>(client));
    put(f, until);
  }
  put(f, static_cast<std::uint64_t>(s.queue.size()));
  for (const auto& ev : s.queue) {
    put(f, ev.time);
    put(f, static_cast<std::uint8_t>(ev.flag));
    put(f, ev.task_id);
    put(f, static_cast<std::int64_t>(ev.client_id));
    put(f, ev.seq);
  }

  put(f, static_cast<std::uint64_t>(data.buffer.size()));
  for (const auto& u : data.buffer) put_update(f, u);
  put(f, static_cast<std::uint64_t>(data.inflight_updates.size()));
  for (const auto& [task_id, u] : data.inflight_updates) {
    put(f, task_id);
    put_update(f, u);
  }
  put(f, static_cast<std::uint64_t>(data.busy_until.size()));
  for (const auto& [client, until] : data.busy_until) {
    put(f, static_cast<std::int64_t>(client));
    put(f, until);
  }
  if (!f) throw ValidationError("failed writing checkpoint: " + path);
}

CheckpointData read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open checkpoint: " + path);
  if (get<std::uint32_t>(f) != kCheckpointMagic)
    throw ValidationError("not a checkpoint file: " + path);
  if (get<std::uint32_t>(f) != CheckpointData::kFormatVersion)
    throw ValidationError("unsupported checkpoint version: " + path);

  CheckpointData data;
  data.config_digest = get<std::uint64_t>(f);
  data.shard_digest = get<std::uint64_t>(f);
  data.trace_digest = get<std::uint64_t>(f);
  data.master_seed = get<std::uint64_t>(f);
  data.mode = get<std::uint8_t>(f);
  data.virtual_time = get<double>(f);
  data.round = get<std::uint64_t>(f);
  data.params.version = get<std::uint64_t>(f);
  data.params.weights = get_doubles(f);
  data.metrics.tasks_started = get<std::uint64_t>(f);
  data.metrics.succeeded = get<std::uint64_t>(f);
  data.metrics.interrupted = get<std::uint64_t>(f);
  data.metrics.stale = get<std::uint64_t>(f);
  data.metrics.updates_aggregated = get<std::uint64_t>(f);
  data.metrics.device_compute_s = get<double>(f);
  data.metrics.virtual_wall_s = get<double>(f);
  data.next_eval_mark = get<double>(f);

  auto& s = data.scheduler;
  s.now = get<double>(f);
  s.concurrency = get<std::int32_t>(f);
  s.committed = get<std::int32_t>(f);
  s.next_task_id = get<std::uint64_t>(f);
  s.next_seq = get<std::uint64_t>(f);
  s.tasks_created = get<std::uint64_t>(f);
  s.truncated = get<std::uint8_t>(f) != 0;
  s.deferred_create = get<std::uint8_t>(f) != 0;
  const auto n_tasks = get<std::uint64_t>(f);
  for (std::uint64_t i = 0; i < n_tasks; ++i) s.tasks.push_back(get_task(f));
  const auto n_cool = get<std::uint64_t>(f);
  for (std::uint64_t i = 0; i < n_cool; ++i) {
    const auto client = get<std::int64_t>(f);
    s.cooldowns.emplace_back(client, get<double>(f));
  }
  const auto n_events = get<std::uint64_t>(f);
  for (std::uint64_t i = 0; i < n_events; ++i) {
    TaskEvent ev;
    ev.time = get<double>(f);
    ev.flag = static_cast<EventFlag>(get<std::uint8_t>(f));
    ev.task_id = get<std::uint64_t>(f);
    ev.client_id = get<std::int64_t>(f);
    ev.seq = get<std::uint64_t>(f);
    s.queue.push_back(ev);
  }

  const auto n_buf = get<std::uint64_t>(f);
  for (std::uint64_t i = 0; i < n_buf; ++i) data.buffer.push_back(get_update(f));
  const auto n_inflight = get<std::uint64_t>(f);
  for (std::uint64_t i = 0; i < n_inflight; ++i) {
    const auto task_id = get<std::uint64_t>(f);
    data.inflight_updates.emplace_back(task_id, get_update(f));
  }
  const auto n_busy = get<std::uint64_t>(f);
  for (std::uint64_t i = 0; i < n_busy; ++i) {
    const auto client = get<std::int64_t>(f);
    data.busy_until.emplace_back(client, get<double>(f));
  }
  return data;
}

}  // namespace fedsim::engine
