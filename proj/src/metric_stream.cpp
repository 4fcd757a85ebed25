#include "fedsim/metric_stream.hpp"

#include <fstream>

#include "json.hpp"

namespace fedsim::engine {

using nlohmann::json;

std::uint64_t SystemMetrics::in_flight(std::uint64_t /*started*/) const {
  const auto classified = succeeded + interrupted + stale;
  return tasks_started >= classified ? tasks_started - classified : 0;
}

void SystemMetrics::validate() const {
  if (tasks_started < succeeded + interrupted + stale)
    throw SimulationError("metric counters inconsistent: started < classified");
}

std::string to_ndjson_line(const MetricRecord& rec) {
  json j;
  j["virtual_time_s"] = rec.virtual_time_s;
  j["round"] = rec.round;
  j["loss"] = rec.loss;
  j[rec.metric_name] = rec.metric_value;
  j["tasks_started"] = rec.tasks_started;
  j["succeeded"] = rec.succeeded;
  j["interrupted"] = rec.interrupted;
  j["stale"] = rec.stale;
  j["device_compute_s"] = rec.device_compute_s;
  j["updates_per_s"] = rec.updates_per_s;
  if (rec.final_partial) j["final_partial"] = true;
  return j.dump();
}

MetricRecord metric_record_from_json(const std::string& line) {
  const json j = json::parse(line);
  MetricRecord rec;
  rec.virtual_time_s = j.at("virtual_time_s").get<double>();
  rec.round = j.at("round").get<std::uint64_t>();
  rec.loss = j.at("loss").get<double>();
  if (j.contains("aupr")) {
    rec.metric_name = "aupr";
  } else if (j.contains("ndcg")) {
    rec.metric_name = "ndcg";
  } else {
    throw ValidationError("metric record missing aupr/ndcg field");
  }
  rec.metric_value = j.at(rec.metric_name).get<double>();
  rec.tasks_started = j.at("tasks_started").get<std::uint64_t>();
  rec.succeeded = j.at("succeeded").get<std::uint64_t>();
  rec.interrupted = j.at("interrupted").get<std::uint64_t>();
  rec.stale = j.at("stale").get<std::uint64_t>();
  rec.device_compute_s = j.at("device_compute_s").get<double>();
  rec.updates_per_s = j.at("updates_per_s").get<double>();
  rec.final_partial = j.value("final_partial", false);
  return rec;
}

void write_metric_stream(const std::string& path, const std::vector<MetricRecord>& records) {
  std::ofstream f(path);
  if (!f) throw ValidationError("cannot open metric stream for writing: " + path);
  for (const auto& rec : records) f << to_ndjson_line(rec) << '\n';
  if (!f) throw ValidationError("failed writing metric stream: " + path);
}

std::vector<MetricRecord> read_metric_stream(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot open metric stream: " + path);
  std::vector<MetricRecord> records;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    records.push_back(metric_record_from_json(line));
  }
  return records;
}

}  // namespace fedsim::engine
