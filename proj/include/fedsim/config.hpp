#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedsim/data.hpp"
#include "fedsim/model.hpp"
#include "fedsim/trace.hpp"
#include "fedsim/types.hpp"

namespace fedsim::config {

enum class Mode { FedAvg, FedBuff };

struct CriteriaConfig {
  // Each criterion is a scalar or 168 hourly values.
  std::vector<double> wifi{1.0};
  std::vector<double> battery{1.0};
  double os_pass_rate = 1.0;

  trace::CriteriaModel to_model() const;
};

struct TracesConfig {
  std::string file;  // trace CSV; empty -> synthetic
  trace::SyntheticTraceConfig synthetic;
  bool use_synthetic = true;
  CriteriaConfig criteria;
  Seconds short_gap_max_s = 300;
  Seconds long_gap_min_s = 1800;
  Seconds cooldown_s = 0;  // optional re-participation gate, default off

  std::vector<std::pair<std::string, double>> device_marginal;  // model -> share
  std::vector<trace::DeviceProfile> device_profiles;
  trace::BandwidthModel bandwidth;
};

struct PartitionConfig {
  std::string kind = "natural";  // natural | dirichlet
  std::size_t n_clients = 0;     // dirichlet only
  double alpha_label = 1.0;
  double alpha_quantity = 1.0;
};

struct DataConfig {
  std::string shard_dir;  // pre-built shards; empty -> build in memory
  std::size_t n_executors = 4;
  std::string csv_path;  // source records; empty -> synthetic
  data::CsvSchema csv_schema;
  data::SyntheticDataConfig synthetic;
  bool use_synthetic = true;
  PartitionConfig partition;
  double test_fraction = 0.2;
  int lookback_days = 14;
};

struct ModelConfig {
  model::Architecture arch;
  model::HyperParams hyper;
  model::WireEncoding encoding = model::WireEncoding::Float32;
  std::uint64_t update_size_override_bytes = 0;  // 0 = computed from params
  std::string metric = "aupr";                   // aupr | ndcg
  std::size_t ndcg_k = 10;
};

struct ScheduleConfig {
  Mode mode = Mode::FedBuff;
  Seconds horizon_s = 0;
  int concurrency = 10;          // C
  std::size_t buffer_size = 10;  // K_buf
  std::uint64_t max_staleness = 10;
  std::size_t cohort_size = 10;  // S
  double overcommit = 1.3;
  Seconds deadline_s = 0;  // 0 -> 95th percentile of projected durations
  std::uint64_t max_rounds = 0;
  bool strict_paper_schedule = false;
  bool final_flush = true;
  Seconds eval_interval_s = 0;  // extra metric records; 0 = aggregations only
  std::uint64_t checkpoint_interval = 1;
};

struct OutputConfig {
  std::string dir = "out";
  std::string metric_basename = "metrics";
  std::string checkpoint = "";  // filename inside dir; empty disables
};

struct RunConfig {
  TracesConfig traces;
  DataConfig data;
  ModelConfig model;
  ScheduleConfig schedule;
  std::uint64_t master_seed = 1;
  OutputConfig output;

  void validate() const;
};

// Parses the JSON config file; relative paths inside it resolve against the
// file's directory.  `overrides` are `section.key=value` pairs (--set).
RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {});
RunConfig config_from_json_text(const std::string& text, const std::string& base_dir = ".",
                                const std::vector<std::string>& overrides = {});

// Digest of the canonicalized config; stored in manifests and checkpoints.
std::uint64_t config_digest(const RunConfig& cfg);

std::string mode_name(Mode mode);

}  // namespace fedsim::config
