#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedsim/rng.hpp"
#include "fedsim/types.hpp"

namespace fedsim::data {

// One training example.  `label` is {0,1} for classification or a graded
// relevance integer for ranking; group_id keys ranking queries.
struct ClientRecord {
  std::vector<double> features;
  int label = 0;
  std::int64_t group_id = -1;
};

struct ClientPartition {
  ClientId client_id = 0;
  std::vector<ClientRecord> records;

  std::size_t size() const { return records.size(); }
};

struct ExecutorShard {
  std::uint32_t executor_id = 0;
  std::vector<ClientPartition> partitions;
};

struct PartitionStats {
  std::uint64_t client_pop = 0;
  std::uint64_t max_records = 0;
  double avg_records = 0.0;
  double std_records = 0.0;  // population stdev
  double label_ratio = 0.0;  // positive (label > 0) fraction
  int lookback_days = 0;     // pass-through metadata
};

// --- Partitioning ------------------------------------------------------------

// Groups records by client key; keys are anonymized to dense integer ids in
// sorted-key order.  Record order within a client is preserved.
std::vector<ClientPartition> partition_natural(const std::vector<ClientRecord>& records,
                                               const std::vector<std::string>& keys);

// Synthetic non-IID split: client quantity weights ~ Dirichlet(alpha_quantity),
// per-client label mixtures ~ Dirichlet(alpha_label) over the label classes.
// Integer targets via largest remainder; leftovers go to the client with the
// largest deficit.  Quantity and label skews are drawn independently.
std::vector<ClientPartition> partition_dirichlet(const std::vector<ClientRecord>& records,
                                                 std::size_t n_clients, double alpha_label,
                                                 double alpha_quantity, std::uint64_t seed);

// Partition i (in client_id order) goes to shard i mod n_executors.
std::vector<ExecutorShard> round_robin_shard(std::vector<ClientPartition> partitions,
                                             std::size_t n_executors);

PartitionStats compute_stats(const std::vector<ClientPartition>& partitions);

// Dirichlet draws; helpers shared with tests.
std::vector<double> dirichlet_draw(const std::vector<double>& alphas, Rng& rng);
std::vector<double> dirichlet_draw(std::size_t k, double alpha, Rng& rng);

// --- Shard files --------------------------------------------------------------

// Binary format: one file per executor with length-prefixed client blocks so
// an executor can load clients into memory and access them randomly.
void write_shard_file(const std::string& path, const ExecutorShard& shard);
ExecutorShard read_shard_file(const std::string& path);

// Reads one client block without loading the whole file.
std::optional<ClientPartition> read_client_from_shard(const std::string& path, ClientId client);

// FNV-1a over the raw bytes; stored in checkpoints to refuse resuming against
// altered data.
std::uint64_t file_digest(const std::string& path);

// --- Synthetic dataset ---------------------------------------------------------

// Linearly separable core + label noise + Zipf-ish client sizes.  Produces the
// keyed records partition_natural consumes.
struct SyntheticDataConfig {
  std::uint64_t n_records = 10000;
  std::uint64_t n_clients = 100;
  std::size_t feature_dim = 10;
  double label_noise = 0.05;
  double zipf_exponent = 1.2;  // client-size skew; 0 = uniform
  double margin = 0.5;
  int lookback_days = 14;
};

struct KeyedDataset {
  std::vector<ClientRecord> records;
  std::vector<std::string> keys;
  std::vector<double> true_weights;  // separating hyperplane, bias last
};

KeyedDataset generate_synthetic_dataset(const SyntheticDataConfig& cfg, std::uint64_t seed);

// CSV ingest: client_key,label[,group_id],f0,...,fd-1 with a header line.
struct CsvSchema {
  std::size_t feature_dim = 0;
  bool has_group = false;
};
KeyedDataset read_csv_dataset(const std::string& path, const CsvSchema& schema);
void write_csv_dataset(const std::string& path, const KeyedDataset& dataset, bool with_group);

}  // namespace fedsim::data
