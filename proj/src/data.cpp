#include "fedsim/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace fedsim::data {

// --- partitioning ---------------------------------------------------------------

std::vector<ClientPartition> partition_natural(const std::vector<ClientRecord>& records,
                                               const std::vector<std::string>& keys) {
  if (records.size() != keys.size())
    throw ValidationError("partition_natural: records and keys length mismatch");
  for (std::size_t i = 0; i < keys.size(); ++i)
    if (keys[i].empty())
      throw ValidationError("partition_natural: empty client key at record " + std::to_string(i));

  // Anonymize: unique keys in sorted order become dense integer ids.
  std::vector<std::string> uniq(keys.begin(), keys.end());
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  std::map<std::string, ClientId> id_of;
  for (std::size_t i = 0; i < uniq.size(); ++i) id_of[uniq[i]] = static_cast<ClientId>(i);

  std::vector<ClientPartition> parts(uniq.size());
  for (std::size_t i = 0; i < parts.size(); ++i) parts[i].client_id = static_cast<ClientId>(i);
  for (std::size_t i = 0; i < records.size(); ++i)
    parts[static_cast<std::size_t>(id_of[keys[i]])].records.push_back(records[i]);
  return parts;
}

std::vector<double> dirichlet_draw(const std::vector<double>& alphas, Rng& rng) {
  if (alphas.empty()) throw ValidationError("dirichlet_draw: k >= 1");
  std::vector<double> w(alphas.size());
  double total = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (!(alphas[i] > 0)) throw ValidationError("dirichlet_draw: alphas must be positive");
    std::gamma_distribution<double> gamma(alphas[i], 1.0);
    w[i] = gamma(rng);
    total += w[i];
  }
  if (total <= 0) {  // all-zero draws possible for tiny alpha
    w.assign(w.size(), 1.0 / static_cast<double>(w.size()));
    return w;
  }
  for (auto& v : w) v /= total;
  return w;
}

std::vector<double> dirichlet_draw(std::size_t k, double alpha, Rng& rng) {
  if (k == 0) throw ValidationError("dirichlet_draw: k >= 1");
  return dirichlet_draw(std::vector<double>(k, alpha), rng);
}

// Largest-remainder rounding of `weights * total` to integers summing to total.
static std::vector<std::uint64_t> largest_remainder(const std::vector<double>& weights,
                                                    std::uint64_t total) {
  const std::size_t k = weights.size();
  std::vector<std::uint64_t> counts(k);
  std::vector<std::pair<double, std::size_t>> rema(k);
  std::uint64_t assigned = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double exact = weights[i] * static_cast<double>(total);
    counts[i] = static_cast<std::uint64_t>(std::floor(exact));
    assigned += counts[i];
    rema[i] = {exact - std::floor(exact), i};
  }
  std::sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (std::size_t j = 0; assigned < total; ++j, ++assigned) counts[rema[j % k].second] += 1;
  return counts;
}

std::vector<ClientPartition> partition_dirichlet(const std::vector<ClientRecord>& records,
                                                 std::size_t n_clients, double alpha_label,
                                                 double alpha_quantity, std::uint64_t seed) {
  if (n_clients < 1) throw ValidationError("partition_dirichlet: n_clients >= 1");
  if (!(alpha_label > 0) || !(alpha_quantity > 0))
    throw ValidationError("partition_dirichlet: alphas must be positive");
  if (n_clients > records.size())
    throw ValidationError("partition_dirichlet: more clients than records");

  Rng rng(mix64(seed));

  // Label classes in sorted order.
  std::vector<int> classes;
  for (const auto& r : records) classes.push_back(r.label);
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  const std::size_t n_classes = classes.size();
  auto class_of = [&](int label) {
    return static_cast<std::size_t>(std::lower_bound(classes.begin(), classes.end(), label) -
                                    classes.begin());
  };

  // Quantity skew; every client must end up with at least one record.
  const auto qty_weights = dirichlet_draw(n_clients, alpha_quantity, rng);
  auto sizes = largest_remainder(qty_weights, records.size());
  for (std::size_t i = 0; i < n_clients; ++i) {
    while (sizes[i] == 0) {
      const auto donor = static_cast<std::size_t>(
          std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
      if (sizes[donor] <= 1) throw ValidationError("partition_dirichlet: cannot give each client a record");
      --sizes[donor];
      ++sizes[i];
    }
  }

  // Per-client label mixture ~ Dirichlet(alpha * global class distribution),
  // so large alpha concentrates every client at the global label ratio and
  // expected per-class demand matches the pools.
  std::vector<double> class_prior(n_classes, 0.0);
  for (const auto& r : records) class_prior[class_of(r.label)] += 1.0;
  std::vector<double> label_alphas(n_classes);
  for (std::size_t j = 0; j < n_classes; ++j)
    label_alphas[j] = alpha_label * class_prior[j] / static_cast<double>(records.size());
  std::vector<std::vector<std::uint64_t>> targets(n_clients);
  for (std::size_t c = 0; c < n_clients; ++c) {
    const auto mix = dirichlet_draw(label_alphas, rng);
    targets[c] = largest_remainder(mix, sizes[c]);
  }

  // Shuffled per-class pools of record indices.
  std::vector<std::vector<std::size_t>> pools(n_classes);
  for (std::size_t i = 0; i < records.size(); ++i) pools[class_of(records[i].label)].push_back(i);
  for (auto& pool : pools) std::shuffle(pool.begin(), pool.end(), rng);

  std::vector<std::vector<std::size_t>> assigned(n_clients);
  std::vector<std::size_t> pool_pos(n_classes, 0);
  for (std::size_t c = 0; c < n_clients; ++c) {
    for (std::size_t j = 0; j < n_classes; ++j) {
      const std::uint64_t avail = pools[j].size() - pool_pos[j];
      const std::uint64_t take = std::min<std::uint64_t>(targets[c][j], avail);
      for (std::uint64_t m = 0; m < take; ++m) assigned[c].push_back(pools[j][pool_pos[j]++]);
    }
  }

  // Leftovers (class pools exhausted out of order) go to the largest deficit.
  std::vector<std::int64_t> deficit(n_clients);
  for (std::size_t c = 0; c < n_clients; ++c)
    deficit[c] = static_cast<std::int64_t>(sizes[c]) - static_cast<std::int64_t>(assigned[c].size());
  for (std::size_t j = 0; j < n_classes; ++j) {
    while (pool_pos[j] < pools[j].size()) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < n_clients; ++c)
        if (deficit[c] > deficit[best]) best = c;
      if (deficit[best] <= 0) throw SimulationError("partition_dirichlet: assignment imbalance");
      assigned[best].push_back(pools[j][pool_pos[j]++]);
      --deficit[best];
    }
  }

  std::vector<ClientPartition> parts(n_clients);
  for (std::size_t c = 0; c < n_clients; ++c) {
    parts[c].client_id = static_cast<ClientId>(c);
    parts[c].records.reserve(assigned[c].size());
    for (std::size_t idx : assigned[c]) parts[c].records.push_back(records[idx]);
  }
  return parts;
}

std::vector<ExecutorShard> round_robin_shard(std::vector<ClientPartition> partitions,
                                             std::size_t n_executors) {
  if (n_executors < 1) throw ValidationError("round_robin_shard: n_executors >= 1");
  std::sort(partitions.begin(), partitions.end(),
            [](const auto& a, const auto& b) { return a.client_id < b.client_id; });
  std::vector<ExecutorShard> shards(n_executors);
  for (std::size_t e = 0; e < n_executors; ++e) shards[e].executor_id = static_cast<std::uint32_t>(e);
  for (std::size_t i = 0; i < partitions.size(); ++i)
    shards[i % n_executors].partitions.push_back(std::move(partitions[i]));
  return shards;
}

PartitionStats compute_stats(const std::vector<ClientPartition>& partitions) {
  if (partitions.empty()) throw ValidationError("compute_stats: empty partition list");
  PartitionStats stats;
  stats.client_pop = partitions.size();
  double sum = 0, sum_sq = 0;
  std::uint64_t positives = 0, total = 0;
  for (const auto& p : partitions) {
    const auto n = static_cast<double>(p.records.size());
    stats.max_records = std::max<std::uint64_t>(stats.max_records, p.records.size());
    sum += n;
    sum_sq += n * n;
    total += p.records.size();
    for (const auto& r : p.records)
      if (r.label > 0) ++positives;
  }
  const auto pop = static_cast<double>(partitions.size());
  stats.avg_records = sum / pop;
  const double var = std::max(0.0, sum_sq / pop - stats.avg_records * stats.avg_records);
  stats.std_records = std::sqrt(var);
  stats.label_ratio = total ? static_cast<double>(positives) / static_cast<double>(total) : 0.0;
  return stats;
}

// --- shard files -------------------------------------------------------------------

namespace {

constexpr std::uint32_t kShardMagic = 0x46534844;  // "FSHD"
constexpr std::uint32_t kShardVersion = 1;

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw ValidationError("truncated shard file");
  return v;
}

std::uint64_t client_block_bytes(const ClientPartition& p, std::size_t dim) {
  // client_id + n_records + per record: label(i32) group(i64) features
  return 8 + 8 + p.records.size() * (4 + 8 + 8 * dim);
}

}  // namespace

void write_shard_file(const std::string& path, const ExecutorShard& shard) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open shard file for writing: " + path);
  std::size_t dim = 0;
  for (const auto& p : shard.partitions)
    for (const auto& r : p.records) {
      dim = r.features.size();
      break;
    }
  put(f, kShardMagic);
  put(f, kShardVersion);
  put(f, shard.executor_id);
  put(f, static_cast<std::uint32_t>(0));
  put(f, static_cast<std::uint64_t>(shard.partitions.size()));
  put(f, static_cast<std::uint64_t>(dim));
  for (const auto& p : shard.partitions) {
    put(f, client_block_bytes(p, dim));
    put(f, static_cast<std::int64_t>(p.client_id));
    put(f, static_cast<std::uint64_t>(p.records.size()));
    for (const auto& r : p.records) {
      if (r.features.size() != dim)
        throw ValidationError("inconsistent feature dimension in shard write");
      put(f, static_cast<std::int32_t>(r.label));
      put(f, static_cast<std::int64_t>(r.group_id));
      f.write(reinterpret_cast<const char*>(r.features.data()),
              static_cast<std::streamsize>(8 * dim));
    }
  }
  if (!f) throw ValidationError("failed writing shard file: " + path);
}

static ClientPartition read_client_block(std::istream& f, std::size_t dim) {
  ClientPartition p;
  p.client_id = get<std::int64_t>(f);
  const auto n = get<std::uint64_t>(f);
  p.records.resize(n);
  for (auto& r : p.records) {
    r.label = get<std::int32_t>(f);
    r.group_id = get<std::int64_t>(f);
    r.features.resize(dim);
    f.read(reinterpret_cast<char*>(r.features.data()), static_cast<std::streamsize>(8 * dim));
    if (!f) throw ValidationError("truncated shard record");
  }
  return p;
}

ExecutorShard read_shard_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open shard file: " + path);
  if (get<std::uint32_t>(f) != kShardMagic) throw ValidationError("not a shard file: " + path);
  if (get<std::uint32_t>(f) != kShardVersion)
    throw ValidationError("unsupported shard version: " + path);
  ExecutorShard shard;
  shard.executor_id = get<std::uint32_t>(f);
  get<std::uint32_t>(f);  // reserved
  const auto n_clients = get<std::uint64_t>(f);
  const auto dim = static_cast<std::size_t>(get<std::uint64_t>(f));
  shard.partitions.reserve(n_clients);
  for (std::uint64_t i = 0; i < n_clients; ++i) {
    get<std::uint64_t>(f);  // block length, used for skipping
    shard.partitions.push_back(read_client_block(f, dim));
  }
  return shard;
}

std::optional<ClientPartition> read_client_from_shard(const std::string& path, ClientId client) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open shard file: " + path);
  if (get<std::uint32_t>(f) != kShardMagic) throw ValidationError("not a shard file: " + path);
  if (get<std::uint32_t>(f) != kShardVersion)
    throw ValidationError("unsupported shard version: " + path);
  get<std::uint32_t>(f);
  get<std::uint32_t>(f);
  const auto n_clients = get<std::uint64_t>(f);
  const auto dim = static_cast<std::size_t>(get<std::uint64_t>(f));
  for (std::uint64_t i = 0; i < n_clients; ++i) {
    const auto block = get<std::uint64_t>(f);
    const auto pos = f.tellg();
    const auto id = get<std::int64_t>(f);
    if (id == client) {
      f.seekg(pos);
      return read_client_block(f, dim);
    }
    f.seekg(pos + static_cast<std::streamoff>(block));
    if (!f) throw ValidationError("truncated shard file: " + path);
  }
  return std::nullopt;
}

std::uint64_t file_digest(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open file for digest: " + path);
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  char buf[1 << 16];
  while (f) {
    f.read(buf, sizeof(buf));
    for (std::streamsize i = 0; i < f.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

// --- synthetic dataset -----------------------------------------------------------------

KeyedDataset generate_synthetic_dataset(const SyntheticDataConfig& cfg, std::uint64_t seed) {
  if (cfg.n_records == 0 || cfg.n_clients == 0 || cfg.feature_dim == 0)
    throw ValidationError("synthetic dataset config needs records, clients, features");
  Rng rng(hash_combine(seed, 0x64617461ULL));
  std::normal_distribution<double> normal(0.0, 1.0);

  KeyedDataset ds;
  ds.true_weights.resize(cfg.feature_dim + 1);
  double norm = 0;
  for (std::size_t j = 0; j < cfg.feature_dim; ++j) {
    ds.true_weights[j] = normal(rng);
    norm += ds.true_weights[j] * ds.true_weights[j];
  }
  norm = std::sqrt(std::max(norm, 1e-12));
  for (std::size_t j = 0; j < cfg.feature_dim; ++j) ds.true_weights[j] /= norm;
  ds.true_weights[cfg.feature_dim] = 0.0;  // bias

  // Zipf weights over clients for the quantity skew.
  std::vector<double> zipf_cdf(cfg.n_clients);
  double zt = 0;
  for (std::uint64_t c = 0; c < cfg.n_clients; ++c) {
    zt += std::pow(static_cast<double>(c + 1), -cfg.zipf_exponent);
    zipf_cdf[c] = zt;
  }

  ds.records.reserve(cfg.n_records);
  ds.keys.reserve(cfg.n_records);
  for (std::uint64_t i = 0; i < cfg.n_records; ++i) {
    ClientRecord r;
    r.features.resize(cfg.feature_dim);
    double score = 0;
    do {
      score = 0;
      for (auto& x : r.features) x = normal(rng);
      for (std::size_t j = 0; j < cfg.feature_dim; ++j) score += ds.true_weights[j] * r.features[j];
    } while (std::abs(score) < cfg.margin);  // keep a separating margin
    r.label = score > 0 ? 1 : 0;
    if (canonical_u01(rng) < cfg.label_noise) r.label = 1 - r.label;

    const double u = canonical_u01(rng) * zt;
    const auto it = std::lower_bound(zipf_cdf.begin(), zipf_cdf.end(), u);
    const auto client = static_cast<std::uint64_t>(it - zipf_cdf.begin());
    std::ostringstream key;
    key << "client-" << std::min(client, cfg.n_clients - 1);
    ds.records.push_back(std::move(r));
    ds.keys.push_back(key.str());
  }
  return ds;
}

// --- CSV ---------------------------------------------------------------------------------

KeyedDataset read_csv_dataset(const std::string& path, const CsvSchema& schema) {
  if (schema.feature_dim == 0) throw ValidationError("csv schema must declare feature_dim");
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot open dataset csv: " + path);
  std::string line;
  if (!std::getline(f, line)) throw ValidationError("empty dataset csv: " + path);
  KeyedDataset ds;
  std::size_t line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string cell;
    auto next = [&](const char* what) {
      if (!std::getline(ss, cell, ','))
        throw ValidationError(std::string("csv line ") + std::to_string(line_no) + ": missing " +
                              what);
      return cell;
    };
    ClientRecord r;
    std::string key = next("client key");
    if (key.empty())
      throw ValidationError("csv line " + std::to_string(line_no) + ": empty client key");
    r.label = std::stoi(next("label"));
    if (schema.has_group) r.group_id = std::stoll(next("group"));
    r.features.resize(schema.feature_dim);
    for (std::size_t j = 0; j < schema.feature_dim; ++j) r.features[j] = std::stod(next("feature"));
    ds.records.push_back(std::move(r));
    ds.keys.push_back(std::move(key));
  }
  return ds;
}

void write_csv_dataset(const std::string& path, const KeyedDataset& dataset, bool with_group) {
  std::ofstream f(path);
  if (!f) throw ValidationError("cannot open dataset csv for writing: " + path);
  f << "client,label";
  if (with_group) f << ",group";
  const std::size_t dim = dataset.records.empty() ? 0 : dataset.records[0].features.size();
  for (std::size_t j = 0; j < dim; ++j) f << ",f" << j;
  f << '\n';
  f.precision(17);
  for (std::size_t i = 0; i < dataset.records.size(); ++i) {
    const auto& r = dataset.records[i];
    f << dataset.keys[i] << ',' << r.label;
    if (with_group) f << ',' << r.group_id;
    for (double x : r.features) f << ',' << x;
    f << '\n';
  }
}

}  // namespace fedsim::data
