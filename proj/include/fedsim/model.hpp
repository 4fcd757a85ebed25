#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedsim/data.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/types.hpp"

namespace fedsim::model {

enum class ArchKind { LogisticRegression, Mlp };
enum class Activation { Tanh, Relu };

// Architecture of the on-device model: logistic regression or a single
// hidden layer MLP over dense features, sigmoid output.
struct Architecture {
  ArchKind kind = ArchKind::LogisticRegression;
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;  // MLP only
  Activation activation = Activation::Tanh;

  std::size_t param_count() const;
  void validate() const;
};

struct ModelParams {
  std::vector<double> weights;
  std::uint64_t version = 0;  // bumped only by the aggregator
};

struct ClientUpdate {
  std::vector<double> delta;
  std::uint64_t base_version = 0;
  ClientId client_id = 0;
  std::uint64_t n_examples = 0;
  Seconds duration = 0;
};

struct HyperParams {
  int local_epochs = 1;
  std::size_t batch_size = 32;
  double lr0 = 0.1;
  double lr_decay_rate = 1.0;   // in (0, 1]
  double lr_decay_steps = 1.0;
  double server_lr = 1.0;

  void validate() const;
};

// Exponential decay with continuous exponent: lr0 * rate^(round/steps).
double lr_at(const HyperParams& hyper, std::uint64_t round_index);

// Initial weights drawn once per run; logistic regression starts at zero,
// MLP hidden weights ~ N(0, 1/sqrt(fan_in)).
ModelParams init_params(const Architecture& arch, std::uint64_t seed);

// Pre-sigmoid score of one record.
double score(const Architecture& arch, std::span<const double> weights,
             const data::ClientRecord& record);

// Mean log-loss over records (sigmoid of score vs label > 0).
double log_loss(const Architecture& arch, std::span<const double> weights,
                const std::vector<data::ClientRecord>& records);

// Mean gradient of the log-loss over a batch; used by local_train and the
// finite-difference tests.
void loss_gradient(const Architecture& arch, std::span<const double> weights,
                   std::span<const data::ClientRecord* const> batch, std::vector<double>& grad);

// E epochs of mini-batch SGD on the client partition; records are shuffled
// each epoch with the task RNG.  Returns delta = trained - base weights.
// Throws SimulationError if the loss goes non-finite (interrupted-equivalent).
ClientUpdate local_train(const Architecture& arch, const ModelParams& params,
                         const data::ClientPartition& partition, const HyperParams& hyper,
                         std::uint64_t task_seed);

enum class WireEncoding { Float32, Float64 };

// Serialized update size: |weights| * bytes-per-element + 16-byte header
// (version + count).  An optional per-model override stands in for formats
// with extra metadata.
std::uint64_t update_size_bytes(const ModelParams& params, WireEncoding encoding);
constexpr std::uint64_t kUpdateHeaderBytes = 16;

double bytes_to_mb(std::uint64_t bytes);

// --- Weight checkpointing -----------------------------------------------------

void write_params(const std::string& path, const ModelParams& params);
ModelParams read_params(const std::string& path);

}  // namespace fedsim::model
