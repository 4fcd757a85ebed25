#include "fedsim/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

namespace fedsim::model {

std::size_t Architecture::param_count() const {
  switch (kind) {
    case ArchKind::LogisticRegression:
      return input_dim + 1;
    case ArchKind::Mlp:
      // W1 (h x d), b1 (h), w2 (h), b2
      return hidden_dim * input_dim + hidden_dim + hidden_dim + 1;
  }
  return 0;
}

void Architecture::validate() const {
  if (input_dim == 0) throw ValidationError("architecture needs input_dim >= 1");
  if (kind == ArchKind::Mlp && hidden_dim == 0)
    throw ValidationError("mlp architecture needs hidden_dim >= 1");
}

void HyperParams::validate() const {
  if (local_epochs < 1) throw ValidationError("local_epochs must be >= 1");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (!(lr0 >= 0)) throw ValidationError("lr0 must be non-negative");
  if (!(lr_decay_rate > 0 && lr_decay_rate <= 1))
    throw ValidationError("lr_decay_rate must be in (0, 1]");
  if (!(lr_decay_steps > 0)) throw ValidationError("lr_decay_steps must be positive");
}

double lr_at(const HyperParams& hyper, std::uint64_t round_index) {
  return hyper.lr0 *
         std::pow(hyper.lr_decay_rate, static_cast<double>(round_index) / hyper.lr_decay_steps);
}

ModelParams init_params(const Architecture& arch, std::uint64_t seed) {
  arch.validate();
  ModelParams params;
  params.weights.assign(arch.param_count(), 0.0);
  params.version = 0;
  if (arch.kind == ArchKind::Mlp) {
    Rng rng(hash_combine(seed, 0x696e6974ULL));
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(arch.input_dim)));
    // Hidden weights only; output layer starts at zero so the initial model
    // scores 0 everywhere, same as logistic regression.
    for (std::size_t i = 0; i < arch.hidden_dim * arch.input_dim + arch.hidden_dim; ++i)
      params.weights[i] = normal(rng);
  }
  return params;
}

static double activate(Activation a, double v) {
  return a == Activation::Tanh ? std::tanh(v) : std::max(0.0, v);
}
static double activate_grad(Activation a, double pre, double post) {
  return a == Activation::Tanh ? 1.0 - post * post : (pre > 0 ? 1.0 : 0.0);
}

double score(const Architecture& arch, std::span<const double> weights,
             const data::ClientRecord& record) {
  const std::size_t d = arch.input_dim;
  if (record.features.size() != d) throw ValidationError("record feature dim mismatch");
  if (arch.kind == ArchKind::LogisticRegression) {
    double z = weights[d];
    for (std::size_t j = 0; j < d; ++j) z += weights[j] * record.features[j];
    return z;
  }
  const std::size_t h = arch.hidden_dim;
  const double* w1 = weights.data();
  const double* b1 = weights.data() + h * d;
  const double* w2 = b1 + h;
  const double b2 = w2[h];
  double z = b2;
  for (std::size_t i = 0; i < h; ++i) {
    double pre = b1[i];
    const double* row = w1 + i * d;
    for (std::size_t j = 0; j < d; ++j) pre += row[j] * record.features[j];
    z += w2[i] * activate(arch.activation, pre);
  }
  return z;
}

static double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double log_loss(const Architecture& arch, std::span<const double> weights,
                const std::vector<data::ClientRecord>& records) {
  if (records.empty()) throw ValidationError("log_loss over empty set");
  double total = 0;
  for (const auto& r : records) {
    const double z = score(arch, weights, r);
    const double y = r.label > 0 ? 1.0 : 0.0;
    // Numerically stable: log(1+e^z) - y z
    const double softplus = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    total += softplus - y * z;
  }
  return total / static_cast<double>(records.size());
}

void loss_gradient(const Architecture& arch, std::span<const double> weights,
                   std::span<const data::ClientRecord* const> batch, std::vector<double>& grad) {
  grad.assign(weights.size(), 0.0);
  const std::size_t d = arch.input_dim;
  const double inv_n = 1.0 / static_cast<double>(batch.size());

  if (arch.kind == ArchKind::LogisticRegression) {
    for (const auto* r : batch) {
      const double z = score(arch, weights, *r);
      const double err = (sigmoid(z) - (r->label > 0 ? 1.0 : 0.0)) * inv_n;
      for (std::size_t j = 0; j < d; ++j) grad[j] += err * r->features[j];
      grad[d] += err;
    }
    return;
  }

  const std::size_t h = arch.hidden_dim;
  const double* w1 = weights.data();
  const double* b1 = weights.data() + h * d;
  const double* w2 = b1 + h;
  std::vector<double> pre(h), post(h);
  for (const auto* r : batch) {
    double z = weights[weights.size() - 1];
    for (std::size_t i = 0; i < h; ++i) {
      double p = b1[i];
      const double* row = w1 + i * d;
      for (std::size_t j = 0; j < d; ++j) p += row[j] * r->features[j];
      pre[i] = p;
      post[i] = activate(arch.activation, p);
      z += w2[i] * post[i];
    }
    const double err = (sigmoid(z) - (r->label > 0 ? 1.0 : 0.0)) * inv_n;
    double* g_w1 = grad.data();
    double* g_b1 = grad.data() + h * d;
    double* g_w2 = g_b1 + h;
    for (std::size_t i = 0; i < h; ++i) {
      g_w2[i] += err * post[i];
      const double back = err * w2[i] * activate_grad(arch.activation, pre[i], post[i]);
      g_b1[i] += back;
      double* row = g_w1 + i * d;
      for (std::size_t j = 0; j < d; ++j) row[j] += back * r->features[j];
    }
    grad[weights.size() - 1] += err;  // b2
  }
}

ClientUpdate local_train(const Architecture& arch, const ModelParams& params,
                         const data::ClientPartition& partition, const HyperParams& hyper,
                         std::uint64_t task_seed) {
  if (partition.records.empty()) throw ValidationError("local_train on empty partition");
  if (params.weights.size() != arch.param_count())
    throw ValidationError("weight vector does not match architecture");
  hyper.validate();

  const double lr = lr_at(hyper, params.version);
  std::vector<double> w = params.weights;
  std::vector<const data::ClientRecord*> order;
  order.reserve(partition.records.size());
  for (const auto& r : partition.records) order.push_back(&r);

  Rng rng(task_seed);
  std::vector<double> grad;
  for (int epoch = 0; epoch < hyper.local_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t off = 0; off < order.size(); off += hyper.batch_size) {
      const std::size_t len = std::min(hyper.batch_size, order.size() - off);
      loss_gradient(arch, w, std::span<const data::ClientRecord* const>(order.data() + off, len),
                    grad);
      for (std::size_t j = 0; j < w.size(); ++j) w[j] -= lr * grad[j];
    }
    for (double v : w)
      if (!std::isfinite(v))
        throw SimulationError("local training diverged (client " +
                              std::to_string(partition.client_id) + ")");
  }

  ClientUpdate update;
  update.client_id = partition.client_id;
  update.base_version = params.version;
  update.n_examples = partition.records.size();
  update.delta.resize(w.size());
  for (std::size_t j = 0; j < w.size(); ++j) update.delta[j] = w[j] - params.weights[j];
  return update;
}

std::uint64_t update_size_bytes(const ModelParams& params, WireEncoding encoding) {
  const std::uint64_t per = encoding == WireEncoding::Float32 ? 4 : 8;
  return params.weights.size() * per + kUpdateHeaderBytes;
}

double bytes_to_mb(std::uint64_t bytes) { return static_cast<double>(bytes) / 1e6; }

// --- weight files ------------------------------------------------------------------

namespace {
constexpr std::uint32_t kParamsMagic = 0x4650524d;  // "FPRM"
}

void write_params(const std::string& path, const ModelParams& params) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open params file for writing: " + path);
  f.write(reinterpret_cast<const char*>(&kParamsMagic), 4);
  const std::uint64_t version = params.version;
  const std::uint64_t count = params.weights.size();
  f.write(reinterpret_cast<const char*>(&version), 8);
  f.write(reinterpret_cast<const char*>(&count), 8);
  f.write(reinterpret_cast<const char*>(params.weights.data()),
          static_cast<std::streamsize>(8 * count));
  if (!f) throw ValidationError("failed writing params file: " + path);
}

ModelParams read_params(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open params file: " + path);
  std::uint32_t magic = 0;
  f.read(reinterpret_cast<char*>(&magic), 4);
  if (!f || magic != kParamsMagic) throw ValidationError("not a params file: " + path);
  ModelParams params;
  std::uint64_t version = 0, count = 0;
  f.read(reinterpret_cast<char*>(&version), 8);
  f.read(reinterpret_cast<char*>(&count), 8);
  params.version = version;
  params.weights.resize(count);
  f.read(reinterpret_cast<char*>(params.weights.data()), static_cast<std::streamsize>(8 * count));
  if (!f) throw ValidationError("truncated params file: " + path);
  return params;
}

}  // namespace fedsim::model
