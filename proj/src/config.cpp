#include "fedsim/config.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fedsim/rng.hpp"
#include "json.hpp"

namespace fedsim::config {

using nlohmann::json;
namespace fs = std::filesystem;

trace::CriteriaModel CriteriaConfig::to_model() const {
  trace::CriteriaModel m;
  m.p_wifi = wifi.size() == 1 ? trace::WeeklyCurve(wifi[0]) : trace::WeeklyCurve(wifi);
  m.p_battery =
      battery.size() == 1 ? trace::WeeklyCurve(battery[0]) : trace::WeeklyCurve(battery);
  m.os_pass_rate = os_pass_rate;
  return m;
}

void RunConfig::validate() const {
  model.arch.validate();
  model.hyper.validate();
  if (!(model.hyper.lr0 > 0)) throw ValidationError("model.lr0 must be positive for runs");
  if (model.metric != "aupr" && model.metric != "ndcg")
    throw ValidationError("model.metric must be aupr or ndcg");
  if (schedule.horizon_s < 0) throw ValidationError("schedule.horizon_s must be >= 0");
  if (schedule.concurrency < 1) throw ValidationError("schedule.concurrency must be >= 1");
  if (schedule.buffer_size < 1) throw ValidationError("schedule.buffer_size must be >= 1");
  if (schedule.cohort_size < 1) throw ValidationError("schedule.cohort_size must be >= 1");
  if (schedule.overcommit < 1.0) throw ValidationError("schedule.overcommit must be >= 1");
  if (schedule.checkpoint_interval < 1)
    throw ValidationError("schedule.checkpoint_interval must be >= 1");
  if (!(data.test_fraction > 0 && data.test_fraction < 1))
    throw ValidationError("data.test_fraction must be in (0, 1)");
  if (data.n_executors < 1) throw ValidationError("data.n_executors must be >= 1");
  if (data.partition.kind != "natural" && data.partition.kind != "dirichlet")
    throw ValidationError("data.partition.kind must be natural or dirichlet");
  if (traces.short_gap_max_s > traces.long_gap_min_s)
    throw ValidationError("traces.short_gap_max_s must not exceed long_gap_min_s");
}

namespace {

std::vector<double> curve_from_json(const json& j, const char* what) {
  if (j.is_number()) return {j.get<double>()};
  if (j.is_array()) {
    auto v = j.get<std::vector<double>>();
    if (v.size() != 168)
      throw ValidationError(std::string(what) + ": hourly curve needs exactly 168 values");
    return v;
  }
  throw ValidationError(std::string(what) + ": expected scalar or 168-value array");
}

std::string resolve(const std::string& base_dir, const std::string& path) {
  if (path.empty()) return path;
  fs::path p(path);
  if (p.is_absolute()) return path;
  return (fs::path(base_dir) / p).lexically_normal().string();
}

void parse_traces(const json& j, const std::string& base_dir, TracesConfig& out) {
  out.file = resolve(base_dir, j.value("file", std::string{}));
  out.use_synthetic = out.file.empty();
  if (j.contains("synthetic")) {
    const auto& s = j.at("synthetic");
    auto& syn = out.synthetic;
    syn.n_clients = s.value("n_clients", syn.n_clients);
    syn.horizon = s.value("horizon_s", syn.horizon);
    syn.mean_sessions_per_client_day =
        s.value("mean_sessions_per_client_day", syn.mean_sessions_per_client_day);
    syn.mean_session_s = s.value("mean_session_s", syn.mean_session_s);
    syn.session_log_sigma = s.value("session_log_sigma", syn.session_log_sigma);
    syn.trough_level = s.value("trough_level", syn.trough_level);
    syn.diurnal_sharpness = s.value("diurnal_sharpness", syn.diurnal_sharpness);
    syn.weekend_dip = s.value("weekend_dip", syn.weekend_dip);
    syn.peak_time_of_day = s.value("peak_time_of_day_s", syn.peak_time_of_day);
  }
  if (j.contains("criteria")) {
    const auto& c = j.at("criteria");
    if (c.contains("wifi")) out.criteria.wifi = curve_from_json(c.at("wifi"), "criteria.wifi");
    if (c.contains("battery"))
      out.criteria.battery = curve_from_json(c.at("battery"), "criteria.battery");
    out.criteria.os_pass_rate = c.value("os_pass_rate", out.criteria.os_pass_rate);
  }
  out.short_gap_max_s = j.value("short_gap_max_s", out.short_gap_max_s);
  out.long_gap_min_s = j.value("long_gap_min_s", out.long_gap_min_s);
  out.cooldown_s = j.value("cooldown_s", out.cooldown_s);

  if (j.contains("devices")) {
    for (const auto& d : j.at("devices")) {
      trace::DeviceProfile p;
      p.device_model = d.at("model").get<std::string>();
      p.mean_time = d.value("mean_s_per_example", 0.0);
      p.stdev_time = d.value("stdev_s_per_example", 0.0);
      p.max_cpu_pct = d.value("max_cpu_pct", 100.0);
      if (d.contains("samples_s_per_example"))
        p.time_samples = d.at("samples_s_per_example").get<std::vector<double>>();
      if (p.time_samples.empty() && !(p.mean_time > 0))
        throw ValidationError("device profile " + p.device_model +
                              " needs samples or a positive mean");
      out.device_profiles.push_back(std::move(p));
      const double share = d.value("share", 0.0);
      out.device_marginal.emplace_back(out.device_profiles.back().device_model, share);
    }
    // A single unshared profile defaults to the whole population.
    if (out.device_marginal.size() == 1 && out.device_marginal[0].second == 0.0)
      out.device_marginal[0].second = 1.0;
  }
  if (j.contains("bandwidth")) {
    const auto& b = j.at("bandwidth");
    if (b.contains("samples_mbps"))
      out.bandwidth.samples_mbps = b.at("samples_mbps").get<std::vector<double>>();
    out.bandwidth.lognormal_mu = b.value("lognormal_mu", 0.0);
    out.bandwidth.lognormal_sigma = b.value("lognormal_sigma", 0.0);
  }
}

void parse_data(const json& j, const std::string& base_dir, DataConfig& out) {
  out.shard_dir = resolve(base_dir, j.value("shard_dir", std::string{}));
  out.n_executors = j.value("n_executors", out.n_executors);
  out.csv_path = resolve(base_dir, j.value("csv", json::object()).value("path", std::string{}));
  if (j.contains("csv")) {
    out.csv_schema.feature_dim = j.at("csv").value("feature_dim", std::size_t{0});
    out.csv_schema.has_group = j.at("csv").value("has_group", false);
  }
  out.use_synthetic = out.csv_path.empty() && out.shard_dir.empty();
  if (j.contains("synthetic")) {
    const auto& s = j.at("synthetic");
    auto& syn = out.synthetic;
    syn.n_records = s.value("n_records", syn.n_records);
    syn.n_clients = s.value("n_clients", syn.n_clients);
    syn.feature_dim = s.value("feature_dim", syn.feature_dim);
    syn.label_noise = s.value("label_noise", syn.label_noise);
    syn.zipf_exponent = s.value("zipf_exponent", syn.zipf_exponent);
    syn.margin = s.value("margin", syn.margin);
    syn.lookback_days = s.value("lookback_days", syn.lookback_days);
  }
  if (j.contains("partition")) {
    const auto& p = j.at("partition");
    out.partition.kind = p.value("kind", out.partition.kind);
    out.partition.n_clients = p.value("n_clients", out.partition.n_clients);
    out.partition.alpha_label = p.value("alpha_label", out.partition.alpha_label);
    out.partition.alpha_quantity = p.value("alpha_quantity", out.partition.alpha_quantity);
  }
  out.test_fraction = j.value("test_fraction", out.test_fraction);
  out.lookback_days = j.value("lookback_days", out.lookback_days);
}

void parse_model(const json& j, ModelConfig& out) {
  const std::string arch = j.value("arch", std::string{"logreg"});
  if (arch == "logreg") {
    out.arch.kind = model::ArchKind::LogisticRegression;
  } else if (arch == "mlp") {
    out.arch.kind = model::ArchKind::Mlp;
  } else {
    throw ValidationError("model.arch must be logreg or mlp");
  }
  out.arch.input_dim = j.value("input_dim", std::size_t{0});
  out.arch.hidden_dim = j.value("hidden_dim", std::size_t{16});
  const std::string act = j.value("activation", std::string{"tanh"});
  if (act == "tanh") {
    out.arch.activation = model::Activation::Tanh;
  } else if (act == "relu") {
    out.arch.activation = model::Activation::Relu;
  } else {
    throw ValidationError("model.activation must be tanh or relu");
  }
  out.hyper.local_epochs = j.value("local_epochs", out.hyper.local_epochs);
  out.hyper.batch_size = j.value("batch_size", out.hyper.batch_size);
  out.hyper.lr0 = j.value("lr0", out.hyper.lr0);
  out.hyper.lr_decay_rate = j.value("lr_decay_rate", out.hyper.lr_decay_rate);
  out.hyper.lr_decay_steps = j.value("lr_decay_steps", out.hyper.lr_decay_steps);
  out.hyper.server_lr = j.value("server_lr", out.hyper.server_lr);
  const std::string enc = j.value("encoding", std::string{"float32"});
  if (enc == "float32") {
    out.encoding = model::WireEncoding::Float32;
  } else if (enc == "float64") {
    out.encoding = model::WireEncoding::Float64;
  } else {
    throw ValidationError("model.encoding must be float32 or float64");
  }
  out.update_size_override_bytes = j.value("update_size_override_bytes", std::uint64_t{0});
  out.metric = j.value("metric", out.metric);
  out.ndcg_k = j.value("ndcg_k", out.ndcg_k);
}

void parse_schedule(const json& j, ScheduleConfig& out) {
  const std::string mode = j.value("mode", std::string{"fedbuff"});
  if (mode == "fedavg") {
    out.mode = Mode::FedAvg;
  } else if (mode == "fedbuff") {
    out.mode = Mode::FedBuff;
  } else {
    throw ValidationError("schedule.mode must be fedavg or fedbuff");
  }
  out.horizon_s = j.value("horizon_s", out.horizon_s);
  out.concurrency = j.value("concurrency", out.concurrency);
  out.buffer_size = j.value("buffer_size", out.buffer_size);
  out.max_staleness = j.value("max_staleness", out.max_staleness);
  out.cohort_size = j.value("cohort_size", out.cohort_size);
  out.overcommit = j.value("overcommit", out.overcommit);
  out.deadline_s = j.value("deadline_s", out.deadline_s);
  out.max_rounds = j.value("max_rounds", out.max_rounds);
  out.strict_paper_schedule = j.value("strict_paper_schedule", out.strict_paper_schedule);
  out.final_flush = j.value("final_flush", out.final_flush);
  out.eval_interval_s = j.value("eval_interval_s", out.eval_interval_s);
  out.checkpoint_interval = j.value("checkpoint_interval", out.checkpoint_interval);
}

json apply_overrides(json j, const std::vector<std::string>& overrides) {
  for (const auto& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos)
      throw ValidationError("--set expects section.key=value, got: " + ov);
    const std::string dotted = ov.substr(0, eq);
    const std::string value = ov.substr(eq + 1);
    json* node = &j;
    std::istringstream path(dotted);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(path, part, '.')) parts.push_back(part);
    if (parts.empty()) throw ValidationError("--set: empty key path");
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) node = &(*node)[parts[i]];
    json parsed = json::parse(value, nullptr, false);
    if (parsed.is_discarded()) parsed = value;  // bare strings stay strings
    (*node)[parts.back()] = parsed;
  }
  return j;
}

}  // namespace

RunConfig config_from_json_text(const std::string& text, const std::string& base_dir,
                                const std::vector<std::string>& overrides) {
  json j = json::parse(text);
  j = apply_overrides(std::move(j), overrides);

  RunConfig cfg;
  if (j.contains("traces")) parse_traces(j.at("traces"), base_dir, cfg.traces);
  if (j.contains("data")) parse_data(j.at("data"), base_dir, cfg.data);
  if (j.contains("model")) parse_model(j.at("model"), cfg.model);
  if (j.contains("schedule")) parse_schedule(j.at("schedule"), cfg.schedule);
  if (j.contains("seeds")) cfg.master_seed = j.at("seeds").value("master", cfg.master_seed);
  if (j.contains("output")) {
    cfg.output.dir = j.at("output").value("dir", cfg.output.dir);
    cfg.output.metric_basename = j.at("output").value("metric_basename", cfg.output.metric_basename);
    cfg.output.checkpoint = j.at("output").value("checkpoint", cfg.output.checkpoint);
  }
  if (cfg.model.arch.input_dim == 0) {
    // Default the model input width to the dataset's feature count.
    if (cfg.data.use_synthetic)
      cfg.model.arch.input_dim = cfg.data.synthetic.feature_dim;
    else if (!cfg.data.csv_path.empty())
      cfg.model.arch.input_dim = cfg.data.csv_schema.feature_dim;
  }
  if (cfg.traces.device_profiles.empty()) {
    trace::DeviceProfile p;
    p.device_model = "default";
    p.mean_time = 0.01;
    p.stdev_time = 0.002;
    cfg.traces.device_profiles.push_back(p);
    cfg.traces.device_marginal = {{"default", 1.0}};
  }
  if (cfg.traces.bandwidth.samples_mbps.empty() && cfg.traces.bandwidth.lognormal_sigma == 0.0 &&
      cfg.traces.bandwidth.lognormal_mu == 0.0) {
    cfg.traces.bandwidth.lognormal_mu = std::log(5.0);  // ~5 MB/s median edge link
    cfg.traces.bandwidth.lognormal_sigma = 0.5;
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot open config file: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return config_from_json_text(ss.str(), fs::path(path).parent_path().string(), overrides);
}

std::uint64_t config_digest(const RunConfig& cfg) {
  // Canonical re-serialization: equal parsed configs digest equally.
  json j;
  j["traces"] = {{"file", cfg.traces.file},
                 {"synthetic",
                  {{"n_clients", cfg.traces.synthetic.n_clients},
                   {"horizon_s", cfg.traces.synthetic.horizon},
                   {"mean_sessions_per_client_day",
                    cfg.traces.synthetic.mean_sessions_per_client_day},
                   {"mean_session_s", cfg.traces.synthetic.mean_session_s},
                   {"session_log_sigma", cfg.traces.synthetic.session_log_sigma},
                   {"trough_level", cfg.traces.synthetic.trough_level},
                   {"diurnal_sharpness", cfg.traces.synthetic.diurnal_sharpness},
                   {"weekend_dip", cfg.traces.synthetic.weekend_dip},
                   {"peak_time_of_day_s", cfg.traces.synthetic.peak_time_of_day}}},
                 {"wifi", cfg.traces.criteria.wifi},
                 {"battery", cfg.traces.criteria.battery},
                 {"os_pass_rate", cfg.traces.criteria.os_pass_rate},
                 {"short_gap_max_s", cfg.traces.short_gap_max_s},
                 {"long_gap_min_s", cfg.traces.long_gap_min_s},
                 {"cooldown_s", cfg.traces.cooldown_s}};
  json devices = json::array();
  for (const auto& p : cfg.traces.device_profiles) {
    json d = {{"model", p.device_model},
              {"mean", p.mean_time},
              {"stdev", p.stdev_time},
              {"cpu", p.max_cpu_pct},
              {"samples", p.time_samples}};
    devices.push_back(std::move(d));
  }
  j["devices"] = std::move(devices);
  json marginal = json::array();
  for (const auto& [name, share] : cfg.traces.device_marginal)
    marginal.push_back({{"model", name}, {"share", share}});
  j["marginal"] = std::move(marginal);
  j["bandwidth"] = {{"samples", cfg.traces.bandwidth.samples_mbps},
                    {"mu", cfg.traces.bandwidth.lognormal_mu},
                    {"sigma", cfg.traces.bandwidth.lognormal_sigma}};
  j["data"] = {{"shard_dir", cfg.data.shard_dir},
               {"n_executors", cfg.data.n_executors},
               {"csv", cfg.data.csv_path},
               {"feature_dim", cfg.data.csv_schema.feature_dim},
               {"has_group", cfg.data.csv_schema.has_group},
               {"synthetic",
                {{"n_records", cfg.data.synthetic.n_records},
                 {"n_clients", cfg.data.synthetic.n_clients},
                 {"feature_dim", cfg.data.synthetic.feature_dim},
                 {"label_noise", cfg.data.synthetic.label_noise},
                 {"zipf_exponent", cfg.data.synthetic.zipf_exponent},
                 {"margin", cfg.data.synthetic.margin}}},
               {"partition",
                {{"kind", cfg.data.partition.kind},
                 {"n_clients", cfg.data.partition.n_clients},
                 {"alpha_label", cfg.data.partition.alpha_label},
                 {"alpha_quantity", cfg.data.partition.alpha_quantity}}},
               {"test_fraction", cfg.data.test_fraction},
               {"lookback_days", cfg.data.lookback_days}};
  j["model"] = {{"kind", cfg.model.arch.kind == model::ArchKind::Mlp ? "mlp" : "logreg"},
                {"input_dim", cfg.model.arch.input_dim},
                {"hidden_dim", cfg.model.arch.hidden_dim},
                {"activation", cfg.model.arch.activation == model::Activation::Tanh ? "tanh" : "relu"},
                {"local_epochs", cfg.model.hyper.local_epochs},
                {"batch_size", cfg.model.hyper.batch_size},
                {"lr0", cfg.model.hyper.lr0},
                {"lr_decay_rate", cfg.model.hyper.lr_decay_rate},
                {"lr_decay_steps", cfg.model.hyper.lr_decay_steps},
                {"server_lr", cfg.model.hyper.server_lr},
                {"encoding", cfg.model.encoding == model::WireEncoding::Float32 ? "f32" : "f64"},
                {"override_bytes", cfg.model.update_size_override_bytes},
                {"metric", cfg.model.metric},
                {"ndcg_k", cfg.model.ndcg_k}};
  j["schedule"] = {{"mode", mode_name(cfg.schedule.mode)},
                   {"horizon_s", cfg.schedule.horizon_s},
                   {"concurrency", cfg.schedule.concurrency},
                   {"buffer_size", cfg.schedule.buffer_size},
                   {"max_staleness", cfg.schedule.max_staleness},
                   {"cohort_size", cfg.schedule.cohort_size},
                   {"overcommit", cfg.schedule.overcommit},
                   {"deadline_s", cfg.schedule.deadline_s},
                   {"max_rounds", cfg.schedule.max_rounds},
                   {"strict", cfg.schedule.strict_paper_schedule},
                   {"final_flush", cfg.schedule.final_flush},
                   {"eval_interval_s", cfg.schedule.eval_interval_s},
                   {"checkpoint_interval", cfg.schedule.checkpoint_interval}};
  j["seeds"] = {{"master", cfg.master_seed}};
  const std::string dump = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : dump) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string mode_name(Mode mode) { return mode == Mode::FedAvg ? "fedavg" : "fedbuff"; }

}  // namespace fedsim::config
