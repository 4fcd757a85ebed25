#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fedsim/checkpoint.hpp"
#include "fedsim/config.hpp"
#include "fedsim/data.hpp"
#include "fedsim/engine.hpp"
#include "fedsim/forecast.hpp"
#include "fedsim/metric_stream.hpp"
#include "fedsim/trace.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fedsim;

namespace {

int log_level() {
  const char* env = std::getenv("FEDSIM_LOG");
  if (!env) return 1;
  const std::string v(env);
  if (v == "quiet" || v == "0") return 0;
  if (v == "debug" || v == "2") return 2;
  return 1;
}

void log_info(const std::string& msg) {
  if (log_level() >= 1) std::cerr << "fedsim: " << msg << "\n";
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

std::string iso_now() {
  std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%FT%TZ", std::gmtime(&t));
  return buf;
}

double configured_update_mb(const config::RunConfig& cfg) {
  if (cfg.model.update_size_override_bytes > 0)
    return model::bytes_to_mb(cfg.model.update_size_override_bytes);
  model::ModelParams sized;
  sized.weights.assign(cfg.model.arch.param_count(), 0.0);
  return model::bytes_to_mb(model::update_size_bytes(sized, cfg.model.encoding));
}

std::vector<trace::AvailabilitySession> build_sessions(const config::RunConfig& cfg,
                                                       std::uint64_t seed) {
  std::vector<trace::AvailabilitySession> sessions;
  if (!cfg.traces.file.empty() && fs::path(cfg.traces.file).extension() == ".rawlog") {
    for (const auto& raw : trace::read_raw_log(cfg.traces.file)) {
      auto split =
          trace::split_sessions(raw, cfg.traces.short_gap_max_s, cfg.traces.long_gap_min_s);
      sessions.insert(sessions.end(), split.begin(), split.end());
    }
  } else if (!cfg.traces.file.empty()) {
    sessions = trace::read_trace_file(cfg.traces.file);
  } else {
    sessions =
        trace::generate_synthetic_sessions(cfg.traces.synthetic, hash_combine(seed, 0x74726163ULL));
  }
  return sessions;
}

int cmd_gen_traces(const std::string& config_path, const std::vector<std::string>& overrides,
                   const std::string& out_path) {
  const auto cfg = config::load_config(config_path, overrides);
  const auto sessions = build_sessions(cfg, cfg.master_seed);
  const auto criteria = cfg.traces.criteria.to_model();
  const auto funnel =
      trace::availability_funnel(sessions, criteria, hash_combine(cfg.master_seed, 0x66696c74ULL));
  auto kept =
      trace::filter_by_criteria(sessions, criteria, hash_combine(cfg.master_seed, 0x66696c74ULL));
  trace::sort_sessions(kept);

  if (!fs::path(out_path).parent_path().empty())
    fs::create_directories(fs::path(out_path).parent_path());
  trace::write_trace_file(out_path, kept);

  std::cout << "criteria funnel (" << sessions.size() << " sessions):\n";
  static const char* labels[] = {"A: connected to wifi", "B: battery level ok",
                                 "C: os release ok", "A+B+C"};
  for (std::size_t i = 0; i < funnel.size(); ++i) {
    std::cout << "  " << labels[i] << "  " << std::fixed << std::setprecision(1)
              << 100.0 * funnel[i].retained << "%\n";
  }
  std::cout << "wrote " << kept.size() << " sessions to " << out_path << " (digest "
            << hex64(data::file_digest(out_path)) << ")\n";
  return 0;
}

int cmd_gen_partitions(const std::string& config_path, const std::vector<std::string>& overrides,
                       const std::string& out_dir) {
  const auto cfg = config::load_config(config_path, overrides);
  data::KeyedDataset ds;
  if (!cfg.data.csv_path.empty()) {
    ds = data::read_csv_dataset(cfg.data.csv_path, cfg.data.csv_schema);
  } else {
    ds = data::generate_synthetic_dataset(cfg.data.synthetic,
                                          hash_combine(cfg.master_seed, 0x64617461ULL));
  }

  // Same held-out split the engine applies when partitioning in memory.
  std::vector<std::size_t> order(ds.records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng split_rng(hash_combine(cfg.master_seed, 0x73706c6974ULL));
  std::shuffle(order.begin(), order.end(), split_rng);
  const auto n_test =
      static_cast<std::size_t>(cfg.data.test_fraction * static_cast<double>(ds.records.size()));
  std::vector<data::ClientRecord> test_records, train_records;
  std::vector<std::string> train_keys;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i < n_test) {
      test_records.push_back(ds.records[order[i]]);
    } else {
      train_records.push_back(ds.records[order[i]]);
      train_keys.push_back(ds.keys[order[i]]);
    }
  }

  std::vector<data::ClientPartition> parts;
  if (cfg.data.partition.kind == "dirichlet") {
    parts = data::partition_dirichlet(train_records, cfg.data.partition.n_clients,
                                      cfg.data.partition.alpha_label,
                                      cfg.data.partition.alpha_quantity,
                                      hash_combine(cfg.master_seed, 0x64697269ULL));
  } else {
    parts = data::partition_natural(train_records, train_keys);
  }
  const auto stats = data::compute_stats(parts);

  fs::create_directories(out_dir);
  const auto shards = data::round_robin_shard(parts, cfg.data.n_executors);
  for (const auto& shard : shards) {
    std::ostringstream name;
    name << "shard_" << std::setw(3) << std::setfill('0') << shard.executor_id << ".bin";
    data::write_shard_file((fs::path(out_dir) / name.str()).string(), shard);
  }
  data::ExecutorShard test_shard;
  test_shard.executor_id = 0;
  data::ClientPartition test_part;
  test_part.client_id = -1;
  test_part.records = std::move(test_records);
  test_shard.partitions.push_back(std::move(test_part));
  data::write_shard_file((fs::path(out_dir) / "test.bin").string(), test_shard);

  json stats_doc;
  stats_doc["client_pop"] = stats.client_pop;
  stats_doc["max_records"] = stats.max_records;
  stats_doc["avg_records"] = stats.avg_records;
  stats_doc["std_records"] = stats.std_records;
  stats_doc["label_ratio"] = stats.label_ratio;
  stats_doc["lookback_days"] = cfg.data.lookback_days;
  std::ofstream sf(fs::path(out_dir) / "stats.json");
  sf << stats_doc.dump(2) << "\n";

  std::cout << "partitions: " << stats.client_pop << " clients over " << shards.size()
            << " executor shards\n"
            << stats_doc.dump(2) << "\n";
  return 0;
}

int cmd_run(const std::string& config_path, const std::vector<std::string>& overrides,
            std::uint64_t trials, int workers, bool resume, std::uint64_t stop_after) {
  const auto cfg = config::load_config(config_path, overrides);
  const auto out_dir = fs::path(cfg.output.dir);
  fs::create_directories(out_dir);

  const std::string checkpoint_path =
      cfg.output.checkpoint.empty() ? "" : (out_dir / cfg.output.checkpoint).string();
  if (!checkpoint_path.empty() && fs::exists(checkpoint_path) && !resume)
    throw ValidationError("checkpoint exists at " + checkpoint_path +
                          "; pass --resume to continue or remove it");
  if (resume && checkpoint_path.empty())
    throw ValidationError("--resume needs output.checkpoint in the config");
  if (resume && trials != 1) throw ValidationError("--resume supports a single trial");

  json manifest;
  manifest["tool_version"] = FEDSIM_VERSION;
  manifest["config"] = fs::absolute(config_path).string();
  manifest["config_digest"] = hex64(config::config_digest(cfg));
  manifest["master_seed"] = cfg.master_seed;
  manifest["trials"] = trials;
  manifest["started_at"] = iso_now();
  json artifacts = json::array();

  std::vector<std::vector<engine::MetricRecord>> all_records;
  for (std::uint64_t t = 0; t < trials; ++t) {
    const auto seed = trial_seed(cfg.master_seed, t);
    engine::RunControls controls;
    controls.n_workers = workers;
    controls.checkpoint_path = trials == 1 ? checkpoint_path : "";
    controls.checkpoint_interval = cfg.schedule.checkpoint_interval;
    controls.stop_after_aggregations = stop_after;

    const auto metric_path =
        (out_dir / (cfg.output.metric_basename + "_trial" + std::to_string(t) + ".ndjson"))
            .string();
    const auto model_path = (out_dir / ("model_trial" + std::to_string(t) + ".bin")).string();

    engine::RunResult result;
    if (resume) {
      log_info("resuming trial " + std::to_string(t) + " from " + checkpoint_path);
      auto sim = engine::Simulation::resume(cfg, checkpoint_path);
      result = sim->run(controls);
      // Rebuild the stream file: records up to the checkpoint, then the tail.
      std::vector<engine::MetricRecord> combined;
      if (fs::exists(metric_path)) {
        const auto prior = engine::read_metric_stream(metric_path);
        const std::uint64_t first_new =
            result.records.empty() ? UINT64_MAX : result.records.front().round;
        for (const auto& rec : prior)
          if (rec.round < first_new) combined.push_back(rec);
      }
      combined.insert(combined.end(), result.records.begin(), result.records.end());
      result.records = std::move(combined);
    } else {
      log_info("trial " + std::to_string(t) + " (seed " + std::to_string(seed) + ")");
      engine::Simulation sim(cfg, seed);
      result = sim.run(controls);
    }

    engine::write_metric_stream(metric_path, result.records);
    model::write_params(model_path, result.final_params);
    all_records.push_back(std::move(result.records));

    json art;
    art["trial"] = t;
    art["seed"] = seed;
    art["metrics"] = metric_path;
    art["model"] = model_path;
    art["aggregations"] = result.aggregations;
    art["tasks_started"] = result.metrics.tasks_started;
    art["truncated"] = result.truncated;
    if (!controls.checkpoint_path.empty()) art["checkpoint"] = controls.checkpoint_path;
    artifacts.push_back(std::move(art));
    if (result.truncated) log_info("trial " + std::to_string(t) + " ended early: trace exhausted");
  }

  manifest["artifacts"] = std::move(artifacts);
  manifest["update_mb"] = configured_update_mb(cfg);
  manifest["finished_at"] = iso_now();
  std::ofstream mf(out_dir / "manifest.json");
  mf << manifest.dump(2) << "\n";

  bool all_have_records = !all_records.empty();
  for (const auto& recs : all_records) all_have_records = all_have_records && !recs.empty();
  if (all_have_records) {
    const auto report = forecast::build_report(all_records, configured_update_mb(cfg));
    const auto text = forecast::render_report(report);
    std::ofstream rf(out_dir / "summary.txt");
    rf << text;
    std::cout << text;
  }
  std::cout << "manifest: " << (out_dir / "manifest.json").string() << "\n";
  return 0;
}

int cmd_forecast(const std::vector<std::string>& metric_paths, double update_mb,
                 const std::string& out_path, const std::string& csv_path) {
  if (metric_paths.empty()) throw ValidationError("forecast needs at least one metric file");
  std::vector<std::vector<engine::MetricRecord>> trials;
  for (const auto& p : metric_paths) {
    auto records = engine::read_metric_stream(p);
    if (records.empty()) throw ValidationError("empty metric file: " + p);
    trials.push_back(std::move(records));
  }
  const auto report = forecast::build_report(trials, update_mb);
  const auto text = forecast::render_report(report);
  std::cout << text;
  if (!out_path.empty()) {
    std::ofstream f(out_path);
    f << text;
  }
  if (!csv_path.empty()) forecast::write_report_csv(csv_path, report);
  return 0;
}

int cmd_report(const std::string& manifest_path) {
  std::ifstream f(manifest_path);
  if (!f) throw ValidationError("cannot open manifest: " + manifest_path);
  json manifest = json::parse(f);
  std::cout << "run report\n";
  std::cout << "  tool:          " << manifest.value("tool_version", std::string{"?"}) << "\n";
  std::cout << "  config digest: " << manifest.value("config_digest", std::string{"?"}) << "\n";
  std::cout << "  master seed:   " << manifest.value("master_seed", 0ull) << "\n";
  std::cout << "  trials:        " << manifest.value("trials", 0ull) << "\n";
  for (const auto& art : manifest.value("artifacts", json::array())) {
    std::cout << "  trial " << art.value("trial", 0ull) << ": "
              << art.value("aggregations", 0ull) << " aggregations, "
              << art.value("tasks_started", 0ull) << " tasks";
    if (art.value("truncated", false)) std::cout << " (truncated)";
    std::cout << "\n";
    const auto metrics = art.value("metrics", std::string{});
    if (!metrics.empty() && fs::exists(metrics)) {
      const auto records = engine::read_metric_stream(metrics);
      if (!records.empty()) {
        const auto& last = records.back();
        std::cout << "    final: t=" << last.virtual_time_s << "s round=" << last.round
                  << " loss=" << last.loss << " " << last.metric_name << "=" << last.metric_value
                  << "\n";
      }
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"trace-driven federated learning simulator"};
  app.require_subcommand(1);

  std::string config_path, out_path, manifest_path, csv_path;
  std::vector<std::string> overrides, metric_paths;
  std::uint64_t trials = 1, stop_after = 0;
  int workers = 4;
  bool resume = false;
  double update_mb = 0.76;

  auto* gen_traces = app.add_subcommand("gen-traces", "generate availability traces");
  gen_traces->add_option("-c,--config", config_path, "run config (json)")->required();
  gen_traces->add_option("-o,--out", out_path, "output trace file")->required();
  gen_traces->add_option("--set", overrides, "override config keys: section.key=value");

  auto* gen_parts = app.add_subcommand("gen-partitions", "build executor shard files");
  gen_parts->add_option("-c,--config", config_path, "run config (json)")->required();
  gen_parts->add_option("-o,--out", out_path, "output shard directory")->required();
  gen_parts->add_option("--set", overrides, "override config keys: section.key=value");

  auto* run = app.add_subcommand("run", "run the simulation");
  run->add_option("-c,--config", config_path, "run config (json)")->required();
  run->add_option("-n,--trials", trials, "number of seeded trials");
  run->add_option("-w,--workers", workers, "worker threads")->check(CLI::PositiveNumber);
  run->add_flag("--resume", resume, "resume from the configured checkpoint");
  run->add_option("--stop-after-aggregations", stop_after,
                  "stop after N aggregations (testing / staged runs)");
  run->add_option("--set", overrides, "override config keys: section.key=value");

  auto* fcast = app.add_subcommand("forecast", "resource forecast from metric streams");
  fcast->add_option("-m,--metrics", metric_paths, "metric stream files")->required();
  fcast->add_option("--update-mb", update_mb, "serialized update size in MB");
  fcast->add_option("-o,--out", out_path, "write the report here");
  fcast->add_option("--csv", csv_path, "write per-round bands as csv");

  auto* report = app.add_subcommand("report", "summarize a finished run");
  report->add_option("-m,--manifest", manifest_path, "manifest.json from a run")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen_traces->parsed()) return cmd_gen_traces(config_path, overrides, out_path);
    if (gen_parts->parsed()) return cmd_gen_partitions(config_path, overrides, out_path);
    if (run->parsed())
      return cmd_run(config_path, overrides, trials, workers, resume, stop_after);
    if (fcast->parsed()) return cmd_forecast(metric_paths, update_mb, out_path, csv_path);
    if (report->parsed()) return cmd_report(manifest_path);
  } catch (const ValidationError& e) {
    std::cerr << "fedsim: input error: " << e.what() << "\n";
    return 2;
  } catch (const SimulationError& e) {
    std::cerr << "fedsim: simulation aborted: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "fedsim: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
