#include "splitamc/commands.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

namespace splitamc {

namespace fs = std::filesystem;

ExperimentConfig resolve_config(const CommandOptions& opts) {
  json user = opts.config.empty() ? json::object() : load_config_file(opts.config);
  for (const auto& o : opts.overrides) apply_override(user, o);
  return parse_config(user);
}

Dataset generate_dataset(const ExperimentConfig& cfg, double gamma_data_db, unsigned threads) {
  ModemConfig modem = cfg.modem;
  modem.gamma_data_db = gamma_data_db;
  BuildOptions build = cfg.build;
  build.threads = std::max(1u, threads);
  const Dataset raw = build_dataset(modem, build, cfg.seed);
  return normalize_dataset(raw, cfg.target.mean, cfg.target.variance);
}

double mean_round_latency(const TrainConfig& train, const SplitModel& model, std::span<const RoundRecord> records,
                          const LatencySettings& lat) {
  if (records.empty()) return 0.0;
  LatencyConfig cfg = lat.base;
  cfg.tau_comp_s = lat.tau_comp_s;
  cfg.lambda = model.lambda;
  double sum = 0.0;
  for (const auto& r : records) {
    cfg.payload_ul = r.ul_payload_elems;
    cfg.payload_dl = r.dl_payload_elems;
    sum += round_latency(train.method, cfg).total;
  }
  return sum / static_cast<double>(records.size());
}

RunOutcome run_experiment(const TrainConfig& train, const ExperimentConfig& cfg, const Dataset& ds,
                          const TrainHooks& hooks) {
  const LabeledImages all = to_model_inputs(ds);
  const TrainTestSplit split = split_train_test(all, cfg.test_fraction, train.seed);
  const auto clients = partition_clients(split.train, train.num_clients, train.seed);

  TrainConfig t = train;
  t.recipe.grid = ds.grid;
  TrainHooks h = hooks;
  if (h.eval_set == nullptr) h.eval_set = &split.test;

  RunOutcome out{splitamc::train(t, clients, h), 0.0, 0.0, 0.0, {}};
  const SplitModel& model = out.result.model;
  Rng eval_rng(derive_seed(t.seed, {stream::kEval, 1}));
  out.pcc_local = evaluate(model, split.test, InferenceMode::LocalFullModel, t.link, eval_rng);
  out.pcc_remote = evaluate(model, split.test, InferenceMode::RemoteSmashed, t.link, eval_rng);
  out.mean_round_latency_s = mean_round_latency(t, model, out.result.records, cfg.latency);
  out.scale = scale_report(model, split.test);
  return out;
}

unsigned grid_threads() {
  if (const char* env = std::getenv("SPLITAMC_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && n >= 1) return static_cast<unsigned>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

namespace {

fs::path output_dir(const CommandOptions& opts, const ExperimentConfig& cfg) {
  fs::path out = opts.out.empty() ? fs::path(cfg.out_dir) : opts.out;
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory '" + out.string() + "': " + ec.message());
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  out.close();
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

void write_resolved_config(const fs::path& dir, const ExperimentConfig& cfg) {
  write_text(dir / "config.json", cfg.resolved.dump(2) + "\n");
}

double sample_std(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

int cmd_gen_data(const CommandOptions& opts, std::ostream& log) {
  const ExperimentConfig cfg = resolve_config(opts);
  const fs::path out = output_dir(opts, cfg);
  const Dataset ds = generate_dataset(cfg, cfg.modem.gamma_data_db, grid_threads());
  save_dataset(ds, out);
  write_resolved_config(out, cfg);
  log << "wrote " << ds.images.size() << " images (" << ds.grid << "x" << ds.grid << ") to " << out.string() << "\n";
  return kExitOk;
}

int cmd_train(const CommandOptions& opts, std::ostream& log) {
  const ExperimentConfig cfg = resolve_config(opts);
  const fs::path data = opts.data.empty() ? fs::path(cfg.dataset_dir) : opts.data;
  if (data.empty()) throw MissingDataset("no dataset given (use --data or dataset.dir)");
  if (!fs::exists(data / "manifest.json")) throw MissingDataset("no dataset at '" + data.string() + "'");
  const Dataset ds = load_dataset(data);
  const fs::path out = output_dir(opts, cfg);
  write_resolved_config(out, cfg);

  RunOutcome run;
  try {
    run = run_experiment(cfg.train, cfg, ds);
  } catch (const NonFiniteLoss& e) {
    write_records_csv(e.records, out / "records.csv");
    throw;
  }
  const TrainResult& res = run.result;
  write_records_csv(res.records, out / "records.csv");
  export_learning_curve(res.records, out / "learning_curve.csv", out / "learning_curve.svg");
  save_checkpoint(out / "checkpoint.bin", {res.model.net.recipe(), res.model.cut, cfg.seed,
                                           static_cast<std::int64_t>(res.records.size()), res.model.net.params()});

  json summary{
      {"method", std::string(method_name(cfg.train.method))},
      {"seed", cfg.seed},
      {"rounds", res.records.size()},
      {"pcc", {{"local_full_model", run.pcc_local}, {"remote_smashed", run.pcc_remote}}},
      {"mean_round_latency_s", run.mean_round_latency_s},
      {"aggregation_count", res.aggregation_count},
      {"uploaded_pixels", res.uploaded_pixels},
      {"lambda", res.model.lambda},
      {"num_params", res.model.net.num_params()},
      {"scale",
       {{"median_abs_smashed", run.scale.median_abs_smashed},
        {"median_abs_weights", run.scale.median_abs_weights},
        {"ratio", run.scale.ratio}}},
      {"config", cfg.resolved},
  };
  write_text(out / "summary.json", summary.dump(2) + "\n");
  log << method_name(cfg.train.method) << ": P_cc local " << format_number(run.pcc_local) << "%, remote "
      << format_number(run.pcc_remote) << "%, " << res.records.size() << " rounds -> " << out.string() << "\n";
  return kExitOk;
}

int cmd_latency(const CommandOptions& opts, std::ostream& log) {
  const ExperimentConfig cfg = resolve_config(opts);
  const fs::path out = output_dir(opts, cfg);
  const BlockNet net(cfg.train.recipe);
  const auto scenarios = default_scenarios(net, cfg.latency.cuts, cfg.train.batch_size, cfg.latency.base);
  const auto rows = sweep_ratio(scenarios, cfg.latency.ratios, cfg.latency.rounds,
                                model_upload_time(net, cfg.latency.base));
  write_sweep_csv(rows, out / "latency.csv");
  write_resolved_config(out, cfg);
  for (const auto& r : rows)
    log << r.label << " ratio " << format_number(r.ratio) << ": total " << format_number(r.totals.total) << " s\n";
  return kExitOk;
}

int cmd_compare(const CommandOptions& opts, std::ostream& log) {
  const ExperimentConfig cfg = resolve_config(opts);
  const fs::path out = output_dir(opts, cfg);
  write_resolved_config(out, cfg);
  const CompareSettings& cmp = cfg.compare;

  std::map<double, Dataset> datasets;
  for (double g : cmp.gamma_data_db)
    if (!datasets.count(g)) datasets.emplace(g, generate_dataset(cfg, g, grid_threads()));

  struct Cell {
    Method method;
    double gamma;
    ChannelSnr snr;
    FadingMode fading;
    std::vector<double> pcc;
  };
  std::vector<Cell> cells;
  for (Method m : cmp.methods)
    for (double g : cmp.gamma_data_db)
      for (const auto& s : cmp.channel_snr)
        for (FadingMode f : cmp.fading) cells.push_back({m, g, s, f, std::vector<double>(cmp.seeds.size())});

  const std::size_t jobs = cells.size() * cmp.seeds.size();
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs; j = next++) {
      Cell& cell = cells[j / cmp.seeds.size()];
      const std::size_t s = j % cmp.seeds.size();
      try {
        TrainConfig t = cfg.train;
        t.method = cell.method;
        t.seed = cmp.seeds[s];
        t.link = make_link(cell.snr, cell.fading, cfg.train.link);
        cell.pcc[s] = run_experiment(t, cfg, datasets.at(cell.gamma)).pcc_local;
        std::lock_guard lock(mu);
        log << method_name(cell.method) << " gamma_data " << format_number(cell.gamma) << " channel "
            << cell.snr.label() << " " << fading_name(cell.fading) << " seed " << t.seed << ": "
            << format_number(cell.pcc[s]) << "%\n";
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
        next = jobs;
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    const auto n = std::min<std::size_t>(grid_threads(), jobs);
    for (std::size_t i = 0; i < n; ++i) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  std::ostringstream csv;
  csv << "method,gamma_data_db,channel_snr_db,fading,seeds,mean_pcc,std_pcc\n";
  for (const auto& c : cells) {
    double mean = 0.0;
    for (double p : c.pcc) mean += p;
    mean /= static_cast<double>(c.pcc.size());
    csv << method_name(c.method) << ',' << format_number(c.gamma) << ',' << c.snr.label() << ','
        << fading_name(c.fading) << ',' << c.pcc.size() << ',' << format_number(mean) << ','
        << format_number(sample_std(c.pcc, mean)) << '\n';
  }
  write_text(out / "compare.csv", csv.str());
  log << "wrote " << cells.size() << " cells to " << (out / "compare.csv").string() << "\n";
  return kExitOk;
}

int run_command(const std::string& name, const CommandOptions& opts, std::ostream& log) {
  try {
    if (name == "gen-data") return cmd_gen_data(opts, log);
    if (name == "train") return cmd_train(opts, log);
    if (name == "latency") return cmd_latency(opts, log);
    if (name == "compare") return cmd_compare(opts, log);
    log << "error: unknown command '" << name << "'\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    log << "error: " << e.what() << "\n";
    return kExitInvalidConfig;
  } catch (const MissingDataset& e) {
    log << "error: " << e.what() << "\n";
    return kExitMissingDataset;
  } catch (const NonFiniteLoss& e) {
    log << "error: " << e.what() << "\n";
    return kExitNonFiniteLoss;
  } catch (const IoError& e) {
    log << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const FormatError& e) {
    log << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    log << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const InvalidInput& e) {
    log << "error: " << e.what() << "\n";
    return kExitInvalidConfig;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}

}  // namespace splitamc
