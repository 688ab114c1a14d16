#include "splitamc/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "splitamc/metrics.hpp"

namespace splitamc {

std::string ChannelSnr::label() const { return db ? format_number(*db) : "noiseless"; }

std::string fading_name(FadingMode m) { return m == FadingMode::Fixed ? "fixed" : "rayleigh"; }

FadingMode fading_from_name(const std::string& name) {
  if (name == "fixed") return FadingMode::Fixed;
  if (name == "rayleigh") return FadingMode::Rayleigh;
  throw InvalidInput("unknown fading mode '" + name + "'");
}

json default_config() {
  return json{
      {"seed", 1},
      {"out_dir", "out"},
      {"modem",
       {{"num_symbols", 256}, {"gamma_data_db", 10.0}, {"f0T", 0.0}, {"phase_jitter_std", 0.0}, {"fading", "none"}}},
      {"dataset",
       {{"grid", 32},
        {"frames_per_class", 300},
        {"half_range", kDefaultHalfRange},
        {"test_fraction", 0.2},
        {"normalize_mean", 0.5},
        {"normalize_variance", 0.5},
        {"dir", ""}}},
      {"model", {{"widths", {4, 16, 64, 256}}}},
      {"train",
       {{"method", "splitamc"},
        {"num_clients", 2},
        {"batch_size", 32},
        {"rounds", 2000},
        {"eta", 0.004},
        {"cut", 1},
        {"local_steps", 1},
        {"eval_every", 0},
        {"inference_mode", "local_full_model"}}},
      {"link",
       {{"channel_snr_db", nullptr},
        {"transmit_power_w", 0.1},
        {"distance_m", 100.0},
        {"pathloss_alpha", 2.0},
        {"noise_variance_w", 1e-6},
        {"fading", "fixed"},
        {"ul_noisy", true},
        {"dl_noisy", false}}},
      {"latency",
       {{"bandwidth_hz", 10e6},
        {"gamma_ul_db", 10.0},
        {"dl_rate_factor", 10.0},
        {"beta_bits", 32.0},
        {"tau_comp_s", 1e-3},
        {"centamc_dl_payload", 0},
        {"ratios", {10.0, 1.0, 0.1}},
        {"cuts", {1}},
        {"rounds", 50}}},
      {"compare",
       {{"methods", {"splitamc", "fedeamc", "centamc"}},
        {"gamma_data_db", {10.0, 15.0}},
        {"channel_snr_db", {"noiseless", -10.0}},
        {"fading", {"fixed"}},
        {"seeds", {1}}}},
  };
}

namespace {

void merge_checked(json& base, const json& user, const std::string& prefix) {
  if (!user.is_object()) throw ConfigError(prefix.empty() ? "<root>" : prefix, "configuration must be a JSON object");
  for (const auto& [key, value] : user.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) throw ConfigError(path, "unknown configuration key '" + path + "'");
    json& slot = base[key];
    if (slot.is_object())
      merge_checked(slot, value, path);
    else
      slot = value;
  }
}

template <typename T>
T get(const json& root, const std::string& path) {
  const json* node = &root;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    node = &node->at(path.substr(start, dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  try {
    return node->get<T>();
  } catch (const json::exception&) {
    throw ConfigError(path, "configuration key '" + path + "' has the wrong type");
  }
}

ChannelSnr channel_from_json(const json& v, const std::string& path) {
  if (v.is_string() && v.get<std::string>() == "noiseless") return {std::nullopt};
  if (v.is_number()) {
    const double db = v.get<double>();
    if (!std::isfinite(db)) throw ConfigError(path, "'" + path + "' must be finite");
    return {db};
  }
  throw ConfigError(path, "'" + path + "' must be a number (dB) or \"noiseless\"");
}

template <typename F>
auto checked(const std::string& path, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(path, "'" + path + "': " + e.what());
  }
}

}  // namespace

LinkBudget make_link(const ChannelSnr& snr, FadingMode fading, const LinkBudget& base) {
  LinkBudget link = base;
  link.fading = fading;
  if (!snr.db) {
    link.directions = {false, false};
    return link;
  }
  const LinkBudget calibrated =
      LinkBudget::for_snr(*snr.db, fading, base.transmit_power_w, base.distance_m, base.pathloss_alpha);
  link.noise_variance_w = calibrated.noise_variance_w;
  return link;
}

ExperimentConfig parse_config(const json& user) {
  json r = default_config();
  merge_checked(r, user, "");

  ExperimentConfig c;
  c.seed = get<std::uint64_t>(r, "seed");
  c.out_dir = get<std::string>(r, "out_dir");

  c.modem.num_symbols = get<int>(r, "modem.num_symbols");
  c.modem.gamma_data_db = get<double>(r, "modem.gamma_data_db");
  c.modem.f0T = get<double>(r, "modem.f0T");
  c.modem.phase_jitter_std = get<double>(r, "modem.phase_jitter_std");
  const auto amp = get<std::string>(r, "modem.fading");
  if (amp == "none")
    c.modem.fading = AmplitudeFading::None;
  else if (amp == "rayleigh_per_symbol")
    c.modem.fading = AmplitudeFading::RayleighPerSymbol;
  else
    throw ConfigError("modem.fading", "modem.fading must be \"none\" or \"rayleigh_per_symbol\"");
  checked("modem", [&] { c.modem.validate(); });

  c.build.grid = get<int>(r, "dataset.grid");
  c.build.frames_per_class = get<int>(r, "dataset.frames_per_class");
  c.build.half_range = get<double>(r, "dataset.half_range");
  if (c.build.grid < 8) throw ConfigError("dataset.grid", "dataset.grid must be >= 8");
  if (c.build.frames_per_class < 1) throw ConfigError("dataset.frames_per_class", "dataset.frames_per_class must be >= 1");
  if (!(c.build.half_range > 0.0)) throw ConfigError("dataset.half_range", "dataset.half_range must be > 0");
  c.test_fraction = get<double>(r, "dataset.test_fraction");
  if (!(c.test_fraction > 0.0 && c.test_fraction < 1.0))
    throw ConfigError("dataset.test_fraction", "dataset.test_fraction must lie in (0, 1)");
  c.target = {get<double>(r, "dataset.normalize_mean"), get<double>(r, "dataset.normalize_variance")};
  if (!(c.target.variance > 0.0))
    throw ConfigError("dataset.normalize_variance", "dataset.normalize_variance must be > 0");
  c.dataset_dir = get<std::string>(r, "dataset.dir");

  TrainConfig& t = c.train;
  t.recipe.grid = c.build.grid;
  const auto widths = get<std::vector<int>>(r, "model.widths");
  if (widths.size() != kNumBlocks) throw ConfigError("model.widths", "model.widths must list 4 block widths");
  for (int i = 0; i < kNumBlocks; ++i) {
    if (widths[static_cast<std::size_t>(i)] < 1) throw ConfigError("model.widths", "model.widths must be >= 1");
    t.recipe.widths[static_cast<std::size_t>(i)] = widths[static_cast<std::size_t>(i)];
  }
  t.method = checked("train.method", [&] { return method_from_name(get<std::string>(r, "train.method")); });
  t.num_clients = get<int>(r, "train.num_clients");
  t.batch_size = get<int>(r, "train.batch_size");
  t.rounds = get<int>(r, "train.rounds");
  t.eta = get<double>(r, "train.eta");
  t.cut = get<int>(r, "train.cut");
  t.local_steps = get<int>(r, "train.local_steps");
  t.eval_every = get<int>(r, "train.eval_every");
  t.inference_mode = checked("train.inference_mode", [&] {
    return inference_mode_from_name(get<std::string>(r, "train.inference_mode"));
  });
  t.seed = c.seed;

  LinkBudget base;
  base.transmit_power_w = get<double>(r, "link.transmit_power_w");
  base.distance_m = get<double>(r, "link.distance_m");
  base.pathloss_alpha = get<double>(r, "link.pathloss_alpha");
  base.noise_variance_w = get<double>(r, "link.noise_variance_w");
  base.directions = {get<bool>(r, "link.ul_noisy"), get<bool>(r, "link.dl_noisy")};
  const FadingMode fading =
      checked("link.fading", [&] { return fading_from_name(get<std::string>(r, "link.fading")); });
  checked("link", [&] { base.validate(); });
  const json& snr = r.at("link").at("channel_snr_db");
  c.channel = snr.is_null() ? ChannelSnr{checked("link", [&] { return snr_db(base, 1.0); })}
                            : channel_from_json(snr, "link.channel_snr_db");
  t.link = checked("link", [&] { return make_link(c.channel, fading, base); });
  checked("train", [&] { t.validate(); });

  LatencyConfig& lat = c.latency.base;
  lat.bandwidth_hz = get<double>(r, "latency.bandwidth_hz");
  lat.gamma_ul_db = get<double>(r, "latency.gamma_ul_db");
  lat.gamma_dl_db = lat.gamma_ul_db;
  lat.dl_rate_factor = get<double>(r, "latency.dl_rate_factor");
  lat.beta_ul = lat.beta_dl = get<double>(r, "latency.beta_bits");
  lat.payload_dl = get<Index>(r, "latency.centamc_dl_payload");
  c.latency.tau_comp_s = get<double>(r, "latency.tau_comp_s");
  c.latency.ratios = get<std::vector<double>>(r, "latency.ratios");
  c.latency.cuts = get<std::vector<int>>(r, "latency.cuts");
  c.latency.rounds = get<int>(r, "latency.rounds");
  checked("latency", [&] { lat.validate(); });
  if (!(c.latency.tau_comp_s >= 0.0)) throw ConfigError("latency.tau_comp_s", "latency.tau_comp_s must be >= 0");
  if (c.latency.ratios.empty()) throw ConfigError("latency.ratios", "latency.ratios must be nonempty");
  for (double x : c.latency.ratios)
    if (!(x > 0.0)) throw ConfigError("latency.ratios", "latency.ratios must be > 0");
  for (int cut : c.latency.cuts)
    if (cut < 1 || cut >= kNumBlocks) throw ConfigError("latency.cuts", "latency.cuts must lie in {1, 2, 3}");
  if (c.latency.rounds < 1) throw ConfigError("latency.rounds", "latency.rounds must be >= 1");

  CompareSettings& cmp = c.compare;
  cmp.methods.clear();
  for (const auto& m : get<std::vector<std::string>>(r, "compare.methods"))
    cmp.methods.push_back(checked("compare.methods", [&] { return method_from_name(m); }));
  cmp.gamma_data_db = get<std::vector<double>>(r, "compare.gamma_data_db");
  cmp.channel_snr.clear();
  const json& snrs = r.at("compare").at("channel_snr_db");
  if (!snrs.is_array()) throw ConfigError("compare.channel_snr_db", "compare.channel_snr_db must be a list");
  for (const auto& v : snrs) cmp.channel_snr.push_back(channel_from_json(v, "compare.channel_snr_db"));
  cmp.fading.clear();
  for (const auto& f : get<std::vector<std::string>>(r, "compare.fading"))
    cmp.fading.push_back(checked("compare.fading", [&] { return fading_from_name(f); }));
  cmp.seeds = get<std::vector<std::uint64_t>>(r, "compare.seeds");
  if (cmp.methods.empty() || cmp.gamma_data_db.empty() || cmp.channel_snr.empty() || cmp.fading.empty() ||
      cmp.seeds.empty())
    throw ConfigError("compare", "compare lists must be nonempty");

  c.resolved = std::move(r);
  return c;
}

json load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("<file>", "config '" + path.string() + "' is not valid JSON: " + e.what());
  }
}

void apply_override(json& user, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError(assignment, "override must look like key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);

  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }

  json* node = &user;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot - start);
    if (part.empty()) throw ConfigError(key, "empty component in override key '" + key + "'");
    if (!node->is_object()) *node = json::object();
    if (dot == std::string::npos) {
      (*node)[part] = std::move(value);
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

}  // namespace splitamc
