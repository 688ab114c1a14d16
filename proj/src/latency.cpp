#include "splitamc/latency.hpp"

#include <cmath>
#include <fstream>

#include "splitamc/metrics.hpp"

namespace splitamc {

double rate(double bandwidth_hz, double gamma_db) {
  if (!(bandwidth_hz > 0.0)) throw InvalidInput("bandwidth must be > 0");
  if (std::isnan(gamma_db)) throw InvalidInput("gamma must not be NaN");
  return bandwidth_hz * std::log2(1.0 + std::pow(10.0, gamma_db / 10.0));
}

double comm_latency(Index num_elems, double beta_bits, double rate_bps) {
  if (!(rate_bps > 0.0)) throw InvalidInput("rate must be > 0");
  if (num_elems < 0) throw InvalidInput("payload must be >= 0");
  return static_cast<double>(num_elems) * beta_bits / rate_bps;
}

void LatencyConfig::validate() const {
  if (!(bandwidth_hz > 0.0)) throw InvalidInput("bandwidth must be > 0");
  if (!(beta_ul > 0.0) || !(beta_dl > 0.0)) throw InvalidInput("beta must be > 0");
  if (!(tau_comp_s >= 0.0)) throw InvalidInput("tau_comp must be >= 0");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw InvalidInput("lambda must lie in [0, 1]");
  if (payload_ul < 0 || payload_dl < 0) throw InvalidInput("payloads must be >= 0");
  if (dl_rate_factor && !(*dl_rate_factor > 0.0)) throw InvalidInput("dl_rate_factor must be > 0");
}

double LatencyConfig::rate_ul() const { return rate(bandwidth_hz, gamma_ul_db); }

double LatencyConfig::rate_dl() const {
  return dl_rate_factor ? *dl_rate_factor * rate_ul() : rate(bandwidth_hz, gamma_dl_db);
}

LatencyBreakdown round_latency(Method method, const LatencyConfig& cfg) {
  cfg.validate();
  LatencyBreakdown b;
  b.t_ul = cfg.payload_ul == 0 ? 0.0 : comm_latency(cfg.payload_ul, cfg.beta_ul, cfg.rate_ul());
  b.t_dl = cfg.payload_dl == 0 ? 0.0 : comm_latency(cfg.payload_dl, cfg.beta_dl, cfg.rate_dl());
  switch (method) {
    case Method::SplitAmc: b.t_client = cfg.lambda * cfg.tau_comp_s; break;
    case Method::FedeAmc: b.t_client = cfg.tau_comp_s; break;
    case Method::CentAmc: b.t_client = 0.0; break;
  }
  b.total = b.t_ul + b.t_dl + b.t_client + b.t_server;
  return b;
}

std::vector<SweepRow> sweep_ratio(std::span<const LatencyScenario> scenarios, std::span<const double> ratios,
                                  int rounds, double tau_unit_s) {
  if (rounds < 1) throw InvalidInput("rounds must be >= 1");
  if (!(tau_unit_s >= 0.0)) throw InvalidInput("tau unit must be >= 0");
  std::vector<SweepRow> rows;
  for (double r : ratios) {
    if (!(r > 0.0)) throw InvalidInput("ratios must be > 0");
    for (const auto& sc : scenarios) {
      LatencyConfig cfg = sc.cfg;
      cfg.tau_comp_s = r * tau_unit_s;
      const LatencyBreakdown per = round_latency(sc.method, cfg);
      const double k = rounds;
      rows.push_back({sc.label, r, {per.t_ul * k, per.t_dl * k, per.t_client * k, per.t_server * k, per.total * k}});
    }
  }
  return rows;
}

double model_upload_time(const BlockNet& net, const LatencyConfig& base) {
  return comm_latency(net.num_params(), base.beta_ul, base.rate_ul());
}

std::vector<LatencyScenario> default_scenarios(const BlockNet& net, std::span<const int> cuts, int batch_size,
                                               const LatencyConfig& base) {
  std::vector<LatencyScenario> out;
  for (int cut : cuts) {
    const SplitModel model = split_at(net, cut);
    const Payload p = splitamc_payload(model, batch_size);
    LatencyConfig cfg = base;
    cfg.payload_ul = p.ul;
    cfg.payload_dl = p.dl;
    cfg.lambda = model.lambda;
    out.push_back({"splitamc_cut" + std::to_string(cut), Method::SplitAmc, cfg});
  }
  {
    const Payload p = fedeamc_payload(net);
    LatencyConfig cfg = base;
    cfg.payload_ul = p.ul;
    cfg.payload_dl = p.dl;
    out.push_back({"fedeamc", Method::FedeAmc, cfg});
  }
  {
    const Payload p = centamc_payload(net.recipe().grid, batch_size);
    LatencyConfig cfg = base;
    cfg.payload_ul = p.ul;
    cfg.payload_dl = base.payload_dl;
    out.push_back({"centamc", Method::CentAmc, cfg});
  }
  return out;
}

void write_sweep_csv(std::span<const SweepRow> rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "method,ratio,t_ul,t_dl,t_client,total\n";
  for (const auto& r : rows)
    out << r.label << ',' << format_number(r.ratio) << ',' << format_number(r.totals.t_ul) << ','
        << format_number(r.totals.t_dl) << ',' << format_number(r.totals.t_client) << ','
        << format_number(r.totals.total) << '\n';
  out.close();
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace splitamc
