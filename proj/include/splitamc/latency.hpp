#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "splitamc/trainers.hpp"

namespace splitamc {

/// Shannon rate BW * log2(1 + 10^(gamma_db / 10)); gamma = -inf gives 0.
double rate(double bandwidth_hz, double gamma_db);

/// L * beta / R seconds. R must be > 0.
double comm_latency(Index num_elems, double beta_bits, double rate_bps);

/// Static (h = 1) per-round latency inputs of one method.
struct LatencyConfig {
  double bandwidth_hz = 10e6;
  double gamma_ul_db = 10.0;
  double gamma_dl_db = 10.0;
  /// When set, R_DL = factor * R_UL and gamma_dl_db is ignored.
  std::optional<double> dl_rate_factor = 10.0;
  double beta_ul = 32.0;
  double beta_dl = 32.0;
  double tau_comp_s = 0.0;  ///< unit client computing time
  double lambda = 1.0;      ///< splitamc client share of the computation
  Index payload_ul = 0;
  Index payload_dl = 0;

  void validate() const;
  double rate_ul() const;
  double rate_dl() const;
};

struct LatencyBreakdown {
  double t_ul = 0.0;
  double t_dl = 0.0;
  double t_client = 0.0;
  double t_server = 0.0;  ///< infinite server capacity: always 0
  double total = 0.0;
};

LatencyBreakdown round_latency(Method method, const LatencyConfig& cfg);

struct LatencyScenario {
  std::string label;  ///< e.g. "splitamc_cut1"
  Method method = Method::SplitAmc;
  LatencyConfig cfg;
};

struct SweepRow {
  std::string label;
  double ratio = 0.0;  ///< tau_comp : tau_comm
  LatencyBreakdown totals;
};

/// For each ratio r and scenario, tau_comp = r * tau_unit and the K-round
/// totals are reported. tau_unit is the communication time scale against
/// which the computation time is expressed.
std::vector<SweepRow> sweep_ratio(std::span<const LatencyScenario> scenarios, std::span<const double> ratios,
                                  int rounds, double tau_unit_s);

/// tau_comm = 1/R_UL expressed per full-model upload: |w| * beta_ul / R_UL.
double model_upload_time(const BlockNet& net, const LatencyConfig& base);

/// Payloads and lambda from the actual model: splitamc once per cut, then
/// fedeamc and centamc.
std::vector<LatencyScenario> default_scenarios(const BlockNet& net, std::span<const int> cuts, int batch_size,
                                               const LatencyConfig& base);

void write_sweep_csv(std::span<const SweepRow> rows, const std::filesystem::path& path);

}  // namespace splitamc
