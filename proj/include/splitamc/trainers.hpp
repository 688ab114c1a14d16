#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "splitamc/airlink.hpp"
#include "splitamc/dataset.hpp"
#include "splitamc/nn.hpp"

namespace splitamc {

enum class Method { SplitAmc, FedeAmc, CentAmc };
enum class InferenceMode { LocalFullModel, RemoteSmashed };

std::string_view method_name(Method m);
Method method_from_name(std::string_view name);
std::string_view inference_mode_name(InferenceMode m);
InferenceMode inference_mode_from_name(std::string_view name);

struct TrainConfig {
  Method method = Method::SplitAmc;
  int num_clients = 2;
  int batch_size = 32;
  int rounds = 2000;
  double eta = 0.004;
  int cut = 1;          ///< splitamc; also the split used for remote inference
  int local_steps = 1;  ///< fedeamc
  LinkBudget link;
  int eval_every = 0;  ///< 0 disables periodic evaluation
  std::uint64_t seed = 0;
  InferenceMode inference_mode = InferenceMode::LocalFullModel;
  NetRecipe recipe;

  void validate() const;
};

/// One communication round. Payload counts are elements per client link, the
/// L_a^b quantities of the latency model.
struct RoundRecord {
  int round = 0;
  int active_client = -1;  ///< -1 when every client participates (fedeamc) or none (centamc)
  double loss = 0.0;
  Index ul_payload_elems = 0;
  Index dl_payload_elems = 0;
  double h_realization = 1.0;  ///< UL fading of the round (mean over uploading clients)
  std::optional<double> eval_accuracy;

  bool operator==(const RoundRecord&) const = default;
};

/// Thrown when a training loss turns NaN/inf. Carries the records up to and
/// including the failing round.
struct NonFiniteLoss : Error {
  NonFiniteLoss(int round, std::vector<RoundRecord> records);
  int round;
  std::vector<RoundRecord> records;
};

struct RoundView {
  const RoundRecord& record;
  std::span<const VectorXd> client_params;  ///< splitamc: per-client lower segments; fedeamc: uploaded models
  const VectorXd& server_params;            ///< splitamc: upper segment; others: global model
};

struct TrainHooks {
  std::function<void(const RoundView&)> on_round;
  const LabeledImages* eval_set = nullptr;  ///< used when cfg.eval_every > 0
};

struct TrainResult {
  SplitModel model;
  std::vector<RoundRecord> records;
  int aggregation_count = 0;  ///< fedeamc server aggregations
  Index uploaded_pixels = 0;  ///< centamc one-time dataset upload
};

TrainResult train_splitamc(const TrainConfig& cfg, std::span<const LabeledImages> clients,
                           const TrainHooks& hooks = {});
TrainResult train_fedeamc(const TrainConfig& cfg, std::span<const LabeledImages> clients,
                          const TrainHooks& hooks = {});
TrainResult train_centamc(const TrainConfig& cfg, std::span<const LabeledImages> clients,
                          const TrainHooks& hooks = {});
TrainResult train(const TrainConfig& cfg, std::span<const LabeledImages> clients, const TrainHooks& hooks = {});

/// Uploads every client's images through the UL channel, one transmission
/// per image; returns the pooled server-side dataset.
LabeledImages upload_datasets(std::span<const LabeledImages> clients, const LinkBudget& link, Rng& rng);

/// P_cc in percent. Local mode: noiseless full forward. Remote mode: smashed
/// data crosses the UL channel before the upper segment.
double evaluate(const SplitModel& model, const LabeledImages& test, InferenceMode mode, const LinkBudget& link,
                Rng& rng, Index batch = 256);

/// B row indices drawn without replacement.
std::vector<Index> sample_batch(Index n, int batch_size, Rng& rng);

/// Analytic payload sizes (elements per client link per round).
struct Payload {
  Index ul = 0;
  Index dl = 0;
};
Payload splitamc_payload(const SplitModel& model, int batch_size);
Payload fedeamc_payload(const BlockNet& net);
Payload centamc_payload(int grid, int batch_size);

}  // namespace splitamc
