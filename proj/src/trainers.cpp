#include "splitamc/trainers.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "splitamc/metrics.hpp"

namespace splitamc {

std::string_view method_name(Method m) {
  switch (m) {
    case Method::SplitAmc: return "splitamc";
    case Method::FedeAmc: return "fedeamc";
    case Method::CentAmc: return "centamc";
  }
  return "?";
}

Method method_from_name(std::string_view name) {
  if (name == "splitamc") return Method::SplitAmc;
  if (name == "fedeamc") return Method::FedeAmc;
  if (name == "centamc") return Method::CentAmc;
  throw InvalidInput("unknown method '" + std::string(name) + "'");
}

std::string_view inference_mode_name(InferenceMode m) {
  return m == InferenceMode::LocalFullModel ? "local_full_model" : "remote_smashed";
}

InferenceMode inference_mode_from_name(std::string_view name) {
  if (name == "local_full_model") return InferenceMode::LocalFullModel;
  if (name == "remote_smashed") return InferenceMode::RemoteSmashed;
  throw InvalidInput("unknown inference mode '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
  if (num_clients < 1) throw InvalidInput("num_clients must be >= 1");
  if (batch_size < 1) throw InvalidInput("batch_size must be >= 1");
  if (rounds < 1) throw InvalidInput("rounds must be >= 1");
  if (!(eta >= 0.0) || !std::isfinite(eta)) throw InvalidInput("eta must be finite and >= 0");
  if (cut < 1 || cut >= kNumBlocks) throw InvalidInput("cut must be in {1, 2, 3}");
  if (local_steps < 1) throw InvalidInput("local_steps must be >= 1");
  if (eval_every < 0) throw InvalidInput("eval_every must be >= 0");
  link.validate();
}

NonFiniteLoss::NonFiniteLoss(int round_, std::vector<RoundRecord> records_)
    : Error("non-finite loss at round " + std::to_string(round_)), round(round_), records(std::move(records_)) {}

std::vector<Index> sample_batch(Index n, int batch_size, Rng& rng) {
  if (batch_size > n)
    throw InvalidInput("batch size " + std::to_string(batch_size) + " exceeds local dataset size " +
                       std::to_string(n));
  std::vector<Index> pool(static_cast<std::size_t>(n));
  std::iota(pool.begin(), pool.end(), Index{0});
  for (int i = 0; i < batch_size; ++i) {
    std::uniform_int_distribution<Index> pick(i, n - 1);
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(pick(rng))]);
  }
  pool.resize(static_cast<std::size_t>(batch_size));
  return pool;
}

Payload splitamc_payload(const SplitModel& model, int batch_size) {
  const Index elems = model.smashed_elems_per_sample() * batch_size;
  return {elems, elems};
}

Payload fedeamc_payload(const BlockNet& net) { return {net.num_params(), net.num_params()}; }

Payload centamc_payload(int grid, int batch_size) {
  return {static_cast<Index>(grid) * grid * batch_size, 0};
}

namespace {

struct Batch {
  Tensor x;
  Tensor y;
};

Batch draw_batch(const LabeledImages& data, int batch_size, int num_classes, Rng& rng) {
  const auto rows = sample_batch(data.size(), batch_size, rng);
  const LabeledImages picked = select_rows(data, rows);
  return {make_input(picked.pixels, data.grid), one_hot(picked.labels, num_classes)};
}

void check_clients(const TrainConfig& cfg, std::span<const LabeledImages> clients) {
  if (static_cast<int>(clients.size()) != cfg.num_clients)
    throw InvalidInput("expected " + std::to_string(cfg.num_clients) + " client datasets, got " +
                       std::to_string(clients.size()));
  for (const auto& c : clients) {
    if (c.size() == 0) throw InvalidInput("client dataset is empty");
    if (c.grid != cfg.recipe.grid) throw InvalidInput("client image grid differs from the model recipe");
  }
}

std::vector<Rng> client_batch_rngs(const TrainConfig& cfg) {
  std::vector<Rng> rngs;
  for (int m = 0; m < cfg.num_clients; ++m)
    rngs.emplace_back(derive_seed(cfg.seed, {stream::kBatch, static_cast<std::uint64_t>(m)}));
  return rngs;
}

SplitModel initial_model(const TrainConfig& cfg) {
  return split_at(BlockNet::initialized(cfg.recipe, derive_seed(cfg.seed, {stream::kInit})), cfg.cut);
}

class Evaluator {
 public:
  Evaluator(const TrainConfig& cfg, const TrainHooks& hooks)
      : cfg_(cfg), hooks_(hooks), rng_(derive_seed(cfg.seed, {stream::kEval})) {}

  void maybe(int round, const SplitModel& model, RoundRecord& rec) {
    if (cfg_.eval_every <= 0 || hooks_.eval_set == nullptr) return;
    if ((round + 1) % cfg_.eval_every != 0 && round + 1 != cfg_.rounds) return;
    rec.eval_accuracy = evaluate(model, *hooks_.eval_set, cfg_.inference_mode, cfg_.link, rng_);
  }

 private:
  const TrainConfig& cfg_;
  const TrainHooks& hooks_;
  Rng rng_;
};

void check_loss(double loss, int round, std::vector<RoundRecord>& records, RoundRecord rec) {
  if (std::isfinite(loss)) return;
  records.push_back(rec);
  throw NonFiniteLoss(round, std::move(records));
}

}  // namespace

TrainResult train_splitamc(const TrainConfig& cfg, std::span<const LabeledImages> clients, const TrainHooks& hooks) {
  cfg.validate();
  if (cfg.method != Method::SplitAmc) throw InvalidInput("train_splitamc requires method = splitamc");
  check_clients(cfg, clients);

  TrainResult result{initial_model(cfg), {}, 0, 0};
  SplitModel& model = result.model;
  const int classes = cfg.recipe.num_classes;
  const Payload payload = splitamc_payload(model, cfg.batch_size);

  std::vector<VectorXd> lowers(static_cast<std::size_t>(cfg.num_clients), model.get_lower());
  auto batch_rngs = client_batch_rngs(cfg);
  Rng channel_rng(derive_seed(cfg.seed, {stream::kChannel}));
  Evaluator evaluator(cfg, hooks);
  result.records.reserve(static_cast<std::size_t>(cfg.rounds));

  for (int k = 0; k < cfg.rounds; ++k) {
    const auto m = static_cast<std::size_t>(k % cfg.num_clients);
    VectorXd& lower = lowers[m];

    // Client-side FP and UL of the smashed data; labels travel error-free.
    const Batch batch = draw_batch(clients[m], cfg.batch_size, classes, batch_rngs[m]);
    LowerContext lower_ctx;
    const Tensor smashed = forward_lower(model, lower, batch.x, &lower_ctx);
    if (!smashed.values.allFinite()) {
      // a diverged client segment; report it as the loss it would produce
      RoundRecord rec;
      rec.round = k;
      rec.active_client = static_cast<int>(m);
      rec.loss = std::numeric_limits<double>::quiet_NaN();
      check_loss(rec.loss, k, result.records, rec);
    }
    const Transmission ul = transmit(smashed, cfg.link, Direction::UL, channel_rng);

    // Server-side FP, loss, BP and update of w_s.
    UpperContext upper_ctx;
    forward_upper(model, ul.received, &upper_ctx);
    UpperGradients up = backward_upper(model, upper_ctx, batch.y);

    RoundRecord rec;
    rec.round = k;
    rec.active_client = static_cast<int>(m);
    rec.loss = up.loss;
    rec.ul_payload_elems = payload.ul;
    rec.dl_payload_elems = payload.dl;
    rec.h_realization = ul.realization.h;
    check_loss(up.loss, k, result.records, rec);

    sgd_step(model.net.params().tail(model.upper_size()), up.g_ws, cfg.eta);

    // DL of the cut-layer gradient; the client chains it through h.
    Transmission dl = transmit(up.g_sbar, cfg.link, Direction::DL, channel_rng);
    dl.received.values *= ul.realization.h;
    const VectorXd g_wc = backward_lower(model, lower, lower_ctx, dl.received);
    sgd_step(lower, g_wc, cfg.eta);

    // Hand-off of w_c to the next client.
    lowers[(m + 1) % lowers.size()] = lower;
    model.set_lower(lower);

    evaluator.maybe(k, model, rec);
    result.records.push_back(rec);
    if (hooks.on_round) {
      const VectorXd upper = model.get_upper();
      hooks.on_round(RoundView{result.records.back(), lowers, upper});
    }
  }
  return result;
}

TrainResult train_fedeamc(const TrainConfig& cfg, std::span<const LabeledImages> clients, const TrainHooks& hooks) {
  cfg.validate();
  if (cfg.method != Method::FedeAmc) throw InvalidInput("train_fedeamc requires method = fedeamc");
  check_clients(cfg, clients);

  TrainResult result{initial_model(cfg), {}, 0, 0};
  SplitModel& model = result.model;
  const int classes = cfg.recipe.num_classes;
  const Payload payload = fedeamc_payload(model.net);

  std::vector<double> sizes;
  for (const auto& c : clients) sizes.push_back(static_cast<double>(c.size()));

  auto batch_rngs = client_batch_rngs(cfg);
  Rng channel_rng(derive_seed(cfg.seed, {stream::kChannel}));
  Evaluator evaluator(cfg, hooks);
  BlockNet work = model.net;
  std::vector<VectorXd> uploads(clients.size());
  result.records.reserve(static_cast<std::size_t>(cfg.rounds));

  for (int k = 0; k < cfg.rounds; ++k) {
    double loss_sum = 0.0;
    double h_sum = 0.0;
    for (std::size_t m = 0; m < clients.size(); ++m) {
      VectorXd local = model.net.params();
      transmit_inplace(local, cfg.link, Direction::DL, channel_rng);
      work.params() = std::move(local);
      for (int e = 0; e < cfg.local_steps; ++e) {
        const Batch batch = draw_batch(clients[m], cfg.batch_size, classes, batch_rngs[m]);
        const FullGradients g = full_backward(work, batch.x, batch.y);
        loss_sum += g.loss;
        if (!std::isfinite(g.loss)) {
          RoundRecord rec;
          rec.round = k;
          rec.loss = g.loss;
          check_loss(g.loss, k, result.records, rec);
        }
        sgd_step(work.params(), g.grad, cfg.eta);
      }
      uploads[m] = work.params();
      h_sum += transmit_inplace(uploads[m], cfg.link, Direction::UL, channel_rng).h;
    }

    RoundRecord rec;
    rec.round = k;
    rec.loss = loss_sum / static_cast<double>(clients.size() * static_cast<std::size_t>(cfg.local_steps));
    rec.ul_payload_elems = payload.ul;
    rec.dl_payload_elems = payload.dl;
    rec.h_realization = h_sum / static_cast<double>(clients.size());
    check_loss(rec.loss, k, result.records, rec);

    model.net.params() = weighted_average(uploads, sizes);
    ++result.aggregation_count;

    evaluator.maybe(k, model, rec);
    result.records.push_back(rec);
    if (hooks.on_round) hooks.on_round(RoundView{result.records.back(), uploads, model.net.params()});
  }
  return result;
}

LabeledImages upload_datasets(std::span<const LabeledImages> clients, const LinkBudget& link, Rng& rng) {
  LabeledImages pooled = concatenate(clients);
  for (Index r = 0; r < pooled.size(); ++r) {
    VectorXd row = pooled.pixels.row(r).transpose();
    transmit_inplace(row, link, Direction::UL, rng);
    pooled.pixels.row(r) = row.transpose();
  }
  return pooled;
}

TrainResult train_centamc(const TrainConfig& cfg, std::span<const LabeledImages> clients, const TrainHooks& hooks) {
  cfg.validate();
  if (cfg.method != Method::CentAmc) throw InvalidInput("train_centamc requires method = centamc");
  check_clients(cfg, clients);

  TrainResult result{initial_model(cfg), {}, 0, 0};
  SplitModel& model = result.model;
  const int classes = cfg.recipe.num_classes;

  Rng channel_rng(derive_seed(cfg.seed, {stream::kChannel}));
  const LabeledImages server = upload_datasets(clients, cfg.link, channel_rng);
  result.uploaded_pixels = server.pixels.size();

  Rng batch_rng(derive_seed(cfg.seed, {stream::kBatch, 0}));
  Evaluator evaluator(cfg, hooks);
  result.records.reserve(static_cast<std::size_t>(cfg.rounds));

  for (int k = 0; k < cfg.rounds; ++k) {
    const Batch batch = draw_batch(server, cfg.batch_size, classes, batch_rng);
    const FullGradients g = full_backward(model.net, batch.x, batch.y);

    RoundRecord rec;
    rec.round = k;
    rec.loss = g.loss;
    rec.ul_payload_elems = k == 0 ? result.uploaded_pixels : 0;
    rec.dl_payload_elems = 0;
    check_loss(g.loss, k, result.records, rec);

    sgd_step(model.net.params(), g.grad, cfg.eta);
    evaluator.maybe(k, model, rec);
    result.records.push_back(rec);
    if (hooks.on_round) hooks.on_round(RoundView{result.records.back(), {}, model.net.params()});
  }
  return result;
}

TrainResult train(const TrainConfig& cfg, std::span<const LabeledImages> clients, const TrainHooks& hooks) {
  switch (cfg.method) {
    case Method::SplitAmc: return train_splitamc(cfg, clients, hooks);
    case Method::FedeAmc: return train_fedeamc(cfg, clients, hooks);
    case Method::CentAmc: return train_centamc(cfg, clients, hooks);
  }
  throw InvalidInput("unknown method");
}

double evaluate(const SplitModel& model, const LabeledImages& test, InferenceMode mode, const LinkBudget& link,
                Rng& rng, Index batch) {
  if (test.size() == 0) throw InvalidInput("evaluate: empty test set");
  Index correct = 0;
  for (Index start = 0; start < test.size(); start += batch) {
    const Index n = std::min(batch, test.size() - start);
    const Tensor x = make_input(test.pixels.middleRows(start, n), test.grid);
    Tensor scores;
    if (mode == InferenceMode::LocalFullModel) {
      scores = model.net.forward(x);
    } else {
      const Tensor smashed = forward_lower(model, x);
      scores = forward_upper(model, transmit(smashed, link, Direction::UL, rng).received);
    }
    const auto predicted = argmax_rows(scores);
    for (Index i = 0; i < n; ++i)
      if (predicted[static_cast<std::size_t>(i)] == test.labels[static_cast<std::size_t>(start + i)]) ++correct;
  }
  return pcc(correct, test.size());
}

}  // namespace splitamc
