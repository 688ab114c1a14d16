#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "splitamc/metrics.hpp"
#include "splitamc/trainers.hpp"

using namespace splitamc;

namespace {

NetRecipe tiny() {
  NetRecipe r;
  r.grid = 8;
  r.widths = {2, 4, 4, 4};
  return r;
}

// Three separable classes: a quadrant per class whose brightness grows with
// the label, plus uniform clutter.
LabeledImages synthetic(int per_class, std::uint64_t seed, int grid = 8) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 0.4);
  LabeledImages out;
  out.grid = grid;
  out.pixels.resize(3 * per_class, grid * grid);
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < per_class; ++i) {
      const Index r = c * per_class + i;
      for (int y = 0; y < grid; ++y)
        for (int x = 0; x < grid; ++x) {
          const bool lit = (c == 0 && y < grid / 2 && x < grid / 2) || (c == 1 && y >= grid / 2 && x >= grid / 2) ||
                           (c == 2 && y < grid / 2 && x >= grid / 2);
          out.pixels(r, y * grid + x) = u(rng) + (lit ? 0.5 * (c + 1) : 0.0);
        }
      out.labels.push_back(static_cast<std::uint8_t>(c));
    }
  return out;
}

TrainConfig base_config(Method m, int clients = 1) {
  TrainConfig c;
  c.method = m;
  c.num_clients = clients;
  c.batch_size = 8;
  c.rounds = 30;
  c.eta = 0.05;
  c.seed = 17;
  c.recipe = tiny();
  c.link = LinkBudget::noiseless();
  return c;
}

// Plain minibatch SGD on the unsplit network, written against the nn primitives.
std::vector<double> reference_sgd(const TrainConfig& cfg, const LabeledImages& data, VectorXd* final_params) {
  BlockNet net = BlockNet::initialized(cfg.recipe, derive_seed(cfg.seed, {stream::kInit}));
  Rng rng(derive_seed(cfg.seed, {stream::kBatch, 0}));
  std::vector<double> losses;
  for (int k = 0; k < cfg.rounds; ++k) {
    const auto rows = sample_batch(data.size(), cfg.batch_size, rng);
    const LabeledImages b = select_rows(data, rows);
    const FullGradients g = full_backward(net, make_input(b.pixels, data.grid), one_hot(b.labels, 3));
    losses.push_back(g.loss);
    net.params() -= cfg.eta * g.grad;
  }
  if (final_params) *final_params = net.params();
  return losses;
}

}  // namespace

TEST(Trainers, MethodNamesRoundTrip) {
  for (Method m : {Method::SplitAmc, Method::FedeAmc, Method::CentAmc})
    EXPECT_EQ(method_from_name(method_name(m)), m);
  for (InferenceMode m : {InferenceMode::LocalFullModel, InferenceMode::RemoteSmashed})
    EXPECT_EQ(inference_mode_from_name(inference_mode_name(m)), m);
  EXPECT_THROW(method_from_name("splitfed"), InvalidInput);
}

TEST(Trainers, SampleBatchWithoutReplacement) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    auto rows = sample_batch(40, 16, rng);
    ASSERT_EQ(rows.size(), 16u);
    std::sort(rows.begin(), rows.end());
    EXPECT_EQ(std::adjacent_find(rows.begin(), rows.end()), rows.end());
    EXPECT_GE(rows.front(), 0);
    EXPECT_LT(rows.back(), 40);
  }
  EXPECT_THROW(sample_batch(4, 5, rng), InvalidInput);
}

TEST(Trainers, CentralizedIsPlainSgd) {
  const LabeledImages data = synthetic(10, 1);
  TrainConfig cfg = base_config(Method::CentAmc);
  VectorXd expect_params;
  const auto expect = reference_sgd(cfg, data, &expect_params);
  const TrainResult r = train_centamc(cfg, std::span(&data, 1));
  ASSERT_EQ(r.records.size(), expect.size());
  for (std::size_t k = 0; k < expect.size(); ++k) EXPECT_EQ(r.records[k].loss, expect[k]) << k;
  EXPECT_LT((r.model.get_params() - expect_params).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Trainers, SingleClientSplitMatchesCentralizedPerStep) {
  const LabeledImages data = synthetic(10, 2);
  for (int cut = 1; cut <= 3; ++cut) {
    TrainConfig cfg = base_config(Method::SplitAmc);
    cfg.cut = cut;
    cfg.rounds = 200;
    VectorXd expect_params;
    const auto expect = reference_sgd(cfg, data, &expect_params);
    const TrainResult r = train_splitamc(cfg, std::span(&data, 1));
    double worst = 0.0;
    for (std::size_t k = 0; k < expect.size(); ++k) worst = std::max(worst, std::abs(r.records[k].loss - expect[k]));
    EXPECT_LE(worst, 1e-9) << "cut " << cut;
    EXPECT_LT((r.model.get_params() - expect_params).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT(expect.back(), expect.front());
  }
}

TEST(Trainers, SingleClientSingleStepFederatedMatchesSgd) {
  const LabeledImages data = synthetic(10, 3);
  TrainConfig cfg = base_config(Method::FedeAmc);
  cfg.rounds = 200;
  VectorXd expect_params;
  const auto expect = reference_sgd(cfg, data, &expect_params);
  const TrainResult r = train_fedeamc(cfg, std::span(&data, 1));
  double worst = 0.0;
  for (std::size_t k = 0; k < expect.size(); ++k) worst = std::max(worst, std::abs(r.records[k].loss - expect[k]));
  EXPECT_LE(worst, 1e-9);
  EXPECT_LT((r.model.get_params() - expect_params).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_EQ(r.aggregation_count, 200);
}

TEST(Trainers, ZeroLearningRateFreezesParameters) {
  const std::vector<LabeledImages> clients{synthetic(6, 4), synthetic(6, 5)};
  for (Method m : {Method::SplitAmc, Method::FedeAmc, Method::CentAmc}) {
    TrainConfig cfg = base_config(m, 2);
    cfg.eta = 0.0;
    cfg.rounds = 5;
    const VectorXd init = BlockNet::initialized(cfg.recipe, derive_seed(cfg.seed, {stream::kInit})).params();
    const VectorXd after = train(cfg, clients).model.get_params();
    if (m == Method::FedeAmc)  // averaging identical uploads may round in the last place
      EXPECT_LE((after - init).cwiseAbs().maxCoeff(), 1e-15) << method_name(m);
    else
      EXPECT_EQ(after, init) << method_name(m);
  }
}

TEST(Trainers, LowerSegmentIsHandedToNextClient) {
  const std::vector<LabeledImages> clients{synthetic(6, 6), synthetic(6, 7), synthetic(6, 8)};
  TrainConfig cfg = base_config(Method::SplitAmc, 3);
  cfg.link = LinkBudget::for_snr(10.0);
  cfg.rounds = 9;
  int calls = 0;
  TrainHooks hooks;
  hooks.on_round = [&](const RoundView& v) {
    ++calls;
    EXPECT_EQ(v.record.active_client, v.record.round % 3);
    const VectorXd& mine = v.client_params[static_cast<std::size_t>(v.record.active_client)];
    const VectorXd& next = v.client_params[static_cast<std::size_t>((v.record.active_client + 1) % 3)];
    EXPECT_EQ(mine, next);
  };
  const TrainResult r = train_splitamc(cfg, clients, hooks);
  EXPECT_EQ(calls, 9);
  for (const auto& rec : r.records) {
    EXPECT_GT(rec.h_realization, 0.0);
    EXPECT_EQ(rec.h_realization, 1.0);  // fixed fading
  }
}

TEST(Trainers, FederatedAggregateIsSizeWeightedMean) {
  std::vector<LabeledImages> clients{synthetic(4, 9), synthetic(8, 10)};
  TrainConfig cfg = base_config(Method::FedeAmc, 2);
  cfg.rounds = 3;
  cfg.local_steps = 2;
  TrainHooks hooks;
  hooks.on_round = [&](const RoundView& v) {
    ASSERT_EQ(v.client_params.size(), 2u);
    const VectorXd mean = (12.0 * v.client_params[0] + 24.0 * v.client_params[1]) / 36.0;
    EXPECT_LT((v.server_params - mean).cwiseAbs().maxCoeff(), 1e-14);
  };
  train_fedeamc(cfg, clients, hooks);
}

TEST(Trainers, IdenticalFullBatchClientsAggregateToTheirLocalModel) {
  const LabeledImages shard = synthetic(4, 11);
  const std::vector<LabeledImages> clients{shard, shard};
  TrainConfig cfg = base_config(Method::FedeAmc, 2);
  cfg.batch_size = static_cast<int>(shard.size());  // every local step sees the whole shard
  cfg.rounds = 4;
  TrainHooks hooks;
  hooks.on_round = [&](const RoundView& v) {
    EXPECT_LT((v.client_params[0] - v.client_params[1]).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((v.server_params - v.client_params[0]).cwiseAbs().maxCoeff(), 1e-12);
  };
  train_fedeamc(cfg, clients, hooks);
}

TEST(Trainers, NoiselessUploadIsExact) {
  const std::vector<LabeledImages> clients{synthetic(3, 12), synthetic(3, 13)};
  Rng rng(1);
  const LabeledImages pooled = upload_datasets(clients, LinkBudget::noiseless(), rng);
  EXPECT_EQ(pooled.pixels, concatenate(clients).pixels);
  EXPECT_EQ(pooled.labels, concatenate(clients).labels);
}

TEST(Trainers, NoisyUploadPerturbsWithLinkNoise) {
  const std::vector<LabeledImages> clients{synthetic(200, 14)};
  Rng rng(2);
  const LinkBudget link = LinkBudget::for_snr(0.0);  // unit noise std
  const LabeledImages pooled = upload_datasets(clients, link, rng);
  const double mean_abs = (pooled.pixels - clients[0].pixels).cwiseAbs().mean();
  const double expect = std::sqrt(2.0 / std::acos(-1.0));
  EXPECT_NEAR(mean_abs, expect, 0.02 * expect);
  EXPECT_EQ(pooled.labels, clients[0].labels);
}

TEST(Trainers, FrozenCentralizedModelIsNearChance) {
  const std::vector<LabeledImages> clients{synthetic(10, 15)};
  const LabeledImages test = synthetic(150, 16);
  TrainConfig cfg = base_config(Method::CentAmc);
  cfg.eta = 0.0;
  cfg.rounds = 10;
  cfg.eval_every = 10;
  TrainHooks hooks;
  hooks.eval_set = &test;
  const TrainResult r = train(cfg, clients, hooks);
  EXPECT_NEAR(*r.records.back().eval_accuracy, 100.0 / 3.0, 5.0);
}

TEST(Trainers, EvaluateCountsArgmaxMatches) {
  const LabeledImages test = synthetic(33, 16);
  const SplitModel model = split_at(BlockNet::initialized(tiny(), 5), 2);
  const auto predicted = argmax_rows(model.net.forward(make_input(test.pixels, test.grid)));
  Index correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) correct += predicted[i] == test.labels[i];
  Rng rng(0);
  const double expect = pcc(correct, test.size());
  EXPECT_DOUBLE_EQ(evaluate(model, test, InferenceMode::LocalFullModel, LinkBudget::noiseless(), rng, 7), expect);
  // a noiseless remote path is the same function
  EXPECT_DOUBLE_EQ(evaluate(model, test, InferenceMode::RemoteSmashed, LinkBudget::noiseless(), rng, 256), expect);
}

TEST(Trainers, TrainingLearnsSeparableClasses) {
  const std::vector<LabeledImages> clients{synthetic(30, 17), synthetic(30, 18)};
  const LabeledImages test = synthetic(30, 19);
  for (Method m : {Method::SplitAmc, Method::FedeAmc, Method::CentAmc}) {
    TrainConfig cfg = base_config(m, 2);
    cfg.recipe.widths = {4, 16, 32, 64};
    cfg.batch_size = 16;
    cfg.rounds = 600;
    cfg.eta = 1.0;
    cfg.eval_every = 600;
    TrainHooks hooks;
    hooks.eval_set = &test;
    const TrainResult r = train(cfg, clients, hooks);
    ASSERT_TRUE(r.records.back().eval_accuracy.has_value());
    EXPECT_GE(*r.records.back().eval_accuracy, 90.0) << method_name(m);
  }
}

TEST(Trainers, PayloadAccounting) {
  const std::vector<LabeledImages> clients{synthetic(5, 20), synthetic(5, 21)};
  TrainConfig cfg = base_config(Method::SplitAmc, 2);
  cfg.rounds = 4;
  cfg.cut = 2;
  TrainResult s = train(cfg, clients);
  const Index smashed = s.model.smashed_elems_per_sample() * cfg.batch_size;
  EXPECT_EQ(smashed, 4 * 2 * 2 * cfg.batch_size);  // 4 channels at 2x2 after two blocks on 8x8
  for (const auto& rec : s.records) {
    EXPECT_EQ(rec.ul_payload_elems, smashed);
    EXPECT_EQ(rec.dl_payload_elems, smashed);
  }

  cfg.method = Method::FedeAmc;
  TrainResult f = train(cfg, clients);
  EXPECT_EQ(f.aggregation_count, 4);
  for (const auto& rec : f.records) {
    EXPECT_EQ(rec.ul_payload_elems, f.model.net.num_params());
    EXPECT_EQ(rec.active_client, -1);
  }

  cfg.method = Method::CentAmc;
  TrainResult c = train(cfg, clients);
  EXPECT_EQ(c.uploaded_pixels, 10 * 3 * 64);
  EXPECT_EQ(c.records[0].ul_payload_elems, c.uploaded_pixels);
  EXPECT_EQ(c.records[1].ul_payload_elems, 0);
  EXPECT_EQ(c.aggregation_count, 0);
  EXPECT_EQ(centamc_payload(32, 32).ul, 32768);
  EXPECT_EQ(centamc_payload(32, 32).dl, 0);
}

TEST(Trainers, PeriodicEvaluationSchedule) {
  const std::vector<LabeledImages> clients{synthetic(5, 22)};
  const LabeledImages test = synthetic(5, 23);
  TrainConfig cfg = base_config(Method::CentAmc);
  cfg.rounds = 12;
  cfg.eval_every = 5;
  TrainHooks hooks;
  hooks.eval_set = &test;
  const TrainResult r = train(cfg, clients, hooks);
  for (const auto& rec : r.records)
    EXPECT_EQ(rec.eval_accuracy.has_value(), rec.round == 4 || rec.round == 9 || rec.round == 11) << rec.round;
}

TEST(Trainers, ReproducibleUnderSeed) {
  const std::vector<LabeledImages> clients{synthetic(5, 24), synthetic(5, 25)};
  for (Method m : {Method::SplitAmc, Method::FedeAmc, Method::CentAmc}) {
    TrainConfig cfg = base_config(m, 2);
    cfg.link = LinkBudget::for_snr(-10.0, FadingMode::Rayleigh);
    cfg.rounds = 6;
    const TrainResult a = train(cfg, clients);
    const TrainResult b = train(cfg, clients);
    EXPECT_EQ(a.records, b.records);
    EXPECT_EQ(a.model.get_params(), b.model.get_params());
    cfg.seed += 1;
    EXPECT_NE(train(cfg, clients).model.get_params(), a.model.get_params());
  }
}

TEST(Trainers, DivergenceStopsTraining) {
  const std::vector<LabeledImages> clients{synthetic(6, 26)};
  for (Method m : {Method::SplitAmc, Method::FedeAmc, Method::CentAmc}) {
    TrainConfig cfg = base_config(m);
    cfg.eta = 1e100;
    try {
      train(cfg, clients);
      ADD_FAILURE() << "expected NonFiniteLoss for " << method_name(m);
    } catch (const NonFiniteLoss& e) {
      EXPECT_GE(e.round, 1);
      ASSERT_EQ(e.records.size(), static_cast<std::size_t>(e.round) + 1);
      EXPECT_FALSE(std::isfinite(e.records.back().loss));
      for (std::size_t k = 0; k + 1 < e.records.size(); ++k) EXPECT_TRUE(std::isfinite(e.records[k].loss));
    }
  }
}

TEST(Trainers, ConfigurationErrors) {
  const std::vector<LabeledImages> one{synthetic(4, 27)};
  TrainConfig cfg = base_config(Method::SplitAmc, 2);
  EXPECT_THROW(train(cfg, one), InvalidInput);  // client count mismatch
  cfg = base_config(Method::SplitAmc);
  cfg.cut = 0;
  EXPECT_THROW(train(cfg, one), InvalidInput);
  cfg = base_config(Method::SplitAmc);
  cfg.eta = -0.1;
  EXPECT_THROW(train(cfg, one), InvalidInput);
  cfg = base_config(Method::CentAmc);
  cfg.batch_size = 100;
  EXPECT_THROW(train(cfg, one), InvalidInput);
  cfg = base_config(Method::FedeAmc);
  cfg.recipe.grid = 16;
  EXPECT_THROW(train(cfg, one), InvalidInput);
  cfg = base_config(Method::FedeAmc);
  EXPECT_THROW(train_splitamc(cfg, one), InvalidInput);
  const std::vector<LabeledImages> empty{LabeledImages{RowMatXd(0, 64), {}, 8}};
  EXPECT_THROW(train(base_config(Method::CentAmc), empty), InvalidInput);
}
