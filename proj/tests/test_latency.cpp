#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "splitamc/latency.hpp"

using namespace splitamc;

namespace {

LatencyConfig payloads(Index ul, Index dl, double lambda = 1.0, double tau = 0.0) {
  LatencyConfig c;
  c.payload_ul = ul;
  c.payload_dl = dl;
  c.lambda = lambda;
  c.tau_comp_s = tau;
  return c;
}

}  // namespace

TEST(Latency, ShannonRateAtTenDb) {
  const double expect = 1e7 * std::log(11.0) / std::log(2.0);
  EXPECT_NEAR(rate(10e6, 10.0), expect, expect * 1e-12);
  EXPECT_NEAR(rate(10e6, 10.0), 3.4594e7, 1e3);
}

TEST(Latency, RateLimits) {
  EXPECT_NEAR(rate(5e6, 0.0), 5e6, 1e-6);
  EXPECT_EQ(rate(5e6, -std::numeric_limits<double>::infinity()), 0.0);
  EXPECT_LT(rate(5e6, -100.0), 1e-3);
  EXPECT_THROW(rate(0.0, 10.0), InvalidInput);
  EXPECT_THROW(rate(-1.0, 10.0), InvalidInput);
}

TEST(Latency, CommLatency) {
  EXPECT_DOUBLE_EQ(comm_latency(2, 32.0, 64.0), 1.0);
  EXPECT_EQ(comm_latency(0, 32.0, 64.0), 0.0);
  const double r = 1e7 * std::log(11.0) / std::log(2.0);
  const double expect = 65536.0 * 32.0 / r;
  EXPECT_NEAR(comm_latency(65536, 32.0, rate(10e6, 10.0)), expect, expect * 1e-6);
  EXPECT_NEAR(comm_latency(65536, 32.0, rate(10e6, 10.0)), 0.06062, 5e-6);
  EXPECT_THROW(comm_latency(1, 32.0, 0.0), InvalidInput);
  EXPECT_THROW(comm_latency(1, 32.0, -5.0), InvalidInput);
}

TEST(Latency, TableOneRows) {
  const LatencyConfig c = payloads(1000, 1000, 0.25, 1e-3);
  const auto s = round_latency(Method::SplitAmc, c);
  const auto f = round_latency(Method::FedeAmc, c);
  const auto z = round_latency(Method::CentAmc, c);
  EXPECT_DOUBLE_EQ(s.t_client, 2.5e-4);
  EXPECT_DOUBLE_EQ(f.t_client, 1e-3);
  EXPECT_EQ(z.t_client, 0.0);
  for (const auto& b : {s, f, z}) {
    EXPECT_EQ(b.t_server, 0.0);
    EXPECT_DOUBLE_EQ(b.total, b.t_ul + b.t_dl + b.t_client + b.t_server);
  }
  // R_DL = 10 R_UL by default
  EXPECT_NEAR(s.t_dl, s.t_ul / 10.0, 1e-18);
}

TEST(Latency, ExplicitDownlinkSnr) {
  LatencyConfig c = payloads(100, 100);
  c.dl_rate_factor.reset();
  c.gamma_dl_db = 20.0;
  const auto b = round_latency(Method::FedeAmc, c);
  EXPECT_NEAR(b.t_dl, 100.0 * 32.0 / (1e7 * std::log2(101.0)), 1e-15);
}

TEST(Latency, ConfigValidation) {
  LatencyConfig c;
  c.lambda = 1.5;
  EXPECT_THROW(round_latency(Method::SplitAmc, c), InvalidInput);
  c = {};
  c.beta_ul = 0.0;
  EXPECT_THROW(round_latency(Method::SplitAmc, c), InvalidInput);
  c = {};
  c.tau_comp_s = -1.0;
  EXPECT_THROW(round_latency(Method::SplitAmc, c), InvalidInput);
  c = {};
  c.dl_rate_factor = 0.0;
  EXPECT_THROW(round_latency(Method::SplitAmc, c), InvalidInput);
}

TEST(Latency, EqualPayloadsAndFullLambdaCoincide) {
  const std::vector<LatencyScenario> sc{{"splitamc_cut1", Method::SplitAmc, payloads(5000, 5000, 1.0)},
                                        {"fedeamc", Method::FedeAmc, payloads(5000, 5000, 1.0)}};
  const std::vector<double> ratios{10.0, 1.0, 0.1};
  const auto rows = sweep_ratio(sc, ratios, 50, 0.01);
  ASSERT_EQ(rows.size(), 6u);
  for (std::size_t i = 0; i < rows.size(); i += 2) EXPECT_DOUBLE_EQ(rows[i].totals.total, rows[i + 1].totals.total);
}

TEST(Latency, SweepScalesComputeWithRatioAndRounds) {
  const std::vector<LatencyScenario> sc{{"fedeamc", Method::FedeAmc, payloads(0, 0)}};
  const std::vector<double> ratios{2.0};
  const auto rows = sweep_ratio(sc, ratios, 7, 0.5);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_DOUBLE_EQ(rows[0].totals.t_client, 7 * 2.0 * 0.5);
  EXPECT_THROW(sweep_ratio(sc, std::vector<double>{0.0}, 7, 0.5), InvalidInput);
  EXPECT_THROW(sweep_ratio(sc, ratios, 0, 0.5), InvalidInput);
}

TEST(Latency, CentralizedVanishesWithFastLink) {
  LatencyConfig c = payloads(32768, 0);
  c.bandwidth_hz = 1e15;  // tau_comm = 1/R_UL -> 0
  const std::vector<LatencyScenario> sc{{"centamc", Method::CentAmc, c}};
  const auto rows = sweep_ratio(sc, std::vector<double>{10.0}, 50, 1.0);
  EXPECT_LT(rows[0].totals.total, 1e-6);
  EXPECT_EQ(rows[0].totals.t_client, 0.0);
}

TEST(Latency, MonotoneInPayloadRateAndCompute) {
  Rng rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    LatencyConfig c = payloads(1 + static_cast<Index>(u(rng) * 1e5), static_cast<Index>(u(rng) * 1e5), u(rng),
                               u(rng) * 1e-2);
    c.gamma_ul_db = -5.0 + 30.0 * u(rng);
    c.beta_ul = c.beta_dl = 8.0 + 24.0 * u(rng);
    for (Method m : {Method::SplitAmc, Method::FedeAmc, Method::CentAmc}) {
      const double base = round_latency(m, c).total;
      LatencyConfig more = c;
      more.payload_ul += 100;
      EXPECT_GE(round_latency(m, more).total, base);
      more = c;
      more.beta_ul *= 2.0;
      EXPECT_GE(round_latency(m, more).total, base);
      more = c;
      more.tau_comp_s *= 2.0;
      EXPECT_GE(round_latency(m, more).total, base);
      more = c;
      more.gamma_ul_db += 3.0;
      EXPECT_LE(round_latency(m, more).total, base);
      more = c;
      *more.dl_rate_factor *= 2.0;
      EXPECT_LE(round_latency(m, more).total, base);
      const double tc = round_latency(m, c).t_client;
      EXPECT_GE(tc, 0.0);
      EXPECT_LE(tc, c.tau_comp_s);
    }
  }
}

TEST(Latency, DefaultScenariosFromModelShapes) {
  const BlockNet net(NetRecipe{});
  const std::vector<int> cuts{1, 2, 3};
  const auto sc = default_scenarios(net, cuts, 32, LatencyConfig{});
  ASSERT_EQ(sc.size(), 5u);
  EXPECT_EQ(sc[0].label, "splitamc_cut1");
  EXPECT_EQ(sc[3].label, "fedeamc");
  EXPECT_EQ(sc[4].label, "centamc");
  // widths 4,16,64,256 on 32x32: block outputs 4x16x16, 16x8x8, 64x4x4
  EXPECT_EQ(sc[0].cfg.payload_ul, 32 * 4 * 16 * 16);
  EXPECT_EQ(sc[1].cfg.payload_ul, 32 * 16 * 8 * 8);
  EXPECT_EQ(sc[2].cfg.payload_ul, 32 * 64 * 4 * 4);
  EXPECT_EQ(sc[0].cfg.payload_dl, sc[0].cfg.payload_ul);
  EXPECT_EQ(sc[3].cfg.payload_ul, net.num_params());
  EXPECT_EQ(sc[3].cfg.payload_dl, net.num_params());
  EXPECT_EQ(sc[4].cfg.payload_ul, 32 * 32 * 32);
  EXPECT_EQ(sc[4].cfg.payload_dl, 0);
  EXPECT_LT(sc[0].cfg.lambda, sc[1].cfg.lambda);
  EXPECT_LT(sc[1].cfg.lambda, sc[2].cfg.lambda);

  const auto defaults = default_scenarios(net, std::vector<int>{1}, 32, LatencyConfig{});
  const auto rows =
      sweep_ratio(defaults, std::vector<double>{10.0, 1.0, 0.1}, 50, model_upload_time(net, LatencyConfig{}));
  EXPECT_EQ(rows.size(), 9u);
}
