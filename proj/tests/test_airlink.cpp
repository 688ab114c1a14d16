#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "splitamc/airlink.hpp"

using namespace splitamc;

namespace {

Tensor random_tensor(std::vector<Index> shape, std::uint64_t seed, double scale = 1.0) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  for (Index k = 0; k < t.numel(); ++k) t.values[k] = n(rng);
  return t;
}

}  // namespace

TEST(Airlink, ReferenceBudgetIsTenDb) {
  LinkBudget b;
  b.transmit_power_w = 0.1;
  b.distance_m = 100.0;
  b.pathloss_alpha = 2.0;
  b.noise_variance_w = 1e-6;
  EXPECT_EQ(snr_db(b, 1.0), 10.0);
}

TEST(Airlink, SnrScalesWithFadingAndDistance) {
  LinkBudget b;
  EXPECT_NEAR(snr_db(b, 2.0), 10.0 + 10.0 * std::log10(2.0), 1e-12);
  b.distance_m = 200.0;
  EXPECT_NEAR(snr_db(b, 1.0), 10.0 - 20.0 * std::log10(2.0), 1e-12);
  b.pathloss_alpha = 3.0;
  EXPECT_NEAR(snr_db(b, 1.0), 10.0 * std::log10(0.1 * std::pow(200.0, -3.0) / 1e-6), 1e-12);
}

TEST(Airlink, ZeroFadingIsMinusInfinity) {
  try {
    snr_db(LinkBudget{}, 0.0);
    FAIL();
  } catch (const InfiniteSnr& e) {
    EXPECT_FALSE(e.positive);
  }
  EXPECT_THROW(snr_db(LinkBudget{}, -1.0), InvalidInput);
}

TEST(Airlink, BudgetValidation) {
  LinkBudget b;
  b.noise_variance_w = 0.0;
  EXPECT_THROW(b.validate(), InvalidInput);
  b = {};
  b.pathloss_alpha = 1.5;
  EXPECT_THROW(b.validate(), InvalidInput);
  b = {};
  b.distance_m = -1.0;
  EXPECT_THROW(b.validate(), InvalidInput);
  b = {};
  b.transmit_power_w = 0.0;
  EXPECT_THROW(b.validate(), InvalidInput);
}

TEST(Airlink, NoiseStdForTargetSnr) {
  EXPECT_NEAR(noise_std_for_target_snr(-10.0), std::sqrt(10.0), 1e-12);
  EXPECT_NEAR(noise_std_for_target_snr(0.0), 1.0, 1e-15);
  EXPECT_NEAR(noise_std_for_target_snr(20.0), 0.1, 1e-15);
  EXPECT_THROW(noise_std_for_target_snr(std::numeric_limits<double>::infinity()), InvalidInput);
}

TEST(Airlink, ForSnrRoundTrip) {
  for (double g : {-10.0, 0.0, 7.5, 30.0}) {
    const LinkBudget b = LinkBudget::for_snr(g);
    EXPECT_NEAR(snr_db(b, 1.0), g, 1e-12);
    EXPECT_NEAR(link_noise_std(b), std::pow(10.0, -g / 20.0), 1e-12);
  }
}

TEST(Airlink, RayleighPowerFadingHasUnitMean) {
  Rng rng(11);
  const int n = 200000;
  double sum = 0.0, sum2 = 0.0;
  for (int k = 0; k < n; ++k) {
    const double h = draw_fading(FadingMode::Rayleigh, rng);
    EXPECT_GE(h, 0.0);
    sum += h;
    sum2 += h * h;
  }
  EXPECT_NEAR(sum / n, 1.0, 0.02);
  EXPECT_NEAR(sum2 / n, 2.0, 0.06);  // Exp(1): E[h^2] = 2
  EXPECT_EQ(draw_fading(FadingMode::Fixed, rng), 1.0);
}

TEST(Airlink, NoiselessDirectionIsIdentity) {
  const Tensor t = random_tensor({3, 4}, 1);
  Rng rng(2);
  const LinkBudget b = LinkBudget::for_snr(-10.0);
  const auto dl = transmit(t, b, Direction::DL, rng);  // DL noiseless by default
  EXPECT_EQ(dl.received.values, t.values);
  EXPECT_EQ(dl.realization.h, 1.0);
  EXPECT_EQ(dl.realization.direction, Direction::DL);
  const auto quiet = transmit(t, LinkBudget::noiseless(), Direction::UL, rng);
  EXPECT_EQ(quiet.received.values, t.values);
  EXPECT_EQ(quiet.received.shape, t.shape);
}

TEST(Airlink, NoiseStatisticsMatchBudget) {
  const Tensor zero(std::vector<Index>{100000});
  Rng rng(3);
  const LinkBudget b = LinkBudget::for_snr(-10.0);
  const auto out = transmit(zero, b, Direction::UL, rng);
  const VectorXd& v = out.received.values;
  EXPECT_NEAR(v.mean(), 0.0, 0.03);
  EXPECT_NEAR(std::sqrt(v.squaredNorm() / static_cast<double>(v.size())), std::sqrt(10.0), std::sqrt(10.0) * 0.01);
  EXPECT_NEAR(out.realization.noise_std, std::sqrt(10.0), 1e-12);
}

TEST(Airlink, DrawOrderIsFadingThenElements) {
  const Tensor t = random_tensor({5}, 4);
  LinkBudget b = LinkBudget::for_snr(3.0, FadingMode::Rayleigh);
  Rng rng(5), ref(5);
  const auto out = transmit(t, b, Direction::UL, rng);
  std::exponential_distribution<double> e(1.0);
  std::normal_distribution<double> n(0.0, 1.0);
  const double h = e(ref);
  EXPECT_EQ(out.realization.h, h);
  const double s = std::pow(10.0, -3.0 / 20.0);
  for (Index k = 0; k < 5; ++k) EXPECT_NEAR(out.received.values[k], h * t.values[k] + s * n(ref), 1e-14);
  EXPECT_EQ(rng(), ref());
}

TEST(Airlink, NonFinitePayloadRejected) {
  Tensor t = random_tensor({4}, 6);
  t.values[2] = std::numeric_limits<double>::quiet_NaN();
  Rng rng(1);
  EXPECT_THROW(transmit(t, LinkBudget{}, Direction::UL, rng), InvalidInput);
}

// received(a t) - a h t is the noise draw, independent of the payload scale.
TEST(Airlink, LinearityLeavesNoiseUntouched) {
  const Tensor t = random_tensor({2, 8, 4, 4}, 7, 3.0);
  for (FadingMode f : {FadingMode::Fixed, FadingMode::Rayleigh}) {
    const LinkBudget b = LinkBudget::for_snr(-10.0, f);
    Rng zr(42);
    const auto noise_only = transmit(Tensor(t.shape), b, Direction::UL, zr);
    const double h = noise_only.realization.h;
    for (double a : {0.1, 1.0, 10.0}) {
      Tensor scaled = t;
      scaled.values *= a;
      Rng rng(42);
      const auto out = transmit(scaled, b, Direction::UL, rng);
      EXPECT_EQ(out.realization.h, h);
      for (Index k = 0; k < t.numel(); ++k) {
        const double signal = h * scaled.values[k];
        const double residual = out.received.values[k] - signal;
        const double noise = noise_only.received.values[k];
        const double ulp = std::numeric_limits<double>::epsilon() * (std::abs(signal) + std::abs(noise));
        EXPECT_LE(std::abs(residual - noise), 2.0 * ulp) << "a=" << a << " k=" << k;
      }
    }
  }
}
