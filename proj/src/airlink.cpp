#include "splitamc/airlink.hpp"

#include <cmath>

namespace splitamc {

void LinkBudget::validate() const {
  if (!(transmit_power_w > 0.0) || !std::isfinite(transmit_power_w)) throw InvalidInput("transmit power must be > 0");
  if (!(distance_m > 0.0) || !std::isfinite(distance_m)) throw InvalidInput("distance must be > 0");
  if (!(pathloss_alpha >= 2.0) || !std::isfinite(pathloss_alpha)) throw InvalidInput("path-loss exponent must be >= 2");
  if (!(noise_variance_w > 0.0) || !std::isfinite(noise_variance_w)) throw InvalidInput("noise variance must be > 0");
}

LinkBudget LinkBudget::for_snr(double gamma_db, FadingMode fading, double power_w, double distance_m, double alpha) {
  LinkBudget b;
  b.transmit_power_w = power_w;
  b.distance_m = distance_m;
  b.pathloss_alpha = alpha;
  b.noise_variance_w = power_w * std::pow(distance_m, -alpha) * std::pow(10.0, -gamma_db / 10.0);
  b.fading = fading;
  b.validate();
  return b;
}

LinkBudget LinkBudget::noiseless() {
  LinkBudget b;
  b.directions = {false, false};
  return b;
}

double snr_db(const LinkBudget& budget, double h) {
  budget.validate();
  if (!(h >= 0.0)) throw InvalidInput("fading coefficient must be >= 0");
  if (h == 0.0) throw InfiniteSnr(false);
  const double received = h * budget.transmit_power_w * std::pow(budget.distance_m, -budget.pathloss_alpha);
  return 10.0 * std::log10(received / budget.noise_variance_w);
}

double noise_std_for_target_snr(double gamma_db) {
  if (!std::isfinite(gamma_db)) throw InvalidInput("target SNR must be finite");
  return std::sqrt(std::pow(10.0, -gamma_db / 10.0));
}

double link_noise_std(const LinkBudget& budget) { return noise_std_for_target_snr(snr_db(budget, 1.0)); }

double draw_fading(FadingMode mode, Rng& rng) {
  if (mode == FadingMode::Fixed) return 1.0;
  std::exponential_distribution<double> exp1(1.0);
  return exp1(rng);
}

ChannelRealization transmit_inplace(Eigen::Ref<VectorXd> values, const LinkBudget& budget, Direction direction,
                                    Rng& rng) {
  ChannelRealization real;
  real.direction = direction;
  if (!budget.noisy(direction)) return real;

  real.h = draw_fading(budget.fading, rng);
  real.noise_std = link_noise_std(budget);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (Index k = 0; k < values.size(); ++k) values[k] = real.h * values[k] + real.noise_std * noise(rng);
  return real;
}

Transmission transmit(const Tensor& t, const LinkBudget& budget, Direction direction, Rng& rng) {
  if (!t.all_finite()) throw InvalidInput("transmit: payload contains non-finite values");
  Transmission out{t, {}};
  out.realization = transmit_inplace(out.received.values, budget, direction, rng);
  return out;
}

}  // namespace splitamc
