#pragma once

#include "splitamc/tensor.hpp"

namespace splitamc {

enum class FadingMode { Fixed, Rayleigh };
enum class Direction { UL, DL };

struct DirectionProfile {
  bool ul_noisy = true;
  bool dl_noisy = false;
};

/// Rx-server analog link. Defaults: P = 100 mW, d = 100 m, alpha = 2 and a
/// noise variance giving 10 dB at h = 1.
struct LinkBudget {
  double transmit_power_w = 0.1;
  double distance_m = 100.0;
  double pathloss_alpha = 2.0;
  double noise_variance_w = 1e-6;
  FadingMode fading = FadingMode::Fixed;
  DirectionProfile directions;

  void validate() const;
  bool noisy(Direction d) const { return d == Direction::UL ? directions.ul_noisy : directions.dl_noisy; }

  /// Budget whose h = 1 SNR equals gamma_db for the given P, d, alpha.
  static LinkBudget for_snr(double gamma_db, FadingMode fading = FadingMode::Fixed, double power_w = 0.1,
                            double distance_m = 100.0, double alpha = 2.0);
  /// Both directions noiseless.
  static LinkBudget noiseless();
};

struct ChannelRealization {
  double h = 1.0;
  double noise_std = 0.0;
  Direction direction = Direction::UL;
};

/// 10 log10(h P d^-alpha / sigma^2). h == 0 throws InfiniteSnr(false).
double snr_db(const LinkBudget& budget, double h);

/// sqrt(10^(-gamma/10)): absolute noise std against unit reference power.
double noise_std_for_target_snr(double gamma_db);

/// Noise std the budget injects per element (h = 1 SNR, unit reference).
double link_noise_std(const LinkBudget& budget);

/// Fixed -> 1, Rayleigh -> Exp(1) power fading.
double draw_fading(FadingMode mode, Rng& rng);

/// In-place h * v + N(0, std^2) with one h for the whole payload. Draw order:
/// h first, then one Gaussian per element in storage order, so the noise
/// sequence depends only on the RNG state and the element count.
ChannelRealization transmit_inplace(Eigen::Ref<VectorXd> values, const LinkBudget& budget, Direction direction,
                                    Rng& rng);

struct Transmission {
  Tensor received;
  ChannelRealization realization;
};

Transmission transmit(const Tensor& t, const LinkBudget& budget, Direction direction, Rng& rng);

}  // namespace splitamc
