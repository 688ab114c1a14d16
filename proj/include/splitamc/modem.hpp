#pragma once

#include <span>
#include <string_view>

#include "splitamc/types.hpp"

namespace splitamc {

enum class Scheme : std::uint8_t { QPSK = 0, QAM16 = 1, QAM64 = 2 };

inline constexpr int kNumSchemes = 3;

enum class AmplitudeFading { None, RayleighPerSymbol };

int alphabet_size(Scheme scheme);
std::string_view scheme_name(Scheme scheme);
Scheme scheme_from_label(int label);

struct ModemConfig {
  Scheme scheme = Scheme::QPSK;
  int num_symbols = 256;
  double gamma_data_db = 10.0;  ///< +inf disables AWGN
  double f0T = 0.0;             ///< carrier frequency offset, cycles per symbol
  double phase_jitter_std = 0.0;
  AmplitudeFading fading = AmplitudeFading::None;
  std::uint64_t seed = 0;

  void validate() const;
};

struct IqFrame {
  VectorXd i_samples;
  VectorXd q_samples;
  int label = 0;
  double gamma_data_db = 0.0;
  std::uint64_t seed = 0;

  Index size() const { return i_samples.size(); }
};

/// A frame together with the decomposition r = signal_part + noise_part.
struct ImpairedFrame {
  IqFrame frame;
  VectorXcd signal_part;  ///< A_n e^{j(2 pi f0 n T + theta_n)} s(n)
  VectorXcd noise_part;   ///< sigma(n)
  VectorXd amplitudes;    ///< A_n
};

/// Full alphabet of a scheme in index order. Square Gray-coded QAM, unit
/// average energy. Index bits split into an I half (high bits) and a Q half
/// (low bits); each half is Gray-decoded to a PAM level with level 0 at the
/// positive extreme, so QPSK index 0 is (1+j)/sqrt(2).
VectorXcd constellation(Scheme scheme);

VectorXcd modulate(std::span<const int> indices, Scheme scheme);

/// r(n) = A_n exp(j(2 pi f0T n + theta_n)) s(n) + sigma(n). theta is a random
/// walk starting at 0. Noise variance is set from the realized signal power of
/// the frame so that E[SNR] hits gamma_data_db.
ImpairedFrame apply_tx_impairments(const VectorXcd& clean, const ModemConfig& cfg, Rng& rng);

/// Draws N uniform symbols and impairs them; everything derives from cfg.seed.
ImpairedFrame generate_frame(const ModemConfig& cfg);

/// 10 log10(sum|signal|^2 / sum|noise|^2). Zero noise power throws InfiniteSnr.
double empirical_snr(const VectorXcd& signal_part, const VectorXcd& noise_part);

}  // namespace splitamc
