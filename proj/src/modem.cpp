#include "splitamc/modem.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace splitamc {

namespace {

int gray_to_binary(int g) {
  int b = g;
  for (int shift = 1; (g >> shift) != 0; ++shift) b ^= g >> shift;
  return b;
}

}  // namespace

int alphabet_size(Scheme scheme) {
  switch (scheme) {
    case Scheme::QPSK: return 4;
    case Scheme::QAM16: return 16;
    case Scheme::QAM64: return 64;
  }
  throw InvalidInput("unknown modulation scheme");
}

std::string_view scheme_name(Scheme scheme) {
  switch (scheme) {
    case Scheme::QPSK: return "QPSK";
    case Scheme::QAM16: return "QAM16";
    case Scheme::QAM64: return "QAM64";
  }
  throw InvalidInput("unknown modulation scheme");
}

Scheme scheme_from_label(int label) {
  if (label < 0 || label >= kNumSchemes) throw InvalidInput("class label out of range: " + std::to_string(label));
  return static_cast<Scheme>(label);
}

void ModemConfig::validate() const {
  if (num_symbols < 1) throw InvalidInput("num_symbols must be >= 1");
  if (std::isnan(gamma_data_db) || gamma_data_db == -std::numeric_limits<double>::infinity())
    throw InvalidInput("gamma_data_db must be finite or +inf");
  if (!std::isfinite(f0T)) throw InvalidInput("f0T must be finite");
  if (!(phase_jitter_std >= 0.0) || !std::isfinite(phase_jitter_std))
    throw InvalidInput("phase_jitter_std must be >= 0");
}

VectorXcd constellation(Scheme scheme) {
  const int m = alphabet_size(scheme);
  const int side = static_cast<int>(std::lround(std::sqrt(m)));
  const int half_bits = static_cast<int>(std::lround(std::log2(side)));
  // Mean energy of a square M-QAM on odd integer levels is 2(M-1)/3.
  const double scale = 1.0 / std::sqrt(2.0 * (m - 1) / 3.0);

  VectorXcd points(m);
  for (int idx = 0; idx < m; ++idx) {
    const int i_level = gray_to_binary(idx >> half_bits);
    const int q_level = gray_to_binary(idx & (side - 1));
    const double re = static_cast<double>((side - 1) - 2 * i_level);
    const double im = static_cast<double>((side - 1) - 2 * q_level);
    points[idx] = {re * scale, im * scale};
  }
  return points;
}

VectorXcd modulate(std::span<const int> indices, Scheme scheme) {
  const VectorXcd alphabet = constellation(scheme);
  VectorXcd out(static_cast<Index>(indices.size()));
  for (std::size_t n = 0; n < indices.size(); ++n) {
    const int idx = indices[n];
    if (idx < 0 || idx >= alphabet.size())
      throw InvalidInput("symbol index " + std::to_string(idx) + " outside alphabet of " +
                         std::string(scheme_name(scheme)));
    out[static_cast<Index>(n)] = alphabet[idx];
  }
  return out;
}

ImpairedFrame apply_tx_impairments(const VectorXcd& clean, const ModemConfig& cfg, Rng& rng) {
  if (clean.size() == 0) throw InvalidInput("apply_tx_impairments: empty symbol sequence");
  cfg.validate();

  const Index n_sym = clean.size();
  std::normal_distribution<double> std_normal(0.0, 1.0);

  ImpairedFrame out;
  out.amplitudes = VectorXd::Ones(n_sym);
  out.signal_part.resize(n_sym);

  // Rayleigh amplitude with E[A^2] = 1: |X + jY| with X, Y ~ N(0, 1/2).
  if (cfg.fading == AmplitudeFading::RayleighPerSymbol) {
    for (Index n = 0; n < n_sym; ++n) {
      const double x = std_normal(rng) * std::numbers::sqrt2 / 2.0;
      const double y = std_normal(rng) * std::numbers::sqrt2 / 2.0;
      out.amplitudes[n] = std::hypot(x, y);
    }
  }

  double theta = 0.0;
  for (Index n = 0; n < n_sym; ++n) {
    if (n > 0 && cfg.phase_jitter_std > 0.0) theta += cfg.phase_jitter_std * std_normal(rng);
    const double phase = 2.0 * std::numbers::pi * cfg.f0T * static_cast<double>(n) + theta;
    out.signal_part[n] = out.amplitudes[n] * std::polar(1.0, phase) * clean[n];
  }

  out.noise_part = VectorXcd::Zero(n_sym);
  if (std::isfinite(cfg.gamma_data_db)) {
    const double signal_power = out.signal_part.squaredNorm() / static_cast<double>(n_sym);
    const double noise_power = signal_power / std::pow(10.0, cfg.gamma_data_db / 10.0);
    const double per_dim = std::sqrt(noise_power / 2.0);
    for (Index n = 0; n < n_sym; ++n) {
      const double re = per_dim * std_normal(rng);
      const double im = per_dim * std_normal(rng);
      out.noise_part[n] = {re, im};
    }
  }

  const VectorXcd received = out.signal_part + out.noise_part;
  out.frame.i_samples = received.real();
  out.frame.q_samples = received.imag();
  out.frame.label = static_cast<int>(cfg.scheme);
  out.frame.gamma_data_db = cfg.gamma_data_db;
  out.frame.seed = cfg.seed;
  return out;
}

ImpairedFrame generate_frame(const ModemConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  std::uniform_int_distribution<int> pick(0, alphabet_size(cfg.scheme) - 1);
  std::vector<int> indices(static_cast<std::size_t>(cfg.num_symbols));
  for (auto& idx : indices) idx = pick(rng);
  return apply_tx_impairments(modulate(indices, cfg.scheme), cfg, rng);
}

double empirical_snr(const VectorXcd& signal_part, const VectorXcd& noise_part) {
  if (signal_part.size() != noise_part.size())
    throw ShapeMismatch("empirical_snr: signal and noise lengths differ");
  const double ps = signal_part.squaredNorm();
  const double pn = noise_part.squaredNorm();
  if (pn == 0.0) throw InfiniteSnr(true);
  if (ps == 0.0) throw InfiniteSnr(false);
  return 10.0 * std::log10(ps / pn);
}

}  // namespace splitamc
