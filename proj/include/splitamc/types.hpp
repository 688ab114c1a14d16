#pragma once

#include <complex>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace splitamc {

using Index = Eigen::Index;

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using VectorXd = Vec<double>;
using VectorXcd = Vec<std::complex<double>>;
using RowMatXd = RowMat<double>;
using RowMatXf = RowMat<float>;

/// All stochastic components draw from an explicit 64-bit Mersenne Twister.
using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to derive independent child seeds.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Derives a child seed from a master seed and a path of integers.
/// Order-sensitive: derive_seed(s, {1, 2}) != derive_seed(s, {2, 1}).
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = mix64(master);
  for (auto p : path) h = mix64(h ^ mix64(p + 0x632be59bd9b4e019ULL));
  return h;
}

// Stream tags for derive_seed; stable values, part of the reproducibility contract.
namespace stream {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kBatch = 2;
inline constexpr std::uint64_t kChannel = 3;
inline constexpr std::uint64_t kEval = 4;
inline constexpr std::uint64_t kPartition = 5;
inline constexpr std::uint64_t kFrame = 6;
inline constexpr std::uint64_t kSplit = 7;
}  // namespace stream

// ---------------------------------------------------------------------------
// Errors

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidInput : Error {
  using Error::Error;
};

struct DegenerateInput : Error {
  using Error::Error;
};

struct ShapeMismatch : Error {
  using Error::Error;
};

/// Raised where a ratio in dB would be +inf or -inf.
struct InfiniteSnr : Error {
  explicit InfiniteSnr(bool positive)
      : Error(positive ? "SNR is +infinity (zero noise power)" : "SNR is -infinity (zero signal power)"),
        positive(positive) {}
  bool positive;
};

struct IoError : Error {
  using Error::Error;
};

struct FormatError : Error {
  using Error::Error;
};

struct UnsupportedVersion : FormatError {
  using FormatError::FormatError;
};

}  // namespace splitamc
