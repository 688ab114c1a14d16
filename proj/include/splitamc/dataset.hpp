#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "splitamc/modem.hpp"

namespace splitamc {

struct ConstellationImage {
  RowMatXf pixels;  ///< G x G, row 0 = top (+Q), column 0 = left (-I)
  int label = 0;
  double gamma_data_db = 0.0;

  int grid() const { return static_cast<int>(pixels.rows()); }
};

/// Target statistics of the model-input view of a dataset. Pixels are stored
/// raw; the view is (p - raw_mean) * sqrt(variance / raw_var) + mean.
/// A freshly built dataset carries its own raw statistics (identity view).
struct Normalization {
  double mean = 0.0;
  double variance = 0.0;
};

struct Dataset {
  std::vector<ConstellationImage> images;
  std::vector<std::string> class_names;
  int grid = 0;
  int frames_per_class = 0;
  int samples_per_frame = 0;
  double gamma_data_db = 0.0;
  double half_range = 1.5;
  std::uint64_t master_seed = 0;
  Normalization normalization;

  bool operator==(const Dataset& other) const;
};

/// Model-facing images: one row per image, G*G doubles, plus labels.
struct LabeledImages {
  RowMatXd pixels;
  std::vector<std::uint8_t> labels;
  int grid = 0;

  Index size() const { return pixels.rows(); }
};

inline constexpr double kDefaultHalfRange = 1.5;

/// 2-D histogram of (I, Q) over [-half_range, half_range]^2, divided by its
/// maximum bin. Out-of-range points are clipped to the edge bins.
ConstellationImage render_constellation(const IqFrame& frame, int grid, double half_range = kDefaultHalfRange);

/// Raw bin counts before max-normalization (sum equals the frame length).
RowMat<long> histogram_counts(const IqFrame& frame, int grid, double half_range);

/// Mean and population variance over every pixel of every image.
Normalization pixel_statistics(const Dataset& ds);

Dataset normalize_dataset(const Dataset& ds, double target_mean, double target_var);

struct BuildOptions {
  int frames_per_class = 300;
  int grid = 32;
  double half_range = kDefaultHalfRange;
  unsigned threads = 1;  ///< output does not depend on this
};

/// Balanced over {QPSK, QAM16, QAM64}. modem_cfg.scheme and modem_cfg.seed are
/// ignored; frame seed = derive_seed(master_seed, {frame, class, index}).
Dataset build_dataset(const ModemConfig& modem_cfg, const BuildOptions& opts, std::uint64_t master_seed);

std::uint64_t frame_seed(std::uint64_t master_seed, int label, int frame_index);

/// Directory layout: manifest.json, pixels.f32le, labels.u8.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

/// Applies the normalization view in double precision.
LabeledImages to_model_inputs(const Dataset& ds);

struct TrainTestSplit {
  LabeledImages train;
  LabeledImages test;
};

/// Stratified split; per-class test count = round(test_fraction * class size).
TrainTestSplit split_train_test(const LabeledImages& all, double test_fraction, std::uint64_t seed);

/// Balanced IID shards: each class is shuffled and dealt round-robin.
std::vector<LabeledImages> partition_clients(const LabeledImages& all, int num_clients, std::uint64_t seed);

LabeledImages concatenate(std::span<const LabeledImages> parts);

LabeledImages select_rows(const LabeledImages& src, std::span<const Index> rows);

}  // namespace splitamc
