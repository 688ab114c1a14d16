#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "splitamc/trainers.hpp"

namespace splitamc {

/// n_correct / n_test * 100.
double pcc(Index n_correct, Index n_test);

/// Empirical CDF of |values|: one step per distinct magnitude.
struct Cdf {
  std::vector<double> sorted_values;
  std::vector<double> cumulative;

  /// Fraction of samples with |v| <= x.
  double at(double x) const;
};

Cdf value_cdf(std::span<const double> values);

/// Shortest round-trip decimal: 17 significant digits.
std::string format_number(double v);

struct LearningCurve {
  std::vector<int> rounds;
  std::vector<double> loss;
  std::vector<std::optional<double>> accuracy;
};

/// CSV `round,loss,accuracy`; accuracy is blank between evaluations. When
/// svg_path is non-empty a line plot of the loss is written as well.
void export_learning_curve(std::span<const RoundRecord> records, const std::filesystem::path& path,
                           const std::filesystem::path& svg_path = {});
LearningCurve read_learning_curve(const std::filesystem::path& path);

/// Full RoundRecord table; the columns are stable.
void write_records_csv(std::span<const RoundRecord> records, const std::filesystem::path& path);
inline constexpr const char* kRecordsHeader =
    "round,active_client,loss,ul_payload_elems,dl_payload_elems,h_realization,eval_accuracy";

/// Magnitude comparison of what crosses the UL: smashed data vs weights.
struct ScaleReport {
  double median_abs_smashed = 0.0;
  double median_abs_weights = 0.0;
  double ratio = 0.0;  ///< smashed / weights
  Cdf smashed_cdf;
  Cdf weights_cdf;
};

/// Weights: the whole lower segment. Smashed: every element of forward_lower
/// on the first `batch` rows of `images`.
ScaleReport scale_report(const SplitModel& model, const LabeledImages& images, Index batch = 32);

double median_abs(std::span<const double> values);

}  // namespace splitamc
