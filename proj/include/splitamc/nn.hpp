#pragma once

#include <array>
#include <filesystem>
#include <span>

#include "splitamc/tensor.hpp"

namespace splitamc {

inline constexpr int kNumBlocks = 4;
inline constexpr int kNumStages = kNumBlocks + 1;  // blocks + classifier head

/// Layer recipe. Each block is conv3x3(pad 1) -> ReLU -> avgpool2x2; the head
/// is flatten -> dense -> logits.
struct NetRecipe {
  int grid = 32;
  int in_channels = 1;
  std::array<int, kNumBlocks> widths{4, 16, 64, 256};
  int num_classes = 3;

  bool operator==(const NetRecipe&) const = default;
};

struct StageGeometry {
  bool dense = false;
  Index in_c = 0, in_h = 0, in_w = 0;     ///< dense: in_c = flattened features, in_h = in_w = 1
  Index out_c = 0, out_h = 0, out_w = 0;  ///< dense: out_c = classes
  Index param_offset = 0;                 ///< into the full parameter vector
  Index weight_count = 0;
  Index param_count = 0;  ///< weights + biases
  Index macs = 0;         ///< per sample; convolution and dense products only

  Index fan_in() const { return dense ? in_c : in_c * 9; }
  Index out_elems() const { return out_c * out_h * out_w; }
};

/// Per-stage intermediates kept for backpropagation.
struct StageCache {
  RowMatXd cols;      ///< conv: im2col of the stage input
  VectorXd pre_relu;  ///< conv: [B, C, H, W] convolution output + bias
  RowMatXd features;  ///< dense: [B, F] input
};

struct SegmentCache {
  int first = -1;
  int last = -1;  ///< exclusive
  Index batch = 0;
  std::vector<StageCache> stages;

  bool valid() const { return first >= 0 && last > first && static_cast<int>(stages.size()) == last - first; }
};

class BlockNet {
 public:
  BlockNet() = default;
  /// All parameters zero.
  explicit BlockNet(const NetRecipe& recipe);

  /// Weights and biases uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  static BlockNet initialized(const NetRecipe& recipe, std::uint64_t seed);

  const NetRecipe& recipe() const { return recipe_; }
  std::span<const StageGeometry> stages() const { return stages_; }
  const StageGeometry& stage(int s) const { return stages_.at(static_cast<std::size_t>(s)); }

  Index num_params() const { return params_.size(); }
  const VectorXd& params() const { return params_; }
  VectorXd& params() { return params_; }
  void set_params(const VectorXd& p);

  /// First parameter index of stage s; stage_offset(kNumStages) == num_params().
  Index stage_offset(int s) const;
  Index macs_per_sample() const;

  /// Logits [B, classes] for input [B, in_channels, grid, grid].
  Tensor forward(const Tensor& x) const;

 private:
  NetRecipe recipe_;
  std::vector<StageGeometry> stages_;
  VectorXd params_;
};

/// Runs stages [first, last). `segment` holds exactly those stages' parameters.
Tensor forward_segment(const BlockNet& net, const Eigen::Ref<const VectorXd>& segment, int first, int last,
                       const Tensor& x, SegmentCache* cache = nullptr);

/// Backpropagates grad_out through the cached segment. Adds the parameter
/// gradient into grad_segment; returns the input gradient unless
/// need_input_grad is false (then returns an empty tensor).
Tensor backward_segment(const BlockNet& net, const Eigen::Ref<const VectorXd>& segment, const SegmentCache& cache,
                        const Tensor& grad_out, Eigen::Ref<VectorXd> grad_segment, bool need_input_grad = true);

// ---------------------------------------------------------------------------
// Split model

/// Network split after block `cut` (1..3). Lower segment = blocks [0, cut),
/// upper = remaining blocks + head. Both live contiguously in net.params().
struct SplitModel {
  BlockNet net;
  int cut = 1;
  double lambda = 0.0;  ///< client MACs / total MACs

  Index lower_size() const { return net.stage_offset(cut); }
  Index upper_size() const { return net.num_params() - lower_size(); }

  VectorXd get_params() const { return net.params(); }
  void set_params(const VectorXd& p) { net.set_params(p); }
  VectorXd get_lower() const { return net.params().head(lower_size()); }
  VectorXd get_upper() const { return net.params().tail(upper_size()); }
  void set_lower(const VectorXd& p);
  void set_upper(const VectorXd& p);

  std::vector<Index> smashed_shape(Index batch) const;
  Index smashed_elems_per_sample() const { return net.stage(cut - 1).out_elems(); }
};

double compute_lambda(const BlockNet& net, int cut);
SplitModel split_at(BlockNet net, int cut);

struct LowerContext {
  SegmentCache cache;
};

struct UpperContext {
  SegmentCache cache;
  RowMatXd probs;
};

/// Smashed data s = f(x; w_c) using the model's own lower segment.
Tensor forward_lower(const SplitModel& model, const Tensor& x, LowerContext* ctx = nullptr);
/// Same with a client-held lower segment.
Tensor forward_lower(const SplitModel& model, const Eigen::Ref<const VectorXd>& lower, const Tensor& x,
                     LowerContext* ctx = nullptr);

/// Softmax output y_hat = g(s_bar; w_s), shape [B, classes].
Tensor forward_upper(const SplitModel& model, const Tensor& s_bar, UpperContext* ctx = nullptr);

inline constexpr double kLogClamp = 1e-12;

/// mean over batch of -(1/d_y) sum_i y_i ln(max(y_hat_i, 1e-12)).
double cross_entropy(const Tensor& y_hat, const Tensor& y);

/// d(cross_entropy)/d(logits) given softmax probabilities.
RowMatXd cross_entropy_logit_grad(const RowMatXd& probs, const RowMatXd& y);

Tensor one_hot(std::span<const std::uint8_t> labels, int num_classes);

struct UpperGradients {
  VectorXd g_ws;
  Tensor g_sbar;
  double loss = 0.0;
};

UpperGradients backward_upper(const SplitModel& model, const UpperContext& ctx, const Tensor& y);

/// Gradient of the lower segment given dL/ds (callers chain h themselves).
VectorXd backward_lower(const SplitModel& model, const Eigen::Ref<const VectorXd>& lower, const LowerContext& ctx,
                        const Tensor& g_smashed);

struct Gradients {
  VectorXd g_wc;
  VectorXd g_ws;
  Tensor g_sbar;
  double loss = 0.0;
};

/// Full split pipeline for s_bar = h * f(x; w_c) + noise: returns dL/dw_c
/// (chained through h), dL/dw_s and dL/ds_bar.
Gradients backward(const Tensor& x, const Tensor& y, const SplitModel& model, double h = 1.0,
                   const Tensor* noise = nullptr);

/// Loss of the same pipeline; used by finite-difference checks.
double split_loss(const Tensor& x, const Tensor& y, const SplitModel& model, double h = 1.0,
                  const Tensor* noise = nullptr);

struct FullGradients {
  VectorXd grad;
  double loss = 0.0;
};

/// Unsplit loss and gradient for monolithic training.
FullGradients full_backward(const BlockNet& net, const Tensor& x, const Tensor& y);

/// w <- w - eta * grad. eta must be >= 0.
void sgd_step(Eigen::Ref<VectorXd> params, const Eigen::Ref<const VectorXd>& grads, double eta);

/// sum_m weight_m * vec_m / sum_m weight_m.
VectorXd weighted_average(std::span<const VectorXd> vectors, std::span<const double> weights);

/// Input batch [B, 1, G, G] from image rows.
Tensor make_input(const RowMatXd& rows, int grid);

/// Index of the largest logit/probability per row.
std::vector<int> argmax_rows(const Tensor& scores);

// ---------------------------------------------------------------------------
// Checkpoints: one JSON header line, '\n', then little-endian f64 parameters.

struct Checkpoint {
  NetRecipe recipe;
  int cut = 1;
  std::uint64_t seed = 0;
  std::int64_t steps = 0;
  VectorXd params;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace splitamc
