#include "splitamc/nn.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "splitamc/kernels.hpp"

namespace splitamc {

namespace {

std::vector<StageGeometry> build_geometry(const NetRecipe& r) {
  if (r.grid < 8) throw InvalidInput("grid must be >= 8");
  if (r.in_channels < 1 || r.num_classes < 2) throw InvalidInput("invalid recipe");
  std::vector<StageGeometry> stages;
  Index c = r.in_channels, h = r.grid, w = r.grid, offset = 0;
  for (int b = 0; b < kNumBlocks; ++b) {
    if (r.widths[static_cast<std::size_t>(b)] < 1) throw InvalidInput("block widths must be >= 1");
    StageGeometry g;
    g.in_c = c;
    g.in_h = h;
    g.in_w = w;
    g.out_c = r.widths[static_cast<std::size_t>(b)];
    g.out_h = kernels::pooled(h);
    g.out_w = kernels::pooled(w);
    g.param_offset = offset;
    g.weight_count = g.out_c * g.in_c * 9;
    g.param_count = g.weight_count + g.out_c;
    g.macs = h * w * g.out_c * g.in_c * 9;
    stages.push_back(g);
    offset += g.param_count;
    c = g.out_c;
    h = g.out_h;
    w = g.out_w;
  }
  StageGeometry head;
  head.dense = true;
  head.in_c = c * h * w;
  head.in_h = head.in_w = 1;
  head.out_c = r.num_classes;
  head.out_h = head.out_w = 1;
  head.param_offset = offset;
  head.weight_count = head.out_c * head.in_c;
  head.param_count = head.weight_count + head.out_c;
  head.macs = head.in_c * head.out_c;
  stages.push_back(head);
  return stages;
}

void check_segment(const BlockNet& net, const Eigen::Ref<const VectorXd>& segment, int first, int last) {
  if (first < 0 || last > kNumStages || first >= last) throw InvalidInput("invalid stage range");
  if (segment.size() != net.stage_offset(last) - net.stage_offset(first))
    throw ShapeMismatch("segment parameter count does not match stage range");
}

Tensor conv_block_forward(const StageGeometry& g, const double* params, const Tensor& x, StageCache* cache) {
  const Index batch = x.dim(0);
  const Index hw = g.in_h * g.in_w;
  RowMatXd local_cols;
  RowMatXd& cols = cache ? cache->cols : local_cols;
  kernels::im2col3x3(x.data(), batch, g.in_c, g.in_h, g.in_w, cols);

  const Eigen::Map<const RowMatXd> weights(params, g.out_c, g.in_c * 9);
  const Eigen::Map<const VectorXd> bias(params + g.weight_count, g.out_c);
  RowMatXd conv = weights * cols;  // [out_c, B*hw]

  VectorXd pre(batch * g.out_c * hw);
  for (Index b = 0; b < batch; ++b)
    for (Index o = 0; o < g.out_c; ++o)
      pre.segment((b * g.out_c + o) * hw, hw) = (conv.row(o).segment(b * hw, hw).array() + bias[o]).matrix().transpose();

  const VectorXd act = pre.cwiseMax(0.0);
  Tensor out({batch, g.out_c, g.out_h, g.out_w});
  kernels::avgpool2x2(act.data(), batch * g.out_c, g.in_h, g.in_w, out.data());
  if (cache) cache->pre_relu = std::move(pre);
  return out;
}

Tensor conv_block_backward(const StageGeometry& g, const double* params, const StageCache& cache,
                           const Tensor& grad_out, double* grad_params, bool need_input_grad) {
  const Index batch = grad_out.dim(0);
  const Index hw = g.in_h * g.in_w;

  VectorXd grad_act(batch * g.out_c * hw);
  kernels::avgpool2x2_backward(grad_out.data(), batch * g.out_c, g.in_h, g.in_w, grad_act.data());
  grad_act = (cache.pre_relu.array() > 0.0).select(grad_act, 0.0);

  RowMatXd grad_conv(g.out_c, batch * hw);
  for (Index b = 0; b < batch; ++b)
    for (Index o = 0; o < g.out_c; ++o)
      grad_conv.row(o).segment(b * hw, hw) = grad_act.segment((b * g.out_c + o) * hw, hw).transpose();

  Eigen::Map<RowMatXd> grad_w(grad_params, g.out_c, g.in_c * 9);
  Eigen::Map<VectorXd> grad_b(grad_params + g.weight_count, g.out_c);
  grad_w.noalias() += grad_conv * cache.cols.transpose();
  grad_b += grad_conv.rowwise().sum();

  if (!need_input_grad) return {};
  const Eigen::Map<const RowMatXd> weights(params, g.out_c, g.in_c * 9);
  RowMatXd grad_cols = weights.transpose() * grad_conv;
  Tensor grad_in({batch, g.in_c, g.in_h, g.in_w});
  kernels::col2im3x3(grad_cols, batch, g.in_c, g.in_h, g.in_w, grad_in.data());
  return grad_in;
}

Tensor dense_forward(const StageGeometry& g, const double* params, const Tensor& x, StageCache* cache) {
  const Index batch = x.dim(0);
  const Eigen::Map<const RowMatXd> features(x.data(), batch, g.in_c);
  const Eigen::Map<const RowMatXd> weights(params, g.out_c, g.in_c);
  const Eigen::Map<const VectorXd> bias(params + g.weight_count, g.out_c);
  Tensor out({batch, g.out_c});
  Eigen::Map<RowMatXd> logits(out.data(), batch, g.out_c);
  logits.noalias() = features * weights.transpose();
  logits.rowwise() += bias.transpose();
  if (cache) cache->features = features;
  return out;
}

Tensor dense_backward(const StageGeometry& g, const double* params, const StageCache& cache, const Tensor& grad_out,
                      double* grad_params, bool need_input_grad, const std::vector<Index>& input_shape) {
  const Index batch = grad_out.dim(0);
  const Eigen::Map<const RowMatXd> grad_logits(grad_out.data(), batch, g.out_c);
  Eigen::Map<RowMatXd> grad_w(grad_params, g.out_c, g.in_c);
  Eigen::Map<VectorXd> grad_b(grad_params + g.weight_count, g.out_c);
  grad_w.noalias() += grad_logits.transpose() * cache.features;
  grad_b += grad_logits.colwise().sum().transpose();
  if (!need_input_grad) return {};
  const Eigen::Map<const RowMatXd> weights(params, g.out_c, g.in_c);
  Tensor grad_in(input_shape);
  Eigen::Map<RowMatXd>(grad_in.data(), batch, g.in_c).noalias() = grad_logits * weights;
  return grad_in;
}

std::vector<Index> stage_input_shape(const StageGeometry& g, Index batch) {
  if (g.dense) return {batch, g.in_c};
  return {batch, g.in_c, g.in_h, g.in_w};
}

void check_stage_input(const StageGeometry& g, const Tensor& x) {
  if (x.rank() < 2 || x.dim(0) < 1) throw ShapeMismatch("input must have a non-empty batch axis");
  const Index per_sample = x.numel() / x.dim(0);
  if (g.dense) {
    if (per_sample != g.in_c) throw ShapeMismatch("head input has wrong feature count");
    return;
  }
  if (x.rank() != 4 || x.dim(1) != g.in_c || x.dim(2) != g.in_h || x.dim(3) != g.in_w)
    throw ShapeMismatch("block input shape mismatch: expected [B," + std::to_string(g.in_c) + "," +
                        std::to_string(g.in_h) + "," + std::to_string(g.in_w) + "]");
}

}  // namespace

// ---------------------------------------------------------------------------
// BlockNet

BlockNet::BlockNet(const NetRecipe& recipe) : recipe_(recipe), stages_(build_geometry(recipe)) {
  params_ = VectorXd::Zero(stage_offset(kNumStages));
}

BlockNet BlockNet::initialized(const NetRecipe& recipe, std::uint64_t seed) {
  BlockNet net(recipe);
  Rng rng(seed);
  for (const auto& g : net.stages_) {
    const double bound = std::sqrt(1.0 / static_cast<double>(g.fan_in()));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Index k = 0; k < g.param_count; ++k) net.params_[g.param_offset + k] = dist(rng);
  }
  return net;
}

void BlockNet::set_params(const VectorXd& p) {
  if (p.size() != params_.size())
    throw ShapeMismatch("parameter vector has " + std::to_string(p.size()) + " entries, expected " +
                        std::to_string(params_.size()));
  params_ = p;
}

Index BlockNet::stage_offset(int s) const {
  if (s < 0 || s > kNumStages) throw InvalidInput("stage index out of range");
  if (s == kNumStages) return stages_.back().param_offset + stages_.back().param_count;
  return stages_[static_cast<std::size_t>(s)].param_offset;
}

Index BlockNet::macs_per_sample() const {
  Index total = 0;
  for (const auto& g : stages_) total += g.macs;
  return total;
}

Tensor BlockNet::forward(const Tensor& x) const { return forward_segment(*this, params_, 0, kNumStages, x); }

Tensor forward_segment(const BlockNet& net, const Eigen::Ref<const VectorXd>& segment, int first, int last,
                       const Tensor& x, SegmentCache* cache) {
  check_segment(net, segment, first, last);
  check_stage_input(net.stage(first), x);
  const Index base = net.stage_offset(first);
  if (cache) {
    cache->first = first;
    cache->last = last;
    cache->batch = x.dim(0);
    cache->stages.assign(static_cast<std::size_t>(last - first), {});
  }
  Tensor act = x;
  for (int s = first; s < last; ++s) {
    const auto& g = net.stage(s);
    const double* p = segment.data() + (g.param_offset - base);
    StageCache* sc = cache ? &cache->stages[static_cast<std::size_t>(s - first)] : nullptr;
    act = g.dense ? dense_forward(g, p, act, sc) : conv_block_forward(g, p, act, sc);
  }
  return act;
}

Tensor backward_segment(const BlockNet& net, const Eigen::Ref<const VectorXd>& segment, const SegmentCache& cache,
                        const Tensor& grad_out, Eigen::Ref<VectorXd> grad_segment, bool need_input_grad) {
  if (!cache.valid()) throw InvalidInput("backward called without a forward context");
  check_segment(net, segment, cache.first, cache.last);
  if (grad_segment.size() != segment.size()) throw ShapeMismatch("gradient buffer size mismatch");
  const Index base = net.stage_offset(cache.first);
  const auto& last_stage = net.stage(cache.last - 1);
  if (grad_out.numel() != cache.batch * last_stage.out_elems())
    throw ShapeMismatch("output gradient shape does not match the forward pass");

  Tensor grad = grad_out;
  for (int s = cache.last - 1; s >= cache.first; --s) {
    const auto& g = net.stage(s);
    const double* p = segment.data() + (g.param_offset - base);
    double* gp = grad_segment.data() + (g.param_offset - base);
    const auto& sc = cache.stages[static_cast<std::size_t>(s - cache.first)];
    const bool want_input = need_input_grad || s > cache.first;
    if (g.dense) {
      grad = dense_backward(g, p, sc, grad, gp, want_input, stage_input_shape(g, cache.batch));
    } else {
      if (grad.rank() != 4) grad.shape = {cache.batch, g.out_c, g.out_h, g.out_w};
      grad = conv_block_backward(g, p, sc, grad, gp, want_input);
    }
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Split model

double compute_lambda(const BlockNet& net, int cut) {
  if (cut < 1 || cut >= kNumBlocks) throw InvalidInput("cut must be in {1, 2, 3}");
  Index client = 0;
  for (int s = 0; s < cut; ++s) client += net.stage(s).macs;
  return static_cast<double>(client) / static_cast<double>(net.macs_per_sample());
}

SplitModel split_at(BlockNet net, int cut) {
  const double lambda = compute_lambda(net, cut);
  return SplitModel{std::move(net), cut, lambda};
}

void SplitModel::set_lower(const VectorXd& p) {
  if (p.size() != lower_size()) throw ShapeMismatch("lower segment size mismatch");
  net.params().head(lower_size()) = p;
}

void SplitModel::set_upper(const VectorXd& p) {
  if (p.size() != upper_size()) throw ShapeMismatch("upper segment size mismatch");
  net.params().tail(upper_size()) = p;
}

std::vector<Index> SplitModel::smashed_shape(Index batch) const {
  const auto& g = net.stage(cut - 1);
  return {batch, g.out_c, g.out_h, g.out_w};
}

Tensor forward_lower(const SplitModel& model, const Tensor& x, LowerContext* ctx) {
  return forward_lower(model, model.net.params().head(model.lower_size()), x, ctx);
}

Tensor forward_lower(const SplitModel& model, const Eigen::Ref<const VectorXd>& lower, const Tensor& x,
                     LowerContext* ctx) {
  return forward_segment(model.net, lower, 0, model.cut, x, ctx ? &ctx->cache : nullptr);
}

Tensor forward_upper(const SplitModel& model, const Tensor& s_bar, UpperContext* ctx) {
  const Tensor logits = forward_segment(model.net, model.net.params().tail(model.upper_size()), model.cut,
                                        kNumStages, s_bar, ctx ? &ctx->cache : nullptr);
  RowMatXd probs = kernels::softmax_rows(logits.as_rows());
  Tensor out(logits.shape, Eigen::Map<const VectorXd>(probs.data(), probs.size()));
  if (ctx) ctx->probs = std::move(probs);
  return out;
}

double cross_entropy(const Tensor& y_hat, const Tensor& y) {
  if (y_hat.shape != y.shape || y_hat.rank() != 2) throw ShapeMismatch("cross_entropy: shapes differ");
  const auto p = y_hat.as_rows();
  const auto t = y.as_rows();
  const double d_y = static_cast<double>(p.cols());
  double total = 0.0;
  for (Index b = 0; b < p.rows(); ++b)
    for (Index i = 0; i < p.cols(); ++i)
      if (t(b, i) != 0.0) total -= t(b, i) * std::log(std::max(p(b, i), kLogClamp));
  return total / (d_y * static_cast<double>(p.rows()));
}

RowMatXd cross_entropy_logit_grad(const RowMatXd& probs, const RowMatXd& y) {
  const double scale = 1.0 / (static_cast<double>(probs.cols()) * static_cast<double>(probs.rows()));
  // dL/dp_i = -scale * y_i / p_i where the clamp is inactive, else 0.
  RowMatXd grad_p = RowMatXd::Zero(probs.rows(), probs.cols());
  for (Index b = 0; b < probs.rows(); ++b)
    for (Index i = 0; i < probs.cols(); ++i)
      if (y(b, i) != 0.0 && probs(b, i) > kLogClamp) grad_p(b, i) = -scale * y(b, i) / probs(b, i);
  // Softmax Jacobian: dL/dz_j = p_j (g_j - sum_i g_i p_i).
  RowMatXd grad_z(probs.rows(), probs.cols());
  for (Index b = 0; b < probs.rows(); ++b) {
    const double dot = grad_p.row(b).dot(probs.row(b));
    grad_z.row(b) = probs.row(b).cwiseProduct((grad_p.row(b).array() - dot).matrix());
  }
  return grad_z;
}

Tensor one_hot(std::span<const std::uint8_t> labels, int num_classes) {
  Tensor y({static_cast<Index>(labels.size()), num_classes});
  for (std::size_t b = 0; b < labels.size(); ++b) {
    if (labels[b] >= num_classes) throw InvalidInput("label out of range");
    y.values[static_cast<Index>(b) * num_classes + labels[b]] = 1.0;
  }
  return y;
}

UpperGradients backward_upper(const SplitModel& model, const UpperContext& ctx, const Tensor& y) {
  if (!ctx.cache.valid() || ctx.probs.size() == 0) throw InvalidInput("backward called without a forward context");
  if (y.rank() != 2 || y.dim(0) != ctx.probs.rows() || y.dim(1) != ctx.probs.cols())
    throw ShapeMismatch("labels do not match the forward batch");

  UpperGradients out;
  const Tensor probs({ctx.probs.rows(), ctx.probs.cols()},
                     Eigen::Map<const VectorXd>(ctx.probs.data(), ctx.probs.size()));
  out.loss = cross_entropy(probs, y);
  const RowMatXd grad_logits = cross_entropy_logit_grad(ctx.probs, y.as_rows());
  const Tensor grad_out({grad_logits.rows(), grad_logits.cols()},
                        Eigen::Map<const VectorXd>(grad_logits.data(), grad_logits.size()));
  out.g_ws = VectorXd::Zero(model.upper_size());
  out.g_sbar = backward_segment(model.net, model.net.params().tail(model.upper_size()), ctx.cache, grad_out, out.g_ws);
  out.g_sbar.shape = model.smashed_shape(ctx.cache.batch);
  return out;
}

VectorXd backward_lower(const SplitModel& model, const Eigen::Ref<const VectorXd>& lower, const LowerContext& ctx,
                        const Tensor& g_smashed) {
  VectorXd grad = VectorXd::Zero(model.lower_size());
  backward_segment(model.net, lower, ctx.cache, g_smashed, grad, /*need_input_grad=*/false);
  return grad;
}

namespace {

Tensor apply_link(const Tensor& s, double h, const Tensor* noise) {
  Tensor s_bar = s;
  s_bar.values *= h;
  if (noise) {
    if (noise->numel() != s.numel()) throw ShapeMismatch("noise tensor does not match smashed data");
    s_bar.values += noise->values;
  }
  return s_bar;
}

}  // namespace

Gradients backward(const Tensor& x, const Tensor& y, const SplitModel& model, double h, const Tensor* noise) {
  LowerContext lower_ctx;
  UpperContext upper_ctx;
  const Tensor s = forward_lower(model, x, &lower_ctx);
  forward_upper(model, apply_link(s, h, noise), &upper_ctx);
  UpperGradients up = backward_upper(model, upper_ctx, y);

  Tensor g_s = up.g_sbar;
  g_s.values *= h;
  Gradients out;
  out.g_wc = backward_lower(model, model.net.params().head(model.lower_size()), lower_ctx, g_s);
  out.g_ws = std::move(up.g_ws);
  out.g_sbar = std::move(up.g_sbar);
  out.loss = up.loss;
  return out;
}

double split_loss(const Tensor& x, const Tensor& y, const SplitModel& model, double h, const Tensor* noise) {
  const Tensor s = forward_lower(model, x);
  return cross_entropy(forward_upper(model, apply_link(s, h, noise)), y);
}

FullGradients full_backward(const BlockNet& net, const Tensor& x, const Tensor& y) {
  SegmentCache cache;
  const Tensor logits = forward_segment(net, net.params(), 0, kNumStages, x, &cache);
  const RowMatXd probs = kernels::softmax_rows(logits.as_rows());
  FullGradients out;
  out.loss = cross_entropy(Tensor(logits.shape, Eigen::Map<const VectorXd>(probs.data(), probs.size())), y);
  const RowMatXd grad_logits = cross_entropy_logit_grad(probs, y.as_rows());
  const Tensor grad_out(logits.shape, Eigen::Map<const VectorXd>(grad_logits.data(), grad_logits.size()));
  out.grad = VectorXd::Zero(net.num_params());
  backward_segment(net, net.params(), cache, grad_out, out.grad, /*need_input_grad=*/false);
  return out;
}

void sgd_step(Eigen::Ref<VectorXd> params, const Eigen::Ref<const VectorXd>& grads, double eta) {
  if (params.size() != grads.size()) throw ShapeMismatch("sgd_step: parameter and gradient lengths differ");
  if (!(eta >= 0.0) || !std::isfinite(eta)) throw InvalidInput("learning rate must be finite and >= 0");
  if (eta == 0.0) return;
  params.noalias() -= eta * grads;
}

VectorXd weighted_average(std::span<const VectorXd> vectors, std::span<const double> weights) {
  if (vectors.empty() || vectors.size() != weights.size()) throw InvalidInput("weighted_average: bad arguments");
  double total = 0.0;
  VectorXd acc = VectorXd::Zero(vectors.front().size());
  for (std::size_t m = 0; m < vectors.size(); ++m) {
    if (vectors[m].size() != acc.size()) throw ShapeMismatch("weighted_average: lengths differ");
    if (!(weights[m] >= 0.0)) throw InvalidInput("weighted_average: negative weight");
    acc.noalias() += weights[m] * vectors[m];
    total += weights[m];
  }
  if (!(total > 0.0)) throw InvalidInput("weighted_average: weights sum to zero");
  return acc / total;
}

Tensor make_input(const RowMatXd& rows, int grid) {
  const Index per = static_cast<Index>(grid) * grid;
  if (rows.cols() != per) throw ShapeMismatch("image rows do not match grid");
  return {{rows.rows(), 1, grid, grid}, Eigen::Map<const VectorXd>(rows.data(), rows.size())};
}

std::vector<int> argmax_rows(const Tensor& scores) {
  const auto m = scores.as_rows();
  std::vector<int> out(static_cast<std::size_t>(m.rows()));
  for (Index r = 0; r < m.rows(); ++r) {
    Index best;
    m.row(r).maxCoeff(&best);
    out[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json header = {
      {"format", "splitamc-checkpoint"},
      {"version", 1},
      {"recipe",
       {{"grid", ckpt.recipe.grid},
        {"in_channels", ckpt.recipe.in_channels},
        {"widths", ckpt.recipe.widths},
        {"num_classes", ckpt.recipe.num_classes}}},
      {"cut", ckpt.cut},
      {"seed", ckpt.seed},
      {"steps", ckpt.steps},
      {"num_params", ckpt.params.size()},
  };
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out << header.dump() << '\n';
  for (Index k = 0; k < ckpt.params.size(); ++k) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(ckpt.params[k]);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
  }
  if (!out) throw IoError("short write: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string line;
  std::getline(in, line);
  Checkpoint ckpt;
  Index n = 0;
  try {
    const auto header = nlohmann::json::parse(line);
    if (header.at("version").get<int>() != 1) throw UnsupportedVersion("unsupported checkpoint version");
    const auto& r = header.at("recipe");
    ckpt.recipe.grid = r.at("grid").get<int>();
    ckpt.recipe.in_channels = r.at("in_channels").get<int>();
    ckpt.recipe.widths = r.at("widths").get<std::array<int, kNumBlocks>>();
    ckpt.recipe.num_classes = r.at("num_classes").get<int>();
    ckpt.cut = header.at("cut").get<int>();
    ckpt.seed = header.at("seed").get<std::uint64_t>();
    ckpt.steps = header.at("steps").get<std::int64_t>();
    n = header.at("num_params").get<Index>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
  ckpt.params.resize(n);
  for (Index k = 0; k < n; ++k) {
    std::uint64_t bits;
    if (!in.read(reinterpret_cast<char*>(&bits), sizeof bits)) throw FormatError("checkpoint blob truncated");
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    ckpt.params[k] = std::bit_cast<double>(bits);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("checkpoint blob has trailing bytes");
  return ckpt;
}

}  // namespace splitamc
