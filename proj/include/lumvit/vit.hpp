#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "lumvit/ops.hpp"
#include "lumvit/tensor.hpp"

namespace lumvit {

// Pre-norm transformer encoder over the masked embedding tokens: class token,
// learnable positional table, multi-head self-attention blocks with GELU
// MLPs, classification from the class-token representation.

struct BackboneConfig {
  int embed_dim = 192;
  int depth = 4;
  int heads = 3;
  int num_classes = 0;
  std::int64_t num_tokens = 0;  // patch tokens, class token excluded
  double mlp_ratio = 4.0;
  double drop_path_rate = 0.0;

  int head_dim() const { return embed_dim / heads; }
  int mlp_dim() const { return static_cast<int>(embed_dim * mlp_ratio); }

  void validate() const {
    if (embed_dim <= 0 || heads <= 0 || embed_dim % heads != 0)
      throw ValidationError("BackboneConfig: embed_dim must be a positive multiple of heads");
    if (depth < 0) throw ValidationError("BackboneConfig: negative depth");
    if (num_classes <= 0) throw ValidationError("BackboneConfig: num_classes must be positive");
    if (num_tokens <= 0) throw ValidationError("BackboneConfig: num_tokens must be positive");
    if (!(drop_path_rate >= 0.0 && drop_path_rate < 1.0))
      throw ValidationError("BackboneConfig: drop_path_rate must be in [0,1)");
  }
};

template <class Real>
struct BlockParams {
  Tensor<Real> ln1_g, ln1_b;
  Tensor<Real> qkv_w, qkv_b;    // [C, 3C], [3C]
  Tensor<Real> proj_w, proj_b;  // [C, C], [C]
  Tensor<Real> ln2_g, ln2_b;
  Tensor<Real> fc1_w, fc1_b;  // [C, M], [M]
  Tensor<Real> fc2_w, fc2_b;  // [M, C], [C]
};

template <class Real>
struct BackboneParams {
  Tensor<Real> cls;  // [C]
  Tensor<Real> pos;  // [(N+1) * C]
  std::vector<BlockParams<Real>> blocks;
  Tensor<Real> norm_g, norm_b;
  Tensor<Real> head_w, head_b;  // [C, num_classes], [num_classes]

  static BackboneParams init(const BackboneConfig& cfg, std::mt19937_64& rng,
                             double stddev = 0.02) {
    const std::int64_t C = cfg.embed_dim, M = cfg.mlp_dim(), T = cfg.num_tokens + 1;
    BackboneParams p;
    p.cls = Tensor<Real>::trunc_normal({C}, stddev, rng);
    p.pos = Tensor<Real>::trunc_normal({T * C}, stddev, rng);
    for (int d = 0; d < cfg.depth; ++d) {
      BlockParams<Real> b;
      b.ln1_g = Tensor<Real>::full({C}, Real(1), true);
      b.ln1_b = Tensor<Real>::zeros({C}, true);
      b.qkv_w = Tensor<Real>::trunc_normal({C, 3 * C}, stddev, rng);
      b.qkv_b = Tensor<Real>::zeros({3 * C}, true);
      b.proj_w = Tensor<Real>::trunc_normal({C, C}, stddev, rng);
      b.proj_b = Tensor<Real>::zeros({C}, true);
      b.ln2_g = Tensor<Real>::full({C}, Real(1), true);
      b.ln2_b = Tensor<Real>::zeros({C}, true);
      b.fc1_w = Tensor<Real>::trunc_normal({C, M}, stddev, rng);
      b.fc1_b = Tensor<Real>::zeros({M}, true);
      b.fc2_w = Tensor<Real>::trunc_normal({M, C}, stddev, rng);
      b.fc2_b = Tensor<Real>::zeros({C}, true);
      p.blocks.push_back(std::move(b));
    }
    p.norm_g = Tensor<Real>::full({C}, Real(1), true);
    p.norm_b = Tensor<Real>::zeros({C}, true);
    p.head_w = Tensor<Real>::trunc_normal({C, cfg.num_classes}, stddev, rng);
    p.head_b = Tensor<Real>::zeros({cfg.num_classes}, true);
    return p;
  }
};

// Scaled dot-product attention for a stack of heads.
// q, k, v: [G, T, dh] with G = batch * heads. Returns [G, T, dh].
template <class Real>
Tensor<Real> attention(const Tensor<Real>& q, const Tensor<Real>& k, const Tensor<Real>& v) {
  if (q.rank() != 3 || q.shape() != k.shape() || q.shape() != v.shape())
    throw DimensionError("attention: q/k/v must share shape [G,T,dh]");
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.dim(2)));
  Tensor<Real> scores = ops::scale(ops::bmm(q, ops::permute(k, {0, 2, 1})), inv_sqrt_d);
  return ops::bmm(ops::softmax(scores, -1), v);
}

namespace detail {

// Per-sample stochastic depth: multiplies each sample's residual branch by
// 0 or 1/keep_prob. No-op (and absent from the tape) when rate is 0.
template <class Real>
Tensor<Real> drop_path(const Tensor<Real>& x, double rate, std::mt19937_64* rng) {
  if (rate <= 0.0 || rng == nullptr) return x;
  const std::int64_t B = x.dim(0), rest = x.numel() / x.dim(0);
  Tensor<Real> keep = Tensor<Real>::zeros(x.shape());
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const Real scale_kept = static_cast<Real>(1.0 / (1.0 - rate));
  Real* pk = keep.data();
  for (std::int64_t b = 0; b < B; ++b) {
    const Real v = uni(*rng) < rate ? Real(0) : scale_kept;
    std::fill_n(pk + b * rest, rest, v);
  }
  return ops::mul(x, keep);
}

}  // namespace detail

template <class Real>
Tensor<Real> block_forward(const Tensor<Real>& x, const BlockParams<Real>& blk, int heads,
                           double drop_path_rate, std::mt19937_64* droppath_rng) {
  const std::int64_t B = x.dim(0), T = x.dim(1), C = x.dim(2);
  const std::int64_t dh = C / heads;

  Tensor<Real> h = ops::layernorm(x, blk.ln1_g, blk.ln1_b);
  Tensor<Real> qkv = ops::add_bias(ops::matmul(ops::reshape(h, {B * T, C}), blk.qkv_w), blk.qkv_b);
  Tensor<Real> qkv5 = ops::permute(ops::reshape(qkv, {B, T, 3, heads, dh}), {2, 0, 3, 1, 4});
  auto head_view = [&](std::int64_t which) {
    return ops::reshape(ops::slice_rows(qkv5, which, 1), {B * heads, T, dh});
  };
  Tensor<Real> att = attention(head_view(0), head_view(1), head_view(2));
  Tensor<Real> merged =
      ops::reshape(ops::permute(ops::reshape(att, {B, heads, T, dh}), {0, 2, 1, 3}), {B * T, C});
  Tensor<Real> proj =
      ops::reshape(ops::add_bias(ops::matmul(merged, blk.proj_w), blk.proj_b), {B, T, C});
  Tensor<Real> x1 = ops::add(x, detail::drop_path(proj, drop_path_rate, droppath_rng));

  Tensor<Real> h2 = ops::reshape(ops::layernorm(x1, blk.ln2_g, blk.ln2_b), {B * T, C});
  Tensor<Real> m = ops::add_bias(ops::matmul(ops::gelu(ops::add_bias(ops::matmul(h2, blk.fc1_w), blk.fc1_b)),
                                             blk.fc2_w),
                                 blk.fc2_b);
  Tensor<Real> m3 = ops::reshape(m, {B, T, C});
  return ops::add(x1, detail::drop_path(m3, drop_path_rate, droppath_rng));
}

// tokens: [B, N, C] -> logits [B, num_classes]. droppath_rng is only
// consulted in train mode with a nonzero drop-path rate.
template <class Real>
Tensor<Real> backbone_forward(const Tensor<Real>& tokens, const BackboneConfig& cfg,
                              const BackboneParams<Real>& params, bool train_mode = false,
                              std::mt19937_64* droppath_rng = nullptr) {
  if (tokens.rank() != 3 || tokens.dim(1) != cfg.num_tokens || tokens.dim(2) != cfg.embed_dim)
    throw DimensionError("backbone_forward: tokens " + shape_str(tokens.shape()) +
                         " do not match config");
  const std::int64_t B = tokens.dim(0), C = cfg.embed_dim, T = cfg.num_tokens + 1;
  const double dp = train_mode ? cfg.drop_path_rate : 0.0;
  std::mt19937_64* rng = train_mode ? droppath_rng : nullptr;

  Tensor<Real> x = ops::prepend_token(tokens, params.cls);
  x = ops::reshape(ops::add_bias(ops::reshape(x, {B, T * C}), params.pos), {B, T, C});
  for (const auto& blk : params.blocks) x = block_forward(x, blk, cfg.heads, dp, rng);
  Tensor<Real> normed = ops::layernorm(x, params.norm_g, params.norm_b);
  Tensor<Real> cls_rep = ops::select_axis1(normed, 0);
  return ops::add_bias(ops::matmul(cls_rep, params.head_w), params.head_b);
}

}  // namespace lumvit
