#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "lumvit/ops.hpp"
#include "lumvit/tensor.hpp"

namespace lumvit {

// Learnable under-sampling mask: trainable scores z feed a shared 2->2 affine
// and a softmax to give per-position (bypass, retain) probabilities; hard
// decisions are drawn with straight-through Gumbel-Softmax during training
// and frozen into a deterministic top-k mask for deployment.

template <class Real>
struct MaskState {
  std::int64_t N = 0;
  std::int64_t C = 0;
  Tensor<Real> z;           // [N*C, 2]
  Tensor<Real> lin_w;       // [2, 2], shared across positions
  Tensor<Real> lin_b;       // [2]
  Tensor<Real> fill_token;  // [C], substituted at masked positions
  double tau = 1.0;         // Gumbel-Softmax temperature
  bool frozen = false;
  bool use_linear = true;  // ablation: drop the affine before softmax
  bool use_token = true;   // ablation: zero assignment instead of the token

  static MaskState init(std::int64_t N, std::int64_t C, std::mt19937_64& rng,
                        double stddev = 0.02) {
    MaskState m;
    m.N = N;
    m.C = C;
    m.z = Tensor<Real>::trunc_normal({N * C, 2}, stddev, rng);
    // Identity-initialized affine keeps the initial probabilities near 0.5.
    m.lin_w = Tensor<Real>::from({2, 2}, {1, 0, 0, 1}, true);
    m.lin_b = Tensor<Real>::zeros({2}, true);
    m.fill_token = Tensor<Real>::trunc_normal({C}, stddev, rng);
    return m;
  }
};

// pi = softmax(Linear(z)) along the last axis; pi[.,1] is the retain
// probability.
template <class Real>
Tensor<Real> compute_probs(const MaskState<Real>& state) {
  Tensor<Real> h = state.z;
  if (state.use_linear) h = ops::add_bias(ops::matmul(state.z, state.lin_w), state.lin_b);
  return ops::softmax(h, -1);
}

struct FixedMask {
  std::int64_t N = 0;
  std::int64_t C = 0;
  std::vector<std::uint8_t> bits;  // N*C, 1 = retain
  double rate = 0.0;               // exactly sum(bits) / (N*C)

  std::int64_t retained() const {
    std::int64_t s = 0;
    for (auto b : bits) s += b;
    return s;
  }
};

// Indicator of the k largest values; ties broken toward the smaller linear
// index. Shared by the mask export and the magnitude baseline.
inline std::vector<std::uint8_t> top_k_select(const std::vector<double>& values, std::int64_t k) {
  const std::int64_t n = static_cast<std::int64_t>(values.size());
  if (k < 0 || k > n) throw ValidationError("top_k_select: k out of range");
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::nth_element(idx.begin(), idx.begin() + k, idx.end(), [&](std::int64_t a, std::int64_t b) {
    if (values[static_cast<std::size_t>(a)] != values[static_cast<std::size_t>(b)])
      return values[static_cast<std::size_t>(a)] > values[static_cast<std::size_t>(b)];
    return a < b;
  });
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(n), 0);
  for (std::int64_t i = 0; i < k; ++i) bits[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])] = 1;
  return bits;
}

// Deployment mask: retain the round(d_tar * N * C) positions with the largest
// retain probability.
inline FixedMask export_fixed_mask(const std::vector<double>& pi_retain, std::int64_t N,
                                   std::int64_t C, double d_tar) {
  if (!(d_tar > 0.0 && d_tar <= 1.0))
    throw ValidationError("export_fixed_mask: d_tar must be in (0,1]");
  if (static_cast<std::int64_t>(pi_retain.size()) != N * C)
    throw DimensionError("export_fixed_mask: pi size != N*C");
  const std::int64_t k = std::llround(d_tar * static_cast<double>(N * C));
  if (k == 0) throw ValidationError("export_fixed_mask: rounded retain count is zero");
  FixedMask m;
  m.N = N;
  m.C = C;
  m.bits = top_k_select(pi_retain, k);
  m.rate = static_cast<double>(k) / static_cast<double>(N * C);
  return m;
}

// Standard Gumbel(0,1) noise, two values per mask position.
inline std::vector<double> gumbel_noise(std::int64_t count, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uni(std::numeric_limits<double>::min(), 1.0);
  std::vector<double> g(static_cast<std::size_t>(count));
  for (auto& v : g) v = -std::log(-std::log(uni(rng)));
  return g;
}

// Single hard draw (no gradients). Argmax over Gumbel-perturbed log
// probabilities; temperature does not change the argmax, so the draw is an
// exact categorical sample from pi.
inline std::vector<std::uint8_t> sample_mask(const std::vector<double>& pi_retain,
                                             std::mt19937_64& rng, double log_floor = 1e-20) {
  std::vector<std::uint8_t> d(pi_retain.size());
  std::uniform_real_distribution<double> uni(std::numeric_limits<double>::min(), 1.0);
  for (std::size_t i = 0; i < pi_retain.size(); ++i) {
    const double p1 = std::log(std::max(pi_retain[i], log_floor)) - std::log(-std::log(uni(rng)));
    const double p0 =
        std::log(std::max(1.0 - pi_retain[i], log_floor)) - std::log(-std::log(uni(rng)));
    d[i] = p1 >= p0 ? 1 : 0;
  }
  return d;
}

// Straight-through Gumbel-Softmax sampling for a batch: every batch element
// draws its own mask from shared probabilities. Forward values are hard
// {0,1}; gradients flow through the temperature-softened relaxation into z,
// the affine, and onward.
//
// noise: [B, N*C*2] Gumbel draws (constant). Returns D as [B, N*C].
template <class Real>
Tensor<Real> sample_mask_batch_st(const Tensor<Real>& pi, const Tensor<Real>& noise, double tau,
                                  double log_floor = 1e-20) {
  if (!(tau > 0)) throw ValidationError("sample_mask_batch_st: tau must be positive");
  const std::int64_t B = noise.dim(0);
  const std::int64_t NC = pi.dim(0);
  if (noise.dim(1) != NC * 2) throw DimensionError("sample_mask_batch_st: noise width != N*C*2");
  Tensor<Real> logpi = ops::reshape(ops::log_clamped(pi, log_floor), {NC * 2});
  Tensor<Real> perturbed = ops::scale(ops::add_bias(noise, logpi), 1.0 / tau);
  Tensor<Real> soft = ops::softmax(ops::reshape(perturbed, {B * NC, 2}), -1);
  Tensor<Real> soft_retain = ops::slice_cols(soft, 1, 1);  // [B*NC, 1]
  Tensor<Real> hard = Tensor<Real>::zeros({B * NC, 1});
  const Real* ps = soft_retain.data();
  Real* ph = hard.data();
  for (std::int64_t i = 0; i < B * NC; ++i) ph[i] = ps[i] >= Real(0.5) ? Real(1) : Real(0);
  return ops::reshape(ops::straight_through(soft_retain, hard), {B, NC});
}

// Y with the mask applied: retained entries pass through, masked entries
// become the fill token (or zero). Y and D viewed as rows of C.
template <class Real>
Tensor<Real> apply_mask(const Tensor<Real>& y, const Tensor<Real>& d, const Tensor<Real>& token,
                        bool use_token) {
  ops::detail::check_same_shape(y, d, "apply_mask");
  Tensor<Real> kept = ops::mul(y, d);
  if (!use_token) return kept;
  Tensor<Real> inverted = ops::add_const(ops::neg(d), 1.0);
  return ops::add(kept, ops::mul_bias(inverted, token));
}

// Mean squared deviation of the per-sample passing-through ratio from the
// target rate: (1/B) * sum_b (d_tar - d_ops_b)^2.
template <class Real>
Tensor<Real> ratio_loss(const Tensor<Real>& d_batch, double d_tar) {
  if (!(d_tar > 0.0 && d_tar <= 1.0)) throw ValidationError("ratio_loss: d_tar must be in (0,1]");
  if (d_batch.rank() != 2) throw DimensionError("ratio_loss: expected [B, N*C]");
  const double inv_nc = 1.0 / static_cast<double>(d_batch.dim(1));
  Tensor<Real> d_ops = ops::scale(ops::sum_last(d_batch), inv_nc);
  Tensor<Real> diff = ops::add_const(ops::neg(d_ops), d_tar);
  return ops::mean_all(ops::mul(diff, diff));
}

// L = L_cls + lambda_ratio * L_ratio.
template <class Real>
Tensor<Real> total_loss(const Tensor<Real>& cls_loss, const Tensor<Real>& rate_loss,
                        double lambda_ratio = 5.0) {
  if (lambda_ratio < 0) throw ValidationError("total_loss: lambda_ratio must be nonnegative");
  return ops::add(cls_loss, ops::scale(rate_loss, lambda_ratio));
}

}  // namespace lumvit
