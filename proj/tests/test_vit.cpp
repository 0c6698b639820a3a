#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstring>
#include <random>
#include <vector>

#include "doctest.h"
#include "lumvit/grad_check.hpp"
#include "lumvit/vit.hpp"

using namespace lumvit;

namespace {

Tensor<double> random_tensor(Shape shape, std::uint64_t seed, double stddev = 1.0) {
  std::mt19937_64 rng(seed);
  return Tensor<double>::trunc_normal(std::move(shape), stddev, rng, false);
}

// Explicit per-position attention oracle.
std::vector<double> attention_ref(const std::vector<double>& q, const std::vector<double>& k,
                                  const std::vector<double>& v, int G, int T, int dh) {
  std::vector<double> out(static_cast<std::size_t>(G) * T * dh, 0.0);
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int g = 0; g < G; ++g)
    for (int i = 0; i < T; ++i) {
      std::vector<double> w(static_cast<std::size_t>(T));
      double mx = -1e300;
      for (int j = 0; j < T; ++j) {
        double s = 0;
        for (int d = 0; d < dh; ++d)
          s += q[static_cast<std::size_t>((g * T + i) * dh + d)] *
               k[static_cast<std::size_t>((g * T + j) * dh + d)];
        w[static_cast<std::size_t>(j)] = s * inv;
        mx = std::max(mx, w[static_cast<std::size_t>(j)]);
      }
      double denom = 0;
      for (int j = 0; j < T; ++j) {
        w[static_cast<std::size_t>(j)] = std::exp(w[static_cast<std::size_t>(j)] - mx);
        denom += w[static_cast<std::size_t>(j)];
      }
      for (int j = 0; j < T; ++j)
        for (int d = 0; d < dh; ++d)
          out[static_cast<std::size_t>((g * T + i) * dh + d)] +=
              w[static_cast<std::size_t>(j)] / denom *
              v[static_cast<std::size_t>((g * T + j) * dh + d)];
    }
  return out;
}

}  // namespace

TEST_CASE("attention over a single token returns its value row") {
  Tensor<double> q = random_tensor({1, 1, 4}, 1);
  Tensor<double> k = random_tensor({1, 1, 4}, 2);
  Tensor<double> v = random_tensor({1, 1, 4}, 3);
  Tensor<double> out = attention(q, k, v);
  for (int d = 0; d < 4; ++d) CHECK(out.data()[d] == doctest::Approx(v.data()[d]).epsilon(1e-12));
}

TEST_CASE("two identical tokens attend with weights (0.5, 0.5)") {
  Tensor<double> q = Tensor<double>::zeros({1, 2, 3});
  Tensor<double> k = Tensor<double>::zeros({1, 2, 3});
  Tensor<double> v = Tensor<double>::from({1, 2, 3}, {1, 2, 3, 5, 6, 7});
  // Identical keys (both zero) make every attention row uniform.
  Tensor<double> out = attention(q, k, v);
  for (int i = 0; i < 2; ++i)
    for (int d = 0; d < 3; ++d)
      CHECK(out.data()[i * 3 + d] ==
            doctest::Approx(0.5 * (v.data()[d] + v.data()[3 + d])).epsilon(1e-12));
}

TEST_CASE("attention matches the explicit loop oracle within 1e-12") {
  const int G = 2, T = 4, dh = 5;
  Tensor<double> q = random_tensor({G, T, dh}, 11);
  Tensor<double> k = random_tensor({G, T, dh}, 12);
  Tensor<double> v = random_tensor({G, T, dh}, 13);
  Tensor<double> out = attention(q, k, v);
  auto ref = attention_ref(q.values(), k.values(), v.values(), G, T, dh);
  for (std::int64_t i = 0; i < out.numel(); ++i)
    CHECK(std::abs(out.data()[i] - ref[static_cast<std::size_t>(i)]) <= 1e-12);
}

TEST_CASE("HSI-shaped config: 9 tokens, dim 192, 16 classes") {
  BackboneConfig cfg;
  cfg.embed_dim = 192;
  cfg.depth = 2;  // shallow for test speed; geometry is what matters here
  cfg.heads = 3;
  cfg.num_classes = 16;
  cfg.num_tokens = 9;
  cfg.validate();
  std::mt19937_64 rng(5);
  auto params = BackboneParams<float>::init(cfg, rng);
  Tensor<float> tokens = Tensor<float>::zeros({2, 9, 192});
  Tensor<float> logits = backbone_forward(tokens, cfg, params);
  CHECK(logits.dim(0) == 2);
  CHECK(logits.dim(1) == 16);
}

TEST_CASE("zero-depth backbone reduces to head(layernorm(cls + pos))") {
  BackboneConfig cfg;
  cfg.embed_dim = 6;
  cfg.depth = 0;
  cfg.heads = 2;
  cfg.num_classes = 3;
  cfg.num_tokens = 2;
  std::mt19937_64 rng(7);
  auto params = BackboneParams<double>::init(cfg, rng);
  Tensor<double> tokens = random_tensor({1, 2, 6}, 8);
  Tensor<double> logits = backbone_forward(tokens, cfg, params);

  // Manual: class token + its positional row, layernorm, head.
  std::vector<double> rep(6);
  for (int c = 0; c < 6; ++c) rep[static_cast<std::size_t>(c)] = params.cls.data()[c] + params.pos.data()[c];
  double mean = 0;
  for (double v : rep) mean += v;
  mean /= 6;
  double var = 0;
  for (double v : rep) var += (v - mean) * (v - mean);
  var /= 6;
  for (auto& v : rep) v = (v - mean) / std::sqrt(var + 1e-6);
  for (int k = 0; k < 3; ++k) {
    double s = params.head_b.data()[k];
    for (int c = 0; c < 6; ++c)
      s += (rep[static_cast<std::size_t>(c)] * params.norm_g.data()[c] + params.norm_b.data()[c]) *
           params.head_w.data()[c * 3 + k];
    CHECK(logits.data()[k] == doctest::Approx(s).epsilon(1e-10));
  }
}

TEST_CASE("token permutation leaves logits unchanged when positions are zeroed") {
  BackboneConfig cfg;
  cfg.embed_dim = 8;
  cfg.depth = 2;
  cfg.heads = 2;
  cfg.num_classes = 4;
  cfg.num_tokens = 5;
  cfg.drop_path_rate = 0.0;
  std::mt19937_64 rng(9);
  auto params = BackboneParams<double>::init(cfg, rng);
  std::fill(params.pos.values().begin(), params.pos.values().end(), 0.0);

  Tensor<double> tokens = random_tensor({1, 5, 8}, 10);
  Tensor<double> permuted = Tensor<double>::zeros({1, 5, 8});
  const int perm[5] = {3, 0, 4, 1, 2};
  for (int t = 0; t < 5; ++t)
    std::copy_n(tokens.data() + perm[t] * 8, 8, permuted.data() + t * 8);

  Tensor<double> l1 = backbone_forward(tokens, cfg, params);
  Tensor<double> l2 = backbone_forward(permuted, cfg, params);
  for (int k = 0; k < 4; ++k) CHECK(l1.data()[k] == doctest::Approx(l2.data()[k]).epsilon(1e-9));
}

TEST_CASE("drop_path_rate zero: train and eval forwards agree bitwise") {
  BackboneConfig cfg;
  cfg.embed_dim = 8;
  cfg.depth = 2;
  cfg.heads = 2;
  cfg.num_classes = 3;
  cfg.num_tokens = 4;
  cfg.drop_path_rate = 0.0;
  std::mt19937_64 rng(13);
  auto params = BackboneParams<double>::init(cfg, rng);
  Tensor<double> tokens = random_tensor({2, 4, 8}, 14);
  std::mt19937_64 dp(99);
  Tensor<double> train_logits = backbone_forward(tokens, cfg, params, true, &dp);
  Tensor<double> eval_logits = backbone_forward(tokens, cfg, params, false, nullptr);
  CHECK(std::memcmp(train_logits.data(), eval_logits.data(),
                    sizeof(double) * static_cast<std::size_t>(train_logits.numel())) == 0);
}

TEST_CASE("stochastic depth drops whole samples") {
  BackboneConfig cfg;
  cfg.embed_dim = 4;
  cfg.depth = 1;
  cfg.heads = 1;
  cfg.num_classes = 2;
  cfg.num_tokens = 2;
  cfg.drop_path_rate = 0.9;
  std::mt19937_64 rng(15);
  auto params = BackboneParams<double>::init(cfg, rng);
  Tensor<double> tokens = random_tensor({4, 2, 4}, 16);
  std::mt19937_64 dp1(1), dp2(2);
  Tensor<double> a = backbone_forward(tokens, cfg, params, true, &dp1);
  Tensor<double> b = backbone_forward(tokens, cfg, params, true, &dp2);
  // Different draws almost surely change something at rate 0.9.
  bool differ = false;
  for (std::int64_t i = 0; i < a.numel(); ++i)
    if (a.data()[i] != b.data()[i]) differ = true;
  CHECK(differ);
}

TEST_CASE("backbone gradients match finite differences (small config)") {
  BackboneConfig cfg;
  cfg.embed_dim = 4;
  cfg.depth = 1;
  cfg.heads = 2;
  cfg.num_classes = 2;
  cfg.num_tokens = 3;
  std::mt19937_64 rng(17);
  auto params = BackboneParams<double>::init(cfg, rng, 0.5);
  Tensor<double> tokens = random_tensor({2, 3, 4}, 18);
  tokens.set_requires_grad(true);
  Tensor<double> probe = random_tensor({2, 2}, 19);

  auto fn = [&]() {
    return ops::sum_all(ops::mul(backbone_forward(tokens, cfg, params), probe));
  };
  std::vector<NamedTensor64> named = {{"tokens", tokens},
                                      {"cls", params.cls},
                                      {"pos", params.pos},
                                      {"qkv_w", params.blocks[0].qkv_w},
                                      {"qkv_b", params.blocks[0].qkv_b},
                                      {"proj_w", params.blocks[0].proj_w},
                                      {"ln1_g", params.blocks[0].ln1_g},
                                      {"ln2_b", params.blocks[0].ln2_b},
                                      {"fc1_w", params.blocks[0].fc1_w},
                                      {"fc2_w", params.blocks[0].fc2_w},
                                      {"norm_g", params.norm_g},
                                      {"head_w", params.head_w},
                                      {"head_b", params.head_b}};
  auto report = grad_check(fn, named, 1e-6, 1e-5);
  CHECK(report.pass());
}

TEST_CASE("config validation") {
  BackboneConfig cfg;
  cfg.embed_dim = 10;
  cfg.heads = 3;  // not a divisor
  cfg.num_classes = 2;
  cfg.num_tokens = 4;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
}
