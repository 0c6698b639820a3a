#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "lumvit/tensor.hpp"

namespace lumvit {

// Central finite-difference oracle for reverse-mode gradients. The checked
// function must be deterministic with all randomness frozen; the oracle
// verifies this by evaluating the base point twice and requiring bitwise
// equal results.

struct GradCheckParamReport {
  std::string name;
  double max_rel_err = 0.0;
  std::int64_t worst_index = -1;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckParamReport> params;
  double tol = 0.0;

  bool pass() const {
    for (const auto& p : params)
      if (!(p.max_rel_err <= tol)) return false;
    return true;
  }

  double max_rel_err() const {
    double m = 0.0;
    for (const auto& p : params) m = std::max(m, p.max_rel_err);
    return m;
  }
};

struct NamedTensor64 {
  std::string name;
  Tensor<double> tensor;
};

// rel = |a - n| / max(|a|, |n|, floor); the floor keeps near-zero gradients
// (dead ReLU, clipped STE paths) from blowing up the ratio.
inline double rel_err(double a, double n, double floor = 1e-6) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

inline GradCheckReport grad_check(const std::function<Tensor<double>()>& fn,
                                  std::vector<NamedTensor64> params, double eps = 1e-5,
                                  double tol = 1e-5, double floor = 1e-6) {
  // Determinism probe.
  double base1, base2;
  {
    NoGradScope<double> ng;
    base1 = fn().item();
    base2 = fn().item();
  }
  if (std::memcmp(&base1, &base2, sizeof(double)) != 0)
    throw ValidationError("grad_check: function is not deterministic under frozen RNG");

  // One reverse pass for all analytic gradients.
  std::vector<std::vector<double>> analytic;
  {
    for (auto& p : params) p.tensor.zero_grad();
    TapeScope<double> scope;
    Tensor<double> loss = fn();
    backward(loss);
    for (auto& p : params) {
      p.tensor.ensure_grad();
      analytic.push_back(p.tensor.grad());
    }
  }

  GradCheckReport report;
  report.tol = tol;
  NoGradScope<double> ng;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& t = params[pi].tensor;
    GradCheckParamReport pr;
    pr.name = params[pi].name;
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      double& slot = t.values()[static_cast<std::size_t>(i)];
      const double saved = slot;
      slot = saved + eps;
      const double fp = fn().item();
      slot = saved - eps;
      const double fm = fn().item();
      slot = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic[pi][static_cast<std::size_t>(i)];
      const double e = rel_err(a, numeric, floor);
      if (e > pr.max_rel_err) {
        pr.max_rel_err = e;
        pr.worst_index = i;
        pr.analytic_at_worst = a;
        pr.numeric_at_worst = numeric;
      }
    }
    report.params.push_back(std::move(pr));
  }
  return report;
}

}  // namespace lumvit
