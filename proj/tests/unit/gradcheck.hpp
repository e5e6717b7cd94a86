#pragma once

// Central finite-difference verification for student networks in double.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "fsle/distill.hpp"
#include "fsle/rng.hpp"

namespace fsle::gradcheck {

inline constexpr double kStep = 1e-3;
inline constexpr double kRelTol = 1e-4;
// Gradients this small are compared absolutely; relative error is
// meaningless when both values are at round-off level.
inline constexpr double kAbsFloor = 1e-9;

struct Mismatch {
  std::string where;
  double analytic;
  double numeric;
};

inline bool close(double a, double n) {
  const double diff = std::abs(a - n);
  return diff <= kAbsFloor || diff <= kRelTol * std::max(std::abs(a), std::abs(n));
}

inline double loss_of(const Network<double>& net, const BasicTensor<double>& x,
                      const std::vector<double>& target) {
  const auto y = net.forward(x);
  return mse_feature_loss<double>(y.data(), target).loss;
}

// Checks `coords` random coordinates drawn over all parameters and the input.
// Returns the mismatches; empty means the check passed.
inline std::vector<Mismatch> check(Network<double>& net, BasicTensor<double> x,
                                   const std::vector<double>& target, int coords, Rng& rng) {
  net.zero_grad();
  Network<double>::Tape tape;
  const auto y = net.forward(x, &tape);
  const auto l = mse_feature_loss<double>(y.data(), target);
  const auto gx = net.backward(tape, BasicTensor<double>(y.shape(), l.grad));

  std::size_t total = x.size();
  for (const auto& p : net.params()) total += p.value.size();
  std::vector<Mismatch> bad;
  for (int c = 0; c < coords; ++c) {
    std::size_t k = rng.uniform_index(total);
    double* slot = nullptr;
    double analytic = 0.0;
    std::string where;
    if (k < x.size()) {
      slot = &x[k];
      analytic = gx[k];
      where = "input[" + std::to_string(k) + "]";
    } else {
      k -= x.size();
      for (auto& p : net.params()) {
        if (k < p.value.size()) {
          slot = &p.value[k];
          analytic = p.grad[k];
          where = p.name + "[" + std::to_string(k) + "]";
          break;
        }
        k -= p.value.size();
      }
    }
    const double saved = *slot;
    *slot = saved + kStep;
    const double up = loss_of(net, x, target);
    *slot = saved - kStep;
    const double down = loss_of(net, x, target);
    *slot = saved;
    const double numeric = (up - down) / (2 * kStep);
    if (!close(analytic, numeric)) bad.push_back({where, analytic, numeric});
  }
  return bad;
}

inline BasicTensor<double> random_input(const Shape& s, Rng& rng) {
  BasicTensor<double> x(s);
  for (double& v : x.data()) v = rng.uniform(-1.0, 1.0);
  return x;
}

inline std::vector<double> random_target(std::size_t n, Rng& rng) {
  std::vector<double> t(n);
  for (double& v : t) v = rng.uniform(-1.0, 1.0);
  return t;
}

struct Case {
  std::string name;
  StudentSpec spec;
  std::size_t projection = 0;
};

// One case per differentiable op, plus the projection head and a stacked
// student exercising the ops together.
inline std::vector<Case> op_cases() {
  using K = LayerKind;
  return {
      {"linear", {{6}, {{K::kLinear, 4}}}},
      {"linear_rows", {{3, 5}, {{K::kLinear, 4}, {K::kFlatten}}}},
      {"conv2d", {{2, 5, 5}, {{K::kConv2d, 3, 3, 1, 1}, {K::kFlatten}}}},
      {"conv2d_strided", {{2, 6, 7}, {{K::kConv2d, 2, 3, 2, 0}, {K::kFlatten}}}},
      {"depthwise_conv2d", {{3, 5, 5}, {{K::kDepthwiseConv2d, 0, 3, 1, 1}, {K::kFlatten}}}},
      {"depthwise_conv2d_strided", {{2, 7, 6}, {{K::kDepthwiseConv2d, 0, 3, 2, 1}, {K::kFlatten}}}},
      {"silu", {{7}, {{K::kSilu}}}},
      {"layernorm", {{9}, {{K::kLayerNorm}}}},
      {"global_avg_pool", {{3, 4, 4}, {{K::kGlobalAvgPool}}}},
      {"flatten", {{2, 3, 3}, {{K::kFlatten}}}},
      {"projection", {{5}, {{K::kLinear, 3}}}, 4},
      {"stack",
       {{2, 6, 6},
        {{K::kConv2d, 4, 3, 1, 1},
         {K::kSilu},
         {K::kDepthwiseConv2d, 0, 3, 2, 1},
         {K::kGlobalAvgPool},
         {K::kLayerNorm},
         {K::kLinear, 5}}}},
  };
}

}  // namespace fsle::gradcheck
