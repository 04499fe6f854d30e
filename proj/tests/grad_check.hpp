#pragma once

// Central-difference gradient checks for scalar-valued graphs in double.

#include "psgan/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace psgan::testing {

using TensorD = ag::Tensor<double>;

struct GradMismatch {
  std::size_t tensor = 0;
  Eigen::Index index = 0;
  double analytic = 0;
  double numeric = 0;
  double rel = 0;
};

/// Compares backward() gradients of `loss()` against central differences on up
/// to `samples` entries per tensor. Returns the worst entry.
inline GradMismatch grad_check(const std::function<TensorD()>& loss, std::vector<TensorD> wrt, int samples = 12,
                               double h = 1e-6, std::uint64_t seed = 1) {
  for (auto& t : wrt) t.zero_grad();
  TensorD l = loss();
  l.backward();
  std::vector<Eigen::ArrayXd> analytic;
  for (auto& t : wrt) analytic.push_back(t.grad());

  std::mt19937_64 rng(seed);
  GradMismatch worst;
  worst.rel = -1;
  for (std::size_t ti = 0; ti < wrt.size(); ++ti) {
    auto& t = wrt[ti];
    const Eigen::Index n = t.value().size();
    std::vector<Eigen::Index> idx;
    if (n <= samples) {
      for (Eigen::Index i = 0; i < n; ++i) idx.push_back(i);
    } else {
      std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
      for (int s = 0; s < samples; ++s) idx.push_back(pick(rng));
    }
    for (Eigen::Index i : idx) {
      const double keep = t.value()(i);
      t.mutable_value()(i) = keep + h;
      const double up = loss().item();
      t.mutable_value()(i) = keep - h;
      const double down = loss().item();
      t.mutable_value()(i) = keep;
      const double num = (up - down) / (2 * h);
      const double ana = analytic[ti](i);
      const double rel = std::abs(ana - num) / std::max(1e-4, std::abs(ana) + std::abs(num));
      if (rel > worst.rel) worst = {ti, i, ana, num, rel};
    }
  }
  for (auto& t : wrt) t.zero_grad();
  return worst;
}

inline TensorD random_param(const ag::Shape& s, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  Eigen::ArrayXd v(s.size());
  for (auto& x : v) x = d(rng);
  return TensorD::parameter(s, v);
}

}  // namespace psgan::testing
