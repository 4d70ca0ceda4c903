#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "ssps/ops.hpp"
#include "ssps/rng.hpp"
#include "ssps/tensor.hpp"

namespace gradcheck {

using Fn = std::function<ssps::Tensor(const std::vector<ssps::Tensor>&)>;

struct Result {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

// Compares the analytic gradient of sum(c * f(inputs)) with fixed random c
// against central differences. Relative error uses max(|a|, |n|, floor) as
// the denominator so exact zeros on both sides count as agreement.
inline Result check(const Fn& f, std::vector<ssps::Tensor> inputs, ssps::Rng& rng, double step = 1e-5,
                    double floor = 1e-3) {
  for (auto& t : inputs) t.set_requires_grad(true);
  ssps::Tensor out = f(inputs);
  std::vector<double> coeffs(out.numel());
  for (auto& c : coeffs) c = rng.uniform(-1.0, 1.0);
  ssps::backward(ssps::ops::weighted_sum(out, coeffs));

  auto value = [&]() {
    const ssps::Tensor o = f(inputs);
    double s = 0.0;
    for (std::size_t i = 0; i < o.numel(); ++i) s += coeffs[i] * o[i];
    return s;
  };
  Result r;
  for (auto& t : inputs) {
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double orig = t[i];
      t.mutable_data()[i] = orig + step;
      const double up = value();
      t.mutable_data()[i] = orig - step;
      const double down = value();
      t.mutable_data()[i] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic.empty() ? 0.0 : analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      r.max_rel_error = std::max(r.max_rel_error, std::abs(a - numeric) / denom);
      ++r.checked;
    }
  }
  return r;
}

inline ssps::Tensor random_tensor(ssps::Rng& rng, ssps::Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(ssps::shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return ssps::Tensor::from(std::move(shape), std::move(v));
}

// Values kept at least `gap` away from every point in `kinks`.
inline ssps::Tensor away_from(ssps::Rng& rng, ssps::Shape shape, std::vector<double> kinks, double gap,
                              double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(ssps::shape_numel(shape));
  for (auto& x : v) {
    do {
      x = rng.uniform(lo, hi);
    } while (std::any_of(kinks.begin(), kinks.end(), [&](double k) { return std::abs(x - k) < gap; }));
  }
  return ssps::Tensor::from(std::move(shape), std::move(v));
}

// One named family of random gradient-check instances.
struct Case {
  const char* name;
  std::function<Result(ssps::Rng&)> run;
};

// Every differentiable op on random small shapes. Each call of `run` draws
// a fresh instance.
std::vector<Case> op_cases();

}  // namespace gradcheck
