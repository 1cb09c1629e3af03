#pragma once

#include <functional>

#include "seqplace/nn/ops.hpp"

namespace seqplace::nn {

/**
 * Central finite-difference gradient verification.
 *
 * fn builds a graph from one gradient-tracking input leaf and returns any
 * output var; the output is contracted to a scalar with a fixed pseudo-random
 * weight vector so tensor-valued ops can be checked too. Returns the maximum
 * mismatch between reverse-mode and (f(x+eps) - f(x-eps)) / 2 eps over all
 * input elements, measured relative to max(1, |analytic|, |numeric|) so tiny
 * gradients are compared absolutely.
 *
 * Run with T = double; float rounding swamps the finite-difference signal.
 */
template <typename T>
T grad_check(const std::function<Var<T>(Tape<T>&, Var<T>)>& fn, const Tensor<T>& input,
             T eps = T(1e-5), uint64_t weight_seed = 0x5eed) {
  Tensor<T> weights;
  {
    // Fixed contraction weights, independent of the op under test.
    Tape<T> probe(false);
    Var<T> x = probe.leaf(input, false);
    Var<T> y = fn(probe, x);
    weights = Tensor<T>::zeros(y.value().shape);
    Rng rng(weight_seed);
    for (auto& w : weights.v) w = static_cast<T>(rng.normal());
  }

  const auto objective = [&](const Tensor<T>& point) -> T {
    Tape<T> tape(false);
    Var<T> x = tape.leaf(point, false);
    Var<T> y = fn(tape, x);
    T s = T(0);
    for (std::size_t i = 0; i < weights.v.size(); ++i) s += y.value().v[i] * weights.v[i];
    return s;
  };

  Tensor<T> analytic;
  {
    Tape<T> tape(true);
    Var<T> x = tape.leaf(input, true);
    Var<T> y = fn(tape, x);
    Var<T> obj = dot_const(y, weights);
    tape.backward(obj);
    analytic = x.grad();
  }

  T worst = T(0);
  Tensor<T> point = input;
  for (std::size_t i = 0; i < point.v.size(); ++i) {
    const T saved = point.v[i];
    point.v[i] = saved + eps;
    const T fp = objective(point);
    point.v[i] = saved - eps;
    const T fm = objective(point);
    point.v[i] = saved;
    const T numeric = (fp - fm) / (T(2) * eps);
    const T a = analytic.v[i];
    const T denom = std::max(T(1), std::max(std::abs(a), std::abs(numeric)));
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

}  // namespace seqplace::nn
