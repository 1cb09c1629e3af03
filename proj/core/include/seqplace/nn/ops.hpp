#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "seqplace/nn/tape.hpp"

// Differentiable kernels. Feature matrices follow a column-token layout:
// a tensor of shape [d, n] holds n positions (range-image columns, window
// columns) each carrying a d-dimensional feature. Self-attention over such a
// matrix is permutation-equivariant in the columns because nothing below
// encodes position.

namespace seqplace::nn {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using EVec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
Eigen::Map<const EMat<T>> mat_view(const Tensor<T>& t) {
  return {t.v.data(), static_cast<Eigen::Index>(t.shape[0]), static_cast<Eigen::Index>(t.shape[1])};
}

template <typename T>
Eigen::Map<EMat<T>> mat_view(Tensor<T>& t) {
  return {t.v.data(), static_cast<Eigen::Index>(t.shape[0]), static_cast<Eigen::Index>(t.shape[1])};
}

template <typename T>
Eigen::Map<const EVec<T>> vec_view(const Tensor<T>& t) {
  return {t.v.data(), static_cast<Eigen::Index>(t.numel())};
}

template <typename T>
Eigen::Map<EVec<T>> vec_view(Tensor<T>& t) {
  return {t.v.data(), static_cast<Eigen::Index>(t.numel())};
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ConfigError(msg);
}

template <typename T>
void require_same_tape(const Var<T>& a, const Var<T>& b) {
  require(&a.tape() == &b.tape(), "ops require vars from the same tape");
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_tape(a, b);
  require(a.value().same_shape(b.value()),
          "add: shape mismatch " + a.value().shape_string() + " vs " + b.value().shape_string());
  auto& tp = a.tape();
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += b.value().v[i];
  return tp.make(std::move(out), {a.id(), b.id()}, [ia = a.id(), ib = b.id()](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same_tape(a, b);
  require(a.value().same_shape(b.value()),
          "sub: shape mismatch " + a.value().shape_string() + " vs " + b.value().shape_string());
  auto& tp = a.tape();
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] -= b.value().v[i];
  return tp.make(std::move(out), {a.id(), b.id()}, [ia = a.id(), ib = b.id()](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    t.accumulate(ia, g);
    if (t.needs_grad(ib)) {
      Tensor<T> neg = g;
      for (auto& x : neg.v) x = -x;
      t.accumulate(ib, neg);
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_tape(a, b);
  require(a.value().same_shape(b.value()), "mul: shape mismatch");
  auto& tp = a.tape();
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] *= b.value().v[i];
  return tp.make(std::move(out), {a.id(), b.id()}, [ia = a.id(), ib = b.id()](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    if (t.needs_grad(ia)) {
      Tensor<T> da = g;
      const Tensor<T>& bv = t.value(ib);
      for (std::size_t i = 0; i < da.v.size(); ++i) da.v[i] *= bv.v[i];
      t.accumulate(ia, da);
    }
    if (t.needs_grad(ib)) {
      Tensor<T> db = g;
      const Tensor<T>& av = t.value(ia);
      for (std::size_t i = 0; i < db.v.size(); ++i) db.v[i] *= av.v[i];
      t.accumulate(ib, db);
    }
  });
}

template <typename T>
Var<T> scale_const(Var<T> a, T s) {
  auto& tp = a.tape();
  Tensor<T> out = a.value();
  for (auto& x : out.v) x *= s;
  return tp.make(std::move(out), {a.id()}, [ia = a.id(), s](Tape<T>& t, std::size_t self) {
    Tensor<T> da = t.grad(self);
    for (auto& x : da.v) x *= s;
    t.accumulate(ia, da);
  });
}

template <typename T>
Var<T> add_const(Var<T> a, T c) {
  auto& tp = a.tape();
  Tensor<T> out = a.value();
  for (auto& x : out.v) x += c;
  return tp.make(std::move(out), {a.id()}, [ia = a.id()](Tape<T>& t, std::size_t self) {
    t.accumulate(ia, t.grad(self));
  });
}

template <typename T>
Var<T> relu(Var<T> a) {
  auto& tp = a.tape();
  Tensor<T> out = a.value();
  for (auto& x : out.v) x = x > T(0) ? x : T(0);
  return tp.make(std::move(out), {a.id()}, [ia = a.id()](Tape<T>& t, std::size_t self) {
    if (!t.needs_grad(ia)) return;
    Tensor<T> da = t.grad(self);
    const Tensor<T>& x = t.value(ia);
    for (std::size_t i = 0; i < da.v.size(); ++i) {
      if (x.v[i] <= T(0)) da.v[i] = T(0);
    }
    t.accumulate(ia, da);
  });
}

template <typename T>
Var<T> softplus(Var<T> a) {
  auto& tp = a.tape();
  Tensor<T> out = a.value();
  for (auto& x : out.v) {
    x = x > T(30) ? x : std::log1p(std::exp(x));
  }
  return tp.make(std::move(out), {a.id()}, [ia = a.id()](Tape<T>& t, std::size_t self) {
    if (!t.needs_grad(ia)) return;
    Tensor<T> da = t.grad(self);
    const Tensor<T>& x = t.value(ia);
    for (std::size_t i = 0; i < da.v.size(); ++i) {
      da.v[i] *= T(1) / (T(1) + std::exp(-x.v[i]));
    }
    t.accumulate(ia, da);
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  require_same_tape(a, b);
  require(a.value().rank() == 2 && b.value().rank() == 2, "matmul: rank-2 tensors required");
  require(a.value().dim(1) == b.value().dim(0),
          "matmul: inner dim mismatch " + a.value().shape_string() + " * " + b.value().shape_string());
  auto& tp = a.tape();
  Tensor<T> out = Tensor<T>::zeros({a.value().dim(0), b.value().dim(1)});
  mat_view(out).noalias() = mat_view(a.value()) * mat_view(b.value());
  return tp.make(std::move(out), {a.id(), b.id()}, [ia = a.id(), ib = b.id()](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    if (t.needs_grad(ia)) {
      mat_view(t.grad(ia)).noalias() += mat_view(g) * mat_view(t.value(ib)).transpose();
    }
    if (t.needs_grad(ib)) {
      mat_view(t.grad(ib)).noalias() += mat_view(t.value(ia)).transpose() * mat_view(g);
    }
  });
}

template <typename T>
Var<T> matvec(Var<T> w, Var<T> x) {
  require_same_tape(w, x);
  require(w.value().rank() == 2 && x.value().rank() == 1, "matvec: need [m,k] and [k]");
  require(w.value().dim(1) == x.value().dim(0), "matvec: dim mismatch");
  auto& tp = w.tape();
  Tensor<T> out = Tensor<T>::zeros({w.value().dim(0)});
  vec_view(out).noalias() = mat_view(w.value()) * vec_view(x.value());
  return tp.make(std::move(out), {w.id(), x.id()}, [iw = w.id(), ix = x.id()](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    if (t.needs_grad(iw)) {
      mat_view(t.grad(iw)).noalias() += vec_view(g) * vec_view(t.value(ix)).transpose();
    }
    if (t.needs_grad(ix)) {
      vec_view(t.grad(ix)).noalias() += mat_view(t.value(iw)).transpose() * vec_view(g);
    }
  });
}

template <typename T>
Var<T> transpose(Var<T> a) {
  require(a.value().rank() == 2, "transpose: rank-2 required");
  auto& tp = a.tape();
  Tensor<T> out = Tensor<T>::zeros({a.value().dim(1), a.value().dim(0)});
  mat_view(out) = mat_view(a.value()).transpose();
  return tp.make(std::move(out), {a.id()}, [ia = a.id()](Tape<T>& t, std::size_t self) {
    if (!t.needs_grad(ia)) return;
    Tensor<T> da = Tensor<T>::zeros(t.value(ia).shape);
    mat_view(da) = mat_view(t.grad(self)).transpose();
    t.accumulate(ia, da);
  });
}

/** y[i, j] = x[i, j] + b[i]; bias applied per feature row across positions. */
template <typename T>
Var<T> add_rowwise(Var<T> x, Var<T> b) {
  require_same_tape(x, b);
  require(x.value().rank() == 2 && b.value().rank() == 1, "add_rowwise: need [d,n] and [d]");
  require(x.value().dim(0) == b.value().dim(0), "add_rowwise: row count mismatch");
  auto& tp = x.tape();
  Tensor<T> out = x.value();
  const std::size_t d = out.dim(0), n = out.dim(1);
  for (std::size_t i = 0; i < d; ++i) {
    const T bi = b.value().at(i);
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) += bi;
  }
  return tp.make(std::move(out), {x.id(), b.id()}, [ix = x.id(), ib = b.id()](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    t.accumulate(ix, g);
    if (t.needs_grad(ib)) {
      Tensor<T> db = Tensor<T>::zeros(t.value(ib).shape);
      const std::size_t d = g.dim(0), n = g.dim(1);
      for (std::size_t i = 0; i < d; ++i) {
        T s = T(0);
        for (std::size_t j = 0; j < n; ++j) s += g.at(i, j);
        db.at(i) = s;
      }
      t.accumulate(ib, db);
    }
  });
}

// ---------------------------------------------------------------------------
// Shape plumbing

template <typename T>
Var<T> reshape(Var<T> a, std::vector<std::size_t> new_shape) {
  require(Tensor<T>::expected_numel(new_shape) == a.value().numel(), "reshape: element count mismatch");
  auto& tp = a.tape();
  Tensor<T> out;
  out.shape = std::move(new_shape);
  out.v = a.value().v;
  return tp.make(std::move(out), {a.id()}, [ia = a.id()](Tape<T>& t, std::size_t self) {
    if (!t.needs_grad(ia)) return;
    Tensor<T> da;
    da.shape = t.value(ia).shape;
    da.v = t.grad(self).v;
    t.accumulate(ia, da);
  });
}

template <typename T>
Var<T> slice_rows(Var<T> a, std::size_t r0, std::size_t r1) {
  require(a.value().rank() == 2, "slice_rows: rank-2 required");
  require(r0 < r1 && r1 <= a.value().dim(0), "slice_rows: bad row range");
  auto& tp = a.tape();
  const std::size_t n = a.value().dim(1);
  Tensor<T> out = Tensor<T>::zeros({r1 - r0, n});
  std::copy(a.value().v.begin() + r0 * n, a.value().v.begin() + r1 * n, out.v.begin());
  return tp.make(std::move(out), {a.id()}, [ia = a.id(), r0](Tape<T>& t, std::size_t self) {
    if (!t.needs_grad(ia)) return;
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& da = t.grad(ia);
    const std::size_t n = g.dim(1);
    for (std::size_t i = 0; i < g.dim(0); ++i) {
      for (std::size_t j = 0; j < n; ++j) da.at(r0 + i, j) += g.at(i, j);
    }
  });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& xs) {
  require(!xs.empty(), "concat_rows: empty input");
  auto& tp = xs[0].tape();
  const std::size_t n = xs[0].value().dim(1);
  std::size_t rows = 0;
  std::vector<std::size_t> parents;
  for (const auto& x : xs) {
    require(&x.tape() == &tp, "concat_rows: vars from different tapes");
    require(x.value().rank() == 2 && x.value().dim(1) == n, "concat_rows: column count mismatch");
    rows += x.value().dim(0);
    parents.push_back(x.id());
  }
  Tensor<T> out = Tensor<T>::zeros({rows, n});
  std::size_t r = 0;
  for (const auto& x : xs) {
    std::copy(x.value().v.begin(), x.value().v.end(), out.v.begin() + r * n);
    r += x.value().dim(0);
  }
  return tp.make(std::move(out), parents, [parents](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    const std::size_t n = g.dim(1);
    std::size_t r = 0;
    for (std::size_t p : parents) {
      const std::size_t rows = t.value(p).dim(0);
      if (t.needs_grad(p)) {
        Tensor<T>& dp = t.grad(p);
        for (std::size_t i = 0; i < rows; ++i) {
          for (std::size_t j = 0; j < n; ++j) dp.at(i, j) += g.at(r + i, j);
        }
      }
      r += rows;
    }
  });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& xs) {
  require(!xs.empty(), "concat_cols: empty input");
  auto& tp = xs[0].tape();
  const std::size_t d = xs[0].value().dim(0);
  std::size_t cols = 0;
  std::vector<std::size_t> parents;
  for (const auto& x : xs) {
    require(&x.tape() == &tp, "concat_cols: vars from different tapes");
    require(x.value().rank() == 2 && x.value().dim(0) == d, "concat_cols: row count mismatch");
    cols += x.value().dim(1);
    parents.push_back(x.id());
  }
  Tensor<T> out = Tensor<T>::zeros({d, cols});
  std::size_t c = 0;
  for (const auto& x : xs) {
    const std::size_t nx = x.value().dim(1);
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < nx; ++j) out.at(i, c + j) = x.value().at(i, j);
    }
    c += nx;
  }
  return tp.make(std::move(out), parents, [parents](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    const std::size_t d = g.dim(0);
    std::size_t c = 0;
    for (std::size_t p : parents) {
      const std::size_t nx = t.value(p).dim(1);
      if (t.needs_grad(p)) {
        Tensor<T>& dp = t.grad(p);
        for (std::size_t i = 0; i < d; ++i) {
          for (std::size_t j = 0; j < nx; ++j) dp.at(i, j) += g.at(i, c + j);
        }
      }
      c += nx;
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Var<T> sum_all(Var<T> a) {
  auto& tp = a.tape();
  T s = T(0);
  for (T x : a.value().v) s += x;
  return tp.make(Tensor<T>::scalar(s), {a.id()}, [ia = a.id()](Tape<T>& t, std::size_t self) {
    if (!t.needs_grad(ia)) return;
    const T g = t.grad(self).at(0);
    Tensor<T>& da = t.grad(ia);
    for (auto& x : da.v) x += g;
  });
}

/** Weighted sum with fixed weights; scalarizes a tensor for gradient checks. */
template <typename T>
Var<T> dot_const(Var<T> a, Tensor<T> weights) {
  require(a.value().same_shape(weights), "dot_const: shape mismatch");
  auto& tp = a.tape();
  T s = T(0);
  for (std::size_t i = 0; i < weights.v.size(); ++i) s += a.value().v[i] * weights.v[i];
  return tp.make(Tensor<T>::scalar(s), {a.id()},
                 [ia = a.id(), w = std::move(weights)](Tape<T>& t, std::size_t self) {
                   if (!t.needs_grad(ia)) return;
                   const T g = t.grad(self).at(0);
                   Tensor<T>& da = t.grad(ia);
                   for (std::size_t i = 0; i < w.v.size(); ++i) da.v[i] += g * w.v[i];
                 });
}

/** Max over scalars; the subgradient goes to the first argmax. */
template <typename T>
Var<T> vmax(const std::vector<Var<T>>& xs) {
  require(!xs.empty(), "vmax: empty input");
  auto& tp = xs[0].tape();
  std::size_t arg = 0;
  T best = xs[0].value().at(0);
  std::vector<std::size_t> parents;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    require(&xs[i].tape() == &tp, "vmax: vars from different tapes");
    require(xs[i].value().numel() == 1, "vmax: scalars required");
    parents.push_back(xs[i].id());
    if (xs[i].value().at(0) > best) {
      best = xs[i].value().at(0);
      arg = i;
    }
  }
  const std::size_t winner = parents[arg];
  return tp.make(Tensor<T>::scalar(best), parents, [winner](Tape<T>& t, std::size_t self) {
    t.accumulate(winner, t.grad(self));
  });
}

// ---------------------------------------------------------------------------
// Normalization

/** Softmax over dim 0; each column of [k, n] sums to 1. */
template <typename T>
Var<T> softmax_dim0(Var<T> a) {
  require(a.value().rank() == 2, "softmax_dim0: rank-2 required");
  auto& tp = a.tape();
  const std::size_t k = a.value().dim(0), n = a.value().dim(1);
  Tensor<T> out = Tensor<T>::zeros({k, n});
  for (std::size_t j = 0; j < n; ++j) {
    T mx = a.value().at(0, j);
    for (std::size_t i = 1; i < k; ++i) mx = std::max(mx, a.value().at(i, j));
    T denom = T(0);
    for (std::size_t i = 0; i < k; ++i) {
      const T e = std::exp(a.value().at(i, j) - mx);
      out.at(i, j) = e;
      denom += e;
    }
    for (std::size_t i = 0; i < k; ++i) out.at(i, j) /= denom;
  }
  return tp.make(std::move(out), {a.id()}, [ia = a.id()](Tape<T>& t, std::size_t self) {
    if (!t.needs_grad(ia)) return;
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& y = t.value(self);
    Tensor<T>& da = t.grad(ia);
    const std::size_t k = y.dim(0), n = y.dim(1);
    for (std::size_t j = 0; j < n; ++j) {
      T dot = T(0);
      for (std::size_t i = 0; i < k; ++i) dot += g.at(i, j) * y.at(i, j);
      for (std::size_t i = 0; i < k; ++i) da.at(i, j) += y.at(i, j) * (g.at(i, j) - dot);
    }
  });
}

/**
 * LayerNorm over the feature dimension, independently per column of [d, n].
 * Per-column statistics keep the op equivariant to column permutations.
 */
template <typename T>
Var<T> layer_norm_cols(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5)) {
  require_same_tape(x, gamma);
  require_same_tape(x, beta);
  require(x.value().rank() == 2, "layer_norm_cols: rank-2 required");
  const std::size_t d = x.value().dim(0), n = x.value().dim(1);
  require(gamma.value().rank() == 1 && gamma.value().dim(0) == d, "layer_norm_cols: gamma shape");
  require(beta.value().rank() == 1 && beta.value().dim(0) == d, "layer_norm_cols: beta shape");
  auto& tp = x.tape();
  Tensor<T> out = Tensor<T>::zeros({d, n});
  std::vector<T> mean(n), inv_std(n);
  for (std::size_t j = 0; j < n; ++j) {
    T mu = T(0);
    for (std::size_t i = 0; i < d; ++i) mu += x.value().at(i, j);
    mu /= static_cast<T>(d);
    T var = T(0);
    for (std::size_t i = 0; i < d; ++i) {
      const T c = x.value().at(i, j) - mu;
      var += c * c;
    }
    var /= static_cast<T>(d);
    const T inv = T(1) / std::sqrt(var + eps);
    mean[j] = mu;
    inv_std[j] = inv;
    for (std::size_t i = 0; i < d; ++i) {
      out.at(i, j) = gamma.value().at(i) * (x.value().at(i, j) - mu) * inv + beta.value().at(i);
    }
  }
  return tp.make(std::move(out), {x.id(), gamma.id(), beta.id()},
                 [ix = x.id(), ig = gamma.id(), ib = beta.id(), mean = std::move(mean),
                  inv_std = std::move(inv_std)](Tape<T>& t, std::size_t self) {
                   const Tensor<T>& g = t.grad(self);
                   const Tensor<T>& xv = t.value(ix);
                   const Tensor<T>& gam = t.value(ig);
                   const std::size_t d = xv.dim(0), n = xv.dim(1);
                   std::vector<T> xhat(d), dxh(d);
                   const bool need_x = t.needs_grad(ix);
                   const bool need_g = t.needs_grad(ig);
                   const bool need_b = t.needs_grad(ib);
                   Tensor<T> dgamma = Tensor<T>::zeros({d});
                   Tensor<T> dbeta = Tensor<T>::zeros({d});
                   for (std::size_t j = 0; j < n; ++j) {
                     for (std::size_t i = 0; i < d; ++i) {
                       xhat[i] = (xv.at(i, j) - mean[j]) * inv_std[j];
                     }
                     if (need_g || need_b) {
                       for (std::size_t i = 0; i < d; ++i) {
                         dgamma.at(i) += g.at(i, j) * xhat[i];
                         dbeta.at(i) += g.at(i, j);
                       }
                     }
                     if (need_x) {
                       T m1 = T(0), m2 = T(0);
                       for (std::size_t i = 0; i < d; ++i) {
                         dxh[i] = g.at(i, j) * gam.at(i);
                         m1 += dxh[i];
                         m2 += dxh[i] * xhat[i];
                       }
                       m1 /= static_cast<T>(d);
                       m2 /= static_cast<T>(d);
                       Tensor<T>& dx = t.grad(ix);
                       for (std::size_t i = 0; i < d; ++i) {
                         dx.at(i, j) += inv_std[j] * (dxh[i] - m1 - xhat[i] * m2);
                       }
                     }
                   }
                   if (need_g) t.accumulate(ig, dgamma);
                   if (need_b) t.accumulate(ib, dbeta);
                 });
}

/** L2-normalizes a rank-1 tensor: y = x / sqrt(|x|^2 + tiny). */
template <typename T>
Var<T> l2_normalize(Var<T> x, T tiny = T(1e-24)) {
  require(x.value().rank() == 1, "l2_normalize: rank-1 required");
  auto& tp = x.tape();
  T ss = T(0);
  for (T v : x.value().v) ss += v * v;
  const T inv = T(1) / std::sqrt(ss + tiny);
  Tensor<T> out = x.value();
  for (auto& v : out.v) v *= inv;
  return tp.make(std::move(out), {x.id()}, [ix = x.id(), inv](Tape<T>& t, std::size_t self) {
    if (!t.needs_grad(ix)) return;
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& y = t.value(self);
    T dot = T(0);
    for (std::size_t i = 0; i < g.v.size(); ++i) dot += g.v[i] * y.v[i];
    Tensor<T>& dx = t.grad(ix);
    for (std::size_t i = 0; i < g.v.size(); ++i) {
      dx.v[i] += inv * (g.v[i] - y.v[i] * dot);
    }
  });
}

/** Row-wise L2 normalization of [k, d] (NetVLAD intra-normalization). */
template <typename T>
Var<T> l2_normalize_rows(Var<T> x, T tiny = T(1e-24)) {
  require(x.value().rank() == 2, "l2_normalize_rows: rank-2 required");
  auto& tp = x.tape();
  const std::size_t k = x.value().dim(0), d = x.value().dim(1);
  Tensor<T> out = Tensor<T>::zeros({k, d});
  std::vector<T> inv(k);
  for (std::size_t i = 0; i < k; ++i) {
    T ss = T(0);
    for (std::size_t j = 0; j < d; ++j) ss += x.value().at(i, j) * x.value().at(i, j);
    inv[i] = T(1) / std::sqrt(ss + tiny);
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) = x.value().at(i, j) * inv[i];
  }
  return tp.make(std::move(out), {x.id()},
                 [ix = x.id(), inv = std::move(inv)](Tape<T>& t, std::size_t self) {
                   if (!t.needs_grad(ix)) return;
                   const Tensor<T>& g = t.grad(self);
                   const Tensor<T>& y = t.value(self);
                   Tensor<T>& dx = t.grad(ix);
                   const std::size_t k = y.dim(0), d = y.dim(1);
                   for (std::size_t i = 0; i < k; ++i) {
                     T dot = T(0);
                     for (std::size_t j = 0; j < d; ++j) dot += g.at(i, j) * y.at(i, j);
                     for (std::size_t j = 0; j < d; ++j) {
                       dx.at(i, j) += inv[i] * (g.at(i, j) - y.at(i, j) * dot);
                     }
                   }
                 });
}

// ---------------------------------------------------------------------------
// NetVLAD helpers

template <typename T>
Var<T> row_sums(Var<T> a) {
  require(a.value().rank() == 2, "row_sums: rank-2 required");
  auto& tp = a.tape();
  const std::size_t k = a.value().dim(0), n = a.value().dim(1);
  Tensor<T> out = Tensor<T>::zeros({k});
  for (std::size_t i = 0; i < k; ++i) {
    T s = T(0);
    for (std::size_t j = 0; j < n; ++j) s += a.value().at(i, j);
    out.at(i) = s;
  }
  return tp.make(std::move(out), {a.id()}, [ia = a.id()](Tape<T>& t, std::size_t self) {
    if (!t.needs_grad(ia)) return;
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& da = t.grad(ia);
    const std::size_t k = da.dim(0), n = da.dim(1);
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < n; ++j) da.at(i, j) += g.at(i);
    }
  });
}

/** y[i, :] = c[i, :] * s[i]. */
template <typename T>
Var<T> rowscale(Var<T> c, Var<T> s) {
  require_same_tape(c, s);
  require(c.value().rank() == 2 && s.value().rank() == 1, "rowscale: need [k,d] and [k]");
  require(c.value().dim(0) == s.value().dim(0), "rowscale: row count mismatch");
  auto& tp = c.tape();
  const std::size_t k = c.value().dim(0), d = c.value().dim(1);
  Tensor<T> out = Tensor<T>::zeros({k, d});
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) = c.value().at(i, j) * s.value().at(i);
  }
  return tp.make(std::move(out), {c.id(), s.id()}, [ic = c.id(), is = s.id()](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    const std::size_t k = g.dim(0), d = g.dim(1);
    if (t.needs_grad(ic)) {
      const Tensor<T>& sv = t.value(is);
      Tensor<T>& dc = t.grad(ic);
      for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < d; ++j) dc.at(i, j) += g.at(i, j) * sv.at(i);
      }
    }
    if (t.needs_grad(is)) {
      const Tensor<T>& cv = t.value(ic);
      Tensor<T>& ds = t.grad(is);
      for (std::size_t i = 0; i < k; ++i) {
        T dot = T(0);
        for (std::size_t j = 0; j < d; ++j) dot += g.at(i, j) * cv.at(i, j);
        ds.at(i) += dot;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Convolution

enum class WidthPadding { None, Circular };

/**
 * 2-D convolution over [c_in, h, w] with kernel [c_out, c_in, kh, kw].
 * Stride applies to height only; the width dimension always has stride 1 and
 * its length is preserved. Any configuration that could break the
 * column-shift property of the width axis is rejected.
 */
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> kernel, Var<T> bias, std::size_t stride_h,
              WidthPadding padding = WidthPadding::None) {
  require_same_tape(x, kernel);
  require_same_tape(x, bias);
  require(x.value().rank() == 3, "conv2d: input must be [c_in, h, w]");
  require(kernel.value().rank() == 4, "conv2d: kernel must be [c_out, c_in, kh, kw]");
  const std::size_t cin = x.value().dim(0), h = x.value().dim(1), w = x.value().dim(2);
  const std::size_t cout = kernel.value().dim(0), kh = kernel.value().dim(2), kw = kernel.value().dim(3);
  require(kernel.value().dim(1) == cin, "conv2d: channel mismatch");
  require(bias.value().rank() == 1 && bias.value().dim(0) == cout, "conv2d: bias shape");
  require(stride_h >= 1, "conv2d: stride must be >= 1");
  require(kh >= 1 && kh <= h, "conv2d: kernel height exceeds input");
  if (kw != 1 && padding != WidthPadding::Circular) {
    throw ConfigError("conv2d: equivariance violation, kernel width " + std::to_string(kw) +
                      " requires circular width padding");
  }
  require(kw <= w, "conv2d: kernel width exceeds input");
  const std::size_t oh = (h - kh) / stride_h + 1;
  const std::size_t off = (kw - 1) / 2;
  auto& tp = x.tape();
  Tensor<T> out = Tensor<T>::zeros({cout, oh, w});
  for (std::size_t co = 0; co < cout; ++co) {
    const T b = bias.value().at(co);
    for (std::size_t oy = 0; oy < oh; ++oy) {
      T* orow = &out.at(co, oy, 0);
      for (std::size_t j = 0; j < w; ++j) orow[j] = b;
      for (std::size_t ci = 0; ci < cin; ++ci) {
        for (std::size_t dy = 0; dy < kh; ++dy) {
          const T* irow = &x.value().at(ci, oy * stride_h + dy, 0);
          for (std::size_t dx = 0; dx < kw; ++dx) {
            const T kv = kernel.value().at(co, ci, dy, dx);
            if (kw == 1) {
              for (std::size_t j = 0; j < w; ++j) orow[j] += kv * irow[j];
            } else {
              for (std::size_t j = 0; j < w; ++j) {
                orow[j] += kv * irow[(j + dx + w - off) % w];
              }
            }
          }
        }
      }
    }
  }
  return tp.make(std::move(out), {x.id(), kernel.id(), bias.id()},
                 [ix = x.id(), ik = kernel.id(), ib = bias.id(), stride_h, off](Tape<T>& t, std::size_t self) {
                   const Tensor<T>& g = t.grad(self);
                   const Tensor<T>& xv = t.value(ix);
                   const Tensor<T>& kv = t.value(ik);
                   const std::size_t cout = g.dim(0), oh = g.dim(1), w = g.dim(2);
                   const std::size_t cin = xv.dim(0), kh = kv.dim(2), kw = kv.dim(3);
                   if (t.needs_grad(ib)) {
                     Tensor<T>& db = t.grad(ib);
                     for (std::size_t co = 0; co < cout; ++co) {
                       T s = T(0);
                       for (std::size_t oy = 0; oy < oh; ++oy) {
                         for (std::size_t j = 0; j < w; ++j) s += g.at(co, oy, j);
                       }
                       db.at(co) += s;
                     }
                   }
                   const bool need_k = t.needs_grad(ik);
                   const bool need_x = t.needs_grad(ix);
                   if (!need_k && !need_x) return;
                   for (std::size_t co = 0; co < cout; ++co) {
                     for (std::size_t oy = 0; oy < oh; ++oy) {
                       const T* grow = &g.at(co, oy, 0);
                       for (std::size_t ci = 0; ci < cin; ++ci) {
                         for (std::size_t dy = 0; dy < kh; ++dy) {
                           const std::size_t iy = oy * stride_h + dy;
                           const T* irow = &xv.at(ci, iy, 0);
                           for (std::size_t dx = 0; dx < kw; ++dx) {
                             const std::size_t shift = (dx + w - off) % w;
                             if (need_k) {
                               T s = T(0);
                               for (std::size_t j = 0; j < w; ++j) {
                                 s += grow[j] * irow[(j + shift) % w];
                               }
                               t.grad(ik).at(co, ci, dy, dx) += s;
                             }
                             if (need_x) {
                               const T kval = kv.at(co, ci, dy, dx);
                               T* dxrow = &t.grad(ix).at(ci, iy, 0);
                               for (std::size_t j = 0; j < w; ++j) {
                                 dxrow[(j + shift) % w] += grow[j] * kval;
                               }
                             }
                           }
                         }
                       }
                     }
                   }
                 });
}

// ---------------------------------------------------------------------------
// Attention

/**
 * A = softmax(q^T k / sqrt(d_k)) for per-head q, k of shape [d_k, n].
 * Row j of A holds the attention of query position j over all key positions
 * and sums to 1.
 */
template <typename T>
Var<T> scaled_softmax_qk(Var<T> q, Var<T> k) {
  require_same_tape(q, k);
  require(q.value().rank() == 2 && k.value().rank() == 2, "scaled_softmax_qk: rank-2 required");
  require(q.value().dim(0) == k.value().dim(0), "scaled_softmax_qk: head dim mismatch");
  require(q.value().dim(1) == k.value().dim(1), "scaled_softmax_qk: sequence length mismatch");
  auto& tp = q.tape();
  const std::size_t dk = q.value().dim(0), n = q.value().dim(1);
  const T scale = T(1) / std::sqrt(static_cast<T>(dk));
  Tensor<T> a = Tensor<T>::zeros({n, n});
  mat_view(a).noalias() = (mat_view(q.value()).transpose() * mat_view(k.value())) * scale;
  for (std::size_t j = 0; j < n; ++j) {
    T* row = &a.at(j, 0);
    T mx = row[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, row[i]);
    T denom = T(0);
    for (std::size_t i = 0; i < n; ++i) {
      row[i] = std::exp(row[i] - mx);
      denom += row[i];
    }
    for (std::size_t i = 0; i < n; ++i) row[i] /= denom;
  }
  return tp.make(std::move(a), {q.id(), k.id()},
                 [iq = q.id(), ik = k.id(), scale](Tape<T>& t, std::size_t self) {
                   const Tensor<T>& g = t.grad(self);
                   const Tensor<T>& a = t.value(self);
                   const std::size_t n = a.dim(0);
                   // Softmax backward per row, then the bilinear part.
                   Tensor<T> ds = Tensor<T>::zeros({n, n});
                   for (std::size_t j = 0; j < n; ++j) {
                     T dot = T(0);
                     for (std::size_t i = 0; i < n; ++i) dot += g.at(j, i) * a.at(j, i);
                     for (std::size_t i = 0; i < n; ++i) {
                       ds.at(j, i) = a.at(j, i) * (g.at(j, i) - dot);
                     }
                   }
                   if (t.needs_grad(iq)) {
                     mat_view(t.grad(iq)).noalias() +=
                         (mat_view(t.value(ik)) * mat_view(ds).transpose()) * scale;
                   }
                   if (t.needs_grad(ik)) {
                     mat_view(t.grad(ik)).noalias() += (mat_view(t.value(iq)) * mat_view(ds)) * scale;
                   }
                 });
}

/** out[:, j] = sum_i A[j, i] * v[:, i]. */
template <typename T>
Var<T> attn_apply(Var<T> a, Var<T> v) {
  require_same_tape(a, v);
  require(a.value().rank() == 2 && a.value().dim(0) == a.value().dim(1), "attn_apply: square weights required");
  require(v.value().rank() == 2 && v.value().dim(1) == a.value().dim(0), "attn_apply: value length mismatch");
  auto& tp = a.tape();
  const std::size_t n = a.value().dim(0), dv = v.value().dim(0);
  Tensor<T> out = Tensor<T>::zeros({dv, n});
  mat_view(out).noalias() = mat_view(v.value()) * mat_view(a.value()).transpose();
  return tp.make(std::move(out), {a.id(), v.id()}, [ia = a.id(), iv = v.id()](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    if (t.needs_grad(iv)) {
      mat_view(t.grad(iv)).noalias() += mat_view(g) * mat_view(t.value(ia));
    }
    if (t.needs_grad(ia)) {
      mat_view(t.grad(ia)).noalias() += mat_view(g).transpose() * mat_view(t.value(iv));
    }
  });
}

template <typename T>
struct AttentionParams {
  Var<T> wq, bq, wk, bk, wv, bv, wo, bo;
};

template <typename T>
struct MhsaResult {
  Var<T> out;
  std::vector<Var<T>> weights;  // one [n, n] attention matrix per head
};

/**
 * Multi-head self-attention on [d, n] without positional encoding. Heads
 * split the feature dimension evenly. Returns the output and the per-head
 * attention weights.
 */
template <typename T>
MhsaResult<T> mhsa_with_weights(Var<T> x, const AttentionParams<T>& p, std::size_t heads) {
  require(x.value().rank() == 2, "mhsa: input must be [d, n]");
  const std::size_t d = x.value().dim(0);
  require(heads >= 1 && d % heads == 0,
          "mhsa: feature dim " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  const std::size_t dk = d / heads;
  auto q = add_rowwise(matmul(p.wq, x), p.bq);
  auto k = add_rowwise(matmul(p.wk, x), p.bk);
  auto v = add_rowwise(matmul(p.wv, x), p.bv);
  std::vector<Var<T>> head_outs;
  std::vector<Var<T>> weights;
  head_outs.reserve(heads);
  for (std::size_t hindex = 0; hindex < heads; ++hindex) {
    auto qh = slice_rows(q, hindex * dk, (hindex + 1) * dk);
    auto kh = slice_rows(k, hindex * dk, (hindex + 1) * dk);
    auto vh = slice_rows(v, hindex * dk, (hindex + 1) * dk);
    auto a = scaled_softmax_qk(qh, kh);
    weights.push_back(a);
    head_outs.push_back(attn_apply(a, vh));
  }
  auto merged = heads == 1 ? head_outs[0] : concat_rows(head_outs);
  auto out = add_rowwise(matmul(p.wo, merged), p.bo);
  return {out, std::move(weights)};
}

template <typename T>
Var<T> mhsa(Var<T> x, const AttentionParams<T>& p, std::size_t heads) {
  return mhsa_with_weights(x, p, heads).out;
}

template <typename T>
struct TransformerParams {
  AttentionParams<T> attn;
  Var<T> ln1_gamma, ln1_beta;
  Var<T> ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  Var<T> ln2_gamma, ln2_beta;
};

/** MHSA -> add -> LayerNorm -> FFN -> add -> LayerNorm, all position-wise. */
template <typename T>
Var<T> transformer_block(Var<T> x, const TransformerParams<T>& p, std::size_t heads) {
  auto attended = mhsa(x, p.attn, heads);
  auto y1 = layer_norm_cols(add(x, attended), p.ln1_gamma, p.ln1_beta);
  auto hidden = relu(add_rowwise(matmul(p.ffn_w1, y1), p.ffn_b1));
  auto ffn = add_rowwise(matmul(p.ffn_w2, hidden), p.ffn_b2);
  return layer_norm_cols(add(y1, ffn), p.ln2_gamma, p.ln2_beta);
}

// ---------------------------------------------------------------------------
// Pooling

/**
 * Generalized-mean pooling of a set of equally sized rank-1 tensors:
 * y_i = (mean_j max(x_j[i], eps)^p)^(1/p). Accumulation runs in double so the
 * result is independent of input order well below representable precision.
 */
template <typename T>
Var<T> gem_combine(const std::vector<Var<T>>& subs, Var<T> p, T eps = T(1e-6)) {
  require(!subs.empty(), "gem_combine: empty input");
  require(p.value().numel() == 1, "gem_combine: p must be scalar");
  auto& tp = subs[0].tape();
  const std::size_t d = subs[0].value().dim(0);
  std::vector<std::size_t> parents;
  for (const auto& s : subs) {
    require(&s.tape() == &tp, "gem_combine: vars from different tapes");
    require(s.value().rank() == 1 && s.value().dim(0) == d, "gem_combine: shape mismatch");
    parents.push_back(s.id());
  }
  parents.push_back(p.id());
  const T pv = p.value().at(0);
  require(pv > T(0), "gem_combine: p must be positive");
  const std::size_t count = subs.size();
  Tensor<T> out = Tensor<T>::zeros({d});
  std::vector<double> m(d, 0.0);
  for (const auto& s : subs) {
    for (std::size_t i = 0; i < d; ++i) {
      const double c = std::max(static_cast<double>(s.value().at(i)), static_cast<double>(eps));
      m[i] += std::pow(c, static_cast<double>(pv));
    }
  }
  for (std::size_t i = 0; i < d; ++i) {
    m[i] /= static_cast<double>(count);
    out.at(i) = static_cast<T>(std::pow(m[i], 1.0 / static_cast<double>(pv)));
  }
  return tp.make(std::move(out), parents,
                 [parents, ip = p.id(), eps, count, d](Tape<T>& t, std::size_t self) {
                   const Tensor<T>& g = t.grad(self);
                   const Tensor<T>& y = t.value(self);
                   const double pv = static_cast<double>(t.value(ip).at(0));
                   // Recompute the power means and, if needed, d/dp terms.
                   std::vector<double> m(d, 0.0), dp_num(d, 0.0);
                   const bool need_p = t.needs_grad(ip);
                   for (std::size_t s = 0; s < count; ++s) {
                     const Tensor<T>& sv = t.value(parents[s]);
                     for (std::size_t i = 0; i < d; ++i) {
                       const double c = std::max(static_cast<double>(sv.at(i)), static_cast<double>(eps));
                       const double cp = std::pow(c, pv);
                       m[i] += cp;
                       if (need_p) dp_num[i] += cp * std::log(c);
                     }
                   }
                   for (std::size_t i = 0; i < d; ++i) m[i] /= static_cast<double>(count);
                   for (std::size_t s = 0; s < count; ++s) {
                     if (!t.needs_grad(parents[s])) continue;
                     const Tensor<T>& sv = t.value(parents[s]);
                     Tensor<T>& ds = t.grad(parents[s]);
                     for (std::size_t i = 0; i < d; ++i) {
                       const double x = static_cast<double>(sv.at(i));
                       if (x <= static_cast<double>(eps)) continue;
                       const double dydc = std::pow(m[i], 1.0 / pv - 1.0) * std::pow(x, pv - 1.0) /
                                           static_cast<double>(count);
                       ds.at(i) += static_cast<T>(static_cast<double>(g.at(i)) * dydc);
                     }
                   }
                   if (need_p) {
                     double dp = 0.0;
                     for (std::size_t i = 0; i < d; ++i) {
                       const double yi = static_cast<double>(y.at(i));
                       const double dm_dp = dp_num[i] / static_cast<double>(count);
                       const double dy_dp =
                           yi * (-std::log(m[i]) / (pv * pv) + dm_dp / (pv * m[i]));
                       dp += static_cast<double>(g.at(i)) * dy_dp;
                     }
                     Tensor<T> dpt = Tensor<T>::scalar(static_cast<T>(dp));
                     t.accumulate(ip, dpt);
                   }
                 });
}

/** Squared Euclidean distance between two rank-1 tensors, as a graph. */
template <typename T>
Var<T> squared_distance(Var<T> a, Var<T> b) {
  auto diff = sub(a, b);
  return sum_all(mul(diff, diff));
}

}  // namespace seqplace::nn
