#pragma once

#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "seqplace/common.hpp"

namespace seqplace::nn {

/**
 * Dense n-dimensional array, row-major. The scalar type is a template
 * parameter so the same kernels run in float for production and in double
 * for finite-difference gradient checks.
 */
template <typename T>
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<T> v;

  Tensor() = default;
  Tensor(std::vector<std::size_t> s, std::vector<T> data) : shape(std::move(s)), v(std::move(data)) {
    if (v.size() != expected_numel(shape)) {
      throw ConfigError("tensor data size " + std::to_string(v.size()) +
                        " does not match shape (" + shape_string() + ")");
    }
  }

  static std::size_t expected_numel(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
  }

  static Tensor zeros(std::vector<std::size_t> s) {
    Tensor t;
    t.shape = std::move(s);
    t.v.assign(expected_numel(t.shape), T(0));
    return t;
  }

  static Tensor full(std::vector<std::size_t> s, T value) {
    Tensor t = zeros(std::move(s));
    std::fill(t.v.begin(), t.v.end(), value);
    return t;
  }

  static Tensor scalar(T value) { return Tensor({1}, {value}); }

  std::size_t numel() const { return v.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }

  T& at(std::size_t i) { return v[i]; }
  const T& at(std::size_t i) const { return v[i]; }

  T& at(std::size_t i, std::size_t j) { return v[i * shape[1] + j]; }
  const T& at(std::size_t i, std::size_t j) const { return v[i * shape[1] + j]; }

  T& at(std::size_t i, std::size_t j, std::size_t k) {
    return v[(i * shape[1] + j) * shape[2] + k];
  }
  const T& at(std::size_t i, std::size_t j, std::size_t k) const {
    return v[(i * shape[1] + j) * shape[2] + k];
  }

  T& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
    return v[((i * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }
  const T& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
    return v[((i * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  std::string shape_string() const {
    std::string s;
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape[i]);
    }
    return s;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.v.resize(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
    return out;
  }
};

}  // namespace seqplace::nn
