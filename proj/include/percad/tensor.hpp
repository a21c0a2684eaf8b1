#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "percad/common.hpp"

namespace percad {

using Index = Eigen::Index;

template <typename S>
using ArrayX = Eigen::Array<S, Eigen::Dynamic, 1>;
template <typename S>
using MatrixX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using RowMatrixX =
    Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Dense NCHW shape. Vectors are (n, features, 1, 1); scalars (1, 1, 1, 1).
struct Shape {
  Index n = 1, c = 1, h = 1, w = 1;

  Shape() = default;
  Shape(Index n_, Index c_, Index h_ = 1, Index w_ = 1)
      : n(n_), c(c_), h(h_), w(w_) {}

  Index size() const { return n * c * h * w; }
  Index chw() const { return c * h * w; }
  Index hw() const { return h * w; }

  bool operator==(const Shape& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
  bool operator!=(const Shape& o) const { return !(*this == o); }

  std::string str() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" +
           std::to_string(h) + "x" + std::to_string(w);
  }
};

// Dense NCHW tensor over a flat Eigen array. Layout is sample-major:
// flat((n,c,h,w)) = ((n*C + c)*H + h)*W + w.
template <typename S>
struct Tensor {
  Shape shape;
  ArrayX<S> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(s), data(s.size()) {}
  Tensor(Shape s, S fill_value) : shape(s), data(ArrayX<S>::Constant(s.size(), fill_value)) {}

  static Tensor zeros(Shape s) { return Tensor(s, S(0)); }
  static Tensor full(Shape s, S v) { return Tensor(s, v); }
  static Tensor scalar(S v) { return Tensor(Shape{1, 1, 1, 1}, v); }

  static Tensor from(Shape s, std::initializer_list<S> vals) {
    Tensor t(s);
    PERCAD_CHECK(static_cast<Index>(vals.size()) == s.size(),
                 "Tensor::from: value count does not match shape " + s.str());
    Index i = 0;
    for (S v : vals) t.data[i++] = v;
    return t;
  }

  Index size() const { return data.size(); }

  S* ptr() { return data.data(); }
  const S* ptr() const { return data.data(); }

  // Pointer to the start of sample n's (C,H,W) block.
  S* sample_ptr(Index n) { return data.data() + n * shape.chw(); }
  const S* sample_ptr(Index n) const { return data.data() + n * shape.chw(); }

  S& at(Index n, Index c, Index h, Index w) {
    return data[((n * shape.c + c) * shape.h + h) * shape.w + w];
  }
  S at(Index n, Index c, Index h, Index w) const {
    return data[((n * shape.c + c) * shape.h + h) * shape.w + w];
  }

  bool all_finite() const {
    for (Index i = 0; i < data.size(); ++i)
      if (!std::isfinite(static_cast<double>(data[i]))) return false;
    return true;
  }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> out(shape);
    out.data = data.template cast<T>();
    return out;
  }
};

template <typename S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b,
                      const char* where) {
  PERCAD_CHECK(a.shape == b.shape, std::string(where) + ": shape mismatch " +
                                       a.shape.str() + " vs " + b.shape.str());
}

}  // namespace percad
