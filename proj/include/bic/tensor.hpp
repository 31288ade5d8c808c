#pragma once
// Flat row-major n-d tensor over an Eigen array, plus matrix views.

#include <Eigen/Dense>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "bic/core.hpp"

namespace bic {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <class S>
using Arr = Eigen::Array<S, Eigen::Dynamic, 1>;

inline long long numel(const std::vector<int>& dims) {
  long long n = 1;
  for (int d : dims) n *= d;
  return n;
}

template <class S>
struct Tensor {
  std::vector<int> dims;
  Arr<S> v;  // row-major flat storage

  Tensor() = default;
  explicit Tensor(std::vector<int> d) : dims(std::move(d)) { v = Arr<S>::Zero(numel(dims)); }

  static Tensor zeros(std::vector<int> d) { return Tensor(std::move(d)); }
  static Tensor full(std::vector<int> d, S value) {
    Tensor t(std::move(d));
    t.v.setConstant(value);
    return t;
  }
  static Tensor from_matrix(const Mat<S>& m) {
    Tensor t;
    t.dims = {int(m.rows()), int(m.cols())};
    t.v = Arr<S>(m.size());
    Eigen::Map<Mat<S>>(t.v.data(), m.rows(), m.cols()) = m;
    return t;
  }

  long long size() const { return v.size(); }
  S* data() { return v.data(); }
  const S* data() const { return v.data(); }

  int rows() const { return dims.size() == 2 ? dims[0] : int(size()); }
  int cols() const { return dims.size() == 2 ? dims[1] : 1; }

  Eigen::Map<Mat<S>> mat(int r, int c) { return Eigen::Map<Mat<S>>(v.data(), r, c); }
  Eigen::Map<const Mat<S>> mat(int r, int c) const {
    return Eigen::Map<const Mat<S>>(v.data(), r, c);
  }
  // rank-2 view using own dims
  Eigen::Map<Mat<S>> mat() { return mat(rows(), cols()); }
  Eigen::Map<const Mat<S>> mat() const { return mat(rows(), cols()); }

  bool same_shape(const Tensor& o) const { return dims == o.dims; }

  bool all_finite() const {
    for (long long i = 0; i < size(); ++i)
      if (!std::isfinite(double(v[i]))) return false;
    return true;
  }

  template <class T>
  Tensor<T> cast() const {
    Tensor<T> t;
    t.dims = dims;
    t.v = v.template cast<T>();
    return t;
  }
};

}  // namespace bic
