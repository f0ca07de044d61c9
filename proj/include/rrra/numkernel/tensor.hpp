#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "rrra/error.hpp"

namespace rrra::num {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using VectorF = Vector<float>;
using MatrixF = Matrix<float>;

/// Flat row-major f32 tensor. This is the interchange type for checkpoints and
/// embedding exports; arithmetic happens on Eigen types.
struct Tensor {
  std::vector<std::uint32_t> dims;
  std::vector<float> data;

  Tensor() = default;
  Tensor(std::vector<std::uint32_t> d, std::vector<float> v);

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return dims.size(); }
  bool all_finite() const;
  std::string shape_string() const;
};

std::size_t product(std::span<const std::uint32_t> dims);
std::string shape_string(std::span<const std::uint32_t> dims);
std::string shape_string(Eigen::Index rows, Eigen::Index cols);

template <typename Derived>
Tensor to_tensor(const Eigen::MatrixBase<Derived>& m) {
  Tensor t;
  if (m.cols() == 1) {
    t.dims = {static_cast<std::uint32_t>(m.rows())};
  } else {
    t.dims = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
  }
  t.data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) t.data.push_back(static_cast<float>(m(r, c)));
  return t;
}

/// Copies a tensor into an existing matrix. The matrix shape is the contract;
/// a rank-1 tensor matches an n×1 matrix.
template <typename Scalar>
void assign_from(Matrix<Scalar>& dst, const Tensor& t) {
  const bool as_column = t.rank() == 1 && dst.cols() == 1 &&
                         static_cast<Eigen::Index>(t.dims[0]) == dst.rows();
  const bool as_matrix = t.rank() == 2 && static_cast<Eigen::Index>(t.dims[0]) == dst.rows() &&
                         static_cast<Eigen::Index>(t.dims[1]) == dst.cols();
  if (!as_column && !as_matrix) {
    throw DimensionMismatch("tensor " + t.shape_string() + " does not fit matrix " +
                            shape_string(dst.rows(), dst.cols()));
  }
  for (Eigen::Index i = 0; i < dst.size(); ++i)
    dst.data()[i] = static_cast<Scalar>(t.data[static_cast<std::size_t>(i)]);
}

template <typename Scalar>
bool shape_matches(const Matrix<Scalar>& m, const Tensor& t) {
  if (t.rank() == 1) return m.cols() == 1 && static_cast<Eigen::Index>(t.dims[0]) == m.rows();
  return t.rank() == 2 && static_cast<Eigen::Index>(t.dims[0]) == m.rows() &&
         static_cast<Eigen::Index>(t.dims[1]) == m.cols();
}

// Reductions accumulate in double, strictly left to right.

template <typename A, typename B>
double dot_accumulate(const Eigen::MatrixBase<A>& x, const Eigen::MatrixBase<B>& y) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i)
    acc += static_cast<double>(x.coeff(i)) * static_cast<double>(y.coeff(i));
  return acc;
}

template <typename A>
double squared_norm_accumulate(const Eigen::MatrixBase<A>& x) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double v = static_cast<double>(x.coeff(i));
    acc += v * v;
  }
  return acc;
}

template <typename A>
double norm_accumulate(const Eigen::MatrixBase<A>& x) {
  return std::sqrt(squared_norm_accumulate(x));
}

template <typename Scalar, typename B>
Vector<Scalar> matvec_accumulate(const Matrix<Scalar>& w, const Eigen::MatrixBase<B>& x) {
  Vector<Scalar> out(w.rows());
  for (Eigen::Index r = 0; r < w.rows(); ++r) {
    double acc = 0.0;
    for (Eigen::Index c = 0; c < w.cols(); ++c)
      acc += static_cast<double>(w(r, c)) * static_cast<double>(x.coeff(c));
    out(r) = static_cast<Scalar>(acc);
  }
  return out;
}

template <typename A>
bool all_finite(const Eigen::MatrixBase<A>& x) {
  for (Eigen::Index i = 0; i < x.size(); ++i)
    if (!std::isfinite(static_cast<double>(x.coeff(i)))) return false;
  return true;
}

}  // namespace rrra::num
