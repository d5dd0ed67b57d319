#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace dect {

// Dense row-major matrix of doubles. The filter matrices and patch batches
// used in this project are small enough that plain loops are fast enough;
// every product accumulates in a fixed index order, so results are
// reproducible bit-for-bit and independent of the worker count.
class Mat {
 public:
  Mat() = default;
  Mat(int rows, int cols)
      : rows_(rows), cols_(cols), data_(check_size(rows, cols), 0.0) {}

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  double& operator()(int r, int c) { return data_[static_cast<size_t>(r) * cols_ + c]; }
  double operator()(int r, int c) const { return data_[static_cast<size_t>(r) * cols_ + c]; }

  double* row_ptr(int r) { return data_.data() + static_cast<size_t>(r) * cols_; }
  const double* row_ptr(int r) const { return data_.data() + static_cast<size_t>(r) * cols_; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Mat& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  void fill(double v) { data_.assign(data_.size(), v); }

 private:
  static size_t check_size(int rows, int cols) {
    if (rows < 0 || cols < 0)
      throw std::invalid_argument("matrix dimensions must be nonnegative");
    return static_cast<size_t>(rows) * static_cast<size_t>(cols);
  }

  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

// c = a * b
Mat matmul(const Mat& a, const Mat& b);
// c = a * b^T  (dot products of rows; cache friendly for row-major inputs)
Mat matmul_abt(const Mat& a, const Mat& b);
// c = a^T * b
Mat matmul_atb(const Mat& a, const Mat& b);

Mat transpose(const Mat& a);

double frobenius_sq(const Mat& a);

bool all_finite(const Mat& a);

// Exact elementwise equality, bit meaning value equality on doubles.
bool bit_equal(const Mat& a, const Mat& b);

// 2x2 matrix with explicit entries; used for the decomposition physics where
// every per-pixel system shares one coefficient matrix.
struct Mat22 {
  double m00 = 0, m01 = 0, m10 = 0, m11 = 0;

  static Mat22 identity() { return {1.0, 0.0, 0.0, 1.0}; }
  static Mat22 diag(double d0, double d1) { return {d0, 0.0, 0.0, d1}; }

  double det() const { return m00 * m11 - m01 * m10; }
  double frobenius_sq() const { return m00 * m00 + m01 * m01 + m10 * m10 + m11 * m11; }
  Mat22 transposed() const { return {m00, m10, m01, m11}; }

  std::array<double, 2> apply(const std::array<double, 2>& v) const {
    return {m00 * v[0] + m01 * v[1], m10 * v[0] + m11 * v[1]};
  }

  Mat22 operator*(const Mat22& o) const {
    return {m00 * o.m00 + m01 * o.m10, m00 * o.m01 + m01 * o.m11,
            m10 * o.m00 + m11 * o.m10, m10 * o.m01 + m11 * o.m11};
  }

  Mat22 operator+(const Mat22& o) const {
    return {m00 + o.m00, m01 + o.m01, m10 + o.m10, m11 + o.m11};
  }

  Mat22 scaled(double s) const { return {s * m00, s * m01, s * m10, s * m11}; }

  // Throws when |det| < 1e-12 * ||A||_F^2 (the det scales like A^2).
  Mat22 inverse() const;

  // Eigenvalues of a symmetric 2x2, ascending.
  std::array<double, 2> eigenvalues_sym() const;
};

}  // namespace dect
