#include "dect/linalg.hpp"

#include "dect/parallel.hpp"

namespace dect {

namespace {

void check_inner(int a, int b, const char* what) {
  if (a != b) throw std::invalid_argument(std::string("matrix shape mismatch in ") + what);
}

// Products are parallelized over output rows only; each entry accumulates
// over the inner index in ascending order inside one worker.
constexpr std::int64_t kParallelFlops = 1 << 21;

}  // namespace

Mat matmul(const Mat& a, const Mat& b) {
  check_inner(a.cols(), b.rows(), "matmul");
  Mat c(a.rows(), b.cols());
  const int n = a.rows(), k = a.cols(), m = b.cols();
  auto body = [&](std::int64_t r0, std::int64_t r1) {
    for (std::int64_t i = r0; i < r1; ++i) {
      const double* arow = a.row_ptr(static_cast<int>(i));
      double* crow = c.row_ptr(static_cast<int>(i));
      for (int kk = 0; kk < k; ++kk) {
        const double av = arow[kk];
        const double* brow = b.row_ptr(kk);
        for (int j = 0; j < m; ++j) crow[j] += av * brow[j];
      }
    }
  };
  if (static_cast<std::int64_t>(n) * k * m >= kParallelFlops)
    parallel_for(n, body);
  else
    body(0, n);
  return c;
}

Mat matmul_abt(const Mat& a, const Mat& b) {
  check_inner(a.cols(), b.cols(), "matmul_abt");
  Mat c(a.rows(), b.rows());
  const int n = a.rows(), k = a.cols(), m = b.rows();
  auto body = [&](std::int64_t r0, std::int64_t r1) {
    for (std::int64_t i = r0; i < r1; ++i) {
      const double* arow = a.row_ptr(static_cast<int>(i));
      double* crow = c.row_ptr(static_cast<int>(i));
      for (int j = 0; j < m; ++j) {
        const double* brow = b.row_ptr(j);
        double s = 0.0;
        for (int kk = 0; kk < k; ++kk) s += arow[kk] * brow[kk];
        crow[j] = s;
      }
    }
  };
  if (static_cast<std::int64_t>(n) * k * m >= kParallelFlops)
    parallel_for(n, body);
  else
    body(0, n);
  return c;
}

Mat matmul_atb(const Mat& a, const Mat& b) {
  check_inner(a.rows(), b.rows(), "matmul_atb");
  Mat c(a.cols(), b.cols());
  const int n = a.cols(), k = a.rows(), m = b.cols();
  auto body = [&](std::int64_t r0, std::int64_t r1) {
    for (std::int64_t i = r0; i < r1; ++i) {
      double* crow = c.row_ptr(static_cast<int>(i));
      for (int kk = 0; kk < k; ++kk) {
        const double av = a(kk, static_cast<int>(i));
        const double* brow = b.row_ptr(kk);
        for (int j = 0; j < m; ++j) crow[j] += av * brow[j];
      }
    }
  };
  if (static_cast<std::int64_t>(n) * k * m >= kParallelFlops)
    parallel_for(n, body);
  else
    body(0, n);
  return c;
}

Mat transpose(const Mat& a) {
  Mat t(a.cols(), a.rows());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

double frobenius_sq(const Mat& a) {
  double s = 0.0;
  for (double v : a.data()) s += v * v;
  return s;
}

bool all_finite(const Mat& a) {
  for (double v : a.data())
    if (!std::isfinite(v)) return false;
  return true;
}

bool bit_equal(const Mat& a, const Mat& b) {
  if (!a.same_shape(b)) return false;
  return a.data() == b.data();
}

Mat22 Mat22::inverse() const {
  const double d = det();
  if (std::abs(d) < 1e-12 * frobenius_sq())
    throw std::runtime_error("singular 2x2 system (|det| below 1e-12 * ||A||_F^2)");
  const double inv = 1.0 / d;
  return {m11 * inv, -m01 * inv, -m10 * inv, m00 * inv};
}

std::array<double, 2> Mat22::eigenvalues_sym() const {
  const double tr = m00 + m11;
  const double diff = m00 - m11;
  const double disc = std::sqrt(diff * diff + 4.0 * m01 * m10);
  return {0.5 * (tr - disc), 0.5 * (tr + disc)};
}

}  // namespace dect
