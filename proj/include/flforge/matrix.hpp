#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "flforge/tape.hpp"

namespace flforge {

struct SingularMatrixError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline double numeric(double v) { return v; }
inline double numeric(const Value& v) { return v.val(); }

/// Small dense row-major matrix, usable with plain doubles or tape Values.
template <class T>
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<T> m;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), m(static_cast<std::size_t>(r) * static_cast<std::size_t>(c)) {}
  Mat(int r, int c, std::vector<T> data) : rows(r), cols(c), m(std::move(data)) {
    if (static_cast<std::size_t>(r) * static_cast<std::size_t>(c) != m.size())
      throw DimensionError("matrix data size mismatch");
  }

  T& at(int r, int c) { return m[static_cast<std::size_t>(r) * cols + c]; }
  const T& at(int r, int c) const { return m[static_cast<std::size_t>(r) * cols + c]; }

  static Mat identity(int n) {
    Mat out(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) out.at(i, j) = (i == j) ? T(1) : T(0);
    return out;
  }
};

using Matd = Mat<double>;

template <class T>
Mat<T> matmul(const Mat<T>& a, const Mat<T>& b) {
  if (a.cols != b.rows) throw DimensionError("matmul: inner dimensions differ");
  Mat<T> out(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < b.cols; ++j) {
      T acc = a.at(i, 0) * b.at(0, j);
      for (int k = 1; k < a.cols; ++k) acc = acc + a.at(i, k) * b.at(k, j);
      out.at(i, j) = acc;
    }
  return out;
}

template <class T>
std::vector<T> matvec(const Mat<T>& a, std::span<const T> x) {
  if (a.cols != static_cast<int>(x.size())) throw DimensionError("matvec: dimension mismatch");
  std::vector<T> out;
  out.reserve(static_cast<std::size_t>(a.rows));
  for (int i = 0; i < a.rows; ++i) {
    T acc = a.at(i, 0) * x[0];
    for (int k = 1; k < a.cols; ++k) acc = acc + a.at(i, k) * x[static_cast<std::size_t>(k)];
    out.push_back(acc);
  }
  return out;
}

/// Determinant by cofactor expansion along the first row. Exactly
/// differentiable when T is a tape Value; intended for n <= 8.
template <class T>
T det(const Mat<T>& m) {
  if (m.rows != m.cols) throw DimensionError("det: matrix not square");
  if (m.rows > 8) throw DimensionError("det: cofactor expansion limited to n <= 8");
  const int n = m.rows;
  if (n == 1) return m.at(0, 0);
  if (n == 2) return m.at(0, 0) * m.at(1, 1) - m.at(0, 1) * m.at(1, 0);
  T acc = T(0);
  bool first = true;
  for (int j = 0; j < n; ++j) {
    Mat<T> sub(n - 1, n - 1);
    for (int r = 1; r < n; ++r) {
      int cc = 0;
      for (int c = 0; c < n; ++c) {
        if (c == j) continue;
        sub.at(r - 1, cc++) = m.at(r, c);
      }
    }
    T term = m.at(0, j) * det(sub);
    if (j % 2 == 1) term = T(0) - term;
    if (first) {
      acc = term;
      first = false;
    } else {
      acc = acc + term;
    }
  }
  return acc;
}

// T(0) for Value needs a tape; specialize the two det base cases via overload.
template <>
inline Value det(const Mat<Value>& m) {
  if (m.rows != m.cols) throw DimensionError("det: matrix not square");
  if (m.rows > 8) throw DimensionError("det: cofactor expansion limited to n <= 8");
  const int n = m.rows;
  if (n == 1) return m.at(0, 0);
  if (n == 2) return m.at(0, 0) * m.at(1, 1) - m.at(0, 1) * m.at(1, 0);
  Value acc;
  for (int j = 0; j < n; ++j) {
    Mat<Value> sub(n - 1, n - 1);
    for (int r = 1; r < n; ++r) {
      int cc = 0;
      for (int c = 0; c < n; ++c) {
        if (c == j) continue;
        sub.at(r - 1, cc++) = m.at(r, c);
      }
    }
    Value term = m.at(0, j) * det(sub);
    if (j % 2 == 1) term = -term;
    acc = acc.valid() ? acc + term : term;
  }
  return acc;
}

/// Gaussian elimination with partial pivoting. Pivots are chosen by numeric
/// magnitude, so the recorded structure follows the values seen at record
/// time when T is a Value.
template <class T>
std::vector<T> solve_linear(Mat<T> a, std::vector<T> rhs) {
  if (a.rows != a.cols) throw DimensionError("solve_linear: matrix not square");
  if (static_cast<int>(rhs.size()) != a.rows) throw DimensionError("solve_linear: rhs size mismatch");
  const int n = a.rows;
  double scale = 0.0;
  for (const T& v : a.m) scale = std::fmax(scale, std::fabs(numeric(v)));
  const double tol = scale * 1e-13;

  for (int k = 0; k < n; ++k) {
    int piv = k;
    double best = std::fabs(numeric(a.at(k, k)));
    for (int r = k + 1; r < n; ++r) {
      const double cand = std::fabs(numeric(a.at(r, k)));
      if (cand > best) {
        best = cand;
        piv = r;
      }
    }
    if (best <= tol) throw SingularMatrixError("solve_linear: matrix singular to tolerance");
    if (piv != k) {
      for (int c = 0; c < n; ++c) std::swap(a.at(k, c), a.at(piv, c));
      std::swap(rhs[static_cast<std::size_t>(k)], rhs[static_cast<std::size_t>(piv)]);
    }
    for (int r = k + 1; r < n; ++r) {
      T f = a.at(r, k) / a.at(k, k);
      for (int c = k + 1; c < n; ++c) a.at(r, c) = a.at(r, c) - f * a.at(k, c);
      rhs[static_cast<std::size_t>(r)] = rhs[static_cast<std::size_t>(r)] - f * rhs[static_cast<std::size_t>(k)];
    }
  }
  std::vector<T> x = rhs;
  for (int k = n - 1; k >= 0; --k) {
    T acc = x[static_cast<std::size_t>(k)];
    for (int c = k + 1; c < n; ++c) acc = acc - a.at(k, c) * x[static_cast<std::size_t>(c)];
    x[static_cast<std::size_t>(k)] = acc / a.at(k, k);
  }
  return x;
}

/// Branch-free Cramer solve for n <= 4: safe to bake into a replayed tape
/// because no pivot choice depends on the values.
template <class T>
std::vector<T> solve_cramer(const Mat<T>& a, std::span<const T> rhs, double det_tol = 0.0) {
  if (a.rows != a.cols) throw DimensionError("solve_cramer: matrix not square");
  if (a.rows > 4) throw DimensionError("solve_cramer: limited to n <= 4");
  const int n = a.rows;
  T d = det(a);
  if (std::fabs(numeric(d)) <= det_tol) throw SingularMatrixError("solve_cramer: matrix singular");
  std::vector<T> x;
  x.reserve(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    Mat<T> aj = a;
    for (int r = 0; r < n; ++r) aj.at(r, j) = rhs[static_cast<std::size_t>(r)];
    x.push_back(det(aj) / d);
  }
  return x;
}

/// Inverse via solve_linear on identity columns (double only).
Matd invert(const Matd& a);

}  // namespace flforge
