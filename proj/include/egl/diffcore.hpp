#pragma once

// Dense row-major double grids with hand-derived forward/backward rules and a
// central-difference gradient checker.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "egl/errors.hpp"

namespace egl {

class Grid {
 public:
  Grid() = default;
  Grid(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Grid(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("grid data length " + std::to_string(data_.size()) + " does not match " +
                           std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }

  // Nested initializer, e.g. Grid::from({{1, 2}, {3, 4}}).
  static Grid from(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> d;
    d.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("ragged grid initializer");
      d.insert(d.end(), row.begin(), row.end());
    }
    return Grid(r, c, std::move(d));
  }

  static Grid row(std::vector<double> values) {
    const std::size_t n = values.size();
    return Grid(1, n, std::move(values));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  std::span<const double> row_span(std::size_t r) const noexcept {
    return std::span<const double>(data_).subspan(r * cols_, cols_);
  }

  bool same_shape(const Grid& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }
  std::string shape() const { return std::to_string(rows_) + "x" + std::to_string(cols_); }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  double sum() const noexcept {
    double s = 0.0;
    for (double v : data_) s += v;
    return s;
  }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// A value paired with the gradient accumulated into it.
struct DualGrid {
  Grid value;
  Grid grad;

  DualGrid() = default;
  explicit DualGrid(Grid v) : value(std::move(v)), grad(value.rows(), value.cols()) {}

  void zero_grad() { grad = Grid(value.rows(), value.cols()); }
};

inline void require_same_shape(const Grid& a, const Grid& b, const char* what) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(what) + ": shape " + a.shape() + " vs " + b.shape());
  }
}

// out = x * w + b, with b broadcast over rows (b is 1 x w.cols()).
inline Grid affine(const Grid& x, const Grid& w, const Grid& b) {
  if (x.cols() != w.rows()) {
    throw DimensionError("affine: x " + x.shape() + " incompatible with w " + w.shape());
  }
  if (b.rows() != 1 || b.cols() != w.cols()) {
    throw DimensionError("affine: bias " + b.shape() + " incompatible with w " + w.shape());
  }
  Grid out(x.rows(), w.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < w.cols(); ++j) out(i, j) = b[j];
    for (std::size_t k = 0; k < x.cols(); ++k) {
      const double xik = x(i, k);
      if (xik == 0.0) continue;
      for (std::size_t j = 0; j < w.cols(); ++j) out(i, j) += xik * w(k, j);
    }
  }
  return out;
}

struct AffineGrads {
  Grid dx;
  Grid dw;
  Grid db;
};

// Given dL/dout, returns dL/dx = dout * w^T, dL/dw = x^T * dout, dL/db = colsum(dout).
// dx is skipped (left empty) when need_dx is false.
inline AffineGrads affine_backward(const Grid& x, const Grid& w, const Grid& dout, bool need_dx = true) {
  if (x.cols() != w.rows() || dout.rows() != x.rows() || dout.cols() != w.cols()) {
    throw DimensionError("affine_backward: x " + x.shape() + ", w " + w.shape() + ", dout " +
                         dout.shape());
  }
  AffineGrads g{need_dx ? Grid(x.rows(), x.cols()) : Grid(), Grid(w.rows(), w.cols()),
                Grid(1, w.cols())};
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < w.cols(); ++j) {
      const double d = dout(i, j);
      g.db[j] += d;
      if (d == 0.0) continue;
      for (std::size_t k = 0; k < x.cols(); ++k) g.dw(k, j) += x(i, k) * d;
      if (need_dx) {
        for (std::size_t k = 0; k < x.cols(); ++k) g.dx(i, k) += d * w(k, j);
      }
    }
  }
  return g;
}

inline std::vector<double> softmax_row(std::span<const double> x) {
  if (x.empty()) throw DomainError("softmax_row: empty input");
  const double m = *std::max_element(x.begin(), x.end());
  std::vector<double> out(x.size());
  double z = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    out[j] = std::exp(x[j] - m);
    z += out[j];
  }
  for (double& v : out) v /= z;
  return out;
}

// Jacobian-vector product of softmax: dx_j = y_j (dy_j - sum_k y_k dy_k).
inline std::vector<double> softmax_row_backward(std::span<const double> y, std::span<const double> dy) {
  if (y.size() != dy.size()) {
    throw DimensionError("softmax_row_backward: " + std::to_string(y.size()) + " vs " +
                         std::to_string(dy.size()));
  }
  double dot = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k) dot += y[k] * dy[k];
  std::vector<double> dx(y.size());
  for (std::size_t j = 0; j < y.size(); ++j) dx[j] = y[j] * (dy[j] - dot);
  return dx;
}

inline double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Derivative expressed through the forward output s = sigmoid(x).
inline double sigmoid_grad_from_output(double s) noexcept { return s * (1.0 - s); }

// log(1 + exp(x)) without overflow.
inline double softplus(double x) noexcept {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

using ScalarFn = std::function<double(std::span<const double>)>;

// Max over coordinates of |analytic - numeric| / max(1e-8, |analytic| + |numeric|),
// numeric being the central difference with step h.
inline double grad_check(const ScalarFn& f, std::span<const double> analytic,
                         std::span<const double> theta, double h) {
  if (!(h > 0.0)) throw DomainError("grad_check: step must be positive");
  if (analytic.size() != theta.size()) {
    throw DimensionError("grad_check: gradient length " + std::to_string(analytic.size()) +
                         " vs parameter length " + std::to_string(theta.size()));
  }
  std::vector<double> probe(theta.begin(), theta.end());
  auto eval = [&](std::size_t i) {
    const double v = f(probe);
    if (!std::isfinite(v)) {
      throw EvaluationError("grad_check: non-finite objective while probing coordinate " +
                            std::to_string(i));
    }
    return v;
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = eval(i);
    probe[i] = orig - h;
    const double down = eval(i);
    probe[i] = orig;
    const double numeric = (up - down) / (2.0 * h);
    const double err =
        std::abs(analytic[i] - numeric) / std::max(1e-8, std::abs(analytic[i]) + std::abs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace egl
