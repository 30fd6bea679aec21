#include "cfan/core_math.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace cfan {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw std::invalid_argument("matrix data length " + std::to_string(data_.size()) +
                                " does not match " + std::to_string(rows) + "x" +
                                std::to_string(cols));
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw std::invalid_argument("ragged matrix literal");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Matrix softmax_over_set(const Matrix& q) {
  if (q.rows() == 0) throw std::invalid_argument("empty set");
  const std::size_t n = q.rows();
  const std::size_t d = q.cols();
  Matrix w(n, d);
  for (std::size_t j = 0; j < d; ++j) {
    double mx = q(0, j);
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, q(i, j));
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double e = std::exp(q(i, j) - mx);
      w(i, j) = e;
      sum += e;
    }
    for (std::size_t i = 0; i < n; ++i) w(i, j) /= sum;
  }
  return w;
}

namespace {

void check_bn_dims(const Matrix& x, const BatchNormParams& p) {
  if (p.gamma.size() != p.beta.size()) throw std::invalid_argument("batchnorm gamma/beta size mismatch");
  if (x.cols() != p.gamma.size()) {
    throw std::invalid_argument("batchnorm input has " + std::to_string(x.cols()) +
                                " columns, params have " + std::to_string(p.gamma.size()));
  }
}

double inverse_std(double var, double eps) {
  const double denom = var + eps;
  if (!(denom > 0.0)) throw std::domain_error("batchnorm: zero variance with eps = 0");
  return 1.0 / std::sqrt(denom);
}

}  // namespace

BatchNormOutput batchnorm_forward(const Matrix& x, const BatchNormParams& p) {
  check_bn_dims(x, p);
  if (x.rows() == 0) throw std::invalid_argument("empty set");
  const std::size_t n = x.rows();
  const std::size_t m = x.cols();

  BatchNormOutput out;
  out.mean.assign(m, 0.0);
  out.var.assign(m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out.mean[j] += x(i, j);
  for (auto& v : out.mean) v /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const double c = x(i, j) - out.mean[j];
      out.var[j] += c * c;
    }
  }
  for (auto& v : out.var) v /= static_cast<double>(n);

  out.cache.inv_std.resize(m);
  for (std::size_t j = 0; j < m; ++j) out.cache.inv_std[j] = inverse_std(out.var[j], p.eps);
  out.cache.gamma = p.gamma;
  out.cache.normalized = Matrix(n, m);
  out.y = Matrix(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const double xh = (x(i, j) - out.mean[j]) * out.cache.inv_std[j];
      out.cache.normalized(i, j) = xh;
      out.y(i, j) = p.gamma[j] * xh + p.beta[j];
    }
  }
  return out;
}

Matrix batchnorm_apply(const Matrix& x, const BatchNormParams& p, std::span<const double> mean,
                       std::span<const double> var) {
  check_bn_dims(x, p);
  if (mean.size() != p.dim() || var.size() != p.dim()) {
    throw std::invalid_argument("batchnorm frozen statistics have wrong dimension");
  }
  Matrix y(x.rows(), x.cols());
  for (std::size_t j = 0; j < x.cols(); ++j) {
    const double inv = inverse_std(var[j], p.eps);
    for (std::size_t i = 0; i < x.rows(); ++i) {
      y(i, j) = p.gamma[j] * (x(i, j) - mean[j]) * inv + p.beta[j];
    }
  }
  return y;
}

BatchNormGrads batchnorm_backward(const Matrix& dy, const BatchNormCache& cache) {
  const Matrix& xh = cache.normalized;
  if (dy.rows() != xh.rows() || dy.cols() != xh.cols() || cache.inv_std.size() != xh.cols() ||
      cache.gamma.size() != xh.cols()) {
    throw std::invalid_argument("batchnorm_backward: gradient does not match cache dims");
  }
  const std::size_t n = dy.rows();
  const std::size_t m = dy.cols();
  const double nd = static_cast<double>(n);

  BatchNormGrads g{Matrix(n, m), Vector(m, 0.0), Vector(m, 0.0)};
  for (std::size_t j = 0; j < m; ++j) {
    double sum_dxh = 0.0;
    double sum_dxh_xh = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      g.dbeta[j] += dy(i, j);
      g.dgamma[j] += dy(i, j) * xh(i, j);
      const double dxh = dy(i, j) * cache.gamma[j];
      sum_dxh += dxh;
      sum_dxh_xh += dxh * xh(i, j);
    }
    const double scale = cache.inv_std[j] / nd;
    for (std::size_t i = 0; i < n; ++i) {
      const double dxh = dy(i, j) * cache.gamma[j];
      g.dx(i, j) = scale * (nd * dxh - sum_dxh - xh(i, j) * sum_dxh_xh);
    }
  }
  return g;
}

namespace {

void check_linear_dims(const Matrix& x, const LinearParams& p) {
  if (p.bias.size() != p.out_dim()) throw std::invalid_argument("linear bias size mismatch");
  if (x.cols() != p.in_dim()) {
    throw std::invalid_argument("linear input has " + std::to_string(x.cols()) +
                                " columns, weight expects " + std::to_string(p.in_dim()));
  }
}

}  // namespace

Matrix linear_forward(const Matrix& x, const LinearParams& p) {
  check_linear_dims(x, p);
  const std::size_t n = x.rows();
  const std::size_t m = p.in_dim();
  const std::size_t d = p.out_dim();
  Matrix y(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    auto yr = y.row(i);
    std::copy(p.bias.begin(), p.bias.end(), yr.begin());
    for (std::size_t k = 0; k < m; ++k) {
      const double xv = x(i, k);
      const auto wr = p.weight.row(k);
      for (std::size_t j = 0; j < d; ++j) yr[j] += xv * wr[j];
    }
  }
  return y;
}

LinearGrads linear_backward(const Matrix& x, const Matrix& dy, const LinearParams& p) {
  check_linear_dims(x, p);
  if (dy.rows() != x.rows() || dy.cols() != p.out_dim()) {
    throw std::invalid_argument("linear_backward: upstream gradient has wrong shape");
  }
  const std::size_t n = x.rows();
  const std::size_t m = p.in_dim();
  const std::size_t d = p.out_dim();
  LinearGrads g{Matrix(n, m), Matrix(m, d), Vector(d, 0.0)};
  for (std::size_t i = 0; i < n; ++i) {
    const auto dyr = dy.row(i);
    for (std::size_t j = 0; j < d; ++j) g.dbias[j] += dyr[j];
    for (std::size_t k = 0; k < m; ++k) {
      const auto wr = p.weight.row(k);
      auto dwr = g.dweight.row(k);
      const double xv = x(i, k);
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        acc += dyr[j] * wr[j];
        dwr[j] += xv * dyr[j];
      }
      g.dx(i, k) = acc;
    }
  }
  return g;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("vector dimension mismatch");
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) s += a[j] * b[j];
  return s;
}

double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (na == 0.0 || nb == 0.0) return -1.0;
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

double squared_euclidean(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("vector dimension mismatch");
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double d = a[j] - b[j];
    s += d * d;
  }
  return s;
}

}  // namespace cfan
