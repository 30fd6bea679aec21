#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace cfan {

/// Row-major dense matrix of doubles. Rows hold per-instance vectors.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return rows_ == 0; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  bool all_finite() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

using Vector = std::vector<double>;

struct BatchNormParams {
  Vector gamma;
  Vector beta;
  double eps = 1e-5;

  std::size_t dim() const { return gamma.size(); }
};

/// Affine map Y = X W + b with W stored in_dim x out_dim.
struct LinearParams {
  Matrix weight;
  Vector bias;

  std::size_t in_dim() const { return weight.rows(); }
  std::size_t out_dim() const { return weight.cols(); }
};

struct BatchNormCache {
  Matrix normalized;  // x_hat
  Vector inv_std;     // per column
  Vector gamma;
};

struct BatchNormOutput {
  Matrix y;
  BatchNormCache cache;
  Vector mean;
  Vector var;  // biased (population) variance of the batch
};

struct BatchNormGrads {
  Matrix dx;
  Vector dgamma;
  Vector dbeta;
};

struct LinearGrads {
  Matrix dx;
  Matrix dweight;
  Vector dbias;
};

/// Column-wise softmax across the rows of `q`, stabilized by the column max.
/// Throws std::invalid_argument("empty set") when q has no rows.
Matrix softmax_over_set(const Matrix& q);

/// Normalizes each column with statistics of the rows passed in.
BatchNormOutput batchnorm_forward(const Matrix& x, const BatchNormParams& p);

/// Applies externally supplied (frozen) statistics instead of batch ones.
Matrix batchnorm_apply(const Matrix& x, const BatchNormParams& p, std::span<const double> mean,
                       std::span<const double> var);

BatchNormGrads batchnorm_backward(const Matrix& dy, const BatchNormCache& cache);

Matrix linear_forward(const Matrix& x, const LinearParams& p);
LinearGrads linear_backward(const Matrix& x, const Matrix& dy, const LinearParams& p);

/// Cosine similarity; returns -1 if either vector has zero norm so that
/// empty (zero-vector) templates always rank last.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

double squared_euclidean(std::span<const double> a, std::span<const double> b);

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> a);

}  // namespace cfan
