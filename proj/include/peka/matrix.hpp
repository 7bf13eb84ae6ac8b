#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace peka {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);

  /// Builds from nested literals; rejects ragged rows and non-finite values.
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  /// Takes ownership of `data`; rejects size mismatch and non-finite values.
  static Matrix from_data(std::size_t rows, std::size_t cols, std::vector<double> data);
  static Matrix identity(std::size_t n);
  static Matrix row_vector(std::span<const double> values);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::string shape_string() const;
  bool all_finite() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double s);
void add_inplace(Matrix& a, const Matrix& b);

Matrix select_rows(const Matrix& a, std::span<const std::size_t> idx);
Matrix select_cols(const Matrix& a, std::span<const std::size_t> idx);
Matrix column_means(const Matrix& a);

double frobenius_norm(const Matrix& a);
double max_abs_diff(const Matrix& a, const Matrix& b);

/// Row-wise softmax(row / tau), max-subtracted.
Matrix softmax_with_temperature(const Matrix& logits, double tau);
/// Row-wise log softmax(row / tau).
Matrix log_softmax_with_temperature(const Matrix& logits, double tau);
/// Mean over rows of sum_i p_i ln(p_i / q_i); 0 ln(0/q) := 0.
double kl_divergence(const Matrix& p, const Matrix& q);

void check_same_shape(const Matrix& a, const Matrix& b, const char* op);

}  // namespace peka
