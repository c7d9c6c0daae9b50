#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "clap/error.hpp"

namespace clap {

/// Dense row-major matrix of doubles. Vectors are stored as n×1 columns and
/// scalars as 1×1; every op in the library works on this rank-2 form.
class Tensor {
 public:
  using Shape = std::array<std::size_t, 2>;

  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + std::to_string(rows_) + "x" +
                       std::to_string(cols_));
    }
  }

  static Tensor scalar(double v) { return Tensor(1, 1, v); }
  static Tensor column(std::span<const double> v) {
    return Tensor(v.size(), 1, std::vector<double>(v.begin(), v.end()));
  }
  static Tensor column(std::initializer_list<double> v) {
    return Tensor(v.size(), 1, std::vector<double>(v));
  }
  static Tensor row(std::initializer_list<double> v) {
    return Tensor(1, v.size(), std::vector<double>(v));
  }
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    Tensor t(rows.size(), rows.size() ? rows.begin()->size() : 0);
    std::size_t i = 0;
    for (const auto& r : rows) {
      if (r.size() != t.cols_) throw ShapeError("ragged matrix literal");
      for (double v : r) t.data_[i++] = v;
    }
    return t;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  Shape shape() const noexcept { return {rows_, cols_}; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Value of a 1×1 tensor.
  double item() const {
    if (size() != 1) throw ShapeError("item() on non-scalar tensor");
    return data_[0];
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  bool all_finite() const noexcept {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline std::string shape_str(const Tensor& t) {
  return "(" + std::to_string(t.rows()) + "x" + std::to_string(t.cols()) + ")";
}

}  // namespace clap
