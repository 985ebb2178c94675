#pragma once

#include <cassert>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace mmtext {

// Dense row-major matrix. Rows are the unit of access in every hot loop
// (embedding rows, output rows, centroids).
template <typename T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::int64_t rows, std::int64_t cols)
      : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows * cols), T(0)) {}

  std::int64_t rows() const { return rows_; }
  std::int64_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  T* row(std::int64_t i) {
    assert(i >= 0 && i < rows_);
    return data_.data() + i * cols_;
  }
  const T* row(std::int64_t i) const {
    assert(i >= 0 && i < rows_);
    return data_.data() + i * cols_;
  }
  std::span<const T> row_span(std::int64_t i) const { return {row(i), static_cast<std::size_t>(cols_)}; }

  T& at(std::int64_t i, std::int64_t j) { return data_[i * cols_ + j]; }
  T at(std::int64_t i, std::int64_t j) const { return data_[i * cols_ + j]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  void init_uniform(T bound, std::mt19937& rng) {
    std::uniform_real_distribution<T> dist(-bound, bound);
    for (auto& v : data_) {
      v = dist(rng);
    }
  }

  bool operator==(const Matrix& other) const = default;

 private:
  std::int64_t rows_ = 0;
  std::int64_t cols_ = 0;
  std::vector<T> data_;
};

}  // namespace mmtext
