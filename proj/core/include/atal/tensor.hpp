#pragma once

#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace atal {

/// Dense row-major tensor of doubles. Rank 1 and 2 cover everything the
/// pipeline needs; every operation checks shapes at its boundary.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    values_.assign(element_count(shape_), 0.0);
  }

  Tensor(std::vector<int> shape, std::vector<double> values)
      : shape_(std::move(shape)), values_(std::move(values)) {
    if (values_.size() != element_count(shape_)) {
      throw std::invalid_argument("tensor: value count " +
                                  std::to_string(values_.size()) +
                                  " does not match shape " + shape_string());
    }
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    for (double& x : t.values_) x = v;
    return t;
  }

  /// 2-D construction from nested lists, for tests and small fixtures.
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const int r = static_cast<int>(rows.size());
    const int c = r > 0 ? static_cast<int>(rows.begin()->size()) : 0;
    Tensor t({r, c});
    int i = 0;
    for (const auto& row : rows) {
      if (static_cast<int>(row.size()) != c) {
        throw std::invalid_argument("tensor: ragged row in from_rows");
      }
      for (double v : row) t.values_[i++] = v;
    }
    return t;
  }

  static Tensor vector(std::vector<double> v) {
    const int n = static_cast<int>(v.size());
    return Tensor({n}, std::move(v));
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  int rank() const { return static_cast<int>(shape_.size()); }
  const std::vector<int>& shape() const { return shape_; }
  int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  int64_t size() const { return static_cast<int64_t>(values_.size()); }
  bool empty() const { return values_.empty(); }

  int rows() const { return rank() == 2 ? shape_[0] : (rank() == 1 ? shape_[0] : 0); }
  int cols() const { return rank() == 2 ? shape_[1] : 0; }

  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

  double& at(int i) { return values_[static_cast<size_t>(i)]; }
  double at(int i) const { return values_[static_cast<size_t>(i)]; }

  double& at(int r, int c) {
    return values_[static_cast<size_t>(r) * static_cast<size_t>(shape_[1]) +
                   static_cast<size_t>(c)];
  }
  double at(int r, int c) const {
    return values_[static_cast<size_t>(r) * static_cast<size_t>(shape_[1]) +
                   static_cast<size_t>(c)];
  }

  void fill(double v) {
    for (double& x : values_) x = v;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  std::string shape_string() const {
    std::string s = "[";
    for (size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape_[i]);
    }
    s += "]";
    return s;
  }

  static size_t element_count(const std::vector<int>& shape) {
    size_t n = 1;
    for (int d : shape) {
      if (d < 0) throw std::invalid_argument("tensor: negative extent");
      n *= static_cast<size_t>(d);
    }
    return shape.empty() ? 0 : n;
  }

 private:
  std::vector<int> shape_;
  std::vector<double> values_;
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                a.shape_string() + " vs " + b.shape_string());
  }
}

}  // namespace atal
