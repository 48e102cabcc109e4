// Dense double-precision tensor with row-major layout and Eigen bridges.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace avseg {

using Shape = std::vector<long>;

using RowMatrixXd =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrixXd>;
using ConstMatMap = Eigen::Map<const RowMatrixXd>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

/// Error type for all invariant / contract violations in the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

inline long shape_numel(const Shape& s) {
  long n = 1;
  for (long d : s) {
    if (d < 0) throw Error("negative dimension in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

/// Row-major dense tensor of doubles. Copies are deep; moves are cheap.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape)
      : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {}
  Tensor(Shape shape, double fill)
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<long>(data_.size()) != shape_numel(shape_))
      throw Error("tensor data size does not match shape " + shape_str(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor from(Shape shape, std::initializer_list<double> vals) {
    return Tensor(std::move(shape), std::vector<double>(vals));
  }

  const Shape& shape() const { return shape_; }
  long dim(size_t i) const { return shape_.at(i); }
  size_t rank() const { return shape_.size(); }
  long size() const { return static_cast<long>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](long i) { return data_[static_cast<size_t>(i)]; }
  double operator[](long i) const { return data_[static_cast<size_t>(i)]; }

  // Flat index helpers for the common ranks.
  double& at(long i, long j) { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
  double at(long i, long j) const { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
  double& at(long i, long j, long k) {
    return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }
  double at(long i, long j, long k) const {
    return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }
  double& at(long i, long j, long k, long l) {
    return data_[static_cast<size_t>(((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
  }
  double at(long i, long j, long k, long l) const {
    return data_[static_cast<size_t>(((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
  }

  /// Same data viewed with a different shape (deep copy, element count preserved).
  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != size())
      throw Error("reshape " + shape_str(shape_) + " -> " + shape_str(shape) +
                  " changes element count");
    return Tensor(std::move(shape), data_);
  }

  MatMap as_matrix(long rows, long cols) {
    if (rows * cols != size()) throw Error("as_matrix: bad rows*cols");
    return MatMap(data_.data(), rows, cols);
  }
  ConstMatMap as_matrix(long rows, long cols) const {
    if (rows * cols != size()) throw Error("as_matrix: bad rows*cols");
    return ConstMatMap(data_.data(), rows, cols);
  }
  VecMap as_vector() { return VecMap(data_.data(), size()); }
  ConstVecMap as_vector() const { return ConstVecMap(data_.data(), size()); }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  void add_(const Tensor& o) {
    if (!same_shape(o)) throw Error("add_: shape mismatch");
    as_vector() += o.as_vector();
  }
  void scale_(double a) { as_vector() *= a; }

 private:
  Shape shape_;
  std::vector<double> data_;
};

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw Error("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (long i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  return std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}

/// Seedable generator used for all parameter initialization and data shuffling.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(eng_);
  }
  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(eng_);
  }
  long uniform_int(long lo, long hi) {  // inclusive bounds
    return std::uniform_int_distribution<long>(lo, hi)(eng_);
  }
  Tensor normal_tensor(Shape shape, double stddev) {
    Tensor t(std::move(shape));
    for (long i = 0; i < t.size(); ++i) t[i] = normal(0.0, stddev);
    return t;
  }
  Tensor uniform_tensor(Shape shape, double lo, double hi) {
    Tensor t(std::move(shape));
    for (long i = 0; i < t.size(); ++i) t[i] = uniform(lo, hi);
    return t;
  }
  template <typename T>
  void shuffle(std::vector<T>& v) {
    std::shuffle(v.begin(), v.end(), eng_);
  }
  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
};

}  // namespace avseg
