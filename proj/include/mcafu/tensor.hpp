#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mcafu {

using Shape = std::vector<int64_t>;

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

inline int64_t numel_of(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << s[i] << (i + 1 < s.size() ? "," : "");
  os << ")";
  return os.str();
}

/// Dense row-major tensor. The buffer is shared between reshaped views;
/// ops never mutate their inputs, so aliasing stays benign.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape)
      : shape_(std::move(shape)),
        buf_(std::make_shared<std::vector<T>>(numel_of(shape_), T(0))) {}
  Tensor(Shape shape, T fill)
      : shape_(std::move(shape)),
        buf_(std::make_shared<std::vector<T>>(numel_of(shape_), fill)) {}

  static Tensor from(Shape shape, std::vector<T> values) {
    if (numel_of(shape) != static_cast<int64_t>(values.size()))
      throw ShapeError("Tensor::from: value count does not match shape " + shape_str(shape));
    Tensor t;
    t.shape_ = std::move(shape);
    t.buf_ = std::make_shared<std::vector<T>>(std::move(values));
    return t;
  }
  static Tensor scalar(T v) { return from({1}, {v}); }

  bool defined() const { return buf_ != nullptr; }
  int64_t numel() const { return buf_ ? static_cast<int64_t>(buf_->size()) : 0; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t size(int i) const { return shape_.at(static_cast<size_t>(i)); }
  const Shape& shape() const { return shape_; }

  T* data() { return buf_->data(); }
  const T* data() const { return buf_->data(); }
  T& operator[](int64_t i) { return (*buf_)[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return (*buf_)[static_cast<size_t>(i)]; }

  // NCHW accessors for the common rank-4 case.
  T& at4(int64_t n, int64_t c, int64_t h, int64_t w) {
    return (*buf_)[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& at4(int64_t n, int64_t c, int64_t h, int64_t w) const {
    return (*buf_)[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  /// Shares the buffer; numel must match.
  Tensor reshaped(Shape s) const {
    if (numel_of(s) != numel())
      throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(s));
    Tensor t = *this;
    t.shape_ = std::move(s);
    return t;
  }

  Tensor clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.buf_ = std::make_shared<std::vector<T>>(*buf_);
    return t;
  }

  void fill(T v) { std::fill(buf_->begin(), buf_->end(), v); }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> t{shape_};
    const T* s = data();
    U* d = t.data();
    for (int64_t i = 0; i < numel(); ++i) d[i] = static_cast<U>(s[i]);
    return t;
  }

 private:
  Shape shape_;
  std::shared_ptr<std::vector<T>> buf_;
  template <typename U>
  friend class Tensor;
};

template <typename T>
inline bool all_finite(const Tensor<T>& t) {
  const T* p = t.data();
  for (int64_t i = 0; i < t.numel(); ++i)
    if (!std::isfinite(static_cast<double>(p[i]))) return false;
  return true;
}

template <typename T>
inline T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("max_abs_diff: shape mismatch");
  T m = 0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline void check_rank4(const Shape& s, const char* who) {
  if (s.size() != 4) throw ShapeError(std::string(who) + ": expected rank-4 input, got " + shape_str(s));
}

}  // namespace mcafu
