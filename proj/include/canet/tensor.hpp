#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace canet {

// Dense row-major numeric array. Feature maps use NCHW order, channel
// descriptors (N,C), weights whatever the op documents.
template <typename T>
class Tensor {
public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(numel(shape_), T{0}) {}

  Tensor(std::vector<std::size_t> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != numel(shape_)) {
      throw std::invalid_argument("Tensor: data length " + std::to_string(data_.size()) +
                                  " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<std::size_t> shape, T value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  static Tensor ones(std::vector<std::size_t> shape) { return full(std::move(shape), T{1}); }

  static std::size_t numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return shape.empty() ? 0 : n;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // 4D accessor (NCHW).
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  // 2D accessor.
  T& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const T& at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool all_finite() const {
    for (const T& v : data_) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  std::string shape_str() const { return shape_string(shape_); }

  static std::string shape_string(const std::vector<std::size_t>& s) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i) os << ',';
      os << s[i];
    }
    os << ')';
    return os.str();
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

private:
  std::vector<std::size_t> shape_;
  std::vector<T> data_;
};

template <typename T>
void check_shape(const Tensor<T>& t, const std::vector<std::size_t>& expect,
                 const std::string& what) {
  if (t.shape() != expect) {
    throw std::invalid_argument(what + ": expected shape " + Tensor<T>::shape_string(expect) +
                                ", got " + t.shape_str());
  }
}

template <typename T>
void check_rank(const Tensor<T>& t, std::size_t rank, const std::string& what) {
  if (t.rank() != rank) {
    throw std::invalid_argument(what + ": expected rank " + std::to_string(rank) + " tensor, got " +
                                t.shape_str());
  }
}

}  // namespace canet
