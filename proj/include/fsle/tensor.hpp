#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fsle/error.hpp"

namespace fsle {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// Dense row-major array. `Tensor` (32-bit float) is the value carrier for the
// whole engine; the double instantiation exists for gradient verification.
//
// A default-constructed tensor is the empty placeholder: shape {0}, no data.
// Every other tensor has strictly positive dimensions.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() : shape_{0} {}

  explicit BasicTensor(Shape shape, T fill = T{}) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(shape_product(shape_), fill);
  }

  BasicTensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (data_.size() != shape_product(shape_)) {
      throw Error(ErrorKind::kShapeMismatch,
                  "tensor data length " + std::to_string(data_.size()) +
                      " does not match shape " + shape_to_string(shape_));
    }
  }

  static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape)); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  template <typename... Index>
  T& at(Index... index) {
    return data_[offset({static_cast<std::size_t>(index)...})];
  }
  template <typename... Index>
  const T& at(Index... index) const {
    return data_[offset({static_cast<std::size_t>(index)...})];
  }

  BasicTensor reshape(Shape shape) const& {
    BasicTensor out = *this;
    out.reshape_inplace(std::move(shape));
    return out;
  }
  BasicTensor reshape(Shape shape) && {
    reshape_inplace(std::move(shape));
    return std::move(*this);
  }

  void reshape_inplace(Shape shape) {
    check_shape(shape);
    if (shape_product(shape) != data_.size()) {
      throw Error(ErrorKind::kShapeMismatch,
                  "cannot reshape " + shape_to_string(shape_) + " to " +
                      shape_to_string(shape));
    }
    shape_ = std::move(shape);
  }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

 private:
  static void check_shape(const Shape& shape) {
    for (std::size_t d : shape) {
      if (d == 0) {
        throw Error(ErrorKind::kShapeMismatch,
                    "tensor dimensions must be positive, got " +
                        shape_to_string(shape));
      }
    }
  }

  std::size_t offset(std::initializer_list<std::size_t> index) const {
    if (index.size() != shape_.size()) {
      throw Error(ErrorKind::kShapeMismatch, "index rank does not match tensor rank");
    }
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (std::size_t i : index) {
      flat = flat * shape_[axis] + i;
      ++axis;
    }
    return flat;
  }

  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;

template <typename To, typename From>
BasicTensor<To> tensor_cast(const BasicTensor<From>& in) {
  if (in.empty()) return {};
  std::vector<To> data(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) data[i] = static_cast<To>(in[i]);
  return BasicTensor<To>(in.shape(), std::move(data));
}

}  // namespace fsle
