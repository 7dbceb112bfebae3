#include "anovit/ndarray.hpp"

#include <cmath>
#include <sstream>

namespace anovit {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return shape.empty() ? 0 : n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) {
    throw DimensionError(std::string(what) + ": shape mismatch " + shape_str(a) +
                         " vs " + shape_str(b));
  }
}

namespace {

void check_extents(const Shape& shape) {
  if (shape.empty()) throw DimensionError("NdArray: shape must have at least one axis");
  for (auto e : shape) {
    if (e == 0) throw DimensionError("NdArray: zero extent in shape " + shape_str(shape));
  }
}

}  // namespace

template <typename T>
NdArray<T>::NdArray(Shape shape, T fill) : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(shape_size(shape_), fill);
}

template <typename T>
NdArray<T>::NdArray(Shape shape, std::vector<T> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_extents(shape_);
  if (shape_size(shape_) != data_.size()) {
    throw DimensionError("NdArray: shape " + shape_str(shape_) + " needs " +
                         std::to_string(shape_size(shape_)) + " values, got " +
                         std::to_string(data_.size()));
  }
}

template <typename T>
std::size_t NdArray<T>::flat_index(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) {
    throw DimensionError("NdArray::at: rank " + std::to_string(index.size()) +
                         " index into " + shape_str(shape_));
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= shape_[axis]) {
      throw DimensionError("NdArray::at: index out of range for " + shape_str(shape_));
    }
    flat = flat * shape_[axis] + i;
    ++axis;
  }
  return flat;
}

template <typename T>
T& NdArray<T>::at(std::initializer_list<std::size_t> index) {
  return data_[flat_index(index)];
}

template <typename T>
const T& NdArray<T>::at(std::initializer_list<std::size_t> index) const {
  return data_[flat_index(index)];
}

template <typename T>
NdArray<T> NdArray<T>::reshaped(Shape shape) const& {
  return NdArray(std::move(shape), data_);
}

template <typename T>
NdArray<T> NdArray<T>::reshaped(Shape shape) && {
  return NdArray(std::move(shape), std::move(data_));
}

template <typename T>
void NdArray<T>::fill(T v) {
  std::fill(data_.begin(), data_.end(), v);
}

template <typename T>
bool NdArray<T>::all_finite() const noexcept {
  for (auto v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template class NdArray<float>;
template class NdArray<double>;

}  // namespace anovit
