#include "cll/tensor.hpp"

#include <cstring>

namespace cll {

std::string Shape::str() const {
  return "(" + std::to_string(n) + ", " + std::to_string(c) + ", " + std::to_string(h) + ", " +
         std::to_string(w) + ")";
}

template <class T>
bool Tensor<T>::bitwise_equal(const Tensor& other) const noexcept {
  if (shape_ != other.shape_) return false;
  return data_.empty() || std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(T)) == 0;
}

void require_same_shape(const Shape& a, const Shape& b, std::string_view what) {
  if (a == b) return;
  std::string axes;
  auto note = [&](const char* name, std::size_t x, std::size_t y) {
    if (x == y) return;
    if (!axes.empty()) axes += ", ";
    axes += std::string(name) + " " + std::to_string(x) + " vs " + std::to_string(y);
  };
  note("N", a.n, b.n);
  note("C", a.c, b.c);
  note("H", a.h, b.h);
  note("W", a.w, b.w);
  throw DimensionError(std::string(what) + ": shape mismatch on axes [" + axes + "]");
}

template <class T>
void validate_finite(const Tensor<T>& t, std::string_view what) {
  const auto d = t.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!std::isfinite(d[i])) {
      throw NonFiniteError(std::string(what) + ": non-finite value at flat index " + std::to_string(i));
    }
  }
}

template <class T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "max_abs_diff");
  T worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

template class Tensor<float>;
template class Tensor<double>;
template void validate_finite(const Tensor<float>&, std::string_view);
template void validate_finite(const Tensor<double>&, std::string_view);
template float max_abs_diff(const Tensor<float>&, const Tensor<float>&);
template double max_abs_diff(const Tensor<double>&, const Tensor<double>&);

}  // namespace cll
