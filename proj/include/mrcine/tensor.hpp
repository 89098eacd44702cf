#pragma once

// Dense row-major tensors (last axis fastest) with complex and real element
// types. Precision is a template parameter everywhere; `Real` is the
// project-wide default.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

namespace mrcine {

#ifdef MRCINE_DOUBLE
using Real = double;
#else
using Real = float;
#endif

using Index = std::int64_t;
using Shape = std::vector<Index>;

template <typename T>
struct is_complex : std::false_type {};
template <typename T>
struct is_complex<std::complex<T>> : std::true_type {};
template <typename T>
inline constexpr bool is_complex_v = is_complex<T>::value;

template <typename T>
struct real_of {
  using type = T;
};
template <typename T>
struct real_of<std::complex<T>> {
  using type = T;
};
template <typename T>
using real_of_t = typename real_of<T>::type;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

inline Index shape_numel(const Shape& s) {
  Index n = 1;
  for (Index d : s) {
    if (d < 0) throw std::invalid_argument("negative extent in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{})
      : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_numel(shape_)), fill) {
    compute_strides();
  }
  Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), data_(std::move(values)) {
    if (static_cast<Index>(data_.size()) != shape_numel(shape_))
      throw std::invalid_argument("tensor data length does not match shape " + shape_str(shape_));
    compute_strides();
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t ndim() const noexcept { return shape_.size(); }
  Index dim(std::size_t axis) const {
    if (axis >= shape_.size()) throw std::invalid_argument("axis out of range");
    return shape_[axis];
  }
  Index size() const noexcept { return static_cast<Index>(data_.size()); }
  bool empty() const noexcept { return data_.empty(); }
  Index stride(std::size_t axis) const { return strides_.at(axis); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](Index i) noexcept { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](Index i) const noexcept { return data_[static_cast<std::size_t>(i)]; }

  template <typename... Ix>
  T& operator()(Ix... ix) noexcept {
    return data_[static_cast<std::size_t>(offset(ix...))];
  }
  template <typename... Ix>
  const T& operator()(Ix... ix) const noexcept {
    return data_[static_cast<std::size_t>(offset(ix...))];
  }

  template <typename... Ix>
  Index offset(Ix... ix) const noexcept {
    const Index idx[] = {static_cast<Index>(ix)...};
    Index off = 0;
    for (std::size_t a = 0; a < sizeof...(Ix); ++a) off += idx[a] * strides_[a];
    return off;
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor reshaped(Shape s) const {
    if (shape_numel(s) != size())
      throw std::invalid_argument("cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
    return Tensor(std::move(s), data_);
  }

  Tensor& operator+=(const Tensor& o) {
    require_same_shape(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Tensor& operator-=(const Tensor& o) {
    require_same_shape(o, "-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  template <typename S>
  Tensor& operator*=(S s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
  friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
  template <typename S>
  friend Tensor operator*(Tensor a, S s) {
    return a *= s;
  }

  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

  void require_same_shape(const Tensor& o, const char* what) const {
    if (shape_ != o.shape_)
      throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_str(shape_) +
                                  " vs " + shape_str(o.shape_));
  }

 private:
  void compute_strides() {
    strides_.assign(shape_.size(), 1);
    for (Index a = static_cast<Index>(shape_.size()) - 2; a >= 0; --a)
      strides_[a] = strides_[a + 1] * shape_[a + 1];
  }

  Shape shape_;
  Shape strides_;
  std::vector<T> data_;
};

template <typename R>
using CTensor = Tensor<std::complex<R>>;
template <typename R>
using RTensor = Tensor<R>;

inline void require_shape(const Shape& got, const Shape& want, const std::string& what) {
  if (got != want)
    throw std::invalid_argument(what + ": expected shape " + shape_str(want) + ", got " +
                                shape_str(got));
}

// Σ conj(a)·b, accumulated in double.
template <typename T>
auto inner(const Tensor<T>& a, const Tensor<T>& b) {
  a.require_same_shape(b, "inner");
  if constexpr (is_complex_v<T>) {
    std::complex<double> acc{0.0, 0.0};
    for (Index i = 0; i < a.size(); ++i)
      acc += std::conj(std::complex<double>(a[i])) * std::complex<double>(b[i]);
    return acc;
  } else {
    double acc = 0.0;
    for (Index i = 0; i < a.size(); ++i) acc += double(a[i]) * double(b[i]);
    return acc;
  }
}

template <typename T>
double norm_sq(const Tensor<T>& a) {
  double acc = 0.0;
  for (Index i = 0; i < a.size(); ++i) acc += double(std::norm(a[i]));
  return acc;
}

template <typename T>
double norm(const Tensor<T>& a) {
  return std::sqrt(norm_sq(a));
}

template <typename T>
double max_abs(const Tensor<T>& a) {
  double m = 0.0;
  for (Index i = 0; i < a.size(); ++i) m = std::max(m, double(std::abs(a[i])));
  return m;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  a.require_same_shape(b, "max_abs_diff");
  double m = 0.0;
  for (Index i = 0; i < a.size(); ++i) m = std::max(m, double(std::abs(a[i] - b[i])));
  return m;
}

template <typename T>
bool all_finite(const Tensor<T>& a) {
  for (Index i = 0; i < a.size(); ++i) {
    if constexpr (is_complex_v<T>) {
      if (!std::isfinite(a[i].real()) || !std::isfinite(a[i].imag())) return false;
    } else {
      if (!std::isfinite(a[i])) return false;
    }
  }
  return true;
}

// y += alpha * x
template <typename T, typename S>
void axpy(S alpha, const Tensor<T>& x, Tensor<T>& y) {
  x.require_same_shape(y, "axpy");
  const T a = static_cast<T>(alpha);
  T* yp = y.data();
  const T* xp = x.data();
  for (Index i = 0; i < x.size(); ++i) yp[i] += a * xp[i];
}

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
  Tensor<To> out(t.shape());
  for (Index i = 0; i < t.size(); ++i) out[i] = static_cast<To>(t[i]);
  return out;
}

template <typename R>
RTensor<R> magnitude(const CTensor<R>& t) {
  RTensor<R> out(t.shape());
  for (Index i = 0; i < t.size(); ++i) out[i] = std::abs(t[i]);
  return out;
}

}  // namespace mrcine
