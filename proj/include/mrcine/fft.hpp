#pragma once

// Centered, unitary discrete Fourier transforms over arbitrary axis subsets.
// Centering uses index shifts (ifftshift before, fftshift after), which is
// exact for odd and even extents. Backed by FFTW guru plans.

#include <fftw3.h>

#include <cstring>
#include <map>
#include <memory>
#include <mutex>
#include <string>

#include "mrcine/tensor.hpp"

namespace mrcine {

enum class FftDirection { forward, inverse };

namespace detail {

template <typename T>
void roll_rec(const T* in, T* out, const Shape& shape, const Shape& strides, const Shape& shifts,
              std::size_t axis) {
  // Once every remaining shift is zero the rest of the block is contiguous.
  bool rest_zero = true;
  for (std::size_t a = axis; a < shape.size(); ++a) rest_zero = rest_zero && shifts[a] == 0;
  if (rest_zero) {
    const Index block = axis == 0 ? shape_numel(shape) : strides[axis - 1];
    std::memcpy(out, in, sizeof(T) * static_cast<std::size_t>(block));
    return;
  }
  const Index n = shape[axis];
  const Index s = ((shifts[axis] % n) + n) % n;
  for (Index i = 0; i < n; ++i) {
    Index j = i + s;
    if (j >= n) j -= n;
    roll_rec(in + i * strides[axis], out + j * strides[axis], shape, strides, shifts, axis + 1);
  }
}

template <typename T>
Tensor<T> roll(const Tensor<T>& t, const Shape& shifts) {
  Tensor<T> out(t.shape());
  if (t.size() == 0) return out;
  Shape strides(t.ndim());
  for (std::size_t a = 0; a < t.ndim(); ++a) strides[a] = t.stride(a);
  roll_rec(t.data(), out.data(), t.shape(), strides, shifts, 0);
  return out;
}

template <typename R>
struct FftwTraits;

template <>
struct FftwTraits<double> {
  using plan = fftw_plan;
  using complex = fftw_complex;
  using iodim = fftw_iodim64;
  static plan make(int rank, const iodim* dims, int hrank, const iodim* hdims, complex* buf, int sign,
                   bool aligned) {
    return fftw_plan_guru64_dft(rank, dims, hrank, hdims, buf, buf, sign,
                                FFTW_ESTIMATE | (aligned ? 0u : FFTW_UNALIGNED));
  }
  static void* alloc(std::size_t bytes) { return fftw_malloc(bytes); }
  static void release(void* p) { fftw_free(p); }
  static void execute(plan p, complex* buf) { fftw_execute_dft(p, buf, buf); }
  static void destroy(plan p) { fftw_destroy_plan(p); }
};

template <>
struct FftwTraits<float> {
  using plan = fftwf_plan;
  using complex = fftwf_complex;
  using iodim = fftwf_iodim64;
  static plan make(int rank, const iodim* dims, int hrank, const iodim* hdims, complex* buf, int sign,
                   bool aligned) {
    return fftwf_plan_guru64_dft(rank, dims, hrank, hdims, buf, buf, sign,
                                 FFTW_ESTIMATE | (aligned ? 0u : FFTW_UNALIGNED));
  }
  static void* alloc(std::size_t bytes) { return fftwf_malloc(bytes); }
  static void release(void* p) { fftwf_free(p); }
  static void execute(plan p, complex* buf) { fftwf_execute_dft(p, buf, buf); }
  static void destroy(plan p) { fftwf_destroy_plan(p); }
};

template <typename R>
class AlignedBuffer {
 public:
  explicit AlignedBuffer(Index n)
      : p_(static_cast<std::complex<R>*>(FftwTraits<R>::alloc(sizeof(std::complex<R>) * std::size_t(std::max<Index>(n, 1))))) {
    if (!p_) throw std::bad_alloc();
  }
  ~AlignedBuffer() { FftwTraits<R>::release(p_); }
  AlignedBuffer(const AlignedBuffer&) = delete;
  AlignedBuffer& operator=(const AlignedBuffer&) = delete;
  std::complex<R>* data() { return p_; }
  std::complex<R>& operator[](std::size_t i) { return p_[i]; }

 private:
  std::complex<R>* p_;
};

// Plans are created once per (shape, axes, sign) and shared; FFTW planning is
// not thread-safe so creation is serialized, execution is not.
template <typename R>
class PlanCache {
 public:
  using Traits = FftwTraits<R>;
  using Plan = typename Traits::plan;

  static PlanCache& instance() {
    static PlanCache cache;
    return cache;
  }

  // aligned plans may only run on buffers from Traits::alloc
  Plan get(const Shape& shape, const std::vector<std::size_t>& axes, int sign, bool aligned = false) {
    std::string key = shape_str(shape) + "|";
    for (auto a : axes) key += std::to_string(a) + ",";
    key += sign < 0 ? "f" : "b";
    if (aligned) key += "a";
    std::lock_guard<std::mutex> lock(mu_);
    auto it = plans_.find(key);
    if (it != plans_.end()) return it->second;

    std::vector<char> is_axis(shape.size(), 0);
    for (auto a : axes) is_axis[a] = 1;
    Shape strides(shape.size(), 1);
    for (Index a = static_cast<Index>(shape.size()) - 2; a >= 0; --a)
      strides[a] = strides[a + 1] * shape[a + 1];
    std::vector<typename Traits::iodim> dims, hdims;
    for (std::size_t a = 0; a < shape.size(); ++a) {
      typename Traits::iodim d{static_cast<ptrdiff_t>(shape[a]), static_cast<ptrdiff_t>(strides[a]),
                               static_cast<ptrdiff_t>(strides[a])};
      if (is_axis[a]) {
        dims.push_back(d);
      } else if (shape[a] > 1) {
        hdims.push_back(d);
      }
    }
    AlignedBuffer<R> scratch(shape_numel(shape));
    Plan p = Traits::make(static_cast<int>(dims.size()), dims.data(), static_cast<int>(hdims.size()),
                          hdims.data(), reinterpret_cast<typename Traits::complex*>(scratch.data()), sign,
                          aligned);
    if (!p) throw std::runtime_error("FFTW failed to create a plan for shape " + shape_str(shape));
    plans_.emplace(key, p);
    return p;
  }

  ~PlanCache() {
    for (auto& [k, p] : plans_) Traits::destroy(p);
  }

 private:
  std::mutex mu_;
  std::map<std::string, Plan> plans_;
};

}  // namespace detail

template <typename T>
Tensor<T> fftshift(const Tensor<T>& t, const std::vector<std::size_t>& axes) {
  Shape shifts(t.ndim(), 0);
  for (auto a : axes) shifts.at(a) = t.dim(a) / 2;
  return detail::roll(t, shifts);
}

template <typename T>
Tensor<T> ifftshift(const Tensor<T>& t, const std::vector<std::size_t>& axes) {
  Shape shifts(t.ndim(), 0);
  for (auto a : axes) shifts.at(a) = -(t.dim(a) / 2);
  return detail::roll(t, shifts);
}

template <typename T>
Tensor<T> circshift(const Tensor<T>& t, const Shape& shifts) {
  if (shifts.size() != t.ndim()) throw std::invalid_argument("circshift: one shift per axis required");
  return detail::roll(t, shifts);
}

namespace detail {

// Flat offset (j + n/2) mod n, per leading axis, for every position j. Read
// through it for ifftshift, write through it for fftshift.
inline std::vector<Index> shifted_offsets(const Shape& shape, std::size_t k) {
  std::vector<Index> off{0};
  for (std::size_t a = 0; a < k; ++a) {
    const Index n = shape[a], h = n / 2;
    std::vector<Index> next;
    next.reserve(off.size() * static_cast<std::size_t>(n));
    for (Index o : off)
      for (Index j = 0; j < n; ++j) next.push_back(o * n + (j + h) % n);
    off.swap(next);
  }
  return off;
}

// Transforms over the leading k axes: transpose to a contiguous batch with
// the pre-shift folded in, run one batched plan, transpose back with the
// post-shift and unitary scale.
template <typename R>
CTensor<R> fftc_leading(const CTensor<R>& t, std::size_t k, int sign) {
  Index P = 1;
  for (std::size_t a = 0; a < k; ++a) P *= t.dim(a);
  const Index Q = t.size() / P;
  const auto src = shifted_offsets(t.shape(), k);
  AlignedBuffer<R> work(t.size());
  const auto* in = t.data();
  constexpr Index B = 16;
  for (Index q0 = 0; q0 < Q; q0 += B) {
    const Index q1 = std::min(Q, q0 + B);
    for (Index p = 0; p < P; ++p) {
      const auto* row = in + src[static_cast<std::size_t>(p)] * Q;
      for (Index q = q0; q < q1; ++q) work[static_cast<std::size_t>(q * P + p)] = row[q];
    }
  }
  Shape bshape{Q};
  std::vector<std::size_t> baxes;
  for (std::size_t a = 0; a < k; ++a) {
    bshape.push_back(t.dim(a));
    baxes.push_back(a + 1);
  }
  auto plan = PlanCache<R>::instance().get(bshape, baxes, sign, true);
  FftwTraits<R>::execute(plan, reinterpret_cast<typename FftwTraits<R>::complex*>(work.data()));
    const R scale = static_cast<R>(1.0 / std::sqrt(double(P)));
  CTensor<R> out(t.shape());
  auto* o = out.data();
  for (Index q0 = 0; q0 < Q; q0 += B) {
    const Index q1 = std::min(Q, q0 + B);
    for (Index p = 0; p < P; ++p) {
      auto* row = o + src[static_cast<std::size_t>(p)] * Q;
      for (Index q = q0; q < q1; ++q) row[q] = work[static_cast<std::size_t>(q * P + p)] * scale;
    }
  }
  return out;
}

}  // namespace detail

// Unitary centered DFT along `axes`. forward uses exp(-2πi k r / n).
template <typename R>
CTensor<R> fftc(const CTensor<R>& t, const std::vector<std::size_t>& axes, FftDirection dir) {
  if (axes.empty()) return t;
  std::vector<std::size_t> sorted = axes;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (sorted[i] >= t.ndim())
      throw std::invalid_argument("fftc: axis " + std::to_string(sorted[i]) +
                                  " out of range for " + std::to_string(t.ndim()) + "-D tensor");
    if (i > 0 && sorted[i] == sorted[i - 1]) throw std::invalid_argument("fftc: repeated axis");
  }
  if (t.size() == 0) return t;
  const int sign = dir == FftDirection::forward ? FFTW_FORWARD : FFTW_BACKWARD;
  bool prefix = sorted.size() < t.ndim();
  for (std::size_t i = 0; i < sorted.size(); ++i) prefix = prefix && sorted[i] == i;
  if (prefix) return detail::fftc_leading(t, sorted.size(), sign);
  CTensor<R> work = ifftshift(t, sorted);
  auto plan = detail::PlanCache<R>::instance().get(t.shape(), sorted, sign);
  detail::FftwTraits<R>::execute(plan,
                                 reinterpret_cast<typename detail::FftwTraits<R>::complex*>(work.data()));
  double n = 1.0;
  for (auto a : sorted) n *= double(t.dim(a));
  CTensor<R> out = fftshift(work, sorted);
  out *= static_cast<R>(1.0 / std::sqrt(n));
  return out;
}

template <typename R>
CTensor<R> fft2c(const CTensor<R>& t) {
  return fftc(t, {0, 1}, FftDirection::forward);
}

template <typename R>
CTensor<R> ifft2c(const CTensor<R>& t) {
  return fftc(t, {0, 1}, FftDirection::inverse);
}

}  // namespace mrcine
