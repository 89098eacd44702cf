#pragma once

// Multi-set ESPIRiT encoding A = P F E, its adjoint, and the proximal and
// finite-difference pieces shared by the iterative reconstructions.

#include "mrcine/fft.hpp"
#include "mrcine/types.hpp"

namespace mrcine {

template <typename R>
struct ForwardModel {
  CTensor<R> maps;                // (x, y, coil, set)
  Tensor<std::uint8_t> mask;      // (kx, ky, frame)

  ForwardModel() = default;
  ForwardModel(CTensor<R> s, Tensor<std::uint8_t> p) : maps(std::move(s)), mask(std::move(p)) { validate(); }
  ForwardModel(const EspiritMaps<R>& s, const KTMask& p) : ForwardModel(s.maps, p.pattern) {}

  Index nx() const { return maps.dim(0); }
  Index ny() const { return maps.dim(1); }
  Index ncoils() const { return maps.dim(2); }
  Index nsets() const { return maps.dim(3); }
  Index nframes() const { return mask.dim(2); }
  Shape image_shape() const { return {nx(), ny(), nsets(), nframes()}; }
  Shape data_shape() const { return {nx(), ny(), ncoils(), nframes()}; }

  void validate() const {
    if (maps.ndim() != 4) throw std::invalid_argument("maps must be (x, y, coil, set), got " + shape_str(maps.shape()));
    if (mask.ndim() != 3 || mask.dim(0) != maps.dim(0) || mask.dim(1) != maps.dim(1))
      throw std::invalid_argument("mask " + shape_str(mask.shape()) + " does not match maps " +
                                  shape_str(maps.shape()));
  }
};

// Σ_m S_m ⊙ x_m per coil: (x, y, set, frame) -> (x, y, coil, frame).
template <typename R>
CTensor<R> apply_E(const CTensor<R>& x, const CTensor<R>& maps) {
  if (x.ndim() != 4 || maps.ndim() != 4 || x.dim(0) != maps.dim(0) || x.dim(1) != maps.dim(1) ||
      x.dim(2) != maps.dim(3))
    throw std::invalid_argument("apply_E: image " + shape_str(x.shape()) + " vs maps " + shape_str(maps.shape()));
  const Index nx = x.dim(0), ny = x.dim(1), m = x.dim(2), nt = x.dim(3), nc = maps.dim(2);
  CTensor<R> out({nx, ny, nc, nt});
  for (Index i = 0; i < nx; ++i)
    for (Index j = 0; j < ny; ++j) {
      const std::complex<R>* s = &maps(i, j, 0, 0);
      const std::complex<R>* xv = &x(i, j, 0, 0);
      std::complex<R>* o = &out(i, j, 0, 0);
      for (Index c = 0; c < nc; ++c)
        for (Index t = 0; t < nt; ++t) {
          std::complex<R> acc{};
          for (Index k = 0; k < m; ++k) acc += s[c * m + k] * xv[k * nt + t];
          o[c * nt + t] = acc;
        }
    }
  return out;
}

template <typename R>
CTensor<R> apply_E_adjoint(const CTensor<R>& c, const CTensor<R>& maps) {
  if (c.ndim() != 4 || maps.ndim() != 4 || c.dim(0) != maps.dim(0) || c.dim(1) != maps.dim(1) ||
      c.dim(2) != maps.dim(2))
    throw std::invalid_argument("apply_E_adjoint: coil images " + shape_str(c.shape()) + " vs maps " +
                                shape_str(maps.shape()));
  const Index nx = c.dim(0), ny = c.dim(1), nc = c.dim(2), nt = c.dim(3), m = maps.dim(3);
  CTensor<R> out({nx, ny, m, nt});
  for (Index i = 0; i < nx; ++i)
    for (Index j = 0; j < ny; ++j) {
      const std::complex<R>* s = &maps(i, j, 0, 0);
      const std::complex<R>* cv = &c(i, j, 0, 0);
      std::complex<R>* o = &out(i, j, 0, 0);
      for (Index k = 0; k < m; ++k)
        for (Index t = 0; t < nt; ++t) {
          std::complex<R> acc{};
          for (Index q = 0; q < nc; ++q) acc += std::conj(s[q * m + k]) * cv[q * nt + t];
          o[k * nt + t] = acc;
        }
    }
  return out;
}

namespace detail {

template <typename R>
void apply_mask_inplace(CTensor<R>& k, const Tensor<std::uint8_t>& mask) {
  const Index nx = k.dim(0), ny = k.dim(1), nc = k.dim(2), nt = k.dim(3);
  for (Index i = 0; i < nx; ++i)
    for (Index j = 0; j < ny; ++j)
      for (Index t = 0; t < nt; ++t)
        if (!mask(i, j, t))
          for (Index c = 0; c < nc; ++c) k(i, j, c, t) = {};
}

}  // namespace detail

template <typename R>
CTensor<R> apply_A(const CTensor<R>& x, const ForwardModel<R>& model) {
  require_shape(x.shape(), model.image_shape(), "apply_A image");
  auto k = fftc(apply_E(x, model.maps), {0, 1}, FftDirection::forward);
  detail::apply_mask_inplace(k, model.mask);
  return k;
}

template <typename R>
CTensor<R> apply_A_adjoint(const CTensor<R>& y, const ForwardModel<R>& model) {
  require_shape(y.shape(), model.data_shape(), "apply_A_adjoint data");
  CTensor<R> k = y;
  detail::apply_mask_inplace(k, model.mask);
  return apply_E_adjoint(fftc(k, {0, 1}, FftDirection::inverse), model.maps);
}

// AᴴA x without materializing the masked copy twice.
template <typename R>
CTensor<R> apply_normal(const CTensor<R>& x, const ForwardModel<R>& model) {
  auto k = fftc(apply_E(x, model.maps), {0, 1}, FftDirection::forward);
  detail::apply_mask_inplace(k, model.mask);
  return apply_E_adjoint(fftc(k, {0, 1}, FftDirection::inverse), model.maps);
}

template <typename T>
Tensor<T> soft_threshold(const Tensor<T>& v, double lambda) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("soft_threshold: lambda must be non-negative");
  using R = real_of_t<T>;
  Tensor<T> out(v.shape());
  const R lam = static_cast<R>(lambda);
  for (Index i = 0; i < v.size(); ++i) {
    const R a = std::abs(v[i]);
    out[i] = a > lam ? v[i] * ((a - lam) / a) : T{};
  }
  return out;
}

enum class TvAxis { spatial_x, spatial_y, temporal };
enum class TvDirection { forward, adjoint };

inline std::size_t tv_axis_index(TvAxis a) {
  switch (a) {
    case TvAxis::spatial_x: return 0;
    case TvAxis::spatial_y: return 1;
    case TvAxis::temporal: return 3;
  }
  return 0;
}

// Circular first difference x[i+1] - x[i] along the axis; adjoint is
// z[i-1] - z[i]. Each set is handled independently since axis 2 is untouched.
template <typename T>
Tensor<T> tv_diff(const Tensor<T>& x, TvAxis axis, TvDirection dir) {
  if (x.ndim() != 4) throw std::invalid_argument("tv_diff expects (x, y, set, frame), got " + shape_str(x.shape()));
  const std::size_t ax = tv_axis_index(axis);
  const Index n = x.dim(ax);
  Index outer = 1, inner = 1;
  for (std::size_t a = 0; a < ax; ++a) outer *= x.dim(a);
  for (std::size_t a = ax + 1; a < 4; ++a) inner *= x.dim(a);
  Tensor<T> out(x.shape());
  for (Index o = 0; o < outer; ++o)
    for (Index q = 0; q < n; ++q) {
      const Index nb = dir == TvDirection::forward ? (q + 1) % n : (q + n - 1) % n;
      const T* cur = x.data() + (o * n + q) * inner;
      const T* oth = x.data() + (o * n + nb) * inner;
      T* dst = out.data() + (o * n + q) * inner;
      for (Index i = 0; i < inner; ++i) dst[i] = oth[i] - cur[i];
    }
  return out;
}

// Largest singular value of a linear map by power iteration on its normal operator.
template <typename T, typename Normal>
double power_norm(Normal&& normal, Shape shape, int iters, std::uint64_t seed = 1) {
  Tensor<T> v(shape);
  std::uint64_t s = seed;
  for (Index i = 0; i < v.size(); ++i) {
    s = s * 6364136223846793005ULL + 1442695040888963407ULL;
    const double a = double(s >> 11) * 0x1.0p-53 - 0.5;
    if constexpr (is_complex_v<T>) {
      s = s * 6364136223846793005ULL + 1442695040888963407ULL;
      v[i] = T(a, double(s >> 11) * 0x1.0p-53 - 0.5);
    } else {
      v[i] = T(a);
    }
  }
  double lam = 0.0;
  for (int it = 0; it < iters; ++it) {
    const double nv = norm(v);
    if (nv == 0.0) return 0.0;
    v *= static_cast<real_of_t<T>>(1.0 / nv);
    Tensor<T> w = normal(v);
    lam = std::abs(inner(v, w));
    v = std::move(w);
  }
  return std::sqrt(lam);
}

}  // namespace mrcine
