#pragma once

// k-t undersampling: variable-density line masks with a rotating calibration
// band, partial echo, retrospective undersampling, phase-encode FOV
// reduction, temporal re-gating and training augmentations.

#include <optional>

#include "mrcine/fft.hpp"
#include "mrcine/rng.hpp"
#include "mrcine/types.hpp"

namespace mrcine {

struct VdMaskOptions {
  Index central_band = 4;   // contiguous lines forced per frame
  Index calib_width = 24;   // window the band cycles through over frames
  double exponent = 3.0;    // density ∝ (1 - |Δky|/(ny/2))^p
};

// Variable-density weight of line `ky`. A small floor keeps the outermost
// line drawable so budgets up to every line stay feasible.
inline double vd_weight(Index ky, Index ny, double exponent) {
  const double half = 0.5 * double(ny);
  const double d = std::abs(double(ky) - double(ny / 2)) / half;
  return std::max(std::pow(std::max(1.0 - d, 0.0), exponent), 1e-6);
}

// First line of the forced band in `frame`. Consecutive frames tile the
// calibration window, so ceil(calib_width / band) frames cover it.
inline Index central_band_start(Index ny, Index frame, const VdMaskOptions& opt) {
  const Index cw = std::min(opt.calib_width, ny);
  const Index band = std::min(opt.central_band, cw);
  const Index lo = ny / 2 - cw / 2;
  const Index blocks = (cw + band - 1) / band;
  const Index start = lo + band * (frame % blocks);
  return std::min(start, lo + cw - band);
}

// Inclusion probabilities π_i = min(1, c·w_i) with Σ π_i = budget.
inline std::vector<double> capped_inclusion(const std::vector<double>& w, Index budget) {
  std::vector<double> pi(w.size(), 0.0);
  std::vector<char> capped(w.size(), 0);
  if (budget <= 0) return pi;
  if (budget >= static_cast<Index>(w.size())) return std::vector<double>(w.size(), 1.0);
  for (;;) {
    double free_w = 0.0;
    Index ncap = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (capped[i]) ++ncap;
      else free_w += w[i];
    }
    const double c = double(budget - ncap) / free_w;
    bool changed = false;
    for (std::size_t i = 0; i < w.size(); ++i)
      if (!capped[i] && c * w[i] >= 1.0) {
        capped[i] = 1;
        changed = true;
      }
    if (!changed) {
      for (std::size_t i = 0; i < w.size(); ++i) pi[i] = capped[i] ? 1.0 : c * w[i];
      return pi;
    }
  }
}

// Selects exactly round(Σπ) distinct indices with inclusion probability π_i
// (systematic sampling over a random permutation).
inline std::vector<Index> systematic_sample(const std::vector<double>& pi, Index count, Rng& rng) {
  const auto n = static_cast<Index>(pi.size());
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  for (Index i = n - 1; i > 0; --i) std::swap(order[static_cast<std::size_t>(i)],
                                              order[static_cast<std::size_t>(rng.integer(0, i))]);
  const double u = rng.uniform();
  std::vector<Index> out;
  std::vector<char> taken(static_cast<std::size_t>(n), 0);
  double cum = 0.0;
  Index j = 0;
  for (Index m = 0; m < count; ++m) {
    const double p = u + double(m);
    while (j < n - 1 && cum + pi[static_cast<std::size_t>(order[static_cast<std::size_t>(j)])] <= p) {
      cum += pi[static_cast<std::size_t>(order[static_cast<std::size_t>(j)])];
      ++j;
    }
    Index pick = j;
    while (taken[static_cast<std::size_t>(pick)] && pick < n - 1) ++pick;
    taken[static_cast<std::size_t>(pick)] = 1;
    out.push_back(order[static_cast<std::size_t>(pick)]);
  }
  return out;
}

inline Index lines_per_frame(Index ny, double accel) {
  return static_cast<Index>(std::floor(double(ny) / accel + 1e-9));
}

inline KTMask make_vd_mask(Index nx, Index ny, Index nframes, double accel, std::uint64_t seed,
                           const VdMaskOptions& opt = {}) {
  if (nx < 1 || ny < 1 || nframes < 1) throw std::invalid_argument("mask extents must be positive");
  if (accel < 1.0 || accel > 20.0) throw std::invalid_argument("acceleration must lie in [1, 20]");
  if (opt.central_band < 1 || opt.calib_width < opt.central_band)
    throw std::invalid_argument("central band must be >= 1 and no wider than the calibration width");
  const Index budget = lines_per_frame(ny, accel);
  const Index band = std::min(opt.central_band, std::min(opt.calib_width, ny));
  if (budget < band)
    throw std::invalid_argument("infeasible mask: floor(ny/R) = " + std::to_string(budget) +
                                " lines cannot hold the central band of " + std::to_string(band));
  KTMask mask;
  mask.pattern = Tensor<std::uint8_t>({nx, ny, nframes});
  mask.accel = accel;
  mask.seed = seed;
  mask.density_exponent = opt.exponent;
  mask.central_band = opt.central_band;
  mask.calib_width = opt.calib_width;

  for (Index t = 0; t < nframes; ++t) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(t)));
    std::vector<char> line(static_cast<std::size_t>(ny), 0);
    const Index b0 = central_band_start(ny, t, opt);
    for (Index k = b0; k < b0 + band; ++k) line[static_cast<std::size_t>(k)] = 1;
    std::vector<Index> cand;
    std::vector<double> w;
    for (Index k = 0; k < ny; ++k)
      if (!line[static_cast<std::size_t>(k)]) {
        cand.push_back(k);
        w.push_back(vd_weight(k, ny, opt.exponent));
      }
    const Index extra = budget - band;
    const auto pi = capped_inclusion(w, extra);
    for (Index idx : systematic_sample(pi, extra, rng)) line[static_cast<std::size_t>(cand[static_cast<std::size_t>(idx)])] = 1;
    for (Index x = 0; x < nx; ++x)
      for (Index k = 0; k < ny; ++k) mask.pattern(x, k, t) = static_cast<std::uint8_t>(line[static_cast<std::size_t>(k)]);
  }
  return mask;
}

// Lattice k-t pattern: frame t acquires ky ≡ t (mod R). Integer R only; the
// time average covers every line once nframes >= R.
inline KTMask make_interleaved_mask(Index nx, Index ny, Index nframes, Index accel) {
  if (nx < 1 || ny < 1 || nframes < 1) throw std::invalid_argument("mask extents must be positive");
  if (accel < 1 || accel > ny) throw std::invalid_argument("interleaved acceleration must lie in [1, ny]");
  KTMask mask;
  mask.pattern = Tensor<std::uint8_t>({nx, ny, nframes});
  mask.accel = double(accel);
  mask.density_exponent = 0.0;
  mask.central_band = 0;
  for (Index t = 0; t < nframes; ++t)
    for (Index k = 0; k < ny; ++k)
      if (k % accel == t % accel)
        for (Index x = 0; x < nx; ++x) mask.pattern(x, k, t) = 1;
  return mask;
}

inline Index sampled_lines(const KTMask& m, Index frame) {
  Index n = 0;
  for (Index k = 0; k < m.ny(); ++k) {
    bool any = false;
    for (Index x = 0; x < m.nx() && !any; ++x) any = m.pattern(x, k, frame) != 0;
    n += any;
  }
  return n;
}

inline KTMask apply_partial_echo(KTMask mask, double frac) {
  if (frac < 0.0 || frac > 0.3) throw std::invalid_argument("partial echo fraction must lie in [0, 0.3]");
  const auto rows = static_cast<Index>(std::floor(frac * double(mask.nx()) + 1e-9));
  for (Index x = 0; x < rows; ++x)
    for (Index k = 0; k < mask.ny(); ++k)
      for (Index t = 0; t < mask.nframes(); ++t) mask.pattern(x, k, t) = 0;
  mask.partial_echo_frac = frac;
  return mask;
}

// First readout row not removed by partial echo.
inline Index first_echo_row(const KTMask& mask) {
  return static_cast<Index>(std::floor(mask.partial_echo_frac * double(mask.nx()) + 1e-9));
}

template <typename R>
KTData<R> undersample(const KTData<R>& y, const KTMask& mask) {
  const auto& s = y.values.shape();
  if (s.size() != 4 || mask.pattern.ndim() != 3 || s[0] != mask.nx() || s[1] != mask.ny() ||
      s[3] != mask.nframes())
    throw std::invalid_argument("undersample: mask " + shape_str(mask.pattern.shape()) +
                                " does not match k-space " + shape_str(s));
  KTData<R> out{y.values};
  for (Index x = 0; x < s[0]; ++x)
    for (Index k = 0; k < s[1]; ++k)
      for (Index c = 0; c < s[2]; ++c)
        for (Index t = 0; t < s[3]; ++t)
          if (!mask.pattern(x, k, t)) out.values(x, k, c, t) = {};
  return out;
}

inline Index reduced_extent(Index n, double factor) {
  return static_cast<Index>(std::ceil((1.0 - factor) * double(n) - 1e-9));
}

// Periodic fold of an image-domain axis onto `n_out` pixels, both grids
// centered on index n/2. Models a smaller prescribed FOV at fixed resolution.
template <typename T>
Tensor<T> fold_axis(const Tensor<T>& t, std::size_t axis, Index n_out) {
  const Index n = t.dim(axis);
  Shape out_shape = t.shape();
  out_shape[axis] = n_out;
  Tensor<T> out(out_shape);
  Index outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= t.dim(a);
  for (std::size_t a = axis + 1; a < t.ndim(); ++a) inner *= t.dim(a);
  const Index h_in = n / 2, h_out = n_out / 2;
  for (Index q = 0; q < n; ++q) {
    Index v = q - h_in + h_out;
    v = ((v % n_out) + n_out) % n_out;
    for (Index o = 0; o < outer; ++o) {
      const T* src = t.data() + (o * n + q) * inner;
      T* dst = out.data() + (o * n_out + v) * inner;
      for (Index i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  return out;
}

// Phase-encode FOV reduction: anatomy outside the new FOV wraps.
template <typename R>
KTData<R> reduce_fov(const KTData<R>& y_full, double factor) {
  if (factor < 0.0 || factor > 0.3) throw std::invalid_argument("FOV reduction must lie in [0, 0.3]");
  if (factor == 0.0) return y_full;
  const Index ny2 = reduced_extent(y_full.ny(), factor);
  auto img = fftc(y_full.values, {1}, FftDirection::inverse);
  auto folded = fold_axis(img, 1, ny2);
  return {fftc(folded, {1}, FftDirection::forward)};
}

// Nearest-neighbour re-gating: output frame j takes input frame
// round(j·nframes/target) mod nframes.
template <typename R>
KTData<R> temporal_resample(const KTData<R>& y, Index target) {
  if (target < 2) throw std::invalid_argument("temporal_resample target must be >= 2");
  const Index nt = y.nframes();
  KTData<R> out{CTensor<R>({y.nx(), y.ny(), y.ncoils(), target})};
  for (Index j = 0; j < target; ++j) {
    const Index src = std::lround(double(j) * double(nt) / double(target)) % nt;
    for (Index x = 0; x < y.nx(); ++x)
      for (Index k = 0; k < y.ny(); ++k)
        for (Index c = 0; c < y.ncoils(); ++c) out.values(x, k, c, j) = y.values(x, k, c, src);
  }
  return out;
}

// Root-sum-of-squares coil combination of image-domain coil data
// (x, y, coil, frame) -> (x, y, frame).
template <typename R>
RTensor<R> rss_combine(const CTensor<R>& coil_img) {
  const Index nx = coil_img.dim(0), ny = coil_img.dim(1), nc = coil_img.dim(2), nt = coil_img.dim(3);
  RTensor<R> out({nx, ny, nt});
  for (Index x = 0; x < nx; ++x)
    for (Index k = 0; k < ny; ++k)
      for (Index t = 0; t < nt; ++t) {
        double acc = 0.0;
        for (Index c = 0; c < nc; ++c) acc += std::norm(coil_img(x, k, c, t));
        out(x, k, t) = static_cast<R>(std::sqrt(acc));
      }
  return out;
}

struct AugmentConfig {
  bool flips = true;
  Index max_pe_shift = 20;
  Index max_frame_shift = 4;
  Index readout_crop = 64;  // 0 disables cropping
  bool scale = true;
};

struct AugmentDraws {
  bool flip_readout = false;
  bool flip_pe = false;
  Index pe_shift = 0;
  Index frame_shift = 0;
};

inline AugmentDraws draw_augment(std::uint64_t seed, const AugmentConfig& cfg = {}) {
  Rng rng(derive_seed(seed, 0x4155474D));  // "AUGM"
  AugmentDraws d;
  d.flip_readout = cfg.flips && rng.coin();
  d.flip_pe = cfg.flips && rng.coin();
  d.pe_shift = rng.integer(-cfg.max_pe_shift, cfg.max_pe_shift);
  d.frame_shift = rng.integer(-cfg.max_frame_shift, cfg.max_frame_shift);
  return d;
}

namespace detail {

// Centered flip u -> -u along `axis` (index q -> (n - q) mod n for even n).
template <typename T>
Tensor<T> centered_flip(const Tensor<T>& t, std::size_t axis) {
  const Index n = t.dim(axis);
  Tensor<T> out(t.shape());
  Index outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= t.dim(a);
  for (std::size_t a = axis + 1; a < t.ndim(); ++a) inner *= t.dim(a);
  const Index h = n / 2;
  for (Index q = 0; q < n; ++q) {
    const Index u = q - h;
    const Index p = ((-u + h) % n + n) % n;
    for (Index o = 0; o < outer; ++o)
      std::copy_n(t.data() + (o * n + q) * inner, inner, out.data() + (o * n + p) * inner);
  }
  return out;
}

template <typename T>
Tensor<T> crop_center(const Tensor<T>& t, std::size_t axis, Index len) {
  const Index n = t.dim(axis);
  if (len > n) throw std::invalid_argument("crop of " + std::to_string(len) + " exceeds extent " + std::to_string(n));
  Shape s = t.shape();
  s[axis] = len;
  Tensor<T> out(s);
  Index outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= t.dim(a);
  for (std::size_t a = axis + 1; a < t.ndim(); ++a) inner *= t.dim(a);
  const Index off = n / 2 - len / 2;
  for (Index o = 0; o < outer; ++o)
    std::copy_n(t.data() + (o * n + off) * inner, len * inner, out.data() + o * len * inner);
  return out;
}

template <typename T>
Tensor<T> geometric(const Tensor<T>& t, const AugmentDraws& d, std::size_t frame_axis, bool has_frames,
                    Index crop) {
  Tensor<T> out = t;
  if (d.flip_readout) out = centered_flip(out, 0);
  if (d.flip_pe) out = centered_flip(out, 1);
  Shape shifts(out.ndim(), 0);
  shifts[1] = d.pe_shift;
  if (has_frames) shifts[frame_axis] = d.frame_shift;
  out = circshift(out, shifts);
  if (crop > 0) out = crop_center(out, 0, crop);
  return out;
}

}  // namespace detail

// Applies flips, PE translation, temporal rotation, readout crop and
// intensity scaling to k-space, maps and target together. The scale makes the
// largest RSS-combined zero-filled magnitude equal to 1 (using the example's
// mask when it matches the cropped k-space, otherwise full sampling).
template <typename R>
TrainExample<R> augment_with(const TrainExample<R>& ex, const AugmentDraws& d, const AugmentConfig& cfg = {}) {
  TrainExample<R> out = ex;
  const Index crop = cfg.readout_crop;
  if (crop > ex.y_full.nx())
    throw std::invalid_argument("readout crop of " + std::to_string(crop) + " exceeds extent " +
                                std::to_string(ex.y_full.nx()));
  auto coil_img = fftc(ex.y_full.values, {0, 1}, FftDirection::inverse);
  coil_img = detail::geometric(coil_img, d, 3, true, crop);
  if (!ex.maps.maps.empty()) {
    out.maps.maps = detail::geometric(ex.maps.maps, d, 3, false, crop);
    if (!ex.maps.eigenvalues.empty()) out.maps.eigenvalues = detail::geometric(ex.maps.eigenvalues, d, 2, false, crop);
  }
  if (!ex.x_gt.values.empty()) out.x_gt.values = detail::geometric(ex.x_gt.values, d, 3, true, crop);
  out.y_full.values = fftc(coil_img, {0, 1}, FftDirection::forward);

  if (cfg.scale) {
    const bool use_mask = !out.mask.pattern.empty() && out.mask.nx() == out.y_full.nx() &&
                          out.mask.ny() == out.y_full.ny() && out.mask.nframes() == out.y_full.nframes();
    const auto zf = use_mask ? fftc(undersample(out.y_full, out.mask).values, {0, 1}, FftDirection::inverse)
                             : coil_img;
    const double peak = max_abs(rss_combine(zf));
    if (peak > 0.0) {
      const R s = static_cast<R>(1.0 / peak);
      out.y_full.values *= s;
      if (!out.x_gt.values.empty()) out.x_gt.values *= s;
    }
  }
  return out;
}

template <typename R>
TrainExample<R> augment(const TrainExample<R>& ex, std::uint64_t seed, const AugmentConfig& cfg = {}) {
  return augment_with(ex, draw_augment(seed, cfg), cfg);
}

}  // namespace mrcine
