#pragma once

// Coil compression and multi-set ESPIRiT map estimation from the
// time-averaged central k-space region.

#include "mrcine/fft.hpp"
#include "mrcine/linalg.hpp"
#include "mrcine/sampling.hpp"
#include "mrcine/types.hpp"

namespace mrcine {

class CalibrationInfeasible : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename R>
struct CoilCompression {
  KTData<R> data;
  CTensor<R> transform;  // (coils, virtual coils), orthonormal columns
  std::vector<R> singular_values;
  double energy_retained = 1.0;
};

// SVD of the (acquired samples × coils) matrix; data are projected onto the
// leading right-singular vectors.
template <typename R>
CoilCompression<R> compress_coils(const KTData<R>& y, Index n_virtual) {
  const Index nc = y.ncoils();
  if (n_virtual < 1) throw std::invalid_argument("compress_coils: need at least one virtual coil");
  if (n_virtual > nc)
    throw std::invalid_argument("compress_coils: " + std::to_string(n_virtual) + " virtual coils from " +
                                std::to_string(nc) + " physical coils");
  const Index nx = y.nx(), ny = y.ny(), nt = y.nframes();
  std::vector<std::array<Index, 3>> rows;
  for (Index x = 0; x < nx; ++x)
    for (Index k = 0; k < ny; ++k)
      for (Index t = 0; t < nt; ++t) {
        bool any = false;
        for (Index c = 0; c < nc && !any; ++c) any = y.values(x, k, c, t) != std::complex<R>{};
        if (any) rows.push_back({x, k, t});
      }
  CTensor<R> a({static_cast<Index>(rows.size()), nc});
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (Index c = 0; c < nc; ++c) a(static_cast<Index>(r), c) = y.values(rows[r][0], rows[r][1], c, rows[r][2]);

  CoilCompression<R> out;
  out.transform = CTensor<R>({nc, n_virtual});
  if (rows.empty()) {
    for (Index v = 0; v < n_virtual; ++v) out.transform(v, v) = 1;
    out.data.values = CTensor<R>({nx, ny, n_virtual, nt});
    out.singular_values.assign(static_cast<std::size_t>(nc), R(0));
    return out;
  }
  const auto svd = svd_econ(a);
  out.singular_values = svd.s;
  double total = 0.0, kept = 0.0;
  for (std::size_t i = 0; i < svd.s.size(); ++i) {
    total += double(svd.s[i]) * svd.s[i];
    if (static_cast<Index>(i) < n_virtual) kept += double(svd.s[i]) * svd.s[i];
  }
  out.energy_retained = total > 0.0 ? kept / total : 1.0;
  const Index kdim = static_cast<Index>(svd.s.size());
  for (Index c = 0; c < nc; ++c)
    for (Index v = 0; v < n_virtual; ++v) out.transform(c, v) = v < kdim ? svd.V(c, v) : std::complex<R>{};
  out.data.values = CTensor<R>({nx, ny, n_virtual, nt});
  for (Index x = 0; x < nx; ++x)
    for (Index k = 0; k < ny; ++k)
      for (Index t = 0; t < nt; ++t)
        for (Index v = 0; v < n_virtual; ++v) {
          std::complex<R> acc{};
          for (Index c = 0; c < nc; ++c) acc += y.values(x, k, c, t) * out.transform(c, v);
          out.data.values(x, k, v, t) = acc;
        }
  return out;
}

template <typename R>
struct CalibRegion {
  CTensor<R> data;  // (kx_c, ky_c, coil), time-averaged
  Index kx0 = 0, ky0 = 0;  // position of the region inside the full grid
};

// Temporal mean of sampled entries over the central width×width window,
// narrowed along readout to stay clear of partial-echo rows.
template <typename R>
CalibRegion<R> extract_calib(const KTData<R>& y, const KTMask& mask, Index width) {
  if (y.nx() != mask.nx() || y.ny() != mask.ny() || y.nframes() != mask.nframes())
    throw std::invalid_argument("extract_calib: mask " + shape_str(mask.pattern.shape()) +
                                " does not match k-space " + shape_str(y.values.shape()));
  if (width < 1) throw std::invalid_argument("extract_calib: width must be positive");
  const Index wy = std::min(width, y.ny());
  const Index cx = y.nx() / 2;
  const Index first = first_echo_row(mask);
  const Index wx = std::min({width, y.nx(), 2 * (cx - first)});
  if (wx < 1) throw CalibrationInfeasible("partial echo leaves no symmetric readout window");
  CalibRegion<R> c;
  c.kx0 = cx - wx / 2;
  c.ky0 = y.ny() / 2 - wy / 2;
  c.data = CTensor<R>({wx, wy, y.ncoils()});
  for (Index j = 0; j < wy; ++j)
    for (Index i = 0; i < wx; ++i) {
      const Index kx = c.kx0 + i, ky = c.ky0 + j;
      Index n = 0;
      for (Index t = 0; t < y.nframes(); ++t)
        if (mask.pattern(kx, ky, t)) {
          ++n;
          for (Index coil = 0; coil < y.ncoils(); ++coil) c.data(i, j, coil) += y.values(kx, ky, coil, t);
        }
      if (n == 0)
        throw CalibrationInfeasible("calibration region not covered: ky line " + std::to_string(ky) +
                                    " (readout " + std::to_string(kx) + ") is never sampled");
      for (Index coil = 0; coil < y.ncoils(); ++coil) c.data(i, j, coil) /= R(n);
    }
  return c;
}

struct EspiritOptions {
  Index nsets = 2;
  Index kernel = 6;
  double sv_threshold = 0.02;
  double eig_crop = 0.9;
};

// Block-Hankel calibration matrix: one row per kernel position, columns
// ordered (kernel x, kernel y, coil).
template <typename R>
CTensor<R> calibration_matrix(const CTensor<R>& calib, Index kernel) {
  const Index cx = calib.dim(0), cy = calib.dim(1), nc = calib.dim(2);
  const Index px = cx - kernel + 1, py = cy - kernel + 1;
  CTensor<R> a({px * py, kernel * kernel * nc});
  for (Index i = 0; i < px; ++i)
    for (Index j = 0; j < py; ++j) {
      const Index row = i * py + j;
      for (Index di = 0; di < kernel; ++di)
        for (Index dj = 0; dj < kernel; ++dj)
          for (Index c = 0; c < nc; ++c) a(row, (di * kernel + dj) * nc + c) = calib(i + di, j + dj, c);
    }
  return a;
}

// Per-pixel N×N ESPIRiT operator W(r) = (1/K) Σ_j g_j(r) g_j(r)ᴴ, where g_j is
// the image-domain response of signal-subspace kernel j. Returned as
// (x, y, coil, coil).
template <typename R>
CTensor<R> espirit_operator(const CTensor<R>& calib, Index nx, Index ny, Index kernel, double sv_threshold) {
  const Index nc = calib.dim(2);
  const auto svd = svd_econ(calibration_matrix(calib, kernel));
  const R smax = svd.s.empty() ? R(0) : svd.s.front();
  if (!(smax > R(0))) throw CalibrationInfeasible("calibration data are all zero");
  Index nsig = 0;
  while (nsig < static_cast<Index>(svd.s.size()) && double(svd.s[static_cast<std::size_t>(nsig)]) >= sv_threshold * double(smax))
    ++nsig;
  const Index kn = kernel * kernel * nc;

  // Patches lie in span{conj(v_j)}; project with P = Σ w wᴴ, w = conj(v).
  CMatrix<double> w(kn, nsig);
  for (Index r = 0; r < kn; ++r)
    for (Index j = 0; j < nsig; ++j) w(r, j) = std::conj(std::complex<double>(svd.V(r, j)));
  const CMatrix<double> p = w * w.adjoint();

  // h_{c,c'}[Δ] = Σ_{δ-δ'=Δ} P[(δ,c),(δ',c')] placed around the grid center.
  const Index span = 2 * kernel - 1;
  if (span > nx || span > ny) throw std::invalid_argument("kernel too large for the map grid");
  CTensor<R> h({nx, ny, nc, nc});
  for (Index a = 0; a < kernel; ++a)
    for (Index b = 0; b < kernel; ++b)
      for (Index a2 = 0; a2 < kernel; ++a2)
        for (Index b2 = 0; b2 < kernel; ++b2) {
          const Index gx = nx / 2 + (a - a2), gy = ny / 2 + (b - b2);
          for (Index c = 0; c < nc; ++c)
            for (Index c2 = 0; c2 < nc; ++c2)
              h(gx, gy, c, c2) += static_cast<std::complex<R>>(p((a * kernel + b) * nc + c, (a2 * kernel + b2) * nc + c2));
        }
  auto op = fftc(h, {0, 1}, FftDirection::inverse);
  op *= static_cast<R>(std::sqrt(double(nx) * double(ny)) / double(kernel * kernel));
  return op;
}

template <typename R>
EspiritMaps<R> estimate_espirit_maps(const CalibRegion<R>& c, Index nx, Index ny, const EspiritOptions& opt = {}) {
  if (opt.nsets < 1 || opt.nsets > 2) throw std::invalid_argument("ESPIRiT supports 1 or 2 map sets");
  if (c.data.dim(0) < opt.kernel || c.data.dim(1) < opt.kernel)
    throw std::invalid_argument("calibration region " + shape_str(c.data.shape()) + " smaller than kernel " +
                                std::to_string(opt.kernel));
  const Index nc = c.data.dim(2), m = opt.nsets;
  if (m > nc) throw std::invalid_argument("more map sets than coils");
  const auto op = espirit_operator(c.data, nx, ny, opt.kernel, opt.sv_threshold);

  EspiritMaps<R> out;
  out.maps = CTensor<R>({nx, ny, nc, m});
  out.eigenvalues = RTensor<R>({nx, ny, m});
  out.calib_width = c.data.dim(1);
  out.kernel = opt.kernel;
  out.sv_threshold = opt.sv_threshold;
  out.eig_crop = opt.eig_crop;

  CMatrix<double> wr(nc, nc);
  for (Index x = 0; x < nx; ++x)
    for (Index y = 0; y < ny; ++y) {
      for (Index i = 0; i < nc; ++i)
        for (Index j = 0; j < nc; ++j) wr(i, j) = std::complex<double>(op(x, y, i, j));
      Eigen::SelfAdjointEigenSolver<CMatrix<double>> es(wr);
      for (Index s = 0; s < m; ++s) {
        const Index col = nc - 1 - s;  // ascending order from Eigen
        const double lam = es.eigenvalues()(col);
        out.eigenvalues(x, y, s) = static_cast<R>(std::max(lam, 0.0));
        if (lam < opt.eig_crop) continue;
        auto v = es.eigenvectors().col(col);
        const double ph = std::arg(v(0));
        const std::complex<double> rot = std::polar(1.0, -ph);
        for (Index i = 0; i < nc; ++i) out.maps(x, y, i, s) = static_cast<std::complex<R>>(v(i) * rot);
      }
    }
  return out;
}

}  // namespace mrcine
