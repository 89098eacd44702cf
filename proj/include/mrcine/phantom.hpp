#pragma once

// Synthetic 2D cardiac cine phantom: a torso ellipse with static organs, a
// pulsating left-ventricle blood pool inside a myocardial annulus, papillary
// discs riding the pulsation, smooth image phase, Gaussian receive coils and
// fully-sampled multi-coil k-space.

#include <array>
#include <numbers>

#include "mrcine/fft.hpp"
#include "mrcine/rng.hpp"
#include "mrcine/types.hpp"

namespace mrcine {

struct PhantomConfig {
  Index nx = 64;
  Index ny = 64;
  Index nframes = 16;
  Index ncoils = 8;
  std::uint64_t seed = 0;
  double motion_amplitude = 0.2;  // fractional blood-pool radius pulsation
  double wrap_fraction = 0.0;     // enlarges the torso along phase-encode
  double noise_std = 0.0;         // complex Gaussian k-space noise
  double coil_width = 0.25;       // Gaussian coil sigma as a fraction of max(nx, ny)

  void validate() const {
    if (nx < 16 || ny < 16) throw std::invalid_argument("phantom extents must be >= 16");
    if (nframes < 4) throw std::invalid_argument("phantom needs >= 4 frames");
    if (ncoils < 1) throw std::invalid_argument("phantom needs >= 1 coil");
    if (motion_amplitude < 0.0 || motion_amplitude > 0.5)
      throw std::invalid_argument("motion_amplitude must lie in [0, 0.5]");
    if (wrap_fraction < 0.0 || wrap_fraction > 0.3)
      throw std::invalid_argument("wrap_fraction must lie in [0, 0.3]");
    if (noise_std < 0.0) throw std::invalid_argument("noise_std must be non-negative");
    if (!(coil_width > 0.0)) throw std::invalid_argument("coil_width must be positive");
  }
};

// Axis-aligned-then-rotated ellipse in pixel coordinates (x = readout row,
// y = phase-encode column, origin at the array center index n/2).
struct Ellipse {
  double cx = 0, cy = 0;
  double ax = 1, ay = 1;
  double angle = 0;
  double intensity = 0;

  bool contains(double x, double y) const {
    const double c = std::cos(angle), s = std::sin(angle);
    const double dx = x - cx, dy = y - cy;
    const double u = (c * dx + s * dy) / ax;
    const double v = (-s * dx + c * dy) / ay;
    return u * u + v * v <= 1.0;
  }
  double area() const { return std::numbers::pi * ax * ay; }
};

// Seeded, frame-independent description of one phantom.
struct PhantomGeometry {
  Index nx = 0, ny = 0, nframes = 0;
  double motion_amplitude = 0;
  Ellipse torso;
  std::vector<Ellipse> organs;
  double heart_cx = 0, heart_cy = 0, heart_angle = 0;
  double blood_ax = 0, blood_ay = 0, wall = 0;
  double blood_intensity = 0, myo_intensity = 0;
  std::vector<double> papillary_angles;
  double papillary_radius = 0, papillary_intensity = 0;
  std::array<double, 5> phase_coeffs{};

  double pulsation(Index frame) const {
    return 1.0 + motion_amplitude * std::sin(2.0 * std::numbers::pi * double(frame) / double(nframes));
  }
  Ellipse blood_pool(Index frame) const {
    const double s = pulsation(frame);
    return {heart_cx, heart_cy, blood_ax * s, blood_ay * s, heart_angle, blood_intensity};
  }
  Ellipse myocardium(Index frame) const {
    const double s = pulsation(frame);
    return {heart_cx, heart_cy, blood_ax * s + wall, blood_ay * s + wall, heart_angle, myo_intensity};
  }
  std::vector<Ellipse> papillary(Index frame) const {
    const double s = pulsation(frame);
    std::vector<Ellipse> out;
    for (double th : papillary_angles) {
      const double r = 0.62;
      const double lx = r * blood_ax * s * std::cos(th), ly = r * blood_ay * s * std::sin(th);
      const double c = std::cos(heart_angle), sn = std::sin(heart_angle);
      out.push_back({heart_cx + c * lx - sn * ly, heart_cy + sn * lx + c * ly, papillary_radius,
                     papillary_radius, 0.0, papillary_intensity});
    }
    return out;
  }
  // Painter's order, back to front.
  std::vector<Ellipse> layers(Index frame) const {
    std::vector<Ellipse> out{torso};
    out.insert(out.end(), organs.begin(), organs.end());
    out.push_back(myocardium(frame));
    out.push_back(blood_pool(frame));
    const auto pap = papillary(frame);
    out.insert(out.end(), pap.begin(), pap.end());
    return out;
  }
  double phase(double x, double y) const {
    const double u = x / (0.5 * double(nx)), v = y / (0.5 * double(ny));
    const auto& c = phase_coeffs;
    return c[0] + c[1] * u + c[2] * v + c[3] * u * v + c[4] * (u * u - v * v);
  }
};

inline constexpr int kPhantomSupersample = 4;

inline double pixel_x(Index ix, Index nx) { return double(ix) - double(nx / 2); }
inline double pixel_y(Index iy, Index ny) { return double(iy) - double(ny / 2); }

// Fraction of each pixel covered by `e`, from an s×s sub-sample grid.
inline RTensor<double> ellipse_coverage(const Ellipse& e, Index nx, Index ny,
                                        int s = kPhantomSupersample) {
  RTensor<double> out({nx, ny});
  for (Index ix = 0; ix < nx; ++ix)
    for (Index iy = 0; iy < ny; ++iy) {
      int hits = 0;
      for (int a = 0; a < s; ++a)
        for (int b = 0; b < s; ++b)
          hits += e.contains(pixel_x(ix, nx) + (a + 0.5) / s - 0.5, pixel_y(iy, ny) + (b + 0.5) / s - 0.5);
      out(ix, iy) = double(hits) / double(s * s);
    }
  return out;
}

inline PhantomGeometry phantom_geometry(const PhantomConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, 0x5048414E));  // "PHAN"
  PhantomGeometry g;
  g.nx = cfg.nx;
  g.ny = cfg.ny;
  g.nframes = cfg.nframes;
  g.motion_amplitude = cfg.motion_amplitude;
  const double nx = double(cfg.nx), ny = double(cfg.ny), n = std::min(nx, ny);

  const double ay_frac = std::min(0.40 + 0.5 * cfg.wrap_fraction, 0.485);
  g.torso = {rng.uniform(-0.01, 0.01) * nx, 0.0, rng.uniform(0.39, 0.43) * nx, ay_frac * ny,
             0.0, rng.uniform(0.35, 0.45)};

  // Static organs inside the torso (liver-like and spine-like regions).
  g.organs.push_back({0.20 * nx * rng.uniform(0.9, 1.1), -0.22 * ny * rng.uniform(0.9, 1.1),
                      0.12 * nx, 0.16 * ny, rng.uniform(-0.4, 0.4), rng.uniform(0.55, 0.7)});
  g.organs.push_back({0.30 * nx, 0.02 * ny * rng.uniform(-1, 1), 0.05 * n, 0.05 * n, 0.0,
                      rng.uniform(0.15, 0.25)});

  g.heart_cx = rng.uniform(-0.10, -0.02) * nx;
  g.heart_cy = rng.uniform(0.02, 0.12) * ny;
  g.heart_angle = rng.uniform(-0.6, 0.6);
  g.blood_ax = rng.uniform(0.10, 0.13) * n;
  g.blood_ay = rng.uniform(0.08, 0.11) * n;
  g.wall = rng.uniform(0.04, 0.055) * n;
  g.blood_intensity = rng.uniform(0.85, 1.0);
  g.myo_intensity = rng.uniform(0.15, 0.25);
  const auto npap = rng.integer(2, 4);
  const double base = rng.uniform(0.0, 2.0 * std::numbers::pi);
  for (Index k = 0; k < npap; ++k)
    g.papillary_angles.push_back(base + 2.0 * std::numbers::pi * double(k) / double(npap) +
                                 rng.uniform(-0.3, 0.3));
  g.papillary_radius = 0.025 * n;
  g.papillary_intensity = g.myo_intensity;
  for (auto& c : g.phase_coeffs) c = rng.uniform(-0.4, 0.4);
  return g;
}

// Ground-truth magnitude-times-phase frame from the layer stack.
inline CTensor<double> render_frame(const PhantomGeometry& g, Index frame) {
  const auto layers = g.layers(frame);
  const int s = kPhantomSupersample;
  CTensor<double> out({g.nx, g.ny});
  for (Index ix = 0; ix < g.nx; ++ix)
    for (Index iy = 0; iy < g.ny; ++iy) {
      double acc = 0.0;
      for (int a = 0; a < s; ++a)
        for (int b = 0; b < s; ++b) {
          const double x = pixel_x(ix, g.nx) + (a + 0.5) / s - 0.5;
          const double y = pixel_y(iy, g.ny) + (b + 0.5) / s - 0.5;
          double v = 0.0;
          for (const auto& e : layers)
            if (e.contains(x, y)) v = e.intensity;
          acc += v;
        }
      const double mag = acc / double(s * s);
      out(ix, iy) = std::polar(mag, g.phase(pixel_x(ix, g.nx), pixel_y(iy, g.ny)));
    }
  return out;
}

template <typename R>
struct GroundTruth {
  CineImage<R> image;  // (x, y, 1, frame)
  CTensor<R> coils;    // (x, y, coil)
  KTData<R> kspace;    // (kx, ky, coil, frame)
};

template <typename R = Real>
CineImage<R> generate_image(const PhantomConfig& cfg) {
  const auto g = phantom_geometry(cfg);
  CineImage<R> img{CTensor<R>({cfg.nx, cfg.ny, 1, cfg.nframes})};
  // Frames share their layers when the phantom is static.
  for (Index t = 0; t < cfg.nframes; ++t) {
    const auto f = (t > 0 && cfg.motion_amplitude == 0.0) ? CTensor<double>() : render_frame(g, t);
    for (Index ix = 0; ix < cfg.nx; ++ix)
      for (Index iy = 0; iy < cfg.ny; ++iy)
        img.values(ix, iy, 0, t) = f.empty() ? img.values(ix, iy, 0, 0)
                                             : static_cast<std::complex<R>>(f(ix, iy));
  }
  return img;
}

// Gaussian receive profiles centered on a ring just outside the FOV with a
// linear phase per coil, normalized to unit root-sum-of-squares everywhere.
template <typename R = Real>
CTensor<R> generate_coils(const PhantomConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, 0x434F494C));  // "COIL"
  const double nx = double(cfg.nx), ny = double(cfg.ny);
  const double rot = rng.uniform(0.0, 2.0 * std::numbers::pi);
  struct Coil {
    double cx, cy, sigma, px, py;
  };
  std::vector<Coil> coils;
  for (Index c = 0; c < cfg.ncoils; ++c) {
    const double th = rot + 2.0 * std::numbers::pi * double(c) / double(cfg.ncoils);
    coils.push_back({0.6 * nx * std::cos(th), 0.6 * ny * std::sin(th),
                     rng.uniform(0.9, 1.1) * cfg.coil_width * std::max(nx, ny), rng.uniform(-1.0, 1.0),
                     rng.uniform(-1.0, 1.0)});
  }
  CTensor<R> out({cfg.nx, cfg.ny, cfg.ncoils});
  std::vector<std::complex<double>> v(static_cast<std::size_t>(cfg.ncoils));
  for (Index ix = 0; ix < cfg.nx; ++ix)
    for (Index iy = 0; iy < cfg.ny; ++iy) {
      const double x = pixel_x(ix, cfg.nx), y = pixel_y(iy, cfg.ny);
      double rss = 0.0;
      for (Index c = 0; c < cfg.ncoils; ++c) {
        const auto& k = coils[static_cast<std::size_t>(c)];
        const double d2 = (x - k.cx) * (x - k.cx) + (y - k.cy) * (y - k.cy);
        const double mag = std::exp(-0.5 * d2 / (k.sigma * k.sigma));
        const double ph = k.px * x / (0.5 * nx) + k.py * y / (0.5 * ny);
        v[static_cast<std::size_t>(c)] = std::polar(mag, ph);
        rss += mag * mag;
      }
      rss = std::sqrt(rss);
      for (Index c = 0; c < cfg.ncoils; ++c)
        out(ix, iy, c) = static_cast<std::complex<R>>(v[static_cast<std::size_t>(c)] / rss);
    }
  return out;
}

// Coil images S^i ⊙ x per frame: (x, y, coil, frame) from a 1-set image.
template <typename R>
CTensor<R> coil_images(const CineImage<R>& image, const CTensor<R>& coils) {
  if (image.values.ndim() != 4 || image.nsets() != 1)
    throw std::invalid_argument("coil_images: expected a single-set cine image");
  if (coils.ndim() != 3 || coils.dim(0) != image.nx() || coils.dim(1) != image.ny())
    throw std::invalid_argument("coil_images: coil maps " + shape_str(coils.shape()) +
                                " do not match image " + shape_str(image.values.shape()));
  const Index nx = image.nx(), ny = image.ny(), nc = coils.dim(2), nt = image.nframes();
  CTensor<R> out({nx, ny, nc, nt});
  for (Index ix = 0; ix < nx; ++ix)
    for (Index iy = 0; iy < ny; ++iy)
      for (Index c = 0; c < nc; ++c) {
        const auto s = coils(ix, iy, c);
        for (Index t = 0; t < nt; ++t) out(ix, iy, c, t) = s * image.values(ix, iy, 0, t);
      }
  return out;
}

template <typename R>
KTData<R> simulate_kspace(const CineImage<R>& image, const CTensor<R>& coils) {
  return {fftc(coil_images(image, coils), {0, 1}, FftDirection::forward)};
}

template <typename R = Real>
GroundTruth<R> generate_phantom(const PhantomConfig& cfg) {
  GroundTruth<R> gt;
  gt.image = generate_image<R>(cfg);
  gt.coils = generate_coils<R>(cfg);
  gt.kspace = simulate_kspace(gt.image, gt.coils);
  if (cfg.noise_std > 0.0) {
    Rng rng(derive_seed(cfg.seed, 0x4E4F4953));  // "NOIS"
    const double s = cfg.noise_std / std::sqrt(2.0);
    for (Index i = 0; i < gt.kspace.values.size(); ++i)
      gt.kspace.values[i] += std::complex<R>(R(s * rng.normal()), R(s * rng.normal()));
  }
  return gt;
}

// Pixels inside the torso ellipse for the given config.
inline Tensor<std::uint8_t> torso_support(const PhantomConfig& cfg) {
  const auto g = phantom_geometry(cfg);
  Tensor<std::uint8_t> out({cfg.nx, cfg.ny});
  for (Index ix = 0; ix < cfg.nx; ++ix)
    for (Index iy = 0; iy < cfg.ny; ++iy)
      out(ix, iy) = g.torso.contains(pixel_x(ix, cfg.nx), pixel_y(iy, cfg.ny)) ? 1 : 0;
  return out;
}

}  // namespace mrcine
