#pragma once

// PSNR / SSIM on magnitude images inside a bounding box, comparison tables
// and a paired t-test.

#include <boost/math/distributions/students_t.hpp>
#include <cstdio>
#include <limits>

#include "mrcine/tensor.hpp"

namespace mrcine {

struct BBox {
  Index x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // [x0, x1) × [y0, y1)

  Index width() const { return x1 - x0; }
  Index height() const { return y1 - y0; }
  static BBox full(Index nx, Index ny) { return {0, 0, nx, ny}; }
  void validate(Index nx, Index ny) const {
    if (!(0 <= x0 && x0 < x1 && x1 <= nx && 0 <= y0 && y0 < y1 && y1 <= ny))
      throw std::invalid_argument("bbox " + std::to_string(x0) + "," + std::to_string(y0) + "," + std::to_string(x1) +
                                  "," + std::to_string(y1) + " outside " + std::to_string(nx) + "x" + std::to_string(ny));
  }
};

inline BBox parse_bbox(const std::string& s) {
  BBox b;
  if (std::sscanf(s.c_str(), "%ld,%ld,%ld,%ld", &b.x0, &b.y0, &b.x1, &b.y1) != 4)
    throw std::invalid_argument("bbox must be x0,y0,x1,y1, got '" + s + "'");
  return b;
}

// First-set magnitude (x, y, frame) of a (x, y, set, frame) image.
template <typename R>
RTensor<double> first_set_magnitude(const CTensor<R>& img) {
  if (img.ndim() != 4) throw std::invalid_argument("expected (x, y, set, frame), got " + shape_str(img.shape()));
  RTensor<double> out({img.dim(0), img.dim(1), img.dim(3)});
  for (Index x = 0; x < img.dim(0); ++x)
    for (Index y = 0; y < img.dim(1); ++y)
      for (Index t = 0; t < img.dim(3); ++t) out(x, y, t) = std::abs(std::complex<double>(img(x, y, 0, t)));
  return out;
}

inline double bbox_peak(const RTensor<double>& ref, const BBox& b) {
  double peak = 0.0;
  for (Index t = 0; t < ref.dim(2); ++t)
    for (Index x = b.x0; x < b.x1; ++x)
      for (Index y = b.y0; y < b.y1; ++y) peak = std::max(peak, ref(x, y, t));
  return peak;
}

namespace detail {

inline void check_pair(const RTensor<double>& rec, const RTensor<double>& ref, const BBox& b) {
  if (ref.ndim() != 3) throw std::invalid_argument("metrics expect (x, y, frame) magnitudes");
  rec.require_same_shape(ref, "metric inputs");
  b.validate(ref.dim(0), ref.dim(1));
}

}  // namespace detail

// 20·log10(peak / √MSE); +inf when rec equals ref inside the box.
inline double psnr(const RTensor<double>& rec, const RTensor<double>& ref, const BBox& b) {
  detail::check_pair(rec, ref, b);
  const double peak = bbox_peak(ref, b);
  if (!(peak > 0.0)) throw std::invalid_argument("psnr: reference is zero inside the bbox");
  double se = 0.0;
  Index n = 0;
  for (Index t = 0; t < ref.dim(2); ++t)
    for (Index x = b.x0; x < b.x1; ++x)
      for (Index y = b.y0; y < b.y1; ++y, ++n) {
        const double d = rec(x, y, t) - ref(x, y, t);
        se += d * d;
      }
  if (se == 0.0) return std::numeric_limits<double>::infinity();
  return 20.0 * std::log10(peak / std::sqrt(se / double(n)));
}

inline double psnr(const RTensor<double>& rec, const RTensor<double>& ref) {
  return psnr(rec, ref, BBox::full(ref.dim(0), ref.dim(1)));
}

struct SsimOptions {
  Index window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

inline std::vector<double> gaussian_window(Index w, double sigma) {
  std::vector<double> g(static_cast<std::size_t>(w * w));
  const double c = double(w - 1) / 2.0;
  double sum = 0.0;
  for (Index i = 0; i < w; ++i)
    for (Index j = 0; j < w; ++j) {
      const double v = std::exp(-((i - c) * (i - c) + (j - c) * (j - c)) / (2 * sigma * sigma));
      g[static_cast<std::size_t>(i * w + j)] = v;
      sum += v;
    }
  for (auto& v : g) v /= sum;
  return g;
}

// Mean SSIM over every window position fully inside the box, averaged over
// frames. Dynamic range is the reference peak inside the box.
inline double ssim(const RTensor<double>& rec, const RTensor<double>& ref, const BBox& b, const SsimOptions& o = {}) {
  detail::check_pair(rec, ref, b);
  if (b.width() < o.window || b.height() < o.window)
    throw std::invalid_argument("ssim: bbox " + std::to_string(b.width()) + "x" + std::to_string(b.height()) +
                                " smaller than the " + std::to_string(o.window) + "x" + std::to_string(o.window) +
                                " window");
  const double L = bbox_peak(ref, b);
  const double c1 = (o.k1 * L) * (o.k1 * L), c2 = (o.k2 * L) * (o.k2 * L);
  const auto g = gaussian_window(o.window, o.sigma);
  double total = 0.0;
  for (Index t = 0; t < ref.dim(2); ++t) {
    double acc = 0.0;
    Index n = 0;
    for (Index x = b.x0; x + o.window <= b.x1; ++x)
      for (Index y = b.y0; y + o.window <= b.y1; ++y, ++n) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (Index i = 0; i < o.window; ++i)
          for (Index j = 0; j < o.window; ++j) {
            const double w = g[static_cast<std::size_t>(i * o.window + j)];
            const double a = rec(x + i, y + j, t), r = ref(x + i, y + j, t);
            ma += w * a;
            mb += w * r;
            saa += w * a * a;
            sbb += w * r * r;
            sab += w * a * r;
          }
        const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
        acc += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      }
    total += acc / double(n);
  }
  return total / double(ref.dim(2));
}

struct MetricRow {
  std::string method;
  double psnr_db = 0.0;
  double ssim = 0.0;
};

struct CompareReport {
  std::vector<MetricRow> rows;

  std::string csv() const;
  std::string text() const;
};

inline CompareReport compare(const std::vector<std::pair<std::string, RTensor<double>>>& recs,
                             const RTensor<double>& ref, const BBox& b) {
  CompareReport rep;
  for (const auto& [name, rec] : recs) rep.rows.push_back({name, psnr(rec, ref, b), ssim(rec, ref, b)});
  return rep;
}

inline std::string format_metric(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

// Deltas are this row minus the named method; inf − inf reads as 0.
inline double metric_delta(double a, double b) {
  if (std::isinf(a) && std::isinf(b) && (a > 0) == (b > 0)) return 0.0;
  return a - b;
}

inline std::string CompareReport::csv() const {
  std::string out = "method,psnr_db,ssim";
  for (const auto& r : rows) out += ",dpsnr_vs_" + r.method + ",dssim_vs_" + r.method;
  out += "\n";
  for (const auto& r : rows) {
    out += r.method + "," + format_metric(r.psnr_db) + "," + format_metric(r.ssim);
    for (const auto& o : rows)
      out += "," + format_metric(metric_delta(r.psnr_db, o.psnr_db)) + "," + format_metric(metric_delta(r.ssim, o.ssim));
    out += "\n";
  }
  return out;
}

inline std::string CompareReport::text() const {
  std::string out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-16s %12s %10s\n", "method", "PSNR [dB]", "SSIM");
  out += buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-16s %12s %10s\n", r.method.c_str(), format_metric(r.psnr_db).c_str(),
                  format_metric(r.ssim).c_str());
    out += buf;
  }
  return out;
}

struct PairedTTest {
  double mean_diff = 0.0;
  double t = 0.0;
  double p_two_sided = 1.0;
  Index dof = 0;
};

inline PairedTTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("paired t-test needs equal-length samples");
  if (a.size() < 2) throw std::invalid_argument("paired t-test needs at least 2 pairs");
  const auto n = static_cast<double>(a.size());
  double mean = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) mean += a[i] - b[i];
  mean /= n;
  double var = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) var += (a[i] - b[i] - mean) * (a[i] - b[i] - mean);
  var /= (n - 1.0);
  PairedTTest r;
  r.mean_diff = mean;
  r.dof = static_cast<Index>(a.size()) - 1;
  if (var == 0.0) {
    r.t = mean == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), mean);
    r.p_two_sided = mean == 0.0 ? 1.0 : 0.0;
    return r;
  }
  r.t = mean / std::sqrt(var / n);
  boost::math::students_t dist(double(r.dof));
  r.p_two_sided = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  return r;
}

}  // namespace mrcine
