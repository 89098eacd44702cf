#pragma once

// Unrolled proximal-gradient network: K rounds of data consistency followed
// by a residual CNN of five 3-D or (2+1)-D conv units on real/imag channels.
// Features are real tensors (x, y, frame, channel).

#include <Eigen/Dense>

#include "mrcine/container.hpp"
#include "mrcine/rng.hpp"
#include "mrcine/signal_model.hpp"

namespace mrcine {

enum class ConvKind : std::uint8_t { conv3d = 0, conv2p1d = 1 };

inline std::string to_string(ConvKind k) { return k == ConvKind::conv3d ? "conv3d" : "conv2p1d"; }
inline ConvKind parse_conv_kind(const std::string& s) {
  if (s == "conv3d" || s == "3d") return ConvKind::conv3d;
  if (s == "conv2p1d" || s == "2p1d" || s == "2+1d") return ConvKind::conv2p1d;
  throw std::invalid_argument("unknown conv kind '" + s + "' (conv3d | conv2p1d)");
}

// Intermediate spatial channels of a (2+1)-D unit matching a t×dx×dy 3-D conv.
inline Index compute_fs(Index t, Index dx, Index dy, Index fin, Index fout) {
  if (t < 1 || dx < 1 || dy < 1 || fin < 1 || fout < 1) throw std::invalid_argument("compute_fs: extents must be positive");
  return (t * dx * dy * fin * fout) / (dx * dy * fin + t * fout);
}

// (x, y, set, frame) complex -> (x, y, frame, 2M) real with channels
// (set1 re, set1 im, set2 re, ...).
template <typename R>
RTensor<R> complex_to_channels(const CTensor<R>& x) {
  if (x.ndim() != 4) throw std::invalid_argument("complex_to_channels expects (x, y, set, frame)");
  const Index nx = x.dim(0), ny = x.dim(1), m = x.dim(2), nt = x.dim(3);
  RTensor<R> out({nx, ny, nt, 2 * m});
  for (Index i = 0; i < nx; ++i)
    for (Index j = 0; j < ny; ++j)
      for (Index s = 0; s < m; ++s)
        for (Index t = 0; t < nt; ++t) {
          out(i, j, t, 2 * s) = x(i, j, s, t).real();
          out(i, j, t, 2 * s + 1) = x(i, j, s, t).imag();
        }
  return out;
}

template <typename R>
CTensor<R> channels_to_complex(const RTensor<R>& h) {
  if (h.ndim() != 4) throw std::invalid_argument("channels_to_complex expects (x, y, frame, channel)");
  if (h.dim(3) % 2 != 0) throw std::invalid_argument("channels_to_complex: odd channel count " + std::to_string(h.dim(3)));
  const Index nx = h.dim(0), ny = h.dim(1), nt = h.dim(2), m = h.dim(3) / 2;
  CTensor<R> out({nx, ny, m, nt});
  for (Index i = 0; i < nx; ++i)
    for (Index j = 0; j < ny; ++j)
      for (Index t = 0; t < nt; ++t)
        for (Index s = 0; s < m; ++s) out(i, j, s, t) = {h(i, j, t, 2 * s), h(i, j, t, 2 * s + 1)};
  return out;
}

// One convolution: weights [dx][dy][dt][fin][fout] plus bias[fout]. Cross-
// correlation centered on tap d/2; zero padding along x, circular along y, t.
template <typename R>
struct ConvLayer {
  Index dx = 3, dy = 3, dt = 3, fin = 1, fout = 1;
  RTensor<R> weight;
  RTensor<R> bias;

  ConvLayer() = default;
  ConvLayer(Index kx, Index ky, Index kt, Index in, Index out)
      : dx(kx), dy(ky), dt(kt), fin(in), fout(out), weight({kx, ky, kt, in, out}), bias({out}) {}

  Index param_count() const { return dx * dy * dt * fin * fout + fout; }
  Index fan_in() const { return dx * dy * dt * fin; }
};

template <typename R>
using RowMat = Eigen::Matrix<R, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {

// Input embedded in a padded grid: px = dx/2 zero rows along x, circular
// wrap of py / pt along y / t. Every tap of the kernel then reads a
// contiguous row range shifted by a constant flat offset.
struct PadGeom {
  Index nx, ny, nt, px, py, pt, NX, NY, NT;

  PadGeom(Index x, Index y, Index t, Index dx, Index dy, Index dt)
      : nx(x), ny(y), nt(t), px(dx / 2), py(dy / 2), pt(dt / 2), NX(x + 2 * px), NY(y + 2 * py), NT(t + 2 * pt) {}
  Index rows() const { return NX * NY * NT; }
  Index flat(Index X, Index Y, Index T) const { return (X * NY + Y) * NT + T; }
  Index lo() const { return flat(px, py, pt); }
  Index len() const { return flat(px + nx - 1, py + ny - 1, pt + nt - 1) - lo() + 1; }
  Index offset(Index a, Index b, Index c) const { return (a - px) * NY * NT + (b - py) * NT + (c - pt); }
};

template <typename R>
std::vector<R> pad_input(const RTensor<R>& in, const PadGeom& p) {
  const Index f = in.dim(3);
  std::vector<R> out(static_cast<std::size_t>(p.rows() * f), R(0));
  for (Index X = p.px; X < p.px + p.nx; ++X)
    for (Index Y = 0; Y < p.NY; ++Y) {
      const Index y = ((Y - p.py) % p.ny + p.ny) % p.ny;
      const R* src = in.data() + ((X - p.px) * p.ny + y) * p.nt * f;
      R* dst = out.data() + p.flat(X, Y, 0) * f;
      for (Index T = 0; T < p.NT; ++T) {
        const Index t = ((T - p.pt) % p.nt + p.nt) % p.nt;
        std::copy_n(src + t * f, f, dst + T * f);
      }
    }
  return out;
}

// Adjoint of pad_input: folds wrapped rows back, drops the x padding.
template <typename R>
void unpad_accumulate(const std::vector<R>& padded, const PadGeom& p, Index f, RTensor<R>& out) {
  for (Index X = p.px; X < p.px + p.nx; ++X)
    for (Index Y = 0; Y < p.NY; ++Y) {
      const Index y = ((Y - p.py) % p.ny + p.ny) % p.ny;
      R* dst = out.data() + ((X - p.px) * p.ny + y) * p.nt * f;
      const R* src = padded.data() + p.flat(X, Y, 0) * f;
      for (Index T = 0; T < p.NT; ++T) {
        const Index t = ((T - p.pt) % p.nt + p.nt) % p.nt;
        for (Index i = 0; i < f; ++i) dst[t * f + i] += src[T * f + i];
      }
    }
}

template <typename R>
using StridedMap = Eigen::Map<const RowMat<R>, 0, Eigen::OuterStride<>>;

// Rows q..q+len of the padded input, widened to all dt temporal taps: row
// stride fin, dt·fin columns (consecutive temporal taps overlap in memory).
template <typename R>
StridedMap<R> tap_view(const std::vector<R>& padded, Index start, Index len, Index fin, Index dt) {
  return StridedMap<R>(padded.data() + start * fin, len, dt * fin, Eigen::OuterStride<>(fin));
}

template <typename R>
Eigen::Map<const RowMat<R>> weight_block(const ConvLayer<R>& l, Index a, Index b) {
  const Index rows = l.dt * l.fin;
  return {l.weight.data() + (a * l.dy + b) * rows * l.fout, rows, l.fout};
}

template <typename R>
Eigen::Map<RowMat<R>> weight_block(RTensor<R>& w, const ConvLayer<R>& l, Index a, Index b) {
  const Index rows = l.dt * l.fin;
  return {w.data() + (a * l.dy + b) * rows * l.fout, rows, l.fout};
}

inline void require_odd(Index dx, Index dy, Index dt) {
  if (dx % 2 == 0 || dy % 2 == 0 || dt % 2 == 0) throw std::invalid_argument("conv kernels must have odd extents");
}

}  // namespace detail

template <typename R>
RTensor<R> conv_forward(const ConvLayer<R>& l, const RTensor<R>& in) {
  if (in.ndim() != 4 || in.dim(3) != l.fin)
    throw std::invalid_argument("conv_forward: input " + shape_str(in.shape()) + " vs " + std::to_string(l.fin) +
                                " input channels");
  detail::require_odd(l.dx, l.dy, l.dt);
  const detail::PadGeom p(in.dim(0), in.dim(1), in.dim(2), l.dx, l.dy, l.dt);
  const auto padded = detail::pad_input(in, p);
  const Index lo = p.lo(), len = p.len();
  RowMat<R> o = RowMat<R>::Zero(len, l.fout);
  for (Index a = 0; a < l.dx; ++a)
    for (Index b = 0; b < l.dy; ++b)
      o.noalias() += detail::tap_view(padded, lo + p.offset(a, b, 0), len, l.fin, l.dt) * detail::weight_block(l, a, b);
  RTensor<R> out({p.nx, p.ny, p.nt, l.fout});
  for (Index x = 0; x < p.nx; ++x)
    for (Index y = 0; y < p.ny; ++y)
      for (Index t = 0; t < p.nt; ++t) {
        const R* src = o.data() + (p.flat(x + p.px, y + p.py, t + p.pt) - lo) * l.fout;
        R* dst = &out(x, y, t, 0);
        for (Index c = 0; c < l.fout; ++c) dst[c] = src[c] + l.bias[c];
      }
  return out;
}

// Accumulates parameter gradients into `grad` (a layer of the same shape)
// and returns dL/d(input).
template <typename R>
RTensor<R> conv_backward(const ConvLayer<R>& l, const RTensor<R>& in, const RTensor<R>& gout, ConvLayer<R>& grad) {
  require_shape(grad.weight.shape(), l.weight.shape(), "conv gradient");
  require_shape(gout.shape(), {in.dim(0), in.dim(1), in.dim(2), l.fout}, "conv output gradient");
  const detail::PadGeom p(in.dim(0), in.dim(1), in.dim(2), l.dx, l.dy, l.dt);
  const auto padded = detail::pad_input(in, p);
  const Index lo = p.lo(), len = p.len();
  RowMat<R> go = RowMat<R>::Zero(len, l.fout);
  for (Index x = 0; x < p.nx; ++x)
    for (Index y = 0; y < p.ny; ++y)
      for (Index t = 0; t < p.nt; ++t) {
        const R* src = &gout(x, y, t, 0);
        R* dst = go.data() + (p.flat(x + p.px, y + p.py, t + p.pt) - lo) * l.fout;
        for (Index c = 0; c < l.fout; ++c) {
          dst[c] = src[c];
          grad.bias[c] += src[c];
        }
      }
  std::vector<R> gpad(padded.size(), R(0));
  for (Index a = 0; a < l.dx; ++a)
    for (Index b = 0; b < l.dy; ++b) {
      const Index start = lo + p.offset(a, b, 0);
      detail::weight_block(grad.weight, l, a, b).noalias() +=
          detail::tap_view(padded, start, len, l.fin, l.dt).transpose() * go;
      const auto wb = detail::weight_block(l, a, b);
      for (Index c = 0; c < l.dt; ++c) {
        Eigen::Map<RowMat<R>> dst(gpad.data() + (start + c) * l.fin, len, l.fin);
        dst.noalias() += go * wb.middleRows(c * l.fin, l.fin).transpose();
      }
    }
  RTensor<R> gin(in.shape());
  detail::unpad_accumulate(gpad, p, l.fin, gin);
  return gin;
}

template <typename R>
void relu_inplace(RTensor<R>& t) {
  for (Index i = 0; i < t.size(); ++i) t[i] = std::max(t[i], R(0));
}

// Zeroes gradient entries where the pre-activation was not positive.
template <typename R>
void relu_backward_inplace(RTensor<R>& g, const RTensor<R>& pre) {
  for (Index i = 0; i < g.size(); ++i)
    if (!(pre[i] > R(0))) g[i] = R(0);
}

// A conv3d unit uses `a` only; a conv2p1d unit is spatial `a` (dx, dy, 1),
// ReLU, then temporal `b` (1, 1, dt).
template <typename R>
struct ConvUnit {
  ConvKind kind = ConvKind::conv3d;
  ConvLayer<R> a, b;

  Index param_count() const { return a.param_count() + (kind == ConvKind::conv2p1d ? b.param_count() : 0); }
  Index fout() const { return kind == ConvKind::conv2p1d ? b.fout : a.fout; }
};

template <typename R>
ConvUnit<R> make_unit(ConvKind kind, Index fin, Index fout, Index d = 3) {
  ConvUnit<R> u;
  u.kind = kind;
  if (kind == ConvKind::conv3d) {
    u.a = ConvLayer<R>(d, d, d, fin, fout);
  } else {
    const Index fs = compute_fs(d, d, d, fin, fout);
    u.a = ConvLayer<R>(d, d, 1, fin, fs);
    u.b = ConvLayer<R>(1, 1, d, fs, fout);
  }
  return u;
}

template <typename R>
struct UnitCache {
  RTensor<R> input;  // what the unit consumed
  RTensor<R> mid;    // conv2p1d spatial pre-activation
};

template <typename R>
RTensor<R> unit_forward(const ConvUnit<R>& u, const RTensor<R>& in, bool linear, UnitCache<R>* cache) {
  if (cache) cache->input = in;
  auto s = conv_forward(u.a, in);
  if (u.kind == ConvKind::conv3d) return s;
  if (cache) cache->mid = s;
  if (!linear) relu_inplace(s);
  return conv_forward(u.b, s);
}

template <typename R>
RTensor<R> unit_backward(const ConvUnit<R>& u, const UnitCache<R>& cache, const RTensor<R>& gout, bool linear,
                         ConvUnit<R>& grad) {
  if (u.kind == ConvKind::conv3d) return conv_backward(u.a, cache.input, gout, grad.a);
  RTensor<R> act = cache.mid;
  if (!linear) relu_inplace(act);
  RTensor<R> gmid = conv_backward(u.b, act, gout, grad.b);
  if (!linear) relu_backward_inplace(gmid, cache.mid);
  return conv_backward(u.a, cache.input, gmid, grad.a);
}

// Residual block: conv1 (no pre-activation), then ReLU→conv for the rest.
template <typename R>
struct CnnBlock {
  std::vector<ConvUnit<R>> units;

  Index param_count() const {
    Index n = 0;
    for (const auto& u : units) n += u.param_count();
    return n;
  }
};

template <typename R>
CnnBlock<R> make_block(ConvKind kind, Index io_channels, Index features, Index layers) {
  if (layers < 2) throw std::invalid_argument("a block needs at least 2 conv layers");
  CnnBlock<R> b;
  for (Index l = 0; l < layers; ++l) {
    const Index fin = l == 0 ? io_channels : features;
    const Index fout = l == layers - 1 ? io_channels : features;
    b.units.push_back(make_unit<R>(kind, fin, fout));
  }
  return b;
}

template <typename R>
struct BlockCache {
  std::vector<UnitCache<R>> units;
  std::vector<RTensor<R>> pre;  // output of unit l before the next ReLU
};

template <typename R>
RTensor<R> block_forward(const CnnBlock<R>& blk, const RTensor<R>& x, bool linear, BlockCache<R>* cache) {
  if (cache) {
    cache->units.assign(blk.units.size(), {});
    cache->pre.assign(blk.units.size(), {});
  }
  RTensor<R> h = x;
  for (std::size_t l = 0; l < blk.units.size(); ++l) {
    if (l > 0 && !linear) relu_inplace(h);
    h = unit_forward(blk.units[l], h, linear, cache ? &cache->units[l] : nullptr);
    if (cache && l + 1 < blk.units.size()) cache->pre[l] = h;
  }
  h += x;
  return h;
}

template <typename R>
RTensor<R> block_backward(const CnnBlock<R>& blk, const BlockCache<R>& cache, const RTensor<R>& gout, bool linear,
                          CnnBlock<R>& grad) {
  RTensor<R> g = gout;
  for (std::size_t l = blk.units.size(); l-- > 0;) {
    g = unit_backward(blk.units[l], cache.units[l], g, linear, grad.units[l]);
    if (l > 0 && !linear) relu_backward_inplace(g, cache.pre[l - 1]);
  }
  g += gout;
  return g;
}

struct NetConfig {
  Index iterations = 4;  // K
  Index layers = 5;
  Index channels = 96;
  Index nsets = 2;
  ConvKind kind = ConvKind::conv3d;
};

template <typename R>
struct UnrolledModel {
  NetConfig cfg;
  std::vector<CnnBlock<R>> blocks;
  std::vector<R> steps;  // t_k
  bool linear = false;   // drop every ReLU (receptive-field probing)

  Index iterations() const { return static_cast<Index>(blocks.size()); }
};

template <typename R>
UnrolledModel<R> make_model(const NetConfig& cfg) {
  if (cfg.iterations < 0 || cfg.channels < 1 || cfg.nsets < 1)
    throw std::invalid_argument("invalid network configuration");
  UnrolledModel<R> m;
  m.cfg = cfg;
  for (Index k = 0; k < cfg.iterations; ++k) m.blocks.push_back(make_block<R>(cfg.kind, 2 * cfg.nsets, cfg.channels, cfg.layers));
  m.steps.assign(static_cast<std::size_t>(cfg.iterations), R(0.5));
  return m;
}

// Uniform(-b, b), b = sqrt(6 / fan_in) weights and zero biases; the last
// layer of every block starts at zero so the untrained model is pure DC.
// For (2+1)-D the last spatial half stays random or its temporal half would
// never receive gradient.
template <typename R>
void init_model(UnrolledModel<R>& m, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x494E4954));  // "INIT"
  auto fill = [&](ConvLayer<R>& l) {
    const double b = std::sqrt(6.0 / double(l.fan_in()));
    for (Index i = 0; i < l.weight.size(); ++i) l.weight[i] = static_cast<R>(rng.uniform(-b, b));
    l.bias.fill(R(0));
  };
  for (auto& blk : m.blocks)
    for (std::size_t l = 0; l < blk.units.size(); ++l) {
      auto& u = blk.units[l];
      fill(u.a);
      if (u.kind == ConvKind::conv2p1d) fill(u.b);
      if (l + 1 == blk.units.size()) {
        auto& last = u.kind == ConvKind::conv2p1d ? u.b : u.a;
        last.weight.fill(R(0));
      }
    }
  std::fill(m.steps.begin(), m.steps.end(), R(0.5));
}

template <typename R>
Index count_params(const UnrolledModel<R>& m) {
  Index n = static_cast<Index>(m.steps.size());
  for (const auto& b : m.blocks) n += b.param_count();
  return n;
}

// Parameter count from the architecture alone, without allocating.
inline Index count_params(const NetConfig& cfg) {
  Index per_block = 0;
  for (Index l = 0; l < cfg.layers; ++l) {
    const Index fin = l == 0 ? 2 * cfg.nsets : cfg.channels;
    const Index fout = l == cfg.layers - 1 ? 2 * cfg.nsets : cfg.channels;
    if (cfg.kind == ConvKind::conv3d) {
      per_block += 27 * fin * fout + fout;
    } else {
      const Index fs = compute_fs(3, 3, 3, fin, fout);
      per_block += 9 * fin * fs + fs + 3 * fs * fout + fout;
    }
  }
  return cfg.iterations * (per_block + 1);
}

// Upper bound on |conv3d - conv2p1d| parameter counts from the floor in F_s:
// per unit, one fewer F_s costs (dx·dy·fin + dt·fout + 1) parameters.
inline Index fs_rounding_slack(const NetConfig& cfg) {
  Index s = 0;
  for (Index l = 0; l < cfg.layers; ++l) {
    const Index fin = l == 0 ? 2 * cfg.nsets : cfg.channels;
    const Index fout = l == cfg.layers - 1 ? 2 * cfg.nsets : cfg.channels;
    s += 9 * fin + 3 * fout + 1;
  }
  return cfg.iterations * s;
}

template <typename R>
CTensor<R> dc_update(const CTensor<R>& x, const CTensor<R>& aty, const ForwardModel<R>& model, R t) {
  if (!(t > R(0))) throw std::invalid_argument("dc_update: step must be positive");
  require_shape(x.shape(), model.image_shape(), "dc_update image");
  CTensor<R> g = aty;
  g -= apply_normal(x, model);
  CTensor<R> out = x;
  axpy(R(2) * t, g, out);
  return out;
}

template <typename R>
CTensor<R> dc_update_from_data(const CTensor<R>& x, const CTensor<R>& y, const ForwardModel<R>& model, R t) {
  return dc_update(x, apply_A_adjoint(y, model), model, t);
}

template <typename R>
void check_model_data(const UnrolledModel<R>& m, const ForwardModel<R>& model) {
  if (m.cfg.nsets != model.nsets())
    throw std::invalid_argument("network expects " + std::to_string(m.cfg.nsets) + " map sets, data model has " +
                                std::to_string(model.nsets()));
}

template <typename R>
CTensor<R> forward(const UnrolledModel<R>& m, const CTensor<R>& y, const ForwardModel<R>& model) {
  check_model_data(m, model);
  const auto aty = apply_A_adjoint(y, model);
  CTensor<R> x = aty;
  for (Index k = 0; k < m.iterations(); ++k) {
    const auto v = dc_update(x, aty, model, m.steps[static_cast<std::size_t>(k)]);
    x = channels_to_complex(block_forward(m.blocks[static_cast<std::size_t>(k)], complex_to_channels(v), m.linear,
                                          static_cast<BlockCache<R>*>(nullptr)));
  }
  return x;
}

// Flat named view over every learnable tensor, in a fixed order shared by
// checkpoints, gradients and the optimizer.
template <typename T>
struct NamedParam {
  std::string name;
  T* data;
  Index size;
  Shape shape;
};

namespace detail {

template <typename Model>
auto collect_params(Model& m) {
  using T = std::remove_reference_t<decltype(*m.steps.data())>;
  std::vector<NamedParam<T>> out;
  auto add = [&](const std::string& n, auto& t) { out.push_back({n, t.data(), t.size(), t.shape()}); };
  for (std::size_t k = 0; k < m.blocks.size(); ++k)
    for (std::size_t l = 0; l < m.blocks[k].units.size(); ++l) {
      auto& u = m.blocks[k].units[l];
      const std::string p = "block" + std::to_string(k) + ".conv" + std::to_string(l);
      if (u.kind == ConvKind::conv3d) {
        add(p + ".weight", u.a.weight);
        add(p + ".bias", u.a.bias);
      } else {
        add(p + ".spatial.weight", u.a.weight);
        add(p + ".spatial.bias", u.a.bias);
        add(p + ".temporal.weight", u.b.weight);
        add(p + ".temporal.bias", u.b.bias);
      }
    }
  out.push_back({"steps", m.steps.data(), static_cast<Index>(m.steps.size()), {static_cast<Index>(m.steps.size())}});
  return out;
}

}  // namespace detail

template <typename R>
std::vector<NamedParam<R>> named_params(UnrolledModel<R>& m) {
  return detail::collect_params(m);
}

template <typename R>
std::vector<NamedParam<const R>> named_params(const UnrolledModel<R>& m) {
  return detail::collect_params(m);
}

// DLE1 checkpoint: "DLE1" | u32 version | u32 K | u32 layers | u32 channels |
// u32 M | u8 kind | u8 precision (4 or 8 bytes) | u32 count | records of
// (u32 name_len, name, u32 ndim, u64 dims[ndim], raw values).
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename R>
std::vector<std::uint8_t> encode_checkpoint(const UnrolledModel<R>& m) {
  std::vector<std::uint8_t> b = {'D', 'L', 'E', '1'};
  detail::put_u32(b, kCheckpointVersion);
  detail::put_u32(b, static_cast<std::uint32_t>(m.cfg.iterations));
  detail::put_u32(b, static_cast<std::uint32_t>(m.cfg.layers));
  detail::put_u32(b, static_cast<std::uint32_t>(m.cfg.channels));
  detail::put_u32(b, static_cast<std::uint32_t>(m.cfg.nsets));
  b.push_back(static_cast<std::uint8_t>(m.cfg.kind));
  b.push_back(static_cast<std::uint8_t>(sizeof(R)));
  const auto params = named_params(m);
  detail::put_u32(b, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    detail::put_u32(b, static_cast<std::uint32_t>(p.name.size()));
    b.insert(b.end(), p.name.begin(), p.name.end());
    detail::put_u32(b, static_cast<std::uint32_t>(p.shape.size()));
    for (Index d : p.shape) detail::put_u64(b, static_cast<std::uint64_t>(d));
    const std::size_t pos = b.size();
    b.resize(pos + static_cast<std::size_t>(p.size) * sizeof(R));
    detail::copy_le(b.data() + pos, reinterpret_cast<const std::uint8_t*>(p.data), static_cast<std::size_t>(p.size),
                    sizeof(R));
  }
  return b;
}

struct CheckpointHeader {
  std::uint32_t version = 0;
  NetConfig cfg;
  std::uint8_t precision = 4;
};

inline CheckpointHeader decode_checkpoint_header(const std::vector<std::uint8_t>& b) {
  if (b.size() < 26 || std::memcmp(b.data(), "DLE1", 4) != 0) throw FormatError("bad DLE1 magic");
  CheckpointHeader h;
  h.version = static_cast<std::uint32_t>(detail::get_le(b.data() + 4, 4));
  if (h.version != kCheckpointVersion) throw FormatError("unsupported DLE1 version " + std::to_string(h.version));
  h.cfg.iterations = static_cast<Index>(detail::get_le(b.data() + 8, 4));
  h.cfg.layers = static_cast<Index>(detail::get_le(b.data() + 12, 4));
  h.cfg.channels = static_cast<Index>(detail::get_le(b.data() + 16, 4));
  h.cfg.nsets = static_cast<Index>(detail::get_le(b.data() + 20, 4));
  if (b[24] > 1) throw FormatError("unknown conv kind code " + std::to_string(b[24]));
  h.cfg.kind = static_cast<ConvKind>(b[24]);
  h.precision = b[25];
  if (h.precision != 4 && h.precision != 8) throw FormatError("unknown precision width " + std::to_string(h.precision));
  return h;
}

template <typename R>
UnrolledModel<R> decode_checkpoint(const std::vector<std::uint8_t>& b) {
  const auto h = decode_checkpoint_header(b);
  auto m = make_model<R>(h.cfg);
  auto params = named_params(m);
  std::size_t pos = 26;
  auto need = [&](std::size_t n) {
    if (pos + n > b.size()) throw FormatError("truncated DLE1 checkpoint");
  };
  need(4);
  const auto count = detail::get_le(b.data() + pos, 4);
  pos += 4;
  if (count != params.size())
    throw FormatError("checkpoint holds " + std::to_string(count) + " tensors, architecture needs " +
                      std::to_string(params.size()));
  for (auto& p : params) {
    need(4);
    const auto len = static_cast<std::size_t>(detail::get_le(b.data() + pos, 4));
    pos += 4;
    need(len);
    const std::string name(reinterpret_cast<const char*>(b.data() + pos), len);
    pos += len;
    if (name != p.name) throw FormatError("expected tensor '" + p.name + "', found '" + name + "'");
    need(4);
    const auto nd = static_cast<std::size_t>(detail::get_le(b.data() + pos, 4));
    pos += 4;
    Shape dims;
    need(8 * nd);
    for (std::size_t i = 0; i < nd; ++i, pos += 8) dims.push_back(static_cast<Index>(detail::get_le(b.data() + pos, 8)));
    if (dims != p.shape) throw FormatError("tensor '" + name + "' has shape " + shape_str(dims) + ", expected " +
                                           shape_str(p.shape));
    const std::size_t n = static_cast<std::size_t>(p.size);
    need(n * h.precision);
    if (h.precision == sizeof(R)) {
      detail::copy_le(reinterpret_cast<std::uint8_t*>(p.data), b.data() + pos, n, sizeof(R));
    } else if (h.precision == 4) {
      std::vector<float> v(n);
      detail::copy_le(reinterpret_cast<std::uint8_t*>(v.data()), b.data() + pos, n, 4);
      for (std::size_t i = 0; i < n; ++i) p.data[i] = static_cast<R>(v[i]);
    } else {
      std::vector<double> v(n);
      detail::copy_le(reinterpret_cast<std::uint8_t*>(v.data()), b.data() + pos, n, 8);
      for (std::size_t i = 0; i < n; ++i) p.data[i] = static_cast<R>(v[i]);
    }
    pos += n * h.precision;
  }
  if (pos != b.size()) throw FormatError("trailing bytes after DLE1 records");
  return m;
}

template <typename R>
void save_checkpoint(const std::filesystem::path& path, const UnrolledModel<R>& m) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto bytes = encode_checkpoint(m);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

template <typename R>
UnrolledModel<R> load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint<R>(detail::read_file(path));
}

}  // namespace mrcine
