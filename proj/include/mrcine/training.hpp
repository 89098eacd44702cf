#pragma once

// Reverse-mode gradients for the unrolled network, the complex l1 loss,
// Adam with a warm restart, an on-the-fly phantom example stream and the
// training loop.

#include <cstdio>
#include <limits>
#include <utility>

#include "mrcine/calibration.hpp"
#include "mrcine/network.hpp"
#include "mrcine/phantom.hpp"
#include "mrcine/sampling.hpp"

namespace mrcine {

enum class LossKind { modulus, channel };

// Σ|x̂ − x| with |·| the complex modulus (or Σ|Δre| + |Δim| for `channel`).
template <typename R>
double l1_loss(const CTensor<R>& out, const CTensor<R>& gt, LossKind kind = LossKind::modulus) {
  out.require_same_shape(gt, "l1_loss");
  double acc = 0.0;
  for (Index i = 0; i < out.size(); ++i) {
    const std::complex<double> d = std::complex<double>(out[i]) - std::complex<double>(gt[i]);
    acc += kind == LossKind::modulus ? std::abs(d) : std::abs(d.real()) + std::abs(d.imag());
  }
  return acc;
}

// ∂L/∂Re + i ∂L/∂Im, with subgradient 0 where the difference vanishes.
template <typename R>
CTensor<R> l1_loss_grad(const CTensor<R>& out, const CTensor<R>& gt, LossKind kind = LossKind::modulus) {
  out.require_same_shape(gt, "l1_loss_grad");
  CTensor<R> g(out.shape());
  auto sgn = [](R v) { return v > R(0) ? R(1) : (v < R(0) ? R(-1) : R(0)); };
  for (Index i = 0; i < out.size(); ++i) {
    const std::complex<R> d = out[i] - gt[i];
    if (kind == LossKind::modulus) {
      const R a = std::abs(d);
      g[i] = a > R(0) ? d / a : std::complex<R>{};
    } else {
      g[i] = {sgn(d.real()), sgn(d.imag())};
    }
  }
  return g;
}

template <typename R>
struct ForwardTape {
  CTensor<R> aty;
  std::vector<CTensor<R>> x_in;  // iterate entering round k
  std::vector<BlockCache<R>> blocks;
  CTensor<R> output;
};

template <typename R>
ForwardTape<R> forward_taped(const UnrolledModel<R>& m, const CTensor<R>& y, const ForwardModel<R>& model) {
  check_model_data(m, model);
  ForwardTape<R> tape;
  tape.aty = apply_A_adjoint(y, model);
  const auto k_total = static_cast<std::size_t>(m.iterations());
  tape.x_in.resize(k_total);
  tape.blocks.resize(k_total);
  CTensor<R> x = tape.aty;
  for (std::size_t k = 0; k < k_total; ++k) {
    tape.x_in[k] = x;
    const auto v = dc_update(x, tape.aty, model, m.steps[k]);
    x = channels_to_complex(block_forward(m.blocks[k], complex_to_channels(v), m.linear, &tape.blocks[k]));
  }
  tape.output = std::move(x);
  return tape;
}

template <typename R>
UnrolledModel<R> zeros_like(const UnrolledModel<R>& m) {
  auto g = make_model<R>(m.cfg);
  std::fill(g.steps.begin(), g.steps.end(), R(0));
  g.linear = m.linear;
  return g;
}

// Gradients of a scalar loss with respect to every weight, bias and t_k,
// given ∂L/∂output. DC rounds use v = (I − 2tAᴴA)x + 2tAᴴy.
template <typename R>
UnrolledModel<R> backward(const UnrolledModel<R>& m, const ForwardTape<R>& tape, const CTensor<R>& gout,
                          const ForwardModel<R>& model) {
  auto grad = zeros_like(m);
  CTensor<R> g = gout;
  for (std::size_t k = m.blocks.size(); k-- > 0;) {
    const auto gv = channels_to_complex(
        block_backward(m.blocks[k], tape.blocks[k], complex_to_channels(g), m.linear, grad.blocks[k]));
    CTensor<R> r = tape.aty;
    r -= apply_normal(tape.x_in[k], model);
    grad.steps[k] += static_cast<R>(2.0 * std::real(inner(gv, r)));
    g = gv;
    axpy(R(-2) * m.steps[k], apply_normal(gv, model), g);
  }
  return grad;
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename R>
struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::int64_t t = 0;

  void reset() {
    m.clear();
    v.clear();
    t = 0;
  }
};

// One bias-corrected Adam update over aligned parameter / gradient lists.
template <typename R>
void adam_step(std::vector<NamedParam<R>>& params, const std::vector<NamedParam<const R>>& grads,
               AdamState<R>& st, double lr, const AdamConfig& cfg = {}) {
  if (params.size() != grads.size()) throw std::invalid_argument("adam: parameter / gradient count mismatch");
  if (st.m.empty()) {
    for (const auto& p : params) {
      st.m.emplace_back(static_cast<std::size_t>(p.size), 0.0);
      st.v.emplace_back(static_cast<std::size_t>(p.size), 0.0);
    }
  }
  ++st.t;
  const double c1 = 1.0 - std::pow(cfg.beta1, double(st.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, double(st.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].size != grads[i].size) throw std::invalid_argument("adam: size mismatch for " + params[i].name);
    auto& m = st.m[i];
    auto& v = st.v[i];
    for (Index j = 0; j < params[i].size; ++j) {
      const double g = grads[i].data[j];
      auto& mj = m[static_cast<std::size_t>(j)];
      auto& vj = v[static_cast<std::size_t>(j)];
      mj = cfg.beta1 * mj + (1.0 - cfg.beta1) * g;
      vj = cfg.beta2 * vj + (1.0 - cfg.beta2) * g * g;
      const double mh = mj / c1, vh = vj / c2;
      params[i].data[j] = static_cast<R>(double(params[i].data[j]) - lr * mh / (std::sqrt(vh) + cfg.eps));
    }
  }
}

// Phantom-backed training stream. A fixed pool of base phantoms (with
// ESPIRiT maps from fully-sampled data) is augmented and freshly masked at
// every step; the draw for step s depends only on (seed, s).
struct DataConfig {
  Index nx = 64, ny = 64, nframes = 12, ncoils = 8;
  Index pool = 16;
  double accel_min = 10.0, accel_max = 15.0;
  double fov_reduction_max = 0.15;
  double partial_echo_min = 0.0, partial_echo_max = 0.0;
  Index nsets = 2;
  Index calib_width = 24;
  EspiritOptions espirit{};
  AugmentConfig augment{};
  double motion_min = 0.1, motion_max = 0.3;
};

inline KTMask full_mask(Index nx, Index ny, Index nframes) {
  KTMask m;
  m.pattern = Tensor<std::uint8_t>({nx, ny, nframes}, std::uint8_t{1});
  m.accel = 1.0;
  m.density_exponent = 0.0;
  return m;
}

template <typename R>
TrainExample<R> make_base_example(const DataConfig& dc, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x42415345));  // "BASE"
  PhantomConfig pc;
  pc.nx = dc.nx;
  pc.ny = dc.ny;
  pc.nframes = dc.nframes;
  pc.ncoils = dc.ncoils;
  pc.seed = seed;
  pc.motion_amplitude = rng.uniform(dc.motion_min, dc.motion_max);
  const double fov = dc.fov_reduction_max > 0.0 ? rng.uniform(0.0, dc.fov_reduction_max) : 0.0;
  pc.wrap_fraction = fov;
  const auto gt = generate_phantom<R>(pc);
  TrainExample<R> ex;
  ex.y_full = fov > 0.0 ? reduce_fov(gt.kspace, fov) : gt.kspace;
  const auto fm = full_mask(ex.y_full.nx(), ex.y_full.ny(), ex.y_full.nframes());
  auto opt = dc.espirit;
  opt.nsets = dc.nsets;
  ex.maps = estimate_espirit_maps(extract_calib(ex.y_full, fm, dc.calib_width), ex.y_full.nx(), ex.y_full.ny(), opt);
  ex.x_gt.values = apply_E_adjoint(fftc(ex.y_full.values, {0, 1}, FftDirection::inverse), ex.maps.maps);
  return ex;
}

template <typename R>
KTMask draw_training_mask(const DataConfig& dc, Index nx, Index ny, Index nframes, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x4D41534B));  // "MASK"
  const double accel = dc.accel_min == dc.accel_max ? dc.accel_min : rng.uniform(dc.accel_min, dc.accel_max);
  VdMaskOptions vo;
  vo.calib_width = dc.calib_width;
  auto mask = make_vd_mask(nx, ny, nframes, accel, rng.bits(), vo);
  if (dc.partial_echo_max > 0.0) mask = apply_partial_echo(mask, rng.uniform(dc.partial_echo_min, dc.partial_echo_max));
  return mask;
}

template <typename R>
class ExampleStream {
 public:
  ExampleStream(DataConfig dc, std::uint64_t seed) : dc_(std::move(dc)), seed_(seed) {
    for (Index i = 0; i < dc_.pool; ++i) pool_.push_back(make_base_example<R>(dc_, derive_seed(seed_, 0x504F4F4C + i)));
  }

  TrainExample<R> sample(std::int64_t step) const {
    Rng rng(derive_seed(seed_, 0x53544550ULL + static_cast<std::uint64_t>(step) * 2654435761ULL));
    const auto& base = pool_[static_cast<std::size_t>(rng.integer(0, dc_.pool - 1))];
    TrainExample<R> ex = base;
    const Index nx = dc_.augment.readout_crop > 0 ? dc_.augment.readout_crop : base.y_full.nx();
    ex.mask = draw_training_mask<R>(dc_, nx, base.y_full.ny(), base.y_full.nframes(), rng.bits());
    return augment(ex, rng.bits(), dc_.augment);
  }

  // Held-out examples: their own phantom seeds, no geometric augmentation.
  std::vector<TrainExample<R>> validation_set(Index count) const {
    std::vector<TrainExample<R>> out;
    AugmentConfig plain = dc_.augment;
    plain.flips = false;
    plain.max_pe_shift = 0;
    plain.max_frame_shift = 0;
    for (Index i = 0; i < count; ++i) {
      const auto s = derive_seed(seed_, 0x56414C00 + i);  // "VAL"
      auto ex = make_base_example<R>(dc_, s);
      const Index nx = plain.readout_crop > 0 ? plain.readout_crop : ex.y_full.nx();
      ex.mask = draw_training_mask<R>(dc_, nx, ex.y_full.ny(), ex.y_full.nframes(), s);
      out.push_back(augment(ex, s, plain));
    }
    return out;
  }

  const DataConfig& config() const { return dc_; }

 private:
  DataConfig dc_;
  std::uint64_t seed_;
  std::vector<TrainExample<R>> pool_;
};

template <typename R>
struct PreparedExample {
  CTensor<R> y;
  ForwardModel<R> model;
  CTensor<R> x_gt;
};

template <typename R>
PreparedExample<R> prepare(const TrainExample<R>& ex) {
  return {undersample(ex.y_full, ex.mask).values, ForwardModel<R>(ex.maps, ex.mask), ex.x_gt.values};
}

template <typename R>
double evaluate_loss(const UnrolledModel<R>& m, const std::vector<PreparedExample<R>>& set,
                     LossKind kind = LossKind::modulus) {
  if (set.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& e : set) acc += l1_loss(forward(m, e.y, e.model), e.x_gt, kind);
  return acc / double(set.size());
}

struct TrainConfig {
  std::int64_t steps = 2000;
  double lr = 1e-3;
  std::int64_t restart_at = -1;  // < 0: steps / 2
  AdamConfig adam{};
  std::uint64_t seed = 0;
  std::int64_t val_every = 50;
  Index val_count = 4;
  LossKind loss = LossKind::modulus;
  double grad_clip = 0.0;  // global-norm clip, 0 disables
  std::int64_t checkpoint_every = 0;
  std::string checkpoint_dir;
  bool verbose = false;

  std::int64_t restart_step() const { return restart_at < 0 ? steps / 2 : restart_at; }
  void validate() const {
    if (steps < 1) throw std::invalid_argument("train: steps must be >= 1");
    if (!(lr >= 0.0)) throw std::invalid_argument("train: lr must be non-negative");
    if (restart_step() >= steps && restart_at >= 0) throw std::invalid_argument("train: restart_at must be < steps");
    if (val_every < 1) throw std::invalid_argument("train: val_every must be >= 1");
  }
};

struct HistoryRow {
  std::int64_t step = 0;
  double train_loss = std::numeric_limits<double>::quiet_NaN();
  double val_loss = std::numeric_limits<double>::quiet_NaN();
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kStepMin = 1e-4;
inline constexpr double kStepMax = 1.0;

template <typename R>
double grad_norm(const UnrolledModel<R>& g) {
  double acc = 0.0;
  for (const auto& p : named_params(g))
    for (Index i = 0; i < p.size; ++i) acc += double(p.data[i]) * double(p.data[i]);
  return std::sqrt(acc);
}

// One loss + gradient evaluation on a prepared example.
template <typename R>
std::pair<double, UnrolledModel<R>> loss_and_grad(const UnrolledModel<R>& m, const PreparedExample<R>& e,
                                                  LossKind kind = LossKind::modulus) {
  const auto tape = forward_taped(m, e.y, e.model);
  const double loss = l1_loss(tape.output, e.x_gt, kind);
  return {loss, backward(m, tape, l1_loss_grad(tape.output, e.x_gt, kind), e.model)};
}

template <typename R>
std::vector<HistoryRow> train(UnrolledModel<R>& m, const ExampleStream<R>& stream, const TrainConfig& cfg) {
  cfg.validate();
  std::vector<PreparedExample<R>> val;
  for (const auto& ex : stream.validation_set(cfg.val_count)) val.push_back(prepare(ex));
  std::vector<HistoryRow> hist;
  AdamState<R> st;
  double lr = cfg.lr;
  const auto restart = cfg.restart_step();
  for (std::int64_t s = 0; s <= cfg.steps; ++s) {
    HistoryRow row;
    row.step = s;
    if (s % cfg.val_every == 0 || s == cfg.steps) row.val_loss = evaluate_loss(m, val, cfg.loss);
    if (s == cfg.steps) {
      hist.push_back(row);
      break;
    }
    if (s == restart && s > 0) {
      st.reset();
      lr = cfg.lr / 10.0;
    }
    const auto e = prepare(stream.sample(s));
    auto [loss, grad] = loss_and_grad(m, e, cfg.loss);
    if (!std::isfinite(loss)) throw TrainingError("non-finite training loss at step " + std::to_string(s));
    if (cfg.grad_clip > 0.0) {
      const double gn = grad_norm(grad);
      if (gn > cfg.grad_clip)
        for (auto& p : named_params(grad))
          for (Index i = 0; i < p.size; ++i) p.data[i] *= static_cast<R>(cfg.grad_clip / gn);
    }
    auto params = named_params(m);
    adam_step(params, named_params(std::as_const(grad)), st, lr, cfg.adam);
    for (auto& t : m.steps) t = static_cast<R>(std::clamp(double(t), kStepMin, kStepMax));
    row.train_loss = loss;
    hist.push_back(row);
    if (cfg.verbose && (s % cfg.val_every == 0))
      std::fprintf(stderr, "step %lld  train %.6g  val %.6g\n", static_cast<long long>(s), row.train_loss,
                   row.val_loss);
    if (cfg.checkpoint_every > 0 && !cfg.checkpoint_dir.empty() && (s + 1) % cfg.checkpoint_every == 0)
      save_checkpoint(std::filesystem::path(cfg.checkpoint_dir) / ("step_" + std::to_string(s + 1) + ".dle"), m);
  }
  return hist;
}

inline std::string history_csv(const std::vector<HistoryRow>& h) {
  std::string out = "step,train_loss,val_loss\n";
  char buf[96];
  auto fmt = [&](double v) -> std::string {
    if (std::isnan(v)) return "";
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
  };
  for (const auto& r : h) out += std::to_string(r.step) + "," + fmt(r.train_loss) + "," + fmt(r.val_loss) + "\n";
  return out;
}

}  // namespace mrcine
