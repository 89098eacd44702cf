#pragma once

// Classical reconstructions on the ESPIRiT model: zero-filled, CG least
// squares, proximal gradient with transform-domain soft thresholding, and
// ADMM with spatial + temporal total variation.

#include <functional>
#include <optional>

#include "mrcine/signal_model.hpp"

namespace mrcine {

template <typename R>
CTensor<R> recon_zero_filled(const CTensor<R>& y, const ForwardModel<R>& model) {
  return apply_A_adjoint(y, model);
}

template <typename R>
struct CgResult {
  CTensor<R> x;
  std::vector<double> residuals;  // ‖b - N x‖ / ‖b‖ per iterate, starting at x0
  int iterations = 0;
};

// Conjugate gradients on a Hermitian positive semi-definite operator.
template <typename R, typename Normal>
CgResult<R> cg_solve(Normal&& normal, const CTensor<R>& b, CTensor<R> x, int iters, double tol) {
  if (iters < 0) throw std::invalid_argument("cg: iteration count must be non-negative");
  CgResult<R> res;
  const double bn = norm(b);
  if (bn == 0.0) {
    res.x = CTensor<R>(b.shape());
    res.residuals.push_back(0.0);
    return res;
  }
  CTensor<R> r = b;
  if (norm_sq(x) > 0.0) r -= normal(x);
  CTensor<R> p = r;
  double rr = norm_sq(r);
  res.residuals.push_back(std::sqrt(rr) / bn);
  for (int it = 0; it < iters && std::sqrt(rr) / bn > tol; ++it) {
    const CTensor<R> q = normal(p);
    const double pq = std::real(inner(p, q));
    if (!(pq > 0.0)) break;
    const double alpha = rr / pq;
    axpy(static_cast<R>(alpha), p, x);
    axpy(static_cast<R>(-alpha), q, r);
    const double rr_new = norm_sq(r);
    const double beta = rr_new / rr;
    rr = rr_new;
    for (Index i = 0; i < p.size(); ++i) p[i] = r[i] + static_cast<R>(beta) * p[i];
    res.residuals.push_back(std::sqrt(rr) / bn);
    ++res.iterations;
  }
  res.x = std::move(x);
  return res;
}

template <typename R>
CgResult<R> recon_cg(const CTensor<R>& y, const ForwardModel<R>& model, int iters = 30, double tol = 1e-6) {
  const auto b = apply_A_adjoint(y, model);
  return cg_solve<R>([&](const CTensor<R>& v) { return apply_normal(v, model); }, b, CTensor<R>(b.shape()), iters,
                     tol);
}

// Sparsifying transform for the PGD prox. Only unitary transforms are
// accepted because the prox is applied as Ψᴴ∘soft∘Ψ.
template <typename R>
struct SparseTransform {
  std::string name;
  std::function<CTensor<R>(const CTensor<R>&)> forward;
  std::function<CTensor<R>(const CTensor<R>&)> adjoint;
  bool unitary = true;
};

template <typename R>
SparseTransform<R> temporal_dft() {
  return {"temporal-dft", [](const CTensor<R>& x) { return fftc(x, {3}, FftDirection::forward); },
          [](const CTensor<R>& x) { return fftc(x, {3}, FftDirection::inverse); }, true};
}

template <typename R>
SparseTransform<R> identity_transform() {
  return {"identity", [](const CTensor<R>& x) { return x; }, [](const CTensor<R>& x) { return x; }, true};
}

template <typename R>
struct PgdResult {
  CTensor<R> x;
  std::vector<double> objective;  // value at x0 and after every iteration
};

template <typename R>
double pgd_objective(const CTensor<R>& y, const CTensor<R>& x, const ForwardModel<R>& model,
                     const SparseTransform<R>& psi, double lambda) {
  CTensor<R> r = y;
  r -= apply_A(x, model);
  detail::apply_mask_inplace(r, model.mask);
  double obj = norm_sq(r);
  if (lambda > 0.0) {
    const auto w = psi.forward(x);
    double l1 = 0.0;
    for (Index i = 0; i < w.size(); ++i) l1 += std::abs(w[i]);
    obj += lambda * l1;
  }
  return obj;
}

// x ← Ψᴴ soft(Ψ(x + 2t Aᴴ(y − Ax)), tλ); objective ‖y − Ax‖² + λ‖Ψx‖₁.
template <typename R>
PgdResult<R> recon_pgd(const CTensor<R>& y, const ForwardModel<R>& model, double lambda, double step, int iters,
                       const SparseTransform<R>& psi = temporal_dft<R>(), bool track_objective = true) {
  if (!(step > 0.0 && step <= 1.0)) throw std::invalid_argument("pgd: step must lie in (0, 1]");
  if (!(lambda >= 0.0)) throw std::invalid_argument("pgd: lambda must be non-negative");
  if (!psi.unitary) throw std::invalid_argument("pgd: transform '" + psi.name + "' is not unitary");
  if (iters < 1) throw std::invalid_argument("pgd: iters must be >= 1");
  const auto aty = apply_A_adjoint(y, model);
  PgdResult<R> res;
  res.x = CTensor<R>(aty.shape());
  if (track_objective) res.objective.push_back(pgd_objective(y, res.x, model, psi, lambda));
  const R two_t = static_cast<R>(2.0 * step);
  for (int it = 0; it < iters; ++it) {
    // Aᴴ(y − Ax) = Aᴴy − AᴴAx
    CTensor<R> g = aty;
    g -= apply_normal(res.x, model);
    axpy(two_t, g, res.x);
    if (lambda > 0.0) res.x = psi.adjoint(soft_threshold(psi.forward(res.x), step * lambda));
    if (track_objective) res.objective.push_back(pgd_objective(y, res.x, model, psi, lambda));
  }
  return res;
}

struct AdmmOptions {
  double lambda_spatial = 0.002;
  double lambda_temporal = 0.01;
  int iters = 200;
  double rho = 0.1;
  int cg_iters = 10;
  double cg_tol = 1e-5;
};

template <typename R>
struct AdmmResult {
  CTensor<R> x;
  std::vector<double> primal_residual;  // ‖Dx − z‖ / max(‖x‖, tiny) per iteration
};

// scaled-form ADMM, one split per active difference axis
template <typename R>
AdmmResult<R> recon_l1_espirit(const CTensor<R>& y, const ForwardModel<R>& model, const AdmmOptions& opt = {}) {
  if (!(opt.lambda_spatial >= 0.0 && opt.lambda_temporal >= 0.0))
    throw std::invalid_argument("l1-espirit: lambdas must be non-negative");
  if (!(opt.rho > 0.0)) throw std::invalid_argument("l1-espirit: rho must be positive");
  if (opt.iters < 1) throw std::invalid_argument("l1-espirit: iters must be >= 1");
  struct Split {
    TvAxis axis;
    double lambda;
    CTensor<R> z, u;
  };
  std::vector<Split> splits;
  if (opt.lambda_spatial > 0.0) {
    splits.push_back({TvAxis::spatial_x, opt.lambda_spatial, {}, {}});
    splits.push_back({TvAxis::spatial_y, opt.lambda_spatial, {}, {}});
  }
  if (opt.lambda_temporal > 0.0) splits.push_back({TvAxis::temporal, opt.lambda_temporal, {}, {}});

  const auto aty = apply_A_adjoint(y, model);
  const R rho = static_cast<R>(opt.rho);
  for (auto& s : splits) {
    s.z = CTensor<R>(aty.shape());
    s.u = CTensor<R>(aty.shape());
  }
  auto normal = [&](const CTensor<R>& v) {
    CTensor<R> out = apply_normal(v, model);
    for (const auto& s : splits)
      axpy(rho, tv_diff(tv_diff(v, s.axis, TvDirection::forward), s.axis, TvDirection::adjoint), out);
    return out;
  };

  AdmmResult<R> res;
  res.x = CTensor<R>(aty.shape());
  for (int it = 0; it < opt.iters; ++it) {
    CTensor<R> b = aty;
    for (const auto& s : splits) {
      CTensor<R> d = s.z;
      d -= s.u;
      axpy(rho, tv_diff(d, s.axis, TvDirection::adjoint), b);
    }
    res.x = cg_solve<R>(normal, b, std::move(res.x), opt.cg_iters, opt.cg_tol).x;
    double pr = 0.0;
    for (auto& s : splits) {
      CTensor<R> dx = tv_diff(res.x, s.axis, TvDirection::forward);
      CTensor<R> v = dx;
      v += s.u;
      s.z = soft_threshold(v, s.lambda / opt.rho);
      dx -= s.z;
      s.u += dx;
      pr += norm_sq(dx);
    }
    res.primal_residual.push_back(std::sqrt(pr) / std::max(norm(res.x), 1e-30));
  }
  return res;
}

}  // namespace mrcine
