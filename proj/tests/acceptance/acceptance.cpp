// One PASS/FAIL line per acceptance criterion. Soft criteria are reported
// but do not change the exit code.

#include <sys/wait.h>

#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "mrcine/mrcine.hpp"

using namespace mrcine;
namespace fs = std::filesystem;

namespace {

int hard_failures = 0;

using Clock = std::chrono::steady_clock;
double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void report(int id, bool pass, const std::string& detail, bool soft = false) {
  std::printf("%s criterion %d%s: %s\n", pass ? "PASS" : "FAIL", id, soft ? " (soft)" : "", detail.c_str());
  std::fflush(stdout);
  if (!pass && !soft) ++hard_failures;
}

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

template <typename R>
CTensor<R> rand_c(const Shape& s, Rng& rng) {
  CTensor<R> t(s);
  for (Index i = 0; i < t.size(); ++i) t[i] = {R(rng.normal()), R(rng.normal())};
  return t;
}

double dot_error(std::complex<double> lhs, std::complex<double> rhs) {
  return std::abs(lhs - rhs) / std::max(std::abs(lhs), 1e-300);
}

// 1. adjoint identities on random instances
void criterion1() {
  const auto t0 = Clock::now();
  Rng rng(2024);
  double worst[4] = {0, 0, 0, 0};
  for (int n = 0; n < 100; ++n) {
    const Index nx = rng.integer(8, 24), ny = rng.integer(8, 24), nc = rng.integer(1, 8), m = rng.integer(1, 2),
                nt = rng.integer(1, 6);
    const auto x = rand_c<double>({nx, ny, m, nt}, rng);
    // F on (x, y, coil, frame)
    const auto c = rand_c<double>({nx, ny, nc, nt}, rng), d = rand_c<double>({nx, ny, nc, nt}, rng);
    worst[0] = std::max(worst[0], dot_error(inner(fftc(c, {0, 1}, FftDirection::forward), d),
                                            inner(c, fftc(d, {0, 1}, FftDirection::inverse))));
    const auto maps = rand_c<double>({nx, ny, nc, m}, rng);
    worst[1] = std::max(worst[1], dot_error(inner(apply_E(x, maps), d), inner(x, apply_E_adjoint(d, maps))));
    Tensor<std::uint8_t> mask({nx, ny, nt});
    for (Index i = 0; i < mask.size(); ++i) mask[i] = rng.coin(0.4) ? 1 : 0;
    const ForwardModel<double> fm(maps, mask);
    worst[2] = std::max(worst[2], dot_error(inner(apply_A(x, fm), d), inner(x, apply_A_adjoint(d, fm))));
    for (auto ax : {TvAxis::spatial_x, TvAxis::spatial_y, TvAxis::temporal}) {
      const auto z = rand_c<double>(x.shape(), rng);
      worst[3] = std::max(worst[3], dot_error(inner(tv_diff(x, ax, TvDirection::forward), z),
                                              inner(x, tv_diff(z, ax, TvDirection::adjoint))));
    }
  }
  const double t = since(t0);
  const double w = std::max({worst[0], worst[1], worst[2], worst[3]});
  report(1, w < 1e-5 && t < 10.0,
         fmt("max relative dot-test error F %.2e E %.2e PFE %.2e TV %.2e over 100 instances (< 1e-5), %.2f s (< 10 s)",
             worst[0], worst[1], worst[2], worst[3], t));
}

// 2. F_s expansion and parameter parity
void criterion2() {
  const Index fs = compute_fs(3, 3, 3, 96, 96);
  bool ok = fs == 216;
  std::string detail = fmt("compute_fs(3,3,3,96,96) = %ld (216)", static_cast<long>(fs));
  for (auto [k, ch] : std::vector<std::pair<Index, Index>>{{3, 16}, {4, 96}, {10, 96}, {10, 200}}) {
    NetConfig a{k, 5, ch, 2, ConvKind::conv3d}, b = a;
    b.kind = ConvKind::conv2p1d;
    const Index n3 = count_params(make_model<float>(a)), n2 = count_params(make_model<float>(b));
    const Index slack = fs_rounding_slack(a);
    ok = ok && std::abs(n3 - n2) <= slack;
    detail += fmt("; K=%ld F=%ld conv3d %ld conv2p1d %ld |diff| %ld <= slack %ld", static_cast<long>(k),
                  static_cast<long>(ch), static_cast<long>(n3), static_cast<long>(n2), static_cast<long>(std::abs(n3 - n2)),
                  static_cast<long>(slack));
  }
  report(2, ok, detail);
}

// 3. impulse support of a linearized block
void criterion3() {
  bool ok = true;
  std::string detail;
  for (auto kind : {ConvKind::conv3d, ConvKind::conv2p1d}) {
    auto blk = make_block<double>(kind, 4, 8, 5);
    Rng rng(17);
    for (auto& u : blk.units) {
      for (Index i = 0; i < u.a.weight.size(); ++i) u.a.weight[i] = rng.uniform(0.1, 1.0);
      if (kind == ConvKind::conv2p1d)
        for (Index i = 0; i < u.b.weight.size(); ++i) u.b.weight[i] = rng.uniform(0.1, 1.0);
    }
    const Index n = 25, c = 12;
    RTensor<double> x({n, n, n, 4});
    x(c, c, c, 0) = 1.0;
    auto y = block_forward(blk, x, true, static_cast<BlockCache<double>*>(nullptr));
    y -= x;  // residual path
    Index lo[3] = {n, n, n}, hi[3] = {-1, -1, -1};
    for (Index a = 0; a < n; ++a)
      for (Index b = 0; b < n; ++b)
        for (Index t = 0; t < n; ++t) {
          double s = 0;
          for (Index f = 0; f < 4; ++f) s += std::abs(y(a, b, t, f));
          if (s > 0) {
            const Index p[3] = {a, b, t};
            for (int d = 0; d < 3; ++d) lo[d] = std::min(lo[d], p[d]), hi[d] = std::max(hi[d], p[d]);
          }
        }
    const Index e[3] = {hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1};
    ok = ok && e[0] == 11 && e[1] == 11 && e[2] == 11;
    detail += fmt("%s%s %ldx%ldx%ld", detail.empty() ? "" : "; ", to_string(kind).c_str(), static_cast<long>(e[0]),
                  static_cast<long>(e[1]), static_cast<long>(e[2]));
  }
  report(3, ok, detail + " (11x11x11)");
}

// 4. finite-difference gradient gate; returns whether training may proceed
bool criterion4() {
  const auto t0 = Clock::now();
  std::string detail;
  bool ok = true;
  for (auto kind : {ConvKind::conv3d, ConvKind::conv2p1d}) {
    PhantomConfig pc;
    pc.nx = pc.ny = 16;
    pc.nframes = 4;
    pc.ncoils = 2;
    pc.seed = 7;
    const auto gt = generate_phantom<double>(pc);
    Rng rng(3);
    CTensor<double> maps({16, 16, 2, 2});
    for (Index i = 0; i < maps.size(); ++i) maps[i] = {0.5 * rng.normal(), 0.5 * rng.normal()};
    const auto mask = make_vd_mask(16, 16, 4, 2.0, 9, VdMaskOptions{2, 8, 3.0});
    const ForwardModel<double> fm(maps, mask.pattern);
    PreparedExample<double> e{undersample(gt.kspace, mask).values, fm, CTensor<double>(fm.image_shape())};
    for (Index i = 0; i < e.x_gt.size(); ++i) e.x_gt[i] = {rng.normal(), rng.normal()};
    e.y *= 1.0 / max_abs(apply_A_adjoint(e.y, fm));
    auto m = make_model<double>({2, 5, 8, 2, kind});
    init_model(m, 11);
    for (auto& p : named_params(m))
      if (p.name != "steps")
        for (Index i = 0; i < p.size; ++i) p.data[i] = rng.uniform(-0.3, 0.3);
    m.steps = {0.4, 0.6};
    const auto [loss, grad] = loss_and_grad(m, e);
    const auto gp = named_params(std::as_const(grad));
    auto mp = named_params(m);
    double num = 0, den = 0;
    Index count = 0;
    const double h = 1e-6;
    for (std::size_t q = 0; q < mp.size(); ++q)
      for (Index i = 0; i < mp[q].size; ++i, ++count) {
        const double keep = mp[q].data[i];
        mp[q].data[i] = keep + h;
        const double lp = l1_loss(forward(m, e.y, fm), e.x_gt);
        mp[q].data[i] = keep - h;
        const double lm = l1_loss(forward(m, e.y, fm), e.x_gt);
        mp[q].data[i] = keep;
        const double fd = (lp - lm) / (2 * h);
        num += (fd - gp[q].data[i]) * (fd - gp[q].data[i]);
        den += gp[q].data[i] * gp[q].data[i];
      }
    const double rel = std::sqrt(num / den);
    ok = ok && rel < 1e-3;
    detail += fmt("%s%s %ld params rel err %.2e", detail.empty() ? "" : "; ", to_string(kind).c_str(),
                  static_cast<long>(count), rel);
  }
  const double t = since(t0);
  ok = ok && t < 300.0;
  report(4, ok, detail + fmt(" (< 1e-3), %.1f s (< 300 s)", t));
  return ok;
}

// 5. λ = 0 agreement of PGD and ADMM with CG
void criterion5() {
  const auto t0 = Clock::now();
  PhantomConfig pc;
  pc.nframes = 8;
  pc.seed = 3;
  const auto gt = generate_phantom<double>(pc);
  const auto mask = make_interleaved_mask(64, 64, 8, 4);
  const auto y = undersample(gt.kspace, mask);
  EspiritOptions o;
  o.nsets = 1;
  const auto maps = estimate_espirit_maps(extract_calib(y, mask, 24), 64, 64, o);
  const ForwardModel<double> fm(maps, mask);
  const auto cg = recon_cg(y.values, fm, 500, 1e-12);
  const auto pgd = recon_pgd(y.values, fm, 0.0, 0.5, 800);
  AdmmOptions ao;
  ao.lambda_spatial = ao.lambda_temporal = 0.0;
  ao.iters = 30;
  const auto admm = recon_l1_espirit(y.values, fm, ao);
  auto rel = [&](const CTensor<double>& x) {
    CTensor<double> d = x;
    d -= cg.x;
    return norm(d) / norm(cg.x);
  };
  bool mono = true;
  for (std::size_t i = 1; i < pgd.objective.size(); ++i)
    mono = mono && pgd.objective[i] <= pgd.objective[i - 1] * (1 + 1e-12);
  const double rp = rel(pgd.x), ra = rel(admm.x), t = since(t0);
  report(5, rp < 1e-3 && ra < 1e-3 && mono && t < 60.0,
         fmt("R=4 phantom: PGD vs CG %.2e, ADMM vs CG %.2e (< 1e-3), PGD objective %s, %.1f s (< 60 s)", rp, ra,
             mono ? "monotone" : "NOT monotone", t));
}

// 6. mask line budgets and partial echo
void criterion6() {
  const auto t0 = Clock::now();
  bool ok = true;
  Index bad = 0;
  for (double r : {10.0, 12.0, 15.0})
    for (std::uint64_t s = 0; s < 1000; ++s) {
      const auto m = make_vd_mask(64, 64, 16, r, s);
      const Index want = sampled_lines(m, 0);
      for (Index t = 1; t < 16; ++t) bad += sampled_lines(m, t) != want;
      bad += want != lines_per_frame(64, r);
    }
  ok = bad == 0;
  std::string pe;
  for (double frac : {0.2, 0.25, 0.3}) {
    const auto m = apply_partial_echo(make_vd_mask(64, 64, 16, 12.0, 1), frac);
    Index zero_rows = 0;
    for (Index x = 0; x < 64; ++x) {
      bool any = false;
      for (Index k = 0; k < 64 && !any; ++k)
        for (Index t = 0; t < 16 && !any; ++t) any = m.pattern(x, k, t) != 0;
      zero_rows += !any;
    }
    const Index want = static_cast<Index>(std::floor(frac * 64));
    ok = ok && zero_rows == want && first_echo_row(m) == want;
    pe += fmt(" %.2f->%ld/%ld", frac, static_cast<long>(zero_rows), static_cast<long>(want));
  }
  const double t = since(t0);
  ok = ok && t < 30.0;
  report(6, ok,
         fmt("3000 masks, %ld frames off budget; partial echo zero rows%s; %.1f s (< 30 s)", static_cast<long>(bad),
             pe.c_str(), t));
}

// 7. M=2 vs M=1 l1-ESPIRiT inside the overlap of a wrapped phantom
void criterion7() {
  const auto t0 = Clock::now();
  const Index nf = 8;
  int wins = 0;
  std::string per;
  for (int s = 0; s < 10; ++s) {
    PhantomConfig cfg;
    cfg.seed = 100 + s;
    cfg.nframes = nf;
    cfg.wrap_fraction = 0.15;
    const auto gt = generate_phantom<Real>(cfg);
    const auto y_full = reduce_fov(gt.kspace, 0.15);
    const Index ny2 = y_full.ny();
    const auto mask = make_vd_mask(64, ny2, nf, 8.0, 500 + s);
    const auto y = undersample(y_full, mask);
    const auto calib = extract_calib(y, mask, 24);
    const auto sup = torso_support(cfg);
    Tensor<double> cnt({64, 64});
    for (Index i = 0; i < cnt.size(); ++i) cnt[i] = sup[i];
    const auto folded = fold_axis(cnt, 1, ny2);
    const auto ref = rss_combine(fftc(y_full.values, {0, 1}, FftDirection::inverse));
    double p[2];
    for (Index m = 1; m <= 2; ++m) {
      EspiritOptions o;
      o.nsets = m;
      const auto maps = estimate_espirit_maps(calib, 64, ny2, o);
      const auto x = recon_l1_espirit(y.values, ForwardModel<Real>(maps, mask)).x;
      const auto rec = rss_combine(apply_E(x, maps.maps));
      double peak = 0, se = 0;
      Index n = 0;
      for (Index i = 0; i < 64; ++i)
        for (Index j = 0; j < ny2; ++j)
          if (folded(i, j) >= 2)
            for (Index t = 0; t < nf; ++t, ++n) {
              peak = std::max(peak, double(ref(i, j, t)));
              const double d = double(rec(i, j, t)) - double(ref(i, j, t));
              se += d * d;
            }
      p[m - 1] = 20 * std::log10(peak / std::sqrt(se / double(n)));
    }
    wins += p[1] - p[0] >= 3.0;
    per += fmt(" %+.1f", p[1] - p[0]);
  }
  const double t = since(t0);
  report(7, wins >= 9 && t < 600.0,
         fmt("M=2 minus M=1 overlap PSNR [dB]:%s; >= 3 dB on %d/10 seeds (>= 9), %.0f s (< 600 s)", per.c_str(), wins, t));
}

DataConfig learning_data() {
  DataConfig dc;
  dc.accel_min = 8.0;
  dc.accel_max = 12.0;
  return dc;
}

// 8 and 9. desk-scale training of both kinds, then DL vs l1-ESPIRiT
void criteria8and9(bool gate) {
  if (!gate) {
    report(8, false, "skipped: gradient gate failed");
    report(9, false, "skipped: gradient gate failed", true);
    return;
  }
  const auto t0 = Clock::now();
  const ExampleStream<Real> stream(learning_data(), 42);
  TrainConfig tc;
  tc.steps = 500;
  tc.val_every = 50;
  tc.val_count = 4;
  tc.seed = 42;
  double first[2], last[2];
  UnrolledModel<Real> models[2];
  const ConvKind kinds[2] = {ConvKind::conv3d, ConvKind::conv2p1d};
  for (int i = 0; i < 2; ++i) {
    models[i] = make_model<Real>({3, 5, 16, 2, kinds[i]});
    init_model(models[i], 42);
    const auto h = train(models[i], stream, tc);
    first[i] = h.front().val_loss;
    last[i] = h.back().val_loss;
  }
  const double t = since(t0);
  const double red3 = 1 - last[0] / first[0], red2 = 1 - last[1] / first[1];
  report(8, red3 >= 0.3 && red2 >= 0.3 && t < 7200.0,
         fmt("val l1 reduction conv3d %.1f%% (%.4g -> %.4g), conv2p1d %.1f%% (%.4g -> %.4g) (>= 30%%), %.0f s (< 7200 s)",
             100 * red3, first[0], last[0], 100 * red2, first[1], last[1], t));
  report(8, last[1] <= last[0],
         fmt("direction: conv2p1d final val %.4g %s conv3d %.4g", last[1], last[1] <= last[0] ? "<=" : ">", last[0]),
         true);

  // held-out phantoms at R = 10, same maps for both methods
  auto dc = learning_data();
  dc.accel_min = dc.accel_max = 10.0;
  int wins = 0;
  std::string per;
  for (int s = 0; s < 10; ++s) {
    auto ex = make_base_example<Real>(dc, derive_seed(777, static_cast<std::uint64_t>(s)));
    ex.mask = draw_training_mask<Real>(dc, ex.y_full.nx(), ex.y_full.ny(), ex.y_full.nframes(), 900 + s);
    const auto e = prepare(ex);
    const auto ref = first_set_magnitude(e.x_gt);
    const double p_dl = psnr(first_set_magnitude(forward(models[1], e.y, e.model)), ref);
    const double p_cs = psnr(first_set_magnitude(recon_l1_espirit(e.y, e.model).x), ref);
    wins += p_dl >= p_cs;
    per += fmt(" %.1f/%.1f", p_dl, p_cs);
  }
  report(9, wins >= 7, fmt("(2+1)D vs l1-ESPIRiT PSNR [dB] at R=10:%s; DL >= CS on %d/10 (>= 7)", per.c_str(), wins),
         true);
}

std::string hash_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::uint64_t h = 1469598103934665603ULL;
  char c;
  while (in.get(c)) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ULL;
  return fmt("%016llx", static_cast<unsigned long long>(h));
}

int sh(const std::string& cmd) {
  const int st = std::system((cmd + " >/dev/null 2>&1").c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

// 10. repeated CLI runs hash identically
void criterion10() {
  const fs::path base = fs::temp_directory_path() / "mrcine_acceptance_repro";
  fs::remove_all(base);
  const std::string cli = std::string(MRCINE_CLI) + " --deterministic ";
  std::vector<std::string> hashes[2];
  bool ran = true;
  const char* files[] = {"ph/kspace.ckt", "ph/image.ckt", "mask.ckt", "maps.ckt", "maps.eig.ckt", "cg.ckt", "pgd.ckt",
                         "l1.ckt"};
  for (int r = 0; r < 2; ++r) {
    const fs::path d = base / std::to_string(r);
    fs::create_directories(d);
    const std::string D = d.string() + "/";
    const std::string rc = " --kspace " + D + "ph/kspace.ckt --mask " + D + "mask.ckt --maps " + D + "maps.ckt";
    ran = ran && sh(cli + "phantom --frames 8 --seed 5 --fov-reduction 0.1 --noise 0.001 -o " + D + "ph") == 0;
    ran = ran && sh(cli + "mask --ny 58 --frames 8 --accel 8 --seed 5 -o " + D + "mask.ckt") == 0;
    ran = ran && sh(cli + "calib --input " + D + "ph/kspace.ckt --mask " + D + "mask.ckt -o " + D + "maps.ckt") == 0;
    ran = ran && sh(cli + "recon cg" + rc + " -o " + D + "cg.ckt") == 0;
    ran = ran && sh(cli + "recon pgd --iters 30" + rc + " -o " + D + "pgd.ckt") == 0;
    ran = ran && sh(cli + "recon l1espirit --iters 20" + rc + " -o " + D + "l1.ckt") == 0;
    for (const auto* f : files) hashes[r].push_back(hash_file(d / f));
  }
  std::string detail;
  for (std::size_t i = 0; i < hashes[0].size(); ++i)
    detail += fmt("%s%s %s", i ? ", " : "", files[i], hashes[0][i] == hashes[1][i] ? hashes[0][i].c_str() : "DIFFERS");
  report(10, ran && hashes[0] == hashes[1], (ran ? "" : "a CLI run failed; ") + detail);
  fs::remove_all(base);
}

}  // namespace

int main() {
  try {
    criterion1();
    criterion2();
    criterion3();
    const bool gate = criterion4();
    criterion5();
    criterion6();
    criterion7();
    criteria8and9(gate);
    criterion10();
  } catch (const std::exception& e) {
    std::printf("FAIL aborted: %s\n", e.what());
    return 1;
  }
  std::printf("%d hard criteria failed\n", hard_failures);
  return hard_failures == 0 ? 0 : 1;
}
