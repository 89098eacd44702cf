// mrcine: phantom -> mask -> calib -> recon -> eval / export, plus train.

#include <png.h>

#include <CLI11.hpp>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "mrcine/mrcine.hpp"

namespace fs = std::filesystem;
using namespace mrcine;
using json = nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

// Flag and configuration problems discovered after parsing; exit 2 like
// CLI11's own errors.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class Manifest {
 public:
  Manifest(std::string cmd, int argc, char** argv) : cmd_(std::move(cmd)) {
    for (int i = 0; i < argc; ++i) doc_["command_line"].push_back(argv[i]);
    doc_["subcommand"] = cmd_;
    doc_["tool_version"] = kVersion;
    doc_["config"] = json::object();
    doc_["seeds"] = json::object();
    doc_["inputs"] = json::array();
    doc_["outputs"] = json::array();
    doc_["timings_s"] = json::object();
  }
  json& config() { return doc_["config"]; }
  void set(const std::string& k, json v) { doc_[k] = std::move(v); }
  void seed(const std::string& k, std::uint64_t v) { doc_["seeds"][k] = v; }
  void input(const fs::path& p) { doc_["inputs"].push_back(p.string()); }
  void output(const fs::path& p) { doc_["outputs"].push_back(p.string()); }

  template <typename F>
  auto stage(const std::string& name, F&& f) {
    const auto t0 = std::chrono::steady_clock::now();
    if constexpr (std::is_void_v<decltype(f())>) {
      f();
      record(name, t0);
    } else {
      auto r = f();
      record(name, t0);
      return r;
    }
  }

  void write(const fs::path& path) const {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write " + path.string());
    out << doc_.dump(2) << '\n';
  }

 private:
  void record(const std::string& name, std::chrono::steady_clock::time_point t0) {
    doc_["timings_s"][name] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  std::string cmd_;
  json doc_;
};

// manifest beside a file output, or inside a directory output
fs::path manifest_for_file(const fs::path& out) { return fs::path(out.string() + ".manifest.json"); }
fs::path manifest_for_dir(const fs::path& dir) { return dir / "manifest.json"; }

fs::path eig_path(const fs::path& maps) {
  auto p = maps;
  p.replace_extension();
  return fs::path(p.string() + ".eig.ckt");
}

KTMask read_mask(const fs::path& p) {
  KTMask m;
  m.pattern = read_ckt<std::uint8_t>(p);
  if (m.pattern.ndim() != 3) throw std::invalid_argument("mask must be (kx, ky, frame), got " + shape_str(m.pattern.shape()));
  const auto meta = read_metadata(p);
  m.accel = meta.value("accel", 1.0);
  m.partial_echo_frac = meta.value("partial_echo", 0.0);
  m.seed = meta.value("seed", std::uint64_t{0});
  m.density_exponent = meta.value("density_exponent", m.density_exponent);
  m.central_band = meta.value("band", m.central_band);
  m.calib_width = meta.value("calib_width", m.calib_width);
  return m;
}

KTData<Real> read_kspace(const fs::path& p) {
  KTData<Real> y{read_ckt<std::complex<Real>>(p)};
  if (y.values.ndim() != 4) throw std::invalid_argument("k-space must be (kx, ky, coil, frame), got " + shape_str(y.values.shape()));
  return y;
}

EspiritMaps<Real> read_maps(const fs::path& p) {
  EspiritMaps<Real> m;
  m.maps = read_ckt<std::complex<Real>>(p);
  if (m.maps.ndim() != 4) throw std::invalid_argument("maps must be (x, y, coil, set), got " + shape_str(m.maps.shape()));
  return m;
}

void check_data_mask(const KTData<Real>& y, const KTMask& m) {
  if (y.nx() != m.nx() || y.ny() != m.ny() || y.nframes() != m.nframes())
    throw std::invalid_argument("mask " + shape_str(m.pattern.shape()) + " does not match k-space " +
                                shape_str(y.values.shape()));
}

void write_png_gray(const fs::path& path, const std::vector<std::uint8_t>& pix, Index w, Index h) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, pix.data(), 0, nullptr))
    throw FormatError("png write failed for " + path.string() + ": " + img.message);
}

// ---- subcommands ---------------------------------------------------------

struct PhantomArgs {
  Index nx = 64, ny = 64, frames = 16, coils = 8;
  std::uint64_t seed = 0;
  double fov_reduction = 0.0, motion = 0.2, noise = 0.0;
  fs::path out;
};

int run_phantom(const PhantomArgs& a, Manifest& man) {
  PhantomConfig pc;
  pc.nx = a.nx;
  pc.ny = a.ny;
  pc.nframes = a.frames;
  pc.ncoils = a.coils;
  pc.seed = a.seed;
  pc.motion_amplitude = a.motion;
  pc.noise_std = a.noise;
  pc.wrap_fraction = a.fov_reduction;
  pc.validate();
  man.config() = {{"nx", a.nx}, {"ny", a.ny}, {"frames", a.frames}, {"coils", a.coils},
                  {"fov_reduction", a.fov_reduction}, {"motion", a.motion}, {"noise", a.noise}};
  man.seed("phantom", a.seed);
  const auto gt = man.stage("generate", [&] { return generate_phantom<Real>(pc); });
  auto y = gt.kspace;
  CTensor<Real> ref = gt.image.values;
  if (a.fov_reduction > 0.0) {
    y = reduce_fov(gt.kspace, a.fov_reduction);
    ref = fold_axis(gt.image.values, 1, y.ny());
  }
  const Metadata meta = {{"axes", "kx,ky,coil,frame"}, {"seed", a.seed}, {"fov_reduction", a.fov_reduction}};
  man.stage("write", [&] {
    write_ckt(a.out / "kspace.ckt", y.values, meta);
    write_ckt(a.out / "image.ckt", ref, {{"axes", "x,y,set,frame"}, {"seed", a.seed}});
    write_ckt(a.out / "coils.ckt", gt.coils, {{"axes", "x,y,coil"}, {"seed", a.seed}});
  });
  for (auto f : {"kspace.ckt", "image.ckt", "coils.ckt"}) man.output(a.out / f);
  man.write(manifest_for_dir(a.out));
  return 0;
}

struct MaskArgs {
  Index nx = 64, ny = 64, frames = 16;
  double accel = 12.0, partial_echo = 0.0, exponent = 3.0;
  Index band = 4, calib_width = 24;
  std::uint64_t seed = 0;
  fs::path out;
};

int run_mask(const MaskArgs& a, Manifest& man) {
  VdMaskOptions vo;
  vo.central_band = a.band;
  vo.calib_width = a.calib_width;
  vo.exponent = a.exponent;
  man.config() = {{"nx", a.nx}, {"ny", a.ny}, {"frames", a.frames}, {"accel", a.accel},
                  {"partial_echo", a.partial_echo}, {"band", a.band}, {"calib_width", a.calib_width},
                  {"exponent", a.exponent}};
  man.seed("mask", a.seed);
  auto m = man.stage("generate", [&] { return make_vd_mask(a.nx, a.ny, a.frames, a.accel, a.seed, vo); });
  if (a.partial_echo > 0.0) m = apply_partial_echo(m, a.partial_echo);
  write_ckt(a.out, m.pattern,
            {{"axes", "kx,ky,frame"}, {"accel", a.accel}, {"partial_echo", a.partial_echo}, {"seed", a.seed},
             {"density_exponent", a.exponent}, {"band", a.band}, {"calib_width", a.calib_width}});
  man.output(a.out);
  man.write(manifest_for_file(a.out));
  return 0;
}

struct CalibArgs {
  fs::path input, mask, out;
  Index maps = 2, kernel = 6, width = 24;
  double crop = 0.9, threshold = 0.02;
};

int run_calib(const CalibArgs& a, Manifest& man) {
  man.input(a.input);
  man.input(a.mask);
  man.config() = {{"maps", a.maps}, {"kernel", a.kernel}, {"crop", a.crop}, {"calib_width", a.width},
                  {"sv_threshold", a.threshold}};
  const auto y = read_kspace(a.input);
  const auto mask = read_mask(a.mask);
  check_data_mask(y, mask);
  EspiritOptions o;
  o.nsets = a.maps;
  o.kernel = a.kernel;
  o.eig_crop = a.crop;
  o.sv_threshold = a.threshold;
  const auto maps = man.stage("espirit", [&] {
    return estimate_espirit_maps(extract_calib(undersample(y, mask), mask, a.width), y.nx(), y.ny(), o);
  });
  write_ckt(a.out, maps.maps,
            {{"axes", "x,y,coil,set"}, {"kernel", a.kernel}, {"eig_crop", a.crop}, {"calib_width", a.width}});
  CTensor<Real> eig(maps.eigenvalues.shape());
  for (Index i = 0; i < eig.size(); ++i) eig[i] = maps.eigenvalues[i];
  write_ckt(eig_path(a.out), eig, {{"axes", "x,y,set"}});
  man.output(a.out);
  man.output(eig_path(a.out));
  man.write(manifest_for_file(a.out));
  return 0;
}

struct ReconArgs {
  std::string method;
  fs::path kspace, mask, maps, checkpoint, out;
  double lambda_s = 0.002, lambda_t = 0.01, lambda = 0.01, step = 0.5, rho = 0.1;
  int iters = 200, cg_iters = 10;
};

int run_recon(const ReconArgs& a, Manifest& man) {
  man.input(a.kspace);
  man.input(a.mask);
  man.input(a.maps);
  man.config() = {{"method", a.method}, {"lambda_s", a.lambda_s}, {"lambda_t", a.lambda_t}, {"lambda", a.lambda},
                  {"step", a.step},     {"rho", a.rho},           {"iters", a.iters},       {"cg_iters", a.cg_iters}};
  const auto y_in = read_kspace(a.kspace);
  const auto mask = read_mask(a.mask);
  check_data_mask(y_in, mask);
  const auto maps = read_maps(a.maps);
  const ForwardModel<Real> fm(maps, mask);
  if (fm.ncoils() != y_in.ncoils())
    throw std::invalid_argument("maps have " + std::to_string(fm.ncoils()) + " coils, k-space has " +
                                std::to_string(y_in.ncoils()));
  const auto y = undersample(y_in, mask).values;
  CTensor<Real> x;
  if (a.method == "zerofill") {
    x = man.stage("recon", [&] { return recon_zero_filled(y, fm); });
  } else if (a.method == "cg") {
    x = man.stage("recon", [&] { return recon_cg(y, fm, a.iters).x; });
  } else if (a.method == "pgd") {
    x = man.stage("recon", [&] { return recon_pgd(y, fm, a.lambda, a.step, a.iters, temporal_dft<Real>()).x; });
  } else if (a.method == "l1espirit") {
    AdmmOptions o;
    o.lambda_spatial = a.lambda_s;
    o.lambda_temporal = a.lambda_t;
    o.iters = a.iters;
    o.rho = a.rho;
    o.cg_iters = a.cg_iters;
    x = man.stage("recon", [&] { return recon_l1_espirit(y, fm, o).x; });
  } else {
    if (a.checkpoint.empty()) throw UsageError("recon dl requires --checkpoint");
    man.input(a.checkpoint);
    const auto model = load_checkpoint<Real>(a.checkpoint);
    x = man.stage("recon", [&] { return forward(model, y, fm); });
  }
  write_ckt(a.out, x, {{"axes", "x,y,set,frame"}, {"method", a.method}});
  man.output(a.out);
  man.write(manifest_for_file(a.out));
  return 0;
}

// Nested JSON config: {"train": {...}, "net": {...}, "data": {...}}.
// Unknown keys are rejected so typos do not silently fall back to defaults.
struct TrainSetup {
  TrainConfig train;
  NetConfig net;
  DataConfig data;
  std::uint64_t init_seed = 0;
};

template <typename T>
void take(const json& sec, const std::string& key, T& dst) {
  if (sec.contains(key)) dst = sec.at(key).get<T>();
}

void reject_unknown(const json& sec, const std::string& name, std::initializer_list<const char*> keys) {
  for (auto it = sec.begin(); it != sec.end(); ++it) {
    bool ok = false;
    for (auto k : keys) ok = ok || it.key() == k;
    if (!ok) throw UsageError("train config: unknown key '" + name + "." + it.key() + "'");
  }
}

TrainSetup parse_train_config(const json& j, bool full_scale) {
  TrainSetup s;
  s.net.iterations = 4;
  s.net.channels = 96;
  if (full_scale) {
    s.net.iterations = 10;
    s.train.steps = 200000;
  }
  if (!j.is_object()) throw UsageError("train config must be a JSON object");
  reject_unknown(j, "", {"train", "net", "data"});
  if (j.contains("train")) {
    const auto& t = j.at("train");
    reject_unknown(t, "train", {"steps", "lr", "restart_at", "beta1", "beta2", "eps", "seed", "init_seed", "val_every",
                                "val_count", "loss", "grad_clip", "checkpoint_every", "verbose"});
    take(t, "steps", s.train.steps);
    take(t, "lr", s.train.lr);
    take(t, "restart_at", s.train.restart_at);
    take(t, "beta1", s.train.adam.beta1);
    take(t, "beta2", s.train.adam.beta2);
    take(t, "eps", s.train.adam.eps);
    take(t, "seed", s.train.seed);
    s.init_seed = s.train.seed;
    take(t, "init_seed", s.init_seed);
    take(t, "val_every", s.train.val_every);
    take(t, "val_count", s.train.val_count);
    take(t, "grad_clip", s.train.grad_clip);
    take(t, "checkpoint_every", s.train.checkpoint_every);
    take(t, "verbose", s.train.verbose);
    if (t.contains("loss")) {
      const auto l = t.at("loss").get<std::string>();
      if (l == "modulus") s.train.loss = LossKind::modulus;
      else if (l == "channel") s.train.loss = LossKind::channel;
      else throw UsageError("train config: loss must be 'modulus' or 'channel', got '" + l + "'");
    }
  } else {
    s.init_seed = s.train.seed;
  }
  if (j.contains("net")) {
    const auto& n = j.at("net");
    reject_unknown(n, "net", {"iterations", "layers", "channels", "nsets", "kind"});
    take(n, "iterations", s.net.iterations);
    take(n, "layers", s.net.layers);
    take(n, "channels", s.net.channels);
    take(n, "nsets", s.net.nsets);
    if (n.contains("kind")) s.net.kind = parse_conv_kind(n.at("kind").get<std::string>());
  }
  if (j.contains("data")) {
    const auto& d = j.at("data");
    reject_unknown(d, "data", {"nx", "ny", "nframes", "ncoils", "pool", "accel_min", "accel_max", "fov_reduction_max",
                               "partial_echo_min", "partial_echo_max", "calib_width", "motion_min", "motion_max",
                               "readout_crop", "flips", "max_pe_shift", "max_frame_shift"});
    take(d, "nx", s.data.nx);
    take(d, "ny", s.data.ny);
    take(d, "nframes", s.data.nframes);
    take(d, "ncoils", s.data.ncoils);
    take(d, "pool", s.data.pool);
    take(d, "accel_min", s.data.accel_min);
    take(d, "accel_max", s.data.accel_max);
    take(d, "fov_reduction_max", s.data.fov_reduction_max);
    take(d, "partial_echo_min", s.data.partial_echo_min);
    take(d, "partial_echo_max", s.data.partial_echo_max);
    take(d, "calib_width", s.data.calib_width);
    take(d, "motion_min", s.data.motion_min);
    take(d, "motion_max", s.data.motion_max);
    take(d, "readout_crop", s.data.augment.readout_crop);
    take(d, "flips", s.data.augment.flips);
    take(d, "max_pe_shift", s.data.augment.max_pe_shift);
    take(d, "max_frame_shift", s.data.augment.max_frame_shift);
  }
  s.data.nsets = s.net.nsets;
  s.data.espirit.nsets = s.net.nsets;
  if (s.data.augment.readout_crop > s.data.nx) s.data.augment.readout_crop = s.data.nx;
  return s;
}

int run_train(const fs::path& config, const fs::path& out, bool full_scale, Manifest& man) {
  man.input(config);
  std::ifstream in(config);
  if (!in) throw FormatError("cannot read " + config.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError("train config " + config.string() + ": " + e.what());
  }
  TrainSetup s;
  try {
    s = parse_train_config(j, full_scale);
  } catch (const json::exception& e) {
    throw UsageError(std::string("train config: ") + e.what());
  }
  s.train.checkpoint_dir = (out / "checkpoints").string();
  man.config() = {{"full_scale", full_scale}, {"raw", j}, {"steps", s.train.steps}, {"lr", s.train.lr},
                  {"restart_at", s.train.restart_step()}, {"iterations", s.net.iterations},
                  {"channels", s.net.channels}, {"layers", s.net.layers}, {"nsets", s.net.nsets},
                  {"kind", to_string(s.net.kind)}};
  man.seed("train", s.train.seed);
  man.seed("init", s.init_seed);
  auto model = make_model<Real>(s.net);
  init_model(model, s.init_seed);
  const ExampleStream<Real> stream = man.stage("data", [&] { return ExampleStream<Real>(s.data, s.train.seed); });
  const auto hist = man.stage("train", [&] { return train(model, stream, s.train); });
  fs::create_directories(out);
  save_checkpoint(out / "model.dle", model);
  std::ofstream(out / "history.csv") << history_csv(hist);
  man.output(out / "model.dle");
  man.output(out / "history.csv");
  man.write(manifest_for_dir(out));
  return 0;
}

int run_eval(const fs::path& ref_path, const std::vector<std::string>& recs, const std::string& bbox,
             const fs::path& out, Manifest& man) {
  man.input(ref_path);
  const auto ref = first_set_magnitude(read_ckt<std::complex<double>>(ref_path));
  const BBox b = bbox.empty() ? BBox::full(ref.dim(0), ref.dim(1)) : parse_bbox(bbox);
  man.config() = {{"bbox", {b.x0, b.y0, b.x1, b.y1}}};
  std::vector<std::pair<std::string, RTensor<double>>> items;
  for (const auto& r : recs) {
    man.input(r);
    const auto mag = first_set_magnitude(read_ckt<std::complex<double>>(r));
    if (mag.shape() != ref.shape())
      throw std::invalid_argument("reconstruction " + r + " has shape " + shape_str(mag.shape()) +
                                  ", reference has " + shape_str(ref.shape()));
    items.emplace_back(fs::path(r).stem().string(), mag);
  }
  const auto rep = man.stage("metrics", [&] { return compare(items, ref, b); });
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream(out) << rep.csv();
  std::cout << rep.text();
  man.output(out);
  man.write(manifest_for_file(out));
  return 0;
}

int run_export(const fs::path& input, const fs::path& out, Manifest& man) {
  man.input(input);
  const auto mag = first_set_magnitude(read_ckt<std::complex<double>>(input));
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (Index i = 0; i < mag.size(); ++i) {
    lo = std::min(lo, mag[i]);
    hi = std::max(hi, mag[i]);
  }
  const double span = hi > lo ? hi - lo : 1.0;
  fs::create_directories(out);
  const Index nx = mag.dim(0), ny = mag.dim(1);
  // rows are x (readout), columns y
  for (Index t = 0; t < mag.dim(2); ++t) {
    std::vector<std::uint8_t> pix(static_cast<std::size_t>(nx * ny));
    for (Index x = 0; x < nx; ++x)
      for (Index y = 0; y < ny; ++y)
        pix[static_cast<std::size_t>(x * ny + y)] =
            static_cast<std::uint8_t>(std::lround(255.0 * (mag(x, y, t) - lo) / span));
    char name[32];
    std::snprintf(name, sizeof name, "frame_%03lld.png", static_cast<long long>(t));
    write_png_gray(out / name, pix, ny, nx);
    man.output(out / name);
  }
  man.config() = {{"min", lo}, {"max", hi}};
  man.write(manifest_for_dir(out));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mrcine: multi-set ESPIRiT, compressed sensing and unrolled-network cine reconstruction"};
  app.require_subcommand(1);
  bool deterministic = false;
  app.add_flag("--deterministic", deterministic, "Force single-threaded bit-reproducible execution");
  app.set_version_flag("--version", kVersion);

  PhantomArgs pa;
  auto* ph = app.add_subcommand("phantom", "Synthesize a multi-coil cine phantom");
  ph->add_option("--nx", pa.nx)->check(CLI::Range(Index{16}, Index{4096}));
  ph->add_option("--ny", pa.ny)->check(CLI::Range(Index{16}, Index{4096}));
  ph->add_option("--frames", pa.frames)->check(CLI::Range(Index{4}, Index{1024}));
  ph->add_option("--coils", pa.coils)->check(CLI::Range(Index{1}, Index{128}));
  ph->add_option("--seed", pa.seed);
  ph->add_option("--fov-reduction", pa.fov_reduction, "Fraction of phase-encode FOV removed (wraps the torso)");
  ph->add_option("--motion", pa.motion);
  ph->add_option("--noise", pa.noise);
  ph->add_option("-o,--output", pa.out, "Output directory")->required();

  MaskArgs ma;
  auto* mk = app.add_subcommand("mask", "Generate a variable-density k-t mask");
  mk->add_option("--nx", ma.nx);
  mk->add_option("--ny", ma.ny)->required();
  mk->add_option("--frames", ma.frames)->required();
  mk->add_option("--accel", ma.accel)->required();
  mk->add_option("--partial-echo", ma.partial_echo);
  mk->add_option("--band", ma.band);
  mk->add_option("--calib-width", ma.calib_width);
  mk->add_option("--exponent", ma.exponent);
  mk->add_option("--seed", ma.seed);
  mk->add_option("-o,--output", ma.out)->required();

  CalibArgs ca;
  auto* cb = app.add_subcommand("calib", "Estimate ESPIRiT maps from the calibration region");
  cb->add_option("--input", ca.input)->required()->check(CLI::ExistingFile);
  cb->add_option("--mask", ca.mask)->required()->check(CLI::ExistingFile);
  cb->add_option("--maps", ca.maps)->check(CLI::IsMember({1, 2}));
  cb->add_option("--kernel", ca.kernel);
  cb->add_option("--crop", ca.crop);
  cb->add_option("--threshold", ca.threshold);
  cb->add_option("--calib-width", ca.width);
  cb->add_option("-o,--output", ca.out)->required();

  ReconArgs ra;
  auto* rc = app.add_subcommand("recon", "Reconstruct undersampled k-space");
  rc->add_option("method", ra.method)->required()->check(CLI::IsMember({"zerofill", "cg", "pgd", "l1espirit", "dl"}));
  rc->add_option("--kspace", ra.kspace)->required()->check(CLI::ExistingFile);
  rc->add_option("--mask", ra.mask)->required()->check(CLI::ExistingFile);
  rc->add_option("--maps", ra.maps)->required()->check(CLI::ExistingFile);
  rc->add_option("--lambda-s", ra.lambda_s);
  rc->add_option("--lambda-t", ra.lambda_t);
  rc->add_option("--lambda", ra.lambda, "PGD temporal-DFT sparsity weight");
  rc->add_option("--step", ra.step, "PGD step in units of 1/||A||^2");
  rc->add_option("--rho", ra.rho);
  rc->add_option("--cg-iters", ra.cg_iters);
  rc->add_option("--iters", ra.iters)->check(CLI::PositiveNumber);
  rc->add_option("--checkpoint", ra.checkpoint)->check(CLI::ExistingFile);
  rc->add_option("-o,--output", ra.out)->required();

  fs::path train_cfg, train_out;
  bool full_scale = false;
  auto* tr = app.add_subcommand("train", "Train the unrolled network on phantoms");
  tr->add_option("--config", train_cfg)->required()->check(CLI::ExistingFile);
  tr->add_flag("--paper-scale", full_scale, "Full-scale defaults (K=10, 200k steps) before the config is applied");
  tr->add_option("-o,--output", train_out)->required();

  fs::path eval_ref, eval_out;
  std::vector<std::string> eval_recs;
  std::string eval_bbox;
  auto* ev = app.add_subcommand("eval", "PSNR/SSIM report against a reference");
  ev->add_option("--ref", eval_ref)->required()->check(CLI::ExistingFile);
  ev->add_option("--rec", eval_recs)->required()->delimiter(',')->check(CLI::ExistingFile);
  ev->add_option("--bbox", eval_bbox, "x0,y0,x1,y1");
  ev->add_option("-o,--output", eval_out)->required();

  fs::path ex_in, ex_out;
  auto* ex = app.add_subcommand("export", "Write first-set magnitude frames as PNG");
  ex->add_option("--input", ex_in)->required()->check(CLI::ExistingFile);
  ex->add_option("-o,--output", ex_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  // Execution is single-threaded throughout; the cap is validated and recorded.
  long threads = 1;
  if (const char* env = std::getenv("MRCINE_THREADS")) {
    char* end = nullptr;
    threads = std::strtol(env, &end, 10);
    if (!end || *end != '\0' || threads < 1) {
      std::cerr << "mrcine: error: MRCINE_THREADS must be a positive integer, got '" << env << "'\n";
      return 2;
    }
  }

  auto* sub = app.get_subcommands().front();
  Manifest man(sub->get_name(), argc, argv);
  man.set("deterministic", deterministic);
  man.set("threads", threads);
  try {
    int rc_code = 0;
    if (sub == ph) rc_code = run_phantom(pa, man);
    else if (sub == mk) rc_code = run_mask(ma, man);
    else if (sub == cb) rc_code = run_calib(ca, man);
    else if (sub == rc) rc_code = run_recon(ra, man);
    else if (sub == tr) rc_code = run_train(train_cfg, train_out, full_scale, man);
    else if (sub == ev) rc_code = run_eval(eval_ref, eval_recs, eval_bbox, eval_out, man);
    else rc_code = run_export(ex_in, ex_out, man);
    return rc_code;
  } catch (const UsageError& e) {
    std::cerr << "mrcine: usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "mrcine: error: " << e.what() << '\n';
    return 1;
  }
}
