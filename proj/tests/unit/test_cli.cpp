#include <sys/wait.h>

#include <fstream>
#include <sstream>

#include "helpers.hpp"

using namespace mrcine;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

int run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + MRCINE_CLI + std::string(" ") + args + " >/dev/null 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / ("mrcine_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }
  std::string p(const std::string& name) const { return (dir / name).string(); }

  void make_inputs(int maps = 2) {
    ASSERT_EQ(run("phantom --nx 32 --ny 32 --frames 4 --coils 4 --seed 3 -o " + p("ph")), 0);
    ASSERT_EQ(run("mask --nx 32 --ny 32 --frames 4 --accel 4 --calib-width 12 --seed 1 -o " + p("mask.ckt")), 0);
    ASSERT_EQ(run("calib --input " + p("ph/kspace.ckt") + " --mask " + p("mask.ckt") + " --calib-width 12 --maps " +
                  std::to_string(maps) + " -o " + p("maps.ckt")),
              0);
  }
  std::string recon_args(const std::string& method, const std::string& out) const {
    return "recon " + method + " --kspace " + p("ph/kspace.ckt") + " --mask " + p("mask.ckt") + " --maps " +
           p("maps.ckt") + " -o " + p(out);
  }

  fs::path dir;
};

}  // namespace

TEST_F(Cli, PipelineProducesOutputsAndManifests) {
  make_inputs();
  for (const auto* f : {"ph/kspace.ckt", "ph/image.ckt", "ph/coils.ckt", "ph/manifest.json", "mask.ckt", "mask.json",
                        "mask.ckt.manifest.json", "maps.ckt", "maps.eig.ckt"})
    EXPECT_TRUE(fs::exists(p(f))) << f;
  const auto mask_meta = json::parse(slurp(p("mask.json")));
  EXPECT_EQ(mask_meta["accel"], 4.0);
  EXPECT_TRUE(mask_meta.contains("density_exponent"));
  for (const std::string m : {"zerofill", "cg", "pgd", "l1espirit"})
    EXPECT_EQ(run(recon_args(m, m + ".ckt") + " --iters 5"), 0) << m;
  const auto rec = read_ckt<std::complex<float>>(p("l1espirit.ckt"));
  EXPECT_EQ(rec.shape(), (Shape{32, 32, 2, 4}));
  const auto man = json::parse(slurp(p("l1espirit.ckt.manifest.json")));
  for (const auto* k : {"command_line", "subcommand", "tool_version", "config", "seeds", "inputs", "outputs", "timings_s"})
    EXPECT_TRUE(man.contains(k)) << k;
  EXPECT_EQ(run("eval --ref " + p("ph/image.ckt") + " --rec " + p("zerofill.ckt") + "," + p("l1espirit.ckt") +
                " --bbox 4,4,28,28 -o " + p("metrics.csv")),
            0);
  const auto csv = slurp(p("metrics.csv"));
  EXPECT_EQ(csv.rfind("method,psnr_db,ssim", 0), 0u);
  EXPECT_NE(csv.find("\nl1espirit,"), std::string::npos);
  EXPECT_EQ(run("export --input " + p("l1espirit.ckt") + " -o " + p("png")), 0);
  EXPECT_TRUE(fs::exists(p("png/frame_000.png")));
  EXPECT_TRUE(fs::exists(p("png/frame_003.png")));
}

TEST_F(Cli, OutputsAreDeterministic) {
  make_inputs();
  ASSERT_EQ(run(recon_args("pgd", "a.ckt") + " --iters 10", "MRCINE_THREADS=1"), 0);
  ASSERT_EQ(run("--deterministic " + recon_args("pgd", "b.ckt") + " --iters 10"), 0);
  EXPECT_EQ(slurp(p("a.ckt")), slurp(p("b.ckt")));
  const auto maps1 = slurp(p("maps.ckt"));
  ASSERT_EQ(run("calib --input " + p("ph/kspace.ckt") + " --mask " + p("mask.ckt") + " --calib-width 12 -o " +
                p("maps2.ckt")),
            0);
  EXPECT_EQ(maps1, slurp(p("maps2.ckt")));
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run("--help"), 0);
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("phantom --bogus -o " + p("x")), 2);
  EXPECT_EQ(run("mask --ny 32 --frames 4 -o " + p("m.ckt")), 2);
  EXPECT_EQ(run("mask --ny 32 --frames 4 --accel 4 -o " + p("m.ckt"), "MRCINE_THREADS=abc"), 2);
  EXPECT_EQ(run("recon zerofill --kspace /nonexistent --mask /nonexistent --maps /nonexistent -o " + p("r.ckt")), 2);
  // unreadable container content is a runtime failure
  std::ofstream(p("junk.ckt")) << "not a container";
  EXPECT_EQ(run("recon zerofill --kspace " + p("junk.ckt") + " --mask " + p("junk.ckt") + " --maps " + p("junk.ckt") +
                " -o " + p("r.ckt")),
            1);
}

TEST_F(Cli, NetworkMapCountMismatchFails) {
  make_inputs(1);
  auto m = make_model<float>({1, 3, 4, 2, ConvKind::conv3d});
  init_model(m, 0);
  save_checkpoint(p("model.dle"), m);
  EXPECT_EQ(run(recon_args("dl", "dl.ckt") + " --checkpoint " + p("model.dle")), 1);
  EXPECT_FALSE(fs::exists(p("dl.ckt")));
  make_inputs(2);
  EXPECT_EQ(run(recon_args("dl", "dl.ckt") + " --checkpoint " + p("model.dle")), 0);
  EXPECT_TRUE(fs::exists(p("dl.ckt")));
}

TEST_F(Cli, TrainWritesModelAndHistory) {
  std::ofstream(p("cfg.json")) << R"({"train": {"steps": 2, "val_every": 1, "val_count": 1, "checkpoint_every": 1},
    "net": {"iterations": 1, "channels": 4, "kind": "conv2p1d"},
    "data": {"nx": 32, "ny": 32, "nframes": 4, "ncoils": 4, "pool": 1, "calib_width": 12, "readout_crop": 0,
             "accel_min": 4, "accel_max": 4, "fov_reduction_max": 0}})";
  ASSERT_EQ(run("train --config " + p("cfg.json") + " -o " + p("run")), 0);
  EXPECT_TRUE(fs::exists(p("run/model.dle")));
  EXPECT_TRUE(fs::exists(p("run/manifest.json")));
  const auto h = slurp(p("run/history.csv"));
  EXPECT_EQ(h.rfind("step,train_loss,val_loss\n", 0), 0u);
  EXPECT_EQ(load_checkpoint<float>(p("run/model.dle")).cfg.kind, ConvKind::conv2p1d);
  std::ofstream(p("bad.json")) << R"({"train": {"stepz": 2}})";
  EXPECT_EQ(run("train --config " + p("bad.json") + " -o " + p("run2")), 2);
}
