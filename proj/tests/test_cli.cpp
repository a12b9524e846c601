#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "nechdr/checkpoint.hpp"
#include "nechdr/image_io.hpp"
#include "nechdr/run_config.hpp"

using namespace nechdr;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string output;
};

RunResult run(const std::string& args) {
  const std::string cmd = std::string(NECHDR_CLI_PATH) + " " + args + " 2>&1";
  RunResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), pipe)) r.output += buf.data();
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("nechdr_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const std::string kTiny = "--set channels=4,6,8,10 --set blend_hidden=4,6 --set crop=32 --set lr=1e-3";

}  // namespace

TEST(RunConfig, FileValuesAndOverrides) {
  const fs::path dir = scratch("config");
  {
    std::ofstream f(dir / "run.cfg");
    f << "# comment\nvariant = three\nsteps = 12\nlr = 0.002\n\nseed=9\n";
  }
  RunConfig c;
  c.load_file(dir / "run.cfg");
  EXPECT_EQ(c.variant, Variant::kThreeExposure);
  EXPECT_EQ(c.steps, 12);
  EXPECT_EQ(c.optim.lr, 0.002);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.exposure().epsilons, (std::vector<double>{1, 4, 16}));
  c.set("exposures", "1,2,4");
  EXPECT_EQ(c.exposure().epsilons, (std::vector<double>{1, 2, 4}));
  EXPECT_THROW(c.set("bogus", "1"), ConfigError);
  EXPECT_THROW(c.set("steps", "many"), ConfigError);
  c.crop = 24;
  EXPECT_THROW(c.validate(), ConfigError);
  c.crop = 16;
  EXPECT_THROW(c.validate(), ConfigError);
  c.crop = 64;
  EXPECT_NO_THROW(c.validate());
  c.set("channels", "8,8,9,10");
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(RunConfig, DumpRoundTrips) {
  RunConfig a;
  a.set("variant", "three");
  a.set("noise_sigma", "0.01");
  a.set("channels", "4,6,8,10");
  const fs::path dir = scratch("dump");
  {
    std::ofstream f(dir / "dump.cfg");
    f << a.dump();
  }
  RunConfig b;
  b.load_file(dir / "dump.cfg");
  EXPECT_EQ(a.dump(), b.dump());
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("frobnicate").code, 1);
  EXPECT_EQ(run("train --variant four").code, 1);
  EXPECT_EQ(run("synth --output /tmp/x").code, 1);
  EXPECT_EQ(run("--help").code, 0);
}

TEST(Cli, PrintConfigShowsDefaultsAndFlagsWin) {
  const fs::path dir = scratch("print");
  {
    std::ofstream f(dir / "run.cfg");
    f << "seed = 4\nsteps = 7\n";
  }
  const RunResult r = run("train --config " + (dir / "run.cfg").string() + " --seed 5 --print-config");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("seed = 5\n"), std::string::npos);
  EXPECT_NE(r.output.find("steps = 7\n"), std::string::npos);
  EXPECT_NE(r.output.find("lr = 0.0001\n"), std::string::npos);
  EXPECT_NE(r.output.find("beta2 = 0.999\n"), std::string::npos);
  EXPECT_NE(r.output.find("mu = 5000\n"), std::string::npos);
  EXPECT_NE(r.output.find("lightweight = false\n"), std::string::npos);
  const RunResult light = run("train --lightweight --print-config");
  EXPECT_NE(light.output.find("channels = 24,36,54,72\n"), std::string::npos);
  EXPECT_EQ(run("train --set crop=17 --print-config").code, 3);
}

TEST(Cli, SynthWritesDatasetOrNothing) {
  const fs::path dir = scratch("synth");
  const fs::path out = dir / "data";
  RunResult r = run("synth --scene shift --set frames=6 --set height=32 --set width=32 --output " + out.string());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_TRUE(fs::exists(out / "manifest.txt"));
  EXPECT_TRUE(fs::exists(out / "shift" / "input" / "f0006.png"));
  EXPECT_TRUE(fs::exists(out / "shift" / "gt_hdr" / "f0001.pfm"));
  EXPECT_TRUE(fs::exists(out / "shift" / "gt_ldr" / "e1" / "f0003.png"));
  EXPECT_FALSE(fs::exists(out.string() + ".lock"));
  EXPECT_FALSE(fs::exists(out.string() + ".staging"));

  // Existing output is kept unless --overwrite is given.
  r = run("synth --scene static --set frames=6 --set height=32 --set width=32 --output " + out.string());
  EXPECT_EQ(r.code, 2);
  EXPECT_TRUE(fs::exists(out / "shift"));
  r = run("synth --scene static --overwrite --set frames=6 --set height=32 --set width=32 --output " + out.string());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_TRUE(fs::exists(out / "static"));
  EXPECT_FALSE(fs::exists(out / "shift"));

  const fs::path three = dir / "three";
  r = run("synth --variant three --scene shift --set frames=7 --set height=32 --set width=32 --output " +
          three.string());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(slurp(three / "manifest.txt").find("exposures 1 4 16"), std::string::npos);
  EXPECT_TRUE(fs::exists(three / "shift" / "gt_ldr" / "e2" / "f0007.png"));

  const fs::path bad = dir / "bad";
  r = run("synth --input " + (dir / "missing").string() + " --output " + bad.string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("missing"), std::string::npos);
  EXPECT_FALSE(fs::exists(bad));
}

TEST(Cli, LockBlocksConcurrentRun) {
  const fs::path dir = scratch("lock");
  const fs::path out = dir / "data";
  std::ofstream(out.string() + ".lock").put('x');
  const RunResult r = run("synth --scene static --set frames=5 --set height=16 --set width=16 --output " + out.string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("locked"), std::string::npos);
  EXPECT_FALSE(fs::exists(out));
}

TEST(Cli, FullPipeline) {
  const fs::path dir = scratch("pipeline");
  RunResult r = run("synth --scene shift --set frames=6 --set height=32 --set width=32 --output " +
                    (dir / "data").string());
  ASSERT_EQ(r.code, 0) << r.output;

  const std::string train_args =
      "train --dataset " + (dir / "data" / "manifest.txt").string() + " --steps 3 --seed 2 " + kTiny;
  r = run(train_args + " --output " + (dir / "run1").string());
  ASSERT_EQ(r.code, 0) << r.output;
  r = run(train_args + " --output " + (dir / "run2").string());
  ASSERT_EQ(r.code, 0) << r.output;
  const std::string csv = slurp(dir / "run1" / "loss.csv");
  EXPECT_EQ(csv, slurp(dir / "run2" / "loss.csv"));
  EXPECT_EQ(slurp(dir / "run1" / "checkpoint.bin"), slurp(dir / "run2" / "checkpoint.bin"));
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  EXPECT_EQ(csv.rfind("step,l_i_com,l_i_ren,l_g_com,l_g_ren,l_f,total\n", 0), 0u);
  EXPECT_TRUE(fs::exists(dir / "run1" / "config.txt"));

  // Resume to step 5.
  r = run("train --dataset " + (dir / "data" / "manifest.txt").string() + " --steps 5 --seed 2 " + kTiny +
          " --checkpoint " + (dir / "run1" / "checkpoint.bin").string() + " --output " + (dir / "run3").string());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(slurp(dir / "run3" / "loss.csv").rfind("step,", 0), 0u);
  EXPECT_NE(slurp(dir / "run3" / "loss.csv").find("\n4,"), std::string::npos);

  const std::string ckpt = (dir / "run1" / "checkpoint.bin").string();
  r = run("infer --checkpoint " + ckpt + " --input " + (dir / "data" / "shift").string() + " " + kTiny +
          " --output " + (dir / "render").string());
  ASSERT_EQ(r.code, 0) << r.output;
  for (int f = 1; f <= 6; ++f) {
    char name[32];
    std::snprintf(name, sizeof(name), "f%04d", f);
    EXPECT_TRUE(fs::exists(dir / "render" / "hdr" / (std::string(name) + ".pfm")));
    EXPECT_TRUE(fs::exists(dir / "render" / "tonemapped" / (std::string(name) + ".png")));
    // Frame f is captured at exposure index f mod 2, so the other one is completed.
    const int missing = 1 - (f % 2);
    EXPECT_TRUE(fs::exists(dir / "render" / "completed" / (std::string(name) + "_e" + std::to_string(missing) + ".png")))
        << name;
  }

  r = run("infer --variant three --checkpoint " + ckpt + " --input " + (dir / "data" / "shift").string() + " " +
          kTiny + " --output " + (dir / "render3").string());
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.output.find("two"), std::string::npos);
  EXPECT_NE(r.output.find("three"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir / "render3"));

  const std::string gt = (dir / "data" / "shift").string();
  r = run("eval --rendered " + gt + " --gt " + gt + " --output " + (dir / "eval_same").string());
  ASSERT_EQ(r.code, 0) << r.output;
  const auto j = nlohmann::json::parse(slurp(dir / "eval_same" / "report.json"));
  EXPECT_EQ(j["mean_psnr_t"], "inf");
  EXPECT_DOUBLE_EQ(j["mean_ssim_t"].get<double>(), 1.0);
  EXPECT_TRUE(fs::exists(dir / "eval_same" / "report.txt"));

  r = run("eval --rendered " + (dir / "render").string() + " --gt " + gt + " --output " +
          (dir / "eval").string());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(slurp(dir / "eval" / "report.txt").find("frame 6"), std::string::npos);

  const fs::path png = dir / "profile.png";
  r = run("profile --rendered " + (dir / "render").string() + " --row 4 --output " + png.string());
  ASSERT_EQ(r.code, 0) << r.output;
  const LdrImage prof = read_png8(png);
  EXPECT_EQ(prof.height(), 12);
  EXPECT_EQ(prof.width(), 32);
  EXPECT_EQ(run("profile --rendered " + (dir / "render").string() + " --row 4 --output " + png.string()).code, 2);
  EXPECT_EQ(run("profile --rendered " + (dir / "render").string() + " --row 31 --overwrite --output " +
                png.string())
                .code,
            3);
}
