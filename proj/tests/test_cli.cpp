#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>

#include "doctest.h"
#include "pulsemap/cli.hpp"
#include "pulsemap/dataset.hpp"
#include "pulsemap/image_io.hpp"
#include "pulsemap/signal.hpp"
#include "pulsemap/transform2d.hpp"

using namespace pulsemap;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_command(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("pulsemap_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path write_tone(const fs::path& path, std::size_t n, double fs_hz, double f) {
  Signal s;
  s.sample_rate_hz = fs_hz;
  for (std::size_t i = 0; i < n; ++i) s.samples.push_back(std::sin(2.0 * std::numbers::pi * f * double(i) / fs_hz));
  save_signal(path, s);
  return path;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

bool same_tree(const fs::path& a, const fs::path& b) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), a));
  std::size_t count_b = 0;
  for (const auto& e : fs::recursive_directory_iterator(b)) count_b += e.is_regular_file();
  if (files.size() != count_b) return false;
  for (const auto& f : files)
    if (!fs::exists(b / f) || slurp(a / f) != slurp(b / f)) return false;
  return !files.empty();
}

}  // namespace

TEST_CASE("transform") {
  const auto dir = scratch("transform");
  const auto sig = write_tone(dir / "s.txt", 512, 128.0, 4.0);

  SUBCASE("scalogram to PGM") {
    const auto r = run({"transform", "--method", "scalogram", "--in", sig.string(), "--out", (dir / "m.pgm").string()});
    CHECK(r.code == 0);
    const Matrix m = read_pgm(dir / "m.pgm");
    CHECK(m.cols() == 512);
    CHECK(m.maxCoeff() == 1.0);
    CHECK(m.minCoeff() == 0.0);
  }
  SUBCASE("spwvd on ten samples is a data error") {
    const auto tiny = write_tone(dir / "tiny.txt", 10, 128.0, 4.0);
    const auto r = run({"transform", "--method", "spwvd", "--in", tiny.string(), "--out", (dir / "x.pgm").string()});
    CHECK(r.code == 1);
    CHECK(r.err.find("DataError") != std::string::npos);
    CHECK_FALSE(fs::exists(dir / "x.pgm"));
  }
  SUBCASE("unknown method is a config error") {
    const auto r = run({"transform", "--method", "fourier", "--in", sig.string(), "--out", (dir / "x.pgm").string()});
    CHECK(r.code == 1);
    CHECK(r.err.find("ConfigError") != std::string::npos);
  }
  SUBCASE("missing input file") {
    const auto r = run({"transform", "--in", (dir / "absent.txt").string(), "--out", (dir / "x.pgm").string()});
    CHECK(r.code == 1);
  }
}

TEST_CASE("render output equals the quantized in-memory image") {
  const auto dir = scratch("render");
  const auto sig = write_tone(dir / "s.txt", 256, 64.0, 3.0);
  const auto r = run({"render", "--method", "toeplitz", "--in", sig.string(), "--out", (dir / "r.pgm").string(),
                      "--size", "40"});
  REQUIRE(r.code == 0);
  const Matrix disk = read_pgm(dir / "r.pgm");

  const Signal s = load_signal(sig, SignalFormat::HeaderedText);
  Segment seg;
  seg.samples = s.samples;
  seg.sample_rate_hz = s.sample_rate_hz;
  seg.duration_s = s.duration_s();
  seg = normalize_personal(seg, personal_range({seg}, 1000.0));
  PrepConfig prep;
  prep.method = MapKind::Toeplitz;
  const ImageTensor img = render_image(transform_segment(seg, prep), 40);
  REQUIRE(disk.rows() == 40);
  REQUIRE(disk.cols() == 40);
  for (std::size_t y = 0; y < 40; ++y)
    for (std::size_t x = 0; x < 40; ++x)
      CHECK(disk(Eigen::Index(y), Eigen::Index(x)) * 255.0 == double(quantize_unit(img.at(y, x, 0))));
}

TEST_CASE("usage errors") {
  CHECK(run({"frobnicate"}).code == 2);
  CHECK(run({}).code == 2);
  CHECK(run({"transform"}).code == 2);
  CHECK(run({"synth", "--out"}).code == 2);
  CHECK(run({"--help"}).code == 0);
}

TEST_CASE("synth is byte-for-byte reproducible") {
  const auto dir = scratch("synth");
  const std::vector<std::string> base = {"synth", "--subjects", "4", "--per-subject", "8", "--seed", "7",
                                         "--image-size", "32"};
  auto a = base, b = base, c = base;
  a.insert(a.end(), {"--out", (dir / "a").string()});
  b.insert(b.end(), {"--out", (dir / "b").string()});
  c[6] = "8";
  c.insert(c.end(), {"--out", (dir / "c").string()});
  REQUIRE(run(a).code == 0);
  REQUIRE(run(b).code == 0);
  REQUIRE(run(c).code == 0);
  CHECK(same_tree(dir / "a", dir / "b"));
  CHECK_FALSE(same_tree(dir / "a", dir / "c"));
  CHECK(fs::exists(dir / "a" / "s01" / "labels.csv"));
}

TEST_CASE("pretrain, resume, finetune and eval") {
  const auto dir = scratch("flow");
  const auto cfg = dir / "run.json";
  {
    std::ofstream(cfg) << R"({"preset": "desk", "image_size": 32, "total_steps": 4, "checkpoint_every": 2,
                              "base_lr": 0.002, "finetune_epochs": 1, "folds": 2})";
  }
  REQUIRE(run({"synth", "--out", (dir / "data").string(), "--subjects", "2", "--per-subject", "4", "--seed", "1",
               "--image-size", "32"})
              .code == 0);
  const auto d = (dir / "data").string();

  const auto full = run({"pretrain", "--config", cfg.string(), "--data", d, "--out", (dir / "full").string()});
  REQUIRE(full.code == 0);
  CHECK(full.out.find("step 4") != std::string::npos);
  const std::string trace = slurp(dir / "full" / "loss_trace.csv");
  CHECK(std::count(trace.begin(), trace.end(), '\n') == 5);

  SUBCASE("resuming from step 2 reproduces the uninterrupted run") {
    const auto r = run({"pretrain", "--config", cfg.string(), "--data", d, "--out", (dir / "resumed").string(),
                        "--resume", (dir / "full" / "step_2").string()});
    REQUIRE(r.code == 0);
    const std::string rest = slurp(dir / "resumed" / "loss_trace.csv");
    const auto tail = [](const std::string& s) { return s.substr(s.find("\n3,")); };
    CHECK(tail(rest) == tail(trace));
    for (const auto& e : fs::directory_iterator(dir / "full"))
      if (e.is_regular_file() && e.path().filename() != "loss_trace.csv")
        CHECK(slurp(e.path()) == slurp(dir / "resumed" / e.path().filename()));
  }

  SUBCASE("finetune and eval") {
    const auto ft = run({"finetune", "--data", d, "--checkpoint", (dir / "full").string(), "--out",
                         (dir / "metrics.json").string(), "--save-model", (dir / "tuned").string()});
    REQUIRE(ft.code == 0);
    CHECK(slurp(dir / "metrics.json").find("\"accuracy\"") != std::string::npos);
    const auto ev = run({"eval", "--data", d, "--checkpoint", (dir / "tuned").string(), "--axis", "arousal"});
    CHECK(ev.code == 0);
    CHECK(ev.out.find("\"confusion\"") != std::string::npos);
  }

  SUBCASE("a bad config value is reported as a config error") {
    const auto r = run({"pretrain", "--config", cfg.string(), "--data", d, "--out", (dir / "x").string(),
                        "--batch-size", "3"});
    CHECK(r.code == 1);
    CHECK(r.err.find("ConfigError") != std::string::npos);
  }
}
