#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "prnet/cli.hpp"
#include "prnet/image_io.hpp"
#include "test_util.hpp"

using namespace prnet;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "prnet");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / ("prnet_cli_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& f) const { return (path / f).string(); }
};

// 10 x 10 mask with `on` foreground pixels.
void write_mask(const std::string& path, std::size_t on, std::size_t size = 10) {
  Image8 m{size, size, 1, std::vector<std::uint8_t>(size * size, 0)};
  for (std::size_t k = 0; k < on; ++k) m.pixels[k] = 255;
  write_image(path, m);
}

// Bright square on a dark background, with its mask.
void write_pair(const TempDir& dir, const std::string& id, std::size_t size,
                std::size_t x0, std::size_t y0, std::size_t side) {
  Image8 img{size, size, 3, std::vector<std::uint8_t>(3 * size * size, 40)};
  Image8 mask{size, size, 1, std::vector<std::uint8_t>(size * size, 0)};
  for (std::size_t y = y0; y < y0 + side; ++y)
    for (std::size_t x = x0; x < x0 + side; ++x) {
      mask.pixels[y * size + x] = 255;
      for (std::size_t c = 0; c < 3; ++c) img.pixels[(y * size + x) * 3 + c] = 220;
    }
  write_image(dir / ("img/" + id + ".ppm"), img);
  write_image(dir / ("gt/" + id + ".pgm"), mask);
}

}  // namespace

TEST_CASE("usage errors exit 2") {
  auto r = cli({"eval", "--bogus"});
  CHECK(r.code == 2);
  CHECK(r.err.find("error") != std::string::npos);
  CHECK(r.err.find("--masks") != std::string::npos);
  CHECK(cli({}).code == 2);
  CHECK(cli({"frobnicate"}).code == 2);
  CHECK(cli({"split-ls"}).code == 2);
  CHECK(cli({"analyze-weights", "--checkpoint", "a", "--images", "b", "--masks", "c",
             "--out", "d", "--group-by", "colour"})
            .code == 2);
  auto help = cli({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("split-ls") != std::string::npos);
}

TEST_CASE("runtime failures exit 1") {
  auto r = cli({"train", "--config", "/nonexistent/prnet.cfg"});
  CHECK(r.code == 1);
  CHECK(r.err.find("cannot open config") != std::string::npos);
  CHECK(cli({"split-ls", "--masks", "/nonexistent"}).code == 1);
}

TEST_CASE("split-ls") {
  TempDir dir("split");
  fs::create_directories(dir / "gt");
  write_mask(dir / "gt/big.pgm", 50);
  write_mask(dir / "gt/mid.pgm", 20);
  write_mask(dir / "gt/tiny.pgm", 1);
  auto r = cli({"split-ls", "--masks", dir / "gt", "--out", dir / "ls"});
  CHECK(r.code == 0);
  CHECK(r.out == "L: 1\nneither: 1\nS: 1\n");
  std::ifstream l(dir / "ls_L.txt"), s(dir / "ls_S.txt"), n(dir / "ls_neither.txt");
  std::string id;
  std::getline(l, id);
  CHECK(id == "big");
  std::getline(s, id);
  CHECK(id == "tiny");
  std::getline(n, id);
  CHECK(id == "mid");
}

TEST_CASE("eval with perfect predictions") {
  TempDir dir("eval");
  fs::create_directories(dir / "gt");
  fs::create_directories(dir / "pred");
  for (std::size_t k = 0; k < 3; ++k) {
    const std::string id = "m" + std::to_string(k);
    write_mask(dir / ("gt/" + id + ".pgm"), 10 + 20 * k);
    write_mask(dir / ("pred/" + id + ".pgm"), 10 + 20 * k);
  }
  write_mask(dir / "pred/stray.pgm", 5);
  auto r = cli({"eval", "--masks", dir / "gt", "--predictions", dir / "pred", "--out",
                dir / "report"});
  CHECK(r.code == 0);
  std::ifstream js(dir / "report.json");
  const auto j = nlohmann::json::parse(js);
  CHECK(j["mae"].get<double>() == 0.0);
  CHECK(j["f_max"].get<double>() == doctest::Approx(1.0));
  CHECK(j["s_measure"].get<double>() == doctest::Approx(1.0));
  CHECK(j["unmatched"].get<std::size_t>() == 1);
  CHECK(fs::exists(dir / "report.csv"));
  CHECK(r.out.find("mae 0") != std::string::npos);

  CHECK(cli({"eval", "--masks", dir / "gt", "--out", dir / "x"}).code == 1);
}

TEST_CASE("train, predict, eval and analyze-weights") {
  TempDir dir("pipeline");
  fs::create_directories(dir / "img");
  fs::create_directories(dir / "gt");
  write_pair(dir, "a", 40, 4, 6, 20);
  write_pair(dir, "b", 32, 10, 10, 3);
  write_pair(dir, "c", 32, 2, 2, 12);
  write_pair(dir, "d", 36, 8, 4, 10);
  {
    std::ofstream cfg(dir / "run.cfg");
    cfg << "backbone_widths = 4,4,4,4,4\nunified_channels = 4\nreduction = 2\n"
        << "input_size = 32\nepochs = 2\nbatch = 2\n"
        << "train_images = " << (dir / "img") << "\ntrain_masks = " << (dir / "gt") << "\n";
  }
  auto t = cli({"train", "--config", dir / "run.cfg", "--checkpoint", dir / "m.ckpt",
                "--trace", dir / "trace.csv"});
  CHECK(t.code == 0);
  CHECK(t.out.find("training on 4 pairs") != std::string::npos);
  CHECK(fs::exists(dir / "m.ckpt"));
  std::ifstream trace(dir / "trace.csv");
  std::size_t lines = 0;
  for (std::string l; std::getline(trace, l);) ++lines;
  CHECK(lines == 1 + 2 * 2);

  auto again = cli({"train", "--config", dir / "run.cfg", "--checkpoint", dir / "m.ckpt",
                    "--resume"});
  CHECK(again.code == 0);
  CHECK(again.out.find("resuming at epoch 2") != std::string::npos);

  auto p = cli({"predict", "--checkpoint", dir / "m.ckpt", "--images", dir / "img", "--out",
                dir / "pred"});
  CHECK(p.code == 0);
  const auto a = read_image(dir / "pred/a.pgm");
  CHECK(a.width == 40);
  CHECK(a.height == 40);

  auto e = cli({"eval", "--checkpoint", dir / "m.ckpt", "--images", dir / "img", "--masks",
                dir / "gt", "--out", dir / "report"});
  CHECK(e.code == 0);
  auto from_files = cli({"eval", "--predictions", dir / "pred", "--masks", dir / "gt",
                         "--out", dir / "report2"});
  CHECK(from_files.code == 0);
  std::ifstream j1(dir / "report.json"), j2(dir / "report2.json");
  const auto r1 = nlohmann::json::parse(j1), r2 = nlohmann::json::parse(j2);
  CHECK(r1["images"] == 4);
  // the written maps are quantised to 8 bits
  CHECK(r1["mae"].get<double>() == doctest::Approx(r2["mae"].get<double>()).epsilon(0.01));

  auto w = cli({"analyze-weights", "--checkpoint", dir / "m.ckpt", "--images", dir / "img",
                "--masks", dir / "gt", "--out", dir / "w"});
  CHECK(w.code == 0);
  CHECK(fs::exists(dir / "w_per_image.csv"));
  CHECK(fs::exists(dir / "w_summary.csv"));
  CHECK(w.out.find("decoder.i1") != std::string::npos);
  auto wd = cli({"analyze-weights", "--checkpoint", dir / "m.ckpt", "--images", dir / "img",
                 "--masks", dir / "gt", "--group-by", "dataset", "--dataset", "toy",
                 "--out", dir / "w2"});
  CHECK(wd.code == 0);
  CHECK(wd.out.rfind("toy ", 0) == 0);
}

TEST_CASE("gradcheck subcommand") {
  auto r = cli({"gradcheck", "--seed", "2024"});
  CHECK(r.code == 0);
  CHECK(r.out.find("150/150 passed") != std::string::npos);
}
