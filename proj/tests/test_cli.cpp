#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "latseg/commands.hpp"
#include "latseg/image_io.hpp"

using namespace latseg;
namespace fs = std::filesystem;

namespace {

fs::path fresh(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("latseg_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

Mask bits(std::initializer_list<int> on) {
  Mask m(4, 4);
  for (int i : on) m.pixels[std::size_t(i)] = 1;
  return m;
}

std::string mean_row(const fs::path& csv) {
  std::ifstream in(csv);
  std::string line, last;
  while (std::getline(in, line))
    if (line.rfind("mean,", 0) == 0) last = line;
  return last;
}

std::vector<double> fields(const std::string& row) {
  std::vector<double> out;
  std::stringstream ss(row);
  std::string f;
  std::getline(ss, f, ',');
  while (std::getline(ss, f, ',')) out.push_back(f == "nan" ? NAN : std::stod(f));
  return out;
}

}  // namespace

TEST_CASE("evaluate: identical, swapped and hand-computed cases") {
  const fs::path root = fresh("eval");
  fs::create_directories(root / "pred");
  fs::create_directories(root / "truth");
  io::write_pbm(root / "pred" / "a_consensus.pbm", bits({0, 1, 2, 3}));
  io::write_pbm(root / "pred" / "b_consensus.pbm", bits({5}));
  io::write_pbm(root / "truth" / "a.pbm", bits({2, 3, 4, 5}));
  io::write_pbm(root / "truth" / "b.pbm", bits({5, 6, 9}));
  // segment writes confidence maps alongside the consensus masks.
  fs::copy_file(root / "pred" / "a_consensus.pbm", root / "pred" / "a_confidence.pgm");

  CHECK(cli::evaluate(root / "truth", root / "truth", root / "same.csv") == 0);
  const auto same = fields(mean_row(root / "same.csv"));
  CHECK(same[0] == 1.0);
  CHECK(same[1] == 1.0);

  REQUIRE(cli::evaluate(root / "pred", root / "truth", root / "fwd.csv", "h") == 0);
  REQUIRE(cli::evaluate(root / "truth", root / "pred", root / "rev.csv") == 0);
  const auto fwd = fields(mean_row(root / "fwd.csv")), rev = fields(mean_row(root / "rev.csv"));
  // a: dice 4/8, iou 2/6; b: dice 2/4, iou 1/3.
  CHECK(fwd[0] == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(fwd[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
  CHECK(rev[0] == fwd[0]);
  CHECK(rev[1] == fwd[1]);
  std::ifstream in(root / "fwd.csv");
  std::string first;
  std::getline(in, first);
  CHECK(first == "# config_hash: h");

  io::write_pbm(root / "pred" / "c.pbm", bits({1}));
  CHECK(cli::evaluate(root / "pred", root / "truth", root / "bad.csv") != 0);
}

TEST_CASE("context precedence and validation") {
  const fs::path root = fresh("ctx");
  setenv("LATSEG_OUTPUT_DIR", (root / "env").c_str(), 1);
  auto ctx = cli::make_context({});
  CHECK(ctx.output_dir == root / "env");
  cli::CommonOptions o;
  o.output_dir = root / "flag";
  o.seed = 9;
  ctx = cli::make_context(o);
  CHECK(ctx.output_dir == root / "flag");
  CHECK(ctx.config.training.seed == 9);
  CHECK(cli::make_context(o, true).config.dataset.synthetic.seed == 9);
  unsetenv("LATSEG_OUTPUT_DIR");

  o.device = "cuda:0";
  CHECK_THROWS_AS(cli::make_context(o), std::invalid_argument);
  setenv("LATSEG_DEVICE", "tpu", 1);
  CHECK_THROWS(cli::make_context({}));
  unsetenv("LATSEG_DEVICE");

  std::ofstream(root / "bad.json") << R"({"training": {"sed": 1}})";
  cli::CommonOptions b;
  b.config_path = root / "bad.json";
  CHECK_THROWS(cli::make_context(b));
}

TEST_CASE("missing prerequisites fail with a message") {
  const fs::path root = fresh("missing");
  cli::CommonOptions o;
  o.output_dir = root;
  const auto ctx = cli::make_context(o);
  try {
    cli::train_diffusion(ctx, {}, false);
    FAIL("expected an exception");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("train-vae") != std::string::npos);
  }
  CHECK_THROWS(cli::sweep_samples(ctx, {}, false));
}

TEST_CASE("sweep plot is written") {
  const fs::path root = fresh("plot");
  cli::plot_sweep(root / "s.png", {1, 2, 3, 5}, {0.7, 0.75, 0.78, 0.8});
  CHECK(fs::file_size(root / "s.png") > 100);
}
