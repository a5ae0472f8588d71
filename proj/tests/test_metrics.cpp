#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "latseg/metrics.hpp"

using namespace latseg;
using namespace latseg::metrics;

namespace {

Mask from_bits(int h, int w, std::initializer_list<int> on) {
  Mask m(h, w);
  for (int i : on) m.pixels[std::size_t(i)] = 1;
  return m;
}

Tensor grid(int h, int w, double f(int, int)) {
  Tensor t({1, 1, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) t.at(0, 0, y, x) = float(f(y, x));
  return t;
}

}  // namespace

TEST_CASE("dice and iou examples") {
  const Mask a = from_bits(4, 4, {0, 1, 2, 3});
  const Mask b = from_bits(4, 4, {2, 3, 4, 5});
  const Mask c = from_bits(4, 4, {8, 9});
  CHECK(dice(a, a) == 1.0);
  CHECK(iou(a, a) == 1.0);
  CHECK(dice(a, c) == 0.0);
  CHECK(dice(a, b) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(iou(a, b) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(dice(Mask(4, 4), Mask(4, 4)) == 1.0);
  CHECK(iou(Mask(4, 4), Mask(4, 4)) == 1.0);
  CHECK_THROWS(dice(a, Mask(2, 2)));
  Mask bad = a;
  bad.pixels[0] = 2;
  CHECK_THROWS(iou(bad, a));
}

TEST_CASE("dice and iou against brute-force counting") {
  Rng rng(17);
  for (int trial = 0; trial < 1000; ++trial) {
    Mask a(8, 8), b(8, 8);
    const unsigned density = 1 + unsigned(rng() % 7);
    for (auto& p : a.pixels) p = rng() % 8 < density;
    for (auto& p : b.pixels) p = rng() % 8 < density;
    int inter = 0, uni = 0, sa = 0, sb = 0;
    for (int i = 0; i < 64; ++i) {
      inter += a.pixels[i] && b.pixels[i];
      uni += a.pixels[i] || b.pixels[i];
      sa += a.pixels[i];
      sb += b.pixels[i];
    }
    const double d = sa + sb == 0 ? 1.0 : 2.0 * inter / (sa + sb);
    const double j = uni == 0 ? 1.0 : double(inter) / uni;
    REQUIRE(std::abs(dice(a, b) - d) < 1e-12);
    REQUIRE(std::abs(iou(a, b) - j) < 1e-12);
    CHECK(std::abs(dice(a, b) - 2 * iou(a, b) / (1 + iou(a, b))) < 1e-12);
    CHECK(dice(a, b) == dice(b, a));
    if (uni > 0) CHECK(dice(a, b) >= iou(a, b));
  }
}

TEST_CASE("psnr examples") {
  const Tensor x = grid(8, 8, [](int y, int x) { return 0.05 * ((x + y) % 10); });
  CHECK(psnr(x, x) == 100.0);
  Tensor shifted = x;
  for (auto& v : shifted.vec()) v += 0.1f;
  CHECK(psnr(x, shifted) == doctest::Approx(20.0).epsilon(1e-5));
  CHECK(psnr(Tensor({1, 1, 4, 4}), Tensor({1, 1, 4, 4}, 1.0f)) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(psnr(shifted, x) == psnr(x, shifted));
  CHECK_THROWS(psnr(x, Tensor({1, 1, 4, 4})));
}

TEST_CASE("ssim examples") {
  const Tensor x = grid(16, 16, [](int y, int x) { return ((y * 3 + x * 5) % 7) < 3 ? 0.9 : 0.1; });
  CHECK(ssim(x, x) == doctest::Approx(1.0).epsilon(1e-12));

  Tensor inv = x;
  for (auto& v : inv.vec()) v = 1.0f - v;
  // Reference: skimage structural_similarity(gaussian_weights=True, sigma=1.5,
  // use_sample_covariance=False, data_range=1).
  CHECK(ssim(x, inv) == doctest::Approx(-0.9686383297506622).epsilon(1e-5));
  CHECK(ssim(x, inv) < 0.0);

  const Tensor a = grid(16, 16, [](int y, int x) { return ((y * 7 + x * 13) % 17) / 16.0; });
  const Tensor b = grid(16, 16, [](int y, int x) { return ((y * 5 + x * 3) % 11) / 10.0; });
  CHECK(ssim(a, b) == doctest::Approx(0.1894089836486372).epsilon(1e-5));
  CHECK(ssim(b, a) == doctest::Approx(ssim(a, b)).epsilon(1e-12));
  const Tensor c = grid(12, 20, [](int y, int x) { return ((y * 7 + x * 13) % 17) / 16.0; });
  const Tensor d = grid(12, 20, [](int y, int x) { return ((y * 5 + x * 3) % 11) / 10.0; });
  CHECK(ssim(c, d) == doctest::Approx(-0.0327094721764407).epsilon(1e-5));

  const double c1 = 0.3, c2 = 0.7, C1 = 1e-4;
  const double closed = (2 * c1 * c2 + C1) / (c1 * c1 + c2 * c2 + C1);
  CHECK(ssim(Tensor({1, 1, 12, 12}, float(c1)), Tensor({1, 1, 12, 12}, float(c2))) ==
        doctest::Approx(closed).epsilon(1e-6));
  CHECK_THROWS(ssim(Tensor({1, 1, 8, 8}), Tensor({1, 1, 8, 8})));
}

TEST_CASE("gaussian window is normalized and symmetric") {
  const auto w = gaussian_window(11, 1.5);
  double s = 0;
  for (double v : w) s += v;
  CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
  for (int i = 0; i < 5; ++i) CHECK(w[i] == w[10 - i]);
}

TEST_CASE("report aggregation and csv") {
  const Mask a = from_bits(4, 4, {0, 1, 2, 3}), b = from_bits(4, 4, {2, 3, 4, 5});
  // Hand-computed: sample 1 dice 0.5, iou 1/3; sample 2 identical masks.
  const auto report = summarize({compare_masks("one", a, b), compare_masks("two", a, a)});
  CHECK(report.dice == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(report.iou == doctest::Approx((1.0 / 3.0 + 1.0) / 2).epsilon(1e-15));
  CHECK(std::isnan(report.per_sample[0].ssim));

  const auto path = std::filesystem::temp_directory_path() / "latseg_metrics.csv";
  write_csv(path, report, "abc");
  std::ifstream in(path);
  std::string l1, l2, l3, l4, l5;
  std::getline(in, l1), std::getline(in, l2), std::getline(in, l3), std::getline(in, l4), std::getline(in, l5);
  CHECK(l1 == "# config_hash: abc");
  CHECK(l2 == "sample_id,dice,iou,ssim,psnr");
  CHECK(l3.rfind("one,", 0) == 0);
  CHECK(l5.rfind("mean,", 0) == 0);
}
