#include <doctest.h>

#include <cmath>
#include <limits>

#include "latseg/vq.hpp"

using namespace latseg;
using namespace latseg::vq;

namespace {

Codebook codebook_of(std::vector<float> values, int k, int d) { return Codebook(Tensor({k, d, 1, 1}, std::move(values))); }

int brute_nearest(const Codebook& cb, const Tensor& z, int n, int y, int x) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int k = 0; k < cb.size(); ++k) {
    double d = 0;
    for (int c = 0; c < cb.dim(); ++c) {
      const double e = double(z.at(n, c, y, x)) - cb.entry(k)[c];
      d += e * e;
    }
    if (d < best_d) best_d = d, best = k;
  }
  return best;
}

// Relative error of an analytic gradient against central differences of f.
template <typename T, typename F>
double fd_error(BasicTensor<T>& x, const BasicTensor<T>& analytic, F f, double h) {
  double worst = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T keep = x[i];
    x[i] = static_cast<T>(keep + h);
    const double fp = f();
    x[i] = static_cast<T>(keep - h);
    const double fm = f();
    x[i] = keep;
    const double fd = (fp - fm) / (2 * h);
    const double scale = std::max({std::abs(fd), std::abs(double(analytic[i])), 1e-3});
    worst = std::max(worst, std::abs(fd - double(analytic[i])) / scale);
  }
  return worst;
}

}  // namespace

TEST_CASE("quantize examples") {
  const auto cb = codebook_of({0, 0, 1, 1}, 2, 2);
  Tensor z({1, 2, 1, 1}, std::vector<float>{0.9f, 0.8f});
  const auto code = quantize(z, cb);
  CHECK(code.indices == std::vector<int>{1});
  CHECK(code.quantized[0] == 1.0f);
  CHECK(code.quantized[1] == 1.0f);

  Tensor exact({1, 2, 1, 1}, std::vector<float>{0, 0});
  CHECK(quantize(exact, cb).indices == std::vector<int>{0});
  const auto again = quantize(code.quantized, cb);
  CHECK(again.quantized == code.quantized);
  CHECK(again.indices == code.indices);

  // Equidistant: lowest index wins.
  Tensor mid({1, 2, 1, 1}, std::vector<float>{0.5f, 0.5f});
  CHECK(quantize(mid, cb).indices == std::vector<int>{0});
  CHECK_THROWS(quantize(Tensor({1, 3, 1, 1}), cb));
}

TEST_CASE("quantize agrees with exhaustive search") {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const int k = 2 + int(rng() % 63), d = 1 + int(rng() % 8);
    Codebook cb(Tensor(randn<float>({k, d, 1, 1}, rng)));
    const Tensor z = randn<float>({2, d, 5, 4}, rng);
    const auto code = quantize(z, cb);
    for (int n = 0; n < 2; ++n)
      for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 4; ++x) {
          const int idx = code.indices[(std::size_t(n) * 5 + y) * 4 + x];
          REQUIRE(idx == brute_nearest(cb, z, n, y, x));
          for (int c = 0; c < d; ++c) CHECK(code.quantized.at(n, c, y, x) == cb.entry(idx)[c]);
        }
    const auto twice = quantize(code.quantized, cb);
    CHECK(twice.quantized == code.quantized);
  }
}

TEST_CASE("gather_entries rebuilds the quantized grid") {
  Rng rng(2);
  Codebook cb(Tensor(randn<float>({8, 3, 1, 1}, rng)));
  const auto code = quantize(randn<float>({2, 3, 4, 4}, rng), cb);
  CHECK(gather_entries(cb, code.indices, 2, 4, 4) == code.quantized);
}

TEST_CASE("vq loss examples") {
  const TensorD entries({1, 1, 1, 1}, std::vector<double>{1.0});
  const TensorD z({1, 1, 1, 1}, std::vector<double>{0.5});
  CHECK(codebook_loss(z, entries, {0}) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(commitment_loss(z, entries, {0}, 0.25) == doctest::Approx(0.0625).epsilon(1e-15));
  const TensorD on({1, 1, 1, 1}, std::vector<double>{1.0});
  CHECK(codebook_loss(on, entries, {0}) == 0.0);
  CHECK(commitment_loss(on, entries, {0}, 0.25) == 0.0);
  CHECK(mse_loss(z, z) == 0.0);
  CHECK_THROWS(codebook_loss(z, entries, {1}));
}

TEST_CASE("wce examples") {
  const TensorD target({1, 1, 2, 1}, std::vector<double>{1, 0});
  const TensorD uniform({1, 2, 2, 1}, std::vector<double>{0, 0, 0, 0});
  for (double w : {1.0, 5.0, 50.0}) CHECK(wce_loss(uniform, target, w) == doctest::Approx(std::log(2.0)).epsilon(1e-14));

  // Positive pixel at probability 0.9: logits (0, ln 9).
  const TensorD confident({1, 2, 2, 1}, std::vector<double>{0, 0, std::log(9.0), 0});
  const double expect = (5 * -std::log(0.9) + -std::log(0.5)) / 6;
  CHECK(wce_loss(confident, target, 5.0) == doctest::Approx(expect).epsilon(1e-14));

  const TensorD perfect({1, 2, 2, 1}, std::vector<double>{-40, 40, 40, -40});
  CHECK(wce_loss(perfect, target, 5.0) < 1e-15);

  CHECK_THROWS(wce_loss(uniform, TensorD({1, 1, 2, 1}, std::vector<double>{0.5, 0}), 5.0));
  CHECK_THROWS(wce_loss(uniform, target, 0.5));
  CHECK_THROWS(wce_loss(TensorD({1, 2, 2, 1}, std::vector<double>{NAN, 0, 0, 0}), target, 5.0));
}

TEST_CASE("wce with unit weight is plain cross entropy") {
  Rng rng(30);
  const TensorD logits = randn<double>({2, 2, 3, 3}, rng);
  TensorD target({2, 1, 3, 3});
  for (auto& v : target.vec()) v = double(rng() % 2);
  double ce = 0;
  for (int n = 0; n < 2; ++n)
    for (int p = 0; p < 9; ++p) {
      const double l0 = logits[(n * 2) * 9 + p], l1 = logits[(n * 2 + 1) * 9 + p];
      const double y = target[n * 9 + p];
      ce += -std::log(std::exp(y ? l1 : l0) / (std::exp(l0) + std::exp(l1)));
    }
  CHECK(std::abs(wce_loss(logits, target, 1.0) - ce / 18) < 1e-12);
}

TEST_CASE("loss gradients match central differences") {
  Rng rng(31);
  SUBCASE("double") {
    TensorD logits = randn<double>({2, 2, 3, 3}, rng), target({2, 1, 3, 3});
    for (auto& v : target.vec()) v = double(rng() % 2);
    TensorD g;
    wce_loss(logits, target, 50.0, &g);
    CHECK(fd_error(logits, g, [&] { return wce_loss(logits, target, 50.0); }, 1e-6) < 1e-6);

    TensorD pred = randn<double>({1, 3, 4, 4}, rng), ref = randn<double>({1, 3, 4, 4}, rng);
    mse_loss(pred, ref, &g);
    CHECK(fd_error(pred, g, [&] { return mse_loss(pred, ref); }, 1e-6) < 1e-6);

    TensorD z = randn<double>({2, 3, 2, 2}, rng), entries = randn<double>({5, 3, 1, 1}, rng);
    std::vector<int> idx(8);
    for (auto& i : idx) i = int(rng() % 5);
    TermGradients<double> cg, mg;
    codebook_loss(z, entries, idx, &cg);
    commitment_loss(z, entries, idx, 0.25, &mg);
    CHECK(fd_error(entries, cg.entries, [&] { return codebook_loss(z, entries, idx); }, 1e-6) < 1e-6);
    CHECK(fd_error(z, mg.encoder, [&] { return commitment_loss(z, entries, idx, 0.25); }, 1e-6) < 1e-6);
  }
  SUBCASE("float") {
    Tensor logits = randn<float>({1, 2, 3, 3}, rng), target({1, 1, 3, 3});
    for (auto& v : target.vec()) v = float(rng() % 2);
    Tensor g;
    wce_loss(logits, target, 5.0, &g);
    CHECK(fd_error(logits, g, [&] { return wce_loss(logits, target, 5.0); }, 1e-2) < 1e-3);

    Tensor pred = randn<float>({1, 2, 3, 3}, rng), ref = randn<float>({1, 2, 3, 3}, rng);
    mse_loss(pred, ref, &g);
    CHECK(fd_error(pred, g, [&] { return mse_loss(pred, ref); }, 1e-2) < 1e-3);

    Tensor z = randn<float>({1, 2, 2, 2}, rng), entries = randn<float>({3, 2, 1, 1}, rng);
    std::vector<int> idx{0, 1, 2, 1};
    TermGradients<float> cg, mg;
    codebook_loss(z, entries, idx, &cg);
    commitment_loss(z, entries, idx, 0.25, &mg);
    CHECK(fd_error(entries, cg.entries, [&] { return codebook_loss(z, entries, idx); }, 1e-2) < 1e-3);
    CHECK(fd_error(z, mg.encoder, [&] { return commitment_loss(z, entries, idx, 0.25); }, 1e-2) < 1e-3);
  }
}

TEST_CASE("stop-gradient separates parameter groups") {
  Rng rng(32);
  TensorD z = randn<double>({1, 2, 2, 2}, rng), entries = randn<double>({3, 2, 1, 1}, rng);
  const std::vector<int> idx{0, 2, 1, 2};
  TermGradients<double> cg, mg;
  codebook_loss(z, entries, idx, &cg);
  commitment_loss(z, entries, idx, 0.25, &mg);
  for (double v : cg.encoder.vec()) CHECK(v == 0.0);
  for (double v : mg.entries.vec()) CHECK(v == 0.0);
  bool nonzero = false;
  for (double v : cg.entries.vec()) nonzero |= v != 0.0;
  CHECK(nonzero);

  // Perturbing entries changes the codebook term's entry gradient only.
  TensorD moved = entries;
  moved[0] += 0.3;
  TermGradients<double> cg2, mg2;
  codebook_loss(z, moved, idx, &cg2);
  commitment_loss(z, moved, idx, 0.25, &mg2);
  CHECK(cg2.entries != cg.entries);
  CHECK(cg2.encoder == cg.encoder);
  // And perturbing z changes the commit term's encoder gradient only.
  TensorD z2 = z;
  z2[0] += 0.3;
  TermGradients<double> mg3;
  commitment_loss(z2, entries, idx, 0.25, &mg3);
  CHECK(mg3.encoder != mg.encoder);
  CHECK(mg3.entries == mg.entries);
}
