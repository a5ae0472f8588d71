// Acceptance criteria 1-12. Prints one PASS/FAIL line per criterion and
// exits nonzero if any fails. Criteria 7-12 train toy models from the
// shipped presets and take a while on CPU.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "latseg/checkpoint.hpp"
#include "latseg/commands.hpp"
#include "latseg/diffusion.hpp"
#include "latseg/image_io.hpp"
#include "latseg/metrics.hpp"
#include "latseg/vq.hpp"

using namespace latseg;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const fs::path kWork = fs::absolute("acceptance_runs");
const fs::path kConfigs = LATSEG_CONFIG_DIR;

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Runs the CLI; output goes to <log>.
void run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(LATSEG_CLI) + " " + args + " > " + log.string() + " 2>&1";
  if (std::system(cmd.c_str()) != 0) throw std::runtime_error("command failed (see " + log.string() + "): " + cmd);
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("missing " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (header) {
      header = false;
      continue;
    }
    std::vector<std::string> row;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) row.push_back(f);
    rows.push_back(row);
  }
  return rows;
}

template <typename T>
double median(std::vector<T> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? double(v[n / 2]) : 0.5 * (double(v[n / 2 - 1]) + double(v[n / 2]));
}

// ---------------------------------------------------------------- 1-6

Outcome schedule_identity() {
  const auto s = diffusion::NoiseSchedule::build(1000, 1e-4, 0.02);
  long double product = 1.0L;
  double worst = 0.0;
  for (int t = 1; t <= 1000; ++t) {
    product *= 1.0L - (1e-4L + (0.02L - 1e-4L) * (t - 1) / 999.0L);
    worst = std::max(worst, double(std::fabs((s.gamma(t) - product) / product)));
  }
  return {worst < 1e-12, "max relative error " + fmt("%.3e", worst)};
}

Outcome forward_agreement() {
  const auto s = diffusion::NoiseSchedule::build(1000, 1e-4, 0.02);
  const int N = 10000;
  Rng rng(2024);
  bool ok = true;
  double worst_mean = 0, worst_var = 0;
  for (int g = 0; g < 3; ++g) {
    const TensorD clean = randn<double>({1, 1, 3, 3}, rng);
    for (int t : {1, 2, 5}) {
      std::vector<double> sum(clean.size(), 0.0), sq(clean.size(), 0.0);
      for (int k = 0; k < N; ++k) {
        diffusion::DiffusionState<double> st{clean, 0, {}};
        for (int i = 0; i < t; ++i) st = diffusion::forward_step(st, s, rng);
        for (std::size_t p = 0; p < clean.size(); ++p) sum[p] += st.value[p], sq[p] += st.value[p] * st.value[p];
      }
      const double gam = s.gamma(t), tol = 4 * std::sqrt((1 - gam) / N);
      for (std::size_t p = 0; p < clean.size(); ++p) {
        const double mean = sum[p] / N, var = sq[p] / N - mean * mean;
        const double dm = std::abs(mean - std::sqrt(gam) * clean[p]) / tol;
        const double dv = std::abs(var - (1 - gam)) / (1 - gam);
        worst_mean = std::max(worst_mean, dm);
        worst_var = std::max(worst_var, dv);
        ok &= dm <= 1.0 && dv <= 0.05;
      }
    }
  }
  return {ok, "worst mean deviation " + fmt("%.2f", worst_mean) + " of tolerance, worst variance error " +
                  fmt("%.2f%%", 100 * worst_var)};
}

Outcome inversion() {
  const auto s = diffusion::NoiseSchedule::build(1000, 1e-4, 0.02);
  Rng rng(3);
  const TensorD clean = randn<double>({2, 3, 8, 8}, rng), eps = randn<double>(clean.shape(), rng);
  double worst = 0;
  for (int t : {1, 500, 1000}) {
    const auto x0 = diffusion::predict_x0(diffusion::sample_noisy(clean, t, s, eps), eps, s);
    for (std::size_t i = 0; i < clean.size(); ++i) worst = std::max(worst, std::abs(x0[i] - clean[i]));
  }
  return {worst < 1e-5, "max abs error " + fmt("%.3e", worst)};
}

Outcome quantizer_oracle() {
  Rng rng(4);
  int mismatches = 0, idempotence_failures = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int k = 2 + int(rng() % 63), d = 1 + int(rng() % 8);
    vq::Codebook cb(randn<float>({k, d, 1, 1}, rng));
    const Tensor z = randn<float>({1, d, 6, 6}, rng);
    const auto code = vq::quantize(z, cb);
    for (int p = 0; p < 36; ++p) {
      int best = 0;
      double best_d = INFINITY;
      for (int e = 0; e < k; ++e) {
        double dist = 0;
        for (int c = 0; c < d; ++c) {
          const double diff = double(z[std::size_t(c) * 36 + p]) - cb.entry(e)[c];
          dist += diff * diff;
        }
        if (dist < best_d) best_d = dist, best = e;
      }
      mismatches += code.indices[p] != best;
    }
    const auto again = vq::quantize(code.quantized, cb);
    idempotence_failures += !(again.quantized == code.quantized && again.indices == code.indices);
  }
  return {mismatches == 0 && idempotence_failures == 0,
          std::to_string(mismatches) + " index mismatches, " + std::to_string(idempotence_failures) +
              " idempotence failures over 100 instances"};
}

template <typename T, typename F>
double fd_rel_error(BasicTensor<T>& x, const BasicTensor<T>& g, F f, double h) {
  double worst = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T keep = x[i];
    x[i] = T(keep + h);
    const double fp = f();
    x[i] = T(keep - h);
    const double fm = f();
    x[i] = keep;
    const double fd = (fp - fm) / (2 * h);
    worst = std::max(worst, std::abs(fd - double(g[i])) / std::max({std::abs(fd), std::abs(double(g[i])), 1e-3}));
  }
  return worst;
}

template <typename T>
std::pair<double, bool> gradient_suite(Rng& rng, double h) {
  double worst = 0;
  BasicTensor<T> logits = randn<T>({2, 2, 4, 4}, rng), target({2, 1, 4, 4}), g;
  for (auto& v : target.vec()) v = T(rng() % 2);
  for (double w : {1.0, 5.0, 50.0}) {
    vq::wce_loss(logits, target, w, &g);
    worst = std::max(worst, fd_rel_error(logits, g, [&] { return vq::wce_loss(logits, target, w); }, h));
  }
  BasicTensor<T> pred = randn<T>({1, 3, 4, 4}, rng), ref = randn<T>({1, 3, 4, 4}, rng);
  vq::mse_loss(pred, ref, &g);
  worst = std::max(worst, fd_rel_error(pred, g, [&] { return vq::mse_loss(pred, ref); }, h));

  BasicTensor<T> z = randn<T>({2, 3, 3, 3}, rng), entries = randn<T>({6, 3, 1, 1}, rng);
  std::vector<int> idx(18);
  for (auto& i : idx) i = int(rng() % 6);
  vq::TermGradients<T> cb, cm;
  vq::codebook_loss(z, entries, idx, &cb);
  vq::commitment_loss(z, entries, idx, 0.25, &cm);
  worst = std::max(worst, fd_rel_error(entries, cb.entries, [&] { return vq::codebook_loss(z, entries, idx); }, h));
  worst = std::max(worst, fd_rel_error(z, cm.encoder, [&] { return vq::commitment_loss(z, entries, idx, 0.25); }, h));

  // Stop-gradient: each term's gradient w.r.t. the other group is zero, and
  // finite differences through the frozen argument are what sg() discards.
  bool separated = true;
  for (auto v : cb.encoder.vec()) separated &= v == T(0);
  for (auto v : cm.entries.vec()) separated &= v == T(0);
  return {worst, separated};
}

Outcome gradient_checks() {
  Rng rng(5);
  const auto [f32, sep32] = gradient_suite<float>(rng, 1e-2);
  const auto [f64, sep64] = gradient_suite<double>(rng, 1e-6);
  return {f32 < 1e-3 && f64 < 1e-6 && sep32 && sep64,
          "float " + fmt("%.2e", f32) + ", double " + fmt("%.2e", f64) +
              (sep32 && sep64 ? ", groups separated" : ", stop-gradient leak")};
}

Outcome metrics_oracle() {
  Rng rng(6);
  double worst = 0, identity = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    Mask a(8, 8), b(8, 8);
    for (auto& p : a.pixels) p = rng() % 2;
    for (auto& p : b.pixels) p = rng() % 2;
    int inter = 0, uni = 0, sa = 0, sb = 0;
    for (int i = 0; i < 64; ++i) {
      inter += a.pixels[i] & b.pixels[i];
      uni += a.pixels[i] | b.pixels[i];
      sa += a.pixels[i];
      sb += b.pixels[i];
    }
    const double d = sa + sb ? 2.0 * inter / (sa + sb) : 1.0, j = uni ? double(inter) / uni : 1.0;
    worst = std::max({worst, std::abs(metrics::dice(a, b) - d), std::abs(metrics::iou(a, b) - j)});
    const double i = metrics::iou(a, b);
    identity = std::max(identity, std::abs(metrics::dice(a, b) - 2 * i / (1 + i)));
  }
  Tensor x({1, 1, 16, 16});
  for (auto& v : x.vec()) v = float(rng() % 256) / 255.f;
  const double self = metrics::ssim(x, x);
  const double cap = metrics::psnr(x, x);
  const bool ok = worst <= 1e-12 && identity <= 1e-12 && std::abs(self - 1.0) < 1e-12 && cap == 100.0;
  return {ok, "counting error " + fmt("%.1e", worst) + ", identity error " + fmt("%.1e", identity) + ", ssim(x,x)=" +
                  fmt("%.12f", self) + ", psnr cap " + fmt("%.0f", cap)};
}

// ---------------------------------------------------------------- 7

double mask_roundtrip_dice(const cli::Context& ctx) {
  const auto ck = ckpt::load(cli::vae_dir(ctx, "mask") / "checkpoint.ckpt");
  autoencoder::VqAutoencoder model(ctx.config.mask_autoencoder, 0);
  model.load_state(ckpt::strip_prefix(ck.tensors, "model."));
  const auto test = data::load_manifest(cli::data_dir(ctx) / "manifest.jsonl", data::Split::test);
  double sum = 0;
  for (const auto& s : test) {
    const Mask truth = data::training_target(s, ctx.config.dataset.target_policy);
    sum += metrics::dice(model.to_masks(model.reconstruct(mask_to_tensor(truth))).front(), truth);
  }
  return sum / double(test.size());
}

Outcome wce_vs_mse() {
  cli::CommonOptions o;
  o.config_path = kConfigs / "toy_tiny.json";
  o.output_dir = kWork / "tiny_wce";
  auto wce = cli::make_context(o);
  o.output_dir = kWork / "tiny_mse";
  auto mse = cli::make_context(o);
  mse.config.mask_autoencoder.mode = autoencoder::Mode::mask_mse;
  mse.config_hash = config::hash(mse.config);
  if (wce.config.mask_autoencoder.mode != autoencoder::Mode::mask_wce || wce.config.mask_autoencoder.pos_weight != 50.0 ||
      !wce.config.dataset.synthetic.tiny_mode || wce.config.dataset.resolution != 128)
    return {false, "toy_tiny.json is not a 128x128 tiny-mode WCE(50) profile"};

  std::map<std::string, double> dice;
  for (auto* ctx : {&wce, &mse}) {
    fs::remove_all(ctx->output_dir);
    cli::generate_synthetic(*ctx);
    cli::train_vae(*ctx, "mask", {});
    dice[autoencoder::to_string(ctx->config.mask_autoencoder.mode)] = mask_roundtrip_dice(*ctx);
  }
  std::ofstream csv(kWork / "tiny_wce_vs_mse.csv");
  csv << "# config_hash: " << wce.config_hash << "\nmode,pos_weight,dice\n"
      << "mask_wce,50," << dice["mask_wce"] << "\nmask_mse,1," << dice["mask_mse"] << "\n";
  const double gap = 100 * (dice["mask_wce"] - dice["mask_mse"]);
  return {gap >= 2.0, "WCE(50) Dice " + fmt("%.4f", dice["mask_wce"]) + " vs MSE " + fmt("%.4f", dice["mask_mse"]) +
                          " (" + fmt("%+.1f", gap) + " points)"};
}

// ---------------------------------------------------------------- 8-10

const fs::path kToy = kWork / "toy_blobs";

std::string toy_flags() { return "--config " + (kConfigs / "toy_blobs.json").string() + " --output-dir " + kToy.string(); }

Outcome toy_end_to_end() {
  fs::remove_all(kToy);
  fs::create_directories(kToy);
  const auto cfg = config::load(kConfigs / "toy_blobs.json");
  if (cfg.dataset.resolution != 64 || cfg.mask_autoencoder.levels != 2 || cfg.image_autoencoder.levels != 2)
    return {false, "toy_blobs.json is not a 64x64, levels=2 profile"};
  run_cli("generate-synthetic " + toy_flags(), kToy / "generate.log");
  run_cli("train-vae --target mask " + toy_flags(), kToy / "train_mask.log");
  run_cli("train-vae --target image " + toy_flags(), kToy / "train_image.log");
  run_cli("train-diffusion " + toy_flags(), kToy / "train_diffusion.log");
  run_cli("segment --n 5 " + toy_flags(), kToy / "segment.log");
  const auto rows = read_csv(kToy / "segment" / "segment.csv");
  double sum = 0;
  for (const auto& r : rows) sum += std::stod(r.at(3));
  const double mean = sum / double(rows.size());
  return {mean >= 0.80, "n=5 mean Dice " + fmt("%.4f", mean) + " over " + std::to_string(rows.size()) + " test images"};
}

Outcome ensemble_trend() {
  run_cli("sweep-samples --n-list 1,2,3,4,5 " + toy_flags(), kToy / "sweep.log");
  const auto rows = read_csv(kToy / "sweep" / "sweep.csv");
  std::map<int, double> dice;
  for (const auto& r : rows) dice[std::stoi(r.at(0))] = std::stod(r.at(1));
  std::string curve;
  for (const auto& [n, d] : dice) curve += (curve.empty() ? "" : ", ") + std::to_string(n) + ":" + fmt("%.4f", d);
  return {rows.size() == 5 && dice.at(5) >= dice.at(1), "Dice by n {" + curve + "}"};
}

Outcome conditioning_specificity() {
  const auto rows = read_csv(kToy / "segment" / "segment.csv");
  std::vector<std::string> ids;
  for (const auto& r : rows) ids.push_back(r.at(0));
  const int pairs = std::min<int>(20, int(ids.size()));
  if (pairs < 2) return {false, "not enough test images"};
  double own = 0, cross = 0;
  for (int i = 0; i < pairs; ++i) {
    const std::string a = ids[i], b = ids[(i + 1) % ids.size()];
    const Mask ta = io::read_pbm(kToy / "segment" / "truth" / (a + ".pbm"));
    const Mask tb = io::read_pbm(kToy / "segment" / "truth" / (b + ".pbm"));
    double so = 0, sc = 0;
    int k = 0;
    for (; fs::exists(kToy / "sweep" / "draws" / (a + "_draw" + std::to_string(k) + ".pbm")); ++k) {
      const Mask m = io::read_pbm(kToy / "sweep" / "draws" / (a + "_draw" + std::to_string(k) + ".pbm"));
      so += metrics::dice(m, ta);
      sc += metrics::dice(m, tb);
    }
    if (k == 0) return {false, "no cached draws for " + a};
    own += so / k;
    cross += sc / k;
  }
  own /= pairs;
  cross /= pairs;
  const double gap = 100 * (own - cross);
  return {gap >= 20.0, "own Dice " + fmt("%.4f", own) + " vs cross-matched " + fmt("%.4f", cross) + " (" +
                           fmt("%+.1f", gap) + " points, " + std::to_string(pairs) + " pairs)"};
}

// ---------------------------------------------------------------- 11

double median_step_seconds(const denoiser::Config& cfg, int size) {
  denoiser::Denoiser model(cfg, 1);
  Rng rng(7);
  const Tensor x = randn<float>({1, cfg.in_channels, size, size}, rng);
  model.predict_noise(x, {500});
  std::vector<double> times;
  for (int i = 0; i < 100; ++i) {
    const auto t0 = Clock::now();
    const Tensor y = model.predict_noise(x, {1000 - i});
    times.push_back(seconds_since(t0));
    if (!all_finite(y)) throw std::runtime_error("non-finite denoiser output");
  }
  return median(times);
}

Outcome pixel_vs_latent() {
  const auto latent = config::load(kConfigs / "toy_blobs.json");
  const auto pixel = config::load(kConfigs / "toy_pixel.json");
  if (!pixel.pixel_space || pixel.dataset.resolution != latent.dataset.resolution ||
      pixel.denoiser.base_channels != latent.denoiser.base_channels || latent.image_autoencoder.factor() != 4)
    return {false, "toy_pixel.json and toy_blobs.json do not share resolution and base width at f=4 vs f=1"};
  const int res = latent.dataset.resolution;
  const double tl = median_step_seconds(latent.resolved_denoiser(), res / latent.image_autoencoder.factor());
  const double tp = median_step_seconds(pixel.resolved_denoiser(), res);
  return {tl < tp, "median step f=4 " + fmt("%.2f ms", 1e3 * tl) + " vs f=1 " + fmt("%.2f ms", 1e3 * tp) + " at " +
                       std::to_string(res) + "x" + std::to_string(res)};
}

// ---------------------------------------------------------------- 12

std::map<std::string, std::string> artifacts(const fs::path& root) {
  static const std::vector<std::string> kinds{".csv", ".pbm", ".pgm", ".ppm", ".pfm", ".jsonl", ".ckpt"};
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    if (std::find(kinds.begin(), kinds.end(), e.path().extension().string()) == kinds.end()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    out[fs::relative(e.path(), root).string()] = ckpt::sha256_hex(ss.str());
  }
  return out;
}

Outcome determinism() {
  json j = json::parse(std::ifstream(kConfigs / "toy_blobs.json"));
  j["dataset"]["resolution"] = 32;
  j["dataset"]["synthetic"]["count"] = 30;
  j["dataset"]["synthetic"]["blob_radius_min"] = 3.0;
  j["dataset"]["synthetic"]["blob_radius_max"] = 7.0;
  j["diffusion"]["steps"] = 50;
  j["training"]["autoencoder"]["epochs"] = 2;
  j["training"]["diffusion"]["epochs"] = 3;
  j["inference"]["n"] = 3;
  j["inference"]["save_samples"] = true;
  const fs::path root = kWork / "determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  std::ofstream(root / "mini.json") << j.dump(2);

  auto run_all = [&](const fs::path& out) {
    fs::create_directories(out);
    const std::string f = "--config " + (root / "mini.json").string() + " --output-dir " + out.string();
    run_cli("generate-synthetic " + f, out / "generate.log");
    run_cli("train-vae --target mask " + f, out / "mask.log");
    run_cli("train-vae --target image " + f, out / "image.log");
    run_cli("train-diffusion " + f, out / "diffusion.log");
    run_cli("segment " + f, out / "segment.log");
    run_cli("sweep-samples --n-list 1,3 " + f, out / "sweep.log");
    run_cli("evaluate --pred " + (out / "segment").string() + " --truth " + (out / "segment" / "truth").string() +
                " --csv " + (out / "evaluate.csv").string() + " --config " + (root / "mini.json").string(),
            out / "evaluate.log");
  };
  run_all(root / "a");
  run_all(root / "b");
  const auto a = artifacts(root / "a"), b = artifacts(root / "b");
  int differing = 0;
  for (const auto& [k, h] : a)
    if (!b.count(k) || b.at(k) != h) ++differing;
  differing += int(b.size() > a.size() ? b.size() - a.size() : 0);

  // Interrupted and resumed training equals the uninterrupted run.
  const fs::path c = root / "c";
  fs::create_directories(c);
  const std::string f = "--config " + (root / "mini.json").string() + " --output-dir " + c.string();
  run_cli("generate-synthetic " + f, c / "generate.log");
  run_cli("train-vae --target mask --max-epochs 1 " + f, c / "mask1.log");
  run_cli("train-vae --target mask --resume " + f, c / "mask2.log");
  const auto ca = artifacts(root / "a" / "mask_vae"), cc = artifacts(c / "mask_vae");
  const bool resumed = ca == cc;

  return {differing == 0 && resumed && !a.empty(),
          std::to_string(a.size()) + " artifacts compared, " + std::to_string(differing) + " differ; resume " +
              (resumed ? "matches" : "differs from") + " the uninterrupted run"};
}

}  // namespace

int main(int argc, char** argv) {
  fs::create_directories(kWork);
  struct Criterion {
    int id;
    const char* name;
    double budget_seconds;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "schedule identity", 1, schedule_identity},
      {2, "forward-process agreement", 30, forward_agreement},
      {3, "inversion", 1, inversion},
      {4, "quantizer oracle", 10, quantizer_oracle},
      {5, "gradient checks", 60, gradient_checks},
      {6, "metrics oracle", 10, metrics_oracle},
      {7, "toy WCE vs MSE", 12 * 3600, wce_vs_mse},
      {8, "toy end-to-end segmentation", 0, toy_end_to_end},
      {9, "ensemble trend", 600, ensemble_trend},
      {10, "conditioning specificity", 600, conditioning_specificity},
      {11, "pixel vs latent efficiency", 600, pixel_vs_latent},
      {12, "determinism", 0, determinism},
  };
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) only.push_back(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = seconds_since(t0);
    std::string timing = fmt("%.1fs", secs);
    if (c.budget_seconds > 0) {
      timing += fmt(" of %.0fs budget", c.budget_seconds);
      if (secs > c.budget_seconds) {
        o.pass = false;
        o.detail += "; over the runtime budget";
      }
    }
    std::printf("CRITERION %2d %s  %s: %s [%s]\n", c.id, o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str(),
                timing.c_str());
    std::fflush(stdout);
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
