#include "latseg/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace latseg::metrics {

namespace {

void check_pair(const Mask& a, const Mask& b) {
  if (a.height != b.height || a.width != b.width)
    throw std::invalid_argument("mask metrics: shape mismatch " + std::to_string(a.height) + "x" +
                                std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                                std::to_string(b.width));
  if (!a.is_binary() || !b.is_binary()) throw std::invalid_argument("mask metrics: non-binary input");
}

struct Counts {
  std::size_t inter = 0, a = 0, b = 0;
};

Counts count(const Mask& a, const Mask& b) {
  check_pair(a, b);
  Counts c;
  for (std::size_t i = 0; i < a.size(); ++i) {
    c.a += a.pixels[i];
    c.b += b.pixels[i];
    c.inter += a.pixels[i] & b.pixels[i];
  }
  return c;
}

Tensor as_tensor(const Mask& m) { return mask_to_tensor(m); }

}  // namespace

double dice(const Mask& a, const Mask& b) {
  const Counts c = count(a, b);
  if (c.a + c.b == 0) return 1.0;
  return 2.0 * double(c.inter) / double(c.a + c.b);
}

double iou(const Mask& a, const Mask& b) {
  const Counts c = count(a, b);
  const std::size_t uni = c.a + c.b - c.inter;
  if (uni == 0) return 1.0;
  return double(c.inter) / double(uni);
}

double psnr(const Tensor& x, const Tensor& y) {
  require_same_shape(x, y, "psnr");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = double(x[i]) - double(y[i]);
    acc += d * d;
  }
  const double mse = x.size() ? acc / double(x.size()) : 0.0;
  if (mse == 0.0) return 100.0;
  return std::min(100.0, 10.0 * std::log10(1.0 / mse));
}

double psnr(const Mask& a, const Mask& b) {
  check_pair(a, b);
  return psnr(as_tensor(a), as_tensor(b));
}

std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(size);
  const double mid = (size - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    w[i] = std::exp(-(i - mid) * (i - mid) / (2.0 * sigma * sigma));
    sum += w[i];
  }
  for (auto& v : w) v /= sum;
  return w;
}

namespace {

// Separable valid-mode filtering of one H×W plane.
std::vector<double> filter_valid(const std::vector<double>& src, int h, int w, const std::vector<double>& k) {
  const int n = int(k.size());
  const int oh = h - n + 1, ow = w - n + 1;
  std::vector<double> rows(std::size_t(h) * ow);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) acc += k[i] * src[std::size_t(y) * w + x + i];
      rows[std::size_t(y) * ow + x] = acc;
    }
  std::vector<double> out(std::size_t(oh) * ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) acc += k[i] * rows[std::size_t(y + i) * ow + x];
      out[std::size_t(y) * ow + x] = acc;
    }
  return out;
}

}  // namespace

double ssim(const Tensor& x, const Tensor& y, const SsimOptions& o) {
  require_same_shape(x, y, "ssim");
  if (x.h() < o.window || x.w() < o.window)
    throw std::invalid_argument("ssim: image " + x.shape().str() + " is smaller than the " +
                                std::to_string(o.window) + "-pixel window");
  const auto k = gaussian_window(o.window, o.sigma);
  const double c1 = (o.k1 * o.data_range) * (o.k1 * o.data_range);
  const double c2 = (o.k2 * o.data_range) * (o.k2 * o.data_range);
  const int h = x.h(), w = x.w();
  const std::size_t plane = x.shape().plane();
  double total = 0.0;
  int planes = 0;
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c) {
      std::vector<double> a(plane), b(plane), aa(plane), bb(plane), ab(plane);
      for (std::size_t i = 0; i < plane; ++i) {
        a[i] = x[(std::size_t(n) * x.c() + c) * plane + i];
        b[i] = y[(std::size_t(n) * x.c() + c) * plane + i];
        aa[i] = a[i] * a[i];
        bb[i] = b[i] * b[i];
        ab[i] = a[i] * b[i];
      }
      const auto ma = filter_valid(a, h, w, k), mb = filter_valid(b, h, w, k);
      const auto saa = filter_valid(aa, h, w, k), sbb = filter_valid(bb, h, w, k), sab = filter_valid(ab, h, w, k);
      double acc = 0.0;
      for (std::size_t i = 0; i < ma.size(); ++i) {
        const double va = saa[i] - ma[i] * ma[i], vb = sbb[i] - mb[i] * mb[i], cov = sab[i] - ma[i] * mb[i];
        acc += (2.0 * ma[i] * mb[i] + c1) * (2.0 * cov + c2) /
               ((ma[i] * ma[i] + mb[i] * mb[i] + c1) * (va + vb + c2));
      }
      total += acc / double(ma.size());
      ++planes;
    }
  return total / planes;
}

double ssim(const Mask& a, const Mask& b, const SsimOptions& options) {
  check_pair(a, b);
  return ssim(as_tensor(a), as_tensor(b), options);
}

SampleMetrics compare_masks(const std::string& id, const Mask& prediction, const Mask& truth) {
  SampleMetrics m;
  m.sample_id = id;
  m.dice = dice(prediction, truth);
  m.iou = iou(prediction, truth);
  m.psnr = psnr(prediction, truth);
  m.ssim = prediction.height >= 11 && prediction.width >= 11 ? ssim(prediction, truth) : NAN;
  return m;
}

MetricsReport summarize(std::vector<SampleMetrics> rows) {
  MetricsReport r;
  for (const auto& s : rows) {
    r.dice += s.dice;
    r.iou += s.iou;
    r.ssim += s.ssim;
    r.psnr += s.psnr;
  }
  if (!rows.empty()) {
    const double n = double(rows.size());
    r.dice /= n;
    r.iou /= n;
    r.ssim /= n;
    r.psnr /= n;
  }
  r.per_sample = std::move(rows);
  return r;
}

void write_csv(const std::filesystem::path& path, const MetricsReport& report, const std::string& config_hash) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  if (!config_hash.empty()) out << "# config_hash: " << config_hash << "\n";
  out << "sample_id,dice,iou,ssim,psnr\n";
  char buf[160];
  auto row = [&](const std::string& id, double d, double i, double s, double p) {
    std::snprintf(buf, sizeof buf, ",%.6f,%.6f,%.6f,%.4f\n", d, i, s, p);
    out << id << buf;
  };
  for (const auto& s : report.per_sample) row(s.sample_id, s.dice, s.iou, s.ssim, s.psnr);
  row("mean", report.dice, report.iou, report.ssim, report.psnr);
}

}  // namespace latseg::metrics
