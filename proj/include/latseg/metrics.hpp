#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "latseg/mask.hpp"
#include "latseg/tensor.hpp"

namespace latseg::metrics {

// 2|a∩b| / (|a|+|b|); 1 when both are empty.
double dice(const Mask& a, const Mask& b);
// |a∩b| / |a∪b|; 1 when both are empty.
double iou(const Mask& a, const Mask& b);

// 10 log10(1 / mse) for [0,1] data, capped at 100 dB.
double psnr(const Tensor& x, const Tensor& y);
double psnr(const Mask& a, const Mask& b);

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 1.0;
};

// Mean SSIM over all fully covered window positions (no padding), averaged
// over channels and batch items.
double ssim(const Tensor& x, const Tensor& y, const SsimOptions& options = {});
double ssim(const Mask& a, const Mask& b, const SsimOptions& options = {});

// Normalized 1-D Gaussian taps.
std::vector<double> gaussian_window(int size, double sigma);

struct SampleMetrics {
  std::string sample_id;
  double dice = 0.0;
  double iou = 0.0;
  double ssim = 0.0;
  double psnr = 0.0;
};

struct MetricsReport {
  std::vector<SampleMetrics> per_sample;
  double dice = 0.0;
  double iou = 0.0;
  double ssim = 0.0;
  double psnr = 0.0;
};

SampleMetrics compare_masks(const std::string& id, const Mask& prediction, const Mask& truth);

// Unweighted means of the per-sample values.
MetricsReport summarize(std::vector<SampleMetrics> rows);

// Columns sample_id,dice,iou,ssim,psnr with a trailing "mean" row. A
// "# config_hash: <hex>" line precedes the header when the hash is nonempty.
void write_csv(const std::filesystem::path& path, const MetricsReport& report, const std::string& config_hash = "");

}  // namespace latseg::metrics
