#pragma once

// The six command-line verbs as library functions. Each returns a process
// exit code; argument errors throw std::invalid_argument.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "latseg/config.hpp"
#include "latseg/segmenter.hpp"

namespace latseg::cli {

namespace fs = std::filesystem;

struct CommonOptions {
  std::optional<fs::path> config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> device;
  std::optional<fs::path> output_dir;
};

struct Context {
  config::ExperimentConfig config;
  fs::path output_dir;
  std::string config_hash;
};

// Config file (or defaults) + environment (LATSEG_OUTPUT_DIR, LATSEG_DEVICE)
// + flags, in increasing precedence. --seed sets training.seed, or the
// synthetic seed for generate-synthetic. Validates before returning.
Context make_context(const CommonOptions& options, bool seed_is_data_seed = false);

// Paths inside an output directory.
fs::path data_dir(const Context& ctx);
fs::path vae_dir(const Context& ctx, const std::string& target);
fs::path diffusion_dir(const Context& ctx, int fold);

int generate_synthetic(const Context& ctx);

struct TrainOptions {
  bool resume = false;
  // Stop after this many epochs in this invocation; the run stays resumable.
  std::optional<int> max_epochs;
};

int train_vae(const Context& ctx, const std::string& target, const TrainOptions& options);
int train_diffusion(const Context& ctx, const TrainOptions& options, bool five_fold);

struct SegmentOptions {
  std::optional<int> n;
  bool five_fold = false;
  bool save_samples = false;
  std::vector<fs::path> inputs;  // empty: the dataset's test split
};

int segment(const Context& ctx, const SegmentOptions& options);
int sweep_samples(const Context& ctx, const std::vector<int>& n_list, bool five_fold);
int evaluate(const fs::path& predictions, const fs::path& truth, const fs::path& csv,
             const std::string& config_hash = "");

// Models restored from an output directory's checkpoints.
class LoadedModels {
 public:
  LoadedModels(const Context& ctx, int folds);
  std::vector<segmenter::Pipeline> pipelines() const;

 private:
  std::unique_ptr<autoencoder::VqAutoencoder> image_ae_, mask_ae_;
  std::unique_ptr<segmenter::ImageCodec> image_codec_;
  std::unique_ptr<segmenter::MaskCodec> mask_codec_;
  std::vector<std::unique_ptr<denoiser::Denoiser>> denoisers_;
  std::vector<segmenter::LatentScaling> scalings_;
  diffusion::NoiseSchedule schedule_;
  segmenter::SamplerOptions sampler_;
  int max_batch_ = 32;
};

// Mean Dice vs n plot, written as PNG.
void plot_sweep(const fs::path& path, const std::vector<int>& n, const std::vector<double>& dice);

}  // namespace latseg::cli
