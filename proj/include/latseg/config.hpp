#pragma once

// Experiment configuration: one JSON document with dataset, autoencoder,
// denoiser, diffusion, training and inference sections. Missing keys take
// the defaults below; unknown keys are rejected.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "latseg/autoencoder.hpp"
#include "latseg/datasets.hpp"
#include "latseg/denoiser.hpp"
#include "latseg/diffusion.hpp"

namespace latseg::config {

struct DatasetSection {
  // "synthetic", "manifest", or a real layout (isic2018, cvc_clinic, lidc_slices).
  std::string source = "synthetic";
  std::string root;  // manifest file or dataset directory
  int resolution = 256;
  std::uint64_t split_seed = 0;
  data::TargetPolicy target_policy = data::TargetPolicy::majority;
  data::SyntheticSpec synthetic;
};

struct DiffusionSection {
  int steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  diffusion::ScheduleKind schedule = diffusion::ScheduleKind::linear;
  diffusion::VarianceMode variance_mode = diffusion::VarianceMode::standard;
  bool deterministic_last = true;
  bool clip = true;
};

struct StageTraining {
  double lr = 1e-4;
  double weight_decay = 0.0;
  double grad_clip_norm = 0.0;
  int batch_size = 32;
  int epochs = 100;
};

struct TrainingSection {
  std::string optimizer = "adamw";
  std::uint64_t seed = 0;
  StageTraining autoencoder;
  StageTraining diffusion;
};

struct InferenceSection {
  int n = 5;
  bool five_fold = false;
  int folds = 5;
  bool save_samples = false;
  int max_batch = 32;
  std::string output_dir = "runs/default";
};

struct ExperimentConfig {
  DatasetSection dataset;
  bool pixel_space = false;  // identity codecs, diffusion on pixels
  autoencoder::Config image_autoencoder;
  autoencoder::Config mask_autoencoder;
  denoiser::Config denoiser;  // channel counts are derived, not configured
  DiffusionSection diffusion;
  TrainingSection training;
  InferenceSection inference;

  // Channel counts of the denoiser implied by the codecs.
  denoiser::Config resolved_denoiser() const;
  diffusion::NoiseSchedule schedule() const;
  void validate() const;
};

ExperimentConfig defaults();
ExperimentConfig from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& c);
ExperimentConfig load(const std::filesystem::path& path);

// SHA-256 of the canonical JSON, excluding inference.output_dir.
std::string hash(const ExperimentConfig& c);

nn::AdamWOptions optimizer_options(const StageTraining& s);

}  // namespace latseg::config
