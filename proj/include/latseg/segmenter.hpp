#pragma once

// Conditional diffusion over mask latents, conditioned on image latents by
// channel concatenation [mask ‖ image].

#include <cstdint>
#include <memory>
#include <vector>

#include "latseg/autoencoder.hpp"
#include "latseg/denoiser.hpp"
#include "latseg/diffusion.hpp"
#include "latseg/mask.hpp"
#include "latseg/nn.hpp"

namespace latseg::segmenter {

struct ConditionedLatent {
  Tensor noisy_mask;  // z_{S,t}
  Tensor image_cond;  // clean image latent
  Tensor combined;    // [noisy_mask ‖ image_cond]
};

ConditionedLatent condition_concat(const Tensor& noisy_mask, const Tensor& image_cond);

// ---------------------------------------------------------------- codecs

class ImageCodec {
 public:
  virtual ~ImageCodec() = default;
  // (N, C, H, W) images in [0,1] -> quantized latents (N, c, H/f, W/f).
  virtual Tensor encode(const Tensor& images) const = 0;
  virtual int latent_channels() const = 0;
  virtual int factor() const = 0;
};

class MaskCodec {
 public:
  virtual ~MaskCodec() = default;
  // (N, 1, H, W) binary masks -> quantized latents.
  virtual Tensor encode(const Tensor& masks) const = 0;
  // Latents -> hard masks.
  virtual std::vector<Mask> decode(const Tensor& latents) const = 0;
  virtual int latent_channels() const = 0;
  virtual int factor() const = 0;
};

class VqImageCodec : public ImageCodec {
 public:
  explicit VqImageCodec(const autoencoder::VqAutoencoder& model);
  Tensor encode(const Tensor& images) const override;
  int latent_channels() const override { return model_.config().latent_channels; }
  int factor() const override { return model_.config().factor(); }

 private:
  const autoencoder::VqAutoencoder& model_;
};

class VqMaskCodec : public MaskCodec {
 public:
  explicit VqMaskCodec(const autoencoder::VqAutoencoder& model);
  Tensor encode(const Tensor& masks) const override;
  std::vector<Mask> decode(const Tensor& latents) const override;
  int latent_channels() const override { return model_.config().latent_channels; }
  int factor() const override { return model_.config().factor(); }

 private:
  const autoencoder::VqAutoencoder& model_;
};

// Pixel space: images map to [-1,1], masks to {-1,1}, decoding thresholds at 0.
class IdentityImageCodec : public ImageCodec {
 public:
  explicit IdentityImageCodec(int channels) : channels_(channels) {}
  Tensor encode(const Tensor& images) const override;
  int latent_channels() const override { return channels_; }
  int factor() const override { return 1; }

 private:
  int channels_;
};

class IdentityMaskCodec : public MaskCodec {
 public:
  Tensor encode(const Tensor& masks) const override;
  std::vector<Mask> decode(const Tensor& latents) const override;
  int latent_channels() const override { return 1; }
  int factor() const override { return 1; }
};

// Quantize through the mask codebook, decode, binarize.
std::vector<Mask> decode_mask(const Tensor& latents, const autoencoder::VqAutoencoder& mask_model);

// Encodes in chunks of `batch` items; returns one (1, c, h, w) tensor per input.
std::vector<Tensor> encode_all(const ImageCodec& codec, const std::vector<Tensor>& images, int batch = 16);
std::vector<Tensor> encode_all(const MaskCodec& codec, const std::vector<Tensor>& masks, int batch = 16);

// ---------------------------------------------------------------- scaling

// Mask latents are multiplied by `scale` = 1/sigma before diffusion. The clip
// range bounds predicted clean latents (in scaled units) during sampling.
struct LatentScaling {
  double scale = 1.0;
  double clip_low = -1e30;
  double clip_high = 1e30;

  static LatentScaling fit(const std::vector<Tensor>& latents, double margin = 0.1);
  Tensor normalize(const Tensor& latent) const;
  Tensor denormalize(const Tensor& scaled) const;
};

// ---------------------------------------------------------------- training

struct NoisedBatch {
  Tensor clean;        // scaled mask latents
  Tensor image_cond;   // image latents
  Tensor noisy;        // z_{S,t}
  Tensor eps;          // noise used
  std::vector<int> steps;
  Tensor conditioned;  // denoiser input
};

// Draws t ~ U{1..T} and eps ~ N(0, I) for every item, in batch order.
NoisedBatch make_noised_batch(const Tensor& mask_latents, const Tensor& image_latents,
                              const diffusion::NoiseSchedule& schedule, Rng& rng);

double batch_loss(const denoiser::NoisePredictor& model, const NoisedBatch& batch);

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One optimizer step on the noise-prediction loss; returns the loss.
double training_step(denoiser::Denoiser& model, nn::AdamW& optimizer, const Tensor& mask_latents,
                     const Tensor& image_latents, const diffusion::NoiseSchedule& schedule, Rng& rng);

struct TrainOptions {
  int batch_size = 32;
  nn::AdamWOptions optimizer;
  std::uint64_t seed = 0;
};

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  std::vector<double> step_loss;
};

// Epoch-granular, resumable at epoch boundaries. Mask latents are given
// already scaled.
class DiffusionTrainer {
 public:
  DiffusionTrainer(denoiser::Denoiser& model, diffusion::NoiseSchedule schedule, std::vector<Tensor> mask_latents,
                   std::vector<Tensor> image_latents, TrainOptions options);

  EpochLog run_epoch();
  int epoch() const { return epoch_; }
  void set_epoch(int epoch) { epoch_ = epoch; }
  nn::AdamW& optimizer() { return optimizer_; }
  // Replaces the (scaled) targets, e.g. when the annotator changes per epoch.
  void set_mask_latents(std::vector<Tensor> mask_latents);

 private:
  denoiser::Denoiser& model_;
  diffusion::NoiseSchedule schedule_;
  std::vector<Tensor> masks_;
  std::vector<Tensor> images_;
  TrainOptions options_;
  nn::AdamW optimizer_;
  int epoch_ = 0;
};

// ---------------------------------------------------------------- sampling

struct SamplerOptions {
  diffusion::VarianceMode variance_mode = diffusion::VarianceMode::standard;
  bool deterministic_last = true;
  bool clip = true;
};

// Runs the reverse chain T -> 0 for every batch item. Item i draws its
// initial noise and every step's noise from rngs[i] only, so results do not
// depend on batch composition. Returns unscaled latents.
Tensor sample_mask_latents(const Tensor& image_latents, const denoiser::NoisePredictor& model,
                           const diffusion::NoiseSchedule& schedule, std::vector<Rng>& rngs,
                           const LatentScaling& scaling, const SamplerOptions& options = {});

struct EnsembleResult {
  std::vector<Mask> masks;
  std::vector<int> votes;         // per pixel, number of masks marking it
  std::vector<double> confidence;  // votes / n
  Mask consensus;                  // confidence >= 0.5
  int n = 0;
  int height = 0;
  int width = 0;
};

EnsembleResult aggregate(std::vector<Mask> masks);

struct Pipeline {
  const ImageCodec* image_codec = nullptr;
  const MaskCodec* mask_codec = nullptr;
  const denoiser::NoisePredictor* denoiser = nullptr;
  diffusion::NoiseSchedule schedule;
  LatentScaling scaling;
  SamplerOptions sampler;
  int max_batch = 32;
};

// Random stream of draw `draw` for the image keyed by `image_seed`.
Rng draw_rng(std::uint64_t image_seed, int draw);
std::uint64_t image_seed(std::uint64_t seed, int image_index);
// Key of ensemble member `member`; member 0 keeps the image key.
std::uint64_t member_seed(std::uint64_t image_seed, int member);

struct DrawRequest {
  int image = 0;  // index into the image-latent list
  int draw = 0;   // draw index within that image's ensemble
};

// Decoded masks for each request, batched internally. Draw k of an image is
// the same mask whichever other requests are in flight.
std::vector<Mask> sample_masks(const Pipeline& pipeline, const std::vector<Tensor>& image_latents,
                               const std::vector<std::uint64_t>& image_seeds,
                               const std::vector<DrawRequest>& requests);

// n draws for a single (1, C, H, W) image.
EnsembleResult ensemble_segment(const Pipeline& pipeline, const Tensor& image, int n, std::uint64_t image_seed);

// Pools the draws of several independently trained denoisers; equal n per
// member, so the confidence is the mean of the members' confidence maps.
EnsembleResult ensemble_segment(const std::vector<Pipeline>& members, const Tensor& image, int n,
                                std::uint64_t image_seed);

}  // namespace latseg::segmenter
