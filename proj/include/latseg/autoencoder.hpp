#pragma once

// Vector-quantized autoencoders for images and binary masks.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "latseg/mask.hpp"
#include "latseg/nn.hpp"
#include "latseg/random.hpp"
#include "latseg/vq.hpp"

namespace latseg::autoencoder {

enum class Mode { image_mse, mask_mse, mask_wce };

std::string to_string(Mode mode);
Mode mode_from_string(const std::string& s);

struct Config {
  Mode mode = Mode::image_mse;
  int image_channels = 3;  // ignored by mask modes, which take one channel
  int levels = 3;          // f = 2^levels; 0 keeps full resolution
  int base_channels = 128;
  int max_channels = 512;
  int res_blocks = 2;  // residual blocks per level
  int latent_channels = 3;
  int codebook_size = 512;
  double pos_weight = 5.0;  // positive-class weight, mask_wce only
  double commitment_beta = 0.25;

  int factor() const { return 1 << levels; }
  bool is_mask() const { return mode != Mode::image_mse; }
  int input_channels() const { return is_mask() ? 1 : image_channels; }
  int output_channels() const {
    return mode == Mode::image_mse ? image_channels : (mode == Mode::mask_wce ? 2 : 1);
  }
  int channels_at(int level) const;
  void validate() const;
};

class Encoder {
 public:
  struct Saved {
    Tensor conv_in_input;
    std::vector<nn::ResBlock::Saved> blocks;
    std::vector<Tensor> down_inputs;
    nn::ResBlock::Saved mid;
    Tensor out_pre;
    Tensor out_act;
  };

  Encoder() = default;
  Encoder(const Config& config, Rng& rng);
  Tensor forward(const Tensor& x, Saved* saved) const;
  void backward(const Tensor& grad_z, const Saved& saved);
  void collect(nn::ParameterList& out);

 private:
  int levels_ = 0;
  int res_blocks_ = 0;
  nn::Conv2d conv_in_;
  std::vector<nn::ResBlock> blocks_;
  std::vector<nn::Conv2d> downs_;
  nn::ResBlock mid_;
  nn::Conv2d conv_out_;
};

class Decoder {
 public:
  struct Saved {
    Tensor conv_in_input;
    nn::ResBlock::Saved mid;
    std::vector<nn::Upsample::Saved> ups;
    std::vector<nn::ResBlock::Saved> blocks;
    Tensor out_pre;
    Tensor out_act;
  };

  Decoder() = default;
  Decoder(const Config& config, Rng& rng);
  Tensor forward(const Tensor& zq, Saved* saved) const;
  // Returns d/dzq.
  Tensor backward(const Tensor& grad_out, const Saved& saved);
  void collect(nn::ParameterList& out);

 private:
  int levels_ = 0;
  int res_blocks_ = 0;
  nn::Conv2d conv_in_;
  nn::ResBlock mid_;
  std::vector<nn::Upsample> ups_;
  std::vector<nn::ResBlock> blocks_;
  nn::Conv2d conv_out_;
};

class VqAutoencoder {
 public:
  VqAutoencoder(Config config, std::uint64_t seed);

  const Config& config() const { return config_; }

  // Images in [0,1] are mapped to [-1,1]; masks are used as {0,1} reals.
  Tensor prepare_input(const Tensor& raw) const;

  // Continuous latent z of shape (N, c, H/f, W/f).
  Tensor encode(const Tensor& raw) const;
  vq::LatentCode quantize(const Tensor& z) const;
  // Decoder output: image (N,C,H,W) in model range, mask_mse (N,1,H,W),
  // mask_wce (N,2,H,W) logits.
  Tensor decode(const Tensor& zq) const;
  Tensor reconstruct(const Tensor& raw) const;

  // Decoder output mapped back to [0,1] images.
  Tensor to_image(const Tensor& decoded) const;
  // Hard masks: argmax in WCE mode, >= 0.5 in MSE mode.
  std::vector<Mask> to_masks(const Tensor& decoded) const;

  vq::LossReport losses(const Tensor& raw, const Tensor& z, const Tensor& zq, const Tensor& decoded) const;

  struct StepResult {
    vq::LossReport loss;
    std::vector<int> indices;
    Tensor z;
  };
  // One optimizer step on rec + codebook + commit.
  StepResult train_step(const Tensor& raw_batch, nn::AdamW& optimizer);

  vq::Codebook& codebook() { return codebook_; }
  const vq::Codebook& codebook() const { return codebook_; }

  nn::ParameterList parameters();
  std::map<std::string, Tensor> state() const;
  void load_state(const std::map<std::string, Tensor>& state);

 private:
  Tensor reconstruction_loss(const Tensor& prepared, const Tensor& decoded, double* value) const;

  Config config_;
  Encoder encoder_;
  Decoder decoder_;
  vq::Codebook codebook_;
};

struct TrainOptions {
  int batch_size = 32;
  nn::AdamWOptions optimizer;
  std::uint64_t seed = 0;
};

struct EpochLog {
  int epoch = 0;
  vq::LossReport loss;  // means over the epoch's steps
  double usage_fraction = 0.0;
  std::vector<long> usage;  // per-entry assignment counts
  int reseeded = 0;
  std::vector<double> step_rec;  // per-step reconstruction loss
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Epoch-granular trainer. Each epoch derives its random stream from
// (seed, epoch), so resuming at an epoch boundary reproduces an
// uninterrupted run exactly.
class AutoencoderTrainer {
 public:
  AutoencoderTrainer(VqAutoencoder& model, std::vector<Tensor> samples, TrainOptions options);

  EpochLog run_epoch();
  int epoch() const { return epoch_; }
  void set_epoch(int epoch) { epoch_ = epoch; }
  nn::AdamW& optimizer() { return optimizer_; }

 private:
  void initialize_codebook(Rng& rng);

  VqAutoencoder& model_;
  std::vector<Tensor> samples_;
  TrainOptions options_;
  nn::AdamW optimizer_;
  int epoch_ = 0;
};

}  // namespace latseg::autoencoder
