#pragma once

// Time-conditioned UNet noise predictor.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "latseg/nn.hpp"

namespace latseg::denoiser {

// Anything that maps a conditioned noisy state and per-item steps to a noise
// estimate with the noisy state's channel count.
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;
  virtual Tensor predict_noise(const Tensor& conditioned, const std::vector<int>& steps) const = 0;
  virtual int in_channels() const = 0;
  virtual int out_channels() const = 0;
};

struct Config {
  int in_channels = 6;
  int out_channels = 3;
  int levels = 3;
  int base_channels = 128;
  int max_channels = 512;
  int res_blocks = 1;

  int channels_at(int level) const;
  int embedding_dim() const { return 4 * base_channels; }
  void validate() const;
};

// Sinusoidal embedding of integer steps, (N, dim, 1, 1).
Tensor timestep_embedding(const std::vector<int>& steps, int dim);

class Denoiser : public NoisePredictor {
 public:
  struct Saved {
    Tensor sinusoid, e1, a1, e2, emb;
    Tensor conv_in_input;
    std::vector<nn::ResBlock::Saved> down_blocks;
    std::vector<Tensor> down_inputs;
    nn::ResBlock::Saved mid;
    std::vector<nn::Upsample::Saved> ups;
    std::vector<int> up_channels;
    std::vector<nn::ResBlock::Saved> up_blocks;
    Tensor out_pre, out_act;
  };

  Denoiser(Config config, std::uint64_t seed);

  const Config& config() const { return config_; }
  int in_channels() const override { return config_.in_channels; }
  int out_channels() const override { return config_.out_channels; }

  Tensor forward(const Tensor& x, const std::vector<int>& steps, Saved* saved) const;
  void backward(const Tensor& grad_y, const Saved& saved);
  Tensor predict_noise(const Tensor& conditioned, const std::vector<int>& steps) const override {
    return forward(conditioned, steps, nullptr);
  }

  nn::ParameterList parameters();
  std::map<std::string, Tensor> state() const;
  void load_state(const std::map<std::string, Tensor>& state);

 private:
  Config config_;
  nn::Linear emb1_, emb2_;
  nn::Conv2d conv_in_;
  std::vector<nn::ResBlock> down_blocks_;
  std::vector<nn::Conv2d> downs_;
  nn::ResBlock mid_;
  std::vector<nn::Upsample> ups_;
  std::vector<nn::ResBlock> up_blocks_;
  nn::Conv2d conv_out_;
};

}  // namespace latseg::denoiser
