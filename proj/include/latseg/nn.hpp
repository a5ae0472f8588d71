#pragma once

// Minimal layer library with hand-written backward passes.
//
// Layers are const during forward so frozen models can be shared by
// concurrent callers. Training callers pass a `Saved` record that captures
// the activations each backward pass needs; backward accumulates into the
// Parameter::grad tensors and returns the gradient w.r.t. the layer input.

#include <map>
#include <string>
#include <vector>

#include "latseg/kernels.hpp"
#include "latseg/tensor.hpp"

namespace latseg::nn {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

using ParameterList = std::vector<Parameter*>;

Tensor silu(const Tensor& x);
Tensor silu_backward(const Tensor& x, const Tensor& grad_y);
Tensor upsample2x(const Tensor& x);
Tensor upsample2x_backward(const Tensor& grad_y);

void add_inplace(Tensor& dst, const Tensor& src);

class Conv2d {
 public:
  Conv2d() = default;
  // Padding is kernel/2, so stride 1 preserves spatial size and stride 2 halves it.
  Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride, Rng& rng,
         bool zero_init = false);

  Tensor forward(const Tensor& x) const;
  Tensor backward(const Tensor& grad_y, const Tensor& x);

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  void collect(ParameterList& out);

 private:
  kernels::ConvGeometry geometry(const Shape& input) const;

  int in_ = 0;
  int out_ = 0;
  int kernel_ = 3;
  int stride_ = 1;
  Parameter weight_;
  Parameter bias_;
};

// Fully connected layer over (N, in, 1, 1) tensors.
class Linear {
 public:
  Linear() = default;
  Linear(std::string name, int in_features, int out_features, Rng& rng);

  Tensor forward(const Tensor& x) const;
  Tensor backward(const Tensor& grad_y, const Tensor& x);
  void collect(ParameterList& out);

 private:
  int in_ = 0;
  int out_ = 0;
  Parameter weight_;
  Parameter bias_;
};

// y = skip(x) + conv2(silu(conv1(silu(x)) + proj(emb)))
class ResBlock {
 public:
  struct Saved {
    Tensor x, a1, h, a2, emb;
  };

  ResBlock() = default;
  ResBlock(const std::string& name, int in_channels, int out_channels, int emb_dim, Rng& rng);

  Tensor forward(const Tensor& x, const Tensor* emb, Saved* saved) const;
  // grad_emb is accumulated into when the block has an embedding projection.
  Tensor backward(const Tensor& grad_y, const Saved& saved, Tensor* grad_emb);
  void collect(ParameterList& out);

 private:
  Conv2d conv1_, conv2_;
  Conv2d skip_;
  bool has_skip_ = false;
  Linear emb_proj_;
  int emb_dim_ = 0;
};

// Nearest-neighbour 2x followed by a 3x3 convolution.
class Upsample {
 public:
  struct Saved {
    Tensor up;
  };

  Upsample() = default;
  Upsample(const std::string& name, int in_channels, int out_channels, Rng& rng);
  Tensor forward(const Tensor& x, Saved* saved) const;
  Tensor backward(const Tensor& grad_y, const Saved& saved);
  void collect(ParameterList& out);

 private:
  Conv2d conv_;
};

struct AdamWOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  // Global gradient-norm clip; 0 disables.
  double grad_clip_norm = 0.0;
};

// Adam with decoupled weight decay.
class AdamW {
 public:
  AdamW(ParameterList params, AdamWOptions options);

  void zero_grad();
  // Returns the global gradient norm before clipping.
  double step();
  long steps() const { return steps_; }
  const AdamWOptions& options() const { return options_; }

  // Moment buffers keyed "<param>.m" / "<param>.v" plus the step count.
  std::map<std::string, Tensor> state() const;
  void load_state(const std::map<std::string, Tensor>& state);

 private:
  ParameterList params_;
  AdamWOptions options_;
  std::vector<Tensor> m_, v_;
  long steps_ = 0;
};

void zero_grads(const ParameterList& params);

}  // namespace latseg::nn
