#include "latseg/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "latseg/random.hpp"

namespace latseg::denoiser {

int Config::channels_at(int level) const {
  return int(std::min<long>(long(base_channels) << level, max_channels));
}

void Config::validate() const {
  if (in_channels < 1 || out_channels < 1) throw std::invalid_argument("denoiser channel counts must be positive");
  if (levels < 1 || levels > 8) throw std::invalid_argument("denoiser levels must be in [1, 8]");
  if (base_channels < 1 || max_channels < base_channels)
    throw std::invalid_argument("denoiser needs 1 <= base_channels <= max_channels");
  if (base_channels % 2 != 0) throw std::invalid_argument("denoiser base_channels must be even");
  if (res_blocks < 1) throw std::invalid_argument("denoiser res_blocks must be >= 1");
}

Tensor timestep_embedding(const std::vector<int>& steps, int dim) {
  const int half = dim / 2;
  Tensor out({int(steps.size()), dim, 1, 1});
  for (std::size_t n = 0; n < steps.size(); ++n)
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * double(i) / double(half));
      const double arg = double(steps[n]) * freq;
      out[n * dim + i] = static_cast<float>(std::sin(arg));
      out[n * dim + half + i] = static_cast<float>(std::cos(arg));
    }
  return out;
}

Denoiser::Denoiser(Config config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng = derive_rng(seed, -1, 0xD0);
  const int emb = config_.embedding_dim();
  emb1_ = nn::Linear("unet.emb1", emb, emb, rng);
  emb2_ = nn::Linear("unet.emb2", emb, emb, rng);
  conv_in_ = nn::Conv2d("unet.conv_in", config_.in_channels, config_.channels_at(0), 3, 1, rng);

  int cur = config_.channels_at(0);
  for (int l = 0; l < config_.levels; ++l) {
    const int ch = config_.channels_at(l);
    for (int r = 0; r < config_.res_blocks; ++r) {
      down_blocks_.emplace_back("unet.down" + std::to_string(l) + ".res" + std::to_string(r), cur, ch, emb, rng);
      cur = ch;
    }
    downs_.emplace_back("unet.down" + std::to_string(l) + ".conv", ch, ch, 3, 2, rng);
  }
  mid_ = nn::ResBlock("unet.mid", cur, cur, emb, rng);
  for (int l = config_.levels - 1; l >= 0; --l) {
    const int ch = config_.channels_at(l);
    ups_.emplace_back("unet.up" + std::to_string(l) + ".upsample", cur, cur, rng);
    int in = cur + ch;
    for (int r = 0; r < config_.res_blocks; ++r) {
      up_blocks_.emplace_back("unet.up" + std::to_string(l) + ".res" + std::to_string(r), in, ch, emb, rng);
      in = ch;
    }
    cur = ch;
  }
  conv_out_ = nn::Conv2d("unet.conv_out", cur, config_.out_channels, 3, 1, rng, /*zero_init=*/true);
}

Tensor Denoiser::forward(const Tensor& x, const std::vector<int>& steps, Saved* saved) const {
  if (x.c() != config_.in_channels)
    throw std::invalid_argument("denoiser expects " + std::to_string(config_.in_channels) + " channels, got " +
                                x.shape().str());
  if (int(steps.size()) != x.n()) throw std::invalid_argument("denoiser needs one step per batch item");
  const int f = 1 << config_.levels;
  if (x.h() % f != 0 || x.w() % f != 0)
    throw std::invalid_argument("denoiser input " + x.shape().str() + " not divisible by " + std::to_string(f));

  Tensor sinusoid = timestep_embedding(steps, config_.embedding_dim());
  Tensor e1 = emb1_.forward(sinusoid);
  Tensor a1 = nn::silu(e1);
  Tensor e2 = emb2_.forward(a1);
  Tensor emb = nn::silu(e2);

  const int L = config_.levels, R = config_.res_blocks;
  if (saved) {
    saved->conv_in_input = x;
    saved->down_blocks.assign(down_blocks_.size(), {});
    saved->down_inputs.assign(L, {});
    saved->ups.assign(L, {});
    saved->up_channels.assign(L, 0);
    saved->up_blocks.assign(up_blocks_.size(), {});
  }

  std::vector<Tensor> skips(L);
  Tensor h = conv_in_.forward(x);
  for (int l = 0; l < L; ++l) {
    for (int r = 0; r < R; ++r) {
      const int i = l * R + r;
      h = down_blocks_[i].forward(h, &emb, saved ? &saved->down_blocks[i] : nullptr);
    }
    skips[l] = h;
    h = downs_[l].forward(h);
  }
  h = mid_.forward(h, &emb, saved ? &saved->mid : nullptr);
  for (int i = 0; i < L; ++i) {
    const int l = L - 1 - i;
    h = ups_[i].forward(h, saved ? &saved->ups[i] : nullptr);
    if (saved) saved->up_channels[i] = h.c();
    h = concat_channels(h, skips[l]);
    for (int r = 0; r < R; ++r) {
      const int b = i * R + r;
      h = up_blocks_[b].forward(h, &emb, saved ? &saved->up_blocks[b] : nullptr);
    }
  }
  Tensor act = nn::silu(h);
  Tensor out = conv_out_.forward(act);

  if (saved) {
    saved->down_inputs = std::move(skips);
    saved->out_pre = std::move(h);
    saved->out_act = std::move(act);
    saved->sinusoid = std::move(sinusoid);
    saved->e1 = std::move(e1);
    saved->a1 = std::move(a1);
    saved->e2 = std::move(e2);
    saved->emb = std::move(emb);
  }
  return out;
}

void Denoiser::backward(const Tensor& grad_y, const Saved& saved) {
  const int L = config_.levels, R = config_.res_blocks;
  Tensor grad_emb(saved.emb.shape());
  Tensor g = nn::silu_backward(saved.out_pre, conv_out_.backward(grad_y, saved.out_act));

  std::vector<Tensor> grad_skips(L);
  for (int i = L - 1; i >= 0; --i) {
    const int l = L - 1 - i;
    for (int r = R - 1; r >= 0; --r) {
      const int b = i * R + r;
      g = up_blocks_[b].backward(g, saved.up_blocks[b], &grad_emb);
    }
    auto [g_up, g_skip] = split_channels(g, saved.up_channels[i]);
    grad_skips[l] = std::move(g_skip);
    g = ups_[i].backward(g_up, saved.ups[i]);
  }
  g = mid_.backward(g, saved.mid, &grad_emb);
  for (int l = L - 1; l >= 0; --l) {
    g = downs_[l].backward(g, saved.down_inputs[l]);
    nn::add_inplace(g, grad_skips[l]);
    for (int r = R - 1; r >= 0; --r) {
      const int i = l * R + r;
      g = down_blocks_[i].backward(g, saved.down_blocks[i], &grad_emb);
    }
  }
  conv_in_.backward(g, saved.conv_in_input);

  Tensor g_e2 = nn::silu_backward(saved.e2, grad_emb);
  Tensor g_a1 = emb2_.backward(g_e2, saved.a1);
  emb1_.backward(nn::silu_backward(saved.e1, g_a1), saved.sinusoid);
}

nn::ParameterList Denoiser::parameters() {
  nn::ParameterList out;
  emb1_.collect(out);
  emb2_.collect(out);
  conv_in_.collect(out);
  for (auto& b : down_blocks_) b.collect(out);
  for (auto& d : downs_) d.collect(out);
  mid_.collect(out);
  for (auto& u : ups_) u.collect(out);
  for (auto& b : up_blocks_) b.collect(out);
  conv_out_.collect(out);
  return out;
}

std::map<std::string, Tensor> Denoiser::state() const {
  std::map<std::string, Tensor> out;
  for (auto* p : const_cast<Denoiser*>(this)->parameters()) out[p->name] = p->value;
  return out;
}

void Denoiser::load_state(const std::map<std::string, Tensor>& state) {
  for (auto* p : parameters()) {
    auto it = state.find(p->name);
    if (it == state.end()) throw std::runtime_error("checkpoint is missing tensor " + p->name);
    if (!(it->second.shape() == p->value.shape()))
      throw std::runtime_error("checkpoint tensor " + p->name + " has the wrong shape");
    p->value = it->second;
  }
}

}  // namespace latseg::denoiser
