#include "latseg/autoencoder.hpp"

#include <algorithm>
#include <numeric>

namespace latseg::autoencoder {

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::image_mse:
      return "image_mse";
    case Mode::mask_mse:
      return "mask_mse";
    case Mode::mask_wce:
      return "mask_wce";
  }
  return "image_mse";
}

Mode mode_from_string(const std::string& s) {
  if (s == "image_mse") return Mode::image_mse;
  if (s == "mask_mse") return Mode::mask_mse;
  if (s == "mask_wce") return Mode::mask_wce;
  throw std::invalid_argument("unknown autoencoder mode '" + s + "' (expected image_mse|mask_mse|mask_wce)");
}

int Config::channels_at(int level) const {
  long ch = long(base_channels) << level;
  return int(std::min<long>(ch, max_channels));
}

void Config::validate() const {
  if (levels < 0 || levels > 8) throw std::invalid_argument("autoencoder levels must be in [0, 8]");
  if (base_channels < 1 || max_channels < base_channels)
    throw std::invalid_argument("autoencoder needs 1 <= base_channels <= max_channels");
  if (res_blocks < 0) throw std::invalid_argument("autoencoder res_blocks must be >= 0");
  if (latent_channels < 1) throw std::invalid_argument("autoencoder latent_channels must be >= 1");
  if (codebook_size < 2) throw std::invalid_argument("autoencoder codebook_size must be >= 2");
  if (!(commitment_beta > 0.0)) throw std::invalid_argument("commitment_beta must be positive");
  if (!(pos_weight >= 1.0)) throw std::invalid_argument("pos_weight must be >= 1");
  if (mode == Mode::image_mse && image_channels < 1)
    throw std::invalid_argument("image autoencoder needs image_channels >= 1");
}

// ---------------------------------------------------------------- Encoder

Encoder::Encoder(const Config& config, Rng& rng)
    : levels_(config.levels), res_blocks_(config.res_blocks) {
  conv_in_ = nn::Conv2d("enc.conv_in", config.input_channels(), config.channels_at(0), 3, 1, rng);
  for (int l = 0; l < levels_; ++l) {
    const int ch = config.channels_at(l);
    for (int r = 0; r < res_blocks_; ++r)
      blocks_.emplace_back("enc.l" + std::to_string(l) + ".res" + std::to_string(r), ch, ch, 0, rng);
    downs_.emplace_back("enc.l" + std::to_string(l) + ".down", ch, config.channels_at(l + 1), 3, 2, rng);
  }
  const int top = config.channels_at(levels_);
  mid_ = nn::ResBlock("enc.mid", top, top, 0, rng);
  conv_out_ = nn::Conv2d("enc.conv_out", top, config.latent_channels, 3, 1, rng);
}

Tensor Encoder::forward(const Tensor& x, Saved* saved) const {
  if (saved) {
    saved->blocks.assign(blocks_.size(), {});
    saved->down_inputs.assign(downs_.size(), {});
    saved->conv_in_input = x;
  }
  Tensor h = conv_in_.forward(x);
  for (int l = 0; l < levels_; ++l) {
    for (int r = 0; r < res_blocks_; ++r) {
      const int i = l * res_blocks_ + r;
      h = blocks_[i].forward(h, nullptr, saved ? &saved->blocks[i] : nullptr);
    }
    if (saved) saved->down_inputs[l] = h;
    h = downs_[l].forward(h);
  }
  h = mid_.forward(h, nullptr, saved ? &saved->mid : nullptr);
  Tensor a = nn::silu(h);
  Tensor z = conv_out_.forward(a);
  if (saved) {
    saved->out_pre = std::move(h);
    saved->out_act = std::move(a);
  }
  return z;
}

void Encoder::backward(const Tensor& grad_z, const Saved& saved) {
  Tensor g = nn::silu_backward(saved.out_pre, conv_out_.backward(grad_z, saved.out_act));
  g = mid_.backward(g, saved.mid, nullptr);
  for (int l = levels_ - 1; l >= 0; --l) {
    g = downs_[l].backward(g, saved.down_inputs[l]);
    for (int r = res_blocks_ - 1; r >= 0; --r) {
      const int i = l * res_blocks_ + r;
      g = blocks_[i].backward(g, saved.blocks[i], nullptr);
    }
  }
  conv_in_.backward(g, saved.conv_in_input);
}

void Encoder::collect(nn::ParameterList& out) {
  conv_in_.collect(out);
  for (auto& b : blocks_) b.collect(out);
  for (auto& d : downs_) d.collect(out);
  mid_.collect(out);
  conv_out_.collect(out);
}

// ---------------------------------------------------------------- Decoder

Decoder::Decoder(const Config& config, Rng& rng)
    : levels_(config.levels), res_blocks_(config.res_blocks) {
  const int top = config.channels_at(levels_);
  conv_in_ = nn::Conv2d("dec.conv_in", config.latent_channels, top, 3, 1, rng);
  mid_ = nn::ResBlock("dec.mid", top, top, 0, rng);
  for (int l = levels_ - 1; l >= 0; --l) {
    const int ch = config.channels_at(l);
    ups_.emplace_back("dec.l" + std::to_string(l) + ".up", config.channels_at(l + 1), ch, rng);
    for (int r = 0; r < res_blocks_; ++r)
      blocks_.emplace_back("dec.l" + std::to_string(l) + ".res" + std::to_string(r), ch, ch, 0, rng);
  }
  conv_out_ = nn::Conv2d("dec.conv_out", config.channels_at(0), config.output_channels(), 3, 1, rng);
}

Tensor Decoder::forward(const Tensor& zq, Saved* saved) const {
  if (saved) {
    saved->conv_in_input = zq;
    saved->ups.assign(ups_.size(), {});
    saved->blocks.assign(blocks_.size(), {});
  }
  Tensor h = conv_in_.forward(zq);
  h = mid_.forward(h, nullptr, saved ? &saved->mid : nullptr);
  for (int i = 0; i < levels_; ++i) {
    h = ups_[i].forward(h, saved ? &saved->ups[i] : nullptr);
    for (int r = 0; r < res_blocks_; ++r) {
      const int b = i * res_blocks_ + r;
      h = blocks_[b].forward(h, nullptr, saved ? &saved->blocks[b] : nullptr);
    }
  }
  Tensor a = nn::silu(h);
  Tensor out = conv_out_.forward(a);
  if (saved) {
    saved->out_pre = std::move(h);
    saved->out_act = std::move(a);
  }
  return out;
}

Tensor Decoder::backward(const Tensor& grad_out, const Saved& saved) {
  Tensor g = nn::silu_backward(saved.out_pre, conv_out_.backward(grad_out, saved.out_act));
  for (int i = levels_ - 1; i >= 0; --i) {
    for (int r = res_blocks_ - 1; r >= 0; --r) {
      const int b = i * res_blocks_ + r;
      g = blocks_[b].backward(g, saved.blocks[b], nullptr);
    }
    g = ups_[i].backward(g, saved.ups[i]);
  }
  g = mid_.backward(g, saved.mid, nullptr);
  return conv_in_.backward(g, saved.conv_in_input);
}

void Decoder::collect(nn::ParameterList& out) {
  conv_in_.collect(out);
  mid_.collect(out);
  for (auto& u : ups_) u.collect(out);
  for (auto& b : blocks_) b.collect(out);
  conv_out_.collect(out);
}

// ---------------------------------------------------------------- VqAutoencoder

namespace {

Rng model_rng(std::uint64_t seed) { return derive_rng(seed, -1, 0xAE); }

}  // namespace

VqAutoencoder::VqAutoencoder(Config config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng = model_rng(seed);
  encoder_ = Encoder(config_, rng);
  decoder_ = Decoder(config_, rng);
  codebook_ = vq::Codebook(config_.codebook_size, config_.latent_channels, rng);
}

Tensor VqAutoencoder::prepare_input(const Tensor& raw) const {
  if (raw.c() != config_.input_channels())
    throw std::invalid_argument("autoencoder expects " + std::to_string(config_.input_channels()) +
                                " input channels, got " + raw.shape().str());
  const int f = config_.factor();
  if (raw.h() % f != 0 || raw.w() % f != 0)
    throw std::invalid_argument("input " + raw.shape().str() + " is not divisible by the downsampling factor " +
                                std::to_string(f));
  if (!all_finite(raw)) throw std::invalid_argument("autoencoder input contains non-finite values");
  if (config_.is_mask()) {
    for (float v : raw.vec())
      if (v != 0.0f && v != 1.0f) throw std::invalid_argument("mask input is not binary");
    return raw;
  }
  Tensor x(raw.shape());
  for (std::size_t i = 0; i < raw.size(); ++i) x[i] = 2.0f * raw[i] - 1.0f;
  return x;
}

Tensor VqAutoencoder::encode(const Tensor& raw) const { return encoder_.forward(prepare_input(raw), nullptr); }

vq::LatentCode VqAutoencoder::quantize(const Tensor& z) const {
  return vq::quantize(z, codebook_, config_.factor());
}

Tensor VqAutoencoder::decode(const Tensor& zq) const {
  if (zq.c() != config_.latent_channels)
    throw std::invalid_argument("decode: latent has " + std::to_string(zq.c()) + " channels, expected " +
                                std::to_string(config_.latent_channels));
  return decoder_.forward(zq, nullptr);
}

Tensor VqAutoencoder::reconstruct(const Tensor& raw) const { return decode(quantize(encode(raw)).quantized); }

Tensor VqAutoencoder::to_image(const Tensor& decoded) const {
  Tensor out(decoded.shape());
  for (std::size_t i = 0; i < decoded.size(); ++i)
    out[i] = std::clamp(0.5f * (decoded[i] + 1.0f), 0.0f, 1.0f);
  return out;
}

std::vector<Mask> VqAutoencoder::to_masks(const Tensor& decoded) const {
  if (!config_.is_mask()) throw std::logic_error("to_masks on an image autoencoder");
  std::vector<Mask> out;
  for (int n = 0; n < decoded.n(); ++n) {
    Mask m(decoded.h(), decoded.w());
    for (int y = 0; y < decoded.h(); ++y)
      for (int x = 0; x < decoded.w(); ++x) {
        if (config_.mode == Mode::mask_wce)
          m.at(y, x) = decoded.at(n, 1, y, x) > decoded.at(n, 0, y, x) ? 1 : 0;
        else
          m.at(y, x) = decoded.at(n, 0, y, x) >= 0.5f ? 1 : 0;
      }
    out.push_back(std::move(m));
  }
  return out;
}

Tensor VqAutoencoder::reconstruction_loss(const Tensor& prepared, const Tensor& decoded, double* value) const {
  Tensor grad;
  if (config_.mode == Mode::mask_wce)
    *value = vq::wce_loss(decoded, prepared, config_.pos_weight, &grad);
  else
    *value = vq::mse_loss(decoded, prepared, &grad);
  return grad;
}

vq::LossReport VqAutoencoder::losses(const Tensor& raw, const Tensor& z, const Tensor& zq,
                                     const Tensor& decoded) const {
  require_same_shape(z, zq, "vq_losses");
  vq::LossReport r;
  const Tensor x = prepare_input(raw);
  reconstruction_loss(x, decoded, &r.rec);
  double sq = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double d = double(z[i]) - double(zq[i]);
    sq += d * d;
  }
  const double mean_sq = z.size() ? sq / double(z.size()) : 0.0;
  r.codebook = mean_sq;
  r.commit = config_.commitment_beta * mean_sq;
  r.total = r.rec + r.codebook + r.commit;
  if (!std::isfinite(r.total)) throw std::runtime_error("vq_losses: non-finite loss");
  return r;
}

VqAutoencoder::StepResult VqAutoencoder::train_step(const Tensor& raw_batch, nn::AdamW& optimizer) {
  const Tensor x = prepare_input(raw_batch);
  Encoder::Saved enc_saved;
  Tensor z = encoder_.forward(x, &enc_saved);
  vq::LatentCode code = quantize(z);
  Decoder::Saved dec_saved;
  const Tensor decoded = decoder_.forward(code.quantized, &dec_saved);

  StepResult result;
  const Tensor grad_decoded = reconstruction_loss(x, decoded, &result.loss.rec);
  vq::TermGradients<float> cb_grads, commit_grads;
  result.loss.codebook = vq::codebook_loss(z, codebook_.entries(), code.indices, &cb_grads);
  result.loss.commit = vq::commitment_loss(z, codebook_.entries(), code.indices, config_.commitment_beta,
                                           &commit_grads);
  result.loss.total = result.loss.rec + result.loss.codebook + result.loss.commit;
  if (!std::isfinite(result.loss.total))
    throw TrainingDiverged("autoencoder loss is non-finite (rec=" + std::to_string(result.loss.rec) +
                           ", codebook=" + std::to_string(result.loss.codebook) + ")");

  optimizer.zero_grad();
  // Straight-through: the decoder's input gradient is routed to z unchanged.
  Tensor grad_z = decoder_.backward(grad_decoded, dec_saved);
  nn::add_inplace(grad_z, commit_grads.encoder);
  encoder_.backward(grad_z, enc_saved);
  nn::add_inplace(codebook_.parameter().grad, cb_grads.entries);
  optimizer.step();

  result.indices = std::move(code.indices);
  result.z = std::move(z);
  return result;
}

nn::ParameterList VqAutoencoder::parameters() {
  nn::ParameterList out;
  encoder_.collect(out);
  decoder_.collect(out);
  out.push_back(&codebook_.parameter());
  return out;
}

std::map<std::string, Tensor> VqAutoencoder::state() const {
  std::map<std::string, Tensor> out;
  for (auto* p : const_cast<VqAutoencoder*>(this)->parameters()) out[p->name] = p->value;
  return out;
}

void VqAutoencoder::load_state(const std::map<std::string, Tensor>& state) {
  for (auto* p : parameters()) {
    auto it = state.find(p->name);
    if (it == state.end()) throw std::runtime_error("checkpoint is missing tensor " + p->name);
    if (!(it->second.shape() == p->value.shape()))
      throw std::runtime_error("checkpoint tensor " + p->name + " has shape " + it->second.shape().str() +
                               ", model expects " + p->value.shape().str());
    p->value = it->second;
  }
}

// ---------------------------------------------------------------- Trainer

AutoencoderTrainer::AutoencoderTrainer(VqAutoencoder& model, std::vector<Tensor> samples, TrainOptions options)
    : model_(model),
      samples_(std::move(samples)),
      options_(options),
      optimizer_(model.parameters(), options.optimizer) {
  if (samples_.empty()) throw std::invalid_argument("autoencoder training needs a nonempty dataset");
  if (options_.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  for (const auto& s : samples_) model_.prepare_input(s);
}

void AutoencoderTrainer::initialize_codebook(Rng& rng) {
  // Seed entries with encoder outputs so that the initial assignment is spread.
  const int take = std::min<int>(int(samples_.size()), std::max(options_.batch_size, 8));
  std::vector<Tensor> items(samples_.begin(), samples_.begin() + take);
  const Tensor z = model_.encode(stack_batch(items));
  const std::size_t plane = z.shape().plane();
  const std::size_t positions = std::size_t(z.n()) * plane;
  std::uniform_int_distribution<std::size_t> pick(0, positions - 1);
  auto& cb = model_.codebook();
  for (int k = 0; k < cb.size(); ++k) {
    const std::size_t pos = pick(rng);
    const std::size_t n = pos / plane, p = pos % plane;
    for (int c = 0; c < cb.dim(); ++c) cb.entry(k)[c] = z[(n * z.c() + c) * plane + p];
  }
}

EpochLog AutoencoderTrainer::run_epoch() {
  Rng rng = derive_rng(options_.seed, epoch_, 0xC0DE);
  if (epoch_ == 0) initialize_codebook(rng);

  std::vector<std::size_t> order(samples_.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  auto& cb = model_.codebook();
  EpochLog log;
  log.epoch = epoch_;
  log.usage.assign(cb.size(), 0);

  // Reservoir of encoder outputs for re-seeding unused entries.
  const std::size_t reservoir_cap = 4096;
  std::vector<std::vector<float>> reservoir;
  std::size_t seen = 0;

  int steps = 0;
  for (std::size_t first = 0; first < order.size(); first += options_.batch_size) {
    const std::size_t last = std::min(order.size(), first + options_.batch_size);
    std::vector<Tensor> items;
    for (std::size_t i = first; i < last; ++i) items.push_back(samples_[order[i]]);
    auto step = model_.train_step(stack_batch(items), optimizer_);

    log.loss.rec += step.loss.rec;
    log.loss.codebook += step.loss.codebook;
    log.loss.commit += step.loss.commit;
    log.loss.total += step.loss.total;
    log.step_rec.push_back(step.loss.rec);
    ++steps;
    for (int k : step.indices) ++log.usage[k];

    const std::size_t plane = step.z.shape().plane();
    for (int n = 0; n < step.z.n(); ++n)
      for (std::size_t p = 0; p < plane; ++p, ++seen) {
        std::size_t slot = reservoir.size();
        if (reservoir.size() >= reservoir_cap) {
          slot = std::uniform_int_distribution<std::size_t>(0, seen)(rng);
          if (slot >= reservoir_cap) continue;
        }
        std::vector<float> v(step.z.c());
        for (int c = 0; c < step.z.c(); ++c) v[c] = step.z[(std::size_t(n) * step.z.c() + c) * plane + p];
        if (slot == reservoir.size())
          reservoir.push_back(std::move(v));
        else
          reservoir[slot] = std::move(v);
      }
  }
  log.loss.rec /= steps;
  log.loss.codebook /= steps;
  log.loss.commit /= steps;
  log.loss.total /= steps;

  int used = 0;
  for (int k = 0; k < cb.size(); ++k) {
    if (log.usage[k] > 0) {
      ++used;
      continue;
    }
    if (reservoir.empty()) continue;
    const auto& v = reservoir[std::uniform_int_distribution<std::size_t>(0, reservoir.size() - 1)(rng)];
    std::copy(v.begin(), v.end(), cb.entry(k));
    ++log.reseeded;
  }
  log.usage_fraction = double(used) / cb.size();
  ++epoch_;
  return log;
}

}  // namespace latseg::autoencoder
