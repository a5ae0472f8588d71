#include "latseg/segmenter.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "latseg/random.hpp"

namespace latseg::segmenter {

ConditionedLatent condition_concat(const Tensor& noisy_mask, const Tensor& image_cond) {
  if (noisy_mask.h() != image_cond.h() || noisy_mask.w() != image_cond.w() || noisy_mask.n() != image_cond.n())
    throw std::invalid_argument("condition_concat: mask latent " + noisy_mask.shape().str() +
                                " and image latent " + image_cond.shape().str() + " differ in extent");
  return {noisy_mask, image_cond, concat_channels(noisy_mask, image_cond)};
}

// ---------------------------------------------------------------- codecs

VqImageCodec::VqImageCodec(const autoencoder::VqAutoencoder& model) : model_(model) {
  if (model.config().is_mask()) throw std::invalid_argument("VqImageCodec needs an image autoencoder");
}

Tensor VqImageCodec::encode(const Tensor& images) const { return model_.quantize(model_.encode(images)).quantized; }

VqMaskCodec::VqMaskCodec(const autoencoder::VqAutoencoder& model) : model_(model) {
  if (!model.config().is_mask()) throw std::invalid_argument("VqMaskCodec needs a mask autoencoder");
}

Tensor VqMaskCodec::encode(const Tensor& masks) const { return model_.quantize(model_.encode(masks)).quantized; }

std::vector<Mask> VqMaskCodec::decode(const Tensor& latents) const { return decode_mask(latents, model_); }

std::vector<Mask> decode_mask(const Tensor& latents, const autoencoder::VqAutoencoder& mask_model) {
  if (latents.c() != mask_model.config().latent_channels)
    throw std::invalid_argument("decode_mask: latent " + latents.shape().str() + " does not match the mask codebook");
  return mask_model.to_masks(mask_model.decode(mask_model.quantize(latents).quantized));
}

Tensor IdentityImageCodec::encode(const Tensor& images) const {
  if (images.c() != channels_) throw std::invalid_argument("identity image codec: wrong channel count");
  Tensor out(images.shape());
  for (std::size_t i = 0; i < images.size(); ++i) out[i] = 2.0f * images[i] - 1.0f;
  return out;
}

Tensor IdentityMaskCodec::encode(const Tensor& masks) const {
  if (masks.c() != 1) throw std::invalid_argument("identity mask codec: masks have one channel");
  Tensor out(masks.shape());
  for (std::size_t i = 0; i < masks.size(); ++i) {
    if (masks[i] != 0.0f && masks[i] != 1.0f) throw std::invalid_argument("identity mask codec: mask is not binary");
    out[i] = masks[i] == 1.0f ? 1.0f : -1.0f;
  }
  return out;
}

std::vector<Mask> IdentityMaskCodec::decode(const Tensor& latents) const {
  std::vector<Mask> out;
  for (int n = 0; n < latents.n(); ++n) out.push_back(tensor_to_mask(latents, n, 0.0f));
  return out;
}

namespace {

template <typename Codec>
std::vector<Tensor> encode_chunks(const Codec& codec, const std::vector<Tensor>& items, int batch) {
  std::vector<Tensor> out;
  out.reserve(items.size());
  for (std::size_t first = 0; first < items.size(); first += batch) {
    const std::size_t last = std::min(items.size(), first + std::size_t(batch));
    std::vector<Tensor> chunk(items.begin() + first, items.begin() + last);
    const Tensor z = codec.encode(stack_batch(chunk));
    for (int n = 0; n < z.n(); ++n) out.push_back(z.batch_slice(n, 1));
  }
  return out;
}

}  // namespace

std::vector<Tensor> encode_all(const ImageCodec& codec, const std::vector<Tensor>& images, int batch) {
  return encode_chunks(codec, images, batch);
}

std::vector<Tensor> encode_all(const MaskCodec& codec, const std::vector<Tensor>& masks, int batch) {
  return encode_chunks(codec, masks, batch);
}

// ---------------------------------------------------------------- scaling

LatentScaling LatentScaling::fit(const std::vector<Tensor>& latents, double margin) {
  if (latents.empty()) throw std::invalid_argument("LatentScaling::fit: no latents");
  double sum = 0.0, sq = 0.0, lo = INFINITY, hi = -INFINITY;
  std::size_t count = 0;
  for (const auto& z : latents)
    for (float v : z.vec()) {
      sum += v;
      sq += double(v) * v;
      lo = std::min(lo, double(v));
      hi = std::max(hi, double(v));
      ++count;
    }
  const double mean = sum / double(count);
  const double var = std::max(0.0, sq / double(count) - mean * mean);
  LatentScaling s;
  s.scale = var > 1e-12 ? 1.0 / std::sqrt(var) : 1.0;
  const double slo = lo * s.scale, shi = hi * s.scale;
  const double pad = margin * std::max(shi - slo, 1e-6);
  s.clip_low = slo - pad;
  s.clip_high = shi + pad;
  return s;
}

Tensor LatentScaling::normalize(const Tensor& latent) const {
  Tensor out(latent.shape());
  for (std::size_t i = 0; i < latent.size(); ++i) out[i] = static_cast<float>(double(latent[i]) * scale);
  return out;
}

Tensor LatentScaling::denormalize(const Tensor& scaled) const {
  Tensor out(scaled.shape());
  for (std::size_t i = 0; i < scaled.size(); ++i) out[i] = static_cast<float>(double(scaled[i]) / scale);
  return out;
}

// ---------------------------------------------------------------- training

NoisedBatch make_noised_batch(const Tensor& mask_latents, const Tensor& image_latents,
                              const diffusion::NoiseSchedule& schedule, Rng& rng) {
  if (mask_latents.n() != image_latents.n())
    throw std::invalid_argument("make_noised_batch: mask and image batches differ in size");
  NoisedBatch b;
  b.clean = mask_latents;
  b.image_cond = image_latents;
  b.noisy = Tensor(mask_latents.shape());
  b.eps = Tensor(mask_latents.shape());
  std::uniform_int_distribution<int> pick_t(1, schedule.steps());
  for (int n = 0; n < mask_latents.n(); ++n) {
    const int t = pick_t(rng);
    const Tensor clean = mask_latents.batch_slice(n, 1);
    const Tensor eps = randn<float>(clean.shape(), rng);
    const auto state = diffusion::sample_noisy(clean, t, schedule, eps);
    std::copy(state.value.vec().begin(), state.value.vec().end(), b.noisy.sample(n).begin());
    std::copy(eps.vec().begin(), eps.vec().end(), b.eps.sample(n).begin());
    b.steps.push_back(t);
  }
  b.conditioned = condition_concat(b.noisy, image_latents).combined;
  return b;
}

double batch_loss(const denoiser::NoisePredictor& model, const NoisedBatch& batch) {
  return diffusion::diffusion_loss(batch.eps, model.predict_noise(batch.conditioned, batch.steps));
}

double training_step(denoiser::Denoiser& model, nn::AdamW& optimizer, const Tensor& mask_latents,
                     const Tensor& image_latents, const diffusion::NoiseSchedule& schedule, Rng& rng) {
  const NoisedBatch batch = make_noised_batch(mask_latents, image_latents, schedule, rng);
  denoiser::Denoiser::Saved saved;
  const Tensor pred = model.forward(batch.conditioned, batch.steps, &saved);
  const double loss = diffusion::diffusion_loss(batch.eps, pred);
  if (!std::isfinite(loss)) throw TrainingDiverged("diffusion loss is non-finite");
  Tensor grad(pred.shape());
  const double m = double(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) grad[i] = static_cast<float>(2.0 * (double(pred[i]) - batch.eps[i]) / m);
  optimizer.zero_grad();
  model.backward(grad, saved);
  optimizer.step();
  return loss;
}

DiffusionTrainer::DiffusionTrainer(denoiser::Denoiser& model, diffusion::NoiseSchedule schedule,
                                   std::vector<Tensor> mask_latents, std::vector<Tensor> image_latents,
                                   TrainOptions options)
    : model_(model),
      schedule_(std::move(schedule)),
      masks_(std::move(mask_latents)),
      images_(std::move(image_latents)),
      options_(options),
      optimizer_(model.parameters(), options.optimizer) {
  if (masks_.empty() || masks_.size() != images_.size())
    throw std::invalid_argument("diffusion training needs equally many (nonzero) mask and image latents");
  if (options_.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (masks_.front().c() + images_.front().c() != model.in_channels() || masks_.front().c() != model.out_channels())
    throw std::invalid_argument("latent channels do not match the denoiser configuration");
}

void DiffusionTrainer::set_mask_latents(std::vector<Tensor> mask_latents) {
  if (mask_latents.size() != images_.size()) throw std::invalid_argument("set_mask_latents: wrong sample count");
  masks_ = std::move(mask_latents);
}

EpochLog DiffusionTrainer::run_epoch() {
  Rng rng = derive_rng(options_.seed, epoch_, 0xD1F);
  std::vector<std::size_t> order(masks_.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  EpochLog log;
  log.epoch = epoch_;
  for (std::size_t first = 0; first < order.size(); first += options_.batch_size) {
    const std::size_t last = std::min(order.size(), first + options_.batch_size);
    std::vector<Tensor> ms, is;
    for (std::size_t i = first; i < last; ++i) {
      ms.push_back(masks_[order[i]]);
      is.push_back(images_[order[i]]);
    }
    const double loss = training_step(model_, optimizer_, stack_batch(ms), stack_batch(is), schedule_, rng);
    log.step_loss.push_back(loss);
    log.loss += loss;
  }
  log.loss /= double(log.step_loss.size());
  ++epoch_;
  return log;
}

// ---------------------------------------------------------------- sampling

Tensor sample_mask_latents(const Tensor& image_latents, const denoiser::NoisePredictor& model,
                           const diffusion::NoiseSchedule& schedule, std::vector<Rng>& rngs,
                           const LatentScaling& scaling, const SamplerOptions& options) {
  const int batch = image_latents.n();
  if (int(rngs.size()) != batch) throw std::invalid_argument("sample_mask_latents: need one random source per item");
  if (!all_finite(image_latents)) throw std::invalid_argument("sample_mask_latents: image latent is not finite");
  const int channels = model.out_channels();
  if (channels + image_latents.c() != model.in_channels())
    throw std::invalid_argument("sample_mask_latents: image latent channels do not match the denoiser");

  const Shape item{1, channels, image_latents.h(), image_latents.w()};
  std::vector<diffusion::DiffusionState<float>> states(batch);
  for (int n = 0; n < batch; ++n) states[n] = {randn<float>(item, rngs[n]), schedule.steps(), std::nullopt};

  Tensor noisy({batch, channels, item.h, item.w});
  for (int t = schedule.steps(); t >= 1; --t) {
    for (int n = 0; n < batch; ++n)
      std::copy(states[n].value.vec().begin(), states[n].value.vec().end(), noisy.sample(n).begin());
    const Tensor eps_all =
        model.predict_noise(condition_concat(noisy, image_latents).combined, std::vector<int>(batch, t));
    for (int n = 0; n < batch; ++n) {
      Tensor eps = eps_all.batch_slice(n, 1);
      if (options.clip) {
        Tensor x0 = diffusion::predict_x0(states[n], eps, schedule);
        for (auto& v : x0.vec()) v = std::clamp(v, float(scaling.clip_low), float(scaling.clip_high));
        eps = diffusion::eps_from_x0(states[n], x0, schedule);
      }
      states[n] = diffusion::reverse_step(states[n], eps, schedule, rngs[n], options.variance_mode,
                                          options.deterministic_last);
      if (!all_finite(states[n].value))
        throw std::runtime_error("sampling produced a non-finite latent at step " + std::to_string(t));
    }
  }
  std::vector<Tensor> out;
  for (auto& s : states) out.push_back(scaling.denormalize(s.value));
  return stack_batch(out);
}

EnsembleResult aggregate(std::vector<Mask> masks) {
  if (masks.empty()) throw std::invalid_argument("aggregate: need at least one mask");
  EnsembleResult r;
  r.n = int(masks.size());
  r.height = masks.front().height;
  r.width = masks.front().width;
  r.votes.assign(masks.front().size(), 0);
  for (const auto& m : masks) {
    if (m.height != r.height || m.width != r.width) throw std::invalid_argument("aggregate: mask sizes differ");
    for (std::size_t i = 0; i < m.size(); ++i) r.votes[i] += m.pixels[i];
  }
  r.confidence.resize(r.votes.size());
  r.consensus = Mask(r.height, r.width);
  for (std::size_t i = 0; i < r.votes.size(); ++i) {
    r.confidence[i] = double(r.votes[i]) / double(r.n);
    // votes / n >= 1/2, evaluated exactly.
    r.consensus.pixels[i] = 2 * r.votes[i] >= r.n ? 1 : 0;
  }
  r.masks = std::move(masks);
  return r;
}

Rng draw_rng(std::uint64_t image_seed, int draw) { return derive_rng(image_seed, draw, 0x5A3F); }

std::uint64_t image_seed(std::uint64_t seed, int image_index) {
  Rng rng = derive_rng(seed, image_index, 0x1A6E);
  return rng();
}

std::uint64_t member_seed(std::uint64_t seed, int member) {
  return member == 0 ? seed : image_seed(seed, -member);
}

std::vector<Mask> sample_masks(const Pipeline& pipeline, const std::vector<Tensor>& image_latents,
                               const std::vector<std::uint64_t>& image_seeds,
                               const std::vector<DrawRequest>& requests) {
  if (!pipeline.image_codec || !pipeline.mask_codec || !pipeline.denoiser)
    throw std::invalid_argument("pipeline is incomplete");
  if (image_seeds.size() != image_latents.size()) throw std::invalid_argument("need one seed per image");
  const int chunk = std::max(1, pipeline.max_batch);
  std::vector<Mask> out;
  out.reserve(requests.size());
  for (std::size_t first = 0; first < requests.size(); first += chunk) {
    const std::size_t last = std::min(requests.size(), first + std::size_t(chunk));
    std::vector<Tensor> conds;
    std::vector<Rng> rngs;
    for (std::size_t i = first; i < last; ++i) {
      const auto& r = requests[i];
      conds.push_back(image_latents.at(r.image));
      rngs.push_back(draw_rng(image_seeds[r.image], r.draw));
    }
    const Tensor z = sample_mask_latents(stack_batch(conds), *pipeline.denoiser, pipeline.schedule, rngs,
                                         pipeline.scaling, pipeline.sampler);
    for (auto& m : pipeline.mask_codec->decode(z)) out.push_back(std::move(m));
  }
  return out;
}

namespace {

std::vector<Mask> draws_for(const Pipeline& pipeline, const Tensor& image, int n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("ensemble size n must be >= 1");
  if (image.n() != 1) throw std::invalid_argument("ensemble_segment takes a single image");
  const std::vector<Tensor> latents{pipeline.image_codec->encode(image)};
  std::vector<DrawRequest> requests;
  for (int k = 0; k < n; ++k) requests.push_back({0, k});
  return sample_masks(pipeline, latents, {seed}, requests);
}

}  // namespace

EnsembleResult ensemble_segment(const Pipeline& pipeline, const Tensor& image, int n, std::uint64_t seed) {
  return aggregate(draws_for(pipeline, image, n, seed));
}

EnsembleResult ensemble_segment(const std::vector<Pipeline>& members, const Tensor& image, int n,
                                std::uint64_t seed) {
  if (members.empty()) throw std::invalid_argument("ensemble needs at least one member");
  std::vector<Mask> pooled;
  for (std::size_t m = 0; m < members.size(); ++m) {
    for (auto& mask : draws_for(members[m], image, n, member_seed(seed, int(m)))) pooled.push_back(std::move(mask));
  }
  return aggregate(std::move(pooled));
}

}  // namespace latseg::segmenter
