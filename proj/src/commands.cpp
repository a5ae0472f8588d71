#include "latseg/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "latseg/checkpoint.hpp"
#include "latseg/image_io.hpp"
#include "latseg/metrics.hpp"
#include "latseg/random.hpp"

namespace latseg::cli {

using json = nlohmann::json;

// ---------------------------------------------------------------- context

Context make_context(const CommonOptions& o, bool seed_is_data_seed) {
  Context ctx;
  ctx.config = o.config_path ? config::load(*o.config_path) : config::defaults();
  if (const char* env = std::getenv("LATSEG_OUTPUT_DIR"); env && *env) ctx.config.inference.output_dir = env;
  std::string device = "cpu";
  if (const char* env = std::getenv("LATSEG_DEVICE"); env && *env) device = env;
  if (o.device) device = *o.device;
  if (device != "cpu") throw std::invalid_argument("device '" + device + "' is not available; only 'cpu' is supported");
  if (o.output_dir) ctx.config.inference.output_dir = o.output_dir->string();
  if (o.seed) {
    if (seed_is_data_seed)
      ctx.config.dataset.synthetic.seed = *o.seed;
    else
      ctx.config.training.seed = *o.seed;
  }
  ctx.config.validate();
  ctx.output_dir = ctx.config.inference.output_dir;
  ctx.config_hash = config::hash(ctx.config);
  return ctx;
}

fs::path data_dir(const Context& ctx) { return ctx.output_dir / "data"; }
fs::path vae_dir(const Context& ctx, const std::string& target) { return ctx.output_dir / (target + "_vae"); }
fs::path diffusion_dir(const Context& ctx, int fold) {
  return fold == 0 ? ctx.output_dir / "diffusion" : ctx.output_dir / "diffusion" / ("fold_" + std::to_string(fold));
}

namespace {

std::string hash_comment(const Context& ctx) { return "config_hash: " + ctx.config_hash; }

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& l : lines) out << l << "\n";
}

// Data rows of an earlier CSV whose first column (an epoch) is below `limit`.
std::vector<std::string> kept_rows(const fs::path& path, int limit) {
  std::vector<std::string> out;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || !std::isdigit(static_cast<unsigned char>(line[0]))) continue;
    if (std::stoi(line.substr(0, line.find(','))) < limit) out.push_back(line);
  }
  return out;
}

std::vector<data::AnnotatedSample> load_dataset(const Context& ctx, std::optional<data::Split> split) {
  const auto& d = ctx.config.dataset;
  std::vector<data::AnnotatedSample> samples;
  if (d.source == "synthetic" || d.source == "manifest") {
    const fs::path manifest = d.source == "synthetic" ? data_dir(ctx) / "manifest.jsonl" : fs::path(d.root);
    if (!fs::exists(manifest))
      throw std::runtime_error("no dataset manifest at " + manifest.string() +
                               (d.source == "synthetic" ? "; run generate-synthetic first" : ""));
    samples = data::load_manifest(manifest, split);
  } else {
    samples = data::load_real_dataset(d.root, data::layout_from_string(d.source), d.resolution);
    data::split_patientwise(samples, {8, 1, 1}, d.split_seed);
    if (split)
      std::erase_if(samples, [&](const data::AnnotatedSample& s) { return s.split != *split; });
  }
  for (const auto& s : samples)
    if (s.image.h() != d.resolution || s.image.w() != d.resolution)
      throw std::runtime_error("sample " + s.sample_id + " is " + std::to_string(s.image.h()) + "x" +
                               std::to_string(s.image.w()) + ", config expects " + std::to_string(d.resolution));
  return samples;
}

json schedule_json(const config::ExperimentConfig& c) {
  return {{"steps", c.diffusion.steps},
          {"beta_start", c.diffusion.beta_start},
          {"beta_end", c.diffusion.beta_end},
          {"kind", diffusion::to_string(c.diffusion.schedule)}};
}

json autoencoder_json(const config::ExperimentConfig& c, const std::string& target) {
  return config::to_json(c)[target == "image" ? "image_autoencoder" : "mask_autoencoder"];
}

json denoiser_json(const config::ExperimentConfig& c) { return config::to_json(c)["denoiser"]; }

void require_header(const ckpt::Checkpoint& c, const fs::path& path, const char* key, const json& expected) {
  if (!c.header.contains(key) || c.header[key] != expected)
    throw std::runtime_error("checkpoint " + path.string() + " was written with a different " + key +
                             "; retrain or use the matching config");
}

std::unique_ptr<autoencoder::VqAutoencoder> load_autoencoder(const Context& ctx, const std::string& target) {
  const fs::path path = vae_dir(ctx, target) / "checkpoint.ckpt";
  if (!fs::exists(path))
    throw std::runtime_error("missing " + target + " autoencoder checkpoint " + path.string() +
                             "; run train-vae --target " + target + " first");
  const auto c = ckpt::load(path);
  require_header(c, path, "autoencoder", autoencoder_json(ctx.config, target));
  const auto& cfg = target == "image" ? ctx.config.image_autoencoder : ctx.config.mask_autoencoder;
  auto model = std::make_unique<autoencoder::VqAutoencoder>(cfg, ctx.config.training.seed);
  model->load_state(ckpt::strip_prefix(c.tensors, "model."));
  return model;
}

std::uint64_t fold_seed(std::uint64_t seed, int fold) {
  if (fold == 0) return seed;
  Rng rng = derive_rng(seed, fold, 0xF01D);
  return rng();
}

}  // namespace

// ---------------------------------------------------------------- generate

int generate_synthetic(const Context& ctx) {
  if (ctx.config.dataset.source != "synthetic")
    throw std::invalid_argument("generate-synthetic needs dataset.source = synthetic");
  auto samples = data::generate_synthetic(ctx.config.dataset.synthetic);
  data::split_patientwise(samples, {8, 1, 1}, ctx.config.dataset.split_seed);
  const fs::path dir = data_dir(ctx);
  data::materialize(dir, samples);
  write_lines(dir / "config_hash.txt", {ctx.config_hash});
  std::map<data::Split, int> counts;
  for (const auto& s : samples) ++counts[s.split];
  std::cout << "wrote " << samples.size() << " samples to " << dir.string() << " (train "
            << counts[data::Split::train] << ", val " << counts[data::Split::val] << ", test "
            << counts[data::Split::test] << ")\n";
  return 0;
}

// ---------------------------------------------------------------- train-vae

int train_vae(const Context& ctx, const std::string& target, const TrainOptions& options) {
  if (target != "image" && target != "mask") throw std::invalid_argument("--target must be image or mask");
  const auto& cfg = ctx.config;
  if (cfg.pixel_space) {
    std::cout << "pixel_space config: the " << target << " codec is the identity, nothing to train\n";
    return 0;
  }
  const bool is_mask = target == "mask";
  const auto& ae_cfg = is_mask ? cfg.mask_autoencoder : cfg.image_autoencoder;
  const auto& stage = cfg.training.autoencoder;
  const std::uint64_t seed = cfg.training.seed;

  const auto train = load_dataset(ctx, data::Split::train);
  auto holdout = load_dataset(ctx, data::Split::val);
  if (train.empty()) throw std::runtime_error("the training split is empty");
  if (holdout.empty()) holdout = {train.front()};
  auto as_tensor = [&](const data::AnnotatedSample& s, int i) {
    return is_mask ? mask_to_tensor(data::training_target(s, cfg.dataset.target_policy, seed, 0, i)) : s.image;
  };
  std::vector<Tensor> tensors;
  for (std::size_t i = 0; i < train.size(); ++i) tensors.push_back(as_tensor(train[i], int(i)));
  const Tensor preview = as_tensor(holdout.front(), 0);

  autoencoder::VqAutoencoder model(ae_cfg, seed);
  autoencoder::AutoencoderTrainer trainer(model, tensors, {stage.batch_size, config::optimizer_options(stage), seed});

  const fs::path dir = vae_dir(ctx, target);
  const fs::path ckpt_path = dir / "checkpoint.ckpt", csv_path = dir / "loss.csv";
  std::vector<std::string> rows;
  if (options.resume && fs::exists(ckpt_path)) {
    const auto c = ckpt::load(ckpt_path);
    require_header(c, ckpt_path, "autoencoder", autoencoder_json(cfg, target));
    require_header(c, ckpt_path, "training", config::to_json(cfg)["training"]);
    model.load_state(ckpt::strip_prefix(c.tensors, "model."));
    trainer.optimizer().load_state(ckpt::strip_prefix(c.tensors, "optim."));
    trainer.set_epoch(c.header.at("epoch").get<int>());
    rows = kept_rows(csv_path, trainer.epoch());
    std::cout << "resuming " << target << " autoencoder at epoch " << trainer.epoch() << "\n";
  }

  int ran = 0;
  while (trainer.epoch() < stage.epochs && (!options.max_epochs || ran < *options.max_epochs)) {
    const auto log = trainer.run_epoch();
    ++ran;
    rows.push_back(std::to_string(log.epoch) + "," + fmt(log.loss.rec) + "," + fmt(log.loss.codebook) + "," +
                   fmt(log.loss.commit) + "," + fmt(log.loss.total) + "," + fmt(log.usage_fraction));
    std::vector<std::string> lines{"# " + hash_comment(ctx), "epoch,rec,codebook,commit,total,codebook_usage_fraction"};
    lines.insert(lines.end(), rows.begin(), rows.end());
    write_lines(csv_path, lines);

    ckpt::Checkpoint c;
    c.header = {{"kind", "autoencoder"},
                {"target", target},
                {"autoencoder", autoencoder_json(cfg, target)},
                {"training", config::to_json(cfg)["training"]},
                {"epoch", trainer.epoch()},
                {"seed", seed},
                {"config_hash", ctx.config_hash}};
    c.tensors = ckpt::with_prefix(model.state(), "model.");
    for (auto& [k, v] : ckpt::with_prefix(trainer.optimizer().state(), "optim.")) c.tensors.emplace(k, std::move(v));
    ckpt::save(ckpt_path, c);

    char name[32];
    std::snprintf(name, sizeof name, "epoch_%03d", log.epoch);
    const Tensor rec = model.reconstruct(preview);
    if (is_mask)
      io::write_pbm(dir / "recon" / (std::string(name) + ".pbm"), model.to_masks(rec).front(), hash_comment(ctx));
    else
      io::write_pnm(dir / "recon" / (std::string(name) + (rec.c() == 1 ? ".pgm" : ".ppm")),
                    io::to_raster(model.to_image(rec)), hash_comment(ctx));
    std::printf("[%s vae] epoch %d rec %.5f codebook %.5f commit %.5f usage %.2f\n", target.c_str(), log.epoch,
                log.loss.rec, log.loss.codebook, log.loss.commit, log.usage_fraction);
    std::fflush(stdout);
  }
  return 0;
}

// ---------------------------------------------------------------- train-diffusion

namespace {

struct Codecs {
  std::unique_ptr<autoencoder::VqAutoencoder> image_ae, mask_ae;
  std::unique_ptr<segmenter::ImageCodec> image;
  std::unique_ptr<segmenter::MaskCodec> mask;
};

Codecs load_codecs(const Context& ctx) {
  Codecs c;
  if (ctx.config.pixel_space) {
    c.image = std::make_unique<segmenter::IdentityImageCodec>(ctx.config.image_autoencoder.image_channels);
    c.mask = std::make_unique<segmenter::IdentityMaskCodec>();
  } else {
    c.mask_ae = load_autoencoder(ctx, "mask");
    c.image_ae = load_autoencoder(ctx, "image");
    c.image = std::make_unique<segmenter::VqImageCodec>(*c.image_ae);
    c.mask = std::make_unique<segmenter::VqMaskCodec>(*c.mask_ae);
  }
  return c;
}

json scaling_json(const segmenter::LatentScaling& s) {
  return {{"scale", s.scale}, {"clip_low", s.clip_low}, {"clip_high", s.clip_high}};
}

segmenter::LatentScaling scaling_from(const json& j) {
  return {j.at("scale").get<double>(), j.at("clip_low").get<double>(), j.at("clip_high").get<double>()};
}

}  // namespace

int train_diffusion(const Context& ctx, const TrainOptions& options, bool five_fold) {
  const auto& cfg = ctx.config;
  const auto& stage = cfg.training.diffusion;
  const Codecs codecs = load_codecs(ctx);
  const auto train = load_dataset(ctx, data::Split::train);
  if (train.empty()) throw std::runtime_error("the training split is empty");

  std::vector<Tensor> images;
  for (const auto& s : train) images.push_back(s.image);
  const auto image_latents = segmenter::encode_all(*codecs.image, images);

  // Latents of every annotator, so per-epoch target choice needs no re-encoding.
  const bool per_epoch = cfg.dataset.target_policy == data::TargetPolicy::random_annotator;
  std::vector<std::vector<Tensor>> annotator_latents(train.size());
  std::vector<Tensor> targets;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (per_epoch) {
      std::vector<Tensor> ms;
      for (const auto& m : train[i].masks) ms.push_back(mask_to_tensor(m));
      annotator_latents[i] = segmenter::encode_all(*codecs.mask, ms);
    } else {
      targets.push_back(mask_to_tensor(data::training_target(train[i], cfg.dataset.target_policy)));
    }
  }
  std::vector<Tensor> mask_latents;
  if (per_epoch) {
    for (const auto& a : annotator_latents)
      for (const auto& z : a) mask_latents.push_back(z);
  } else {
    mask_latents = segmenter::encode_all(*codecs.mask, targets);
  }
  const auto scaling = segmenter::LatentScaling::fit(mask_latents);
  auto targets_for_epoch = [&](int epoch) {
    std::vector<Tensor> out;
    for (std::size_t i = 0; i < train.size(); ++i) {
      const Tensor& z = per_epoch ? annotator_latents[i][data::random_annotator_index(
                                        annotator_latents[i].size(), cfg.training.seed, epoch, int(i))]
                                  : mask_latents[i];
      out.push_back(scaling.normalize(z));
    }
    return out;
  };

  const int folds = five_fold ? cfg.inference.folds : 1;
  for (int fold = 0; fold < folds; ++fold) {
    const std::uint64_t seed = fold_seed(cfg.training.seed, fold);
    denoiser::Denoiser model(cfg.resolved_denoiser(), seed);
    segmenter::DiffusionTrainer trainer(model, cfg.schedule(), targets_for_epoch(0), image_latents,
                                        {stage.batch_size, config::optimizer_options(stage), seed});
    const fs::path dir = diffusion_dir(ctx, fold);
    const fs::path ckpt_path = dir / "checkpoint.ckpt", csv_path = dir / "loss.csv";
    std::vector<std::string> rows;
    if (options.resume && fs::exists(ckpt_path)) {
      const auto c = ckpt::load(ckpt_path);
      require_header(c, ckpt_path, "denoiser", denoiser_json(cfg));
      require_header(c, ckpt_path, "schedule", schedule_json(cfg));
      require_header(c, ckpt_path, "training", config::to_json(cfg)["training"]);
      model.load_state(ckpt::strip_prefix(c.tensors, "model."));
      trainer.optimizer().load_state(ckpt::strip_prefix(c.tensors, "optim."));
      trainer.set_epoch(c.header.at("epoch").get<int>());
      rows = kept_rows(csv_path, trainer.epoch());
      std::cout << "resuming denoiser fold " << fold << " at epoch " << trainer.epoch() << "\n";
    }
    int ran = 0;
    while (trainer.epoch() < stage.epochs && (!options.max_epochs || ran < *options.max_epochs)) {
      if (per_epoch) trainer.set_mask_latents(targets_for_epoch(trainer.epoch()));
      const auto log = trainer.run_epoch();
      ++ran;
      rows.push_back(std::to_string(log.epoch) + "," + fmt(log.loss));
      std::vector<std::string> lines{"# " + hash_comment(ctx), "epoch,loss"};
      lines.insert(lines.end(), rows.begin(), rows.end());
      write_lines(csv_path, lines);

      ckpt::Checkpoint c;
      c.header = {{"kind", "diffusion"},
                  {"denoiser", denoiser_json(cfg)},
                  {"schedule", schedule_json(cfg)},
                  {"scaling", scaling_json(scaling)},
                  {"training", config::to_json(cfg)["training"]},
                  {"fold", fold},
                  {"epoch", trainer.epoch()},
                  {"seed", seed},
                  {"config_hash", ctx.config_hash}};
      c.tensors = ckpt::with_prefix(model.state(), "model.");
      for (auto& [k, v] : ckpt::with_prefix(trainer.optimizer().state(), "optim.")) c.tensors.emplace(k, std::move(v));
      ckpt::save(ckpt_path, c);
      std::printf("[diffusion fold %d] epoch %d loss %.5f\n", fold, log.epoch, log.loss);
      std::fflush(stdout);
    }
  }
  return 0;
}

// ---------------------------------------------------------------- loaded models

LoadedModels::LoadedModels(const Context& ctx, int folds) {
  const auto& cfg = ctx.config;
  Codecs c = load_codecs(ctx);
  image_ae_ = std::move(c.image_ae);
  mask_ae_ = std::move(c.mask_ae);
  image_codec_ = std::move(c.image);
  mask_codec_ = std::move(c.mask);
  schedule_ = cfg.schedule();
  sampler_ = {cfg.diffusion.variance_mode, cfg.diffusion.deterministic_last, cfg.diffusion.clip};
  max_batch_ = cfg.inference.max_batch;
  for (int fold = 0; fold < folds; ++fold) {
    const fs::path path = diffusion_dir(ctx, fold) / "checkpoint.ckpt";
    if (!fs::exists(path))
      throw std::runtime_error("missing denoiser checkpoint " + path.string() + "; run train-diffusion" +
                               (folds > 1 ? " --five-fold" : "") + " first");
    const auto ck = ckpt::load(path);
    require_header(ck, path, "denoiser", denoiser_json(cfg));
    require_header(ck, path, "schedule", schedule_json(cfg));
    auto model = std::make_unique<denoiser::Denoiser>(cfg.resolved_denoiser(), 0);
    model->load_state(ckpt::strip_prefix(ck.tensors, "model."));
    denoisers_.push_back(std::move(model));
    scalings_.push_back(scaling_from(ck.header.at("scaling")));
  }
}

std::vector<segmenter::Pipeline> LoadedModels::pipelines() const {
  std::vector<segmenter::Pipeline> out;
  for (std::size_t i = 0; i < denoisers_.size(); ++i)
    out.push_back({image_codec_.get(), mask_codec_.get(), denoisers_[i].get(), schedule_, scalings_[i], sampler_,
                   max_batch_});
  return out;
}

// ---------------------------------------------------------------- segment

namespace {

struct SegmentInput {
  std::string id;
  Tensor image;
  std::optional<Mask> truth;
};

std::vector<SegmentInput> segment_inputs(const Context& ctx, const std::vector<fs::path>& paths) {
  std::vector<SegmentInput> out;
  const int res = ctx.config.dataset.resolution;
  if (paths.empty()) {
    for (auto& s : load_dataset(ctx, data::Split::test))
      out.push_back({s.sample_id, s.image, data::training_target(s, data::TargetPolicy::majority)});
    if (out.empty()) throw std::runtime_error("the test split is empty");
    return out;
  }
  const int channels = ctx.config.image_autoencoder.image_channels;
  for (const auto& p : paths) {
    const Tensor t = io::to_tensor(io::read_raster(p, channels == 1));
    if (t.h() != res || t.w() != res)
      throw std::invalid_argument("input " + p.string() + " is " + std::to_string(t.h()) + "x" +
                                  std::to_string(t.w()) + ", the models were trained at " + std::to_string(res) +
                                  "x" + std::to_string(res));
    out.push_back({p.stem().string(), t, std::nullopt});
  }
  return out;
}

// draws[i] holds the masks of image i: member 0's draws first, then member 1's, ...
std::vector<std::vector<Mask>> draw_all(const std::vector<segmenter::Pipeline>& members,
                                        const std::vector<SegmentInput>& inputs, std::uint64_t seed, int n,
                                        double* seconds) {
  std::vector<std::vector<Mask>> draws(inputs.size());
  const auto start = std::chrono::steady_clock::now();
  std::vector<Tensor> images;
  for (const auto& in : inputs) images.push_back(in.image);
  const auto latents = segmenter::encode_all(*members.front().image_codec, images);
  for (std::size_t m = 0; m < members.size(); ++m) {
    std::vector<std::uint64_t> seeds;
    std::vector<segmenter::DrawRequest> requests;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      seeds.push_back(segmenter::member_seed(segmenter::image_seed(seed, int(i)), int(m)));
      for (int k = 0; k < n; ++k) requests.push_back({int(i), k});
    }
    auto masks = segmenter::sample_masks(members[m], latents, seeds, requests);
    for (std::size_t r = 0; r < requests.size(); ++r) draws[requests[r].image].push_back(std::move(masks[r]));
  }
  *seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return draws;
}

}  // namespace

int segment(const Context& ctx, const SegmentOptions& options) {
  const auto& cfg = ctx.config;
  const int n = options.n.value_or(cfg.inference.n);
  if (n < 1) throw std::invalid_argument("--n must be >= 1");
  const bool five_fold = options.five_fold || cfg.inference.five_fold;
  const bool save_samples = options.save_samples || cfg.inference.save_samples;
  const auto inputs = segment_inputs(ctx, options.inputs);
  const LoadedModels models(ctx, five_fold ? cfg.inference.folds : 1);
  const auto members = models.pipelines();

  double seconds = 0.0;
  const auto draws = draw_all(members, inputs, cfg.training.seed, n, &seconds);

  const fs::path dir = ctx.output_dir / "segment";
  const std::string comment = hash_comment(ctx);
  std::vector<std::string> lines{"# " + comment, "image_id,n,seed,dice,iou"};
  std::vector<metrics::SampleMetrics> rows;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto& in = inputs[i];
    auto result = segmenter::aggregate(draws[i]);
    io::write_pbm(dir / (in.id + "_consensus.pbm"), result.consensus, comment);
    io::Raster8 conf8{result.height, result.width, 1, std::vector<std::uint8_t>(result.votes.size())};
    io::RasterF conf{result.height, result.width, 1, std::vector<float>(result.votes.size())};
    for (std::size_t p = 0; p < result.votes.size(); ++p) {
      conf8.pixels[p] = std::uint8_t(std::lround(255.0 * result.confidence[p]));
      conf.pixels[p] = float(result.confidence[p]);
    }
    io::write_pnm(dir / (in.id + "_confidence.pgm"), conf8, comment);
    io::write_pfm(dir / (in.id + "_confidence.pfm"), conf);
    if (save_samples)
      for (std::size_t k = 0; k < result.masks.size(); ++k)
        io::write_pbm(dir / "samples" / (in.id + "_sample" + std::to_string(k) + ".pbm"), result.masks[k], comment);
    std::string row = in.id + "," + std::to_string(result.n) + "," + std::to_string(segmenter::image_seed(cfg.training.seed, int(i)));
    if (in.truth) {
      io::write_pbm(dir / "truth" / (in.id + ".pbm"), *in.truth, comment);
      const auto m = metrics::compare_masks(in.id, result.consensus, *in.truth);
      rows.push_back(m);
      row += "," + fmt(m.dice) + "," + fmt(m.iou);
    } else {
      row += ",,";
    }
    lines.push_back(row);
  }
  write_lines(dir / "segment.csv", lines);

  const long steps = long(cfg.diffusion.steps);
  const long samples = long(inputs.size()) * n * long(members.size());
  write_lines(dir / "timing.json",
              {json{{"images", inputs.size()},
                    {"samples", samples},
                    {"reverse_steps", steps},
                    {"seconds", seconds},
                    {"seconds_per_sample_step", seconds / double(samples * steps)}}
                   .dump(2)});
  std::printf("segmented %zu images with n=%d%s in %.1fs\n", inputs.size(), n, five_fold ? " (five-fold)" : "",
              seconds);
  if (!rows.empty()) {
    const auto report = metrics::summarize(rows);
    std::printf("mean dice %.4f  mean iou %.4f\n", report.dice, report.iou);
  }
  return 0;
}

// ---------------------------------------------------------------- sweep

int sweep_samples(const Context& ctx, const std::vector<int>& n_list, bool five_fold) {
  if (n_list.empty()) throw std::invalid_argument("sweep-samples needs a nonempty --n-list");
  for (int n : n_list)
    if (n < 1) throw std::invalid_argument("sweep-samples: every n must be >= 1");
  const auto& cfg = ctx.config;
  five_fold = five_fold || cfg.inference.five_fold;
  const int max_n = *std::max_element(n_list.begin(), n_list.end());
  const auto inputs = segment_inputs(ctx, {});
  const LoadedModels models(ctx, five_fold ? cfg.inference.folds : 1);
  const auto members = models.pipelines();
  double seconds = 0.0;
  const auto draws = draw_all(members, inputs, cfg.training.seed, max_n, &seconds);

  const fs::path dir = ctx.output_dir / "sweep";
  const std::string comment = hash_comment(ctx);
  for (std::size_t i = 0; i < inputs.size(); ++i)
    for (std::size_t k = 0; k < draws[i].size(); ++k)
      io::write_pbm(dir / "draws" / (inputs[i].id + "_draw" + std::to_string(k) + ".pbm"), draws[i][k], comment);

  std::vector<std::string> lines{"# " + comment, "n,dice,iou"};
  std::vector<double> dice_curve;
  const std::size_t members_n = members.size();
  for (int n : n_list) {
    std::vector<metrics::SampleMetrics> rows;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      // Prefix of each member's cached draws.
      std::vector<Mask> subset;
      for (std::size_t m = 0; m < members_n; ++m)
        for (int k = 0; k < n; ++k) subset.push_back(draws[i][m * max_n + k]);
      const auto r = segmenter::aggregate(std::move(subset));
      rows.push_back(metrics::compare_masks(inputs[i].id, r.consensus, *inputs[i].truth));
    }
    const auto report = metrics::summarize(rows);
    lines.push_back(std::to_string(n) + "," + fmt(report.dice) + "," + fmt(report.iou));
    dice_curve.push_back(report.dice);
    std::printf("n=%d  dice %.4f  iou %.4f\n", n, report.dice, report.iou);
  }
  write_lines(dir / "sweep.csv", lines);
  plot_sweep(dir / "sweep.png", n_list, dice_curve);
  return 0;
}

void plot_sweep(const fs::path& path, const std::vector<int>& n, const std::vector<double>& dice) {
  const int w = 640, h = 420, left = 70, right = 20, top = 30, bottom = 60;
  cv::Mat img(h, w, CV_8UC3, cv::Scalar(255, 255, 255));
  const int n_lo = *std::min_element(n.begin(), n.end()), n_hi = *std::max_element(n.begin(), n.end());
  double d_lo = *std::min_element(dice.begin(), dice.end()), d_hi = *std::max_element(dice.begin(), dice.end());
  const double pad = std::max(0.01, 0.1 * (d_hi - d_lo));
  d_lo = std::max(0.0, d_lo - pad);
  d_hi = std::min(1.0, d_hi + pad);
  if (d_hi <= d_lo) d_hi = d_lo + 0.01;
  auto px = [&](double x) { return left + int((x - n_lo) / std::max(1, n_hi - n_lo) * (w - left - right)); };
  auto py = [&](double y) { return h - bottom - int((y - d_lo) / (d_hi - d_lo) * (h - top - bottom)); };
  const cv::Scalar black(0, 0, 0), blue(180, 90, 20);
  cv::line(img, {left, h - bottom}, {w - right, h - bottom}, black, 1);
  cv::line(img, {left, top}, {left, h - bottom}, black, 1);
  for (int i = 0; i <= 4; ++i) {
    const double v = d_lo + (d_hi - d_lo) * i / 4.0;
    char buf[16];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    cv::putText(img, buf, {8, py(v) + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.4, black, 1, cv::LINE_AA);
  }
  std::vector<std::pair<int, double>> pts;
  for (std::size_t i = 0; i < n.size(); ++i) pts.emplace_back(n[i], dice[i]);
  std::sort(pts.begin(), pts.end());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const cv::Point p(px(pts[i].first), py(pts[i].second));
    if (i) cv::line(img, {px(pts[i - 1].first), py(pts[i - 1].second)}, p, blue, 2, cv::LINE_AA);
    cv::circle(img, p, 4, blue, cv::FILLED, cv::LINE_AA);
    cv::putText(img, std::to_string(pts[i].first), {p.x - 4, h - bottom + 20}, cv::FONT_HERSHEY_SIMPLEX, 0.45, black,
                1, cv::LINE_AA);
  }
  cv::putText(img, "samples n", {w / 2 - 40, h - 15}, cv::FONT_HERSHEY_SIMPLEX, 0.5, black, 1, cv::LINE_AA);
  cv::putText(img, "mean Dice", {left + 10, top - 10}, cv::FONT_HERSHEY_SIMPLEX, 0.5, black, 1, cv::LINE_AA);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), img)) throw std::runtime_error("cannot write plot " + path.string());
}

// ---------------------------------------------------------------- evaluate

namespace {

std::map<std::string, fs::path> mask_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::invalid_argument("not a directory: " + dir.string());
  static const std::set<std::string> exts{".pbm", ".png", ".pgm", ".bmp", ".tif", ".tiff"};
  std::map<std::string, fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file() || !exts.count(e.path().extension().string())) continue;
    std::string stem = e.path().stem().string();
    // Confidence maps written next to the consensus masks are not masks.
    if (stem.ends_with("_confidence")) continue;
    const std::string suffix = "_consensus";
    if (stem.size() > suffix.size() && stem.ends_with(suffix)) stem.resize(stem.size() - suffix.size());
    if (!out.emplace(stem, e.path()).second)
      throw std::invalid_argument("two mask files share the id '" + stem + "' in " + dir.string());
  }
  return out;
}

}  // namespace

int evaluate(const fs::path& predictions, const fs::path& truth, const fs::path& csv, const std::string& config_hash) {
  const auto pred = mask_files(predictions), gt = mask_files(truth);
  std::vector<std::string> unmatched;
  for (const auto& [id, p] : pred)
    if (!gt.count(id)) unmatched.push_back(p.string());
  for (const auto& [id, p] : gt)
    if (!pred.count(id)) unmatched.push_back(p.string());
  if (!unmatched.empty()) {
    std::cerr << "evaluate: " << unmatched.size() << " file(s) without a counterpart:\n";
    for (const auto& u : unmatched) std::cerr << "  " << u << "\n";
    return 1;
  }
  if (pred.empty()) {
    std::cerr << "evaluate: no mask files found\n";
    return 1;
  }
  std::vector<metrics::SampleMetrics> rows;
  for (const auto& [id, p] : pred) rows.push_back(metrics::compare_masks(id, io::read_mask(p), io::read_mask(gt.at(id))));
  const auto report = metrics::summarize(rows);
  metrics::write_csv(csv, report, config_hash);
  std::printf("evaluated %zu masks: dice %.4f iou %.4f ssim %.4f psnr %.2f\n", rows.size(), report.dice, report.iou,
              report.ssim, report.psnr);
  return 0;
}

}  // namespace latseg::cli
