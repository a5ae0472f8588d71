#include "latseg/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

#include "latseg/checkpoint.hpp"

namespace latseg::config {

using json = nlohmann::json;

namespace {

// Reads known keys out of one JSON object and rejects leftovers.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw std::invalid_argument("config: '" + path_ + "' must be an object");
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (const auto& [k, v] : j_.items())
      if (!used_.count(k)) throw std::invalid_argument("config: unknown key '" + path_ + "." + k + "'");
  }

  template <typename T>
  void get(const char* key, T& field) {
    used_.insert(key);
    if (!j_.contains(key)) return;
    try {
      field = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw std::invalid_argument("config: bad value for '" + path_ + "." + key + "': " + e.what());
    }
  }

  template <typename T, typename Parse>
  void get_enum(const char* key, T& field, Parse parse) {
    std::string s;
    used_.insert(key);
    if (!j_.contains(key)) return;
    get(key, s);
    field = parse(s);
  }

  bool has(const char* key) {
    used_.insert(key);
    return j_.contains(key);
  }
  const json& at(const char* key) const { return j_.at(key); }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

void read_autoencoder(Section& s, autoencoder::Config& c) {
  s.get_enum("mode", c.mode, autoencoder::mode_from_string);
  s.get("image_channels", c.image_channels);
  s.get("levels", c.levels);
  s.get("base_channels", c.base_channels);
  s.get("max_channels", c.max_channels);
  s.get("res_blocks", c.res_blocks);
  s.get("latent_channels", c.latent_channels);
  s.get("codebook_size", c.codebook_size);
  s.get("pos_weight", c.pos_weight);
  s.get("commitment_beta", c.commitment_beta);
}

json write_autoencoder(const autoencoder::Config& c) {
  return {{"mode", autoencoder::to_string(c.mode)},
          {"image_channels", c.image_channels},
          {"levels", c.levels},
          {"base_channels", c.base_channels},
          {"max_channels", c.max_channels},
          {"res_blocks", c.res_blocks},
          {"latent_channels", c.latent_channels},
          {"codebook_size", c.codebook_size},
          {"pos_weight", c.pos_weight},
          {"commitment_beta", c.commitment_beta}};
}

void read_stage(Section& s, StageTraining& t) {
  s.get("lr", t.lr);
  s.get("weight_decay", t.weight_decay);
  s.get("grad_clip_norm", t.grad_clip_norm);
  s.get("batch_size", t.batch_size);
  s.get("epochs", t.epochs);
}

json write_stage(const StageTraining& t) {
  return {{"lr", t.lr},
          {"weight_decay", t.weight_decay},
          {"grad_clip_norm", t.grad_clip_norm},
          {"batch_size", t.batch_size},
          {"epochs", t.epochs}};
}

}  // namespace

ExperimentConfig defaults() {
  ExperimentConfig c;
  c.image_autoencoder.mode = autoencoder::Mode::image_mse;
  c.mask_autoencoder.mode = autoencoder::Mode::mask_wce;
  c.mask_autoencoder.pos_weight = 5.0;
  return c;
}

ExperimentConfig from_json(const json& j) {
  ExperimentConfig c = defaults();
  Section root(j, "config");
  if (root.has("dataset")) {
    Section s(root.at("dataset"), "dataset");
    s.get("source", c.dataset.source);
    s.get("root", c.dataset.root);
    s.get("resolution", c.dataset.resolution);
    s.get("split_seed", c.dataset.split_seed);
    s.get_enum("target_policy", c.dataset.target_policy, data::target_policy_from_string);
    if (s.has("synthetic")) {
      Section y(s.at("synthetic"), "dataset.synthetic");
      auto& sp = c.dataset.synthetic;
      y.get("count", sp.count);
      y.get("channels", sp.channels);
      y.get("blob_count_min", sp.blob_count_min);
      y.get("blob_count_max", sp.blob_count_max);
      y.get("blob_radius_min", sp.blob_radius_min);
      y.get("blob_radius_max", sp.blob_radius_max);
      y.get("tiny_mode", sp.tiny_mode);
      y.get("noise_level", sp.noise_level);
      y.get("annotator_count", sp.annotator_count);
      y.get("annotator_jitter", sp.annotator_jitter);
      y.get("samples_per_patient", sp.samples_per_patient);
      y.get("seed", sp.seed);
    }
  }
  c.dataset.synthetic.resolution = c.dataset.resolution;
  root.get("pixel_space", c.pixel_space);
  if (root.has("image_autoencoder")) {
    Section s(root.at("image_autoencoder"), "image_autoencoder");
    read_autoencoder(s, c.image_autoencoder);
  }
  if (root.has("mask_autoencoder")) {
    Section s(root.at("mask_autoencoder"), "mask_autoencoder");
    read_autoencoder(s, c.mask_autoencoder);
  }
  if (root.has("denoiser")) {
    Section s(root.at("denoiser"), "denoiser");
    s.get("levels", c.denoiser.levels);
    s.get("base_channels", c.denoiser.base_channels);
    s.get("max_channels", c.denoiser.max_channels);
    s.get("res_blocks", c.denoiser.res_blocks);
  }
  if (root.has("diffusion")) {
    Section s(root.at("diffusion"), "diffusion");
    s.get("steps", c.diffusion.steps);
    s.get("beta_start", c.diffusion.beta_start);
    s.get("beta_end", c.diffusion.beta_end);
    s.get_enum("schedule", c.diffusion.schedule, diffusion::schedule_kind_from_string);
    s.get_enum("variance_mode", c.diffusion.variance_mode, diffusion::variance_mode_from_string);
    s.get("deterministic_last", c.diffusion.deterministic_last);
    s.get("clip", c.diffusion.clip);
  }
  if (root.has("training")) {
    Section s(root.at("training"), "training");
    s.get("optimizer", c.training.optimizer);
    s.get("seed", c.training.seed);
    if (s.has("autoencoder")) {
      Section t(s.at("autoencoder"), "training.autoencoder");
      read_stage(t, c.training.autoencoder);
    }
    if (s.has("diffusion")) {
      Section t(s.at("diffusion"), "training.diffusion");
      read_stage(t, c.training.diffusion);
    }
  }
  if (root.has("inference")) {
    Section s(root.at("inference"), "inference");
    s.get("n", c.inference.n);
    s.get("five_fold", c.inference.five_fold);
    s.get("folds", c.inference.folds);
    s.get("save_samples", c.inference.save_samples);
    s.get("max_batch", c.inference.max_batch);
    s.get("output_dir", c.inference.output_dir);
  }
  return c;
}

json to_json(const ExperimentConfig& c) {
  const auto& sp = c.dataset.synthetic;
  return {
      {"dataset",
       {{"source", c.dataset.source},
        {"root", c.dataset.root},
        {"resolution", c.dataset.resolution},
        {"split_seed", c.dataset.split_seed},
        {"target_policy", data::to_string(c.dataset.target_policy)},
        {"synthetic",
         {{"count", sp.count},
          {"channels", sp.channels},
          {"blob_count_min", sp.blob_count_min},
          {"blob_count_max", sp.blob_count_max},
          {"blob_radius_min", sp.blob_radius_min},
          {"blob_radius_max", sp.blob_radius_max},
          {"tiny_mode", sp.tiny_mode},
          {"noise_level", sp.noise_level},
          {"annotator_count", sp.annotator_count},
          {"annotator_jitter", sp.annotator_jitter},
          {"samples_per_patient", sp.samples_per_patient},
          {"seed", sp.seed}}}}},
      {"pixel_space", c.pixel_space},
      {"image_autoencoder", write_autoencoder(c.image_autoencoder)},
      {"mask_autoencoder", write_autoencoder(c.mask_autoencoder)},
      {"denoiser",
       {{"levels", c.denoiser.levels},
        {"base_channels", c.denoiser.base_channels},
        {"max_channels", c.denoiser.max_channels},
        {"res_blocks", c.denoiser.res_blocks}}},
      {"diffusion",
       {{"steps", c.diffusion.steps},
        {"beta_start", c.diffusion.beta_start},
        {"beta_end", c.diffusion.beta_end},
        {"schedule", diffusion::to_string(c.diffusion.schedule)},
        {"variance_mode", diffusion::to_string(c.diffusion.variance_mode)},
        {"deterministic_last", c.diffusion.deterministic_last},
        {"clip", c.diffusion.clip}}},
      {"training",
       {{"optimizer", c.training.optimizer},
        {"seed", c.training.seed},
        {"autoencoder", write_stage(c.training.autoencoder)},
        {"diffusion", write_stage(c.training.diffusion)}}},
      {"inference",
       {{"n", c.inference.n},
        {"five_fold", c.inference.five_fold},
        {"folds", c.inference.folds},
        {"save_samples", c.inference.save_samples},
        {"max_batch", c.inference.max_batch},
        {"output_dir", c.inference.output_dir}}},
  };
}

ExperimentConfig load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot read config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw std::invalid_argument("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

denoiser::Config ExperimentConfig::resolved_denoiser() const {
  denoiser::Config d = denoiser;
  const int image_c = pixel_space ? image_autoencoder.image_channels : image_autoencoder.latent_channels;
  const int mask_c = pixel_space ? 1 : mask_autoencoder.latent_channels;
  d.in_channels = mask_c + image_c;
  d.out_channels = mask_c;
  return d;
}

diffusion::NoiseSchedule ExperimentConfig::schedule() const {
  return diffusion::NoiseSchedule::build(diffusion.steps, diffusion.beta_start, diffusion.beta_end, diffusion.schedule);
}

void ExperimentConfig::validate() const {
  const int res = dataset.resolution;
  if (res < 1) throw std::invalid_argument("config: dataset.resolution must be positive");
  if (dataset.source != "synthetic" && dataset.source != "manifest") data::layout_from_string(dataset.source);
  if (dataset.source != "synthetic" && dataset.root.empty())
    throw std::invalid_argument("config: dataset.root is required for source '" + dataset.source + "'");
  if (dataset.source == "synthetic") dataset.synthetic.validate();
  if (image_autoencoder.mode != autoencoder::Mode::image_mse)
    throw std::invalid_argument("config: image_autoencoder.mode must be image_mse");
  if (!mask_autoencoder.is_mask())
    throw std::invalid_argument("config: mask_autoencoder.mode must be mask_mse or mask_wce");
  image_autoencoder.validate();
  mask_autoencoder.validate();
  if (dataset.source == "synthetic" && dataset.synthetic.channels != image_autoencoder.image_channels)
    throw std::invalid_argument("config: synthetic channels differ from image_autoencoder.image_channels");
  int latent = res;
  if (!pixel_space) {
    for (const auto* ae : {&image_autoencoder, &mask_autoencoder})
      if (res % ae->factor() != 0)
        throw std::invalid_argument("config: resolution " + std::to_string(res) + " is not divisible by 2^" +
                                    std::to_string(ae->levels));
    if (image_autoencoder.levels != mask_autoencoder.levels)
      throw std::invalid_argument("config: image and mask autoencoders need equal levels for concatenation");
    latent = res / mask_autoencoder.factor();
  }
  const auto d = resolved_denoiser();
  d.validate();
  if (latent % (1 << d.levels) != 0)
    throw std::invalid_argument("config: latent size " + std::to_string(latent) + " is not divisible by 2^" +
                                std::to_string(d.levels) + " (denoiser.levels)");
  schedule();
  if (training.optimizer != "adamw") throw std::invalid_argument("config: training.optimizer must be adamw");
  for (const auto* t : {&training.autoencoder, &training.diffusion}) {
    if (!(t->lr > 0.0)) throw std::invalid_argument("config: learning rates must be positive");
    if (t->batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
    if (t->epochs < 0) throw std::invalid_argument("config: epochs must be >= 0");
    if (t->weight_decay < 0.0 || t->grad_clip_norm < 0.0)
      throw std::invalid_argument("config: weight_decay and grad_clip_norm must be >= 0");
  }
  if (inference.n < 1) throw std::invalid_argument("config: inference.n must be >= 1");
  if (inference.folds < 1) throw std::invalid_argument("config: inference.folds must be >= 1");
  if (inference.max_batch < 1) throw std::invalid_argument("config: inference.max_batch must be >= 1");
}

std::string hash(const ExperimentConfig& c) {
  json j = to_json(c);
  j["inference"].erase("output_dir");
  return ckpt::sha256_hex(j.dump());
}

nn::AdamWOptions optimizer_options(const StageTraining& s) {
  nn::AdamWOptions o;
  o.lr = s.lr;
  o.weight_decay = s.weight_decay;
  o.grad_clip_norm = s.grad_clip_norm;
  return o;
}

}  // namespace latseg::config
