// latseg: command-line front end.

#include <CLI11.hpp>

#include <iostream>
#include <stdexcept>

#include "latseg/commands.hpp"

namespace cli = latseg::cli;

namespace {

void add_common(CLI::App* app, cli::CommonOptions& o) {
  app->add_option("--config", o.config_path, "Experiment config (JSON)")->check(CLI::ExistingFile);
  app->add_option("--seed", o.seed, "Seed override");
  app->add_option("--device", o.device, "Compute device (cpu)");
  app->add_option("--output-dir", o.output_dir, "Output directory override");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent diffusion segmentation with vector-quantized autoencoders"};
  app.require_subcommand(1);

  cli::CommonOptions gen_opts, vae_opts, diff_opts, seg_opts, sweep_opts, eval_opts;
  cli::TrainOptions vae_train, diff_train;
  cli::SegmentOptions seg;
  std::string target;
  bool diff_five_fold = false, sweep_five_fold = false;
  std::vector<int> n_list{1, 2, 3, 4, 5};
  std::filesystem::path pred, truth, csv = "metrics.csv";

  auto* gen = app.add_subcommand("generate-synthetic", "Generate and materialize the synthetic dataset");
  add_common(gen, gen_opts);

  auto* vae = app.add_subcommand("train-vae", "Train the image or mask autoencoder");
  add_common(vae, vae_opts);
  vae->add_option("--target", target, "image or mask")->required()->check(CLI::IsMember({"image", "mask"}));
  vae->add_flag("--resume", vae_train.resume, "Continue from the last checkpoint");
  vae->add_option("--max-epochs", vae_train.max_epochs, "Stop after this many epochs in this run");

  auto* diff = app.add_subcommand("train-diffusion", "Train the latent denoiser");
  add_common(diff, diff_opts);
  diff->add_flag("--resume", diff_train.resume, "Continue from the last checkpoint");
  diff->add_option("--max-epochs", diff_train.max_epochs, "Stop after this many epochs in this run");
  diff->add_flag("--five-fold", diff_five_fold, "Train one denoiser per fold seed");

  auto* segc = app.add_subcommand("segment", "Sample an ensemble of masks per image");
  add_common(segc, seg_opts);
  segc->add_option("--n", seg.n, "Samples per image");
  segc->add_flag("--five-fold", seg.five_fold, "Pool draws of the fold denoisers");
  segc->add_flag("--save-samples", seg.save_samples, "Write every sampled mask");
  segc->add_option("--input", seg.inputs, "Input images (default: the test split)")->check(CLI::ExistingFile);

  auto* sweep = app.add_subcommand("sweep-samples", "Mean Dice against ensemble size");
  add_common(sweep, sweep_opts);
  sweep->add_option("--n-list", n_list, "Ensemble sizes")->delimiter(',');
  sweep->add_flag("--five-fold", sweep_five_fold, "Pool draws of the fold denoisers");

  auto* eval = app.add_subcommand("evaluate", "Compare predicted masks with ground truth");
  add_common(eval, eval_opts);
  eval->add_option("--pred", pred, "Predicted mask directory")->required();
  eval->add_option("--truth", truth, "Ground-truth mask directory")->required();
  eval->add_option("--csv", csv, "Output CSV");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cli::generate_synthetic(cli::make_context(gen_opts, true));
    if (vae->parsed()) return cli::train_vae(cli::make_context(vae_opts), target, vae_train);
    if (diff->parsed()) return cli::train_diffusion(cli::make_context(diff_opts), diff_train, diff_five_fold);
    if (segc->parsed()) return cli::segment(cli::make_context(seg_opts), seg);
    if (sweep->parsed()) return cli::sweep_samples(cli::make_context(sweep_opts), n_list, sweep_five_fold);
    if (eval->parsed()) {
      std::string hash;
      if (eval_opts.config_path) hash = cli::make_context(eval_opts).config_hash;
      return cli::evaluate(pred, truth, csv, hash);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
