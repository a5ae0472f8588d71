#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "latseg/checkpoint.hpp"
#include "latseg/config.hpp"
#include "latseg/image_io.hpp"

using namespace latseg;
namespace fs = std::filesystem;

namespace {

fs::path tmp(const std::string& name) { return fs::temp_directory_path() / ("latseg_io_" + name); }

}  // namespace

TEST_CASE("checkpoint round trip and integrity") {
  ckpt::Checkpoint c;
  c.header = {{"kind", "test"}, {"epoch", 3}};
  Rng rng(1);
  c.tensors["a.w"] = randn<float>({2, 3, 4, 5}, rng);
  c.tensors["b"] = Tensor({1, 1, 1, 1}, 7.0f);
  const auto path = tmp("ck.ckpt");
  ckpt::save(path, c);
  CHECK_FALSE(fs::exists(path.string() + ".tmp"));
  const auto back = ckpt::load(path);
  CHECK(back.header == c.header);
  CHECK(back.tensors == c.tensors);

  std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(60);
  f.put('\x55');
  f.close();
  CHECK_THROWS(ckpt::load(path));
  CHECK_THROWS(ckpt::load(tmp("missing.ckpt")));

  CHECK(ckpt::sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  const auto pre = ckpt::with_prefix(c.tensors, "model.");
  CHECK(pre.count("model.a.w") == 1);
  CHECK(ckpt::strip_prefix(pre, "model.") == c.tensors);
}

TEST_CASE("netpbm round trips") {
  Mask m(5, 11);
  for (std::size_t i = 0; i < m.size(); i += 3) m.pixels[i] = 1;
  io::write_pbm(tmp("m.pbm"), m, "hello");
  CHECK(io::read_pbm(tmp("m.pbm")) == m);
  CHECK(io::read_mask(tmp("m.pbm")) == m);

  io::Raster8 rgb{3, 4, 3, {}};
  for (int i = 0; i < 36; ++i) rgb.pixels.push_back(std::uint8_t(i * 7));
  io::write_pnm(tmp("c.ppm"), rgb);
  const auto back = io::read_pnm(tmp("c.ppm"));
  CHECK(back.pixels == rgb.pixels);
  CHECK(back.channels == 3);
  CHECK(io::read_image(tmp("c.ppm")).pixels == rgb.pixels);

  io::RasterF f{2, 3, 1, {0.f, 0.2f, 0.4f, 0.6f, 0.8f, 1.f}};
  io::write_pfm(tmp("f.pfm"), f);
  CHECK(io::read_pfm(tmp("f.pfm")).pixels == f.pixels);

  const Tensor t = io::to_tensor(rgb);
  CHECK(t.shape() == Shape{1, 3, 3, 4});
  CHECK(io::to_raster(t).pixels == rgb.pixels);

  io::Raster8 gray{2, 2, 1, {0, 127, 128, 255}};
  io::write_pnm(tmp("g.pgm"), gray);
  const Mask gm = io::read_mask(tmp("g.pgm"));
  CHECK(gm.pixels == std::vector<std::uint8_t>{0, 0, 1, 1});
}

TEST_CASE("config defaults, validation and hashing") {
  const auto d = config::defaults();
  CHECK(d.diffusion.steps == 1000);
  CHECK(d.training.autoencoder.lr == 1e-4);
  CHECK(d.training.autoencoder.batch_size == 32);
  CHECK(d.mask_autoencoder.pos_weight == 5.0);
  CHECK(d.mask_autoencoder.mode == autoencoder::Mode::mask_wce);
  CHECK(d.inference.n == 5);
  CHECK(d.dataset.resolution == 256);
  CHECK(d.denoiser.base_channels == 128);
  CHECK(d.image_autoencoder.levels == 3);
  CHECK_NOTHROW(d.validate());

  const auto round = config::from_json(config::to_json(d));
  CHECK(config::hash(round) == config::hash(d));
  auto moved = d;
  moved.inference.output_dir = "elsewhere";
  CHECK(config::hash(moved) == config::hash(d));
  moved.training.seed = 1;
  CHECK(config::hash(moved) != config::hash(d));

  auto j = config::to_json(d);
  j["training"]["lr_typo"] = 1;
  CHECK_THROWS(config::from_json(j));
  j = config::to_json(d);
  j["dataset"]["resolution"] = 100;
  CHECK_THROWS(config::from_json(j).validate());
  j = config::to_json(d);
  j["training"]["optimizer"] = "sgd";
  CHECK_THROWS(config::from_json(j).validate());

  const auto r = d.resolved_denoiser();
  CHECK(r.in_channels == d.mask_autoencoder.latent_channels + d.image_autoencoder.latent_channels);
  CHECK(r.out_channels == d.mask_autoencoder.latent_channels);
}

TEST_CASE("shipped presets load") {
  for (const auto& e : fs::directory_iterator(fs::path(LATSEG_SOURCE_DIR) / "configs")) {
    CAPTURE(e.path().string());
    CHECK_NOTHROW(config::load(e.path()));
  }
  const auto lidc = config::load(fs::path(LATSEG_SOURCE_DIR) / "configs" / "paper_lidc.json");
  CHECK(lidc.mask_autoencoder.pos_weight == 50.0);
  CHECK(lidc.dataset.resolution == 128);
  CHECK(lidc.training.autoencoder.batch_size == 64);
}
