#pragma once

// Netpbm readers and writers (PBM P4, PGM P5, PPM P6, PFM) plus OpenCV-backed
// reading of other raster formats.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "latseg/mask.hpp"
#include "latseg/tensor.hpp"

namespace latseg::io {

namespace fs = std::filesystem;

struct Raster8 {
  int height = 0;
  int width = 0;
  int channels = 1;  // 1 or 3, interleaved
  std::vector<std::uint8_t> pixels;
};

struct RasterF {
  int height = 0;
  int width = 0;
  int channels = 1;  // 1 or 3, interleaved, top row first
  std::vector<float> pixels;
};

// `comment`, if nonempty, is stored as a '#' header line.
void write_pbm(const fs::path& path, const Mask& mask, const std::string& comment = "");
Mask read_pbm(const fs::path& path);

// P5 for one channel, P6 for three.
void write_pnm(const fs::path& path, const Raster8& raster, const std::string& comment = "");
Raster8 read_pnm(const fs::path& path);

void write_pfm(const fs::path& path, const RasterF& raster);
RasterF read_pfm(const fs::path& path);

// Any format OpenCV decodes, or Netpbm. Color images come back as RGB.
Raster8 read_raster(const fs::path& path, bool grayscale);

// Netpbm keeps its channel count; other formats are read as RGB.
Raster8 read_image(const fs::path& path);

// (1, C, H, W) tensor in [0,1] <-> 8-bit raster.
Raster8 to_raster(const Tensor& image);
Tensor to_tensor(const Raster8& raster);

// 8-bit image file to a mask with threshold >= 128; PBM files are read as is.
Mask read_mask(const fs::path& path);

}  // namespace latseg::io
