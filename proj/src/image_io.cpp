#include "latseg/image_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace latseg::io {

namespace {

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return in;
}

// Next whitespace-delimited header token, skipping '#' comments.
std::string token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(char(ch));
  }
  return tok;
}

int header_int(std::istream& in, const fs::path& path) {
  const std::string t = token(in);
  try {
    std::size_t used = 0;
    const int v = std::stoi(t, &used);
    if (used != t.size() || v <= 0) throw std::invalid_argument(t);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("malformed header in " + path.string());
  }
}

void check_read(const std::istream& in, const fs::path& path) {
  if (!in) throw std::runtime_error("truncated file " + path.string());
}

}  // namespace

void write_pbm(const fs::path& path, const Mask& mask, const std::string& comment) {
  auto out = open_out(path);
  out << "P4\n";
  if (!comment.empty()) out << "# " << comment << "\n";
  out << mask.width << " " << mask.height << "\n";
  const int row_bytes = (mask.width + 7) / 8;
  std::vector<std::uint8_t> row(row_bytes);
  for (int y = 0; y < mask.height; ++y) {
    std::fill(row.begin(), row.end(), 0);
    for (int x = 0; x < mask.width; ++x)
      if (mask.at(y, x)) row[x / 8] |= std::uint8_t(0x80 >> (x % 8));
    out.write(reinterpret_cast<const char*>(row.data()), row_bytes);
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Mask read_pbm(const fs::path& path) {
  auto in = open_in(path);
  if (token(in) != "P4") throw std::runtime_error(path.string() + " is not a binary PBM (P4)");
  const int w = header_int(in, path), h = header_int(in, path);
  Mask m(h, w);
  const int row_bytes = (w + 7) / 8;
  std::vector<std::uint8_t> row(row_bytes);
  for (int y = 0; y < h; ++y) {
    in.read(reinterpret_cast<char*>(row.data()), row_bytes);
    check_read(in, path);
    for (int x = 0; x < w; ++x) m.at(y, x) = (row[x / 8] >> (7 - x % 8)) & 1;
  }
  return m;
}

void write_pnm(const fs::path& path, const Raster8& r, const std::string& comment) {
  if (r.channels != 1 && r.channels != 3) throw std::invalid_argument("PNM rasters have 1 or 3 channels");
  if (r.pixels.size() != std::size_t(r.height) * r.width * r.channels)
    throw std::invalid_argument("raster size does not match its extent");
  auto out = open_out(path);
  out << (r.channels == 1 ? "P5\n" : "P6\n");
  if (!comment.empty()) out << "# " << comment << "\n";
  out << r.width << " " << r.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(r.pixels.data()), std::streamsize(r.pixels.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Raster8 read_pnm(const fs::path& path) {
  auto in = open_in(path);
  const std::string magic = token(in);
  Raster8 r;
  if (magic == "P5")
    r.channels = 1;
  else if (magic == "P6")
    r.channels = 3;
  else
    throw std::runtime_error(path.string() + " is not a binary PGM/PPM");
  r.width = header_int(in, path);
  r.height = header_int(in, path);
  if (header_int(in, path) != 255) throw std::runtime_error(path.string() + ": only maxval 255 is supported");
  r.pixels.resize(std::size_t(r.height) * r.width * r.channels);
  in.read(reinterpret_cast<char*>(r.pixels.data()), std::streamsize(r.pixels.size()));
  check_read(in, path);
  return r;
}

void write_pfm(const fs::path& path, const RasterF& r) {
  if (r.channels != 1 && r.channels != 3) throw std::invalid_argument("PFM rasters have 1 or 3 channels");
  auto out = open_out(path);
  // Negative scale marks little-endian data; rows are stored bottom-up.
  out << (r.channels == 1 ? "Pf\n" : "PF\n") << r.width << " " << r.height << "\n"
      << (std::endian::native == std::endian::little ? "-1.0" : "1.0") << "\n";
  const std::size_t row = std::size_t(r.width) * r.channels;
  for (int y = r.height - 1; y >= 0; --y)
    out.write(reinterpret_cast<const char*>(r.pixels.data() + y * row), std::streamsize(row * sizeof(float)));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

RasterF read_pfm(const fs::path& path) {
  auto in = open_in(path);
  const std::string magic = token(in);
  RasterF r;
  if (magic == "Pf")
    r.channels = 1;
  else if (magic == "PF")
    r.channels = 3;
  else
    throw std::runtime_error(path.string() + " is not a PFM file");
  r.width = header_int(in, path);
  r.height = header_int(in, path);
  const double scale = std::stod(token(in));
  const bool little = scale < 0;
  const std::size_t row = std::size_t(r.width) * r.channels;
  r.pixels.resize(row * r.height);
  for (int y = r.height - 1; y >= 0; --y) {
    in.read(reinterpret_cast<char*>(r.pixels.data() + y * row), std::streamsize(row * sizeof(float)));
    check_read(in, path);
  }
  if (little != (std::endian::native == std::endian::little))
    for (auto& v : r.pixels) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      bits = __builtin_bswap32(bits);
      std::memcpy(&v, &bits, 4);
    }
  return r;
}

namespace {

bool has_magic(const fs::path& path, char second) {
  std::ifstream in(path, std::ios::binary);
  char m[2] = {0, 0};
  in.read(m, 2);
  return in && m[0] == 'P' && m[1] == second;
}

}  // namespace

Raster8 read_raster(const fs::path& path, bool grayscale) {
  if (!fs::exists(path)) throw std::runtime_error("missing file " + path.string());
  cv::Mat img = cv::imread(path.string(), grayscale ? cv::IMREAD_GRAYSCALE : cv::IMREAD_COLOR);
  if (img.empty()) throw std::runtime_error("unreadable image " + path.string());
  if (img.depth() != CV_8U) img.convertTo(img, CV_8U);
  if (!grayscale) cv::cvtColor(img, img, cv::COLOR_BGR2RGB);
  Raster8 r;
  r.height = img.rows;
  r.width = img.cols;
  r.channels = img.channels();
  r.pixels.resize(std::size_t(r.height) * r.width * r.channels);
  for (int y = 0; y < r.height; ++y)
    std::memcpy(r.pixels.data() + std::size_t(y) * r.width * r.channels, img.ptr(y), std::size_t(r.width) * r.channels);
  return r;
}

Raster8 read_image(const fs::path& path) {
  if (has_magic(path, '5') || has_magic(path, '6')) return read_pnm(path);
  return read_raster(path, false);
}

Raster8 to_raster(const Tensor& image) {
  if (image.n() != 1 || (image.c() != 1 && image.c() != 3))
    throw std::invalid_argument("to_raster expects a (1, 1|3, H, W) tensor, got " + image.shape().str());
  Raster8 r{image.h(), image.w(), image.c(), {}};
  r.pixels.resize(image.size());
  for (int y = 0; y < r.height; ++y)
    for (int x = 0; x < r.width; ++x)
      for (int c = 0; c < r.channels; ++c) {
        const float v = std::clamp(image.at(0, c, y, x), 0.0f, 1.0f);
        r.pixels[(std::size_t(y) * r.width + x) * r.channels + c] = std::uint8_t(std::lround(v * 255.0f));
      }
  return r;
}

Tensor to_tensor(const Raster8& r) {
  Tensor t({1, r.channels, r.height, r.width});
  for (int y = 0; y < r.height; ++y)
    for (int x = 0; x < r.width; ++x)
      for (int c = 0; c < r.channels; ++c)
        t.at(0, c, y, x) = float(r.pixels[(std::size_t(y) * r.width + x) * r.channels + c]) / 255.0f;
  return t;
}

Mask read_mask(const fs::path& path) {
  if (has_magic(path, '4')) return read_pbm(path);
  const Raster8 r = read_raster(path, /*grayscale=*/true);
  Mask m(r.height, r.width);
  for (std::size_t i = 0; i < m.size(); ++i) m.pixels[i] = r.pixels[i] >= 128 ? 1 : 0;
  return m;
}

}  // namespace latseg::io
