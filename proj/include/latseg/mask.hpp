#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "latseg/tensor.hpp"

namespace latseg {

// Strictly binary H×W grid.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;

  Mask() = default;
  Mask(int h, int w) : height(h), width(w), pixels(std::size_t(h) * w, 0) {}

  std::uint8_t& at(int y, int x) { return pixels[std::size_t(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return pixels[std::size_t(y) * width + x]; }
  std::size_t size() const { return pixels.size(); }

  std::size_t count() const {
    std::size_t c = 0;
    for (auto p : pixels) c += p;
    return c;
  }

  bool is_binary() const {
    for (auto p : pixels)
      if (p > 1) return false;
    return true;
  }

  bool operator==(const Mask&) const = default;
};

// (1, 1, H, W) real grid with values {0, 1}.
inline Tensor mask_to_tensor(const Mask& m) {
  Tensor t({1, 1, m.height, m.width});
  for (std::size_t i = 0; i < m.size(); ++i) t[i] = m.pixels[i] ? 1.0f : 0.0f;
  return t;
}

// Batch item `n`, channel 0, foreground where value >= threshold.
inline Mask tensor_to_mask(const Tensor& t, int n = 0, float threshold = 0.5f) {
  Mask m(t.h(), t.w());
  for (int y = 0; y < t.h(); ++y)
    for (int x = 0; x < t.w(); ++x) m.at(y, x) = t.at(n, 0, y, x) >= threshold ? 1 : 0;
  return m;
}

}  // namespace latseg
