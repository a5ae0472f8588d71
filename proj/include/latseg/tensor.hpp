#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace latseg {

using Rng = std::mt19937_64;

// Batch-major NCHW extent. A single H×W×C grid is stored as n = 1.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::size_t per_sample() const { return static_cast<std::size_t>(c) * h * w; }

  bool operator==(const Shape&) const = default;

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }
};

template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T{}) : shape_(shape), data_(shape.numel(), fill) {
    if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0)
      throw std::invalid_argument("negative tensor extent " + shape.str());
  }
  BasicTensor(Shape shape, std::vector<T> values) : shape_(shape), data_(std::move(values)) {
    if (data_.size() != shape_.numel())
      throw std::invalid_argument("tensor data size does not match shape " + shape_.str());
  }

  const Shape& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::size_t index(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }
  T& at(int n, int c, int y, int x) { return data_[index(n, c, y, x)]; }
  const T& at(int n, int c, int y, int x) const { return data_[index(n, c, y, x)]; }

  std::span<T> sample(int n) {
    return std::span<T>(data_).subspan(n * shape_.per_sample(), shape_.per_sample());
  }
  std::span<const T> sample(int n) const {
    return std::span<const T>(data_).subspan(n * shape_.per_sample(), shape_.per_sample());
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  // Copies batch items [first, first + count).
  BasicTensor batch_slice(int first, int count) const {
    if (first < 0 || count < 0 || first + count > shape_.n)
      throw std::out_of_range("batch slice out of range");
    BasicTensor out({count, shape_.c, shape_.h, shape_.w});
    std::copy_n(data_.begin() + first * shape_.per_sample(), count * shape_.per_sample(),
                out.data_.begin());
    return out;
  }

  template <typename U>
  BasicTensor<U> cast() const {
    BasicTensor<U> out(shape_);
    std::transform(data_.begin(), data_.end(), out.data(), [](T v) { return static_cast<U>(v); });
    return out;
  }

  bool operator==(const BasicTensor&) const = default;

 private:
  Shape shape_{};
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

template <typename T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* what) {
  if (!(a.shape() == b.shape()))
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape().str() + " vs " +
                                b.shape().str());
}

template <typename T>
BasicTensor<T> randn(Shape shape, Rng& rng) {
  BasicTensor<T> out(shape);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& v : out.vec()) v = static_cast<T>(normal(rng));
  return out;
}

template <typename T>
BasicTensor<T> stack_batch(const std::vector<BasicTensor<T>>& items) {
  if (items.empty()) throw std::invalid_argument("stack_batch: no items");
  Shape s = items.front().shape();
  int total = 0;
  for (const auto& it : items) {
    if (it.c() != s.c || it.h() != s.h || it.w() != s.w)
      throw std::invalid_argument("stack_batch: inconsistent item shapes");
    total += it.n();
  }
  BasicTensor<T> out({total, s.c, s.h, s.w});
  std::size_t off = 0;
  for (const auto& it : items) {
    std::copy(it.vec().begin(), it.vec().end(), out.data() + off);
    off += it.size();
  }
  return out;
}

// Channel concatenation [a ‖ b]; a's channels first.
template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w())
    throw std::invalid_argument("concat_channels: spatial/batch mismatch " + a.shape().str() +
                                " vs " + b.shape().str());
  BasicTensor<T> out({a.n(), a.c() + b.c(), a.h(), a.w()});
  for (int n = 0; n < a.n(); ++n) {
    auto dst = out.sample(n);
    auto sa = a.sample(n);
    auto sb = b.sample(n);
    std::copy(sa.begin(), sa.end(), dst.begin());
    std::copy(sb.begin(), sb.end(), dst.begin() + sa.size());
  }
  return out;
}

// Inverse of concat_channels: first `first_channels` channels, then the rest.
template <typename T>
std::pair<BasicTensor<T>, BasicTensor<T>> split_channels(const BasicTensor<T>& t, int first_channels) {
  if (first_channels < 0 || first_channels > t.c())
    throw std::invalid_argument("split_channels: bad channel count");
  BasicTensor<T> a({t.n(), first_channels, t.h(), t.w()});
  BasicTensor<T> b({t.n(), t.c() - first_channels, t.h(), t.w()});
  for (int n = 0; n < t.n(); ++n) {
    auto src = t.sample(n);
    std::copy_n(src.begin(), a.shape().per_sample(), a.sample(n).begin());
    std::copy(src.begin() + a.shape().per_sample(), src.end(), b.sample(n).begin());
  }
  return {std::move(a), std::move(b)};
}

template <typename T>
bool all_finite(const BasicTensor<T>& t) {
  for (T v : t.vec())
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

}  // namespace latseg
