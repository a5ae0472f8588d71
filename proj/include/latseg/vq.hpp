#pragma once

// Codebook quantization and the vector-quantized autoencoder objective.
//
// Loss terms are templated on the element type so that analytic gradients
// can be checked against finite differences in both float and double.
// Stop-gradient semantics:
//   codebook term  ||sg(z) - zq||^2  -> gradient flows only to codebook entries
//   commit term    beta ||z - sg(zq)||^2 -> gradient flows only to the encoder
// Reconstruction gradients reach the encoder through the straight-through
// estimator (d/dz := d/dzq).

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "latseg/nn.hpp"
#include "latseg/tensor.hpp"

namespace latseg::vq {

class Codebook {
 public:
  Codebook() = default;
  // Entries drawn uniformly from [-1/K, 1/K].
  Codebook(int size, int dim, Rng& rng);
  explicit Codebook(Tensor entries);

  int size() const { return entries_.value.n(); }
  int dim() const { return entries_.value.c(); }
  const float* entry(int k) const { return entries_.value.data() + std::size_t(k) * dim(); }
  float* entry(int k) { return entries_.value.data() + std::size_t(k) * dim(); }
  const Tensor& entries() const { return entries_.value; }
  nn::Parameter& parameter() { return entries_; }

  // Nearest entry under squared Euclidean distance; ties go to the lowest index.
  int nearest(const float* v, std::size_t stride = 1) const;

 private:
  nn::Parameter entries_;
};

struct LatentCode {
  Tensor continuous;         // z, (N, c, h, w)
  Tensor quantized;          // zq, same shape; every vector is a codebook entry
  std::vector<int> indices;  // (N, h, w) row-major
  int factor = 1;            // H / h
};

// Per-position nearest-entry replacement. z's channel count must equal the
// codebook dimension.
LatentCode quantize(const Tensor& z, const Codebook& codebook, int factor = 1);

// Gather codebook entries into an (N, d, h, w) grid.
Tensor gather_entries(const Codebook& codebook, const std::vector<int>& indices, int n, int h, int w);

struct LossReport {
  double rec = 0.0;
  double codebook = 0.0;
  double commit = 0.0;
  double total = 0.0;
};

template <typename T>
struct TermGradients {
  BasicTensor<T> encoder;  // d/dz
  BasicTensor<T> entries;  // d/d(codebook entries), (K, d, 1, 1)
};

// mean((pred - target)^2); grad (if non-null) receives d/dpred.
template <typename T>
double mse_loss(const BasicTensor<T>& pred, const BasicTensor<T>& target, BasicTensor<T>* grad = nullptr) {
  require_same_shape(pred, target, "mse_loss");
  const double m = double(pred.size());
  double acc = 0.0;
  if (grad) *grad = BasicTensor<T>(pred.shape());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = double(pred[i]) - double(target[i]);
    if (!std::isfinite(d)) throw std::runtime_error("mse_loss: non-finite value");
    acc += d * d;
    if (grad) (*grad)[i] = static_cast<T>(2.0 * d / m);
  }
  return acc / m;
}

// Weighted two-class cross entropy over logits (N, 2, H, W) against a binary
// target (N, 1, H, W). Pixels with target 1 weigh pos_weight, others 1; the
// sum of weighted per-pixel losses is divided by the sum of weights.
template <typename T>
double wce_loss(const BasicTensor<T>& logits, const BasicTensor<T>& target, double pos_weight,
                BasicTensor<T>* grad = nullptr) {
  if (logits.c() != 2 || target.c() != 1 || logits.n() != target.n() || logits.h() != target.h() ||
      logits.w() != target.w())
    throw std::invalid_argument("wce_loss: expected logits (N,2,H,W) and target (N,1,H,W), got " +
                                logits.shape().str() + " and " + target.shape().str());
  if (!(pos_weight >= 1.0) || !std::isfinite(pos_weight))
    throw std::invalid_argument("wce_loss: pos_weight must be >= 1");
  const std::size_t plane = target.shape().plane();
  double weighted = 0.0, weight_sum = 0.0;
  for (int n = 0; n < target.n(); ++n)
    for (std::size_t p = 0; p < plane; ++p) {
      const double y = double(target[std::size_t(n) * plane + p]);
      if (y != 0.0 && y != 1.0) throw std::invalid_argument("wce_loss: target is not binary");
      weight_sum += y == 1.0 ? pos_weight : 1.0;
    }
  if (grad) *grad = BasicTensor<T>(logits.shape());
  for (int n = 0; n < target.n(); ++n)
    for (std::size_t p = 0; p < plane; ++p) {
      const std::size_t i0 = (std::size_t(n) * 2) * plane + p, i1 = i0 + plane;
      const double l0 = double(logits[i0]), l1 = double(logits[i1]);
      if (!std::isfinite(l0) || !std::isfinite(l1))
        throw std::invalid_argument("wce_loss: non-finite logits");
      const bool fg = double(target[std::size_t(n) * plane + p]) == 1.0;
      const double w = fg ? pos_weight : 1.0;
      const double hi = std::max(l0, l1);
      const double lse = hi + std::log(std::exp(l0 - hi) + std::exp(l1 - hi));
      weighted += w * (lse - (fg ? l1 : l0));
      if (grad) {
        const double p1 = std::exp(l1 - lse), p0 = std::exp(l0 - lse);
        (*grad)[i0] = static_cast<T>(w / weight_sum * (p0 - (fg ? 0.0 : 1.0)));
        (*grad)[i1] = static_cast<T>(w / weight_sum * (p1 - (fg ? 1.0 : 0.0)));
      }
    }
  return weighted / weight_sum;
}

namespace detail {

template <typename T>
void check_assignment(const BasicTensor<T>& z, const BasicTensor<T>& entries, const std::vector<int>& indices) {
  if (entries.c() != z.c() || entries.h() != 1 || entries.w() != 1)
    throw std::invalid_argument("vq loss: codebook dimension does not match latent channels");
  if (indices.size() != std::size_t(z.n()) * z.shape().plane())
    throw std::invalid_argument("vq loss: index grid does not match latent");
  for (int k : indices)
    if (k < 0 || k >= entries.n()) throw std::out_of_range("vq loss: codebook index out of range");
}

// Shared sum of squares between z and its assigned entries.
template <typename T>
double assigned_sq_error(const BasicTensor<T>& z, const BasicTensor<T>& entries, const std::vector<int>& indices,
                         BasicTensor<T>* diff) {
  check_assignment(z, entries, indices);
  const std::size_t plane = z.shape().plane();
  const int d = z.c();
  double acc = 0.0;
  if (diff) *diff = BasicTensor<T>(z.shape());
  for (int n = 0; n < z.n(); ++n)
    for (std::size_t p = 0; p < plane; ++p) {
      const int k = indices[std::size_t(n) * plane + p];
      for (int c = 0; c < d; ++c) {
        const std::size_t zi = (std::size_t(n) * d + c) * plane + p;
        const double e = double(z[zi]) - double(entries[std::size_t(k) * d + c]);
        if (!std::isfinite(e)) throw std::runtime_error("vq loss: non-finite intermediate");
        acc += e * e;
        if (diff) (*diff)[zi] = static_cast<T>(e);
      }
    }
  return acc;
}

}  // namespace detail

// mean ||sg(z) - zq||^2 with zq = entries[indices].
template <typename T>
double codebook_loss(const BasicTensor<T>& z, const BasicTensor<T>& entries, const std::vector<int>& indices,
                     TermGradients<T>* grads = nullptr) {
  BasicTensor<T> diff;
  const double m = double(z.size());
  const double value = detail::assigned_sq_error(z, entries, indices, grads ? &diff : nullptr) / m;
  if (grads) {
    grads->encoder = BasicTensor<T>(z.shape());
    grads->entries = BasicTensor<T>(entries.shape());
    const std::size_t plane = z.shape().plane();
    for (int n = 0; n < z.n(); ++n)
      for (std::size_t p = 0; p < plane; ++p) {
        const int k = indices[std::size_t(n) * plane + p];
        for (int c = 0; c < z.c(); ++c) {
          const std::size_t zi = (std::size_t(n) * z.c() + c) * plane + p;
          auto& g = grads->entries[std::size_t(k) * z.c() + c];
          g = static_cast<T>(double(g) - 2.0 * double(diff[zi]) / m);
        }
      }
  }
  return value;
}

// beta * mean ||z - sg(zq)||^2.
template <typename T>
double commitment_loss(const BasicTensor<T>& z, const BasicTensor<T>& entries, const std::vector<int>& indices,
                       double beta, TermGradients<T>* grads = nullptr) {
  BasicTensor<T> diff;
  const double m = double(z.size());
  const double value = beta * detail::assigned_sq_error(z, entries, indices, grads ? &diff : nullptr) / m;
  if (grads) {
    grads->encoder = BasicTensor<T>(z.shape());
    grads->entries = BasicTensor<T>(entries.shape());
    for (std::size_t i = 0; i < diff.size(); ++i)
      grads->encoder[i] = static_cast<T>(2.0 * beta * double(diff[i]) / m);
  }
  return value;
}

}  // namespace latseg::vq
