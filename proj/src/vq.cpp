#include "latseg/vq.hpp"

namespace latseg::vq {

Codebook::Codebook(int size, int dim, Rng& rng) {
  if (size < 2 || dim < 1) throw std::invalid_argument("codebook needs K >= 2 and d >= 1");
  Tensor e({size, dim, 1, 1});
  std::uniform_real_distribution<double> dist(-1.0 / size, 1.0 / size);
  for (auto& v : e.vec()) v = static_cast<float>(dist(rng));
  entries_ = {"codebook.entries", std::move(e), Tensor({size, dim, 1, 1})};
}

Codebook::Codebook(Tensor entries) {
  if (entries.n() < 2 || entries.c() < 1 || entries.h() != 1 || entries.w() != 1)
    throw std::invalid_argument("codebook entries must be (K>=2, d>=1, 1, 1)");
  if (!all_finite(entries)) throw std::invalid_argument("codebook entries must be finite");
  const Shape s = entries.shape();
  entries_ = {"codebook.entries", std::move(entries), Tensor(s)};
}

int Codebook::nearest(const float* v, std::size_t stride) const {
  const int d = dim();
  int best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (int k = 0; k < size(); ++k) {
    const float* e = entry(k);
    double dist = 0.0;
    for (int c = 0; c < d; ++c) {
      const double diff = double(v[c * stride]) - double(e[c]);
      dist += diff * diff;
    }
    if (dist < best_dist) {
      best_dist = dist;
      best = k;
    }
  }
  return best;
}

Tensor gather_entries(const Codebook& codebook, const std::vector<int>& indices, int n, int h, int w) {
  const int d = codebook.dim();
  const std::size_t plane = std::size_t(h) * w;
  if (indices.size() != std::size_t(n) * plane) throw std::invalid_argument("gather_entries: bad index count");
  Tensor out({n, d, h, w});
  for (int b = 0; b < n; ++b)
    for (std::size_t p = 0; p < plane; ++p) {
      const int k = indices[std::size_t(b) * plane + p];
      if (k < 0 || k >= codebook.size()) throw std::out_of_range("gather_entries: index out of range");
      const float* e = codebook.entry(k);
      for (int c = 0; c < d; ++c) out[(std::size_t(b) * d + c) * plane + p] = e[c];
    }
  return out;
}

LatentCode quantize(const Tensor& z, const Codebook& codebook, int factor) {
  if (z.c() != codebook.dim())
    throw std::invalid_argument("quantize: latent has " + std::to_string(z.c()) +
                                " channels, codebook dimension is " + std::to_string(codebook.dim()));
  const std::size_t plane = z.shape().plane();
  LatentCode code;
  code.continuous = z;
  code.factor = factor;
  code.indices.resize(std::size_t(z.n()) * plane);
#pragma omp parallel for schedule(static) if (z.n() > 1)
  for (int n = 0; n < z.n(); ++n)
    for (std::size_t p = 0; p < plane; ++p)
      code.indices[std::size_t(n) * plane + p] =
          codebook.nearest(z.data() + std::size_t(n) * z.c() * plane + p, plane);
  code.quantized = gather_entries(codebook, code.indices, z.n(), z.h(), z.w());
  return code;
}

}  // namespace latseg::vq
