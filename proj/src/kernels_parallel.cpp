#include "latseg/kernels.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace latseg::kernels {
namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

bool is_pointwise(const ConvGeometry& g) {
  return g.kernel == 1 && g.stride == 1 && g.pad == 0;
}

// cols is (in_channels*k*k) × (out_h*out_w), row-major.
void im2col(const ConvGeometry& g, const float* x, float* cols) {
  const int ho = g.out_height(), wo = g.out_width();
  const std::size_t p_count = std::size_t(ho) * wo;
  for (int ci = 0; ci < g.in_channels; ++ci) {
    const float* plane = x + std::size_t(ci) * g.height * g.width;
    for (int ky = 0; ky < g.kernel; ++ky)
      for (int kx = 0; kx < g.kernel; ++kx) {
        float* row = cols + ((std::size_t(ci) * g.kernel + ky) * g.kernel + kx) * p_count;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          float* dst = row + std::size_t(oy) * wo;
          if (iy < 0 || iy >= g.height) {
            std::fill(dst, dst + wo, 0.0f);
            continue;
          }
          const float* src = plane + std::size_t(iy) * g.width;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            dst[ox] = (ix >= 0 && ix < g.width) ? src[ix] : 0.0f;
          }
        }
      }
  }
}

void col2im(const ConvGeometry& g, const float* cols, float* x) {
  const int ho = g.out_height(), wo = g.out_width();
  const std::size_t p_count = std::size_t(ho) * wo;
  std::fill(x, x + std::size_t(g.in_channels) * g.height * g.width, 0.0f);
  for (int ci = 0; ci < g.in_channels; ++ci) {
    float* plane = x + std::size_t(ci) * g.height * g.width;
    for (int ky = 0; ky < g.kernel; ++ky)
      for (int kx = 0; kx < g.kernel; ++kx) {
        const float* row = cols + ((std::size_t(ci) * g.kernel + ky) * g.kernel + kx) * p_count;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.height) continue;
          const float* src = row + std::size_t(oy) * wo;
          float* dst = plane + std::size_t(iy) * g.width;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.width) dst[ix] += src[ox];
          }
        }
      }
  }
}

}  // namespace

void conv2d_forward(const ConvGeometry& g, const float* input, const float* weight,
                    const float* bias, float* output) {
  const long k_rows = long(g.in_channels) * g.kernel * g.kernel;
  const long p_count = long(g.out_height()) * g.out_width();
  const std::size_t in_stride = std::size_t(g.in_channels) * g.height * g.width;
  const std::size_t out_stride = std::size_t(g.out_channels) * p_count;
  ConstMatMap w(weight, g.out_channels, k_rows);

#pragma omp parallel if (g.batch > 1)
  {
    std::vector<float> cols(is_pointwise(g) ? 0 : std::size_t(k_rows) * p_count);
#pragma omp for schedule(static)
    for (int n = 0; n < g.batch; ++n) {
      const float* src = input + n * in_stride;
      if (!is_pointwise(g)) {
        im2col(g, src, cols.data());
        src = cols.data();
      }
      MatMap out(output + n * out_stride, g.out_channels, p_count);
      out.noalias() = w * ConstMatMap(src, k_rows, p_count);
      if (bias)
        for (int co = 0; co < g.out_channels; ++co) out.row(co).array() += bias[co];
    }
  }
}

void conv2d_backward_input(const ConvGeometry& g, const float* grad_output, const float* weight,
                           float* grad_input) {
  const long k_rows = long(g.in_channels) * g.kernel * g.kernel;
  const long p_count = long(g.out_height()) * g.out_width();
  const std::size_t in_stride = std::size_t(g.in_channels) * g.height * g.width;
  const std::size_t out_stride = std::size_t(g.out_channels) * p_count;
  ConstMatMap w(weight, g.out_channels, k_rows);

#pragma omp parallel if (g.batch > 1)
  {
    std::vector<float> cols(is_pointwise(g) ? 0 : std::size_t(k_rows) * p_count);
#pragma omp for schedule(static)
    for (int n = 0; n < g.batch; ++n) {
      ConstMatMap dy(grad_output + n * out_stride, g.out_channels, p_count);
      if (is_pointwise(g)) {
        MatMap dx(grad_input + n * in_stride, k_rows, p_count);
        dx.noalias() = w.transpose() * dy;
      } else {
        MatMap dcols(cols.data(), k_rows, p_count);
        dcols.noalias() = w.transpose() * dy;
        col2im(g, cols.data(), grad_input + n * in_stride);
      }
    }
  }
}

void conv2d_backward_params(const ConvGeometry& g, const float* input, const float* grad_output,
                            float* grad_weight, float* grad_bias) {
  const long k_rows = long(g.in_channels) * g.kernel * g.kernel;
  const long p_count = long(g.out_height()) * g.out_width();
  const std::size_t in_stride = std::size_t(g.in_channels) * g.height * g.width;
  const std::size_t out_stride = std::size_t(g.out_channels) * p_count;
  const std::size_t w_size = std::size_t(g.out_channels) * k_rows;

  // Per-sample partials, reduced below in batch order so the result does not
  // depend on the thread count.
  std::vector<float> partial(std::size_t(g.batch) * w_size);

#pragma omp parallel if (g.batch > 1)
  {
    std::vector<float> cols(is_pointwise(g) ? 0 : std::size_t(k_rows) * p_count);
#pragma omp for schedule(static)
    for (int n = 0; n < g.batch; ++n) {
      const float* src = input + n * in_stride;
      if (!is_pointwise(g)) {
        im2col(g, src, cols.data());
        src = cols.data();
      }
      ConstMatMap dy(grad_output + n * out_stride, g.out_channels, p_count);
      MatMap dw(partial.data() + n * w_size, g.out_channels, k_rows);
      dw.noalias() = dy * ConstMatMap(src, k_rows, p_count).transpose();
    }
  }

  for (int n = 0; n < g.batch; ++n) {
    const float* p = partial.data() + n * w_size;
    for (std::size_t i = 0; i < w_size; ++i) grad_weight[i] += p[i];
  }
  if (grad_bias) {
    for (int co = 0; co < g.out_channels; ++co) {
      float acc = 0.0f;
      for (int n = 0; n < g.batch; ++n) {
        const float* row = grad_output + n * out_stride + std::size_t(co) * p_count;
        // Plain loop: vectorized reductions over unaligned maps round
        // differently depending on the buffer address.
        for (long i = 0; i < p_count; ++i) acc += row[i];
      }
      grad_bias[co] += acc;
    }
  }
}

void upsample2x_forward(int planes, int h, int w, const float* input, float* output) {
#pragma omp parallel for schedule(static) if (planes > 8)
  for (int p = 0; p < planes; ++p) {
    const float* src = input + std::size_t(p) * h * w;
    float* dst = output + std::size_t(p) * 4 * h * w;
    for (int y = 0; y < h; ++y) {
      float* r0 = dst + std::size_t(2 * y) * 2 * w;
      float* r1 = r0 + 2 * w;
      for (int x = 0; x < w; ++x) {
        const float v = src[std::size_t(y) * w + x];
        r0[2 * x] = r0[2 * x + 1] = r1[2 * x] = r1[2 * x + 1] = v;
      }
    }
  }
}

void upsample2x_backward(int planes, int h, int w, const float* grad_output, float* grad_input) {
#pragma omp parallel for schedule(static) if (planes > 8)
  for (int p = 0; p < planes; ++p) {
    const float* src = grad_output + std::size_t(p) * 4 * h * w;
    float* dst = grad_input + std::size_t(p) * h * w;
    for (int y = 0; y < h; ++y) {
      const float* r0 = src + std::size_t(2 * y) * 2 * w;
      const float* r1 = r0 + 2 * w;
      for (int x = 0; x < w; ++x)
        dst[std::size_t(y) * w + x] = (r0[2 * x] + r0[2 * x + 1]) + (r1[2 * x] + r1[2 * x + 1]);
    }
  }
}

void silu_forward(long count, const float* x, float* y) {
#pragma omp parallel for simd schedule(static) if (count > 65536)
  for (long i = 0; i < count; ++i) y[i] = x[i] / (1.0f + std::exp(-x[i]));
}

void silu_backward(long count, const float* x, const float* grad_y, float* grad_x) {
#pragma omp parallel for simd schedule(static) if (count > 65536)
  for (long i = 0; i < count; ++i) {
    const float s = 1.0f / (1.0f + std::exp(-x[i]));
    grad_x[i] = grad_y[i] * s * (1.0f + x[i] * (1.0f - s));
  }
}

}  // namespace latseg::kernels
