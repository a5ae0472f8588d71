#include "latseg/kernels.hpp"

#include <cmath>
#include <cstddef>
#include <vector>

namespace latseg::kernels::reference {

void conv2d_forward(const ConvGeometry& g, const float* input, const float* weight,
                    const float* bias, float* output) {
  const int ho = g.out_height(), wo = g.out_width();
  for (int n = 0; n < g.batch; ++n)
    for (int co = 0; co < g.out_channels; ++co)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          double acc = bias ? bias[co] : 0.0;
          for (int ci = 0; ci < g.in_channels; ++ci)
            for (int ky = 0; ky < g.kernel; ++ky)
              for (int kx = 0; kx < g.kernel; ++kx) {
                const int iy = oy * g.stride - g.pad + ky;
                const int ix = ox * g.stride - g.pad + kx;
                if (iy < 0 || iy >= g.height || ix < 0 || ix >= g.width) continue;
                const double xv =
                    input[((std::size_t(n) * g.in_channels + ci) * g.height + iy) * g.width + ix];
                const double wv =
                    weight[((std::size_t(co) * g.in_channels + ci) * g.kernel + ky) * g.kernel + kx];
                acc += xv * wv;
              }
          output[((std::size_t(n) * g.out_channels + co) * ho + oy) * wo + ox] =
              static_cast<float>(acc);
        }
}

void conv2d_backward_input(const ConvGeometry& g, const float* grad_output, const float* weight,
                           float* grad_input) {
  const int ho = g.out_height(), wo = g.out_width();
  std::vector<double> acc(std::size_t(g.batch) * g.in_channels * g.height * g.width, 0.0);
  for (int n = 0; n < g.batch; ++n)
    for (int co = 0; co < g.out_channels; ++co)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          const double dy = grad_output[((std::size_t(n) * g.out_channels + co) * ho + oy) * wo + ox];
          for (int ci = 0; ci < g.in_channels; ++ci)
            for (int ky = 0; ky < g.kernel; ++ky)
              for (int kx = 0; kx < g.kernel; ++kx) {
                const int iy = oy * g.stride - g.pad + ky;
                const int ix = ox * g.stride - g.pad + kx;
                if (iy < 0 || iy >= g.height || ix < 0 || ix >= g.width) continue;
                acc[((std::size_t(n) * g.in_channels + ci) * g.height + iy) * g.width + ix] +=
                    dy * weight[((std::size_t(co) * g.in_channels + ci) * g.kernel + ky) * g.kernel + kx];
              }
        }
  for (std::size_t i = 0; i < acc.size(); ++i) grad_input[i] = static_cast<float>(acc[i]);
}

void conv2d_backward_params(const ConvGeometry& g, const float* input, const float* grad_output,
                            float* grad_weight, float* grad_bias) {
  const int ho = g.out_height(), wo = g.out_width();
  for (int co = 0; co < g.out_channels; ++co) {
    if (grad_bias) {
      double b = 0.0;
      for (int n = 0; n < g.batch; ++n)
        for (int p = 0; p < ho * wo; ++p)
          b += grad_output[(std::size_t(n) * g.out_channels + co) * ho * wo + p];
      grad_bias[co] += static_cast<float>(b);
    }
    for (int ci = 0; ci < g.in_channels; ++ci)
      for (int ky = 0; ky < g.kernel; ++ky)
        for (int kx = 0; kx < g.kernel; ++kx) {
          double acc = 0.0;
          for (int n = 0; n < g.batch; ++n)
            for (int oy = 0; oy < ho; ++oy)
              for (int ox = 0; ox < wo; ++ox) {
                const int iy = oy * g.stride - g.pad + ky;
                const int ix = ox * g.stride - g.pad + kx;
                if (iy < 0 || iy >= g.height || ix < 0 || ix >= g.width) continue;
                acc += double(grad_output[((std::size_t(n) * g.out_channels + co) * ho + oy) * wo + ox]) *
                       input[((std::size_t(n) * g.in_channels + ci) * g.height + iy) * g.width + ix];
              }
          grad_weight[((std::size_t(co) * g.in_channels + ci) * g.kernel + ky) * g.kernel + kx] +=
              static_cast<float>(acc);
        }
  }
}

void upsample2x_forward(int planes, int h, int w, const float* input, float* output) {
  for (int p = 0; p < planes; ++p)
    for (int y = 0; y < 2 * h; ++y)
      for (int x = 0; x < 2 * w; ++x)
        output[(std::size_t(p) * 2 * h + y) * 2 * w + x] = input[(std::size_t(p) * h + y / 2) * w + x / 2];
}

void upsample2x_backward(int planes, int h, int w, const float* grad_output, float* grad_input) {
  for (int p = 0; p < planes; ++p)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double s = 0.0;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx)
            s += grad_output[(std::size_t(p) * 2 * h + 2 * y + dy) * 2 * w + 2 * x + dx];
        grad_input[(std::size_t(p) * h + y) * w + x] = static_cast<float>(s);
      }
}

void silu_forward(long count, const float* x, float* y) {
  for (long i = 0; i < count; ++i) y[i] = static_cast<float>(x[i] / (1.0 + std::exp(-double(x[i]))));
}

void silu_backward(long count, const float* x, const float* grad_y, float* grad_x) {
  for (long i = 0; i < count; ++i) {
    const double s = 1.0 / (1.0 + std::exp(-double(x[i])));
    grad_x[i] = static_cast<float>(grad_y[i] * s * (1.0 + x[i] * (1.0 - s)));
  }
}

}  // namespace latseg::kernels::reference
