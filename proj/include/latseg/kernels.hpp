#pragma once

// Dense 2-D convolution and elementwise kernels on NCHW float buffers.
//
// Two implementations share one set of signatures:
//   latseg::kernels            OpenMP-parallel over the batch, im2col + GEMM.
//   latseg::kernels::reference Serial direct loops, kept as the test oracle.
//
// Weight layout is (out_channels, in_channels, k, k). Every kernel produces
// the same result independent of the number of OpenMP threads: parameter
// gradients are reduced over the batch in a fixed order.

namespace latseg::kernels {

struct ConvGeometry {
  int batch = 1;
  int in_channels = 1;
  int height = 1;
  int width = 1;
  int out_channels = 1;
  int kernel = 3;
  int stride = 1;
  int pad = 1;

  int out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
  int out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
};

void conv2d_forward(const ConvGeometry& g, const float* input, const float* weight,
                    const float* bias, float* output);

// grad_input is overwritten.
void conv2d_backward_input(const ConvGeometry& g, const float* grad_output, const float* weight,
                           float* grad_input);

// grad_weight and grad_bias are accumulated into.
void conv2d_backward_params(const ConvGeometry& g, const float* input, const float* grad_output,
                            float* grad_weight, float* grad_bias);

// Nearest-neighbour 2x upsampling of (batch*channels) planes of size h×w.
void upsample2x_forward(int planes, int h, int w, const float* input, float* output);
void upsample2x_backward(int planes, int h, int w, const float* grad_output, float* grad_input);

void silu_forward(long count, const float* x, float* y);
void silu_backward(long count, const float* x, const float* grad_y, float* grad_x);

namespace reference {

void conv2d_forward(const ConvGeometry& g, const float* input, const float* weight,
                    const float* bias, float* output);
void conv2d_backward_input(const ConvGeometry& g, const float* grad_output, const float* weight,
                           float* grad_input);
void conv2d_backward_params(const ConvGeometry& g, const float* input, const float* grad_output,
                            float* grad_weight, float* grad_bias);
void upsample2x_forward(int planes, int h, int w, const float* input, float* output);
void upsample2x_backward(int planes, int h, int w, const float* grad_output, float* grad_input);
void silu_forward(long count, const float* x, float* y);
void silu_backward(long count, const float* x, const float* grad_y, float* grad_x);

}  // namespace reference

}  // namespace latseg::kernels
