#pragma once

#include <cstdint>

// Compute kernels behind the similarity network. Every kernel exists twice:
// `serial` is a direct per-output-element transcription used as the test
// reference, `parallel` is the OpenMP version the model runs. Both take raw
// row-major buffers in [N, C, H, W] layout and are instantiated for float and
// double.
//
// Parallel kernels partition work so that every output element is written by
// exactly one thread with a fixed summation order, so results do not depend on
// the thread count.

namespace livesong::kernels {

/// Stride-1, dilation-1 2-D convolution (cross-correlation) with symmetric
/// zero padding.
struct ConvShape {
  int batch = 1;
  int in_channels = 1;
  int in_h = 1;
  int in_w = 1;
  int out_channels = 1;
  int kernel_h = 1;
  int kernel_w = 1;
  int pad_h = 0;
  int pad_w = 0;

  int out_h() const { return in_h + 2 * pad_h - kernel_h + 1; }
  int out_w() const { return in_w + 2 * pad_w - kernel_w + 1; }
};

/// Non-overlapping max pool, kernel == stride, trailing remainder dropped.
struct PoolShape {
  int batch = 1;
  int channels = 1;
  int in_h = 1;
  int in_w = 1;
  int pool_h = 1;
  int pool_w = 1;

  int out_h() const { return in_h / pool_h; }
  int out_w() const { return in_w / pool_w; }
};

/// Adaptive max pool to a fixed output grid. Cell i covers input rows
/// [floor(i*in/out), ceil((i+1)*in/out)).
struct AdaptivePoolShape {
  int batch = 1;
  int channels = 1;
  int in_h = 1;
  int in_w = 1;
  int out_h = 1;
  int out_w = 1;
};

using Index = std::int32_t;

#define LIVESONG_KERNEL_DECLS                                                                          \
  template <typename Real>                                                                             \
  void conv2d_forward(const ConvShape& s, const Real* input, const Real* weight, const Real* bias,     \
                      Real* output);                                                                   \
  /* Overwrites grad_input. */                                                                         \
  template <typename Real>                                                                             \
  void conv2d_backward_input(const ConvShape& s, const Real* grad_output, const Real* weight,          \
                             Real* grad_input);                                                        \
  /* Accumulates into grad_weight / grad_bias (grad_bias may be null). */                              \
  template <typename Real>                                                                             \
  void conv2d_backward_params(const ConvShape& s, const Real* input, const Real* grad_output,          \
                              Real* grad_weight, Real* grad_bias);                                     \
  template <typename Real>                                                                             \
  void maxpool2d_forward(const PoolShape& s, const Real* input, Real* output, Index* argmax);           \
  /* Overwrites grad_input. */                                                                         \
  template <typename Real>                                                                             \
  void maxpool2d_backward(const PoolShape& s, const Real* grad_output, const Index* argmax,            \
                          Real* grad_input);                                                           \
  template <typename Real>                                                                             \
  void adaptive_maxpool2d_forward(const AdaptivePoolShape& s, const Real* input, Real* output,         \
                                  Index* argmax);                                                      \
  template <typename Real>                                                                             \
  void adaptive_maxpool2d_backward(const AdaptivePoolShape& s, const Real* grad_output,                \
                                   const Index* argmax, Real* grad_input);                             \
  /* Max over the H axis: [N, C, H, W] -> [N, C, W]. */                                                \
  template <typename Real>                                                                             \
  void height_max_forward(int batch, int channels, int h, int w, const Real* input, Real* output,      \
                          Index* argmax);                                                              \
  template <typename Real>                                                                             \
  void height_max_backward(int batch, int channels, int h, int w, const Real* grad_output,             \
                           const Index* argmax, Real* grad_input);                                     \
  /* Cross-similarity: out[n, i, j] = sum_c (a[n, c, i] - b[n, c, j])^2, a: [N, C, La], b: [N, C, Lb]. \
   */                                                                                                  \
  template <typename Real>                                                                             \
  void csm_forward(int batch, int channels, int len_a, int len_b, const Real* a, const Real* b,        \
                   Real* output);                                                                      \
  /* Overwrites grad_a and grad_b. */                                                                  \
  template <typename Real>                                                                             \
  void csm_backward(int batch, int channels, int len_a, int len_b, const Real* a, const Real* b,       \
                    const Real* grad_output, Real* grad_a, Real* grad_b);

namespace serial {
LIVESONG_KERNEL_DECLS
}  // namespace serial

namespace parallel {
LIVESONG_KERNEL_DECLS
}  // namespace parallel

#undef LIVESONG_KERNEL_DECLS

}  // namespace livesong::kernels
