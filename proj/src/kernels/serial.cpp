// Reference kernels: one output element at a time, straight from the
// definitions. Slow on purpose; the parallel kernels are tested against these.

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "livesong/kernels.h"

namespace livesong::kernels::serial {

namespace {

std::size_t idx4(int n, int c, int h, int w, int C, int H, int W) {
  return ((static_cast<std::size_t>(n) * C + c) * H + h) * W + w;
}

}  // namespace

template <typename Real>
void conv2d_forward(const ConvShape& s, const Real* input, const Real* weight, const Real* bias,
                    Real* output) {
  const int oh_n = s.out_h(), ow_n = s.out_w();
  for (int n = 0; n < s.batch; ++n)
    for (int oc = 0; oc < s.out_channels; ++oc)
      for (int oh = 0; oh < oh_n; ++oh)
        for (int ow = 0; ow < ow_n; ++ow) {
          Real acc = bias ? bias[oc] : Real(0);
          for (int ic = 0; ic < s.in_channels; ++ic)
            for (int kh = 0; kh < s.kernel_h; ++kh)
              for (int kw = 0; kw < s.kernel_w; ++kw) {
                const int ih = oh + kh - s.pad_h, iw = ow + kw - s.pad_w;
                if (ih < 0 || ih >= s.in_h || iw < 0 || iw >= s.in_w) continue;
                acc += weight[idx4(oc, ic, kh, kw, s.in_channels, s.kernel_h, s.kernel_w)] *
                       input[idx4(n, ic, ih, iw, s.in_channels, s.in_h, s.in_w)];
              }
          output[idx4(n, oc, oh, ow, s.out_channels, oh_n, ow_n)] = acc;
        }
}

template <typename Real>
void conv2d_backward_input(const ConvShape& s, const Real* grad_output, const Real* weight,
                           Real* grad_input) {
  const int oh_n = s.out_h(), ow_n = s.out_w();
  for (int n = 0; n < s.batch; ++n)
    for (int ic = 0; ic < s.in_channels; ++ic)
      for (int ih = 0; ih < s.in_h; ++ih)
        for (int iw = 0; iw < s.in_w; ++iw) {
          Real acc = 0;
          for (int oc = 0; oc < s.out_channels; ++oc)
            for (int kh = 0; kh < s.kernel_h; ++kh)
              for (int kw = 0; kw < s.kernel_w; ++kw) {
                const int oh = ih - kh + s.pad_h, ow = iw - kw + s.pad_w;
                if (oh < 0 || oh >= oh_n || ow < 0 || ow >= ow_n) continue;
                acc += weight[idx4(oc, ic, kh, kw, s.in_channels, s.kernel_h, s.kernel_w)] *
                       grad_output[idx4(n, oc, oh, ow, s.out_channels, oh_n, ow_n)];
              }
          grad_input[idx4(n, ic, ih, iw, s.in_channels, s.in_h, s.in_w)] = acc;
        }
}

template <typename Real>
void conv2d_backward_params(const ConvShape& s, const Real* input, const Real* grad_output,
                            Real* grad_weight, Real* grad_bias) {
  const int oh_n = s.out_h(), ow_n = s.out_w();
  for (int oc = 0; oc < s.out_channels; ++oc) {
    for (int ic = 0; ic < s.in_channels; ++ic)
      for (int kh = 0; kh < s.kernel_h; ++kh)
        for (int kw = 0; kw < s.kernel_w; ++kw) {
          Real acc = 0;
          for (int n = 0; n < s.batch; ++n)
            for (int oh = 0; oh < oh_n; ++oh)
              for (int ow = 0; ow < ow_n; ++ow) {
                const int ih = oh + kh - s.pad_h, iw = ow + kw - s.pad_w;
                if (ih < 0 || ih >= s.in_h || iw < 0 || iw >= s.in_w) continue;
                acc += grad_output[idx4(n, oc, oh, ow, s.out_channels, oh_n, ow_n)] *
                       input[idx4(n, ic, ih, iw, s.in_channels, s.in_h, s.in_w)];
              }
          grad_weight[idx4(oc, ic, kh, kw, s.in_channels, s.kernel_h, s.kernel_w)] += acc;
        }
    if (grad_bias) {
      Real acc = 0;
      for (int n = 0; n < s.batch; ++n)
        for (int oh = 0; oh < oh_n; ++oh)
          for (int ow = 0; ow < ow_n; ++ow) acc += grad_output[idx4(n, oc, oh, ow, s.out_channels, oh_n, ow_n)];
      grad_bias[oc] += acc;
    }
  }
}

template <typename Real>
void maxpool2d_forward(const PoolShape& s, const Real* input, Real* output, Index* argmax) {
  const int oh_n = s.out_h(), ow_n = s.out_w();
  for (int n = 0; n < s.batch; ++n)
    for (int c = 0; c < s.channels; ++c)
      for (int oh = 0; oh < oh_n; ++oh)
        for (int ow = 0; ow < ow_n; ++ow) {
          Index best_i = -1;
          Real best = 0;
          for (int ph = 0; ph < s.pool_h; ++ph)
            for (int pw = 0; pw < s.pool_w; ++pw) {
              const int ih = oh * s.pool_h + ph, iw = ow * s.pool_w + pw;
              const Real v = input[idx4(n, c, ih, iw, s.channels, s.in_h, s.in_w)];
              if (best_i < 0 || v > best) {
                best = v;
                best_i = ih * s.in_w + iw;
              }
            }
          const std::size_t o = idx4(n, c, oh, ow, s.channels, oh_n, ow_n);
          output[o] = best;
          argmax[o] = best_i;
        }
}

template <typename Real>
void maxpool2d_backward(const PoolShape& s, const Real* grad_output, const Index* argmax, Real* grad_input) {
  const std::size_t plane_in = static_cast<std::size_t>(s.in_h) * s.in_w;
  const std::size_t plane_out = static_cast<std::size_t>(s.out_h()) * s.out_w();
  std::fill(grad_input, grad_input + plane_in * s.batch * s.channels, Real(0));
  for (std::size_t p = 0; p < static_cast<std::size_t>(s.batch) * s.channels; ++p)
    for (std::size_t o = 0; o < plane_out; ++o)
      grad_input[p * plane_in + argmax[p * plane_out + o]] += grad_output[p * plane_out + o];
}

template <typename Real>
void adaptive_maxpool2d_forward(const AdaptivePoolShape& s, const Real* input, Real* output, Index* argmax) {
  for (int n = 0; n < s.batch; ++n)
    for (int c = 0; c < s.channels; ++c)
      for (int oh = 0; oh < s.out_h; ++oh)
        for (int ow = 0; ow < s.out_w; ++ow) {
          const int h0 = (oh * s.in_h) / s.out_h;
          const int h1 = ((oh + 1) * s.in_h + s.out_h - 1) / s.out_h;
          const int w0 = (ow * s.in_w) / s.out_w;
          const int w1 = ((ow + 1) * s.in_w + s.out_w - 1) / s.out_w;
          Index best_i = -1;
          Real best = 0;
          for (int ih = h0; ih < h1; ++ih)
            for (int iw = w0; iw < w1; ++iw) {
              const Real v = input[idx4(n, c, ih, iw, s.channels, s.in_h, s.in_w)];
              if (best_i < 0 || v > best) {
                best = v;
                best_i = ih * s.in_w + iw;
              }
            }
          const std::size_t o = idx4(n, c, oh, ow, s.channels, s.out_h, s.out_w);
          output[o] = best;
          argmax[o] = best_i;
        }
}

template <typename Real>
void adaptive_maxpool2d_backward(const AdaptivePoolShape& s, const Real* grad_output, const Index* argmax,
                                 Real* grad_input) {
  const std::size_t plane_in = static_cast<std::size_t>(s.in_h) * s.in_w;
  const std::size_t plane_out = static_cast<std::size_t>(s.out_h) * s.out_w;
  std::fill(grad_input, grad_input + plane_in * s.batch * s.channels, Real(0));
  for (std::size_t p = 0; p < static_cast<std::size_t>(s.batch) * s.channels; ++p)
    for (std::size_t o = 0; o < plane_out; ++o)
      grad_input[p * plane_in + argmax[p * plane_out + o]] += grad_output[p * plane_out + o];
}

template <typename Real>
void height_max_forward(int batch, int channels, int h, int w, const Real* input, Real* output, Index* argmax) {
  for (int n = 0; n < batch; ++n)
    for (int c = 0; c < channels; ++c)
      for (int x = 0; x < w; ++x) {
        Index best_i = 0;
        Real best = input[idx4(n, c, 0, x, channels, h, w)];
        for (int y = 1; y < h; ++y) {
          const Real v = input[idx4(n, c, y, x, channels, h, w)];
          if (v > best) {
            best = v;
            best_i = y;
          }
        }
        const std::size_t o = (static_cast<std::size_t>(n) * channels + c) * w + x;
        output[o] = best;
        argmax[o] = best_i;
      }
}

template <typename Real>
void height_max_backward(int batch, int channels, int h, int w, const Real* grad_output, const Index* argmax,
                         Real* grad_input) {
  std::fill(grad_input, grad_input + static_cast<std::size_t>(batch) * channels * h * w, Real(0));
  for (int n = 0; n < batch; ++n)
    for (int c = 0; c < channels; ++c)
      for (int x = 0; x < w; ++x) {
        const std::size_t o = (static_cast<std::size_t>(n) * channels + c) * w + x;
        grad_input[idx4(n, c, argmax[o], x, channels, h, w)] += grad_output[o];
      }
}

template <typename Real>
void csm_forward(int batch, int channels, int len_a, int len_b, const Real* a, const Real* b, Real* output) {
  for (int n = 0; n < batch; ++n)
    for (int i = 0; i < len_a; ++i)
      for (int j = 0; j < len_b; ++j) {
        Real acc = 0;
        for (int c = 0; c < channels; ++c) {
          const Real d = a[(static_cast<std::size_t>(n) * channels + c) * len_a + i] -
                         b[(static_cast<std::size_t>(n) * channels + c) * len_b + j];
          acc += d * d;
        }
        output[(static_cast<std::size_t>(n) * len_a + i) * len_b + j] = acc;
      }
}

template <typename Real>
void csm_backward(int batch, int channels, int len_a, int len_b, const Real* a, const Real* b,
                  const Real* grad_output, Real* grad_a, Real* grad_b) {
  for (int n = 0; n < batch; ++n)
    for (int c = 0; c < channels; ++c) {
      const Real* ar = a + (static_cast<std::size_t>(n) * channels + c) * len_a;
      const Real* br = b + (static_cast<std::size_t>(n) * channels + c) * len_b;
      const Real* g = grad_output + static_cast<std::size_t>(n) * len_a * len_b;
      for (int i = 0; i < len_a; ++i) {
        Real acc = 0;
        for (int j = 0; j < len_b; ++j) acc += g[static_cast<std::size_t>(i) * len_b + j] * Real(2) * (ar[i] - br[j]);
        grad_a[(static_cast<std::size_t>(n) * channels + c) * len_a + i] = acc;
      }
      for (int j = 0; j < len_b; ++j) {
        Real acc = 0;
        for (int i = 0; i < len_a; ++i) acc -= g[static_cast<std::size_t>(i) * len_b + j] * Real(2) * (ar[i] - br[j]);
        grad_b[(static_cast<std::size_t>(n) * channels + c) * len_b + j] = acc;
      }
    }
}

#define LIVESONG_INSTANTIATE(Real)                                                                         \
  template void conv2d_forward<Real>(const ConvShape&, const Real*, const Real*, const Real*, Real*);     \
  template void conv2d_backward_input<Real>(const ConvShape&, const Real*, const Real*, Real*);           \
  template void conv2d_backward_params<Real>(const ConvShape&, const Real*, const Real*, Real*, Real*);    \
  template void maxpool2d_forward<Real>(const PoolShape&, const Real*, Real*, Index*);                    \
  template void maxpool2d_backward<Real>(const PoolShape&, const Real*, const Index*, Real*);             \
  template void adaptive_maxpool2d_forward<Real>(const AdaptivePoolShape&, const Real*, Real*, Index*);   \
  template void adaptive_maxpool2d_backward<Real>(const AdaptivePoolShape&, const Real*, const Index*,    \
                                                  Real*);                                                 \
  template void height_max_forward<Real>(int, int, int, int, const Real*, Real*, Index*);                 \
  template void height_max_backward<Real>(int, int, int, int, const Real*, const Index*, Real*);          \
  template void csm_forward<Real>(int, int, int, int, const Real*, const Real*, Real*);                   \
  template void csm_backward<Real>(int, int, int, int, const Real*, const Real*, const Real*, Real*, Real*);

LIVESONG_INSTANTIATE(float)
LIVESONG_INSTANTIATE(double)

#undef LIVESONG_INSTANTIATE

}  // namespace livesong::kernels::serial
