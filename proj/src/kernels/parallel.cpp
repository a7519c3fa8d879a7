#include <algorithm>
#include <cstddef>
#include <vector>

#include <cblas.h>

#include "livesong/kernels.h"

namespace livesong::kernels::parallel {

namespace {

inline void gemm(CBLAS_TRANSPOSE ta, CBLAS_TRANSPOSE tb, int m, int n, int k, const float* a, int lda,
                 const float* b, int ldb, float beta, float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, ta, tb, m, n, k, 1.0f, a, lda, b, ldb, beta, c, ldc);
}

inline void gemm(CBLAS_TRANSPOSE ta, CBLAS_TRANSPOSE tb, int m, int n, int k, const double* a, int lda,
                 const double* b, int ldb, double beta, double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, ta, tb, m, n, k, 1.0, a, lda, b, ldb, beta, c, ldc);
}

// Unfolds one image into a [C*KH*KW, OH*OW] matrix; out-of-range taps are 0.
template <typename Real>
void im2col(const ConvShape& s, const Real* image, Real* col) {
  const int oh_n = s.out_h(), ow_n = s.out_w();
  const std::size_t out_plane = static_cast<std::size_t>(oh_n) * ow_n;
  const int rows = s.in_channels * s.kernel_h * s.kernel_w;
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r) {
    const int kw = r % s.kernel_w;
    const int kh = (r / s.kernel_w) % s.kernel_h;
    const int ic = r / (s.kernel_w * s.kernel_h);
    const Real* in = image + static_cast<std::size_t>(ic) * s.in_h * s.in_w;
    Real* dst = col + static_cast<std::size_t>(r) * out_plane;
    const int lo = std::max(0, s.pad_w - kw);
    const int hi = std::min(ow_n, s.in_w + s.pad_w - kw);
    for (int oh = 0; oh < oh_n; ++oh) {
      Real* drow = dst + static_cast<std::size_t>(oh) * ow_n;
      const int ih = oh + kh - s.pad_h;
      if (ih < 0 || ih >= s.in_h || lo >= hi) {
        std::fill(drow, drow + ow_n, Real(0));
        continue;
      }
      const Real* irow = in + static_cast<std::size_t>(ih) * s.in_w + (kw - s.pad_w);
      std::fill(drow, drow + lo, Real(0));
      std::copy(irow + lo, irow + hi, drow + lo);
      std::fill(drow + hi, drow + ow_n, Real(0));
    }
  }
}

// Adjoint of im2col: scatters column gradients back onto one image.
template <typename Real>
void col2im(const ConvShape& s, const Real* col, Real* image) {
  const int oh_n = s.out_h(), ow_n = s.out_w();
  const std::size_t out_plane = static_cast<std::size_t>(oh_n) * ow_n;
  const std::size_t in_plane = static_cast<std::size_t>(s.in_h) * s.in_w;
#pragma omp parallel for schedule(static)
  for (int ic = 0; ic < s.in_channels; ++ic) {
    Real* gi = image + static_cast<std::size_t>(ic) * in_plane;
    std::fill(gi, gi + in_plane, Real(0));
    for (int kh = 0; kh < s.kernel_h; ++kh) {
      for (int kw = 0; kw < s.kernel_w; ++kw) {
        const int r = (ic * s.kernel_h + kh) * s.kernel_w + kw;
        const Real* src = col + static_cast<std::size_t>(r) * out_plane;
        const int lo = std::max(0, s.pad_w - kw);
        const int hi = std::min(ow_n, s.in_w + s.pad_w - kw);
        for (int oh = 0; oh < oh_n; ++oh) {
          const int ih = oh + kh - s.pad_h;
          if (ih < 0 || ih >= s.in_h) continue;
          Real* girow = gi + static_cast<std::size_t>(ih) * s.in_w + (kw - s.pad_w);
          const Real* srow = src + static_cast<std::size_t>(oh) * ow_n;
#pragma omp simd
          for (int ow = lo; ow < hi; ++ow) girow[ow] += srow[ow];
        }
      }
    }
  }
}

}  // namespace

template <typename Real>
void conv2d_forward(const ConvShape& s, const Real* input, const Real* weight, const Real* bias, Real* output) {
  const int out_plane = s.out_h() * s.out_w();
  const int k = s.in_channels * s.kernel_h * s.kernel_w;
  const std::size_t in_image = static_cast<std::size_t>(s.in_channels) * s.in_h * s.in_w;
  const std::size_t out_image = static_cast<std::size_t>(s.out_channels) * out_plane;
  std::vector<Real> col(static_cast<std::size_t>(k) * out_plane);
  for (int n = 0; n < s.batch; ++n) {
    Real* out = output + n * out_image;
#pragma omp parallel for schedule(static)
    for (int oc = 0; oc < s.out_channels; ++oc) {
      std::fill(out + static_cast<std::size_t>(oc) * out_plane, out + static_cast<std::size_t>(oc + 1) * out_plane,
                bias ? bias[oc] : Real(0));
    }
    im2col(s, input + n * in_image, col.data());
    gemm(CblasNoTrans, CblasNoTrans, s.out_channels, out_plane, k, weight, k, col.data(), out_plane, Real(1), out,
         out_plane);
  }
}

template <typename Real>
void conv2d_backward_input(const ConvShape& s, const Real* grad_output, const Real* weight, Real* grad_input) {
  const int out_plane = s.out_h() * s.out_w();
  const int k = s.in_channels * s.kernel_h * s.kernel_w;
  const std::size_t in_image = static_cast<std::size_t>(s.in_channels) * s.in_h * s.in_w;
  const std::size_t out_image = static_cast<std::size_t>(s.out_channels) * out_plane;
  std::vector<Real> col(static_cast<std::size_t>(k) * out_plane);
  for (int n = 0; n < s.batch; ++n) {
    gemm(CblasTrans, CblasNoTrans, k, out_plane, s.out_channels, weight, k, grad_output + n * out_image, out_plane,
         Real(0), col.data(), out_plane);
    col2im(s, col.data(), grad_input + n * in_image);
  }
}

template <typename Real>
void conv2d_backward_params(const ConvShape& s, const Real* input, const Real* grad_output, Real* grad_weight,
                            Real* grad_bias) {
  const int out_plane = s.out_h() * s.out_w();
  const int k = s.in_channels * s.kernel_h * s.kernel_w;
  const std::size_t in_image = static_cast<std::size_t>(s.in_channels) * s.in_h * s.in_w;
  const std::size_t out_image = static_cast<std::size_t>(s.out_channels) * out_plane;
  std::vector<Real> col(static_cast<std::size_t>(k) * out_plane);
  for (int n = 0; n < s.batch; ++n) {
    im2col(s, input + n * in_image, col.data());
    gemm(CblasNoTrans, CblasTrans, s.out_channels, k, out_plane, grad_output + n * out_image, out_plane, col.data(),
         out_plane, Real(1), grad_weight, k);
  }

  if (grad_bias) {
#pragma omp parallel for schedule(static)
    for (int oc = 0; oc < s.out_channels; ++oc) {
      Real acc = 0;
      for (int n = 0; n < s.batch; ++n) {
        const Real* go = grad_output + (static_cast<std::size_t>(n) * s.out_channels + oc) * out_plane;
        Real plane = 0;
#pragma omp simd reduction(+ : plane)
        for (int i = 0; i < out_plane; ++i) plane += go[i];
        acc += plane;
      }
      grad_bias[oc] += acc;
    }
  }
}

template <typename Real>
void maxpool2d_forward(const PoolShape& s, const Real* input, Real* output, Index* argmax) {
  const int oh_n = s.out_h(), ow_n = s.out_w();
  const std::size_t in_plane = static_cast<std::size_t>(s.in_h) * s.in_w;
  const std::size_t out_plane = static_cast<std::size_t>(oh_n) * ow_n;
  const int planes = s.batch * s.channels;

#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const Real* in = input + p * in_plane;
    Real* out = output + p * out_plane;
    Index* am = argmax + p * out_plane;
    for (int oh = 0; oh < oh_n; ++oh) {
      for (int ow = 0; ow < ow_n; ++ow) {
        Index best_i = (oh * s.pool_h) * s.in_w + ow * s.pool_w;
        Real best = in[best_i];
        for (int ph = 0; ph < s.pool_h; ++ph) {
          const Index row = (oh * s.pool_h + ph) * s.in_w + ow * s.pool_w;
          for (int pw = 0; pw < s.pool_w; ++pw) {
            if (in[row + pw] > best) {
              best = in[row + pw];
              best_i = row + pw;
            }
          }
        }
        out[oh * ow_n + ow] = best;
        am[oh * ow_n + ow] = best_i;
      }
    }
  }
}

template <typename Real>
void maxpool2d_backward(const PoolShape& s, const Real* grad_output, const Index* argmax, Real* grad_input) {
  const std::size_t in_plane = static_cast<std::size_t>(s.in_h) * s.in_w;
  const std::size_t out_plane = static_cast<std::size_t>(s.out_h()) * s.out_w();
  const int planes = s.batch * s.channels;

#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    Real* gi = grad_input + p * in_plane;
    std::fill(gi, gi + in_plane, Real(0));
    const Real* go = grad_output + p * out_plane;
    const Index* am = argmax + p * out_plane;
    for (std::size_t o = 0; o < out_plane; ++o) gi[am[o]] += go[o];
  }
}

template <typename Real>
void adaptive_maxpool2d_forward(const AdaptivePoolShape& s, const Real* input, Real* output, Index* argmax) {
  const std::size_t in_plane = static_cast<std::size_t>(s.in_h) * s.in_w;
  const std::size_t out_plane = static_cast<std::size_t>(s.out_h) * s.out_w;
  const int planes = s.batch * s.channels;

#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const Real* in = input + p * in_plane;
    for (int oh = 0; oh < s.out_h; ++oh) {
      const int h0 = (oh * s.in_h) / s.out_h;
      const int h1 = ((oh + 1) * s.in_h + s.out_h - 1) / s.out_h;
      for (int ow = 0; ow < s.out_w; ++ow) {
        const int w0 = (ow * s.in_w) / s.out_w;
        const int w1 = ((ow + 1) * s.in_w + s.out_w - 1) / s.out_w;
        Index best_i = h0 * s.in_w + w0;
        Real best = in[best_i];
        for (int ih = h0; ih < h1; ++ih)
          for (int iw = w0; iw < w1; ++iw) {
            const Index i = ih * s.in_w + iw;
            if (in[i] > best) {
              best = in[i];
              best_i = i;
            }
          }
        output[p * out_plane + oh * s.out_w + ow] = best;
        argmax[p * out_plane + oh * s.out_w + ow] = best_i;
      }
    }
  }
}

template <typename Real>
void adaptive_maxpool2d_backward(const AdaptivePoolShape& s, const Real* grad_output, const Index* argmax,
                                 Real* grad_input) {
  const std::size_t in_plane = static_cast<std::size_t>(s.in_h) * s.in_w;
  const std::size_t out_plane = static_cast<std::size_t>(s.out_h) * s.out_w;
  const int planes = s.batch * s.channels;

#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    Real* gi = grad_input + p * in_plane;
    std::fill(gi, gi + in_plane, Real(0));
    for (std::size_t o = 0; o < out_plane; ++o) gi[argmax[p * out_plane + o]] += grad_output[p * out_plane + o];
  }
}

template <typename Real>
void height_max_forward(int batch, int channels, int h, int w, const Real* input, Real* output, Index* argmax) {
  const int planes = batch * channels;
  const std::size_t in_plane = static_cast<std::size_t>(h) * w;

#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const Real* in = input + p * in_plane;
    Real* out = output + static_cast<std::size_t>(p) * w;
    Index* am = argmax + static_cast<std::size_t>(p) * w;
    std::copy(in, in + w, out);
    std::fill(am, am + w, Index{0});
    for (int y = 1; y < h; ++y) {
      const Real* row = in + static_cast<std::size_t>(y) * w;
      for (int x = 0; x < w; ++x) {
        if (row[x] > out[x]) {
          out[x] = row[x];
          am[x] = y;
        }
      }
    }
  }
}

template <typename Real>
void height_max_backward(int batch, int channels, int h, int w, const Real* grad_output, const Index* argmax,
                         Real* grad_input) {
  const int planes = batch * channels;
  const std::size_t in_plane = static_cast<std::size_t>(h) * w;

#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    Real* gi = grad_input + p * in_plane;
    std::fill(gi, gi + in_plane, Real(0));
    const Real* go = grad_output + static_cast<std::size_t>(p) * w;
    const Index* am = argmax + static_cast<std::size_t>(p) * w;
    for (int x = 0; x < w; ++x) gi[static_cast<std::size_t>(am[x]) * w + x] += go[x];
  }
}

template <typename Real>
void csm_forward(int batch, int channels, int len_a, int len_b, const Real* a, const Real* b, Real* output) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < batch; ++n) {
    for (int i = 0; i < len_a; ++i) {
      Real* out = output + (static_cast<std::size_t>(n) * len_a + i) * len_b;
      std::fill(out, out + len_b, Real(0));
      for (int c = 0; c < channels; ++c) {
        const Real ai = a[(static_cast<std::size_t>(n) * channels + c) * len_a + i];
        const Real* br = b + (static_cast<std::size_t>(n) * channels + c) * len_b;
#pragma omp simd
        for (int j = 0; j < len_b; ++j) {
          const Real d = ai - br[j];
          out[j] += d * d;
        }
      }
    }
  }
}

template <typename Real>
void csm_backward(int batch, int channels, int len_a, int len_b, const Real* a, const Real* b,
                  const Real* grad_output, Real* grad_a, Real* grad_b) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < batch; ++n) {
    for (int c = 0; c < channels; ++c) {
      const std::size_t row_a = (static_cast<std::size_t>(n) * channels + c) * len_a;
      const std::size_t row_b = (static_cast<std::size_t>(n) * channels + c) * len_b;
      const Real* ar = a + row_a;
      const Real* br = b + row_b;
      const Real* g = grad_output + static_cast<std::size_t>(n) * len_a * len_b;
      Real* gb = grad_b + row_b;
      std::fill(gb, gb + len_b, Real(0));
      for (int i = 0; i < len_a; ++i) {
        const Real* gr = g + static_cast<std::size_t>(i) * len_b;
        const Real ai = ar[i];
        Real acc = 0;
#pragma omp simd reduction(+ : acc)
        for (int j = 0; j < len_b; ++j) {
          const Real t = Real(2) * gr[j] * (ai - br[j]);
          acc += t;
          gb[j] -= t;
        }
        grad_a[row_a + i] = acc;
      }
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

}  // namespace livesong::kernels::parallel
