#pragma once

// Building blocks for the block network: 3x3 same-padding convolution via
// im2col, 2x2 average pooling (ceil mode), and row softmax. Layouts are
// row-major [batch, channel, row, col].

#include <algorithm>
#include <cmath>

#include "splitamc/types.hpp"

namespace splitamc::kernels {

inline Index pooled(Index n) { return (n + 1) / 2; }

/// cols(c*9 + ky*3 + kx, b*H*W + y*W + x) = in[b, c, y+ky-1, x+kx-1] (zero outside).
template <typename Scalar>
void im2col3x3(const Scalar* in, Index batch, Index channels, Index h, Index w, RowMat<Scalar>& cols) {
  const Index hw = h * w;
  cols.resize(channels * 9, batch * hw);
  for (Index c = 0; c < channels; ++c) {
    for (Index ky = 0; ky < 3; ++ky) {
      for (Index kx = 0; kx < 3; ++kx) {
        Scalar* dst = cols.row(c * 9 + ky * 3 + kx).data();
        for (Index b = 0; b < batch; ++b) {
          const Scalar* plane = in + (b * channels + c) * hw;
          Scalar* out = dst + b * hw;
          for (Index y = 0; y < h; ++y) {
            const Index sy = y + ky - 1;
            if (sy < 0 || sy >= h) {
              std::fill(out + y * w, out + (y + 1) * w, Scalar(0));
              continue;
            }
            for (Index x = 0; x < w; ++x) {
              const Index sx = x + kx - 1;
              out[y * w + x] = (sx >= 0 && sx < w) ? plane[sy * w + sx] : Scalar(0);
            }
          }
        }
      }
    }
  }
}

/// Adjoint of im2col3x3: accumulates into `out` (which the caller zeroes).
template <typename Scalar>
void col2im3x3(const RowMat<Scalar>& cols, Index batch, Index channels, Index h, Index w, Scalar* out) {
  const Index hw = h * w;
  for (Index c = 0; c < channels; ++c) {
    for (Index ky = 0; ky < 3; ++ky) {
      for (Index kx = 0; kx < 3; ++kx) {
        const Scalar* src = cols.row(c * 9 + ky * 3 + kx).data();
        for (Index b = 0; b < batch; ++b) {
          Scalar* plane = out + (b * channels + c) * hw;
          const Scalar* in = src + b * hw;
          for (Index y = 0; y < h; ++y) {
            const Index sy = y + ky - 1;
            if (sy < 0 || sy >= h) continue;
            for (Index x = 0; x < w; ++x) {
              const Index sx = x + kx - 1;
              if (sx >= 0 && sx < w) plane[sy * w + sx] += in[y * w + x];
            }
          }
        }
      }
    }
  }
}

/// 2x2 stride-2 average pool over `planes` independent h x w planes. Odd
/// edges use partial windows averaged over the elements present.
template <typename Scalar>
void avgpool2x2(const Scalar* in, Index planes, Index h, Index w, Scalar* out) {
  const Index oh = pooled(h), ow = pooled(w);
  for (Index p = 0; p < planes; ++p) {
    const Scalar* src = in + p * h * w;
    Scalar* dst = out + p * oh * ow;
    for (Index y = 0; y < oh; ++y) {
      const Index y1 = std::min(2 * y + 2, h);
      for (Index x = 0; x < ow; ++x) {
        const Index x1 = std::min(2 * x + 2, w);
        Scalar acc(0);
        for (Index yy = 2 * y; yy < y1; ++yy)
          for (Index xx = 2 * x; xx < x1; ++xx) acc += src[yy * w + xx];
        dst[y * ow + x] = acc / static_cast<Scalar>((y1 - 2 * y) * (x1 - 2 * x));
      }
    }
  }
}

/// Adjoint of avgpool2x2: writes (not accumulates) the input gradient.
template <typename Scalar>
void avgpool2x2_backward(const Scalar* grad_out, Index planes, Index h, Index w, Scalar* grad_in) {
  const Index oh = pooled(h), ow = pooled(w);
  for (Index p = 0; p < planes; ++p) {
    const Scalar* g = grad_out + p * oh * ow;
    Scalar* dst = grad_in + p * h * w;
    for (Index y = 0; y < oh; ++y) {
      const Index y1 = std::min(2 * y + 2, h);
      for (Index x = 0; x < ow; ++x) {
        const Index x1 = std::min(2 * x + 2, w);
        const Scalar share = g[y * ow + x] / static_cast<Scalar>((y1 - 2 * y) * (x1 - 2 * x));
        for (Index yy = 2 * y; yy < y1; ++yy)
          for (Index xx = 2 * x; xx < x1; ++xx) dst[yy * w + xx] = share;
      }
    }
  }
}

/// Row-wise softmax with max shift.
template <typename Derived>
RowMat<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  RowMat<Scalar> out(logits.rows(), logits.cols());
  for (Index r = 0; r < logits.rows(); ++r) {
    const Scalar peak = logits.row(r).maxCoeff();
    out.row(r) = (logits.row(r).array() - peak).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

}  // namespace splitamc::kernels
