#pragma once

// Raw loops behind the differentiable ops. Every kernel uses a fixed loop
// nesting so results are reproducible bit for bit.

#include <algorithm>
#include <cstddef>

namespace eqmz::nd::kernels {

// out[o] = b[o] + sum_i w[o*in + i] * x[i]
inline void dense_forward(const double* w, const double* b, const double* x, double* out, int n_out, int n_in) {
  for (int o = 0; o < n_out; ++o) {
    const double* row = w + static_cast<std::size_t>(o) * n_in;
    double acc = 0.0;
    for (int i = 0; i < n_in; ++i) acc += row[i] * x[i];
    out[o] = b[o] + acc;
  }
}

inline void dense_backward(const double* w, const double* x, const double* gout, double* gw, double* gb, double* gx,
                           int n_out, int n_in) {
  for (int o = 0; o < n_out; ++o) {
    const double go = gout[o];
    const double* row = w + static_cast<std::size_t>(o) * n_in;
    if (gw) {
      double* grow = gw + static_cast<std::size_t>(o) * n_in;
      for (int i = 0; i < n_in; ++i) grow[i] += go * x[i];
    }
    if (gb) gb[o] += go;
    if (gx)
      for (int i = 0; i < n_in; ++i) gx[i] += row[i] * go;
  }
}

struct ConvDims {
  int in_channels;
  int out_channels;
  int height;
  int width;
  int kernel;
};

// Same-padded cross-correlation, weights laid out [out][in][ky][kx].
inline void conv2d_forward(const double* w, const double* b, const double* x, double* out, const ConvDims& d) {
  const int pad = d.kernel / 2;
  const std::size_t plane = static_cast<std::size_t>(d.height) * d.width;
  for (int o = 0; o < d.out_channels; ++o) std::fill(out + o * plane, out + (o + 1) * plane, b[o]);
  for (int o = 0; o < d.out_channels; ++o) {
    double* dst_plane = out + o * plane;
    for (int i = 0; i < d.in_channels; ++i) {
      const double* src_plane = x + i * plane;
      const double* wk = w + (static_cast<std::size_t>(o) * d.in_channels + i) * d.kernel * d.kernel;
      for (int ky = 0; ky < d.kernel; ++ky) {
        const int dy = ky - pad;
        const int y0 = std::max(0, -dy);
        const int y1 = std::min(d.height, d.height - dy);
        for (int kx = 0; kx < d.kernel; ++kx) {
          const int dx = kx - pad;
          const int x0 = std::max(0, -dx);
          const int x1 = std::min(d.width, d.width - dx);
          const double wv = wk[ky * d.kernel + kx];
          for (int y = y0; y < y1; ++y) {
            double* dst = dst_plane + static_cast<std::size_t>(y) * d.width;
            const double* src = src_plane + static_cast<std::size_t>(y + dy) * d.width + dx;
            for (int xx = x0; xx < x1; ++xx) dst[xx] += wv * src[xx];
          }
        }
      }
    }
  }
}

inline void conv2d_backward(const double* w, const double* x, const double* gout, double* gw, double* gb, double* gx,
                            const ConvDims& d) {
  const int pad = d.kernel / 2;
  const std::size_t plane = static_cast<std::size_t>(d.height) * d.width;
  for (int o = 0; o < d.out_channels; ++o) {
    const double* g_plane = gout + o * plane;
    if (gb) {
      double s = 0.0;
      for (std::size_t p = 0; p < plane; ++p) s += g_plane[p];
      gb[o] += s;
    }
    for (int i = 0; i < d.in_channels; ++i) {
      const double* src_plane = x + i * plane;
      double* gsrc_plane = gx ? gx + i * plane : nullptr;
      const std::size_t wbase = (static_cast<std::size_t>(o) * d.in_channels + i) * d.kernel * d.kernel;
      for (int ky = 0; ky < d.kernel; ++ky) {
        const int dy = ky - pad;
        const int y0 = std::max(0, -dy);
        const int y1 = std::min(d.height, d.height - dy);
        for (int kx = 0; kx < d.kernel; ++kx) {
          const int dx = kx - pad;
          const int x0 = std::max(0, -dx);
          const int x1 = std::min(d.width, d.width - dx);
          const double wv = w[wbase + ky * d.kernel + kx];
          double gacc = 0.0;
          for (int y = y0; y < y1; ++y) {
            const double* g = g_plane + static_cast<std::size_t>(y) * d.width;
            const std::size_t srow = static_cast<std::size_t>(y + dy) * d.width + dx;
            const double* src = src_plane + srow;
            for (int xx = x0; xx < x1; ++xx) gacc += g[xx] * src[xx];
            if (gsrc_plane) {
              double* gs = gsrc_plane + srow;
              for (int xx = x0; xx < x1; ++xx) gs[xx] += wv * g[xx];
            }
          }
          if (gw) gw[wbase + ky * d.kernel + kx] += gacc;
        }
      }
    }
  }
}

}  // namespace eqmz::nd::kernels
