#pragma once

#include <Eigen/Core>
#include <algorithm>

#include "st/tensor.hpp"

namespace st::detail {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

// im2col for a 3x3 kernel, stride 1, pad 1: (C*9) x (h*w)
inline void im2col3(const double* xd, int c, int h, int w, MatRM& col) {
  col.setZero(c * 9, h * w);
  for (int ch = 0; ch < c; ++ch) {
    const double* plane = xd + size_t(ch) * h * w;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        double* row = col.row(ch * 9 + ky * 3 + kx).data();
        for (int y = 0; y < h; ++y) {
          int sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          const double* src = plane + size_t(sy) * w;
          double* dst = row + size_t(y) * w;
          int x0 = std::max(0, 1 - kx);
          int x1 = std::min(w, w + 1 - kx);
          for (int xx = x0; xx < x1; ++xx) dst[xx] = src[xx + kx - 1];
        }
      }
    }
  }
}

// transpose of im2col3: scatter-adds column gradients back onto the image
inline void col2im3(const MatRM& dcol, int c, int h, int w, double* xd) {
  for (int ch = 0; ch < c; ++ch) {
    double* plane = xd + size_t(ch) * h * w;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const double* row = dcol.row(ch * 9 + ky * 3 + kx).data();
        for (int y = 0; y < h; ++y) {
          int sy = y + ky - 1;
          if (sy < 0 || sy >= h) continue;
          double* dst = plane + size_t(sy) * w;
          const double* src = row + size_t(y) * w;
          int x0 = std::max(0, 1 - kx);
          int x1 = std::min(w, w + 1 - kx);
          for (int xx = x0; xx < x1; ++xx) dst[xx + kx - 1] += src[xx];
        }
      }
    }
  }
}

}  // namespace st::detail
