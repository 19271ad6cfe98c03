#include "apnt/kernels.hpp"

#include <algorithm>
#include <cstring>

#include <Eigen/Core>

#include "apnt/error.hpp"

namespace apnt::kernels {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

constexpr std::size_t kMaxColumnElements = std::size_t{1} << 22;

struct ConvGeometry {
  int cin, cout, k, h, w;
};

ConvGeometry check_conv(const Tensor& x, const Tensor& weight) {
  if (x.rank() != 3) throw StructuralError("conv2d input must be (C, H, W)");
  if (weight.rank() != 4 || weight.dim(2) != weight.dim(3) || weight.dim(2) % 2 == 0)
    throw StructuralError("conv2d weight must be (Cout, Cin, k, k) with odd k");
  if (weight.dim(1) != x.channels())
    throw StructuralError("conv2d channel mismatch: weight " + shape_string(weight.shape()) +
                          " vs input " + shape_string(x.shape()));
  return {x.channels(), weight.dim(0), weight.dim(2), x.height(), x.width()};
}

int rows_per_chunk(const ConvGeometry& g) {
  const std::size_t per_row = static_cast<std::size_t>(g.cin) * g.k * g.k * g.w;
  return static_cast<int>(std::clamp<std::size_t>(kMaxColumnElements / per_row, 1, g.h));
}

// Column matrix for output rows [r0, r0 + rows): shape (Cin*k*k, rows*W).
void im2col(const Tensor& x, const ConvGeometry& g, Padding pad, int r0, int rows, double* col) {
  const int p = g.k / 2;
  const std::size_t n = static_cast<std::size_t>(rows) * g.w;
  for (int c = 0; c < g.cin; ++c)
    for (int ky = 0; ky < g.k; ++ky)
      for (int kx = 0; kx < g.k; ++kx) {
        double* dst = col + ((static_cast<std::size_t>(c) * g.k + ky) * g.k + kx) * n;
        const int ox = kx - p;
        const int lo = std::max(0, -ox);
        const int hi = std::min(g.w, g.w - ox);
        for (int r = 0; r < rows; ++r, dst += g.w) {
          int sy = r0 + r + ky - p;
          if (sy < 0 || sy >= g.h) {
            if (pad == Padding::zero) {
              std::fill_n(dst, g.w, 0.0);
              continue;
            }
            sy = std::clamp(sy, 0, g.h - 1);
          }
          const double* src = x.channel_data(c) + static_cast<std::size_t>(sy) * g.w;
          if (hi > lo) std::memcpy(dst + lo, src + lo + ox, sizeof(double) * (hi - lo));
          const double left = pad == Padding::zero ? 0.0 : src[0];
          const double right = pad == Padding::zero ? 0.0 : src[g.w - 1];
          std::fill_n(dst, std::min(lo, g.w), left);
          if (hi < g.w) std::fill(dst + std::max(hi, 0), dst + g.w, right);
        }
      }
}

void col2im_add(const double* col, const ConvGeometry& g, Padding pad, int r0, int rows,
                Tensor& grad_x) {
  const int p = g.k / 2;
  const std::size_t n = static_cast<std::size_t>(rows) * g.w;
  for (int c = 0; c < g.cin; ++c)
    for (int ky = 0; ky < g.k; ++ky)
      for (int kx = 0; kx < g.k; ++kx) {
        const double* src = col + ((static_cast<std::size_t>(c) * g.k + ky) * g.k + kx) * n;
        const int ox = kx - p;
        for (int r = 0; r < rows; ++r, src += g.w) {
          int sy = r0 + r + ky - p;
          if (sy < 0 || sy >= g.h) {
            if (pad == Padding::zero) continue;
            sy = std::clamp(sy, 0, g.h - 1);
          }
          double* dst = grad_x.channel_data(c) + static_cast<std::size_t>(sy) * g.w;
          if (pad == Padding::zero) {
            const int lo = std::max(0, -ox);
            const int hi = std::min(g.w, g.w - ox);
            for (int xo = lo; xo < hi; ++xo) dst[xo + ox] += src[xo];
          } else {
            for (int xo = 0; xo < g.w; ++xo) dst[std::clamp(xo + ox, 0, g.w - 1)] += src[xo];
          }
        }
      }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor* bias, Padding pad) {
  const ConvGeometry g = check_conv(x, weight);
  if (bias && (bias->rank() != 1 || bias->dim(0) != g.cout))
    throw StructuralError("conv2d bias must be (Cout)");
  Tensor out(g.cout, g.h, g.w);
  const std::size_t kk = static_cast<std::size_t>(g.cin) * g.k * g.k;
  const std::size_t hw = static_cast<std::size_t>(g.h) * g.w;
  ConstMapMat wm(weight.data(), g.cout, static_cast<Eigen::Index>(kk));
  const int chunk = rows_per_chunk(g);
  std::vector<double> col(kk * static_cast<std::size_t>(chunk) * g.w);
  for (int r0 = 0; r0 < g.h; r0 += chunk) {
    const int rows = std::min(chunk, g.h - r0);
    const auto n = static_cast<Eigen::Index>(rows) * g.w;
    im2col(x, g, pad, r0, rows, col.data());
    ConstMapMat cm(col.data(), static_cast<Eigen::Index>(kk), n);
    StridedMap ym(out.data() + static_cast<std::size_t>(r0) * g.w, g.cout, n,
                  Eigen::OuterStride<>(static_cast<Eigen::Index>(hw)));
    ym.noalias() = wm * cm;
  }
  if (bias)
    for (int o = 0; o < g.cout; ++o) {
      double* d = out.channel_data(o);
      const double b = (*bias)[static_cast<std::size_t>(o)];
      for (std::size_t i = 0; i < hw; ++i) d[i] += b;
    }
  return out;
}

void conv2d_backward(const Tensor& x, const Tensor& weight, Padding pad, const Tensor& grad_out,
                     Tensor* grad_x, Tensor* grad_w, Tensor* grad_b) {
  const ConvGeometry g = check_conv(x, weight);
  const std::size_t kk = static_cast<std::size_t>(g.cin) * g.k * g.k;
  const std::size_t hw = static_cast<std::size_t>(g.h) * g.w;
  if (grad_b)
    for (int o = 0; o < g.cout; ++o) {
      const double* d = grad_out.channel_data(o);
      double s = 0.0;
      for (std::size_t i = 0; i < hw; ++i) s += d[i];
      (*grad_b)[static_cast<std::size_t>(o)] += s;
    }
  if (!grad_x && !grad_w) return;
  ConstMapMat wm(weight.data(), g.cout, static_cast<Eigen::Index>(kk));
  const int chunk = rows_per_chunk(g);
  std::vector<double> col(kk * static_cast<std::size_t>(chunk) * g.w);
  RowMat gcol;
  for (int r0 = 0; r0 < g.h; r0 += chunk) {
    const int rows = std::min(chunk, g.h - r0);
    const auto n = static_cast<Eigen::Index>(rows) * g.w;
    ConstStridedMap gy(grad_out.data() + static_cast<std::size_t>(r0) * g.w, g.cout, n,
                       Eigen::OuterStride<>(static_cast<Eigen::Index>(hw)));
    if (grad_w) {
      im2col(x, g, pad, r0, rows, col.data());
      ConstMapMat cm(col.data(), static_cast<Eigen::Index>(kk), n);
      MapMat gw(grad_w->data(), g.cout, static_cast<Eigen::Index>(kk));
      gw.noalias() += gy * cm.transpose();
    }
    if (grad_x) {
      gcol.noalias() = wm.transpose() * gy;
      col2im_add(gcol.data(), g, pad, r0, rows, *grad_x);
    }
  }
}

namespace {
void check_transpose(const Tensor& x, const Tensor& weight) {
  if (x.rank() != 3 || weight.rank() != 4 || weight.dim(0) != x.channels() ||
      weight.dim(2) != weight.dim(3))
    throw StructuralError("conv_transpose: weight " + shape_string(weight.shape()) +
                          " does not fit input " + shape_string(x.shape()));
}
}  // namespace

Tensor conv_transpose(const Tensor& x, const Tensor& weight, const Tensor* bias) {
  check_transpose(x, weight);
  const int cin = x.channels(), cout = weight.dim(1), f = weight.dim(2);
  const int h = x.height(), w = x.width();
  const auto hw = static_cast<Eigen::Index>(x.plane());
  ConstMapMat wm(weight.data(), cin, static_cast<Eigen::Index>(cout) * f * f);
  ConstMapMat xm(x.data(), cin, hw);
  const RowMat m = wm.transpose() * xm;  // (cout*f*f, h*w)
  Tensor out(cout, h * f, w * f);
  for (int o = 0; o < cout; ++o) {
    const double b = bias ? (*bias)[static_cast<std::size_t>(o)] : 0.0;
    for (int i = 0; i < f; ++i)
      for (int j = 0; j < f; ++j) {
        const double* row = m.data() + ((static_cast<Eigen::Index>(o) * f + i) * f + j) * hw;
        for (int y = 0; y < h; ++y)
          for (int xx = 0; xx < w; ++xx) out(o, y * f + i, xx * f + j) = row[y * w + xx] + b;
      }
  }
  return out;
}

void conv_transpose_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_out,
                             Tensor* grad_x, Tensor* grad_w, Tensor* grad_b) {
  check_transpose(x, weight);
  const int cin = x.channels(), cout = weight.dim(1), f = weight.dim(2);
  const int h = x.height(), w = x.width();
  const auto hw = static_cast<Eigen::Index>(x.plane());
  RowMat gm(static_cast<Eigen::Index>(cout) * f * f, hw);
  for (int o = 0; o < cout; ++o)
    for (int i = 0; i < f; ++i)
      for (int j = 0; j < f; ++j) {
        double* row = gm.data() + ((static_cast<Eigen::Index>(o) * f + i) * f + j) * hw;
        for (int y = 0; y < h; ++y)
          for (int xx = 0; xx < w; ++xx) row[y * w + xx] = grad_out(o, y * f + i, xx * f + j);
      }
  if (grad_b)
    for (int o = 0; o < cout; ++o) {
      const double* d = grad_out.channel_data(o);
      double s = 0.0;
      for (std::size_t i = 0; i < grad_out.plane(); ++i) s += d[i];
      (*grad_b)[static_cast<std::size_t>(o)] += s;
    }
  if (grad_w) {
    ConstMapMat xm(x.data(), cin, hw);
    MapMat gw(grad_w->data(), cin, static_cast<Eigen::Index>(cout) * f * f);
    gw.noalias() += xm * gm.transpose();
  }
  if (grad_x) {
    ConstMapMat wm(weight.data(), cin, static_cast<Eigen::Index>(cout) * f * f);
    MapMat gx(grad_x->data(), cin, hw);
    gx.noalias() += wm * gm;
  }
}

Tensor downsample2(const Tensor& x) {
  if (x.rank() != 3 || x.height() % 2 || x.width() % 2)
    throw InputError("downsample2 needs even spatial size, got " + shape_string(x.shape()));
  Tensor out(x.channels(), x.height() / 2, x.width() / 2);
  for (int c = 0; c < x.channels(); ++c)
    for (int y = 0; y < out.height(); ++y)
      for (int xx = 0; xx < out.width(); ++xx)
        out(c, y, xx) = 0.25 * (x(c, 2 * y, 2 * xx) + x(c, 2 * y, 2 * xx + 1) +
                                x(c, 2 * y + 1, 2 * xx) + x(c, 2 * y + 1, 2 * xx + 1));
  return out;
}

void downsample2_backward(const Tensor& grad_out, Tensor& grad_x) {
  for (int c = 0; c < grad_out.channels(); ++c)
    for (int y = 0; y < grad_out.height(); ++y)
      for (int xx = 0; xx < grad_out.width(); ++xx) {
        const double g = 0.25 * grad_out(c, y, xx);
        grad_x(c, 2 * y, 2 * xx) += g;
        grad_x(c, 2 * y, 2 * xx + 1) += g;
        grad_x(c, 2 * y + 1, 2 * xx) += g;
        grad_x(c, 2 * y + 1, 2 * xx + 1) += g;
      }
}

Tensor max_pool2(const Tensor& x) {
  if (x.rank() != 3 || x.height() % 2 || x.width() % 2)
    throw InputError("max_pool2 needs even spatial size, got " + shape_string(x.shape()));
  Tensor out(x.channels(), x.height() / 2, x.width() / 2);
  for (int c = 0; c < x.channels(); ++c)
    for (int y = 0; y < out.height(); ++y)
      for (int xx = 0; xx < out.width(); ++xx)
        out(c, y, xx) = std::max({x(c, 2 * y, 2 * xx), x(c, 2 * y, 2 * xx + 1),
                                  x(c, 2 * y + 1, 2 * xx), x(c, 2 * y + 1, 2 * xx + 1)});
  return out;
}

}  // namespace apnt::kernels
