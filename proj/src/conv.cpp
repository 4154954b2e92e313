// im2col + GEMM convolution and its transpose. Output rows are processed in
// blocks so the column buffer stays bounded for 240x320 feature maps.

#include <Eigen/Core>
#include <algorithm>
#include <cstdint>
#include <string>

#include "mvfcn/ops.hpp"

namespace mvfcn {
namespace {

constexpr std::size_t kColumnBudget = std::size_t{1} << 21;  // elements per column block

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using PlaneMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstPlaneMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

struct Geometry {
  AxisWindow rows;
  AxisWindow cols;
};

/// Range of output indices whose input index o*S + k - pad falls inside [0, in).
struct ValidRange {
  std::size_t begin;
  std::size_t end;
};

ValidRange valid_outputs(const AxisWindow& a, int k) {
  const std::int64_t off = static_cast<std::int64_t>(k) - a.pad_before;
  const std::int64_t s = a.stride;
  const std::int64_t in = static_cast<std::int64_t>(a.in);
  std::int64_t lo = off >= 0 ? 0 : (-off + s - 1) / s;
  std::int64_t hi = in - 1 - off < 0 ? -1 : (in - 1 - off) / s;
  hi = std::min<std::int64_t>(hi, static_cast<std::int64_t>(a.out) - 1);
  if (hi < lo) return {0, 0};
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi + 1)};
}

std::size_t block_rows(std::size_t col_rows, std::size_t out_w, std::size_t out_h) {
  const std::size_t per_row = std::max<std::size_t>(1, col_rows * out_w);
  return std::clamp<std::size_t>(kColumnBudget / per_row, 1, out_h);
}

/// col[(c*K + kh)*K + kw][(r - r0)*out_w + ox] = in[c][r*S + kh - pt][ox*S + kw - pl]
template <typename T>
void im2col(const T* in, std::size_t channels, const Geometry& g, std::size_t r0, std::size_t r1,
            T* col) {
  const int K = g.rows.kernel;
  const std::size_t ow = g.cols.out;
  const std::size_t ncols = (r1 - r0) * ow;
  const std::size_t plane = g.rows.in * g.cols.in;
  for (std::size_t c = 0; c < channels; ++c) {
    const T* src_plane = in + c * plane;
    for (int kh = 0; kh < K; ++kh) {
      for (int kw = 0; kw < K; ++kw) {
        T* dst = col + ((c * K + kh) * K + kw) * ncols;
        const ValidRange xr = valid_outputs(g.cols, kw);
        for (std::size_t r = r0; r < r1; ++r) {
          T* drow = dst + (r - r0) * ow;
          const std::int64_t iy = static_cast<std::int64_t>(r) * g.rows.stride + kh - g.rows.pad_before;
          if (iy < 0 || iy >= static_cast<std::int64_t>(g.rows.in) || xr.begin == xr.end) {
            std::fill(drow, drow + ow, T(0));
            continue;
          }
          const T* srow = src_plane + static_cast<std::size_t>(iy) * g.cols.in;
          std::fill(drow, drow + xr.begin, T(0));
          std::fill(drow + xr.end, drow + ow, T(0));
          if (g.cols.stride == 1) {
            const std::int64_t ix0 = static_cast<std::int64_t>(xr.begin) + kw - g.cols.pad_before;
            std::copy(srow + ix0, srow + ix0 + (xr.end - xr.begin), drow + xr.begin);
          } else {
            for (std::size_t ox = xr.begin; ox < xr.end; ++ox) {
              drow[ox] = srow[ox * g.cols.stride + kw - g.cols.pad_before];
            }
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatter-adds the column block back into the image.
template <typename T>
void col2im(const T* col, std::size_t channels, const Geometry& g, std::size_t r0, std::size_t r1,
            T* out) {
  const int K = g.rows.kernel;
  const std::size_t ow = g.cols.out;
  const std::size_t ncols = (r1 - r0) * ow;
  const std::size_t plane = g.rows.in * g.cols.in;
  for (std::size_t c = 0; c < channels; ++c) {
    T* dst_plane = out + c * plane;
    for (int kh = 0; kh < K; ++kh) {
      for (int kw = 0; kw < K; ++kw) {
        const T* src = col + ((c * K + kh) * K + kw) * ncols;
        const ValidRange xr = valid_outputs(g.cols, kw);
        if (xr.begin == xr.end) continue;
        for (std::size_t r = r0; r < r1; ++r) {
          const std::int64_t iy = static_cast<std::int64_t>(r) * g.rows.stride + kh - g.rows.pad_before;
          if (iy < 0 || iy >= static_cast<std::int64_t>(g.rows.in)) continue;
          const T* srow = src + (r - r0) * ow;
          T* drow = dst_plane + static_cast<std::size_t>(iy) * g.cols.in;
          for (std::size_t ox = xr.begin; ox < xr.end; ++ox) {
            drow[ox * g.cols.stride + kw - g.cols.pad_before] += srow[ox];
          }
        }
      }
    }
  }
}

void check_weights(const Shape& w, std::size_t out_c, std::size_t in_c, int kernel,
                   const char* what) {
  const auto k = static_cast<std::size_t>(kernel);
  if (w.n != out_c || w.c != in_c || w.h != k || w.w != k) {
    throw ShapeError(std::string(what) + ": weights shaped " + w.str() + ", expected (" +
                     std::to_string(out_c) + "," + std::to_string(in_c) + "," +
                     std::to_string(k) + "," + std::to_string(k) + ")");
  }
}

void check_kernel(int kernel, int stride) {
  if (kernel < 1 || kernel % 2 == 0) {
    throw ShapeError("kernel size must be a positive odd integer, got " + std::to_string(kernel));
  }
  if (stride < 1) throw ShapeError("stride must be positive, got " + std::to_string(stride));
}

Geometry conv_geometry(const Shape& x, const ConvSpec& spec) {
  return {conv_axis(x.h, spec), conv_axis(x.w, spec)};
}

/// Geometry of the convolution that a transpose spec is the adjoint of, given
/// the transpose's input (= that convolution's output) extents.
Geometry transpose_geometry(const Shape& x, const TransposeConvSpec& spec) {
  Geometry g;
  g.rows = {spec.output_h(x.h), x.h, spec.kernel, spec.stride, spec.pad_top};
  g.cols = {spec.output_w(x.w), x.w, spec.kernel, spec.stride, spec.pad_left};
  return g;
}

template <typename T>
void add_bias(BasicTensor<T>& out, std::span<const T> bias) {
  const Shape& s = out.shape();
  if (bias.empty()) return;
  if (bias.size() != s.c) {
    throw ShapeError("bias length " + std::to_string(bias.size()) + " does not match " +
                     std::to_string(s.c) + " output channels");
  }
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      T* p = out.plane(n, c);
      const T b = bias[c];
      for (std::size_t i = 0; i < s.plane(); ++i) p[i] += b;
    }
  }
}

template <typename T>
std::vector<T> sum_planes(const BasicTensor<T>& t) {
  const Shape& s = t.shape();
  std::vector<T> out(s.c, T(0));
  for (std::size_t c = 0; c < s.c; ++c) {
    double acc = 0;
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* p = t.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) acc += p[i];
    }
    out[c] = static_cast<T>(acc);
  }
  return out;
}

/// out(Cout planes) = W(Cout x CinKK) * im2col(in)
template <typename T>
void gemm_conv(const T* in, std::size_t in_c, const Geometry& g, const T* weights,
               std::size_t out_c, T* out) {
  const std::size_t kk = static_cast<std::size_t>(g.rows.kernel) * g.rows.kernel;
  const std::size_t col_rows = in_c * kk;
  const std::size_t out_plane = g.rows.out * g.cols.out;
  const std::size_t step = block_rows(col_rows, g.cols.out, g.rows.out);
  std::vector<T> col(col_rows * step * g.cols.out);
  Eigen::Map<const RowMat<T>> wm(weights, out_c, col_rows);
  for (std::size_t r0 = 0; r0 < g.rows.out; r0 += step) {
    const std::size_t r1 = std::min(r0 + step, g.rows.out);
    const std::size_t ncols = (r1 - r0) * g.cols.out;
    im2col(in, in_c, g, r0, r1, col.data());
    Eigen::Map<const RowMat<T>> cm(col.data(), col_rows, ncols);
    PlaneMap<T> om(out + r0 * g.cols.out, out_c, ncols, Eigen::OuterStride<>(out_plane));
    om.noalias() = wm * cm;
  }
}

/// in(Cin planes) += col2im(W^T * out)
template <typename T>
void gemm_conv_adjoint(const T* out, std::size_t out_c, const Geometry& g, const T* weights,
                       std::size_t in_c, T* in) {
  const std::size_t kk = static_cast<std::size_t>(g.rows.kernel) * g.rows.kernel;
  const std::size_t col_rows = in_c * kk;
  const std::size_t out_plane = g.rows.out * g.cols.out;
  const std::size_t step = block_rows(col_rows, g.cols.out, g.rows.out);
  std::vector<T> col(col_rows * step * g.cols.out);
  Eigen::Map<const RowMat<T>> wm(weights, out_c, col_rows);
  for (std::size_t r0 = 0; r0 < g.rows.out; r0 += step) {
    const std::size_t r1 = std::min(r0 + step, g.rows.out);
    const std::size_t ncols = (r1 - r0) * g.cols.out;
    ConstPlaneMap<T> om(out + r0 * g.cols.out, out_c, ncols, Eigen::OuterStride<>(out_plane));
    Eigen::Map<RowMat<T>> cm(col.data(), col_rows, ncols);
    cm.noalias() = wm.transpose() * om;
    col2im(col.data(), in_c, g, r0, r1, in);
  }
}

/// dW(Cout x CinKK) += out_grad * im2col(in)^T
template <typename T>
void gemm_weight_grad(const T* in, std::size_t in_c, const Geometry& g, const T* d_out,
                      std::size_t out_c, T* d_weights) {
  const std::size_t kk = static_cast<std::size_t>(g.rows.kernel) * g.rows.kernel;
  const std::size_t col_rows = in_c * kk;
  const std::size_t out_plane = g.rows.out * g.cols.out;
  const std::size_t step = block_rows(col_rows, g.cols.out, g.rows.out);
  std::vector<T> col(col_rows * step * g.cols.out);
  Eigen::Map<RowMat<T>> dwm(d_weights, out_c, col_rows);
  for (std::size_t r0 = 0; r0 < g.rows.out; r0 += step) {
    const std::size_t r1 = std::min(r0 + step, g.rows.out);
    const std::size_t ncols = (r1 - r0) * g.cols.out;
    im2col(in, in_c, g, r0, r1, col.data());
    Eigen::Map<const RowMat<T>> cm(col.data(), col_rows, ncols);
    ConstPlaneMap<T> om(d_out + r0 * g.cols.out, out_c, ncols, Eigen::OuterStride<>(out_plane));
    dwm.noalias() += om * cm.transpose();
  }
}

}  // namespace

AxisWindow conv_axis(std::size_t in, const ConvSpec& spec) {
  check_kernel(spec.kernel, spec.stride);
  AxisWindow a;
  a.in = in;
  a.kernel = spec.kernel;
  a.stride = spec.stride;
  const auto s = static_cast<std::size_t>(spec.stride);
  const auto k = static_cast<std::int64_t>(spec.kernel);
  if (spec.padding == PadMode::SameFloor) {
    a.out = (in + s - 1) / s;
    const std::int64_t total =
        std::max<std::int64_t>(static_cast<std::int64_t>((a.out - 1) * s) + k - static_cast<std::int64_t>(in), 0);
    a.pad_before = static_cast<int>(total / 2);
  } else {
    if (spec.pad < 0) throw ShapeError("negative padding " + std::to_string(spec.pad));
    const std::int64_t span = static_cast<std::int64_t>(in) + 2 * spec.pad - k;
    if (span < 0) {
      throw ShapeError("convolution window (K=" + std::to_string(spec.kernel) +
                       ") larger than padded input extent " + std::to_string(in));
    }
    a.out = static_cast<std::size_t>(span / spec.stride + 1);
    a.pad_before = spec.pad;
  }
  if (a.out == 0) throw ShapeError("convolution produces a zero-sized spatial extent");
  return a;
}

int transpose_alpha(std::size_t target, int kernel, int stride, int pad) {
  const std::int64_t v = static_cast<std::int64_t>(target) + 2 * pad - kernel;
  if (v < 0 || stride < 1) {
    throw ShapeError("invalid transpose alpha: (i + 2P - K) = " + std::to_string(v) +
                     " with stride " + std::to_string(stride));
  }
  return static_cast<int>(v % stride);
}

TransposeConvSpec TransposeConvSpec::symmetric(int kernel, int stride, int pad,
                                               std::size_t in_channels, std::size_t out_channels,
                                               std::size_t target_h, std::size_t target_w) {
  check_kernel(kernel, stride);
  TransposeConvSpec t;
  t.kernel = kernel;
  t.stride = stride;
  t.pad_top = t.pad_bottom = t.pad_left = t.pad_right = pad;
  t.alpha_h = transpose_alpha(target_h, kernel, stride, pad);
  t.alpha_w = transpose_alpha(target_w, kernel, stride, pad);
  t.in_channels = in_channels;
  t.out_channels = out_channels;
  return t;
}

TransposeConvSpec TransposeConvSpec::adjoint_of(const ConvSpec& conv, std::size_t in_h,
                                                std::size_t in_w) {
  const AxisWindow rh = conv_axis(in_h, conv);
  const AxisWindow rw = conv_axis(in_w, conv);
  TransposeConvSpec t;
  t.kernel = conv.kernel;
  t.stride = conv.stride;
  auto fill = [&](const AxisWindow& a, int& before, int& after, int& alpha) {
    before = a.pad_before;
    // Trailing padding actually touched by the last window.
    const std::int64_t reach = static_cast<std::int64_t>(a.out - 1) * a.stride + a.kernel - a.pad_before;
    after = static_cast<int>(std::max<std::int64_t>(reach - static_cast<std::int64_t>(a.in), 0));
    const std::int64_t v = static_cast<std::int64_t>(a.in) + before + after - a.kernel;
    alpha = static_cast<int>(v % a.stride);
  };
  fill(rh, t.pad_top, t.pad_bottom, t.alpha_h);
  fill(rw, t.pad_left, t.pad_right, t.alpha_w);
  t.in_channels = conv.out_channels;
  t.out_channels = conv.in_channels;
  return t;
}

namespace {
std::size_t transpose_extent(std::size_t in, int kernel, int stride, int before, int after,
                             int alpha) {
  if (alpha < 0 || alpha >= stride) {
    throw ShapeError("invalid transpose alpha " + std::to_string(alpha) + " for stride " +
                     std::to_string(stride));
  }
  const std::int64_t o = static_cast<std::int64_t>(stride) * (static_cast<std::int64_t>(in) - 1) +
                         alpha + kernel - before - after;
  if (o <= 0) throw ShapeError("transpose convolution produces a non-positive extent");
  return static_cast<std::size_t>(o);
}
}  // namespace

std::size_t TransposeConvSpec::output_h(std::size_t in_h) const {
  return transpose_extent(in_h, kernel, stride, pad_top, pad_bottom, alpha_h);
}

std::size_t TransposeConvSpec::output_w(std::size_t in_w) const {
  return transpose_extent(in_w, kernel, stride, pad_left, pad_right, alpha_w);
}

template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& x, const BasicTensor<T>& weights,
                              std::span<const T> bias, const ConvSpec& spec) {
  const Shape& xs = x.shape();
  if (xs.c != spec.in_channels) {
    throw ShapeError("conv2d: input has " + std::to_string(xs.c) + " channels, spec expects " +
                     std::to_string(spec.in_channels));
  }
  check_weights(weights.shape(), spec.out_channels, spec.in_channels, spec.kernel, "conv2d");
  const Geometry g = conv_geometry(xs, spec);
  BasicTensor<T> out(Shape{xs.n, spec.out_channels, g.rows.out, g.cols.out});
  for (std::size_t n = 0; n < xs.n; ++n) {
    gemm_conv(x.plane(n, 0), xs.c, g, weights.data().data(), spec.out_channels, out.plane(n, 0));
  }
  add_bias(out, bias);
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& x, const BasicTensor<T>& weights,
                             const ConvSpec& spec, const BasicTensor<T>& d_out) {
  const Shape& xs = x.shape();
  check_weights(weights.shape(), spec.out_channels, spec.in_channels, spec.kernel, "conv2d");
  if (xs.c != spec.in_channels) throw ShapeError("conv2d_backward: input channel mismatch");
  const Geometry g = conv_geometry(xs, spec);
  const Shape expect{xs.n, spec.out_channels, g.rows.out, g.cols.out};
  if (d_out.shape() != expect) {
    throw ShapeError("conv2d_backward: d_out shaped " + d_out.shape().str() + ", expected " +
                     expect.str());
  }
  ConvGrads<T> grads{BasicTensor<T>(xs), BasicTensor<T>(weights.shape()), {}};
  for (std::size_t n = 0; n < xs.n; ++n) {
    gemm_weight_grad(x.plane(n, 0), xs.c, g, d_out.plane(n, 0), spec.out_channels,
                     grads.d_weights.data().data());
    gemm_conv_adjoint(d_out.plane(n, 0), spec.out_channels, g, weights.data().data(), xs.c,
                      grads.d_x.plane(n, 0));
  }
  grads.d_bias = sum_planes(d_out);
  return grads;
}

template <typename T>
BasicTensor<T> convT2d_forward(const BasicTensor<T>& x, const BasicTensor<T>& weights,
                               std::span<const T> bias, const TransposeConvSpec& spec) {
  const Shape& xs = x.shape();
  if (xs.c != spec.in_channels) {
    throw ShapeError("convT2d: input has " + std::to_string(xs.c) + " channels, spec expects " +
                     std::to_string(spec.in_channels));
  }
  check_kernel(spec.kernel, spec.stride);
  check_weights(weights.shape(), spec.in_channels, spec.out_channels, spec.kernel, "convT2d");
  const Geometry g = transpose_geometry(xs, spec);
  BasicTensor<T> out(Shape{xs.n, spec.out_channels, g.rows.in, g.cols.in});
  for (std::size_t n = 0; n < xs.n; ++n) {
    gemm_conv_adjoint(x.plane(n, 0), xs.c, g, weights.data().data(), spec.out_channels,
                      out.plane(n, 0));
  }
  add_bias(out, bias);
  return out;
}

template <typename T>
ConvGrads<T> convT2d_backward(const BasicTensor<T>& x, const BasicTensor<T>& weights,
                              const TransposeConvSpec& spec, const BasicTensor<T>& d_out) {
  const Shape& xs = x.shape();
  if (xs.c != spec.in_channels) throw ShapeError("convT2d_backward: input channel mismatch");
  check_weights(weights.shape(), spec.in_channels, spec.out_channels, spec.kernel, "convT2d");
  const Geometry g = transpose_geometry(xs, spec);
  const Shape expect{xs.n, spec.out_channels, g.rows.in, g.cols.in};
  if (d_out.shape() != expect) {
    throw ShapeError("convT2d_backward: d_out shaped " + d_out.shape().str() + ", expected " +
                     expect.str());
  }
  ConvGrads<T> grads{BasicTensor<T>(xs), BasicTensor<T>(weights.shape()), {}};
  for (std::size_t n = 0; n < xs.n; ++n) {
    gemm_conv(d_out.plane(n, 0), spec.out_channels, g, weights.data().data(), xs.c,
              grads.d_x.plane(n, 0));
    gemm_weight_grad(d_out.plane(n, 0), spec.out_channels, g, x.plane(n, 0), xs.c,
                     grads.d_weights.data().data());
  }
  grads.d_bias = sum_planes(d_out);
  return grads;
}

#define MVFCN_INSTANTIATE_CONV(T)                                                              \
  template BasicTensor<T> conv2d_forward(const BasicTensor<T>&, const BasicTensor<T>&,         \
                                         std::span<const T>, const ConvSpec&);                 \
  template ConvGrads<T> conv2d_backward(const BasicTensor<T>&, const BasicTensor<T>&,          \
                                        const ConvSpec&, const BasicTensor<T>&);               \
  template BasicTensor<T> convT2d_forward(const BasicTensor<T>&, const BasicTensor<T>&,        \
                                          std::span<const T>, const TransposeConvSpec&);       \
  template ConvGrads<T> convT2d_backward(const BasicTensor<T>&, const BasicTensor<T>&,         \
                                         const TransposeConvSpec&, const BasicTensor<T>&);

MVFCN_INSTANTIATE_CONV(float)
MVFCN_INSTANTIATE_CONV(double)

#undef MVFCN_INSTANTIATE_CONV

}  // namespace mvfcn
