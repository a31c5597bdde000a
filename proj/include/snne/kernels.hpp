#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cstring>
#include <tuple>
#include <utility>

#include "snne/errors.hpp"
#include "snne/tensor.hpp"

// Differentiable spatial kernels: cross-correlation conv2d, its exact
// transpose (deconv2d), 2x2 max pooling and channel concatenation, each with
// the matching backward. Convolutions run as im2col + Eigen GEMM, chunked
// over output rows so the scratch buffer stays bounded at any resolution.

namespace snne {

template <typename Scalar>
using RowMat =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowMatMap = Eigen::Map<RowMat<Scalar>>;
template <typename Scalar>
using ConstRowMatMap = Eigen::Map<const RowMat<Scalar>>;
template <typename Scalar>
using StridedRowMatMap =
    Eigen::Map<RowMat<Scalar>, Eigen::Unaligned, Eigen::OuterStride<>>;
template <typename Scalar>
using ConstStridedRowMatMap =
    Eigen::Map<const RowMat<Scalar>, Eigen::Unaligned, Eigen::OuterStride<>>;

struct ConvGeom {
  int in_c = 0, in_h = 0, in_w = 0;
  int out_c = 0, out_h = 0, out_w = 0;
  int k = 1, stride = 1, pad = 0;
};

inline int conv_output_dim(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

inline int deconv_output_dim(int in, int k, int stride, int pad) {
  return (in - 1) * stride + k - 2 * pad;
}

template <typename Scalar>
ConvGeom conv_geometry(const Tensor4<Scalar>& input,
                       const ConvParams<Scalar>& params) {
  params.validate();
  if (input.channels != params.in_channels()) {
    throw ShapeError("conv2d: input " + input.shape_string() +
                     " has channels " + std::to_string(input.channels) +
                     " but weight " + params.weight.shape_string() +
                     " expects in_channels " +
                     std::to_string(params.in_channels()));
  }
  ConvGeom g;
  g.in_c = input.channels;
  g.in_h = input.height;
  g.in_w = input.width;
  g.out_c = params.out_channels();
  g.k = params.kernel();
  g.stride = params.stride;
  g.pad = params.padding;
  g.out_h = conv_output_dim(input.height, g.k, g.stride, g.pad);
  g.out_w = conv_output_dim(input.width, g.k, g.stride, g.pad);
  if (g.out_h < 1 || g.out_w < 1) {
    throw ShapeError("conv2d: input " + input.shape_string() +
                     " too small for kernel " + std::to_string(g.k) +
                     " stride " + std::to_string(g.stride) + " padding " +
                     std::to_string(g.pad));
  }
  return g;
}

template <typename Scalar>
ConvGeom deconv_geometry(const Tensor4<Scalar>& input,
                         const ConvParams<Scalar>& params) {
  params.validate();
  if (input.channels != params.in_channels()) {
    throw ShapeError("deconv2d: input " + input.shape_string() +
                     " has channels " + std::to_string(input.channels) +
                     " but weight " + params.weight.shape_string() +
                     " expects in_channels " +
                     std::to_string(params.in_channels()));
  }
  ConvGeom g;
  g.in_c = input.channels;
  g.in_h = input.height;
  g.in_w = input.width;
  g.out_c = params.out_channels();
  g.k = params.kernel();
  g.stride = params.stride;
  g.pad = params.padding;
  g.out_h = deconv_output_dim(input.height, g.k, g.stride, g.pad);
  g.out_w = deconv_output_dim(input.width, g.k, g.stride, g.pad);
  if (g.out_h < 1 || g.out_w < 1) {
    throw ShapeError("deconv2d: input " + input.shape_string() +
                     " yields nonpositive output for kernel " +
                     std::to_string(g.k) + " stride " +
                     std::to_string(g.stride) + " padding " +
                     std::to_string(g.pad));
  }
  return g;
}

namespace detail {

// Scratch budget for one im2col chunk (elements, per thread).
constexpr std::size_t kChunkElements = std::size_t(1) << 23;

inline int rows_per_chunk(int patch_len, int grid_w, int grid_h) {
  std::size_t per_row = static_cast<std::size_t>(patch_len) * grid_w;
  int rows = per_row == 0 ? grid_h
                          : static_cast<int>(std::max<std::size_t>(
                                1, kChunkElements / per_row));
  return std::min(rows, grid_h);
}

// Gathers patches of `src` (sample n, channels src_c) into `cols`, one column
// per grid point of rows [gy0, gy1). Grid point (gy, gx) reads
// src(c, gy*stride + ky - pad, gx*stride + kx - pad), zero outside.
template <typename Scalar>
void im2col_rows(const Tensor4<Scalar>& src, int n, int k, int stride, int pad,
                 int grid_w, int gy0, int gy1, RowMat<Scalar>& cols) {
  const int src_h = src.height;
  const int src_w = src.width;
  const int ncols = (gy1 - gy0) * grid_w;
  cols.setZero(src.channels * k * k, ncols);
  for (int c = 0; c < src.channels; ++c) {
    const Scalar* plane = src.plane(n, c);
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const int r = (c * k + ky) * k + kx;
        Scalar* row = cols.data() + static_cast<std::size_t>(r) * ncols;
        for (int gy = gy0; gy < gy1; ++gy) {
          const int y = gy * stride + ky - pad;
          if (y < 0 || y >= src_h) continue;
          Scalar* dst = row + static_cast<std::size_t>(gy - gy0) * grid_w;
          const Scalar* src_row = plane + static_cast<std::size_t>(y) * src_w;
          if (stride == 1) {
            const int gx_lo = std::max(0, pad - kx);
            const int gx_hi = std::min(grid_w, src_w + pad - kx);
            if (gx_lo < gx_hi) {
              std::memcpy(dst + gx_lo, src_row + gx_lo + kx - pad,
                          static_cast<std::size_t>(gx_hi - gx_lo) *
                              sizeof(Scalar));
            }
          } else {
            for (int gx = 0; gx < grid_w; ++gx) {
              const int x = gx * stride + kx - pad;
              if (x >= 0 && x < src_w) dst[gx] = src_row[x];
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col_rows: scatter-adds the columns back into `dst`.
template <typename Scalar>
void col2im_rows(const RowMat<Scalar>& cols, int n, int k, int stride, int pad,
                 int grid_w, int gy0, int gy1, Tensor4<Scalar>& dst) {
  const int dst_h = dst.height;
  const int dst_w = dst.width;
  const int ncols = (gy1 - gy0) * grid_w;
  for (int c = 0; c < dst.channels; ++c) {
    Scalar* plane = dst.plane(n, c);
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const int r = (c * k + ky) * k + kx;
        const Scalar* row = cols.data() + static_cast<std::size_t>(r) * ncols;
        for (int gy = gy0; gy < gy1; ++gy) {
          const int y = gy * stride + ky - pad;
          if (y < 0 || y >= dst_h) continue;
          const Scalar* src = row + static_cast<std::size_t>(gy - gy0) * grid_w;
          Scalar* dst_row = plane + static_cast<std::size_t>(y) * dst_w;
          for (int gx = 0; gx < grid_w; ++gx) {
            const int x = gx * stride + kx - pad;
            if (x >= 0 && x < dst_w) dst_row[x] += src[gx];
          }
        }
      }
    }
  }
}

// Deconv weights (out_c, in_c, k, k) repacked as a (out_c*k*k x in_c) matrix.
template <typename Scalar>
RowMat<Scalar> deconv_weight_matrix(const ConvParams<Scalar>& params) {
  const int k = params.kernel();
  RowMat<Scalar> m(params.out_channels() * k * k, params.in_channels());
  for (int oc = 0; oc < params.out_channels(); ++oc) {
    for (int ic = 0; ic < params.in_channels(); ++ic) {
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          m((oc * k + ky) * k + kx, ic) = params.weight(oc, ic, ky, kx);
        }
      }
    }
  }
  return m;
}

}  // namespace detail

// Standard cross-correlation. Output spatial size is
// (in + 2*padding - k)/stride + 1 per axis.
template <typename Scalar>
Tensor4<Scalar> conv2d_forward(const Tensor4<Scalar>& input,
                               const ConvParams<Scalar>& params) {
  const ConvGeom g = conv_geometry(input, params);
  Tensor4<Scalar> output(input.batch, g.out_c, g.out_h, g.out_w);
  const int patch_len = g.in_c * g.k * g.k;
  const int chunk_rows = detail::rows_per_chunk(patch_len, g.out_w, g.out_h);
  ConstRowMatMap<Scalar> wmat(params.weight.data.data(), g.out_c, patch_len);
  RowMat<Scalar> cols;
  const std::size_t plane_stride =
      static_cast<std::size_t>(g.out_h) * g.out_w;
  for (int n = 0; n < input.batch; ++n) {
    for (int gy0 = 0; gy0 < g.out_h; gy0 += chunk_rows) {
      const int gy1 = std::min(g.out_h, gy0 + chunk_rows);
      detail::im2col_rows(input, n, g.k, g.stride, g.pad, g.out_w, gy0, gy1,
                          cols);
      StridedRowMatMap<Scalar> out_chunk(
          output.plane(n, 0) + static_cast<std::size_t>(gy0) * g.out_w,
          g.out_c, (gy1 - gy0) * g.out_w,
          Eigen::OuterStride<>(static_cast<Eigen::Index>(plane_stride)));
      out_chunk.noalias() = wmat * cols;
      for (int oc = 0; oc < g.out_c; ++oc) {
        out_chunk.row(oc).array() += params.bias[oc];
      }
    }
  }
  return output;
}

template <typename Scalar>
struct ConvGrads {
  Tensor4<Scalar> input;
  Tensor4<Scalar> weight;
  std::vector<Scalar> bias;
};

template <typename Scalar>
ConvGrads<Scalar> conv2d_backward(const Tensor4<Scalar>& grad_out,
                                  const Tensor4<Scalar>& saved_input,
                                  const ConvParams<Scalar>& params,
                                  bool need_grad_input = true) {
  const ConvGeom g = conv_geometry(saved_input, params);
  if (grad_out.batch != saved_input.batch || grad_out.channels != g.out_c ||
      grad_out.height != g.out_h || grad_out.width != g.out_w) {
    throw ShapeError("conv2d_backward: grad_out " + grad_out.shape_string() +
                     " does not match forward output " +
                     Tensor4<Scalar>::shape_to_string(saved_input.batch,
                                                      g.out_c, g.out_h,
                                                      g.out_w));
  }
  ConvGrads<Scalar> grads;
  grads.weight = Tensor4<Scalar>::zeros_like(params.weight);
  grads.bias.assign(params.bias.size(), Scalar(0));
  if (need_grad_input) grads.input = Tensor4<Scalar>::zeros_like(saved_input);

  const int patch_len = g.in_c * g.k * g.k;
  const int chunk_rows = detail::rows_per_chunk(patch_len, g.out_w, g.out_h);
  ConstRowMatMap<Scalar> wmat(params.weight.data.data(), g.out_c, patch_len);
  RowMatMap<Scalar> gw(grads.weight.data.data(), g.out_c, patch_len);
  RowMat<Scalar> cols, gcols;
  const std::size_t plane_stride =
      static_cast<std::size_t>(g.out_h) * g.out_w;
  for (int n = 0; n < saved_input.batch; ++n) {
    for (int gy0 = 0; gy0 < g.out_h; gy0 += chunk_rows) {
      const int gy1 = std::min(g.out_h, gy0 + chunk_rows);
      detail::im2col_rows(saved_input, n, g.k, g.stride, g.pad, g.out_w, gy0,
                          gy1, cols);
      ConstStridedRowMatMap<Scalar> go_chunk(
          grad_out.plane(n, 0) + static_cast<std::size_t>(gy0) * g.out_w,
          g.out_c, (gy1 - gy0) * g.out_w,
          Eigen::OuterStride<>(static_cast<Eigen::Index>(plane_stride)));
      gw.noalias() += go_chunk * cols.transpose();
      for (int oc = 0; oc < g.out_c; ++oc) {
        grads.bias[oc] += go_chunk.row(oc).sum();
      }
      if (need_grad_input) {
        gcols.noalias() = wmat.transpose() * go_chunk;
        detail::col2im_rows(gcols, n, g.k, g.stride, g.pad, g.out_w, gy0, gy1,
                            grads.input);
      }
    }
  }
  return grads;
}

// Transposed convolution: the exact adjoint of conv2d with the same (k,
// stride, padding) and channel-swapped weights. Output spatial size is
// (in - 1)*stride + k - 2*padding per axis.
template <typename Scalar>
Tensor4<Scalar> deconv2d_forward(const Tensor4<Scalar>& input,
                                 const ConvParams<Scalar>& params) {
  const ConvGeom g = deconv_geometry(input, params);
  Tensor4<Scalar> output(input.batch, g.out_c, g.out_h, g.out_w);
  for (int n = 0; n < input.batch; ++n) {
    for (int oc = 0; oc < g.out_c; ++oc) {
      Scalar* plane = output.plane(n, oc);
      std::fill(plane,
                plane + static_cast<std::size_t>(g.out_h) * g.out_w,
                params.bias[oc]);
    }
  }
  const RowMat<Scalar> wmat = detail::deconv_weight_matrix(params);
  const int patch_len = g.out_c * g.k * g.k;
  const int chunk_rows = detail::rows_per_chunk(patch_len, g.in_w, g.in_h);
  RowMat<Scalar> cols;
  const std::size_t in_plane = static_cast<std::size_t>(g.in_h) * g.in_w;
  for (int n = 0; n < input.batch; ++n) {
    for (int gy0 = 0; gy0 < g.in_h; gy0 += chunk_rows) {
      const int gy1 = std::min(g.in_h, gy0 + chunk_rows);
      ConstStridedRowMatMap<Scalar> x_chunk(
          input.plane(n, 0) + static_cast<std::size_t>(gy0) * g.in_w, g.in_c,
          (gy1 - gy0) * g.in_w,
          Eigen::OuterStride<>(static_cast<Eigen::Index>(in_plane)));
      cols.noalias() = wmat * x_chunk;
      detail::col2im_rows(cols, n, g.k, g.stride, g.pad, g.in_w, gy0, gy1,
                          output);
    }
  }
  return output;
}

template <typename Scalar>
ConvGrads<Scalar> deconv2d_backward(const Tensor4<Scalar>& grad_out,
                                    const Tensor4<Scalar>& saved_input,
                                    const ConvParams<Scalar>& params,
                                    bool need_grad_input = true) {
  const ConvGeom g = deconv_geometry(saved_input, params);
  if (grad_out.batch != saved_input.batch || grad_out.channels != g.out_c ||
      grad_out.height != g.out_h || grad_out.width != g.out_w) {
    throw ShapeError("deconv2d_backward: grad_out " + grad_out.shape_string() +
                     " does not match forward output " +
                     Tensor4<Scalar>::shape_to_string(saved_input.batch,
                                                      g.out_c, g.out_h,
                                                      g.out_w));
  }
  ConvGrads<Scalar> grads;
  grads.weight = Tensor4<Scalar>::zeros_like(params.weight);
  grads.bias.assign(params.bias.size(), Scalar(0));
  if (need_grad_input) grads.input = Tensor4<Scalar>::zeros_like(saved_input);

  for (int n = 0; n < grad_out.batch; ++n) {
    for (int oc = 0; oc < g.out_c; ++oc) {
      const Scalar* plane = grad_out.plane(n, oc);
      Scalar acc(0);
      for (std::size_t i = 0;
           i < static_cast<std::size_t>(g.out_h) * g.out_w; ++i) {
        acc += plane[i];
      }
      grads.bias[oc] += acc;
    }
  }

  const int patch_len = g.out_c * g.k * g.k;
  const int chunk_rows = detail::rows_per_chunk(patch_len, g.in_w, g.in_h);
  const RowMat<Scalar> wmat = detail::deconv_weight_matrix(params);
  RowMat<Scalar> gwmat = RowMat<Scalar>::Zero(patch_len, g.in_c);
  RowMat<Scalar> gcols;
  const std::size_t in_plane = static_cast<std::size_t>(g.in_h) * g.in_w;
  for (int n = 0; n < grad_out.batch; ++n) {
    for (int gy0 = 0; gy0 < g.in_h; gy0 += chunk_rows) {
      const int gy1 = std::min(g.in_h, gy0 + chunk_rows);
      detail::im2col_rows(grad_out, n, g.k, g.stride, g.pad, g.in_w, gy0, gy1,
                          gcols);
      ConstStridedRowMatMap<Scalar> x_chunk(
          saved_input.plane(n, 0) + static_cast<std::size_t>(gy0) * g.in_w,
          g.in_c, (gy1 - gy0) * g.in_w,
          Eigen::OuterStride<>(static_cast<Eigen::Index>(in_plane)));
      gwmat.noalias() += gcols * x_chunk.transpose();
      if (need_grad_input) {
        StridedRowMatMap<Scalar> gx_chunk(
            grads.input.plane(n, 0) + static_cast<std::size_t>(gy0) * g.in_w,
            g.in_c, (gy1 - gy0) * g.in_w,
            Eigen::OuterStride<>(static_cast<Eigen::Index>(in_plane)));
        gx_chunk.noalias() = wmat.transpose() * gcols;
      }
    }
  }
  for (int oc = 0; oc < g.out_c; ++oc) {
    for (int ic = 0; ic < g.in_c; ++ic) {
      for (int ky = 0; ky < g.k; ++ky) {
        for (int kx = 0; kx < g.k; ++kx) {
          grads.weight(oc, ic, ky, kx) = gwmat((oc * g.k + ky) * g.k + kx, ic);
        }
      }
    }
  }
  return grads;
}

// 2x2/stride-2 max pooling. Ties break to the first element in row-major
// order so backward routing is deterministic.
template <typename Scalar>
std::pair<Tensor4<Scalar>, PoolIndices> maxpool2x2(
    const Tensor4<Scalar>& input) {
  if (input.height % 2 != 0 || input.width % 2 != 0) {
    throw PreconditionError("maxpool2x2: spatial dims must be even, got " +
                            input.shape_string());
  }
  const int oh = input.height / 2;
  const int ow = input.width / 2;
  Tensor4<Scalar> output(input.batch, input.channels, oh, ow);
  PoolIndices indices;
  indices.out_height = oh;
  indices.out_width = ow;
  indices.winner.resize(output.size());
  std::size_t o = 0;
  for (int n = 0; n < input.batch; ++n) {
    for (int c = 0; c < input.channels; ++c) {
      const Scalar* plane = input.plane(n, c);
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox, ++o) {
          Scalar best = plane[(2 * oy) * input.width + 2 * ox];
          int best_at = (2 * oy) * input.width + 2 * ox;
          for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
              const int at = (2 * oy + dy) * input.width + (2 * ox + dx);
              if (plane[at] > best) {
                best = plane[at];
                best_at = at;
              }
            }
          }
          output.data[o] = best;
          indices.winner[o] = best_at;
        }
      }
    }
  }
  return {std::move(output), std::move(indices)};
}

template <typename Scalar>
Tensor4<Scalar> maxpool2x2_backward(const Tensor4<Scalar>& grad_out,
                                    const PoolIndices& indices, int in_height,
                                    int in_width) {
  if (grad_out.height != indices.out_height ||
      grad_out.width != indices.out_width ||
      grad_out.size() != indices.winner.size()) {
    throw ShapeError("maxpool2x2_backward: grad_out " +
                     grad_out.shape_string() + " does not match indices for " +
                     std::to_string(indices.out_height) + "x" +
                     std::to_string(indices.out_width) + " output");
  }
  Tensor4<Scalar> grad_in(grad_out.batch, grad_out.channels, in_height,
                          in_width);
  std::size_t o = 0;
  for (int n = 0; n < grad_out.batch; ++n) {
    for (int c = 0; c < grad_out.channels; ++c) {
      Scalar* plane = grad_in.plane(n, c);
      const std::size_t count =
          static_cast<std::size_t>(grad_out.height) * grad_out.width;
      for (std::size_t i = 0; i < count; ++i, ++o) {
        plane[indices.winner[o]] += grad_out.data[o];
      }
    }
  }
  return grad_in;
}

// Channel concatenation, `a` first.
template <typename Scalar>
Tensor4<Scalar> concat_channels(const Tensor4<Scalar>& a,
                                const Tensor4<Scalar>& b) {
  if (a.batch != b.batch || a.height != b.height || a.width != b.width) {
    throw ShapeError("concat_channels: incompatible shapes " +
                     a.shape_string() + " vs " + b.shape_string());
  }
  Tensor4<Scalar> out(a.batch, a.channels + b.channels, a.height, a.width);
  const std::size_t a_sample =
      static_cast<std::size_t>(a.channels) * a.height * a.width;
  const std::size_t b_sample =
      static_cast<std::size_t>(b.channels) * b.height * b.width;
  for (int n = 0; n < a.batch; ++n) {
    std::memcpy(out.plane(n, 0), a.plane(n, 0), a_sample * sizeof(Scalar));
    std::memcpy(out.plane(n, a.channels), b.plane(n, 0),
                b_sample * sizeof(Scalar));
  }
  return out;
}

// Backward of concat_channels: splits the cotangent back into the two
// channel ranges unchanged.
template <typename Scalar>
std::pair<Tensor4<Scalar>, Tensor4<Scalar>> split_channels(
    const Tensor4<Scalar>& grad, int left_channels) {
  if (left_channels < 1 || left_channels >= grad.channels) {
    throw ShapeError("split_channels: cannot split " + grad.shape_string() +
                     " at channel " + std::to_string(left_channels));
  }
  Tensor4<Scalar> ga(grad.batch, left_channels, grad.height, grad.width);
  Tensor4<Scalar> gb(grad.batch, grad.channels - left_channels, grad.height,
                     grad.width);
  const std::size_t a_sample =
      static_cast<std::size_t>(ga.channels) * ga.height * ga.width;
  const std::size_t b_sample =
      static_cast<std::size_t>(gb.channels) * gb.height * gb.width;
  for (int n = 0; n < grad.batch; ++n) {
    std::memcpy(ga.plane(n, 0), grad.plane(n, 0), a_sample * sizeof(Scalar));
    std::memcpy(gb.plane(n, 0), grad.plane(n, left_channels),
                b_sample * sizeof(Scalar));
  }
  return {std::move(ga), std::move(gb)};
}

}  // namespace snne
