#ifndef PESTDET_KERNELS_HPP
#define PESTDET_KERNELS_HPP

// Forward and backward kernels for the layer set used by the three
// classifier architectures. All functions are pure; tensors are [C,H,W]
// channels-first unless stated otherwise.

#include <algorithm>
#include <cmath>
#include <string>

#include "pestdet/tensor.hpp"

namespace pestdet {

enum class Padding { valid, same };
enum class PoolMode { avg, max };
enum class ActivationKind { relu, relu6, softmax };

struct ConvSpec {
  int kernel_h = 3;
  int kernel_w = 3;
  int stride = 1;
  Padding padding = Padding::valid;
  int groups = 1;

  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

/// Output extent along one spatial axis.
/// same: ceil(in / stride). valid: floor((in - kernel) / stride) + 1.
inline int conv_output_size(int in, int kernel, int stride, Padding padding) {
  if (padding == Padding::same) return (in + stride - 1) / stride;
  return (in - kernel) / stride + 1;
}

/// Zero rows/cols added before the input on one axis. The total pad is split
/// floor on the leading side, ceil on the trailing side.
inline int conv_pad_before(int in, int kernel, int stride, Padding padding) {
  if (padding == Padding::valid) return 0;
  const int out = conv_output_size(in, kernel, stride, padding);
  const int total = std::max((out - 1) * stride + kernel - in, 0);
  return total / 2;
}

namespace detail {

struct ConvGeometry {
  int channels, height, width;  // per group input
  int kh, kw, stride;
  int pad_top, pad_left;
  int out_h, out_w;
};

inline ConvGeometry conv_geometry(const Shape& in, const ConvSpec& spec, int channels_per_group) {
  ConvGeometry g{};
  g.channels = channels_per_group;
  g.height = in[1];
  g.width = in[2];
  g.kh = spec.kernel_h;
  g.kw = spec.kernel_w;
  g.stride = spec.stride;
  g.out_h = conv_output_size(g.height, g.kh, g.stride, spec.padding);
  g.out_w = conv_output_size(g.width, g.kw, g.stride, spec.padding);
  g.pad_top = conv_pad_before(g.height, g.kh, g.stride, spec.padding);
  g.pad_left = conv_pad_before(g.width, g.kw, g.stride, spec.padding);
  return g;
}

template <typename Scalar>
void im2col(const Scalar* in, const ConvGeometry& g, RowMat<Scalar>& col) {
  const int cols = g.out_h * g.out_w;
  col.resize(static_cast<Eigen::Index>(g.channels) * g.kh * g.kw, cols);
  for (int c = 0; c < g.channels; ++c) {
    const Scalar* plane = in + static_cast<std::ptrdiff_t>(c) * g.height * g.width;
    for (int ky = 0; ky < g.kh; ++ky) {
      for (int kx = 0; kx < g.kw; ++kx) {
        Scalar* row = col.row((c * g.kh + ky) * g.kw + kx).data();
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.pad_top + ky;
          Scalar* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= g.height) {
            std::fill(dst, dst + g.out_w, Scalar(0));
            continue;
          }
          const Scalar* src = plane + static_cast<std::ptrdiff_t>(iy) * g.width;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.pad_left + kx;
            dst[ox] = (ix >= 0 && ix < g.width) ? src[ix] : Scalar(0);
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im_add(const RowMat<Scalar>& col, const ConvGeometry& g, Scalar* out) {
  for (int c = 0; c < g.channels; ++c) {
    Scalar* plane = out + static_cast<std::ptrdiff_t>(c) * g.height * g.width;
    for (int ky = 0; ky < g.kh; ++ky) {
      for (int kx = 0; kx < g.kw; ++kx) {
        const Scalar* row = col.row((c * g.kh + ky) * g.kw + kx).data();
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.pad_top + ky;
          if (iy < 0 || iy >= g.height) continue;
          Scalar* dst = plane + static_cast<std::ptrdiff_t>(iy) * g.width;
          const Scalar* src = row + oy * g.out_w;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.pad_left + kx;
            if (ix >= 0 && ix < g.width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <typename Scalar>
void check_conv_shapes(const Tensor<Scalar>& input, const Tensor<Scalar>& weights,
                       const Tensor<Scalar>& bias, const ConvSpec& spec) {
  require_rank(input, 3, "conv2d input");
  require_rank(weights, 4, "conv2d weights");
  if (spec.kernel_h <= 0 || spec.kernel_w <= 0 || spec.stride <= 0 || spec.groups <= 0) {
    throw DimensionError("conv2d: kernel, stride and groups must be positive");
  }
  const int c_in = input.dim(0);
  const int c_out = weights.dim(0);
  if (c_in % spec.groups != 0 || c_out % spec.groups != 0) {
    throw DimensionError("conv2d: channels " + std::to_string(c_in) + "->" + std::to_string(c_out) +
                         " not divisible by groups " + std::to_string(spec.groups));
  }
  if (weights.dim(1) != c_in / spec.groups || weights.dim(2) != spec.kernel_h ||
      weights.dim(3) != spec.kernel_w) {
    throw DimensionError("conv2d: weights " + shape_string(weights.shape()) +
                         " do not match input " + shape_string(input.shape()) + " with kernel " +
                         std::to_string(spec.kernel_h) + "x" + std::to_string(spec.kernel_w) +
                         " groups " + std::to_string(spec.groups));
  }
  if (!bias.empty() && (bias.rank() != 1 || bias.dim(0) != c_out)) {
    throw DimensionError("conv2d: bias " + shape_string(bias.shape()) + " does not match " +
                         std::to_string(c_out) + " output channels");
  }
  if (spec.padding == Padding::valid &&
      (input.dim(1) < spec.kernel_h || input.dim(2) < spec.kernel_w)) {
    throw DimensionError("conv2d: input " + shape_string(input.shape()) +
                         " smaller than kernel for valid padding");
  }
}

inline bool is_depthwise(const ConvSpec& spec, int c_in, int c_out) {
  return spec.groups > 1 && spec.groups == c_in && c_out == c_in;
}

// One filter per channel; the per-group GEMM path is dominated by call
// overhead at this size.
template <typename Scalar>
void depthwise_forward(const Scalar* in, const Scalar* w, const ConvGeometry& g, int channels,
                       Scalar* out) {
  const int k = g.kh * g.kw;
  for (int c = 0; c < channels; ++c) {
    const Scalar* plane = in + static_cast<std::ptrdiff_t>(c) * g.height * g.width;
    const Scalar* f = w + static_cast<std::ptrdiff_t>(c) * k;
    Scalar* o = out + static_cast<std::ptrdiff_t>(c) * g.out_h * g.out_w;
    for (int oy = 0; oy < g.out_h; ++oy) {
      for (int ox = 0; ox < g.out_w; ++ox) {
        Scalar acc(0);
        for (int ky = 0; ky < g.kh; ++ky) {
          const int iy = oy * g.stride - g.pad_top + ky;
          if (iy < 0 || iy >= g.height) continue;
          for (int kx = 0; kx < g.kw; ++kx) {
            const int ix = ox * g.stride - g.pad_left + kx;
            if (ix < 0 || ix >= g.width) continue;
            acc += plane[iy * g.width + ix] * f[ky * g.kw + kx];
          }
        }
        o[oy * g.out_w + ox] = acc;
      }
    }
  }
}

template <typename Scalar>
void depthwise_backward(const Scalar* in, const Scalar* w, const Scalar* dy, const ConvGeometry& g,
                        int channels, Scalar* dx, Scalar* dw) {
  const int k = g.kh * g.kw;
  for (int c = 0; c < channels; ++c) {
    const Scalar* plane = in + static_cast<std::ptrdiff_t>(c) * g.height * g.width;
    const Scalar* f = w + static_cast<std::ptrdiff_t>(c) * k;
    const Scalar* up = dy + static_cast<std::ptrdiff_t>(c) * g.out_h * g.out_w;
    Scalar* dplane = dx + static_cast<std::ptrdiff_t>(c) * g.height * g.width;
    Scalar* df = dw ? dw + static_cast<std::ptrdiff_t>(c) * k : nullptr;
    for (int oy = 0; oy < g.out_h; ++oy) {
      for (int ox = 0; ox < g.out_w; ++ox) {
        const Scalar u = up[oy * g.out_w + ox];
        for (int ky = 0; ky < g.kh; ++ky) {
          const int iy = oy * g.stride - g.pad_top + ky;
          if (iy < 0 || iy >= g.height) continue;
          for (int kx = 0; kx < g.kw; ++kx) {
            const int ix = ox * g.stride - g.pad_left + kx;
            if (ix < 0 || ix >= g.width) continue;
            dplane[iy * g.width + ix] += u * f[ky * g.kw + kx];
            if (df) df[ky * g.kw + kx] += u * plane[iy * g.width + ix];
          }
        }
      }
    }
  }
}

}  // namespace detail

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& weights,
                      const Tensor<Scalar>& bias, const ConvSpec& spec) {
  detail::check_conv_shapes(input, weights, bias, spec);
  const int c_out = weights.dim(0);
  const int cin_g = input.dim(0) / spec.groups;
  const int cout_g = c_out / spec.groups;
  const auto geo = detail::conv_geometry(input.shape(), spec, cin_g);
  const Eigen::Index k = static_cast<Eigen::Index>(cin_g) * geo.kh * geo.kw;
  const Eigen::Index hw = static_cast<Eigen::Index>(geo.out_h) * geo.out_w;

  Tensor<Scalar> out({c_out, geo.out_h, geo.out_w});
  RowMat<Scalar> col;
  const Eigen::Index plane = static_cast<Eigen::Index>(input.dim(1)) * input.dim(2);
  if (detail::is_depthwise(spec, input.dim(0), c_out)) {
    detail::depthwise_forward(input.data(), weights.data(), geo, c_out, out.data());
  }
  for (int g = 0; g < spec.groups && !detail::is_depthwise(spec, input.dim(0), c_out); ++g) {
    detail::im2col(input.data() + g * cin_g * plane, geo, col);
    ConstRowMatMap<Scalar> w(weights.data() + g * cout_g * k, cout_g, k);
    RowMatMap<Scalar> o(out.data() + g * cout_g * hw, cout_g, hw);
    o.noalias() = w * col;
  }
  if (!bias.empty()) {
    RowMatMap<Scalar> o(out.data(), c_out, hw);
    o.colwise() += bias.values();
  }
  require_finite(out, "conv2d");
  return out;
}

template <typename Scalar>
struct ConvGrads {
  Tensor<Scalar> input;
  Tensor<Scalar> weights;
  Tensor<Scalar> bias;
};

template <typename Scalar>
ConvGrads<Scalar> conv2d_backward(const Tensor<Scalar>& input, const Tensor<Scalar>& weights,
                                  const ConvSpec& spec, const Tensor<Scalar>& grad_out,
                                  bool need_param_grads = true) {
  detail::check_conv_shapes(input, weights, Tensor<Scalar>{}, spec);
  const int c_out = weights.dim(0);
  const int cin_g = input.dim(0) / spec.groups;
  const int cout_g = c_out / spec.groups;
  const auto geo = detail::conv_geometry(input.shape(), spec, cin_g);
  if (grad_out.shape() != Shape{c_out, geo.out_h, geo.out_w}) {
    throw DimensionError("conv2d_backward: upstream gradient " + shape_string(grad_out.shape()) +
                         " does not match output shape");
  }
  const Eigen::Index k = static_cast<Eigen::Index>(cin_g) * geo.kh * geo.kw;
  const Eigen::Index hw = static_cast<Eigen::Index>(geo.out_h) * geo.out_w;
  const Eigen::Index plane = static_cast<Eigen::Index>(input.dim(1)) * input.dim(2);

  ConvGrads<Scalar> grads{Tensor<Scalar>(input.shape()), Tensor<Scalar>(weights.shape()),
                          Tensor<Scalar>({c_out})};
  RowMat<Scalar> col;
  RowMat<Scalar> dcol;
  if (detail::is_depthwise(spec, input.dim(0), c_out)) {
    detail::depthwise_backward(input.data(), weights.data(), grad_out.data(), geo, c_out,
                               grads.input.data(),
                               need_param_grads ? grads.weights.data() : nullptr);
  }
  for (int g = 0; g < spec.groups && !detail::is_depthwise(spec, input.dim(0), c_out); ++g) {
    ConstRowMatMap<Scalar> w(weights.data() + g * cout_g * k, cout_g, k);
    ConstRowMatMap<Scalar> dy(grad_out.data() + g * cout_g * hw, cout_g, hw);
    if (need_param_grads) {
      detail::im2col(input.data() + g * cin_g * plane, geo, col);
      RowMatMap<Scalar> dw(grads.weights.data() + g * cout_g * k, cout_g, k);
      dw.noalias() = dy * col.transpose();
    }
    dcol.noalias() = w.transpose() * dy;
    detail::col2im_add(dcol, geo, grads.input.data() + g * cin_g * plane);
  }
  if (need_param_grads) {
    ConstRowMatMap<Scalar> dy(grad_out.data(), c_out, hw);
    grads.bias.values() = dy.rowwise().sum();
  }
  return grads;
}

template <typename Scalar>
Tensor<Scalar> pool2d(const Tensor<Scalar>& input, int window, int stride, PoolMode mode) {
  require_rank(input, 3, "pool2d input");
  if (window <= 0 || stride <= 0) throw DimensionError("pool2d: window and stride must be positive");
  const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
  if (window > h || window > w) {
    throw DimensionError("pool2d: window " + std::to_string(window) + " larger than input " +
                         shape_string(input.shape()));
  }
  const int oh = (h - window) / stride + 1;
  const int ow = (w - window) / stride + 1;
  Tensor<Scalar> out({c, oh, ow});
  const Scalar inv_area = Scalar(1) / static_cast<Scalar>(window * window);
  for (int ch = 0; ch < c; ++ch) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        Scalar acc = mode == PoolMode::max ? input.at(ch, oy * stride, ox * stride) : Scalar(0);
        for (int dy = 0; dy < window; ++dy) {
          for (int dx = 0; dx < window; ++dx) {
            const Scalar v = input.at(ch, oy * stride + dy, ox * stride + dx);
            if (mode == PoolMode::max) {
              acc = std::max(acc, v);
            } else {
              acc += v;
            }
          }
        }
        out.at(ch, oy, ox) = mode == PoolMode::max ? acc : acc * inv_area;
      }
    }
  }
  return out;
}

/// Max pooling routes the gradient to the first maximal element in raster order.
template <typename Scalar>
Tensor<Scalar> pool2d_backward(const Tensor<Scalar>& input, int window, int stride, PoolMode mode,
                               const Tensor<Scalar>& grad_out) {
  require_rank(input, 3, "pool2d_backward input");
  const int c = input.dim(0);
  const int oh = (input.dim(1) - window) / stride + 1;
  const int ow = (input.dim(2) - window) / stride + 1;
  if (grad_out.shape() != Shape{c, oh, ow}) {
    throw DimensionError("pool2d_backward: upstream gradient " + shape_string(grad_out.shape()) +
                         " does not match output shape");
  }
  Tensor<Scalar> grad(input.shape());
  const Scalar inv_area = Scalar(1) / static_cast<Scalar>(window * window);
  for (int ch = 0; ch < c; ++ch) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const Scalar g = grad_out.at(ch, oy, ox);
        if (mode == PoolMode::avg) {
          for (int dy = 0; dy < window; ++dy)
            for (int dx = 0; dx < window; ++dx)
              grad.at(ch, oy * stride + dy, ox * stride + dx) += g * inv_area;
          continue;
        }
        int by = oy * stride, bx = ox * stride;
        Scalar best = input.at(ch, by, bx);
        for (int dy = 0; dy < window; ++dy) {
          for (int dx = 0; dx < window; ++dx) {
            const Scalar v = input.at(ch, oy * stride + dy, ox * stride + dx);
            if (v > best) {
              best = v;
              by = oy * stride + dy;
              bx = ox * stride + dx;
            }
          }
        }
        grad.at(ch, by, bx) += g;
      }
    }
  }
  return grad;
}

/// Softmax normalizes over the last axis.
template <typename Scalar>
Tensor<Scalar> activation(const Tensor<Scalar>& input, ActivationKind kind) {
  Tensor<Scalar> out = input;
  auto& v = out.values();
  switch (kind) {
    case ActivationKind::relu:
      v = v.cwiseMax(Scalar(0));
      break;
    case ActivationKind::relu6:
      v = v.cwiseMax(Scalar(0)).cwiseMin(Scalar(6));
      break;
    case ActivationKind::softmax: {
      if (input.empty()) throw DimensionError("softmax of an empty tensor");
      const Eigen::Index last = input.shape().back();
      RowMatMap<Scalar> rows(out.data(), out.size() / last, last);
      for (Eigen::Index r = 0; r < rows.rows(); ++r) {
        auto row = rows.row(r);
        row.array() = (row.array() - row.maxCoeff()).exp();
        row /= row.sum();
      }
      break;
    }
  }
  require_finite(out, "activation");
  return out;
}

template <typename Scalar>
Tensor<Scalar> activation_backward(const Tensor<Scalar>& input, const Tensor<Scalar>& output,
                                   ActivationKind kind, const Tensor<Scalar>& grad_out) {
  if (grad_out.shape() != input.shape()) {
    throw DimensionError("activation_backward: upstream gradient " +
                         shape_string(grad_out.shape()) + " does not match " +
                         shape_string(input.shape()));
  }
  Tensor<Scalar> grad(input.shape());
  const auto& x = input.values().array();
  const auto& g = grad_out.values().array();
  switch (kind) {
    case ActivationKind::relu:
      grad.values().array() = (x > Scalar(0)).select(g, Scalar(0));
      break;
    case ActivationKind::relu6:
      grad.values().array() = (x > Scalar(0) && x < Scalar(6)).select(g, Scalar(0));
      break;
    case ActivationKind::softmax: {
      // dx = y * (g - <g, y>) per row
      const Eigen::Index last = input.shape().back();
      const Eigen::Index rows = input.size() / last;
      ConstRowMatMap<Scalar> y(output.data(), rows, last);
      ConstRowMatMap<Scalar> up(grad_out.data(), rows, last);
      RowMatMap<Scalar> dx(grad.data(), rows, last);
      for (Eigen::Index r = 0; r < rows; ++r) {
        const Scalar dot = y.row(r).dot(up.row(r));
        dx.row(r) = y.row(r).cwiseProduct((up.row(r).array() - dot).matrix());
      }
      break;
    }
  }
  return grad;
}

template <typename Scalar>
Tensor<Scalar> dense(const Tensor<Scalar>& input, const Tensor<Scalar>& weights,
                     const Tensor<Scalar>& bias) {
  require_rank(input, 1, "dense input");
  require_rank(weights, 2, "dense weights");
  if (weights.dim(1) != input.dim(0)) {
    throw DimensionError("dense: weights " + shape_string(weights.shape()) +
                         " cannot multiply input " + shape_string(input.shape()));
  }
  if (!bias.empty() && (bias.rank() != 1 || bias.dim(0) != weights.dim(0))) {
    throw DimensionError("dense: bias " + shape_string(bias.shape()) + " does not match " +
                         std::to_string(weights.dim(0)) + " outputs");
  }
  ConstRowMatMap<Scalar> w(weights.data(), weights.dim(0), weights.dim(1));
  Tensor<Scalar> out({weights.dim(0)});
  out.values().noalias() = w * input.values();
  if (!bias.empty()) out.values() += bias.values();
  require_finite(out, "dense");
  return out;
}

template <typename Scalar>
struct DenseGrads {
  Tensor<Scalar> input;
  Tensor<Scalar> weights;
  Tensor<Scalar> bias;
};

template <typename Scalar>
DenseGrads<Scalar> dense_backward(const Tensor<Scalar>& input, const Tensor<Scalar>& weights,
                                  const Tensor<Scalar>& grad_out) {
  require_rank(input, 1, "dense_backward input");
  if (grad_out.shape() != Shape{weights.dim(0)} || weights.dim(1) != input.dim(0)) {
    throw DimensionError("dense_backward: shapes do not line up");
  }
  ConstRowMatMap<Scalar> w(weights.data(), weights.dim(0), weights.dim(1));
  DenseGrads<Scalar> grads{Tensor<Scalar>(input.shape()), Tensor<Scalar>(weights.shape()),
                           grad_out};
  grads.input.values().noalias() = w.transpose() * grad_out.values();
  RowMatMap<Scalar> dw(grads.weights.data(), weights.dim(0), weights.dim(1));
  dw.noalias() = grad_out.values() * input.values().transpose();
  return grads;
}

template <typename Scalar>
struct BatchNormParams {
  Tensor<Scalar> mean;
  Tensor<Scalar> var;
  Tensor<Scalar> gamma;
  Tensor<Scalar> beta;
};

namespace detail {

template <typename Scalar>
void check_batchnorm(const Tensor<Scalar>& input, const BatchNormParams<Scalar>& p, Scalar eps) {
  if (input.empty()) throw DimensionError("batchnorm of an empty tensor");
  const Shape channels{input.dim(0)};
  for (const auto* t : {&p.mean, &p.var, &p.gamma, &p.beta}) {
    if (t->shape() != channels) {
      throw DimensionError("batchnorm: parameter shape " + shape_string(t->shape()) +
                           " does not match channel count " + std::to_string(input.dim(0)));
    }
  }
  if ((p.var.values().array() < Scalar(0)).any()) throw DimensionError("batchnorm: negative variance");
  if (eps < Scalar(0)) throw DimensionError("batchnorm: negative epsilon");
}

}  // namespace detail

/// y = (x - mean) / sqrt(var + eps) * gamma + beta, per channel (axis 0).
template <typename Scalar>
Tensor<Scalar> batchnorm(const Tensor<Scalar>& input, const BatchNormParams<Scalar>& p, Scalar eps) {
  detail::check_batchnorm(input, p, eps);
  const Eigen::Index channels = input.dim(0);
  const Eigen::Index inner = input.size() / channels;
  Tensor<Scalar> out = input;
  RowMatMap<Scalar> y(out.data(), channels, inner);
  const Vec<Scalar> scale =
      p.gamma.values().array() / (p.var.values().array() + eps).sqrt();
  const Vec<Scalar> shift = p.beta.values().array() - p.mean.values().array() * scale.array();
  y = (y.array().colwise() * scale.array()).colwise() + shift.array();
  require_finite(out, "batchnorm");
  return out;
}

template <typename Scalar>
struct BatchNormGrads {
  Tensor<Scalar> input;
  Tensor<Scalar> gamma;
  Tensor<Scalar> beta;
};

/// mean and var are constants of the layer (running statistics); only gamma
/// and beta receive gradients.
template <typename Scalar>
BatchNormGrads<Scalar> batchnorm_backward(const Tensor<Scalar>& input,
                                          const BatchNormParams<Scalar>& p, Scalar eps,
                                          const Tensor<Scalar>& grad_out) {
  detail::check_batchnorm(input, p, eps);
  if (grad_out.shape() != input.shape()) {
    throw DimensionError("batchnorm_backward: upstream gradient shape mismatch");
  }
  const Eigen::Index channels = input.dim(0);
  const Eigen::Index inner = input.size() / channels;
  const Vec<Scalar> inv_std = (p.var.values().array() + eps).rsqrt();
  ConstRowMatMap<Scalar> x(input.data(), channels, inner);
  ConstRowMatMap<Scalar> g(grad_out.data(), channels, inner);

  BatchNormGrads<Scalar> grads{Tensor<Scalar>(input.shape()), Tensor<Scalar>({int(channels)}),
                               Tensor<Scalar>({int(channels)})};
  RowMatMap<Scalar> dx(grads.input.data(), channels, inner);
  dx = g.array().colwise() * (p.gamma.values().array() * inv_std.array());
  const RowMat<Scalar> x_hat =
      (x.array().colwise() - p.mean.values().array()).colwise() * inv_std.array();
  grads.gamma.values() = x_hat.cwiseProduct(g).rowwise().sum();
  grads.beta.values() = g.rowwise().sum();
  return grads;
}

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " differ");
  }
  Tensor<Scalar> out = a;
  out.values() += b.values();
  require_finite(out, "add");
  return out;
}

}  // namespace pestdet

#endif  // PESTDET_KERNELS_HPP
