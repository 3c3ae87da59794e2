#include "edgelite/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace edgelite::ops {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <class T>
using MutMap = Eigen::Map<RowMat<T>>;

struct Geometry {
  std::int64_t channels, in_h, in_w, kernel, stride, padding, out_h, out_w;
};

// First and one-past-last output index whose tap (out * stride + offset)
// lands inside [0, extent).
inline void valid_range(std::int64_t offset, std::int64_t stride, std::int64_t extent,
                        std::int64_t out, std::int64_t& lo, std::int64_t& hi) {
  lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  hi = extent - 1 - offset < 0 ? 0 : (extent - 1 - offset) / stride + 1;
  lo = std::min(lo, out);
  hi = std::clamp(hi, lo, out);
}

// Unfolds one sample into a (C*k*k) x (OH*OW) patch matrix.
template <class T>
void im2col(const T* in, const Geometry& g, T* col) {
  const std::int64_t plane = g.out_h * g.out_w;
  for (std::int64_t c = 0; c < g.channels; ++c) {
    const T* src = in + c * g.in_h * g.in_w;
    for (std::int64_t ki = 0; ki < g.kernel; ++ki) {
      std::int64_t y_lo, y_hi;
      valid_range(ki - g.padding, g.stride, g.in_h, g.out_h, y_lo, y_hi);
      for (std::int64_t kj = 0; kj < g.kernel; ++kj) {
        T* row = col + ((c * g.kernel + ki) * g.kernel + kj) * plane;
        std::int64_t x_lo, x_hi;
        valid_range(kj - g.padding, g.stride, g.in_w, g.out_w, x_lo, x_hi);
        for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
          T* dst = row + oy * g.out_w;
          if (oy < y_lo || oy >= y_hi) {
            std::fill(dst, dst + g.out_w, T{0});
            continue;
          }
          const T* line = src + (oy * g.stride + ki - g.padding) * g.in_w;
          std::fill(dst, dst + x_lo, T{0});
          if (g.stride == 1) {
            std::copy(line + x_lo + kj - g.padding, line + x_hi + kj - g.padding, dst + x_lo);
          } else {
            for (std::int64_t ox = x_lo; ox < x_hi; ++ox) dst[ox] = line[ox * g.stride + kj - g.padding];
          }
          std::fill(dst + x_hi, dst + g.out_w, T{0});
        }
      }
    }
  }
}

// Adjoint of im2col: scatters patch gradients back into the sample.
template <class T>
void col2im(const T* col, const Geometry& g, T* in) {
  const std::int64_t plane = g.out_h * g.out_w;
  for (std::int64_t c = 0; c < g.channels; ++c) {
    T* dst = in + c * g.in_h * g.in_w;
    for (std::int64_t ki = 0; ki < g.kernel; ++ki) {
      std::int64_t y_lo, y_hi;
      valid_range(ki - g.padding, g.stride, g.in_h, g.out_h, y_lo, y_hi);
      for (std::int64_t kj = 0; kj < g.kernel; ++kj) {
        const T* row = col + ((c * g.kernel + ki) * g.kernel + kj) * plane;
        std::int64_t x_lo, x_hi;
        valid_range(kj - g.padding, g.stride, g.in_w, g.out_w, x_lo, x_hi);
        for (std::int64_t oy = y_lo; oy < y_hi; ++oy) {
          const T* src = row + oy * g.out_w;
          T* line = dst + (oy * g.stride + ki - g.padding) * g.in_w;
          for (std::int64_t ox = x_lo; ox < x_hi; ++ox) line[ox * g.stride + kj - g.padding] += src[ox];
        }
      }
    }
  }
}

inline bool is_pointwise(const Geometry& g) {
  return g.kernel == 1 && g.stride == 1 && g.padding == 0;
}

template <class T>
BasicTensor<T> like(const Shape& s) {
  return BasicTensor<T>(s);
}

}  // namespace

std::int64_t output_size(std::int64_t in, std::int64_t kernel, std::int64_t stride,
                         std::int64_t padding) {
  require(kernel >= 1 && stride >= 1 && padding >= 0, ErrorKind::spec,
          "kernel and stride must be >= 1, padding >= 0");
  const std::int64_t span = in + 2 * padding - kernel;
  require(span >= 0, ErrorKind::spec,
          "kernel " + std::to_string(kernel) + " does not fit input " + std::to_string(in) +
              " with padding " + std::to_string(padding));
  return span / stride + 1;
}

template <class T>
GradPair<T, ConvCtx<T>> conv2d_fwd(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                                   const BasicTensor<T>& bias, const ConvSpec& spec) {
  const Shape& is = input.shape();
  const Shape& ws = weight.shape();
  require(!input.empty() && !weight.empty(), ErrorKind::contract, "conv2d on empty tensor");
  require(ws.n == spec.out_channels && ws.h == spec.kernel && ws.w == spec.kernel, ErrorKind::shape,
          "weight " + ws.str() + " does not match conv spec");
  require(ws.c == is.c, ErrorKind::shape,
          "conv expects " + std::to_string(ws.c) + " input channels, got " + std::to_string(is.c));
  require(spec.has_bias == !bias.empty(), ErrorKind::contract, "bias presence disagrees with spec");
  if (!bias.empty()) {
    require(bias.shape() == Shape{1, spec.out_channels, 1, 1}, ErrorKind::shape,
            "bias must be (1, out, 1, 1)");
  }
  const Geometry g{is.c,
                   is.h,
                   is.w,
                   spec.kernel,
                   spec.stride,
                   spec.padding,
                   output_size(is.h, spec.kernel, spec.stride, spec.padding),
                   output_size(is.w, spec.kernel, spec.stride, spec.padding)};
  const Shape out_shape{is.n, spec.out_channels, g.out_h, g.out_w};
  BasicTensor<T> out = like<T>(out_shape);
  auto dst = out.mutable_data();

  const std::int64_t rows = is.c * g.kernel * g.kernel;
  const std::int64_t plane = g.out_h * g.out_w;
  ScratchVector<T> col(is_pointwise(g) ? 0 : static_cast<std::size_t>(rows * plane));
  const ConstMap<T> w(weight.data().data(), spec.out_channels, rows);
  const T* in = input.data().data();
  for (std::int64_t n = 0; n < is.n; ++n) {
    const T* sample = in + n * is.c * is.h * is.w;
    const T* patches = sample;
    if (!is_pointwise(g)) {
      im2col(sample, g, col.data());
      patches = col.data();
    }
    MutMap<T> y(dst.data() + n * spec.out_channels * plane, spec.out_channels, plane);
    y.noalias() = w * ConstMap<T>(patches, rows, plane);
    if (!bias.empty()) {
      const auto b = bias.data();
      for (std::int64_t o = 0; o < spec.out_channels; ++o) y.row(o).array() += b[o];
    }
  }
  return {std::move(out), ConvCtx<T>{input, weight, spec, out_shape, true}};
}

template <class T>
ConvGrads<T> conv2d_bwd(const BasicTensor<T>& grad_out, const ConvCtx<T>& ctx, bool need_input) {
  require(ctx.valid, ErrorKind::contract, "conv2d_bwd called with a stale context");
  require(grad_out.shape() == ctx.out_shape, ErrorKind::contract,
          "grad_out " + grad_out.shape().str() + " does not match forward output " +
              ctx.out_shape.str());
  const Shape& is = ctx.input.shape();
  const ConvSpec& spec = ctx.spec;
  const Geometry g{is.c,          is.h,          is.w,
                   spec.kernel,   spec.stride,   spec.padding,
                   ctx.out_shape.h, ctx.out_shape.w};
  const std::int64_t rows = is.c * g.kernel * g.kernel;
  const std::int64_t plane = g.out_h * g.out_w;

  ConvGrads<T> grads;
  grads.weight = like<T>(ctx.weight.shape());
  if (spec.has_bias) grads.bias = like<T>(Shape{1, spec.out_channels, 1, 1});
  if (need_input) grads.input = like<T>(is);

  MutMap<T> dw(grads.weight.mutable_data().data(), spec.out_channels, rows);
  const ConstMap<T> w(ctx.weight.data().data(), spec.out_channels, rows);
  const bool pointwise = is_pointwise(g);
  ScratchVector<T> col(pointwise ? 0 : static_cast<std::size_t>(rows * plane));
  ScratchVector<T> dcol(pointwise || !need_input ? 0 : static_cast<std::size_t>(rows * plane));
  T* dx = need_input ? grads.input.mutable_data().data() : nullptr;
  const T* gy = grad_out.data().data();
  const T* in = ctx.input.data().data();
  const std::int64_t sample_size = is.c * is.h * is.w;

  for (std::int64_t n = 0; n < is.n; ++n) {
    const ConstMap<T> dy(gy + n * spec.out_channels * plane, spec.out_channels, plane);
    const T* sample = in + n * sample_size;
    const T* patches = sample;
    if (!pointwise) {
      im2col(sample, g, col.data());
      patches = col.data();
    }
    dw.noalias() += dy * ConstMap<T>(patches, rows, plane).transpose();
    if (spec.has_bias) {
      auto db = grads.bias.mutable_data();
      for (std::int64_t o = 0; o < spec.out_channels; ++o) db[o] += dy.row(o).sum();
    }
    if (need_input) {
      if (pointwise) {
        MutMap<T>(dx + n * sample_size, rows, plane).noalias() = w.transpose() * dy;
      } else {
        MutMap<T>(dcol.data(), rows, plane).noalias() = w.transpose() * dy;
        col2im(dcol.data(), g, dx + n * sample_size);
      }
    }
  }
  return grads;
}

template <class T>
GradPair<T, PoolCtx<T>> pool2d_fwd(const BasicTensor<T>& input, const PoolSpec& spec) {
  const Shape& is = input.shape();
  require(!input.empty(), ErrorKind::contract, "pool2d on empty tensor");
  require(spec.padding < spec.kernel, ErrorKind::spec, "pool padding must be smaller than the kernel");
  const Shape os{is.n, is.c, output_size(is.h, spec.kernel, spec.stride, spec.padding),
                 output_size(is.w, spec.kernel, spec.stride, spec.padding)};
  BasicTensor<T> out = like<T>(os);
  PoolCtx<T> ctx{is, os, spec, {}, true};
  auto dst = out.mutable_data();
  const T* src = input.data().data();
  const std::int64_t in_plane = is.h * is.w;
  const std::int64_t out_plane = os.h * os.w;
  if (spec.kind == PoolKind::max) ctx.argmax.resize(dst.size());
  const T area = static_cast<T>(spec.kernel * spec.kernel);

  for (std::int64_t nc = 0; nc < is.n * is.c; ++nc) {
    const T* plane = src + nc * in_plane;
    for (std::int64_t oy = 0; oy < os.h; ++oy) {
      const std::int64_t y0 = oy * spec.stride - spec.padding;
      const std::int64_t ya = std::max<std::int64_t>(y0, 0);
      const std::int64_t yb = std::min(y0 + spec.kernel, is.h);
      for (std::int64_t ox = 0; ox < os.w; ++ox) {
        const std::int64_t x0 = ox * spec.stride - spec.padding;
        const std::int64_t xa = std::max<std::int64_t>(x0, 0);
        const std::int64_t xb = std::min(x0 + spec.kernel, is.w);
        const std::size_t o = static_cast<std::size_t>(nc * out_plane + oy * os.w + ox);
        if (spec.kind == PoolKind::max) {
          T best = -std::numeric_limits<T>::infinity();
          std::int32_t arg = static_cast<std::int32_t>(ya * is.w + xa);
          for (std::int64_t y = ya; y < yb; ++y) {
            for (std::int64_t x = xa; x < xb; ++x) {
              const T v = plane[y * is.w + x];
              if (v > best) {
                best = v;
                arg = static_cast<std::int32_t>(y * is.w + x);
              }
            }
          }
          dst[o] = best;
          ctx.argmax[o] = arg;
        } else {
          T sum = 0;
          for (std::int64_t y = ya; y < yb; ++y) {
            for (std::int64_t x = xa; x < xb; ++x) sum += plane[y * is.w + x];
          }
          dst[o] = sum / area;
        }
      }
    }
  }
  return {std::move(out), std::move(ctx)};
}

template <class T>
BasicTensor<T> pool2d_bwd(const BasicTensor<T>& grad_out, const PoolCtx<T>& ctx) {
  require(ctx.valid, ErrorKind::contract, "pool2d_bwd called with a stale context");
  require(grad_out.shape() == ctx.out_shape, ErrorKind::contract,
          "grad_out " + grad_out.shape().str() + " does not match forward output " +
              ctx.out_shape.str());
  const Shape& is = ctx.in_shape;
  const Shape& os = ctx.out_shape;
  const PoolSpec& spec = ctx.spec;
  BasicTensor<T> gin = like<T>(is);
  auto dst = gin.mutable_data();
  const auto gy = grad_out.data();
  const std::int64_t in_plane = is.h * is.w;
  const std::int64_t out_plane = os.h * os.w;
  const T area = static_cast<T>(spec.kernel * spec.kernel);
  for (std::int64_t nc = 0; nc < is.n * is.c; ++nc) {
    T* plane = dst.data() + nc * in_plane;
    for (std::int64_t oy = 0; oy < os.h; ++oy) {
      for (std::int64_t ox = 0; ox < os.w; ++ox) {
        const std::size_t o = static_cast<std::size_t>(nc * out_plane + oy * os.w + ox);
        if (spec.kind == PoolKind::max) {
          plane[ctx.argmax[o]] += gy[o];
          continue;
        }
        const std::int64_t y0 = oy * spec.stride - spec.padding;
        const std::int64_t x0 = ox * spec.stride - spec.padding;
        const T share = gy[o] / area;
        for (std::int64_t y = std::max<std::int64_t>(y0, 0); y < std::min(y0 + spec.kernel, is.h); ++y) {
          for (std::int64_t x = std::max<std::int64_t>(x0, 0); x < std::min(x0 + spec.kernel, is.w); ++x) {
            plane[y * is.w + x] += share;
          }
        }
      }
    }
  }
  return gin;
}

template <class T>
GradPair<T, ReluCtx<T>> relu_fwd(BasicTensor<T> input) {
  for (auto& v : input.mutable_data()) v = v > T{0} ? v : T{0};
  return {input, ReluCtx<T>{input}};
}

template <class T>
BasicTensor<T> relu_bwd(const BasicTensor<T>& grad_out, const ReluCtx<T>& ctx) {
  require(grad_out.shape() == ctx.output.shape(), ErrorKind::contract,
          "relu_bwd shape mismatch");
  BasicTensor<T> g = grad_out;
  auto dst = g.mutable_data();
  const auto y = ctx.output.data();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (!(y[i] > T{0})) dst[i] = T{0};
  }
  return g;
}

template <class T>
GradPair<T, DropoutCtx<T>> dropout_fwd(const BasicTensor<T>& input, double rate, Mode mode,
                                       Rng& rng) {
  require(rate >= 0.0 && rate < 1.0, ErrorKind::spec, "dropout rate must lie in [0, 1)");
  if (mode == Mode::infer || rate == 0.0) return {input, DropoutCtx<T>{{}, input.shape()}};
  BasicTensor<T> scale = like<T>(input.shape());
  BasicTensor<T> out = input;
  auto s = scale.mutable_data();
  auto y = out.mutable_data();
  const T keep = static_cast<T>(1.0 / (1.0 - rate));
  for (std::size_t i = 0; i < y.size(); ++i) {
    s[i] = rng.bernoulli(rate) ? T{0} : keep;
    y[i] *= s[i];
  }
  return {std::move(out), DropoutCtx<T>{std::move(scale), input.shape()}};
}

template <class T>
BasicTensor<T> dropout_bwd(const BasicTensor<T>& grad_out, const DropoutCtx<T>& ctx) {
  require(grad_out.shape() == ctx.shape, ErrorKind::contract, "dropout_bwd shape mismatch");
  if (ctx.scale.empty()) return grad_out;
  BasicTensor<T> g = grad_out;
  auto dst = g.mutable_data();
  const auto s = ctx.scale.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] *= s[i];
  return g;
}

template <class T>
GradPair<T, LinearCtx<T>> linear_fwd(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                                     const BasicTensor<T>& bias) {
  const Shape& is = input.shape();
  const Shape& ws = weight.shape();
  require(is.h == 1 && is.w == 1, ErrorKind::shape, "linear input must be (n, c, 1, 1), got " + is.str());
  require(ws.h == 1 && ws.w == 1 && ws.c == is.c, ErrorKind::shape,
          "linear weight " + ws.str() + " does not match input " + is.str());
  if (!bias.empty()) {
    require(bias.shape() == Shape{1, ws.n, 1, 1}, ErrorKind::shape, "linear bias must be (1, out, 1, 1)");
  }
  BasicTensor<T> out = like<T>(Shape{is.n, ws.n, 1, 1});
  MutMap<T> y(out.mutable_data().data(), is.n, ws.n);
  y.noalias() = ConstMap<T>(input.data().data(), is.n, is.c) *
                ConstMap<T>(weight.data().data(), ws.n, ws.c).transpose();
  if (!bias.empty()) {
    const auto b = bias.data();
    for (std::int64_t o = 0; o < ws.n; ++o) y.col(o).array() += b[o];
  }
  return {std::move(out), LinearCtx<T>{input, weight, true}};
}

template <class T>
LinearGrads<T> linear_bwd(const BasicTensor<T>& grad_out, const LinearCtx<T>& ctx, bool need_input) {
  require(ctx.valid, ErrorKind::contract, "linear_bwd called with a stale context");
  const Shape& is = ctx.input.shape();
  const Shape& ws = ctx.weight.shape();
  require(grad_out.shape() == Shape{is.n, ws.n, 1, 1}, ErrorKind::contract,
          "linear_bwd grad shape mismatch");
  const ConstMap<T> dy(grad_out.data().data(), is.n, ws.n);
  LinearGrads<T> grads;
  grads.weight = like<T>(ws);
  grads.bias = like<T>(Shape{1, ws.n, 1, 1});
  MutMap<T>(grads.weight.mutable_data().data(), ws.n, ws.c).noalias() =
      dy.transpose() * ConstMap<T>(ctx.input.data().data(), is.n, is.c);
  auto db = grads.bias.mutable_data();
  for (std::int64_t o = 0; o < ws.n; ++o) db[o] = dy.col(o).sum();
  if (need_input) {
    grads.input = like<T>(is);
    MutMap<T>(grads.input.mutable_data().data(), is.n, is.c).noalias() =
        dy * ConstMap<T>(ctx.weight.data().data(), ws.n, ws.c);
  }
  return grads;
}

template <class T>
BasicTensor<T> softmax(const BasicTensor<T>& logits) {
  const Shape& s = logits.shape();
  require(s.h == 1 && s.w == 1, ErrorKind::shape, "softmax expects (n, k, 1, 1)");
  BasicTensor<T> probs = like<T>(s);
  auto p = probs.mutable_data();
  const auto z = logits.data();
  for (std::int64_t n = 0; n < s.n; ++n) {
    const T* row = z.data() + n * s.c;
    T* out = p.data() + n * s.c;
    const T peak = *std::max_element(row, row + s.c);
    T total = 0;
    for (std::int64_t k = 0; k < s.c; ++k) {
      out[k] = std::exp(row[k] - peak);
      total += out[k];
    }
    for (std::int64_t k = 0; k < s.c; ++k) out[k] /= total;
  }
  return probs;
}

template <class T>
SoftmaxXent<T> softmax_xent(const BasicTensor<T>& logits, std::span<const std::int32_t> labels) {
  const Shape& s = logits.shape();
  require(static_cast<std::int64_t>(labels.size()) == s.n, ErrorKind::data,
          "label count does not match batch size");
  for (auto label : labels) {
    require(label >= 0 && label < s.c, ErrorKind::data,
            "label " + std::to_string(label) + " outside [0, " + std::to_string(s.c) + ")");
  }
  SoftmaxXent<T> result;
  result.probs = softmax(logits);
  result.grad_logits = result.probs;
  auto g = result.grad_logits.mutable_data();
  const auto z = logits.data();
  const T inv_n = T{1} / static_cast<T>(s.n);
  double loss = 0.0;
  for (std::int64_t n = 0; n < s.n; ++n) {
    const T* row = z.data() + n * s.c;
    const T peak = *std::max_element(row, row + s.c);
    double total = 0.0;
    for (std::int64_t k = 0; k < s.c; ++k) total += std::exp(static_cast<double>(row[k] - peak));
    // log-sum-exp keeps the loss finite even when a probability underflows.
    loss += std::log(total) - static_cast<double>(row[labels[n]] - peak);
    g[n * s.c + labels[n]] -= T{1};
    for (std::int64_t k = 0; k < s.c; ++k) g[n * s.c + k] *= inv_n;
  }
  result.loss = loss / static_cast<double>(s.n);
  return result;
}

template <class T>
void add_inplace(BasicTensor<T>& a, const BasicTensor<T>& b) {
  require(a.shape() == b.shape(), ErrorKind::shape, "add_inplace shape mismatch");
  auto dst = a.mutable_data();
  const auto src = b.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

#define EDGELITE_INSTANTIATE_OPS(T)                                                              \
  template GradPair<T, ConvCtx<T>> conv2d_fwd(const BasicTensor<T>&, const BasicTensor<T>&,     \
                                              const BasicTensor<T>&, const ConvSpec&);          \
  template ConvGrads<T> conv2d_bwd(const BasicTensor<T>&, const ConvCtx<T>&, bool);             \
  template GradPair<T, PoolCtx<T>> pool2d_fwd(const BasicTensor<T>&, const PoolSpec&);          \
  template BasicTensor<T> pool2d_bwd(const BasicTensor<T>&, const PoolCtx<T>&);                 \
  template GradPair<T, ReluCtx<T>> relu_fwd(BasicTensor<T>);                                    \
  template BasicTensor<T> relu_bwd(const BasicTensor<T>&, const ReluCtx<T>&);                   \
  template GradPair<T, DropoutCtx<T>> dropout_fwd(const BasicTensor<T>&, double, Mode, Rng&);   \
  template BasicTensor<T> dropout_bwd(const BasicTensor<T>&, const DropoutCtx<T>&);             \
  template GradPair<T, LinearCtx<T>> linear_fwd(const BasicTensor<T>&, const BasicTensor<T>&,   \
                                                const BasicTensor<T>&);                         \
  template LinearGrads<T> linear_bwd(const BasicTensor<T>&, const LinearCtx<T>&, bool);         \
  template BasicTensor<T> softmax(const BasicTensor<T>&);                                       \
  template SoftmaxXent<T> softmax_xent(const BasicTensor<T>&, std::span<const std::int32_t>);   \
  template void add_inplace(BasicTensor<T>&, const BasicTensor<T>&);

EDGELITE_INSTANTIATE_OPS(float)
EDGELITE_INSTANTIATE_OPS(double)

}  // namespace edgelite::ops
