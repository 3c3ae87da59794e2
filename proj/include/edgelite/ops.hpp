#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "edgelite/tensor.hpp"

namespace edgelite::ops {

/// floor((in + 2p - k) / s) + 1; throws a spec error when the result is < 1.
std::int64_t output_size(std::int64_t in, std::int64_t kernel, std::int64_t stride,
                         std::int64_t padding);

struct ConvSpec {
  std::int64_t out_channels = 1;
  std::int64_t kernel = 1;
  std::int64_t stride = 1;
  std::int64_t padding = 0;
  bool has_bias = true;

  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

enum class PoolKind { max, avg };

struct PoolSpec {
  PoolKind kind = PoolKind::max;
  std::int64_t kernel = 1;
  std::int64_t stride = 1;
  std::int64_t padding = 0;

  friend bool operator==(const PoolSpec&, const PoolSpec&) = default;
};

enum class Mode { train, infer };

/// Forward output plus whatever the matching backward needs.
template <class T, class Ctx>
struct GradPair {
  BasicTensor<T> value;
  Ctx ctx;
};

template <class T>
struct ConvCtx {
  BasicTensor<T> input;
  BasicTensor<T> weight;
  ConvSpec spec;
  Shape out_shape;
  bool valid = false;
};

template <class T>
struct ConvGrads {
  BasicTensor<T> input;
  BasicTensor<T> weight;
  BasicTensor<T> bias;  // empty when the conv has no bias
};

/// Cross-correlation with zero padding. weight is (out, in, k, k); bias, when
/// given, is (1, out, 1, 1). An empty bias tensor means no bias.
template <class T>
GradPair<T, ConvCtx<T>> conv2d_fwd(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                                   const BasicTensor<T>& bias, const ConvSpec& spec);

/// Gradients of a conv2d_fwd. Skips grad_input when `need_input` is false.
template <class T>
ConvGrads<T> conv2d_bwd(const BasicTensor<T>& grad_out, const ConvCtx<T>& ctx,
                        bool need_input = true);

template <class T>
struct PoolCtx {
  Shape in_shape;
  Shape out_shape;
  PoolSpec spec;
  ScratchVector<std::int32_t> argmax;  // per output, offset within the input plane (max only)
  bool valid = false;
};

/// Max pooling ignores padded cells; ties go to the lowest linear index.
/// Average pooling divides by the full kernel area, padded cells count as 0.
template <class T>
GradPair<T, PoolCtx<T>> pool2d_fwd(const BasicTensor<T>& input, const PoolSpec& spec);

template <class T>
BasicTensor<T> pool2d_bwd(const BasicTensor<T>& grad_out, const PoolCtx<T>& ctx);

template <class T>
struct ReluCtx {
  BasicTensor<T> output;
};

/// Takes the input by value so an unshared buffer is rectified in place.
template <class T>
GradPair<T, ReluCtx<T>> relu_fwd(BasicTensor<T> input);

template <class T>
BasicTensor<T> relu_bwd(const BasicTensor<T>& grad_out, const ReluCtx<T>& ctx);

template <class T>
struct DropoutCtx {
  BasicTensor<T> scale;  // per-element multiplier; empty means identity
  Shape shape;
};

/// Inverted dropout. rate must be in [0, 1); infer mode is the identity.
template <class T>
GradPair<T, DropoutCtx<T>> dropout_fwd(const BasicTensor<T>& input, double rate, Mode mode,
                                       Rng& rng);

template <class T>
BasicTensor<T> dropout_bwd(const BasicTensor<T>& grad_out, const DropoutCtx<T>& ctx);

template <class T>
struct LinearCtx {
  BasicTensor<T> input;
  BasicTensor<T> weight;
  bool valid = false;
};

template <class T>
struct LinearGrads {
  BasicTensor<T> input;
  BasicTensor<T> weight;
  BasicTensor<T> bias;
};

/// input (n, c, 1, 1), weight (out, c, 1, 1), bias (1, out, 1, 1) or empty.
template <class T>
GradPair<T, LinearCtx<T>> linear_fwd(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                                     const BasicTensor<T>& bias);

template <class T>
LinearGrads<T> linear_bwd(const BasicTensor<T>& grad_out, const LinearCtx<T>& ctx,
                          bool need_input = true);

template <class T>
struct SoftmaxXent {
  double loss = 0.0;
  BasicTensor<T> probs;
  BasicTensor<T> grad_logits;
};

/// Row softmax (max-shifted) plus mean negative log-likelihood. The gradient is
/// (probs - onehot) / n.
template <class T>
SoftmaxXent<T> softmax_xent(const BasicTensor<T>& logits, std::span<const std::int32_t> labels);

/// Max-shifted softmax over channels of an (n, k, 1, 1) tensor.
template <class T>
BasicTensor<T> softmax(const BasicTensor<T>& logits);

/// Element-wise a += b (shapes must match).
template <class T>
void add_inplace(BasicTensor<T>& a, const BasicTensor<T>& b);

}  // namespace edgelite::ops
