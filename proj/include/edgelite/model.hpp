#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "edgelite/ops.hpp"
#include "edgelite/tensor.hpp"

namespace edgelite {

using ops::Mode;

/// Output widths of the four parallel branches of an EdgeLite block, plus the
/// 1x1 reductions in front of the 3x3 and 5x5 convolutions.
struct BlockWidths {
  std::int64_t b1 = 1;  // 1x1 branch
  std::int64_t r3 = 1;  // 1x1 reduce before 3x3
  std::int64_t b3 = 1;  // 3x3 branch
  std::int64_t r5 = 1;  // 1x1 reduce before 5x5
  std::int64_t b5 = 1;  // 5x5 branch
  std::int64_t bp = 1;  // pool projection

  std::int64_t out() const noexcept { return b1 + b3 + b5 + bp; }
  bool valid() const noexcept { return b1 >= 1 && r3 >= 1 && b3 >= 1 && r5 >= 1 && b5 >= 1 && bp >= 1; }
  friend bool operator==(const BlockWidths&, const BlockWidths&) = default;
};

inline constexpr std::size_t kBlockCount = 7;
inline constexpr std::size_t kBlocksBeforeReduction = 5;
/// Aux heads sit on the outputs of these blocks (0-based).
inline constexpr std::array<std::size_t, 2> kAuxAttach = {1, 4};
inline constexpr std::int64_t kInputSize = 224;
inline constexpr std::int64_t kInputChannels = 3;

using WidthsTable = std::array<BlockWidths, kBlockCount>;

/// Inception-lineage allocation; blocks 1-5 end at 832 channels, 6-7 at 1024.
WidthsTable default_widths();

struct HeadConfig {
  std::int64_t num_classes = 2;
};

/// Channel plan of one EdgeLite network. Everything the graph needs is here,
/// so a model file's tensor shapes are enough to rebuild it.
struct ModelConfig {
  std::int64_t num_classes = 2;
  std::array<std::int64_t, 4> stem = {64, 192, 256, 480};
  WidthsTable blocks = default_widths();
  std::int64_t aux_conv = 128;
  std::int64_t aux_fc = 1024;
  bool with_aux = true;
  double dropout = 0.4;
  double aux_dropout = 0.7;

  /// Full-width plan with the given head.
  static ModelConfig edgelite(HeadConfig head);
  /// Width-multiplied plan; every channel count becomes max(1, round(c * m)).
  static ModelConfig scaled(HeadConfig head, double multiplier);

  /// Throws a config error when any width is non-positive.
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <class T>
struct Param {
  std::string name;
  BasicTensor<T> value;
  BasicTensor<T> grad;
  bool trainable = true;
};

/// Observer hook: called with every named activation edge during forward.
template <class T>
using EdgeObserver = std::function<void(std::string_view, const BasicTensor<T>&)>;

/// Convolution (or, for 1x1 inputs, a linear map) with optional ReLU.
template <class T>
class ConvLayer {
 public:
  struct Tape {
    ops::ConvCtx<T> conv;
    ops::ReluCtx<T> act;
  };

  ConvLayer() = default;
  ConvLayer(std::string name, std::int64_t in_channels, ops::ConvSpec spec, bool relu, Rng& rng);

  BasicTensor<T> forward(const BasicTensor<T>& x, Tape* tape) const;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out, const Tape& tape, bool need_input);

  const std::string& name() const noexcept { return name_; }
  const ops::ConvSpec& spec() const noexcept { return spec_; }
  bool relu() const noexcept { return relu_; }
  std::int64_t in_channels() const noexcept { return weight.value.shape().c; }

  Param<T> weight;
  Param<T> bias;

 private:
  std::string name_;
  ops::ConvSpec spec_{};
  bool relu_ = true;
};

template <class T>
class LinearLayer {
 public:
  struct Tape {
    ops::LinearCtx<T> linear;
    ops::ReluCtx<T> act;
  };

  LinearLayer() = default;
  LinearLayer(std::string name, std::int64_t in_features, std::int64_t out_features, bool relu,
              Rng& rng);

  BasicTensor<T> forward(const BasicTensor<T>& x, Tape* tape) const;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out, const Tape& tape, bool need_input);

  /// Fresh He-initialised weights and zero bias with a new output width.
  void reinitialize(std::int64_t out_features, Rng& rng);

  const std::string& name() const noexcept { return name_; }
  bool relu() const noexcept { return relu_; }
  std::int64_t out_features() const noexcept { return weight.value.shape().n; }
  std::int64_t in_features() const noexcept { return weight.value.shape().c; }

  Param<T> weight;
  Param<T> bias;

 private:
  std::string name_;
  bool relu_ = false;
};

/// Four parallel branches (1x1 | 1x1->3x3 | 1x1->5x5 | maxpool 3x3/1 -> 1x1),
/// all ReLU, same spatial size, concatenated in that order.
template <class T>
class EdgeLiteBlock {
 public:
  struct Tape {
    typename ConvLayer<T>::Tape b1, r3, b3, r5, b5, bp;
    ops::PoolCtx<T> pool;
  };

  EdgeLiteBlock() = default;
  EdgeLiteBlock(std::string name, std::int64_t in_channels, const BlockWidths& widths, Rng& rng);

  BasicTensor<T> forward(const BasicTensor<T>& x, Tape* tape, const EdgeObserver<T>* observer) const;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out, const Tape& tape);

  const std::string& name() const noexcept { return name_; }
  const BlockWidths& widths() const noexcept { return widths_; }
  std::int64_t out_channels() const noexcept { return widths_.out(); }

  ConvLayer<T> b1, r3, b3, r5, b5, bp;

 private:
  std::string name_;
  BlockWidths widths_{};
};

inline const ops::PoolSpec kBlockPool{ops::PoolKind::max, 3, 1, 1};

/// Standalone block evaluation: checks the widths against the expected output
/// channel count (config error on mismatch) and runs the block forward.
template <class T>
BasicTensor<T> edgelite_block(const BasicTensor<T>& input, const EdgeLiteBlock<T>& block,
                              std::int64_t expected_out_channels);

/// Training-only classifier: avgpool 5x5/3 -> 1x1 conv -> linear + ReLU ->
/// dropout -> linear.
template <class T>
class AuxHead {
 public:
  struct Tape {
    ops::PoolCtx<T> pool;
    typename ConvLayer<T>::Tape conv;
    Shape conv_shape;
    typename LinearLayer<T>::Tape fc1;
    ops::DropoutCtx<T> drop;
    typename LinearLayer<T>::Tape fc2;
  };

  AuxHead() = default;
  AuxHead(std::string name, std::int64_t in_channels, const ModelConfig& config, Rng& rng);

  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode, Rng& rng, Tape* tape) const;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out, const Tape& tape);

  ConvLayer<T> conv;
  LinearLayer<T> fc1;
  LinearLayer<T> fc2;
  double dropout = 0.7;

 private:
  std::string name_;
};

inline const ops::PoolSpec kAuxPool{ops::PoolKind::avg, 5, 3, 0};

enum class StripStatus { stripped, already_stripped };

/// The EdgeLite network: conv 7x7/2 -> maxpool 3x3/2 -> three 3x3 convs ->
/// pool 3x3/4 -> 5 blocks -> maxpool 3x3/2 -> 2 blocks -> avgpool 7x7 ->
/// dropout -> linear. Two aux heads are present in train mode.
template <class T>
class BasicModel {
 public:
  struct Output {
    BasicTensor<T> main;
    std::vector<BasicTensor<T>> aux;
  };

  struct Tape {
    Shape input_shape;
    std::array<typename ConvLayer<T>::Tape, 4> stem;
    ops::PoolCtx<T> pool1, pool2, pool3, avgpool;
    std::array<typename EdgeLiteBlock<T>::Tape, kBlockCount> blocks;
    std::vector<typename AuxHead<T>::Tape> aux;
    ops::DropoutCtx<T> drop;
    typename LinearLayer<T>::Tape fc;
    Shape pooled_shape;
    bool valid = false;
  };

  BasicModel() = default;
  explicit BasicModel(const ModelConfig& config, Rng& rng);

  /// Runs the network on (n, 3, 224, 224). Train mode also evaluates the aux
  /// heads (if present) and applies dropout with `rng`; infer mode is
  /// deterministic and returns no aux logits. When `tape` is non-null it is
  /// filled for `backward`.
  Output forward(const BasicTensor<T>& batch, Mode mode, Rng* rng = nullptr, Tape* tape = nullptr,
                 const EdgeObserver<T>* observer = nullptr) const;

  /// Accumulates parameter gradients from logits gradients.
  void backward(const Tape& tape, const BasicTensor<T>& grad_main,
                std::span<const BasicTensor<T>> grad_aux);

  void zero_grad();

  std::vector<Param<T>*> params();
  std::vector<const Param<T>*> params() const;
  const Param<T>* find_param(std::string_view name) const;
  Param<T>* find_param(std::string_view name);

  std::int64_t param_count() const;
  /// Weighted layers, pooling excluded, each block counted twice.
  int depth() const noexcept;
  std::size_t aux_head_count() const noexcept { return aux_.size(); }
  Mode mode() const noexcept { return aux_.empty() ? Mode::infer : Mode::train; }
  const ModelConfig& config() const noexcept { return config_; }

  /// Drops the aux heads; main-path weights are untouched.
  StripStatus strip_training_layers();

  /// Re-initialises the classifier (and aux classifiers) for `new_classes`.
  /// With `freeze`, every other parameter becomes non-trainable.
  void replace_head(std::int64_t new_classes, Rng& rng, bool freeze = false);

  /// Element-type conversion of every parameter.
  template <class U>
  BasicModel<U> cast() const;

  /// Bitwise equality of every parameter value.
  bool same_weights(const BasicModel& other) const;

  // Layers are public so the quantizer and serializer can walk them.
  std::array<ConvLayer<T>, 4> stem;
  std::array<EdgeLiteBlock<T>, kBlockCount> blocks;
  LinearLayer<T> fc;

  std::vector<AuxHead<T>>& aux_heads() noexcept { return aux_; }
  const std::vector<AuxHead<T>>& aux_heads() const noexcept { return aux_; }

 private:
  template <class U>
  friend class BasicModel;

  ModelConfig config_{};
  std::vector<AuxHead<T>> aux_;
};

using Model = BasicModel<float>;
using Model64 = BasicModel<double>;

inline const ops::PoolSpec kStemPool1{ops::PoolKind::max, 3, 2, 1};
// 56 -> 14 needs stride 4: floor((56 - 3) / 4) + 1 = 14.
inline const ops::PoolSpec kStemPool2{ops::PoolKind::max, 3, 4, 0};
inline const ops::PoolSpec kMidPool{ops::PoolKind::max, 3, 2, 1};
inline const ops::PoolSpec kFinalPool{ops::PoolKind::avg, 7, 1, 0};

/// Builds the network for a head and a width table. The table must reach 832
/// channels after block 5 and 1024 after block 7.
Model build_edgelite(HeadConfig head, const WidthsTable& widths, Rng& rng);

/// Width-multiplied test profile (default multiplier 0.25).
Model build_test_profile(HeadConfig head, Rng& rng, double multiplier = 0.25);

/// Converts 8-bit RGB planes into the network's input range [-1, 1].
inline float normalize_pixel(std::uint8_t v) { return static_cast<float>(v) / 127.5f - 1.0f; }

}  // namespace edgelite
