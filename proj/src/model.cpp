#include "edgelite/model.hpp"

#include <cmath>

namespace edgelite {

namespace {

template <class T>
Param<T> make_param(std::string name, BasicTensor<T> value) {
  Param<T> p;
  p.name = std::move(name);
  p.grad = BasicTensor<T>(value.shape());
  p.value = std::move(value);
  return p;
}

template <class T>
void accumulate(Param<T>& p, const BasicTensor<T>& g) {
  if (!g.empty()) ops::add_inplace(p.grad, g);
}

std::int64_t scale_width(std::int64_t c, double m) {
  return std::max<std::int64_t>(1, std::llround(static_cast<double>(c) * m));
}

template <class T>
void emit(const EdgeObserver<T>* observer, std::string_view edge, const BasicTensor<T>& t) {
  if (observer != nullptr && *observer) (*observer)(edge, t);
}

}  // namespace

WidthsTable default_widths() {
  return {{
      {192, 96, 208, 16, 48, 64},
      {160, 112, 224, 24, 64, 64},
      {128, 128, 256, 24, 64, 64},
      {112, 144, 288, 32, 64, 64},
      {256, 160, 320, 32, 128, 128},
      {256, 160, 320, 32, 128, 128},
      {384, 192, 384, 48, 128, 128},
  }};
}

ModelConfig ModelConfig::edgelite(HeadConfig head) {
  ModelConfig config;
  config.num_classes = head.num_classes;
  config.validate();
  return config;
}

ModelConfig ModelConfig::scaled(HeadConfig head, double multiplier) {
  require(multiplier > 0.0 && std::isfinite(multiplier), ErrorKind::config,
          "width multiplier must be positive");
  ModelConfig config = edgelite(head);
  for (auto& c : config.stem) c = scale_width(c, multiplier);
  for (auto& b : config.blocks) {
    b = {scale_width(b.b1, multiplier), scale_width(b.r3, multiplier), scale_width(b.b3, multiplier),
         scale_width(b.r5, multiplier), scale_width(b.b5, multiplier), scale_width(b.bp, multiplier)};
  }
  config.aux_conv = scale_width(config.aux_conv, multiplier);
  config.aux_fc = scale_width(config.aux_fc, multiplier);
  return config;
}

void ModelConfig::validate() const {
  require(num_classes >= 1, ErrorKind::config, "num_classes must be positive");
  for (auto c : stem) require(c >= 1, ErrorKind::config, "stem widths must be positive");
  for (const auto& b : blocks) require(b.valid(), ErrorKind::config, "block widths must be positive");
  require(aux_conv >= 1 && aux_fc >= 1, ErrorKind::config, "aux widths must be positive");
  require(dropout >= 0.0 && dropout < 1.0 && aux_dropout >= 0.0 && aux_dropout < 1.0,
          ErrorKind::config, "dropout rates must lie in [0, 1)");
}

// ---------------------------------------------------------------- ConvLayer

template <class T>
ConvLayer<T>::ConvLayer(std::string name, std::int64_t in_channels, ops::ConvSpec spec, bool relu,
                        Rng& rng)
    : name_(std::move(name)), spec_(spec), relu_(relu) {
  const std::int64_t fan_in = in_channels * spec.kernel * spec.kernel;
  weight = make_param<T>(name_ + ".weight",
                         tensor_init_he<T>({spec.out_channels, in_channels, spec.kernel, spec.kernel},
                                           fan_in, rng));
  if (spec.has_bias) bias = make_param<T>(name_ + ".bias", BasicTensor<T>({1, spec.out_channels, 1, 1}));
}

template <class T>
BasicTensor<T> ConvLayer<T>::forward(const BasicTensor<T>& x, Tape* tape) const {
  auto conv = ops::conv2d_fwd(x, weight.value, bias.value, spec_);
  if (tape != nullptr) tape->conv = std::move(conv.ctx);
  if (!relu_) return std::move(conv.value);
  auto act = ops::relu_fwd(std::move(conv.value));
  if (tape != nullptr) tape->act = std::move(act.ctx);
  return std::move(act.value);
}

template <class T>
BasicTensor<T> ConvLayer<T>::backward(const BasicTensor<T>& grad_out, const Tape& tape,
                                      bool need_input) {
  const BasicTensor<T> g = relu_ ? ops::relu_bwd(grad_out, tape.act) : grad_out;
  auto grads = ops::conv2d_bwd(g, tape.conv, need_input);
  accumulate(weight, grads.weight);
  if (spec_.has_bias) accumulate(bias, grads.bias);
  return std::move(grads.input);
}

// -------------------------------------------------------------- LinearLayer

template <class T>
LinearLayer<T>::LinearLayer(std::string name, std::int64_t in_features, std::int64_t out_features,
                            bool relu, Rng& rng)
    : name_(std::move(name)), relu_(relu) {
  weight = make_param<T>(name_ + ".weight",
                         tensor_init_he<T>({out_features, in_features, 1, 1}, in_features, rng));
  bias = make_param<T>(name_ + ".bias", BasicTensor<T>({1, out_features, 1, 1}));
}

template <class T>
BasicTensor<T> LinearLayer<T>::forward(const BasicTensor<T>& x, Tape* tape) const {
  auto lin = ops::linear_fwd(x, weight.value, bias.value);
  if (tape != nullptr) tape->linear = std::move(lin.ctx);
  if (!relu_) return std::move(lin.value);
  auto act = ops::relu_fwd(std::move(lin.value));
  if (tape != nullptr) tape->act = std::move(act.ctx);
  return std::move(act.value);
}

template <class T>
BasicTensor<T> LinearLayer<T>::backward(const BasicTensor<T>& grad_out, const Tape& tape,
                                        bool need_input) {
  const BasicTensor<T> g = relu_ ? ops::relu_bwd(grad_out, tape.act) : grad_out;
  auto grads = ops::linear_bwd(g, tape.linear, need_input);
  accumulate(weight, grads.weight);
  accumulate(bias, grads.bias);
  return std::move(grads.input);
}

template <class T>
void LinearLayer<T>::reinitialize(std::int64_t out_features, Rng& rng) {
  const std::int64_t in = in_features();
  const bool trainable = weight.trainable;
  weight = make_param<T>(name_ + ".weight", tensor_init_he<T>({out_features, in, 1, 1}, in, rng));
  bias = make_param<T>(name_ + ".bias", BasicTensor<T>({1, out_features, 1, 1}));
  weight.trainable = bias.trainable = trainable;
}

// ------------------------------------------------------------ EdgeLiteBlock

template <class T>
EdgeLiteBlock<T>::EdgeLiteBlock(std::string name, std::int64_t in_channels,
                                const BlockWidths& widths, Rng& rng)
    : name_(std::move(name)), widths_(widths) {
  require(widths.valid(), ErrorKind::config, name_ + ": block widths must be positive");
  using ops::ConvSpec;
  b1 = ConvLayer<T>(name_ + ".b1", in_channels, ConvSpec{widths.b1, 1, 1, 0, true}, true, rng);
  r3 = ConvLayer<T>(name_ + ".r3", in_channels, ConvSpec{widths.r3, 1, 1, 0, true}, true, rng);
  b3 = ConvLayer<T>(name_ + ".b3", widths.r3, ConvSpec{widths.b3, 3, 1, 1, true}, true, rng);
  r5 = ConvLayer<T>(name_ + ".r5", in_channels, ConvSpec{widths.r5, 1, 1, 0, true}, true, rng);
  b5 = ConvLayer<T>(name_ + ".b5", widths.r5, ConvSpec{widths.b5, 5, 1, 2, true}, true, rng);
  bp = ConvLayer<T>(name_ + ".bp", in_channels, ConvSpec{widths.bp, 1, 1, 0, true}, true, rng);
}

template <class T>
BasicTensor<T> EdgeLiteBlock<T>::forward(const BasicTensor<T>& x, Tape* tape,
                                         const EdgeObserver<T>* observer) const {
  const auto slot = [&](auto member) { return tape != nullptr ? &(tape->*member) : nullptr; };
  std::array<BasicTensor<T>, 4> parts;
  parts[0] = b1.forward(x, slot(&Tape::b1));
  const auto reduced3 = r3.forward(x, slot(&Tape::r3));
  emit(observer, name_ + ".r3", reduced3);
  parts[1] = b3.forward(reduced3, slot(&Tape::b3));
  const auto reduced5 = r5.forward(x, slot(&Tape::r5));
  emit(observer, name_ + ".r5", reduced5);
  parts[2] = b5.forward(reduced5, slot(&Tape::b5));
  auto pooled = ops::pool2d_fwd(x, kBlockPool);
  if (tape != nullptr) tape->pool = std::move(pooled.ctx);
  parts[3] = bp.forward(pooled.value, slot(&Tape::bp));
  return tensor_concat_channels<T>(parts);
}

template <class T>
BasicTensor<T> EdgeLiteBlock<T>::backward(const BasicTensor<T>& grad_out, const Tape& tape) {
  const std::array<std::int64_t, 4> sizes = {widths_.b1, widths_.b3, widths_.b5, widths_.bp};
  auto g = tensor_split_channels<T>(grad_out, sizes);
  BasicTensor<T> gx = b1.backward(g[0], tape.b1, true);
  ops::add_inplace(gx, r3.backward(b3.backward(g[1], tape.b3, true), tape.r3, true));
  ops::add_inplace(gx, r5.backward(b5.backward(g[2], tape.b5, true), tape.r5, true));
  ops::add_inplace(gx, ops::pool2d_bwd(bp.backward(g[3], tape.bp, true), tape.pool));
  return gx;
}

template <class T>
BasicTensor<T> edgelite_block(const BasicTensor<T>& input, const EdgeLiteBlock<T>& block,
                              std::int64_t expected_out_channels) {
  require(block.out_channels() == expected_out_channels, ErrorKind::config,
          block.name() + ": widths sum to " + std::to_string(block.out_channels()) + ", expected " +
              std::to_string(expected_out_channels));
  return block.forward(input, nullptr, nullptr);
}

// ------------------------------------------------------------------ AuxHead

template <class T>
AuxHead<T>::AuxHead(std::string name, std::int64_t in_channels, const ModelConfig& config, Rng& rng)
    : dropout(config.aux_dropout), name_(std::move(name)) {
  conv = ConvLayer<T>(name_ + ".conv", in_channels, ops::ConvSpec{config.aux_conv, 1, 1, 0, true},
                      true, rng);
  // 14x14 -> avgpool 5/3 -> 4x4.
  const std::int64_t side = ops::output_size(14, kAuxPool.kernel, kAuxPool.stride, kAuxPool.padding);
  fc1 = LinearLayer<T>(name_ + ".fc1", config.aux_conv * side * side, config.aux_fc, true, rng);
  fc2 = LinearLayer<T>(name_ + ".fc2", config.aux_fc, config.num_classes, false, rng);
}

template <class T>
BasicTensor<T> AuxHead<T>::forward(const BasicTensor<T>& x, Mode mode, Rng& rng, Tape* tape) const {
  auto pooled = ops::pool2d_fwd(x, kAuxPool);
  auto c = conv.forward(pooled.value, tape != nullptr ? &tape->conv : nullptr);
  const Shape cs = c.shape();
  auto f1 = fc1.forward(c.reshaped({cs.n, cs.c * cs.h * cs.w, 1, 1}),
                        tape != nullptr ? &tape->fc1 : nullptr);
  auto dropped = ops::dropout_fwd(f1, dropout, mode, rng);
  auto out = fc2.forward(dropped.value, tape != nullptr ? &tape->fc2 : nullptr);
  if (tape != nullptr) {
    tape->pool = std::move(pooled.ctx);
    tape->conv_shape = cs;
    tape->drop = std::move(dropped.ctx);
  }
  return out;
}

template <class T>
BasicTensor<T> AuxHead<T>::backward(const BasicTensor<T>& grad_out, const Tape& tape) {
  auto g = fc2.backward(grad_out, tape.fc2, true);
  g = ops::dropout_bwd(g, tape.drop);
  g = fc1.backward(g, tape.fc1, true);
  g = conv.backward(g.reshaped(tape.conv_shape), tape.conv, true);
  return ops::pool2d_bwd(g, tape.pool);
}

// --------------------------------------------------------------- BasicModel

template <class T>
BasicModel<T>::BasicModel(const ModelConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  using ops::ConvSpec;
  const auto& s = config_.stem;
  stem[0] = ConvLayer<T>("stem.conv1", kInputChannels, ConvSpec{s[0], 7, 2, 3, true}, true, rng);
  stem[1] = ConvLayer<T>("stem.conv2", s[0], ConvSpec{s[1], 3, 1, 1, true}, true, rng);
  stem[2] = ConvLayer<T>("stem.conv3", s[1], ConvSpec{s[2], 3, 1, 1, true}, true, rng);
  stem[3] = ConvLayer<T>("stem.conv4", s[2], ConvSpec{s[3], 3, 1, 1, true}, true, rng);
  std::int64_t channels = s[3];
  for (std::size_t i = 0; i < kBlockCount; ++i) {
    blocks[i] = EdgeLiteBlock<T>("blocks." + std::to_string(i), channels, config_.blocks[i], rng);
    channels = blocks[i].out_channels();
  }
  fc = LinearLayer<T>("fc", channels, config_.num_classes, false, rng);
  if (config_.with_aux) {
    for (std::size_t k = 0; k < kAuxAttach.size(); ++k) {
      aux_.emplace_back("aux." + std::to_string(k), blocks[kAuxAttach[k]].out_channels(), config_, rng);
    }
  }
}

template <class T>
typename BasicModel<T>::Output BasicModel<T>::forward(const BasicTensor<T>& batch, Mode mode, Rng* rng,
                                                      Tape* tape,
                                                      const EdgeObserver<T>* observer) const {
  const Shape& is = batch.shape();
  require(is.n >= 1 && is.c == kInputChannels && is.h == kInputSize && is.w == kInputSize,
          ErrorKind::shape, "model input must be (n, 3, 224, 224), got " + is.str());
  const bool training = mode == Mode::train;
  Rng fallback(0);
  if (training) {
    require(rng != nullptr || (config_.dropout == 0.0 && (aux_.empty() || config_.aux_dropout == 0.0)),
            ErrorKind::contract, "train-mode forward with dropout needs an rng");
  }
  Rng& r = rng != nullptr ? *rng : fallback;
  if (tape != nullptr) {
    *tape = Tape{};
    tape->input_shape = is;
  }
  const auto stem_slot = [&](std::size_t i) { return tape != nullptr ? &tape->stem[i] : nullptr; };
  const auto pool = [&](const BasicTensor<T>& x, const ops::PoolSpec& spec,
                        ops::PoolCtx<T> Tape::*slot) {
    auto out = ops::pool2d_fwd(x, spec);
    if (tape != nullptr) tape->*slot = std::move(out.ctx);
    return std::move(out.value);
  };

  Output result;
  emit(observer, "input", batch);
  auto x = stem[0].forward(batch, stem_slot(0));
  emit(observer, "stem.conv1", x);
  x = pool(x, kStemPool1, &Tape::pool1);
  emit(observer, "stem.pool1", x);
  x = stem[1].forward(x, stem_slot(1));
  emit(observer, "stem.conv2", x);
  x = stem[2].forward(x, stem_slot(2));
  emit(observer, "stem.conv3", x);
  x = stem[3].forward(x, stem_slot(3));
  emit(observer, "stem.conv4", x);
  x = pool(x, kStemPool2, &Tape::pool2);
  emit(observer, "stem.pool2", x);

  std::size_t next_aux = 0;
  for (std::size_t i = 0; i < kBlockCount; ++i) {
    if (i == kBlocksBeforeReduction) {
      x = pool(x, kMidPool, &Tape::pool3);
      emit(observer, "pool3", x);
    }
    x = blocks[i].forward(x, tape != nullptr ? &tape->blocks[i] : nullptr, observer);
    emit(observer, blocks[i].name(), x);
    if (training && next_aux < aux_.size() && kAuxAttach[next_aux] == i) {
      typename AuxHead<T>::Tape* aux_tape = nullptr;
      if (tape != nullptr) aux_tape = &tape->aux.emplace_back();
      result.aux.push_back(aux_[next_aux].forward(x, mode, r, aux_tape));
      ++next_aux;
    }
  }
  x = pool(x, kFinalPool, &Tape::avgpool);
  emit(observer, "avgpool", x);
  if (tape != nullptr) tape->pooled_shape = x.shape();
  auto dropped = ops::dropout_fwd(x, config_.dropout, mode, r);
  if (tape != nullptr) tape->drop = std::move(dropped.ctx);
  emit(observer, "dropout", dropped.value);
  result.main = fc.forward(dropped.value, tape != nullptr ? &tape->fc : nullptr);
  emit(observer, "fc", result.main);
  if (tape != nullptr) tape->valid = true;
  return result;
}

template <class T>
void BasicModel<T>::backward(const Tape& tape, const BasicTensor<T>& grad_main,
                             std::span<const BasicTensor<T>> grad_aux) {
  require(tape.valid, ErrorKind::contract, "backward needs a tape from a taped forward");
  require(grad_aux.size() == tape.aux.size(), ErrorKind::contract,
          "expected " + std::to_string(tape.aux.size()) + " aux gradients");
  require(tape.aux.size() <= aux_.size(), ErrorKind::contract, "tape has aux heads the model lacks");

  auto g = fc.backward(grad_main, tape.fc, true);
  g = ops::dropout_bwd(g, tape.drop);
  g = ops::pool2d_bwd(g, tape.avgpool);
  for (std::size_t i = kBlockCount; i-- > 0;) {
    for (std::size_t k = 0; k < tape.aux.size(); ++k) {
      if (kAuxAttach[k] == i) ops::add_inplace(g, aux_[k].backward(grad_aux[k], tape.aux[k]));
    }
    g = blocks[i].backward(g, tape.blocks[i]);
    if (i == kBlocksBeforeReduction) g = ops::pool2d_bwd(g, tape.pool3);
  }
  g = ops::pool2d_bwd(g, tape.pool2);
  g = stem[3].backward(g, tape.stem[3], true);
  g = stem[2].backward(g, tape.stem[2], true);
  g = stem[1].backward(g, tape.stem[1], true);
  g = ops::pool2d_bwd(g, tape.pool1);
  stem[0].backward(g, tape.stem[0], false);
}

template <class T>
void BasicModel<T>::zero_grad() {
  for (auto* p : params()) {
    for (auto& v : p->grad.mutable_data()) v = T{0};
  }
}

template <class T>
std::vector<Param<T>*> BasicModel<T>::params() {
  std::vector<Param<T>*> out;
  const auto add_conv = [&](ConvLayer<T>& l) {
    out.push_back(&l.weight);
    if (l.spec().has_bias) out.push_back(&l.bias);
  };
  const auto add_linear = [&](LinearLayer<T>& l) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  };
  for (auto& l : stem) add_conv(l);
  for (auto& b : blocks) {
    for (auto* l : {&b.b1, &b.r3, &b.b3, &b.r5, &b.b5, &b.bp}) add_conv(*l);
  }
  add_linear(fc);
  for (auto& a : aux_) {
    add_conv(a.conv);
    add_linear(a.fc1);
    add_linear(a.fc2);
  }
  return out;
}

template <class T>
std::vector<const Param<T>*> BasicModel<T>::params() const {
  auto mut = const_cast<BasicModel*>(this)->params();
  return {mut.begin(), mut.end()};
}

template <class T>
const Param<T>* BasicModel<T>::find_param(std::string_view name) const {
  for (const auto* p : params()) {
    if (p->name == name) return p;
  }
  return nullptr;
}

template <class T>
Param<T>* BasicModel<T>::find_param(std::string_view name) {
  for (auto* p : params()) {
    if (p->name == name) return p;
  }
  return nullptr;
}

template <class T>
std::int64_t BasicModel<T>::param_count() const {
  std::int64_t total = 0;
  for (const auto* p : params()) total += static_cast<std::int64_t>(p->value.size());
  return total;
}

template <class T>
int BasicModel<T>::depth() const noexcept {
  return static_cast<int>(stem.size() + 2 * blocks.size() + 1);
}

template <class T>
StripStatus BasicModel<T>::strip_training_layers() {
  if (aux_.empty()) return StripStatus::already_stripped;
  aux_.clear();
  config_.with_aux = false;
  return StripStatus::stripped;
}

template <class T>
void BasicModel<T>::replace_head(std::int64_t new_classes, Rng& rng, bool freeze) {
  require(new_classes >= 2, ErrorKind::config, "a classifier head needs at least 2 classes");
  if (freeze) {
    for (auto* p : params()) p->trainable = false;
  }
  fc.weight.trainable = fc.bias.trainable = true;
  fc.reinitialize(new_classes, rng);
  for (auto& a : aux_) {
    a.fc2.weight.trainable = a.fc2.bias.trainable = true;
    a.fc2.reinitialize(new_classes, rng);
  }
  config_.num_classes = new_classes;
}

template <class T>
template <class U>
BasicModel<U> BasicModel<T>::cast() const {
  Rng scratch(0);
  BasicModel<U> out(config_, scratch);
  auto dst = out.params();
  const auto src = params();
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i]->value = tensor_cast<U>(src[i]->value);
    dst[i]->trainable = src[i]->trainable;
  }
  return out;
}

template <class T>
bool BasicModel<T>::same_weights(const BasicModel& other) const {
  const auto a = params();
  const auto b = other.params();
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i]->name != b[i]->name || !a[i]->value.identical(b[i]->value)) return false;
  }
  return true;
}

Model build_edgelite(HeadConfig head, const WidthsTable& widths, Rng& rng) {
  require(widths[kBlocksBeforeReduction - 1].out() == 832, ErrorKind::config,
          "blocks 1-5 must end at 832 channels, got " +
              std::to_string(widths[kBlocksBeforeReduction - 1].out()));
  require(widths[kBlockCount - 1].out() == 1024, ErrorKind::config,
          "blocks 6-7 must end at 1024 channels, got " + std::to_string(widths[kBlockCount - 1].out()));
  ModelConfig config = ModelConfig::edgelite(head);
  config.blocks = widths;
  return Model(config, rng);
}

Model build_test_profile(HeadConfig head, Rng& rng, double multiplier) {
  return Model(ModelConfig::scaled(head, multiplier), rng);
}

template class ConvLayer<float>;
template class ConvLayer<double>;
template class LinearLayer<float>;
template class LinearLayer<double>;
template class EdgeLiteBlock<float>;
template class EdgeLiteBlock<double>;
template class AuxHead<float>;
template class AuxHead<double>;
template class BasicModel<float>;
template class BasicModel<double>;
template Model64 Model::cast<double>() const;
template Model Model64::cast<float>() const;
template Tensor edgelite_block(const Tensor&, const EdgeLiteBlock<float>&, std::int64_t);
template Tensor64 edgelite_block(const Tensor64&, const EdgeLiteBlock<double>&, std::int64_t);

}  // namespace edgelite
