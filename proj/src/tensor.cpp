#include "edgelite/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace edgelite {

std::size_t Shape::count() const {
  require(valid(), ErrorKind::shape, "every dimension must be >= 1, got " + str());
  std::uint64_t total = 1;
  for (auto d : {n, c, h, w}) {
    if (__builtin_mul_overflow(total, static_cast<std::uint64_t>(d), &total)) {
      raise(ErrorKind::size, "element count of " + str() + " overflows");
    }
  }
  // Leave room for the widest element type.
  require(total <= std::numeric_limits<std::size_t>::max() / sizeof(double), ErrorKind::size,
          "element count of " + str() + " exceeds the addressable range");
  return static_cast<std::size_t>(total);
}

std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
         std::to_string(w) + ")";
}

template <TensorElement T>
BasicTensor<T>::BasicTensor(const Shape& shape)
  requires(!is_quantized)
    : shape_(shape), storage_(std::make_shared<ScratchVector<T>>(shape.count(), T{0})) {
}

template <TensorElement T>
BasicTensor<T>::BasicTensor(const Shape& shape, QuantParams quant)
  requires(is_quantized)
    : shape_(shape), quant_(quant) {
  require(quant.scale > 0.0f && std::isfinite(quant.scale), ErrorKind::spec,
          "quant scale must be positive and finite");
  require(quant.zero_point >= -128 && quant.zero_point <= 127, ErrorKind::spec,
          "zero point must lie in [-128, 127]");
  storage_ = std::make_shared<ScratchVector<T>>(shape.count(), static_cast<T>(quant.zero_point));
}

template <TensorElement T>
BasicTensor<T>::BasicTensor(const Shape& shape, std::span<const T> values)
  requires(!is_quantized)
    : BasicTensor(shape) {
  require(values.size() == storage_->size(), ErrorKind::shape,
          "value count " + std::to_string(values.size()) + " does not match " + shape.str());
  std::copy(values.begin(), values.end(), storage_->begin());
}

template <TensorElement T>
BasicTensor<T>::BasicTensor(const Shape& shape, std::span<const T> values, QuantParams quant)
  requires(is_quantized)
    : BasicTensor(shape, quant) {
  require(values.size() == storage_->size(), ErrorKind::shape,
          "value count " + std::to_string(values.size()) + " does not match " + shape.str());
  std::copy(values.begin(), values.end(), storage_->begin());
}

template <TensorElement T>
std::span<T> BasicTensor<T>::mutable_data() {
  if (!storage_) return {};
  if (storage_.use_count() > 1) storage_ = std::make_shared<ScratchVector<T>>(*storage_);
  return {storage_->data(), storage_->size()};
}

template <TensorElement T>
BasicTensor<T> BasicTensor<T>::reshaped(const Shape& shape) const {
  require(shape.count() == size(), ErrorKind::shape,
          "cannot view " + shape_.str() + " as " + shape.str());
  BasicTensor out = *this;
  out.shape_ = shape;
  return out;
}

template <TensorElement T>
bool BasicTensor<T>::identical(const BasicTensor& other) const {
  if (shape_ != other.shape_ || quant_ != other.quant_ || size() != other.size()) return false;
  if (size() == 0) return true;
  return std::memcmp(storage_->data(), other.storage_->data(), bytes()) == 0;
}

QTensor tensor_zeros_q(const Shape& shape, std::optional<QuantParams> quant) {
  return QTensor(shape, quant.value_or(QuantParams{1.0f, 0}));
}

template <TensorElement T>
BasicTensor<T> tensor_init_he(const Shape& shape, std::int64_t fan_in, Rng& rng) {
  static_assert(!BasicTensor<T>::is_quantized, "He init produces floating tensors");
  require(fan_in >= 1, ErrorKind::spec, "fan_in must be >= 1");
  BasicTensor<T> out(shape);
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : out.mutable_data()) v = static_cast<T>(rng.normal(0.0, stddev));
  return out;
}

template <TensorElement T>
BasicTensor<T> tensor_concat_channels(std::span<const BasicTensor<T>> parts) {
  require(parts.size() >= 2, ErrorKind::contract, "concat needs at least two parts");
  const Shape& first = parts.front().shape();
  std::int64_t channels = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    require(s.n == first.n && s.h == first.h && s.w == first.w, ErrorKind::shape,
            "concat parts disagree on n/h/w: " + first.str() + " vs " + s.str());
    if constexpr (BasicTensor<T>::is_quantized) {
      require(p.quant() == parts.front().quant(), ErrorKind::type,
              "int8 concat parts must share quant params");
    }
    channels += s.c;
  }
  const Shape out_shape{first.n, channels, first.h, first.w};
  BasicTensor<T> out = [&] {
    if constexpr (BasicTensor<T>::is_quantized) return BasicTensor<T>(out_shape, *parts.front().quant());
    else return BasicTensor<T>(out_shape);
  }();
  auto dst = out.mutable_data();
  const std::size_t plane = static_cast<std::size_t>(first.h * first.w);
  for (std::int64_t n = 0; n < first.n; ++n) {
    std::int64_t offset = 0;
    for (const auto& p : parts) {
      const std::size_t len = static_cast<std::size_t>(p.shape().c) * plane;
      const T* src = p.data().data() + static_cast<std::size_t>(n) * len;
      std::copy(src, src + len, dst.data() + out.index(n, offset, 0, 0));
      offset += p.shape().c;
    }
  }
  return out;
}

template <TensorElement T>
std::vector<BasicTensor<T>> tensor_split_channels(const BasicTensor<T>& input,
                                                  std::span<const std::int64_t> channels) {
  const Shape& s = input.shape();
  std::int64_t total = 0;
  for (auto c : channels) {
    require(c >= 1, ErrorKind::shape, "split sizes must be >= 1");
    total += c;
  }
  require(total == s.c, ErrorKind::shape, "split sizes do not sum to " + std::to_string(s.c));
  std::vector<BasicTensor<T>> parts;
  parts.reserve(channels.size());
  const std::size_t plane = static_cast<std::size_t>(s.h * s.w);
  std::int64_t offset = 0;
  for (auto c : channels) {
    const Shape ps{s.n, c, s.h, s.w};
    BasicTensor<T> part = [&] {
      if constexpr (BasicTensor<T>::is_quantized) return BasicTensor<T>(ps, *input.quant());
      else return BasicTensor<T>(ps);
    }();
    auto dst = part.mutable_data();
    for (std::int64_t n = 0; n < s.n; ++n) {
      const T* src = input.data().data() + input.index(n, offset, 0, 0);
      std::copy(src, src + static_cast<std::size_t>(c) * plane,
                dst.data() + static_cast<std::size_t>(n * c) * plane);
    }
    parts.push_back(std::move(part));
    offset += c;
  }
  return parts;
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template class BasicTensor<std::int8_t>;

template Tensor tensor_init_he<float>(const Shape&, std::int64_t, Rng&);
template Tensor64 tensor_init_he<double>(const Shape&, std::int64_t, Rng&);
template Tensor tensor_concat_channels<float>(std::span<const Tensor>);
template Tensor64 tensor_concat_channels<double>(std::span<const Tensor64>);
template QTensor tensor_concat_channels<std::int8_t>(std::span<const QTensor>);
template std::vector<Tensor> tensor_split_channels<float>(const Tensor&, std::span<const std::int64_t>);
template std::vector<Tensor64> tensor_split_channels<double>(const Tensor64&,
                                                             std::span<const std::int64_t>);
template std::vector<QTensor> tensor_split_channels<std::int8_t>(const QTensor&,
                                                                 std::span<const std::int64_t>);

}  // namespace edgelite
