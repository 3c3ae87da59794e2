#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "edgelite/error.hpp"
#include "edgelite/memory.hpp"
#include "edgelite/rng.hpp"

namespace edgelite {

/// Dimensions of a batch-major (n, c, h, w) tensor.
struct Shape {
  std::int64_t n = 0;
  std::int64_t c = 0;
  std::int64_t h = 0;
  std::int64_t w = 0;

  /// Element count; throws a size error on overflow or a shape error if any
  /// dimension is below 1.
  std::size_t count() const;
  bool valid() const noexcept { return n >= 1 && c >= 1 && h >= 1 && w >= 1; }
  std::string str() const;

  friend bool operator==(const Shape&, const Shape&) = default;
};

/// Affine mapping real = scale * (q - zero_point).
struct QuantParams {
  float scale = 1.0f;
  std::int32_t zero_point = 0;

  friend bool operator==(const QuantParams&, const QuantParams&) = default;
};

enum class DType : std::uint8_t { f32 = 0, i8 = 1, f64 = 2 };

template <class T>
constexpr DType dtype_of() {
  if constexpr (std::is_same_v<T, float>) return DType::f32;
  else if constexpr (std::is_same_v<T, double>) return DType::f64;
  else {
    static_assert(std::is_same_v<T, std::int8_t>, "unsupported tensor element type");
    return DType::i8;
  }
}

template <class T>
concept TensorElement =
    std::is_same_v<T, float> || std::is_same_v<T, double> || std::is_same_v<T, std::int8_t>;

/// Dense n-c-h-w tensor with shared, copy-on-write storage.
///
/// Copies share the buffer; `mutable_data()` detaches first when the buffer
/// is shared, so a tensor handed to another owner never changes under it.
/// int8 tensors always carry QuantParams, floating tensors never do.
template <TensorElement T>
class BasicTensor {
 public:
  using value_type = T;
  static constexpr bool is_quantized = std::is_same_v<T, std::int8_t>;

  BasicTensor() = default;

  /// Zero-filled floating tensor.
  explicit BasicTensor(const Shape& shape)
    requires(!is_quantized);

  /// int8 tensor filled with the zero point (dequantizes to 0.0).
  BasicTensor(const Shape& shape, QuantParams quant)
    requires(is_quantized);

  BasicTensor(const Shape& shape, std::span<const T> values)
    requires(!is_quantized);
  BasicTensor(const Shape& shape, std::span<const T> values, QuantParams quant)
    requires(is_quantized);

  bool empty() const noexcept { return storage_ == nullptr; }
  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return storage_ ? storage_->size() : 0; }
  std::size_t bytes() const noexcept { return size() * sizeof(T); }
  const std::optional<QuantParams>& quant() const noexcept { return quant_; }

  std::span<const T> data() const noexcept {
    return storage_ ? std::span<const T>(storage_->data(), storage_->size()) : std::span<const T>();
  }
  std::span<T> mutable_data();

  std::size_t index(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const noexcept {
    return static_cast<std::size_t>(((n * shape_.c + c) * shape_.h + h) * shape_.w + w);
  }
  T at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return (*storage_)[index(n, c, h, w)];
  }
  void set(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w, T v) {
    mutable_data()[index(n, c, h, w)] = v;
  }

  /// Same elements viewed under another shape of equal count; shares storage.
  BasicTensor reshaped(const Shape& shape) const;

  bool shares_storage_with(const BasicTensor& other) const noexcept {
    return storage_ != nullptr && storage_ == other.storage_;
  }

  /// Bitwise equality of shape, quant metadata and elements.
  bool identical(const BasicTensor& other) const;

 private:
  Shape shape_{};
  std::shared_ptr<ScratchVector<T>> storage_;
  std::optional<QuantParams> quant_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;
using QTensor = BasicTensor<std::int8_t>;

template <TensorElement T>
  requires(!std::is_same_v<T, std::int8_t>)
BasicTensor<T> tensor_zeros(const Shape& shape) {
  return BasicTensor<T>(shape);
}

/// int8 zeros; without explicit params the tensor gets scale 1, zero point 0.
QTensor tensor_zeros_q(const Shape& shape, std::optional<QuantParams> quant = std::nullopt);

/// He-normal initialisation: N(0, sqrt(2 / fan_in)).
template <TensorElement T>
BasicTensor<T> tensor_init_he(const Shape& shape, std::int64_t fan_in, Rng& rng);

/// Concatenates along channels in the given order. Parts must agree on n, h,
/// w (shape error) and, for int8, on quant params (type error).
template <TensorElement T>
BasicTensor<T> tensor_concat_channels(std::span<const BasicTensor<T>> parts);

/// Inverse of concat: splits into consecutive channel groups of the given sizes.
template <TensorElement T>
std::vector<BasicTensor<T>> tensor_split_channels(const BasicTensor<T>& input,
                                                  std::span<const std::int64_t> channels);

/// Element-type conversion between floating tensors (used for fp64 checks).
template <class To, class From>
BasicTensor<To> tensor_cast(const BasicTensor<From>& input) {
  BasicTensor<To> out(input.shape());
  auto dst = out.mutable_data();
  auto src = input.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<To>(src[i]);
  return out;
}

}  // namespace edgelite
