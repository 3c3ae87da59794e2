#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "edgelite/model.hpp"
#include "edgelite/serialize.hpp"
#include "edgelite/tensor.hpp"

namespace edgelite {

/// q = clamp(round_half_even(r / scale) + zero_point, -128, 127).
std::int8_t quantize_value(float r, QuantParams qp);
/// scale * (q - zero_point).
float dequantize_value(std::int8_t q, QuantParams qp);

QTensor quantize_tensor(const Tensor& t, QuantParams qp);
Tensor dequantize_tensor(const QTensor& t);

/// Asymmetric params over [min, max] widened to contain 0 so padding and
/// ReLU floors are exact: scale = (max - min) / 255, zero_point =
/// round(-min / scale) - 128. A degenerate range yields scale 1, zero point 0.
QuantParams params_from_range(float min, float max);

struct ValueRange {
  float min = 0.0f;
  float max = 0.0f;
  friend bool operator==(const ValueRange&, const ValueRange&) = default;
};

/// Running min/max per tensor name.
class CalibrationStats {
 public:
  void observe(const std::string& name, std::span<const float> values);
  void finish_batch() { ++batches_; }

  std::size_t batch_count() const noexcept { return batches_; }
  const std::map<std::string, ValueRange>& ranges() const noexcept { return ranges_; }
  std::optional<ValueRange> range(const std::string& name) const;

  /// QuantParams per recorded tensor; calibration error before any batch.
  std::map<std::string, QuantParams> params() const;

  /// {"name": {"min": ..., "max": ...}, ...}
  std::string to_json() const;
  static CalibrationStats from_json(const std::string& text);

 private:
  std::map<std::string, ValueRange> ranges_;
  std::size_t batches_ = 0;
};

/// Runs infer-mode forwards and records every activation edge and weight
/// range. Throws a data error on an empty stream.
CalibrationStats calibrate(const Model& model, std::span<const Tensor> batches);
CalibrationStats calibrate(const Model& model, const std::function<std::optional<Tensor>()>& next_batch);

/// Fixed-point multiplier m0 * 2^-shift (m0 in Q31) for int32 -> int8 rescaling.
struct RequantMultiplier {
  std::int32_t m0 = 0;
  int shift = 31;

  static RequantMultiplier from_real(double real);
  /// round_half_even(acc * real) in 64-bit integer arithmetic.
  std::int32_t apply(std::int32_t acc) const noexcept;
};

/// Integer convolution (or linear map on (n, c, 1, 1) inputs): int8 in, int32
/// accumulate, int8 out at the output edge's params.
class QConv {
 public:
  QConv() = default;
  QConv(std::string name, ops::ConvSpec spec, bool relu, QTensor weight, std::vector<std::int32_t> bias,
        QuantParams in, QuantParams out);

  QTensor forward(const QTensor& input) const;

  const std::string& name() const noexcept { return name_; }
  const ops::ConvSpec& spec() const noexcept { return spec_; }
  const QTensor& weight() const noexcept { return weight_; }
  const std::vector<std::int32_t>& bias() const noexcept { return bias_; }
  QuantParams input_params() const noexcept { return in_; }
  QuantParams output_params() const noexcept { return out_; }
  bool relu() const noexcept { return relu_; }
  /// Scale of the int32 bias: input scale times weight scale.
  float bias_scale() const noexcept { return in_.scale * weight_.quant()->scale; }

 private:
  std::string name_;
  ops::ConvSpec spec_{};
  bool relu_ = true;
  QTensor weight_;
  std::vector<std::int32_t> bias_;
  QuantParams in_{};
  QuantParams out_{};
  ScratchVector<std::int16_t> centered_;  // weight - zero point, rows padded to padded_depth_
  std::int64_t padded_depth_ = 0;
  RequantMultiplier multiplier_{};
};

struct QBlock {
  QConv b1, r3, b3, r5, b5, bp;
};

/// Int8 EdgeLite graph (infer mode only).
class QuantizedModel {
 public:
  /// qforward: quantizes the float input, runs integer kernels, returns
  /// dequantized logits (n, k, 1, 1).
  Tensor forward(const Tensor& batch) const;

  const ModelConfig& config() const noexcept { return config_; }
  const std::map<std::string, QuantParams>& activations() const noexcept { return edges_; }
  std::vector<const QConv*> layers() const;
  std::int64_t param_count() const;

  ModelFile to_file() const;
  static QuantizedModel from_file(const ModelFile& file);

 private:
  friend QuantizedModel quantize_model(const Model&, const CalibrationStats&);
  friend class QuantizedModelBuilder;

  ModelConfig config_{};
  std::map<std::string, QuantParams> edges_;
  std::array<QConv, 4> stem_;
  std::array<QBlock, kBlockCount> blocks_;
  QConv fc_;
};

/// Post-training quantization of an infer-mode (stripped) float model.
/// Train-mode models raise a contract error.
QuantizedModel quantize_model(const Model& model, const CalibrationStats& stats);

inline Tensor qforward(const QuantizedModel& model, const Tensor& batch) { return model.forward(batch); }

void save_model(const QuantizedModel& model, const std::filesystem::path& path);
QuantizedModel load_quantized_model(const std::filesystem::path& path);
std::size_t serialized_size(const QuantizedModel& model);

using AnyModel = std::variant<Model, QuantizedModel>;

/// Loads either kind of model file.
AnyModel load_model(const std::filesystem::path& path);

/// Quantizes a loaded model; an already-int8 model is a contract error.
QuantizedModel quantize_model(const AnyModel& model, const CalibrationStats& stats);

/// Infer-mode logits of either model kind.
Tensor predict_logits(const AnyModel& model, const Tensor& batch);

}  // namespace edgelite
