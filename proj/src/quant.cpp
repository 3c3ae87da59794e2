#include "edgelite/quant.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "json.hpp"

#if defined(__AVX512F__) && defined(__AVX512VNNI__)
#include <immintrin.h>
#define EDGELITE_VNNI 1
#else
#define EDGELITE_VNNI 0
#endif

namespace edgelite {

namespace {

constexpr std::int64_t kMaxAccumulateTerms =
    (std::numeric_limits<std::int32_t>::max() / 2) / (255 * 255);

std::int32_t saturate_i32(double v) {
  constexpr double lo = std::numeric_limits<std::int32_t>::min();
  constexpr double hi = std::numeric_limits<std::int32_t>::max();
  return static_cast<std::int32_t>(std::clamp(v, lo, hi));
}

struct LayerPlan {
  std::string name;
  ops::ConvSpec spec;
  bool relu = true;
  std::string in_edge;
  std::string out_edge;
};

// Every integer layer with the activation edges it reads and writes. Pools
// keep their input's params; branch outputs write straight into their
// block's concat params.
std::vector<LayerPlan> plan_layers(const ModelConfig& config) {
  using ops::ConvSpec;
  std::vector<LayerPlan> plan;
  const auto& s = config.stem;
  plan.push_back({"stem.conv1", ConvSpec{s[0], 7, 2, 3, true}, true, "input", "stem.conv1"});
  plan.push_back({"stem.conv2", ConvSpec{s[1], 3, 1, 1, true}, true, "stem.conv1", "stem.conv2"});
  plan.push_back({"stem.conv3", ConvSpec{s[2], 3, 1, 1, true}, true, "stem.conv2", "stem.conv3"});
  plan.push_back({"stem.conv4", ConvSpec{s[3], 3, 1, 1, true}, true, "stem.conv3", "stem.conv4"});
  std::string in = "stem.conv4";
  for (std::size_t i = 0; i < kBlockCount; ++i) {
    const auto& w = config.blocks[i];
    const std::string b = "blocks." + std::to_string(i);
    plan.push_back({b + ".b1", ConvSpec{w.b1, 1, 1, 0, true}, true, in, b});
    plan.push_back({b + ".r3", ConvSpec{w.r3, 1, 1, 0, true}, true, in, b + ".r3"});
    plan.push_back({b + ".b3", ConvSpec{w.b3, 3, 1, 1, true}, true, b + ".r3", b});
    plan.push_back({b + ".r5", ConvSpec{w.r5, 1, 1, 0, true}, true, in, b + ".r5"});
    plan.push_back({b + ".b5", ConvSpec{w.b5, 5, 1, 2, true}, true, b + ".r5", b});
    plan.push_back({b + ".bp", ConvSpec{w.bp, 1, 1, 0, true}, true, in, b});
    in = b;
  }
  plan.push_back({"fc", ConvSpec{config.num_classes, 1, 1, 0, true}, false, in, "fc"});
  return plan;
}

std::vector<std::string> activation_edges(const ModelConfig& config) {
  std::vector<std::string> edges = {"input"};
  for (const auto& l : plan_layers(config)) {
    if (std::find(edges.begin(), edges.end(), l.out_edge) == edges.end()) edges.push_back(l.out_edge);
  }
  return edges;
}

constexpr std::int64_t kDotLanes = 32;

#if EDGELITE_VNNI
// Sixteen dot products over kp (a multiple of 32) int16 lanes: rows of `w`
// against rows of `x`, both with row stride kp.
void dot4x4(const std::int16_t* w, const std::int16_t* x, std::int64_t kp, std::int32_t out[4][4]) {
  __m512i acc[4][4];
  for (auto& row : acc) {
    for (auto& v : row) v = _mm512_setzero_si512();
  }
  for (std::int64_t t = 0; t < kp; t += kDotLanes) {
    __m512i xv[4];
    for (int b = 0; b < 4; ++b) xv[b] = _mm512_loadu_si512(x + b * kp + t);
    for (int a = 0; a < 4; ++a) {
      const __m512i wv = _mm512_loadu_si512(w + a * kp + t);
      for (int b = 0; b < 4; ++b) acc[a][b] = _mm512_dpwssd_epi32(acc[a][b], wv, xv[b]);
    }
  }
  for (int a = 0; a < 4; ++a) {
    for (int b = 0; b < 4; ++b) out[a][b] = _mm512_reduce_add_epi32(acc[a][b]);
  }
}
#endif

std::int32_t dot(const std::int16_t* __restrict a, const std::int16_t* __restrict b, std::int64_t n) {
  std::int32_t acc = 0;
  for (std::int64_t i = 0; i < n; ++i) acc += static_cast<std::int32_t>(a[i]) * b[i];
  return acc;
}

QTensor qpool(const QTensor& input, const ops::PoolSpec& spec) {
  const Shape& is = input.shape();
  const QuantParams qp = *input.quant();
  const Shape os{is.n, is.c, ops::output_size(is.h, spec.kernel, spec.stride, spec.padding),
                 ops::output_size(is.w, spec.kernel, spec.stride, spec.padding)};
  QTensor out(os, qp);
  auto dst = out.mutable_data();
  const std::int8_t* src = input.data().data();
  const std::int32_t area = static_cast<std::int32_t>(spec.kernel * spec.kernel);
  std::size_t o = 0;
  for (std::int64_t nc = 0; nc < is.n * is.c; ++nc) {
    const std::int8_t* plane = src + nc * is.h * is.w;
    for (std::int64_t oy = 0; oy < os.h; ++oy) {
      const std::int64_t y0 = oy * spec.stride - spec.padding;
      for (std::int64_t ox = 0; ox < os.w; ++ox, ++o) {
        const std::int64_t x0 = ox * spec.stride - spec.padding;
        if (spec.kind == ops::PoolKind::max) {
          std::int8_t best = std::numeric_limits<std::int8_t>::min();
          for (std::int64_t y = std::max<std::int64_t>(y0, 0); y < std::min(y0 + spec.kernel, is.h); ++y) {
            for (std::int64_t x = std::max<std::int64_t>(x0, 0); x < std::min(x0 + spec.kernel, is.w); ++x) {
              best = std::max(best, plane[y * is.w + x]);
            }
          }
          dst[o] = best;
        } else {
          // Padded cells hold the zero point, i.e. real 0.
          std::int32_t sum = 0;
          std::int32_t inside = 0;
          for (std::int64_t y = std::max<std::int64_t>(y0, 0); y < std::min(y0 + spec.kernel, is.h); ++y) {
            for (std::int64_t x = std::max<std::int64_t>(x0, 0); x < std::min(x0 + spec.kernel, is.w); ++x) {
              sum += plane[y * is.w + x];
              ++inside;
            }
          }
          sum += (area - inside) * qp.zero_point;
          const double mean = std::nearbyint(static_cast<double>(sum) / area);
          dst[o] = static_cast<std::int8_t>(std::clamp(mean, -128.0, 127.0));
        }
      }
    }
  }
  return out;
}

std::vector<std::uint8_t> raw_bytes(const void* data, std::size_t bytes) {
  std::vector<std::uint8_t> raw(bytes);
  std::memcpy(raw.data(), data, bytes);
  return raw;
}

std::array<std::uint32_t, 4> dims(const Shape& s) {
  return {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c),
          static_cast<std::uint32_t>(s.h), static_cast<std::uint32_t>(s.w)};
}

}  // namespace

// ------------------------------------------------------------ scalar maps

std::int8_t quantize_value(float r, QuantParams qp) {
  const double q = std::nearbyint(static_cast<double>(r) / static_cast<double>(qp.scale)) + qp.zero_point;
  return static_cast<std::int8_t>(std::clamp(q, -128.0, 127.0));
}

float dequantize_value(std::int8_t q, QuantParams qp) {
  return qp.scale * static_cast<float>(static_cast<std::int32_t>(q) - qp.zero_point);
}

QTensor quantize_tensor(const Tensor& t, QuantParams qp) {
  QTensor out(t.shape(), qp);
  auto dst = out.mutable_data();
  const auto src = t.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = quantize_value(src[i], qp);
  return out;
}

Tensor dequantize_tensor(const QTensor& t) {
  Tensor out(t.shape());
  auto dst = out.mutable_data();
  const auto src = t.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = dequantize_value(src[i], *t.quant());
  return out;
}

QuantParams params_from_range(float min, float max) {
  require(min <= max, ErrorKind::calibration, "range min exceeds max");
  min = std::min(min, 0.0f);
  max = std::max(max, 0.0f);
  if (min == max) return {1.0f, 0};
  const float scale = (max - min) / 255.0f;
  const double zp = std::nearbyint(-static_cast<double>(min) / static_cast<double>(scale)) - 128.0;
  return {scale, static_cast<std::int32_t>(std::clamp(zp, -128.0, 127.0))};
}

// -------------------------------------------------------------- calibration

void CalibrationStats::observe(const std::string& name, std::span<const float> values) {
  if (values.empty()) return;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  auto [it, fresh] = ranges_.try_emplace(name, ValueRange{*lo, *hi});
  if (!fresh) {
    it->second.min = std::min(it->second.min, *lo);
    it->second.max = std::max(it->second.max, *hi);
  }
}

std::optional<ValueRange> CalibrationStats::range(const std::string& name) const {
  auto it = ranges_.find(name);
  if (it == ranges_.end()) return std::nullopt;
  return it->second;
}

std::map<std::string, QuantParams> CalibrationStats::params() const {
  require(batches_ >= 1, ErrorKind::calibration, "no calibration batches recorded");
  std::map<std::string, QuantParams> out;
  for (const auto& [name, r] : ranges_) out.emplace(name, params_from_range(r.min, r.max));
  return out;
}

std::string CalibrationStats::to_json() const {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [name, r] : ranges_) j[name] = {{"min", r.min}, {"max", r.max}};
  return j.dump(2);
}

CalibrationStats CalibrationStats::from_json(const std::string& text) {
  CalibrationStats stats;
  try {
    const auto j = nlohmann::json::parse(text);
    for (const auto& [name, r] : j.items()) {
      stats.ranges_[name] = {r.at("min").get<float>(), r.at("max").get<float>()};
    }
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorKind::decode, std::string("calibration json: ") + e.what());
  }
  stats.batches_ = stats.ranges_.empty() ? 0 : 1;
  return stats;
}

CalibrationStats calibrate(const Model& model, const std::function<std::optional<Tensor>()>& next_batch) {
  CalibrationStats stats;
  const EdgeObserver<float> observer = [&](std::string_view edge, const Tensor& t) {
    stats.observe(std::string(edge), t.data());
  };
  while (auto batch = next_batch()) {
    model.forward(*batch, Mode::infer, nullptr, nullptr, &observer);
    stats.finish_batch();
  }
  require(stats.batch_count() >= 1, ErrorKind::data, "calibration stream is empty");
  for (const auto* p : model.params()) {
    if (p->name.ends_with(".weight")) stats.observe(p->name, p->value.data());
  }
  return stats;
}

CalibrationStats calibrate(const Model& model, std::span<const Tensor> batches) {
  std::size_t next = 0;
  return calibrate(model, [&]() -> std::optional<Tensor> {
    if (next == batches.size()) return std::nullopt;
    return batches[next++];
  });
}

// ----------------------------------------------------------- requantization

RequantMultiplier RequantMultiplier::from_real(double real) {
  require(real > 0.0 && std::isfinite(real), ErrorKind::contract, "requant multiplier must be positive");
  int exponent = 0;
  const double fraction = std::frexp(real, &exponent);  // real = fraction * 2^exponent
  std::int64_t m0 = std::llround(fraction * static_cast<double>(1LL << 31));
  if (m0 == (1LL << 31)) {
    m0 /= 2;
    ++exponent;
  }
  RequantMultiplier m;
  m.shift = 31 - exponent;
  require(m.shift >= 1, ErrorKind::contract, "requant multiplier too large");
  if (m.shift > 62) return {0, 31};
  m.m0 = static_cast<std::int32_t>(m0);
  return m;
}

std::int32_t RequantMultiplier::apply(std::int32_t acc) const noexcept {
  const std::int64_t prod = static_cast<std::int64_t>(acc) * m0;
  const std::int64_t q = prod >> shift;  // floor
  const std::int64_t rem = prod & ((std::int64_t{1} << shift) - 1);
  const std::int64_t half = std::int64_t{1} << (shift - 1);
  return static_cast<std::int32_t>(q + ((rem > half) | ((rem == half) & (q & 1))));
}

// -------------------------------------------------------------------- QConv

QConv::QConv(std::string name, ops::ConvSpec spec, bool relu, QTensor weight,
             std::vector<std::int32_t> bias, QuantParams in, QuantParams out)
    : name_(std::move(name)), spec_(spec), relu_(relu), weight_(std::move(weight)),
      bias_(std::move(bias)), in_(in), out_(out) {
  const Shape& ws = weight_.shape();
  require(ws.n == spec.out_channels && ws.h == spec.kernel && ws.w == spec.kernel, ErrorKind::shape,
          name_ + ": weight " + ws.str() + " does not match its spec");
  require(static_cast<std::int64_t>(bias_.size()) == spec.out_channels, ErrorKind::shape,
          name_ + ": bias length mismatch");
  const std::int64_t terms = ws.c * ws.h * ws.w;
  require(terms <= kMaxAccumulateTerms, ErrorKind::contract,
          name_ + ": " + std::to_string(terms) + " accumulation terms could overflow int32");
  const QuantParams wq = *weight_.quant();
  padded_depth_ = (terms + kDotLanes - 1) / kDotLanes * kDotLanes;
  centered_.assign(static_cast<std::size_t>(spec.out_channels * padded_depth_), 0);
  const auto w = weight_.data();
  for (std::int64_t o = 0; o < spec.out_channels; ++o) {
    for (std::int64_t t = 0; t < terms; ++t) {
      centered_[o * padded_depth_ + t] =
          static_cast<std::int16_t>(static_cast<std::int32_t>(w[o * terms + t]) - wq.zero_point);
    }
  }
  multiplier_ = RequantMultiplier::from_real(static_cast<double>(bias_scale()) / out_.scale);
}

QTensor QConv::forward(const QTensor& input) const {
  const Shape& is = input.shape();
  require(input.quant() == in_, ErrorKind::contract, name_ + ": input carries unexpected quant params");
  require(is.c == weight_.shape().c, ErrorKind::shape, name_ + ": channel mismatch");
  const std::int64_t k = spec_.kernel;
  const std::int64_t s = spec_.stride;
  const std::int64_t pad = spec_.padding;
  const std::int64_t oh = ops::output_size(is.h, k, s, pad);
  const std::int64_t ow = ops::output_size(is.w, k, s, pad);
  const std::int64_t channels_out = spec_.out_channels;
  const std::int64_t kp = padded_depth_;
  const std::int64_t positions = oh * ow;
  QTensor out({is.n, channels_out, oh, ow}, out_);
  auto dst = out.mutable_data();
  const std::int32_t zp_in = in_.zero_point;
  const std::int32_t zp_out = out_.zero_point;
  const std::int32_t floor_q = relu_ ? std::max(-128, zp_out) : -128;
  constexpr std::int64_t kTile = 64;
  ScratchVector<std::int32_t> accs(static_cast<std::size_t>(channels_out * kTile));
  const auto emit = [&](std::int64_t o, std::int64_t p, std::int32_t acc) { accs[o * kTile + p] = acc; };

  // Patch-major, zero-point-centred patches, zero padded to kp.
  ScratchVector<std::int16_t> patches(static_cast<std::size_t>(positions * kp), 0);
  for (std::int64_t n = 0; n < is.n; ++n) {
    const std::int8_t* x = input.data().data() + n * is.c * is.h * is.w;
    for (std::int64_t oy = 0; oy < oh; ++oy) {
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        std::int16_t* row = patches.data() + (oy * ow + ox) * kp;
        const std::int64_t x0 = ox * s - pad;
        const std::int64_t j_lo = std::max<std::int64_t>(0, -x0);
        const std::int64_t j_hi = std::min(k, is.w - x0);
        for (std::int64_t c = 0; c < is.c; ++c) {
          const std::int8_t* plane = x + c * is.h * is.w;
          for (std::int64_t i = 0; i < k; ++i, row += k) {
            const std::int64_t iy = oy * s + i - pad;
            if (iy < 0 || iy >= is.h) {
              std::fill_n(row, k, std::int16_t{0});
              continue;
            }
            const std::int8_t* line = plane + iy * is.w + x0;
            for (std::int64_t j = 0; j < j_lo; ++j) row[j] = 0;
            for (std::int64_t j = j_lo; j < j_hi; ++j) row[j] = static_cast<std::int16_t>(line[j] - zp_in);
            for (std::int64_t j = std::max(j_hi, j_lo); j < k; ++j) row[j] = 0;
          }
        }
      }
    }
    std::int8_t* y = dst.data() + n * channels_out * positions;
    for (std::int64_t p0 = 0; p0 < positions; p0 += kTile) {
      const std::int64_t p1 = std::min(p0 + kTile, positions);
      const std::int16_t* tile = patches.data() + p0 * kp;
      std::int64_t o = 0;
#if EDGELITE_VNNI
      for (; o + 4 <= channels_out; o += 4) {
        std::int64_t p = p0;
        for (; p + 4 <= p1; p += 4) {
          std::int32_t acc[4][4];
          dot4x4(centered_.data() + o * kp, tile + (p - p0) * kp, kp, acc);
          for (int a = 0; a < 4; ++a) {
            for (int b = 0; b < 4; ++b) emit(o + a, p - p0 + b, acc[a][b]);
          }
        }
        for (; p < p1; ++p) {
          for (int a = 0; a < 4; ++a) emit(o + a, p - p0, dot(centered_.data() + (o + a) * kp, tile + (p - p0) * kp, kp));
        }
      }
#endif
      for (; o < channels_out; ++o) {
        const std::int16_t* w = centered_.data() + o * kp;
        for (std::int64_t p = p0; p < p1; ++p) emit(o, p - p0, dot(w, tile + (p - p0) * kp, kp));
      }
      for (o = 0; o < channels_out; ++o) {
        const std::int32_t* a = accs.data() + o * kTile;
        std::int8_t* dst_row = y + o * positions + p0;
        const std::int32_t b = bias_[o];
        for (std::int64_t p = 0; p < p1 - p0; ++p) {
          const std::int32_t q = multiplier_.apply(a[p] + b) + zp_out;
          dst_row[p] = static_cast<std::int8_t>(std::clamp(q, floor_q, 127));
        }
      }
    }
  }
  return out;
}

// ----------------------------------------------------------- QuantizedModel

class QuantizedModelBuilder {
 public:
  using Lookup = std::function<std::pair<QTensor, std::vector<std::int32_t>>(const LayerPlan&,
                                                                           QuantParams in)>;

  static QuantizedModel assemble(const ModelConfig& config, std::map<std::string, QuantParams> edges,
                                 const Lookup& lookup) {
    QuantizedModel m;
    m.config_ = config;
    m.config_.with_aux = false;
    const auto edge = [&](const std::string& name) {
      auto it = edges.find(name);
      require(it != edges.end(), ErrorKind::calibration, "no activation params for edge " + name);
      return it->second;
    };
    std::map<std::string, QuantParams> used;
    used["input"] = edge("input");
    const auto plan = plan_layers(config);
    std::size_t idx = 0;
    const auto next = [&]() {
      const LayerPlan& l = plan[idx++];
      const QuantParams in = edge(l.in_edge);
      const QuantParams out = edge(l.out_edge);
      used[l.out_edge] = out;
      auto [w, b] = lookup(l, in);
      return QConv(l.name, l.spec, l.relu, std::move(w), std::move(b), in, out);
    };
    for (auto& s : m.stem_) s = next();
    for (auto& b : m.blocks_) {
      b.b1 = next();
      b.r3 = next();
      b.b3 = next();
      b.r5 = next();
      b.b5 = next();
      b.bp = next();
    }
    m.fc_ = next();
    m.edges_ = std::move(used);
    return m;
  }
};

Tensor QuantizedModel::forward(const Tensor& batch) const {
  const Shape& is = batch.shape();
  require(is.n >= 1 && is.c == kInputChannels && is.h == kInputSize && is.w == kInputSize,
          ErrorKind::shape, "model input must be (n, 3, 224, 224), got " + is.str());
  QTensor x = quantize_tensor(batch, edges_.at("input"));
  x = stem_[0].forward(x);
  x = qpool(x, kStemPool1);
  x = stem_[1].forward(x);
  x = stem_[2].forward(x);
  x = stem_[3].forward(x);
  x = qpool(x, kStemPool2);
  for (std::size_t i = 0; i < kBlockCount; ++i) {
    if (i == kBlocksBeforeReduction) x = qpool(x, kMidPool);
    const QBlock& b = blocks_[i];
    const std::array<QTensor, 4> parts = {b.b1.forward(x), b.b3.forward(b.r3.forward(x)),
                                          b.b5.forward(b.r5.forward(x)),
                                          b.bp.forward(qpool(x, kBlockPool))};
    x = tensor_concat_channels<std::int8_t>(parts);
  }
  x = qpool(x, kFinalPool);
  return dequantize_tensor(fc_.forward(x));
}

std::vector<const QConv*> QuantizedModel::layers() const {
  std::vector<const QConv*> out;
  for (const auto& s : stem_) out.push_back(&s);
  for (const auto& b : blocks_) {
    for (const auto* l : {&b.b1, &b.r3, &b.b3, &b.r5, &b.b5, &b.bp}) out.push_back(l);
  }
  out.push_back(&fc_);
  return out;
}

std::int64_t QuantizedModel::param_count() const {
  std::int64_t total = 0;
  for (const auto* l : layers()) total += static_cast<std::int64_t>(l->weight().size() + l->bias().size());
  return total;
}

ModelFile QuantizedModel::to_file() const {
  ModelFile file;
  file.dtype = DType::i8;
  file.mode = Mode::infer;
  for (const auto* l : layers()) {
    TensorRecord w;
    w.name = l->name() + ".weight";
    w.shape = dims(l->weight().shape());
    w.quant = l->weight().quant();
    w.raw = raw_bytes(l->weight().data().data(), l->weight().bytes());
    file.records.push_back(std::move(w));
    TensorRecord b;
    b.name = l->name() + ".bias";
    b.shape = {1, static_cast<std::uint32_t>(l->bias().size()), 1, 1};
    b.quant = QuantParams{l->bias_scale(), 0};
    b.raw = raw_bytes(l->bias().data(), l->bias().size() * sizeof(std::int32_t));
    file.records.push_back(std::move(b));
  }
  for (const auto& name : activation_edges(config_)) {
    TensorRecord a;
    a.name = "act." + name;
    a.shape = {1, 1, 1, 1};
    a.quant = edges_.at(name);
    a.raw = {static_cast<std::uint8_t>(static_cast<std::int8_t>(edges_.at(name).zero_point))};
    file.records.push_back(std::move(a));
  }
  return file;
}

QuantizedModel QuantizedModel::from_file(const ModelFile& file) {
  require(file.dtype == DType::i8, ErrorKind::type, "expected an int8 model file");
  require(file.mode == Mode::infer, ErrorKind::decode, "int8 model files are infer-mode only");
  std::map<std::string, const TensorRecord*> by_name;
  std::map<std::string, QuantParams> edges;
  for (const auto& r : file.records) {
    require(by_name.emplace(r.name, &r).second, ErrorKind::decode, "duplicate tensor " + r.name);
    if (r.name.starts_with("act.")) edges[r.name.substr(4)] = *r.quant;
  }
  const auto dim0 = [&](const std::string& name) -> std::int64_t {
    auto it = by_name.find(name);
    require(it != by_name.end(), ErrorKind::decode, "model file lacks tensor " + name);
    return it->second->shape[0];
  };
  ModelConfig config;
  config.with_aux = false;
  for (int i = 0; i < 4; ++i) config.stem[i] = dim0("stem.conv" + std::to_string(i + 1) + ".weight");
  for (std::size_t i = 0; i < kBlockCount; ++i) {
    const std::string b = "blocks." + std::to_string(i) + ".";
    config.blocks[i] = {dim0(b + "b1.weight"), dim0(b + "r3.weight"), dim0(b + "b3.weight"),
                        dim0(b + "r5.weight"), dim0(b + "b5.weight"), dim0(b + "bp.weight")};
  }
  config.num_classes = dim0("fc.weight");
  config.validate();

  std::size_t consumed = edges.size();
  auto model = QuantizedModelBuilder::assemble(
      config, edges, [&](const LayerPlan& l, QuantParams) -> std::pair<QTensor, std::vector<std::int32_t>> {
        const TensorRecord& w = *by_name.at(l.name + ".weight");
        auto bit = by_name.find(l.name + ".bias");
        require(bit != by_name.end(), ErrorKind::decode, "model file lacks tensor " + l.name + ".bias");
        const TensorRecord& b = *bit->second;
        const Shape ws{w.shape[0], w.shape[1], w.shape[2], w.shape[3]};
        QTensor weight(ws, std::span<const std::int8_t>(reinterpret_cast<const std::int8_t*>(w.raw.data()),
                                                        w.raw.size()),
                       *w.quant);
        require(b.shape == std::array<std::uint32_t, 4>{1, w.shape[0], 1, 1}, ErrorKind::decode,
                l.name + ".bias has the wrong shape");
        std::vector<std::int32_t> bias(w.shape[0]);
        std::memcpy(bias.data(), b.raw.data(), b.raw.size());
        consumed += 2;
        return {std::move(weight), std::move(bias)};
      });
  require(consumed == file.records.size(), ErrorKind::decode, "model file holds unexpected tensors");
  require(model.edges_.size() == edges.size(), ErrorKind::decode, "model file holds unused activation records");
  return model;
}

QuantizedModel quantize_model(const Model& model, const CalibrationStats& stats) {
  require(model.mode() == Mode::infer, ErrorKind::contract,
          "strip the auxiliary heads before quantizing");
  const auto params = stats.params();
  return QuantizedModelBuilder::assemble(
      model.config(), params,
      [&](const LayerPlan& l, QuantParams in) -> std::pair<QTensor, std::vector<std::int32_t>> {
        const Param<float>* w = model.find_param(l.name + ".weight");
        const Param<float>* b = model.find_param(l.name + ".bias");
        require(w != nullptr && b != nullptr, ErrorKind::contract, "model lacks layer " + l.name);
        QuantParams wq;
        if (auto r = stats.range(w->name)) {
          wq = params_from_range(r->min, r->max);
        } else {
          const auto [lo, hi] = std::minmax_element(w->value.data().begin(), w->value.data().end());
          wq = params_from_range(*lo, *hi);
        }
        QTensor weight = quantize_tensor(w->value, wq);
        const double bias_scale = static_cast<double>(in.scale * wq.scale);
        std::vector<std::int32_t> bias;
        bias.reserve(b->value.size());
        for (float v : b->value.data()) bias.push_back(saturate_i32(std::nearbyint(v / bias_scale)));
        return {std::move(weight), std::move(bias)};
      });
}

QuantizedModel quantize_model(const AnyModel& model, const CalibrationStats& stats) {
  require(std::holds_alternative<Model>(model), ErrorKind::contract, "model is already int8");
  return quantize_model(std::get<Model>(model), stats);
}

void save_model(const QuantizedModel& model, const std::filesystem::path& path) {
  write_file(path, encode_model_file(model.to_file()));
}

QuantizedModel load_quantized_model(const std::filesystem::path& path) {
  return QuantizedModel::from_file(decode_model_file(read_file(path)));
}

std::size_t serialized_size(const QuantizedModel& model) { return encoded_size(model.to_file()); }

AnyModel load_model(const std::filesystem::path& path) {
  auto file = decode_model_file(read_file(path));
  if (file.dtype == DType::i8) return QuantizedModel::from_file(file);
  return from_model_file(file);
}

Tensor predict_logits(const AnyModel& model, const Tensor& batch) {
  return std::visit(
      [&](const auto& m) -> Tensor {
        if constexpr (std::is_same_v<std::decay_t<decltype(m)>, Model>) {
          return m.forward(batch, Mode::infer).main;
        } else {
          return m.forward(batch);
        }
      },
      model);
}

}  // namespace edgelite
