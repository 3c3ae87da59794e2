#include "edgelite/serialize.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace edgelite {

static_assert(std::endian::native == std::endian::little,
              "model files are written with native little-endian stores");

namespace {

constexpr std::size_t kHeaderBytes = 4 + 2 + 1 + 1 + 4;
constexpr std::size_t kTrailerBytes = 4;

class Writer {
 public:
  explicit Writer(std::size_t reserve) { out_.reserve(reserve); }

  template <class V>
  void put(V v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out_.insert(out_.end(), p, p + sizeof(V));
  }
  void put_bytes(std::span<const std::uint8_t> bytes) { out_.insert(out_.end(), bytes.begin(), bytes.end()); }

  std::vector<std::uint8_t> take() { return std::move(out_); }
  std::span<const std::uint8_t> view() const { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <class V>
  V get() {
    need(sizeof(V));
    V v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(V));
    pos_ += sizeof(V);
    return v;
  }
  std::span<const std::uint8_t> get_bytes(std::size_t n) {
    need(n);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (n > bytes_.size() - pos_) {
      raise(ErrorKind::truncated, "model file ends inside a record");
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::size_t record_count(const TensorRecord& r) {
  std::size_t n = 1;
  for (auto d : r.shape) n *= d;
  return n;
}

template <class T>
TensorRecord float_record(const Param<T>& p) {
  static_assert(std::is_same_v<T, float>);
  TensorRecord r;
  r.name = p.name;
  const Shape& s = p.value.shape();
  r.shape = {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c),
             static_cast<std::uint32_t>(s.h), static_cast<std::uint32_t>(s.w)};
  const auto d = p.value.data();
  r.raw.resize(d.size_bytes());
  std::memcpy(r.raw.data(), d.data(), d.size_bytes());
  return r;
}

std::int64_t dim(const std::map<std::string, const TensorRecord*>& by_name, const std::string& name,
                 int axis) {
  auto it = by_name.find(name);
  require(it != by_name.end(), ErrorKind::decode, "model file lacks tensor " + name);
  return it->second->shape[axis];
}

}  // namespace

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in chunks.
  constexpr std::size_t kChunk = 1u << 30;
  for (std::size_t off = 0; off < bytes.size(); off += kChunk) {
    const std::size_t n = std::min(kChunk, bytes.size() - off);
    crc = ::crc32(crc, bytes.data() + off, static_cast<uInt>(n));
  }
  return static_cast<std::uint32_t>(crc);
}

std::size_t record_element_bytes(DType file_dtype, std::string_view name) {
  if (file_dtype == DType::f32) return 4;
  return name.ends_with(".bias") ? 4 : 1;
}

std::size_t encoded_size(const ModelFile& file) {
  std::size_t total = kHeaderBytes + kTrailerBytes;
  for (const auto& r : file.records) {
    total += 2 + r.name.size() + 16 + (file.dtype == DType::i8 ? 8 : 0) + r.raw.size();
  }
  return total;
}

std::vector<std::uint8_t> encode_model_file(const ModelFile& file) {
  require(file.dtype == DType::f32 || file.dtype == DType::i8, ErrorKind::type,
          "model files hold f32 or i8 tensors");
  Writer w(encoded_size(file));
  for (char c : kModelMagic) w.put(static_cast<std::uint8_t>(c));
  w.put(kModelVersion);
  w.put(static_cast<std::uint8_t>(file.dtype));
  w.put(static_cast<std::uint8_t>(file.mode == Mode::train ? 1 : 0));
  w.put(static_cast<std::uint32_t>(file.records.size()));
  for (const auto& r : file.records) {
    require(r.name.size() <= UINT16_MAX, ErrorKind::contract, "tensor name too long: " + r.name);
    require(r.raw.size() == record_count(r) * record_element_bytes(file.dtype, r.name),
            ErrorKind::contract, "raw size of " + r.name + " disagrees with its shape");
    require(r.quant.has_value() == (file.dtype == DType::i8), ErrorKind::contract,
            "quant params must be present exactly in int8 files (" + r.name + ")");
    w.put(static_cast<std::uint16_t>(r.name.size()));
    w.put_bytes({reinterpret_cast<const std::uint8_t*>(r.name.data()), r.name.size()});
    for (auto d : r.shape) w.put(d);
    if (r.quant) {
      w.put(r.quant->scale);
      w.put(r.quant->zero_point);
    }
    w.put_bytes(r.raw);
  }
  w.put(crc32(w.view()));
  return w.take();
}

ModelFile decode_model_file(std::span<const std::uint8_t> bytes) {
  require(bytes.size() >= kHeaderBytes + kTrailerBytes, ErrorKind::truncated,
          "model file shorter than its header");
  require(std::memcmp(bytes.data(), kModelMagic.data(), kModelMagic.size()) == 0, ErrorKind::bad_magic,
          "not an EDGL model file");
  Reader r(bytes.first(bytes.size() - kTrailerBytes));
  r.get_bytes(4);
  const auto version = r.get<std::uint16_t>();
  require(version == kModelVersion, ErrorKind::version_mismatch,
          "model file version " + std::to_string(version) + ", expected " + std::to_string(kModelVersion));

  // Parse the structure first so a short file reports truncation rather than
  // a checksum mismatch.
  ModelFile file;
  const auto dtype = r.get<std::uint8_t>();
  const auto mode = r.get<std::uint8_t>();
  const auto count = r.get<std::uint32_t>();
  require(dtype <= 1, ErrorKind::decode, "unknown dtype tag " + std::to_string(dtype));
  require(mode <= 1, ErrorKind::decode, "unknown mode flag " + std::to_string(mode));
  file.dtype = static_cast<DType>(dtype);
  file.mode = mode == 1 ? Mode::train : Mode::infer;
  file.records.reserve(std::min<std::uint32_t>(count, 4096));
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorRecord rec;
    const auto len = r.get<std::uint16_t>();
    auto name = r.get_bytes(len);
    rec.name.assign(reinterpret_cast<const char*>(name.data()), name.size());
    std::uint64_t elements = 1;
    for (auto& d : rec.shape) {
      d = r.get<std::uint32_t>();
      elements *= d;
    }
    if (file.dtype == DType::i8) {
      QuantParams q;
      q.scale = r.get<float>();
      q.zero_point = r.get<std::int32_t>();
      rec.quant = q;
    }
    const std::uint64_t raw = elements * record_element_bytes(file.dtype, rec.name);
    require(raw <= bytes.size(), ErrorKind::truncated, "record " + rec.name + " overruns the file");
    auto data = r.get_bytes(static_cast<std::size_t>(raw));
    rec.raw.assign(data.begin(), data.end());
    file.records.push_back(std::move(rec));
  }
  require(r.position() == bytes.size() - kTrailerBytes, ErrorKind::truncated,
          "model file length disagrees with its records");

  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - kTrailerBytes, sizeof stored);
  require(stored == crc32(bytes.first(bytes.size() - kTrailerBytes)), ErrorKind::checksum,
          "CRC32 mismatch");
  return file;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::io, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(out), ErrorKind::io, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

ModelFile to_model_file(const Model& model) {
  ModelFile file;
  file.dtype = DType::f32;
  file.mode = model.mode();
  for (const auto* p : model.params()) file.records.push_back(float_record(*p));
  return file;
}

Model from_model_file(const ModelFile& file) {
  require(file.dtype == DType::f32, ErrorKind::type, "expected a float model file");
  std::map<std::string, const TensorRecord*> by_name;
  for (const auto& r : file.records) {
    require(by_name.emplace(r.name, &r).second, ErrorKind::decode, "duplicate tensor " + r.name);
  }
  ModelConfig config;
  for (int i = 0; i < 4; ++i) config.stem[i] = dim(by_name, "stem.conv" + std::to_string(i + 1) + ".weight", 0);
  for (std::size_t i = 0; i < kBlockCount; ++i) {
    const std::string b = "blocks." + std::to_string(i) + ".";
    config.blocks[i] = {dim(by_name, b + "b1.weight", 0), dim(by_name, b + "r3.weight", 0),
                        dim(by_name, b + "b3.weight", 0), dim(by_name, b + "r5.weight", 0),
                        dim(by_name, b + "b5.weight", 0), dim(by_name, b + "bp.weight", 0)};
  }
  config.num_classes = dim(by_name, "fc.weight", 0);
  config.with_aux = by_name.contains("aux.0.conv.weight");
  if (config.with_aux) {
    config.aux_conv = dim(by_name, "aux.0.conv.weight", 0);
    config.aux_fc = dim(by_name, "aux.0.fc1.weight", 0);
  }
  require((file.mode == Mode::train) == config.with_aux, ErrorKind::decode,
          "mode flag disagrees with the presence of aux heads");

  Rng scratch(0);
  Model model(config, scratch);
  const auto params = model.params();
  require(params.size() == file.records.size(), ErrorKind::decode,
          "model file has " + std::to_string(file.records.size()) + " tensors, graph needs " +
              std::to_string(params.size()));
  for (auto* p : params) {
    auto it = by_name.find(p->name);
    require(it != by_name.end(), ErrorKind::decode, "model file lacks tensor " + p->name);
    const TensorRecord& r = *it->second;
    const Shape s{r.shape[0], r.shape[1], r.shape[2], r.shape[3]};
    require(s == p->value.shape(), ErrorKind::decode,
            p->name + " has shape " + s.str() + ", graph expects " + p->value.shape().str());
    Tensor t(s);
    std::memcpy(t.mutable_data().data(), r.raw.data(), r.raw.size());
    p->value = std::move(t);
  }
  return model;
}

void save_model(const Model& model, const std::filesystem::path& path) {
  write_file(path, encode_model_file(to_model_file(model)));
}

Model load_float_model(const std::filesystem::path& path) {
  return from_model_file(decode_model_file(read_file(path)));
}

std::size_t serialized_size(const Model& model) {
  std::size_t total = kHeaderBytes + kTrailerBytes;
  for (const auto* p : model.params()) total += 2 + p->name.size() + 16 + p->value.bytes();
  return total;
}

std::vector<std::string> read_tensor_names(const std::filesystem::path& path) {
  const auto file = decode_model_file(read_file(path));
  std::vector<std::string> names;
  names.reserve(file.records.size());
  for (const auto& r : file.records) names.push_back(r.name);
  return names;
}

}  // namespace edgelite
