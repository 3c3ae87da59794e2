#include "doctest.h"
#include "edgelite/error.hpp"
#include "edgelite/quant.hpp"
#include "edgelite/serialize.hpp"
#include "temp_dir.hpp"

using namespace edgelite;

namespace {

template <class Fn>
ErrorKind kind_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an edgelite::Error");
  return ErrorKind::contract;
}

Tensor random_batch(std::int64_t n, Rng& rng) {
  Tensor t({n, 3, 224, 224});
  for (auto& v : t.mutable_data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

Model small_model(Rng& rng, bool aux = false) {
  ModelConfig c = ModelConfig::scaled(HeadConfig{2}, 0.25);
  c.with_aux = aux;
  return Model(c, rng);
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& b, std::size_t at) {
  return b[at] | (b[at + 1] << 8) | (b[at + 2] << 16) | (static_cast<std::uint32_t>(b[at + 3]) << 24);
}

}  // namespace

TEST_CASE("crc32 check value") {
  const std::string text = "123456789";
  const std::span<const std::uint8_t> bytes(reinterpret_cast<const std::uint8_t*>(text.data()), text.size());
  CHECK(crc32(bytes) == 0xCBF43926u);
  CHECK(crc32({}) == 0u);
}

TEST_CASE("header layout") {
  Rng rng(1);
  const Model model = small_model(rng);
  const ModelFile file = to_model_file(model);
  const auto bytes = encode_model_file(file);
  REQUIRE(bytes.size() > 12);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "EDGL");
  CHECK((bytes[4] | (bytes[5] << 8)) == kModelVersion);
  CHECK(bytes[6] == 0);
  CHECK(bytes[7] == 0);
  CHECK(get_u32(bytes, 8) == file.records.size());
  CHECK(bytes.size() == encoded_size(file));
  CHECK(bytes.size() == serialized_size(model));
  CHECK(get_u32(bytes, bytes.size() - 4) == crc32(std::span(bytes).first(bytes.size() - 4)));

  std::size_t payload = 12 + 4;
  for (const auto& r : file.records) payload += 2 + r.name.size() + 16 + r.raw.size();
  CHECK(bytes.size() == payload);
  std::int64_t scalars = 0;
  for (const auto& r : file.records) scalars += static_cast<std::int64_t>(r.raw.size() / 4);
  CHECK(scalars == model.param_count());
}

TEST_CASE("round trip is forward-equivalent") {
  Rng rng(2);
  const Model model = small_model(rng);
  testing::TempDir dir;
  save_model(model, dir / "m.edgl");
  const Model loaded = load_float_model(dir / "m.edgl");
  CHECK(loaded.config().stem == model.config().stem);
  CHECK(loaded.config().blocks == model.config().blocks);
  CHECK(loaded.config().num_classes == model.config().num_classes);
  CHECK(loaded.same_weights(model));
  for (int i = 0; i < 10; ++i) {
    const Tensor x = random_batch(1, rng);
    CHECK(loaded.forward(x, Mode::infer).main.identical(model.forward(x, Mode::infer).main));
  }
  CHECK(encode_model_file(to_model_file(loaded)) == read_file(dir / "m.edgl"));
}

TEST_CASE("train-mode files keep aux heads") {
  Rng rng(3);
  const Model model = small_model(rng, true);
  const ModelFile file = decode_model_file(encode_model_file(to_model_file(model)));
  CHECK(file.mode == Mode::train);
  const Model back = from_model_file(file);
  CHECK(back.aux_head_count() == 2);
  CHECK(back.same_weights(model));
}

TEST_CASE("infer files carry no aux tensors") {
  Rng rng(4);
  Model model = small_model(rng, true);
  model.strip_training_layers();
  testing::TempDir dir;
  save_model(model, dir / "m.edgl");
  const auto names = read_tensor_names(dir / "m.edgl");
  CHECK(names.size() == model.params().size());
  for (const auto& n : names) CHECK(n.find("aux") == std::string::npos);
}

TEST_CASE("load errors are distinct") {
  Rng rng(5);
  const Model model = small_model(rng);
  const auto good = encode_model_file(to_model_file(model));

  auto bad_magic = good;
  bad_magic[0] = 'X';
  CHECK(kind_of([&] { (void)decode_model_file(bad_magic); }) == ErrorKind::bad_magic);

  auto version = good;
  version[4] = 2;
  CHECK(kind_of([&] { (void)decode_model_file(version); }) == ErrorKind::version_mismatch);

  const std::vector<std::uint8_t> cut(good.begin(), good.begin() + good.size() / 2);
  CHECK(kind_of([&] { (void)decode_model_file(cut); }) == ErrorKind::truncated);
  const std::vector<std::uint8_t> tiny(good.begin(), good.begin() + 6);
  CHECK(kind_of([&] { (void)decode_model_file(tiny); }) == ErrorKind::truncated);

  auto flipped = good;
  flipped[good.size() / 2] ^= 0x40;
  CHECK(kind_of([&] { (void)decode_model_file(flipped); }) == ErrorKind::checksum);
  auto crc = good;
  crc.back() ^= 1;
  CHECK(kind_of([&] { (void)decode_model_file(crc); }) == ErrorKind::checksum);

  testing::TempDir dir;
  write_file(dir / "bad.edgl", flipped);
  CHECK(kind_of([&] { (void)load_float_model(dir / "bad.edgl"); }) == ErrorKind::checksum);
  CHECK(kind_of([&] { (void)load_float_model(dir / "missing.edgl"); }) == ErrorKind::io);
}

TEST_CASE("incomplete record sets are rejected") {
  Rng rng(6);
  ModelFile file = to_model_file(small_model(rng));
  file.records.pop_back();
  CHECK(kind_of([&] { (void)from_model_file(file); }) == ErrorKind::decode);
  ModelFile dup = to_model_file(small_model(rng));
  dup.records.push_back(dup.records.front());
  CHECK(kind_of([&] { (void)from_model_file(dup); }) == ErrorKind::decode);
}

TEST_CASE("int8 quant metadata round trips exactly") {
  Rng rng(7);
  const Model model = small_model(rng);
  std::vector<Tensor> batches = {random_batch(2, rng)};
  const QuantizedModel q = quantize_model(model, calibrate(model, batches));
  testing::TempDir dir;
  save_model(q, dir / "q.edgl");
  const QuantizedModel back = load_quantized_model(dir / "q.edgl");
  CHECK(back.activations() == q.activations());
  const auto a = q.layers();
  const auto b = back.layers();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i]->weight().identical(b[i]->weight()));
    CHECK(*a[i]->weight().quant() == *b[i]->weight().quant());
    CHECK(a[i]->bias() == b[i]->bias());
    CHECK(a[i]->input_params() == b[i]->input_params());
    CHECK(a[i]->output_params() == b[i]->output_params());
  }
  const Tensor x = random_batch(1, rng);
  CHECK(back.forward(x).identical(q.forward(x)));
  CHECK(encode_model_file(back.to_file()) == read_file(dir / "q.edgl"));

  const ModelFile decoded = decode_model_file(read_file(dir / "q.edgl"));
  CHECK(decoded.dtype == DType::i8);
  for (const auto& r : decoded.records) CHECK(r.quant.has_value());
  CHECK(kind_of([&] { (void)load_float_model(dir / "q.edgl"); }) == ErrorKind::type);
  CHECK(std::holds_alternative<QuantizedModel>(load_model(dir / "q.edgl")));
}
