#include <set>

#include "doctest.h"
#include "edgelite/dataset.hpp"
#include "edgelite/error.hpp"
#include "edgelite/serialize.hpp"
#include "temp_dir.hpp"

using namespace edgelite;
namespace fs = std::filesystem;

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

Image noise_image(std::int64_t w, std::int64_t h, Rng& rng) {
  Image img(w, h);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  return img;
}

RgbaImage solid_cutout(std::int64_t w, std::int64_t h, std::uint8_t alpha, Rng& rng) {
  RgbaImage c(w, h);
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      for (int k = 0; k < 3; ++k) c.at(x, y, k) = static_cast<std::uint8_t>(rng.below(256));
      c.at(x, y, 3) = alpha;
    }
  return c;
}

}  // namespace

TEST_CASE("enum names round trip") {
  for (Split s : kSplits) CHECK(parse_split(to_string(s)) == s);
  for (Label l : kLabels) CHECK(parse_label(to_string(l)) == l);
  for (Origin o : {Origin::real, Origin::synthetic, Origin::augmented}) CHECK(parse_origin(to_string(o)) == o);
  CHECK(kind_of([] { (void)parse_split("holdout"); }) == ErrorKind::data);
  CHECK(static_cast<int>(Label::clean) == 0);
  CHECK(static_cast<int>(Label::hazard) == 1);
}

TEST_CASE("ppm round trip and decode errors") {
  Rng rng(1);
  const Image img = noise_image(7, 5, rng);
  const auto bytes = encode_ppm(img);
  CHECK(std::string(bytes.begin(), bytes.begin() + 2) == "P6");
  CHECK(decode_ppm(bytes) == img);

  testing::TempDir dir;
  save_image(img, dir / "a.ppm");
  CHECK(load_image(dir / "a.ppm") == img);

  const std::string commented = "P6\n# a comment\n2 1\n255\n";
  std::vector<std::uint8_t> c(commented.begin(), commented.end());
  for (int i = 0; i < 6; ++i) c.push_back(static_cast<std::uint8_t>(i * 40));
  const Image small = decode_ppm(c);
  CHECK(small.width == 2);
  CHECK(small.at(1, 0, 2) == 200);

  auto magic = bytes;
  magic[1] = '3';
  CHECK(kind_of([&] { (void)decode_ppm(magic); }) == ErrorKind::bad_magic);
  const std::vector<std::uint8_t> cut(bytes.begin(), bytes.end() - 4);
  CHECK(kind_of([&] { (void)decode_ppm(cut); }) == ErrorKind::truncated);
  const std::string wide = "P6\n2 1\n65535\n";
  CHECK(kind_of([&] { (void)decode_ppm(std::vector<std::uint8_t>(wide.begin(), wide.end())); }) == ErrorKind::decode);
  const std::string junk = "P6\nx 1\n255\n";
  CHECK(kind_of([&] { (void)decode_ppm(std::vector<std::uint8_t>(junk.begin(), junk.end())); }) == ErrorKind::decode);
}

TEST_CASE("bilinear resize") {
  Rng rng(2);
  const Image big = noise_image(448, 448, rng);
  const Image half = resize_bilinear(big, 224, 224);
  CHECK(half.width == 224);
  CHECK(half.height == 224);
  // Exact 2x downsampling samples the centre of each 2x2 block.
  for (std::int64_t y = 0; y < 224; y += 37)
    for (std::int64_t x = 0; x < 224; x += 41)
      for (int c = 0; c < 3; ++c) {
        const int sum = big.at(2 * x, 2 * y, c) + big.at(2 * x + 1, 2 * y, c) + big.at(2 * x, 2 * y + 1, c) +
                        big.at(2 * x + 1, 2 * y + 1, c);
        CHECK(std::abs(half.at(x, y, c) - sum / 4.0) <= 0.5);
      }

  Image checker(2, 2);
  for (int c = 0; c < 3; ++c) {
    checker.at(0, 0, c) = 255;
    checker.at(1, 1, c) = 255;
  }
  const Image one = resize_bilinear(checker, 1, 1);
  for (int c = 0; c < 3; ++c) CHECK(std::abs(one.at(0, 0, c) - 127.5) <= 0.5);
  CHECK(resize_bilinear(big, 448, 448) == big);
}

TEST_CASE("composite identities") {
  Rng rng(3);
  const Image bg = noise_image(64, 48, rng);
  const RgbaImage clear = solid_cutout(20, 10, 0, rng);
  CHECK(composite_hazard(bg, clear, Placement{5, 7, 1.0}) == bg);

  const RgbaImage opaque = solid_cutout(32, 24, 255, rng);
  const Image covered = composite_hazard(bg, opaque, Placement{0, 0, 2.0});
  const RgbaImage scaled = resize_bilinear(opaque, 64, 48);
  for (std::int64_t y = 0; y < 48; ++y)
    for (std::int64_t x = 0; x < 64; ++x)
      for (int c = 0; c < 3; ++c) REQUIRE(covered.at(x, y, c) == scaled.at(x, y, c));

  RgbaImage half = solid_cutout(1, 1, 128, rng);
  half.at(0, 0, 0) = 200;
  Image flat(3, 3, 100);
  const Image mixed = composite_hazard(flat, half, Placement{1, 1, 1.0});
  CHECK(mixed.at(1, 1, 0) == (128 * 200 + 127 * 100 + 127) / 255);
}

TEST_CASE("composite leaves pixels outside the box unchanged") {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const Image bg = noise_image(80, 60, rng);
    const RgbaImage cut = solid_cutout(16, 12, static_cast<std::uint8_t>(rng.below(256)), rng);
    const double scale = rng.uniform(0.5, 2.0);
    const std::int64_t w = placed_extent(16, scale), h = placed_extent(12, scale);
    const Placement p{static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(80 - w + 1))),
                      static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(60 - h + 1))), scale};
    const Image out = composite_hazard(bg, cut, p);
    for (std::int64_t y = 0; y < 60; ++y)
      for (std::int64_t x = 0; x < 80; ++x) {
        if (x >= p.x && x < p.x + w && y >= p.y && y < p.y + h) continue;
        for (int c = 0; c < 3; ++c) REQUIRE(out.at(x, y, c) == bg.at(x, y, c));
      }
    CHECK(composite_hazard(bg, cut, p) == out);
  }
  const Image bg(10, 10);
  const RgbaImage cut(4, 4);
  CHECK(kind_of([&] { (void)composite_hazard(bg, cut, Placement{8, 0, 1.0}); }) == ErrorKind::placement);
  CHECK(kind_of([&] { (void)composite_hazard(bg, cut, Placement{-1, 0, 1.0}); }) == ErrorKind::placement);
  CHECK(kind_of([&] { (void)composite_hazard(bg, cut, Placement{0, 0, 3.0}); }) == ErrorKind::placement);
}

TEST_CASE("augmentation identities") {
  Rng rng(5);
  const Image img = noise_image(40, 30, rng);
  CHECK(augment(img, AugmentSpec{}) == img);
  const AugmentSpec flip{true, 0, 0, 1.0, 0};
  const Image once = augment(img, flip);
  CHECK(once != img);
  CHECK(once.at(0, 3, 1) == img.at(39, 3, 1));
  CHECK(augment(once, flip) == img);

  const Image white = augment(img, AugmentSpec{false, 0, 0, 1.0, 255});
  for (auto p : white.pixels) REQUIRE(p == 255);

  Image mid(16, 16);
  for (auto& p : mid.pixels) p = static_cast<std::uint8_t>(40 + rng.below(150));
  for (int d : {1, 17, 40}) {
    CHECK(augment(augment(mid, AugmentSpec{false, 0, 0, 1.0, d}), AugmentSpec{false, 0, 0, 1.0, -d}) == mid);
  }

  const Image shifted = augment(img, AugmentSpec{false, 3, -2, 1.0, 0});
  CHECK(shifted.at(10, 10, 0) == img.at(7, 12, 0));
  CHECK(shifted.at(0, 29, 2) == img.at(0, 29, 2));
  CHECK(shifted.at(1, 28, 2) == img.at(0, 29, 2));

  const AugmentSpec spec = random_augment(rng);
  CHECK(augment(img, spec) == augment(img, spec));
}

TEST_CASE("augmentation spec errors") {
  const Image img(20, 10);
  CHECK(kind_of([&] { (void)augment(img, AugmentSpec{false, 0, 0, 0.4, 0}); }) == ErrorKind::spec);
  CHECK(kind_of([&] { (void)augment(img, AugmentSpec{false, 0, 0, 2.5, 0}); }) == ErrorKind::spec);
  CHECK(kind_of([&] { (void)augment(img, AugmentSpec{false, 21, 0, 1.0, 0}); }) == ErrorKind::spec);
  CHECK(kind_of([&] { (void)augment(img, AugmentSpec{false, 0, -11, 1.0, 0}); }) == ErrorKind::spec);
  CHECK(kind_of([&] { (void)augment(img, AugmentSpec{false, 0, 0, 1.0, 256}); }) == ErrorKind::spec);
  CHECK_NOTHROW((void)augment(img, AugmentSpec{false, 20, -10, 2.0, -255}));
}

TEST_CASE("procedural samples") {
  Rng a(6), b(6);
  const Image x = procedural_sample(Label::hazard, a);
  CHECK(x == procedural_sample(Label::hazard, b));
  CHECK(x.width == kImageSize);
  CHECK(x.height == kImageSize);
  const RgbaImage blob = procedural_hazard(a);
  std::size_t opaque = 0, clear = 0;
  for (std::int64_t y = 0; y < blob.height; ++y)
    for (std::int64_t xx = 0; xx < blob.width; ++xx) {
      opaque += blob.at(xx, y, 3) >= 200 ? 1 : 0;
      clear += blob.at(xx, y, 3) == 0 ? 1 : 0;
    }
  CHECK(opaque > 0);
  CHECK(clear > 0);
}

TEST_CASE("300 composites are distinct files") {
  testing::TempDir dir;
  const DatasetManifest m = synthesize_composites(dir.path(), 300, 9, 2);
  REQUIRE(m.records.size() == 300);
  std::set<std::vector<std::uint8_t>> contents;
  std::set<std::string> paths;
  for (const auto& r : m.records) {
    CHECK(r.origin == Origin::synthetic);
    CHECK(r.label == Label::hazard);
    paths.insert(r.path);
    contents.insert(read_file(dir.path() / r.path));
  }
  CHECK(paths.size() == 300);
  CHECK(contents.size() == 300);
}

TEST_CASE("manifest csv") {
  DatasetManifest m;
  m.records.push_back({"real/hazard/a.ppm", Label::hazard, Split::train, Origin::real, 0});
  m.records.push_back({"augmented/b.ppm", Label::clean, Split::test, Origin::augmented, 123456789012345ULL});
  const std::string csv = m.to_csv();
  CHECK(csv.rfind("path,label,split,origin,seed\n", 0) == 0);
  CHECK(csv.find('\r') == std::string::npos);
  CHECK(DatasetManifest::from_csv(csv).records == m.records);
  CHECK(m.count(Label::hazard, Split::train) == 1);
  CHECK(m.count(Split::test) == 1);
  CHECK(m.count(Origin::augmented) == 1);

  DatasetManifest dup = m;
  dup.records.push_back(m.records.front());
  CHECK(kind_of([&] { dup.validate(); }) == ErrorKind::data);
  CHECK(kind_of([] { (void)DatasetManifest::from_csv("path,label\nx,y\n"); }) == ErrorKind::data);
  CHECK(kind_of([] { (void)DatasetManifest::from_csv("path,label,split,origin,seed\nx,cat,train,real,0\n"); }) ==
        ErrorKind::data);

  testing::TempDir dir;
  m.write(dir / "m.csv");
  CHECK(DatasetManifest::read(dir / "m.csv").records == m.records);
}

TEST_CASE("build manifest at small scale") {
  testing::TempDir dir;
  generate_real_pool(dir / "real", 9, 1, 2);
  ManifestOptions opt;
  opt.real_dir = dir / "real";
  opt.out_dir = dir / "a";
  opt.synth_count = 3;
  opt.augment_target = 100;
  opt.splits = SplitCounts{10, 3, 4};
  opt.seed = 5;
  opt.threads = 2;
  const DatasetManifest m = build_manifest(opt);
  m.write(opt.out_dir / "manifest.csv");

  for (Label l : kLabels) {
    CHECK(m.count(l, Split::train) == 10);
    CHECK(m.count(l, Split::val) == 3);
    CHECK(m.count(l, Split::test) == 4);
  }
  CHECK(m.count(Origin::synthetic) == 3);
  CHECK(m.count(Origin::real) == 18);
  CHECK(m.count(Origin::augmented) == 34 - 21);
  CHECK_NOTHROW(m.validate());

  // Every augmented child regenerates from a source of its own split and class.
  for (const auto& r : m.records) {
    if (r.origin != Origin::augmented) continue;
    const Image child = load_image(opt.out_dir / r.path);
    const AugmentSpec spec = [&] {
      Rng rng(r.seed);
      return random_augment(rng);
    }();
    std::set<Split> parent_splits;
    for (const auto& s : m.records) {
      if (s.origin == Origin::augmented || s.label != r.label) continue;
      const Image src = resize_bilinear(load_image(opt.out_dir / s.path), kImageSize, kImageSize);
      if (augment(src, spec) == child) parent_splits.insert(s.split);
    }
    CAPTURE(r.path);
    CHECK(parent_splits == std::set<Split>{r.split});
  }

  opt.out_dir = dir / "b";
  const DatasetManifest again = build_manifest(opt);
  again.write(opt.out_dir / "manifest.csv");
  CHECK(read_file(dir / "a" / "manifest.csv") == read_file(dir / "b" / "manifest.csv"));

  opt.out_dir = dir / "c";
  opt.augment_target = 12;
  try {
    (void)build_manifest(opt);
    FAIL("expected a shortfall");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::data);
    CHECK(std::string(e.what()).find("shortfall 1") != std::string::npos);
  }
  opt.real_dir = dir / "nowhere";
  CHECK(kind_of([&] { (void)build_manifest(opt); }) == ErrorKind::data);
}

TEST_CASE("default split totals") {
  const SplitCounts s;
  CHECK(2 * (s.train + s.val) == 5500);
  CHECK(2 * s.test == 1000);
  CHECK(s.of(Split::val) == 526);
}

TEST_CASE("data sources") {
  testing::TempDir dir;
  generate_real_pool(dir / "real", 4, 2);
  ManifestOptions opt;
  opt.real_dir = dir / "real";
  opt.out_dir = dir / "d";
  opt.synth_count = 0;
  opt.splits = SplitCounts{2, 1, 1};
  const DatasetManifest m = build_manifest(opt);
  m.write(opt.out_dir / "manifest.csv");
  const ManifestSource src = ManifestSource::open(opt.out_dir / "manifest.csv");
  CHECK(src.size(Split::train) == 4);
  CHECK(src.size(Split::test) == 2);
  const Image img = src.image(Split::val, 0);
  CHECK(img.width == kImageSize);

  std::vector<int> labels;
  const std::vector<std::size_t> idx = {0, 1, 3};
  const Tensor batch = load_batch(src, Split::train, idx, &labels);
  CHECK(batch.shape() == Shape{3, 3, 224, 224});
  CHECK(labels.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(labels[i] == src.label(Split::train, idx[i]));
  for (float v : batch.data()) REQUIRE((v >= -1.0f && v <= 1.0f));

  fs::remove(opt.out_dir / m.records.front().path);
  const std::size_t first = 0;
  const Split split = m.records.front().split;
  CHECK(kind_of([&] { (void)load_batch(src, split, std::span(&first, 1)); }) == ErrorKind::data);

  MemorySource mem;
  mem.add(Split::train, Image(448, 448, 7), 1);
  CHECK(mem.image(Split::train, 0).width == kImageSize);
  CHECK(mem.label(Split::train, 0) == 1);
  CHECK(normalize_pixel(0) == -1.0f);
  CHECK(normalize_pixel(255) == 1.0f);
}
