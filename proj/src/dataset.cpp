#include "edgelite/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <functional>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "edgelite/serialize.hpp"

namespace edgelite {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kSynthStream = 0x5359;
constexpr std::uint64_t kAugmentStream = 0x4155;
constexpr std::uint64_t kSplitStream = 0x5350;

void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& job) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(count, 1))));
  if (threads == 1) {
    for (std::size_t i = 0; i < count; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          job(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

std::string numbered(std::string_view stem, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "_%05zu.ppm", i);
  return std::string(stem) + buf;
}

std::vector<fs::path> list_ppm(const fs::path& dir) {
  require(fs::is_directory(dir), ErrorKind::data, "missing image directory " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".ppm") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string relative_to(const fs::path& p, const fs::path& base) {
  return fs::relative(fs::absolute(p), fs::absolute(base)).generic_string();
}

void hsv_to_rgb(double h, double s, double v, double rgb[3]) {
  const double c = v * s;
  const double hp = std::fmod(h, 1.0) * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(hp)) {
    case 0: r = c, g = x; break;
    case 1: r = x, g = c; break;
    case 2: g = c, b = x; break;
    case 3: g = x, b = c; break;
    case 4: r = x, b = c; break;
    default: r = c, b = x; break;
  }
  const double m = v - c;
  rgb[0] = (r + m) * 255.0;
  rgb[1] = (g + m) * 255.0;
  rgb[2] = (b + m) * 255.0;
}

std::uint8_t to_u8(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

}  // namespace

// ---------------------------------------------------------------- enums

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

std::string_view to_string(Origin o) {
  switch (o) {
    case Origin::real: return "real";
    case Origin::synthetic: return "synthetic";
    case Origin::augmented: return "augmented";
  }
  return "?";
}

std::string_view to_string(Label l) { return l == Label::hazard ? "hazard" : "clean"; }

Split parse_split(std::string_view s) {
  for (Split v : kSplits) {
    if (to_string(v) == s) return v;
  }
  raise(ErrorKind::data, "unknown split '" + std::string(s) + "'");
}

Origin parse_origin(std::string_view s) {
  for (Origin v : {Origin::real, Origin::synthetic, Origin::augmented}) {
    if (to_string(v) == s) return v;
  }
  raise(ErrorKind::data, "unknown origin '" + std::string(s) + "'");
}

Label parse_label(std::string_view s) {
  for (Label v : kLabels) {
    if (to_string(v) == s) return v;
  }
  raise(ErrorKind::data, "unknown label '" + std::string(s) + "'");
}

std::size_t SplitCounts::of(Split s) const {
  switch (s) {
    case Split::train: return train;
    case Split::val: return val;
    case Split::test: return test;
  }
  return 0;
}

// ------------------------------------------------------------- manifest

std::size_t DatasetManifest::count(Label label, Split split) const {
  return static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [&](const ManifestRecord& r) {
    return r.label == label && r.split == split;
  }));
}

std::size_t DatasetManifest::count(Split split) const {
  return static_cast<std::size_t>(
      std::count_if(records.begin(), records.end(), [&](const ManifestRecord& r) { return r.split == split; }));
}

std::size_t DatasetManifest::count(Origin origin) const {
  return static_cast<std::size_t>(
      std::count_if(records.begin(), records.end(), [&](const ManifestRecord& r) { return r.origin == origin; }));
}

void DatasetManifest::validate() const {
  std::vector<std::string_view> paths;
  paths.reserve(records.size());
  for (const auto& r : records) paths.push_back(r.path);
  std::sort(paths.begin(), paths.end());
  const auto dup = std::adjacent_find(paths.begin(), paths.end());
  require(dup == paths.end(), ErrorKind::data, "duplicate manifest path " + std::string(dup == paths.end() ? "" : *dup));
}

std::string DatasetManifest::to_csv() const {
  std::string out = "path,label,split,origin,seed\n";
  for (const auto& r : records) {
    require(r.path.find_first_of(",\n\"") == std::string::npos, ErrorKind::data,
            "manifest paths may not contain commas, quotes or newlines: " + r.path);
    out += r.path;
    out += ',';
    out += to_string(r.label);
    out += ',';
    out += to_string(r.split);
    out += ',';
    out += to_string(r.origin);
    out += ',';
    out += std::to_string(r.seed);
    out += '\n';
  }
  return out;
}

DatasetManifest DatasetManifest::from_csv(std::string_view text) {
  DatasetManifest m;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line_no == 1) {
      require(line == "path,label,split,origin,seed", ErrorKind::data, "manifest header must be path,label,split,origin,seed");
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string_view> cols;
    std::size_t start = 0;
    for (;;) {
      const std::size_t comma = line.find(',', start);
      cols.push_back(line.substr(start, comma - start));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    require(cols.size() == 5, ErrorKind::data, "manifest line " + std::to_string(line_no) + " needs 5 columns");
    ManifestRecord r;
    r.path = std::string(cols[0]);
    require(!r.path.empty(), ErrorKind::data, "manifest line " + std::to_string(line_no) + " has an empty path");
    r.label = parse_label(cols[1]);
    r.split = parse_split(cols[2]);
    r.origin = parse_origin(cols[3]);
    try {
      std::size_t used = 0;
      r.seed = std::stoull(std::string(cols[4]), &used);
      require(used == cols[4].size(), ErrorKind::data, "bad seed");
    } catch (const std::logic_error&) {
      raise(ErrorKind::data, "manifest line " + std::to_string(line_no) + " has a bad seed");
    }
    m.records.push_back(std::move(r));
  }
  require(line_no >= 1, ErrorKind::data, "manifest is empty");
  m.validate();
  return m;
}

void DatasetManifest::write(const fs::path& path) const {
  const std::string csv = to_csv();
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(csv.data()), csv.size()));
}

DatasetManifest DatasetManifest::read(const fs::path& path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_file(path);
  } catch (const Error& e) {
    raise(ErrorKind::data, e.what());
  }
  return from_csv(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

// ------------------------------------------------------------ generators

Image procedural_floor(Rng& rng, std::int64_t size) {
  Image img(size, size);
  const double base = rng.uniform(80.0, 190.0);
  double tint[3];
  for (double& t : tint) t = rng.uniform(-10.0, 10.0);
  const std::int64_t tile = rng.between(20, 56);
  const std::int64_t grout = rng.between(1, 3);
  const double grout_dark = rng.uniform(25.0, 50.0);
  const std::int64_t ox = rng.between(0, tile - 1);
  const std::int64_t oy = rng.between(0, tile - 1);
  const double gx = rng.uniform(-0.1, 0.1);
  const double gy = rng.uniform(-0.1, 0.1);
  const std::int64_t tiles = size / tile + 2;
  std::vector<double> tile_offset(static_cast<std::size_t>(tiles * tiles));
  for (double& t : tile_offset) t = rng.uniform(-12.0, 12.0);
  for (std::int64_t y = 0; y < size; ++y) {
    for (std::int64_t x = 0; x < size; ++x) {
      const std::int64_t tx = (x + ox) / tile;
      const std::int64_t ty = (y + oy) / tile;
      const bool on_grout = (x + ox) % tile < grout || (y + oy) % tile < grout;
      double v = base + tile_offset[static_cast<std::size_t>(ty * tiles + tx)] + gx * (x - size / 2.0) +
                 gy * (y - size / 2.0);
      if (on_grout) v -= grout_dark;
      const double noise = rng.uniform(-6.0, 6.0);
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = to_u8(v + tint[c] + noise);
    }
  }
  return img;
}

RgbaImage procedural_hazard(Rng& rng, std::int64_t size) {
  RgbaImage img(size, size);
  double rgb[3];
  hsv_to_rgb(rng.uniform(), rng.uniform(0.75, 1.0), rng.uniform(0.6, 1.0), rgb);
  const double opacity = rng.uniform(200.0, 255.0);
  const int lobes = static_cast<int>(rng.between(3, 6));
  struct Lobe {
    double cx, cy, rx, ry;
  };
  std::vector<Lobe> shape;
  const double half = size / 2.0;
  for (int i = 0; i < lobes; ++i) {
    const double r = rng.uniform(0.22, 0.4) * size;
    const double cx = half + rng.uniform(-0.5, 0.5) * (half - r);
    const double cy = half + rng.uniform(-0.5, 0.5) * (half - r);
    shape.push_back({cx, cy, r * rng.uniform(0.7, 1.0), r * rng.uniform(0.7, 1.0)});
  }
  const double edge = 3.0;
  for (std::int64_t y = 0; y < size; ++y) {
    for (std::int64_t x = 0; x < size; ++x) {
      // Signed distance (in pixels, roughly) to the union of the lobes.
      double inside = -1e9;
      for (const auto& l : shape) {
        const double dx = (x + 0.5 - l.cx) / l.rx;
        const double dy = (y + 0.5 - l.cy) / l.ry;
        inside = std::max(inside, (1.0 - std::sqrt(dx * dx + dy * dy)) * std::min(l.rx, l.ry));
      }
      const double a = std::clamp(inside / edge, 0.0, 1.0) * opacity;
      const double shade = rng.uniform(-15.0, 15.0);
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = to_u8(rgb[c] + shade);
      img.at(x, y, 3) = to_u8(a);
    }
  }
  return img;
}

Placement central_placement(Rng& rng, const Image& background, const RgbaImage& cutout) {
  Placement p;
  p.scale = rng.uniform(0.8, 1.3);
  for (;;) {
    const std::int64_t w = placed_extent(cutout.width, p.scale);
    const std::int64_t h = placed_extent(cutout.height, p.scale);
    if (w <= background.width && h <= background.height) {
      const auto pick = [&](std::int64_t extent, std::int64_t room) {
        const double centre = room / 2.0 + rng.uniform(-0.3, 0.3) * room - extent / 2.0;
        return std::clamp<std::int64_t>(std::llround(centre), 0, room - extent);
      };
      p.x = pick(w, background.width);
      p.y = pick(h, background.height);
      return p;
    }
    p.scale *= 0.5;
  }
}

Image procedural_sample(Label label, Rng& rng) {
  Image floor = procedural_floor(rng);
  if (label == Label::clean) return floor;
  const RgbaImage blob = procedural_hazard(rng);
  return composite_hazard(floor, blob, central_placement(rng, floor, blob));
}

AugmentSpec random_augment(Rng& rng) {
  AugmentSpec s;
  s.hflip = rng.bernoulli(0.5);
  s.dx = rng.between(-20, 20);
  s.dy = rng.between(-20, 20);
  s.zoom = rng.uniform(0.9, 1.2);
  s.brightness = static_cast<int>(rng.between(-30, 30));
  return s;
}

void generate_real_pool(const fs::path& dir, std::size_t per_class, std::uint64_t seed, unsigned threads) {
  const Rng root(seed);
  for (Label label : kLabels) {
    const fs::path sub = dir / std::string(to_string(label));
    fs::create_directories(sub);
    const std::uint64_t stream = label == Label::hazard ? 1 : 2;
    parallel_for(per_class, threads, [&](std::size_t i) {
      Rng rng = root.fork(stream).fork(i);
      save_image(procedural_sample(label, rng), sub / numbered(to_string(label), i));
    });
  }
}

DatasetManifest synthesize_composites(const fs::path& out_dir, std::size_t count, std::uint64_t seed,
                                      unsigned threads) {
  const fs::path sub = out_dir / "synthetic";
  fs::create_directories(sub);
  DatasetManifest m;
  m.records.resize(count);
  const Rng root = Rng(seed).fork(kSynthStream);
  parallel_for(count, threads, [&](std::size_t i) {
    Rng rng = root.fork(i);
    const Image floor = procedural_floor(rng);
    const RgbaImage blob = procedural_hazard(rng);
    const fs::path path = sub / numbered("synth", i);
    save_image(composite_hazard(floor, blob, central_placement(rng, floor, blob)), path);
    m.records[i] = {relative_to(path, out_dir), Label::hazard, Split::train, Origin::synthetic, rng.seed()};
  });
  return m;
}

DatasetManifest build_manifest(const ManifestOptions& opt) {
  const std::size_t per_class = opt.splits.total();
  require(per_class >= 1, ErrorKind::data, "split counts are all zero");
  fs::create_directories(opt.out_dir);

  struct Source {
    fs::path path;
    Origin origin;
    std::uint64_t seed;
  };
  std::array<std::vector<Source>, 2> pool;  // indexed by kLabels order
  const auto clean_paths = list_ppm(opt.real_dir / "clean");
  const auto hazard_paths = list_ppm(opt.real_dir / "hazard");
  for (const auto& p : hazard_paths) pool[0].push_back({p, Origin::real, 0});
  for (const auto& p : clean_paths) pool[1].push_back({p, Origin::real, 0});

  if (opt.synth_count > 0) {
    require(!clean_paths.empty(), ErrorKind::data, "synthetic composites need at least one clean floor image");
    const fs::path sub = opt.out_dir / "synthetic";
    fs::create_directories(sub);
    const Rng root = Rng(opt.seed).fork(kSynthStream);
    std::vector<Source> synth(opt.synth_count);
    parallel_for(opt.synth_count, opt.threads, [&](std::size_t i) {
      Rng rng = root.fork(i);
      const Image floor = resize_bilinear(load_image(clean_paths[rng.below(clean_paths.size())]), kImageSize,
                                          kImageSize);
      const RgbaImage blob = procedural_hazard(rng);
      const fs::path path = sub / numbered("synth", i);
      save_image(composite_hazard(floor, blob, central_placement(rng, floor, blob)), path);
      synth[i] = {path, Origin::synthetic, rng.seed()};
    });
    pool[0].insert(pool[0].end(), synth.begin(), synth.end());
  }

  // Shortfall check across both classes before any augmentation work.
  std::size_t needed = 0;
  std::string detail;
  for (std::size_t k = 0; k < 2; ++k) {
    const std::size_t have = pool[k].size();
    if (have == 0) {
      raise(ErrorKind::data, "no " + std::string(to_string(kLabels[k])) + " images in " + opt.real_dir.string() +
                                 " (shortfall " + std::to_string(per_class) + ")");
    }
    const std::size_t missing = have >= per_class ? 0 : per_class - have;
    needed += missing;
    detail += " " + std::string(to_string(kLabels[k])) + "=" + std::to_string(missing);
  }
  if (needed > opt.augment_target) {
    raise(ErrorKind::data, "need " + std::to_string(needed) + " augmented images (" + detail.substr(1) +
                               ") but augment_target is " + std::to_string(opt.augment_target) + "; shortfall " +
                               std::to_string(needed - opt.augment_target));
  }

  struct Child {
    std::size_t parent;
    Split split;
    Label label;
    fs::path path;
    std::uint64_t seed;
  };
  DatasetManifest m;
  std::vector<Child> children;
  std::vector<fs::path> parents;
  const fs::path aug_dir = opt.out_dir / "augmented";
  const Rng split_root = Rng(opt.seed).fork(kSplitStream);
  const Rng aug_root = Rng(opt.seed).fork(kAugmentStream);
  for (std::size_t k = 0; k < 2; ++k) {
    const Label label = kLabels[k];
    std::vector<Source> sources = pool[k];
    Rng shuffle = split_root.fork(k);
    for (std::size_t i = sources.size(); i > 1; --i) std::swap(sources[i - 1], sources[shuffle.below(i)]);
    const std::size_t used = std::min(sources.size(), per_class);
    std::size_t cumulative = 0;
    std::size_t begin = 0;
    for (Split split : kSplits) {
      cumulative += opt.splits.of(split);
      const std::size_t end = (used * cumulative + per_class / 2) / per_class;
      const std::size_t want = opt.splits.of(split);
      const std::size_t own = end - begin;
      if (own < want && own == 0) {
        raise(ErrorKind::data, "split " + std::string(to_string(split)) + " of class " + std::string(to_string(label)) +
                                   " has no source image to augment (shortfall " + std::to_string(want) + ")");
      }
      for (std::size_t i = begin; i < end; ++i) {
        m.records.push_back({relative_to(sources[i].path, opt.out_dir), label, split, sources[i].origin, sources[i].seed});
      }
      for (std::size_t j = 0; own + j < want; ++j) {
        const std::size_t child_index = children.size();
        parents.push_back(sources[begin + j % own].path);
        children.push_back({parents.size() - 1, split, label,
                            aug_dir / numbered(std::string(to_string(label)) + "_" + std::string(to_string(split)), j),
                            aug_root.fork(child_index).seed()});
      }
      begin = end;
    }
  }
  if (!children.empty()) fs::create_directories(aug_dir);
  parallel_for(children.size(), opt.threads, [&](std::size_t i) {
    const Child& c = children[i];
    Rng rng(c.seed);
    const Image parent = resize_bilinear(load_image(parents[c.parent]), kImageSize, kImageSize);
    save_image(augment(parent, random_augment(rng)), c.path);
  });
  for (const auto& c : children) {
    m.records.push_back({relative_to(c.path, opt.out_dir), c.label, c.split, Origin::augmented, c.seed});
  }
  m.validate();
  return m;
}

// ----------------------------------------------------------- data sources

ManifestSource::ManifestSource(DatasetManifest manifest, fs::path root)
    : manifest_(std::move(manifest)), root_(std::move(root)) {
  for (std::size_t i = 0; i < manifest_.records.size(); ++i) {
    by_split_[static_cast<std::size_t>(manifest_.records[i].split)].push_back(i);
  }
}

ManifestSource ManifestSource::open(const fs::path& manifest_path) {
  return ManifestSource(DatasetManifest::read(manifest_path), manifest_path.parent_path());
}

std::size_t ManifestSource::size(Split split) const { return by_split_[static_cast<std::size_t>(split)].size(); }

int ManifestSource::label(Split split, std::size_t index) const {
  return static_cast<int>(manifest_.records[by_split_[static_cast<std::size_t>(split)].at(index)].label);
}

Image ManifestSource::image(Split split, std::size_t index) const {
  const auto& r = manifest_.records[by_split_[static_cast<std::size_t>(split)].at(index)];
  Image img;
  try {
    img = load_image(root_ / r.path);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::io) raise(ErrorKind::data, e.what());
    throw;
  }
  return resize_bilinear(img, kImageSize, kImageSize);
}

void MemorySource::add(Split split, Image img, int label) {
  items_[static_cast<std::size_t>(split)].emplace_back(std::move(img), label);
}

std::size_t MemorySource::size(Split split) const { return items_[static_cast<std::size_t>(split)].size(); }

int MemorySource::label(Split split, std::size_t index) const {
  return items_[static_cast<std::size_t>(split)].at(index).second;
}

Image MemorySource::image(Split split, std::size_t index) const {
  return resize_bilinear(items_[static_cast<std::size_t>(split)].at(index).first, kImageSize, kImageSize);
}

Tensor load_batch(const DataSource& source, Split split, std::span<const std::size_t> indices,
                  std::vector<int>* labels) {
  std::vector<Image> images;
  images.reserve(indices.size());
  if (labels != nullptr) labels->clear();
  for (std::size_t i : indices) {
    images.push_back(source.image(split, i));
    if (labels != nullptr) labels->push_back(source.label(split, i));
  }
  return images_to_tensor(images);
}

}  // namespace edgelite
