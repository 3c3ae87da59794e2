#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "edgelite/image.hpp"
#include "edgelite/rng.hpp"
#include "edgelite/tensor.hpp"

namespace edgelite {

enum class Split : std::uint8_t { train, val, test };
enum class Origin : std::uint8_t { real, synthetic, augmented };
/// Class indices used by the classifier head.
enum class Label : std::uint8_t { clean = 0, hazard = 1 };

inline constexpr std::array<Split, 3> kSplits = {Split::train, Split::val, Split::test};
inline constexpr std::array<Label, 2> kLabels = {Label::hazard, Label::clean};

std::string_view to_string(Split s);
std::string_view to_string(Origin o);
std::string_view to_string(Label l);
Split parse_split(std::string_view s);
Origin parse_origin(std::string_view s);
Label parse_label(std::string_view s);

struct ManifestRecord {
  std::string path;  // relative to the manifest's directory
  Label label = Label::clean;
  Split split = Split::train;
  Origin origin = Origin::real;
  std::uint64_t seed = 0;

  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;

  std::size_t count(Label label, Split split) const;
  std::size_t count(Split split) const;
  std::size_t count(Origin origin) const;
  /// Data error on duplicate paths.
  void validate() const;

  std::string to_csv() const;
  static DatasetManifest from_csv(std::string_view text);
  void write(const std::filesystem::path& path) const;
  static DatasetManifest read(const std::filesystem::path& path);
};

/// Images per class in each split.
struct SplitCounts {
  std::size_t train = 2224;
  std::size_t val = 526;
  std::size_t test = 500;

  std::size_t of(Split s) const;
  std::size_t total() const { return train + val + test; }
};

inline constexpr std::int64_t kImageSize = 224;

/// Low-saturation tiled floor texture.
Image procedural_floor(Rng& rng, std::int64_t size = kImageSize);
/// Vivid soft-edged blob on a transparent canvas.
RgbaImage procedural_hazard(Rng& rng, std::int64_t size = 96);
/// A placement that keeps the scaled cutout near the centre of the background.
Placement central_placement(Rng& rng, const Image& background, const RgbaImage& cutout);
/// Full procedural sample of either class.
Image procedural_sample(Label label, Rng& rng);
/// Random augmentation within the ranges used for dataset expansion.
AugmentSpec random_augment(Rng& rng);

/// Stand-in for the photographed pool: writes `per_class` images into
/// dir/hazard and dir/clean. Every image is a pure function of (seed, index).
void generate_real_pool(const std::filesystem::path& dir, std::size_t per_class, std::uint64_t seed,
                        unsigned threads = 1);

struct ManifestOptions {
  std::filesystem::path real_dir;  // holds hazard/*.ppm and clean/*.ppm
  std::filesystem::path out_dir;   // receives synthetic/, augmented/ and the manifest
  std::size_t synth_count = 300;
  std::size_t augment_target = 5020;  // most augmented images that may be created
  SplitCounts splits{};
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

/// Composites `synth_count` hazards onto real clean floors, splits every
/// source per class, then tops each split up with augmented children of that
/// split's own sources. Data error (with the shortfall) when the pool cannot
/// reach the requested counts.
DatasetManifest build_manifest(const ManifestOptions& options);

/// Writes `count` composites under out_dir/synthetic and returns their records.
DatasetManifest synthesize_composites(const std::filesystem::path& out_dir, std::size_t count, std::uint64_t seed,
                                      unsigned threads = 1);

class DataSource {
 public:
  virtual ~DataSource() = default;
  virtual std::size_t size(Split split) const = 0;
  virtual int label(Split split, std::size_t index) const = 0;
  /// The image at model resolution.
  virtual Image image(Split split, std::size_t index) const = 0;
};

class ManifestSource final : public DataSource {
 public:
  ManifestSource(DatasetManifest manifest, std::filesystem::path root);
  static ManifestSource open(const std::filesystem::path& manifest_path);

  std::size_t size(Split split) const override;
  int label(Split split, std::size_t index) const override;
  Image image(Split split, std::size_t index) const override;
  const DatasetManifest& manifest() const noexcept { return manifest_; }

 private:
  DatasetManifest manifest_;
  std::filesystem::path root_;
  std::array<std::vector<std::size_t>, 3> by_split_;
};

class MemorySource final : public DataSource {
 public:
  void add(Split split, Image img, int label);

  std::size_t size(Split split) const override;
  int label(Split split, std::size_t index) const override;
  Image image(Split split, std::size_t index) const override;

 private:
  std::array<std::vector<std::pair<Image, int>>, 3> items_;
};

/// Normalized (n, 3, 224, 224) batch and its labels.
Tensor load_batch(const DataSource& source, Split split, std::span<const std::size_t> indices,
                  std::vector<int>* labels = nullptr);

}  // namespace edgelite
