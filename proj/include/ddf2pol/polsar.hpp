#pragma once

#include <array>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ddf2pol/image.hpp"
#include "ddf2pol/model.hpp"

namespace ddf2pol {

using cdouble = std::complex<double>;

/// Per-pixel 3x3 Hermitian coherency matrix, stored as its upper triangle.
struct CoherencyRaster {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> t11, t22, t33;
  std::vector<cdouble> t12, t13, t23;
  /// Negative diagonal values zeroed while loading.
  std::size_t clamped = 0;

  CoherencyRaster() = default;
  CoherencyRaster(std::size_t h, std::size_t w);
  std::size_t pixels() const { return height * width; }
  /// T11, T12, T13, T22, T23, T33 at one pixel.
  std::array<cdouble, 6> upper(std::size_t pixel) const;
};

enum class RasterFormat {
  kT3Dir,   // directory of raw float32 planes plus config.txt
  kPacked,  // single file, "POLT3\0" magic
};

/// Plane file stems of the t3-dir layout, in packed interleave order.
inline constexpr std::array<const char*, 9> kT3PlaneNames{
    "T11", "T22", "T33", "T12_real", "T12_imag", "T13_real", "T13_imag", "T23_real", "T23_imag"};

CoherencyRaster load_coherency(const std::filesystem::path& path, RasterFormat format);
/// t3-dir when `path` is a directory, packed otherwise.
CoherencyRaster load_coherency(const std::filesystem::path& path);
void write_packed(const CoherencyRaster& raster, const std::filesystem::path& path);
void write_t3_dir(const CoherencyRaster& raster, const std::filesystem::path& dir);

/// Twelve real feature planes:
///   RF1..RF6   |T11| |T12| |T13| |T22| |T23| |T33|
///   RF7        10 log10(SPAN), SPAN = T11 + T22 + T33
///   RF8, RF9   T22/SPAN, T33/SPAN
///   RF10..12   |T12|/sqrt(T11 T22), |T13|/sqrt(T11 T33), |T23|/sqrt(T22 T33)
struct DescriptorStack {
  static constexpr std::size_t kCount = 12;
  static constexpr double kSpanFloor = 1e-12;
  static constexpr double kFloorDb = -120.0;

  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> planes;  // plane-major: planes[f * H * W + pixel]
  /// Pixels where a zero-power guard fired.
  std::size_t degenerate = 0;

  double at(std::size_t feature, std::size_t pixel) const {
    return planes[feature * height * width + pixel];
  }
  std::span<const double> plane(std::size_t feature) const {
    return {planes.data() + feature * height * width, height * width};
  }
};

DescriptorStack compute_descriptors(const CoherencyRaster& raster);

/// Class ids: 0 = unlabeled, 1..K.
struct LabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> ids;
};

/// Raw grid ("<height> <width>\n" followed by H*W bytes) or 8-bit gray PNG.
LabelMap load_labels(const std::filesystem::path& path);
void write_labels_raw(const LabelMap& labels, const std::filesystem::path& path);

struct SplitResult {
  std::vector<std::size_t> train;  // pixel indices, ascending
  std::vector<std::size_t> test;
  std::size_t per_class = 0;
  /// Classes with fewer labeled pixels than per_class; all went to training.
  std::vector<std::size_t> short_classes;
};

/// Equal-count training draw per class, n = max(1, floor(fraction * labeled / K)).
SplitResult stratified_split(const LabelMap& labels, std::size_t num_classes, double fraction,
                             std::uint64_t seed);

struct NormalizationStats {
  std::array<double, DescriptorStack::kCount> mean{};
  std::array<double, DescriptorStack::kCount> stddev{};
  std::array<double, 6> magnitude{};  // mean |T_ij| per complex channel

  void save(const std::filesystem::path& path) const;
  static NormalizationStats load(const std::filesystem::path& path);
  bool operator==(const NormalizationStats&) const = default;
};

/// Statistics over the listed pixels (population variance).
NormalizationStats compute_normalization(const DescriptorStack& descriptors,
                                         const CoherencyRaster& raster,
                                         std::span<const std::size_t> pixels);

/// One training sample laid out as the model expects.
struct PatchPair {
  std::vector<double> real;  // (P,P,12)
  std::vector<double> re;    // (P,P,6)
  std::vector<double> im;    // (P,P,6)
  int label = -1;            // zero-based class, -1 if unlabeled
};

/// Pixel-centered windows over the normalized scene. Windows are materialized
/// on demand; borders replicate the nearest edge pixel.
class PatchDataset {
 public:
  /// Normalizes with `stats` when given, otherwise with statistics of `pixels`.
  static PatchDataset build(const DescriptorStack& descriptors, const CoherencyRaster& raster,
                            const LabelMap* labels, std::vector<std::size_t> pixels,
                            std::size_t patch, const NormalizationStats* stats = nullptr);

  /// Same normalized scene, different pixels.
  PatchDataset with_pixels(std::vector<std::size_t> pixels) const;

  std::size_t size() const { return pixels_.size(); }
  std::size_t patch() const { return patch_; }
  const NormalizationStats& stats() const { return scene_->stats; }
  const std::vector<std::size_t>& pixels() const { return pixels_; }
  const std::vector<int>& labels() const { return labels_; }
  std::size_t scene_height() const { return scene_->height; }
  std::size_t scene_width() const { return scene_->width; }

  PatchPair at(std::size_t index) const;
  PatchBatch batch(std::span<const std::size_t> indices) const;

  /// Normalized descriptor / complex value at a scene pixel.
  double descriptor(std::size_t pixel, std::size_t feature) const {
    return scene_->descriptors[pixel * DescriptorStack::kCount + feature];
  }

 private:
  struct Scene {
    std::size_t height = 0;
    std::size_t width = 0;
    NormalizationStats stats;
    std::vector<double> descriptors;  // pixel-major, 12 per pixel
    std::vector<double> re, im;       // pixel-major, 6 per pixel
    std::vector<std::uint8_t> ids;    // empty without labels
  };

  void fill(std::size_t index, double* real, double* re, double* im) const;
  std::vector<int> labels_for(const std::vector<std::size_t>& pixels) const;

  std::shared_ptr<const Scene> scene_;
  std::vector<std::size_t> pixels_;
  std::vector<int> labels_;
  std::size_t patch_ = 0;
};

/// False-color rendering: R = sqrt(T22), G = sqrt(T33), B = sqrt(T11), each
/// clipped at its 99th percentile and scaled to 0..255.
RgbImage pauli_rgb(const CoherencyRaster& raster);
void render_pauli(const CoherencyRaster& raster, const std::filesystem::path& path);

}  // namespace ddf2pol
