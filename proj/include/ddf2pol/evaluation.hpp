#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "ddf2pol/image.hpp"
#include "ddf2pol/model.hpp"
#include "ddf2pol/polsar.hpp"

namespace ddf2pol {

/// Rows are reference classes, columns predicted classes.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes) : k_(classes), counts_(classes * classes, 0) {}

  std::size_t classes() const { return k_; }
  std::uint64_t& operator()(std::size_t ref, std::size_t pred) { return counts_.at(ref * k_ + pred); }
  std::uint64_t operator()(std::size_t ref, std::size_t pred) const {
    return counts_.at(ref * k_ + pred);
  }
  void add(std::size_t ref, std::size_t pred) { ++(*this)(ref, pred); }
  std::uint64_t total() const;
  std::uint64_t row_sum(std::size_t ref) const;
  std::uint64_t col_sum(std::size_t pred) const;

 private:
  std::size_t k_;
  std::vector<std::uint64_t> counts_;
};

struct Metrics {
  double overall = 0.0;  // OA
  double average = 0.0;  // AA
  double kappa = 0.0;
  std::vector<double> per_class;
};

/// Throws DataError naming the class when a reference row is empty.
Metrics compute_metrics(const ConfusionMatrix& cm);

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  bool operator==(const Rgb&) const = default;
};

/// Class id k (1..K) is drawn with colors[k-1]; unlabeled pixels are black.
struct ClassPalette {
  std::vector<Rgb> colors;

  static ClassPalette flevoland();
  static ClassPalette san_francisco();
  /// First K Flevoland colors, or evenly spaced hues when K > 15.
  static ClassPalette for_classes(std::size_t k);
  static Rgb parse_hex(const std::string& hex);
};

/// Predicted class (1..K) for every pixel of the scene, labeled or not.
/// `dataset` supplies the normalized scene; its own pixel list is ignored.
LabelMap classify_scene(Ddf2PolModel& model, const PatchDataset& dataset,
                        std::size_t batch_size = 256);

/// Predicted class ids (1..K) for the dataset's pixels, in dataset order.
std::vector<std::uint8_t> classify_pixels(Ddf2PolModel& model, const PatchDataset& dataset,
                                          std::size_t batch_size = 256);

/// Confusion matrix of predictions against the dataset's reference labels.
ConfusionMatrix confusion(const PatchDataset& dataset, std::span<const std::uint8_t> predicted,
                          std::size_t classes);

RgbImage render_map(const LabelMap& map, const ClassPalette& palette);
void write_map(const LabelMap& map, const ClassPalette& palette, const std::filesystem::path& path);
/// Inverse of render_map for a palette with distinct colors; black reads as 0.
LabelMap parse_map(const RgbImage& image, const ClassPalette& palette);

/// Table with one row per class (train count, test count, accuracy %) and the
/// OA/AA/Kappa x 100 summary rows.
void write_metrics_table(const Metrics& metrics, std::span<const std::size_t> train_counts,
                         std::span<const std::size_t> test_counts,
                         std::span<const std::string> class_names, std::ostream& os);
/// key=value lines: oa, aa, kappa, class_<k>.
void write_metrics_kv(const Metrics& metrics, std::ostream& os);

}  // namespace ddf2pol
