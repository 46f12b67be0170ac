#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ddf2pol/polsar.hpp"

namespace ddf2pol {

using Covariance3 = std::array<std::array<cdouble, 3>, 3>;

enum class SceneLayout {
  kStripes,  // K vertical bands of (nearly) equal width
  kVoronoi,  // nearest of K random seed points
};

struct SceneSpec {
  std::size_t height = 128;
  std::size_t width = 128;
  std::vector<Covariance3> class_covariances;  // class k+1 uses entry k
  std::size_t looks = 4;
  std::uint64_t seed = 1;
  SceneLayout layout = SceneLayout::kStripes;

  /// Three classes dominated by T11, T22 and T33 respectively.
  static SceneSpec three_class_default();
  /// JSON: {"height","width","looks","seed","layout":"stripes"|"voronoi",
  ///        "classes":[{"name":..., "re":[[..3]x3], "im":[[..3]x3]}]}
  static SceneSpec from_json_file(const std::filesystem::path& path);
  void save_json(const std::filesystem::path& path) const;

  /// Throws SpecError naming the first non-Hermitian or non-PSD class.
  void validate() const;
};

struct SyntheticScene {
  CoherencyRaster raster;
  LabelMap labels;
};

/// Each pixel's coherency is the L-look sample covariance of zero-mean circular
/// complex Gaussian vectors drawn with its class covariance. Every pixel seeds
/// its own generator from (seed, pixel index), so output is schedule-independent.
SyntheticScene sample_scene(const SceneSpec& spec);

/// Class id (1..K) of every pixel under the spec's layout.
LabelMap scene_layout(const SceneSpec& spec);

}  // namespace ddf2pol
