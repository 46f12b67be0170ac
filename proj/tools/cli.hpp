#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ddf2pol/training.hpp"

namespace ddf2pol::cli {

/// Run description read from a JSON file. Relative paths resolve against the
/// file's directory.
///
///   {"raster": "scene.t3", "labels": "labels.raw", "classes": 3, "patch": 15,
///    "fraction": 0.01, "seed": 1, "out": "run",
///    "learning_rate": 1e-3, "batch_size": 128, "epochs": 100, "patience": 10,
///    "class_names": ["water", ...], "palette": ["FF0000", ...]}
struct Manifest {
  std::filesystem::path raster;
  std::filesystem::path labels;
  std::filesystem::path out = "run";
  std::optional<std::size_t> classes;  // inferred from the label map when absent
  std::optional<std::size_t> patch;    // 15 for training when absent
  double fraction = 0.01;
  std::uint64_t seed = 1;
  TrainConfig train;
  std::vector<std::string> class_names;
  std::vector<std::string> palette;

  static Manifest load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

/// Independent stream for one use of the run seed ("split", "init", "train").
std::uint64_t derive_seed(std::uint64_t seed, const std::string& purpose);

/// Entry point shared by the executable and the tests. Returns the exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ddf2pol::cli
