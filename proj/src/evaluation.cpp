#include "ddf2pol/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>

#include "ddf2pol/errors.hpp"

namespace ddf2pol {

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t ref) const {
  std::uint64_t s = 0;
  for (std::size_t j = 0; j < k_; ++j) s += (*this)(ref, j);
  return s;
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t pred) const {
  std::uint64_t s = 0;
  for (std::size_t i = 0; i < k_; ++i) s += (*this)(i, pred);
  return s;
}

Metrics compute_metrics(const ConfusionMatrix& cm) {
  const std::size_t k = cm.classes();
  const auto total = static_cast<double>(cm.total());
  if (total == 0.0) throw DataError("confusion matrix is empty");
  Metrics m;
  double trace = 0.0;
  double chance = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const auto row = static_cast<double>(cm.row_sum(i));
    if (row == 0.0) {
      throw DataError("class " + std::to_string(i + 1) + " has no reference pixels");
    }
    m.per_class.push_back(static_cast<double>(cm(i, i)) / row);
    trace += static_cast<double>(cm(i, i));
    chance += row * static_cast<double>(cm.col_sum(i));
  }
  m.overall = trace / total;
  m.average = std::accumulate(m.per_class.begin(), m.per_class.end(), 0.0) /
              static_cast<double>(k);
  const double pe = chance / (total * total);
  // p_e == 1 only when every pixel sits in one cell; agreement is then perfect.
  m.kappa = pe < 1.0 ? (m.overall - pe) / (1.0 - pe) : 1.0;
  return m;
}

Rgb ClassPalette::parse_hex(const std::string& hex) {
  if (hex.size() != 6) throw UsageError("color must be RRGGBB, got '" + hex + "'");
  const auto v = std::stoul(hex, nullptr, 16);
  return {static_cast<std::uint8_t>(v >> 16), static_cast<std::uint8_t>((v >> 8) & 0xFF),
          static_cast<std::uint8_t>(v & 0xFF)};
}

ClassPalette ClassPalette::flevoland() {
  ClassPalette p;
  for (const char* hex : {"FF0000", "FF6600", "FFCC00", "CCFF00", "66FF00", "00FF00", "00FF66",
                          "00FFCC", "00CCFF", "0066FF", "0000FF", "6600FF", "CC00FF", "FF00CC",
                          "FF0066"}) {
    p.colors.push_back(parse_hex(hex));
  }
  return p;
}

ClassPalette ClassPalette::san_francisco() {
  ClassPalette p;
  for (const char* hex : {"FF0000", "CCFF00", "00FF66", "0066FF", "CC00FF"}) {
    p.colors.push_back(parse_hex(hex));
  }
  return p;
}

ClassPalette ClassPalette::for_classes(std::size_t k) {
  ClassPalette p = flevoland();
  if (k <= p.colors.size()) {
    p.colors.resize(k);
    return p;
  }
  p.colors.clear();
  for (std::size_t i = 0; i < k; ++i) {
    // Full-saturation hue wheel; distinct for k <= 1530.
    const double h = 6.0 * static_cast<double>(i) / static_cast<double>(k);
    const int sector = static_cast<int>(h);
    const auto f = static_cast<std::uint8_t>(std::lround(255.0 * (h - sector)));
    const auto q = static_cast<std::uint8_t>(255 - f);
    switch (sector) {
      case 0: p.colors.push_back({255, f, 0}); break;
      case 1: p.colors.push_back({q, 255, 0}); break;
      case 2: p.colors.push_back({0, 255, f}); break;
      case 3: p.colors.push_back({0, q, 255}); break;
      case 4: p.colors.push_back({f, 0, 255}); break;
      default: p.colors.push_back({255, 0, q}); break;
    }
  }
  return p;
}

std::vector<std::uint8_t> classify_pixels(Ddf2PolModel& model, const PatchDataset& dataset,
                                          std::size_t batch_size) {
  NoGradGuard no_grad;
  const std::size_t k = model.config().num_classes;
  if (dataset.patch() != model.config().patch) {
    throw UsageError("dataset patch " + std::to_string(dataset.patch()) +
                     " does not match model patch " + std::to_string(model.config().patch));
  }
  std::vector<std::uint8_t> out(dataset.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < dataset.size(); start += batch_size) {
    const std::size_t end = std::min(dataset.size(), start + batch_size);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor logits = model.forward(dataset.batch(idx), Mode::kInfer);
    const auto lv = logits.values();
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const auto row = lv.subspan(b * k, k);
      out[start + b] =
          static_cast<std::uint8_t>(1 + (std::max_element(row.begin(), row.end()) - row.begin()));
    }
  }
  return out;
}

LabelMap classify_scene(Ddf2PolModel& model, const PatchDataset& dataset, std::size_t batch_size) {
  LabelMap map;
  map.height = dataset.scene_height();
  map.width = dataset.scene_width();
  std::vector<std::size_t> all(map.height * map.width);
  std::iota(all.begin(), all.end(), std::size_t{0});
  map.ids = classify_pixels(model, dataset.with_pixels(std::move(all)), batch_size);
  return map;
}

ConfusionMatrix confusion(const PatchDataset& dataset, std::span<const std::uint8_t> predicted,
                          std::size_t classes) {
  if (predicted.size() != dataset.size()) throw UsageError("prediction count mismatch");
  ConfusionMatrix cm(classes);
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const int ref = dataset.labels()[i];
    if (ref < 0) continue;
    if (static_cast<std::size_t>(ref) >= classes || predicted[i] == 0 || predicted[i] > classes) {
      throw DataError("class id outside 1.." + std::to_string(classes));
    }
    cm.add(static_cast<std::size_t>(ref), predicted[i] - 1u);
  }
  return cm;
}

RgbImage render_map(const LabelMap& map, const ClassPalette& palette) {
  RgbImage img(map.width, map.height);
  for (std::size_t p = 0; p < map.ids.size(); ++p) {
    const std::size_t id = map.ids[p];
    if (id == 0) continue;
    if (id > palette.colors.size()) {
      throw DataError("class id " + std::to_string(id) + " has no palette color");
    }
    const Rgb c = palette.colors[id - 1];
    img.rgb[3 * p] = c.r;
    img.rgb[3 * p + 1] = c.g;
    img.rgb[3 * p + 2] = c.b;
  }
  return img;
}

void write_map(const LabelMap& map, const ClassPalette& palette, const std::filesystem::path& path) {
  write_png(render_map(map, palette), path);
}

LabelMap parse_map(const RgbImage& image, const ClassPalette& palette) {
  LabelMap map;
  map.height = image.height;
  map.width = image.width;
  map.ids.resize(image.width * image.height);
  for (std::size_t p = 0; p < map.ids.size(); ++p) {
    const Rgb c{image.rgb[3 * p], image.rgb[3 * p + 1], image.rgb[3 * p + 2]};
    if (c == Rgb{}) continue;
    const auto it = std::find(palette.colors.begin(), palette.colors.end(), c);
    if (it == palette.colors.end()) throw DataError("pixel color not in palette");
    map.ids[p] = static_cast<std::uint8_t>(1 + (it - palette.colors.begin()));
  }
  return map;
}

void write_metrics_table(const Metrics& m, std::span<const std::size_t> train_counts,
                         std::span<const std::size_t> test_counts,
                         std::span<const std::string> class_names, std::ostream& os) {
  os << std::left << std::setw(16) << "Class" << std::right << std::setw(10) << "Train"
     << std::setw(10) << "Test" << std::setw(12) << "Accuracy" << '\n';
  os << std::fixed << std::setprecision(2);
  for (std::size_t k = 0; k < m.per_class.size(); ++k) {
    const std::string name =
        k < class_names.size() ? class_names[k] : "class " + std::to_string(k + 1);
    os << std::left << std::setw(16) << name << std::right << std::setw(10)
       << (k < train_counts.size() ? train_counts[k] : 0) << std::setw(10)
       << (k < test_counts.size() ? test_counts[k] : 0) << std::setw(12)
       << 100.0 * m.per_class[k] << '\n';
  }
  os << std::left << std::setw(36) << "OA (%)" << std::right << std::setw(12) << 100.0 * m.overall
     << '\n';
  os << std::left << std::setw(36) << "AA (%)" << std::right << std::setw(12) << 100.0 * m.average
     << '\n';
  os << std::left << std::setw(36) << "Kappa x 100" << std::right << std::setw(12)
     << 100.0 * m.kappa << '\n';
  os.unsetf(std::ios::floatfield);
}

void write_metrics_kv(const Metrics& m, std::ostream& os) {
  os << std::setprecision(17);
  os << "oa=" << m.overall << '\n' << "aa=" << m.average << '\n' << "kappa=" << m.kappa << '\n';
  for (std::size_t k = 0; k < m.per_class.size(); ++k) {
    os << "class_" << k + 1 << '=' << m.per_class[k] << '\n';
  }
}

}  // namespace ddf2pol
