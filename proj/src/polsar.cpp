#include "ddf2pol/polsar.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "ddf2pol/errors.hpp"

namespace fs = std::filesystem;

namespace ddf2pol {

namespace {

constexpr std::array<char, 6> kPackedMagic{'P', 'O', 'L', 'T', '3', '\0'};

float read_f32(const unsigned char* p) {
  const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) |
                             static_cast<std::uint32_t>(p[1]) << 8 |
                             static_cast<std::uint32_t>(p[2]) << 16 |
                             static_cast<std::uint32_t>(p[3]) << 24;
  return std::bit_cast<float>(bits);
}

void write_f32(std::ostream& os, double v) {
  const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
  for (int i = 0; i < 4; ++i) os.put(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

std::vector<unsigned char> slurp(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

// Assigns the nine stored floats of one pixel in kT3PlaneNames order.
void set_pixel(CoherencyRaster& r, std::size_t p, const std::array<double, 9>& v) {
  std::array<double, 3> diag{v[0], v[1], v[2]};
  for (auto& d : diag) {
    if (d < 0.0) {
      d = 0.0;
      ++r.clamped;
    }
  }
  r.t11[p] = diag[0];
  r.t22[p] = diag[1];
  r.t33[p] = diag[2];
  r.t12[p] = {v[3], v[4]};
  r.t13[p] = {v[5], v[6]};
  r.t23[p] = {v[7], v[8]};
}

std::array<double, 9> pixel_values(const CoherencyRaster& r, std::size_t p) {
  return {r.t11[p],      r.t22[p],      r.t33[p],      r.t12[p].real(), r.t12[p].imag(),
          r.t13[p].real(), r.t13[p].imag(), r.t23[p].real(), r.t23[p].imag()};
}

// PolSARpro-style config.txt: "Nrow" and "Ncol" lines each followed by a value.
std::pair<std::size_t, std::size_t> read_t3_header(const fs::path& dir) {
  const fs::path header = dir / "config.txt";
  std::ifstream is(header);
  if (!is) throw FormatError("missing header " + header.string());
  std::size_t rows = 0, cols = 0;
  std::string token;
  while (is >> token) {
    if (token == "Nrow") is >> rows;
    if (token == "Ncol") is >> cols;
  }
  if (rows == 0 || cols == 0) throw FormatError("header " + header.string() + " lacks Nrow/Ncol");
  return {rows, cols};
}

CoherencyRaster load_t3_dir(const fs::path& dir) {
  const auto [rows, cols] = read_t3_header(dir);
  CoherencyRaster r(rows, cols);
  std::vector<std::vector<unsigned char>> planes;
  for (const char* name : kT3PlaneNames) {
    const fs::path file = dir / (std::string(name) + ".bin");
    if (!fs::exists(file)) throw FormatError("missing plane " + std::string(name) + " (" +
                                             file.string() + ")");
    planes.push_back(slurp(file));
    if (planes.back().size() != rows * cols * 4) {
      throw FormatError("plane " + std::string(name) + " has " +
                        std::to_string(planes.back().size()) + " bytes, expected " +
                        std::to_string(rows * cols * 4) + " (" + file.string() + ")");
    }
  }
  for (std::size_t p = 0; p < r.pixels(); ++p) {
    std::array<double, 9> v{};
    for (std::size_t k = 0; k < 9; ++k) v[k] = read_f32(planes[k].data() + 4 * p);
    set_pixel(r, p, v);
  }
  return r;
}

CoherencyRaster load_packed(const fs::path& path) {
  const auto bytes = slurp(path);
  if (bytes.size() < 14 || !std::equal(kPackedMagic.begin(), kPackedMagic.end(), bytes.begin(),
                                       [](char a, unsigned char b) { return a == static_cast<char>(b); })) {
    throw FormatError("bad magic in packed raster " + path.string());
  }
  auto u32 = [&](std::size_t off) {
    return static_cast<std::size_t>(bytes[off]) | static_cast<std::size_t>(bytes[off + 1]) << 8 |
           static_cast<std::size_t>(bytes[off + 2]) << 16 |
           static_cast<std::size_t>(bytes[off + 3]) << 24;
  };
  const std::size_t height = u32(6);
  const std::size_t width = u32(10);
  if (height == 0 || width == 0 || bytes.size() != 14 + height * width * 36) {
    throw FormatError("size mismatch in packed raster " + path.string());
  }
  CoherencyRaster r(height, width);
  for (std::size_t p = 0; p < r.pixels(); ++p) {
    std::array<double, 9> v{};
    for (std::size_t k = 0; k < 9; ++k) v[k] = read_f32(bytes.data() + 14 + 36 * p + 4 * k);
    set_pixel(r, p, v);
  }
  return r;
}

}  // namespace

CoherencyRaster::CoherencyRaster(std::size_t h, std::size_t w)
    : height(h),
      width(w),
      t11(h * w, 0.0),
      t22(h * w, 0.0),
      t33(h * w, 0.0),
      t12(h * w),
      t13(h * w),
      t23(h * w) {}

std::array<cdouble, 6> CoherencyRaster::upper(std::size_t p) const {
  return {cdouble(t11[p]), t12[p], t13[p], cdouble(t22[p]), t23[p], cdouble(t33[p])};
}

CoherencyRaster load_coherency(const fs::path& path, RasterFormat format) {
  return format == RasterFormat::kT3Dir ? load_t3_dir(path) : load_packed(path);
}

CoherencyRaster load_coherency(const fs::path& path) {
  return load_coherency(path, fs::is_directory(path) ? RasterFormat::kT3Dir : RasterFormat::kPacked);
}

void write_packed(const CoherencyRaster& r, const fs::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os.write(kPackedMagic.data(), kPackedMagic.size());
  for (std::size_t v : {r.height, r.width}) {
    for (int i = 0; i < 4; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  for (std::size_t p = 0; p < r.pixels(); ++p) {
    for (double v : pixel_values(r, p)) write_f32(os, v);
  }
  if (!os) throw IoError("failed writing " + path.string());
}

void write_t3_dir(const CoherencyRaster& r, const fs::path& dir) {
  fs::create_directories(dir);
  {
    std::ofstream header(dir / "config.txt");
    header << "Nrow\n" << r.height << "\n---------\nNcol\n" << r.width
           << "\n---------\nPolarCase\nmonostatic\n---------\nPolarType\nfull\n";
  }
  for (std::size_t k = 0; k < 9; ++k) {
    const fs::path file = dir / (std::string(kT3PlaneNames[k]) + ".bin");
    std::ofstream os(file, std::ios::binary);
    if (!os) throw IoError("cannot write " + file.string());
    for (std::size_t p = 0; p < r.pixels(); ++p) write_f32(os, pixel_values(r, p)[k]);
  }
}

DescriptorStack compute_descriptors(const CoherencyRaster& r) {
  DescriptorStack d;
  d.height = r.height;
  d.width = r.width;
  const std::size_t n = r.pixels();
  d.planes.assign(DescriptorStack::kCount * n, 0.0);
  // Correlation ratios are clipped to [0,1]; rounding can push rank-deficient
  // PSD pixels a few ulps past 1.
  auto ratio = [](double num, double a, double b, bool& guarded) {
    const double den = std::sqrt(a * b);
    if (!(den > 0.0)) {
      guarded = true;
      return 0.0;
    }
    return std::min(1.0, num / den);
  };
  for (std::size_t p = 0; p < n; ++p) {
    const double t11 = r.t11[p], t22 = r.t22[p], t33 = r.t33[p];
    const double m12 = std::abs(r.t12[p]), m13 = std::abs(r.t13[p]), m23 = std::abs(r.t23[p]);
    std::array<double, DescriptorStack::kCount> f{};
    f[0] = std::abs(t11);
    f[1] = m12;
    f[2] = m13;
    f[3] = std::abs(t22);
    f[4] = m23;
    f[5] = std::abs(t33);
    bool guarded = false;
    const double span = t11 + t22 + t33;
    if (span <= DescriptorStack::kSpanFloor) {
      guarded = true;
      f[6] = DescriptorStack::kFloorDb;
      f[7] = 0.0;
      f[8] = 0.0;
    } else {
      f[6] = 10.0 * std::log10(span);
      f[7] = t22 / span;
      f[8] = t33 / span;
    }
    f[9] = ratio(m12, t11, t22, guarded);
    f[10] = ratio(m13, t11, t33, guarded);
    f[11] = ratio(m23, t22, t33, guarded);
    if (guarded) ++d.degenerate;
    for (std::size_t k = 0; k < f.size(); ++k) d.planes[k * n + p] = f[k];
  }
  return d;
}

LabelMap load_labels(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("label map not found: " + path.string());
  LabelMap m;
  if (looks_like_png(path)) {
    GrayImage g = read_png_gray(path);
    m.height = g.height;
    m.width = g.width;
    m.ids = std::move(g.values);
    return m;
  }
  std::ifstream is(path, std::ios::binary);
  if (!(is >> m.height >> m.width) || m.height == 0 || m.width == 0) {
    throw FormatError("bad label header in " + path.string());
  }
  is.get();  // single separator after the header
  m.ids.resize(m.height * m.width);
  is.read(reinterpret_cast<char*>(m.ids.data()), static_cast<std::streamsize>(m.ids.size()));
  if (is.gcount() != static_cast<std::streamsize>(m.ids.size()) ||
      is.peek() != std::char_traits<char>::eof()) {
    throw FormatError("label grid size mismatch in " + path.string());
  }
  return m;
}

void write_labels_raw(const LabelMap& labels, const fs::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << labels.height << ' ' << labels.width << '\n';
  os.write(reinterpret_cast<const char*>(labels.ids.data()),
           static_cast<std::streamsize>(labels.ids.size()));
}

SplitResult stratified_split(const LabelMap& labels, std::size_t num_classes, double fraction,
                             std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw UsageError("training fraction must lie in (0,1)");
  }
  std::vector<std::vector<std::size_t>> by_class(num_classes);
  std::size_t labeled = 0;
  for (std::size_t p = 0; p < labels.ids.size(); ++p) {
    const std::size_t id = labels.ids[p];
    if (id == 0) continue;
    if (id > num_classes) {
      throw DataError("pixel " + std::to_string(p) + " has class " + std::to_string(id) +
                      " but only " + std::to_string(num_classes) + " classes are configured");
    }
    by_class[id - 1].push_back(p);
    ++labeled;
  }
  for (std::size_t k = 0; k < num_classes; ++k) {
    if (by_class[k].empty()) {
      throw DataError("class " + std::to_string(k + 1) + " has no labeled pixels");
    }
  }
  SplitResult out;
  const double share = fraction * static_cast<double>(labeled) / static_cast<double>(num_classes);
  out.per_class = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(share + 1e-9)));

  std::mt19937_64 rng(seed);
  std::vector<char> in_train(labels.ids.size(), 0);
  for (std::size_t k = 0; k < num_classes; ++k) {
    auto& pool = by_class[k];
    std::size_t take = out.per_class;
    if (pool.size() < take) {
      take = pool.size();
      out.short_classes.push_back(k + 1);
    }
    // Partial Fisher-Yates: the first `take` entries become a uniform draw.
    for (std::size_t i = 0; i < take; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
      in_train[pool[i]] = 1;
    }
  }
  for (std::size_t p = 0; p < labels.ids.size(); ++p) {
    if (labels.ids[p] == 0) continue;
    (in_train[p] ? out.train : out.test).push_back(p);
  }
  return out;
}

void NormalizationStats::save(const fs::path& path) const {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << std::setprecision(17);
  for (std::size_t i = 0; i < mean.size(); ++i) {
    os << "descriptor " << i + 1 << ' ' << mean[i] << ' ' << stddev[i] << '\n';
  }
  for (std::size_t i = 0; i < magnitude.size(); ++i) {
    os << "complex " << i + 1 << ' ' << magnitude[i] << '\n';
  }
}

NormalizationStats NormalizationStats::load(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read normalization stats " + path.string());
  NormalizationStats s;
  std::string kind;
  std::size_t index = 0;
  std::size_t seen = 0;
  while (is >> kind >> index) {
    if (kind == "descriptor" && index >= 1 && index <= s.mean.size()) {
      is >> s.mean[index - 1] >> s.stddev[index - 1];
    } else if (kind == "complex" && index >= 1 && index <= s.magnitude.size()) {
      is >> s.magnitude[index - 1];
    } else {
      throw FormatError("unexpected entry '" + kind + "' in " + path.string());
    }
    if (!is) throw FormatError("truncated entry in " + path.string());
    ++seen;
  }
  if (seen != s.mean.size() + s.magnitude.size()) {
    throw FormatError("incomplete normalization stats in " + path.string());
  }
  return s;
}

NormalizationStats compute_normalization(const DescriptorStack& d, const CoherencyRaster& r,
                                         std::span<const std::size_t> pixels) {
  if (pixels.empty()) throw DataError("normalization needs at least one pixel");
  NormalizationStats s;
  const double n = static_cast<double>(pixels.size());
  for (std::size_t f = 0; f < DescriptorStack::kCount; ++f) {
    double total = 0.0;
    for (auto p : pixels) total += d.at(f, p);
    const double mean = total / n;
    double sq = 0.0;
    for (auto p : pixels) sq += (d.at(f, p) - mean) * (d.at(f, p) - mean);
    const double sd = std::sqrt(sq / n);
    s.mean[f] = mean;
    s.stddev[f] = sd > 0.0 ? sd : 1.0;
  }
  for (std::size_t c = 0; c < 6; ++c) {
    double total = 0.0;
    for (auto p : pixels) total += std::abs(r.upper(p)[c]);
    const double mag = total / n;
    s.magnitude[c] = mag > 0.0 ? mag : 1.0;
  }
  return s;
}

PatchDataset PatchDataset::build(const DescriptorStack& descriptors, const CoherencyRaster& raster,
                                 const LabelMap* labels, std::vector<std::size_t> pixels,
                                 std::size_t patch, const NormalizationStats* stats) {
  if (patch == 0 || patch % 2 == 0) throw UsageError("patch size must be odd");
  if (descriptors.height != raster.height || descriptors.width != raster.width ||
      (labels && (labels->height != raster.height || labels->width != raster.width))) {
    throw DataError("raster, descriptor and label dimensions disagree");
  }
  auto scene = std::make_shared<Scene>();
  scene->height = raster.height;
  scene->width = raster.width;
  scene->stats = stats ? *stats : compute_normalization(descriptors, raster, pixels);
  const std::size_t n = raster.pixels();
  const std::size_t nf = DescriptorStack::kCount;
  scene->descriptors.resize(n * nf);
  scene->re.resize(n * 6);
  scene->im.resize(n * 6);
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t f = 0; f < nf; ++f) {
      scene->descriptors[p * nf + f] =
          (descriptors.at(f, p) - scene->stats.mean[f]) / scene->stats.stddev[f];
    }
    const auto t = raster.upper(p);
    for (std::size_t c = 0; c < 6; ++c) {
      scene->re[p * 6 + c] = t[c].real() / scene->stats.magnitude[c];
      scene->im[p * 6 + c] = t[c].imag() / scene->stats.magnitude[c];
    }
  }
  if (labels) scene->ids = labels->ids;

  PatchDataset ds;
  ds.scene_ = std::move(scene);
  ds.patch_ = patch;
  return ds.with_pixels(std::move(pixels));
}

PatchDataset PatchDataset::with_pixels(std::vector<std::size_t> pixels) const {
  PatchDataset ds;
  ds.scene_ = scene_;
  ds.patch_ = patch_;
  for (auto p : pixels) {
    if (p >= scene_->height * scene_->width) throw UsageError("pixel index outside the scene");
  }
  ds.labels_ = labels_for(pixels);
  ds.pixels_ = std::move(pixels);
  return ds;
}

std::vector<int> PatchDataset::labels_for(const std::vector<std::size_t>& pixels) const {
  std::vector<int> out(pixels.size(), -1);
  if (scene_->ids.empty()) return out;
  for (std::size_t i = 0; i < pixels.size(); ++i) out[i] = static_cast<int>(scene_->ids[pixels[i]]) - 1;
  return out;
}

void PatchDataset::fill(std::size_t index, double* real, double* re, double* im) const {
  const Scene& s = *scene_;
  const auto half = static_cast<std::ptrdiff_t>(patch_ / 2);
  const auto cy = static_cast<std::ptrdiff_t>(pixels_[index] / s.width);
  const auto cx = static_cast<std::ptrdiff_t>(pixels_[index] % s.width);
  const auto max_y = static_cast<std::ptrdiff_t>(s.height) - 1;
  const auto max_x = static_cast<std::ptrdiff_t>(s.width) - 1;
  const std::size_t nf = DescriptorStack::kCount;
  for (std::ptrdiff_t dy = -half; dy <= half; ++dy) {
    const auto y = std::clamp<std::ptrdiff_t>(cy + dy, 0, max_y);
    for (std::ptrdiff_t dx = -half; dx <= half; ++dx) {
      const auto x = std::clamp<std::ptrdiff_t>(cx + dx, 0, max_x);
      const std::size_t src = static_cast<std::size_t>(y) * s.width + static_cast<std::size_t>(x);
      const std::size_t dst = static_cast<std::size_t>((dy + half) * static_cast<std::ptrdiff_t>(patch_) + dx + half);
      std::copy_n(s.descriptors.data() + src * nf, nf, real + dst * nf);
      std::copy_n(s.re.data() + src * 6, 6, re + dst * 6);
      std::copy_n(s.im.data() + src * 6, 6, im + dst * 6);
    }
  }
}

PatchPair PatchDataset::at(std::size_t index) const {
  PatchPair pp;
  pp.real.resize(patch_ * patch_ * DescriptorStack::kCount);
  pp.re.resize(patch_ * patch_ * 6);
  pp.im.resize(patch_ * patch_ * 6);
  fill(index, pp.real.data(), pp.re.data(), pp.im.data());
  pp.label = labels_.at(index);
  return pp;
}

PatchBatch PatchDataset::batch(std::span<const std::size_t> indices) const {
  const std::size_t b = indices.size();
  const std::size_t area = patch_ * patch_;
  std::vector<double> real(b * area * DescriptorStack::kCount);
  std::vector<double> re(b * area * 6);
  std::vector<double> im(b * area * 6);
  PatchBatch out;
  for (std::size_t i = 0; i < b; ++i) {
    fill(indices[i], real.data() + i * area * DescriptorStack::kCount, re.data() + i * area * 6,
         im.data() + i * area * 6);
    out.labels.push_back(labels_.at(indices[i]));
  }
  out.descriptors = Tensor(Shape{b, patch_, patch_, DescriptorStack::kCount, 1}, std::move(real));
  out.coherency = ComplexPair(Tensor(Shape{b, patch_, patch_, 6, 1}, std::move(re)),
                              Tensor(Shape{b, patch_, patch_, 6, 1}, std::move(im)));
  return out;
}

RgbImage pauli_rgb(const CoherencyRaster& r) {
  RgbImage img(r.width, r.height);
  const std::size_t n = r.pixels();
  const std::array<const std::vector<double>*, 3> sources{&r.t22, &r.t33, &r.t11};
  for (std::size_t ch = 0; ch < 3; ++ch) {
    std::vector<double> amp(n);
    for (std::size_t p = 0; p < n; ++p) amp[p] = std::sqrt(std::max(0.0, (*sources[ch])[p]));
    std::vector<double> sorted = amp;
    const std::size_t k = static_cast<std::size_t>(std::floor(0.99 * static_cast<double>(n - 1)));
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k), sorted.end());
    const double clip = sorted[k];
    for (std::size_t p = 0; p < n; ++p) {
      const double v = clip > 0.0 ? std::min(amp[p], clip) / clip : 0.0;
      img.rgb[3 * p + ch] = static_cast<std::uint8_t>(std::lround(255.0 * v));
    }
  }
  return img;
}

void render_pauli(const CoherencyRaster& raster, const fs::path& path) {
  write_png(pauli_rgb(raster), path);
}

}  // namespace ddf2pol
