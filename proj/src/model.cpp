#include "ddf2pol/model.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "ddf2pol/errors.hpp"

namespace ddf2pol {

namespace {

constexpr std::array<char, 8> kMagic{'D', 'D', 'F', '2', 'P', 'O', 'L', '1'};
constexpr std::uint32_t kConfigFields = 7;

void fill_uniform(Tensor& t, double limit, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (auto& v : t.mutable_values()) v = dist(rng);
}

double glorot_limit(double fan_in, double fan_out) { return std::sqrt(6.0 / (fan_in + fan_out)); }

// Little-endian writers/readers independent of host byte order.
void put_u32(std::ostream& os, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::ostream& os, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_le(std::istream& is, int bytes, const std::string& what) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    const int c = is.get();
    if (c == std::char_traits<char>::eof()) throw FormatError("checkpoint truncated in " + what);
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}

void check_descriptor_input(const Tensor& t, const ModelConfig& c, std::size_t depth,
                              const char* what) {
  const Shape& s = t.shape();
  if (s.rank() != 5 || s[1] != c.patch || s[2] != c.patch || s[3] != depth || s[4] != 1) {
    std::ostringstream os;
    os << what << " input must be (B," << c.patch << ',' << c.patch << ',' << depth
       << ",1), got " << s.str();
    throw ShapeError(os.str());
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (patch < 5 || patch % 2 == 0) {
    throw UsageError("patch size must be odd and >= 5, got " + std::to_string(patch));
  }
  if (num_classes < 2) {
    throw UsageError("need at least 2 classes, got " + std::to_string(num_classes));
  }
  if (descriptor_depth == 0 || complex_depth == 0 || filters1 == 0 || filters2 == 0 ||
      ca_reduction == 0) {
    throw UsageError("layer widths must be positive");
  }
}

std::size_t ModelConfig::attention_width() const {
  return std::max<std::size_t>(1, fused_channels() / ca_reduction);
}

Ddf2PolModel::Ddf2PolModel(const ModelConfig& config)
    : rv_conv1(1, config.filters1),
      rv_conv2(config.filters1, config.filters2),
      cv_conv1(1, config.filters1),
      cv_conv2(config.filters1, config.filters2),
      depthwise(config.fused_channels()),
      attention(config.fused_channels(), config.attention_width()),
      classifier(config.fused_channels(), config.num_classes),
      config_(config) {
  config_.validate();
}

Ddf2PolModel Ddf2PolModel::initialize(const ModelConfig& config, std::uint64_t seed) {
  Ddf2PolModel m(config);
  std::mt19937_64 rng(seed);
  const double f1 = static_cast<double>(config.filters1);
  const double f2 = static_cast<double>(config.filters2);
  const double c = static_cast<double>(config.fused_channels());
  const double r = static_cast<double>(config.attention_width());
  const double k = static_cast<double>(config.num_classes);

  fill_uniform(m.rv_conv1.kernel, glorot_limit(27.0, 27.0 * f1), rng);
  fill_uniform(m.rv_conv2.kernel, glorot_limit(27.0 * f1, 27.0 * f2), rng);
  // Real and imaginary parts each get half the variance of a real kernel.
  const double half = 1.0 / std::sqrt(2.0);
  fill_uniform(m.cv_conv1.kernel.re, half * glorot_limit(27.0, 27.0 * f1), rng);
  fill_uniform(m.cv_conv1.kernel.im, half * glorot_limit(27.0, 27.0 * f1), rng);
  fill_uniform(m.cv_conv2.kernel.re, half * glorot_limit(27.0 * f1, 27.0 * f2), rng);
  fill_uniform(m.cv_conv2.kernel.im, half * glorot_limit(27.0 * f1, 27.0 * f2), rng);
  fill_uniform(m.depthwise.kernel, glorot_limit(9.0, 9.0), rng);
  fill_uniform(m.attention.shared.kernel, glorot_limit(c, r), rng);
  fill_uniform(m.attention.height_gate.kernel, glorot_limit(r, c), rng);
  fill_uniform(m.attention.width_gate.kernel, glorot_limit(r, c), rng);
  fill_uniform(m.classifier.kernel, glorot_limit(c, k), rng);
  return m;
}

Tensor Ddf2PolModel::fused_features(const Tensor& descriptors,
                                    const ComplexPair& coherency) const {
  check_descriptor_input(descriptors, config_, config_.descriptor_depth, "descriptor");
  check_descriptor_input(coherency.re, config_, config_.complex_depth, "complex");
  const std::size_t batch = descriptors.shape()[0];
  if (coherency.shape()[0] != batch) throw ShapeError("stream batch sizes differ");
  const std::size_t side = config_.feature_size();

  Tensor real = relu(rv_conv2.forward(relu(rv_conv1.forward(descriptors))));
  real = reshape(real, Shape{batch, side, side, config_.stream_channels()});

  const ComplexPair cplx = split_relu(cv_conv2.forward(split_relu(cv_conv1.forward(coherency))));
  const Shape flat{batch, side, side, config_.complex_depth * config_.filters2};
  const Tensor complex_as_real = concat({reshape(cplx.re, flat), reshape(cplx.im, flat)}, 3);

  return concat({real, complex_as_real}, 3);
}

Tensor Ddf2PolModel::forward(const Tensor& descriptors, const ComplexPair& coherency, Mode mode) {
  const Tensor fused = fused_features(descriptors, coherency);
  const Tensor refined = relu(depthwise.forward(fused));
  const Tensor attended = attention.forward(refined, mode);
  return classifier.forward(global_average_pool(attended));
}

std::vector<NamedTensor> Ddf2PolModel::named_tensors() const {
  std::vector<NamedTensor> out;
  rv_conv1.collect("rv_conv1", out);
  rv_conv2.collect("rv_conv2", out);
  cv_conv1.collect("cv_conv1", out);
  cv_conv2.collect("cv_conv2", out);
  depthwise.collect("depthwise", out);
  attention.collect("attention", out);
  classifier.collect("classifier", out);
  return out;
}

std::vector<Tensor> Ddf2PolModel::trainable() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_tensors()) {
    if (t.requires_grad()) out.push_back(t);
  }
  return out;
}

ParameterLedger Ddf2PolModel::count_parameters() const {
  ParameterLedger l;
  l.rv_stream = rv_conv1.parameter_count() + rv_conv2.parameter_count();
  l.cv_stream = cv_conv1.parameter_count() + cv_conv2.parameter_count();
  l.dense = classifier.parameter_count();
  l.depthwise = depthwise.parameter_count();
  l.attention = attention.parameter_count();
  return l;
}

std::size_t Ddf2PolModel::allocated_elements() const {
  std::size_t n = 0;
  for (auto& [name, t] : named_tensors()) n += t.numel();
  return n;
}

std::vector<std::vector<double>> Ddf2PolModel::snapshot() const {
  std::vector<std::vector<double>> out;
  for (auto& [name, t] : named_tensors()) out.emplace_back(t.values().begin(), t.values().end());
  return out;
}

void Ddf2PolModel::restore(const std::vector<std::vector<double>>& values) {
  auto tensors = named_tensors();
  if (values.size() != tensors.size()) throw UsageError("snapshot does not match model");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    auto dst = tensors[i].second.mutable_values();
    if (values[i].size() != dst.size()) throw UsageError("snapshot tensor size mismatch");
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

void Ddf2PolModel::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  os.write(kMagic.data(), kMagic.size());
  put_u32(os, kConfigFields);
  for (std::size_t v : {config_.patch, config_.num_classes, config_.descriptor_depth,
                        config_.complex_depth, config_.filters1, config_.filters2,
                        config_.ca_reduction}) {
    put_u64(os, v);
  }
  const auto tensors = named_tensors();
  put_u32(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, static_cast<std::uint32_t>(t.shape().rank()));
    for (auto d : t.shape().dims()) put_u64(os, d);
    for (double v : t.values()) put_u64(os, std::bit_cast<std::uint64_t>(v));
  }
  if (!os) throw IoError("failed writing checkpoint " + path.string());
}

Ddf2PolModel Ddf2PolModel::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read checkpoint " + path.string());
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kMagic) throw FormatError("bad checkpoint magic in " + path.string());
  if (get_le(is, 4, "config") != kConfigFields) {
    throw FormatError("unexpected config block in " + path.string());
  }
  ModelConfig cfg;
  for (std::size_t* field : {&cfg.patch, &cfg.num_classes, &cfg.descriptor_depth,
                             &cfg.complex_depth, &cfg.filters1, &cfg.filters2,
                             &cfg.ca_reduction}) {
    *field = static_cast<std::size_t>(get_le(is, 8, "config"));
  }
  Ddf2PolModel model(cfg);
  auto tensors = model.named_tensors();
  if (get_le(is, 4, "tensor count") != tensors.size()) {
    throw FormatError("tensor count mismatch in " + path.string());
  }
  for (auto& [name, t] : tensors) {
    const auto len = get_le(is, 4, "name length");
    std::string stored(len, '\0');
    is.read(stored.data(), static_cast<std::streamsize>(len));
    if (!is || stored != name) {
      throw FormatError("expected tensor '" + name + "' in " + path.string() + ", found '" +
                        stored + "'");
    }
    const auto rank = get_le(is, 4, name);
    std::vector<std::size_t> dims;
    for (std::uint64_t i = 0; i < rank; ++i) dims.push_back(get_le(is, 8, name));
    if (Shape(dims) != t.shape()) {
      throw FormatError("tensor '" + name + "' has shape " + Shape(dims).str() + ", expected " +
                        t.shape().str());
    }
    for (auto& v : t.mutable_values()) v = std::bit_cast<double>(get_le(is, 8, name));
  }
  return model;
}

ParameterLedger count_parameters(const ModelConfig& c) {
  c.validate();
  auto conv = [](std::size_t cin, std::size_t cout) { return 27 * cin * cout + cout; };
  const std::size_t ch = c.fused_channels();
  const std::size_t m = c.attention_width();
  ParameterLedger l;
  l.rv_stream = conv(1, c.filters1) + conv(c.filters1, c.filters2);
  l.cv_stream = 2 * l.rv_stream;
  l.dense = ch * c.num_classes + c.num_classes;
  l.depthwise = ch * 9 + ch;
  l.attention = (ch * m + m) + 4 * m + 2 * (m * ch + ch);
  return l;
}

ComplexityLedger count_flops_macs(const ModelConfig& c) {
  c.validate();
  const std::uint64_t s1 = c.patch - 2;
  const std::uint64_t s2 = c.patch - 4;
  const std::uint64_t dr = c.descriptor_depth;
  const std::uint64_t dc = c.complex_depth;
  const std::uint64_t f1 = c.filters1;
  const std::uint64_t f2 = c.filters2;
  const std::uint64_t ch = c.fused_channels();
  const std::uint64_t m = c.attention_width();
  const std::uint64_t k = c.num_classes;

  const std::uint64_t rv1 = s1 * s1 * dr * f1;  // output elements
  const std::uint64_t rv2 = s2 * s2 * dr * f2;
  const std::uint64_t cv1 = s1 * s1 * dc * f1;  // per component
  const std::uint64_t cv2 = s2 * s2 * dc * f2;
  const std::uint64_t map = s2 * s2 * ch;
  const std::uint64_t strip = s2 + s2;  // pooled rows + pooled columns

  ComplexityLedger out;
  out.macs = rv1 * 27 + rv2 * 27 * f1 + 4 * (cv1 * 27 + cv2 * 27 * f1) + map * 9 +
             strip * ch * m + 2 * s2 * m * ch + ch * k;

  std::uint64_t elementwise = 0;
  elementwise += 2 * (rv1 + rv2);              // bias + ReLU
  elementwise += 6 * (cv1 + cv2);              // recombine + bias + ReLU, both parts
  elementwise += 2 * map;                      // depthwise bias + ReLU
  elementwise += 2 * map + strip * ch;         // directional pooling
  elementwise += strip * m * (1 + 4 + 1);      // bias, batch norm, ReLU
  elementwise += strip * ch * 2;               // gate bias + sigmoid
  elementwise += 2 * map;                      // outer product + rescale
  elementwise += map + ch;                     // global average pool
  elementwise += k;                            // classifier bias
  out.flops = 2 * out.macs + elementwise;
  return out;
}

std::string format_parameter_ledger(const ParameterLedger& l) {
  std::ostringstream os;
  os << "rv-stream " << l.rv_stream << '\n'
     << "cv-stream " << l.cv_stream << '\n'
     << "dense " << l.dense << '\n'
     << "base " << l.base() << '\n'
     << "depthwise " << l.depthwise << '\n'
     << "base+depthwise " << l.with_depthwise() << '\n'
     << "attention " << l.attention << '\n'
     << "total " << l.total() << '\n';
  return os.str();
}

}  // namespace ddf2pol
