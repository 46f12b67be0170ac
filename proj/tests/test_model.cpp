#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "ddf2pol/errors.hpp"
#include "ddf2pol/model.hpp"
#include "gradcheck.hpp"

using namespace ddf2pol;
using ddf2pol::testing::check_gradients;
using ddf2pol::testing::random_tensor;

namespace {

ModelConfig config_with(std::size_t patch, std::size_t classes) {
  ModelConfig c;
  c.patch = patch;
  c.num_classes = classes;
  return c;
}

PatchBatch random_batch(std::size_t batch, std::size_t patch, std::size_t classes, std::mt19937_64& rng) {
  PatchBatch b;
  b.descriptors = random_tensor(Shape{batch, patch, patch, 12, 1}, rng, -2, 2, false);
  b.coherency = ComplexPair(random_tensor(Shape{batch, patch, patch, 6, 1}, rng, -2, 2, false),
                            random_tensor(Shape{batch, patch, patch, 6, 1}, rng, -2, 2, false));
  for (std::size_t i = 0; i < batch; ++i) b.labels.push_back(static_cast<int>(i % classes));
  return b;
}

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "ddf2pol_test_model";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("parameter ledger for fifteen classes") {
  const ParameterLedger l = count_parameters(config_with(15, 15));
  CHECK(l.rv_stream == 14304);
  CHECK(l.cv_stream == 28608);
  CHECK(l.dense == 11535);
  CHECK(l.base() == 54447);
  CHECK(l.depthwise == 7680);
  CHECK(l.with_depthwise() == 62127);
  CHECK(l.attention == 29244);
  CHECK(l.total() == 91371);
  const std::string text = format_parameter_ledger(l);
  CHECK(text.substr(text.rfind("total")) == "total 91371\n");
}

TEST_CASE("parameter ledger for five classes") {
  CHECK(count_parameters(config_with(15, 5)).total() == 91371 - 11535 + (768 * 5 + 5));
  CHECK(count_parameters(config_with(15, 5)).total() == 83681);
}

TEST_CASE("parameter count matches allocated elements") {
  for (auto [p, k] : {std::pair<std::size_t, std::size_t>{15, 15}, {5, 3}, {9, 5}}) {
    const Ddf2PolModel m(config_with(p, k));
    CHECK(m.count_parameters().total() == m.allocated_elements());
    CHECK(m.count_parameters().total() == count_parameters(m.config()).total());
    std::size_t tensors = 0;
    for (const auto& [name, t] : m.named_tensors()) tensors += t.numel();
    CHECK(tensors == m.allocated_elements());
  }
}

TEST_CASE("config validation") {
  CHECK_THROWS_AS(config_with(4, 3).validate(), UsageError);
  CHECK_THROWS_AS(config_with(3, 3).validate(), UsageError);
  CHECK_THROWS_AS(config_with(15, 1).validate(), UsageError);
  CHECK_NOTHROW(config_with(5, 2).validate());
}

TEST_CASE("forward shapes for the default configuration") {
  auto m = Ddf2PolModel::initialize(config_with(15, 15), 1);
  std::mt19937_64 rng(1);
  const PatchBatch b = random_batch(2, 15, 15, rng);
  CHECK(m.fused_features(b.descriptors, b.coherency).shape() == Shape{2, 11, 11, 768});
  CHECK(m.forward(b, Mode::kInfer).shape() == Shape{2, 15});

  const PatchBatch wrong = random_batch(1, 13, 15, rng);
  CHECK_THROWS_AS(m.forward(wrong, Mode::kInfer), ShapeError);
}

TEST_CASE("zero input with zero classifier weights yields the bias") {
  auto m = Ddf2PolModel::initialize(config_with(7, 4), 3);
  m.classifier.kernel = Tensor::zeros(m.classifier.kernel.shape(), true);
  m.classifier.bias = Tensor(Shape{4}, {0.5, -1.0, 2.0, 0.25}, true);
  const Tensor logits = m.forward(Tensor::zeros(Shape{1, 7, 7, 12, 1}),
                                  ComplexPair(Tensor::zeros(Shape{1, 7, 7, 6, 1}), Tensor::zeros(Shape{1, 7, 7, 6, 1})),
                                  Mode::kInfer);
  const std::vector<double> expected{0.5, -1.0, 2.0, 0.25};
  CHECK(std::vector<double>(logits.values().begin(), logits.values().end()) == expected);
}

TEST_CASE("inference is a pure function of inputs") {
  auto m = Ddf2PolModel::initialize(config_with(9, 5), 11);
  std::mt19937_64 rng(2);
  const PatchBatch b = random_batch(3, 9, 5, rng);
  const Tensor a = m.forward(b, Mode::kInfer);
  const Tensor c = m.forward(b, Mode::kInfer);
  CHECK(std::vector<double>(a.values().begin(), a.values().end()) ==
        std::vector<double>(c.values().begin(), c.values().end()));
}

TEST_CASE("initialization is deterministic and well-scaled") {
  const auto a = Ddf2PolModel::initialize(config_with(15, 15), 42);
  const auto b = Ddf2PolModel::initialize(config_with(15, 15), 42);
  const auto c = Ddf2PolModel::initialize(config_with(15, 15), 43);
  CHECK(a.snapshot() == b.snapshot());
  CHECK(a.snapshot() != c.snapshot());

  for (const auto& [name, t] : a.named_tensors()) {
    const bool zero = name.find("bias") != std::string::npos || name.find("beta") != std::string::npos ||
                      name.find("running_mean") != std::string::npos;
    const bool one = name.find("gamma") != std::string::npos || name.find("running_var") != std::string::npos;
    if (zero) {
      for (double v : t.values()) CHECK(v == 0.0);
    } else if (one) {
      for (double v : t.values()) CHECK(v == 1.0);
    }
  }

  // Glorot limit sqrt(6 / (fan_in + fan_out)), fans = taps x channels.
  const double limit = std::sqrt(6.0 / (27.0 * 16 + 27.0 * 32));
  const auto kv = a.rv_conv2.kernel.values();
  REQUIRE(kv.size() >= 10000);
  double mean = 0.0, sq = 0.0, peak = 0.0;
  for (double v : kv) {
    mean += v;
    sq += v * v;
    peak = std::max(peak, std::abs(v));
  }
  mean /= static_cast<double>(kv.size());
  sq /= static_cast<double>(kv.size());
  const double sigma = limit / std::sqrt(3.0);
  CHECK(std::abs(mean) < 3.0 * sigma / std::sqrt(static_cast<double>(kv.size())));
  CHECK(peak <= limit);
  CHECK(sq == doctest::Approx(sigma * sigma).epsilon(0.05));

  // Complex kernels: each part has half the variance.
  double csq = 0.0;
  const auto re = a.cv_conv2.kernel.re.values();
  for (double v : re) csq += v * v;
  csq /= static_cast<double>(re.size());
  CHECK(csq == doctest::Approx(sigma * sigma / 2.0).epsilon(0.05));
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  auto m = Ddf2PolModel::initialize(config_with(9, 4), 5);
  // Non-trivial batch-norm running stats must survive too.
  std::mt19937_64 rng(4);
  m.forward(random_batch(2, 9, 4, rng), Mode::kTrain);
  const auto path = scratch("roundtrip.bin");
  m.save(path);
  const auto loaded = Ddf2PolModel::load(path);
  CHECK(loaded.config() == m.config());
  CHECK(loaded.snapshot() == m.snapshot());
  const auto names = m.named_tensors();
  const auto loaded_names = loaded.named_tensors();
  REQUIRE(names.size() == loaded_names.size());
  for (std::size_t i = 0; i < names.size(); ++i) {
    CHECK(names[i].first == loaded_names[i].first);
    CHECK(names[i].second.shape() == loaded_names[i].second.shape());
  }
}

TEST_CASE("checkpoint rejects foreign files") {
  const auto path = scratch("garbage.bin");
  {
    std::ofstream os(path, std::ios::binary);
    os << "NOTAMODEL";
  }
  CHECK_THROWS_AS(Ddf2PolModel::load(path), FormatError);
  CHECK_THROWS_AS(Ddf2PolModel::load(scratch("missing.bin")), IoError);

  auto m = Ddf2PolModel::initialize(config_with(5, 3), 1);
  const auto good = scratch("truncated.bin");
  m.save(good);
  std::filesystem::resize_file(good, std::filesystem::file_size(good) - 8);
  CHECK_THROWS_AS(Ddf2PolModel::load(good), FormatError);
}

TEST_CASE("complexity counting convention") {
  const ComplexityLedger base = count_flops_macs(config_with(15, 15));
  const ComplexityLedger more = count_flops_macs(config_with(15, 16));
  // One extra class adds one 768-wide dot product.
  CHECK(more.macs - base.macs == 768);
  CHECK(768u * 15u == 11520u);

  // Depthwise contribution: remove it by comparing against the closed form.
  const std::uint64_t s1 = 13, s2 = 11, ch = 768, m = 12;
  const std::uint64_t expected = s1 * s1 * 12 * 16 * 27 + s2 * s2 * 12 * 32 * 27 * 16 +
                                 4 * (s1 * s1 * 6 * 16 * 27 + s2 * s2 * 6 * 32 * 27 * 16) +
                                 s2 * s2 * ch * 9 + 2 * s2 * ch * m + 2 * s2 * m * ch + ch * 15;
  CHECK(base.macs == expected);
  CHECK(s2 * s2 * ch * 9 == 836352);
  CHECK(base.flops > 2 * base.macs);
}

TEST_CASE("end-to-end gradient check") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto m = Ddf2PolModel::initialize(config_with(5, 3), seed);
    std::mt19937_64 rng(seed + 100);
    // Random biases keep ReLU inputs away from exact zeros.
    for (auto& [name, t] : m.named_tensors()) {
      if (name.find("bias") != std::string::npos) {
        for (auto& v : t.mutable_values()) v = std::uniform_real_distribution<double>(-0.1, 0.1)(rng);
      }
    }
    const PatchBatch b = random_batch(3, 5, 3, rng);
    auto loss = [&] { return softmax_cross_entropy(m.forward(b, Mode::kTrain), b.labels); };
    const auto r = check_gradients(loss, m.trainable(), 2, seed);
    CHECK(r.checked >= 20);
    CHECK(r.max_rel_error < 1e-3);
  }
}
