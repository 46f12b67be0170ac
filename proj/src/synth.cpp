#include "ddf2pol/synth.hpp"

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include "ddf2pol/errors.hpp"

namespace ddf2pol {

namespace {

using json = nlohmann::json;

Covariance3 hermitian(const std::array<std::array<double, 3>, 3>& re,
                      const std::array<std::array<double, 3>, 3>& im) {
  Covariance3 c{};
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) c[i][j] = {re[i][j], im[i][j]};
  }
  return c;
}

Eigen::Matrix3cd to_eigen(const Covariance3& c) {
  Eigen::Matrix3cd m;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) m(i, j) = c[i][j];
  }
  return m;
}

// F with F F^H = Sigma, from the Hermitian eigendecomposition (handles singular Sigma).
Eigen::Matrix3cd sampling_factor(const Covariance3& c) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3cd> solver(to_eigen(c));
  Eigen::Vector3d root = solver.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return solver.eigenvectors() * root.asDiagonal();
}

}  // namespace

SceneSpec SceneSpec::three_class_default() {
  SceneSpec s;
  using M = std::array<std::array<double, 3>, 3>;
  const M zero{};
  // Surface-like: strong T11.
  s.class_covariances.push_back(hermitian(M{{{1.0, 0.2, 0.0}, {0.2, 0.1, 0.0}, {0.0, 0.0, 0.05}}}, zero));
  // Double-bounce-like: strong T22 with a complex T23 term.
  s.class_covariances.push_back(hermitian(M{{{0.1, 0.0, 0.0}, {0.0, 1.0, 0.1}, {0.0, 0.1, 0.1}}},
                                          M{{{0.0, 0.0, 0.0}, {0.0, 0.0, 0.1}, {0.0, -0.1, 0.0}}}));
  // Volume-like: strong T33.
  s.class_covariances.push_back(hermitian(M{{{0.1, 0.0, 0.0}, {0.0, 0.1, 0.0}, {0.0, 0.0, 1.0}}}, zero));
  return s;
}

SceneSpec SceneSpec::from_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read scene spec " + path.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw SpecError("scene spec " + path.string() + " is not valid JSON: " + e.what());
  }
  SceneSpec s;
  try {
    s.height = j.value("height", s.height);
    s.width = j.value("width", s.width);
    s.looks = j.value("looks", s.looks);
    s.seed = j.value("seed", s.seed);
    const std::string layout = j.value("layout", std::string("stripes"));
    if (layout == "stripes") {
      s.layout = SceneLayout::kStripes;
    } else if (layout == "voronoi") {
      s.layout = SceneLayout::kVoronoi;
    } else {
      throw SpecError("unknown layout '" + layout + "'");
    }
    for (const auto& cls : j.at("classes")) {
      using M = std::array<std::array<double, 3>, 3>;
      const M re = cls.at("re").get<M>();
      const M im = cls.contains("im") ? cls.at("im").get<M>() : M{};
      s.class_covariances.push_back(hermitian(re, im));
    }
  } catch (const json::exception& e) {
    throw SpecError("scene spec " + path.string() + ": " + e.what());
  }
  s.validate();
  return s;
}

void SceneSpec::save_json(const std::filesystem::path& path) const {
  json j;
  j["height"] = height;
  j["width"] = width;
  j["looks"] = looks;
  j["seed"] = seed;
  j["layout"] = layout == SceneLayout::kStripes ? "stripes" : "voronoi";
  j["classes"] = json::array();
  for (const auto& c : class_covariances) {
    std::array<std::array<double, 3>, 3> re{}, im{};
    for (std::size_t r = 0; r < 3; ++r) {
      for (std::size_t k = 0; k < 3; ++k) {
        re[r][k] = c[r][k].real();
        im[r][k] = c[r][k].imag();
      }
    }
    j["classes"].push_back({{"re", re}, {"im", im}});
  }
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

void SceneSpec::validate() const {
  if (height == 0 || width == 0) throw SpecError("scene must have positive height and width");
  if (looks == 0) throw SpecError("looks must be a positive integer");
  if (class_covariances.size() < 2 || class_covariances.size() > 255) {
    throw SpecError("need between 2 and 255 classes");
  }
  if (layout == SceneLayout::kStripes && class_covariances.size() > width) {
    throw SpecError("more stripe classes than columns");
  }
  for (std::size_t k = 0; k < class_covariances.size(); ++k) {
    const auto& c = class_covariances[k];
    const std::string name = "class " + std::to_string(k + 1);
    double scale = 0.0;
    for (const auto& row : c) {
      for (const auto& v : row) scale = std::max(scale, std::abs(v));
    }
    const double tol = 1e-12 * std::max(1.0, scale);
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < 3; ++j) {
        if (std::abs(c[i][j] - std::conj(c[j][i])) > tol) {
          throw SpecError(name + " covariance is not Hermitian");
        }
      }
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3cd> solver(to_eigen(c), Eigen::EigenvaluesOnly);
    if (solver.eigenvalues().minCoeff() < -tol) {
      throw SpecError(name + " covariance is not positive semi-definite (min eigenvalue " +
                      std::to_string(solver.eigenvalues().minCoeff()) + ")");
    }
  }
}

LabelMap scene_layout(const SceneSpec& spec) {
  spec.validate();
  LabelMap labels;
  labels.height = spec.height;
  labels.width = spec.width;
  labels.ids.resize(spec.height * spec.width);
  const std::size_t k = spec.class_covariances.size();
  if (spec.layout == SceneLayout::kStripes) {
    for (std::size_t y = 0; y < spec.height; ++y) {
      for (std::size_t x = 0; x < spec.width; ++x) {
        labels.ids[y * spec.width + x] = static_cast<std::uint8_t>(1 + x * k / spec.width);
      }
    }
    return labels;
  }
  std::mt19937_64 rng(spec.seed ^ 0x9E3779B97F4A7C15ULL);
  std::uniform_real_distribution<double> ux(0.0, static_cast<double>(spec.width));
  std::uniform_real_distribution<double> uy(0.0, static_cast<double>(spec.height));
  std::vector<std::pair<double, double>> sites(k);
  for (auto& s : sites) s = {uy(rng), ux(rng)};
  for (std::size_t y = 0; y < spec.height; ++y) {
    for (std::size_t x = 0; x < spec.width; ++x) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < k; ++i) {
        const double dy = static_cast<double>(y) + 0.5 - sites[i].first;
        const double dx = static_cast<double>(x) + 0.5 - sites[i].second;
        if (dy * dy + dx * dx < best_d) {
          best_d = dy * dy + dx * dx;
          best = i;
        }
      }
      labels.ids[y * spec.width + x] = static_cast<std::uint8_t>(best + 1);
    }
  }
  return labels;
}

SyntheticScene sample_scene(const SceneSpec& spec) {
  SyntheticScene scene;
  scene.labels = scene_layout(spec);
  scene.raster = CoherencyRaster(spec.height, spec.width);
  std::vector<Eigen::Matrix3cd> factors;
  for (const auto& c : spec.class_covariances) factors.push_back(sampling_factor(c));

  const double inv_looks = 1.0 / static_cast<double>(spec.looks);
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  auto& r = scene.raster;
  for (std::size_t p = 0; p < r.pixels(); ++p) {
    std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                      static_cast<std::uint32_t>(p), static_cast<std::uint32_t>(p >> 32)};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> normal(0.0, 1.0);
    const Eigen::Matrix3cd& f = factors[scene.labels.ids[p] - 1];
    Eigen::Matrix3cd t = Eigen::Matrix3cd::Zero();
    for (std::size_t look = 0; look < spec.looks; ++look) {
      Eigen::Vector3cd z;
      for (int i = 0; i < 3; ++i) z(i) = cdouble(normal(rng), normal(rng)) * inv_sqrt2;
      const Eigen::Vector3cd s = f * z;
      t.noalias() += s * s.adjoint();
    }
    t *= inv_looks;
    r.t11[p] = t(0, 0).real();
    r.t22[p] = t(1, 1).real();
    r.t33[p] = t(2, 2).real();
    r.t12[p] = t(0, 1);
    r.t13[p] = t(0, 2);
    r.t23[p] = t(1, 2);
  }
  return scene;
}

}  // namespace ddf2pol
