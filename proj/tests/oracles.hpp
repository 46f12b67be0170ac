#pragma once

// Scalar reference implementations shared by the unit tests and the acceptance
// binary. Test-only; each is written out independently of the library code.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <numeric>
#include <random>
#include <vector>

#include "ddf2pol/evaluation.hpp"
#include "ddf2pol/layers.hpp"
#include "ddf2pol/polsar.hpp"

namespace ddf2pol::testing {

inline double sigmoid_scalar(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Direct 6-deep loop: VALID in height/width, zero-extended in depth.
inline std::vector<double> naive_conv3d(const std::vector<double>& x, const std::vector<double>& k,
                                        const std::vector<double>& bias, std::size_t batch,
                                        std::size_t h, std::size_t w, std::size_t d,
                                        std::size_t cin, std::size_t cout) {
  const std::size_t ho = h - 2, wo = w - 2;
  std::vector<double> out(batch * ho * wo * d * cout, 0.0);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < ho; ++i)
      for (std::size_t j = 0; j < wo; ++j)
        for (std::size_t z = 0; z < d; ++z)
          for (std::size_t co = 0; co < cout; ++co) {
            double acc = bias.empty() ? 0.0 : bias[co];
            for (std::size_t kh = 0; kh < 3; ++kh)
              for (std::size_t kw = 0; kw < 3; ++kw)
                for (std::size_t kd = 0; kd < 3; ++kd) {
                  const long zz = static_cast<long>(z + kd) - 1;
                  if (zz < 0 || zz >= static_cast<long>(d)) continue;
                  for (std::size_t ci = 0; ci < cin; ++ci) {
                    acc += x[(((b * h + i + kh) * w + j + kw) * d + static_cast<std::size_t>(zz)) * cin + ci] *
                           k[(((kh * 3 + kw) * 3 + kd) * cin + ci) * cout + co];
                  }
                }
            out[(((b * ho + i) * wo + j) * d + z) * cout + co] = acc;
          }
  return out;
}

// The same convolution in std::complex arithmetic for a single sample,
// output laid out (H-2, W-2, D, Cout).
inline std::vector<std::complex<double>> complex_conv3d_oracle(const ComplexPair& x,
                                                               const ComplexPair& k,
                                                               const ComplexPair& b) {
  using C = std::complex<double>;
  const std::size_t h = x.re.shape()[1], w = x.re.shape()[2], d = x.re.shape()[3];
  const std::size_t cin = x.re.shape()[4], cout = k.re.shape()[4];
  std::vector<C> out;
  for (std::size_t i = 0; i + 2 < h; ++i)
    for (std::size_t j = 0; j + 2 < w; ++j)
      for (std::size_t z = 0; z < d; ++z)
        for (std::size_t co = 0; co < cout; ++co) {
          C acc(b.re.at({co}), b.im.at({co}));
          for (std::size_t kh = 0; kh < 3; ++kh)
            for (std::size_t kw = 0; kw < 3; ++kw)
              for (std::size_t kd = 0; kd < 3; ++kd) {
                if (z + kd == 0 || z + kd > d) continue;
                for (std::size_t ci = 0; ci < cin; ++ci) {
                  const C xv(x.re.at({0, i + kh, j + kw, z + kd - 1, ci}),
                             x.im.at({0, i + kh, j + kw, z + kd - 1, ci}));
                  const C kv(k.re.at({kh, kw, kd, ci, co}), k.im.at({kh, kw, kd, ci, co}));
                  acc += xv * kv;
                }
              }
          out.push_back(acc);
        }
  return out;
}

// Straight-line transcription of the attention block for one sample, scalar loops only.
inline std::vector<double> attention_oracle(const Tensor& x, const CoordinateAttentionLayer& ca,
                                            bool batch_stats) {
  const std::size_t h = x.shape()[1], w = x.shape()[2], c = x.shape()[3];
  const std::size_t m = ca.shared.kernel.shape()[1];
  auto X = [&](std::size_t i, std::size_t j, std::size_t k) { return x.at({0, i, j, k}); };
  // pooled descriptors
  std::vector<std::vector<double>> desc;  // H rows then W columns, each length C
  for (std::size_t i = 0; i < h; ++i) {
    std::vector<double> v(c, 0.0);
    for (std::size_t k = 0; k < c; ++k) {
      for (std::size_t j = 0; j < w; ++j) v[k] += X(i, j, k);
      v[k] /= static_cast<double>(w);
    }
    desc.push_back(v);
  }
  for (std::size_t j = 0; j < w; ++j) {
    std::vector<double> v(c, 0.0);
    for (std::size_t k = 0; k < c; ++k) {
      for (std::size_t i = 0; i < h; ++i) v[k] += X(i, j, k);
      v[k] /= static_cast<double>(h);
    }
    desc.push_back(v);
  }
  // shared 1x1 conv
  std::vector<std::vector<double>> f(desc.size(), std::vector<double>(m));
  for (std::size_t p = 0; p < desc.size(); ++p)
    for (std::size_t r = 0; r < m; ++r) {
      double acc = ca.shared.bias.at({r});
      for (std::size_t k = 0; k < c; ++k) acc += desc[p][k] * ca.shared.kernel.at({k, r});
      f[p][r] = acc;
    }
  // batch norm then ReLU
  for (std::size_t r = 0; r < m; ++r) {
    double mu = ca.norm.running_mean.at({r}), var = ca.norm.running_var.at({r});
    if (batch_stats) {
      mu = 0.0;
      for (auto& row : f) mu += row[r];
      mu /= static_cast<double>(f.size());
      var = 0.0;
      for (auto& row : f) var += (row[r] - mu) * (row[r] - mu);
      var /= static_cast<double>(f.size());
    }
    for (auto& row : f) {
      const double nrm = (row[r] - mu) / std::sqrt(var + ca.norm.epsilon);
      row[r] = std::max(0.0, ca.norm.gamma.at({r}) * nrm + ca.norm.beta.at({r}));
    }
  }
  // gates
  std::vector<std::vector<double>> gh(h, std::vector<double>(c)), gw(w, std::vector<double>(c));
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t k = 0; k < c; ++k) {
      double acc = ca.height_gate.bias.at({k});
      for (std::size_t r = 0; r < m; ++r) acc += f[i][r] * ca.height_gate.kernel.at({r, k});
      gh[i][k] = sigmoid_scalar(acc);
    }
  for (std::size_t j = 0; j < w; ++j)
    for (std::size_t k = 0; k < c; ++k) {
      double acc = ca.width_gate.bias.at({k});
      for (std::size_t r = 0; r < m; ++r) acc += f[h + j][r] * ca.width_gate.kernel.at({r, k});
      gw[j][k] = sigmoid_scalar(acc);
    }
  std::vector<double> out;
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t k = 0; k < c; ++k) out.push_back(X(i, j, k) * gh[i][k] * gw[j][k]);
  return out;
}

inline std::vector<NamedTensor> attention_tensors(const CoordinateAttentionLayer& ca) {
  std::vector<NamedTensor> all;
  ca.collect("ca", all);
  return all;
}

// Random weights and batch-norm statistics (running variance kept positive).
inline void randomize(CoordinateAttentionLayer& ca, std::mt19937_64& rng) {
  for (auto& [name, t] : attention_tensors(ca)) {
    const bool var = name.find("running_var") != std::string::npos;
    std::uniform_real_distribution<double> u(var ? 0.5 : -1.0, var ? 2.0 : 1.0);
    for (auto& v : t.mutable_values()) v = u(rng);
  }
}

inline ConfusionMatrix from_rows(const std::vector<std::vector<std::uint64_t>>& rows) {
  ConfusionMatrix cm(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows.size(); ++j) cm(i, j) = rows[i][j];
  return cm;
}

// Brute force: expand the matrix into (reference, predicted) pairs and count.
inline Metrics brute_force_metrics(const std::vector<std::vector<std::uint64_t>>& rows) {
  const std::size_t k = rows.size();
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j)
      for (std::uint64_t n = 0; n < rows[i][j]; ++n) pairs.emplace_back(i, j);
  const double total = static_cast<double>(pairs.size());
  double agree = 0.0;
  std::vector<double> ref(k, 0.0), pred(k, 0.0), hit(k, 0.0);
  for (auto [r, p] : pairs) {
    ref[r] += 1;
    pred[p] += 1;
    if (r == p) {
      agree += 1;
      hit[r] += 1;
    }
  }
  Metrics m;
  m.overall = agree / total;
  double chance = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    m.per_class.push_back(hit[i] / ref[i]);
    chance += (ref[i] / total) * (pred[i] / total);
  }
  m.average = std::accumulate(m.per_class.begin(), m.per_class.end(), 0.0) / static_cast<double>(k);
  m.kappa = (m.overall - chance) / (1.0 - chance);
  return m;
}

// Random 4x4 matrices with counts 0..30 and a non-empty diagonal.
inline std::vector<std::vector<std::uint64_t>> random_confusion_rows(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> count(0, 30);
  std::vector<std::vector<std::uint64_t>> rows(4, std::vector<std::uint64_t>(4));
  for (std::size_t i = 0; i < 4; ++i) {
    for (auto& v : rows[i]) v = static_cast<std::uint64_t>(count(rng));
    rows[i][i] += 1;
  }
  return rows;
}

// T = A A^H with A complex Gaussian.
inline CoherencyRaster random_psd_raster(std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  CoherencyRaster r(h, w);
  for (std::size_t p = 0; p < r.pixels(); ++p) {
    cdouble a[3][3];
    for (auto& row : a)
      for (auto& v : row) v = {n(rng), n(rng)};
    auto t = [&](int i, int j) {
      cdouble s = 0.0;
      for (int k = 0; k < 3; ++k) s += a[i][k] * std::conj(a[j][k]);
      return s;
    };
    r.t11[p] = t(0, 0).real();
    r.t22[p] = t(1, 1).real();
    r.t33[p] = t(2, 2).real();
    r.t12[p] = t(0, 1);
    r.t13[p] = t(0, 2);
    r.t23[p] = t(1, 2);
  }
  return r;
}

// Twelve descriptors of one pixel with positive diagonal, written from the definitions.
inline std::array<double, 12> descriptor_oracle(const CoherencyRaster& r, std::size_t p) {
  const double t11 = r.t11[p], t22 = r.t22[p], t33 = r.t33[p];
  const double a12 = std::abs(r.t12[p]), a13 = std::abs(r.t13[p]), a23 = std::abs(r.t23[p]);
  const double span = t11 + t22 + t33;
  return {t11,
          a12,
          a13,
          t22,
          a23,
          t33,
          10.0 * std::log10(span),
          t22 / span,
          t33 / span,
          a12 / std::sqrt(t11 * t22),
          a13 / std::sqrt(t11 * t33),
          a23 / std::sqrt(t22 * t33)};
}

}  // namespace ddf2pol::testing
