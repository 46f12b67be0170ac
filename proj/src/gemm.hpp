#pragma once

#include <Eigen/Core>

#include <cstddef>

namespace ddf2pol::detail {

// dst(r x c) (+)= op(a) * op(b), all row-major; op transposes when the flag is set.
// Eigen's matrix-vector kernels peel by pointer alignment, which changes the
// summation order between runs, so single-row/column results use plain loops.
inline void gemm(double* dst, const double* a, bool trans_a, const double* b, bool trans_b,
                 std::size_t r, std::size_t inner, std::size_t c, bool accumulate) {
  if (r == 1 || c == 1 || inner == 1) {
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < inner; ++k) {
          const double av = trans_a ? a[k * r + i] : a[i * inner + k];
          const double bv = trans_b ? b[j * inner + k] : b[k * c + j];
          s += av * bv;
        }
        dst[i * c + j] = accumulate ? dst[i * c + j] + s : s;
      }
    }
    return;
  }
  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Map = Eigen::Map<const RowMatrix>;
  const auto R = static_cast<Eigen::Index>(r);
  const auto K = static_cast<Eigen::Index>(inner);
  const auto C = static_cast<Eigen::Index>(c);
  Eigen::Map<RowMatrix> out(dst, R, C);
  auto run = [&](const auto& lhs, const auto& rhs) {
    if (accumulate) {
      out.noalias() += lhs * rhs;
    } else {
      out.noalias() = lhs * rhs;
    }
  };
  if (trans_a && trans_b) {
    run(Map(a, K, R).transpose(), Map(b, C, K).transpose());
  } else if (trans_a) {
    run(Map(a, K, R).transpose(), Map(b, K, C));
  } else if (trans_b) {
    run(Map(a, R, K), Map(b, C, K).transpose());
  } else {
    run(Map(a, R, K), Map(b, K, C));
  }
}

}  // namespace ddf2pol::detail
