#include "ddf2pol/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ddf2pol/errors.hpp"
#include "gemm.hpp"

namespace ddf2pol {

namespace {

constexpr std::size_t kTaps = 27;

struct Conv3DGeometry {
  std::size_t batch, height, width, depth, in_channels, out_channels;
  std::size_t out_height() const { return height - 2; }
  std::size_t out_width() const { return width - 2; }
  std::size_t rows() const { return out_height() * out_width() * depth; }
  std::size_t cols() const { return kTaps * in_channels; }
  std::size_t sample_size() const { return height * width * depth * in_channels; }
};

// out[i] += a[i] * b[i]; restrict lets the compiler vectorize.
inline void multiply_add(double* __restrict out, const double* __restrict a,
                         const double* __restrict b, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] += a[i] * b[i];
}

inline void add_into(double* __restrict out, const double* __restrict a, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] += a[i];
}

// One im2col row per output voxel; columns ordered (kh,kw,kd,cin) to match the
// row-major kernel layout (3,3,3,Cin,Cout). Away from the depth ends the three
// kd taps are one contiguous run of the input.
void im2col(const double* x, const Conv3DGeometry& g, double* cols) {
  const std::size_t cin = g.in_channels;
  const std::size_t row_len = g.cols();
  for (std::size_t h = 0; h < g.out_height(); ++h) {
    for (std::size_t w = 0; w < g.out_width(); ++w) {
      for (std::size_t d = 0; d < g.depth; ++d) {
        double* row = cols + ((h * g.out_width() + w) * g.depth + d) * row_len;
        for (std::size_t kh = 0; kh < 3; ++kh) {
          for (std::size_t kw = 0; kw < 3; ++kw) {
            const double* pixel = x + ((h + kh) * g.width + (w + kw)) * g.depth * cin;
            double* dst = row + (kh * 3 + kw) * 3 * cin;
            if (d > 0 && d + 1 < g.depth) {
              std::copy_n(pixel + (d - 1) * cin, 3 * cin, dst);
              continue;
            }
            for (std::size_t kd = 0; kd < 3; ++kd) {
              if (d + kd == 0 || d + kd > g.depth) {
                std::fill_n(dst + kd * cin, cin, 0.0);
              } else {
                std::copy_n(pixel + (d + kd - 1) * cin, cin, dst + kd * cin);
              }
            }
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, const Conv3DGeometry& g, double* dx) {
  const std::size_t cin = g.in_channels;
  const std::size_t row_len = g.cols();
  for (std::size_t h = 0; h < g.out_height(); ++h) {
    for (std::size_t w = 0; w < g.out_width(); ++w) {
      for (std::size_t d = 0; d < g.depth; ++d) {
        const double* row = cols + ((h * g.out_width() + w) * g.depth + d) * row_len;
        for (std::size_t kh = 0; kh < 3; ++kh) {
          for (std::size_t kw = 0; kw < 3; ++kw) {
            double* pixel = dx + ((h + kh) * g.width + (w + kw)) * g.depth * cin;
            const double* src = row + (kh * 3 + kw) * 3 * cin;
            for (std::size_t kd = 0; kd < 3; ++kd) {
              if (d + kd == 0 || d + kd > g.depth) continue;
              add_into(pixel + (d + kd - 1) * cin, src + kd * cin, cin);
            }
          }
        }
      }
    }
  }
}

Tensor make_param(const Shape& shape) { return Tensor::zeros(shape, true); }

// Applies a DenseLayer-style map to the last axis of x.
Tensor affine_last_axis(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
  const Shape& s = x.shape();
  if (s.rank() == 0 || s[s.rank() - 1] != kernel.shape()[0]) {
    throw ShapeError("dense input " + s.str() + " does not match kernel " +
                     kernel.shape().str());
  }
  const std::size_t features = s[s.rank() - 1];
  const std::size_t rows = x.numel() / features;
  Tensor y = add(matmul(reshape(x, Shape{rows, features}), kernel), bias);
  auto dims = s.dims();
  dims.back() = kernel.shape()[1];
  return reshape(y, Shape(dims));
}

}  // namespace

Tensor conv3d(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
  const Shape& xs = x.shape();
  const Shape& ks = kernel.shape();
  if (xs.rank() != 5) throw ShapeError("conv3d input must be (B,H,W,D,C), got " + xs.str());
  if (ks.rank() != 5 || ks[0] != 3 || ks[1] != 3 || ks[2] != 3 || ks[3] != xs[4]) {
    throw ShapeError("conv3d kernel " + ks.str() + " does not fit input " + xs.str());
  }
  if (xs[1] < 3 || xs[2] < 3) {
    throw ShapeError("conv3d needs height and width >= 3, got " + xs.str());
  }
  if (bias.defined() && bias.shape() != Shape{ks[4]}) {
    throw ShapeError("conv3d bias " + bias.shape().str() + " does not match kernel " + ks.str());
  }
  const Conv3DGeometry g{xs[0], xs[1], xs[2], xs[3], xs[4], ks[4]};
  const std::size_t rows = g.rows(), cols = g.cols(), cout = g.out_channels;

  const Shape out_shape{g.batch, g.out_height(), g.out_width(), g.depth, g.out_channels};
  std::vector<double> out(out_shape.numel());
  std::vector<double> scratch(g.rows() * g.cols());
  const double* xv = x.values().data();
  for (std::size_t b = 0; b < g.batch; ++b) {
    im2col(xv + b * g.sample_size(), g, scratch.data());
    double* ob = out.data() + b * rows * cout;
    detail::gemm(ob, scratch.data(), false, kernel.values().data(), false, rows, cols, cout, false);
    if (bias.defined()) {
      const double* bv = bias.values().data();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cout; ++c) ob[r * cout + c] += bv[c];
      }
    }
  }

  auto px = x.handle();
  auto pk = kernel.handle();
  auto pb = bias.defined() ? bias.handle() : nullptr;
  std::vector<Tensor> parents{x, kernel};
  if (bias.defined()) parents.push_back(bias);
  return Tensor::make_result(
      out_shape, std::move(out), std::move(parents),
      [px, pk, pb, g, rows, cols, cout](detail::Node& self) {
        std::vector<double> scratch(g.rows() * g.cols());
        std::vector<double> dcols;
        const bool need_x = px->requires_grad;
        const bool need_k = pk->requires_grad;
        double* dk = need_k ? pk->ensure_grad().data() : nullptr;
        double* dx = need_x ? px->ensure_grad().data() : nullptr;
        if (need_x) dcols.resize(scratch.size());
        for (std::size_t b = 0; b < g.batch; ++b) {
          const double* gb = self.grad.data() + b * rows * cout;
          if (need_k) {
            im2col(px->value.data() + b * g.sample_size(), g, scratch.data());
            detail::gemm(dk, scratch.data(), true, gb, false, cols, rows, cout, true);
          }
          if (pb && pb->requires_grad) {
            double* db = pb->ensure_grad().data();
            for (std::size_t r = 0; r < rows; ++r) {
              for (std::size_t c = 0; c < cout; ++c) db[c] += gb[r * cout + c];
            }
          }
          if (need_x) {
            detail::gemm(dcols.data(), gb, false, pk->value.data(), true, rows, cout, cols, false);
            col2im_add(dcols.data(), g, dx + b * g.sample_size());
          }
        }
      });
}

ComplexPair cv_conv3d(const ComplexPair& x, const ComplexPair& kernel, const ComplexPair& bias) {
  // One real convolution over stacked [re | im] input channels with the block
  // kernel [[K.re, K.im], [-K.im, K.re]] yields [out.re | out.im].
  const std::size_t cout = kernel.re.shape()[4];
  const Tensor top = concat({kernel.re, kernel.im}, 4);
  const Tensor bottom = concat({negate(kernel.im), kernel.re}, 4);
  const Tensor block = concat({top, bottom}, 3);
  const Tensor stacked_bias = concat({bias.re, bias.im}, 0);
  const Tensor stacked_in = concat({x.re, x.im}, 4);
  const Tensor out = conv3d(stacked_in, block, stacked_bias);
  return {slice(out, 4, 0, cout), slice(out, 4, cout, 2 * cout)};
}

ComplexPair split_relu(const ComplexPair& x) { return {relu(x.re), relu(x.im)}; }

Tensor depthwise_conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
  const Shape& xs = x.shape();
  if (xs.rank() != 4) throw ShapeError("depthwise input must be (B,H,W,C), got " + xs.str());
  const std::size_t batch = xs[0], height = xs[1], width = xs[2], ch = xs[3];
  if (kernel.shape() != Shape{3, 3, ch} || bias.shape() != Shape{ch}) {
    throw ShapeError("depthwise kernel " + kernel.shape().str() + "/bias " +
                     bias.shape().str() + " do not fit input " + xs.str());
  }
  const double* xv = x.values().data();
  const double* kv = kernel.values().data();
  const double* bv = bias.values().data();
  std::vector<double> out(xs.numel());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < height; ++h) {
      for (std::size_t w = 0; w < width; ++w) {
        double* o = out.data() + ((b * height + h) * width + w) * ch;
        std::copy_n(bv, ch, o);
        for (std::size_t kh = 0; kh < 3; ++kh) {
          if (h + kh == 0 || h + kh > height) continue;
          for (std::size_t kw = 0; kw < 3; ++kw) {
            if (w + kw == 0 || w + kw > width) continue;
            const double* in = xv + ((b * height + h + kh - 1) * width + w + kw - 1) * ch;
            multiply_add(o, in, kv + (kh * 3 + kw) * ch, ch);
          }
        }
      }
    }
  }
  auto px = x.handle();
  auto pk = kernel.handle();
  auto pb = bias.handle();
  return Tensor::make_result(
      xs, std::move(out), {x, kernel, bias},
      [px, pk, pb, batch, height, width, ch](detail::Node& self) {
        double* dx = px->requires_grad ? px->ensure_grad().data() : nullptr;
        double* dk = pk->requires_grad ? pk->ensure_grad().data() : nullptr;
        double* db = pb->requires_grad ? pb->ensure_grad().data() : nullptr;
        const double* xv = px->value.data();
        const double* kv = pk->value.data();
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < height; ++h) {
            for (std::size_t w = 0; w < width; ++w) {
              const double* go = self.grad.data() + ((b * height + h) * width + w) * ch;
              if (db) {
                for (std::size_t c = 0; c < ch; ++c) db[c] += go[c];
              }
              for (std::size_t kh = 0; kh < 3; ++kh) {
                if (h + kh == 0 || h + kh > height) continue;
                for (std::size_t kw = 0; kw < 3; ++kw) {
                  if (w + kw == 0 || w + kw > width) continue;
                  const std::size_t in_off = ((b * height + h + kh - 1) * width + w + kw - 1) * ch;
                  const std::size_t k_off = (kh * 3 + kw) * ch;
                  if (dk) multiply_add(dk + k_off, go, xv + in_off, ch);
                  if (dx) multiply_add(dx + in_off, go, kv + k_off, ch);
                }
              }
            }
          }
        }
      });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, Mode mode, double epsilon,
                  double momentum) {
  const Shape& xs = x.shape();
  if (xs.rank() == 0) throw ShapeError("batch_norm on a scalar");
  const std::size_t ch = xs[xs.rank() - 1];
  if (gamma.shape() != Shape{ch} || beta.shape() != Shape{ch} ||
      running_mean.shape() != Shape{ch} || running_var.shape() != Shape{ch}) {
    throw ShapeError("batch_norm parameters do not match channels of " + xs.str());
  }
  const std::size_t n = x.numel() / ch;
  const double* xv = x.values().data();

  std::vector<double> mean(ch, 0.0);
  std::vector<double> var(ch, 0.0);
  if (mode == Mode::kTrain) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < ch; ++c) mean[c] += xv[i * ch + c];
    }
    for (auto& m : mean) m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < ch; ++c) {
        const double d = xv[i * ch + c] - mean[c];
        var[c] += d * d;
      }
    }
    for (auto& v : var) v /= static_cast<double>(n);
    auto rm = running_mean.mutable_values();
    auto rv = running_var.mutable_values();
    for (std::size_t c = 0; c < ch; ++c) {
      rm[c] = momentum * rm[c] + (1.0 - momentum) * mean[c];
      rv[c] = momentum * rv[c] + (1.0 - momentum) * var[c];
    }
  } else {
    std::copy_n(running_mean.values().begin(), ch, mean.begin());
    std::copy_n(running_var.values().begin(), ch, var.begin());
  }

  std::vector<double> inv_std(ch);
  for (std::size_t c = 0; c < ch; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + epsilon);
  std::vector<double> xhat(x.numel());
  std::vector<double> out(x.numel());
  const double* gv = gamma.values().data();
  const double* bv = beta.values().data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < ch; ++c) {
      const std::size_t k = i * ch + c;
      xhat[k] = (xv[k] - mean[c]) * inv_std[c];
      out[k] = gv[c] * xhat[k] + bv[c];
    }
  }

  auto px = x.handle();
  auto pg = gamma.handle();
  auto pbeta = beta.handle();
  const bool batch_stats = mode == Mode::kTrain;
  return Tensor::make_result(
      xs, std::move(out), {x, gamma, beta},
      [px, pg, pbeta, n, ch, batch_stats, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](detail::Node& self) {
        const auto& gy = self.grad;
        const double* gv = pg->value.data();
        std::vector<double> sum_dy(ch, 0.0);
        std::vector<double> sum_dy_xhat(ch, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t c = 0; c < ch; ++c) {
            sum_dy[c] += gy[i * ch + c];
            sum_dy_xhat[c] += gy[i * ch + c] * xhat[i * ch + c];
          }
        }
        if (pg->requires_grad) {
          auto& dg = pg->ensure_grad();
          for (std::size_t c = 0; c < ch; ++c) dg[c] += sum_dy_xhat[c];
        }
        if (pbeta->requires_grad) {
          auto& db = pbeta->ensure_grad();
          for (std::size_t c = 0; c < ch; ++c) db[c] += sum_dy[c];
        }
        if (!px->requires_grad) return;
        auto& dx = px->ensure_grad();
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t c = 0; c < ch; ++c) {
            const std::size_t k = i * ch + c;
            if (batch_stats) {
              dx[k] += gv[c] * inv_std[c] *
                       (gy[k] - inv_n * sum_dy[c] - xhat[k] * inv_n * sum_dy_xhat[c]);
            } else {
              dx[k] += gv[c] * inv_std[c] * gy[k];
            }
          }
        }
      });
}

Tensor global_average_pool(const Tensor& x) {
  if (x.shape().rank() != 4) {
    throw ShapeError("global_average_pool needs (B,H,W,C), got " + x.shape().str());
  }
  return reduce_mean(x, {1, 2});
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  const Shape& s = logits.shape();
  if (s.rank() != 2) throw ShapeError("logits must be (B,K), got " + s.str());
  const std::size_t batch = s[0], classes = s[1];
  if (labels.size() != batch) {
    throw UsageError("got " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(batch));
  }
  for (int label : labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw UsageError("label " + std::to_string(label) + " outside [0," +
                       std::to_string(classes) + ")");
    }
  }
  const double* lv = logits.values().data();
  std::vector<double> probs(s.numel());
  double loss = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const double* row = lv + b * classes;
    const double peak = *std::max_element(row, row + classes);
    double z = 0.0;
    for (std::size_t k = 0; k < classes; ++k) {
      probs[b * classes + k] = std::exp(row[k] - peak);
      z += probs[b * classes + k];
    }
    for (std::size_t k = 0; k < classes; ++k) probs[b * classes + k] /= z;
    loss += -(row[labels[b]] - peak - std::log(z));
  }
  loss /= static_cast<double>(batch);

  auto pl = logits.handle();
  std::vector<int> targets(labels.begin(), labels.end());
  return Tensor::make_result(
      Shape{}, {loss}, {logits},
      [pl, batch, classes, probs = std::move(probs), targets = std::move(targets)](
          detail::Node& self) {
        auto& g = pl->ensure_grad();
        const double scale_by = self.grad[0] / static_cast<double>(batch);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t k = 0; k < classes; ++k) {
            const double onehot = static_cast<int>(k) == targets[b] ? 1.0 : 0.0;
            g[b * classes + k] += scale_by * (probs[b * classes + k] - onehot);
          }
        }
      });
}

// ---------------------------------------------------------------------------

Conv3DLayer::Conv3DLayer(std::size_t in_channels, std::size_t out_channels)
    : kernel(make_param(Shape{3, 3, 3, in_channels, out_channels})),
      bias(make_param(Shape{out_channels})) {}

void Conv3DLayer::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.emplace_back(prefix + ".kernel", kernel);
  out.emplace_back(prefix + ".bias", bias);
}

ComplexConv3DLayer::ComplexConv3DLayer(std::size_t in_channels, std::size_t out_channels)
    : kernel(make_param(Shape{3, 3, 3, in_channels, out_channels}),
             make_param(Shape{3, 3, 3, in_channels, out_channels})),
      bias(make_param(Shape{out_channels}), make_param(Shape{out_channels})) {}

void ComplexConv3DLayer::collect(const std::string& prefix,
                                 std::vector<NamedTensor>& out) const {
  out.emplace_back(prefix + ".kernel_re", kernel.re);
  out.emplace_back(prefix + ".kernel_im", kernel.im);
  out.emplace_back(prefix + ".bias_re", bias.re);
  out.emplace_back(prefix + ".bias_im", bias.im);
}

DepthwiseConv2DLayer::DepthwiseConv2DLayer(std::size_t channels)
    : kernel(make_param(Shape{3, 3, channels})), bias(make_param(Shape{channels})) {}

void DepthwiseConv2DLayer::collect(const std::string& prefix,
                                   std::vector<NamedTensor>& out) const {
  out.emplace_back(prefix + ".kernel", kernel);
  out.emplace_back(prefix + ".bias", bias);
}

DenseLayer::DenseLayer(std::size_t in_features, std::size_t out_features)
    : kernel(make_param(Shape{in_features, out_features})),
      bias(make_param(Shape{out_features})) {}

Tensor DenseLayer::forward(const Tensor& x) const { return affine_last_axis(x, kernel, bias); }

void DenseLayer::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.emplace_back(prefix + ".kernel", kernel);
  out.emplace_back(prefix + ".bias", bias);
}

BatchNormLayer::BatchNormLayer(std::size_t channels)
    : gamma(Tensor::full(Shape{channels}, 1.0, true)),
      beta(make_param(Shape{channels})),
      running_mean(Tensor::zeros(Shape{channels})),
      running_var(Tensor::full(Shape{channels}, 1.0)) {}

void BatchNormLayer::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.emplace_back(prefix + ".gamma", gamma);
  out.emplace_back(prefix + ".beta", beta);
  out.emplace_back(prefix + ".running_mean", running_mean);
  out.emplace_back(prefix + ".running_var", running_var);
}

CoordinateAttentionLayer::CoordinateAttentionLayer(std::size_t channels, std::size_t reduced)
    : shared(channels, reduced),
      norm(reduced),
      height_gate(reduced, channels),
      width_gate(reduced, channels) {}

Tensor CoordinateAttentionLayer::forward(const Tensor& x, Mode mode) {
  const Shape& s = x.shape();
  if (s.rank() != 4) throw ShapeError("coordinate attention needs (B,H,W,C), got " + s.str());
  const std::size_t batch = s[0], height = s[1], width = s[2], ch = s[3];

  // Pool along width -> one descriptor per row; along height -> one per column.
  const Tensor per_row = reduce_mean(x, {2}, true);                            // (B,H,1,C)
  const Tensor per_col = reshape(reduce_mean(x, {1}, true), Shape{batch, width, 1, ch});
  const Tensor stacked = concat({per_row, per_col}, 1);                         // (B,H+W,1,C)

  const Tensor mixed = relu(norm.forward(shared.forward(stacked), mode));     // (B,H+W,1,m)
  const Tensor rows = slice(mixed, 1, 0, height);
  const Tensor cols = slice(mixed, 1, height, height + width);

  const Tensor gate_h = sigmoid(height_gate.forward(rows));                    // (B,H,1,C)
  const Tensor gate_w =
      reshape(sigmoid(width_gate.forward(cols)), Shape{batch, 1, width, ch});  // (B,1,W,C)
  return mul(x, mul(gate_h, gate_w));
}

void CoordinateAttentionLayer::collect(const std::string& prefix,
                                       std::vector<NamedTensor>& out) const {
  shared.collect(prefix + ".shared", out);
  norm.collect(prefix + ".norm", out);
  height_gate.collect(prefix + ".height_gate", out);
  width_gate.collect(prefix + ".width_gate", out);
}

}  // namespace ddf2pol
