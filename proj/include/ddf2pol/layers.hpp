#pragma once

// Network layers. Image-like tensors carry a leading batch axis and keep channels
// innermost: 3D volumes are (B,H,W,D,C) and 2D maps are (B,H,W,C).

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ddf2pol/tensor.hpp"

namespace ddf2pol {

enum class Mode { kTrain, kInfer };

using NamedTensor = std::pair<std::string, Tensor>;

// ---------------------------------------------------------------------------
// Functional ops

/// 3x3x3 cross-correlation, VALID over height/width and SAME (zero plane on each
/// side) over depth. x: (B,H,W,D,Cin), kernel: (3,3,3,Cin,Cout), bias: (Cout) or
/// undefined. Returns (B,H-2,W-2,D,Cout).
Tensor conv3d(const Tensor& x, const Tensor& kernel, const Tensor& bias);

/// Complex cross-correlation with the same geometry as conv3d:
///   re = x.re*K.re - x.im*K.im + b.re,  im = x.re*K.im + x.im*K.re + b.im
ComplexPair cv_conv3d(const ComplexPair& x, const ComplexPair& kernel, const ComplexPair& bias);

/// ReLU applied to the real and imaginary parts independently.
ComplexPair split_relu(const ComplexPair& x);

/// Per-channel 3x3 cross-correlation with zero SAME padding.
/// x: (B,H,W,C), kernel: (3,3,C), bias: (C).
Tensor depthwise_conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias);

/// Batch normalization over every axis but the last. In train mode the batch
/// statistics are used and the running buffers are updated in place with
/// running = momentum*running + (1-momentum)*batch.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, Mode mode, double epsilon,
                  double momentum);

/// (B,H,W,C) -> (B,C).
Tensor global_average_pool(const Tensor& x);

/// Mean over the batch of -log softmax(logits)[label]. logits: (B,K).
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

// ---------------------------------------------------------------------------
// Parameter containers

struct Conv3DLayer {
  Tensor kernel;  // (3,3,3,Cin,Cout)
  Tensor bias;    // (Cout)

  Conv3DLayer() = default;
  Conv3DLayer(std::size_t in_channels, std::size_t out_channels);
  Tensor forward(const Tensor& x) const { return conv3d(x, kernel, bias); }
  std::size_t parameter_count() const { return kernel.numel() + bias.numel(); }
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

struct ComplexConv3DLayer {
  ComplexPair kernel;  // each (3,3,3,Cin,Cout)
  ComplexPair bias;    // each (Cout)

  ComplexConv3DLayer() = default;
  ComplexConv3DLayer(std::size_t in_channels, std::size_t out_channels);
  ComplexPair forward(const ComplexPair& x) const { return cv_conv3d(x, kernel, bias); }
  std::size_t parameter_count() const { return 2 * (kernel.re.numel() + bias.re.numel()); }
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

struct DepthwiseConv2DLayer {
  Tensor kernel;  // (3,3,C)
  Tensor bias;    // (C)

  DepthwiseConv2DLayer() = default;
  explicit DepthwiseConv2DLayer(std::size_t channels);
  Tensor forward(const Tensor& x) const { return depthwise_conv2d(x, kernel, bias); }
  std::size_t parameter_count() const { return kernel.numel() + bias.numel(); }
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

/// Affine map on the last axis; also serves as a 1x1 convolution.
struct DenseLayer {
  Tensor kernel;  // (Cin,K)
  Tensor bias;    // (K)

  DenseLayer() = default;
  DenseLayer(std::size_t in_features, std::size_t out_features);
  Tensor forward(const Tensor& x) const;
  std::size_t parameter_count() const { return kernel.numel() + bias.numel(); }
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

struct BatchNormLayer {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;  // buffers: counted as parameters, never trained
  Tensor running_var;
  double epsilon = 1e-3;
  double momentum = 0.99;

  BatchNormLayer() = default;
  explicit BatchNormLayer(std::size_t channels);
  Tensor forward(const Tensor& x, Mode mode) {
    return batch_norm(x, gamma, beta, running_mean, running_var, mode, epsilon, momentum);
  }
  std::size_t parameter_count() const { return 4 * gamma.numel(); }
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

/// Coordinate attention on (B,H,W,C) maps.
///
/// Height- and width-pooled descriptors are stacked along the spatial axis and
/// passed through a shared 1x1 conv, batch norm and ReLU. The result is split
/// again, each half gets its own 1x1 conv and a sigmoid, and the outer product
/// of the two gates rescales the input.
struct CoordinateAttentionLayer {
  DenseLayer shared;  // C -> m
  BatchNormLayer norm;
  DenseLayer height_gate;  // m -> C
  DenseLayer width_gate;   // m -> C

  CoordinateAttentionLayer() = default;
  CoordinateAttentionLayer(std::size_t channels, std::size_t reduced);
  Tensor forward(const Tensor& x, Mode mode);
  std::size_t parameter_count() const {
    return shared.parameter_count() + norm.parameter_count() + height_gate.parameter_count() +
           width_gate.parameter_count();
  }
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

}  // namespace ddf2pol
