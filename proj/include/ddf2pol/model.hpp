#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ddf2pol/layers.hpp"
#include "ddf2pol/tensor.hpp"

namespace ddf2pol {

struct ModelConfig {
  std::size_t patch = 15;
  std::size_t num_classes = 15;
  std::size_t descriptor_depth = 12;
  std::size_t complex_depth = 6;
  std::size_t filters1 = 16;
  std::size_t filters2 = 32;
  std::size_t ca_reduction = 64;

  /// Throws UsageError unless patch is odd and >= 5 and num_classes >= 2.
  void validate() const;
  std::size_t feature_size() const { return patch - 4; }
  /// Width of one stream after flattening depth into channels.
  std::size_t stream_channels() const { return descriptor_depth * filters2; }
  std::size_t fused_channels() const {
    return descriptor_depth * filters2 + 2 * complex_depth * filters2;
  }
  /// Bottleneck width of the attention block, at least 1.
  std::size_t attention_width() const;

  bool operator==(const ModelConfig&) const = default;
};

struct ParameterLedger {
  std::size_t rv_stream = 0;
  std::size_t cv_stream = 0;
  std::size_t dense = 0;
  std::size_t depthwise = 0;
  std::size_t attention = 0;

  std::size_t base() const { return rv_stream + cv_stream + dense; }
  std::size_t with_depthwise() const { return base() + depthwise; }
  std::size_t total() const { return with_depthwise() + attention; }
};

/// Multiply-accumulate and floating-point operation counts for one patch.
///
/// MACs cover every convolution and dense map: output elements x kernel taps x
/// input channels, with a complex convolution costing four real ones. FLOPs are
/// 2 x MACs plus one operation per element for each bias add, activation,
/// normalization, pooling, gating product and complex recombination.
struct ComplexityLedger {
  std::uint64_t macs = 0;
  std::uint64_t flops = 0;
};

/// Input planes of one or more patches.
struct PatchBatch {
  Tensor descriptors;  // (B,P,P,12,1)
  ComplexPair coherency;  // each (B,P,P,6,1)
  std::vector<int> labels;  // zero-based, may be empty for inference
};

/// Dual-stream real/complex 3D CNN with depthwise refinement, coordinate
/// attention, global average pooling and a dense classifier.
class Ddf2PolModel {
 public:
  explicit Ddf2PolModel(const ModelConfig& config);

  /// Glorot-uniform weights, zero biases, identity batch norm. Deterministic in `seed`.
  static Ddf2PolModel initialize(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  /// Returns (B,K) logits.
  Tensor forward(const Tensor& descriptors, const ComplexPair& coherency, Mode mode);
  Tensor forward(const PatchBatch& batch, Mode mode) {
    return forward(batch.descriptors, batch.coherency, mode);
  }
  /// The (B,P-4,P-4,768) map entering the depthwise layer.
  Tensor fused_features(const Tensor& descriptors, const ComplexPair& coherency) const;

  /// Every tensor, trainable or not, in a fixed order.
  std::vector<NamedTensor> named_tensors() const;
  std::vector<Tensor> trainable() const;
  ParameterLedger count_parameters() const;
  std::size_t allocated_elements() const;

  /// Copies of every tensor's values, for best-epoch restoration.
  std::vector<std::vector<double>> snapshot() const;
  void restore(const std::vector<std::vector<double>>& values);

  void save(const std::filesystem::path& path) const;
  static Ddf2PolModel load(const std::filesystem::path& path);

  Conv3DLayer rv_conv1, rv_conv2;
  ComplexConv3DLayer cv_conv1, cv_conv2;
  DepthwiseConv2DLayer depthwise;
  CoordinateAttentionLayer attention;
  DenseLayer classifier;

 private:
  ModelConfig config_;
};

/// Layer-shape arithmetic only; needs no allocated model.
ParameterLedger count_parameters(const ModelConfig& config);
ComplexityLedger count_flops_macs(const ModelConfig& config);

/// Human-readable ledger whose last line is "total <n>".
std::string format_parameter_ledger(const ParameterLedger& ledger);

}  // namespace ddf2pol
