#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "ddf2pol/model.hpp"
#include "ddf2pol/polsar.hpp"

namespace ddf2pol {

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 128;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  std::uint64_t seed = 1;

  void validate() const;
};

struct AdamState {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;

  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;
};

/// One bias-corrected Adam update of every tensor in `params` from its grad
/// buffer. A tensor without a grad buffer is treated as having zero gradient.
void adam_step(AdamState& state, std::span<Tensor> params, double learning_rate);

/// Index permutation for one epoch, cut into batches; the last may be partial.
std::vector<std::vector<std::size_t>> batch_indices(std::size_t samples, std::size_t batch_size,
                                                    std::uint64_t epoch_seed);

/// Patience-based stopping on a loss that should decrease.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  /// Records one epoch's loss. Returns true if this epoch is the new best.
  bool observe(double loss);
  bool should_stop() const { return since_best_ >= patience_; }
  /// One-based epoch with the lowest loss so far (strict improvement only).
  std::size_t best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_loss_; }
  std::size_t epochs_seen() const { return epochs_; }

 private:
  std::size_t patience_;
  std::size_t epochs_ = 0;
  std::size_t best_epoch_ = 0;
  std::size_t since_best_ = 0;
  double best_loss_ = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;  // one-based
  double loss = 0.0;
  double accuracy = 0.0;
  bool best = false;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
};

void write_history(const std::vector<EpochRecord>& history, std::ostream& os);

/// Mini-batch Adam on mean cross-entropy, monitoring mean training loss per
/// epoch. On return `model` holds the weights and batch-norm statistics of the
/// best epoch. `on_epoch` is called after every epoch when set.
TrainResult train(Ddf2PolModel& model, const PatchDataset& dataset, const TrainConfig& config,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

}  // namespace ddf2pol
