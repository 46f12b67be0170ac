#include "ddf2pol/training.hpp"

#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <random>

#include "ddf2pol/errors.hpp"

namespace ddf2pol {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || batch_size == 0 || max_epochs == 0 || patience == 0) {
    throw UsageError("learning rate, batch size, epochs and patience must be positive");
  }
  if (patience > max_epochs) throw UsageError("patience cannot exceed the epoch budget");
}

void adam_step(AdamState& state, std::span<Tensor> params, double learning_rate) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.numel(), 0.0);
      state.v.emplace_back(p.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw UsageError("Adam state does not match parameters");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(AdamState::kBeta1, t);
  const double c2 = 1.0 - std::pow(AdamState::kBeta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto values = params[i].mutable_values();
    const auto grad = params[i].grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != values.size() || (!grad.empty() && grad.size() != values.size())) {
      throw UsageError("Adam state shape mismatch at parameter " + std::to_string(i));
    }
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double g = grad.empty() ? 0.0 : grad[k];
      m[k] = AdamState::kBeta1 * m[k] + (1.0 - AdamState::kBeta1) * g;
      v[k] = AdamState::kBeta2 * v[k] + (1.0 - AdamState::kBeta2) * g * g;
      const double m_hat = m[k] / c1;
      const double v_hat = v[k] / c2;
      values[k] -= learning_rate * m_hat / (std::sqrt(v_hat) + AdamState::kEpsilon);
    }
  }
}

std::vector<std::vector<std::size_t>> batch_indices(std::size_t samples, std::size_t batch_size,
                                                    std::uint64_t epoch_seed) {
  if (batch_size == 0) throw UsageError("batch size must be positive");
  std::vector<std::size_t> order(samples);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(epoch_seed);
  for (std::size_t i = samples; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < samples; start += batch_size) {
    const std::size_t end = std::min(samples, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

bool EarlyStopping::observe(double loss) {
  ++epochs_;
  if (best_epoch_ == 0 || loss < best_loss_) {
    best_loss_ = loss;
    best_epoch_ = epochs_;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

void write_history(const std::vector<EpochRecord>& history, std::ostream& os) {
  os << "epoch loss accuracy best\n";
  for (const auto& r : history) {
    os << r.epoch << ' ' << std::setprecision(17) << r.loss << ' ' << r.accuracy << ' '
       << (r.best ? 1 : 0) << '\n';
  }
}

TrainResult train(Ddf2PolModel& model, const PatchDataset& dataset, const TrainConfig& config,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  config.validate();
  if (dataset.size() == 0) throw DataError("training set is empty");
  for (int label : dataset.labels()) {
    if (label < 0 || static_cast<std::size_t>(label) >= model.config().num_classes) {
      throw DataError("training label " + std::to_string(label + 1) + " outside 1.." +
                      std::to_string(model.config().num_classes));
    }
  }

  std::vector<Tensor> params = model.trainable();
  AdamState adam;
  EarlyStopping stopper(config.patience);
  TrainResult result;
  auto best = model.snapshot();
  std::mt19937_64 epoch_seeds(config.seed);

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (const auto& idx : batch_indices(dataset.size(), config.batch_size, epoch_seeds())) {
      const PatchBatch batch = dataset.batch(idx);
      for (auto& p : params) p.zero_grad();
      const Tensor logits = model.forward(batch, Mode::kTrain);
      const Tensor loss = softmax_cross_entropy(logits, batch.labels);
      backward(loss);
      adam_step(adam, params, config.learning_rate);

      loss_sum += loss.item() * static_cast<double>(idx.size());
      const std::size_t k = model.config().num_classes;
      const auto lv = logits.values();
      for (std::size_t b = 0; b < idx.size(); ++b) {
        const auto row = lv.subspan(b * k, k);
        const auto arg = std::max_element(row.begin(), row.end()) - row.begin();
        if (arg == batch.labels[b]) ++correct;
      }
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = loss_sum / static_cast<double>(dataset.size());
    rec.accuracy = static_cast<double>(correct) / static_cast<double>(dataset.size());
    rec.best = stopper.observe(rec.loss);
    if (rec.best) best = model.snapshot();
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (stopper.should_stop()) break;
  }
  model.restore(best);
  result.best_epoch = stopper.best_epoch();
  return result;
}

}  // namespace ddf2pol
