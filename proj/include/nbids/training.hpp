#pragma once

#include "nbids/data.hpp"
#include "nbids/model.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <vector>

namespace nbids {

struct AdamState {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t t = 0;
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
};

/// One bias-corrected Adam update over every trainable tensor. Throws
/// KeyError when a trainable tensor has no gradient.
void adam_step(std::span<const ParamRef> params, const ParamGrads& grads, AdamState& state);
void adam_step(ModelParams& params, const ParamGrads& grads, AdamState& state);

/// Exponential averages of batchnorm batch statistics started from zero and
/// divided by 1 - momentum^t, so that short runs are not dominated by the
/// (0, 1) initial running statistics.
class DebiasedBatchStats {
public:
  void update(ModelParams& params, const ForwardResult& fwd);
  [[nodiscard]] std::int64_t steps() const { return steps_; }

private:
  std::vector<std::pair<Tensor, Tensor>> acc_;
  std::int64_t steps_ = 0;
};

struct TrainConfig {
  std::size_t batch_size = 128;
  std::size_t epochs = 50;
  std::size_t early_stop_patience = 5;
  std::uint64_t seed = 42;
  bool shuffle = true;
  double validation_fraction = 0.1;
  double learning_rate = 0.001;
  /// val_loss must drop by at least this much to reset patience.
  double min_delta = 1e-4;
  /// Zero-debiased batchnorm running statistics (see DebiasedBatchStats);
  /// false commits the plain momentum update.
  bool bn_debias = true;
};

void validate(const TrainConfig& cfg);

struct TrainingCurves {
  std::vector<double> train_loss, train_accuracy, val_loss, val_accuracy;

  [[nodiscard]] std::size_t epochs() const { return train_loss.size(); }
  friend bool operator==(const TrainingCurves&, const TrainingCurves&) = default;
};

/// Columns: epoch, train_loss, train_acc, val_loss, val_acc.
void write_curves_csv(const std::filesystem::path& path, const TrainingCurves& curves);

struct LabeledSet {
  const FeatureMatrix& x;
  std::span<const int> y;
};

struct FitResult {
  ModelParams params;       ///< parameters of the best validation epoch
  TrainingCurves curves;
  std::size_t best_epoch = 0; ///< 1-based
  double best_val_loss = 0.0;
  bool stopped_early = false;
};

using EpochCallback = std::function<void(std::size_t epoch, const TrainingCurves&)>;

/// Mini-batch training on the training partition only; a stratified
/// validation slice is carved out of it for early stopping.
FitResult fit(const ModelParams& initial, const LabeledSet& train, const TrainConfig& cfg,
              const EpochCallback& on_epoch = {});

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  std::vector<int> predictions;
  Tensor probs; ///< [n, n_classes]
};

/// Inference-mode forward in fixed-size chunks.
EvalResult evaluate(const ModelParams& params, const FeatureMatrix& x, std::span<const int> labels,
                    std::size_t chunk = 256);
/// Class probabilities only, no labels needed.
Tensor predict_proba(const ModelParams& params, const FeatureMatrix& x, std::size_t chunk = 256);

} // namespace nbids
