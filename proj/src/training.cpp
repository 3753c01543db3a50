#include "nbids/training.hpp"

#include "nbids/errors.hpp"
#include "nbids/log.hpp"
#include "nbids/rng.hpp"
#include "nbids/text.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

namespace nbids {

void adam_step(std::span<const ParamRef> params, const ParamGrads& grads, AdamState& s) {
  for (const auto& p : params)
    if (p.trainable && !grads.contains(p.name)) throw KeyError("adam_step: no gradient for parameter '" + p.name + "'");
  ++s.t;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
  for (const auto& p : params) {
    if (!p.trainable) continue;
    const Tensor& g = grads.at(p.name);
    require_shape(g, p.tensor->shape(), ("adam_step gradient for " + p.name).c_str());
    auto [mit, m_new] = s.m.try_emplace(p.name, p.tensor->shape());
    auto [vit, v_new] = s.v.try_emplace(p.name, p.tensor->shape());
    auto w = p.tensor->data();
    auto m = mit->second.data();
    auto v = vit->second.data();
    const auto gs = g.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * gs[i];
      v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * gs[i] * gs[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      w[i] -= s.lr * mhat / (std::sqrt(vhat) + s.epsilon);
    }
  }
}

void adam_step(ModelParams& params, const ParamGrads& grads, AdamState& state) {
  const auto refs = params.entries();
  adam_step(std::span<const ParamRef>(refs), grads, state);
}

void DebiasedBatchStats::update(ModelParams& p, const ForwardResult& fwd) {
  if (fwd.bn_batch.size() != p.blocks.size())
    throw UsageError("DebiasedBatchStats: forward result does not match the model");
  if (acc_.empty())
    for (const auto& [mean, var] : fwd.bn_batch) acc_.emplace_back(Tensor(mean.shape()), Tensor(var.shape()));
  ++steps_;
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    auto& bn = p.blocks[i].bn;
    const double m = bn.momentum;
    const double correction = 1.0 - std::pow(m, static_cast<double>(steps_));
    auto am = acc_[i].first.data();
    auto av = acc_[i].second.data();
    const auto bm = fwd.bn_batch[i].first.data();
    const auto bv = fwd.bn_batch[i].second.data();
    for (std::size_t c = 0; c < am.size(); ++c) {
      am[c] = m * am[c] + (1.0 - m) * bm[c];
      av[c] = m * av[c] + (1.0 - m) * bv[c];
      bn.running_mean[c] = am[c] / correction;
      bn.running_var[c] = av[c] / correction;
    }
  }
}

void validate(const TrainConfig& cfg) {
  if (cfg.batch_size < 1) throw ConfigError("train config: batch_size must be at least 1");
  if (cfg.epochs < 1) throw ConfigError("train config: epochs must be at least 1");
  if (!(cfg.validation_fraction >= 0.0 && cfg.validation_fraction < 1.0))
    throw ConfigError("train config: validation_fraction must lie in [0, 1)");
  if (!(cfg.learning_rate > 0.0)) throw ConfigError("train config: learning_rate must be positive");
}

void write_curves_csv(const std::filesystem::path& path, const TrainingCurves& c) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw PathError("cannot open '" + path.string() + "' for writing");
  out << "epoch,train_loss,train_acc,val_loss,val_acc\n";
  for (std::size_t e = 0; e < c.epochs(); ++e)
    out << e + 1 << ',' << text::format_double(c.train_loss[e]) << ',' << text::format_double(c.train_accuracy[e])
        << ',' << text::format_double(c.val_loss[e]) << ',' << text::format_double(c.val_accuracy[e]) << '\n';
}

namespace {

std::size_t argmax_row(std::span<const double> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

} // namespace

FitResult fit(const ModelParams& initial, const LabeledSet& train, const TrainConfig& cfg,
              const EpochCallback& on_epoch) {
  validate(cfg);
  const std::size_t n_classes = initial.config.n_classes;
  if (train.x.rows == 0 || train.y.empty()) throw DataError("fit: empty training set");
  if (train.x.rows != train.y.size())
    throw ShapeError("fit: " + std::to_string(train.x.rows) + " feature rows but " + std::to_string(train.y.size()) +
                     " labels");
  for (std::size_t i = 0; i < train.y.size(); ++i)
    if (train.y[i] < 0 || static_cast<std::size_t>(train.y[i]) >= n_classes)
      throw LabelError("fit: label " + std::to_string(train.y[i]) + " in row " + std::to_string(i) +
                       " outside [0, " + std::to_string(n_classes) + ")");

  StratifiedIndices parts;
  if (cfg.validation_fraction > 0.0) {
    parts = stratified_indices(train.y, n_classes, cfg.validation_fraction, cfg.seed, "validation");
  } else {
    parts.keep.resize(train.y.size());
    std::iota(parts.keep.begin(), parts.keep.end(), std::size_t{0});
  }
  if (parts.keep.empty()) throw DataError("fit: no training rows left after the validation slice");
  if (cfg.batch_size > parts.keep.size())
    throw ConfigError("fit: batch_size " + std::to_string(cfg.batch_size) + " exceeds the " +
                      std::to_string(parts.keep.size()) + " training rows");
  const bool has_val = !parts.holdout.empty();
  const FeatureMatrix val_x = train.x.gather(parts.holdout);
  std::vector<int> val_y;
  for (auto i : parts.holdout) val_y.push_back(train.y[i]);

  FitResult result{initial, {}, 0, std::numeric_limits<double>::infinity(), false};
  ModelParams params = initial;
  AdamState adam;
  adam.lr = cfg.learning_rate;
  DebiasedBatchStats bn_stats;
  std::size_t wait = 0;
  std::uint64_t step = 0;
  const std::size_t L = initial.config.input_len;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order = parts.keep;
    if (cfg.shuffle) {
      auto rng = Rng(cfg.seed, "epoch.shuffle").child(epoch);
      rng.shuffle(std::span(order));
    }
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      const Tensor x = to_model_input(train.x.gather(idx), L);
      std::vector<int> y;
      for (auto i : idx) y.push_back(train.y[i]);

      ForwardOptions opts{Mode::train, Rng(cfg.seed, "train.dropout").child(step++).next_u64()};
      auto fwd = model_forward(params, x, opts);
      auto back = model_backward(params, fwd.cache, y);
      adam_step(params, back.grads, adam);
      if (cfg.bn_debias)
        bn_stats.update(params, fwd);
      else
        apply_running_stats(params, fwd);

      loss_sum += back.loss * static_cast<double>(idx.size());
      for (std::size_t r = 0; r < idx.size(); ++r) {
        const std::span<const double> row(fwd.probs.data().data() + r * n_classes, n_classes);
        if (argmax_row(row) == static_cast<std::size_t>(y[r])) ++correct;
      }
    }
    auto& c = result.curves;
    c.train_loss.push_back(loss_sum / static_cast<double>(order.size()));
    c.train_accuracy.push_back(static_cast<double>(correct) / static_cast<double>(order.size()));
    double monitored;
    if (has_val) {
      const auto ev = evaluate(params, val_x, val_y);
      c.val_loss.push_back(ev.loss);
      c.val_accuracy.push_back(ev.accuracy);
      monitored = ev.loss;
    } else {
      c.val_loss.push_back(std::numeric_limits<double>::quiet_NaN());
      c.val_accuracy.push_back(std::numeric_limits<double>::quiet_NaN());
      monitored = c.train_loss.back();
    }
    log_info("train", "epoch " + std::to_string(epoch + 1) + " loss " + text::format_fixed(c.train_loss.back(), 5) +
                          " acc " + text::format_fixed(c.train_accuracy.back(), 4) + " val_loss " +
                          text::format_fixed(c.val_loss.back(), 5) + " val_acc " +
                          text::format_fixed(c.val_accuracy.back(), 4));
    if (on_epoch) on_epoch(epoch + 1, c);

    if (!has_val) {
      result.params = params;
      result.best_epoch = epoch + 1;
      result.best_val_loss = monitored;
      continue;
    }
    if (monitored < result.best_val_loss - cfg.min_delta) {
      result.best_val_loss = monitored;
      result.best_epoch = epoch + 1;
      result.params = params;
      wait = 0;
    } else if (++wait >= cfg.early_stop_patience) {
      result.stopped_early = epoch + 1 < cfg.epochs;
      break;
    }
  }
  return result;
}

Tensor predict_proba(const ModelParams& params, const FeatureMatrix& x, std::size_t chunk) {
  const std::size_t C = params.config.n_classes;
  if (x.rows == 0) throw ShapeError("predict: no rows");
  Tensor probs({x.rows, C});
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < x.rows; start += chunk) {
    const std::size_t end = std::min(x.rows, start + chunk);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const auto fwd = model_forward(params, to_model_input(x.gather(idx), params.config.input_len));
    std::copy(fwd.probs.data().begin(), fwd.probs.data().end(), probs.data().begin() + static_cast<std::ptrdiff_t>(start * C));
  }
  return probs;
}

EvalResult evaluate(const ModelParams& params, const FeatureMatrix& x, std::span<const int> labels,
                    std::size_t chunk) {
  if (x.rows != labels.size())
    throw ShapeError("evaluate: " + std::to_string(x.rows) + " rows but " + std::to_string(labels.size()) + " labels");
  const std::size_t C = params.config.n_classes;
  EvalResult r;
  r.probs = predict_proba(params, x, chunk);
  std::size_t correct = 0;
  double loss = 0.0;
  for (std::size_t i = 0; i < x.rows; ++i) {
    const std::span<const double> row(r.probs.data().data() + i * C, C);
    const auto pred = argmax_row(row);
    r.predictions.push_back(static_cast<int>(pred));
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= C)
      throw LabelError("evaluate: label " + std::to_string(labels[i]) + " in row " + std::to_string(i));
    if (pred == static_cast<std::size_t>(labels[i])) ++correct;
    loss -= std::log(std::max(row[static_cast<std::size_t>(labels[i])], std::numeric_limits<double>::min()));
  }
  r.loss = loss / static_cast<double>(x.rows);
  r.accuracy = static_cast<double>(correct) / static_cast<double>(x.rows);
  return r;
}

} // namespace nbids
