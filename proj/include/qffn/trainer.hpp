#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qffn/data.hpp"
#include "qffn/encoder.hpp"
#include "qffn/error.hpp"

namespace qffn {

/// Fine-tuning hyperparameters. Defaults: Adam at
/// 5e-4, batch 32, 5 epochs, seed 42, full data.
struct TrainConfig {
  double learning_rate = 5e-4;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 5;
  std::uint64_t seed = 42;
  std::optional<std::uint64_t> shuffle_seed;  // defaults to `seed`
  double fraction = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

inline void validate(const TrainConfig& c) {
  if (!(c.learning_rate >= 0.0) || !std::isfinite(c.learning_rate)) {
    throw ConfigError("learning_rate must be finite and >= 0");
  }
  if (c.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (c.max_epochs == 0) throw ConfigError("max_epochs must be positive");
  if (!(c.fraction > 0.0 && c.fraction <= 1.0)) throw ConfigError("fraction must be in (0, 1]");
}

/// Adam with bias correction and no weight decay. Moments live in
/// model-shaped tensors.
class Adam {
public:
  Adam(const EncoderModel& model, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(zeros_like(model)),
        v_(zeros_like(model)) {}

  void step(EncoderModel& model, const EncoderModel& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    auto params = tensors(model);
    const auto g = tensors(grads);
    auto m = tensors(m_);
    auto v = tensors(v_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto p = params[i]->flat();
      const auto gi = g[i]->flat();
      auto mi = m[i]->flat();
      auto vi = v[i]->flat();
      for (std::size_t k = 0; k < p.size(); ++k) {
        mi[k] = beta1_ * mi[k] + (1.0 - beta1_) * gi[k];
        vi[k] = beta2_ * vi[k] + (1.0 - beta2_) * gi[k] * gi[k];
        p[k] -= lr_ * (mi[k] / c1) / (std::sqrt(vi[k] / c2) + eps_);
      }
    }
  }

  std::size_t steps() const noexcept { return t_; }
  const EncoderModel& first_moment() const noexcept { return m_; }
  const EncoderModel& second_moment() const noexcept { return v_; }

private:
  template <class Model>
  static std::vector<decltype(&std::declval<Model&>().classifier_b)> tensors(Model& m) {
    std::vector<decltype(&m.classifier_b)> out;
    for_each_tensor(m, [&](const std::string&, auto& t) { out.push_back(&t); });
    return out;
  }

  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  EncoderModel m_;
  EncoderModel v_;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct MetricsReport {
  double validation_accuracy = 0.0;
  double training_accuracy = 0.0;
  double gap = 0.0;                 // training − validation
  double accuracy_per_param = 0.0;  // validation / param_total
  std::size_t param_total = 0;
  std::vector<EpochRecord> epochs;  // epoch 0 is the untrained model
  double wall_clock_s = 0.0;
};

/// Fills gap and accuracy_per_param from the accuracies and count.
inline void finalize_report(MetricsReport& r) {
  r.gap = r.training_accuracy - r.validation_accuracy;
  r.accuracy_per_param = r.validation_accuracy / static_cast<double>(r.param_total);
}

/// Argmax accuracy; ties resolve to the lowest class id.
inline double accuracy_from_logits(const Matrix& logits, std::span<const int> labels) {
  if (logits.rows() != labels.size()) throw ShapeError("logits rows do not match labels");
  if (labels.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto row = logits.row(i);
    const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    correct += best == labels[i] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

struct Evaluation {
  double accuracy = 0.0;
  double loss = 0.0;
};

/// Accuracy and mean cross-entropy over a dataset, inference mode.
inline Evaluation evaluate_full(const EncoderModel& model, const Vocab& vocab, const Dataset& ds) {
  if (ds.num_classes > model.config.num_classes) {
    throw ShapeError("dataset has more classes than the model head");
  }
  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  const auto batch = make_batch(vocab, ds, all, model.config.max_seq_len);
  const auto logits = model_forward(model, batch);
  const auto labels = ds.labels();
  Evaluation e;
  e.accuracy = accuracy_from_logits(logits, labels);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    e.loss += cross_entropy(logits.row(i), static_cast<std::size_t>(labels[i]));
  }
  if (!labels.empty()) e.loss /= static_cast<double>(labels.size());
  return e;
}

inline double evaluate(const EncoderModel& model, const Vocab& vocab, const Dataset& ds) {
  return evaluate_full(model, vocab, ds).accuracy;
}

struct TrainResult {
  EncoderModel model;
  MetricsReport report;
};

/// Plain mini-batch Adam on mean cross-entropy: seeded reshuffle every epoch,
/// last partial batch kept, no scheduler, no early stopping. The report holds
/// final-epoch metrics; every epoch (and the untrained model as epoch 0) is
/// evaluated on the full train and validation splits.
inline TrainResult train(const ModelConfig& model_config, const TrainConfig& config,
                         const Vocab& vocab, const Dataset& train_set, const Dataset& val_set) {
  validate(model_config);
  validate(config);
  if (vocab.size() > model_config.vocab_size) {
    throw ConfigError("vocab_size " + std::to_string(model_config.vocab_size) +
                      " is smaller than the vocabulary (" + std::to_string(vocab.size()) + ")");
  }
  if (train_set.num_classes > model_config.num_classes || val_set.num_classes > model_config.num_classes) {
    throw ConfigError("num_classes is smaller than the dataset label range");
  }
  if (train_set.size() == 0 || val_set.size() == 0) throw ConfigError("empty dataset");

  const auto start = std::chrono::steady_clock::now();
  const Dataset data =
      config.fraction < 1.0 ? subsample(train_set, config.fraction, config.seed) : train_set;
  if (data.size() == 0) throw ConfigError("fraction leaves no training examples");

  TrainResult result{init_model(model_config, config.seed), {}};
  EncoderModel& model = result.model;
  Adam adam(model, config.learning_rate, config.beta1, config.beta2, config.epsilon);
  std::mt19937_64 shuffle_rng(config.shuffle_seed.value_or(config.seed));
  std::mt19937_64 dropout_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);

  const auto labels = data.labels();

  auto record = [&](std::size_t epoch) {
    const auto tr = evaluate_full(model, vocab, data);
    const auto va = evaluate_full(model, vocab, val_set);
    result.report.epochs.push_back({epoch, tr.loss, va.loss, tr.accuracy, va.accuracy});
  };
  record(0);

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t off = 0; off < order.size(); off += config.batch_size) {
      const std::size_t end = std::min(order.size(), off + config.batch_size);
      const std::span<const std::size_t> idx(order.data() + off, end - off);
      const auto batch = make_batch(vocab, data, idx, model_config.max_seq_len);
      std::vector<int> batch_labels;
      for (std::size_t i : idx) batch_labels.push_back(labels[i]);
      auto lg = model_backward(model, batch, batch_labels,
                               model_config.dropout > 0.0 ? &dropout_rng : nullptr);
      if (!std::isfinite(lg.loss)) {
        throw TrainingDiverged("non-finite loss at epoch " + std::to_string(epoch) +
                               ", step " + std::to_string(adam.steps() + 1));
      }
      adam.step(model, lg.grads);
    }
    record(epoch);
  }

  auto& r = result.report;
  r.training_accuracy = r.epochs.back().train_acc;
  r.validation_accuracy = r.epochs.back().val_acc;
  r.param_total = count_parameters(model);
  finalize_report(r);
  r.wall_clock_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace qffn
