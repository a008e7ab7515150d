#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "dcf/image.hpp"
#include "dcf/nn/loss.hpp"
#include "dcf/nn/model.hpp"
#include "dcf/nn/optim.hpp"
#include "dcf/padding.hpp"
#include "dcf/synthdata.hpp"
#include "dcf/transform.hpp"
#include "dcf/util.hpp"

namespace dcf::nn {

struct TrainConfig {
  AdamConfig adam;
  std::size_t batch_size = 32;
  std::size_t epochs = 30;
  bool augment = true;
  double max_rotation = kMaxAugmentAngle;
  std::uint64_t seed = 1;
};

inline void validate(const TrainConfig& cfg) {
  if (!(cfg.adam.lr > 0.0)) throw std::invalid_argument("train: lr must be > 0");
  if (cfg.batch_size < 1) throw std::invalid_argument("train: batch size must be >= 1");
}

/// Crop -> square pad -> resize to the classifier side.
inline ImageU8 prepare_input(const ImageU8& crop, PaddingScheme scheme, std::size_t side) {
  return resize_bilinear(pad_square(crop, scheme), side);
}

/// Network inputs ready for batching: padded, resized, labelled.
struct PreparedSet {
  std::vector<ImageU8> images;
  std::vector<std::size_t> labels;
  std::vector<std::size_t> source_index;  // index into the originating dataset

  std::size_t size() const { return images.size(); }
  std::size_t count(std::size_t label) const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
  }
};

inline PreparedSet prepare_set(const TemporalDataset& ds, std::span<const std::size_t> indices, PaddingScheme scheme,
                               std::size_t side, std::size_t workers = 1) {
  PreparedSet out;
  out.images.resize(indices.size());
  out.labels.resize(indices.size());
  out.source_index.assign(indices.begin(), indices.end());
  parallel_for(indices.size(), [&](std::size_t i) {
    const Item& it = ds.items[indices[i]];
    out.images[i] = prepare_input(it.image, scheme, side);
    out.labels[i] = static_cast<std::size_t>(it.label);
  }, workers);
  return out;
}

inline PreparedSet concat(const PreparedSet& a, const PreparedSet& b) {
  PreparedSet out = a;
  out.images.insert(out.images.end(), b.images.begin(), b.images.end());
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  out.source_index.insert(out.source_index.end(), b.source_index.begin(), b.source_index.end());
  return out;
}

/// Maps 8-bit values to [-1, 1].
template <class T>
void write_normalized(const ImageU8& img, T* dst) {
  const std::size_t plane = img.height() * img.width();
  const auto data = img.data();
  for (std::size_t p = 0; p < plane; ++p)
    for (std::size_t ch = 0; ch < 3; ++ch)
      dst[ch * plane + p] = static_cast<T>(data[p * 3 + ch] / 127.5 - 1.0);
}

template <class T>
Tensor4<T> to_tensor(std::span<const ImageU8* const> images) {
  if (images.empty()) throw std::invalid_argument("to_tensor: empty batch");
  const std::size_t h = images[0]->height(), w = images[0]->width();
  Tensor4<T> t(images.size(), 3, h, w);
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i]->height() != h || images[i]->width() != w)
      throw std::invalid_argument("to_tensor: images differ in size");
    write_normalized(*images[i], t.sample(i));
  }
  return t;
}

/// Eval-mode logits (row-major [n, 2]). Eval mode reads BN running statistics
/// and never writes to the state.
template <class T>
std::vector<T> predict_logits(const ModelState<T>& s, const std::vector<ImageU8>& images, std::size_t chunk = 64) {
  auto& state = const_cast<ModelState<T>&>(s);
  std::vector<T> logits;
  logits.reserve(images.size() * kOutputClasses);
  for (std::size_t start = 0; start < images.size(); start += chunk) {
    const std::size_t end = std::min(images.size(), start + chunk);
    std::vector<const ImageU8*> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(&images[i]);
    auto cache = forward(state, to_tensor<T>(batch), Mode::kEval, false);
    logits.insert(logits.end(), cache.logits.begin(), cache.logits.end());
  }
  return logits;
}

struct Accuracy {
  double f1 = 0.0;        // % of F1 samples predicted F1
  double f2 = 0.0;        // % of F2 samples predicted F2
  double balanced = 0.0;  // unweighted mean of the two
  std::size_t n_f1 = 0, n_f2 = 0, correct_f1 = 0, correct_f2 = 0;
};

inline double balanced_accuracy(double acc_f1, double acc_f2) { return (acc_f1 + acc_f2) / 2.0; }

inline Accuracy accuracy_from_predictions(std::span<const std::size_t> labels, std::span<const std::size_t> predicted) {
  Accuracy a;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 0) {
      ++a.n_f1;
      a.correct_f1 += predicted[i] == 0;
    } else {
      ++a.n_f2;
      a.correct_f2 += predicted[i] == 1;
    }
  }
  if (a.n_f1 == 0 || a.n_f2 == 0) throw std::invalid_argument("evaluate: test set must contain both labels");
  a.f1 = 100.0 * static_cast<double>(a.correct_f1) / static_cast<double>(a.n_f1);
  a.f2 = 100.0 * static_cast<double>(a.correct_f2) / static_cast<double>(a.n_f2);
  a.balanced = balanced_accuracy(a.f1, a.f2);
  return a;
}

template <class T>
std::vector<std::size_t> predict(const ModelState<T>& s, const std::vector<ImageU8>& images) {
  const auto logits = predict_logits(s, images);
  std::vector<std::size_t> out(images.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = argmax2(logits[2 * i], logits[2 * i + 1]);
  return out;
}

template <class T>
Accuracy evaluate(const ModelState<T>& s, const PreparedSet& set) {
  const auto pred = predict(s, set.images);
  return accuracy_from_predictions(set.labels, pred);
}

/// Validation score: balanced accuracy, or plain accuracy when the set holds
/// a single label.
template <class T>
double validation_score(const ModelState<T>& s, const PreparedSet& set) {
  const auto pred = predict(s, set.images);
  if (set.count(0) > 0 && set.count(1) > 0) return accuracy_from_predictions(set.labels, pred).balanced;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == set.labels[i];
  return 100.0 * static_cast<double>(correct) / static_cast<double>(pred.size());
}

struct Confidence {
  Label label = Label::kF1;
  double prob = 0.5;
};

inline Confidence confidence_from_logits(double z0, double z1) {
  const auto p = softmax2(z0, z1);
  const std::size_t k = argmax2(z0, z1);
  return {k == 0 ? Label::kF1 : Label::kF2, p[k]};
}

/// Predicted class and its softmax probability for one crop.
template <class T>
Confidence confidence(const ModelState<T>& s, const ImageU8& crop, PaddingScheme scheme) {
  const auto logits = predict_logits(s, {prepare_input(crop, scheme, s.spec.input_side)});
  return confidence_from_logits(logits[0], logits[1]);
}

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_balanced = 0.0;
};

template <class T>
struct TrainResult {
  ModelState<T> best;
  std::vector<EpochStats> history;
  std::optional<std::size_t> best_epoch;
  double best_val = 0.0;
};

/// Seeded mini-batch training. After every epoch the model is scored on `val`
/// (balanced accuracy); the returned state is the best-scoring snapshot, the
/// earlier epoch winning ties.
template <class T>
TrainResult<T> train_run(ModelState<T> state, const PreparedSet& train, const PreparedSet& val,
                         const TrainConfig& cfg) {
  validate(cfg);
  if (train.size() == 0 || val.size() == 0) throw std::invalid_argument("train_run: empty train or val set");
  TrainResult<T> result;
  if (cfg.epochs == 0) {
    result.best = std::move(state);
    return result;
  }
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<ImageU8> augmented;
      std::vector<const ImageU8*> batch;
      std::vector<std::size_t> labels;
      augmented.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const std::size_t k = order[i];
        if (cfg.augment) {
          augmented.push_back(rotate_random(train.images[k], rng, cfg.max_rotation));
          batch.push_back(&augmented.back());
        } else {
          batch.push_back(&train.images[k]);
        }
        labels.push_back(train.labels[k]);
      }
      auto cache = forward(state, to_tensor<T>(batch), Mode::kTrain);
      loss_sum += backward(state, cache, labels);
      adam_step(state, cfg.adam);
      ++batches;
    }
    const double val_balanced = validation_score(state, val);
    result.history.push_back({epoch, loss_sum / static_cast<double>(batches), val_balanced});
    if (!result.best_epoch || val_balanced > result.best_val) {
      result.best_epoch = epoch;
      result.best_val = val_balanced;
      result.best = state;
    }
  }
  return result;
}

}  // namespace dcf::nn
