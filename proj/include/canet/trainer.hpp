#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "canet/checkpoint.hpp"
#include "canet/data.hpp"
#include "canet/graph.hpp"

namespace canet {

struct TrainConfig {
  std::size_t epochs = 100;
  double base_lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t batch_size = 128;
  std::uint64_t seed = 42;
  std::size_t subset_size = 0;       // 0 keeps the full train split
  std::size_t eval_subset_size = 0;  // 0 keeps the full test split

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    if (!(base_lr > 0.0)) throw std::invalid_argument("TrainConfig: base_lr must be > 0");
    if (!(momentum >= 0.0)) throw std::invalid_argument("TrainConfig: momentum must be >= 0");
    if (!(weight_decay >= 0.0)) {
      throw std::invalid_argument("TrainConfig: weight_decay must be >= 0");
    }
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  }
};

// Per-epoch cosine annealing without restarts.
inline double cosine_lr(std::size_t epoch, const TrainConfig& cfg) {
  cfg.validate();
  if (epoch >= cfg.epochs) {
    throw std::invalid_argument("cosine_lr: epoch " + std::to_string(epoch) +
                                " out of range for " + std::to_string(cfg.epochs) + " epochs");
  }
  const double phase = std::numbers::pi * static_cast<double>(epoch) /
                       static_cast<double>(cfg.epochs);
  return cfg.base_lr * 0.5 * (1.0 + std::cos(phase));
}

struct TrainLogRow {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double test_acc = 0.0;
  double seconds = 0.0;
};

struct TrainLog {
  std::vector<TrainLogRow> rows;
  bool diverged = false;
  std::string divergence_note;
};

// Classical (non-Nesterov) momentum with decoupled-from-nothing L2 decay:
//   g <- grad + wd*param (decayed parameters only); v <- m*v + g; p <- p - lr*v
// Velocity tensors are created on first use. A non-finite gradient rejects the
// whole step before any parameter moves.
template <typename T>
class SgdState {
 public:
  void step(ModelGraph<T>& g, double lr, double momentum, double weight_decay) {
    std::vector<Param<T>*> params;
    g.for_each_param([&](Node<T>&, Param<T>& p) { params.push_back(&p); });
    if (velocity_.empty()) {
      for (auto* p : params) velocity_.push_back(Tensor<T>(p->value.shape()));
    }
    if (velocity_.size() != params.size()) {
      throw std::invalid_argument("sgd_step: velocity state does not match graph");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (!params[i]->grad.all_finite()) {
        throw std::runtime_error("sgd_step: non-finite gradient on '" + params[i]->name +
                                 "', step rejected");
      }
      if (params[i]->grad.shape() != params[i]->value.shape()) {
        throw std::invalid_argument("sgd_step: gradient shape mismatch on '" +
                                    params[i]->name + "'");
      }
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      Param<T>& p = *params[i];
      Tensor<T>& v = velocity_[i];
      const T wd = p.weight_decay ? static_cast<T>(weight_decay) : T{0};
      const T m = static_cast<T>(momentum);
      const T rate = static_cast<T>(lr);
      for (std::size_t k = 0; k < p.value.size(); ++k) {
        const T g_k = p.grad.data()[k] + wd * p.value.data()[k];
        v.data()[k] = m * v.data()[k] + g_k;
        p.value.data()[k] -= rate * v.data()[k];
      }
    }
  }

 private:
  std::vector<Tensor<T>> velocity_;
};

template <typename T>
struct CrossEntropyResult {
  double loss = 0.0;
  Tensor<T> grad;  // (N,K), already divided by N
};

// Mean negative log-softmax with max-shift stabilization.
template <typename T>
CrossEntropyResult<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  check_rank(logits, 2, "cross_entropy");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) {
    throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) +
                                " labels for " + std::to_string(n) + " rows");
  }
  CrossEntropyResult<T> out;
  out.grad = Tensor<T>(logits.shape());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= k) {
      throw std::invalid_argument("cross_entropy: label " + std::to_string(label) +
                                  " out of range for " + std::to_string(k) + " classes");
    }
    const T* row = logits.data() + i * k;
    T max_v = row[0];
    for (std::size_t j = 1; j < k; ++j) max_v = std::max(max_v, row[j]);
    double sum_exp = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      sum_exp += std::exp(static_cast<double>(row[j]) - static_cast<double>(max_v));
    }
    total += std::log(sum_exp) -
             (static_cast<double>(row[static_cast<std::size_t>(label)]) -
              static_cast<double>(max_v));
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t j = 0; j < k; ++j) {
      const double soft = std::exp(static_cast<double>(row[j]) - static_cast<double>(max_v)) /
                          sum_exp;
      const double onehot = static_cast<std::size_t>(label) == j ? 1.0 : 0.0;
      out.grad.data()[i * k + j] = static_cast<T>((soft - onehot) * inv_n);
    }
  }
  out.loss = total / static_cast<double>(n);
  return out;
}

namespace detail {

// The data pipeline is float; widen at the batch boundary when the model is
// instantiated at a wider scalar.
template <typename T>
Tensor<T> to_model_input(Tensor<float>&& images) {
  if constexpr (std::is_same_v<T, float>) {
    return std::move(images);
  } else {
    return images.template cast<T>();
  }
}

}  // namespace detail

// Lowest index wins logit ties.
template <typename T>
std::size_t argmax_row(const T* row, std::size_t k) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < k; ++j) {
    if (row[j] > row[best]) best = j;
  }
  return best;
}

// Normalize-only pipeline in natural order, whatever the split; chunking into
// batches is a throughput detail and cannot change the result.
template <typename T>
double evaluate(ModelGraph<T>& g, const Cifar10Set& set, std::size_t batch_size,
                const AugmentConfig& cfg) {
  if (set.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
  if (batch_size < 1) throw std::invalid_argument("evaluate: batch_size must be >= 1");
  cfg.validate();
  std::size_t correct = 0;
  Tensor<float> image({kCifarChannels, kCifarSide, kCifarSide});
  for (std::size_t begin = 0; begin < set.size(); begin += batch_size) {
    const std::size_t count = std::min(batch_size, set.size() - begin);
    Tensor<float> images({count, kCifarChannels, kCifarSide, kCifarSide});
    for (std::size_t b = 0; b < count; ++b) {
      std::copy_n(set.images.data() + (begin + b) * kCifarImageBytes, kCifarImageBytes,
                  image.data());
      auto normalized = normalize(image, cfg.mean, cfg.std);
      std::copy_n(normalized.data(), kCifarImageBytes, images.data() + b * kCifarImageBytes);
    }
    auto input = detail::to_model_input<T>(std::move(images));
    auto logits = forward(g, input, /*training=*/false);
    const std::size_t k = logits.dim(1);
    for (std::size_t b = 0; b < count; ++b) {
      if (argmax_row(logits.data() + b * k, k) ==
          static_cast<std::size_t>(set.labels[begin + b])) {
        ++correct;
      }
    }
  }
  return static_cast<double>(correct) / static_cast<double>(set.size());
}

inline std::string train_log_to_csv(const TrainLog& log) {
  std::string out = "epoch,lr,train_loss,train_acc,test_acc,seconds\n";
  char line[256];
  for (const auto& r : log.rows) {
    std::snprintf(line, sizeof line, "%zu,%.10g,%.10g,%.6f,%.6f,%.3f\n", r.epoch, r.lr,
                  r.train_loss, r.train_acc, r.test_acc, r.seconds);
    out += line;
  }
  return out;
}

inline nlohmann::json train_log_to_json(const TrainLog& log) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : log.rows) {
    rows.push_back({{"epoch", r.epoch},
                    {"lr", r.lr},
                    {"train_loss", r.train_loss},
                    {"train_acc", r.train_acc},
                    {"test_acc", r.test_acc},
                    {"seconds", r.seconds}});
  }
  return nlohmann::json{{"rows", rows},
                        {"diverged", log.diverged},
                        {"divergence_note", log.divergence_note}};
}

inline void save_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << text;
  if (!out) throw std::runtime_error("short write on " + path);
}

// Runs the full recipe on the provided (already initialized) graph. The
// checkpoint at `checkpoint_path` always holds the last completed state:
// the initial parameters before epoch 1, then each finished epoch in turn.
// On divergence the loop stops without overwriting it. Pass an empty path to
// skip checkpointing.
template <typename T>
TrainLog train(ModelGraph<T>& g, const Cifar10Set& train_set, const Cifar10Set& test_set,
               const TrainConfig& cfg, const NormStats& stats,
               const std::string& checkpoint_path = "") {
  cfg.validate();
  if (train_set.split != Split::Train) {
    throw std::invalid_argument("train: first dataset must be the train split");
  }
  const Cifar10Set train_sub = subset(train_set, cfg.subset_size, cfg.seed);
  const Cifar10Set test_sub = subset(test_set, cfg.eval_subset_size, cfg.seed + 1);

  AugmentConfig aug;
  for (std::size_t c = 0; c < 3; ++c) {
    aug.mean[c] = static_cast<float>(stats.mean[c]);
    aug.std[c] = static_cast<float>(stats.std[c]);
  }
  aug.validate();

  TrainLog log;
  SgdState<T> sgd;
  if (!checkpoint_path.empty()) save_checkpoint(checkpoint_path, g);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const double lr = cosine_lr(epoch, cfg);
    BatchStream stream(train_sub, cfg.batch_size, cfg.seed, epoch, aug);
    Batch batch;
    double loss_sum = 0.0;
    std::size_t correct = 0, seen = 0;
    bool ok = true;
    while (stream.next(batch)) {
      ForwardCache<T> cache;
      auto input = detail::to_model_input<T>(std::move(batch.images));
      auto logits = forward(g, input, /*training=*/true, &cache);
      auto ce = cross_entropy(logits, batch.labels);
      if (!std::isfinite(ce.loss)) {
        log.diverged = true;
        log.divergence_note = "non-finite loss in epoch " + std::to_string(epoch + 1);
        ok = false;
        break;
      }
      const std::size_t n = batch.labels.size();
      const std::size_t k = logits.dim(1);
      loss_sum += ce.loss * static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        if (argmax_row(logits.data() + i * k, k) ==
            static_cast<std::size_t>(batch.labels[i])) {
          ++correct;
        }
      }
      seen += n;
      g.zero_grads();
      backward(g, cache, ce.grad);
      try {
        sgd.step(g, lr, cfg.momentum, cfg.weight_decay);
      } catch (const std::runtime_error& e) {
        log.diverged = true;
        log.divergence_note = std::string(e.what()) + " in epoch " + std::to_string(epoch + 1);
        ok = false;
        break;
      }
    }
    if (!ok) break;

    TrainLogRow row;
    row.epoch = epoch + 1;
    row.lr = lr;
    row.train_loss = loss_sum / static_cast<double>(seen);
    row.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
    row.test_acc = evaluate(g, test_sub, cfg.batch_size, aug);
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                      .count();
    log.rows.push_back(row);
    if (!checkpoint_path.empty()) save_checkpoint(checkpoint_path, g);
  }
  return log;
}

}  // namespace canet
