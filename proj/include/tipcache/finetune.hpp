#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tipcache/types.hpp"

namespace tipcache {

enum class OptimizerKind { AdamW, Sgd };

struct FineTuneConfig {
    std::size_t epochs = 20;
    std::size_t batch_size = 256;
    double learning_rate = 0.001;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t seed = 1;
    bool shuffle = true;
    bool renormalize_keys = false;
    OptimizerKind optimizer = OptimizerKind::AdamW;

    void validate() const;
};

struct EpochStats {
    std::size_t epoch = 0;  // 1-based
    double loss = 0.0;      // mean cross-entropy over the epoch's samples
    double accuracy = 0.0;  // fraction correct at forward time
};

struct TrainLog {
    std::vector<EpochStats> epochs;
    std::uint64_t key_checksum = 0;

    /// `epoch <n> loss <f> acc <f>` per line, then `checksum <hex>`.
    std::string serialize() const;
};

struct FineTuneResult {
    CacheModel cache;
    TrainLog log;
};

/// Row-wise softmax with max subtraction.
std::vector<double> softmax(std::span<const double> logits);

/// -log softmax(logits)[target]. Throws LabelOutOfRange.
double ce_loss(std::span<const double> logits, std::size_t target);

/// d ce_loss(predict(query)) / d keys, an NK x C matrix:
///   row i = alpha * beta * A_i * (p[c_i] - y[c_i]) * query
/// Rows whose similarity was clamped receive zero gradient.
FeatureMatrix key_gradient(std::span<const double> query, const CacheModel& cache,
                           const FeatureMatrix& classifier, const Hyperparams& hp,
                           std::size_t target);

/// Cosine decay from `base` to 0: base * (1 + cos(pi * step / total)) / 2.
double cosine_lr(double base, std::size_t step, std::size_t total);

/// Decoupled-weight-decay Adam (or plain SGD with L2 decay) over a flat
/// parameter vector.
class KeyOptimizer {
public:
    KeyOptimizer(const FineTuneConfig& cfg, std::size_t num_params);

    /// Applies one update with learning rate `lr`. lr == 0 leaves params untouched.
    void step(std::span<double> params, std::span<const double> grad, double lr);

    std::size_t steps_taken() const noexcept { return t_; }

private:
    FineTuneConfig cfg_;
    std::vector<double> m_;
    std::vector<double> v_;
    std::size_t t_ = 0;
};

/// Fine-tunes the cache keys on a labeled training set by minimizing mean
/// cross-entropy per mini-batch. Values, classifier and hyperparameters stay
/// fixed. Deterministic for a given config seed.
FineTuneResult fine_tune(const CacheModel& cache, const FeatureMatrix& train_features,
                         std::span<const std::uint32_t> train_labels,
                         const FeatureMatrix& classifier, const Hyperparams& hp,
                         const FineTuneConfig& cfg);

/// FNV-1a over the little-endian bytes of the matrix values.
std::uint64_t checksum(const FeatureMatrix& m);

}  // namespace tipcache
