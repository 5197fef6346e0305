#include "tipcache/finetune.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>

#include "tipcache/cache.hpp"
#include "tipcache/random.hpp"

namespace tipcache {

namespace {

struct SampleResult {
    double loss = 0.0;
    std::size_t predicted = 0;
};

// Adds scale * d loss / d keys into `grad` (NK*C, row-major) and reports the
// forward-pass loss and prediction.
SampleResult accumulate_key_gradient(std::span<const double> query, const CacheModel& cache,
                                     const FeatureMatrix& classifier, const Hyperparams& hp,
                                     std::size_t target, double scale, std::span<double> grad) {
    const Logits logits = predict(query, cache, classifier, hp);
    SampleResult result{ce_loss(logits, target), argmax(logits)};

    const auto p = softmax(logits);
    const bool clamp = cache.keys.normalized();
    const std::size_t dim = cache.dim();
    for (std::size_t i = 0; i < cache.size(); ++i) {
        const auto key = cache.keys.row(i);
        const double raw = dot(query, key);
        if (clamp && (raw > 1.0 || raw < -1.0)) continue;  // flat region of the clamp
        const double a = activation_phi(raw, hp.beta);
        const std::size_t cls = cache.values.class_of(i);
        const double dlogit = p[cls] - (cls == target ? 1.0 : 0.0);
        const double coeff = scale * hp.alpha * hp.beta * a * dlogit;
        if (coeff == 0.0) continue;
        double* g = grad.data() + i * dim;
        for (std::size_t k = 0; k < dim; ++k) g[k] += coeff * query[k];
    }
    return result;
}

void check_train_inputs(const CacheModel& cache, const FeatureMatrix& features,
                        std::span<const std::uint32_t> labels, const FeatureMatrix& classifier) {
    if (features.rows() == 0) throw Error(ErrorCode::EmptyInput, "training set is empty");
    if (features.rows() != labels.size()) {
        throw Error(ErrorCode::DimensionMismatch, "training features and labels differ in length");
    }
    if (features.cols() != cache.dim()) {
        throw Error(ErrorCode::DimensionMismatch, "training feature dim differs from key dim");
    }
    for (auto l : labels) {
        if (l >= cache.num_classes) {
            throw Error(ErrorCode::LabelOutOfRange, "training label " + std::to_string(l));
        }
    }
    if (classifier.rows() != cache.num_classes || classifier.cols() != cache.dim()) {
        throw Error(ErrorCode::DimensionMismatch, "classifier shape inconsistent with cache");
    }
    if (!features.normalized() && features.first_unnormalized_row() != features.rows()) {
        throw Error(ErrorCode::NotNormalized, "training features must be unit-norm");
    }
}

}  // namespace

void FineTuneConfig::validate() const {
    if (batch_size == 0) throw Error(ErrorCode::InvalidArgument, "batch_size must be >= 1");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
        throw Error(ErrorCode::InvalidArgument, "learning_rate must be finite and >= 0");
    }
    if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) {
        throw Error(ErrorCode::InvalidArgument, "weight_decay must be finite and >= 0");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(epsilon > 0.0)) {
        throw Error(ErrorCode::InvalidArgument, "moment constants out of range");
    }
}

std::string TrainLog::serialize() const {
    std::string out;
    char line[128];
    for (const auto& e : epochs) {
        std::snprintf(line, sizeof line, "epoch %zu loss %.6f acc %.4f\n", e.epoch, e.loss,
                      e.accuracy);
        out += line;
    }
    std::snprintf(line, sizeof line, "checksum %016llx\n",
                  static_cast<unsigned long long>(key_checksum));
    out += line;
    return out;
}

std::vector<double> softmax(std::span<const double> logits) {
    std::vector<double> p(logits.size());
    if (logits.empty()) return p;
    const double mx = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - mx);
        total += p[i];
    }
    for (double& v : p) v /= total;
    return p;
}

double ce_loss(std::span<const double> logits, std::size_t target) {
    if (target >= logits.size()) {
        throw Error(ErrorCode::LabelOutOfRange,
                    "target " + std::to_string(target) + " with " + std::to_string(logits.size()) +
                        " classes");
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (double l : logits) total += std::exp(l - mx);
    return std::log(total) - (logits[target] - mx);
}

FeatureMatrix key_gradient(std::span<const double> query, const CacheModel& cache,
                           const FeatureMatrix& classifier, const Hyperparams& hp,
                           std::size_t target) {
    if (target >= cache.num_classes) {
        throw Error(ErrorCode::LabelOutOfRange, "target " + std::to_string(target));
    }
    auto grad = FeatureMatrix::zeros(cache.size(), cache.dim());
    accumulate_key_gradient(query, cache, classifier, hp, target, 1.0, grad.mutable_data());
    return grad;
}

double cosine_lr(double base, std::size_t step, std::size_t total) {
    if (total == 0) return base;
    return base * 0.5 *
           (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total)));
}

KeyOptimizer::KeyOptimizer(const FineTuneConfig& cfg, std::size_t num_params)
    : cfg_(cfg), m_(num_params, 0.0), v_(num_params, 0.0) {
    cfg_.validate();
}

void KeyOptimizer::step(std::span<double> params, std::span<const double> grad, double lr) {
    if (params.size() != m_.size() || grad.size() != m_.size()) {
        throw Error(ErrorCode::DimensionMismatch, "optimizer parameter count changed");
    }
    ++t_;
    if (cfg_.optimizer == OptimizerKind::Sgd) {
        if (lr == 0.0) return;
        for (std::size_t i = 0; i < params.size(); ++i) {
            params[i] -= lr * (grad[i] + cfg_.weight_decay * params[i]);
        }
        return;
    }

    const double t = static_cast<double>(t_);
    const double bias1 = 1.0 - std::pow(cfg_.beta1, t);
    const double bias2 = 1.0 - std::pow(cfg_.beta2, t);
    const double step_size = lr / bias1;
    const double bias2_sqrt = std::sqrt(bias2);
    for (std::size_t i = 0; i < params.size(); ++i) {
        m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
        v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
    }
    if (lr == 0.0) return;
    for (std::size_t i = 0; i < params.size(); ++i) {
        params[i] *= 1.0 - lr * cfg_.weight_decay;
        const double denom = std::sqrt(v_[i]) / bias2_sqrt + cfg_.epsilon;
        params[i] -= step_size * m_[i] / denom;
    }
}

FineTuneResult fine_tune(const CacheModel& cache, const FeatureMatrix& train_features,
                         std::span<const std::uint32_t> train_labels,
                         const FeatureMatrix& classifier, const Hyperparams& hp,
                         const FineTuneConfig& cfg) {
    cfg.validate();
    hp.validate();
    cache.validate();
    if (cache.size() == 0) throw Error(ErrorCode::EmptyCache, "cache has no rows");
    check_train_inputs(cache, train_features, train_labels, classifier);

    const std::size_t n_samples = train_features.rows();
    const std::size_t steps_per_epoch = (n_samples + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t total_steps = cfg.epochs * steps_per_epoch;

    FineTuneResult result{cache, {}};
    CacheModel& work = result.cache;
    const bool null_update = total_steps == 0 || cfg.learning_rate == 0.0;
    if (!null_update) work.keys.clear_normalized();

    KeyOptimizer optimizer(cfg, cache.size() * cache.dim());
    Rng rng(cfg.seed);
    std::vector<std::size_t> order(n_samples);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<double> grad(cache.size() * cache.dim());

    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (cfg.shuffle) rng.shuffle(std::span<std::size_t>(order));
        double loss_sum = 0.0;
        std::size_t hits = 0;
        for (std::size_t start = 0; start < n_samples; start += cfg.batch_size) {
            const std::size_t end = std::min(n_samples, start + cfg.batch_size);
            const double scale = 1.0 / static_cast<double>(end - start);
            std::fill(grad.begin(), grad.end(), 0.0);
            for (std::size_t b = start; b < end; ++b) {
                const std::size_t idx = order[b];
                const auto r = accumulate_key_gradient(train_features.row(idx), work, classifier, hp,
                                                       train_labels[idx], scale, grad);
                loss_sum += r.loss;
                if (r.predicted == train_labels[idx]) ++hits;
            }
            const double lr = cosine_lr(cfg.learning_rate, step, total_steps);
            if (!null_update) {
                optimizer.step(work.keys.mutable_data(), grad, lr);
                if (cfg.renormalize_keys) {
                    work.keys = normalize_rows(std::move(work.keys));
                    work.keys.clear_normalized();
                }
            }
            ++step;
        }
        result.log.epochs.push_back({epoch + 1, loss_sum / static_cast<double>(n_samples),
                                     static_cast<double>(hits) / static_cast<double>(n_samples)});
    }

    if (!null_update && cfg.renormalize_keys) work.keys.mark_normalized();
    result.log.key_checksum = checksum(work.keys);
    return result;
}

std::uint64_t checksum(const FeatureMatrix& m) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (double v : m.data()) {
        auto bits = std::bit_cast<std::uint64_t>(v);
        for (int b = 0; b < 8; ++b) {
            h ^= (bits >> (8 * b)) & 0xffU;
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

}  // namespace tipcache
