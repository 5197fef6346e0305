#include "tipcache/cache.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <thread>

namespace tipcache {

namespace {

void check_inputs(std::size_t query_dim, const CacheModel& cache, const FeatureMatrix& classifier,
                  const Hyperparams& hp) {
    hp.validate();
    cache.validate();
    if (cache.size() == 0) throw Error(ErrorCode::EmptyCache, "cache has no rows");
    if (query_dim != cache.dim()) {
        throw Error(ErrorCode::DimensionMismatch,
                    "query dim " + std::to_string(query_dim) + " vs key dim " +
                        std::to_string(cache.dim()));
    }
    if (classifier.cols() != cache.dim()) {
        throw Error(ErrorCode::DimensionMismatch, "classifier dim differs from key dim");
    }
    if (classifier.rows() != cache.num_classes) {
        throw Error(ErrorCode::DimensionMismatch,
                    "classifier has " + std::to_string(classifier.rows()) + " rows for " +
                        std::to_string(cache.num_classes) + " classes");
    }
}

// Sum of affinity-weighted value rows, one entry per class. Accumulates in
// cache-row order.
void accumulate_cache_term(std::span<const double> query, const CacheModel& cache, double beta,
                           std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
    const bool clamp = cache.keys.normalized();
    for (std::size_t i = 0; i < cache.size(); ++i) {
        const double a = activation_phi(key_similarity(query, cache.keys.row(i), clamp), beta);
        out[cache.values.class_of(i)] += a;
    }
}

void predict_into(std::span<const double> query, const CacheModel& cache,
                  const FeatureMatrix& classifier, const Hyperparams& hp,
                  std::span<double> out) {
    accumulate_cache_term(query, cache, hp.beta, out);
    for (std::size_t c = 0; c < out.size(); ++c) {
        out[c] = hp.alpha * out[c] + dot(query, classifier.row(c));
    }
}

}  // namespace

CacheModel build_cache(const FeatureMatrix& features, std::span<const std::uint32_t> labels,
                       std::size_t num_classes) {
    if (features.rows() != labels.size()) {
        throw Error(ErrorCode::DimensionMismatch,
                    std::to_string(features.rows()) + " feature rows vs " +
                        std::to_string(labels.size()) + " labels");
    }
    if (!features.normalized()) {
        // The flag may simply be unset; check the rows before rejecting.
        const std::size_t bad = features.first_unnormalized_row();
        if (bad != features.rows()) {
            throw Error(ErrorCode::NotNormalized, "feature row " + std::to_string(bad));
        }
    }
    CacheModel cache;
    cache.values = LabelMatrix(std::vector<std::uint32_t>(labels.begin(), labels.end()), num_classes);
    cache.keys = features;
    cache.keys.mark_normalized();
    cache.num_classes = num_classes;

    const auto counts = cache.values.class_counts();
    const bool uniform = !counts.empty() &&
                         std::all_of(counts.begin(), counts.end(),
                                     [&](std::size_t n) { return n == counts.front(); });
    cache.shots = uniform ? counts.front() : 0;
    return cache;
}

double activation_phi(double x, double beta) { return std::exp(-beta * (1.0 - x)); }

double key_similarity(std::span<const double> query, std::span<const double> key, bool clamp) {
    const double s = dot(query, key);
    return clamp ? std::clamp(s, -1.0, 1.0) : s;
}

std::vector<double> compute_affinities(std::span<const double> query, const FeatureMatrix& keys,
                                       double beta) {
    if (query.size() != keys.cols()) {
        throw Error(ErrorCode::DimensionMismatch, "query dim differs from key dim");
    }
    std::vector<double> a(keys.rows());
    const bool clamp = keys.normalized();
    for (std::size_t i = 0; i < keys.rows(); ++i) {
        a[i] = activation_phi(key_similarity(query, keys.row(i), clamp), beta);
    }
    return a;
}

Logits predict(std::span<const double> query, const CacheModel& cache,
               const FeatureMatrix& classifier, const Hyperparams& hp) {
    check_inputs(query.size(), cache, classifier, hp);
    Logits out(cache.num_classes);
    predict_into(query, cache, classifier, hp, out);
    return out;
}

Logits predict(const FeatureMatrix& query, const CacheModel& cache,
               const FeatureMatrix& classifier, const Hyperparams& hp) {
    if (query.rows() != 1) throw Error(ErrorCode::DimensionMismatch, "expected a single query row");
    return predict(query.row(0), cache, classifier, hp);
}

Logits predict_multimodal(std::span<const double> query, const CacheModel& visual_cache,
                          const FeatureMatrix& textual_keys, const Hyperparams& hp) {
    check_inputs(query.size(), visual_cache, textual_keys, hp);
    const std::size_t n = visual_cache.num_classes;
    const LabelMatrix textual_values = LabelMatrix::identity(n);

    // visual: phi(q F_vis^T) L_vis
    const auto affinities = compute_affinities(query, visual_cache.keys, hp.beta);
    Logits visual(n, 0.0);
    for (std::size_t i = 0; i < affinities.size(); ++i) {
        for (std::size_t c = 0; c < n; ++c) visual[c] += affinities[i] * visual_cache.values(i, c);
    }

    // textual: (q F_tex^T) L_tex
    std::vector<double> textual_sim(n);
    for (std::size_t j = 0; j < n; ++j) textual_sim[j] = dot(query, textual_keys.row(j));
    Logits textual(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t c = 0; c < n; ++c) textual[c] += textual_sim[j] * textual_values(j, c);
    }

    Logits out(n);
    for (std::size_t c = 0; c < n; ++c) out[c] = hp.alpha * visual[c] + textual[c];
    return out;
}

ScoreMatrix predict_batch(const FeatureMatrix& queries, const CacheModel& cache,
                          const FeatureMatrix& classifier, const Hyperparams& hp) {
    check_inputs(queries.cols(), cache, classifier, hp);
    ScoreMatrix scores(queries.rows(), cache.num_classes);
    const std::size_t m = queries.rows();

    auto run = [&](std::size_t begin, std::size_t end) {
        for (std::size_t r = begin; r < end; ++r) {
            predict_into(queries.row(r), cache, classifier, hp, scores.row(r));
        }
    };

    const std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
    constexpr std::size_t kMinRowsPerThread = 128;
    const std::size_t workers = std::min(hw, m / kMinRowsPerThread);
    if (workers <= 1) {
        run(0, m);
        return scores;
    }
    {
        std::vector<std::jthread> pool;
        const std::size_t chunk = (m + workers - 1) / workers;
        for (std::size_t w = 0; w < workers; ++w) {
            const std::size_t begin = w * chunk;
            const std::size_t end = std::min(m, begin + chunk);
            if (begin < end) pool.emplace_back(run, begin, end);
        }
    }  // joined here
    return scores;
}

std::size_t argmax(std::span<const double> scores) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i) {
        if (scores[i] > scores[best]) best = i;
    }
    return best;
}

double top1_accuracy(const ScoreMatrix& scores, std::span<const std::uint32_t> labels) {
    if (scores.rows() != labels.size()) {
        throw Error(ErrorCode::DimensionMismatch, "score rows differ from label count");
    }
    if (labels.empty()) return 0.0;
    std::size_t hits = 0;
    for (std::size_t r = 0; r < scores.rows(); ++r) {
        if (argmax(scores.row(r)) == labels[r]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

}  // namespace tipcache
