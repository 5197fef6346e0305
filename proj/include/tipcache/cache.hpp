#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tipcache/types.hpp"

namespace tipcache {

/// Builds a cache whose keys are `features` (row order kept) and whose
/// values are the one-hot expansion of `labels`. `features` must be flagged
/// normalized. `shots` is set to the per-class count when it is uniform.
CacheModel build_cache(const FeatureMatrix& features, std::span<const std::uint32_t> labels,
                       std::size_t num_classes);

/// exp(-beta * (1 - x)). Inputs outside [0, 1] are extrapolated.
double activation_phi(double x, double beta);

/// Cosine similarity between a query and a key row. When the keys are flagged
/// normalized, the result is clamped to [-1, 1] to absorb norm rounding;
/// unflagged keys (e.g. keys being fine-tuned) use the raw inner product.
double key_similarity(std::span<const double> query, std::span<const double> key, bool clamp);

/// A_i = phi(query . key_i) for every cache row.
std::vector<double> compute_affinities(std::span<const double> query, const FeatureMatrix& keys,
                                       double beta);

/// logits = alpha * (A * values) + query * classifier^T
Logits predict(std::span<const double> query, const CacheModel& cache,
               const FeatureMatrix& classifier, const Hyperparams& hp);
Logits predict(const FeatureMatrix& query, const CacheModel& cache,
               const FeatureMatrix& classifier, const Hyperparams& hp);

/// Two-cache form: a visual cache retrieved through phi and a textual cache
/// (keys = classifier rows, values = identity) retrieved linearly.
Logits predict_multimodal(std::span<const double> query, const CacheModel& visual_cache,
                          const FeatureMatrix& textual_keys, const Hyperparams& hp);

/// Row m of the result is bitwise identical to predict(queries.row(m), ...).
/// M = 0 yields an empty matrix.
ScoreMatrix predict_batch(const FeatureMatrix& queries, const CacheModel& cache,
                          const FeatureMatrix& classifier, const Hyperparams& hp);

/// First index of the maximum entry.
std::size_t argmax(std::span<const double> scores);

/// Fraction of rows whose argmax equals the label. 0 for an empty batch.
double top1_accuracy(const ScoreMatrix& scores, std::span<const std::uint32_t> labels);

}  // namespace tipcache
