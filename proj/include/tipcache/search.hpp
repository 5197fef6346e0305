#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tipcache/types.hpp"

namespace tipcache {

struct SearchGrid {
    std::vector<double> alphas;
    std::vector<double> betas;

    /// Non-empty, finite, non-negative.
    void validate() const;

    /// A coarse residual-ratio x sharpness sweep (alpha 0..4, beta 1.5..11.5).
    static SearchGrid ablation_default();
};

struct GridCell {
    double alpha = 0.0;
    double beta = 0.0;
    double accuracy = 0.0;
};

struct SearchResult {
    Hyperparams best;
    double best_accuracy = 0.0;
    std::size_t alpha_count = 0;
    std::size_t beta_count = 0;
    std::vector<GridCell> cells;  // alpha-major

    const GridCell& at(std::size_t alpha_index, std::size_t beta_index) const {
        return cells[alpha_index * beta_count + beta_index];
    }

    /// One `alpha <f> beta <f> acc <f>` line per cell, in table order.
    std::string serialize() const;
};

/// Top-1 validation accuracy at every (alpha, beta). The best cell is the
/// maximal accuracy; ties go to the smallest alpha, then the smallest beta.
SearchResult grid_search(const CacheModel& cache, const FeatureMatrix& classifier,
                         const FeatureMatrix& val_features,
                         std::span<const std::uint32_t> val_labels, const SearchGrid& grid);

/// Shrinks every class to `target_per_class` prototypes. Each class's keys are
/// shuffled with `seed`, split into equal groups, and each group is replaced by
/// its L2-renormalized mean. Rows come out class-major, group-ascending.
CacheModel reduce_cache(const CacheModel& cache, std::size_t target_per_class, std::uint64_t seed);

struct TrialReport {
    double mean_accuracy = 0.0;
    std::vector<std::uint64_t> seeds;
    std::vector<double> accuracies;
};

using CacheEvaluator = std::function<double(const CacheModel&)>;

/// Runs reduce_cache with seeds seed .. seed + trials - 1 and evaluates each.
TrialReport reduce_trials(const CacheModel& cache, std::size_t target_per_class,
                          std::size_t trials, std::uint64_t seed, const CacheEvaluator& evaluator);

/// Builds the full cache from `shots_per_class` samples per class, then
/// reduces each class to `cache_limit` prototypes.
CacheModel compress_shots(const FeatureMatrix& features, std::span<const std::uint32_t> labels,
                          std::size_t num_classes, std::size_t shots_per_class,
                          std::size_t cache_limit, std::uint64_t seed);

}  // namespace tipcache
