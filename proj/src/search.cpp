#include "tipcache/search.hpp"

#include <cmath>
#include <cstdio>

#include "tipcache/cache.hpp"
#include "tipcache/random.hpp"

namespace tipcache {

namespace {

void check_axis(const std::vector<double>& values, const char* name) {
    if (values.empty()) throw Error(ErrorCode::EmptyInput, std::string(name) + " grid is empty");
    for (double v : values) {
        if (!std::isfinite(v) || v < 0.0) {
            throw Error(ErrorCode::InvalidArgument,
                        std::string(name) + " grid values must be finite and >= 0");
        }
    }
}

}  // namespace

void SearchGrid::validate() const {
    check_axis(alphas, "alpha");
    check_axis(betas, "beta");
}

SearchGrid SearchGrid::ablation_default() {
    return {{0.0, 0.5, 1.0, 2.0, 3.0, 4.0}, {1.5, 3.5, 5.5, 7.5, 9.5, 11.5}};
}

std::string SearchResult::serialize() const {
    std::string out;
    char line[128];
    for (const auto& c : cells) {
        std::snprintf(line, sizeof line, "alpha %.4f beta %.4f acc %.4f\n", c.alpha, c.beta,
                      c.accuracy);
        out += line;
    }
    return out;
}

SearchResult grid_search(const CacheModel& cache, const FeatureMatrix& classifier,
                         const FeatureMatrix& val_features,
                         std::span<const std::uint32_t> val_labels, const SearchGrid& grid) {
    grid.validate();
    if (val_features.rows() == 0) throw Error(ErrorCode::EmptyInput, "validation set is empty");
    if (val_features.rows() != val_labels.size()) {
        throw Error(ErrorCode::DimensionMismatch, "validation features and labels differ in length");
    }

    SearchResult result;
    result.alpha_count = grid.alphas.size();
    result.beta_count = grid.betas.size();
    result.cells.reserve(result.alpha_count * result.beta_count);
    bool have_best = false;
    for (double alpha : grid.alphas) {
        for (double beta : grid.betas) {
            const Hyperparams hp{alpha, beta};
            const double acc = top1_accuracy(predict_batch(val_features, cache, classifier, hp), val_labels);
            result.cells.push_back({alpha, beta, acc});

            const bool better =
                !have_best || acc > result.best_accuracy ||
                (acc == result.best_accuracy &&
                 (alpha < result.best.alpha || (alpha == result.best.alpha && beta < result.best.beta)));
            if (better) {
                result.best = hp;
                result.best_accuracy = acc;
                have_best = true;
            }
        }
    }
    return result;
}

CacheModel reduce_cache(const CacheModel& cache, std::size_t target_per_class, std::uint64_t seed) {
    cache.validate();
    if (cache.size() == 0) throw Error(ErrorCode::EmptyCache, "cannot reduce an empty cache");
    if (target_per_class == 0) {
        throw Error(ErrorCode::InvalidArgument, "target_per_class must be >= 1");
    }

    const std::size_t n = cache.num_classes;
    std::vector<std::vector<std::size_t>> members(n);
    for (std::size_t r = 0; r < cache.size(); ++r) members[cache.values.class_of(r)].push_back(r);

    for (std::size_t c = 0; c < n; ++c) {
        const std::size_t count = members[c].size();
        if (count < target_per_class || count % target_per_class != 0) {
            throw Error(ErrorCode::InvalidArgument,
                        "class " + std::to_string(c) + " has " + std::to_string(count) +
                            " rows, not divisible into " + std::to_string(target_per_class) +
                            " uniform groups");
        }
    }

    Rng rng(seed);
    const std::size_t dim = cache.dim();
    std::vector<double> data;
    data.reserve(n * target_per_class * dim);
    std::vector<std::uint32_t> labels;
    labels.reserve(n * target_per_class);
    std::vector<double> proto(dim);

    for (std::size_t c = 0; c < n; ++c) {
        auto& rows = members[c];
        rng.shuffle(std::span<std::size_t>(rows));
        const std::size_t group = rows.size() / target_per_class;
        for (std::size_t g = 0; g < target_per_class; ++g) {
            std::fill(proto.begin(), proto.end(), 0.0);
            for (std::size_t j = 0; j < group; ++j) {
                const auto key = cache.keys.row(rows[g * group + j]);
                for (std::size_t k = 0; k < dim; ++k) proto[k] += key[k];
            }
            for (double& v : proto) v /= static_cast<double>(group);
            const double norm = l2_norm(proto);
            if (!(norm > 0.0)) {
                throw Error(ErrorCode::InvalidArgument,
                            "group mean of class " + std::to_string(c) + " is the zero vector");
            }
            // already-unit singletons are copied so they survive bit-exact
            if (group == 1 && cache.keys.normalized()) {
                const auto key = cache.keys.row(rows[g]);
                data.insert(data.end(), key.begin(), key.end());
            } else {
                for (double v : proto) data.push_back(v / norm);
            }
            labels.push_back(static_cast<std::uint32_t>(c));
        }
    }

    CacheModel out;
    out.keys = FeatureMatrix(labels.size(), dim, std::move(data), true);
    out.values = LabelMatrix(std::move(labels), n);
    out.num_classes = n;
    out.shots = target_per_class;
    return out;
}

TrialReport reduce_trials(const CacheModel& cache, std::size_t target_per_class,
                          std::size_t trials, std::uint64_t seed, const CacheEvaluator& evaluator) {
    if (trials == 0) throw Error(ErrorCode::InvalidArgument, "trials must be >= 1");
    if (!evaluator) throw Error(ErrorCode::InvalidArgument, "no evaluator supplied");
    TrialReport report;
    double total = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
        const std::uint64_t s = seed + t;
        const double acc = evaluator(reduce_cache(cache, target_per_class, s));
        report.seeds.push_back(s);
        report.accuracies.push_back(acc);
        total += acc;
    }
    report.mean_accuracy = total / static_cast<double>(trials);
    return report;
}

CacheModel compress_shots(const FeatureMatrix& features, std::span<const std::uint32_t> labels,
                          std::size_t num_classes, std::size_t shots_per_class,
                          std::size_t cache_limit, std::uint64_t seed) {
    if (cache_limit == 0) throw Error(ErrorCode::InvalidArgument, "cache_limit must be >= 1");
    if (shots_per_class < cache_limit) {
        throw Error(ErrorCode::InvalidArgument,
                    "cache_limit " + std::to_string(cache_limit) + " exceeds shots " +
                        std::to_string(shots_per_class));
    }
    const CacheModel full = build_cache(features, labels, num_classes);
    const auto counts = full.values.class_counts();
    for (std::size_t c = 0; c < counts.size(); ++c) {
        if (counts[c] != shots_per_class) {
            throw Error(ErrorCode::InvalidArgument,
                        "class " + std::to_string(c) + " has " + std::to_string(counts[c]) +
                            " samples, expected " + std::to_string(shots_per_class));
        }
    }
    return reduce_cache(full, cache_limit, seed);
}

}  // namespace tipcache
