#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <optional>

#include "tipcache/cache.hpp"
#include "tipcache/datastore.hpp"
#include "tipcache/ensemble.hpp"
#include "tipcache/finetune.hpp"
#include "tipcache/search.hpp"

namespace tipcache::cli {

namespace fs = std::filesystem;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string fixed4(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

std::vector<double> parse_grid(const std::string& text, const char* flag) {
    std::vector<double> values;
    std::size_t start = 0;
    while (start <= text.size()) {
        const std::size_t comma = std::min(text.find(',', start), text.size());
        std::string item = text.substr(start, comma - start);
        item.erase(0, item.find_first_not_of(" \t"));
        item.erase(item.find_last_not_of(" \t") + 1);
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (item.empty() || used != item.size()) {
            throw UsageError(std::string(flag) + ": cannot parse '" + item + "' as a real number");
        }
        values.push_back(v);
        start = comma + 1;
    }
    return values;
}

// Class names stored beside a cache file by `build`.
fs::path names_sidecar(const fs::path& cache_path) {
    fs::path p = cache_path;
    p += ".names";
    return p;
}

std::vector<std::string> names_for(const fs::path& cache_path, std::size_t num_classes) {
    const auto sidecar = names_sidecar(cache_path);
    if (fs::exists(sidecar)) {
        auto names = read_class_names(sidecar);
        if (names.size() == num_classes) return names;
    }
    std::vector<std::string> names(num_classes);
    for (std::size_t c = 0; c < num_classes; ++c) names[c] = "class_" + std::to_string(c);
    return names;
}

void check_label_width(const CacheModel& cache, const Dataset& data) {
    if (data.labels.num_classes != cache.num_classes) {
        throw Error(ErrorCode::DimensionMismatch,
                    "dataset has " + std::to_string(data.labels.num_classes) +
                        " classes, cache has " + std::to_string(cache.num_classes));
    }
}

void add_hyperparams(CLI::App* cmd, Hyperparams& hp) {
    cmd->add_option("--alpha", hp.alpha, "residual ratio")->capture_default_str();
    cmd->add_option("--beta", hp.beta, "sharpness ratio")->capture_default_str();
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Few-shot classification with a key-value embedding cache", "tipcache"};
    app.require_subcommand(1);
    std::function<void()> action;

    // build
    std::string features_path, labels_path, classes_path, out_path;
    auto* build = app.add_subcommand("build", "build a cache file from features and labels");
    build->add_option("--features", features_path, "TIPF feature file")->required();
    build->add_option("--labels", labels_path, "TIPL label file")->required();
    build->add_option("--classes", classes_path, "class-name list, one per line");
    build->add_option("--out", out_path, "output TIPC cache file")->required();
    build->callback([&] {
        action = [&] {
            const auto features = read_features(features_path);
            const auto labels = read_labels(labels_path);
            const auto cache = build_cache(features, labels.labels, labels.num_classes);
            std::vector<std::string> names;
            if (!classes_path.empty()) {
                names = read_class_names(classes_path);
                if (names.size() != cache.num_classes) {
                    throw Error(ErrorCode::RowMismatch,
                                std::to_string(names.size()) + " class names for " +
                                    std::to_string(cache.num_classes) + " classes");
                }
            }
            write_cache(cache, out_path);
            if (!names.empty()) write_class_names(names, names_sidecar(out_path));
            out << "cache " << cache.size() << " keys " << cache.dim() << " dims "
                << cache.num_classes << " classes " << cache.shots << " shots\n";
        };
    });

    // predict
    std::string cache_path, classifier_path, query_path;
    Hyperparams hp;
    auto* predict_cmd = app.add_subcommand("predict", "print per-class logits for query rows");
    predict_cmd->add_option("--cache", cache_path)->required();
    predict_cmd->add_option("--classifier", classifier_path)->required();
    predict_cmd->add_option("--query", query_path, "TIPF file of query rows")->required();
    add_hyperparams(predict_cmd, hp);
    predict_cmd->callback([&] {
        action = [&] {
            const auto cache = read_cache(cache_path);
            const auto classifier = read_features(classifier_path);
            const auto queries = read_features(query_path);
            const auto scores = predict_batch(queries, cache, classifier, hp);
            const auto names = names_for(cache_path, cache.num_classes);
            char buf[64];
            for (std::size_t m = 0; m < scores.rows(); ++m) {
                if (m > 0) out << '\n';
                for (std::size_t c = 0; c < scores.cols(); ++c) {
                    std::snprintf(buf, sizeof buf, "%.8g", scores(m, c));
                    out << names[c] << ' ' << buf << '\n';
                }
            }
        };
    });

    // eval
    std::string manifest_path;
    auto* eval = app.add_subcommand("eval", "top-1 accuracy on a test manifest");
    eval->add_option("--cache", cache_path)->required();
    eval->add_option("--classifier", classifier_path)->required();
    eval->add_option("--test-manifest", manifest_path)->required();
    add_hyperparams(eval, hp);
    eval->callback([&] {
        action = [&] {
            const auto cache = read_cache(cache_path);
            const auto classifier = read_features(classifier_path);
            const auto data = load_dataset(read_manifest(manifest_path));
            check_label_width(cache, data);
            const auto scores = predict_batch(data.features, cache, classifier, hp);
            out << fixed4(top1_accuracy(scores, data.labels.labels)) << '\n';
        };
    });

    // finetune
    FineTuneConfig cfg;
    std::string optimizer_name = "adamw";
    auto* finetune = app.add_subcommand("finetune", "fine-tune cache keys on a train manifest");
    finetune->add_option("--cache", cache_path)->required();
    finetune->add_option("--classifier", classifier_path)->required();
    finetune->add_option("--train-manifest", manifest_path)->required();
    finetune->add_option("--epochs", cfg.epochs)->capture_default_str();
    finetune->add_option("--lr", cfg.learning_rate)->capture_default_str();
    finetune->add_option("--batch", cfg.batch_size)->capture_default_str();
    finetune->add_option("--wd", cfg.weight_decay)->capture_default_str();
    finetune->add_option("--seed", cfg.seed)->capture_default_str();
    finetune->add_option("--optimizer", optimizer_name)
        ->check(CLI::IsMember({"adamw", "sgd"}))
        ->capture_default_str();
    finetune->add_flag("--renormalize-keys", cfg.renormalize_keys);
    finetune->add_option("--out", out_path)->required();
    add_hyperparams(finetune, hp);
    finetune->callback([&] {
        action = [&] {
            cfg.optimizer = optimizer_name == "sgd" ? OptimizerKind::Sgd : OptimizerKind::AdamW;
            const auto cache = read_cache(cache_path);
            const auto classifier = read_features(classifier_path);
            const auto data = load_dataset(read_manifest(manifest_path));
            check_label_width(cache, data);
            const auto result = fine_tune(cache, data.features, data.labels.labels, classifier, hp, cfg);
            write_cache(result.cache, out_path);
            if (fs::exists(names_sidecar(cache_path))) {
                fs::copy_file(names_sidecar(cache_path), names_sidecar(out_path),
                              fs::copy_options::overwrite_existing);
            }
            out << result.log.serialize();
        };
    });

    // search
    std::string alpha_grid, beta_grid;
    auto* search = app.add_subcommand("search", "grid search over alpha and beta");
    search->add_option("--cache", cache_path)->required();
    search->add_option("--classifier", classifier_path)->required();
    search->add_option("--val-manifest", manifest_path)->required();
    search->add_option("--alpha-grid", alpha_grid, "comma-separated alphas");
    search->add_option("--beta-grid", beta_grid, "comma-separated betas");
    search->callback([&] {
        SearchGrid grid = SearchGrid::ablation_default();
        if (!alpha_grid.empty()) grid.alphas = parse_grid(alpha_grid, "--alpha-grid");
        if (!beta_grid.empty()) grid.betas = parse_grid(beta_grid, "--beta-grid");
        action = [&, grid] {
            const auto cache = read_cache(cache_path);
            const auto classifier = read_features(classifier_path);
            const auto data = load_dataset(read_manifest(manifest_path));
            check_label_width(cache, data);
            const auto result = grid_search(cache, classifier, data.features, data.labels.labels, grid);
            out << result.serialize();
            out << "best alpha " << fixed4(result.best.alpha) << " beta " << fixed4(result.best.beta)
                << " acc " << fixed4(result.best_accuracy) << '\n';
        };
    });

    // reduce
    std::size_t size = 0, trials = 1;
    std::uint64_t seed = 1;
    auto* reduce = app.add_subcommand("reduce", "shrink a cache to prototypes per class");
    reduce->add_option("--cache", cache_path)->required();
    reduce->add_option("--size", size, "prototypes per class")->required()->check(CLI::PositiveNumber);
    reduce->add_option("--trials", trials)->check(CLI::PositiveNumber)->capture_default_str();
    reduce->add_option("--seed", seed)->capture_default_str();
    reduce->add_option("--out", out_path, "reduced cache (first trial's seed)")->required();
    reduce->add_option("--classifier", classifier_path, "with --val-manifest, report accuracy");
    reduce->add_option("--val-manifest", manifest_path);
    add_hyperparams(reduce, hp);
    reduce->callback([&] {
        if (classifier_path.empty() != manifest_path.empty()) {
            throw UsageError("--classifier and --val-manifest must be given together");
        }
        action = [&] {
            const auto cache = read_cache(cache_path);
            const auto reduced = reduce_cache(cache, size, seed);
            write_cache(reduced, out_path);
            if (fs::exists(names_sidecar(cache_path))) {
                fs::copy_file(names_sidecar(cache_path), names_sidecar(out_path),
                              fs::copy_options::overwrite_existing);
            }
            if (classifier_path.empty()) {
                for (std::size_t t = 0; t < trials; ++t) {
                    const auto r = t == 0 ? reduced : reduce_cache(cache, size, seed + t);
                    out << "trial " << t << " seed " << seed + t << " rows " << r.size()
                        << " checksum " << std::hex << checksum(r.keys) << std::dec << '\n';
                }
                return;
            }
            const auto classifier = read_features(classifier_path);
            const auto data = load_dataset(read_manifest(manifest_path));
            check_label_width(cache, data);
            const auto report = reduce_trials(cache, size, trials, seed, [&](const CacheModel& c) {
                return top1_accuracy(predict_batch(data.features, c, classifier, hp), data.labels.labels);
            });
            for (std::size_t t = 0; t < report.seeds.size(); ++t) {
                out << "trial " << t << " seed " << report.seeds[t] << " rows "
                    << size * cache.num_classes << " acc " << fixed4(report.accuracies[t]) << '\n';
            }
            out << "mean acc " << fixed4(report.mean_accuracy) << '\n';
        };
    });

    // ensemble
    std::vector<std::string> template_paths;
    auto* ensemble = app.add_subcommand("ensemble", "average per-template text embeddings");
    ensemble->add_option("--text-embeddings", template_paths, "one N x C TIPF file per template")
        ->required();
    ensemble->add_option("--out", out_path, "classifier TIPF file")->required();
    ensemble->callback([&] {
        action = [&] {
            std::vector<FeatureMatrix> blocks;
            for (const auto& p : template_paths) blocks.push_back(read_features(p));
            const auto classifier = ensemble_classifier(blocks);
            write_features(classifier, out_path);
            out << "classifier " << classifier.rows() << " classes " << classifier.cols() << " dims\n";
        };
    });

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    } catch (const UsageError& e) {
        err << "tipcache: " << e.what() << '\n';
        return kExitUsage;
    }

    try {
        if (action) action();
    } catch (const Error& e) {
        err << "tipcache: " << e.what() << '\n';
        return kExitData;
    } catch (const std::exception& e) {
        err << "tipcache: " << e.what() << '\n';
        return kExitData;
    }
    return kExitOk;
}

}  // namespace tipcache::cli
