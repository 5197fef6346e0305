#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "tipcache/cache.hpp"
#include "test_support.hpp"

using namespace tipcache;
using tipcache::testing::error_code_of;

namespace {

// exp(-5.5), 40-digit arbitrary-precision evaluation
constexpr double kExpMinus55 = 0.004086771438464066993464702684720768408391;

struct Toy {
    CacheModel cache;
    FeatureMatrix classifier;
};

Toy toy() {
    const std::uint32_t labels[] = {0, 1};
    return {build_cache(testing::basis_rows(2, 2), labels, 2), testing::basis_rows(2, 2)};
}

}  // namespace

TEST_CASE("build_cache: identity instance") {
    const auto t = toy();
    CHECK(t.cache.keys == testing::basis_rows(2, 2));
    CHECK(t.cache.values == LabelMatrix::identity(2));
    CHECK(t.cache.num_classes == 2);
    CHECK(t.cache.shots == 1);
}

TEST_CASE("build_cache: contract violations") {
    const std::uint32_t bad[] = {0, 5};
    CHECK(error_code_of([&] { build_cache(testing::basis_rows(2, 2), bad, 3); }) ==
          ErrorCode::LabelOutOfRange);
    const std::uint32_t one[] = {0};
    CHECK(error_code_of([&] { build_cache(testing::basis_rows(2, 2), one, 2); }) ==
          ErrorCode::DimensionMismatch);
    const std::uint32_t two[] = {0, 1};
    CHECK(error_code_of([&] { build_cache(FeatureMatrix(2, 2, {1, 0, 0, 1.1}), two, 2); }) ==
          ErrorCode::NotNormalized);
}

TEST_CASE("build_cache: 16-shot 1000-class shapes") {
    const std::size_t n = 1000, k = 16, c = 1024;
    auto keys = FeatureMatrix::zeros(n * k, c);
    auto d = keys.mutable_data();
    std::vector<std::uint32_t> labels(n * k);
    for (std::size_t r = 0; r < n * k; ++r) {
        d[r * c + r % c] = 1.0;
        labels[r] = static_cast<std::uint32_t>(r / k);
    }
    const auto cache = build_cache(keys, labels, n);
    CHECK(cache.keys.rows() == 16000);
    CHECK(cache.keys.cols() == 1024);
    CHECK(cache.values.rows() == 16000);
    CHECK(cache.values.classes() == 1000);
    CHECK(cache.shots == 16);
}

TEST_CASE("build_cache: non-uniform class sizes are kept with shots 0") {
    const std::uint32_t labels[] = {0, 0, 1};
    const auto cache = build_cache(testing::basis_rows(3, 3), labels, 2);
    CHECK(cache.shots == 0);
    CHECK(cache.values.class_counts() == std::vector<std::size_t>{2, 1});
}

TEST_CASE("activation_phi") {
    CHECK(activation_phi(1.0, 5.5) == 1.0);
    CHECK(activation_phi(0.0, 0.0) == 1.0);
    CHECK(activation_phi(0.0, 5.5) == doctest::Approx(kExpMinus55).epsilon(1e-14));
}

TEST_CASE("activation_phi is strictly increasing for beta > 0") {
    Rng rng(11);
    for (int i = 0; i < 1000; ++i) {
        const double beta = 0.01 + 20.0 * rng.uniform();
        double x1 = rng.uniform(), x2 = rng.uniform();
        if (x1 == x2) continue;
        if (x1 > x2) std::swap(x1, x2);
        CHECK(activation_phi(x1, beta) < activation_phi(x2, beta));
        CHECK(activation_phi(1.0, beta) == 1.0);
    }
}

TEST_CASE("compute_affinities") {
    const auto keys = testing::basis_rows(2, 2);
    const double q[] = {1.0, 0.0};
    auto a = compute_affinities(q, keys, 5.5);
    CHECK(a[0] == 1.0);
    CHECK(a[1] == doctest::Approx(kExpMinus55).epsilon(1e-14));
    a = compute_affinities(q, keys, 0.0);
    CHECK(a[0] == 1.0);
    CHECK(a[1] == 1.0);
    const double bad[] = {1.0, 0.0, 0.0};
    CHECK(error_code_of([&] { compute_affinities(bad, keys, 1.0); }) == ErrorCode::DimensionMismatch);
}

TEST_CASE("similarity is clamped only for normalized keys") {
    // a key that rounds slightly above unit norm
    const double q[] = {1.0, 0.0};
    const FeatureMatrix flagged(1, 2, {1.0 + 5e-5, 0.0}, true);
    CHECK(compute_affinities(q, flagged, 5.5)[0] == 1.0);
    FeatureMatrix raw = flagged;
    raw.clear_normalized();
    CHECK(compute_affinities(q, raw, 5.5)[0] > 1.0);
}

TEST_CASE("predict: toy instance") {
    const auto t = toy();
    const double q[] = {1.0, 0.0};
    const auto logits = predict(q, t.cache, t.classifier, {1.0, 5.5});
    CHECK(logits[0] == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(logits[1] == doctest::Approx(kExpMinus55).epsilon(1e-14));
    CHECK(argmax(logits) == 0);

    const auto mm = predict_multimodal(q, t.cache, t.classifier, {1.0, 5.5});
    CHECK(mm[0] == logits[0]);
    CHECK(mm[1] == logits[1]);
}

TEST_CASE("predict: alpha 0 is the zero-shot classifier") {
    Rng rng(5);
    for (int i = 0; i < 50; ++i) {
        auto inst = testing::random_instance(rng, 6, 3, 10);
        inst.hp.alpha = 0.0;
        const auto logits = predict(inst.query, inst.cache, inst.classifier, inst.hp);
        const auto mm = predict_multimodal(inst.query.row(0), inst.cache, inst.classifier, inst.hp);
        for (std::size_t c = 0; c < logits.size(); ++c) {
            const double zs = dot(inst.query.row(0), inst.classifier.row(c));
            CHECK(std::abs(logits[c] - zs) <= 1e-7);
            CHECK(std::abs(mm[c] - zs) <= 1e-7);
        }
    }
}

TEST_CASE("predict: dimension errors and empty cache") {
    const auto t = toy();
    const double q3[] = {1.0, 0.0, 0.0};
    CHECK(error_code_of([&] { predict(q3, t.cache, t.classifier, {}); }) == ErrorCode::DimensionMismatch);
    const double q[] = {1.0, 0.0};
    CHECK(error_code_of([&] { predict(q, t.cache, testing::basis_rows(3, 2), {}); }) ==
          ErrorCode::DimensionMismatch);
    CacheModel empty;
    empty.keys = FeatureMatrix(0, 2, {});
    empty.values = LabelMatrix({}, 2);
    empty.num_classes = 2;
    CHECK(error_code_of([&] { predict_multimodal(q, empty, t.classifier, {}); }) == ErrorCode::EmptyCache);
    CHECK(error_code_of([&] { predict(q, t.cache, t.classifier, {-1.0, 1.0}); }) ==
          ErrorCode::InvalidArgument);
}

TEST_CASE("predict_batch") {
    const auto t = toy();
    SUBCASE("unit basis queries") {
        const auto scores = predict_batch(testing::basis_rows(2, 2), t.cache, t.classifier, {1.0, 5.5});
        REQUIRE(scores.rows() == 2);
        CHECK(scores(0, 0) == doctest::Approx(2.0));
        CHECK(scores(0, 1) == doctest::Approx(kExpMinus55).epsilon(1e-14));
        CHECK(scores(1, 0) == doctest::Approx(kExpMinus55).epsilon(1e-14));
        CHECK(scores(1, 1) == doctest::Approx(2.0));
    }
    SUBCASE("empty batch") {
        const auto scores = predict_batch(FeatureMatrix(0, 2, {}), t.cache, t.classifier, {});
        CHECK(scores.rows() == 0);
        CHECK(scores.cols() == 2);
    }
    SUBCASE("rows are bitwise equal to single predictions, including threaded batches") {
        Rng rng(17);
        auto inst = testing::random_instance(rng, 5, 3, 8);
        const auto queries = testing::random_unit_rows(rng, 1000, inst.cache.dim());
        const auto scores = predict_batch(queries, inst.cache, inst.classifier, inst.hp);
        for (std::size_t m = 0; m < queries.rows(); ++m) {
            const auto single = predict(queries.row(m), inst.cache, inst.classifier, inst.hp);
            REQUIRE(std::equal(single.begin(), single.end(), scores.row(m).begin()));
        }
    }
}

TEST_CASE("permuting cache rows jointly changes logits only by reassociation") {
    Rng rng(23);
    for (int i = 0; i < 100; ++i) {
        const auto inst = testing::random_instance(rng, 6, 4, 12);
        std::vector<std::size_t> perm(inst.cache.size());
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        rng.shuffle(std::span<std::size_t>(perm));
        std::vector<std::uint32_t> labels;
        for (auto p : perm) labels.push_back(inst.cache.values.class_of(p));
        const auto permuted = build_cache(inst.cache.keys.select_rows(perm), labels, inst.cache.num_classes);
        const auto a = predict(inst.query, inst.cache, inst.classifier, inst.hp);
        const auto b = predict(inst.query, permuted, inst.classifier, inst.hp);
        for (std::size_t c = 0; c < a.size(); ++c) CHECK(std::abs(a[c] - b[c]) <= 1e-5);
    }
}

TEST_CASE("scaling alpha scales only the cache term") {
    Rng rng(29);
    for (int i = 0; i < 100; ++i) {
        auto inst = testing::random_instance(rng, 6, 3, 8);
        inst.hp.alpha = 1.0;
        Hyperparams zero = inst.hp, scaled = inst.hp;
        zero.alpha = 0.0;
        scaled.alpha = 2.5;
        const auto base = predict(inst.query, inst.cache, inst.classifier, inst.hp);
        const auto zs = predict(inst.query, inst.cache, inst.classifier, zero);
        const auto big = predict(inst.query, inst.cache, inst.classifier, scaled);
        for (std::size_t c = 0; c < base.size(); ++c) {
            const double term = base[c] - zs[c];
            CHECK((big[c] - zs[c]) == doctest::Approx(2.5 * term).epsilon(1e-12));
        }
    }
}

TEST_CASE("exact match dominates the cache term on orthogonal caches") {
    Rng rng(31);
    for (std::size_t n : {2u, 5u, 16u, 40u}) {
        std::vector<std::uint32_t> labels(n);
        std::iota(labels.begin(), labels.end(), 0u);
        const auto cache = build_cache(testing::basis_rows(n, n), labels, n);
        const auto zero_classifier = FeatureMatrix::zeros(n, n);
        const Hyperparams hp{1.0, 5.5};
        const std::size_t c = rng.uniform_index(n);
        const auto logits = predict(cache.keys.row(c), cache, zero_classifier, hp);
        // orthogonal keys: delta = 1
        const double margin = hp.alpha * (1.0 - static_cast<double>(n - 1) * std::exp(-hp.beta));
        for (std::size_t j = 0; j < n; ++j) {
            if (j != c) CHECK(logits[c] - logits[j] >= margin - 1e-12);
        }
    }
}

TEST_CASE("top1_accuracy") {
    const auto t = toy();
    const auto scores = predict_batch(testing::basis_rows(2, 2), t.cache, t.classifier, {});
    const std::uint32_t right[] = {0, 1};
    const std::uint32_t half[] = {0, 0};
    CHECK(top1_accuracy(scores, right) == 1.0);
    CHECK(top1_accuracy(scores, half) == 0.5);
    const std::uint32_t short_labels[] = {0};
    CHECK_THROWS_AS(top1_accuracy(scores, short_labels), Error);
}
