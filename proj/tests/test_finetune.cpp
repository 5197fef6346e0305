#include <doctest.h>

#include <cmath>
#include <numbers>
#include <numeric>

#include "tipcache/cache.hpp"
#include "tipcache/finetune.hpp"
#include "test_support.hpp"

using namespace tipcache;
using tipcache::testing::error_code_of;

namespace {

// 40-digit reference values for the 2-class identity toy, query e0, target 0.
constexpr double kToyGradKey0 = -0.6579797125263146290115734815380344157331;
constexpr double kToyGradKey1 = 0.002689012696241340116198920877947948647536;

testing::Instance toy_instance() {
    const std::uint32_t labels[] = {0, 1};
    testing::Instance inst;
    inst.cache = build_cache(testing::basis_rows(2, 2), labels, 2);
    inst.classifier = testing::basis_rows(2, 2);
    inst.query = FeatureMatrix(1, 2, {1.0, 0.0}, true);
    inst.hp = {1.0, 5.5};
    inst.target = 0;
    return inst;
}

struct OrthogonalToy {
    CacheModel cache;
    FeatureMatrix classifier;
    std::vector<std::uint32_t> labels;
};

OrthogonalToy orthogonal_toy() {
    OrthogonalToy t;
    t.labels = {0, 1, 2, 3};
    t.cache = build_cache(testing::basis_rows(4, 4), t.labels, 4);
    t.classifier = testing::basis_rows(4, 4);
    return t;
}

}  // namespace

TEST_CASE("ce_loss") {
    const double equal[] = {0.3, 0.3, 0.3, 0.3};
    CHECK(ce_loss(equal, 2) == doctest::Approx(std::log(4.0)).epsilon(1e-15));
    const double far[] = {10.0, -10.0};
    // log(1 + exp(-20))
    CHECK(ce_loss(far, 0) == doctest::Approx(2.061153620314380703e-09).epsilon(1e-9));
    const double zeros[] = {0.0, 0.0};
    CHECK(ce_loss(zeros, 1) == doctest::Approx(std::numbers::ln2).epsilon(1e-15));
    CHECK(error_code_of([&] { ce_loss(zeros, 2); }) == ErrorCode::LabelOutOfRange);
    const double huge[] = {1000.0, 0.0};
    CHECK(std::isfinite(ce_loss(huge, 1)));
}

TEST_CASE("softmax sums to one") {
    const double l[] = {1.0, 2.0, -3.0};
    const auto p = softmax(l);
    CHECK(std::accumulate(p.begin(), p.end(), 0.0) == doctest::Approx(1.0));
    CHECK(p[1] > p[0]);
}

TEST_CASE("key_gradient: toy instance against reference values and finite differences") {
    const auto inst = toy_instance();
    const auto g = key_gradient(inst.query.row(0), inst.cache, inst.classifier, inst.hp, 0);
    CHECK(g(0, 0) == doctest::Approx(kToyGradKey0).epsilon(1e-13));
    CHECK(g(0, 1) == 0.0);
    CHECK(g(1, 0) == doctest::Approx(kToyGradKey1).epsilon(1e-13));
    CHECK(g(1, 1) == 0.0);

    for (bool through_library : {true, false}) {
        const auto fd = testing::finite_difference_gradient(inst, 1e-4, through_library);
        CHECK(testing::max_relative_error(g.data(), fd.data()) < 1e-5);
    }
}

TEST_CASE("key_gradient: alpha 0 or beta 0 gives zero") {
    auto inst = toy_instance();
    inst.hp.alpha = 0.0;
    auto g = key_gradient(inst.query.row(0), inst.cache, inst.classifier, inst.hp, 0);
    for (double v : g.data()) CHECK(v == 0.0);
    inst.hp = {1.0, 0.0};
    g = key_gradient(inst.query.row(0), inst.cache, inst.classifier, inst.hp, 0);
    for (double v : g.data()) CHECK(v == 0.0);
    CHECK(error_code_of([&] {
              key_gradient(inst.query.row(0), inst.cache, inst.classifier, inst.hp, 2);
          }) == ErrorCode::LabelOutOfRange);
}

TEST_CASE("key_gradient matches central differences on random instances") {
    Rng rng(101);
    for (int i = 0; i < 100; ++i) {
        const auto inst = testing::random_instance(rng, 5, 3, 8);
        const auto g = key_gradient(inst.query.row(0), inst.cache, inst.classifier, inst.hp, inst.target);
        const auto fd = testing::finite_difference_gradient(inst, 1e-4, false);
        CHECK(testing::max_relative_error(g.data(), fd.data()) < 1e-5);
    }
}

TEST_CASE("cosine schedule endpoints") {
    CHECK(cosine_lr(1e-3, 0, 100) == 1e-3);
    CHECK(cosine_lr(1e-3, 50, 100) == doctest::Approx(5e-4));
    for (std::size_t total : {2u, 3u, 20u, 1000u}) {
        const double last = cosine_lr(1e-3, total - 1, total);
        const double expected =
            1e-3 * 0.5 * (1.0 + std::cos(std::numbers::pi * double(total - 1) / double(total)));
        CHECK(last == doctest::Approx(expected).epsilon(1e-15));
        const double bound =
            1e-3 * (1.0 - std::cos(std::numbers::pi * double(total - 1) / double(total))) / 2.0;
        CHECK(last <= bound * (1.0 + 1e-12));
    }
}

TEST_CASE("one AdamW step equals the bias-corrected update at t = 1") {
    const auto inst = toy_instance();
    FineTuneConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 1;
    const std::uint32_t labels[] = {0};
    const auto result = fine_tune(inst.cache, inst.query, labels, inst.classifier, inst.hp, cfg);
    const auto g = key_gradient(inst.query.row(0), inst.cache, inst.classifier, inst.hp, 0);

    // m_hat = g, v_hat = g^2 at t = 1
    for (std::size_t i = 0; i < g.data().size(); ++i) {
        const double k0 = inst.cache.keys.data()[i];
        const double gi = g.data()[i];
        const double expected = k0 * (1.0 - cfg.learning_rate * cfg.weight_decay) -
                                cfg.learning_rate * gi / (std::abs(gi) + cfg.epsilon);
        CHECK(std::abs(result.cache.keys.data()[i] - expected) <= 1e-6);
    }
    REQUIRE(result.log.epochs.size() == 1);
    CHECK(result.log.epochs[0].loss == doctest::Approx(0.12741604383590332655).epsilon(1e-12));
}

TEST_CASE("KeyOptimizer plain SGD applies coupled decay") {
    FineTuneConfig cfg;
    cfg.optimizer = OptimizerKind::Sgd;
    cfg.weight_decay = 0.5;
    KeyOptimizer opt(cfg, 2);
    std::vector<double> p = {1.0, -2.0};
    const double g[] = {0.5, 0.0};
    opt.step(p, g, 0.1);
    CHECK(p[0] == doctest::Approx(1.0 - 0.1 * (0.5 + 0.5)));
    CHECK(p[1] == doctest::Approx(-2.0 - 0.1 * (0.5 * -2.0)));
    std::vector<double> wrong(3);
    CHECK_THROWS_AS(opt.step(wrong, g, 0.1), Error);
}

TEST_CASE("fine_tune with a null update returns the input keys bitwise") {
    const auto t = orthogonal_toy();
    FineTuneConfig cfg;
    SUBCASE("learning rate 0") { cfg.learning_rate = 0.0; }
    SUBCASE("zero epochs") { cfg.epochs = 0; }
    const auto result = fine_tune(t.cache, t.cache.keys, t.labels, t.classifier, {1.0, 5.5}, cfg);
    CHECK(result.cache.keys == t.cache.keys);
    CHECK(result.cache.values == t.cache.values);
    CHECK(result.log.epochs.size() == cfg.epochs);
}

TEST_CASE("fine_tune on orthogonal keys converges and is deterministic") {
    const auto t = orthogonal_toy();
    const FeatureMatrix classifier_before = t.classifier;
    FineTuneConfig cfg;  // 20 epochs, batch 256, lr 1e-3, AdamW, cosine
    const auto a = fine_tune(t.cache, t.cache.keys, t.labels, t.classifier, {1.0, 5.5}, cfg);
    const auto b = fine_tune(t.cache, t.cache.keys, t.labels, t.classifier, {1.0, 5.5}, cfg);

    REQUIRE(a.log.epochs.size() == 20);
    for (std::size_t e = 0; e < a.log.epochs.size(); ++e) {
        CHECK(a.log.epochs[e].accuracy == 1.0);
        if (e > 0) CHECK(a.log.epochs[e].loss <= a.log.epochs[e - 1].loss);
    }
    CHECK(a.log.epochs.back().loss < a.log.epochs.front().loss);
    CHECK(a.log.serialize() == b.log.serialize());
    CHECK(a.log.key_checksum == b.log.key_checksum);
    CHECK(a.cache.keys == b.cache.keys);
    CHECK(a.cache.values == t.cache.values);
    CHECK(t.classifier == classifier_before);
    CHECK_FALSE(a.cache.keys.normalized());
}

TEST_CASE("fine_tune mini-batches, shuffling and options") {
    Rng rng(41);
    std::vector<std::uint32_t> labels;
    for (std::uint32_t c = 0; c < 3; ++c)
        for (int s = 0; s < 4; ++s) labels.push_back(c);
    const auto keys = testing::random_unit_rows(rng, 12, 6);
    const auto cache = build_cache(keys, labels, 3);
    const auto classifier = testing::random_unit_rows(rng, 3, 6);

    FineTuneConfig cfg;
    cfg.batch_size = 5;
    cfg.epochs = 3;
    const auto seeded = fine_tune(cache, keys, labels, classifier, {}, cfg);
    cfg.seed = 2;
    const auto other = fine_tune(cache, keys, labels, classifier, {}, cfg);
    CHECK(seeded.log.epochs.size() == 3);
    CHECK(seeded.cache.keys != other.cache.keys);

    cfg.renormalize_keys = true;
    const auto renorm = fine_tune(cache, keys, labels, classifier, {}, cfg);
    CHECK(renorm.cache.keys.normalized());

    cfg.renormalize_keys = false;
    cfg.optimizer = OptimizerKind::Sgd;
    cfg.learning_rate = 0.05;
    cfg.epochs = 10;
    const auto sgd = fine_tune(cache, keys, labels, classifier, {}, cfg);
    CHECK(sgd.log.epochs.back().loss < sgd.log.epochs.front().loss);
}

TEST_CASE("fine_tune errors") {
    const auto t = orthogonal_toy();
    FineTuneConfig cfg;
    CHECK(error_code_of([&] {
              fine_tune(t.cache, FeatureMatrix(0, 4, {}), {}, t.classifier, {}, cfg);
          }) == ErrorCode::EmptyInput);
    const std::uint32_t bad[] = {0, 1, 2, 9};
    CHECK(error_code_of([&] { fine_tune(t.cache, t.cache.keys, bad, t.classifier, {}, cfg); }) ==
          ErrorCode::LabelOutOfRange);
    cfg.batch_size = 0;
    CHECK(error_code_of([&] { fine_tune(t.cache, t.cache.keys, t.labels, t.classifier, {}, cfg); }) ==
          ErrorCode::InvalidArgument);
}

TEST_CASE("TrainLog line format") {
    TrainLog log;
    log.epochs = {{1, 0.5, 1.0}, {2, 0.25, 0.75}};
    log.key_checksum = 0xabc;
    CHECK(log.serialize() ==
          "epoch 1 loss 0.500000 acc 1.0000\n"
          "epoch 2 loss 0.250000 acc 0.7500\n"
          "checksum 0000000000000abc\n");
}
