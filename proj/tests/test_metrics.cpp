#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "unlearn/metrics.hpp"
#include "unlearn/synthdata.hpp"

using namespace unlearn;

namespace {

// Independent oracle: mean over all positive-negative pairs with half credit
// for ties.
double pairwise_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    double wins = 0.0;
    std::int64_t pairs = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            ++pairs;
            if (scores[i] > scores[j]) {
                wins += 1.0;
            } else if (scores[i] == scores[j]) {
                wins += 0.5;
            }
        }
    }
    return wins / static_cast<double>(pairs);
}

} // namespace

TEST_CASE("roc_auc hand cases") {
    CHECK(roc_auc({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}).auc == 1.0);
    CHECK(roc_auc({0.4, 0.4, 0.4, 0.4}, {1, 0, 1, 0}).auc == 0.5);
    CHECK(roc_auc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}).auc == 0.75);
    CHECK_THROWS_AS(roc_auc({0.2, 0.3}, {1, 1}), ContractError);
}

TEST_CASE("trapezoidal auc equals the pairwise statistic on tie-heavy data") {
    Rng rng(77);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 2 + rng.uniform_int(49);
        std::vector<double> scores(static_cast<std::size_t>(n));
        std::vector<int> labels(static_cast<std::size_t>(n));
        bool pos = false, neg = false;
        for (int i = 0; i < n; ++i) {
            scores[static_cast<std::size_t>(i)] = rng.uniform_int(8) / 7.0; // deliberate ties
            labels[static_cast<std::size_t>(i)] = rng.bernoulli(0.5) ? 1 : 0;
        }
        for (int y : labels) (y == 1 ? pos : neg) = true;
        if (!pos) labels[0] = 1;
        if (!neg) labels[1] = 0;
        const RocCurve roc = roc_auc(scores, labels);
        CHECK(std::abs(roc.auc - pairwise_auc(scores, labels)) <= 1e-12);

        // Negation symmetry.
        std::vector<double> neg_scores(scores);
        for (double& s : neg_scores) s = -s;
        CHECK(std::abs(roc.auc + roc_auc(neg_scores, labels).auc - 1.0) <= 1e-15);

        // Curve shape invariants.
        CHECK(roc.fpr.front() == 0.0);
        CHECK(roc.tpr.front() == 0.0);
        CHECK(roc.fpr.back() == 1.0);
        CHECK(roc.tpr.back() == 1.0);
        for (std::size_t i = 1; i < roc.fpr.size(); ++i) {
            CHECK(roc.fpr[i] >= roc.fpr[i - 1]);
            CHECK(roc.tpr[i] >= roc.tpr[i - 1]);
            CHECK(roc.thresholds[i] <= roc.thresholds[i - 1]);
        }
    }
}

TEST_CASE("sensitivity and specificity at a threshold") {
    auto perfect = sensitivity_specificity({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}, 0.5);
    CHECK(perfect.first == 1.0);
    CHECK(perfect.second == 1.0);

    auto all_positive = sensitivity_specificity({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}, 0.0);
    CHECK(all_positive.first == 1.0);

    auto mixed = sensitivity_specificity({0.6, 0.4, 0.7, 0.2}, {1, 1, 0, 0}, 0.5);
    CHECK(mixed.first == 0.5);
    CHECK(mixed.second == 0.5);
}

TEST_CASE("accuracy at a threshold") {
    CHECK(accuracy({0.9, 0.1}, {1, 0}) == 1.0);
    CHECK(accuracy({0.4, 0.6}, {1, 0}) == 0.0);

    // Monte Carlo: random scores against balanced random labels sit at 1/2.
    Rng rng(81);
    std::vector<double> scores(10000);
    std::vector<int> labels(10000);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        scores[i] = rng.uniform();
        labels[i] = rng.bernoulli(0.5) ? 1 : 0;
    }
    CHECK(accuracy(scores, labels) == doctest::Approx(0.5).epsilon(0.04));
}

TEST_CASE("tta_predict averages flip scores deterministically") {
    BundleConfig cfg;
    ModelBundle bundle(cfg, 5);

    SUBCASE("flip-invariant input makes TTA equal the single pass") {
        Tensor flat_image = Tensor::full({3, 32, 32}, 0.37);
        Tensor batch({1, 3, 32, 32}, flat_image.values());
        const Tensor logits = bundle.forward(batch).primary_logits;
        const double a = logits.values()[0], b = logits.values()[1];
        const double plain = std::exp(b) / (std::exp(a) + std::exp(b));
        const double tta = tta_predict(bundle, flat_image, 8, 99);
        CHECK(tta == doctest::Approx(plain).epsilon(1e-12));
    }

    SUBCASE("n_aug = 1 with an identity draw equals the plain forward") {
        std::uint64_t seed = 0;
        for (;; ++seed) {
            Rng rng(seed);
            const bool h = rng.bernoulli(0.5), v = rng.bernoulli(0.5);
            if (!h && !v) break;
        }
        DatasetRecipe rec;
        rec.n_samples = 1;
        rec.seed = 13;
        const Tensor image = generate(rec).samples[0].image;
        Tensor batch({1, 3, 32, 32}, image.values());
        const Tensor logits = bundle.forward(batch).primary_logits;
        const double a = logits.values()[0], b = logits.values()[1];
        const double m = std::max(a, b);
        const double plain = std::exp(b - m) / (std::exp(a - m) + std::exp(b - m));
        CHECK(tta_predict(bundle, image, 1, seed) == plain);
    }

    SUBCASE("TTA is the arithmetic mean of the individual flip scores") {
        DatasetRecipe rec;
        rec.n_samples = 1;
        rec.seed = 14;
        const Tensor image = generate(rec).samples[0].image;
        const std::uint64_t seed = 4242;
        Rng rng(seed);
        double total = 0.0;
        for (int i = 0; i < 8; ++i) {
            const bool h = rng.bernoulli(0.5), v = rng.bernoulli(0.5);
            Tensor flipped = flip_image(image, h, v);
            Tensor batch({1, 3, 32, 32}, flipped.values());
            const Tensor logits = bundle.forward(batch).primary_logits;
            const double a = logits.values()[0], b = logits.values()[1];
            const double m = std::max(a, b);
            total += std::exp(b - m) / (std::exp(a - m) + std::exp(b - m));
        }
        CHECK(tta_predict(bundle, image, 8, seed) == total / 8.0);

        // Determinism across calls.
        CHECK(tta_predict(bundle, image, 8, seed) == tta_predict(bundle, image, 8, seed));
    }
}

TEST_CASE("saliency maps: zero-gradient model, normalization, logit-shift invariance") {
    DatasetRecipe rec;
    rec.n_samples = 2;
    rec.seed = 19;
    Dataset ds = generate(rec);

    {
        BundleConfig cfg;
        ModelBundle constant(cfg, 3);
        constant.primary_head().weight.values().setZero();
        const Tensor map = saliency_map(constant, ds.samples[0].image, 1);
        CHECK(map.shape() == Shape{32, 32});
        CHECK(map.values().maxCoeff() == 0.0);
    }
    {
        BundleConfig cfg;
        ModelBundle bundle(cfg, 4);
        const Tensor map = saliency_map(bundle, ds.samples[0].image, 0);
        CHECK(map.values().minCoeff() >= 0.0);
        CHECK(map.values().maxCoeff() <= 1.0);
        CHECK(map.values().maxCoeff() == 1.0); // max-normalized

        Tensor before = saliency_map(bundle, ds.samples[1].image, 1);
        bundle.primary_head().bias.values() += 13.5; // shifts every logit equally
        Tensor after = saliency_map(bundle, ds.samples[1].image, 1);
        for (Eigen::Index i = 0; i < before.size(); ++i) {
            CHECK(after.values()[i] == doctest::Approx(before.values()[i]).epsilon(1e-9));
        }
    }
}

TEST_CASE("seed aggregation") {
    SeedAggregate one = aggregate_seeds({0.9});
    CHECK(one.mean == 0.9);
    CHECK(one.stddev == 0.0);

    SeedAggregate two = aggregate_seeds({0.8, 1.0});
    CHECK(two.mean == doctest::Approx(0.9).epsilon(1e-15));
    CHECK(two.stddev == doctest::Approx(0.1).epsilon(1e-12));

    SeedAggregate fwd = aggregate_seeds({0.1, 0.5, 0.9, 0.3});
    SeedAggregate perm = aggregate_seeds({0.9, 0.3, 0.5, 0.1});
    CHECK(fwd.mean == perm.mean);
    CHECK(fwd.stddev == doctest::Approx(perm.stddev).epsilon(1e-15));

    CHECK_THROWS_AS(aggregate_seeds({}), ContractError);
}
