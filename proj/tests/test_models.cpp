#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>

#include "support/gradcheck.hpp"
#include "unlearn/models.hpp"

using namespace unlearn;
using testsupport::random_leaf;

namespace {

Tensor random_batch(int batch, int channels, int size, unsigned seed) {
    Rng rng(seed);
    Eigen::ArrayXd v(static_cast<Eigen::Index>(batch) * channels * size * size);
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.uniform();
    return Tensor({batch, channels, size, size}, std::move(v));
}

} // namespace

TEST_CASE("baseline bundle: empty aux logits, primary shape, feature shape") {
    BundleConfig cfg;
    ModelBundle bundle(cfg, 1);
    Tensor batch = random_batch(3, 3, 32, 5);
    ForwardResult out = bundle.forward(batch);
    CHECK(out.aux_logits.empty());
    CHECK(out.primary_logits.shape() == Shape{3, 2});
    CHECK(out.features.shape() == Shape{3, 64});
}

TEST_CASE("reversal affects only the backward pass of forward()") {
    BundleConfig cfg;
    cfg.aux_heads = {{Method::LNTL, BiasAxis::Marking, 2}};
    ModelBundle bundle(cfg, 2);
    Tensor batch = random_batch(2, 3, 32, 6);

    ForwardResult with = bundle.forward(batch, 3.7);
    ForwardResult without = bundle.forward(batch, 0.0);
    for (Eigen::Index i = 0; i < with.primary_logits.size(); ++i) {
        CHECK(with.primary_logits.values()[i] == without.primary_logits.values()[i]);
    }
    // Aux logits equal the head applied directly to the raw features.
    Tensor direct = bundle.aux_heads()[0].layer.forward(with.features);
    for (Eigen::Index i = 0; i < direct.size(); ++i) {
        CHECK(with.aux_logits[0].values()[i] == direct.values()[i]);
    }
}

TEST_CASE("two heads get their own class counts") {
    BundleConfig cfg;
    cfg.aux_heads = {{Method::TABE, BiasAxis::Instrument, 8}, {Method::LNTL, BiasAxis::Ruler, 2}};
    ModelBundle bundle(cfg, 3);
    Tensor batch = random_batch(4, 3, 32, 7);
    ForwardResult out = bundle.forward(batch);
    REQUIRE(out.aux_logits.size() == 2);
    CHECK(out.aux_logits[0].shape() == Shape{4, 8});
    CHECK(out.aux_logits[1].shape() == Shape{4, 2});
}

TEST_CASE("adding an aux head does not disturb primary predictions at init") {
    BundleConfig plain_cfg;
    ModelBundle plain(plain_cfg, 42);

    BundleConfig aux_cfg;
    aux_cfg.aux_heads = {{Method::CLGR, BiasAxis::Marking, 2}};
    ModelBundle with_aux(aux_cfg, 42);

    Tensor batch = random_batch(2, 3, 32, 8);
    ForwardResult a = plain.forward(batch);
    ForwardResult b = with_aux.forward(batch);
    for (Eigen::Index i = 0; i < a.primary_logits.size(); ++i) {
        CHECK(a.primary_logits.values()[i] == b.primary_logits.values()[i]);
    }
}

TEST_CASE("feature sharing: extractor perturbations reach all heads, head ones stay local") {
    BundleConfig cfg;
    cfg.aux_heads = {{Method::TABE, BiasAxis::Ruler, 2}};
    ModelBundle bundle(cfg, 9);
    Tensor batch = random_batch(2, 3, 32, 9);

    ForwardResult base = bundle.forward(batch);
    const double primary0 = base.primary_logits.values()[0];
    const double aux0 = base.aux_logits[0].values()[0];

    bundle.extractor_parameters()[0].values()[0] += 0.5;
    ForwardResult bumped = bundle.forward(batch);
    CHECK(bumped.primary_logits.values()[0] != primary0);
    CHECK(bumped.aux_logits[0].values()[0] != aux0);

    const double primary1 = bumped.primary_logits.values()[0];
    bundle.aux_heads()[0].layer.weight.values()[0] += 0.5;
    ForwardResult head_bumped = bundle.forward(batch);
    CHECK(head_bumped.primary_logits.values()[0] == primary1);
    CHECK(head_bumped.aux_logits[0].values()[0] != bumped.aux_logits[0].values()[0]);
}

TEST_CASE("input shape mismatches are rejected") {
    ModelBundle bundle(BundleConfig{}, 4);
    CHECK_THROWS_AS(bundle.forward(random_batch(1, 3, 16, 3)), DimensionError);
    CHECK_THROWS_AS(bundle.forward(Tensor::zeros({3, 32, 32})), DimensionError);
}

TEST_CASE("save/load round-trips parameters bit for bit") {
    BundleConfig cfg;
    cfg.aux_heads = {{Method::LNTL, BiasAxis::Instrument, 8}, {Method::TABE, BiasAxis::Marking, 2}};
    ModelBundle bundle(cfg, 77);

    const auto path = std::filesystem::temp_directory_path() / "unlearn_test_bundle.bin";
    bundle.save(path);
    ModelBundle loaded = ModelBundle::load(path);
    std::filesystem::remove(path);

    REQUIRE(loaded.config().aux_heads.size() == 2);
    CHECK(loaded.config().aux_heads[0].method == Method::LNTL);
    CHECK(loaded.config().aux_heads[1].axis == BiasAxis::Marking);

    const auto a = bundle.named_parameters();
    const auto b = loaded.named_parameters();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].first == b[i].first);
        REQUIRE(a[i].second.shape() == b[i].second.shape());
        for (Eigen::Index j = 0; j < a[i].second.size(); ++j) {
            CHECK(a[i].second.values()[j] == b[i].second.values()[j]);
        }
    }

    Tensor batch = random_batch(2, 3, 32, 10);
    ForwardResult fa = bundle.forward(batch);
    ForwardResult fb = loaded.forward(batch);
    for (Eigen::Index i = 0; i < fa.primary_logits.size(); ++i) {
        CHECK(fa.primary_logits.values()[i] == fb.primary_logits.values()[i]);
    }
}
