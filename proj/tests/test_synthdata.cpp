#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "unlearn/synthdata.hpp"

using namespace unlearn;

namespace {

double empirical_correlation(const std::vector<int>& a, const std::vector<int>& b) {
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double cov = 0, va = 0, vb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        cov += (a[i] - ma) * (b[i] - mb);
        va += (a[i] - ma) * (a[i] - ma);
        vb += (b[i] - mb) * (b[i] - mb);
    }
    return cov / std::sqrt(va * vb);
}

bool same_images(const Tensor& x, const Tensor& y) {
    if (x.shape() != y.shape()) return false;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        if (x.values()[i] != y.values()[i]) return false;
    }
    return true;
}

} // namespace

TEST_CASE("generation is deterministic and respects ranges") {
    DatasetRecipe rec;
    rec.n_samples = 40;
    rec.seed = 11;
    Dataset a = generate(rec);
    Dataset b = generate(rec);
    REQUIRE(a.size() == 40);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(same_images(a.samples[i].image, b.samples[i].image));
        CHECK(a.samples[i].label == b.samples[i].label);
        CHECK(a.samples[i].marking == b.samples[i].marking);
        CHECK(a.samples[i].instrument == b.samples[i].instrument);
        CHECK(a.samples[i].image.values().minCoeff() >= 0.0);
        CHECK(a.samples[i].image.values().maxCoeff() <= 1.0);
    }
}

TEST_CASE("artefact-label coupling across the correlation range") {
    SUBCASE("rho = 0 gives near-zero empirical correlation over 10^4 samples") {
        DatasetRecipe rec;
        rec.n_samples = 10000;
        rec.marking_correlation = 0.0;
        rec.seed = 3;
        Dataset ds = generate(rec);
        CHECK(std::abs(empirical_correlation(ds.bias_labels(BiasAxis::Marking), ds.labels())) < 0.05);

        // Class balance rides along on the same large sample.
        double malignant = 0;
        for (const Sample& s : ds.samples) malignant += s.label;
        CHECK(malignant / static_cast<double>(ds.size()) == doctest::Approx(0.5).epsilon(0.04));
    }
    SUBCASE("rho = 1 couples artefact and label exactly") {
        DatasetRecipe rec;
        rec.n_samples = 2000;
        rec.ruler_correlation = 1.0;
        rec.seed = 4;
        Dataset ds = generate(rec);
        for (const Sample& s : ds.samples) CHECK(s.ruler == s.label);
    }
    SUBCASE("invalid rate/correlation pairs are rejected") {
        DatasetRecipe rec;
        rec.marking_rate = 0.1;
        rec.marking_correlation = 1.0;
        CHECK_THROWS_AS(generate(rec), ContractError);
    }
}

TEST_CASE("skew removes marked benigns and duplicates marked malignants") {
    DatasetRecipe rec;
    rec.n_samples = 60;
    rec.marking_rate = 0.5;
    rec.seed = 21;
    Dataset ds = generate(rec);

    int marked_malignant = 0, marked_benign = 0;
    for (const Sample& s : ds.samples) {
        if (s.marking == 1) (s.label == 1 ? marked_malignant : marked_benign)++;
    }
    REQUIRE(marked_malignant > 0);
    REQUIRE(marked_benign > 0);

    SUBCASE("d = 0 performs only the removal") {
        Dataset out = skew(ds, BiasAxis::Marking, 0, 5);
        CHECK(out.size() == ds.size() - static_cast<std::size_t>(marked_benign));
        for (const Sample& s : out.samples) {
            const bool marked_benign = s.label == 0 && s.marking == 1;
            CHECK_FALSE(marked_benign);
        }
    }
    SUBCASE("each marked malignant appears d+1 times") {
        Dataset out = skew(ds, BiasAxis::Marking, 20, 5);
        int got = 0;
        for (const Sample& s : out.samples) {
            if (s.label == 1 && s.marking == 1) ++got;
        }
        CHECK(got == marked_malignant * 21);
    }
    SUBCASE("removal clause is idempotent") {
        Dataset once = skew(ds, BiasAxis::Marking, 0, 5);
        Dataset twice = skew(once, BiasAxis::Marking, 0, 5);
        REQUIRE(once.size() == twice.size());
        for (std::size_t i = 0; i < once.size(); ++i) {
            CHECK(same_images(once.samples[i].image, twice.samples[i].image));
        }
    }
}

TEST_CASE("paired test sets share lesions and differ by the stamp") {
    DatasetRecipe rec;
    rec.n_samples = 30;
    rec.seed = 8;
    auto [plain, marked] = generate_paired_test(rec, BiasAxis::Marking);
    REQUIRE(plain.size() == 30);
    REQUIRE(marked.size() == 30);
    int differing = 0;
    for (std::size_t i = 0; i < plain.size(); ++i) {
        CHECK(plain.samples[i].marking == 0);
        CHECK(plain.samples[i].ruler == 0);
        CHECK(marked.samples[i].marking == 1);
        CHECK(plain.samples[i].label == marked.samples[i].label);
        if (!same_images(plain.samples[i].image, marked.samples[i].image)) ++differing;
    }
    CHECK(differing == 30);
}

TEST_CASE("instrument proxy labels order by frequency and drop rare classes") {
    {
        std::vector<std::pair<int, int>> dims(25, {600, 450});
        auto [labels, kept] = instrument_proxy_labels(dims, 5);
        for (std::size_t i = 0; i < dims.size(); ++i) {
            CHECK(labels[i] == 0);
            CHECK(kept[i]);
        }
    }
    {
        std::vector<std::pair<int, int>> dims;
        for (int i = 0; i < 100; ++i) dims.push_back({640, 480});
        for (int i = 0; i < 50; ++i) dims.push_back({1024, 768});
        dims.push_back({99, 99});
        auto [labels, kept] = instrument_proxy_labels(dims, 5);
        CHECK(labels[0] == 0);
        CHECK(labels[100] == 1);
        CHECK(labels[150] == -1);
        CHECK_FALSE(kept[150]);
        CHECK(kept[0]);
    }
    {
        // Kept fraction is monotone in the threshold.
        std::vector<std::pair<int, int>> dims;
        for (int i = 0; i < 60; ++i) dims.push_back({i % 6, 10});
        for (int i = 0; i < 3; ++i) dims.push_back({100 + i, 1});
        auto count_kept = [&](int min_count) {
            auto [labels, kept] = instrument_proxy_labels(dims, min_count);
            return std::count(kept.begin(), kept.end(), true);
        };
        CHECK(count_kept(1) >= count_kept(5));
        CHECK(count_kept(5) >= count_kept(20));
    }
}

TEST_CASE("colour-threshold labeller agrees with generator ground truth") {
    Tensor gray = Tensor::full({3, 32, 32}, 0.5);
    CHECK(colour_threshold_label(gray, BiasAxis::Marking) == 0);
    CHECK(colour_threshold_label(gray, BiasAxis::Ruler) == 0);

    DatasetRecipe rec;
    rec.n_samples = 1000;
    rec.marking_rate = 0.5;
    rec.ruler_rate = 0.5;
    rec.seed = 33;
    Dataset ds = generate(rec);
    int marking_agree = 0, ruler_agree = 0;
    for (const Sample& s : ds.samples) {
        marking_agree += colour_threshold_label(s.image, BiasAxis::Marking) == s.marking;
        ruler_agree += colour_threshold_label(s.image, BiasAxis::Ruler) == s.ruler;
    }
    CHECK(marking_agree >= 950);
    CHECK(ruler_agree >= 950);
}

TEST_CASE("class weights are inverse frequencies with a degenerate-class fallback") {
    {
        std::vector<int> labels(100);
        for (int i = 0; i < 100; ++i) labels[static_cast<std::size_t>(i)] = i < 50 ? 0 : 1;
        ClassWeights w = class_weights(labels, 2);
        CHECK(w.weights[0] == doctest::Approx(0.02).epsilon(1e-15));
        CHECK(w.weights[1] == doctest::Approx(0.02).epsilon(1e-15));
        CHECK_FALSE(w.has_absent_class);
    }
    {
        std::vector<int> labels(100);
        for (int i = 0; i < 100; ++i) labels[static_cast<std::size_t>(i)] = i < 90 ? 0 : 1;
        ClassWeights w = class_weights(labels, 2);
        CHECK(w.weights[0] == doctest::Approx(1.0 / 90.0).epsilon(1e-15));
        CHECK(w.weights[1] == doctest::Approx(0.1).epsilon(1e-15));
    }
    {
        std::vector<int> labels(100, 0);
        ClassWeights w = class_weights(labels, 2);
        CHECK(w.weights[0] == doctest::Approx(0.01).epsilon(1e-15));
        CHECK(w.weights[1] == 1.0);
        CHECK(w.has_absent_class);
    }
}

TEST_CASE("instrument classes are linearly separable from raw pixels") {
    DatasetRecipe rec;
    rec.n_samples = 640;
    rec.seed = 55;
    Dataset ds = generate(rec);

    const int n_classes = rec.n_instruments;
    const int dim = 3 * 32 * 32;
    Rng init_rng(9);
    LinearLayer probe = LinearLayer::init(dim, n_classes, init_rng);
    SgdMomentum opt(0.05, 0.9);
    opt.add_layer(probe);

    const int train_n = 480;
    const int batch = 64;
    for (int epoch = 0; epoch < 70; ++epoch) {
        for (int start = 0; start < train_n; start += batch) {
            const int size = std::min(batch, train_n - start);
            Eigen::ArrayXd flat(static_cast<Eigen::Index>(size) * dim);
            std::vector<int> labels(static_cast<std::size_t>(size));
            for (int i = 0; i < size; ++i) {
                flat.segment(static_cast<Eigen::Index>(i) * dim, dim) = ds.samples[static_cast<std::size_t>(start + i)].image.values();
                labels[static_cast<std::size_t>(i)] = ds.samples[static_cast<std::size_t>(start + i)].instrument;
            }
            Tensor x({size, dim}, std::move(flat));
            opt.zero_grad();
            Graph tape;
            GraphScope scope(tape);
            backward(weighted_cross_entropy(probe.forward(x), labels, ClassWeights::uniform(n_classes)));
            opt.step();
        }
    }

    int correct = 0;
    for (std::size_t i = train_n; i < ds.size(); ++i) {
        Tensor x({1, dim}, ds.samples[i].image.values());
        Tensor logits = probe.forward(x);
        int best = 0;
        for (int c = 1; c < n_classes; ++c) {
            if (logits.values()[c] > logits.values()[best]) best = c;
        }
        correct += best == ds.samples[i].instrument;
    }
    const double acc = static_cast<double>(correct) / static_cast<double>(ds.size() - train_n);
    CHECK(acc >= 0.90);
}

TEST_CASE("dataset directory round-trip is exact") {
    DatasetRecipe rec;
    rec.n_samples = 12;
    rec.seed = 70;
    Dataset train = generate(rec);
    rec.seed = 71;
    rec.n_samples = 5;
    Dataset test = generate(rec);

    const auto dir = std::filesystem::temp_directory_path() / "unlearn_test_dataset";
    save_datasets({{"train", &train}, {"test", &test}}, dir);
    auto loaded = load_datasets(dir);
    std::filesystem::remove_all(dir);

    REQUIRE(loaded.count("train") == 1);
    REQUIRE(loaded.count("test") == 1);
    REQUIRE(loaded["train"].size() == 12);
    REQUIRE(loaded["test"].size() == 5);
    CHECK(loaded["train"].n_instruments == rec.n_instruments);
    for (std::size_t i = 0; i < train.size(); ++i) {
        CHECK(same_images(train.samples[i].image, loaded["train"].samples[i].image));
        CHECK(train.samples[i].label == loaded["train"].samples[i].label);
        CHECK(train.samples[i].marking == loaded["train"].samples[i].marking);
        CHECK(train.samples[i].ruler == loaded["train"].samples[i].ruler);
        CHECK(train.samples[i].instrument == loaded["train"].samples[i].instrument);
    }
}
