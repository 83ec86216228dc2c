#include "unlearn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "unlearn/synthdata.hpp"

namespace unlearn {

namespace {

void check_binary_inputs(const std::vector<double>& scores, const std::vector<int>& labels,
                         const char* op, bool need_both_classes) {
    if (scores.size() != labels.size()) {
        throw ContractError(std::string(op) + ": " + std::to_string(scores.size()) + " scores for " +
                            std::to_string(labels.size()) + " labels");
    }
    if (scores.empty()) throw ContractError(std::string(op) + ": empty inputs");
    int pos = 0, neg = 0;
    for (int y : labels) {
        if (y != 0 && y != 1) throw ContractError(std::string(op) + ": labels must be 0/1");
        (y == 1 ? pos : neg)++;
    }
    if (need_both_classes && (pos == 0 || neg == 0)) {
        throw ContractError(std::string(op) + ": undefined when only one class is present");
    }
}

} // namespace

RocCurve roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    check_binary_inputs(scores, labels, "roc_auc", true);
    const std::int64_t n = static_cast<std::int64_t>(scores.size());
    std::vector<std::int64_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
        return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
    });

    std::int64_t total_pos = 0;
    for (int y : labels) total_pos += y;
    const std::int64_t total_neg = n - total_pos;

    RocCurve roc;
    roc.thresholds.push_back(std::numeric_limits<double>::infinity());
    roc.fpr.push_back(0.0);
    roc.tpr.push_back(0.0);

    // Integer trapezoid numerator: area = num / (2 * P * N).
    std::int64_t num = 0;
    std::int64_t tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        const double s = scores[static_cast<std::size_t>(order[i])];
        std::int64_t dtp = 0, dfp = 0;
        while (i < order.size() && scores[static_cast<std::size_t>(order[i])] == s) {
            (labels[static_cast<std::size_t>(order[i])] == 1 ? dtp : dfp)++;
            ++i;
        }
        num += dfp * (2 * tp + dtp);
        tp += dtp;
        fp += dfp;
        roc.thresholds.push_back(s);
        roc.fpr.push_back(static_cast<double>(fp) / static_cast<double>(total_neg));
        roc.tpr.push_back(static_cast<double>(tp) / static_cast<double>(total_pos));
    }
    roc.auc = static_cast<double>(num) / (2.0 * static_cast<double>(total_pos) * static_cast<double>(total_neg));
    return roc;
}

std::pair<double, double> sensitivity_specificity(const std::vector<double>& scores,
                                                  const std::vector<int>& labels, double threshold) {
    check_binary_inputs(scores, labels, "sensitivity_specificity", true);
    std::int64_t tp = 0, fn = 0, tn = 0, fp = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool positive = scores[i] >= threshold;
        if (labels[i] == 1) {
            (positive ? tp : fn)++;
        } else {
            (positive ? fp : tn)++;
        }
    }
    return {static_cast<double>(tp) / static_cast<double>(tp + fn),
            static_cast<double>(tn) / static_cast<double>(tn + fp)};
}

double accuracy(const std::vector<double>& scores, const std::vector<int>& labels, double threshold) {
    check_binary_inputs(scores, labels, "accuracy", false);
    std::int64_t correct = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        correct += (scores[i] >= threshold ? 1 : 0) == labels[i];
    }
    return static_cast<double>(correct) / static_cast<double>(scores.size());
}

double tta_predict(const ModelBundle& bundle, const Tensor& image, int n_aug, std::uint64_t seed) {
    if (n_aug < 1) throw ContractError("tta_predict: n_aug must be positive");
    if (bundle.config().n_primary_classes != 2) {
        throw ContractError("tta_predict expects a binary primary head");
    }
    Rng rng(seed);
    double total = 0.0;
    for (int i = 0; i < n_aug; ++i) {
        const bool h = rng.bernoulli(0.5);
        const bool v = rng.bernoulli(0.5);
        Tensor flipped = flip_image(image, h, v);
        Tensor batch({1, image.dim(0), image.dim(1), image.dim(2)}, flipped.values());
        const Tensor logits = bundle.forward(batch).primary_logits;
        const double a = logits.values()[0], b = logits.values()[1];
        const double m = std::max(a, b);
        const double eb = std::exp(b - m);
        total += eb / (std::exp(a - m) + eb);
    }
    return total / static_cast<double>(n_aug);
}

Tensor saliency_map(const ModelBundle& bundle, const Tensor& image, int label) {
    if (image.rank() != 3) {
        throw DimensionError("saliency_map expects [CxHxW], got " + shape_str(image.shape()));
    }
    const int C = image.dim(0), H = image.dim(1), W = image.dim(2);
    Tensor batch({1, C, H, W}, image.values(), true);
    {
        Graph tape;
        GraphScope scope(tape);
        const Tensor logits = bundle.forward(batch).primary_logits;
        backward(weighted_cross_entropy(logits, {label},
                                        ClassWeights::uniform(bundle.config().n_primary_classes)));
    }
    const Eigen::ArrayXd& g = batch.grad();
    Eigen::ArrayXd map(static_cast<Eigen::Index>(H) * W);
    for (int i = 0; i < H * W; ++i) {
        double best = 0.0;
        for (int c = 0; c < C; ++c) best = std::max(best, std::abs(g[static_cast<Eigen::Index>(c) * H * W + i]));
        map[i] = best;
    }
    const double peak = map.maxCoeff();
    if (peak > 0.0) map /= peak;
    return Tensor({H, W}, std::move(map));
}

SeedAggregate aggregate_seeds(const std::vector<double>& values) {
    if (values.empty()) throw ContractError("aggregate_seeds: empty input");
    SeedAggregate agg;
    agg.per_seed = values;
    for (double v : values) agg.mean += v;
    agg.mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - agg.mean) * (v - agg.mean);
    agg.stddev = std::sqrt(var / static_cast<double>(values.size()));
    return agg;
}

void write_roc_csv(const RocCurve& roc, const std::filesystem::path& file) {
    std::ofstream os(file);
    if (!os) throw ContractError("cannot write " + file.string());
    os << "threshold,fpr,tpr\n";
    char buf[96];
    for (std::size_t i = 0; i < roc.thresholds.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.10g,%.10g,%.10g\n", roc.thresholds[i], roc.fpr[i], roc.tpr[i]);
        os << buf;
    }
    if (!os) throw ContractError("failed writing " + file.string());
}

void write_pgm(const Tensor& map, const std::filesystem::path& file) {
    if (map.rank() != 2) throw DimensionError("write_pgm expects [HxW], got " + shape_str(map.shape()));
    std::ofstream os(file, std::ios::binary);
    if (!os) throw ContractError("cannot write " + file.string());
    os << "P5\n" << map.dim(1) << ' ' << map.dim(0) << "\n255\n";
    for (Eigen::Index i = 0; i < map.size(); ++i) {
        const double v = std::clamp(map.values()[i], 0.0, 1.0);
        os.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
    if (!os) throw ContractError("failed writing " + file.string());
}

} // namespace unlearn
