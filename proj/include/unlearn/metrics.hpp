#pragma once

#include <filesystem>
#include <utility>
#include <vector>

#include "unlearn/models.hpp"

namespace unlearn {

// ROC curve swept over all distinct thresholds, descending. The first point
// is (0,0) at threshold +infinity, the last is (1,1). Tied scores collapse
// into one sweep step, which makes the trapezoidal area equal the
// Mann-Whitney pairwise statistic with half-credit for ties.
struct RocCurve {
    std::vector<double> thresholds;
    std::vector<double> fpr;
    std::vector<double> tpr;
    double auc = 0.0;
};

RocCurve roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

// (sensitivity, specificity) at a threshold; positive iff score >= threshold.
std::pair<double, double> sensitivity_specificity(const std::vector<double>& scores,
                                                  const std::vector<int>& labels, double threshold);

double accuracy(const std::vector<double>& scores, const std::vector<int>& labels,
                double threshold = 0.5);

// Malignancy score averaged over n_aug random h/v flips of the image,
// deterministic given the seed.
double tta_predict(const ModelBundle& bundle, const Tensor& image, int n_aug, std::uint64_t seed);

// Vanilla-gradient saliency: |d loss / d pixel| reduced over channels by
// max, then max-normalized to [0,1]. Returns [H x W].
Tensor saliency_map(const ModelBundle& bundle, const Tensor& image, int label);

struct SeedAggregate {
    std::vector<double> per_seed;
    double mean = 0.0;
    double stddev = 0.0; // population
};

SeedAggregate aggregate_seeds(const std::vector<double>& values);

void write_roc_csv(const RocCurve& roc, const std::filesystem::path& file);
void write_pgm(const Tensor& map, const std::filesystem::path& file);

} // namespace unlearn
