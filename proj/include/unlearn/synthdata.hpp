#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "unlearn/models.hpp"
#include "unlearn/nn.hpp"

namespace unlearn {

// One rendered lesion: RGB image in [0,1] plus the primary label and one
// bias label per axis.
struct Sample {
    Tensor image; // [3 x H x W]
    int label;    // 0 benign, 1 malignant
    int marking;  // 0/1
    int ruler;    // 0/1
    int instrument;
};

struct Dataset {
    std::vector<Sample> samples;
    int n_instruments = 1;

    std::size_t size() const { return samples.size(); }
    bool empty() const { return samples.empty(); }
    std::vector<int> labels() const;
    std::vector<int> bias_labels(BiasAxis axis) const;
    int axis_cardinality(BiasAxis axis) const;
};

// Recipe for a synthetic dataset. Artefact presence is sampled so that its
// correlation with the malignant label matches the requested value at the
// requested marginal rate; both must combine into valid conditional
// probabilities.
struct DatasetRecipe {
    int n_samples = 1000;
    int image_size = 32;
    double malignant_fraction = 0.5;

    double marking_rate = 0.5;
    double marking_correlation = 0.0;
    double ruler_rate = 0.5;
    double ruler_correlation = 0.0;

    int n_instruments = 8;
    double instrument_label_correlation = 0.0;
    int instrument_holdout = -1; // class never sampled (train-time exclusion)
    int instrument_only = -1;    // force every sample to this class
    double instrument_tint = 0.55;

    double pixel_noise = 0.03;
    double lesion_irregularity = 1.0; // scales the malignant shape/texture cues

    int dm = 0; // duplications of marked-malignant samples when skewing
    int dr = 0; // duplications of ruler-malignant samples when skewing

    std::uint64_t seed = 0;
};

Dataset generate(const DatasetRecipe& recipe);

// Same underlying lesions rendered twice: first with no artefacts at all,
// second with the given artefact stamped on every image.
std::pair<Dataset, Dataset> generate_paired_test(const DatasetRecipe& recipe, BiasAxis artefact);

// Plants the training skew: benign samples carrying the artefact are
// removed; every malignant sample carrying it gains d extra randomly
// augmented copies (h/v flips, brightness jitter of +-0.05).
Dataset skew(const Dataset& dataset, BiasAxis artefact, int d, std::uint64_t seed);

// Deterministic h/v flip; shared by skew augmentation and test-time
// augmentation.
Tensor flip_image(const Tensor& image, bool horizontal, bool vertical);

// Dimension-proxy instrument classes: distinct (H, W) pairs ordered by
// descending frequency; classes rarer than min_class_count are dropped.
// Returns dense labels over the kept classes (-1 for dropped samples) and
// the kept mask.
std::pair<std::vector<int>, std::vector<bool>> instrument_proxy_labels(
    const std::vector<std::pair<int, int>>& image_dims, int min_class_count);

// Colour-threshold artefact labeller; returns 0/1 for the requested axis.
int colour_threshold_label(const Tensor& image, BiasAxis artefact);

// Inverse-frequency loss weights; absent classes get weight 1 and raise the
// warning flag.
ClassWeights class_weights(const std::vector<int>& labels, int n_classes);

// Directory serialization: images.bin (little-endian f64 tensor block) plus
// manifest.csv with id, label, marking, ruler, instrument, split.
void save_datasets(const std::vector<std::pair<std::string, const Dataset*>>& splits,
                   const std::filesystem::path& dir);
std::map<std::string, Dataset> load_datasets(const std::filesystem::path& dir);

} // namespace unlearn
