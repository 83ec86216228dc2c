#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "unlearn/nn.hpp"

namespace unlearn {

// Debiasing scheme attached to an auxiliary head.
//   LNTL: adversarial head behind a gradient-reversal layer plus a negative
//         conditional-entropy regularizer on the features.
//   TABE: head fitted on frozen features in a separate step; features then
//         trained against a confusion loss.
//   CLGR: TABE's confusion loss combined with LNTL's gradient reversal on
//         the auxiliary classification loss.
enum class Method { LNTL, TABE, CLGR };

std::string to_string(Method m);
Method method_from_string(const std::string& s);

enum class BiasAxis { Marking, Ruler, Instrument };

std::string to_string(BiasAxis a);
BiasAxis axis_from_string(const std::string& s);

struct AuxHeadSpec {
    Method method;
    BiasAxis axis;
    int n_classes;
};

struct BundleConfig {
    int image_size = 32;
    int in_channels = 3;
    int conv1_filters = 8;
    int conv2_filters = 16;
    int kernel_size = 3;
    int pool = 2;
    int feature_dim = 64;
    int n_primary_classes = 2;
    std::vector<AuxHeadSpec> aux_heads;
};

struct ForwardResult {
    Tensor features; // [B x K]
    Tensor primary_logits;
    std::vector<Tensor> aux_logits;
};

struct AuxHead {
    LinearLayer layer;
    Method method;
    BiasAxis axis;
};

// Feature extractor f, primary head g and auxiliary heads h_m over one
// shared embedding. Parameters are initialized extractor-first so a bundle
// with extra heads shares its extractor/primary init with the plain one
// built from the same seed.
class ModelBundle {
public:
    ModelBundle(BundleConfig config, std::uint64_t seed);

    ModelBundle(const ModelBundle&) = delete;
    ModelBundle& operator=(const ModelBundle&) = delete;
    ModelBundle(ModelBundle&&) = default;
    ModelBundle& operator=(ModelBundle&&) = default;

    // [B x C x H x W] -> [B x K]
    Tensor features(const Tensor& batch) const;

    // Features are computed once and consumed by every head. LNTL/CLGR heads
    // read them through grad_reverse(reversal_scale); TABE heads do not.
    ForwardResult forward(const Tensor& batch, double reversal_scale = 1.0) const;

    const BundleConfig& config() const { return cfg_; }
    int feature_dim() const { return cfg_.feature_dim; }
    std::size_t aux_count() const { return aux_.size(); }

    LinearLayer& primary_head() { return primary_; }
    const LinearLayer& primary_head() const { return primary_; }
    std::vector<AuxHead>& aux_heads() { return aux_; }
    const std::vector<AuxHead>& aux_heads() const { return aux_; }

    std::vector<Tensor> extractor_parameters() const;
    std::vector<std::pair<std::string, Tensor>> named_parameters() const;

    // Flat little-endian f64 container with a JSON manifest carrying names,
    // shapes, byte offsets and the bundle config.
    void save(const std::filesystem::path& file) const;
    static ModelBundle load(const std::filesystem::path& file);

private:
    BundleConfig cfg_;
    Tensor conv1_; // [F1 x C x k x k]
    Tensor conv2_; // [F2 x F1 x k x k]
    LinearLayer proj_;
    LinearLayer primary_;
    std::vector<AuxHead> aux_;
};

} // namespace unlearn
