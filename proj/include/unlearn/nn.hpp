#pragma once

#include <vector>

#include "unlearn/ops.hpp"
#include "unlearn/tensor.hpp"

namespace unlearn {

// Probabilities are clamped to this floor before any logarithm so that
// entropy-like sums treat 0*log(0) as 0 and one-hot outputs stay finite.
inline constexpr double kProbFloor = 1e-12;

// Fan-in scaled uniform init: values drawn from U(-b, b) with b = 1/sqrt(fan_in).
Tensor init_weight(Shape shape, int fan_in, Rng& rng);

// Single fully-connected layer. The learning-rate multiplier rides along to
// the optimizer; it is how an auxiliary head gets its boosted rate without a
// second schedule.
struct LinearLayer {
    Tensor weight; // [out x in]
    Tensor bias;   // [out]
    double learning_rate_multiplier = 1.0;

    static LinearLayer init(int in_features, int out_features, Rng& rng, double lr_multiplier = 1.0);

    Tensor forward(const Tensor& x) const;
    // Same map with the parameters treated as constants: gradients flow to x
    // but never into weight/bias.
    Tensor forward_frozen(const Tensor& x) const;

    int in_features() const { return weight.dim(1); }
    int out_features() const { return weight.dim(0); }
};

// Per-class loss weights; inverse-frequency construction lives with the
// dataset code, uniform() is the no-op weighting.
struct ClassWeights {
    std::vector<double> weights;
    bool has_absent_class = false; // some class had zero training samples

    static ClassWeights uniform(int n_classes);
};

// Plain SGD with velocity-form momentum:
//   v <- momentum * v + grad
//   param <- param - multiplier * (lr * v)
class SgdMomentum {
public:
    SgdMomentum(double learning_rate, double momentum);

    void add_param(const Tensor& param, double lr_multiplier = 1.0);
    void add_layer(const LinearLayer& layer);

    // Missing gradients count as zero (velocity still decays).
    void step();
    void zero_grad();

    double learning_rate() const { return lr_; }
    double momentum() const { return momentum_; }
    std::size_t param_count() const { return entries_.size(); }

private:
    struct Entry {
        Tensor param;
        double multiplier;
        Eigen::ArrayXd velocity;
    };

    double lr_;
    double momentum_;
    std::vector<Entry> entries_;
};

// Weighted mean cross-entropy over a batch:
//   sum_b w[y_b] * (-log_softmax(logits)_b[y_b]) / sum_b w[y_b]
// With uniform weights this is the ordinary mean cross-entropy.
Tensor weighted_cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                              const ClassWeights& weights);

// Cross-entropy between the softmax of the logits and the uniform
// distribution, averaged over the batch. Minimum value log(n) at uniform.
Tensor confusion_loss(const Tensor& aux_logits);

// lambda * mean_b sum_n Q_n log Q_n with Q = softmax(logits); the negative
// conditional entropy regularizer, bounded in [-lambda*log(n), 0].
Tensor neg_conditional_entropy(const Tensor& aux_logits, double lambda);

} // namespace unlearn
