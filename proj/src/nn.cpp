#include "unlearn/nn.hpp"

#include <cmath>

namespace unlearn {

Tensor init_weight(Shape shape, int fan_in, Rng& rng) {
    if (fan_in <= 0) throw ContractError("init_weight: fan_in must be positive");
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Eigen::ArrayXd v(numel(shape));
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.uniform(-bound, bound);
    return Tensor(std::move(shape), std::move(v), true);
}

LinearLayer LinearLayer::init(int in_features, int out_features, Rng& rng, double lr_multiplier) {
    if (lr_multiplier <= 0.0) throw ContractError("LinearLayer: lr multiplier must be positive");
    LinearLayer layer;
    layer.weight = init_weight({out_features, in_features}, in_features, rng);
    layer.bias = Tensor::zeros({out_features}, true);
    layer.learning_rate_multiplier = lr_multiplier;
    return layer;
}

Tensor LinearLayer::forward(const Tensor& x) const {
    return add(matmul(x, transpose(weight)), bias);
}

Tensor LinearLayer::forward_frozen(const Tensor& x) const {
    return add(matmul(x, transpose(detach(weight))), detach(bias));
}

ClassWeights ClassWeights::uniform(int n_classes) {
    if (n_classes < 1) throw ContractError("ClassWeights: need at least one class");
    return ClassWeights{std::vector<double>(static_cast<std::size_t>(n_classes), 1.0), false};
}

SgdMomentum::SgdMomentum(double learning_rate, double momentum) : lr_(learning_rate), momentum_(momentum) {
    // lr 0 is allowed as the degenerate null step; training configs enforce
    // positivity separately.
    if (learning_rate < 0.0) throw ContractError("SgdMomentum: learning rate must be nonnegative");
    if (momentum < 0.0 || momentum >= 1.0) throw ContractError("SgdMomentum: momentum must be in [0, 1)");
}

void SgdMomentum::add_param(const Tensor& param, double lr_multiplier) {
    if (lr_multiplier <= 0.0) throw ContractError("SgdMomentum: lr multiplier must be positive");
    entries_.push_back(Entry{param, lr_multiplier, Eigen::ArrayXd::Zero(param.size())});
}

void SgdMomentum::add_layer(const LinearLayer& layer) {
    add_param(layer.weight, layer.learning_rate_multiplier);
    add_param(layer.bias, layer.learning_rate_multiplier);
}

void SgdMomentum::step() {
    for (Entry& e : entries_) {
        e.velocity *= momentum_;
        if (e.param.has_grad()) e.velocity += e.param.grad();
        e.param.values() -= e.multiplier * (lr_ * e.velocity);
    }
}

void SgdMomentum::zero_grad() {
    for (Entry& e : entries_) e.param.zero_grad();
}

Tensor weighted_cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                              const ClassWeights& weights) {
    if (logits.rank() != 2) {
        throw DimensionError("weighted_cross_entropy expects [BxC] logits, got " + shape_str(logits.shape()));
    }
    const int batch = logits.dim(0);
    const int n_classes = logits.dim(1);
    if (batch < 1) throw ContractError("weighted_cross_entropy: empty batch");
    if (static_cast<int>(labels.size()) != batch) {
        throw ContractError("weighted_cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                            std::to_string(batch));
    }
    if (static_cast<int>(weights.weights.size()) != n_classes) {
        throw ContractError("weighted_cross_entropy: weight count " + std::to_string(weights.weights.size()) +
                            " does not match class count " + std::to_string(n_classes));
    }
    Eigen::ArrayXd w(batch);
    double wsum = 0.0;
    for (int b = 0; b < batch; ++b) {
        const int y = labels[static_cast<std::size_t>(b)];
        if (y < 0 || y >= n_classes) {
            throw ContractError("weighted_cross_entropy: label " + std::to_string(y) + " out of range [0, " +
                                std::to_string(n_classes) + ")");
        }
        w[b] = weights.weights[static_cast<std::size_t>(y)];
        wsum += w[b];
    }
    Tensor per_sample = gather(log_softmax(logits), labels);
    Tensor weighted = mul(per_sample, Tensor({batch}, std::move(w)));
    return scale(sum(weighted), -1.0 / wsum);
}

namespace {

int checked_aux_classes(const Tensor& logits, const char* op) {
    if (logits.rank() != 2) {
        throw DimensionError(std::string(op) + " expects [Bxn] logits, got " + shape_str(logits.shape()));
    }
    const int n = logits.dim(1);
    if (n < 2) throw ContractError(std::string(op) + " needs at least 2 classes, got " + std::to_string(n));
    return n;
}

} // namespace

Tensor confusion_loss(const Tensor& aux_logits) {
    const int n = checked_aux_classes(aux_logits, "confusion_loss");
    const int batch = aux_logits.dim(0);
    Tensor log_p = clamp_min(log_softmax(aux_logits), std::log(kProbFloor));
    return scale(sum(log_p), -1.0 / (static_cast<double>(batch) * n));
}

Tensor neg_conditional_entropy(const Tensor& aux_logits, double lambda) {
    checked_aux_classes(aux_logits, "neg_conditional_entropy");
    if (lambda < 0.0) throw ContractError("neg_conditional_entropy: lambda must be nonnegative");
    const int batch = aux_logits.dim(0);
    Tensor q = softmax(aux_logits);
    Tensor log_q = clamp_min(log_softmax(aux_logits), std::log(kProbFloor));
    return scale(sum(mul(q, log_q)), lambda / static_cast<double>(batch));
}

} // namespace unlearn
