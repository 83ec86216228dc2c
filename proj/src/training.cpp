#include "unlearn/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "unlearn/metrics.hpp"

namespace unlearn {

void TrainConfig::validate() const {
    if (learning_rate <= 0.0) throw ContractError("TrainConfig: learning rate must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw ContractError("TrainConfig: momentum must be in [0, 1)");
    if (tabe_head_lr_boost <= 0.0) throw ContractError("TrainConfig: head boost must be positive");
    if (alpha < 0.0 || lambda < 0.0 || mu < 0.0) {
        throw ContractError("TrainConfig: alpha, lambda and mu must be nonnegative");
    }
    if (epochs < 0) throw ContractError("TrainConfig: epochs must be nonnegative");
    if (batch_size < 1) throw ContractError("TrainConfig: batch size must be positive");
}

Optimizers make_optimizers(ModelBundle& bundle, const TrainConfig& cfg) {
    cfg.validate();
    Optimizers opt{SgdMomentum(cfg.learning_rate, cfg.momentum),
                   SgdMomentum(cfg.learning_rate, cfg.momentum)};
    for (const Tensor& p : bundle.extractor_parameters()) opt.repr.add_param(p);
    opt.repr.add_layer(bundle.primary_head());
    for (AuxHead& head : bundle.aux_heads()) {
        if (head.method == Method::LNTL) {
            opt.repr.add_layer(head.layer);
        } else {
            head.layer.learning_rate_multiplier = cfg.effective_boost();
            opt.aux.add_layer(head.layer);
        }
    }
    return opt;
}

namespace {

void check_bias_inputs(const ModelBundle& bundle, const std::vector<std::vector<int>>& bias_labels,
                       const std::vector<ClassWeights>& aux_weights) {
    if (bias_labels.size() != bundle.aux_count() || aux_weights.size() != bundle.aux_count()) {
        throw ContractError("bias labels/weights must match the bundle's aux heads (" +
                            std::to_string(bundle.aux_count()) + " heads, " +
                            std::to_string(bias_labels.size()) + " label sets)");
    }
}

double effective_reversal(const TrainConfig& cfg) {
    return cfg.ablate_gradient_reversal ? 0.0 : cfg.mu;
}

} // namespace

double train_step_baseline(ModelBundle& bundle, const Tensor& images, const std::vector<int>& labels,
                           const ClassWeights& weights, SgdMomentum& opt) {
    if (bundle.aux_count() != 0) {
        throw ContractError("train_step_baseline requires a bundle without aux heads");
    }
    opt.zero_grad();
    Graph tape;
    GraphScope scope(tape);
    Tensor loss = weighted_cross_entropy(bundle.primary_head().forward(bundle.features(images)), labels, weights);
    backward(loss);
    opt.step();
    return loss.value();
}

StepLosses two_step_phase_a(ModelBundle& bundle, const Tensor& images,
                            const std::vector<std::vector<int>>& bias_labels,
                            const std::vector<ClassWeights>& aux_weights, SgdMomentum& opt_aux,
                            const TrainConfig& cfg) {
    check_bias_inputs(bundle, bias_labels, aux_weights);
    StepLosses out;
    const double mu = effective_reversal(cfg);

    Graph tape;
    GraphScope scope(tape);
    Tensor features = bundle.features(images);
    Tensor total;
    bool any = false;
    auto& heads = bundle.aux_heads();
    for (std::size_t i = 0; i < heads.size(); ++i) {
        if (heads[i].method == Method::LNTL) continue;
        // TABE fits its head on frozen features; CLGR additionally leaks the
        // reversed classification gradient into the representation, to be
        // applied by the repr optimizer together with phase B.
        const Tensor in = heads[i].method == Method::TABE ? detach(features) : grad_reverse(features, mu);
        Tensor loss = weighted_cross_entropy(heads[i].layer.forward(in), bias_labels[i], aux_weights[i]);
        out.aux += loss.value();
        total = any ? add(total, loss) : loss;
        any = true;
    }
    if (any) {
        backward(total);
        opt_aux.step();
    }
    return out;
}

StepLosses two_step_phase_b(ModelBundle& bundle, const Tensor& images, const std::vector<int>& labels,
                            const std::vector<std::vector<int>>& bias_labels,
                            const ClassWeights& primary_weights,
                            const std::vector<ClassWeights>& aux_weights, SgdMomentum& opt_repr,
                            const TrainConfig& cfg) {
    check_bias_inputs(bundle, bias_labels, aux_weights);
    StepLosses out;
    const double mu = effective_reversal(cfg);

    Graph tape;
    GraphScope scope(tape);
    Tensor features = bundle.features(images);
    Tensor total = weighted_cross_entropy(bundle.primary_head().forward(features), labels, primary_weights);
    out.primary = total.value();

    auto& heads = bundle.aux_heads();
    for (std::size_t i = 0; i < heads.size(); ++i) {
        if (heads[i].method == Method::LNTL) {
            // Adversarial head: its own cross-entropy trains the head while
            // the representation receives the reversed gradient; the entropy
            // regularizer flows into the representation through the head's
            // frozen parameters.
            Tensor adv = weighted_cross_entropy(heads[i].layer.forward(grad_reverse(features, mu)),
                                                bias_labels[i], aux_weights[i]);
            out.aux += adv.value();
            Tensor reg = neg_conditional_entropy(heads[i].layer.forward_frozen(features), cfg.lambda);
            out.reg += reg.value();
            total = add(add(total, adv), reg);
        } else {
            Tensor conf = confusion_loss(heads[i].layer.forward_frozen(features));
            out.reg += conf.value();
            total = add(total, scale(conf, cfg.alpha));
        }
    }
    backward(total);
    opt_repr.step();
    return out;
}

StepLosses train_step(ModelBundle& bundle, const Tensor& images, const std::vector<int>& labels,
                      const std::vector<std::vector<int>>& bias_labels,
                      const ClassWeights& primary_weights, const std::vector<ClassWeights>& aux_weights,
                      SgdMomentum& opt_repr, SgdMomentum* opt_aux, const TrainConfig& cfg) {
    check_bias_inputs(bundle, bias_labels, aux_weights);
    bool any_two_step = false;
    for (const AuxHead& head : bundle.aux_heads()) {
        any_two_step = any_two_step || head.method != Method::LNTL;
    }
    if (any_two_step && opt_aux == nullptr) {
        throw ContractError("train_step: TABE/CLGR heads need the aux optimizer");
    }

    opt_repr.zero_grad();
    if (opt_aux != nullptr) opt_aux->zero_grad();

    StepLosses out;
    if (any_two_step) {
        out = two_step_phase_a(bundle, images, bias_labels, aux_weights, *opt_aux, cfg);
    }
    const StepLosses b =
        two_step_phase_b(bundle, images, labels, bias_labels, primary_weights, aux_weights, opt_repr, cfg);
    out.primary = b.primary;
    out.aux += b.aux;
    out.reg += b.reg;
    return out;
}

namespace {

void require_homogeneous(const ModelBundle& bundle, Method method, const char* op) {
    for (const AuxHead& head : bundle.aux_heads()) {
        if (head.method != method) {
            throw ContractError(std::string(op) + " requires every aux head to use method " +
                                to_string(method));
        }
    }
}

} // namespace

StepLosses train_step_lntl(ModelBundle& bundle, const Tensor& images, const std::vector<int>& labels,
                           const std::vector<std::vector<int>>& bias_labels,
                           const ClassWeights& primary_weights,
                           const std::vector<ClassWeights>& aux_weights, SgdMomentum& opt,
                           const TrainConfig& cfg) {
    require_homogeneous(bundle, Method::LNTL, "train_step_lntl");
    return train_step(bundle, images, labels, bias_labels, primary_weights, aux_weights, opt, nullptr, cfg);
}

StepLosses train_step_tabe(ModelBundle& bundle, const Tensor& images, const std::vector<int>& labels,
                           const std::vector<std::vector<int>>& bias_labels,
                           const ClassWeights& primary_weights,
                           const std::vector<ClassWeights>& aux_weights, SgdMomentum& opt_repr,
                           SgdMomentum& opt_aux, const TrainConfig& cfg) {
    require_homogeneous(bundle, Method::TABE, "train_step_tabe");
    return train_step(bundle, images, labels, bias_labels, primary_weights, aux_weights, opt_repr,
                      &opt_aux, cfg);
}

StepLosses train_step_clgr(ModelBundle& bundle, const Tensor& images, const std::vector<int>& labels,
                           const std::vector<std::vector<int>>& bias_labels,
                           const ClassWeights& primary_weights,
                           const std::vector<ClassWeights>& aux_weights, SgdMomentum& opt_repr,
                           SgdMomentum& opt_aux, const TrainConfig& cfg) {
    require_homogeneous(bundle, Method::CLGR, "train_step_clgr");
    return train_step(bundle, images, labels, bias_labels, primary_weights, aux_weights, opt_repr,
                      &opt_aux, cfg);
}

Tensor batch_images(const Dataset& ds, const std::vector<std::size_t>& indices) {
    if (indices.empty()) throw ContractError("batch_images: empty index list");
    const Tensor& first = ds.samples[indices[0]].image;
    const Eigen::Index img = first.size();
    Eigen::ArrayXd flat(static_cast<Eigen::Index>(indices.size()) * img);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        flat.segment(static_cast<Eigen::Index>(i) * img, img) = ds.samples[indices[i]].image.values();
    }
    return Tensor({static_cast<int>(indices.size()), first.dim(0), first.dim(1), first.dim(2)},
                  std::move(flat));
}

TrainResult train(ModelBundle& bundle, const Dataset& train_set, const Dataset* validation,
                  const TrainConfig& cfg) {
    cfg.validate();
    if (train_set.empty()) throw ContractError("train: empty dataset");
    auto& heads = bundle.aux_heads();
    if (heads.size() != cfg.heads.size()) {
        throw ContractError("train: config lists " + std::to_string(cfg.heads.size()) +
                            " heads but the bundle has " + std::to_string(heads.size()));
    }
    for (std::size_t i = 0; i < heads.size(); ++i) {
        if (heads[i].method != cfg.heads[i].method || heads[i].axis != cfg.heads[i].axis) {
            throw ContractError("train: head " + std::to_string(i) + " disagrees between config and bundle");
        }
        if (train_set.axis_cardinality(heads[i].axis) < 2) {
            throw ContractError("train: dataset provides no usable bias labels for axis " +
                                to_string(heads[i].axis));
        }
        if (train_set.axis_cardinality(heads[i].axis) != heads[i].layer.out_features()) {
            throw ContractError("train: head for axis " + to_string(heads[i].axis) + " expects " +
                                std::to_string(heads[i].layer.out_features()) + " classes, dataset has " +
                                std::to_string(train_set.axis_cardinality(heads[i].axis)));
        }
    }

    const ClassWeights primary_weights = class_weights(train_set.labels(), 2);
    std::vector<std::vector<int>> head_labels;
    std::vector<ClassWeights> aux_weights;
    for (const AuxHead& head : heads) {
        head_labels.push_back(train_set.bias_labels(head.axis));
        aux_weights.push_back(class_weights(head_labels.back(), head.layer.out_features()));
    }

    Optimizers opts = make_optimizers(bundle, cfg);

    TrainResult result;
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng shuffle_rng(mix_seed(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);

        StepLosses epoch_losses;
        int n_batches = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            const std::vector<std::size_t> indices(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                   order.begin() + static_cast<std::ptrdiff_t>(end));
            Tensor images = batch_images(train_set, indices);
            std::vector<int> labels;
            labels.reserve(indices.size());
            for (std::size_t idx : indices) labels.push_back(train_set.samples[idx].label);
            std::vector<std::vector<int>> bias(heads.size());
            for (std::size_t h = 0; h < heads.size(); ++h) {
                for (std::size_t idx : indices) bias[h].push_back(head_labels[h][idx]);
            }
            const StepLosses sl = train_step(bundle, images, labels, bias, primary_weights, aux_weights,
                                             opts.repr, &opts.aux, cfg);
            epoch_losses.primary += sl.primary;
            epoch_losses.aux += sl.aux;
            epoch_losses.reg += sl.reg;
            ++n_batches;
        }

        double val_auc = std::numeric_limits<double>::quiet_NaN();
        if (validation != nullptr && !validation->empty()) {
            val_auc = roc_auc(malignancy_scores(bundle, *validation), validation->labels()).auc;
        }
        result.log.push_back(EpochLog{epoch, epoch_losses.primary / n_batches, epoch_losses.aux / n_batches,
                                      epoch_losses.reg / n_batches, val_auc});
    }
    return result;
}

std::vector<double> malignancy_scores(const ModelBundle& bundle, const Dataset& ds) {
    std::vector<double> scores;
    scores.reserve(ds.size());
    constexpr std::size_t kChunk = 64;
    for (std::size_t start = 0; start < ds.size(); start += kChunk) {
        const std::size_t end = std::min(ds.size(), start + kChunk);
        std::vector<std::size_t> indices(end - start);
        std::iota(indices.begin(), indices.end(), start);
        const Tensor logits = bundle.forward(batch_images(ds, indices)).primary_logits;
        for (std::size_t i = 0; i < indices.size(); ++i) {
            const double a = logits.values()[2 * static_cast<Eigen::Index>(i)];
            const double b = logits.values()[2 * static_cast<Eigen::Index>(i) + 1];
            const double m = std::max(a, b);
            const double eb = std::exp(b - m);
            scores.push_back(eb / (std::exp(a - m) + eb));
        }
    }
    return scores;
}

Tensor dataset_features(const ModelBundle& bundle, const Dataset& ds) {
    if (ds.empty()) throw ContractError("dataset_features: empty dataset");
    const int K = bundle.feature_dim();
    Eigen::ArrayXd flat(static_cast<Eigen::Index>(ds.size()) * K);
    constexpr std::size_t kChunk = 64;
    for (std::size_t start = 0; start < ds.size(); start += kChunk) {
        const std::size_t end = std::min(ds.size(), start + kChunk);
        std::vector<std::size_t> indices(end - start);
        std::iota(indices.begin(), indices.end(), start);
        const Tensor f = bundle.features(batch_images(ds, indices));
        flat.segment(static_cast<Eigen::Index>(start) * K, static_cast<Eigen::Index>(indices.size()) * K) =
            f.values();
    }
    return Tensor({static_cast<int>(ds.size()), K}, std::move(flat));
}

ProbeResult bias_probe(const ModelBundle& bundle, const Dataset& probe_train, const Dataset& probe_eval,
                       BiasAxis axis, std::uint64_t seed) {
    if (probe_train.empty() || probe_eval.empty()) throw ContractError("bias_probe: empty probe set");
    const int n_classes = probe_train.axis_cardinality(axis);
    if (n_classes < 2) throw ContractError("bias_probe: axis " + to_string(axis) + " has one class");

    const Tensor train_features = dataset_features(bundle, probe_train);
    const std::vector<int> train_labels = probe_train.bias_labels(axis);
    const ClassWeights weights = class_weights(train_labels, n_classes);
    const int K = bundle.feature_dim();

    constexpr int kEpochs = 50;
    constexpr int kBatch = 64;
    constexpr double kLr = 0.05;
    constexpr double kMomentum = 0.9;

    Rng init_rng(mix_seed(seed, "probe-init"));
    LinearLayer probe = LinearLayer::init(K, n_classes, init_rng);
    SgdMomentum opt(kLr, kMomentum);
    opt.add_layer(probe);

    std::vector<std::size_t> order(probe_train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (int epoch = 0; epoch < kEpochs; ++epoch) {
        Rng shuffle_rng(mix_seed(seed, "probe-shuffle", static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += kBatch) {
            const std::size_t end = std::min(order.size(), start + kBatch);
            const Eigen::Index size = static_cast<Eigen::Index>(end - start);
            Eigen::ArrayXd flat(size * K);
            std::vector<int> labels;
            labels.reserve(end - start);
            for (std::size_t i = start; i < end; ++i) {
                flat.segment(static_cast<Eigen::Index>(i - start) * K, K) =
                    train_features.values().segment(static_cast<Eigen::Index>(order[i]) * K, K);
                labels.push_back(train_labels[order[i]]);
            }
            Tensor x({static_cast<int>(size), K}, std::move(flat));
            opt.zero_grad();
            Graph tape;
            GraphScope scope(tape);
            backward(weighted_cross_entropy(probe.forward(x), labels, weights));
            opt.step();
        }
    }

    const Tensor eval_features = dataset_features(bundle, probe_eval);
    const std::vector<int> eval_labels = probe_eval.bias_labels(axis);
    const Tensor logits = probe.forward(eval_features);
    int correct = 0;
    double ce = 0.0;
    for (std::size_t i = 0; i < probe_eval.size(); ++i) {
        const Eigen::Index row = static_cast<Eigen::Index>(i) * n_classes;
        int best = 0;
        double max_logit = logits.values()[row];
        double z = 0.0;
        for (int c = 0; c < n_classes; ++c) max_logit = std::max(max_logit, logits.values()[row + c]);
        for (int c = 0; c < n_classes; ++c) {
            if (logits.values()[row + c] > logits.values()[row + best]) best = c;
            z += std::exp(logits.values()[row + c] - max_logit);
        }
        correct += best == eval_labels[i];
        ce += -(logits.values()[row + eval_labels[i]] - max_logit - std::log(z));
    }
    return ProbeResult{static_cast<double>(correct) / static_cast<double>(probe_eval.size()),
                       ce / static_cast<double>(probe_eval.size())};
}

} // namespace unlearn
