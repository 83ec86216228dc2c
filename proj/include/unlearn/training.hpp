#pragma once

#include <optional>

#include "unlearn/models.hpp"
#include "unlearn/synthdata.hpp"

namespace unlearn {

struct HeadConfig {
    Method method;
    BiasAxis axis;
};

struct TrainConfig {
    std::vector<HeadConfig> heads;
    double learning_rate = 3e-4;
    double momentum = 0.9;
    double tabe_head_lr_boost = 10.0;
    double alpha = 0.03;  // confusion-loss weight
    double lambda = 0.01; // entropy-regularizer weight
    double mu = 1.0;      // gradient-reversal scale
    int epochs = 1;
    int batch_size = 32;
    std::uint64_t seed = 0;
    bool ablate_gradient_reversal = false;

    // Boosting multiple heads is unstable, so the boost collapses to 1 as
    // soon as a second head is configured.
    double effective_boost() const { return heads.size() >= 2 ? 1.0 : tabe_head_lr_boost; }
    void validate() const;
};

struct StepLosses {
    double primary = 0.0;
    double aux = 0.0; // auxiliary classification losses, summed over heads
    double reg = 0.0; // entropy regularizer (LNTL) / confusion loss (TABE, CLGR)
};

// Optimizer pair over the bundle's parameter partition: `repr` owns the
// extractor, the primary head and any LNTL heads; `aux` owns TABE/CLGR heads
// at the boosted rate.
struct Optimizers {
    SgdMomentum repr;
    SgdMomentum aux;
};

Optimizers make_optimizers(ModelBundle& bundle, const TrainConfig& cfg);

// One optimizer step for a head-free bundle: plain weighted cross-entropy on
// the primary head. Returns the loss value.
double train_step_baseline(ModelBundle& bundle, const Tensor& images, const std::vector<int>& labels,
                           const ClassWeights& weights, SgdMomentum& opt);

// The two sub-steps of the TABE/CLGR schedule, exposed so their parameter
// partition can be checked directly. Neither resets gradients: phase A's
// reversed CLGR gradient into the representation must survive into phase
// B's optimizer step.
StepLosses two_step_phase_a(ModelBundle& bundle, const Tensor& images,
                            const std::vector<std::vector<int>>& bias_labels,
                            const std::vector<ClassWeights>& aux_weights, SgdMomentum& opt_aux,
                            const TrainConfig& cfg);
StepLosses two_step_phase_b(ModelBundle& bundle, const Tensor& images, const std::vector<int>& labels,
                            const std::vector<std::vector<int>>& bias_labels,
                            const ClassWeights& primary_weights,
                            const std::vector<ClassWeights>& aux_weights, SgdMomentum& opt_repr,
                            const TrainConfig& cfg);

// One full step dispatching every head by its own method; opt_aux may be
// null when no TABE/CLGR head is configured.
StepLosses train_step(ModelBundle& bundle, const Tensor& images, const std::vector<int>& labels,
                      const std::vector<std::vector<int>>& bias_labels,
                      const ClassWeights& primary_weights, const std::vector<ClassWeights>& aux_weights,
                      SgdMomentum& opt_repr, SgdMomentum* opt_aux, const TrainConfig& cfg);

// Homogeneous-method fronts over train_step.
StepLosses train_step_lntl(ModelBundle& bundle, const Tensor& images, const std::vector<int>& labels,
                           const std::vector<std::vector<int>>& bias_labels,
                           const ClassWeights& primary_weights,
                           const std::vector<ClassWeights>& aux_weights, SgdMomentum& opt,
                           const TrainConfig& cfg);
StepLosses train_step_tabe(ModelBundle& bundle, const Tensor& images, const std::vector<int>& labels,
                           const std::vector<std::vector<int>>& bias_labels,
                           const ClassWeights& primary_weights,
                           const std::vector<ClassWeights>& aux_weights, SgdMomentum& opt_repr,
                           SgdMomentum& opt_aux, const TrainConfig& cfg);
StepLosses train_step_clgr(ModelBundle& bundle, const Tensor& images, const std::vector<int>& labels,
                           const std::vector<std::vector<int>>& bias_labels,
                           const ClassWeights& primary_weights,
                           const std::vector<ClassWeights>& aux_weights, SgdMomentum& opt_repr,
                           SgdMomentum& opt_aux, const TrainConfig& cfg);

struct EpochLog {
    int epoch;
    double primary_loss;
    double aux_loss;
    double reg_loss;
    double val_auc; // NaN when no validation set was supplied
};

struct TrainResult {
    std::vector<EpochLog> log;
};

// Full training loop: per-epoch full shuffle, per-batch steps, optional
// validation AUC. Deterministic given (config, seed).
TrainResult train(ModelBundle& bundle, const Dataset& train_set, const Dataset* validation,
                  const TrainConfig& cfg);

// Stacks dataset images into a [N x C x H x W] batch tensor.
Tensor batch_images(const Dataset& ds, const std::vector<std::size_t>& indices);

// Plain single-pass malignancy probabilities (no TTA), inference mode.
std::vector<double> malignancy_scores(const ModelBundle& bundle, const Dataset& ds);

// Frozen-feature matrix [N x K] of a dataset, inference mode.
Tensor dataset_features(const ModelBundle& bundle, const Dataset& ds);

// Fresh linear probe trained on frozen features of probe_train, scored on
// probe_eval. The probe is the measuring instrument for how much bias
// information survives in the representation.
struct ProbeResult {
    double accuracy;
    double mean_ce;
};

ProbeResult bias_probe(const ModelBundle& bundle, const Dataset& probe_train, const Dataset& probe_eval,
                       BiasAxis axis, std::uint64_t seed);

} // namespace unlearn
