#pragma once

#include <array>
#include <string>
#include <vector>

#include "great/losses.hpp"
#include "great/net.hpp"
#include "great/optim.hpp"

namespace great {

// One positive scaling tensor per task, shaped like the shared feature minus
// the batch dimension. Active only in the backward pass: forward outputs are
// identical for any positive bank.
struct GalBank {
    std::vector<Tensor> gammas;
    double floor = 1e-6;

    static GalBank ones(const Shape& feature_shape, int tasks, double floor = 1e-6);
    double min_element() const;
};

struct TaskDef {
    enum class LossKind { CrossEntropy, Mse };
    std::string name;
    LossKind loss = LossKind::Mse;
};

// Labels for one task on one batch: class indices for CrossEntropy tasks,
// a dense tensor for Mse tasks.
struct TaskBatch {
    std::vector<int> labels;
    Tensor targets;
};

struct MultitaskConfig {
    bool gal_enabled = true;         // GAL updates from the reversed classifier signal
    bool classifier_enabled = true;  // train the task classifier (diagnostic even when GALs are frozen)
    double gamma_floor = 1e-6;
};

struct MultitaskStepReport {
    std::vector<double> raw_losses;
    std::vector<double> normalized_losses;
    double classifier_loss = 0.0;
    double classifier_accuracy = 0.0;
    std::vector<std::array<double, 3>> gamma_stats;  // min / mean / max per task
    bool ok = true;
    std::string diagnostic;
};

// C_i / C_i0 per task; initial losses must exceed 1e-12.
std::vector<double> normalize_task_losses(const std::vector<double>& losses,
                                          const std::vector<double>& initial);

// Mean per-task losses over a dataset batch; used to record C_i0 at
// iteration 0 and for test-set evaluation.
std::vector<double> task_losses(const MultiHeadModel& model, const std::vector<TaskDef>& tasks,
                                const Tensor& x, const std::vector<TaskBatch>& data);

// One Alg-3 step, in order: normalized task losses, per-task feature
// gradients (with graph), decoder updates from the normalized losses,
// encoder update from sum_i g_i * gamma_i, classifier update on the scaled
// per-sample gradients, GAL update from the reversed classifier gradient
// (clamped to the positivity floor). The classifier and GALs are disabled
// for a single task.
MultitaskStepReport multitask_train_step(MultiHeadModel& model, GalBank& gals, Model& classifier,
                                         Optimizer& encoder_opt, std::vector<Optimizer>& decoder_opts,
                                         Optimizer& classifier_opt, Optimizer& gal_opt,
                                         const std::vector<TaskDef>& tasks, const Tensor& x,
                                         const std::vector<TaskBatch>& data,
                                         const std::vector<double>& initial_losses,
                                         const MultitaskConfig& cfg, double lr_multiplier);

// Held-out accuracy of the task classifier on gamma-scaled feature gradients.
double task_classifier_accuracy(const MultiHeadModel& model, const GalBank& gals,
                                const Model& classifier, const std::vector<TaskDef>& tasks,
                                const Tensor& x, const std::vector<TaskBatch>& data,
                                const std::vector<double>& initial_losses);

}  // namespace great
