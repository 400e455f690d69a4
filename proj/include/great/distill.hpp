#pragma once

#include <string>
#include <vector>

#include "great/losses.hpp"
#include "great/net.hpp"
#include "great/optim.hpp"

namespace great {

struct DistillConfig {
    double alpha = 0.1;                  // loss balance: (1-alpha) supervised + alpha adversarial
    bool standardize_gradients = false;  // per-sample standardization before the discriminator (ablation)
    double temperature = 20.0;           // soft-target baseline
    double mix = 0.1;                    // soft-target baseline KL weight
};

struct DistillStepReport {
    double student_loss = 0.0;
    double disc_loss = 0.0;  // binary classification loss on (teacher, student) gradients
    double d_value = 0.0;    // E log f(t) + E log(1 - f(s))
    bool ok = true;
    std::string diagnostic;
};

// Per-sample gradient of the teacher's supervised loss w.r.t. x; no graph is
// built and the teacher is never updated.
Tensor teacher_gradient(const Model& teacher, const Tensor& x, const std::vector<int>& y);

// Empirical value of the discriminator objective over a batch pair, with the
// classifier probability clamped to [1e-12, 1-1e-12].
double discriminator_objective(const Model& f, const Tensor& g_t, const Tensor& g_s);

// Fraction of gradient rows the discriminator assigns to the right source.
double discriminator_accuracy(const Model& f, const Tensor& g_t, const Tensor& g_s);

// One Alg-2 step: student supervised loss, per-sample input gradients from
// student (with graph) and teacher, discriminator update, then a student
// update from (1-alpha) * supervised plus the reversed discriminator loss on
// the student gradients.
DistillStepReport distill_train_step(Model& student, const Model& teacher, Model& discriminator,
                                     Optimizer& student_opt, Optimizer& disc_opt, const Tensor& x,
                                     const std::vector<int>& y, const DistillConfig& cfg,
                                     double lr_multiplier);

// Classical distillation: (1-mix) * CE + mix * T^2 * KL(teacher || student).
DistillStepReport soft_target_baseline_step(Model& student, const Model& teacher,
                                            Optimizer& student_opt, const Tensor& x,
                                            const std::vector<int>& y, double temperature,
                                            double mix, double lr_multiplier);

// Plain supervised step (the distillation baseline and the alpha=0 reference).
DistillStepReport supervised_step(Model& student, Optimizer& opt, const Tensor& x,
                                  const std::vector<int>& y, double lr_multiplier);

}  // namespace great
