#pragma once

#include <string>
#include <vector>

#include "great/losses.hpp"
#include "great/net.hpp"
#include "great/optim.hpp"

namespace great {

struct GreaceConfig {
    double alpha_max = 1.0;  // auxiliary loss weight ceiling
    double beta_max = 2.0;   // negative-class penalty ceiling
    bool normalize_gradients = false;  // per-sample L2 normalization of g (ablation)
    bool unmasked = false;             // feed the unmasked gradient (ablation; same as
                                       // masked for plain cross-entropy)
};

struct DefenseStepReport {
    double main_loss = 0.0;       // C
    double aux_loss = 0.0;        // auxiliary classification loss on gradients
    double aux_accuracy = 0.0;    // on this batch's gradients
    double grad_norm_mean = 0.0;  // mean per-sample L2 norm of the masked gradient
    std::vector<std::pair<std::string, double>> probe;  // per-layer reversed-signal norms
    bool ok = true;
    std::string diagnostic;
};

// Zeroes every negative-class component: g & onehot(y).
Tensor mask_true_class(const Tensor& grad_probs, const std::vector<int>& y);

// grad_a_C + beta * aux_probs at every negative-class position; the
// true-class component passes through unchanged. aux_probs rows must sum to
// 1 within 1e-6; beta must be nonnegative.
Tensor greace_output_gradient(const Tensor& grad_a_C, const Tensor& aux_probs,
                              const std::vector<int>& y, double beta);

// Per-sample gradient of the (masked) cross-entropy w.r.t. x, built with
// create_graph so it stays differentiable. For plain cross-entropy the mask
// changes nothing: negative-class components of the probability-space
// gradient are already zero.
Tensor masked_input_gradient(const Model& m, const Tensor& x, const std::vector<int>& y);

// One training step of the joint main/auxiliary game:
//   C       <- cross-entropy of main(x)
//   g       <- per-sample masked input gradient, with graph
//   aux update from the classification loss on detached g
//   fresh auxiliary pass on gradient_reversal(g, alpha) with updated weights
//   output gradient replaced by the GREACE modification with this aux pass's
//   softmax, main update from both signals
// alpha/beta come from the epoch schedule. When probe_layers is true the
// report carries the per-layer norms of the reversed signal flowing forward.
DefenseStepReport defense_train_step(Model& main_model, Model& aux_model, Optimizer& main_opt,
                                     Optimizer& aux_opt, const Tensor& x, const std::vector<int>& y,
                                     const GreaceConfig& cfg, double alpha, double beta,
                                     double lr_multiplier, bool probe_layers = false);

// Per-layer norms of the adversarial signal: gradients of the (reversed)
// auxiliary loss w.r.t. each layer-gradient tensor of the main network.
// lambda may be signed here; the defense path uses lambda = alpha.
std::vector<std::pair<std::string, double>> reversed_signal_probe(const Model& main_model,
                                                                  const Model& aux_model,
                                                                  const Tensor& x,
                                                                  const std::vector<int>& y,
                                                                  double lambda);

// Same probe but returning the raw signal tensors (test hook).
std::vector<std::pair<std::string, Tensor>> reversed_signal_tensors(const Model& main_model,
                                                                    const Model& aux_model,
                                                                    const Tensor& x,
                                                                    const std::vector<int>& y,
                                                                    double lambda);

}  // namespace great
