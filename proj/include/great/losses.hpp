#pragma once

#include <vector>

#include "great/tape.hpp"

namespace great {

Tensor onehot(const std::vector<int>& labels, int classes);

// Softmax cross-entropy over a [batch x classes] logit matrix, mean over the
// batch. Keeps the probability node around so callers can backpropagate a
// modified output gradient from it, and exposes the analytic per-sample
// gradients in both logit space and probability space.
struct CeLoss {
    Tensor loss;       // scalar, on tape when logits are
    Tensor logits;
    Tensor log_probs;  // log_softmax node
    Tensor probs;      // softmax node
    std::vector<int> labels;
    bool clamped = false;  // true-class probability underflowed in grad_wrt_probs

    // Per-sample gradient of -log p_y w.r.t. logits: softmax(logits) - onehot(y).
    Tensor grad_wrt_logits() const;
    // Per-sample gradient w.r.t. probabilities: -1/p_y at index y, 0 elsewhere.
    Tensor grad_wrt_probs();
};

CeLoss softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// Mean squared error, mean over all elements.
Tensor mse(const Tensor& prediction, const Tensor& target);

// 1 - |cos similarity| per row of a [batch x dim] matrix, mean over rows.
// Throws if any row of either input has zero norm.
Tensor cosine_loss(const Tensor& prediction, const Tensor& target);

// Binary cross-entropy from logits (single column), mean over the batch.
// label is the common target (0 or 1) for the whole batch.
Tensor bce_with_logits(const Tensor& logits, double label);

// KL(softmax(teacher/T) || softmax(student/T)), mean over the batch. The
// teacher side is treated as a constant.
Tensor soft_target_kl(const Tensor& student_logits, const Tensor& teacher_logits, double temperature);

double accuracy(const Tensor& logits, const std::vector<int>& labels);

}  // namespace great
