#include "great/losses.hpp"

#include <algorithm>
#include <cmath>

namespace great {

Tensor onehot(const std::vector<int>& labels, int classes) {
    std::vector<double> v(labels.size() * static_cast<std::size_t>(classes), 0.0);
    for (std::size_t b = 0; b < labels.size(); ++b) {
        if (labels[b] < 0 || labels[b] >= classes)
            throw shape_error("onehot: label " + std::to_string(labels[b]) + " out of range [0," +
                              std::to_string(classes) + ")");
        v[b * static_cast<std::size_t>(classes) + static_cast<std::size_t>(labels[b])] = 1.0;
    }
    return Tensor::from({static_cast<int>(labels.size()), classes}, std::move(v));
}

CeLoss softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.shape.size() != 2)
        throw shape_error("softmax_cross_entropy: logits must be [batch,classes], got " + shape_str(logits.shape));
    const int B = logits.shape[0], C = logits.shape[1];
    if (static_cast<int>(labels.size()) != B)
        throw shape_error("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                          std::to_string(B));
    CeLoss out;
    out.logits = logits;
    out.labels = labels;
    out.log_probs = log_softmax(logits);
    out.probs = softmax(logits);
    Tensor y = onehot(labels, C);
    out.loss = scale(sum_all(mul(out.log_probs, y)), -1.0 / static_cast<double>(B));
    return out;
}

Tensor CeLoss::grad_wrt_logits() const {
    const int B = logits.shape[0], C = logits.shape[1];
    std::vector<double> g = probs.values();
    for (int b = 0; b < B; ++b) g[static_cast<std::size_t>(b) * C + static_cast<std::size_t>(labels[static_cast<std::size_t>(b)])] -= 1.0;
    return Tensor::from({B, C}, std::move(g));
}

Tensor CeLoss::grad_wrt_probs() {
    const int B = logits.shape[0], C = logits.shape[1];
    std::vector<double> g(static_cast<std::size_t>(B) * C, 0.0);
    for (int b = 0; b < B; ++b) {
        double p = probs.values()[static_cast<std::size_t>(b) * C + static_cast<std::size_t>(labels[static_cast<std::size_t>(b)])];
        if (p < 1e-12) {
            p = 1e-12;
            clamped = true;
        }
        g[static_cast<std::size_t>(b) * C + static_cast<std::size_t>(labels[static_cast<std::size_t>(b)])] = -1.0 / p;
    }
    return Tensor::from({B, C}, std::move(g));
}

Tensor mse(const Tensor& prediction, const Tensor& target) {
    if (prediction.shape != target.shape)
        throw shape_error("mse: shape mismatch " + shape_str(prediction.shape) + " vs " + shape_str(target.shape));
    Tensor d = sub(prediction, target);
    return mean_all(mul(d, d));
}

Tensor cosine_loss(const Tensor& prediction, const Tensor& target) {
    if (prediction.shape != target.shape || prediction.shape.size() != 2)
        throw shape_error("cosine_loss: need matching [batch,dim] inputs, got " + shape_str(prediction.shape) +
                          " and " + shape_str(target.shape));
    const int B = prediction.shape[0], D = prediction.shape[1];
    for (int b = 0; b < B; ++b) {
        double np = 0.0, nt = 0.0;
        for (int d = 0; d < D; ++d) {
            np += prediction.values()[static_cast<std::size_t>(b) * D + d] * prediction.values()[static_cast<std::size_t>(b) * D + d];
            nt += target.values()[static_cast<std::size_t>(b) * D + d] * target.values()[static_cast<std::size_t>(b) * D + d];
        }
        if (np == 0.0 || nt == 0.0)
            throw shape_error("cosine_loss: zero-norm vector in row " + std::to_string(b));
    }
    Tensor dots = reduce_sum_to(mul(prediction, target), {B, 1});
    Tensor np = sqrt_t(reduce_sum_to(mul(prediction, prediction), {B, 1}));
    Tensor nt = sqrt_t(reduce_sum_to(mul(target, target), {B, 1}));
    Tensor cos = mul(dots, recip(mul(np, nt)));
    return mean_all(sub(Tensor::full({B, 1}, 1.0), abs_t(cos)));
}

Tensor bce_with_logits(const Tensor& logits, double label) {
    if (label != 0.0 && label != 1.0) throw shape_error("bce_with_logits: label must be 0 or 1");
    // -log f(z) = softplus(-z),  -log(1 - f(z)) = softplus(z)
    return mean_all(softplus(label == 1.0 ? neg(logits) : logits));
}

Tensor soft_target_kl(const Tensor& student_logits, const Tensor& teacher_logits, double temperature) {
    if (student_logits.shape != teacher_logits.shape)
        throw shape_error("soft_target_kl: shape mismatch");
    if (!(temperature > 0.0)) throw shape_error("soft_target_kl: temperature must be positive");
    const int B = student_logits.shape[0];
    Tensor s_log = log_softmax(scale(student_logits, 1.0 / temperature));
    // Teacher distribution is a constant (no gradient flows into the teacher).
    Tensor t_scaled = scale(teacher_logits.detached(), 1.0 / temperature);
    Tensor t_log = log_softmax(t_scaled);
    Tensor t_prob = softmax(t_scaled);
    Tensor kl_terms = mul(t_prob, sub(t_log, s_log));
    return scale(sum_all(kl_terms), 1.0 / static_cast<double>(B));
}

double accuracy(const Tensor& logits, const std::vector<int>& labels) {
    const int B = logits.shape[0], C = logits.shape[1];
    int correct = 0;
    for (int b = 0; b < B; ++b) {
        const double* row = logits.data->data() + static_cast<std::int64_t>(b) * C;
        int arg = 0;
        for (int c = 1; c < C; ++c)
            if (row[c] > row[arg]) arg = c;
        if (arg == labels[static_cast<std::size_t>(b)]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(B);
}

}  // namespace great
