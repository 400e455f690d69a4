#include "great/distill.hpp"

#include <algorithm>
#include <cmath>

namespace great {

Tensor teacher_gradient(const Model& teacher, const Tensor& x, const std::vector<int>& y) {
    Tape tape;
    Tensor xb = tape.leaf(x, true, "x");
    BoundModel bt = bind(teacher, tape, false);
    CeLoss ce = softmax_cross_entropy(forward(bt, xb), y);
    Tensor sum_loss = scale(ce.loss, static_cast<double>(x.shape[0]));
    return tape.backward(sum_loss, {xb}).grads[0];
}

namespace {

std::vector<double> disc_probs(const Model& f, const Tensor& g) {
    Tensor z = eval_forward(f, g);
    if (z.shape.size() != 2 || z.shape[1] != 1)
        throw shape_error("discriminator must emit a single logit per row, got " + shape_str(z.shape));
    std::vector<double> p(z.values().size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double zi = z.values()[i];
        double prob = zi >= 0.0 ? 1.0 / (1.0 + std::exp(-zi)) : std::exp(zi) / (1.0 + std::exp(zi));
        p[i] = std::clamp(prob, 1e-12, 1.0 - 1e-12);
    }
    return p;
}

Tensor standardize_rows(const Tensor& g) {
    const int B = g.shape[0];
    const std::int64_t row = g.numel() / B;
    Shape stat_shape(g.shape.size(), 1);
    stat_shape[0] = B;
    Tensor mean_row = scale(reduce_sum_to(g, stat_shape), 1.0 / static_cast<double>(row));
    Tensor centered = sub(g, broadcast_to(mean_row, g.shape));
    Tensor var = scale(reduce_sum_to(mul(centered, centered), stat_shape), 1.0 / static_cast<double>(row));
    Tensor stdev = sqrt_t(add(var, Tensor::full(stat_shape, 1e-12)));
    return mul(centered, broadcast_to(recip(stdev), g.shape));
}

}  // namespace

double discriminator_objective(const Model& f, const Tensor& g_t, const Tensor& g_s) {
    double d = 0.0;
    const std::vector<double> pt = disc_probs(f, g_t);
    const std::vector<double> ps = disc_probs(f, g_s);
    for (double p : pt) d += std::log(p);
    for (double p : ps) d += std::log(1.0 - p);
    return d / static_cast<double>(pt.size());
}

double discriminator_accuracy(const Model& f, const Tensor& g_t, const Tensor& g_s) {
    int correct = 0;
    const std::vector<double> pt = disc_probs(f, g_t);
    const std::vector<double> ps = disc_probs(f, g_s);
    for (double p : pt)
        if (p > 0.5) ++correct;
    for (double p : ps)
        if (p < 0.5) ++correct;
    return static_cast<double>(correct) / static_cast<double>(pt.size() + ps.size());
}

DistillStepReport distill_train_step(Model& student, const Model& teacher, Model& discriminator,
                                     Optimizer& student_opt, Optimizer& disc_opt, const Tensor& x,
                                     const std::vector<int>& y, const DistillConfig& cfg,
                                     double lr_multiplier) {
    DistillStepReport report;
    try {
        Tape tape;
        BoundModel bstud = bind(student, tape, true);
        Tensor xb = tape.leaf(x, true, "x");
        const int B = x.shape[0];

        CeLoss ce = softmax_cross_entropy(forward(bstud, xb), y);
        report.student_loss = ce.loss.scalar();

        // per-sample gradient tensors, student side with graph
        Tensor sum_loss = scale(ce.loss, static_cast<double>(B));
        BackwardOptions go;
        go.create_graph = true;
        Tensor g_s = tape.backward(sum_loss, {xb}, go).grads[0];
        if (cfg.standardize_gradients) g_s = standardize_rows(g_s);
        Tensor g_t = teacher_gradient(teacher, x, y);
        if (cfg.standardize_gradients) g_t = standardize_rows(g_t).detached();

        // discriminator update: teacher gradients labeled 1, student 0
        BoundModel bdisc = bind(discriminator, tape, true);
        Tensor in_t = tape.leaf(g_t, false, "g_t");
        Tensor in_s = tape.leaf(g_s.detached(), false, "g_s");
        Tensor bce_t = bce_with_logits(forward(bdisc, in_t), 1.0);
        Tensor bce_s = bce_with_logits(forward(bdisc, in_s), 0.0);
        Tensor disc_loss = add(bce_t, bce_s);
        report.disc_loss = disc_loss.scalar();
        report.d_value = -report.disc_loss;
        std::string diag;
        BackwardResult disc_grads = tape.backward(disc_loss, bdisc.leaf_tensors());
        if (!disc_opt.step(discriminator.param_refs(), disc_grads.grads, lr_multiplier, &diag)) {
            report.ok = false;
            report.diagnostic = "discriminator: " + diag;
            return report;
        }

        // student update: (1-alpha) supervised + reversed discriminator loss
        // on the student gradients, evaluated with the updated discriminator
        BoundModel bdisc2 = bind(discriminator, tape, false);
        Tensor g_rev = gradient_reversal(g_s, cfg.alpha);
        Tensor rev_loss = bce_with_logits(forward(bdisc2, g_rev), 0.0);
        Tensor total = add(scale(ce.loss, 1.0 - cfg.alpha), rev_loss);
        BackwardResult student_grads = tape.backward(total, bstud.leaf_tensors());
        if (!student_opt.step(student.param_refs(), student_grads.grads, lr_multiplier, &diag)) {
            report.ok = false;
            report.diagnostic = "student: " + diag;
            return report;
        }
    } catch (const numeric_error& e) {
        report.ok = false;
        report.diagnostic = e.what();
    }
    return report;
}

DistillStepReport soft_target_baseline_step(Model& student, const Model& teacher,
                                            Optimizer& student_opt, const Tensor& x,
                                            const std::vector<int>& y, double temperature,
                                            double mix, double lr_multiplier) {
    DistillStepReport report;
    try {
        Tape tape;
        BoundModel bstud = bind(student, tape, true);
        Tensor xb = tape.leaf(x, false, "x");
        Tensor logits = forward(bstud, xb);
        CeLoss ce = softmax_cross_entropy(logits, y);
        report.student_loss = ce.loss.scalar();
        Tensor teacher_logits = eval_forward(teacher, x);
        Tensor kl = soft_target_kl(logits, teacher_logits, temperature);
        Tensor total = add(scale(ce.loss, 1.0 - mix), scale(kl, mix * temperature * temperature));
        std::string diag;
        BackwardResult grads = tape.backward(total, bstud.leaf_tensors());
        if (!student_opt.step(student.param_refs(), grads.grads, lr_multiplier, &diag)) {
            report.ok = false;
            report.diagnostic = diag;
        }
    } catch (const numeric_error& e) {
        report.ok = false;
        report.diagnostic = e.what();
    }
    return report;
}

DistillStepReport supervised_step(Model& student, Optimizer& opt, const Tensor& x,
                                  const std::vector<int>& y, double lr_multiplier) {
    DistillStepReport report;
    try {
        Tape tape;
        BoundModel bstud = bind(student, tape, true);
        Tensor xb = tape.leaf(x, false, "x");
        CeLoss ce = softmax_cross_entropy(forward(bstud, xb), y);
        report.student_loss = ce.loss.scalar();
        std::string diag;
        BackwardResult grads = tape.backward(ce.loss, bstud.leaf_tensors());
        if (!opt.step(student.param_refs(), grads.grads, lr_multiplier, &diag)) {
            report.ok = false;
            report.diagnostic = diag;
        }
    } catch (const numeric_error& e) {
        report.ok = false;
        report.diagnostic = e.what();
    }
    return report;
}

}  // namespace great
