#include "great/defense.hpp"

#include <cmath>

namespace great {

Tensor mask_true_class(const Tensor& grad_probs, const std::vector<int>& y) {
    if (grad_probs.shape.size() != 2)
        throw shape_error("mask_true_class: expected [batch,classes], got " + shape_str(grad_probs.shape));
    const int B = grad_probs.shape[0], C = grad_probs.shape[1];
    std::vector<double> out(static_cast<std::size_t>(B) * C, 0.0);
    for (int b = 0; b < B; ++b) {
        const int yb = y[static_cast<std::size_t>(b)];
        out[static_cast<std::size_t>(b) * C + static_cast<std::size_t>(yb)] =
            grad_probs.values()[static_cast<std::size_t>(b) * C + static_cast<std::size_t>(yb)];
    }
    return Tensor::from({B, C}, std::move(out));
}

Tensor greace_output_gradient(const Tensor& grad_a_C, const Tensor& aux_probs,
                              const std::vector<int>& y, double beta) {
    if (beta < 0.0) throw shape_error("greace_output_gradient: beta must be nonnegative");
    if (grad_a_C.shape != aux_probs.shape || grad_a_C.shape.size() != 2)
        throw shape_error("greace_output_gradient: shape mismatch " + shape_str(grad_a_C.shape) + " vs " +
                          shape_str(aux_probs.shape));
    const int B = grad_a_C.shape[0], C = grad_a_C.shape[1];
    for (int b = 0; b < B; ++b) {
        double s = 0.0;
        for (int c = 0; c < C; ++c) s += aux_probs.values()[static_cast<std::size_t>(b) * C + static_cast<std::size_t>(c)];
        if (std::fabs(s - 1.0) > 1e-6)
            throw shape_error("greace_output_gradient: aux_probs row " + std::to_string(b) +
                              " sums to " + std::to_string(s) + ", not a distribution");
    }
    std::vector<double> out = grad_a_C.values();
    for (int b = 0; b < B; ++b) {
        const int yb = y[static_cast<std::size_t>(b)];
        for (int c = 0; c < C; ++c) {
            if (c == yb) continue;
            out[static_cast<std::size_t>(b) * C + static_cast<std::size_t>(c)] +=
                beta * aux_probs.values()[static_cast<std::size_t>(b) * C + static_cast<std::size_t>(c)];
        }
    }
    return Tensor::from({B, C}, std::move(out));
}

namespace {

// Per-sample gradients come from the summed (not averaged) loss, so each
// row is the full gradient of its own sample's loss.
struct MaskedGradient {
    Tensor g;                                           // [B, ...], with graph
    CeLoss ce;                                          // mean loss (reporting, GREACE path)
    std::vector<std::pair<std::string, Tensor>> taps;   // layer activations
    std::vector<Tensor> layer_grads;                    // gradient nodes per tap
};

MaskedGradient masked_gradient_on(Tape& tape, const BoundModel& bm, const Tensor& x_leaf,
                                  const std::vector<int>& y, bool want_taps) {
    MaskedGradient mg;
    Tensor logits = forward(bm, x_leaf, want_taps ? &mg.taps : nullptr);
    mg.ce = softmax_cross_entropy(logits, y);
    const int B = logits.shape[0];
    Tensor sum_loss = scale(mg.ce.loss, static_cast<double>(B));
    std::vector<Tensor> wrt{x_leaf};
    for (auto& [name, t] : mg.taps) wrt.push_back(t);
    BackwardOptions opts;
    opts.create_graph = true;
    BackwardResult res = tape.backward(sum_loss, wrt, opts);
    mg.g = res.grads[0];
    mg.layer_grads.assign(res.grads.begin() + 1, res.grads.end());
    return mg;
}

double mean_row_norm(const Tensor& g) {
    const int B = g.shape[0];
    const std::int64_t row = g.numel() / B;
    double acc = 0.0;
    for (int b = 0; b < B; ++b) {
        double s = 0.0;
        for (std::int64_t i = 0; i < row; ++i) {
            const double v = g.values()[static_cast<std::size_t>(b * row + i)];
            s += v * v;
        }
        acc += std::sqrt(s);
    }
    return acc / static_cast<double>(B);
}

Tensor normalize_rows(const Tensor& g) {
    const int B = g.shape[0];
    Shape norm_shape(g.shape.size(), 1);
    norm_shape[0] = B;
    Tensor sq = reduce_sum_to(mul(g, g), norm_shape);
    Tensor norm = sqrt_t(add(sq, Tensor::full(norm_shape, 1e-12)));
    return mul(g, broadcast_to(recip(norm), g.shape));
}

}  // namespace

Tensor masked_input_gradient(const Model& m, const Tensor& x, const std::vector<int>& y) {
    Tape tape;
    Tensor xb = tape.leaf(x, true, "x");
    BoundModel bm = bind(m, tape, true);
    return masked_gradient_on(tape, bm, xb, y, false).g;
}

DefenseStepReport defense_train_step(Model& main_model, Model& aux_model, Optimizer& main_opt,
                                     Optimizer& aux_opt, const Tensor& x, const std::vector<int>& y,
                                     const GreaceConfig& cfg, double alpha, double beta,
                                     double lr_multiplier, bool probe_layers) {
    DefenseStepReport report;
    try {
        Tape tape;
        BoundModel bmain = bind(main_model, tape, true);
        Tensor xb = tape.leaf(x, true, "x");
        const int B = x.shape[0];

        // main forward + per-sample masked gradient, with graph
        MaskedGradient mg = masked_gradient_on(tape, bmain, xb, y, probe_layers);
        report.main_loss = mg.ce.loss.scalar();
        report.grad_norm_mean = mean_row_norm(mg.g);
        Tensor g = cfg.normalize_gradients ? normalize_rows(mg.g) : mg.g;

        // auxiliary update on the detached gradients (it never reaches back
        // into the main network)
        BoundModel baux = bind(aux_model, tape, true);
        Tensor aux_in = tape.leaf(g.detached(), false, "aux_in");
        CeLoss aux_ce = softmax_cross_entropy(forward(baux, aux_in), y);
        report.aux_loss = aux_ce.loss.scalar();
        report.aux_accuracy = accuracy(aux_ce.logits, y);
        BackwardResult aux_grads = tape.backward(aux_ce.loss, baux.leaf_tensors());
        std::string diag;
        if (!aux_opt.step(aux_model.param_refs(), aux_grads.grads, lr_multiplier, &diag)) {
            report.ok = false;
            report.diagnostic = "aux: " + diag;
            return report;
        }

        // fresh auxiliary pass with the updated weights; the reversal carries
        // -alpha * dJ/dg back through the gradient graph into the main weights
        BoundModel baux2 = bind(aux_model, tape, false);
        Tensor g_rev = gradient_reversal(g, alpha);
        CeLoss aux_ce2 = softmax_cross_entropy(forward(baux2, g_rev), y);

        // GREACE: add beta-weighted auxiliary softmax mass to the negative
        // classes of the probability-space output gradient
        Tensor grad_probs = mg.ce.grad_wrt_probs();
        if (mg.ce.clamped) report.diagnostic = "true-class probability clamped in output gradient";
        if (!cfg.unmasked) grad_probs = mask_true_class(grad_probs, y);
        Tensor aux_sm = softmax(aux_ce2.logits.detached());
        Tensor modified = greace_output_gradient(grad_probs, aux_sm, y, beta);
        Tensor seed = scale(modified, 1.0 / static_cast<double>(B));  // batch-mean semantics

        // single main update from both signals: the seeded output gradient
        // and the reversed auxiliary loss
        Tensor greace_term = sum_all(mul(mg.ce.probs, tape.leaf(seed, false, "greace_seed")));
        Tensor total = add(greace_term, aux_ce2.loss);
        std::vector<Tensor> wrt = bmain.leaf_tensors();
        for (Tensor& lg : mg.layer_grads) wrt.push_back(lg);
        BackwardResult main_grads = tape.backward(total, wrt);
        if (probe_layers) {
            for (std::size_t i = 0; i < mg.taps.size(); ++i) {
                const Tensor& sig = main_grads.grads[bmain.leaves.size() + i];
                double s = 0.0;
                for (double v : sig.values()) s += v * v;
                report.probe.emplace_back(mg.taps[i].first, std::sqrt(s));
            }
            main_grads.grads.resize(bmain.leaves.size());
        }
        if (!main_opt.step(main_model.param_refs(), main_grads.grads, lr_multiplier, &diag)) {
            report.ok = false;
            report.diagnostic = "main: " + diag;
            return report;
        }
        if (!std::isfinite(report.main_loss) || !std::isfinite(report.aux_loss)) {
            report.ok = false;
            report.diagnostic = "non-finite loss";
        }
    } catch (const numeric_error& e) {
        report.ok = false;
        report.diagnostic = e.what();
    }
    return report;
}

namespace {

std::vector<std::pair<std::string, Tensor>> probe_impl(const Model& main_model, const Model& aux_model,
                                                       const Tensor& x, const std::vector<int>& y,
                                                       double lambda) {
    Tape tape;
    BoundModel bmain = bind(main_model, tape, true);
    Tensor xb = tape.leaf(x, true, "x");
    MaskedGradient mg = masked_gradient_on(tape, bmain, xb, y, true);

    BoundModel baux = bind(aux_model, tape, false);
    Tensor g_rev = gradient_reversal(mg.g, lambda);
    CeLoss aux_ce = softmax_cross_entropy(forward(baux, g_rev), y);

    std::vector<Tensor> wrt(mg.layer_grads.begin(), mg.layer_grads.end());
    BackwardResult res = tape.backward(aux_ce.loss, wrt);
    std::vector<std::pair<std::string, Tensor>> out;
    for (std::size_t i = 0; i < mg.taps.size(); ++i) out.emplace_back(mg.taps[i].first, res.grads[i]);
    return out;
}

}  // namespace

std::vector<std::pair<std::string, Tensor>> reversed_signal_tensors(const Model& main_model,
                                                                    const Model& aux_model,
                                                                    const Tensor& x,
                                                                    const std::vector<int>& y,
                                                                    double lambda) {
    return probe_impl(main_model, aux_model, x, y, lambda);
}

std::vector<std::pair<std::string, double>> reversed_signal_probe(const Model& main_model,
                                                                  const Model& aux_model,
                                                                  const Tensor& x,
                                                                  const std::vector<int>& y,
                                                                  double lambda) {
    std::vector<std::pair<std::string, double>> out;
    for (auto& [name, t] : probe_impl(main_model, aux_model, x, y, lambda)) {
        double s = 0.0;
        for (double v : t.values()) s += v * v;
        out.emplace_back(name, std::sqrt(s));
    }
    return out;
}

}  // namespace great
