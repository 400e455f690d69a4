#include "great/multitask.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace great {

GalBank GalBank::ones(const Shape& feature_shape, int tasks, double floor) {
    GalBank bank;
    bank.floor = floor;
    for (int i = 0; i < tasks; ++i) bank.gammas.push_back(Tensor::full(feature_shape, 1.0));
    return bank;
}

double GalBank::min_element() const {
    double m = std::numeric_limits<double>::infinity();
    for (const Tensor& g : gammas)
        for (double v : g.values()) m = std::min(m, v);
    return m;
}

std::vector<double> normalize_task_losses(const std::vector<double>& losses,
                                          const std::vector<double>& initial) {
    if (losses.size() != initial.size())
        throw shape_error("normalize_task_losses: " + std::to_string(losses.size()) + " losses vs " +
                          std::to_string(initial.size()) + " initial losses");
    std::vector<double> out(losses.size());
    for (std::size_t i = 0; i < losses.size(); ++i) {
        if (initial[i] <= 1e-12)
            throw shape_error("normalize_task_losses: degenerate initial loss " + std::to_string(initial[i]) +
                              " for task " + std::to_string(i));
        out[i] = losses[i] / initial[i];
    }
    return out;
}

namespace {

Tensor task_loss_node(const TaskDef& task, const Tensor& out, const TaskBatch& batch) {
    if (task.loss == TaskDef::LossKind::CrossEntropy)
        return softmax_cross_entropy(out, batch.labels).loss;
    return mse(out, batch.targets.detached());
}

Shape gamma_broadcast_shape(const Shape& feature_shape) {
    // [F...] -> [1, F...] aligns the per-task gamma over the batch dimension
    Shape s = feature_shape;
    s.insert(s.begin(), 1);
    return s;
}

}  // namespace

std::vector<double> task_losses(const MultiHeadModel& model, const std::vector<TaskDef>& tasks,
                                const Tensor& x, const std::vector<TaskBatch>& data) {
    Tensor f = eval_forward(model.encoder, x);
    std::vector<double> out;
    out.reserve(tasks.size());
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        Tensor y = forward(bind_values(model.decoders[i].second), f);
        out.push_back(task_loss_node(tasks[i], y, data[i]).scalar());
    }
    return out;
}

MultitaskStepReport multitask_train_step(MultiHeadModel& model, GalBank& gals, Model& classifier,
                                         Optimizer& encoder_opt, std::vector<Optimizer>& decoder_opts,
                                         Optimizer& classifier_opt, Optimizer& gal_opt,
                                         const std::vector<TaskDef>& tasks, const Tensor& x,
                                         const std::vector<TaskBatch>& data,
                                         const std::vector<double>& initial_losses,
                                         const MultitaskConfig& cfg, double lr_multiplier) {
    MultitaskStepReport report;
    const int n_tasks = static_cast<int>(tasks.size());
    try {
        for (const Tensor& g : gals.gammas)
            for (double v : g.values())
                if (v <= 0.0) throw shape_error("multitask_train_step: nonpositive GAL element");

        Tape tape;
        BoundModel benc = bind(model.encoder, tape, true);
        Tensor xb = tape.leaf(x, false, "x");
        Tensor f = forward(benc, xb);
        const int B = f.shape[0];

        // normalized task losses and per-task feature gradients (with graph)
        std::vector<Tensor> feature_grads;
        std::vector<BoundModel> bdecs;
        std::vector<BackwardResult> dec_results;
        for (int i = 0; i < n_tasks; ++i) {
            bdecs.push_back(bind(model.decoders[static_cast<std::size_t>(i)].second, tape, true));
            Tensor out = forward(bdecs.back(), f);
            Tensor raw = task_loss_node(tasks[static_cast<std::size_t>(i)], out, data[static_cast<std::size_t>(i)]);
            report.raw_losses.push_back(raw.scalar());
            Tensor norm = scale(raw, 1.0 / initial_losses[static_cast<std::size_t>(i)]);
            report.normalized_losses.push_back(norm.scalar());
            std::vector<Tensor> wrt{f};
            for (Tensor& t : bdecs.back().leaf_tensors()) wrt.push_back(t);
            BackwardOptions go;
            go.create_graph = true;
            BackwardResult res = tape.backward(norm, wrt, go);
            feature_grads.push_back(res.grads[0]);
            res.grads.erase(res.grads.begin());
            dec_results.push_back(std::move(res));
        }
        if (static_cast<int>(initial_losses.size()) != n_tasks)
            throw shape_error("multitask_train_step: initial loss count mismatch");

        std::string diag;
        // decoder updates from the normalized losses
        for (int i = 0; i < n_tasks; ++i)
            if (!decoder_opts[static_cast<std::size_t>(i)].step(
                    model.decoders[static_cast<std::size_t>(i)].second.param_refs(),
                    dec_results[static_cast<std::size_t>(i)].grads, lr_multiplier, &diag)) {
                report.ok = false;
                report.diagnostic = "decoder " + tasks[static_cast<std::size_t>(i)].name + ": " + diag;
                return report;
            }

        // encoder update from sum_i g_i * gamma_i seeded at the feature node
        const Shape gshape = gamma_broadcast_shape(gals.gammas[0].shape);
        Tensor seed;
        for (int i = 0; i < n_tasks; ++i) {
            Tensor scaled = mul(feature_grads[static_cast<std::size_t>(i)].detached(),
                                broadcast_to(reshape(gals.gammas[static_cast<std::size_t>(i)].detached(), gshape),
                                             f.shape));
            seed = i == 0 ? scaled : add(seed, scaled);
        }
        BackwardOptions eo;
        eo.seed = &seed;
        BackwardResult enc_grads = tape.backward(f, benc.leaf_tensors(), eo);
        if (!encoder_opt.step(model.encoder.param_refs(), enc_grads.grads, lr_multiplier, &diag)) {
            report.ok = false;
            report.diagnostic = "encoder: " + diag;
            return report;
        }

        // auxiliary task classifier on the gamma-scaled per-sample gradients
        // (feature gradients are batch means; scaling by B restores the
        // per-sample rows the classifier consumes)
        if (cfg.classifier_enabled && n_tasks >= 2) {
            std::vector<int> task_labels(static_cast<std::size_t>(B) * static_cast<std::size_t>(n_tasks));
            std::vector<Tensor> per_sample_grads;
            std::vector<Tensor> scaled_inputs;
            for (int i = 0; i < n_tasks; ++i) {
                Tensor g_vals = scale(feature_grads[static_cast<std::size_t>(i)].detached(),
                                      static_cast<double>(B));
                per_sample_grads.push_back(g_vals);
                Tensor g_const = tape.leaf(g_vals, false, "g_task" + std::to_string(i));
                Tensor gamma_leaf = tape.leaf(gals.gammas[static_cast<std::size_t>(i)], true,
                                              "gamma" + std::to_string(i));
                // classifier pass: gamma participates at its current value
                scaled_inputs.push_back(
                    mul(g_const, broadcast_to(reshape(gamma_leaf, gshape), f.shape)));
                std::fill(task_labels.begin() + static_cast<std::int64_t>(i) * B,
                          task_labels.begin() + static_cast<std::int64_t>(i + 1) * B, i);
            }
            Tensor stacked = concat(scaled_inputs, 0);
            BoundModel bcls = bind(classifier, tape, true);
            CeLoss cls_ce = softmax_cross_entropy(forward(bcls, stacked), task_labels);
            report.classifier_loss = cls_ce.loss.scalar();
            report.classifier_accuracy = accuracy(cls_ce.logits, task_labels);
            BackwardResult cls_grads = tape.backward(cls_ce.loss, bcls.leaf_tensors());
            if (!classifier_opt.step(classifier.param_refs(), cls_grads.grads, lr_multiplier, &diag)) {
                report.ok = false;
                report.diagnostic = "classifier: " + diag;
                return report;
            }

            // GAL update from the reversed gradient of a fresh classifier
            // pass with the updated weights
            if (cfg.gal_enabled) {
                std::vector<Tensor> gamma_leaves;
                std::vector<Tensor> rev_inputs;
                for (int i = 0; i < n_tasks; ++i) {
                    Tensor g_const = tape.leaf(per_sample_grads[static_cast<std::size_t>(i)], false);
                    Tensor gamma_leaf = tape.leaf(gals.gammas[static_cast<std::size_t>(i)], true);
                    gamma_leaves.push_back(gamma_leaf);
                    Tensor reversed = gradient_reversal(gamma_leaf, 1.0);
                    rev_inputs.push_back(mul(g_const, broadcast_to(reshape(reversed, gshape), f.shape)));
                }
                Tensor stacked2 = concat(rev_inputs, 0);
                BoundModel bcls2 = bind(classifier, tape, false);
                CeLoss cls_ce2 = softmax_cross_entropy(forward(bcls2, stacked2), task_labels);
                BackwardResult gal_grads = tape.backward(cls_ce2.loss, gamma_leaves);
                ParamRefs grefs;
                for (int i = 0; i < n_tasks; ++i)
                    grefs.emplace_back("gamma" + std::to_string(i), &gals.gammas[static_cast<std::size_t>(i)]);
                if (!gal_opt.step(grefs, gal_grads.grads, lr_multiplier, &diag)) {
                    report.ok = false;
                    report.diagnostic = "gal: " + diag;
                    return report;
                }
                for (Tensor& g : gals.gammas)
                    for (double& v : g.mutable_data()) v = std::max(v, gals.floor);
            }
        }

        for (const Tensor& g : gals.gammas) {
            double mn = g.values()[0], mx = g.values()[0], s = 0.0;
            for (double v : g.values()) {
                mn = std::min(mn, v);
                mx = std::max(mx, v);
                s += v;
            }
            report.gamma_stats.push_back({mn, s / static_cast<double>(g.numel()), mx});
        }
    } catch (const numeric_error& e) {
        report.ok = false;
        report.diagnostic = e.what();
    }
    return report;
}

double task_classifier_accuracy(const MultiHeadModel& model, const GalBank& gals,
                                const Model& classifier, const std::vector<TaskDef>& tasks,
                                const Tensor& x, const std::vector<TaskBatch>& data,
                                const std::vector<double>& initial_losses) {
    const int n_tasks = static_cast<int>(tasks.size());
    Tape tape;
    BoundModel benc = bind(model.encoder, tape, false);
    Tensor xb = tape.leaf(x, false, "x");
    Tensor f = forward(benc, xb);
    const int B = f.shape[0];
    // feature gradients of the normalized losses; encoder itself frozen, so
    // mark the feature node as the sole differentiable source
    std::vector<Tensor> scaled;
    std::vector<int> task_labels(static_cast<std::size_t>(B) * static_cast<std::size_t>(n_tasks));
    const Shape gshape = gamma_broadcast_shape(gals.gammas[0].shape);
    Tensor f_leaf = tape.leaf(f.detached(), true, "f");
    for (int i = 0; i < n_tasks; ++i) {
        BoundModel bdec = bind(model.decoders[static_cast<std::size_t>(i)].second, tape, false);
        Tensor out = forward(bdec, f_leaf);
        Tensor raw = task_loss_node(tasks[static_cast<std::size_t>(i)], out, data[static_cast<std::size_t>(i)]);
        Tensor norm = scale(raw, 1.0 / initial_losses[static_cast<std::size_t>(i)]);
        Tensor sum_loss = scale(norm, static_cast<double>(B));
        Tensor g = tape.backward(sum_loss, {f_leaf}).grads[0];
        scaled.push_back(mul(g, broadcast_to(reshape(gals.gammas[static_cast<std::size_t>(i)].detached(), gshape),
                                             f.shape)));
        std::fill(task_labels.begin() + static_cast<std::int64_t>(i) * B,
                  task_labels.begin() + static_cast<std::int64_t>(i + 1) * B, i);
    }
    Tensor stacked = concat(scaled, 0);
    Tensor logits = eval_forward(classifier, stacked.detached());
    return accuracy(logits, task_labels);
}

}  // namespace great
