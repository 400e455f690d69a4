#include "great/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "great/losses.hpp"
#include "great/rng.hpp"

namespace great {

const char* attack_mode_name(AttackSpec::Mode m) {
    switch (m) {
        case AttackSpec::Mode::NonTargeted: return "non-targeted";
        case AttackSpec::Mode::TargetedWorst: return "targeted-worst";
        case AttackSpec::Mode::TargetedRandom: return "targeted-random";
    }
    return "?";
}

AttackSpec::Mode attack_mode_from_name(const std::string& s) {
    if (s == "non-targeted") return AttackSpec::Mode::NonTargeted;
    if (s == "targeted-worst") return AttackSpec::Mode::TargetedWorst;
    if (s == "targeted-random") return AttackSpec::Mode::TargetedRandom;
    throw config_error("unknown attack mode '" + s + "'");
}

Tensor input_gradient(const Model& m, const Tensor& x, const std::vector<int>& labels) {
    Tape tape;
    Tensor xb = tape.leaf(x, true, "attack_x");
    BoundModel bm = bind(m, tape, false);
    CeLoss ce = softmax_cross_entropy(forward(bm, xb), labels);
    return tape.backward(ce.loss, {xb}).grads[0];
}

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

Tensor attack_iterations(const Model& m, const Tensor& x, const std::vector<int>& y_or_target,
                         const AttackSpec& spec) {
    if (spec.epsilon < 0.0) throw shape_error("attack: epsilon must be nonnegative");
    if (spec.k < 1) throw shape_error("attack: k must be >= 1");
    const double step = spec.epsilon / static_cast<double>(spec.k);
    const double dir = spec.mode == AttackSpec::Mode::NonTargeted ? 1.0 : -1.0;
    std::vector<double> adv = x.values();
    const std::vector<double>& orig = x.values();
    for (int it = 0; it < spec.k; ++it) {
        Tensor g = input_gradient(m, Tensor::from(x.shape, adv), y_or_target);
        for (std::size_t i = 0; i < adv.size(); ++i) {
            double v = adv[i] + dir * step * sign(g.values()[i]);
            v = std::clamp(v, orig[i] - spec.epsilon, orig[i] + spec.epsilon);
            adv[i] = std::clamp(v, spec.lo, spec.hi);
        }
    }
    return Tensor::from(x.shape, std::move(adv));
}

}  // namespace

Tensor fgsm(const Model& m, const Tensor& x, const std::vector<int>& y_or_target, const AttackSpec& spec) {
    if (spec.k != 1) throw shape_error("fgsm: spec.k must be 1 (use ifgsm)");
    return attack_iterations(m, x, y_or_target, spec);
}

Tensor ifgsm(const Model& m, const Tensor& x, const std::vector<int>& y_or_target, const AttackSpec& spec) {
    return attack_iterations(m, x, y_or_target, spec);
}

int select_target(const std::vector<double>& probs, int y, AttackSpec::Mode mode, std::mt19937_64& rng) {
    const int C = static_cast<int>(probs.size());
    if (C < 2) throw shape_error("select_target: need at least 2 classes");
    if (mode == AttackSpec::Mode::TargetedWorst) {
        int best = -1;
        for (int c = 0; c < C; ++c) {
            if (c == y) continue;
            if (best < 0 || probs[static_cast<std::size_t>(c)] < probs[static_cast<std::size_t>(best)]) best = c;
        }
        return best;
    }
    if (mode == AttackSpec::Mode::TargetedRandom) {
        std::uniform_int_distribution<int> dist(0, C - 2);
        int idx = dist(rng);
        return idx >= y ? idx + 1 : idx;
    }
    throw shape_error("select_target: not a targeted mode");
}

std::vector<int> select_targets(const Model& m, const Tensor& x, const std::vector<int>& y,
                                AttackSpec::Mode mode, std::mt19937_64& rng) {
    Tensor logits = eval_forward(m, x);
    Tensor probs = softmax(logits);
    const int B = probs.shape[0], C = probs.shape[1];
    std::vector<int> targets(static_cast<std::size_t>(B));
    for (int b = 0; b < B; ++b) {
        std::vector<double> row(probs.values().begin() + static_cast<std::int64_t>(b) * C,
                                probs.values().begin() + static_cast<std::int64_t>(b + 1) * C);
        targets[static_cast<std::size_t>(b)] = select_target(row, y[static_cast<std::size_t>(b)], mode, rng);
    }
    return targets;
}

namespace {

Tensor slice_batch(const Tensor& x, int start, int count) {
    return slice(x, 0, start, count).detached();
}

double attacked_accuracy(const Model& m, const Tensor& test_x, const std::vector<int>& test_y,
                         const AttackSpec& spec, std::mt19937_64& rng, int batch_size) {
    const int N = test_x.shape[0];
    int correct = 0;
    for (int start = 0; start < N; start += batch_size) {
        const int count = std::min(batch_size, N - start);
        Tensor xb = slice_batch(test_x, start, count);
        std::vector<int> yb(test_y.begin() + start, test_y.begin() + start + count);
        Tensor xadv = xb;
        if (spec.epsilon > 0.0) {
            std::vector<int> y_or_target = yb;
            if (spec.mode != AttackSpec::Mode::NonTargeted)
                y_or_target = select_targets(m, xb, yb, spec.mode, rng);
            xadv = attack_iterations(m, xb, y_or_target, spec);
        }
        Tensor logits = eval_forward(m, xadv);
        correct += static_cast<int>(std::lround(accuracy(logits, yb) * count));
    }
    return static_cast<double>(correct) / static_cast<double>(N);
}

}  // namespace

std::vector<SweepRow> robustness_sweep(const Model& m, const Tensor& test_x,
                                       const std::vector<int>& test_y,
                                       const std::vector<double>& epsilons,
                                       const std::vector<AttackSpec::Mode>& modes, int k,
                                       std::uint64_t seed, const std::string& method,
                                       int batch_size) {
    std::vector<SweepRow> rows;
    for (AttackSpec::Mode mode : modes)
        for (double eps : epsilons) {
            AttackSpec spec;
            spec.epsilon = eps;
            spec.k = k;
            spec.mode = mode;
            auto rng = make_rng(seed, "attack");
            SweepRow row;
            row.method = method;
            row.attack = eps == 0.0 ? "none" : (k == 1 ? "fgsm" : "ifgsm");
            row.mode = attack_mode_name(mode);
            row.epsilon = eps;
            row.k = k;
            row.seed = seed;
            row.accuracy = attacked_accuracy(m, test_x, test_y, spec, rng, batch_size);
            rows.push_back(std::move(row));
        }
    return rows;
}

void saliency_export(const Model& m, const Tensor& x, int y, const std::string& path) {
    if (x.shape.size() != 3)
        throw shape_error("saliency_export: expected a single [C,H,W] image, got " + shape_str(x.shape));
    const int C = x.shape[0], H = x.shape[1], W = x.shape[2];
    Shape batched = {1, C, H, W};
    Tensor g = input_gradient(m, reshape(x.detached(), batched), {y});
    // max |grad| over channels
    std::vector<double> sal(static_cast<std::size_t>(H) * W, 0.0);
    for (int c = 0; c < C; ++c)
        for (int i = 0; i < H * W; ++i)
            sal[static_cast<std::size_t>(i)] =
                std::max(sal[static_cast<std::size_t>(i)],
                         std::fabs(g.values()[static_cast<std::size_t>(c) * H * W + static_cast<std::size_t>(i)]));
    double peak = 0.0;
    for (double v : sal) peak = std::max(peak, v);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw config_error("saliency_export: cannot open '" + path + "' for writing");
    f << "P5\n" << W << " " << H << "\n255\n";
    for (double v : sal) {
        const int byte = peak > 0.0 ? static_cast<int>(std::lround(v / peak * 255.0)) : 0;
        f.put(static_cast<char>(byte));
    }
    if (!f) throw config_error("saliency_export: write failed for '" + path + "'");
}

}  // namespace great
