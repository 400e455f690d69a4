#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "great/net.hpp"

namespace great {

// FGSM / iFGSM within an infinity-norm epsilon ball, pixels clamped to the
// valid range after every step. Attack gradients always use the plain
// cross-entropy loss; attacks never mutate model parameters.
struct AttackSpec {
    enum class Mode { NonTargeted, TargetedWorst, TargetedRandom };
    double epsilon = 0.1;
    int k = 1;
    Mode mode = Mode::NonTargeted;
    double lo = 0.0;
    double hi = 1.0;
};

const char* attack_mode_name(AttackSpec::Mode m);
AttackSpec::Mode attack_mode_from_name(const std::string& s);

// Per-sample gradient of the mean cross-entropy w.r.t. the input batch.
Tensor input_gradient(const Model& m, const Tensor& x, const std::vector<int>& labels);

// y_or_target: true labels for non-targeted attacks, target classes otherwise.
Tensor fgsm(const Model& m, const Tensor& x, const std::vector<int>& y_or_target, const AttackSpec& spec);
Tensor ifgsm(const Model& m, const Tensor& x, const std::vector<int>& y_or_target, const AttackSpec& spec);

// Picks the attack target from the model's clean output distribution:
// worst = least-probable class != y (ties to the lowest index),
// random = uniform over classes != y.
int select_target(const std::vector<double>& probs, int y, AttackSpec::Mode mode, std::mt19937_64& rng);

std::vector<int> select_targets(const Model& m, const Tensor& x, const std::vector<int>& y,
                                AttackSpec::Mode mode, std::mt19937_64& rng);

struct SweepRow {
    std::string method;
    std::string attack;  // "none" | "fgsm" | "ifgsm"
    std::string mode;
    double epsilon = 0.0;
    int k = 1;
    double accuracy = 0.0;
    std::uint64_t seed = 0;
};

// Accuracy of the model on the attacked test set, one row per
// (epsilon, mode). epsilon 0 reproduces the clean accuracy.
std::vector<SweepRow> robustness_sweep(const Model& m, const Tensor& test_x,
                                       const std::vector<int>& test_y,
                                       const std::vector<double>& epsilons,
                                       const std::vector<AttackSpec::Mode>& modes, int k,
                                       std::uint64_t seed, const std::string& method,
                                       int batch_size = 100);

// Writes |grad_x J| (max over channels, normalized so the peak maps to 255)
// as a binary "P5" PGM file.
void saliency_export(const Model& m, const Tensor& x, int y, const std::string& path);

}  // namespace great
