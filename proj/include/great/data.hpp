#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "great/tensor.hpp"

namespace great {

struct Dataset {
    Tensor inputs;                                        // [N, ...]
    std::vector<int> labels;                              // classification labels (may be empty)
    std::vector<std::pair<std::string, Tensor>> targets;  // per-task dense targets [N, ...]

    int size() const { return inputs.defined() ? inputs.shape[0] : 0; }
    const Tensor& target(const std::string& name) const;
};

struct TrainTest {
    Dataset train;
    Dataset test;
};

// ---- IDX files (big-endian, magic-numbered) --------------------------------
// Images (magic 0x00000803) come back as [N,1,H,W] scaled to [0,1];
// labels (magic 0x00000801) as [N].
Tensor read_idx(const std::string& path);
std::vector<int> read_idx_labels(const std::string& path);
void write_idx_images(const std::string& path, const Tensor& images);  // [N,1,H,W], values in [0,1]
void write_idx_labels(const std::string& path, const std::vector<int>& labels);

// ---- multi-task transforms -------------------------------------------------

struct NoiseConfig {
    double salt_pepper_fraction = 0.04;  // exact floor(fraction*H*W) pixels, half to 0, half to 1
    double speckle_std = 0.1;            // multiplicative: x * (1 + N(0, std))
    bool enabled = true;
};

struct MultitaskTargets {
    Tensor noisy;  // network input
    Tensor recon;  // clean image (reconstruction / colorization stand-in)
    Tensor edge;   // Canny edge map, binary {0,1}
};

// gray: [1,H,W] in [0,1]. Noisy output is clamped back to [0,1].
MultitaskTargets multitask_targets(const Tensor& gray, const NoiseConfig& cfg, std::mt19937_64& rng);

// Canny with Gaussian sigma, double threshold at low/high fractions of the
// peak NMS magnitude, hysteresis by 8-connectivity. Returns [H,W] in {0,1}.
Tensor canny_edges(const Tensor& gray, double sigma = 1.0, double low_frac = 0.1, double high_frac = 0.2);

struct AugmentConfig {
    int pad = 4;
    bool hflip = true;
};

// Zero-pads, randomly crops back to the original size, optional horizontal
// flip with p=0.5. image: [C,H,W].
Tensor augment(const Tensor& image, const AugmentConfig& cfg, std::mt19937_64& rng);

// ---- synthetic generators ---------------------------------------------------

// Gaussian-bump class templates plus pixel noise; image shape {1,H,W}.
TrainTest synthetic_classification(int n_train, int n_test, int classes, const Shape& image,
                                   std::uint64_t seed, double noise_std = 0.12,
                                   double separation = 1.0);

// Two regression tasks on a shared latent; task2 targets are task1's scaled
// by `scale`. Targets named "task1"/"task2".
TrainTest synthetic_two_task(int n_train, int n_test, int in_dim, int target_dim, double scale,
                             std::uint64_t seed);

// Image dataset with per-sample multi-task targets (class / recon / edge),
// inputs are the noisy transforms.
TrainTest synthetic_image_multitask(int n_train, int n_test, int classes, const Shape& image,
                                    std::uint64_t seed, const NoiseConfig& noise);

// Exactly floor(fraction*n) examples, class-stratified when labels exist,
// deterministic under seed. fraction must be in (0,1].
Dataset sample_fraction(const Dataset& d, double fraction, std::uint64_t seed);

Dataset select_rows(const Dataset& d, const std::vector<int>& idx);

}  // namespace great
