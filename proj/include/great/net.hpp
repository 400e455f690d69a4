#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "great/optim.hpp"
#include "great/tape.hpp"

namespace great {

// Layer descriptors for the small architectures used by every pipeline.
// Residual blocks are conv -> act -> conv plus a skip path, with no
// post-activation, so zeroing the block's conv parameters yields the
// identity map. No batch normalization anywhere.
struct LayerSpec {
    enum class Kind { Dense, Conv, Residual, Activation, AvgPool, GlobalAvgPool, Upsample, Flatten };
    Kind kind = Kind::Dense;
    std::string name;   // parameter prefix, e.g. "block1"
    int in = 0;         // features (Dense) or channels (Conv/Residual)
    int out = 0;
    int stride = 1;     // Conv/Residual
    double slope = 0.0;  // activation: 0 => relu, else leaky_relu slope
};

struct Model {
    Shape input_shape;             // per-sample shape, e.g. {1,8,8} or {16}
    std::vector<LayerSpec> layers;
    std::vector<std::pair<std::string, Tensor>> params;  // ordered, names unique
    std::string descriptor;        // JSON builder descriptor (see checkpoint)

    Tensor& param(const std::string& name);
    const Tensor& param(const std::string& name) const;
    ParamRefs param_refs();
    std::int64_t param_count() const;
};

// Shared encoder plus per-task decoders; every decoder consumes the
// encoder's output shape.
struct MultiHeadModel {
    Model encoder;
    std::vector<std::pair<std::string, Model>> decoders;  // task name -> decoder
};

// Tape leaves for one forward/backward pass. Binding snapshots parameter
// values, so optimizer updates after the pass never touch the tape.
struct BoundModel {
    const Model* model = nullptr;
    std::vector<std::pair<std::string, Tensor>> leaves;

    const Tensor& p(const std::string& name) const;
    std::vector<Tensor> leaf_tensors() const;
};

BoundModel bind(const Model& m, Tape& tape, bool trainable);

// Pure evaluation: parameters participate as free tensors, nothing recorded.
BoundModel bind_values(const Model& m);

// taps, when given, receives every layer's output tensor (named by layer
// index and kind) so callers can request gradients at intermediate points.
Tensor forward(const BoundModel& bm, const Tensor& x,
               std::vector<std::pair<std::string, Tensor>>* taps = nullptr);

// Evaluation helper: forward with free-standing values, nothing recorded.
Tensor eval_forward(const Model& m, const Tensor& x);

// ---- builders ----------------------------------------------------------
// He-uniform weights, zero biases; every parameter's stream is keyed by
// (seed, param name) so init is independent of construction order.

// Residual CNN: stem conv, four residual blocks at channel widths
// [w, 2w, 2w, 2w] with downsampling in blocks 2 and 4, global average pool,
// dense head. slope 0 => ReLU activations; otherwise leaky_relu(slope).
Model build_resnet_small(const Shape& input, int classes, int width, std::uint64_t seed,
                         double slope = 0.0, int blocks = 4);

// Same topology as build_resnet_small but with leaky_relu(0.2) everywhere;
// used as the gradient-classifier in the defense pipeline.
Model build_aux_classifier(const Shape& input, int classes, int width, std::uint64_t seed);

Model build_mlp(int in_dim, const std::vector<int>& hidden, int out_dim, std::uint64_t seed,
                double slope = 0.0);

Model build_linear(int in_dim, int out_dim, std::uint64_t seed);

// Decoder for dense image outputs: upsamples back to the input resolution.
Model build_upsample_decoder(int in_channels, int spatial, int out_channels, std::uint64_t seed,
                             double slope = 0.0);

Model build_from_descriptor(const std::string& descriptor_json);

}  // namespace great
