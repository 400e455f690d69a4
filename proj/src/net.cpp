#include "great/net.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "great/rng.hpp"

namespace great {

using json = nlohmann::json;

Tensor& Model::param(const std::string& name) {
    for (auto& [n, t] : params)
        if (n == name) return t;
    throw shape_error("Model: no parameter named '" + name + "'");
}

const Tensor& Model::param(const std::string& name) const {
    for (const auto& [n, t] : params)
        if (n == name) return t;
    throw shape_error("Model: no parameter named '" + name + "'");
}

ParamRefs Model::param_refs() {
    ParamRefs refs;
    refs.reserve(params.size());
    for (auto& [n, t] : params) refs.emplace_back(n, &t);
    return refs;
}

std::int64_t Model::param_count() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : params) n += t.numel();
    return n;
}

const Tensor& BoundModel::p(const std::string& name) const {
    for (const auto& [n, t] : leaves)
        if (n == name) return t;
    throw shape_error("BoundModel: no parameter named '" + name + "'");
}

std::vector<Tensor> BoundModel::leaf_tensors() const {
    std::vector<Tensor> out;
    out.reserve(leaves.size());
    for (const auto& [n, t] : leaves) out.push_back(t);
    return out;
}

BoundModel bind(const Model& m, Tape& tape, bool trainable) {
    BoundModel bm;
    bm.model = &m;
    bm.leaves.reserve(m.params.size());
    for (const auto& [name, t] : m.params) bm.leaves.emplace_back(name, tape.leaf(t, trainable, name));
    return bm;
}

BoundModel bind_values(const Model& m) {
    BoundModel bm;
    bm.model = &m;
    bm.leaves.reserve(m.params.size());
    for (const auto& [name, t] : m.params) bm.leaves.emplace_back(name, t.detached());
    return bm;
}

namespace {

Tensor apply_act(const Tensor& x, double slope) {
    return slope == 0.0 ? relu(x) : leaky_relu(x, slope);
}

Tensor conv_layer(const BoundModel& bm, const std::string& prefix, const Tensor& x, int stride) {
    Tensor y = conv2d(x, bm.p(prefix + ".w"), stride);
    const Tensor& b = bm.p(prefix + ".b");
    const int co = b.shape[0];
    return add(y, broadcast_to(reshape(b, {co, 1, 1}), y.shape));
}

Tensor dense_layer(const BoundModel& bm, const std::string& prefix, const Tensor& x) {
    Tensor y = matmul(x, bm.p(prefix + ".w"));
    return add(y, broadcast_to(bm.p(prefix + ".b"), y.shape));
}

}  // namespace

Tensor forward(const BoundModel& bm, const Tensor& x,
               std::vector<std::pair<std::string, Tensor>>* taps) {
    Tensor h = x;
    int li = 0;
    for (const LayerSpec& layer : bm.model->layers) {
        switch (layer.kind) {
            case LayerSpec::Kind::Dense:
                h = dense_layer(bm, layer.name, h);
                break;
            case LayerSpec::Kind::Conv:
                h = conv_layer(bm, layer.name, h, layer.stride);
                break;
            case LayerSpec::Kind::Residual: {
                Tensor f = conv_layer(bm, layer.name + ".conv1", h, layer.stride);
                f = apply_act(f, layer.slope);
                f = conv_layer(bm, layer.name + ".conv2", f, 1);
                Tensor skip = (layer.in == layer.out && layer.stride == 1)
                                  ? h
                                  : conv_layer(bm, layer.name + ".skip", h, layer.stride);
                h = add(f, skip);
                break;
            }
            case LayerSpec::Kind::Activation:
                h = apply_act(h, layer.slope);
                break;
            case LayerSpec::Kind::AvgPool:
                h = avgpool2x2(h);
                break;
            case LayerSpec::Kind::GlobalAvgPool:
                h = global_avgpool(h);
                break;
            case LayerSpec::Kind::Upsample:
                h = upsample2x(h);
                break;
            case LayerSpec::Kind::Flatten: {
                const int B = h.shape[0];
                h = reshape(h, {B, static_cast<int>(h.numel() / B)});
                break;
            }
        }
        if (taps) {
            const std::string tag = layer.name.empty() ? "layer" + std::to_string(li) : layer.name;
            taps->emplace_back(tag, h);
        }
        ++li;
    }
    return h;
}

Tensor eval_forward(const Model& m, const Tensor& x) {
    return forward(bind_values(m), x.detached());
}

// ---- builders ------------------------------------------------------------

namespace {

Tensor he_uniform(const Shape& shape, int fan_in, std::uint64_t seed, const std::string& name) {
    auto rng = make_rng(seed, name);
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-limit, limit);
    std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
    for (double& x : v) x = dist(rng);
    return Tensor::from(shape, std::move(v));
}

void add_conv_params(Model& m, const std::string& prefix, int cin, int cout, std::uint64_t seed) {
    m.params.emplace_back(prefix + ".w", he_uniform({cout, cin, 3, 3}, cin * 9, seed, prefix + ".w"));
    m.params.emplace_back(prefix + ".b", Tensor::zeros({cout}));
}

void add_dense_params(Model& m, const std::string& prefix, int in, int out, std::uint64_t seed) {
    m.params.emplace_back(prefix + ".w", he_uniform({in, out}, in, seed, prefix + ".w"));
    m.params.emplace_back(prefix + ".b", Tensor::zeros({out}));
}

void add_residual(Model& m, const std::string& name, int cin, int cout, int stride, double slope,
                  std::uint64_t seed) {
    LayerSpec l;
    l.kind = LayerSpec::Kind::Residual;
    l.name = name;
    l.in = cin;
    l.out = cout;
    l.stride = stride;
    l.slope = slope;
    m.layers.push_back(l);
    add_conv_params(m, name + ".conv1", cin, cout, seed);
    add_conv_params(m, name + ".conv2", cout, cout, seed);
    if (cin != cout || stride != 1) add_conv_params(m, name + ".skip", cin, cout, seed);
}

LayerSpec act_layer(double slope) {
    LayerSpec l;
    l.kind = LayerSpec::Kind::Activation;
    l.slope = slope;
    return l;
}

}  // namespace

Model build_resnet_small(const Shape& input, int classes, int width, std::uint64_t seed,
                         double slope, int blocks) {
    if (input.size() != 3) throw shape_error("build_resnet_small: input shape must be [C,H,W]");
    if (blocks < 1 || blocks > 4) throw shape_error("build_resnet_small: blocks must be in [1,4]");
    Model m;
    m.input_shape = input;
    const int cin = input[0];
    const int w = width;

    LayerSpec stem;
    stem.kind = LayerSpec::Kind::Conv;
    stem.name = "stem";
    stem.in = cin;
    stem.out = w;
    m.layers.push_back(stem);
    add_conv_params(m, "stem", cin, w, seed);
    m.layers.push_back(act_layer(slope));

    // widths [w,2w,2w,2w], downsample at blocks 2 and 4
    const int chans[4] = {w, 2 * w, 2 * w, 2 * w};
    const int strides[4] = {1, 2, 1, 2};
    int prev = w;
    for (int i = 0; i < blocks; ++i) {
        add_residual(m, "block" + std::to_string(i + 1), prev, chans[i], strides[i], slope, seed);
        prev = chans[i];
    }

    LayerSpec pool;
    pool.kind = LayerSpec::Kind::GlobalAvgPool;
    m.layers.push_back(pool);

    LayerSpec head;
    head.kind = LayerSpec::Kind::Dense;
    head.name = "head";
    head.in = prev;
    head.out = classes;
    m.layers.push_back(head);
    add_dense_params(m, "head", prev, classes, seed);

    m.descriptor = json{{"kind", "resnet_small"},
                        {"input", input},
                        {"classes", classes},
                        {"width", width},
                        {"seed", seed},
                        {"slope", slope},
                        {"blocks", blocks}}
                       .dump();
    return m;
}

Model build_aux_classifier(const Shape& input, int classes, int width, std::uint64_t seed) {
    Model m = build_resnet_small(input, classes, width, seed, 0.2);
    m.descriptor = json{{"kind", "aux_classifier"},
                        {"input", input},
                        {"classes", classes},
                        {"width", width},
                        {"seed", seed}}
                       .dump();
    return m;
}

Model build_mlp(int in_dim, const std::vector<int>& hidden, int out_dim, std::uint64_t seed,
                double slope) {
    Model m;
    m.input_shape = {in_dim};
    int prev = in_dim;
    for (std::size_t i = 0; i < hidden.size(); ++i) {
        LayerSpec l;
        l.kind = LayerSpec::Kind::Dense;
        l.name = "fc" + std::to_string(i + 1);
        l.in = prev;
        l.out = hidden[i];
        m.layers.push_back(l);
        add_dense_params(m, l.name, prev, hidden[i], seed);
        m.layers.push_back(act_layer(slope));
        prev = hidden[i];
    }
    LayerSpec head;
    head.kind = LayerSpec::Kind::Dense;
    head.name = "out";
    head.in = prev;
    head.out = out_dim;
    m.layers.push_back(head);
    add_dense_params(m, "out", prev, out_dim, seed);
    m.descriptor = json{{"kind", "mlp"},
                        {"in", in_dim},
                        {"hidden", hidden},
                        {"out", out_dim},
                        {"seed", seed},
                        {"slope", slope}}
                       .dump();
    return m;
}

Model build_linear(int in_dim, int out_dim, std::uint64_t seed) {
    Model m = build_mlp(in_dim, {}, out_dim, seed);
    m.descriptor = json{{"kind", "linear"}, {"in", in_dim}, {"out", out_dim}, {"seed", seed}}.dump();
    return m;
}

Model build_upsample_decoder(int in_channels, int spatial, int out_channels, std::uint64_t seed,
                             double slope) {
    Model m;
    m.input_shape = {in_channels, spatial, spatial};
    LayerSpec up;
    up.kind = LayerSpec::Kind::Upsample;
    m.layers.push_back(up);

    LayerSpec c1;
    c1.kind = LayerSpec::Kind::Conv;
    c1.name = "dconv1";
    c1.in = in_channels;
    c1.out = in_channels;
    m.layers.push_back(c1);
    add_conv_params(m, "dconv1", in_channels, in_channels, seed);
    m.layers.push_back(act_layer(slope));

    LayerSpec c2;
    c2.kind = LayerSpec::Kind::Conv;
    c2.name = "dconv2";
    c2.in = in_channels;
    c2.out = out_channels;
    m.layers.push_back(c2);
    add_conv_params(m, "dconv2", in_channels, out_channels, seed);

    m.descriptor = json{{"kind", "upsample_decoder"},
                        {"in_channels", in_channels},
                        {"spatial", spatial},
                        {"out_channels", out_channels},
                        {"seed", seed},
                        {"slope", slope}}
                       .dump();
    return m;
}

Model build_from_descriptor(const std::string& descriptor_json) {
    json d = json::parse(descriptor_json);
    const std::string kind = d.at("kind").get<std::string>();
    if (kind == "resnet_small")
        return build_resnet_small(d.at("input").get<Shape>(), d.at("classes").get<int>(),
                                  d.at("width").get<int>(), d.at("seed").get<std::uint64_t>(),
                                  d.at("slope").get<double>(), d.at("blocks").get<int>());
    if (kind == "aux_classifier")
        return build_aux_classifier(d.at("input").get<Shape>(), d.at("classes").get<int>(),
                                    d.at("width").get<int>(), d.at("seed").get<std::uint64_t>());
    if (kind == "mlp")
        return build_mlp(d.at("in").get<int>(), d.at("hidden").get<std::vector<int>>(),
                         d.at("out").get<int>(), d.at("seed").get<std::uint64_t>(),
                         d.at("slope").get<double>());
    if (kind == "linear")
        return build_linear(d.at("in").get<int>(), d.at("out").get<int>(), d.at("seed").get<std::uint64_t>());
    if (kind == "upsample_decoder")
        return build_upsample_decoder(d.at("in_channels").get<int>(), d.at("spatial").get<int>(),
                                      d.at("out_channels").get<int>(), d.at("seed").get<std::uint64_t>(),
                                      d.at("slope").get<double>());
    throw config_error("build_from_descriptor: unknown model kind '" + kind + "'");
}

}  // namespace great
