#include "great/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <optional>

namespace great {

const char* op_name(OpKind k) {
    switch (k) {
        case OpKind::leaf: return "leaf";
        case OpKind::add: return "add";
        case OpKind::sub: return "sub";
        case OpKind::mul: return "mul";
        case OpKind::scale: return "scale";
        case OpKind::recip: return "recip";
        case OpKind::sqrt_op: return "sqrt";
        case OpKind::abs_op: return "abs";
        case OpKind::exp_op: return "exp";
        case OpKind::log_op: return "log";
        case OpKind::relu: return "relu";
        case OpKind::leaky_relu: return "leaky_relu";
        case OpKind::sigmoid: return "sigmoid";
        case OpKind::softplus: return "softplus";
        case OpKind::softmax: return "softmax";
        case OpKind::log_softmax: return "log_softmax";
        case OpKind::matmul: return "matmul";
        case OpKind::transpose2d: return "transpose2d";
        case OpKind::conv2d: return "conv2d";
        case OpKind::conv2d_bwd_input: return "conv2d_bwd_input";
        case OpKind::conv2d_bwd_weight: return "conv2d_bwd_weight";
        case OpKind::sum_all: return "sum";
        case OpKind::mean_all: return "mean";
        case OpKind::reduce_sum_to: return "reduce_sum_to";
        case OpKind::broadcast_to: return "broadcast_to";
        case OpKind::reshape: return "reshape";
        case OpKind::concat: return "concat";
        case OpKind::slice: return "slice";
        case OpKind::slice_pad: return "slice_pad";
        case OpKind::avgpool2x2: return "avgpool2x2";
        case OpKind::upsample2x: return "upsample2x";
        case OpKind::global_avgpool: return "global_avgpool";
        case OpKind::grad_reversal: return "grad_reversal";
    }
    return "?";
}

// ---- Tape ------------------------------------------------------------

int Tape::append(OpKind kind, std::vector<int> parents, Shape shape,
                 std::shared_ptr<std::vector<double>> value, OpAttrs attrs) {
    Node n;
    n.kind = kind;
    n.shape = std::move(shape);
    n.value = std::move(value);
    n.attrs = std::move(attrs);
    n.requires_grad = false;
    for (int p : parents) n.requires_grad = n.requires_grad || nodes_[static_cast<std::size_t>(p)].requires_grad;
    n.parents = std::move(parents);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

Tensor Tape::leaf(const Tensor& values, bool requires_grad, std::string label) {
    if (!values.defined()) throw shape_error("Tape::leaf: undefined tensor");
    if (!all_finite(values.values()))
        throw numeric_error("Tape::leaf: non-finite value in leaf '" + label + "'");
    // Snapshot the buffer so later in-place updates of the source (optimizer
    // steps) cannot alter saved forward values on a live tape.
    auto copy = std::make_shared<std::vector<double>>(values.values());
    int id = append(OpKind::leaf, {}, values.shape, std::move(copy), {});
    nodes_.back().requires_grad = requires_grad;
    nodes_.back().label = std::move(label);
    Tensor t;
    t.shape = values.shape;
    t.data = nodes_.back().value;
    t.tape = this;
    t.node = id;
    return t;
}

Tensor Tape::tensor_of(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    Tensor t;
    t.shape = n.shape;
    t.data = n.value;
    t.tape = const_cast<Tape*>(this);
    t.node = id;
    return t;
}

// ---- kernels ---------------------------------------------------------

namespace {

void k_conv2d(const double* x, const double* w, double* y, int B, int Ci, int H, int W,
              int Co, int stride, int OH, int OW) {
    std::memset(y, 0, sizeof(double) * static_cast<std::size_t>(B) * Co * OH * OW);
    for (int b = 0; b < B; ++b)
        for (int co = 0; co < Co; ++co) {
            double* yb = y + (static_cast<std::int64_t>(b) * Co + co) * OH * OW;
            for (int ci = 0; ci < Ci; ++ci) {
                const double* xc = x + (static_cast<std::int64_t>(b) * Ci + ci) * H * W;
                const double* wc = w + (static_cast<std::int64_t>(co) * Ci + ci) * 9;
                for (int kh = 0; kh < 3; ++kh)
                    for (int kw = 0; kw < 3; ++kw) {
                        const double wv = wc[kh * 3 + kw];
                        for (int oh = 0; oh < OH; ++oh) {
                            const int ih = oh * stride - 1 + kh;
                            if (ih < 0 || ih >= H) continue;
                            const double* xrow = xc + static_cast<std::int64_t>(ih) * W;
                            double* yrow = yb + static_cast<std::int64_t>(oh) * OW;
                            for (int ow = 0; ow < OW; ++ow) {
                                const int iw = ow * stride - 1 + kw;
                                if (iw < 0 || iw >= W) continue;
                                yrow[ow] += wv * xrow[iw];
                            }
                        }
                    }
            }
        }
}

void k_conv2d_bwd_input(const double* u, const double* w, double* dx, int B, int Ci, int H,
                        int W, int Co, int stride, int OH, int OW) {
    std::memset(dx, 0, sizeof(double) * static_cast<std::size_t>(B) * Ci * H * W);
    for (int b = 0; b < B; ++b)
        for (int co = 0; co < Co; ++co) {
            const double* ub = u + (static_cast<std::int64_t>(b) * Co + co) * OH * OW;
            for (int ci = 0; ci < Ci; ++ci) {
                double* dxc = dx + (static_cast<std::int64_t>(b) * Ci + ci) * H * W;
                const double* wc = w + (static_cast<std::int64_t>(co) * Ci + ci) * 9;
                for (int kh = 0; kh < 3; ++kh)
                    for (int kw = 0; kw < 3; ++kw) {
                        const double wv = wc[kh * 3 + kw];
                        for (int oh = 0; oh < OH; ++oh) {
                            const int ih = oh * stride - 1 + kh;
                            if (ih < 0 || ih >= H) continue;
                            const double* urow = ub + static_cast<std::int64_t>(oh) * OW;
                            double* xrow = dxc + static_cast<std::int64_t>(ih) * W;
                            for (int ow = 0; ow < OW; ++ow) {
                                const int iw = ow * stride - 1 + kw;
                                if (iw < 0 || iw >= W) continue;
                                xrow[iw] += wv * urow[ow];
                            }
                        }
                    }
            }
        }
}

void k_conv2d_bwd_weight(const double* x, const double* u, double* dw, int B, int Ci, int H,
                         int W, int Co, int stride, int OH, int OW) {
    std::memset(dw, 0, sizeof(double) * static_cast<std::size_t>(Co) * Ci * 9);
    for (int b = 0; b < B; ++b)
        for (int co = 0; co < Co; ++co) {
            const double* ub = u + (static_cast<std::int64_t>(b) * Co + co) * OH * OW;
            for (int ci = 0; ci < Ci; ++ci) {
                const double* xc = x + (static_cast<std::int64_t>(b) * Ci + ci) * H * W;
                double* dwc = dw + (static_cast<std::int64_t>(co) * Ci + ci) * 9;
                for (int kh = 0; kh < 3; ++kh)
                    for (int kw = 0; kw < 3; ++kw) {
                        double acc = 0.0;
                        for (int oh = 0; oh < OH; ++oh) {
                            const int ih = oh * stride - 1 + kh;
                            if (ih < 0 || ih >= H) continue;
                            const double* urow = ub + static_cast<std::int64_t>(oh) * OW;
                            const double* xrow = xc + static_cast<std::int64_t>(ih) * W;
                            for (int ow = 0; ow < OW; ++ow) {
                                const int iw = ow * stride - 1 + kw;
                                if (iw < 0 || iw >= W) continue;
                                acc += urow[ow] * xrow[iw];
                            }
                        }
                        dwc[kh * 3 + kw] += acc;
                    }
            }
        }
}

// Right-aligned broadcast index map: coords of `out_shape` -> flat index into
// `src_shape` where src dims are either equal or 1.
std::vector<double> k_broadcast(const std::vector<double>& src, const Shape& src_shape,
                                const Shape& out_shape) {
    const int rank = static_cast<int>(out_shape.size());
    const int off = rank - static_cast<int>(src_shape.size());
    std::vector<std::int64_t> src_stride(static_cast<std::size_t>(rank), 0);
    std::int64_t st = 1;
    for (int d = static_cast<int>(src_shape.size()) - 1; d >= 0; --d) {
        src_stride[static_cast<std::size_t>(d + off)] = (src_shape[static_cast<std::size_t>(d)] == 1) ? 0 : st;
        st *= src_shape[static_cast<std::size_t>(d)];
    }
    std::vector<double> out(static_cast<std::size_t>(shape_numel(out_shape)));
    std::vector<int> coord(static_cast<std::size_t>(rank), 0);
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::int64_t si = 0;
        for (int d = 0; d < rank; ++d) si += coord[static_cast<std::size_t>(d)] * src_stride[static_cast<std::size_t>(d)];
        out[i] = src[static_cast<std::size_t>(si)];
        for (int d = rank - 1; d >= 0; --d) {
            if (++coord[static_cast<std::size_t>(d)] < out_shape[static_cast<std::size_t>(d)]) break;
            coord[static_cast<std::size_t>(d)] = 0;
        }
    }
    return out;
}

std::vector<double> k_reduce_sum(const std::vector<double>& src, const Shape& src_shape,
                                 const Shape& out_shape) {
    const int rank = static_cast<int>(src_shape.size());
    const int off = rank - static_cast<int>(out_shape.size());
    std::vector<std::int64_t> out_stride(static_cast<std::size_t>(rank), 0);
    std::int64_t st = 1;
    for (int d = static_cast<int>(out_shape.size()) - 1; d >= 0; --d) {
        out_stride[static_cast<std::size_t>(d + off)] = (out_shape[static_cast<std::size_t>(d)] == 1) ? 0 : st;
        st *= out_shape[static_cast<std::size_t>(d)];
    }
    std::vector<double> out(static_cast<std::size_t>(shape_numel(out_shape)), 0.0);
    std::vector<int> coord(static_cast<std::size_t>(rank), 0);
    for (std::size_t i = 0; i < src.size(); ++i) {
        std::int64_t oi = 0;
        for (int d = 0; d < rank; ++d) oi += coord[static_cast<std::size_t>(d)] * out_stride[static_cast<std::size_t>(d)];
        out[static_cast<std::size_t>(oi)] += src[i];
        for (int d = rank - 1; d >= 0; --d) {
            if (++coord[static_cast<std::size_t>(d)] < src_shape[static_cast<std::size_t>(d)]) break;
            coord[static_cast<std::size_t>(d)] = 0;
        }
    }
    return out;
}

// ---- op construction helpers ------------------------------------------

Tape* find_tape(std::initializer_list<const Tensor*> ins, const char* op) {
    Tape* t = nullptr;
    for (const Tensor* p : ins) {
        if (!p->defined()) throw shape_error(std::string(op) + ": undefined input tensor");
        if (p->on_tape()) {
            if (t && t != p->tape) throw shape_error(std::string(op) + ": inputs bound to different tapes");
            t = p->tape;
        }
    }
    if (t && !t->recording()) t = nullptr;
    return t;
}

int ensure_node(Tape& t, const Tensor& x) {
    if (x.on_tape()) return x.node;
    return t.append(OpKind::leaf, {}, x.shape, x.data, {});
}

Tensor finish(const char* op, OpKind kind, Tape* tape, std::initializer_list<const Tensor*> ins,
              Shape shape, std::shared_ptr<std::vector<double>> data, OpAttrs attrs = {}) {
    if (!all_finite(*data))
        throw numeric_error(std::string("non-finite value in ") + op + " output " + shape_str(shape));
    Tensor out;
    out.shape = std::move(shape);
    out.data = std::move(data);
    if (tape) {
        std::vector<int> parents;
        parents.reserve(ins.size());
        for (const Tensor* p : ins) parents.push_back(ensure_node(*tape, *p));
        out.node = tape->append(kind, std::move(parents), out.shape, out.data, std::move(attrs));
        out.tape = tape;
    }
    return out;
}

std::shared_ptr<std::vector<double>> buf(std::size_t n) {
    return std::make_shared<std::vector<double>>(n);
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape)
        throw shape_error(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
}

}  // namespace

// ---- elementwise -------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    Tape* t = find_tape({&a, &b}, "add");
    auto out = buf(a.values().size());
    for (std::size_t i = 0; i < out->size(); ++i) (*out)[i] = a.values()[i] + b.values()[i];
    return finish("add", OpKind::add, t, {&a, &b}, a.shape, std::move(out));
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape("sub", a, b);
    Tape* t = find_tape({&a, &b}, "sub");
    auto out = buf(a.values().size());
    for (std::size_t i = 0; i < out->size(); ++i) (*out)[i] = a.values()[i] - b.values()[i];
    return finish("sub", OpKind::sub, t, {&a, &b}, a.shape, std::move(out));
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape("mul", a, b);
    Tape* t = find_tape({&a, &b}, "mul");
    auto out = buf(a.values().size());
    for (std::size_t i = 0; i < out->size(); ++i) (*out)[i] = a.values()[i] * b.values()[i];
    return finish("mul", OpKind::mul, t, {&a, &b}, a.shape, std::move(out));
}

Tensor scale(const Tensor& a, double c) {
    Tape* t = find_tape({&a}, "scale");
    auto out = buf(a.values().size());
    for (std::size_t i = 0; i < out->size(); ++i) (*out)[i] = c * a.values()[i];
    OpAttrs at;
    at.c = c;
    return finish("scale", OpKind::scale, t, {&a}, a.shape, std::move(out), at);
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

namespace {
template <typename F>
Tensor unary(const char* name, OpKind kind, const Tensor& a, F f, OpAttrs attrs = {}) {
    Tape* t = find_tape({&a}, name);
    auto out = buf(a.values().size());
    for (std::size_t i = 0; i < out->size(); ++i) (*out)[i] = f(a.values()[i]);
    return finish(name, kind, t, {&a}, a.shape, std::move(out), std::move(attrs));
}
}  // namespace

Tensor recip(const Tensor& a) {
    return unary("recip", OpKind::recip, a, [](double x) { return 1.0 / x; });
}

Tensor sqrt_t(const Tensor& a) {
    return unary("sqrt", OpKind::sqrt_op, a, [](double x) { return std::sqrt(x); });
}

Tensor abs_t(const Tensor& a) {
    return unary("abs", OpKind::abs_op, a, [](double x) { return std::fabs(x); });
}

Tensor exp_t(const Tensor& a) {
    return unary("exp", OpKind::exp_op, a, [](double x) { return std::exp(x); });
}

Tensor log_t(const Tensor& a) {
    return unary("log", OpKind::log_op, a, [](double x) { return std::log(x); });
}

Tensor relu(const Tensor& a) {
    return unary("relu", OpKind::relu, a, [](double x) { return x > 0.0 ? x : 0.0; });
}

Tensor leaky_relu(const Tensor& a, double slope) {
    if (!(slope > 0.0 && slope < 1.0))
        throw shape_error("leaky_relu: slope must be in (0,1), got " + std::to_string(slope));
    OpAttrs at;
    at.c = slope;
    return unary("leaky_relu", OpKind::leaky_relu, a,
                 [slope](double x) { return x > 0.0 ? x : slope * x; }, at);
}

Tensor sigmoid(const Tensor& a) {
    return unary("sigmoid", OpKind::sigmoid, a, [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
    });
}

Tensor softplus(const Tensor& a) {
    return unary("softplus", OpKind::softplus, a, [](double x) {
        return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
    });
}

// ---- softmax family ----------------------------------------------------

namespace {
void check_2d(const char* op, const Tensor& a) {
    if (a.shape.size() != 2)
        throw shape_error(std::string(op) + ": expected 2-D tensor, got " + shape_str(a.shape));
}
}  // namespace

Tensor softmax(const Tensor& a) {
    check_2d("softmax", a);
    Tape* t = find_tape({&a}, "softmax");
    const int B = a.shape[0], C = a.shape[1];
    auto out = buf(a.values().size());
    for (int b = 0; b < B; ++b) {
        const double* row = a.data->data() + static_cast<std::int64_t>(b) * C;
        double* orow = out->data() + static_cast<std::int64_t>(b) * C;
        double m = row[0];
        for (int c = 1; c < C; ++c) m = std::max(m, row[c]);
        double s = 0.0;
        for (int c = 0; c < C; ++c) {
            orow[c] = std::exp(row[c] - m);
            s += orow[c];
        }
        for (int c = 0; c < C; ++c) orow[c] /= s;
    }
    return finish("softmax", OpKind::softmax, t, {&a}, a.shape, std::move(out));
}

Tensor log_softmax(const Tensor& a) {
    check_2d("log_softmax", a);
    Tape* t = find_tape({&a}, "log_softmax");
    const int B = a.shape[0], C = a.shape[1];
    auto out = buf(a.values().size());
    for (int b = 0; b < B; ++b) {
        const double* row = a.data->data() + static_cast<std::int64_t>(b) * C;
        double* orow = out->data() + static_cast<std::int64_t>(b) * C;
        double m = row[0];
        for (int c = 1; c < C; ++c) m = std::max(m, row[c]);
        double s = 0.0;
        for (int c = 0; c < C; ++c) s += std::exp(row[c] - m);
        const double lse = m + std::log(s);
        for (int c = 0; c < C; ++c) orow[c] = row[c] - lse;
    }
    return finish("log_softmax", OpKind::log_softmax, t, {&a}, a.shape, std::move(out));
}

// ---- linear algebra ------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape.size() != 2 || b.shape.size() != 2 || a.shape[1] != b.shape[0])
        throw shape_error("matmul: incompatible shapes " + shape_str(a.shape) + " x " + shape_str(b.shape));
    Tape* t = find_tape({&a, &b}, "matmul");
    const int M = a.shape[0], K = a.shape[1], N = b.shape[1];
    auto out = buf(static_cast<std::size_t>(M) * N);
    std::fill(out->begin(), out->end(), 0.0);
    const double* pa = a.data->data();
    const double* pb = b.data->data();
    double* pc = out->data();
    for (int i = 0; i < M; ++i)
        for (int k = 0; k < K; ++k) {
            const double v = pa[static_cast<std::int64_t>(i) * K + k];
            const double* brow = pb + static_cast<std::int64_t>(k) * N;
            double* crow = pc + static_cast<std::int64_t>(i) * N;
            for (int j = 0; j < N; ++j) crow[j] += v * brow[j];
        }
    return finish("matmul", OpKind::matmul, t, {&a, &b}, {M, N}, std::move(out));
}

Tensor transpose2d(const Tensor& a) {
    check_2d("transpose2d", a);
    Tape* t = find_tape({&a}, "transpose2d");
    const int M = a.shape[0], N = a.shape[1];
    auto out = buf(a.values().size());
    for (int i = 0; i < M; ++i)
        for (int j = 0; j < N; ++j)
            (*out)[static_cast<std::size_t>(j) * M + i] = a.values()[static_cast<std::size_t>(i) * N + j];
    return finish("transpose2d", OpKind::transpose2d, t, {&a}, {N, M}, std::move(out));
}

// ---- convolution family --------------------------------------------------
// 3x3 kernels only, zero padding 1, stride 1 or 2. The three ops (forward,
// input gradient, weight gradient) are closed under differentiation, which is
// what makes conv double-backward work.

namespace {
void check_conv_args(const char* op, const Tensor& x4, const Tensor& w4, int stride) {
    if (stride != 1 && stride != 2) throw shape_error(std::string(op) + ": stride must be 1 or 2");
    if (x4.shape.size() != 4) throw shape_error(std::string(op) + ": input must be 4-D, got " + shape_str(x4.shape));
    if (w4.shape.size() != 4 || w4.shape[2] != 3 || w4.shape[3] != 3)
        throw shape_error(std::string(op) + ": weight must be [Co,Ci,3,3], got " + shape_str(w4.shape));
}
int conv_out_dim(int d, int stride) { return (d + 2 - 3) / stride + 1; }
}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, int stride) {
    check_conv_args("conv2d", x, w, stride);
    if (x.shape[1] != w.shape[1])
        throw shape_error("conv2d: channel mismatch " + shape_str(x.shape) + " vs " + shape_str(w.shape));
    Tape* t = find_tape({&x, &w}, "conv2d");
    const int B = x.shape[0], Ci = x.shape[1], H = x.shape[2], W = x.shape[3], Co = w.shape[0];
    const int OH = conv_out_dim(H, stride), OW = conv_out_dim(W, stride);
    auto out = buf(static_cast<std::size_t>(B) * Co * OH * OW);
    k_conv2d(x.data->data(), w.data->data(), out->data(), B, Ci, H, W, Co, stride, OH, OW);
    OpAttrs at;
    at.stride = stride;
    return finish("conv2d", OpKind::conv2d, t, {&x, &w}, {B, Co, OH, OW}, std::move(out), at);
}

namespace {

Tensor conv2d_bwd_input_op(const Tensor& u, const Tensor& w, int stride, int H, int W) {
    check_conv_args("conv2d_bwd_input", u, w, stride);
    Tape* t = find_tape({&u, &w}, "conv2d_bwd_input");
    const int B = u.shape[0], Co = u.shape[1], OH = u.shape[2], OW = u.shape[3];
    const int Ci = w.shape[1];
    auto out = buf(static_cast<std::size_t>(B) * Ci * H * W);
    k_conv2d_bwd_input(u.data->data(), w.data->data(), out->data(), B, Ci, H, W, Co, stride, OH, OW);
    OpAttrs at;
    at.stride = stride;
    at.target = {H, W};
    return finish("conv2d_bwd_input", OpKind::conv2d_bwd_input, t, {&u, &w}, {B, Ci, H, W},
                  std::move(out), at);
}

Tensor conv2d_bwd_weight_op(const Tensor& x, const Tensor& u, int stride) {
    if (x.shape.size() != 4 || u.shape.size() != 4)
        throw shape_error("conv2d_bwd_weight: expected 4-D inputs");
    Tape* t = find_tape({&x, &u}, "conv2d_bwd_weight");
    const int B = x.shape[0], Ci = x.shape[1], H = x.shape[2], W = x.shape[3];
    const int Co = u.shape[1], OH = u.shape[2], OW = u.shape[3];
    auto out = buf(static_cast<std::size_t>(Co) * Ci * 9);
    k_conv2d_bwd_weight(x.data->data(), u.data->data(), out->data(), B, Ci, H, W, Co, stride, OH, OW);
    OpAttrs at;
    at.stride = stride;
    return finish("conv2d_bwd_weight", OpKind::conv2d_bwd_weight, t, {&x, &u}, {Co, Ci, 3, 3},
                  std::move(out), at);
}

}  // namespace

// ---- reductions and shape ops ---------------------------------------------

Tensor sum_all(const Tensor& a) {
    Tape* t = find_tape({&a}, "sum");
    double s = 0.0;
    for (double v : a.values()) s += v;
    return finish("sum", OpKind::sum_all, t, {&a}, {1},
                  std::make_shared<std::vector<double>>(std::vector<double>{s}));
}

Tensor mean_all(const Tensor& a) {
    Tape* t = find_tape({&a}, "mean");
    double s = 0.0;
    for (double v : a.values()) s += v;
    s /= static_cast<double>(a.values().size());
    return finish("mean", OpKind::mean_all, t, {&a}, {1},
                  std::make_shared<std::vector<double>>(std::vector<double>{s}));
}

namespace {
void check_broadcastable(const char* op, const Shape& small, const Shape& big) {
    if (small.size() > big.size())
        throw shape_error(std::string(op) + ": rank of " + shape_str(small) + " exceeds " + shape_str(big));
    const int off = static_cast<int>(big.size() - small.size());
    for (std::size_t d = 0; d < small.size(); ++d)
        if (small[d] != 1 && small[d] != big[d + static_cast<std::size_t>(off)])
            throw shape_error(std::string(op) + ": cannot map " + shape_str(small) + " onto " + shape_str(big));
}
}  // namespace

Tensor reduce_sum_to(const Tensor& a, const Shape& target) {
    check_broadcastable("reduce_sum_to", target, a.shape);
    Tape* t = find_tape({&a}, "reduce_sum_to");
    auto vals = k_reduce_sum(a.values(), a.shape, target);
    OpAttrs at;
    at.target = target;
    return finish("reduce_sum_to", OpKind::reduce_sum_to, t, {&a}, target,
                  std::make_shared<std::vector<double>>(std::move(vals)), at);
}

Tensor broadcast_to(const Tensor& a, const Shape& target) {
    check_broadcastable("broadcast_to", a.shape, target);
    Tape* t = find_tape({&a}, "broadcast_to");
    auto vals = k_broadcast(a.values(), a.shape, target);
    OpAttrs at;
    at.target = target;
    return finish("broadcast_to", OpKind::broadcast_to, t, {&a}, target,
                  std::make_shared<std::vector<double>>(std::move(vals)), at);
}

Tensor reshape(const Tensor& a, const Shape& target) {
    if (shape_numel(target) != a.numel())
        throw shape_error("reshape: element count mismatch " + shape_str(a.shape) + " -> " + shape_str(target));
    Tape* t = find_tape({&a}, "reshape");
    OpAttrs at;
    at.target = target;
    // Shares the buffer; tape values are immutable once recorded.
    return finish("reshape", OpKind::reshape, t, {&a}, target, a.data, at);
}

namespace {
// Views a shape as [outer, axis_dim, inner] around `axis`.
struct AxisView {
    std::int64_t outer = 1, axis_dim = 1, inner = 1;
};
AxisView axis_view(const Shape& s, int axis) {
    AxisView v;
    for (int d = 0; d < axis; ++d) v.outer *= s[static_cast<std::size_t>(d)];
    v.axis_dim = s[static_cast<std::size_t>(axis)];
    for (std::size_t d = static_cast<std::size_t>(axis) + 1; d < s.size(); ++d) v.inner *= s[d];
    return v;
}
}  // namespace

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw shape_error("concat: no inputs");
    const Shape& s0 = parts[0].shape;
    if (axis < 0 || axis >= static_cast<int>(s0.size())) throw shape_error("concat: bad axis");
    int total = 0;
    for (const Tensor& p : parts) {
        if (p.shape.size() != s0.size()) throw shape_error("concat: rank mismatch");
        for (std::size_t d = 0; d < s0.size(); ++d)
            if (d != static_cast<std::size_t>(axis) && p.shape[d] != s0[d])
                throw shape_error("concat: shape mismatch " + shape_str(p.shape) + " vs " + shape_str(s0));
        total += p.shape[static_cast<std::size_t>(axis)];
    }
    Tape* t = nullptr;
    for (const Tensor& p : parts) {
        Tape* pt = find_tape({&p}, "concat");
        if (pt) {
            if (t && t != pt) throw shape_error("concat: inputs bound to different tapes");
            t = pt;
        }
    }
    Shape out_shape = s0;
    out_shape[static_cast<std::size_t>(axis)] = total;
    auto out = buf(static_cast<std::size_t>(shape_numel(out_shape)));
    const AxisView ov = axis_view(out_shape, axis);
    std::int64_t axis_off = 0;
    for (const Tensor& p : parts) {
        const AxisView pv = axis_view(p.shape, axis);
        for (std::int64_t o = 0; o < ov.outer; ++o)
            for (std::int64_t ad = 0; ad < pv.axis_dim; ++ad)
                std::memcpy(out->data() + (o * ov.axis_dim + axis_off + ad) * ov.inner,
                            p.data->data() + (o * pv.axis_dim + ad) * pv.inner,
                            sizeof(double) * static_cast<std::size_t>(pv.inner));
        axis_off += pv.axis_dim;
    }
    OpAttrs at;
    at.axis = axis;
    if (!all_finite(*out)) throw numeric_error("non-finite value in concat output");
    Tensor res;
    res.shape = out_shape;
    res.data = std::move(out);
    if (t) {
        std::vector<int> parents;
        for (const Tensor& p : parts) parents.push_back(ensure_node(*t, p));
        res.node = t->append(OpKind::concat, std::move(parents), res.shape, res.data, at);
        res.tape = t;
    }
    return res;
}

Tensor slice(const Tensor& a, int axis, int start, int len) {
    if (axis < 0 || axis >= static_cast<int>(a.shape.size())) throw shape_error("slice: bad axis");
    if (start < 0 || len <= 0 || start + len > a.shape[static_cast<std::size_t>(axis)])
        throw shape_error("slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                          ") out of bounds for " + shape_str(a.shape));
    Tape* t = find_tape({&a}, "slice");
    Shape out_shape = a.shape;
    out_shape[static_cast<std::size_t>(axis)] = len;
    const AxisView av = axis_view(a.shape, axis);
    auto out = buf(static_cast<std::size_t>(shape_numel(out_shape)));
    for (std::int64_t o = 0; o < av.outer; ++o)
        std::memcpy(out->data() + o * len * av.inner,
                    a.data->data() + (o * av.axis_dim + start) * av.inner,
                    sizeof(double) * static_cast<std::size_t>(len) * static_cast<std::size_t>(av.inner));
    OpAttrs at;
    at.axis = axis;
    at.start = start;
    at.len = len;
    return finish("slice", OpKind::slice, t, {&a}, out_shape, std::move(out), at);
}

namespace {
// Adjoint of slice: embeds `a` into zeros of axis length `full_len` at `start`.
Tensor slice_pad_op(const Tensor& a, int axis, int start, int full_len) {
    Tape* t = find_tape({&a}, "slice_pad");
    Shape out_shape = a.shape;
    out_shape[static_cast<std::size_t>(axis)] = full_len;
    const AxisView av = axis_view(a.shape, axis);
    auto out = buf(static_cast<std::size_t>(shape_numel(out_shape)));
    std::fill(out->begin(), out->end(), 0.0);
    for (std::int64_t o = 0; o < av.outer; ++o)
        std::memcpy(out->data() + (o * full_len + start) * av.inner, a.data->data() + o * av.axis_dim * av.inner,
                    sizeof(double) * static_cast<std::size_t>(av.axis_dim) * static_cast<std::size_t>(av.inner));
    OpAttrs at;
    at.axis = axis;
    at.start = start;
    at.len = full_len;
    return finish("slice_pad", OpKind::slice_pad, t, {&a}, out_shape, std::move(out), at);
}
}  // namespace

Tensor avgpool2x2(const Tensor& a) {
    if (a.shape.size() != 4 || a.shape[2] % 2 != 0 || a.shape[3] % 2 != 0)
        throw shape_error("avgpool2x2: need 4-D input with even spatial dims, got " + shape_str(a.shape));
    Tape* t = find_tape({&a}, "avgpool2x2");
    const int B = a.shape[0], C = a.shape[1], H = a.shape[2], W = a.shape[3];
    const int OH = H / 2, OW = W / 2;
    auto out = buf(static_cast<std::size_t>(B) * C * OH * OW);
    const double* src = a.data->data();
    double* dst = out->data();
    for (std::int64_t bc = 0; bc < static_cast<std::int64_t>(B) * C; ++bc) {
        const double* plane = src + bc * H * W;
        double* oplane = dst + bc * OH * OW;
        for (int oh = 0; oh < OH; ++oh)
            for (int ow = 0; ow < OW; ++ow) {
                const double* p = plane + (2 * oh) * W + 2 * ow;
                oplane[static_cast<std::int64_t>(oh) * OW + ow] = 0.25 * (p[0] + p[1] + p[W] + p[W + 1]);
            }
    }
    return finish("avgpool2x2", OpKind::avgpool2x2, t, {&a}, {B, C, OH, OW}, std::move(out));
}

Tensor upsample2x(const Tensor& a) {
    if (a.shape.size() != 4) throw shape_error("upsample2x: need 4-D input, got " + shape_str(a.shape));
    Tape* t = find_tape({&a}, "upsample2x");
    const int B = a.shape[0], C = a.shape[1], H = a.shape[2], W = a.shape[3];
    const int OH = H * 2, OW = W * 2;
    auto out = buf(static_cast<std::size_t>(B) * C * OH * OW);
    const double* src = a.data->data();
    double* dst = out->data();
    for (std::int64_t bc = 0; bc < static_cast<std::int64_t>(B) * C; ++bc) {
        const double* plane = src + bc * H * W;
        double* oplane = dst + bc * OH * OW;
        for (int ih = 0; ih < H; ++ih)
            for (int iw = 0; iw < W; ++iw) {
                const double v = plane[static_cast<std::int64_t>(ih) * W + iw];
                double* q = oplane + (2 * ih) * OW + 2 * iw;
                q[0] = v;
                q[1] = v;
                q[OW] = v;
                q[OW + 1] = v;
            }
    }
    return finish("upsample2x", OpKind::upsample2x, t, {&a}, {B, C, OH, OW}, std::move(out));
}

Tensor global_avgpool(const Tensor& a) {
    if (a.shape.size() != 4) throw shape_error("global_avgpool: need 4-D input, got " + shape_str(a.shape));
    Tape* t = find_tape({&a}, "global_avgpool");
    const int B = a.shape[0], C = a.shape[1], H = a.shape[2], W = a.shape[3];
    auto out = buf(static_cast<std::size_t>(B) * C);
    const double inv = 1.0 / (static_cast<double>(H) * W);
    for (std::int64_t bc = 0; bc < static_cast<std::int64_t>(B) * C; ++bc) {
        const double* plane = a.data->data() + bc * H * W;
        double s = 0.0;
        for (int i = 0; i < H * W; ++i) s += plane[i];
        (*out)[static_cast<std::size_t>(bc)] = s * inv;
    }
    return finish("global_avgpool", OpKind::global_avgpool, t, {&a}, {B, C}, std::move(out));
}

Tensor gradient_reversal(const Tensor& x, double lambda) {
    Tape* t = find_tape({&x}, "grad_reversal");
    OpAttrs at;
    at.c = lambda;
    // Forward is a bit-exact identity (shares the buffer).
    return finish("grad_reversal", OpKind::grad_reversal, t, {&x}, x.shape, x.data, at);
}

// ---- backward -------------------------------------------------------------

namespace {

// Per-op chain rule, written in terms of the public ops so that with
// create_graph the gradient computation lands on the tape as differentiable
// nodes. Piecewise-linear ops (relu, leaky_relu, abs) capture their local
// derivative as a constant mask, so their second-derivative contribution is
// identically zero.
void propagate(Tape& tape, int id, const Tensor& u,
               std::vector<std::optional<Tensor>>& adj) {
    // Copy node metadata up front: appending gradient nodes may reallocate
    // the node array.
    const Node meta = tape.node(id);
    const auto parent_rg = [&](std::size_t i) {
        return tape.node(meta.parents[i]).requires_grad;
    };
    const auto acc = [&](std::size_t i, const Tensor& g) {
        const int p = meta.parents[i];
        auto& slot = adj[static_cast<std::size_t>(p)];
        slot = slot ? add(*slot, g) : g;
    };
    const auto parent = [&](std::size_t i) { return tape.tensor_of(meta.parents[i]); };
    const Tensor self = tape.tensor_of(id);

    switch (meta.kind) {
        case OpKind::leaf:
            return;
        case OpKind::add:
            if (parent_rg(0)) acc(0, u);
            if (parent_rg(1)) acc(1, u);
            return;
        case OpKind::sub:
            if (parent_rg(0)) acc(0, u);
            if (parent_rg(1)) acc(1, neg(u));
            return;
        case OpKind::mul:
            if (parent_rg(0)) acc(0, mul(u, parent(1)));
            if (parent_rg(1)) acc(1, mul(u, parent(0)));
            return;
        case OpKind::scale:
            if (parent_rg(0)) acc(0, scale(u, meta.attrs.c));
            return;
        case OpKind::recip:
            if (parent_rg(0)) acc(0, neg(mul(u, mul(self, self))));
            return;
        case OpKind::sqrt_op:
            if (parent_rg(0)) acc(0, mul(u, recip(scale(self, 2.0))));
            return;
        case OpKind::abs_op:
            if (parent_rg(0)) {
                std::vector<double> sgn(parent(0).values().size());
                for (std::size_t i = 0; i < sgn.size(); ++i) {
                    const double x = parent(0).values()[i];
                    sgn[i] = x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
                }
                acc(0, mul(u, Tensor::from(meta.shape, std::move(sgn))));
            }
            return;
        case OpKind::exp_op:
            if (parent_rg(0)) acc(0, mul(u, self));
            return;
        case OpKind::log_op:
            if (parent_rg(0)) acc(0, mul(u, recip(parent(0))));
            return;
        case OpKind::relu:
        case OpKind::leaky_relu:
            if (parent_rg(0)) {
                const double lo = meta.kind == OpKind::relu ? 0.0 : meta.attrs.c;
                std::vector<double> mask(parent(0).values().size());
                for (std::size_t i = 0; i < mask.size(); ++i)
                    mask[i] = parent(0).values()[i] > 0.0 ? 1.0 : lo;
                acc(0, mul(u, Tensor::from(meta.shape, std::move(mask))));
            }
            return;
        case OpKind::sigmoid:
            if (parent_rg(0)) acc(0, mul(u, sub(self, mul(self, self))));
            return;
        case OpKind::softplus:
            if (parent_rg(0)) acc(0, mul(u, sigmoid(parent(0))));
            return;
        case OpKind::softmax: {
            if (!parent_rg(0)) return;
            const int B = meta.shape[0], C = meta.shape[1];
            Tensor dot = reduce_sum_to(mul(u, self), {B, 1});
            acc(0, mul(self, sub(u, broadcast_to(dot, {B, C}))));
            return;
        }
        case OpKind::log_softmax: {
            if (!parent_rg(0)) return;
            const int B = meta.shape[0], C = meta.shape[1];
            Tensor sm = exp_t(self);
            Tensor rowsum = reduce_sum_to(u, {B, 1});
            acc(0, sub(u, mul(sm, broadcast_to(rowsum, {B, C}))));
            return;
        }
        case OpKind::matmul:
            if (parent_rg(0)) acc(0, matmul(u, transpose2d(parent(1))));
            if (parent_rg(1)) acc(1, matmul(transpose2d(parent(0)), u));
            return;
        case OpKind::transpose2d:
            if (parent_rg(0)) acc(0, transpose2d(u));
            return;
        case OpKind::conv2d: {
            const Tensor x = parent(0), w = parent(1);
            if (parent_rg(0)) acc(0, conv2d_bwd_input_op(u, w, meta.attrs.stride, x.shape[2], x.shape[3]));
            if (parent_rg(1)) acc(1, conv2d_bwd_weight_op(x, u, meta.attrs.stride));
            return;
        }
        case OpKind::conv2d_bwd_input: {
            const Tensor up = parent(0), w = parent(1);
            if (parent_rg(0)) acc(0, conv2d(u, w, meta.attrs.stride));
            if (parent_rg(1)) acc(1, conv2d_bwd_weight_op(u, up, meta.attrs.stride));
            return;
        }
        case OpKind::conv2d_bwd_weight: {
            const Tensor x = parent(0), up = parent(1);
            if (parent_rg(0)) acc(0, conv2d_bwd_input_op(up, u, meta.attrs.stride, x.shape[2], x.shape[3]));
            if (parent_rg(1)) acc(1, conv2d(x, u, meta.attrs.stride));
            return;
        }
        case OpKind::sum_all:
            if (parent_rg(0)) acc(0, broadcast_to(u, parent(0).shape));
            return;
        case OpKind::mean_all:
            if (parent_rg(0)) {
                const double inv = 1.0 / static_cast<double>(parent(0).numel());
                acc(0, broadcast_to(scale(u, inv), parent(0).shape));
            }
            return;
        case OpKind::reduce_sum_to:
            if (parent_rg(0)) acc(0, broadcast_to(u, parent(0).shape));
            return;
        case OpKind::broadcast_to:
            if (parent_rg(0)) acc(0, reduce_sum_to(u, parent(0).shape));
            return;
        case OpKind::reshape:
            if (parent_rg(0)) acc(0, reshape(u, parent(0).shape));
            return;
        case OpKind::concat: {
            int off = 0;
            for (std::size_t i = 0; i < meta.parents.size(); ++i) {
                const int len = parent(i).shape[static_cast<std::size_t>(meta.attrs.axis)];
                if (parent_rg(i)) acc(i, slice(u, meta.attrs.axis, off, len));
                off += len;
            }
            return;
        }
        case OpKind::slice:
            if (parent_rg(0)) {
                const int full = parent(0).shape[static_cast<std::size_t>(meta.attrs.axis)];
                acc(0, slice_pad_op(u, meta.attrs.axis, meta.attrs.start, full));
            }
            return;
        case OpKind::slice_pad:
            if (parent_rg(0)) {
                const int len = parent(0).shape[static_cast<std::size_t>(meta.attrs.axis)];
                acc(0, slice(u, meta.attrs.axis, meta.attrs.start, len));
            }
            return;
        case OpKind::avgpool2x2:
            if (parent_rg(0)) acc(0, scale(upsample2x(u), 0.25));
            return;
        case OpKind::upsample2x:
            if (parent_rg(0)) acc(0, scale(avgpool2x2(u), 4.0));
            return;
        case OpKind::global_avgpool:
            if (parent_rg(0)) {
                const Shape xs = parent(0).shape;
                const double inv = 1.0 / (static_cast<double>(xs[2]) * xs[3]);
                acc(0, broadcast_to(reshape(scale(u, inv), {xs[0], xs[1], 1, 1}), xs));
            }
            return;
        case OpKind::grad_reversal:
            if (parent_rg(0)) acc(0, scale(u, -meta.attrs.c));
            return;
    }
}

}  // namespace

BackwardResult Tape::backward(const Tensor& output, const std::vector<Tensor>& wrt,
                              const BackwardOptions& opts) {
    if (!output.on_tape() || output.tape != this)
        throw shape_error("backward: output is not bound to this tape");
    Tensor seed;
    if (opts.seed) {
        if (opts.seed->shape != output.shape)
            throw shape_error("backward: seed shape " + shape_str(opts.seed->shape) +
                              " does not match output " + shape_str(output.shape));
        seed = opts.seed->detached();
    } else {
        if (output.numel() != 1)
            throw shape_error("backward: output must be scalar, got " + shape_str(output.shape));
        seed = Tensor::full(output.shape, 1.0);
    }

    const int root = output.node;
    std::vector<std::optional<Tensor>> adj(static_cast<std::size_t>(root) + 1);
    if (nodes_[static_cast<std::size_t>(root)].requires_grad) adj[static_cast<std::size_t>(root)] = seed;

    {
        std::optional<NoGradGuard> guard;
        if (!opts.create_graph) guard.emplace(*this);
        for (int id = root; id >= 0; --id) {
            if (!adj[static_cast<std::size_t>(id)]) continue;
            if (!all_finite(adj[static_cast<std::size_t>(id)]->values()))
                throw numeric_error(std::string("non-finite gradient at node ") + std::to_string(id) +
                                    " (" + op_name(nodes_[static_cast<std::size_t>(id)].kind) + ")");
            propagate(*this, id, *adj[static_cast<std::size_t>(id)], adj);
        }
    }

    BackwardResult res;
    res.grads.reserve(wrt.size());
    for (const Tensor& w : wrt) {
        if (!w.on_tape() || w.tape != this) {
            res.warnings.push_back("wrt tensor is not bound to this tape; returning zero gradient");
            res.grads.push_back(Tensor::zeros(w.shape));
        } else if (w.node > root || !adj[static_cast<std::size_t>(w.node)]) {
            const std::string& label = nodes_[static_cast<std::size_t>(w.node)].label;
            res.warnings.push_back("wrt tensor '" + (label.empty() ? std::to_string(w.node) : label) +
                                   "' unreachable from output; returning zero gradient");
            res.grads.push_back(Tensor::zeros(w.shape));
        } else {
            res.grads.push_back(*adj[static_cast<std::size_t>(w.node)]);
        }
    }
    return res;
}

double finite_difference_check(const std::function<Tensor(Tape&, const Tensor&)>& f,
                               const Tensor& x, double h) {
    Tape tape;
    Tensor xb = tape.leaf(x, true, "fd_x");
    Tensor y = f(tape, xb);
    if (y.numel() != 1) throw shape_error("finite_difference_check: f must be scalar-valued");
    if (!std::isfinite(y.scalar())) throw numeric_error("finite_difference_check: non-finite f value");
    BackwardResult r = tape.backward(y, {xb});
    const std::vector<double>& g = r.grads[0].values();

    std::vector<double> base = x.values();
    const auto eval = [&](const std::vector<double>& vals) {
        Tape t2;
        Tensor xt = t2.leaf(Tensor::from(x.shape, vals), false);
        double v = f(t2, xt).scalar();
        if (!std::isfinite(v)) throw numeric_error("finite_difference_check: non-finite f value");
        return v;
    };

    double max_err = 0.0;
    for (std::size_t i = 0; i < base.size(); ++i) {
        std::vector<double> vp = base, vm = base;
        vp[i] += h;
        vm[i] -= h;
        const double gfd = (eval(vp) - eval(vm)) / (2.0 * h);
        const double err = std::fabs(g[i] - gfd) / std::max(std::fabs(gfd), 1e-8);
        max_err = std::max(max_err, err);
    }
    return max_err;
}

}  // namespace great
