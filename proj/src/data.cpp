#include "great/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "great/rng.hpp"

namespace great {

const Tensor& Dataset::target(const std::string& name) const {
    for (const auto& [n, t] : targets)
        if (n == name) return t;
    throw config_error("Dataset: no target named '" + name + "'");
}

// ---- IDX ---------------------------------------------------------------

namespace {

std::uint32_t read_be32(std::ifstream& f, const std::string& path, const char* what) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    if (!f)
        throw config_error("read_idx: '" + path + "' truncated while reading " + what + " at offset " +
                           std::to_string(static_cast<long long>(f.tellg())));
    return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
           (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

void write_be32(std::ofstream& f, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    f.write(reinterpret_cast<char*>(b), 4);
}

}  // namespace

Tensor read_idx(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw config_error("read_idx: cannot open '" + path + "'");
    const std::uint32_t magic = read_be32(f, path, "magic");
    if (magic == 0x00000803u) {
        const int n = static_cast<int>(read_be32(f, path, "count"));
        const int h = static_cast<int>(read_be32(f, path, "rows"));
        const int w = static_cast<int>(read_be32(f, path, "cols"));
        std::vector<unsigned char> bytes(static_cast<std::size_t>(n) * h * w);
        f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!f)
            throw config_error("read_idx: '" + path + "' truncated in pixel data at offset " +
                               std::to_string(static_cast<long long>(f.tellg())));
        std::vector<double> v(bytes.size());
        for (std::size_t i = 0; i < bytes.size(); ++i) v[i] = static_cast<double>(bytes[i]) / 255.0;
        return Tensor::from({n, 1, h, w}, std::move(v));
    }
    if (magic == 0x00000801u) {
        const int n = static_cast<int>(read_be32(f, path, "count"));
        std::vector<unsigned char> bytes(static_cast<std::size_t>(n));
        f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!f)
            throw config_error("read_idx: '" + path + "' truncated in label data at offset " +
                               std::to_string(static_cast<long long>(f.tellg())));
        std::vector<double> v(bytes.size());
        for (std::size_t i = 0; i < bytes.size(); ++i) v[i] = static_cast<double>(bytes[i]);
        return Tensor::from({n}, std::move(v));
    }
    throw config_error("read_idx: '" + path + "' has bad magic number at offset 0");
}

std::vector<int> read_idx_labels(const std::string& path) {
    Tensor t = read_idx(path);
    if (t.shape.size() != 1) throw config_error("read_idx_labels: '" + path + "' is not a label file");
    std::vector<int> out(t.values().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<int>(t.values()[i]);
    return out;
}

void write_idx_images(const std::string& path, const Tensor& images) {
    if (images.shape.size() != 4 || images.shape[1] != 1)
        throw config_error("write_idx_images: expected [N,1,H,W], got " + shape_str(images.shape));
    std::ofstream f(path, std::ios::binary);
    if (!f) throw config_error("write_idx_images: cannot open '" + path + "'");
    write_be32(f, 0x00000803u);
    write_be32(f, static_cast<std::uint32_t>(images.shape[0]));
    write_be32(f, static_cast<std::uint32_t>(images.shape[2]));
    write_be32(f, static_cast<std::uint32_t>(images.shape[3]));
    for (double v : images.values())
        f.put(static_cast<char>(std::clamp(static_cast<int>(std::lround(v * 255.0)), 0, 255)));
    if (!f) throw config_error("write_idx_images: write failed for '" + path + "'");
}

void write_idx_labels(const std::string& path, const std::vector<int>& labels) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw config_error("write_idx_labels: cannot open '" + path + "'");
    write_be32(f, 0x00000801u);
    write_be32(f, static_cast<std::uint32_t>(labels.size()));
    for (int v : labels) f.put(static_cast<char>(v));
    if (!f) throw config_error("write_idx_labels: write failed for '" + path + "'");
}

// ---- transforms ----------------------------------------------------------

MultitaskTargets multitask_targets(const Tensor& gray, const NoiseConfig& cfg, std::mt19937_64& rng) {
    if (gray.shape.size() != 3 || gray.shape[0] != 1)
        throw shape_error("multitask_targets: expected [1,H,W], got " + shape_str(gray.shape));
    const int H = gray.shape[1], W = gray.shape[2];
    MultitaskTargets out;
    out.recon = gray.detached();
    out.edge = reshape(canny_edges(gray), {1, H, W}).detached();

    std::vector<double> noisy = gray.values();
    if (cfg.enabled) {
        // salt & pepper on exactly floor(fraction*H*W) distinct pixels
        const int npix = static_cast<int>(std::floor(cfg.salt_pepper_fraction * H * W));
        std::vector<int> idx(static_cast<std::size_t>(H) * W);
        std::iota(idx.begin(), idx.end(), 0);
        for (int i = 0; i < npix; ++i) {
            std::uniform_int_distribution<int> pick(i, static_cast<int>(idx.size()) - 1);
            std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
            std::uniform_int_distribution<int> coin(0, 1);
            noisy[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])] = coin(rng) ? 1.0 : 0.0;
        }
        std::normal_distribution<double> gauss(0.0, cfg.speckle_std);
        for (double& v : noisy) v = std::clamp(v * (1.0 + gauss(rng)), 0.0, 1.0);
    }
    out.noisy = Tensor::from({1, H, W}, std::move(noisy));
    return out;
}

Tensor augment(const Tensor& image, const AugmentConfig& cfg, std::mt19937_64& rng) {
    if (image.shape.size() != 3)
        throw shape_error("augment: expected [C,H,W], got " + shape_str(image.shape));
    const int C = image.shape[0], H = image.shape[1], W = image.shape[2];
    const int P = cfg.pad;
    std::uniform_int_distribution<int> off(0, 2 * P);
    const int oy = off(rng), ox = off(rng);
    bool flip = false;
    if (cfg.hflip) {
        std::uniform_int_distribution<int> coin(0, 1);
        flip = coin(rng) == 1;
    }
    std::vector<double> out(image.values().size(), 0.0);
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const int sy = y + oy - P;
                const int sx = x + ox - P;
                double v = 0.0;
                if (sy >= 0 && sy < H && sx >= 0 && sx < W)
                    v = image.values()[(static_cast<std::size_t>(c) * H + static_cast<std::size_t>(sy)) * W +
                                       static_cast<std::size_t>(sx)];
                const int tx = flip ? W - 1 - x : x;
                out[(static_cast<std::size_t>(c) * H + static_cast<std::size_t>(y)) * W +
                    static_cast<std::size_t>(tx)] = v;
            }
    return Tensor::from(image.shape, std::move(out));
}

// ---- synthetic generators --------------------------------------------------

namespace {

// Smooth class template: a few Gaussian bumps on the pixel grid.
std::vector<double> class_template(int H, int W, std::mt19937_64& rng, double separation) {
    std::uniform_real_distribution<double> upos(0.0, 1.0);
    std::uniform_real_distribution<double> usig(0.10, 0.25);
    std::uniform_real_distribution<double> uamp(0.5, 1.0);
    std::vector<double> t(static_cast<std::size_t>(H) * W, 0.0);
    const int bumps = 3;
    for (int k = 0; k < bumps; ++k) {
        const double cy = upos(rng), cx = upos(rng), s = usig(rng), a = uamp(rng);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const double dy = (y + 0.5) / H - cy;
                const double dx = (x + 0.5) / W - cx;
                t[static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x)] +=
                    a * std::exp(-(dy * dy + dx * dx) / (2.0 * s * s));
            }
    }
    double mx = 0.0;
    for (double v : t) mx = std::max(mx, v);
    for (double& v : t) v = separation * 0.7 * v / mx + 0.15;
    return t;
}

Dataset make_classification_split(int n, int classes, int H, int W,
                                  const std::vector<std::vector<double>>& templates,
                                  double noise_std, std::mt19937_64& rng) {
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) labels[static_cast<std::size_t>(i)] = i % classes;
    std::shuffle(labels.begin(), labels.end(), rng);
    std::normal_distribution<double> gauss(0.0, noise_std);
    std::vector<double> pixels(static_cast<std::size_t>(n) * H * W);
    for (int i = 0; i < n; ++i) {
        const std::vector<double>& t = templates[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
        for (int p = 0; p < H * W; ++p)
            pixels[static_cast<std::size_t>(i) * H * W + static_cast<std::size_t>(p)] =
                std::clamp(t[static_cast<std::size_t>(p)] + gauss(rng), 0.0, 1.0);
    }
    Dataset d;
    d.inputs = Tensor::from({n, 1, H, W}, std::move(pixels));
    d.labels = std::move(labels);
    return d;
}

}  // namespace

TrainTest synthetic_classification(int n_train, int n_test, int classes, const Shape& image,
                                   std::uint64_t seed, double noise_std, double separation) {
    if (n_train <= 0 || classes < 2) throw config_error("synthetic_classification: need n > 0 and classes >= 2");
    if (image.size() != 3 || image[0] != 1)
        throw config_error("synthetic_classification: image shape must be {1,H,W}");
    const int H = image[1], W = image[2];
    auto trng = make_rng(seed, "templates");
    std::vector<std::vector<double>> templates;
    templates.reserve(static_cast<std::size_t>(classes));
    for (int c = 0; c < classes; ++c) templates.push_back(class_template(H, W, trng, separation));

    auto rng_train = make_rng(seed, "train");
    auto rng_test = make_rng(seed, "test");
    TrainTest tt;
    tt.train = make_classification_split(n_train, classes, H, W, templates, noise_std, rng_train);
    tt.test = make_classification_split(n_test, classes, H, W, templates, noise_std, rng_test);
    return tt;
}

namespace {

Dataset make_two_task_split(int n, int in_dim, int target_dim, int latent_dim, double scale,
                            const std::vector<double>& G, const std::vector<double>& A,
                            std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> xs(static_cast<std::size_t>(n) * in_dim);
    std::vector<double> t1(static_cast<std::size_t>(n) * target_dim);
    std::vector<double> t2(static_cast<std::size_t>(n) * target_dim);
    for (int i = 0; i < n; ++i) {
        std::vector<double> z(static_cast<std::size_t>(latent_dim));
        for (double& v : z) v = gauss(rng);
        for (int d = 0; d < in_dim; ++d) {
            double s = 0.0;
            for (int l = 0; l < latent_dim; ++l)
                s += G[static_cast<std::size_t>(d) * latent_dim + static_cast<std::size_t>(l)] * z[static_cast<std::size_t>(l)];
            xs[static_cast<std::size_t>(i) * in_dim + static_cast<std::size_t>(d)] = s + 0.05 * gauss(rng);
        }
        for (int d = 0; d < target_dim; ++d) {
            double s = 0.0;
            for (int l = 0; l < latent_dim; ++l)
                s += A[static_cast<std::size_t>(d) * latent_dim + static_cast<std::size_t>(l)] * z[static_cast<std::size_t>(l)];
            t1[static_cast<std::size_t>(i) * target_dim + static_cast<std::size_t>(d)] = s;
            t2[static_cast<std::size_t>(i) * target_dim + static_cast<std::size_t>(d)] = scale * s;
        }
    }
    Dataset d;
    d.inputs = Tensor::from({n, in_dim}, std::move(xs));
    d.targets.emplace_back("task1", Tensor::from({n, target_dim}, std::move(t1)));
    d.targets.emplace_back("task2", Tensor::from({n, target_dim}, std::move(t2)));
    return d;
}

}  // namespace

TrainTest synthetic_two_task(int n_train, int n_test, int in_dim, int target_dim, double scale,
                             std::uint64_t seed) {
    if (n_train <= 0) throw config_error("synthetic_two_task: need n > 0");
    const int latent_dim = std::max(2, in_dim / 2);
    auto mrng = make_rng(seed, "mixing");
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> G(static_cast<std::size_t>(in_dim) * latent_dim);
    std::vector<double> A(static_cast<std::size_t>(target_dim) * latent_dim);
    for (double& v : G) v = gauss(mrng) / std::sqrt(static_cast<double>(latent_dim));
    for (double& v : A) v = gauss(mrng);

    auto rng_train = make_rng(seed, "train");
    auto rng_test = make_rng(seed, "test");
    TrainTest tt;
    tt.train = make_two_task_split(n_train, in_dim, target_dim, latent_dim, scale, G, A, rng_train);
    tt.test = make_two_task_split(n_test, in_dim, target_dim, latent_dim, scale, G, A, rng_test);
    return tt;
}

TrainTest synthetic_image_multitask(int n_train, int n_test, int classes, const Shape& image,
                                    std::uint64_t seed, const NoiseConfig& noise) {
    TrainTest base = synthetic_classification(n_train, n_test, classes, image, seed);
    const int H = image[1], W = image[2];
    auto transform = [&](Dataset& d, std::mt19937_64 rng) {
        const int n = d.size();
        std::vector<double> noisy(static_cast<std::size_t>(n) * H * W);
        std::vector<double> recon(static_cast<std::size_t>(n) * H * W);
        std::vector<double> edge(static_cast<std::size_t>(n) * H * W);
        for (int i = 0; i < n; ++i) {
            Tensor img = slice(d.inputs, 0, i, 1).detached();
            MultitaskTargets t = multitask_targets(reshape(img, {1, H, W}), noise, rng);
            std::copy(t.noisy.values().begin(), t.noisy.values().end(),
                      noisy.begin() + static_cast<std::int64_t>(i) * H * W);
            std::copy(t.recon.values().begin(), t.recon.values().end(),
                      recon.begin() + static_cast<std::int64_t>(i) * H * W);
            std::copy(t.edge.values().begin(), t.edge.values().end(),
                      edge.begin() + static_cast<std::int64_t>(i) * H * W);
        }
        Dataset out;
        out.inputs = Tensor::from({n, 1, H, W}, std::move(noisy));
        out.labels = d.labels;
        out.targets.emplace_back("recon", Tensor::from({n, 1, H, W}, std::move(recon)));
        out.targets.emplace_back("edge", Tensor::from({n, 1, H, W}, std::move(edge)));
        return out;
    };
    TrainTest tt;
    tt.train = transform(base.train, make_rng(seed, "noise_train"));
    tt.test = transform(base.test, make_rng(seed, "noise_test"));
    return tt;
}

Dataset select_rows(const Dataset& d, const std::vector<int>& idx) {
    Dataset out;
    const Shape& s = d.inputs.shape;
    Shape row_shape(s.begin() + 1, s.end());
    const std::int64_t row = shape_numel(row_shape);
    std::vector<double> vals(static_cast<std::size_t>(row) * idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy(d.inputs.values().begin() + idx[i] * row, d.inputs.values().begin() + (idx[i] + 1) * row,
                  vals.begin() + static_cast<std::int64_t>(i) * row);
    Shape out_shape = s;
    out_shape[0] = static_cast<int>(idx.size());
    out.inputs = Tensor::from(out_shape, std::move(vals));
    if (!d.labels.empty()) {
        out.labels.reserve(idx.size());
        for (int i : idx) out.labels.push_back(d.labels[static_cast<std::size_t>(i)]);
    }
    for (const auto& [name, t] : d.targets) {
        Shape ts = t.shape;
        Shape trow_shape(ts.begin() + 1, ts.end());
        const std::int64_t trow = shape_numel(trow_shape);
        std::vector<double> tv(static_cast<std::size_t>(trow) * idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i)
            std::copy(t.values().begin() + idx[i] * trow, t.values().begin() + (idx[i] + 1) * trow,
                      tv.begin() + static_cast<std::int64_t>(i) * trow);
        ts[0] = static_cast<int>(idx.size());
        out.targets.emplace_back(name, Tensor::from(ts, std::move(tv)));
    }
    return out;
}

Dataset sample_fraction(const Dataset& d, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw config_error("sample_fraction: fraction must be in (0,1], got " + std::to_string(fraction));
    const int n = d.size();
    const int want = static_cast<int>(std::floor(fraction * n));
    if (want <= 0) throw config_error("sample_fraction: fraction selects zero examples");
    if (want == n) return d;

    std::vector<int> chosen;
    if (d.labels.empty()) {
        std::vector<int> perm(static_cast<std::size_t>(n));
        std::iota(perm.begin(), perm.end(), 0);
        auto rng = make_rng(seed, "fraction");
        std::shuffle(perm.begin(), perm.end(), rng);
        chosen.assign(perm.begin(), perm.begin() + want);
    } else {
        // class-stratified: floor(f * n_c) per class, remainders to the
        // classes with the largest fractional parts (ties to lower class id)
        const int classes = *std::max_element(d.labels.begin(), d.labels.end()) + 1;
        std::vector<std::vector<int>> per_class(static_cast<std::size_t>(classes));
        for (int i = 0; i < n; ++i) per_class[static_cast<std::size_t>(d.labels[static_cast<std::size_t>(i)])].push_back(i);
        auto rng = make_rng(seed, "fraction");
        for (auto& v : per_class) std::shuffle(v.begin(), v.end(), rng);
        std::vector<int> take(static_cast<std::size_t>(classes));
        std::vector<std::pair<double, int>> rem;
        int total = 0;
        for (int c = 0; c < classes; ++c) {
            const double exact = fraction * static_cast<double>(per_class[static_cast<std::size_t>(c)].size());
            take[static_cast<std::size_t>(c)] = static_cast<int>(std::floor(exact));
            total += take[static_cast<std::size_t>(c)];
            rem.emplace_back(exact - std::floor(exact), c);
        }
        std::stable_sort(rem.begin(), rem.end(),
                         [](const auto& a, const auto& b) { return a.first > b.first; });
        for (std::size_t i = 0; total < want && i < rem.size(); ++i) {
            const int c = rem[i].second;
            if (take[static_cast<std::size_t>(c)] < static_cast<int>(per_class[static_cast<std::size_t>(c)].size())) {
                ++take[static_cast<std::size_t>(c)];
                ++total;
            }
        }
        for (int c = 0; c < classes; ++c)
            chosen.insert(chosen.end(), per_class[static_cast<std::size_t>(c)].begin(),
                          per_class[static_cast<std::size_t>(c)].begin() + take[static_cast<std::size_t>(c)]);
    }
    std::sort(chosen.begin(), chosen.end());
    return select_rows(d, chosen);
}

}  // namespace great
