#include <algorithm>
#include <cmath>
#include <vector>

#include "great/data.hpp"

namespace great {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Separable Gaussian blur, edge-replicated borders.
std::vector<double> gaussian_blur(const std::vector<double>& img, int H, int W, double sigma) {
    const int r = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(static_cast<std::size_t>(2 * r + 1));
    double ksum = 0.0;
    for (int i = -r; i <= r; ++i) {
        kernel[static_cast<std::size_t>(i + r)] = std::exp(-(i * i) / (2.0 * sigma * sigma));
        ksum += kernel[static_cast<std::size_t>(i + r)];
    }
    for (double& k : kernel) k /= ksum;

    std::vector<double> tmp(img.size()), out(img.size());
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double s = 0.0;
            for (int i = -r; i <= r; ++i) {
                const int xx = std::clamp(x + i, 0, W - 1);
                s += kernel[static_cast<std::size_t>(i + r)] * img[static_cast<std::size_t>(y) * W + static_cast<std::size_t>(xx)];
            }
            tmp[static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x)] = s;
        }
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double s = 0.0;
            for (int i = -r; i <= r; ++i) {
                const int yy = std::clamp(y + i, 0, H - 1);
                s += kernel[static_cast<std::size_t>(i + r)] * tmp[static_cast<std::size_t>(yy) * W + static_cast<std::size_t>(x)];
            }
            out[static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x)] = s;
        }
    return out;
}

}  // namespace

Tensor canny_edges(const Tensor& gray, double sigma, double low_frac, double high_frac) {
    Shape s = gray.shape;
    if (s.size() == 3 && s[0] == 1) s = {s[1], s[2]};
    if (s.size() != 2) throw shape_error("canny_edges: expected [H,W] or [1,H,W], got " + shape_str(gray.shape));
    const int H = s[0], W = s[1];
    const auto at = [W](std::vector<double>& v, int y, int x) -> double& {
        return v[static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x)];
    };

    std::vector<double> blurred = gaussian_blur(gray.values(), H, W, sigma);

    // Sobel gradients; border pixels keep zero magnitude.
    std::vector<double> gx(blurred.size(), 0.0), gy(blurred.size(), 0.0), mag(blurred.size(), 0.0);
    for (int y = 1; y < H - 1; ++y)
        for (int x = 1; x < W - 1; ++x) {
            const auto p = [&](int dy, int dx) {
                return blurred[static_cast<std::size_t>(y + dy) * W + static_cast<std::size_t>(x + dx)];
            };
            at(gx, y, x) = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            at(gy, y, x) = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            at(mag, y, x) = std::hypot(at(gx, y, x), at(gy, y, x));
        }

    // Non-maximum suppression along the quantized gradient direction.
    std::vector<double> nms(blurred.size(), 0.0);
    for (int y = 1; y < H - 1; ++y)
        for (int x = 1; x < W - 1; ++x) {
            const double m = at(mag, y, x);
            if (m == 0.0) continue;
            double angle = std::atan2(at(gy, y, x), at(gx, y, x)) * 180.0 / kPi;
            if (angle < 0.0) angle += 180.0;
            int dy1, dx1;
            if (angle < 22.5 || angle >= 157.5) {
                dy1 = 0; dx1 = 1;          // horizontal gradient
            } else if (angle < 67.5) {
                dy1 = 1; dx1 = 1;          // diagonal
            } else if (angle < 112.5) {
                dy1 = 1; dx1 = 0;          // vertical
            } else {
                dy1 = 1; dx1 = -1;         // anti-diagonal
            }
            const double n1 = at(mag, y + dy1, x + dx1);
            const double n2 = at(mag, y - dy1, x - dx1);
            if (m >= n1 && m >= n2) at(nms, y, x) = m;
        }

    double peak = 0.0;
    for (double v : nms) peak = std::max(peak, v);
    std::vector<double> out(blurred.size(), 0.0);
    if (peak == 0.0) return Tensor::from({H, W}, std::move(out));

    const double high = high_frac * peak;
    const double low = low_frac * peak;
    // strong edges seed the hysteresis walk; weak ones join if 8-connected
    std::vector<std::pair<int, int>> stack;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            if (at(nms, y, x) >= high) {
                at(out, y, x) = 1.0;
                stack.emplace_back(y, x);
            }
    while (!stack.empty()) {
        auto [y, x] = stack.back();
        stack.pop_back();
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                const int ny = y + dy, nx = x + dx;
                if (ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
                if (at(out, ny, nx) == 0.0 && at(nms, ny, nx) >= low) {
                    at(out, ny, nx) = 1.0;
                    stack.emplace_back(ny, nx);
                }
            }
    }
    return Tensor::from({H, W}, std::move(out));
}

}  // namespace great
