#include "great/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace great {

std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ",";
        os << s[i];
    }
    os << "]";
    return os.str();
}

bool all_finite(const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
    for (int d : shape)
        if (d <= 0) throw shape_error("Tensor: nonpositive dimension in " + shape_str(shape));
    if (shape_numel(shape) != static_cast<std::int64_t>(values.size()))
        throw shape_error("Tensor: " + std::to_string(values.size()) + " elements for shape " + shape_str(shape));
    if (!all_finite(values)) throw numeric_error("Tensor: non-finite element at creation");
    Tensor t;
    t.shape = std::move(shape);
    t.data = std::make_shared<std::vector<double>>(std::move(values));
    return t;
}

Tensor Tensor::zeros(Shape shape) {
    return full(std::move(shape), 0.0);
}

Tensor Tensor::full(Shape shape, double value) {
    auto n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), value));
}

Tensor Tensor::scalar_value(double value) {
    return from({1}, {value});
}

}  // namespace great
