#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "great/errors.hpp"

namespace great {

class Tape;

using Shape = std::vector<int>;

std::int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);
bool all_finite(const std::vector<double>& v);

// A dense row-major tensor of 64-bit floats. Copies are shallow (the buffer is
// shared); mutation goes through mutable_data() which never reallocates.
// A tensor is either free-standing (node < 0) or bound to a node on a Tape,
// in which case the buffer is the tape node's saved forward value.
struct Tensor {
    Shape shape;
    std::shared_ptr<std::vector<double>> data;
    Tape* tape = nullptr;
    int node = -1;

    Tensor() = default;

    std::int64_t numel() const { return data ? static_cast<std::int64_t>(data->size()) : 0; }
    bool defined() const { return static_cast<bool>(data); }
    bool on_tape() const { return node >= 0 && tape != nullptr; }

    const std::vector<double>& values() const { return *data; }
    std::vector<double>& mutable_data() { return *data; }
    double operator[](std::int64_t i) const { return (*data)[static_cast<std::size_t>(i)]; }

    double scalar() const {
        if (numel() != 1) throw shape_error("Tensor::scalar: tensor has " + std::to_string(numel()) + " elements");
        return (*data)[0];
    }

    // Same values, no tape binding.
    Tensor detached() const {
        Tensor t;
        t.shape = shape;
        t.data = data;
        return t;
    }

    static Tensor from(Shape shape, std::vector<double> values);
    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor scalar_value(double value);
};

inline bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

}  // namespace great
