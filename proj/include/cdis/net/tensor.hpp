#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

namespace cdis::net {

/// Single-sample activation shape: channels x depth (slices) x height x width.
struct Shape {
    int c = 0;
    int d = 0;
    int h = 0;
    int w = 0;

    std::size_t spatial() const { return static_cast<std::size_t>(d) * h * w; }
    std::size_t size() const { return spatial() * c; }
    bool operator==(const Shape&) const = default;
    std::string str() const
    {
        return std::to_string(c) + "x" + std::to_string(d) + "x" + std::to_string(h) + "x" + std::to_string(w);
    }
};

template <typename T>
struct Tensor {
    Shape shape;
    std::vector<T> v;

    Tensor() = default;
    explicit Tensor(Shape s, T fill = T(0)) : shape(s), v(s.size(), fill) {}

    T* channel(int c) { return v.data() + static_cast<std::size_t>(c) * shape.spatial(); }
    const T* channel(int c) const { return v.data() + static_cast<std::size_t>(c) * shape.spatial(); }
};

/// A named trainable tensor with its gradient accumulator.
template <typename T>
struct Param {
    std::string name;
    std::vector<std::size_t> dims;
    std::vector<T> value;
    std::vector<T> grad;

    Param() = default;
    Param(std::string n, std::vector<std::size_t> shape, T fill = T(0)) : name(std::move(n)), dims(std::move(shape))
    {
        std::size_t count = 1;
        for (auto d : dims) count *= d;
        value.assign(count, fill);
        grad.assign(count, T(0));
    }

    std::size_t size() const { return value.size(); }
    void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

} // namespace cdis::net
