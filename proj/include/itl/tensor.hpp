#pragma once

#include <cassert>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace itl {

// CHW feature map / network activation. Double throughout: the gradient
// checks in the test suite difference the real code paths.
struct Tensor {
    int c = 0, h = 0, w = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int c_, int h_, int w_) : c(c_), h(h_), w(w_),
        v(static_cast<std::size_t>(c_) * h_ * w_, 0.0) {}

    std::size_t size() const { return v.size(); }
    std::size_t plane() const { return static_cast<std::size_t>(h) * w; }

    double* channel(int ci) { return v.data() + static_cast<std::size_t>(ci) * plane(); }
    const double* channel(int ci) const { return v.data() + static_cast<std::size_t>(ci) * plane(); }

    double& at(int ci, int y, int x) { return v[(static_cast<std::size_t>(ci) * h + y) * w + x]; }
    double at(int ci, int y, int x) const { return v[(static_cast<std::size_t>(ci) * h + y) * w + x]; }

    bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }
};

// Single 2D slice of intensities.
struct Image {
    int h = 0, w = 0;
    std::vector<double> v;

    Image() = default;
    Image(int h_, int w_, double fill = 0.0)
        : h(h_), w(w_), v(static_cast<std::size_t>(h_) * w_, fill) {}

    double& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
    double at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

// Binary mask; values are 0 or 1 by construction of every producer.
struct Mask {
    int h = 0, w = 0;
    std::vector<std::uint8_t> v;

    Mask() = default;
    Mask(int h_, int w_, std::uint8_t fill = 0)
        : h(h_), w(w_), v(static_cast<std::size_t>(h_) * w_, fill) {}

    std::uint8_t& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
    std::uint8_t at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }

    std::size_t foreground_count() const {
        std::size_t n = 0;
        for (auto p : v) n += p;
        return n;
    }
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::runtime_error(msg);
}

}  // namespace itl
