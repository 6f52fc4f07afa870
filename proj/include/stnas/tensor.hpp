#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "stnas/common.hpp"
#include "stnas/rng.hpp"

namespace stnas {

// Dense (batch, channels, time, height, width) shape. Scalars and flat
// vectors use trailing singleton axes.
struct Shape5 {
    i64 n = 0, c = 0, t = 0, h = 0, w = 0;

    i64 numel() const { return n * c * t * h * w; }

    bool operator==(const Shape5& o) const {
        return n == o.n && c == o.c && t == o.t && h == o.h && w == o.w;
    }
    bool operator!=(const Shape5& o) const { return !(*this == o); }

    std::string str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(t) +
               "," + std::to_string(h) + "," + std::to_string(w) + ")";
    }
};

// Contiguous 5-D array, w fastest. Gradient bookkeeping lives on the tape,
// not here; a Tensor is plain data.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape5 s, real fill = 0) : shape_(s), v_(check_size(s), fill) {}

    static Tensor zeros(Shape5 s) { return Tensor(s, 0); }
    static Tensor ones(Shape5 s) { return Tensor(s, 1); }

    static Tensor scalar(real v) {
        Tensor t(Shape5{1, 1, 1, 1, 1});
        t.v_[0] = v;
        return t;
    }

    const Shape5& shape() const { return shape_; }
    i64 numel() const { return static_cast<i64>(v_.size()); }
    bool empty() const { return v_.empty(); }

    real* data() { return v_.data(); }
    const real* data() const { return v_.data(); }

    real& at(i64 i) { return v_[static_cast<size_t>(i)]; }
    real at(i64 i) const { return v_[static_cast<size_t>(i)]; }

    i64 index(i64 n, i64 c, i64 t, i64 h, i64 w) const {
        return (((n * shape_.c + c) * shape_.t + t) * shape_.h + h) * shape_.w + w;
    }

    real& operator()(i64 n, i64 c, i64 t, i64 h, i64 w) { return v_[static_cast<size_t>(index(n, c, t, h, w))]; }
    real operator()(i64 n, i64 c, i64 t, i64 h, i64 w) const { return v_[static_cast<size_t>(index(n, c, t, h, w))]; }

    void fill(real v) { std::fill(v_.begin(), v_.end(), v); }

    void release() {
        v_.clear();
        v_.shrink_to_fit();
    }

    bool all_finite() const {
        for (real x : v_)
            if (!std::isfinite(x)) return false;
        return true;
    }

private:
    static size_t check_size(Shape5 s) {
        if (s.n <= 0 || s.c <= 0 || s.t <= 0 || s.h <= 0 || s.w <= 0)
            throw DimensionError("tensor shape must be positive, got " + s.str());
        return static_cast<size_t>(s.numel());
    }

    Shape5 shape_{};
    std::vector<real> v_;
};

inline Tensor random_uniform(Shape5 s, real lo, real hi, Rng& rng) {
    Tensor t(s);
    for (i64 i = 0; i < t.numel(); ++i) t.at(i) = rng.uniform(lo, hi);
    return t;
}

inline Tensor random_normal(Shape5 s, real mean, real stddev, Rng& rng) {
    Tensor t(s);
    for (i64 i = 0; i < t.numel(); ++i) t.at(i) = mean + stddev * rng.normal();
    return t;
}

}  // namespace stnas
