#pragma once

#include <array>
#include <vector>

#include "stnas/rng.hpp"
#include "stnas/tensor.hpp"

namespace stnas {

// Segment sampling: the clip [0, L) is cut into Ns segments of floor(L/Ns)
// frames (remainder to the last), and Nr distinct frames are drawn uniformly
// inside each segment, then sorted. Result: Ns*Nr strictly increasing
// indices that respect segment boundaries.
inline std::vector<i64> segment_sample(i64 L, int Ns, int Nr, Rng& rng) {
    if (Ns < 1 || Nr < 1) throw DomainError("segment_sample: Ns and Nr must be >= 1");
    if (L < static_cast<i64>(Ns) * Nr)
        throw DomainError("segment_sample: clip length " + std::to_string(L) +
                          " < Ns*Nr = " + std::to_string(static_cast<i64>(Ns) * Nr));
    const i64 w = L / Ns;
    std::vector<i64> out;
    out.reserve(static_cast<size_t>(Ns) * Nr);
    std::vector<i64> pool;
    for (int s = 0; s < Ns; ++s) {
        const i64 lo = static_cast<i64>(s) * w;
        const i64 hi = s == Ns - 1 ? L : lo + w;
        pool.clear();
        for (i64 i = lo; i < hi; ++i) pool.push_back(i);
        // Partial Fisher-Yates: the first Nr slots become a uniform draw
        // without replacement.
        for (int k = 0; k < Nr; ++k) {
            const i64 j = k + rng.uniform_int(static_cast<i64>(pool.size()) - k);
            std::swap(pool[static_cast<size_t>(k)], pool[static_cast<size_t>(j)]);
        }
        std::sort(pool.begin(), pool.begin() + Nr);
        out.insert(out.end(), pool.begin(), pool.begin() + Nr);
    }
    return out;
}

// Deterministic test-time variant: the lower-middle Nr frames of each
// segment (offset floor((len - Nr) / 2)).
inline std::vector<i64> center_sample(i64 L, int Ns, int Nr) {
    if (Ns < 1 || Nr < 1) throw DomainError("center_sample: Ns and Nr must be >= 1");
    if (L < static_cast<i64>(Ns) * Nr)
        throw DomainError("center_sample: clip length " + std::to_string(L) +
                          " < Ns*Nr = " + std::to_string(static_cast<i64>(Ns) * Nr));
    const i64 w = L / Ns;
    std::vector<i64> out;
    for (int s = 0; s < Ns; ++s) {
        const i64 lo = static_cast<i64>(s) * w;
        const i64 len = s == Ns - 1 ? L - lo : w;
        const i64 off = (len - Nr) / 2;
        for (int k = 0; k < Nr; ++k) out.push_back(lo + off + k);
    }
    return out;
}

// Gathers the listed frames of a (1,3,L,H,W) clip into a (1,3,T,H,W) tensor.
inline Tensor select_frames(const Tensor& clip, const std::vector<i64>& idx) {
    const Shape5 s = clip.shape();
    Tensor out(Shape5{1, s.c, static_cast<i64>(idx.size()), s.h, s.w});
    const i64 plane = s.h * s.w;
    for (i64 c = 0; c < s.c; ++c)
        for (size_t k = 0; k < idx.size(); ++k) {
            const i64 src = idx[k];
            if (src < 0 || src >= s.t)
                throw DomainError("select_frames: index " + std::to_string(src) + " outside [0, " +
                                  std::to_string(s.t) + ")");
            std::copy(clip.data() + clip.index(0, c, src, 0, 0),
                      clip.data() + clip.index(0, c, src, 0, 0) + plane,
                      out.data() + out.index(0, c, static_cast<i64>(k), 0, 0));
        }
    return out;
}

inline Tensor hflip(const Tensor& x) {
    const Shape5 s = x.shape();
    Tensor out(s);
    for (i64 n = 0; n < s.n; ++n)
        for (i64 c = 0; c < s.c; ++c)
            for (i64 t = 0; t < s.t; ++t)
                for (i64 h = 0; h < s.h; ++h) {
                    const real* src = x.data() + x.index(n, c, t, h, 0);
                    real* dst = out.data() + out.index(n, c, t, h, 0);
                    for (i64 w = 0; w < s.w; ++w) dst[w] = src[s.w - 1 - w];
                }
    return out;
}

inline Tensor crop(const Tensor& x, i64 top, i64 left, i64 size) {
    const Shape5 s = x.shape();
    if (size < 1 || top < 0 || left < 0 || top + size > s.h || left + size > s.w)
        throw DomainError("crop: window " + std::to_string(size) + "@" + std::to_string(top) + "," +
                          std::to_string(left) + " outside " + std::to_string(s.h) + "x" +
                          std::to_string(s.w));
    Tensor out(Shape5{s.n, s.c, s.t, size, size});
    for (i64 n = 0; n < s.n; ++n)
        for (i64 c = 0; c < s.c; ++c)
            for (i64 t = 0; t < s.t; ++t)
                for (i64 h = 0; h < size; ++h)
                    std::copy(x.data() + x.index(n, c, t, top + h, left),
                              x.data() + x.index(n, c, t, top + h, left) + size,
                              out.data() + out.index(n, c, t, h, 0));
    return out;
}

inline void normalize_inplace(Tensor& x, const std::array<real, 3>& mean,
                              const std::array<real, 3>& stddev) {
    const Shape5 s = x.shape();
    if (s.c != 3) throw DimensionError("normalize: expected 3 channels");
    for (i64 n = 0; n < s.n; ++n)
        for (i64 c = 0; c < 3; ++c) {
            const real m = mean[static_cast<size_t>(c)];
            const real d = 1.0 / stddev[static_cast<size_t>(c)];
            real* p = x.data() + x.index(n, c, 0, 0, 0);
            const i64 cnt = s.t * s.h * s.w;
            for (i64 i = 0; i < cnt; ++i) p[i] = (p[i] - m) * d;
        }
}

struct AugmentConfig {
    i64 crop_size = 112;
    bool flip = true;  // horizontal flip with p = 0.5 (train only)
    std::array<real, 3> mean{0, 0, 0};
    std::array<real, 3> stddev{1, 1, 1};
};

// Train-time augmentation: normalize, optional random flip, random crop.
inline Tensor augment_train(const Tensor& frames, const AugmentConfig& cfg, Rng& rng) {
    const Shape5 s = frames.shape();
    if (s.h < cfg.crop_size || s.w < cfg.crop_size)
        throw DomainError("augment: frames " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                          " smaller than crop " + std::to_string(cfg.crop_size));
    Tensor out = cfg.flip && rng.bernoulli(0.5) ? hflip(frames) : Tensor(frames);
    const i64 top = rng.uniform_int(s.h - cfg.crop_size + 1);
    const i64 left = rng.uniform_int(s.w - cfg.crop_size + 1);
    out = crop(out, top, left, cfg.crop_size);
    normalize_inplace(out, cfg.mean, cfg.stddev);
    return out;
}

// Test-time: normalize + center crop only. Deterministic.
inline Tensor augment_eval(const Tensor& frames, const AugmentConfig& cfg) {
    const Shape5 s = frames.shape();
    if (s.h < cfg.crop_size || s.w < cfg.crop_size)
        throw DomainError("augment: frames " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                          " smaller than crop " + std::to_string(cfg.crop_size));
    Tensor out = crop(frames, (s.h - cfg.crop_size) / 2, (s.w - cfg.crop_size) / 2, cfg.crop_size);
    normalize_inplace(out, cfg.mean, cfg.stddev);
    return out;
}

}  // namespace stnas
