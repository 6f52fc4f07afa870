#pragma once

#include <array>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "stnas/sampling.hpp"

namespace stnas {

// ---------------------------------------------------------------------------
// Clip file: magic "STNASCLIP1", u32 L, C(=3), H, W little-endian, then
// L*3*H*W f32 values frame-major (frame, channel, row, column).

inline constexpr const char* kClipMagic = "STNASCLIP1";

inline void save_clip(const std::string& path, const Tensor& clip) {
    const Shape5 s = clip.shape();
    if (s.n != 1 || s.c != 3) throw DimensionError("save_clip: expected shape (1,3,L,H,W)");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write clip '" + path + "'");
    os.write(kClipMagic, 10);
    const auto u32 = [&](i64 v) {
        const uint32_t x = static_cast<uint32_t>(v);
        os.write(reinterpret_cast<const char*>(&x), 4);
    };
    u32(s.t);
    u32(s.c);
    u32(s.h);
    u32(s.w);
    std::vector<float> plane(static_cast<size_t>(s.h * s.w));
    for (i64 t = 0; t < s.t; ++t)
        for (i64 c = 0; c < 3; ++c) {
            const real* p = clip.data() + clip.index(0, c, t, 0, 0);
            for (i64 i = 0; i < s.h * s.w; ++i) plane[static_cast<size_t>(i)] = static_cast<float>(p[i]);
            os.write(reinterpret_cast<const char*>(plane.data()),
                     static_cast<std::streamsize>(plane.size() * sizeof(float)));
        }
    if (!os) throw IoError("failed writing clip '" + path + "'");
}

inline Tensor load_clip(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read clip '" + path + "'");
    char magic[10];
    is.read(magic, 10);
    if (!is || std::memcmp(magic, kClipMagic, 10) != 0)
        throw IoError("'" + path + "' is not a clip file");
    const auto u32 = [&]() {
        uint32_t x = 0;
        is.read(reinterpret_cast<char*>(&x), 4);
        return static_cast<i64>(x);
    };
    const i64 L = u32(), C = u32(), H = u32(), W = u32();
    if (!is || C != 3 || L < 1 || H < 1 || W < 1)
        throw IoError("clip '" + path + "' has bad geometry");
    Tensor clip(Shape5{1, 3, L, H, W});
    std::vector<float> plane(static_cast<size_t>(H * W));
    for (i64 t = 0; t < L; ++t)
        for (i64 c = 0; c < 3; ++c) {
            is.read(reinterpret_cast<char*>(plane.data()),
                    static_cast<std::streamsize>(plane.size() * sizeof(float)));
            if (!is) throw IoError("clip '" + path + "' truncated");
            real* p = clip.data() + clip.index(0, c, t, 0, 0);
            for (i64 i = 0; i < H * W; ++i) p[i] = static_cast<real>(plane[static_cast<size_t>(i)]);
        }
    return clip;
}

// ---------------------------------------------------------------------------
// Manifest: header (classes, train split fraction, normalization constants
// frozen from the training portion), then one `<file> <label>` line per clip.

struct ClipEntry {
    std::string file;
    int label = 0;
};

struct Manifest {
    int classes = 0;
    real split = 0.8;
    std::array<real, 3> mean{0, 0, 0};
    std::array<real, 3> stddev{1, 1, 1};
    std::vector<ClipEntry> clips;
};

inline void save_manifest(const std::string& path, const Manifest& m) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write manifest '" + path + "'");
    os << "stnas-manifest v1\n";
    os << "classes " << m.classes << "\n";
    os << "split " << fmt_real(m.split) << "\n";
    os << "mean " << fmt_real(m.mean[0]) << " " << fmt_real(m.mean[1]) << " " << fmt_real(m.mean[2])
       << "\n";
    os << "std " << fmt_real(m.stddev[0]) << " " << fmt_real(m.stddev[1]) << " "
       << fmt_real(m.stddev[2]) << "\n";
    os << "clips " << m.clips.size() << "\n";
    for (const ClipEntry& c : m.clips) os << c.file << " " << c.label << "\n";
    if (!os) throw IoError("failed writing manifest '" + path + "'");
}

inline Manifest load_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read manifest '" + path + "'");
    std::string line;
    if (!std::getline(is, line) || line != "stnas-manifest v1")
        throw IoError("manifest '" + path + "' has a bad header");
    Manifest m;
    i64 count = 0;
    const auto parse = [&](const char* key, auto&&... out) {
        if (!std::getline(is, line)) throw IoError("manifest: missing '" + std::string(key) + "'");
        std::istringstream ls(line);
        std::string k;
        if (!(ls >> k) || k != key || !((ls >> out) && ...))
            throw IoError("manifest: bad line '" + line + "'");
    };
    parse("classes", m.classes);
    parse("split", m.split);
    parse("mean", m.mean[0], m.mean[1], m.mean[2]);
    parse("std", m.stddev[0], m.stddev[1], m.stddev[2]);
    parse("clips", count);
    for (i64 i = 0; i < count; ++i) {
        if (!std::getline(is, line)) throw IoError("manifest: clip list truncated");
        std::istringstream ls(line);
        ClipEntry e;
        if (!(ls >> e.file >> e.label)) throw IoError("manifest: bad clip line '" + line + "'");
        if (e.label < 0 || e.label >= m.classes)
            throw IoError("manifest: label " + std::to_string(e.label) + " outside [0, " +
                          std::to_string(m.classes) + ")");
        m.clips.push_back(std::move(e));
    }
    return m;
}

// Per-class split: the first round(split * count) clips of each class (in
// manifest order) are the training portion. Deterministic.
struct CorpusSplit {
    std::vector<i64> train, test;
};

inline CorpusSplit split_corpus(const Manifest& m) {
    std::vector<i64> per_class(static_cast<size_t>(m.classes), 0);
    for (const ClipEntry& c : m.clips) ++per_class[static_cast<size_t>(c.label)];
    std::vector<i64> want(static_cast<size_t>(m.classes));
    for (int c = 0; c < m.classes; ++c)
        want[static_cast<size_t>(c)] =
            static_cast<i64>(std::floor(m.split * static_cast<real>(per_class[static_cast<size_t>(c)]) + 0.5));
    CorpusSplit out;
    std::vector<i64> seen(static_cast<size_t>(m.classes), 0);
    for (i64 i = 0; i < static_cast<i64>(m.clips.size()); ++i) {
        const int c = m.clips[static_cast<size_t>(i)].label;
        if (seen[static_cast<size_t>(c)]++ < want[static_cast<size_t>(c)])
            out.train.push_back(i);
        else
            out.test.push_back(i);
    }
    return out;
}

// In-memory corpus: manifest plus all clips loaded eagerly (desk-scale data).
class ClipStore {
public:
    ClipStore(const std::string& dir, Manifest m) : dir_(dir), man_(std::move(m)) {
        clips_.reserve(man_.clips.size());
        for (const ClipEntry& e : man_.clips) clips_.push_back(load_clip(dir_ + "/" + e.file));
    }
    static ClipStore open(const std::string& dir) {
        return ClipStore(dir, load_manifest(dir + "/manifest.txt"));
    }
    i64 size() const { return static_cast<i64>(clips_.size()); }
    int label(i64 i) const { return man_.clips[static_cast<size_t>(i)].label; }
    const Tensor& clip(i64 i) const { return clips_[static_cast<size_t>(i)]; }
    const Manifest& manifest() const { return man_; }
    const std::string& dir() const { return dir_; }

private:
    std::string dir_;
    Manifest man_;
    std::vector<Tensor> clips_;
};

// ---------------------------------------------------------------------------
// Synthetic corpus. Every clip shows the same radial blob on a flat
// background; the class determines only its per-frame displacement. Motion
// wraps toroidally, so over a uniform start position every single frame has
// exactly the same distribution for every class: stills carry no label
// information, only frame order does. An appearance variant (class encoded
// in blob size, no motion) exists for tests that need per-frame-visible
// classes.

struct CorpusSpec {
    int classes = 3;
    int clips_per_class = 100;
    i64 frames = 16, height = 32, width = 32;
    real split = 0.8;
    std::vector<std::array<int, 2>> motion;  // per-class (dx, dy) in px/frame; empty = defaults
    bool appearance_classes = false;
    uint64_t seed = 1;
};

namespace detail {

inline std::vector<std::array<int, 2>> default_motion(int classes) {
    static const std::array<std::array<int, 2>, 6> table = {
        {{{-2, 0}}, {{2, 0}}, {{0, 0}}, {{0, -2}}, {{0, 2}}, {{-2, -2}}}};
    if (classes > static_cast<int>(table.size()))
        throw ConfigError("corpus: explicit motion vectors required for more than 6 classes");
    return std::vector<std::array<int, 2>>(table.begin(), table.begin() + classes);
}

// Blob pattern: radial falloff, channel-scaled so the three channels differ.
inline void render_clip(Tensor& clip, int dx, int dy, i64 x0, i64 y0, i64 radius) {
    const Shape5 s = clip.shape();
    clip.fill(0.1);
    const std::array<real, 3> gain{1.0, 0.8, 0.6};
    for (i64 t = 0; t < s.t; ++t) {
        const i64 cx = ((x0 + static_cast<i64>(dx) * t) % s.w + s.w) % s.w;
        const i64 cy = ((y0 + static_cast<i64>(dy) * t) % s.h + s.h) % s.h;
        for (i64 by = -radius; by <= radius; ++by)
            for (i64 bx = -radius; bx <= radius; ++bx) {
                const real r = std::sqrt(static_cast<real>(bx * bx + by * by));
                const real v = 1.0 - r / (static_cast<real>(radius) + 0.5);
                if (v <= 0) continue;
                const i64 px = ((cx + bx) % s.w + s.w) % s.w;
                const i64 py = ((cy + by) % s.h + s.h) % s.h;
                for (i64 c = 0; c < 3; ++c) {
                    real& cell = clip(0, c, t, py, px);
                    cell = std::min<real>(1.0, cell + gain[static_cast<size_t>(c)] * v);
                }
            }
    }
}

}  // namespace detail

// Generates the corpus into dir (created if needed) and returns the
// manifest, which is also written to dir/manifest.txt. Byte-deterministic
// per spec: each clip derives its own stream from the corpus seed and its
// global index.
inline Manifest synth_corpus(const CorpusSpec& cs, const std::string& dir) {
    if (cs.classes < 2) throw ConfigError("corpus: need at least 2 classes");
    if (cs.clips_per_class < 1) throw ConfigError("corpus: need at least 1 clip per class");
    if (cs.frames < 1) throw ConfigError("corpus: need at least 1 frame");
    const std::vector<std::array<int, 2>> motion =
        cs.appearance_classes ? std::vector<std::array<int, 2>>(static_cast<size_t>(cs.classes),
                                                                std::array<int, 2>{0, 0})
                              : (cs.motion.empty() ? detail::default_motion(cs.classes) : cs.motion);
    if (static_cast<int>(motion.size()) != cs.classes)
        throw ConfigError("corpus: motion table has " + std::to_string(motion.size()) +
                          " entries for " + std::to_string(cs.classes) + " classes");
    const i64 base_radius = 4;
    const i64 max_radius = cs.appearance_classes ? base_radius + cs.classes - 1 : base_radius;
    if (2 * max_radius + 1 > std::min(cs.height, cs.width))
        throw ConfigError("corpus: blob diameter " + std::to_string(2 * max_radius + 1) +
                          " does not fit in " + std::to_string(cs.height) + "x" +
                          std::to_string(cs.width) + " frames");
    for (int c = 0; c < cs.classes; ++c) {
        const auto& mv = motion[static_cast<size_t>(c)];
        if (std::abs(mv[0]) >= cs.width || std::abs(mv[1]) >= cs.height)
            throw ConfigError("corpus: class " + std::to_string(c) +
                              " moves a full frame per step; motion would alias");
        if (!cs.appearance_classes)
            for (int c2 = 0; c2 < c; ++c2)
                if (motion[static_cast<size_t>(c2)] == mv)
                    throw ConfigError("corpus: classes " + std::to_string(c2) + " and " +
                                      std::to_string(c) + " share motion (" + std::to_string(mv[0]) +
                                      "," + std::to_string(mv[1]) + ") and are indistinguishable");
    }

    std::filesystem::create_directories(dir);
    Rng master(cs.seed);
    Manifest m;
    m.classes = cs.classes;
    m.split = cs.split;
    m.mean = {0, 0, 0};
    m.stddev = {1, 1, 1};

    std::vector<Tensor> train_clips;
    for (int c = 0; c < cs.classes; ++c) {
        const i64 train_count = static_cast<i64>(
            std::floor(cs.split * static_cast<real>(cs.clips_per_class) + 0.5));
        for (int k = 0; k < cs.clips_per_class; ++k) {
            const i64 global = static_cast<i64>(c) * cs.clips_per_class + k;
            Rng rng = master.split(static_cast<uint64_t>(global));
            const i64 x0 = rng.uniform_int(cs.width);
            const i64 y0 = rng.uniform_int(cs.height);
            const i64 radius = cs.appearance_classes ? base_radius + c : base_radius;
            Tensor clip(Shape5{1, 3, cs.frames, cs.height, cs.width});
            detail::render_clip(clip, motion[static_cast<size_t>(c)][0],
                                motion[static_cast<size_t>(c)][1], x0, y0, radius);
            char name[64];
            std::snprintf(name, sizeof(name), "clip_c%d_%03d.stnas", c, k);
            save_clip(dir + "/" + name, clip);
            m.clips.push_back(ClipEntry{name, c});
            if (k < train_count) train_clips.push_back(std::move(clip));
        }
    }

    // Normalization constants from the training portion only.
    std::array<real, 3> sum{0, 0, 0}, sq{0, 0, 0};
    i64 count = 0;
    for (const Tensor& clip : train_clips) {
        const Shape5 s = clip.shape();
        const i64 plane = s.t * s.h * s.w;
        for (i64 c = 0; c < 3; ++c) {
            const real* p = clip.data() + clip.index(0, c, 0, 0, 0);
            for (i64 i = 0; i < plane; ++i) {
                sum[static_cast<size_t>(c)] += p[i];
                sq[static_cast<size_t>(c)] += p[i] * p[i];
            }
        }
        count += plane;
    }
    for (i64 c = 0; c < 3; ++c) {
        const real mu = sum[static_cast<size_t>(c)] / static_cast<real>(count);
        const real var = sq[static_cast<size_t>(c)] / static_cast<real>(count) - mu * mu;
        m.mean[static_cast<size_t>(c)] = mu;
        m.stddev[static_cast<size_t>(c)] = std::sqrt(std::max<real>(var, 1e-12));
    }

    save_manifest(dir + "/manifest.txt", m);
    return m;
}

// ---------------------------------------------------------------------------
// Batch assembly.

struct ClipBatch {
    Tensor frames{Shape5{1, 1, 1, 1, 1}};
    std::vector<int> labels;
};

inline AugmentConfig corpus_augment(const Manifest& m, i64 crop, bool flip) {
    AugmentConfig a;
    a.crop_size = crop;
    a.flip = flip;
    a.mean = m.mean;
    a.stddev = m.stddev;
    return a;
}

inline ClipBatch make_batch(const ClipStore& store, const std::vector<i64>& ids, int Ns, int Nr,
                            const AugmentConfig& aug, Rng& rng, bool train) {
    if (ids.empty()) throw DomainError("make_batch: empty id list");
    const i64 T = static_cast<i64>(Ns) * Nr;
    ClipBatch b;
    b.frames = Tensor(Shape5{static_cast<i64>(ids.size()), 3, T, aug.crop_size, aug.crop_size});
    for (size_t k = 0; k < ids.size(); ++k) {
        const Tensor& clip = store.clip(ids[k]);
        const std::vector<i64> idx = train ? segment_sample(clip.shape().t, Ns, Nr, rng)
                                           : center_sample(clip.shape().t, Ns, Nr);
        Tensor frames = select_frames(clip, idx);
        frames = train ? augment_train(frames, aug, rng) : augment_eval(frames, aug);
        std::copy(frames.data(), frames.data() + frames.numel(),
                  b.frames.data() + static_cast<i64>(k) * frames.numel());
        b.labels.push_back(store.label(ids[k]));
    }
    return b;
}

}  // namespace stnas
