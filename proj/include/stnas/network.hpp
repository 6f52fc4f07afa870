#pragma once

#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "stnas/cell.hpp"

namespace stnas {

enum class NetMode { continuous, discrete };

struct NetworkSpec {
    int depth = 2;          // number of cells
    i64 init_channels = 4;  // C0, per-node width of the first cell
    int n = 2;              // nodes per cell
    int classes = 3;
    int reduce_every = 2;   // spatial reduction before cell i when i % reduce_every == 0
    NetMode mode = NetMode::discrete;

    void validate() const {
        if (depth < 1) throw ConfigError("network: depth must be >= 1");
        if (init_channels < 1) throw ConfigError("network: init_channels must be >= 1");
        if (n < 1) throw ConfigError("network: nodes must be >= 1");
        if (classes < 2) throw ConfigError("network: classes must be >= 2");
        if (reduce_every < 1) throw ConfigError("network: reduce_every must be >= 1");
    }
};

// Reductions sit before cell i for i in [1, depth) with i % reduce_every == 0;
// each doubles the per-node width and halves H and W.
inline int reductions_up_to(int cell, int reduce_every) {
    int r = 0;
    for (int j = 1; j <= cell; ++j)
        if (j % reduce_every == 0) ++r;
    return r;
}

// 1x1 adaptation in front of each cell input: ReLU -> conv (spatial stride
// 2^k at reduction boundaries) -> norm. Present on every input so both cell
// inputs always arrive at the cell's width and resolution.
struct AdaptLayer {
    i64 w = -1;
    i64 bn_s = -1, bn_b = -1, bn_m = -1, bn_v = -1;
    int stride = 1;
    i64 cin = 0, cout = 0;
};

struct NetworkState {
    NetworkSpec spec;
    Genotype genotype;  // meaningful iff spec.mode == discrete
    ParamStore store;
    Tensor alpha;  // (M,8,1,1,1) shared across cells iff continuous
    bool temporal_ablated = false;

    i64 stem_ws = -1, stem_wt = -1;
    i64 stem_bn_s = -1, stem_bn_b = -1, stem_bn_m = -1, stem_bn_v = -1;

    struct CellWiring {
        CellSpec cspec;
        CellParams params;
        AdaptLayer adapt_pp, adapt_p;
    };
    std::vector<CellWiring> cells;

    i64 head_w = -1, head_b = -1;

    i64 alpha_rows() const { return connection_count(spec.n); }
};

namespace detail {

inline AdaptLayer make_adapt(ParamStore& store, const std::string& prefix, i64 cin, i64 cout,
                             int stride, Rng& rng) {
    AdaptLayer a;
    a.cin = cin;
    a.cout = cout;
    a.stride = stride;
    a.w = store.add(prefix + "/w", init_conv_weight(Shape5{cout, cin, 1, 1, 1}, rng));
    a.bn_s = store.add(prefix + "/bn_s", Tensor::ones(Shape5{1, cout, 1, 1, 1}), true);
    a.bn_b = store.add(prefix + "/bn_b", Tensor::zeros(Shape5{1, cout, 1, 1, 1}), true);
    a.bn_m = store.add_buffer(prefix + "/bn_m", Tensor::zeros(Shape5{1, cout, 1, 1, 1}));
    a.bn_v = store.add_buffer(prefix + "/bn_v", Tensor::ones(Shape5{1, cout, 1, 1, 1}));
    return a;
}

}  // namespace detail

// Deterministic construction: one splitmix stream drives every init, and
// parameters register in a fixed traversal order (stem, cells, head), which
// defines the flat checkpoint order.
inline NetworkState build_network(const NetworkSpec& spec, const Genotype* genotype,
                                  uint64_t seed) {
    spec.validate();
    if (spec.mode == NetMode::discrete) {
        if (!genotype) throw ConfigError("network: discrete mode requires a genotype");
        if (genotype->n != spec.n)
            throw ConfigError("network: genotype n=" + std::to_string(genotype->n) +
                              " does not match spec n=" + std::to_string(spec.n));
    }
    NetworkState st;
    st.spec = spec;
    if (genotype) st.genotype = *genotype;
    Rng rng(seed);

    const i64 c0 = spec.init_channels;
    // Stem: (2+1)D conv block 3 -> C0 at full resolution. No leading ReLU:
    // the input is already normalized and a ReLU would discard half of it.
    st.stem_ws = st.store.add("stem/ws", init_conv_weight(Shape5{c0, 3, 1, 3, 3}, rng));
    st.stem_wt = st.store.add("stem/wt", init_conv_weight(Shape5{c0, c0, 3, 1, 1}, rng));
    st.stem_bn_s = st.store.add("stem/bn_s", Tensor::ones(Shape5{1, c0, 1, 1, 1}), true);
    st.stem_bn_b = st.store.add("stem/bn_b", Tensor::zeros(Shape5{1, c0, 1, 1, 1}), true);
    st.stem_bn_m = st.store.add_buffer("stem/bn_m", Tensor::zeros(Shape5{1, c0, 1, 1, 1}));
    st.stem_bn_v = st.store.add_buffer("stem/bn_v", Tensor::ones(Shape5{1, c0, 1, 1, 1}));

    // Feature geometry of each cell input source: stem output, then cell
    // outputs. scale = accumulated spatial downsampling factor.
    struct Geom {
        i64 channels;
        int scale;
    };
    const Geom stem_geom{c0, 1};
    std::vector<Geom> cell_geom;
    for (int i = 0; i < spec.depth; ++i) {
        const int r = reductions_up_to(i, spec.reduce_every);
        const i64 width = c0 << r;
        const int scale = 1 << r;
        const Geom pp = i >= 2 ? cell_geom[static_cast<size_t>(i - 2)] : stem_geom;
        const Geom p = i >= 1 ? cell_geom[static_cast<size_t>(i - 1)] : stem_geom;
        const std::string prefix = "cell" + std::to_string(i);

        NetworkState::CellWiring cw;
        cw.cspec = CellSpec{spec.n, width};
        cw.adapt_pp = detail::make_adapt(st.store, prefix + "/adapt_pp", pp.channels, width,
                                         scale / pp.scale, rng);
        cw.adapt_p = detail::make_adapt(st.store, prefix + "/adapt_p", p.channels, width,
                                        scale / p.scale, rng);
        cw.params = spec.mode == NetMode::continuous
                        ? make_cell_continuous(st.store, prefix, cw.cspec, rng)
                        : make_cell_discrete(st.store, prefix, cw.cspec, st.genotype, rng);
        st.cells.push_back(std::move(cw));
        cell_geom.push_back(Geom{spec.n * width, scale});
    }

    const i64 features = cell_geom.back().channels;  // n * width of the last cell
    const real hb = 1.0 / std::sqrt(static_cast<real>(features));
    st.head_w = st.store.add("head/w", random_uniform(Shape5{spec.classes, features, 1, 1, 1},
                                                      -hb, hb, rng));
    st.head_b = st.store.add("head/b", random_uniform(Shape5{spec.classes, 1, 1, 1, 1}, -hb, hb, rng),
                             true);

    if (spec.mode == NetMode::continuous)
        st.alpha = Tensor::zeros(Shape5{st.alpha_rows(), kNumOperators, 1, 1, 1});
    return st;
}

// One taped forward pass. The tape owns all intermediate values; bound[i] is
// the tape variable of store.param(i), alpha_raw the architecture variable
// (continuous mode). Gradients are only tracked where requested, which lets
// the architecture-gradient path skip all weight-gradient work and vice
// versa.
struct NetForward {
    std::unique_ptr<Tape> tape;
    std::vector<VarId> bound;
    VarId alpha_raw = -1;
    VarId logits = -1;
};

inline NetForward network_forward(NetworkState& st, const Tensor& frames, Mode mode,
                                  bool grad_theta, bool grad_alpha) {
    const Shape5 fs = frames.shape();
    if (fs.c != 3) throw DimensionError("network: input must have 3 channels, got " +
                                        std::to_string(fs.c));
    const int total_red = reductions_up_to(st.spec.depth - 1, st.spec.reduce_every);
    const i64 div = i64(1) << total_red;
    if (fs.h % div != 0 || fs.w % div != 0)
        throw DimensionError("network: spatial size " + std::to_string(fs.h) + "x" +
                             std::to_string(fs.w) + " must be divisible by " + std::to_string(div));

    NetForward nf;
    nf.tape = std::make_unique<Tape>();
    Tape& t = *nf.tape;
    nf.bound.reserve(static_cast<size_t>(st.store.size()));
    for (i64 i = 0; i < st.store.size(); ++i)
        nf.bound.push_back(t.leaf(Tensor(st.store.param(i).value), grad_theta));
    FwdCtx cx{t, st.store, nf.bound, mode, st.temporal_ablated};

    VarId alpha_sm = -1;
    if (st.spec.mode == NetMode::continuous) {
        nf.alpha_raw = t.leaf(Tensor(st.alpha), grad_alpha);
        alpha_sm = softmax_channels(t, nf.alpha_raw);
    }

    // Stem.
    VarId x = t.constant(Tensor(frames));
    x = conv_spatial(t, x, nf.bound[static_cast<size_t>(st.stem_ws)], 1, 1, 1);
    x = conv_temporal(t, x, nf.bound[static_cast<size_t>(st.stem_wt)], 1, 1);
    x = batch_norm(t, x, nf.bound[static_cast<size_t>(st.stem_bn_s)],
                   nf.bound[static_cast<size_t>(st.stem_bn_b)],
                   &st.store.buffer(st.stem_bn_m).value, &st.store.buffer(st.stem_bn_v).value,
                   mode);

    const auto adapt = [&](const AdaptLayer& a, VarId in) {
        VarId h = relu(t, in);
        h = conv_spatial(t, h, nf.bound[static_cast<size_t>(a.w)], a.stride, 0, 1);
        return batch_norm(t, h, nf.bound[static_cast<size_t>(a.bn_s)],
                          nf.bound[static_cast<size_t>(a.bn_b)], &st.store.buffer(a.bn_m).value,
                          &st.store.buffer(a.bn_v).value, mode);
    };

    const VarId stem_out = x;
    std::vector<VarId> outs;
    for (int i = 0; i < st.spec.depth; ++i) {
        NetworkState::CellWiring& cw = st.cells[static_cast<size_t>(i)];
        const VarId pp_raw = i >= 2 ? outs[static_cast<size_t>(i - 2)] : stem_out;
        const VarId p_raw = i >= 1 ? outs[static_cast<size_t>(i - 1)] : stem_out;
        const VarId pp = adapt(cw.adapt_pp, pp_raw);
        const VarId p = adapt(cw.adapt_p, p_raw);
        const VarId out = st.spec.mode == NetMode::continuous
                              ? cell_forward_continuous(cx, cw.cspec, cw.params, alpha_sm, pp, p)
                              : cell_forward_discrete(cx, cw.cspec, cw.params, st.genotype, pp, p);
        outs.push_back(out);
    }

    VarId feat = global_avg_pool(t, outs.back());
    nf.logits = linear(t, feat, nf.bound[static_cast<size_t>(st.head_w)],
                       nf.bound[static_cast<size_t>(st.head_b)]);
    return nf;
}

// Learned-parameter accounting: per top-level group (stem, cellK, head) and
// total. Buffers (running stats) are excluded.
struct ParamBreakdown {
    std::vector<std::pair<std::string, i64>> rows;
    i64 total = 0;
};

inline ParamBreakdown count_params(const NetworkState& st) {
    ParamBreakdown b;
    for (i64 i = 0; i < st.store.size(); ++i) {
        const Param& p = st.store.param(i);
        const std::string group = p.name.substr(0, p.name.find('/'));
        if (b.rows.empty() || b.rows.back().first != group) b.rows.push_back({group, 0});
        b.rows.back().second += p.value.numel();
        b.total += p.value.numel();
    }
    return b;
}

// Analytic learned-parameter count of the full-3D counterpart of the same
// network: every decoupled conv pair (spatial k, temporal k) is replaced by
// one dense k x k x k conv; the SpeConv_3 triple likewise collapses to 3x3x3.
// Norm, adaptation, and head parameters are unchanged.
inline i64 conv_params_2p1d(OperatorKind k, i64 cin, i64 cout) {
    switch (k) {
        case OperatorKind::Conv_1: return cout * cin + cout * cout;
        case OperatorKind::Conv_3:
        case OperatorKind::DilConv_3: return cout * cin * 9 + cout * cout * 3;
        case OperatorKind::SpeConv_3: return cout * cin * 3 + cout * cout * 3 + cout * cout * 3;
        default: return 0;
    }
}

inline i64 conv_params_3d(OperatorKind k, i64 cin, i64 cout) {
    switch (k) {
        case OperatorKind::Conv_1: return cout * cin;
        case OperatorKind::Conv_3:
        case OperatorKind::DilConv_3:
        case OperatorKind::SpeConv_3: return cout * cin * 27;
        default: return 0;
    }
}

inline i64 count_params_3d_counterpart(const NetworkState& st) {
    i64 total = 0;
    const i64 c0 = st.spec.init_channels;
    total += c0 * 3 * 27;  // stem as a dense 3x3x3 conv
    total += 2 * c0;       // stem norm
    const auto op_total = [](const OperatorInstance& op) {
        i64 s = conv_params_3d(op.kind, op.cin, op.cout);
        if (op.bn_s >= 0) s += 2 * op.cout;
        return s;
    };
    for (const auto& cw : st.cells) {
        total += cw.adapt_pp.cout * cw.adapt_pp.cin + 2 * cw.adapt_pp.cout;
        total += cw.adapt_p.cout * cw.adapt_p.cin + 2 * cw.adapt_p.cout;
        for (const auto& conn : cw.params.conn_ops)
            for (const OperatorInstance& op : conn) total += op_total(op);
        for (const auto& node : cw.params.node_ops)
            for (const OperatorInstance& op : node) total += op_total(op);
    }
    const Param& hw = st.store.param(st.head_w);
    total += hw.value.numel() + st.store.param(st.head_b).value.numel();
    return total;
}

// Copies parameters and buffers whose names and sizes match; returns how
// many tensors were copied. Continuous and discrete networks share the
// cellK/connJ/<Kind> naming scheme, so a discretized network inherits the
// surviving operators' weights this way.
inline i64 copy_matching_params(NetworkState& dst, const NetworkState& src) {
    i64 copied = 0;
    for (i64 i = 0; i < dst.store.size(); ++i) {
        Param& d = dst.store.param(i);
        const i64 j = src.store.find(d.name);
        if (j < 0) continue;
        const Param& s = src.store.param(j);
        if (s.value.numel() != d.value.numel()) continue;
        d.value = s.value;
        ++copied;
    }
    for (i64 i = 0; i < dst.store.buffer_count(); ++i) {
        BufferSlot& d = dst.store.buffer(i);
        const i64 j = src.store.find_buffer(d.name);
        if (j < 0) continue;
        const BufferSlot& s = src.store.buffer(j);
        if (s.value.numel() != d.value.numel()) continue;
        d.value = s.value;
        ++copied;
    }
    return copied;
}

// Makes the network motion-blind: every temporal conv kernel is replaced by
// its average across taps (it then responds only to the local temporal mean)
// and temporal pooling becomes the identity. Spatial processing untouched.
// Idempotent.
inline void ablate_temporal(NetworkState& st) {
    for (i64 i = 0; i < st.store.size(); ++i) {
        Param& p = st.store.param(i);
        if (p.name.size() < 3 || p.name.substr(p.name.size() - 3) != "/wt") continue;
        const Shape5 s = p.value.shape();
        for (i64 co = 0; co < s.n; ++co)
            for (i64 ci = 0; ci < s.c; ++ci) {
                real mean = 0;
                for (i64 kt = 0; kt < s.t; ++kt) mean += p.value(co, ci, kt, 0, 0);
                mean /= static_cast<real>(s.t);
                for (i64 kt = 0; kt < s.t; ++kt) p.value(co, ci, kt, 0, 0) = mean;
            }
    }
    st.temporal_ablated = true;
}

// ---------------------------------------------------------------------------
// Checkpoint: text header with the spec, genotype, and tensor directory,
// then all tensors (params, buffers, alpha last) as raw little-endian f32 in
// the stable flat order. Save -> load -> save is byte-identical.

namespace detail {

inline void write_f32(std::ostream& os, const Tensor& t) {
    std::vector<float> buf(static_cast<size_t>(t.numel()));
    for (i64 i = 0; i < t.numel(); ++i) buf[static_cast<size_t>(i)] = static_cast<float>(t.at(i));
    os.write(reinterpret_cast<const char*>(buf.data()),
             static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

inline void read_f32(std::istream& is, Tensor& t) {
    std::vector<float> buf(static_cast<size_t>(t.numel()));
    is.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!is) throw IoError("checkpoint: truncated tensor data");
    for (i64 i = 0; i < t.numel(); ++i) t.at(i) = static_cast<real>(buf[static_cast<size_t>(i)]);
}

}  // namespace detail

inline void save_checkpoint(const NetworkState& st, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write checkpoint '" + path + "'");
    const bool has_alpha = st.spec.mode == NetMode::continuous;
    os << "stnas-checkpoint v1\n";
    os << "mode " << (st.spec.mode == NetMode::continuous ? "continuous" : "discrete") << "\n";
    os << "depth " << st.spec.depth << "\n";
    os << "channels " << st.spec.init_channels << "\n";
    os << "nodes " << st.spec.n << "\n";
    os << "classes " << st.spec.classes << "\n";
    os << "reduce_every " << st.spec.reduce_every << "\n";
    os << "temporal_ablated " << (st.temporal_ablated ? 1 : 0) << "\n";
    if (st.spec.mode == NetMode::discrete) {
        os << "genotype_begin\n" << st.genotype.serialize() << "genotype_end\n";
    }
    os << "tensors " << (st.store.size() + st.store.buffer_count() + (has_alpha ? 1 : 0)) << "\n";
    i64 total = 0;
    for (i64 i = 0; i < st.store.size(); ++i) {
        os << "param " << st.store.param(i).name << " " << st.store.param(i).value.numel() << "\n";
        total += st.store.param(i).value.numel();
    }
    for (i64 i = 0; i < st.store.buffer_count(); ++i) {
        os << "buffer " << st.store.buffer(i).name << " " << st.store.buffer(i).value.numel()
           << "\n";
        total += st.store.buffer(i).value.numel();
    }
    if (has_alpha) {
        os << "alpha " << st.alpha.numel() << "\n";
        total += st.alpha.numel();
    }
    os << "binary " << total << "\n";
    for (i64 i = 0; i < st.store.size(); ++i) detail::write_f32(os, st.store.param(i).value);
    for (i64 i = 0; i < st.store.buffer_count(); ++i) detail::write_f32(os, st.store.buffer(i).value);
    if (has_alpha) detail::write_f32(os, st.alpha);
    if (!os) throw IoError("failed writing checkpoint '" + path + "'");
}

inline NetworkState load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read checkpoint '" + path + "'");
    std::string line;
    const auto expect_line = [&](const std::string& what) {
        if (!std::getline(is, line)) throw IoError("checkpoint: missing " + what);
        return line;
    };
    if (expect_line("header") != "stnas-checkpoint v1")
        throw IoError("checkpoint: bad header in '" + path + "'");

    NetworkSpec spec;
    bool ablated = false;
    const auto kv = [&](const std::string& key) {
        std::istringstream ls(expect_line(key));
        std::string k, v;
        if (!(ls >> k >> v) || k != key) throw IoError("checkpoint: expected '" + key + "' line");
        return v;
    };
    const std::string mode = kv("mode");
    if (mode != "continuous" && mode != "discrete")
        throw IoError("checkpoint: bad mode '" + mode + "'");
    spec.mode = mode == "continuous" ? NetMode::continuous : NetMode::discrete;
    spec.depth = std::stoi(kv("depth"));
    spec.init_channels = std::stoll(kv("channels"));
    spec.n = std::stoi(kv("nodes"));
    spec.classes = std::stoi(kv("classes"));
    spec.reduce_every = std::stoi(kv("reduce_every"));
    ablated = kv("temporal_ablated") == "1";

    Genotype g;
    if (spec.mode == NetMode::discrete) {
        if (expect_line("genotype_begin") != "genotype_begin")
            throw IoError("checkpoint: expected genotype_begin");
        std::string gtext;
        while (expect_line("genotype body") != "genotype_end") gtext += line + "\n";
        g = Genotype::parse(gtext);
    }

    NetworkState st = build_network(spec, spec.mode == NetMode::discrete ? &g : nullptr, 0);
    st.temporal_ablated = ablated;

    std::istringstream ls(expect_line("tensors"));
    std::string tag;
    i64 ntensors = 0;
    if (!(ls >> tag >> ntensors) || tag != "tensors") throw IoError("checkpoint: bad tensors line");
    const bool has_alpha = spec.mode == NetMode::continuous;
    if (ntensors != st.store.size() + st.store.buffer_count() + (has_alpha ? 1 : 0))
        throw IoError("checkpoint: tensor count mismatch");

    for (i64 i = 0; i < st.store.size(); ++i) {
        std::istringstream ps(expect_line("param entry"));
        std::string kind, name;
        i64 numel;
        if (!(ps >> kind >> name >> numel) || kind != "param" || name != st.store.param(i).name ||
            numel != st.store.param(i).value.numel())
            throw IoError("checkpoint: param directory mismatch at '" + line + "'");
    }
    for (i64 i = 0; i < st.store.buffer_count(); ++i) {
        std::istringstream ps(expect_line("buffer entry"));
        std::string kind, name;
        i64 numel;
        if (!(ps >> kind >> name >> numel) || kind != "buffer" ||
            name != st.store.buffer(i).name || numel != st.store.buffer(i).value.numel())
            throw IoError("checkpoint: buffer directory mismatch at '" + line + "'");
    }
    if (has_alpha) {
        std::istringstream ps(expect_line("alpha entry"));
        std::string kind;
        i64 numel;
        if (!(ps >> kind >> numel) || kind != "alpha" || numel != st.alpha.numel())
            throw IoError("checkpoint: alpha directory mismatch");
    }
    {
        std::istringstream bs(expect_line("binary"));
        std::string k;
        i64 total;
        if (!(bs >> k >> total) || k != "binary") throw IoError("checkpoint: bad binary line");
    }
    for (i64 i = 0; i < st.store.size(); ++i) detail::read_f32(is, st.store.param(i).value);
    for (i64 i = 0; i < st.store.buffer_count(); ++i) detail::read_f32(is, st.store.buffer(i).value);
    if (has_alpha) detail::read_f32(is, st.alpha);
    return st;
}

}  // namespace stnas
