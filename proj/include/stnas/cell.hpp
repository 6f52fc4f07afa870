#pragma once

#include <algorithm>
#include <array>
#include <sstream>
#include <string>
#include <vector>

#include "stnas/operators.hpp"

namespace stnas {

// Sources feeding a node: 0 = output of the cell before last (pp), 1 = output
// of the previous cell (p), 2+k = node k of this cell. Node i may read from
// every earlier node, so it has i+2 candidate sources.
struct Connection {
    int dest;    // node index
    int source;  // source index as above
};

inline std::string source_name(int s) {
    if (s == 0) return "pp";
    if (s == 1) return "p";
    return "n" + std::to_string(s - 2);
}

inline int source_from_name(const std::string& s) {
    if (s == "pp") return 0;
    if (s == "p") return 1;
    if (s.size() >= 2 && s[0] == 'n') {
        for (size_t i = 1; i < s.size(); ++i)
            if (!std::isdigit(static_cast<unsigned char>(s[i])))
                throw ConfigError("bad source name '" + s + "'");
        return 2 + std::stoi(s.substr(1));
    }
    throw ConfigError("bad source name '" + s + "'");
}

// Canonical connection order: destination ascending, then source in the
// order pp, p, n0, n1, ... The position in this list is the row index into
// the architecture matrix.
inline std::vector<Connection> enumerate_connections(int n) {
    if (n < 1) throw DomainError("cell must have at least 1 node, got " + std::to_string(n));
    std::vector<Connection> out;
    for (int i = 0; i < n; ++i)
        for (int s = 0; s < i + 2; ++s) out.push_back(Connection{i, s});
    return out;
}

inline i64 connection_count(int n) {
    if (n < 1) throw DomainError("cell must have at least 1 node, got " + std::to_string(n));
    return static_cast<i64>(n) * (n + 3) / 2;
}

struct CellSpec {
    int n = 4;         // node count
    i64 channels = 8;  // per-node channel width C; cell output has n*C channels
};

// Discretized cell: per node, exactly two (source, operator) choices.
// Invariants: sources distinct and legal for the node; no operator is Zero.
struct Genotype {
    struct Edge {
        int source = 0;
        OperatorKind kind = OperatorKind::Skip_Con;
    };
    int n = 0;
    std::vector<std::array<Edge, 2>> nodes;

    void validate() const {
        if (n < 1 || static_cast<int>(nodes.size()) != n)
            throw ConfigError("genotype: node list does not match n=" + std::to_string(n));
        for (int i = 0; i < n; ++i) {
            const auto& e = nodes[static_cast<size_t>(i)];
            for (const Edge& ed : e) {
                if (ed.source < 0 || ed.source >= i + 2)
                    throw ConfigError("genotype: node " + std::to_string(i) + " has illegal source " +
                                      source_name(ed.source));
                if (ed.kind == OperatorKind::Zero)
                    throw ConfigError("genotype: node " + std::to_string(i) + " selects Zero");
            }
            if (e[0].source == e[1].source)
                throw ConfigError("genotype: node " + std::to_string(i) + " has duplicate sources");
        }
    }

    std::string serialize() const {
        validate();
        std::ostringstream os;
        os << "genotype v1\n";
        os << "nodes " << n << "\n";
        for (int i = 0; i < n; ++i) {
            const auto& e = nodes[static_cast<size_t>(i)];
            os << "node " << i << " " << source_name(e[0].source) << " " << op_name(e[0].kind)
               << " " << source_name(e[1].source) << " " << op_name(e[1].kind) << "\n";
        }
        return os.str();
    }

    static Genotype parse(const std::string& text) {
        std::istringstream is(text);
        std::string line;
        if (!std::getline(is, line) || line != "genotype v1")
            throw ConfigError("genotype: missing 'genotype v1' header");
        Genotype g;
        {
            if (!std::getline(is, line)) throw ConfigError("genotype: missing 'nodes' line");
            std::istringstream ls(line);
            std::string tag;
            if (!(ls >> tag >> g.n) || tag != "nodes")
                throw ConfigError("genotype: bad 'nodes' line: " + line);
        }
        if (g.n < 1) throw ConfigError("genotype: n must be >= 1");
        g.nodes.resize(static_cast<size_t>(g.n));
        for (int i = 0; i < g.n; ++i) {
            if (!std::getline(is, line))
                throw ConfigError("genotype: missing line for node " + std::to_string(i));
            std::istringstream ls(line);
            std::string tag, s0, k0, s1, k1;
            int idx;
            if (!(ls >> tag >> idx >> s0 >> k0 >> s1 >> k1) || tag != "node" || idx != i)
                throw ConfigError("genotype: bad node line: " + line);
            std::string extra;
            if (ls >> extra) throw ConfigError("genotype: trailing tokens on node line: " + line);
            g.nodes[static_cast<size_t>(i)][0] = Edge{source_from_name(s0), op_from_name(k0)};
            g.nodes[static_cast<size_t>(i)][1] = Edge{source_from_name(s1), op_from_name(k1)};
        }
        while (std::getline(is, line))
            if (!line.empty()) throw ConfigError("genotype: unexpected trailing line: " + line);
        g.validate();
        return g;
    }
};

namespace detail {

inline void softmax_row8(const real* in, real* out) {
    real mx = in[0];
    for (int j = 1; j < kNumOperators; ++j) mx = std::max(mx, in[j]);
    real z = 0;
    for (int j = 0; j < kNumOperators; ++j) {
        out[j] = std::exp(in[j] - mx);
        z += out[j];
    }
    for (int j = 0; j < kNumOperators; ++j) out[j] /= z;
}

}  // namespace detail

// Architecture matrix -> genotype. Each incoming connection is scored by its
// largest non-Zero softmax weight; the two best connections per node survive
// and each keeps its argmax non-Zero operator. Ties fall to the lower
// connection index, then the lower operator index, which makes the result
// deterministic and invariant under per-row constant shifts of alpha.
inline Genotype discretize(const CellSpec& spec, const Tensor& alpha) {
    const auto conns = enumerate_connections(spec.n);
    const i64 M = static_cast<i64>(conns.size());
    if (alpha.shape().n != M || alpha.shape().c != kNumOperators)
        throw DimensionError("discretize: alpha must be (" + std::to_string(M) + ",8), got " +
                             alpha.shape().str());
    for (i64 i = 0; i < alpha.numel(); ++i)
        if (!std::isfinite(alpha.at(i))) throw DomainError("discretize: non-finite alpha");

    Genotype g;
    g.n = spec.n;
    g.nodes.resize(static_cast<size_t>(spec.n));
    for (int node = 0; node < spec.n; ++node) {
        struct Scored {
            i64 conn;
            int source;
            real score;
            OperatorKind kind;
        };
        std::vector<Scored> in;
        for (i64 k = 0; k < M; ++k) {
            if (conns[static_cast<size_t>(k)].dest != node) continue;
            real sm[kNumOperators];
            detail::softmax_row8(alpha.data() + k * kNumOperators, sm);
            int best_j = -1;
            for (int j = 0; j < kNumOperators; ++j) {
                if (static_cast<OperatorKind>(j) == OperatorKind::Zero) continue;
                if (best_j < 0 || sm[j] > sm[best_j]) best_j = j;
            }
            in.push_back(Scored{k, conns[static_cast<size_t>(k)].source, sm[best_j],
                                static_cast<OperatorKind>(best_j)});
        }
        std::sort(in.begin(), in.end(), [](const Scored& a, const Scored& b) {
            if (a.score != b.score) return a.score > b.score;
            return a.conn < b.conn;
        });
        std::array<Scored, 2> kept = {in[0], in[1]};
        if (kept[0].source > kept[1].source) std::swap(kept[0], kept[1]);
        for (int e = 0; e < 2; ++e)
            g.nodes[static_cast<size_t>(node)][static_cast<size_t>(e)] =
                Genotype::Edge{kept[static_cast<size_t>(e)].source, kept[static_cast<size_t>(e)].kind};
    }
    g.validate();
    return g;
}

// Operator parameter sets of one cell.
// Continuous mode: all eight candidates on every connection.
// Discrete mode: two chosen operators per node.
struct CellParams {
    std::vector<std::vector<OperatorInstance>> conn_ops;   // [M][8]
    std::vector<std::array<OperatorInstance, 2>> node_ops;  // [n][2]
};

inline CellParams make_cell_continuous(ParamStore& store, const std::string& prefix,
                                       const CellSpec& spec, Rng& rng) {
    CellParams cp;
    const auto conns = enumerate_connections(spec.n);
    cp.conn_ops.resize(conns.size());
    for (size_t k = 0; k < conns.size(); ++k)
        for (int j = 0; j < kNumOperators; ++j) {
            const OperatorKind kind = static_cast<OperatorKind>(j);
            const std::string p = prefix + "/conn" + std::to_string(k) + "/" + op_name(kind);
            cp.conn_ops[k].push_back(make_operator(store, p, kind, spec.channels, spec.channels, rng));
        }
    return cp;
}

// Discrete parameters reuse the continuous naming scheme (cell/connK/Kind)
// so weights of surviving operators can be copied across by name.
inline CellParams make_cell_discrete(ParamStore& store, const std::string& prefix,
                                     const CellSpec& spec, const Genotype& g, Rng& rng) {
    if (g.n != spec.n)
        throw ConfigError("genotype has n=" + std::to_string(g.n) + " but cell spec has n=" +
                          std::to_string(spec.n));
    g.validate();
    CellParams cp;
    const auto conns = enumerate_connections(spec.n);
    const auto conn_index = [&](int dest, int source) -> i64 {
        for (size_t k = 0; k < conns.size(); ++k)
            if (conns[k].dest == dest && conns[k].source == source) return static_cast<i64>(k);
        throw Error("unreachable: connection lookup");
    };
    cp.node_ops.resize(static_cast<size_t>(spec.n));
    for (int i = 0; i < spec.n; ++i)
        for (int e = 0; e < 2; ++e) {
            const Genotype::Edge& ed = g.nodes[static_cast<size_t>(i)][static_cast<size_t>(e)];
            const i64 k = conn_index(i, ed.source);
            const std::string p = prefix + "/conn" + std::to_string(k) + "/" + op_name(ed.kind);
            cp.node_ops[static_cast<size_t>(i)][static_cast<size_t>(e)] =
                make_operator(store, p, ed.kind, spec.channels, spec.channels, rng);
        }
    return cp;
}

// Continuous cell forward: node_i sums the mixed operations over all its
// sources; the cell output concatenates the node outputs (n*C channels).
// alpha_sm is the softmaxed (M,8,1,1,1) architecture variable on this tape.
inline VarId cell_forward_continuous(FwdCtx& cx, const CellSpec& spec, const CellParams& cp,
                                     VarId alpha_sm, VarId pp, VarId p) {
    if (cx.tape.val(pp).shape() != cx.tape.val(p).shape())
        throw DimensionError("cell: input shapes differ: " + cx.tape.val(pp).shape().str() +
                             " vs " + cx.tape.val(p).shape().str());
    const auto conns = enumerate_connections(spec.n);
    std::vector<VarId> values = {pp, p};
    std::vector<VarId> nodes;
    for (int i = 0; i < spec.n; ++i) {
        VarId acc = -1;
        for (i64 k = 0; k < static_cast<i64>(conns.size()); ++k) {
            if (conns[static_cast<size_t>(k)].dest != i) continue;
            const VarId src = values[static_cast<size_t>(conns[static_cast<size_t>(k)].source)];
            const VarId m = mixed_op(cx, cp.conn_ops[static_cast<size_t>(k)], src, alpha_sm, k);
            acc = acc < 0 ? m : add(cx.tape, acc, m);
        }
        values.push_back(acc);
        nodes.push_back(acc);
    }
    return concat_channels(cx.tape, nodes);
}

// Discrete cell forward: node_i sums its two chosen edges.
inline VarId cell_forward_discrete(FwdCtx& cx, const CellSpec& spec, const CellParams& cp,
                                   const Genotype& g, VarId pp, VarId p) {
    if (cx.tape.val(pp).shape() != cx.tape.val(p).shape())
        throw DimensionError("cell: input shapes differ: " + cx.tape.val(pp).shape().str() +
                             " vs " + cx.tape.val(p).shape().str());
    std::vector<VarId> values = {pp, p};
    std::vector<VarId> nodes;
    for (int i = 0; i < spec.n; ++i) {
        VarId acc = -1;
        for (int e = 0; e < 2; ++e) {
            const Genotype::Edge& ed = g.nodes[static_cast<size_t>(i)][static_cast<size_t>(e)];
            const OperatorInstance& op = cp.node_ops[static_cast<size_t>(i)][static_cast<size_t>(e)];
            const VarId out =
                apply_operator(cx, op, values[static_cast<size_t>(ed.source)]);
            acc = acc < 0 ? out : add(cx.tape, acc, out);
        }
        values.push_back(acc);
        nodes.push_back(acc);
    }
    return concat_channels(cx.tape, nodes);
}

}  // namespace stnas
