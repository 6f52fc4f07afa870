#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "stnas/ops.hpp"
#include "stnas/rng.hpp"

namespace stnas {

// The eight candidate operators. The order is part of the serialization
// contract: column j of the architecture matrix refers to kind j.
enum class OperatorKind : int {
    Zero = 0,
    Skip_Con = 1,
    Conv_1 = 2,
    Conv_3 = 3,
    SpeConv_3 = 4,
    DilConv_3 = 5,
    MPool_3 = 6,
    APool_3 = 7,
};

inline constexpr int kNumOperators = 8;

inline const std::array<const char*, kNumOperators>& operator_names() {
    static const std::array<const char*, kNumOperators> names = {
        "Zero", "Skip_Con", "Conv_1", "Conv_3", "SpeConv_3", "DilConv_3", "MPool_3", "APool_3"};
    return names;
}

inline const char* op_name(OperatorKind k) { return operator_names()[static_cast<size_t>(k)]; }

inline OperatorKind op_from_name(const std::string& s) {
    for (int j = 0; j < kNumOperators; ++j)
        if (s == operator_names()[static_cast<size_t>(j)]) return static_cast<OperatorKind>(j);
    throw ConfigError("unknown operator name '" + s + "'");
}

// Named parameter/buffer registry. Registration order is the stable flat
// order used by the optimizer, checkpoints, and cross-network weight copy.
struct Param {
    std::string name;
    Tensor value;
    bool no_decay = false;  // norm scale/shift and biases skip weight decay
};

struct BufferSlot {
    std::string name;
    Tensor value;  // state saved with the model but not trained (running stats)
};

class ParamStore {
public:
    i64 add(const std::string& name, Tensor value, bool no_decay = false) {
        if (by_name_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
        by_name_[name] = static_cast<i64>(params_.size());
        params_.push_back(Param{name, std::move(value), no_decay});
        return static_cast<i64>(params_.size()) - 1;
    }
    i64 add_buffer(const std::string& name, Tensor value) {
        if (buf_by_name_.count(name)) throw ConfigError("duplicate buffer name '" + name + "'");
        buf_by_name_[name] = static_cast<i64>(buffers_.size());
        buffers_.push_back(BufferSlot{name, std::move(value)});
        return static_cast<i64>(buffers_.size()) - 1;
    }
    i64 size() const { return static_cast<i64>(params_.size()); }
    i64 buffer_count() const { return static_cast<i64>(buffers_.size()); }
    Param& param(i64 i) { return params_[static_cast<size_t>(i)]; }
    const Param& param(i64 i) const { return params_[static_cast<size_t>(i)]; }
    BufferSlot& buffer(i64 i) { return buffers_[static_cast<size_t>(i)]; }
    const BufferSlot& buffer(i64 i) const { return buffers_[static_cast<size_t>(i)]; }
    i64 find(const std::string& name) const {
        auto it = by_name_.find(name);
        return it == by_name_.end() ? -1 : it->second;
    }
    i64 find_buffer(const std::string& name) const {
        auto it = buf_by_name_.find(name);
        return it == buf_by_name_.end() ? -1 : it->second;
    }
    // Total learned scalars (buffers excluded).
    i64 scalar_count() const {
        i64 s = 0;
        for (const Param& p : params_) s += p.value.numel();
        return s;
    }
    i64 scalar_count_prefix(const std::string& prefix) const {
        i64 s = 0;
        for (const Param& p : params_)
            if (p.name.rfind(prefix, 0) == 0) s += p.value.numel();
        return s;
    }

private:
    std::vector<Param> params_;
    std::vector<BufferSlot> buffers_;
    std::map<std::string, i64> by_name_;
    std::map<std::string, i64> buf_by_name_;
};

// Uniform init with bound 1/sqrt(fan_in); fan_in = Cin * kernel volume.
inline Tensor init_conv_weight(Shape5 s, Rng& rng) {
    const real bound = 1.0 / std::sqrt(static_cast<real>(s.c * s.t * s.h * s.w));
    return random_uniform(s, -bound, bound, rng);
}

// One operator instance: kind plus indices of its parameters/buffers in the
// owning store. Zero, Skip_Con, and the pools own nothing.
struct OperatorInstance {
    OperatorKind kind = OperatorKind::Zero;
    i64 cin = 0, cout = 0;
    i64 ws = -1;   // spatial conv weight (or first SpeConv 1-D filter)
    i64 w2 = -1;   // second SpeConv 1-D filter
    i64 wt = -1;   // temporal conv weight; every temporal kernel uses this slot
    i64 bn_s = -1, bn_b = -1;   // norm affine params
    i64 bn_m = -1, bn_v = -1;   // norm running buffers
};

namespace detail {

inline void add_op_norm(ParamStore& store, const std::string& prefix, i64 c, OperatorInstance& op) {
    op.bn_s = store.add(prefix + "/bn_s", Tensor::ones(Shape5{1, c, 1, 1, 1}), true);
    op.bn_b = store.add(prefix + "/bn_b", Tensor::zeros(Shape5{1, c, 1, 1, 1}), true);
    op.bn_m = store.add_buffer(prefix + "/bn_m", Tensor::zeros(Shape5{1, c, 1, 1, 1}));
    op.bn_v = store.add_buffer(prefix + "/bn_v", Tensor::ones(Shape5{1, c, 1, 1, 1}));
}

}  // namespace detail

// Registers the parameters of one operator under `prefix` and returns the
// instance. The intermediate channel width of the decoupled convolutions
// equals cout, so the spatial half maps cin -> cout and the temporal half
// cout -> cout.
inline OperatorInstance make_operator(ParamStore& store, const std::string& prefix,
                                      OperatorKind kind, i64 cin, i64 cout, Rng& rng) {
    OperatorInstance op;
    op.kind = kind;
    op.cin = cin;
    op.cout = cout;
    switch (kind) {
        case OperatorKind::Zero:
        case OperatorKind::Skip_Con:
        case OperatorKind::MPool_3:
        case OperatorKind::APool_3:
            if (cin != cout)
                throw ConfigError("parameter-free operator " + std::string(op_name(kind)) +
                                  " cannot change channel count");
            break;
        case OperatorKind::Conv_1:
            op.ws = store.add(prefix + "/ws", init_conv_weight(Shape5{cout, cin, 1, 1, 1}, rng));
            op.wt = store.add(prefix + "/wt", init_conv_weight(Shape5{cout, cout, 1, 1, 1}, rng));
            detail::add_op_norm(store, prefix, cout, op);
            break;
        case OperatorKind::Conv_3:
            op.ws = store.add(prefix + "/ws", init_conv_weight(Shape5{cout, cin, 1, 3, 3}, rng));
            op.wt = store.add(prefix + "/wt", init_conv_weight(Shape5{cout, cout, 3, 1, 1}, rng));
            detail::add_op_norm(store, prefix, cout, op);
            break;
        case OperatorKind::SpeConv_3:
            // Three 1-D filters: along width, then height, then time.
            op.ws = store.add(prefix + "/w1", init_conv_weight(Shape5{cout, cin, 1, 1, 3}, rng));
            op.w2 = store.add(prefix + "/w2", init_conv_weight(Shape5{cout, cout, 1, 3, 1}, rng));
            op.wt = store.add(prefix + "/wt", init_conv_weight(Shape5{cout, cout, 3, 1, 1}, rng));
            detail::add_op_norm(store, prefix, cout, op);
            break;
        case OperatorKind::DilConv_3:
            op.ws = store.add(prefix + "/ws", init_conv_weight(Shape5{cout, cin, 1, 3, 3}, rng));
            op.wt = store.add(prefix + "/wt", init_conv_weight(Shape5{cout, cout, 3, 1, 1}, rng));
            detail::add_op_norm(store, prefix, cout, op);
            break;
    }
    return op;
}

// Per-forward context: the tape being built, the tape ids of every store
// parameter (bound[i] belongs to store.param(i)), and normalization mode.
// temporal_pool_identity turns the temporal half of the pooling operators
// into the identity; the motion-ablation path sets it.
struct FwdCtx {
    Tape& tape;
    ParamStore& store;
    const std::vector<VarId>& bound;
    Mode mode = Mode::eval;
    bool temporal_pool_identity = false;
};

namespace detail {

inline VarId op_norm(FwdCtx& cx, const OperatorInstance& op, VarId h) {
    return batch_norm(cx.tape, h, cx.bound[static_cast<size_t>(op.bn_s)],
                      cx.bound[static_cast<size_t>(op.bn_b)],
                      &cx.store.buffer(op.bn_m).value, &cx.store.buffer(op.bn_v).value, cx.mode);
}

}  // namespace detail

inline VarId apply_operator(FwdCtx& cx, const OperatorInstance& op, VarId x) {
    const i64 cin = cx.tape.val(x).shape().c;
    if (cin != op.cin)
        throw DimensionError("operator " + std::string(op_name(op.kind)) + " expects " +
                             std::to_string(op.cin) + " channels, got " + std::to_string(cin));
    const auto w = [&](i64 idx) { return cx.bound[static_cast<size_t>(idx)]; };
    switch (op.kind) {
        case OperatorKind::Zero:
            return zeros_like(cx.tape, x);
        case OperatorKind::Skip_Con:
            return x;
        case OperatorKind::Conv_1: {
            VarId h = relu(cx.tape, x);
            h = conv_spatial(cx.tape, h, w(op.ws), 1, 0, 1);
            h = conv_temporal(cx.tape, h, w(op.wt), 1, 0);
            return detail::op_norm(cx, op, h);
        }
        case OperatorKind::Conv_3: {
            VarId h = relu(cx.tape, x);
            h = conv_spatial(cx.tape, h, w(op.ws), 1, 1, 1);
            h = conv_temporal(cx.tape, h, w(op.wt), 1, 1);
            return detail::op_norm(cx, op, h);
        }
        case OperatorKind::SpeConv_3: {
            VarId h = relu(cx.tape, x);
            ConvGeom gw;
            gw.pw = 1;
            h = conv_general(cx.tape, h, w(op.ws), gw);  // 1x1x3, width axis
            ConvGeom gh;
            gh.ph = 1;
            h = conv_general(cx.tape, h, w(op.w2), gh);  // 1x3x1, height axis
            h = conv_temporal(cx.tape, h, w(op.wt), 1, 1);  // 3x1x1
            return detail::op_norm(cx, op, h);
        }
        case OperatorKind::DilConv_3: {
            VarId h = relu(cx.tape, x);
            h = conv_spatial(cx.tape, h, w(op.ws), 1, 2, 2);  // 5x5 receptive field
            h = conv_temporal(cx.tape, h, w(op.wt), 1, 1);
            return detail::op_norm(cx, op, h);
        }
        case OperatorKind::MPool_3: {
            VarId h = max_pool_spatial(cx.tape, x, 3, 1, 1);
            if (!cx.temporal_pool_identity) h = max_pool_temporal(cx.tape, h, 3, 1, 1);
            return h;
        }
        case OperatorKind::APool_3: {
            VarId h = avg_pool_spatial(cx.tape, x, 3, 1, 1);
            if (!cx.temporal_pool_identity) h = avg_pool_temporal(cx.tape, h, 3, 1, 1);
            return h;
        }
    }
    throw Error("unreachable operator kind");
}

// alpha-weighted mixture of all eight candidates on one connection.
// alpha_sm holds already-softmaxed rows; row k occupies flat entries
// [8k, 8k+8). Gradients reach both the branches and the weights.
inline VarId mixed_op(FwdCtx& cx, const std::vector<OperatorInstance>& ops, VarId x,
                      VarId alpha_sm, i64 row) {
    if (static_cast<int>(ops.size()) != kNumOperators)
        throw DimensionError("mixed_op: expected " + std::to_string(kNumOperators) + " operators");
    std::vector<VarId> outs;
    outs.reserve(ops.size());
    for (const OperatorInstance& op : ops) outs.push_back(apply_operator(cx, op, x));
    return weighted_sum(cx.tape, outs, alpha_sm, row * kNumOperators);
}

// Convenience overload for a single raw (pre-softmax) 8-entry row.
inline VarId mixed_op_row(FwdCtx& cx, const std::vector<OperatorInstance>& ops, VarId x,
                          VarId alpha_row_raw) {
    const Shape5 s = cx.tape.val(alpha_row_raw).shape();
    if (s.c != kNumOperators || cx.tape.val(alpha_row_raw).numel() != kNumOperators)
        throw DimensionError("mixed_op_row: alpha row must be (1,8,1,1,1)");
    const VarId sm = softmax_channels(cx.tape, alpha_row_raw);
    return mixed_op(cx, ops, x, sm, 0);
}

}  // namespace stnas
