#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "stnas/tensor.hpp"

namespace stnas {

using VarId = std::int32_t;

// Recorded computation graph. Nodes are appended in execution order, so every
// node's inputs precede it and one reverse sweep visits each node once.
// Values referenced by a tape are immutable until the tape is discarded.
class Tape {
public:
    using BackFn = std::function<void(Tape&)>;

    VarId leaf(Tensor value, bool requires_grad) {
        nodes_.push_back(Node{std::move(value), Tensor{}, {}, nullptr, requires_grad, false});
        return static_cast<VarId>(nodes_.size() - 1);
    }

    VarId constant(Tensor value) { return leaf(std::move(value), false); }

    // Records an op result. `back` may be empty when no input needs gradients.
    VarId push(Tensor value, std::vector<VarId> inputs, BackFn back) {
        bool req = false;
        for (VarId i : inputs) req = req || nodes_[static_cast<size_t>(i)].requires_grad;
        nodes_.push_back(Node{std::move(value), Tensor{}, std::move(inputs),
                              req ? std::move(back) : BackFn{}, req, false});
        return static_cast<VarId>(nodes_.size() - 1);
    }

    const Tensor& val(VarId id) const { return nodes_[static_cast<size_t>(id)].value; }

    bool requires_grad(VarId id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }

    bool has_grad(VarId id) const { return nodes_[static_cast<size_t>(id)].has_grad; }

    // Gradient of the last backward() root w.r.t. this node. Valid only after
    // backward() and only for nodes the root actually depends on.
    const Tensor& grad(VarId id) const {
        const Node& nd = nodes_[static_cast<size_t>(id)];
        if (!nd.has_grad) throw Error("tape: node has no gradient (not on the backward path?)");
        return nd.grad;
    }

    // Accumulation target used by backward rules; allocates zeros on first use.
    Tensor& grad_acc(VarId id) {
        Node& nd = nodes_[static_cast<size_t>(id)];
        if (!nd.has_grad) {
            nd.grad = Tensor::zeros(nd.value.shape());
            nd.has_grad = true;
        }
        return nd.grad;
    }

    size_t size() const { return nodes_.size(); }

    // Reverse sweep from a scalar root. Gradients accumulate additively into
    // every requires_grad node reachable from the root.
    //
    // release_memory frees interior values and gradients as soon as the sweep
    // no longer needs them (training loops); val()/grad() of non-leaf nodes
    // must not be used afterwards. Leaf gradients are always kept.
    void backward(VarId root, bool release_memory = false) {
        Node& rn = nodes_[static_cast<size_t>(root)];
        if (rn.value.numel() != 1) throw DimensionError("backward: root must be scalar, got " + rn.value.shape().str());
        if (!rn.requires_grad) throw Error("backward: root does not require gradients");
        grad_acc(root).fill(1);
        for (i64 i = root; i >= 0; --i) {
            Node& nd = nodes_[static_cast<size_t>(i)];
            if (nd.has_grad && nd.back) nd.back(*this);
            if (release_memory) {
                // All consumers of node i sit above i and already ran.
                if (nd.back || !nd.requires_grad) {
                    nd.grad.release();
                    nd.has_grad = false;
                }
                if (nd.value.numel() > 1) nd.value.release();
            }
        }
    }

    void clear() { nodes_.clear(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::vector<VarId> inputs;
        BackFn back;
        bool requires_grad = false;
        bool has_grad = false;
    };

    std::vector<Node> nodes_;
};

}  // namespace stnas
