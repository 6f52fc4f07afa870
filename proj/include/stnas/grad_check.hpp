#pragma once

#include <functional>
#include <vector>

#include "stnas/ops.hpp"

namespace stnas {

// Finite-difference verification of reverse-mode gradients.
//
// build is called with a fresh tape and the leaf ids (same order as leaves)
// and must return a scalar root. Every coordinate of every leaf is checked
// against a central difference; the reported error is
//   |analytic - numeric| / max(1, |analytic|).
struct GradCheckReport {
    real max_rel_err = 0;
    i64 leaf = -1;   // leaf index of the worst coordinate
    i64 coord = -1;  // flat index within that leaf
};

using BuildScalar = std::function<VarId(Tape&, const std::vector<VarId>&)>;

inline GradCheckReport grad_check(std::vector<Tensor> leaves, const BuildScalar& build,
                                  real step = 1e-4) {
    const auto eval = [&](const std::vector<Tensor>& vals) {
        Tape t;
        std::vector<VarId> ids;
        ids.reserve(vals.size());
        for (const Tensor& v : vals) ids.push_back(t.constant(Tensor(v)));
        const VarId root = build(t, ids);
        return t.val(root).at(0);
    };

    // Analytic pass.
    std::vector<Tensor> analytic;
    {
        Tape t;
        std::vector<VarId> ids;
        ids.reserve(leaves.size());
        for (const Tensor& v : leaves) ids.push_back(t.leaf(Tensor(v), true));
        const VarId root = build(t, ids);
        t.backward(root);
        for (VarId id : ids)
            analytic.push_back(t.has_grad(id) ? t.grad(id) : Tensor::zeros(t.val(id).shape()));
    }

    GradCheckReport rep;
    for (size_t l = 0; l < leaves.size(); ++l) {
        for (i64 i = 0; i < leaves[l].numel(); ++i) {
            const real keep = leaves[l].at(i);
            leaves[l].at(i) = keep + step;
            const real fp = eval(leaves);
            leaves[l].at(i) = keep - step;
            const real fm = eval(leaves);
            leaves[l].at(i) = keep;
            const real numeric = (fp - fm) / (2 * step);
            const real a = analytic[l].at(i);
            const real err = std::abs(a - numeric) / std::max(real(1), std::abs(a));
            if (err > rep.max_rel_err) {
                rep.max_rel_err = err;
                rep.leaf = static_cast<i64>(l);
                rep.coord = i;
            }
        }
    }
    return rep;
}

}  // namespace stnas
