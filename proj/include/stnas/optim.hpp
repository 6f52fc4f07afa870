#pragma once

#include <vector>

#include "stnas/network.hpp"

namespace stnas {

struct SgdConfig {
    real lr = 0.025;
    real momentum = 0.9;
    real weight_decay = 3e-4;
};

// SGD with momentum; decay is added to the raw gradient (v = mu*v + g + wd*p,
// p -= lr*v). Parameters flagged no_decay (norm affine, biases) skip decay.
class SgdOptimizer {
public:
    explicit SgdOptimizer(const ParamStore& store) {
        vel_.reserve(static_cast<size_t>(store.size()));
        for (i64 i = 0; i < store.size(); ++i)
            vel_.push_back(Tensor::zeros(store.param(i).value.shape()));
    }

    void step(ParamStore& store, Tape& tape, const std::vector<VarId>& bound,
              const SgdConfig& cfg) {
        for (i64 i = 0; i < store.size(); ++i) {
            const VarId v = bound[static_cast<size_t>(i)];
            if (!tape.has_grad(v)) continue;
            const Tensor& g = tape.grad(v);
            Param& p = store.param(i);
            const real wd = p.no_decay ? 0 : cfg.weight_decay;
            Tensor& vel = vel_[static_cast<size_t>(i)];
            for (i64 k = 0; k < g.numel(); ++k) {
                vel.at(k) = cfg.momentum * vel.at(k) + g.at(k) + wd * p.value.at(k);
                p.value.at(k) -= cfg.lr * vel.at(k);
            }
        }
    }

private:
    std::vector<Tensor> vel_;
};

// lr(e) = lr_min + (lr_max - lr_min) * (1 + cos(pi * e / total)) / 2.
// Endpoints: lr(0) = lr_max, lr(total) = lr_min.
inline real cosine_lr(real lr_max, real lr_min, i64 epoch, i64 total) {
    if (total < 1) throw DomainError("cosine_lr: total epochs must be >= 1");
    const real phase = static_cast<real>(epoch) / static_cast<real>(total);
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(phase * 3.14159265358979323846));
}

// Plain gradient descent on the architecture matrix (no momentum).
inline void alpha_step(Tensor& alpha, const std::vector<real>& grad, real gamma) {
    if (static_cast<i64>(grad.size()) != alpha.numel())
        throw DimensionError("alpha_step: gradient size mismatch");
    for (i64 i = 0; i < alpha.numel(); ++i) alpha.at(i) -= gamma * grad[static_cast<size_t>(i)];
}

}  // namespace stnas
