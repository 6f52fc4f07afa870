#pragma once

#include <cmath>
#include <vector>

#include "stnas/common.hpp"

namespace stnas {

// Architecture-gradient computation over an abstract bilevel model.
//
// A model exposes flat views of its weight vector theta and an architecture
// vector alpha, plus two differentiable losses:
//   i64 theta_dim() const; i64 alpha_dim() const;
//   void get_theta(real* out) const; void set_theta(const real* in);
//   real train_loss(real* grad_theta, real* grad_alpha);   // null = skip
//   real valid_loss(real* grad_theta, real* grad_alpha);
//   i64 loss_evals() const;   // one per train_loss/valid_loss call
// One loss call with both gradients requested still counts as one
// evaluation (a single forward+backward produces both).
//
// The same code path drives both the real supernet and the closed-form toy
// models the tests verify it against.

// d(valid)/d(alpha) at the current (theta, alpha). One loss evaluation.
template <typename Model>
inline void alpha_grad_first_order(Model& model, std::vector<real>& out) {
    out.assign(static_cast<size_t>(model.alpha_dim()), 0);
    model.valid_loss(nullptr, out.data());
}

// The unrolled gradient: with theta' = theta - eps * d(train)/d(theta),
//   g = d(valid)/d(alpha) at (theta', alpha)
//       - eps * d2(train)/d(alpha)d(theta) * d(valid)/d(theta'),
// the mixed second derivative applied by a symmetric finite difference
// around the ORIGINAL theta: with v = d(valid)/d(theta') and h = r/|v|,
//   H*v ~ [g_alpha(train)(theta + h v) - g_alpha(train)(theta - h v)] / (2h).
// |v| = 0 makes the second term zero. theta is restored bit-exactly.
// Four loss evaluations.
template <typename Model>
inline void alpha_grad_second_order(Model& model, real eps, real r, std::vector<real>& out) {
    if (eps < 0) throw DomainError("alpha_grad_second_order: eps must be >= 0");
    const i64 td = model.theta_dim();
    const size_t tn = static_cast<size_t>(td);
    std::vector<real> theta0(tn);
    model.get_theta(theta0.data());

    std::vector<real> g_train(tn, 0);
    model.train_loss(g_train.data(), nullptr);

    std::vector<real> theta1(tn);
    for (size_t i = 0; i < tn; ++i) theta1[i] = theta0[i] - eps * g_train[i];
    model.set_theta(theta1.data());

    std::vector<real> v(tn, 0);
    out.assign(static_cast<size_t>(model.alpha_dim()), 0);
    model.valid_loss(v.data(), out.data());

    real vnorm2 = 0;
    for (size_t i = 0; i < tn; ++i) vnorm2 += v[i] * v[i];
    const real vnorm = std::sqrt(vnorm2);
    if (vnorm > 0) {
        const real h = r / vnorm;
        std::vector<real> shifted(tn), ga_plus(static_cast<size_t>(model.alpha_dim()), 0),
            ga_minus(static_cast<size_t>(model.alpha_dim()), 0);
        for (size_t i = 0; i < tn; ++i) shifted[i] = theta0[i] + h * v[i];
        model.set_theta(shifted.data());
        model.train_loss(nullptr, ga_plus.data());
        for (size_t i = 0; i < tn; ++i) shifted[i] = theta0[i] - h * v[i];
        model.set_theta(shifted.data());
        model.train_loss(nullptr, ga_minus.data());
        for (size_t j = 0; j < out.size(); ++j)
            out[j] -= eps * (ga_plus[j] - ga_minus[j]) / (2 * h);
    }

    model.set_theta(theta0.data());
}

}  // namespace stnas
