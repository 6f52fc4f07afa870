#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "stnas/optim.hpp"
#include "stnas/search.hpp"
#include "support/oracles.hpp"

using namespace stnas;

namespace {

struct TinySetup {
    NetworkState st;
    ClipBatch train, valid;
};

TinySetup tiny_supernet(uint64_t seed) {
    NetworkSpec sp;
    sp.depth = 2;
    sp.init_channels = 2;
    sp.n = 2;
    sp.classes = 3;
    sp.reduce_every = 2;
    sp.mode = NetMode::continuous;
    TinySetup s{build_network(sp, nullptr, seed), {}, {}};
    Rng rng(seed + 1);
    s.train.frames = random_uniform(Shape5{2, 3, 4, 8, 8}, -1, 1, rng);
    s.train.labels = {0, 2};
    s.valid.frames = random_uniform(Shape5{2, 3, 4, 8, 8}, -1, 1, rng);
    s.valid.labels = {1, 0};
    // A non-flat starting alpha so softmax curvature is exercised.
    for (i64 i = 0; i < s.st.alpha.numel(); ++i) s.st.alpha.at(i) = 0.3 * rng.uniform(-1, 1);
    return s;
}

}  // namespace

TEST_CASE("second-order architecture gradient is exact on a bilinear model") {
    // train = theta^T A alpha makes the mixed second derivative a constant
    // matrix, so the symmetric difference inside the unrolled gradient is
    // exact up to roundoff and the whole result has a closed form.
    for (unsigned seed : {1u, 2u, 3u, 4u, 5u}) {
        for (real eps : {0.05, 0.3, 1.0}) {
            oracle::BilinearModel m = oracle::make_bilinear(seed);
            std::vector<real> g;
            alpha_grad_second_order(m, eps, 0.01, g);
            const std::vector<real> want = m.exact_alpha_grad(eps);
            REQUIRE(g.size() == want.size());
            for (size_t j = 0; j < g.size(); ++j) {
                CAPTURE(seed, eps, j);
                CHECK_THAT(g[j], Catch::Matchers::WithinAbs(want[j], 1e-9));
            }
        }
    }
}

TEST_CASE("zero virtual step collapses to the first-order gradient") {
    oracle::BilinearModel m1 = oracle::make_bilinear(7);
    oracle::BilinearModel m2 = oracle::make_bilinear(7);
    std::vector<real> first, second;
    alpha_grad_first_order(m1, first);
    alpha_grad_second_order(m2, 0.0, 0.01, second);
    REQUIRE(first.size() == second.size());
    for (size_t j = 0; j < first.size(); ++j) CHECK(first[j] == second[j]);

    // Same degeneracy on the real supernet, where both paths share every
    // forward bit once theta is identical.
    TinySetup s = tiny_supernet(3);
    SupernetBilevel model(s.st);
    model.set_batches(&s.train, &s.valid);
    alpha_grad_first_order(model, first);
    alpha_grad_second_order(model, 0.0, 0.01, second);
    REQUIRE(first.size() == second.size());
    for (size_t j = 0; j < first.size(); ++j) {
        CAPTURE(j);
        CHECK(std::abs(first[j] - second[j]) <= 1e-10);
    }
}

TEST_CASE("gradient modes cost one and four loss evaluations") {
    oracle::BilinearModel m = oracle::make_bilinear(11);
    std::vector<real> g;
    alpha_grad_first_order(m, g);
    CHECK(m.loss_evals() == 1);

    oracle::BilinearModel m2 = oracle::make_bilinear(11);
    alpha_grad_second_order(m2, 0.2, 0.01, g);
    CHECK(m2.loss_evals() == 4);
}

TEST_CASE("a stationary validation loss skips the curvature probe") {
    oracle::BilinearModel m = oracle::make_bilinear(13);
    m.alpha = {0, 0, 0, 0};  // theta' = theta for any eps
    m.target = m.theta;      // valid gradient vanishes at theta
    std::vector<real> g;
    alpha_grad_second_order(m, 0.7, 0.01, g);
    for (size_t j = 0; j < g.size(); ++j) CHECK(g[j] == 0.0);
    // No direction to probe: only the train gradient and the valid pass ran.
    CHECK(m.loss_evals() == 2);
}

TEST_CASE("theta is restored bit-exactly after the unrolled gradient") {
    oracle::BilinearModel m = oracle::make_bilinear(17);
    const std::vector<real> before = m.theta;
    std::vector<real> g;
    alpha_grad_second_order(m, 0.5, 0.01, g);
    CHECK(m.theta == before);

    TinySetup s = tiny_supernet(5);
    SupernetBilevel model(s.st);
    model.set_batches(&s.train, &s.valid);
    std::vector<real> t0(static_cast<size_t>(model.theta_dim()));
    model.get_theta(t0.data());
    alpha_grad_second_order(model, 0.05, 0.01, g);
    std::vector<real> t1(t0.size());
    model.get_theta(t1.data());
    CHECK(t0 == t1);
}

TEST_CASE("negative virtual step is rejected") {
    oracle::BilinearModel m = oracle::make_bilinear(19);
    std::vector<real> g;
    CHECK_THROWS_AS(alpha_grad_second_order(m, -0.1, 0.01, g), DomainError);
}

TEST_CASE("supernet first-order gradient matches finite differences") {
    TinySetup s = tiny_supernet(9);
    SupernetBilevel model(s.st);
    model.set_batches(&s.train, &s.valid);

    std::vector<real> g;
    alpha_grad_first_order(model, g);
    REQUIRE(static_cast<i64>(g.size()) == s.st.alpha.numel());

    const real h = 1e-5;
    for (i64 j = 0; j < s.st.alpha.numel(); ++j) {
        const real keep = s.st.alpha.at(j);
        s.st.alpha.at(j) = keep + h;
        const real fp = model.valid_loss(nullptr, nullptr);
        s.st.alpha.at(j) = keep - h;
        const real fm = model.valid_loss(nullptr, nullptr);
        s.st.alpha.at(j) = keep;
        const real numeric = (fp - fm) / (2 * h);
        const real err = std::abs(g[static_cast<size_t>(j)] - numeric) /
                         std::max(real(1), std::abs(g[static_cast<size_t>(j)]));
        CAPTURE(j, g[static_cast<size_t>(j)], numeric);
        CHECK(err < 1e-4);
    }
}

TEST_CASE("supernet unrolled gradient matches differentiating through the step") {
    TinySetup s = tiny_supernet(15);
    SupernetBilevel model(s.st);
    model.set_batches(&s.train, &s.valid);
    const real eps = 0.02;

    std::vector<real> g;
    alpha_grad_second_order(model, eps, 0.01, g);

    // The quantity the unrolled gradient claims to differentiate:
    //   U(alpha) = valid(theta - eps * d train / d theta (alpha), alpha).
    const size_t tn = static_cast<size_t>(model.theta_dim());
    std::vector<real> theta0(tn);
    model.get_theta(theta0.data());
    const auto unrolled = [&]() {
        std::vector<real> gt(tn, 0);
        model.train_loss(gt.data(), nullptr);
        std::vector<real> shifted(tn);
        for (size_t i = 0; i < tn; ++i) shifted[i] = theta0[i] - eps * gt[i];
        model.set_theta(shifted.data());
        const real v = model.valid_loss(nullptr, nullptr);
        model.set_theta(theta0.data());
        return v;
    };

    const real h = 1e-4;
    for (i64 j = 0; j < s.st.alpha.numel(); ++j) {
        const real keep = s.st.alpha.at(j);
        s.st.alpha.at(j) = keep + h;
        const real fp = unrolled();
        s.st.alpha.at(j) = keep - h;
        const real fm = unrolled();
        s.st.alpha.at(j) = keep;
        const real numeric = (fp - fm) / (2 * h);
        const real err = std::abs(g[static_cast<size_t>(j)] - numeric) /
                         std::max(real(1), std::abs(g[static_cast<size_t>(j)]));
        CAPTURE(j, g[static_cast<size_t>(j)], numeric);
        CHECK(err < 2e-3);
    }
}

TEST_CASE("missing batches are reported by name") {
    TinySetup s = tiny_supernet(21);
    SupernetBilevel model(s.st);
    std::vector<real> g;
    CHECK_THROWS_WITH(alpha_grad_first_order(model, g),
                      Catch::Matchers::ContainsSubstring("valid"));
    model.set_batches(nullptr, &s.valid);
    CHECK_THROWS_WITH(alpha_grad_second_order(model, 0.1, 0.01, g),
                      Catch::Matchers::ContainsSubstring("train"));
    NetworkSpec dsp;
    dsp.mode = NetMode::discrete;
    dsp.classes = 3;
    const Genotype gt = [] {
        Genotype g2;
        g2.n = 2;
        g2.nodes.resize(2);
        g2.nodes[0][0] = {0, OperatorKind::Skip_Con};
        g2.nodes[0][1] = {1, OperatorKind::Skip_Con};
        g2.nodes[1][0] = {0, OperatorKind::Skip_Con};
        g2.nodes[1][1] = {1, OperatorKind::Skip_Con};
        return g2;
    }();
    NetworkState disc = build_network(dsp, &gt, 1);
    CHECK_THROWS_AS(SupernetBilevel(disc), ConfigError);
}

TEST_CASE("cosine schedule hits its endpoints and midpoint") {
    CHECK_THAT(cosine_lr(0.05, 0.001, 0, 40), Catch::Matchers::WithinAbs(0.05, 1e-15));
    CHECK_THAT(cosine_lr(0.05, 0.001, 40, 40), Catch::Matchers::WithinAbs(0.001, 1e-15));
    CHECK_THAT(cosine_lr(0.05, 0.001, 20, 40),
               Catch::Matchers::WithinAbs(0.001 + 0.5 * (0.05 - 0.001), 1e-12));
    for (i64 e = 1; e <= 40; ++e) CHECK(cosine_lr(0.05, 0.001, e, 40) < cosine_lr(0.05, 0.001, e - 1, 40));
    CHECK_THROWS_AS(cosine_lr(0.05, 0.001, 0, 0), DomainError);
}

TEST_CASE("alpha update is plain gradient descent") {
    Tensor alpha(Shape5{2, 8, 1, 1, 1});
    for (i64 i = 0; i < alpha.numel(); ++i) alpha.at(i) = static_cast<real>(i) * 0.01;
    std::vector<real> grad(16);
    for (size_t i = 0; i < 16; ++i) grad[i] = static_cast<real>(i);
    alpha_step(alpha, grad, 0.5);
    for (i64 i = 0; i < 16; ++i)
        CHECK_THAT(alpha.at(i),
                   Catch::Matchers::WithinAbs(0.01 * static_cast<real>(i) - 0.5 * static_cast<real>(i),
                                              1e-15));
    std::vector<real> wrong(15);
    CHECK_THROWS_AS(alpha_step(alpha, wrong, 0.5), DimensionError);
}
