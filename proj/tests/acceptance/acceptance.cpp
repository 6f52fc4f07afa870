// Acceptance gate. Each numbered criterion prints one PASS/FAIL line with
// the measured quantity; the process exits nonzero if any line fails.
//
// Criterion 7/8 drive the command-line binary named by $STNAS_CLI through
// the full desk-scale pipeline in a scratch directory.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "stnas/bilevel.hpp"
#include "stnas/cell.hpp"
#include "stnas/config.hpp"
#include "stnas/grad_check.hpp"
#include "stnas/network.hpp"
#include "stnas/sampling.hpp"
#include "stnas/search.hpp"
#include "stnas/train.hpp"

#include "../support/oracles.hpp"

namespace fs = std::filesystem;
using namespace stnas;

namespace {

bool g_all_ok = true;

void report(int idx, const char* name, bool ok, const std::string& detail) {
    std::printf("[%d] %s  %s  (%s)\n", idx, ok ? "PASS" : "FAIL", name, detail.c_str());
    std::fflush(stdout);
    g_all_ok = g_all_ok && ok;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int prec = 4) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", prec, v);
    return buf;
}

std::string fmt_sci(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2e", v);
    return buf;
}

// ---------------------------------------------------------------- gradients

Tensor rand_t(Shape5 s, uint64_t seed) {
    Rng rng(seed);
    return random_uniform(s, -1.0, 1.0, rng);
}

// Pairwise-distinct values with a minimum gap so a +-1e-4 probe cannot flip
// an argmax or cross a relu hinge.
Tensor rand_spread(Shape5 s, uint64_t seed, real gap = 0.01) {
    Rng rng(seed);
    const i64 n = s.numel();
    std::vector<i64> perm(static_cast<size_t>(n));
    for (i64 i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = i;
    rng.shuffle(perm);
    Tensor t(s);
    for (i64 i = 0; i < n; ++i)
        t.at(i) = (static_cast<real>(perm[static_cast<size_t>(i)]) - static_cast<real>(n) / 2) * gap +
                  gap / 4;
    return t;
}

real worst_over_cases(const std::vector<Shape5>& shapes, const BuildScalar& build, uint64_t seed0,
                      bool spread, int cases = 20) {
    real worst = 0;
    for (int c = 0; c < cases; ++c) {
        std::vector<Tensor> leaves;
        for (size_t i = 0; i < shapes.size(); ++i) {
            const uint64_t s = seed0 + 1000 * static_cast<uint64_t>(c) + i;
            leaves.push_back(spread ? rand_spread(shapes[i], s) : rand_t(shapes[i], s));
        }
        worst = std::max(worst, grad_check(std::move(leaves), build).max_rel_err);
    }
    return worst;
}

void criterion_gradients() {
    const auto t0 = std::chrono::steady_clock::now();
    real worst = 0;
    std::string worst_name = "none";
    const auto track = [&](const char* name, real err) {
        if (err > worst) {
            worst = err;
            worst_name = name;
        }
    };

    track("conv_spatial", worst_over_cases({{2, 3, 2, 5, 5}, {4, 3, 1, 3, 3}},
        [](Tape& t, const std::vector<VarId>& v) {
            return sum_all(t, conv_spatial(t, v[0], v[1], 1, 1, 1));
        }, 11, false));
    track("conv_spatial_s2", worst_over_cases({{1, 2, 2, 6, 6}, {3, 2, 1, 3, 3}},
        [](Tape& t, const std::vector<VarId>& v) {
            return sum_all(t, conv_spatial(t, v[0], v[1], 2, 1, 1));
        }, 12, false));
    track("conv_spatial_dilated", worst_over_cases({{1, 2, 2, 7, 7}, {2, 2, 1, 3, 3}},
        [](Tape& t, const std::vector<VarId>& v) {
            return sum_all(t, conv_spatial(t, v[0], v[1], 1, 2, 2));
        }, 13, false));
    track("conv_temporal", worst_over_cases({{2, 3, 6, 3, 3}, {2, 3, 3, 1, 1}},
        [](Tape& t, const std::vector<VarId>& v) {
            return sum_all(t, conv_temporal(t, v[0], v[1], 1, 1));
        }, 14, false));
    track("conv_pointwise", worst_over_cases({{1, 3, 2, 6, 6}, {4, 3, 1, 1, 1}},
        [](Tape& t, const std::vector<VarId>& v) {
            return sum_all(t, conv_spatial(t, v[0], v[1], 2, 0, 1));
        }, 15, false));
    track("relu", worst_over_cases({{2, 3, 2, 4, 4}},
        [](Tape& t, const std::vector<VarId>& v) { return sum_all(t, relu(t, v[0])); }, 16, false));
    track("add_scalar_mul", worst_over_cases({{2, 2, 2, 3, 3}, {2, 2, 2, 3, 3}},
        [](Tape& t, const std::vector<VarId>& v) {
            return sum_all(t, add(t, scalar_mul(t, v[0], 0.7), scalar_mul(t, v[1], -1.3)));
        }, 17, false));
    track("concat_channels", worst_over_cases({{2, 2, 2, 3, 3}, {2, 3, 2, 3, 3}},
        [](Tape& t, const std::vector<VarId>& v) {
            return sum_all(t, relu(t, concat_channels(t, {v[0], v[1]})));
        }, 18, false));
    // Norm probes go through pooled cross entropy: a plain sum sits in the
    // null space of the standardization Jacobian.
    track("batch_norm_batch_stats",
          worst_over_cases({{2, 3, 2, 3, 3}, {1, 3, 1, 1, 1}, {1, 3, 1, 1, 1}},
        [](Tape& t, const std::vector<VarId>& v) {
            Tensor rm = Tensor::zeros(Shape5{1, 3, 1, 1, 1});
            Tensor rv = Tensor::ones(Shape5{1, 3, 1, 1, 1});
            const VarId y = batch_norm(t, v[0], v[1], v[2], &rm, &rv, Mode::train_frozen_stats);
            return cross_entropy(t, global_avg_pool(t, y), {0, 2});
        }, 19, false));
    track("batch_norm_running_stats",
          worst_over_cases({{2, 3, 2, 3, 3}, {1, 3, 1, 1, 1}, {1, 3, 1, 1, 1}},
        [](Tape& t, const std::vector<VarId>& v) {
            Tensor rm(Shape5{1, 3, 1, 1, 1});
            Tensor rv(Shape5{1, 3, 1, 1, 1});
            for (i64 c = 0; c < 3; ++c) {
                rm.at(c) = 0.1 * static_cast<real>(c) - 0.05;
                rv.at(c) = 1.0 + 0.2 * static_cast<real>(c);
            }
            const VarId y = batch_norm(t, v[0], v[1], v[2], &rm, &rv, Mode::eval);
            return cross_entropy(t, global_avg_pool(t, y), {1, 0});
        }, 20, false));
    track("max_pool_spatial", worst_over_cases({{2, 2, 4, 5, 5}},
        [](Tape& t, const std::vector<VarId>& v) {
            return sum_all(t, max_pool_spatial(t, v[0], 3, 1, 1));
        }, 21, true));
    track("max_pool_temporal", worst_over_cases({{2, 2, 4, 5, 5}},
        [](Tape& t, const std::vector<VarId>& v) {
            return sum_all(t, max_pool_temporal(t, v[0], 3, 1, 1));
        }, 22, true));
    track("avg_pool_spatial", worst_over_cases({{2, 2, 4, 5, 5}},
        [](Tape& t, const std::vector<VarId>& v) {
            return sum_all(t, avg_pool_spatial(t, v[0], 3, 1, 1));
        }, 23, false));
    track("avg_pool_temporal", worst_over_cases({{2, 2, 4, 5, 5}},
        [](Tape& t, const std::vector<VarId>& v) {
            return sum_all(t, avg_pool_temporal(t, v[0], 3, 1, 1));
        }, 24, false));
    track("global_avg_pool", worst_over_cases({{2, 3, 2, 4, 4}},
        [](Tape& t, const std::vector<VarId>& v) {
            return sum_all(t, global_avg_pool(t, v[0]));
        }, 26, false));
    track("linear", worst_over_cases({{3, 5, 1, 1, 1}, {4, 5, 1, 1, 1}, {4, 1, 1, 1, 1}},
        [](Tape& t, const std::vector<VarId>& v) {
            return sum_all(t, relu(t, linear(t, v[0], v[1], v[2])));
        }, 27, false));
    track("softmax_channels", worst_over_cases({{2, 4, 1, 2, 2}},
        [](Tape& t, const std::vector<VarId>& v) {
            Tensor probe(Shape5{1, 4, 1, 1, 1});
            for (i64 c = 0; c < 4; ++c) probe.at(c) = 0.5 + static_cast<real>(c);
            const VarId w = t.constant(std::move(probe));
            return sum_all(t, conv_spatial(t, softmax_channels(t, v[0]), w, 1, 0, 1));
        }, 28, false));
    track("cross_entropy", worst_over_cases({{4, 5, 1, 1, 1}},
        [](Tape& t, const std::vector<VarId>& v) {
            return cross_entropy(t, v[0], {0, 2, 4, 1});
        }, 29, false));
    track("weighted_sum", worst_over_cases({{1, 2, 2, 3, 3}, {1, 2, 2, 3, 3}, {1, 6, 1, 1, 1}},
        [](Tape& t, const std::vector<VarId>& v) {
            return sum_all(t, weighted_sum(t, {v[0], v[1]}, v[2], 3));
        }, 30, false));

    // Full continuous cell, gradient w.r.t. the architecture logits.
    {
        const CellSpec spec{2, 4};
        const i64 M = connection_count(spec.n);
        real cell_worst = 0;
        for (int c = 0; c < 20; ++c) {
            ParamStore store;
            Rng rng(300 + static_cast<uint64_t>(c));
            const CellParams cp = make_cell_continuous(store, "c", spec, rng);
            const Shape5 s{1, spec.channels, 3, 4, 4};
            Rng xr(400 + static_cast<uint64_t>(c));
            const Tensor ppv = random_uniform(s, -1, 1, xr);
            const Tensor pv = random_uniform(s, -1, 1, xr);
            Tensor alpha = random_uniform(Shape5{M, 8, 1, 1, 1}, -1, 1, xr);
            const GradCheckReport rep =
                grad_check({alpha}, [&](Tape& t, const std::vector<VarId>& v) {
                    std::vector<VarId> bound;
                    for (i64 i = 0; i < store.size(); ++i)
                        bound.push_back(t.constant(Tensor(store.param(i).value)));
                    FwdCtx cx{t, store, bound, Mode::eval, false};
                    const VarId sm = softmax_channels(t, v[0]);
                    const VarId pp = t.constant(Tensor(ppv));
                    const VarId p = t.constant(Tensor(pv));
                    return sum_all(t, cell_forward_continuous(cx, spec, cp, sm, pp, p));
                });
            cell_worst = std::max(cell_worst, rep.max_rel_err);
        }
        track("continuous_cell_alpha", cell_worst);
    }

    const double secs = seconds_since(t0);
    const bool ok = worst <= 1e-4 && secs <= 300.0;
    report(1, "gradient suite", ok,
           "20 cases/primitive + continuous cell, max rel err " + fmt_sci(worst) + " at " +
               worst_name + ", tol 1e-4, " + fmt(secs, 1) + "s of 300s");
}

// ------------------------------------------------------------ combinatorics

void criterion_combinatorics() {
    bool ok = true;
    for (int n = 1; n <= 8; ++n) {
        const i64 want = static_cast<i64>(n + 1) * (n + 2) / 2 - 1;
        ok &= static_cast<i64>(enumerate_connections(n).size()) == want;
        ok &= connection_count(n) == want;
        ok &= oracle::brute_force_connections(n) == want;
    }
    ok &= connection_count(4) == 14;
    report(2, "cell combinatorics", ok,
           "connection_count(n) == (n+1)(n+2)/2 - 1 for n in [1,8]; n=4 gives " +
               std::to_string(connection_count(4)));
}

// ------------------------------------------------------------------ bilevel

void criterion_bilevel() {
    // (a) eps = 0 collapses the unrolled gradient to first order.
    real collapse_err = 0;
    for (unsigned seed : {1u, 2u, 3u, 4u, 5u}) {
        oracle::BilinearModel m = oracle::make_bilinear(seed);
        std::vector<real> first(static_cast<size_t>(m.alpha_dim()));
        std::vector<real> second(static_cast<size_t>(m.alpha_dim()));
        alpha_grad_first_order(m, first);
        alpha_grad_second_order(m, 0.0, 1e-2, second);
        for (size_t j = 0; j < first.size(); ++j) {
            const real err = std::abs(first[j] - second[j]) /
                             std::max(real(1), std::abs(first[j]));
            collapse_err = std::max(collapse_err, err);
        }
    }
    const bool ok_a = collapse_err <= 1e-10;

    // (b) finite-difference Hessian-vector product against the closed form.
    real hvp_err = 0;
    for (unsigned seed : {11u, 12u, 13u}) {
        for (const real eps : {0.05, 0.3, 1.0}) {
            oracle::BilinearModel m = oracle::make_bilinear(seed);
            std::vector<real> got(static_cast<size_t>(m.alpha_dim()));
            alpha_grad_second_order(m, eps, 1e-2, got);
            const std::vector<real> want = m.exact_alpha_grad(eps);
            real num = 0, den = 0;
            for (size_t j = 0; j < got.size(); ++j) {
                num += (got[j] - want[j]) * (got[j] - want[j]);
                den += want[j] * want[j];
            }
            hvp_err = std::max(hvp_err, std::sqrt(num) / std::max(real(1e-30), std::sqrt(den)));
        }
    }
    const bool ok_b = hvp_err <= 1e-3;

    // (c) loss evaluations per alpha step: 1 first-order vs 4 second-order.
    oracle::BilinearModel mf = oracle::make_bilinear(21);
    std::vector<real> g(static_cast<size_t>(mf.alpha_dim()));
    alpha_grad_first_order(mf, g);
    const i64 first_evals = mf.loss_evals();
    oracle::BilinearModel ms = oracle::make_bilinear(21);
    alpha_grad_second_order(ms, 0.1, 1e-2, g);
    const i64 second_evals = ms.loss_evals();
    const bool ok_c = first_evals == 1 && second_evals == 4;

    report(3, "bilevel math", ok_a && ok_b && ok_c,
           "eps=0 collapse rel err " + fmt_sci(collapse_err) + " (tol 1e-10); HVP vs closed form " +
               fmt_sci(hvp_err) + " (tol 1e-3); evals/step " + std::to_string(first_evals) +
               " first vs " + std::to_string(second_evals) + " second");
}

// ------------------------------------------------------------ discretization

void criterion_discretization() {
    const CellSpec spec{3, 4};
    const i64 M = connection_count(spec.n);
    Rng rng(1234);
    bool invariants = true;
    bool shift_inv = true;
    for (int trial = 0; trial < 1000; ++trial) {
        const Tensor alpha = random_uniform(Shape5{M, 8, 1, 1, 1}, -3, 3, rng);
        const Genotype g = discretize(spec, alpha);
        invariants &= g.n == spec.n;
        for (int i = 0; i < g.n && invariants; ++i) {
            const auto& e = g.nodes[static_cast<size_t>(i)];
            invariants &= e[0].source != e[1].source;
            for (const auto& ed : e) {
                invariants &= ed.source >= 0 && ed.source < i + 2;
                invariants &= ed.kind != OperatorKind::Zero;
            }
        }
        // Per-row logit shifts must not change the outcome.
        if (trial % 5 == 0) {
            Tensor shifted(alpha.shape());
            for (i64 k = 0; k < M; ++k) {
                const real c = rng.uniform(-5, 5);
                for (i64 j = 0; j < 8; ++j) shifted.at(k * 8 + j) = alpha.at(k * 8 + j) + c;
            }
            shift_inv &= discretize(spec, alpha).serialize() == discretize(spec, shifted).serialize();
        }
    }
    report(4, "discretization", invariants && shift_inv,
           "1000 random alpha: 2 edges/node, distinct legal sources, no Zero; "
           "200 per-row shifts left the genotype unchanged");
}

// ----------------------------------------------------------------- sampling

void criterion_sampling() {
    Rng rng(101);
    bool ok = true;
    for (int trial = 0; trial < 10000 && ok; ++trial) {
        const int Ns = 1 + static_cast<int>(rng.uniform_int(6));
        const int Nr = 1 + static_cast<int>(rng.uniform_int(3));
        const i64 L = static_cast<i64>(Ns) * Nr + rng.uniform_int(41);
        const std::vector<i64> idx = segment_sample(L, Ns, Nr, rng);
        ok &= idx.size() == static_cast<size_t>(Ns) * Nr;
        const i64 w = L / Ns;
        for (int s = 0; s < Ns && ok; ++s) {
            const i64 lo = static_cast<i64>(s) * w;
            const i64 hi = s == Ns - 1 ? L : lo + w;
            for (int k = 0; k < Nr; ++k) {
                const i64 v = idx[static_cast<size_t>(s) * Nr + static_cast<size_t>(k)];
                ok &= v >= lo && v < hi;
                if (k > 0) ok &= v > idx[static_cast<size_t>(s) * Nr + static_cast<size_t>(k - 1)];
            }
        }
    }
    bool exact = true;
    for (int rep = 0; rep < 50; ++rep) {
        const std::vector<i64> idx = segment_sample(8, 4, 2, rng);
        exact &= idx.size() == 8;
        for (i64 i = 0; i < 8 && exact; ++i) exact &= idx[static_cast<size_t>(i)] == i;
    }
    report(5, "segment sampling", ok && exact,
           "10000 random (L, Ns, Nr) draws in-window and strictly increasing; "
           "L=8, Ns=4, Nr=2 returns frames 0..7 exactly");
}

// ------------------------------------------------------------------- params

Genotype all_op_genotype(int n, OperatorKind kind) {
    Genotype g;
    g.n = n;
    for (int i = 0; i < n; ++i)
        g.nodes.push_back({Genotype::Edge{i, kind}, Genotype::Edge{i + 1, kind}});
    return g;
}

void criterion_params() {
    bool matrix_ok = true;
    int specs = 0;
    for (const int depth : {1, 2, 3})
        for (const i64 c0 : {4, 8})
            for (const int n : {2, 3}) {
                ++specs;
                for (const NetMode mode : {NetMode::continuous, NetMode::discrete}) {
                    NetworkSpec sp;
                    sp.depth = depth;
                    sp.init_channels = c0;
                    sp.n = n;
                    sp.classes = 5;
                    sp.reduce_every = 2;
                    sp.mode = mode;
                    const Genotype g = all_op_genotype(n, OperatorKind::Conv_3);
                    const Genotype* gp = mode == NetMode::discrete ? &g : nullptr;
                    NetworkState st = build_network(sp, gp, 7);
                    matrix_ok &= count_params(st).total == oracle::network_param_oracle(sp, gp);
                }
            }

    bool factored_ok = true;
    for (const i64 c0 : {4, 8, 16}) {
        NetworkSpec sp;
        sp.depth = 2;
        sp.init_channels = c0;
        sp.n = 2;
        sp.classes = 5;
        sp.reduce_every = 2;
        sp.mode = NetMode::discrete;
        const Genotype g = all_op_genotype(2, OperatorKind::Conv_3);
        NetworkState st = build_network(sp, &g, 7);
        factored_ok &= count_params(st).total < count_params_3d_counterpart(st);
    }

    NetworkSpec full;
    full.depth = 6;
    full.init_channels = 8;
    full.n = 4;
    full.classes = 101;
    full.reduce_every = 2;
    full.mode = NetMode::discrete;
    const Genotype dil = all_op_genotype(4, OperatorKind::DilConv_3);
    NetworkState pst = build_network(full, &dil, 7);
    const i64 full_params = count_params(pst).total;
    const bool full_ok = full_params == oracle::network_param_oracle(full, &dil) &&
                          full_params < 3320000;

    report(6, "parameter accounting", matrix_ok && factored_ok && full_ok,
           std::to_string(specs) + "-spec matrix matches the shape oracle in both modes; "
           "(2+1)D < 3D for C in {4,8,16}; full-scale all-DilConv net has " +
               std::to_string(full_params) + " params (< 3.32M)");
}

// ------------------------------------------------------------------ e2e CLI

struct CliResult {
    int exit = -1;
    std::string out;
};

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) return {};
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

CliResult run_cli(const std::string& cli, const fs::path& scratch, const std::string& args) {
    static int counter = 0;
    const fs::path log = scratch / ("step_" + std::to_string(counter++) + ".log");
    const std::string cmd = cli + " " + args + " > " + log.string() + " 2>&1";
    const int rc = std::system(cmd.c_str());
    CliResult r;
    r.exit = (rc != -1 && WIFEXITED(rc)) ? WEXITSTATUS(rc) : 127;
    r.out = slurp(log);
    return r;
}

// Desk-scale run configuration: 3-class motion corpus, 300 clips of
// 16x32x32, two-cell search network, 20 search epochs, 40 train epochs.
std::string desk_config(const fs::path& data_dir) {
    std::ostringstream os;
    os << R"({
  "seed": 7,
  "data": {"dir": ")"
       << data_dir.string() << R"(", "classes": 3, "clips_per_class": 100,
           "frames": 16, "height": 32, "width": 32, "split": 0.8, "mode": "motion"},
  "sampling": {"segments": 4, "per_segment": 2, "crop": 32, "flip": false},
  "net_search": {"depth": 2, "channels": 4, "nodes": 2, "reduce_every": 2},
  "net_final": {"depth": 2, "channels": 4, "nodes": 2, "reduce_every": 2},
  "search": {"epochs": 20, "batch": 8, "w_lr": 0.05, "w_momentum": 0.9, "w_decay": 0.0003,
             "alpha_lr": 0.5, "order": "first", "split": 0.5},
  "train": {"epochs": 40, "batch": 8, "lr": 0.05, "momentum": 0.9, "w_decay": 0.0003}
})";
    return os.str();
}

// Runs search -> train -> eval -> eval --ablated into fresh directories and
// returns false if any stage exits nonzero.
bool run_pipeline(const std::string& cli, const fs::path& scratch, const std::string& cfg_flag,
                  const fs::path& root, std::string* fail) {
    fs::create_directories(root);
    CliResult r = run_cli(cli, scratch, "search" + cfg_flag + " --out " + (root / "search").string());
    if (r.exit != 0) {
        *fail = "search: " + r.out;
        return false;
    }
    r = run_cli(cli, scratch, "train" + cfg_flag + " --genotype " +
                                  (root / "search" / "genotype.txt").string() + " --out " +
                                  (root / "train").string());
    if (r.exit != 0) {
        *fail = "train: " + r.out;
        return false;
    }
    const std::string ckpt = (root / "train" / "checkpoint.bin").string();
    r = run_cli(cli, scratch, "eval" + cfg_flag + " --checkpoint " + ckpt + " --out " +
                                  (root / "eval").string());
    if (r.exit != 0) {
        *fail = "eval: " + r.out;
        return false;
    }
    r = run_cli(cli, scratch, "eval" + cfg_flag + " --checkpoint " + ckpt + " --out " +
                                  (root / "eval").string() + " --ablated --force");
    if (r.exit != 0) {
        *fail = "eval --ablated: " + r.out;
        return false;
    }
    return true;
}

// EvalReport bytes with the wall-clock line removed; runtime is the one
// field legitimately different between identical runs.
std::string report_without_runtime(const fs::path& p) {
    std::istringstream is(slurp(p));
    std::ostringstream os;
    std::string line;
    while (std::getline(is, line))
        if (line.rfind("runtime_sec ", 0) != 0) os << line << "\n";
    return os.str();
}

void criterion_end_to_end(const std::string& cli, const fs::path& scratch) {
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path data = scratch / "data";
    const fs::path cfg_path = scratch / "desk.json";
    {
        std::ofstream os(cfg_path);
        os << desk_config(data);
    }
    const std::string cfg_flag = " --config " + cfg_path.string();

    CliResult r = run_cli(cli, scratch, "gen" + cfg_flag);
    if (r.exit != 0) {
        report(7, "end-to-end desk run", false, "gen failed: " + r.out);
        report(8, "determinism", false, "skipped: pipeline failed");
        return;
    }

    std::string fail;
    if (!run_pipeline(cli, scratch, cfg_flag, scratch / "run1", &fail)) {
        report(7, "end-to-end desk run", false, fail);
        report(8, "determinism", false, "skipped: pipeline failed");
        return;
    }
    const double run1_secs = seconds_since(t0);

    EvalReport plain, ablated;
    try {
        plain = load_eval_report((scratch / "run1" / "eval" / "eval_report.txt").string());
        ablated = load_eval_report((scratch / "run1" / "eval" / "eval_report_ablated.txt").string());
    } catch (const std::exception& e) {
        report(7, "end-to-end desk run", false, std::string("report unreadable: ") + e.what());
        report(8, "determinism", false, "skipped: pipeline failed");
        return;
    }

    const real chance = 1.0 / 3.0;
    const bool ok7 = plain.top1 >= 0.90 && ablated.top1 <= chance + 0.15 && run1_secs <= 2700.0;
    report(7, "end-to-end desk run", ok7,
           "top-1 " + fmt(plain.top1) + " (need >= 0.90) on " + std::to_string(plain.clips) +
               " held-out clips; temporally ablated " + fmt(ablated.top1) +
               " (need <= chance+0.15 = " + fmt(chance + 0.15) + "); " + fmt(run1_secs, 1) +
               "s of 2700s");

    // Same seed, same corpus, fresh run: artifacts must match byte for byte.
    if (!run_pipeline(cli, scratch, cfg_flag, scratch / "run2", &fail)) {
        report(8, "determinism", false, fail);
        return;
    }
    const bool geno_eq = slurp(scratch / "run1" / "search" / "genotype.txt") ==
                             slurp(scratch / "run2" / "search" / "genotype.txt") &&
                         !slurp(scratch / "run1" / "search" / "genotype.txt").empty();
    const bool ckpt_eq = slurp(scratch / "run1" / "train" / "checkpoint.bin") ==
                             slurp(scratch / "run2" / "train" / "checkpoint.bin") &&
                         !slurp(scratch / "run1" / "train" / "checkpoint.bin").empty();
    const std::string rep1 = report_without_runtime(scratch / "run1" / "eval" / "eval_report.txt");
    const std::string rep2 = report_without_runtime(scratch / "run2" / "eval" / "eval_report.txt");
    const bool report_eq = rep1 == rep2 && !rep1.empty();
    report(8, "determinism", geno_eq && ckpt_eq && report_eq,
           std::string("same-seed rerun: genotype ") + (geno_eq ? "identical" : "DIFFERS") +
               ", checkpoint " + (ckpt_eq ? "identical" : "DIFFERS") +
               ", eval report net of wall-clock line " + (report_eq ? "identical" : "DIFFERS"));
}

}  // namespace

int main() {
    const char* cli_env = std::getenv("STNAS_CLI");
    if (!cli_env) {
        std::fprintf(stderr, "STNAS_CLI must point at the pipeline binary\n");
        return 2;
    }
    const fs::path scratch = fs::temp_directory_path() / "stnas_acceptance";
    fs::remove_all(scratch);
    fs::create_directories(scratch);

    criterion_gradients();
    criterion_combinatorics();
    criterion_bilevel();
    criterion_discretization();
    criterion_sampling();
    criterion_params();
    criterion_end_to_end(cli_env, scratch);

    std::printf("%s\n", g_all_ok ? "ACCEPTANCE: all criteria passed"
                                 : "ACCEPTANCE: at least one criterion failed");
    return g_all_ok ? 0 : 1;
}
