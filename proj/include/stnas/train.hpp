#pragma once

#include <chrono>
#include <fstream>
#include <string>
#include <vector>

#include "stnas/search.hpp"

namespace stnas {

struct TrainConfig {
    int epochs = 40;
    i64 batch = 8;
    real lr = 0.05;
    real momentum = 0.9;
    real weight_decay = 3e-4;
    uint64_t seed = 1;
    int checkpoint_every = 0;  // epochs between intermediate checkpoints; 0 = none
};

struct TrainResult {
    std::vector<real> loss_curve;  // mean train loss per epoch
};

// From-scratch training of a discrete network: SGD with momentum and weight
// decay, cosine lr over the epoch budget. Aborts if the loss exceeds 1000x
// the first recorded value or leaves the finite range.
inline TrainResult train(NetworkState& st, const ClipStore& corpus,
                         const std::vector<i64>& train_ids, int Ns, int Nr,
                         const AugmentConfig& aug, const TrainConfig& cfg,
                         const std::string& checkpoint_dir = "") {
    if (st.spec.mode != NetMode::discrete)
        throw ConfigError("train: expected a discrete-mode network");
    if (cfg.epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (train_ids.empty()) throw ConfigError("train: empty training split");
    SgdOptimizer opt(st.store);
    Rng rng(cfg.seed ^ 0xd1b54a32d192ed03ull);
    std::vector<i64> ids = train_ids;
    TrainResult res;
    real initial = -1;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const real lr = cosine_lr(cfg.lr, 0, epoch, cfg.epochs);
        rng.shuffle(ids);
        real loss_sum = 0;
        i64 batches = 0;
        for (size_t start = 0; start < ids.size(); start += static_cast<size_t>(cfg.batch)) {
            const size_t stop = std::min(ids.size(), start + static_cast<size_t>(cfg.batch));
            const std::vector<i64> chunk(ids.begin() + static_cast<std::ptrdiff_t>(start),
                                         ids.begin() + static_cast<std::ptrdiff_t>(stop));
            const ClipBatch b = make_batch(corpus, chunk, Ns, Nr, aug, rng, true);
            const real loss =
                weight_step(st, opt, b, SgdConfig{lr, cfg.momentum, cfg.weight_decay});
            if (initial < 0) initial = std::max<real>(loss, 1e-12);
            if (!std::isfinite(loss) || loss > 1e3 * initial)
                throw Error("training diverged at epoch " + std::to_string(epoch) + ": loss " +
                            fmt_real(loss) + " vs initial " + fmt_real(initial));
            loss_sum += loss;
            ++batches;
        }
        res.loss_curve.push_back(loss_sum / static_cast<real>(batches));
        if (!checkpoint_dir.empty() && cfg.checkpoint_every > 0 &&
            (epoch + 1) % cfg.checkpoint_every == 0) {
            char name[64];
            std::snprintf(name, sizeof(name), "checkpoint_e%04d.bin", epoch + 1);
            save_checkpoint(st, checkpoint_dir + "/" + name);
        }
    }
    return res;
}

struct EvalReport {
    real top1 = 0;
    real loss = 0;
    std::vector<real> per_class_acc;
    std::vector<i64> per_class_count;
    i64 clips = 0;
    i64 params = 0;
    real runtime_sec = 0;
};

// One forward per clip batch group, center sampling + center crop, frozen
// statistics; argmax scoring (ties to the lower class index). Leaves the
// network state untouched.
inline EvalReport evaluate(NetworkState& st, const ClipStore& corpus,
                           const std::vector<i64>& ids, int Ns, int Nr,
                           const AugmentConfig& aug, i64 batch = 8) {
    if (ids.empty()) throw DomainError("evaluate: empty clip set");
    const auto t0 = std::chrono::steady_clock::now();
    const int classes = corpus.manifest().classes;
    EvalReport rep;
    rep.per_class_acc.assign(static_cast<size_t>(classes), 0);
    rep.per_class_count.assign(static_cast<size_t>(classes), 0);
    std::vector<i64> per_class_correct(static_cast<size_t>(classes), 0);
    Rng unused(0);
    i64 correct = 0;
    for (size_t start = 0; start < ids.size(); start += static_cast<size_t>(batch)) {
        const size_t stop = std::min(ids.size(), start + static_cast<size_t>(batch));
        const std::vector<i64> chunk(ids.begin() + static_cast<std::ptrdiff_t>(start),
                                     ids.begin() + static_cast<std::ptrdiff_t>(stop));
        const ClipBatch b = make_batch(corpus, chunk, Ns, Nr, aug, unused, false);
        NetForward nf = network_forward(st, b.frames, Mode::eval, false, false);
        // Copy: cross_entropy grows the tape, which may move node storage.
        const Tensor logits = nf.tape->val(nf.logits);
        const VarId loss = cross_entropy(*nf.tape, nf.logits, b.labels);
        rep.loss += nf.tape->val(loss).at(0) * static_cast<real>(chunk.size());
        const i64 C = logits.shape().c;
        for (size_t i = 0; i < chunk.size(); ++i) {
            i64 best = 0;
            for (i64 c = 1; c < C; ++c)
                if (logits.at(static_cast<i64>(i) * C + c) > logits.at(static_cast<i64>(i) * C + best))
                    best = c;
            const int label = b.labels[i];
            ++rep.per_class_count[static_cast<size_t>(label)];
            if (static_cast<int>(best) == label) {
                ++correct;
                ++per_class_correct[static_cast<size_t>(label)];
            }
        }
    }
    rep.clips = static_cast<i64>(ids.size());
    rep.loss /= static_cast<real>(rep.clips);
    rep.top1 = static_cast<real>(correct) / static_cast<real>(rep.clips);
    for (int c = 0; c < classes; ++c)
        rep.per_class_acc[static_cast<size_t>(c)] =
            rep.per_class_count[static_cast<size_t>(c)] > 0
                ? static_cast<real>(per_class_correct[static_cast<size_t>(c)]) /
                      static_cast<real>(rep.per_class_count[static_cast<size_t>(c)])
                : 0;
    rep.params = count_params(st).total;
    rep.runtime_sec =
        std::chrono::duration<real>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

// Text form. runtime_sec is machine-dependent and deliberately the last
// line, so determinism comparisons can strip it.
inline void write_eval_report(const std::string& path, const EvalReport& rep) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write eval report '" + path + "'");
    os << "stnas-eval v1\n";
    os << "clips " << rep.clips << "\n";
    os << "params " << rep.params << "\n";
    os << "loss " << fmt_real(rep.loss) << "\n";
    os << "top1 " << fmt_real(rep.top1) << "\n";
    for (size_t c = 0; c < rep.per_class_acc.size(); ++c)
        os << "class " << c << " acc " << fmt_real(rep.per_class_acc[c]) << " count "
           << rep.per_class_count[c] << "\n";
    os << "runtime_sec " << fmt_real(rep.runtime_sec) << "\n";
    if (!os) throw IoError("failed writing eval report '" + path + "'");
}

inline EvalReport load_eval_report(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read eval report '" + path + "'");
    std::string line;
    if (!std::getline(is, line) || line != "stnas-eval v1")
        throw IoError("eval report '" + path + "' has a bad header");
    EvalReport rep;
    while (std::getline(is, line)) {
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "clips") ls >> rep.clips;
        else if (key == "params") ls >> rep.params;
        else if (key == "loss") ls >> rep.loss;
        else if (key == "top1") ls >> rep.top1;
        else if (key == "runtime_sec") ls >> rep.runtime_sec;
        else if (key == "class") {
            i64 c;
            std::string a, cnt;
            real acc;
            i64 n;
            if (!(ls >> c >> a >> acc >> cnt >> n) || a != "acc" || cnt != "count")
                throw IoError("eval report: bad class line '" + line + "'");
            rep.per_class_acc.push_back(acc);
            rep.per_class_count.push_back(n);
        } else {
            throw IoError("eval report: unknown line '" + line + "'");
        }
        if (!ls) throw IoError("eval report: bad line '" + line + "'");
    }
    return rep;
}

}  // namespace stnas
