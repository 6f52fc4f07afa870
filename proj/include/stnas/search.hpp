#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "stnas/bilevel.hpp"
#include "stnas/dataset.hpp"
#include "stnas/optim.hpp"

namespace stnas {

struct SearchConfig {
    int epochs = 20;
    i64 batch = 8;
    real w_lr = 0.05;
    real w_momentum = 0.9;
    real w_decay = 3e-4;
    real alpha_lr = 0.5;
    real eps = -1;  // virtual step size; < 0 means "track the current weight lr"
    bool second_order = false;
    real hvp_r = 1e-2;
    real split = 0.5;  // fraction of the search corpus used as the weight-training half
    uint64_t seed = 1;
};

// Bilevel view of the continuous supernet. theta = every learned parameter
// in flat store order; alpha = the architecture matrix. Losses are mean
// cross-entropy on the currently installed batches. All gradient passes run
// with frozen norm statistics so that neither theta nor any buffer changes
// as a side effect; the only state this class writes through set_theta is
// the parameter values themselves.
class SupernetBilevel {
public:
    explicit SupernetBilevel(NetworkState& st) : st_(&st) {
        if (st.spec.mode != NetMode::continuous)
            throw ConfigError("bilevel model needs a continuous-mode network");
    }

    void set_batches(const ClipBatch* train, const ClipBatch* valid) {
        train_ = train;
        valid_ = valid;
    }

    i64 theta_dim() const { return st_->store.scalar_count(); }
    i64 alpha_dim() const { return st_->alpha.numel(); }

    void get_theta(real* out) const {
        i64 k = 0;
        for (i64 i = 0; i < st_->store.size(); ++i) {
            const Tensor& v = st_->store.param(i).value;
            for (i64 j = 0; j < v.numel(); ++j) out[k++] = v.at(j);
        }
    }
    void set_theta(const real* in) {
        i64 k = 0;
        for (i64 i = 0; i < st_->store.size(); ++i) {
            Tensor& v = st_->store.param(i).value;
            for (i64 j = 0; j < v.numel(); ++j) v.at(j) = in[k++];
        }
    }

    real train_loss(real* gt, real* ga) { return loss_on(*require(train_, "train"), gt, ga); }
    real valid_loss(real* gt, real* ga) { return loss_on(*require(valid_, "valid"), gt, ga); }
    i64 loss_evals() const { return evals_; }

private:
    static const ClipBatch* require(const ClipBatch* b, const char* which) {
        if (!b) throw Error(std::string("bilevel model: no ") + which + " batch installed");
        return b;
    }

    real loss_on(const ClipBatch& batch, real* gt, real* ga) {
        ++evals_;
        NetForward nf = network_forward(*st_, batch.frames, Mode::train_frozen_stats,
                                        gt != nullptr, ga != nullptr);
        Tape& t = *nf.tape;
        const VarId loss = cross_entropy(t, nf.logits, batch.labels);
        const real value = t.val(loss).at(0);
        if (!std::isfinite(value)) throw Error("bilevel model: non-finite loss");
        if (gt || ga) t.backward(loss, true);
        if (gt) {
            i64 k = 0;
            for (i64 i = 0; i < st_->store.size(); ++i) {
                const VarId v = nf.bound[static_cast<size_t>(i)];
                const i64 numel = st_->store.param(i).value.numel();
                if (t.has_grad(v)) {
                    const Tensor& g = t.grad(v);
                    for (i64 j = 0; j < numel; ++j) gt[k + j] = g.at(j);
                } else {
                    for (i64 j = 0; j < numel; ++j) gt[k + j] = 0;
                }
                k += numel;
            }
        }
        if (ga) {
            if (t.has_grad(nf.alpha_raw)) {
                const Tensor& g = t.grad(nf.alpha_raw);
                for (i64 j = 0; j < g.numel(); ++j) ga[j] = g.at(j);
            } else {
                for (i64 j = 0; j < st_->alpha.numel(); ++j) ga[j] = 0;
            }
        }
        return value;
    }

    NetworkState* st_;
    const ClipBatch* train_ = nullptr;
    const ClipBatch* valid_ = nullptr;
    i64 evals_ = 0;
};

// One SGD step on theta at fixed alpha. Norm running statistics update here
// and only here during search. Returns the batch loss.
inline real weight_step(NetworkState& st, SgdOptimizer& opt, const ClipBatch& batch,
                        const SgdConfig& cfg) {
    NetForward nf = network_forward(st, batch.frames, Mode::train, true, false);
    Tape& t = *nf.tape;
    const VarId loss = cross_entropy(t, nf.logits, batch.labels);
    const real value = t.val(loss).at(0);
    if (!std::isfinite(value)) throw Error("weight step: non-finite loss; aborting");
    t.backward(loss, true);
    opt.step(st.store, t, nf.bound, cfg);
    return value;
}

// Deterministic accuracy/loss of the current network over the given clips
// (center sampling, center crop, frozen statistics). Works for continuous
// and discrete networks; batches only group work, the result is per clip.
struct EvalPoint {
    real loss = 0;
    real acc = 0;
};

inline EvalPoint evaluate_clips(NetworkState& st, const ClipStore& corpus,
                                const std::vector<i64>& ids, int Ns, int Nr,
                                const AugmentConfig& aug, i64 batch) {
    if (ids.empty()) throw DomainError("evaluate: empty clip set");
    Rng unused(0);
    EvalPoint ep;
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
        ep.loss += nf.tape->val(loss).at(0) * static_cast<real>(chunk.size());
        const i64 C = logits.shape().c;
        for (size_t i = 0; i < chunk.size(); ++i) {
            i64 best = 0;
            for (i64 c = 1; c < C; ++c)
                if (logits.at(static_cast<i64>(i) * C + c) > logits.at(static_cast<i64>(i) * C + best))
                    best = c;
            if (static_cast<int>(best) == b.labels[i]) ++correct;
        }
    }
    ep.loss /= static_cast<real>(ids.size());
    ep.acc = static_cast<real>(correct) / static_cast<real>(ids.size());
    return ep;
}

struct EpochRecord {
    int epoch = 0;
    real train_loss = 0, valid_loss = 0, valid_acc = 0;
    Tensor alpha_softmax{Shape5{1, 1, 1, 1, 1}};
    Genotype genotype;
};

struct SearchResult {
    Genotype best;
    int best_epoch = -1;
    std::vector<EpochRecord> trace;
    NetworkState net;  // warm supernet after the last epoch
    i64 alpha_loss_evals = 0;
};

namespace detail {

inline Tensor alpha_softmax_snapshot(const Tensor& alpha) {
    Tensor out(alpha.shape());
    for (i64 k = 0; k < alpha.shape().n; ++k)
        softmax_row8(alpha.data() + k * kNumOperators, out.data() + k * kNumOperators);
    return out;
}

}  // namespace detail

// Alternating bilevel search. Per batch pair: one alpha step (Eq.-(4)-style
// plain descent, first- or second-order gradient) then one theta step.
// Weight lr follows a cosine over epochs, alpha lr stays constant. The
// search corpus splits per class into equal train/valid halves. Best
// genotype = best epoch validation accuracy, later epoch wins ties.
inline SearchResult search(const NetworkSpec& spec, const SearchConfig& cfg,
                           const ClipStore& corpus, const std::vector<i64>& pool, int Ns, int Nr,
                           const AugmentConfig& aug_train, const AugmentConfig& aug_eval) {
    NetworkSpec sspec = spec;
    sspec.mode = NetMode::continuous;
    if (cfg.epochs < 1) throw ConfigError("search: epochs must be >= 1");
    if (cfg.split <= 0 || cfg.split >= 1) throw ConfigError("search: split must be in (0,1)");

    // Per-class split of the pool into the two bilevel halves.
    std::vector<i64> half_train, half_valid;
    {
        const int classes = corpus.manifest().classes;
        std::vector<std::vector<i64>> by_class(static_cast<size_t>(classes));
        for (i64 id : pool) by_class[static_cast<size_t>(corpus.label(id))].push_back(id);
        for (const auto& cls : by_class) {
            const i64 take = static_cast<i64>(
                std::floor(cfg.split * static_cast<real>(cls.size()) + 0.5));
            for (i64 i = 0; i < static_cast<i64>(cls.size()); ++i)
                (i < take ? half_train : half_valid).push_back(cls[static_cast<size_t>(i)]);
        }
    }
    if (half_train.size() < static_cast<size_t>(cfg.batch) ||
        half_valid.size() < static_cast<size_t>(cfg.batch))
        throw ConfigError("search: split halves smaller than one batch (" +
                          std::to_string(half_train.size()) + "/" +
                          std::to_string(half_valid.size()) + " clips, batch " +
                          std::to_string(cfg.batch) + ")");

    SearchResult res;
    res.net = build_network(sspec, nullptr, cfg.seed);
    SupernetBilevel model(res.net);
    SgdOptimizer opt(res.net.store);
    Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
    std::vector<real> galpha;
    real best_acc = -1;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const real wlr = cosine_lr(cfg.w_lr, 0, epoch, cfg.epochs);
        const real eps = cfg.eps < 0 ? wlr : cfg.eps;
        rng.shuffle(half_train);
        rng.shuffle(half_valid);
        const i64 steps = static_cast<i64>(
            std::min(half_train.size(), half_valid.size()) / static_cast<size_t>(cfg.batch));
        real loss_sum = 0;
        const i64 evals_before = model.loss_evals();
        for (i64 s = 0; s < steps; ++s) {
            const auto slice = [&](const std::vector<i64>& ids) {
                return std::vector<i64>(ids.begin() + s * cfg.batch,
                                        ids.begin() + (s + 1) * cfg.batch);
            };
            const ClipBatch bt = make_batch(corpus, slice(half_train), Ns, Nr, aug_train, rng, true);
            const ClipBatch bv = make_batch(corpus, slice(half_valid), Ns, Nr, aug_train, rng, true);
            model.set_batches(&bt, &bv);
            if (cfg.second_order)
                alpha_grad_second_order(model, eps, cfg.hvp_r, galpha);
            else
                alpha_grad_first_order(model, galpha);
            alpha_step(res.net.alpha, galpha, cfg.alpha_lr);
            loss_sum += weight_step(res.net, opt, bt, SgdConfig{wlr, cfg.w_momentum, cfg.w_decay});
            model.set_batches(nullptr, nullptr);
        }
        res.alpha_loss_evals += model.loss_evals() - evals_before;

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = steps > 0 ? loss_sum / static_cast<real>(steps) : 0;
        const EvalPoint ep =
            evaluate_clips(res.net, corpus, half_valid, Ns, Nr, aug_eval, cfg.batch);
        rec.valid_loss = ep.loss;
        rec.valid_acc = ep.acc;
        rec.alpha_softmax = detail::alpha_softmax_snapshot(res.net.alpha);
        rec.genotype = discretize(CellSpec{sspec.n, sspec.init_channels}, res.net.alpha);
        res.trace.push_back(rec);
        if (rec.valid_acc >= best_acc) {
            best_acc = rec.valid_acc;
            res.best = rec.genotype;
            res.best_epoch = epoch;
        }
    }
    return res;
}

inline std::string genotype_hash(const Genotype& g) { return hex64(fnv1a64(g.serialize())); }

inline void write_trace(const std::string& path, const SearchResult& res) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write trace '" + path + "'");
    os << "epoch train_loss valid_loss valid_acc genotype_hash\n";
    for (const EpochRecord& r : res.trace)
        os << r.epoch << " " << fmt_real(r.train_loss) << " " << fmt_real(r.valid_loss) << " "
           << fmt_real(r.valid_acc) << " " << genotype_hash(r.genotype) << "\n";
    os << "best_epoch " << res.best_epoch << "\n";
    if (!os) throw IoError("failed writing trace '" + path + "'");
}

inline void write_alpha_log(const std::string& path, const SearchResult& res) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write alpha log '" + path + "'");
    for (const EpochRecord& r : res.trace) {
        os << "epoch " << r.epoch << "\n";
        const Tensor& sm = r.alpha_softmax;
        for (i64 k = 0; k < sm.shape().n; ++k) {
            for (int j = 0; j < kNumOperators; ++j)
                os << (j ? " " : "") << fmt_real(sm.at(k * kNumOperators + j));
            os << "\n";
        }
    }
    if (!os) throw IoError("failed writing alpha log '" + path + "'");
}

}  // namespace stnas
