// Command-line pipeline: corpus generation, architecture search,
// from-scratch retraining, evaluation, and parameter accounting.
//
//   stnas_cli gen    --config c.json [--out DIR] [--seed N] [--force]
//   stnas_cli search --config c.json --out DIR [--seed N] [--order first|second] [--epochs N] [--force]
//   stnas_cli train  --config c.json --genotype F --out DIR [--seed N] [--epochs N] [--force]
//   stnas_cli eval   --config c.json --checkpoint F --out DIR [--ablated] [--force]
//   stnas_cli params --config c.json [--genotype F]
//   stnas_cli table  DIR...
//
// Every run command records the resolved configuration (file plus flag
// overrides) as resolved.json inside its output directory, and refuses to
// reuse a non-empty directory unless --force is given.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "stnas/config.hpp"
#include "stnas/network.hpp"
#include "stnas/search.hpp"
#include "stnas/train.hpp"

namespace fs = std::filesystem;
using namespace stnas;

namespace {

void ensure_run_dir(const std::string& dir, bool force) {
    if (fs::exists(dir) && !fs::is_empty(dir) && !force)
        throw ConfigError("output directory '" + dir + "' is not empty (use --force)");
    fs::create_directories(dir);
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write '" + path + "'");
    os << text;
    if (!os) throw IoError("failed writing '" + path + "'");
}

Genotype read_genotype(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read genotype '" + path + "'");
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return Genotype::parse(text);
}

struct Overrides {
    uint64_t seed = 0;
    bool has_seed = false;
    int epochs = 0;
    bool has_epochs = false;
    std::string order;
};

RunConfig resolve(const std::string& config_path, const Overrides& ov, bool epochs_for_train) {
    RunConfig c = load_run_config(config_path);
    if (ov.has_seed) c.seed = ov.seed;
    if (ov.has_epochs) (epochs_for_train ? c.train.epochs : c.search.epochs) = ov.epochs;
    if (!ov.order.empty()) {
        if (ov.order != "first" && ov.order != "second")
            throw ConfigError("--order must be 'first' or 'second'");
        c.search.second_order = ov.order == "second";
    }
    return c;
}

int cmd_gen(const std::string& config_path, const Overrides& ov, std::string out, bool force) {
    RunConfig c = resolve(config_path, ov, false);
    if (out.empty()) out = c.data.dir;
    ensure_run_dir(out, force);
    const Manifest m = synth_corpus(corpus_spec(c), out);
    write_text(out + "/resolved.json", dump_run_config(c));
    const CorpusSplit sp = split_corpus(m);
    std::printf("generated %zu clips (%zu train / %zu eval) in %s\n", m.clips.size(),
                sp.train.size(), sp.test.size(), out.c_str());
    return 0;
}

int cmd_search(const std::string& config_path, const Overrides& ov, const std::string& out,
               bool force) {
    RunConfig c = resolve(config_path, ov, false);
    ensure_run_dir(out, force);
    const ClipStore store = ClipStore::open(c.data.dir);
    const CorpusSplit sp = split_corpus(store.manifest());
    SearchConfig scfg = c.search;
    scfg.seed = c.seed;
    const AugmentConfig aug_train =
        corpus_augment(store.manifest(), c.sampling.crop, c.sampling.flip);
    const AugmentConfig aug_eval = corpus_augment(store.manifest(), c.sampling.crop, false);
    const NetworkSpec spec = net_spec(c.net_search, store.manifest().classes, NetMode::continuous);
    const SearchResult res = search(spec, scfg, store, sp.train, c.sampling.segments,
                                    c.sampling.per_segment, aug_train, aug_eval);
    write_text(out + "/genotype.txt", res.best.serialize());
    write_trace(out + "/trace.txt", res);
    write_alpha_log(out + "/alpha.txt", res);
    write_text(out + "/resolved.json", dump_run_config(c));
    std::printf("best epoch %d  valid_acc %s  genotype %s\n", res.best_epoch,
                fmt_fixed(res.trace[static_cast<size_t>(res.best_epoch)].valid_acc, 4).c_str(),
                genotype_hash(res.best).c_str());
    return 0;
}

int cmd_train(const std::string& config_path, const Overrides& ov, const std::string& genotype_path,
              const std::string& out, bool force) {
    RunConfig c = resolve(config_path, ov, true);
    ensure_run_dir(out, force);
    const Genotype g = read_genotype(genotype_path);
    const ClipStore store = ClipStore::open(c.data.dir);
    const CorpusSplit sp = split_corpus(store.manifest());
    const NetworkSpec spec = net_spec(c.net_final, store.manifest().classes, NetMode::discrete);
    NetworkState st = build_network(spec, &g, c.seed);
    TrainConfig tcfg = c.train;
    tcfg.seed = c.seed;
    const AugmentConfig aug = corpus_augment(store.manifest(), c.sampling.crop, c.sampling.flip);
    const TrainResult res = train(st, store, sp.train, c.sampling.segments,
                                  c.sampling.per_segment, aug, tcfg, out);
    save_checkpoint(st, out + "/checkpoint.bin");
    std::string curve = "epoch mean_train_loss\n";
    for (size_t e = 0; e < res.loss_curve.size(); ++e)
        curve += std::to_string(e) + " " + fmt_real(res.loss_curve[e]) + "\n";
    write_text(out + "/loss.txt", curve);
    write_text(out + "/resolved.json", dump_run_config(c));
    std::printf("trained %d epochs, final mean loss %s -> %s/checkpoint.bin\n", tcfg.epochs,
                fmt_fixed(res.loss_curve.back(), 6).c_str(), out.c_str());
    return 0;
}

int cmd_eval(const std::string& config_path, const Overrides& ov, const std::string& checkpoint,
             const std::string& out, bool ablated, bool force) {
    RunConfig c = resolve(config_path, ov, true);
    ensure_run_dir(out, force);
    NetworkState st = load_checkpoint(checkpoint);
    if (ablated) ablate_temporal(st);
    const ClipStore store = ClipStore::open(c.data.dir);
    const CorpusSplit sp = split_corpus(store.manifest());
    const AugmentConfig aug = corpus_augment(store.manifest(), c.sampling.crop, false);
    const EvalReport rep = evaluate(st, store, sp.test, c.sampling.segments,
                                    c.sampling.per_segment, aug, c.train.batch);
    const std::string name = ablated ? "eval_report_ablated.txt" : "eval_report.txt";
    write_eval_report(out + "/" + name, rep);
    write_text(out + "/resolved.json", dump_run_config(c));
    std::printf("%stop-1 %s on %lld clips (%lld params) -> %s/%s\n", ablated ? "ablated " : "",
                fmt_fixed(rep.top1, 4).c_str(), static_cast<long long>(rep.clips),
                static_cast<long long>(rep.params), out.c_str(), name.c_str());
    return 0;
}

int cmd_params(const std::string& config_path, const Overrides& ov,
               const std::string& genotype_path) {
    RunConfig c = resolve(config_path, ov, false);
    NetworkState st = [&] {
        if (genotype_path.empty()) {
            return build_network(net_spec(c.net_search, c.data.classes, NetMode::continuous),
                                 nullptr, c.seed);
        }
        const Genotype g = read_genotype(genotype_path);
        return build_network(net_spec(c.net_final, c.data.classes, NetMode::discrete), &g, c.seed);
    }();
    const ParamBreakdown bd = count_params(st);
    size_t width = 8;
    for (const auto& g : bd.rows) width = std::max(width, g.first.size());
    for (const auto& g : bd.rows)
        std::printf("%-*s %12lld\n", static_cast<int>(width), g.first.c_str(),
                    static_cast<long long>(g.second));
    std::printf("%-*s %12lld\n", static_cast<int>(width), "total",
                static_cast<long long>(bd.total));
    std::printf("%-*s %12lld\n", static_cast<int>(width), "total_3d",
                static_cast<long long>(count_params_3d_counterpart(st)));
    return 0;
}

int cmd_table(const std::vector<std::string>& dirs) {
    struct Row {
        std::string run;
        i64 params;
        real top1;
    };
    std::vector<Row> rows;
    for (const std::string& d : dirs) {
        const std::string run = fs::path(d).filename().string();
        bool found = false;
        if (fs::exists(d + "/eval_report.txt")) {
            const EvalReport rep = load_eval_report(d + "/eval_report.txt");
            rows.push_back({run, rep.params, rep.top1});
            found = true;
        }
        if (fs::exists(d + "/eval_report_ablated.txt")) {
            const EvalReport rep = load_eval_report(d + "/eval_report_ablated.txt");
            rows.push_back({run + ":ablated", rep.params, rep.top1});
            found = true;
        }
        if (!found)
            throw IoError("no eval report in '" + d + "'");
    }
    std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
        if (a.top1 != b.top1) return a.top1 > b.top1;
        return a.run < b.run;
    });
    size_t width = 3;
    for (const Row& r : rows) width = std::max(width, r.run.size());
    std::printf("%-*s %12s %8s\n", static_cast<int>(width), "run", "params", "top1");
    for (const Row& r : rows)
        std::printf("%-*s %12lld %8s\n", static_cast<int>(width), r.run.c_str(),
                    static_cast<long long>(r.params), fmt_fixed(r.top1, 4).c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    configure_threads_from_env();
    CLI::App app{"spatio-temporal architecture search pipeline"};
    app.require_subcommand(1);

    std::string config_path, out, genotype_path, checkpoint;
    bool force = false, ablated = false;
    Overrides ov;
    std::vector<std::string> table_dirs;

    const auto add_common = [&](CLI::App* cmd, bool needs_out) {
        cmd->add_option("--config", config_path, "run configuration (JSON)")->required();
        auto* seed = cmd->add_option("--seed", ov.seed, "override config seed");
        seed->each([&](const std::string&) { ov.has_seed = true; });
        cmd->add_flag("--force", force, "allow writing into a non-empty directory");
        auto* o = cmd->add_option("--out", out, "output directory");
        if (needs_out) o->required();
    };

    CLI::App* gen = app.add_subcommand("gen", "synthesize the clip corpus");
    add_common(gen, false);

    CLI::App* search_cmd = app.add_subcommand("search", "bilevel architecture search");
    add_common(search_cmd, true);
    search_cmd->add_option("--order", ov.order, "alpha gradient order: first | second");
    search_cmd->add_option("--epochs", ov.epochs, "override search epochs")
        ->each([&](const std::string&) { ov.has_epochs = true; });

    CLI::App* train_cmd = app.add_subcommand("train", "retrain a discretized genotype");
    add_common(train_cmd, true);
    train_cmd->add_option("--genotype", genotype_path, "genotype file from search")->required();
    train_cmd->add_option("--epochs", ov.epochs, "override train epochs")
        ->each([&](const std::string&) { ov.has_epochs = true; });

    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a trained checkpoint");
    add_common(eval_cmd, true);
    eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint file from train")->required();
    eval_cmd->add_flag("--ablated", ablated, "average temporal kernels before evaluating");

    CLI::App* params_cmd = app.add_subcommand("params", "parameter count table");
    params_cmd->add_option("--config", config_path, "run configuration (JSON)")->required();
    params_cmd->add_option("--genotype", genotype_path, "genotype file (default: supernet)");

    CLI::App* table_cmd = app.add_subcommand("table", "summarize eval runs");
    table_cmd->add_option("dirs", table_dirs, "run directories holding eval_report.txt")
        ->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen(config_path, ov, out, force);
        if (search_cmd->parsed()) return cmd_search(config_path, ov, out, force);
        if (train_cmd->parsed()) return cmd_train(config_path, ov, genotype_path, out, force);
        if (eval_cmd->parsed()) return cmd_eval(config_path, ov, checkpoint, out, ablated, force);
        if (params_cmd->parsed()) return cmd_params(config_path, ov, genotype_path);
        if (table_cmd->parsed()) return cmd_table(table_dirs);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
