#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "stnas/dataset.hpp"
#include "stnas/search.hpp"
#include "stnas/train.hpp"

namespace stnas {

// Full run configuration. Every tunable named by the library modules lives
// here; the CLI loads a JSON file, applies flag overrides, and writes the
// resolved result next to the run artifacts. Unknown keys are errors.
struct RunConfig {
    uint64_t seed = 7;

    struct Data {
        std::string dir = "data/motion3";
        int classes = 3;
        int clips_per_class = 100;
        i64 frames = 16, height = 32, width = 32;
        real split = 0.8;
        std::string mode = "motion";  // "motion" or "appearance"
        std::vector<std::array<int, 2>> motion;  // empty = per-class defaults
    } data;

    struct Sampling {
        int segments = 4;     // Ns
        int per_segment = 2;  // Nr
        i64 crop = 32;
        bool flip = false;  // off by default: left/right motion classes are chiral
    } sampling;

    struct Net {
        int depth = 2;
        i64 channels = 4;
        int nodes = 2;
        int reduce_every = 2;
    } net_search, net_final;

    SearchConfig search;
    TrainConfig train;
};

namespace detail {

using json = nlohmann::json;

inline void check_keys(const json& j, const std::string& where,
                       std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ConfigError("config: '" + where + "' must be an object");
    for (const auto& item : j.items()) {
        bool ok = false;
        for (const char* k : allowed)
            if (item.key() == k) {
                ok = true;
                break;
            }
        if (!ok) throw ConfigError("config: unknown key '" + where + "." + item.key() + "'");
    }
}

template <typename T>
inline void get_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline RunConfig default_run_config() {
    RunConfig c;
    c.search.epochs = 20;
    c.search.batch = 8;
    c.search.w_lr = 0.05;
    c.search.alpha_lr = 0.5;
    c.search.second_order = false;
    c.train.epochs = 40;
    c.train.batch = 8;
    c.train.lr = 0.05;
    c.net_final.channels = 4;
    return c;
}

inline RunConfig parse_run_config(const std::string& text, const std::string& origin) {
    detail::json j;
    try {
        j = detail::json::parse(text);
    } catch (const std::exception& e) {
        throw ConfigError("config '" + origin + "': " + e.what());
    }
    RunConfig c = default_run_config();
    detail::check_keys(j, "<root>",
                       {"seed", "data", "sampling", "net_search", "net_final", "search", "train"});
    detail::get_if(j, "seed", c.seed);
    if (j.contains("data")) {
        const auto& d = j.at("data");
        detail::check_keys(d, "data",
                           {"dir", "classes", "clips_per_class", "frames", "height", "width",
                            "split", "mode", "motion"});
        detail::get_if(d, "dir", c.data.dir);
        detail::get_if(d, "classes", c.data.classes);
        detail::get_if(d, "clips_per_class", c.data.clips_per_class);
        detail::get_if(d, "frames", c.data.frames);
        detail::get_if(d, "height", c.data.height);
        detail::get_if(d, "width", c.data.width);
        detail::get_if(d, "split", c.data.split);
        detail::get_if(d, "mode", c.data.mode);
        if (c.data.mode != "motion" && c.data.mode != "appearance")
            throw ConfigError("config: data.mode must be 'motion' or 'appearance'");
        if (d.contains("motion")) {
            for (const auto& mv : d.at("motion")) {
                if (!mv.is_array() || mv.size() != 2)
                    throw ConfigError("config: data.motion entries must be [dx, dy]");
                c.data.motion.push_back({mv.at(0).get<int>(), mv.at(1).get<int>()});
            }
        }
    }
    if (j.contains("sampling")) {
        const auto& s = j.at("sampling");
        detail::check_keys(s, "sampling", {"segments", "per_segment", "crop", "flip"});
        detail::get_if(s, "segments", c.sampling.segments);
        detail::get_if(s, "per_segment", c.sampling.per_segment);
        detail::get_if(s, "crop", c.sampling.crop);
        detail::get_if(s, "flip", c.sampling.flip);
    }
    const auto net_block = [&](const char* name, RunConfig::Net& n) {
        if (!j.contains(name)) return;
        const auto& b = j.at(name);
        detail::check_keys(b, name, {"depth", "channels", "nodes", "reduce_every"});
        detail::get_if(b, "depth", n.depth);
        detail::get_if(b, "channels", n.channels);
        detail::get_if(b, "nodes", n.nodes);
        detail::get_if(b, "reduce_every", n.reduce_every);
    };
    net_block("net_search", c.net_search);
    net_block("net_final", c.net_final);
    if (j.contains("search")) {
        const auto& s = j.at("search");
        detail::check_keys(s, "search",
                           {"epochs", "batch", "w_lr", "w_momentum", "w_decay", "alpha_lr", "eps",
                            "order", "hvp_r", "split"});
        detail::get_if(s, "epochs", c.search.epochs);
        detail::get_if(s, "batch", c.search.batch);
        detail::get_if(s, "w_lr", c.search.w_lr);
        detail::get_if(s, "w_momentum", c.search.w_momentum);
        detail::get_if(s, "w_decay", c.search.w_decay);
        detail::get_if(s, "alpha_lr", c.search.alpha_lr);
        detail::get_if(s, "eps", c.search.eps);
        detail::get_if(s, "hvp_r", c.search.hvp_r);
        detail::get_if(s, "split", c.search.split);
        if (s.contains("order")) {
            const std::string order = s.at("order").get<std::string>();
            if (order != "first" && order != "second")
                throw ConfigError("config: search.order must be 'first' or 'second'");
            c.search.second_order = order == "second";
        }
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        detail::check_keys(t, "train",
                           {"epochs", "batch", "lr", "momentum", "w_decay", "checkpoint_every"});
        detail::get_if(t, "epochs", c.train.epochs);
        detail::get_if(t, "batch", c.train.batch);
        detail::get_if(t, "lr", c.train.lr);
        detail::get_if(t, "momentum", c.train.momentum);
        detail::get_if(t, "w_decay", c.train.weight_decay);
        detail::get_if(t, "checkpoint_every", c.train.checkpoint_every);
    }
    return c;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read config '" + path + "'");
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return parse_run_config(text, path);
}

inline std::string dump_run_config(const RunConfig& c) {
    detail::json j;
    j["seed"] = c.seed;
    j["data"] = {{"dir", c.data.dir},
                 {"classes", c.data.classes},
                 {"clips_per_class", c.data.clips_per_class},
                 {"frames", c.data.frames},
                 {"height", c.data.height},
                 {"width", c.data.width},
                 {"split", c.data.split},
                 {"mode", c.data.mode}};
    if (!c.data.motion.empty()) {
        detail::json mv = detail::json::array();
        for (const auto& m : c.data.motion) mv.push_back({m[0], m[1]});
        j["data"]["motion"] = mv;
    }
    j["sampling"] = {{"segments", c.sampling.segments},
                     {"per_segment", c.sampling.per_segment},
                     {"crop", c.sampling.crop},
                     {"flip", c.sampling.flip}};
    const auto net_json = [](const RunConfig::Net& n) {
        return detail::json{{"depth", n.depth},
                            {"channels", n.channels},
                            {"nodes", n.nodes},
                            {"reduce_every", n.reduce_every}};
    };
    j["net_search"] = net_json(c.net_search);
    j["net_final"] = net_json(c.net_final);
    j["search"] = {{"epochs", c.search.epochs},
                   {"batch", c.search.batch},
                   {"w_lr", c.search.w_lr},
                   {"w_momentum", c.search.w_momentum},
                   {"w_decay", c.search.w_decay},
                   {"alpha_lr", c.search.alpha_lr},
                   {"eps", c.search.eps},
                   {"order", c.search.second_order ? "second" : "first"},
                   {"hvp_r", c.search.hvp_r},
                   {"split", c.search.split}};
    j["train"] = {{"epochs", c.train.epochs},
                  {"batch", c.train.batch},
                  {"lr", c.train.lr},
                  {"momentum", c.train.momentum},
                  {"w_decay", c.train.weight_decay},
                  {"checkpoint_every", c.train.checkpoint_every}};
    return j.dump(2) + "\n";
}

inline CorpusSpec corpus_spec(const RunConfig& c) {
    CorpusSpec cs;
    cs.classes = c.data.classes;
    cs.clips_per_class = c.data.clips_per_class;
    cs.frames = c.data.frames;
    cs.height = c.data.height;
    cs.width = c.data.width;
    cs.split = c.data.split;
    cs.motion = c.data.motion;
    cs.appearance_classes = c.data.mode == "appearance";
    cs.seed = c.seed;
    return cs;
}

inline NetworkSpec net_spec(const RunConfig::Net& n, int classes, NetMode mode) {
    NetworkSpec s;
    s.depth = n.depth;
    s.init_channels = n.channels;
    s.n = n.nodes;
    s.classes = classes;
    s.reduce_every = n.reduce_every;
    s.mode = mode;
    return s;
}

}  // namespace stnas
