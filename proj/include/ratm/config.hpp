#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "tracker.hpp"
#include "train.hpp"

namespace ratm {

// Flat key = value experiment configuration. Presets provide a complete map;
// a --config file and command-line flags overlay individual keys.
struct Config {
    std::map<std::string, std::string> kv;

    bool has(const std::string& k) const { return kv.count(k) > 0; }
    void set(const std::string& k, const std::string& v) { kv[k] = v; }

    std::string str(const std::string& k) const {
        auto it = kv.find(k);
        if (it == kv.end()) throw std::runtime_error("config: missing key '" + k + "'");
        return it->second;
    }
    std::string str(const std::string& k, const std::string& dflt) const {
        auto it = kv.find(k);
        return it == kv.end() ? dflt : it->second;
    }
    double real(const std::string& k) const { return std::stod(str(k)); }
    double real(const std::string& k, double dflt) const {
        return has(k) ? std::stod(str(k)) : dflt;
    }
    std::size_t uint(const std::string& k) const {
        return static_cast<std::size_t>(std::stoull(str(k)));
    }
    std::size_t uint(const std::string& k, std::size_t dflt) const {
        return has(k) ? static_cast<std::size_t>(std::stoull(str(k))) : dflt;
    }
};

inline Config load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    Config cfg;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto trim = [](std::string s) {
            auto b = s.find_first_not_of(" \t\r");
            auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        std::string t = trim(line);
        if (t.empty()) continue;
        std::size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config: bad line " + std::to_string(lineno) + " in " +
                                     path);
        cfg.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    return cfg;
}

// The paper's three synthetic experiments at paper scale and desk scale.
inline Config preset(const std::string& name) {
    Config c;
    auto balls_common = [&] {
        c.set("experiment", "balls");
        c.set("dataset.frames", "32");
        c.set("dataset.size", "20");
        c.set("model.hidden", "64");
        c.set("model.glimpse", "5");
        c.set("init.policy", "random");
        c.set("loss.pixel_weight", "1");
        c.set("train.batch", "16");
        c.set("train.lr", "0.01");
        c.set("train.momentum", "0");
        c.set("train.clip", "1");
    };
    auto mnist_common = [&] {
        c.set("dataset.frames", "10");
        c.set("dataset.test_frames", "30");
        c.set("dataset.canvas", "100");
        c.set("model.hidden", "100");
        c.set("model.glimpse", "28");
        c.set("loss.class_weight", "1");
        c.set("loss.loc_weight", "1");
        c.set("loss.placement", "all");
        c.set("train.batch", "32");
        c.set("train.lr", "0.001");
        c.set("train.momentum", "0.9");
        c.set("train.clip", "1");
    };
    if (name == "balls-desk" || name == "balls-allframes-desk" || name == "balls-paper" ||
        name == "balls-allframes-paper") {
        balls_common();
        bool desk = name.find("desk") != std::string::npos;
        bool allframes = name.find("allframes") != std::string::npos;
        c.set("loss.placement", allframes ? "all" : "last");
        c.set("train.curriculum", "1");
        if (!allframes) c.set("train.random_truncation_min", "5");
        c.set("dataset.train_count", desk ? "5000" : "100000");
        c.set("dataset.test_count", desk ? "1000" : "10000");
        c.set("train.epochs", desk ? "30" : "200");
    } else if (name == "mnist-single-desk" || name == "mnist-single-paper" ||
               name == "mnist-multi-desk" || name == "mnist-multi-paper") {
        mnist_common();
        bool desk = name.find("desk") != std::string::npos;
        bool multi = name.find("multi") != std::string::npos;
        c.set("experiment", multi ? "mnist-multi" : "mnist-single");
        c.set("dataset.n_digits", multi ? "2" : "1");
        c.set("init.policy", multi ? "centered" : "full-frame");
        c.set("dataset.train_count", desk ? "10000" : "100000");
        c.set("dataset.test_count", desk ? (multi ? "500" : "1000") : (multi ? "5000" : "10000"));
        c.set("train.epochs", "1000000");  // capped by max_steps
        c.set("train.max_steps", desk ? "8000" : "32000");
    } else {
        throw std::runtime_error("unknown preset '" + name + "'");
    }
    return c;
}

inline GlimpseSpec glimpse_spec_from(const Config& c) {
    GlimpseSpec sp;
    sp.grid_cols = sp.grid_rows = c.uint("model.glimpse");
    std::size_t img = c.has("dataset.size") ? c.uint("dataset.size") : c.uint("dataset.canvas");
    sp.img_cols = sp.img_rows = img;
    return sp;
}

inline RATMConfig ratm_config_from(const Config& c) {
    RATMConfig r;
    r.glimpse = glimpse_spec_from(c);
    r.hidden = c.uint("model.hidden");
    std::string init = c.str("init.policy");
    if (init == "random")
        r.init = InitPolicy::RandomGlimpse;
    else if (init == "full-frame")
        r.init = InitPolicy::FullFrame;
    else if (init == "centered")
        r.init = InitPolicy::CenteredOnTarget;
    else if (init == "gt-box")
        r.init = InitPolicy::GroundTruthBox;
    else
        throw std::runtime_error("config: unknown init.policy '" + init + "'");
    r.placement = c.str("loss.placement", "last") == "all" ? LossPlacement::AllFrames
                                                           : LossPlacement::LastFrame;
    r.pixel_weight = c.real("loss.pixel_weight", 0.0);
    r.class_weight = c.real("loss.class_weight", 0.0);
    r.loc_weight = c.real("loss.loc_weight", 0.0);
    r.feat_weight = c.real("loss.feat_weight", 0.0);
    r.size_weight = c.real("loss.size_weight", 0.0);
    r.decay_weight = c.real("loss.decay_weight", 0.0);
    r.train_len = c.uint("dataset.frames");
    r.bbox_scale = c.real("model.bbox_scale", 1.0);
    if (r.pixel_weight > 0.0)
        r.target_patch = ball_target_patch(c.uint("model.glimpse"));
    return r;
}

inline TrainConfig train_config_from(const Config& c, std::uint64_t seed) {
    TrainConfig t;
    t.batch_size = c.uint("train.batch");
    t.learning_rate = c.real("train.lr");
    t.momentum = c.real("train.momentum", 0.0);
    t.clip_threshold = c.real("train.clip");
    t.epochs = c.uint("train.epochs");
    t.max_steps = c.uint("train.max_steps", 0);
    t.seed = seed;
    t.curriculum = c.uint("train.curriculum", 0) != 0;
    t.curriculum_start = c.uint("train.curriculum_start", 5);
    t.curriculum_interval = c.uint("train.curriculum_interval", 160);
    t.random_truncation_min = c.uint("train.random_truncation_min", 0);
    t.checkpoint_every = c.uint("train.checkpoint_every", 1);
    t.eval_cap = c.uint("train.eval_cap", 200);
    return t;
}

}  // namespace ratm
