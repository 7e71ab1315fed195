// Command-line driver: dataset generation, CNN pretraining, tracker training,
// evaluation, rendering, and the gradient-check battery.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <ratm/config.hpp>
#include <ratm/gradsuite.hpp>
#include <ratm/io.hpp>

using json = nlohmann::json;
using namespace ratm;
namespace fs = std::filesystem;

namespace {

struct CommonOpts {
    std::string preset, config_file, out_dir, data_dir;
    std::vector<std::string> overrides;
    std::uint64_t seed = 0;
    std::size_t threads = 1;
};

Config resolve_config(const CommonOpts& o, const Config* base = nullptr) {
    Config c;
    if (base) c = *base;  // dataset manifest config; CLI options overlay it
    if (!o.preset.empty())
        for (const auto& [k, v] : preset(o.preset).kv) c.set(k, v);
    if (!o.config_file.empty())
        for (const auto& [k, v] : load_config_file(o.config_file).kv) c.set(k, v);
    for (const std::string& kv : o.overrides) {
        auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("--set expects key=value, got '" + kv + "'");
        c.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (c.kv.empty()) throw std::runtime_error("no configuration: pass --preset or --config");
    return c;
}

void add_common(CLI::App* cmd, CommonOpts& o, bool needs_out, bool needs_data) {
    cmd->add_option("--preset", o.preset, "named experiment preset");
    cmd->add_option("--config", o.config_file, "key=value config file, overlays the preset");
    cmd->add_option("--set", o.overrides, "extra key=value overrides")->take_all();
    cmd->add_option("--seed", o.seed, "run seed");
    cmd->add_option("--device-threads", o.threads, "worker threads for batch members / eval");
    auto* out = cmd->add_option("--out", o.out_dir, "output directory");
    if (needs_out) out->required();
    auto* data = cmd->add_option("--data", o.data_dir, "dataset directory from gen-data");
    if (needs_data) data->required();
}

struct Split {
    SequenceProvider provider;
    std::size_t count = 0;
};

// Lazy view of one split: sequences are regenerated from derived seeds on
// demand, so digit-video corpora never sit in memory whole. `which` is 1 for
// train, 2 for test.
Split make_split(const Config& c, std::uint64_t gen_seed, int which) {
    std::string exp = c.str("experiment");
    std::size_t count = c.uint(which == 1 ? "dataset.train_count" : "dataset.test_count");
    std::uint64_t base = derive_seed(gen_seed, static_cast<std::uint64_t>(which));
    if (exp == "balls") {
        BallConfig bc;
        bc.frames = c.uint("dataset.frames");
        bc.size = c.uint("dataset.size");
        return {[=](std::size_t i) {
                    return gen_bouncing_ball_sequence(derive_seed(base, 0xBA11u, i), bc);
                },
                count};
    }
    if (exp == "mnist-single" || exp == "mnist-multi") {
        auto imgs = std::make_shared<Tensor>(load_idx(c.str("dataset.images")));
        auto labels = std::make_shared<Tensor>(load_idx(c.str("dataset.labels")));
        DigitWalkConfig dc;
        dc.canvas = c.uint("dataset.canvas");
        dc.n_digits = c.uint("dataset.n_digits");
        dc.frames = which == 1 ? c.uint("dataset.frames")
                               : c.uint("dataset.test_frames", c.uint("dataset.frames"));
        return {[=](std::size_t i) {
                    return gen_moving_digits_sequence(derive_seed(base, 0xD161u, i), *imgs,
                                                      *labels, dc);
                },
                count};
    }
    throw std::runtime_error("unknown experiment '" + exp + "'");
}

void write_manifest(const std::string& dir, const Config& c, std::uint64_t seed) {
    json m;
    m["seed"] = seed;
    for (const auto& [k, v] : c.kv) m["config"][k] = v;
    for (const char* split : {"train", "test"}) {
        std::string file = std::string(split) + ".ratmds";
        m["files"][file]["fnv1a64"] = hash_hex(hash_file(dir + "/" + file));
    }
    std::ofstream(dir + "/manifest.json") << m.dump(2) << "\n";
}

// Verifies dataset files against the manifest written by gen-data, then
// returns the generation config and seed recorded there.
std::pair<Config, std::uint64_t> check_manifest(const std::string& dir) {
    std::ifstream in(dir + "/manifest.json");
    if (!in) throw std::runtime_error("missing manifest.json in " + dir);
    json m = json::parse(in);
    for (auto& [file, meta] : m["files"].items()) {
        std::string actual = hash_hex(hash_file(dir + "/" + file));
        std::string expect = meta["fnv1a64"].get<std::string>();
        if (actual != expect)
            throw std::runtime_error("dataset hash mismatch for " + dir + "/" + file +
                                     ": manifest " + expect + ", file " + actual +
                                     " (refusing to use it)");
    }
    Config c;
    for (auto& [k, v] : m["config"].items()) c.set(k, v.get<std::string>());
    return {c, m["seed"].get<std::uint64_t>()};
}

ConvNet load_convnet(const std::string& path) {
    ConvNet net = init_convnet(0);
    ParamMap saved = load_checkpoint(path);
    for (auto& [name, t] : net.params) {
        auto it = saved.find(name);
        if (it == saved.end())
            throw std::runtime_error("cnn checkpoint missing '" + name + "'");
        t = it->second;
    }
    return net;
}

IRNNCell make_cell(const Config& c, const RATMConfig& rc, std::uint64_t seed) {
    std::size_t D = rc.glimpse.grid_cols * rc.glimpse.grid_rows;
    IRNNCell cell = init_irnn(D, rc.hidden, derive_seed(seed, 0xCE11));
    seed_full_frame_bias(cell, rc);
    (void)c;
    return cell;
}

int cmd_gen_data(const CommonOpts& o) {
    Config c = resolve_config(o);
    fs::create_directories(o.out_dir);
    Split train = make_split(c, o.seed, 1), test = make_split(c, o.seed, 2);
    save_dataset(o.out_dir + "/train.ratmds", train.provider, train.count);
    save_dataset(o.out_dir + "/test.ratmds", test.provider, test.count);
    write_manifest(o.out_dir, c, o.seed);
    std::printf("wrote %zu train / %zu test sequences to %s\n", train.count, test.count,
                o.out_dir.c_str());
    return 0;
}

int cmd_pretrain(const CommonOpts& o, const std::string& images, const std::string& labels,
                 const std::string& eval_images, const std::string& eval_labels,
                 std::size_t epochs) {
    Tensor X = load_idx(images), y = load_idx(labels);
    Tensor Xe = load_idx(eval_images.empty() ? images : eval_images);
    Tensor ye = load_idx(eval_labels.empty() ? labels : eval_labels);
    ConvNet net = init_convnet(derive_seed(o.seed, 0xC44));
    PretrainConfig pc;
    pc.seed = o.seed;
    if (epochs) pc.epochs = epochs;
    double acc = pretrain_cnn(net, X, y, Xe, ye, pc);
    fs::create_directories(fs::path(o.out_dir).parent_path().empty()
                               ? "."
                               : fs::path(o.out_dir).parent_path().string());
    save_checkpoint(o.out_dir, net.params);
    std::printf("accuracy=%.4f\n", acc);
    return 0;
}

int cmd_train(const CommonOpts& o, const std::string& cnn_path, const std::string& resume,
              bool dry_run) {
    auto [data_cfg, data_seed] = check_manifest(o.data_dir);
    Config c = resolve_config(o, &data_cfg);
    RATMConfig rc = ratm_config_from(c);
    TrainConfig tc = train_config_from(c, o.seed);
    tc.threads = o.threads;
    tc.out_dir = o.out_dir;

    if (dry_run) {
        std::printf("experiment=%s frames=%zu glimpse=%zux%zu hidden=%zu batch=%zu lr=%g "
                    "clip=%g epochs=%zu max_steps=%zu\n",
                    c.str("experiment").c_str(), rc.train_len, rc.glimpse.grid_rows,
                    rc.glimpse.grid_cols, rc.hidden, tc.batch_size, tc.learning_rate,
                    tc.clip_threshold, tc.epochs, tc.max_steps);
        return 0;
    }

    Split train_set = make_split(data_cfg, data_seed, 1);
    Split val_set = make_split(data_cfg, data_seed, 2);

    ConvNet net;
    const ConvNet* net_ptr = nullptr;
    if (rc.class_weight > 0.0 || rc.feat_weight > 0.0) {
        if (cnn_path.empty())
            throw std::runtime_error("class/feature term configured: pass --cnn <checkpoint>");
        net = load_convnet(cnn_path);
        net_ptr = &net;
    }

    fs::create_directories(o.out_dir);
    TrainResult res = train(rc, make_cell(c, rc, o.seed), train_set.provider, train_set.count,
                            val_set.provider, val_set.count, tc, net_ptr, resume);
    write_metrics_csv(o.out_dir + "/metrics.csv", res.metrics);

    json m;
    m["seed"] = o.seed;
    m["steps"] = res.steps_done;
    for (const auto& [k, v] : c.kv) m["config"][k] = v;
    m["data"]["train.ratmds"] = hash_hex(hash_file(o.data_dir + "/train.ratmds"));
    m["data"]["test.ratmds"] = hash_hex(hash_file(o.data_dir + "/test.ratmds"));
    std::ofstream(o.out_dir + "/manifest.json") << m.dump(2) << "\n";
    std::printf("done: %llu steps, checkpoint in %s\n",
                static_cast<unsigned long long>(res.steps_done), o.out_dir.c_str());
    return 0;
}

IRNNCell cell_from_checkpoint(const Config& c, const RATMConfig& rc, const std::string& path) {
    IRNNCell cell = make_cell(c, rc, 0);
    ParamMap params = cell_to_params(cell);
    OptimizerState opt;
    std::uint64_t epoch = 0;
    unpack_training_state(load_checkpoint(path), params, opt, epoch);
    return params_to_cell(params);
}

int cmd_eval(const CommonOpts& o, const std::string& ckpt, const std::string& frames,
             std::size_t frame_begin, std::size_t frame_end) {
    auto [data_cfg, data_seed] = check_manifest(o.data_dir);
    Config c = resolve_config(o, &data_cfg);
    RATMConfig rc = ratm_config_from(c);
    IRNNCell cell = cell_from_checkpoint(c, rc, ckpt);
    Split test = make_split(data_cfg, data_seed, 2);
    double v;
    if (frame_end > frame_begin)
        v = evaluate_range(rc, cell, test.provider, test.count, frame_begin, frame_end,
                           o.threads);
    else
        v = evaluate(rc, cell, test.provider, test.count,
                     frames == "last" ? FramesMode::Last : FramesMode::All, o.threads);
    std::printf("avg_iou=%.6f\n", v);
    return 0;
}

int cmd_render(const CommonOpts& o, const std::string& ckpt, std::size_t index) {
    auto [data_cfg, data_seed] = check_manifest(o.data_dir);
    Config c = resolve_config(o, &data_cfg);
    RATMConfig rc = ratm_config_from(c);
    IRNNCell cell = cell_from_checkpoint(c, rc, ckpt);
    Split test = make_split(data_cfg, data_seed, 2);
    if (index >= test.count) throw std::runtime_error("--index past end of test set");
    VideoSequence seq = test.provider(index);
    std::vector<BBox> pred = track_sequence(rc, cell, seq);

    fs::create_directories(o.out_dir);
    std::ofstream boxes(o.out_dir + "/boxes.jsonl");
    std::size_t px = seq.rows() * seq.cols();
    for (std::size_t t = 0; t < seq.length(); ++t) {
        Tensor frame({seq.rows(), seq.cols()});
        std::copy(seq.frames.data.begin() + t * px, seq.frames.data.begin() + (t + 1) * px,
                  frame.data.begin());
        burn_box(frame, pred[t]);
        char name[32];
        std::snprintf(name, sizeof(name), "/frame_%04zu.pgm", t);
        write_pgm(o.out_dir + name, frame);
        const BBox& gt = seq.gt_boxes[t];
        json row = {{"frame", t},
                    {"pred", {pred[t].x_min, pred[t].y_min, pred[t].x_max, pred[t].y_max}},
                    {"gt", {gt.x_min, gt.y_min, gt.x_max, gt.y_max}},
                    {"iou", iou(pred[t], gt)}};
        boxes << row.dump() << "\n";
    }
    std::printf("wrote %zu frames to %s\n", seq.length(), o.out_dir.c_str());
    return 0;
}

int cmd_gradcheck() {
    std::vector<GradCheckCase> results = run_gradcheck_suite();
    bool ok = true;
    for (const GradCheckCase& r : results) {
        std::printf("%-20s max_rel_err=%.3e tol=%.0e %s (%.2fs)\n", r.name.c_str(),
                    r.max_rel_error, r.tolerance, r.passed ? "ok" : "FAIL", r.seconds);
        ok = ok && r.passed;
    }
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"attentive tracking: data generation, training, evaluation"};
    app.require_subcommand(1);

    CommonOpts gen_o, pre_o, train_o, eval_o, render_o;

    auto* gen = app.add_subcommand("gen-data", "generate and save train/test video datasets");
    add_common(gen, gen_o, true, false);

    auto* pre = app.add_subcommand("pretrain-cnn", "pretrain the digit classifier on IDX data");
    std::string pre_images, pre_labels, pre_eval_images, pre_eval_labels;
    std::size_t pre_epochs = 0;
    pre->add_option("--images", pre_images, "IDX image file")->required();
    pre->add_option("--labels", pre_labels, "IDX label file")->required();
    pre->add_option("--eval-images", pre_eval_images, "held-out IDX images");
    pre->add_option("--eval-labels", pre_eval_labels, "held-out IDX labels");
    pre->add_option("--epochs", pre_epochs, "training epochs");
    add_common(pre, pre_o, true, false);

    auto* tr = app.add_subcommand("train", "train the tracker");
    std::string tr_cnn, tr_resume;
    bool tr_dry = false;
    tr->add_option("--cnn", tr_cnn, "pretrained classifier checkpoint");
    tr->add_option("--resume", tr_resume, "resume from a training checkpoint");
    tr->add_flag("--dry-run", tr_dry, "print the resolved plan and exit");
    add_common(tr, train_o, true, true);

    auto* ev = app.add_subcommand("eval", "report mean IoU on the test split");
    std::string ev_ckpt, ev_frames = "all";
    std::size_t ev_begin = 0, ev_end = 0;
    ev->add_option("--checkpoint", ev_ckpt, "training checkpoint")->required();
    ev->add_option("--frames", ev_frames, "all | last");
    ev->add_option("--frame-begin", ev_begin, "first frame of a custom range");
    ev->add_option("--frame-end", ev_end, "one past the last frame of a custom range");
    add_common(ev, eval_o, false, true);

    auto* re = app.add_subcommand("render", "write tracked frames as PGM plus a box log");
    std::string re_ckpt;
    std::size_t re_index = 0;
    re->add_option("--checkpoint", re_ckpt, "training checkpoint")->required();
    re->add_option("--index", re_index, "test sequence index");
    add_common(re, render_o, true, true);

    auto* gc = app.add_subcommand("gradcheck", "run the finite-difference battery");
    (void)gc;

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(gen_o);
        if (pre->parsed())
            return cmd_pretrain(pre_o, pre_images, pre_labels, pre_eval_images, pre_eval_labels,
                                pre_epochs);
        if (tr->parsed()) return cmd_train(train_o, tr_cnn, tr_resume, tr_dry);
        if (ev->parsed()) return cmd_eval(eval_o, ev_ckpt, ev_frames, ev_begin, ev_end);
        if (re->parsed()) return cmd_render(render_o, re_ckpt, re_index);
        if (gc->parsed()) return cmd_gradcheck();
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
