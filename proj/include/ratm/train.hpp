#pragma once

#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "checkpoint.hpp"
#include "datasets.hpp"
#include "optimizer.hpp"
#include "tracker.hpp"

namespace ratm {

// ---- metrics log -------------------------------------------------------------

struct MetricRow {
    std::uint64_t step = 0;
    std::uint64_t epoch = 0;
    std::string split;
    std::string metric;
    double value = 0.0;
};

inline std::string format_metric_value(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_metrics_csv: cannot open " + path);
    out << "step,epoch,split,metric,value\n";
    for (const auto& r : rows)
        out << r.step << ',' << r.epoch << ',' << r.split << ',' << r.metric << ','
            << format_metric_value(r.value) << '\n';
}

// ---- model param plumbing ------------------------------------------------------

inline ParamMap cell_to_params(const IRNNCell& c) {
    return {{"w_in", c.w_in}, {"w_rec", c.w_rec}, {"w_out", c.w_out}, {"b_y", c.b_y}};
}

inline IRNNCell params_to_cell(const ParamMap& p) {
    return {p.at("w_in"), p.at("w_rec"), p.at("w_out"), p.at("b_y")};
}

// ---- evaluation -----------------------------------------------------------------

enum class FramesMode { Last, All };

inline std::vector<BBox> track_sequence(const RATMConfig& cfg, const IRNNCell& cell,
                                        const VideoSequence& seq, std::size_t T = 0) {
    Graph g;
    TrackOutput out = ratm_forward(g, cfg, cell, seq, T ? T : seq.length(),
                                   /*trainable=*/false);
    return predicted_boxes(g, cfg, out);
}

// Mean IoU between predicted windows and ground truth over frames
// [frame_begin, frame_end) of every sequence; frame_end 0 means full length.
inline double evaluate_range(const RATMConfig& cfg, const IRNNCell& cell,
                             const SequenceProvider& provider, std::size_t count,
                             std::size_t frame_begin, std::size_t frame_end,
                             std::size_t threads = 1) {
    if (count == 0) return 0.0;
    std::vector<double> per_seq(count, 0.0);
    auto work = [&](std::size_t i) {
        VideoSequence s = provider(i);
        std::size_t end = frame_end ? std::min(frame_end, s.length()) : s.length();
        std::vector<BBox> pred = track_sequence(cfg, cell, s, end);
        double acc = 0.0;
        for (std::size_t t = frame_begin; t < end; ++t) acc += iou(pred[t], s.gt_boxes[t]);
        per_seq[i] = acc / static_cast<double>(end - frame_begin);
    };
    if (threads <= 1) {
        for (std::size_t i = 0; i < count; ++i) work(i);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < threads; ++w)
            pool.emplace_back([&, w] {
                for (std::size_t i = w; i < count; i += threads) work(i);
            });
        for (auto& t : pool) t.join();
    }
    double total = 0.0;
    for (double v : per_seq) total += v;  // fixed order, thread-count independent
    return total / static_cast<double>(count);
}

inline double evaluate_range(const RATMConfig& cfg, const IRNNCell& cell,
                             const std::vector<VideoSequence>& seqs, std::size_t frame_begin,
                             std::size_t frame_end, std::size_t threads = 1) {
    return evaluate_range(cfg, cell, provider_of(seqs), seqs.size(), frame_begin, frame_end,
                          threads);
}

inline double evaluate(const RATMConfig& cfg, const IRNNCell& cell,
                       const SequenceProvider& provider, std::size_t count, FramesMode mode,
                       std::size_t threads = 1) {
    if (count == 0) return 0.0;
    std::size_t T = provider(0).length();
    return mode == FramesMode::Last
               ? evaluate_range(cfg, cell, provider, count, T - 1, T, threads)
               : evaluate_range(cfg, cell, provider, count, 0, T, threads);
}

inline double evaluate(const RATMConfig& cfg, const IRNNCell& cell,
                       const std::vector<VideoSequence>& seqs, FramesMode mode,
                       std::size_t threads = 1) {
    return evaluate(cfg, cell, provider_of(seqs), seqs.size(), mode, threads);
}

// ---- training loop ---------------------------------------------------------------

struct TrainConfig {
    std::size_t batch_size = 16;
    double learning_rate = 0.01;
    double momentum = 0.0;
    double clip_threshold = 1.0;
    std::size_t epochs = 10;
    std::size_t max_steps = 0;  // 0 = no cap; stops mid-epoch when reached
    std::uint64_t seed = 0;
    bool curriculum = false;
    std::size_t curriculum_start = 5;
    std::size_t curriculum_interval = 160;  // steps between +1 frame
    // > 0: each step trains on a random length in [random_truncation_min, L]
    // where L is the current curriculum length (or the full train_len). Keeps
    // a last-frame penalty from specializing to one fixed horizon.
    std::size_t random_truncation_min = 0;
    std::size_t checkpoint_every = 1;       // epochs
    std::size_t eval_cap = 200;             // validation sequences per epoch
    std::size_t threads = 1;
    std::string out_dir;  // empty = no checkpoints written
};

struct TrainResult {
    IRNNCell cell;
    std::vector<MetricRow> metrics;
    std::uint64_t steps_done = 0;
};

inline std::size_t curriculum_length(const TrainConfig& tc, std::uint64_t step,
                                     std::size_t full_len) {
    std::size_t len = full_len;
    if (tc.curriculum)
        len = std::min(full_len, tc.curriculum_start + static_cast<std::size_t>(
                                                           step / tc.curriculum_interval));
    if (tc.random_truncation_min > 0 && tc.random_truncation_min < len) {
        Rng rng(derive_seed(tc.seed, 0x7A11, step));
        len = tc.random_truncation_min + rng.index(len - tc.random_truncation_min + 1);
    }
    return len;
}

inline TrainResult train(const RATMConfig& cfg, IRNNCell cell,
                         const SequenceProvider& train_set, std::size_t train_count,
                         const SequenceProvider& val_set, std::size_t val_count,
                         const TrainConfig& tc, const ConvNet* net = nullptr,
                         const std::string& resume_from = "") {
    if (train_count == 0) throw std::runtime_error("train: empty training set");
    ParamMap params = cell_to_params(cell);
    OptimizerState opt;
    opt.learning_rate = tc.learning_rate;
    opt.momentum = tc.momentum;
    opt.clip_threshold = tc.clip_threshold;
    std::uint64_t start_epoch = 0;

    if (!resume_from.empty())
        unpack_training_state(load_checkpoint(resume_from), params, opt, start_epoch);

    TrainResult res;
    std::vector<std::size_t> order(train_count);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    bool done = false;
    for (std::uint64_t epoch = start_epoch; epoch < tc.epochs && !done; ++epoch) {
        // reset before shuffling so the permutation depends only on (seed,
        // epoch) and a resumed run replays the same batches
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng shuffle_rng(derive_seed(tc.seed, 0xE10c, epoch));
        shuffle_rng.shuffle(order);
        for (std::size_t start = 0; start + tc.batch_size <= order.size();
             start += tc.batch_size) {
            IRNNCell cur = params_to_cell(params);
            std::size_t T = curriculum_length(tc, opt.step, cfg.train_len);
            std::vector<ParamMap> member_grads(tc.batch_size);
            std::vector<double> member_loss(tc.batch_size, 0.0);
            auto member = [&](std::size_t k) {
                VideoSequence seq = train_set(order[start + k]);
                Graph g;
                TrackOutput out = ratm_forward(g, cfg, cur, seq, std::min(T, seq.length()),
                                               /*trainable=*/true);
                ratm_loss(g, cfg, out, seq, net);
                member_loss[k] = g.value(out.loss).scalar();
                g.backward(out.loss);
                ParamMap& gm = member_grads[k];
                gm["w_in"] = g.grad(out.cell_nodes.w_in);
                gm["w_rec"] = g.grad(out.cell_nodes.w_rec);
                gm["w_out"] = g.grad(out.cell_nodes.w_out);
                gm["b_y"] = g.grad(out.cell_nodes.b_y);
            };
            if (tc.threads <= 1) {
                for (std::size_t k = 0; k < tc.batch_size; ++k) member(k);
            } else {
                std::vector<std::thread> pool;
                for (std::size_t w = 0; w < tc.threads; ++w)
                    pool.emplace_back([&, w] {
                        for (std::size_t k = w; k < tc.batch_size; k += tc.threads) member(k);
                    });
                for (auto& t : pool) t.join();
            }
            ParamMap grads;
            double loss = 0.0;
            for (std::size_t k = 0; k < tc.batch_size; ++k) {  // deterministic reduce order
                accumulate_grads(grads, member_grads[k], 1.0 / tc.batch_size);
                loss += member_loss[k] / tc.batch_size;
            }
            if (!std::isfinite(loss))
                throw std::runtime_error("train: non-finite loss at step " +
                                         std::to_string(opt.step) +
                                         "; last checkpoint retained");
            clip_gradients(grads, tc.clip_threshold);
            sgd_step(opt, params, grads);
            res.metrics.push_back({opt.step, epoch, "train", "loss", loss});
            if (tc.max_steps && opt.step >= tc.max_steps) {
                done = true;
                break;
            }
        }
        if (val_count > 0) {
            double v = evaluate(cfg, params_to_cell(params), val_set,
                                std::min(tc.eval_cap, val_count), FramesMode::All, tc.threads);
            res.metrics.push_back({opt.step, epoch, "val", "avg_iou", v});
        }
        if (!tc.out_dir.empty() && (epoch + 1) % tc.checkpoint_every == 0) {
            std::filesystem::create_directories(tc.out_dir);
            save_checkpoint(tc.out_dir + "/checkpoint.ratmckpt",
                            pack_training_state(params, opt, epoch + 1));
        }
    }
    res.cell = params_to_cell(params);
    res.steps_done = opt.step;
    return res;
}

inline TrainResult train(const RATMConfig& cfg, IRNNCell cell,
                         const std::vector<VideoSequence>& train_set,
                         const std::vector<VideoSequence>& val_set, const TrainConfig& tc,
                         const ConvNet* net = nullptr,
                         const std::string& resume_from = "") {
    return train(cfg, std::move(cell), provider_of(train_set), train_set.size(),
                 provider_of(val_set), val_set.size(), tc, net, resume_from);
}

}  // namespace ratm
