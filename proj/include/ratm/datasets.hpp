#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "bbox.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace ratm {

struct VideoSequence {
    Tensor frames;                    // (T, rows, cols), values in [0,1]
    std::vector<BBox> gt_boxes;       // per frame, target object
    std::vector<BBox> distractor_boxes;  // per frame, multi-digit only
    int label = -1;                   // digit class of the target, -1 if none
    std::uint64_t seed = 0;

    std::size_t length() const { return frames.shape.at(0); }
    std::size_t rows() const { return frames.shape.at(1); }
    std::size_t cols() const { return frames.shape.at(2); }
};

// Datasets can be served lazily (regenerated from per-sequence seeds) so large
// video corpora never have to sit in memory at once.
using SequenceProvider = std::function<VideoSequence(std::size_t)>;

inline SequenceProvider provider_of(const std::vector<VideoSequence>& seqs) {
    return [&seqs](std::size_t i) { return seqs[i]; };
}

// ---- bouncing ball ---------------------------------------------------------

struct BallConfig {
    std::size_t frames = 32;
    std::size_t size = 20;
    double radius = 2.0;
    double min_speed = 0.5, max_speed = 2.0;
};

namespace detail {

// Coverage of the unit pixel at (px,py) by the disc, 4x4 supersampling.
// Pixel index i covers coordinates [i-0.5, i+0.5) in pixel-center units.
inline double disc_coverage(double px, double py, double cx, double cy, double r) {
    int hits = 0;
    for (int sy = 0; sy < 4; ++sy)
        for (int sx = 0; sx < 4; ++sx) {
            double x = px - 0.5 + (sx + 0.5) / 4.0;
            double y = py - 0.5 + (sy + 0.5) / 4.0;
            double dx = x - cx, dy = y - cy;
            if (dx * dx + dy * dy <= r * r) ++hits;
        }
    return hits / 16.0;
}

inline void reflect(double& pos, double& vel, double lo, double hi) {
    // elastic bounce; a step never overshoots by more than the interval
    if (pos < lo) {
        pos = 2 * lo - pos;
        vel = -vel;
    } else if (pos > hi) {
        pos = 2 * hi - pos;
        vel = -vel;
    }
}

}  // namespace detail

inline Tensor render_ball_frame(std::size_t size, double cx, double cy, double r) {
    Tensor frame({size, size});
    // only touch pixels near the disc
    long x0 = std::max(0L, static_cast<long>(cx - r - 1));
    long x1 = std::min(static_cast<long>(size) - 1, static_cast<long>(cx + r + 1));
    long y0 = std::max(0L, static_cast<long>(cy - r - 1));
    long y1 = std::min(static_cast<long>(size) - 1, static_cast<long>(cy + r + 1));
    for (long y = y0; y <= y1; ++y)
        for (long x = x0; x <= x1; ++x)
            frame.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) =
                detail::disc_coverage(static_cast<double>(x), static_cast<double>(y), cx, cy, r);
    return frame;
}

// The ground-truth patch for the pixel objective: the ball centered in an SxS crop.
inline Tensor ball_target_patch(std::size_t patch_size, double radius = 2.0) {
    double c = (static_cast<double>(patch_size) - 1.0) / 2.0;
    return render_ball_frame(patch_size, c, c, radius);
}

inline VideoSequence gen_bouncing_ball_sequence(std::uint64_t seed, const BallConfig& cfg) {
    Rng rng(seed);
    double lo = cfg.radius, hi = static_cast<double>(cfg.size) - 1.0 - cfg.radius;
    double cx = rng.uniform(lo, hi), cy = rng.uniform(lo, hi);
    double speed = rng.uniform(cfg.min_speed, cfg.max_speed);
    double angle = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    double vx = speed * std::cos(angle), vy = speed * std::sin(angle);

    VideoSequence seq;
    seq.seed = seed;
    seq.frames = Tensor({cfg.frames, cfg.size, cfg.size});
    for (std::size_t t = 0; t < cfg.frames; ++t) {
        Tensor f = render_ball_frame(cfg.size, cx, cy, cfg.radius);
        std::copy(f.data.begin(), f.data.end(),
                  seq.frames.data.begin() + t * cfg.size * cfg.size);
        seq.gt_boxes.push_back({cx - cfg.radius, cy - cfg.radius, cx + cfg.radius,
                                cy + cfg.radius});
        cx += vx;
        cy += vy;
        detail::reflect(cx, vx, lo, hi);
        detail::reflect(cy, vy, lo, hi);
    }
    return seq;
}

inline std::vector<VideoSequence> gen_bouncing_ball(std::uint64_t seed, std::size_t count,
                                                    const BallConfig& cfg = {}) {
    std::vector<VideoSequence> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i)
        out.push_back(gen_bouncing_ball_sequence(derive_seed(seed, 0xBA11u, i), cfg));
    return out;
}

// ---- moving digits ---------------------------------------------------------

struct DigitWalkConfig {
    std::size_t frames = 10;
    std::size_t canvas = 100;
    std::size_t digit_size = 28;
    std::size_t n_digits = 1;
    double momentum = 0.9;     // velocity carry-over per frame
    double noise_scale = 0.5;  // px/frame std of the velocity kicks
    double init_speed = 1.5;
};

namespace detail {

struct Walk {
    double x, y, vx, vy;
};

inline Walk init_walk(Rng& rng, double lo, double hi, double speed) {
    double angle = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    return {rng.uniform(lo, hi), rng.uniform(lo, hi), speed * std::cos(angle),
            speed * std::sin(angle)};
}

inline void step_walk(Walk& w, Rng& rng, const DigitWalkConfig& cfg, double lo, double hi) {
    w.vx = cfg.momentum * w.vx + cfg.noise_scale * rng.normal();
    w.vy = cfg.momentum * w.vy + cfg.noise_scale * rng.normal();
    w.x += w.vx;
    w.y += w.vy;
    reflect(w.x, w.vx, lo, hi);
    reflect(w.y, w.vy, lo, hi);
}

// paste at integer position with pixel-wise max composition
inline void paste_max(Tensor& frame, const Tensor& digit, long px, long py) {
    std::size_t D = digit.shape.at(0);
    for (std::size_t r = 0; r < D; ++r)
        for (std::size_t c = 0; c < D; ++c) {
            double& dst = frame.at(static_cast<std::size_t>(py) + r,
                                   static_cast<std::size_t>(px) + c);
            dst = std::max(dst, digit.at(r, c));
        }
}

}  // namespace detail

// digits: (n,28,28) images in [0,1]; labels: (n). The first digit drawn is the
// tracking target; a second digit (n_digits=2) acts as a distractor.
inline VideoSequence gen_moving_digits_sequence(std::uint64_t seed, const Tensor& digits,
                                                const Tensor& labels,
                                                const DigitWalkConfig& cfg) {
    if (cfg.n_digits < 1 || cfg.n_digits > 2)
        throw std::invalid_argument("gen_moving_digits: n_digits must be 1 or 2");
    std::size_t n = digits.shape.at(0), D = cfg.digit_size;
    if (digits.shape.at(1) != D || digits.shape.at(2) != D)
        throw std::invalid_argument("gen_moving_digits: digit images must be 28x28");
    Rng rng(seed);
    double lo = 0.0, hi = static_cast<double>(cfg.canvas - D);

    std::vector<Tensor> imgs;
    std::vector<int> cls;
    std::vector<detail::Walk> walks;
    for (std::size_t k = 0; k < cfg.n_digits; ++k) {
        std::size_t idx = rng.index(n);
        Tensor img({D, D});
        std::copy(digits.data.begin() + idx * D * D, digits.data.begin() + (idx + 1) * D * D,
                  img.data.begin());
        imgs.push_back(std::move(img));
        cls.push_back(static_cast<int>(labels.data[idx]));
        walks.push_back(detail::init_walk(rng, lo, hi, cfg.init_speed));
    }

    VideoSequence seq;
    seq.seed = seed;
    seq.label = cls[0];
    seq.frames = Tensor({cfg.frames, cfg.canvas, cfg.canvas});
    for (std::size_t t = 0; t < cfg.frames; ++t) {
        Tensor frame({cfg.canvas, cfg.canvas});
        for (std::size_t k = 0; k < cfg.n_digits; ++k) {
            long px = std::lround(walks[k].x), py = std::lround(walks[k].y);
            detail::paste_max(frame, imgs[k], px, py);
            BBox box{static_cast<double>(px), static_cast<double>(py),
                     static_cast<double>(px + D - 1), static_cast<double>(py + D - 1)};
            if (k == 0)
                seq.gt_boxes.push_back(box);
            else
                seq.distractor_boxes.push_back(box);
        }
        std::copy(frame.data.begin(), frame.data.end(),
                  seq.frames.data.begin() + t * cfg.canvas * cfg.canvas);
        for (auto& w : walks) detail::step_walk(w, rng, cfg, lo, hi);
    }
    return seq;
}

inline std::vector<VideoSequence> gen_moving_digits(std::uint64_t seed, std::size_t count,
                                                    const Tensor& digits, const Tensor& labels,
                                                    const DigitWalkConfig& cfg = {}) {
    std::vector<VideoSequence> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i)
        out.push_back(
            gen_moving_digits_sequence(derive_seed(seed, 0xD161u, i), digits, labels, cfg));
    return out;
}

// ---- IDX ingestion ----------------------------------------------------------

namespace detail {

inline std::uint32_t read_u32_be(std::istream& in, const std::string& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw std::runtime_error("load_idx: truncated header in " + path);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

}  // namespace detail

// Reads an IDX file: magic 0x00000803 = u8 images (n,rows,cols) scaled to [0,1],
// magic 0x00000801 = u8 labels (n).
inline Tensor load_idx(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_idx: cannot open " + path);
    std::uint32_t magic = detail::read_u32_be(in, path);
    std::size_t ndims;
    bool scale;
    if (magic == 0x00000803u) {
        ndims = 3;
        scale = true;
    } else if (magic == 0x00000801u) {
        ndims = 1;
        scale = false;
    } else {
        throw std::runtime_error("load_idx: bad magic in " + path);
    }
    std::vector<std::size_t> shape;
    for (std::size_t d = 0; d < ndims; ++d) shape.push_back(detail::read_u32_be(in, path));
    Tensor t(shape);
    std::vector<unsigned char> raw(t.numel());
    if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
        throw std::runtime_error("load_idx: truncated data in " + path);
    for (std::size_t i = 0; i < raw.size(); ++i)
        t.data[i] = scale ? raw[i] / 255.0 : static_cast<double>(raw[i]);
    return t;
}

// ---- dataset container -------------------------------------------------------
// magic "RATMDS1", then little-endian u32 fields: count, frames, rows, cols,
// has_label, has_distractor; per sequence: u64 seed, frame doubles, gt boxes
// (4 doubles each), distractor boxes if flagged, i32 label if flagged.

namespace detail {

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::string& what) {
    T v;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(T)))
        throw std::runtime_error("dataset: truncated " + what);
    return v;
}

}  // namespace detail

constexpr char kDatasetMagic[7] = {'R', 'A', 'T', 'M', 'D', 'S', '1'};

// Streaming writer: sequences are produced one at a time, so a large corpus
// never has to be materialized to be saved.
inline void save_dataset(const std::string& path, const SequenceProvider& provider,
                         std::size_t count) {
    if (count == 0) throw std::runtime_error("save_dataset: no sequences");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_dataset: cannot open " + path);
    VideoSequence first = provider(0);
    bool has_label = first.label >= 0;
    bool has_distractor = !first.distractor_boxes.empty();
    out.write(kDatasetMagic, sizeof(kDatasetMagic));
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(count));
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(first.length()));
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(first.rows()));
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(first.cols()));
    detail::write_pod<std::uint32_t>(out, has_label ? 1u : 0u);
    detail::write_pod<std::uint32_t>(out, has_distractor ? 1u : 0u);
    for (std::size_t i = 0; i < count; ++i) {
        VideoSequence s = i == 0 ? std::move(first) : provider(i);
        detail::write_pod<std::uint64_t>(out, s.seed);
        out.write(reinterpret_cast<const char*>(s.frames.data.data()),
                  static_cast<std::streamsize>(s.frames.numel() * sizeof(double)));
        auto write_boxes = [&](const std::vector<BBox>& boxes) {
            for (const BBox& b : boxes) {
                detail::write_pod(out, b.x_min);
                detail::write_pod(out, b.y_min);
                detail::write_pod(out, b.x_max);
                detail::write_pod(out, b.y_max);
            }
        };
        write_boxes(s.gt_boxes);
        if (has_distractor) write_boxes(s.distractor_boxes);
        if (has_label) detail::write_pod<std::int32_t>(out, s.label);
    }
    if (!out) throw std::runtime_error("save_dataset: write failed for " + path);
}

inline void save_dataset(const std::string& path, const std::vector<VideoSequence>& seqs) {
    save_dataset(path, provider_of(seqs), seqs.size());
}

inline std::vector<VideoSequence> load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_dataset: cannot open " + path);
    char magic[sizeof(kDatasetMagic)];
    if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kDatasetMagic, sizeof(magic)) != 0)
        throw std::runtime_error("load_dataset: bad magic in " + path);
    auto count = detail::read_pod<std::uint32_t>(in, "count");
    auto T = detail::read_pod<std::uint32_t>(in, "frames");
    auto rows = detail::read_pod<std::uint32_t>(in, "rows");
    auto cols = detail::read_pod<std::uint32_t>(in, "cols");
    auto has_label = detail::read_pod<std::uint32_t>(in, "has_label");
    auto has_distractor = detail::read_pod<std::uint32_t>(in, "has_distractor");
    std::vector<VideoSequence> seqs(count);
    for (auto& s : seqs) {
        s.seed = detail::read_pod<std::uint64_t>(in, "seed");
        s.frames = Tensor({T, rows, cols});
        if (!in.read(reinterpret_cast<char*>(s.frames.data.data()),
                     static_cast<std::streamsize>(s.frames.numel() * sizeof(double))))
            throw std::runtime_error("load_dataset: truncated frames in " + path);
        auto read_boxes = [&](std::vector<BBox>& boxes) {
            boxes.resize(T);
            for (BBox& b : boxes) {
                b.x_min = detail::read_pod<double>(in, "box");
                b.y_min = detail::read_pod<double>(in, "box");
                b.x_max = detail::read_pod<double>(in, "box");
                b.y_max = detail::read_pod<double>(in, "box");
            }
        };
        read_boxes(s.gt_boxes);
        if (has_distractor) read_boxes(s.distractor_boxes);
        if (has_label) s.label = detail::read_pod<std::int32_t>(in, "label");
    }
    return seqs;
}

}  // namespace ratm
