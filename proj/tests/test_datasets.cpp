#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ratm/datasets.hpp>

using namespace ratm;

namespace {

std::string tmp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

Tensor fake_digits(std::size_t n, Tensor* labels_out) {
    Tensor digits({n, 28, 28});
    Tensor labels({n});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t r = 8; r < 20; ++r)
            for (std::size_t c = 8; c < 20; ++c)
                digits.data[(i * 28 + r) * 28 + c] = 0.5 + 0.5 * ((i + r + c) % 2);
        labels.data[i] = static_cast<double>(i % 10);
    }
    *labels_out = labels;
    return digits;
}

}  // namespace

TEST_CASE("bouncing ball physics invariants") {
    BallConfig cfg;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        VideoSequence s = gen_bouncing_ball_sequence(seed, cfg);
        REQUIRE(s.gt_boxes.size() == cfg.frames);
        for (const BBox& b : s.gt_boxes) {
            double cx = b.cx(), cy = b.cy();
            CHECK(cx >= cfg.radius - 1e-9);
            CHECK(cx <= cfg.size - 1 - cfg.radius + 1e-9);
            CHECK(cy >= cfg.radius - 1e-9);
            CHECK(cy <= cfg.size - 1 - cfg.radius + 1e-9);
        }
    }
}

TEST_CASE("ball speed is conserved across reflections") {
    BallConfig cfg;
    VideoSequence s = gen_bouncing_ball_sequence(77, cfg);
    std::vector<double> speeds;
    for (std::size_t t = 1; t < s.gt_boxes.size(); ++t) {
        double dx = s.gt_boxes[t].cx() - s.gt_boxes[t - 1].cx();
        double dy = s.gt_boxes[t].cy() - s.gt_boxes[t - 1].cy();
        speeds.push_back(std::sqrt(dx * dx + dy * dy));
    }
    // centers move |v| per frame except on bounce frames, where the reflected
    // path shortens the chord; speed never grows
    double vmax = *std::max_element(speeds.begin(), speeds.end());
    for (double v : speeds) CHECK(v <= vmax + 1e-9);
    CHECK(vmax <= cfg.max_speed + 1e-9);
}

TEST_CASE("rendered ball mass is stable across frames") {
    BallConfig cfg;
    for (std::uint64_t seed : {3u, 14u, 159u}) {
        VideoSequence s = gen_bouncing_ball_sequence(seed, cfg);
        std::size_t px = cfg.size * cfg.size;
        double first = 0;
        for (std::size_t i = 0; i < px; ++i) first += s.frames.data[i];
        for (std::size_t t = 1; t < cfg.frames; ++t) {
            double mass = 0;
            for (std::size_t i = 0; i < px; ++i) mass += s.frames.data[t * px + i];
            CHECK(std::fabs(mass - first) / first < 0.05);
        }
    }
}

TEST_CASE("ball pixels lie within gt box plus a 1-px border") {
    VideoSequence s = gen_bouncing_ball_sequence(5, {});
    std::size_t size = s.cols();
    for (std::size_t t = 0; t < s.length(); ++t) {
        const BBox& b = s.gt_boxes[t];
        for (std::size_t y = 0; y < size; ++y)
            for (std::size_t x = 0; x < size; ++x)
                if (s.frames.data[(t * size + y) * size + x] > 0.0) {
                    CHECK(x >= b.x_min - 1.0);
                    CHECK(x <= b.x_max + 1.0);
                    CHECK(y >= b.y_min - 1.0);
                    CHECK(y <= b.y_max + 1.0);
                }
    }
}

TEST_CASE("moving digits") {
    Tensor labels;
    Tensor digits = fake_digits(20, &labels);
    DigitWalkConfig cfg;
    cfg.frames = 12;

    SUBCASE("digit box stays inside the canvas") {
        for (std::uint64_t seed = 0; seed < 50; ++seed) {
            VideoSequence s = gen_moving_digits_sequence(seed, digits, labels, cfg);
            for (const BBox& b : s.gt_boxes) {
                CHECK(b.x_min >= 0.0);
                CHECK(b.y_min >= 0.0);
                CHECK(b.x_max <= 99.0);
                CHECK(b.y_max <= 99.0);
            }
        }
    }
    SUBCASE("frame equals the digit pasted at the gt position") {
        VideoSequence s = gen_moving_digits_sequence(9, digits, labels, cfg);
        // locate which digit was drawn by matching the label
        for (std::size_t t = 0; t < s.length(); ++t) {
            const BBox& b = s.gt_boxes[t];
            auto px = static_cast<std::size_t>(b.x_min);
            auto py = static_cast<std::size_t>(b.y_min);
            double inside = 0, outside = 0;
            for (std::size_t y = 0; y < 100; ++y)
                for (std::size_t x = 0; x < 100; ++x) {
                    double v = s.frames.data[(t * 100 + y) * 100 + x];
                    if (x >= px && x < px + 28 && y >= py && y < py + 28)
                        inside += v;
                    else
                        outside += v;
                }
            CHECK(inside > 0.0);
            CHECK(outside == 0.0);
        }
    }
    SUBCASE("determinism and seed sensitivity") {
        VideoSequence a = gen_moving_digits_sequence(4, digits, labels, cfg);
        VideoSequence b = gen_moving_digits_sequence(4, digits, labels, cfg);
        VideoSequence c = gen_moving_digits_sequence(5, digits, labels, cfg);
        CHECK(a.frames.data == b.frames.data);
        CHECK(a.frames.data != c.frames.data);
    }
    SUBCASE("two digits, distractor tracked separately") {
        cfg.n_digits = 2;
        VideoSequence s = gen_moving_digits_sequence(21, digits, labels, cfg);
        CHECK(s.distractor_boxes.size() == s.length());
        CHECK(s.label >= 0);
    }
    SUBCASE("more than two digits rejected") {
        cfg.n_digits = 3;
        CHECK_THROWS(gen_moving_digits_sequence(0, digits, labels, cfg));
    }
}

TEST_CASE("IDX round trip and error paths") {
    std::string img_path = tmp_path("ratm_test_images.idx");
    std::string lbl_path = tmp_path("ratm_test_labels.idx");
    // write a small images file: 2x3x4
    {
        std::ofstream out(img_path, std::ios::binary);
        auto w32be = [&](std::uint32_t v) {
            char b[4] = {char(v >> 24), char(v >> 16), char(v >> 8), char(v)};
            out.write(b, 4);
        };
        w32be(0x00000803);
        w32be(2);
        w32be(3);
        w32be(4);
        for (int i = 0; i < 24; ++i) out.put(static_cast<char>(i * 10));
    }
    {
        std::ofstream out(lbl_path, std::ios::binary);
        auto w32be = [&](std::uint32_t v) {
            char b[4] = {char(v >> 24), char(v >> 16), char(v >> 8), char(v)};
            out.write(b, 4);
        };
        w32be(0x00000801);
        w32be(5);
        for (unsigned char v : {0, 3, 9, 1, 7}) out.put(static_cast<char>(v));
    }

    Tensor imgs = load_idx(img_path);
    CHECK(imgs.shape == std::vector<std::size_t>{2, 3, 4});
    CHECK(imgs.data[1] == doctest::Approx(10.0 / 255.0));

    Tensor lbls = load_idx(lbl_path);
    CHECK(lbls.shape == std::vector<std::size_t>{5});
    for (double v : lbls.data) {
        CHECK(v >= 0);
        CHECK(v <= 9);
    }

    SUBCASE("bad magic") {
        std::string bad = tmp_path("ratm_bad.idx");
        std::ofstream(bad, std::ios::binary) << "nope";
        CHECK_THROWS_WITH_AS(load_idx(bad), doctest::Contains("magic"), std::runtime_error);
    }
    SUBCASE("truncated file") {
        std::string trunc = tmp_path("ratm_trunc.idx");
        {
            std::ofstream out(trunc, std::ios::binary);
            std::ifstream in(img_path, std::ios::binary);
            char buf[20];
            in.read(buf, sizeof(buf));
            out.write(buf, sizeof(buf));
        }
        CHECK_THROWS_WITH_AS(load_idx(trunc), doctest::Contains("truncated"),
                             std::runtime_error);
    }
    std::remove(img_path.c_str());
    std::remove(lbl_path.c_str());
}

TEST_CASE("dataset container round trip") {
    std::vector<VideoSequence> seqs = gen_bouncing_ball(42, 5);
    std::string path = tmp_path("ratm_test.ratmds");
    save_dataset(path, seqs);
    std::vector<VideoSequence> back = load_dataset(path);
    REQUIRE(back.size() == seqs.size());
    for (std::size_t i = 0; i < seqs.size(); ++i) {
        CHECK(back[i].frames.data == seqs[i].frames.data);
        CHECK(back[i].seed == seqs[i].seed);
        for (std::size_t t = 0; t < seqs[i].gt_boxes.size(); ++t)
            CHECK(back[i].gt_boxes[t].x_min == seqs[i].gt_boxes[t].x_min);
    }
    SUBCASE("bad magic is rejected") {
        std::string bad = tmp_path("ratm_bad.ratmds");
        std::ofstream(bad, std::ios::binary) << "XXXXXXXX";
        CHECK_THROWS(load_dataset(bad));
    }
    std::remove(path.c_str());
}

TEST_CASE("generation is deterministic per seed") {
    std::vector<VideoSequence> a = gen_bouncing_ball(7, 3);
    std::vector<VideoSequence> b = gen_bouncing_ball(7, 3);
    std::vector<VideoSequence> c = gen_bouncing_ball(8, 3);
    for (std::size_t i = 0; i < 3; ++i) CHECK(a[i].frames.data == b[i].frames.data);
    CHECK(a[0].frames.data != c[0].frames.data);
}
