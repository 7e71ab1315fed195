#pragma once

#include <cstdint>
#include <random>

#include "tensor.hpp"

namespace ratm {

// splitmix64; used to derive independent stream seeds from (seed, tags)
// so that batch workers and resumed runs draw identical values.
inline std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                                 std::uint64_t c = 0) {
    return mix_seed(mix_seed(mix_seed(seed ^ a) + b) + c);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    double uniform(double lo = 0.0, double hi = 1.0) {
        return std::uniform_real_distribution<double>(lo, hi)(gen_);
    }
    double normal(double mean = 0.0, double stddev = 1.0) {
        return std::normal_distribution<double>(mean, stddev)(gen_);
    }
    std::uint64_t next_u64() { return gen_(); }
    std::size_t index(std::size_t n) {
        return std::uniform_int_distribution<std::size_t>(0, n - 1)(gen_);
    }

    Tensor gaussian_tensor(std::vector<std::size_t> shape, double mean, double stddev) {
        Tensor t(std::move(shape));
        for (double& v : t.data) v = normal(mean, stddev);
        return t;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        // Fisher-Yates on our own generator, stable across platforms.
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = std::uniform_int_distribution<std::size_t>(0, i - 1)(gen_);
            std::swap(v[i - 1], v[j]);
        }
    }

    std::mt19937_64& engine() { return gen_; }

private:
    std::mt19937_64 gen_;
};

}  // namespace ratm
