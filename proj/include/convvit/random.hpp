#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "convvit/tensor.hpp"

namespace convvit {

// Seeded generator with hand-rolled distributions so that streams are
// identical across standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi] by rejection-free scaling (desk-scale bias
    // from the modulo is irrelevant here, but scaling keeps it clean anyway).
    int uniform_int(int lo, int hi) {
        return lo + static_cast<int>(uniform() * static_cast<double>(hi - lo + 1));
    }

    // Standard normal via Box-Muller.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * M_PI * u2);
        has_spare_ = true;
        return r * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Normal clipped to two standard deviations by resampling.
    double truncated_normal(double stddev) {
        double v = normal();
        while (std::abs(v) > 2.0) v = normal();
        return v * stddev;
    }

    Tensor normal_tensor(std::vector<int> shape, double stddev = 1.0) {
        Tensor t(std::move(shape));
        for (std::int64_t i = 0; i < t.size(); ++i) t[i] = normal() * stddev;
        return t;
    }

    Tensor uniform_tensor(std::vector<int> shape, double lo = 0.0, double hi = 1.0) {
        Tensor t(std::move(shape));
        for (std::int64_t i = 0; i < t.size(); ++i) t[i] = uniform(lo, hi);
        return t;
    }

    Tensor truncated_normal_tensor(std::vector<int> shape, double stddev) {
        Tensor t(std::move(shape));
        for (std::int64_t i = 0; i < t.size(); ++i) t[i] = truncated_normal(stddev);
        return t;
    }

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace convvit
