#pragma once

#include "avdiff/types.hpp"

#include <cstdint>
#include <random>
#include <string_view>

namespace avdiff {

/// Seeded random stream. Child streams derived with split() are independent
/// of the parent's consumption, so parallel workers can each own one.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0);

    std::uint64_t seed() const { return seed_; }

    /// Independent stream keyed by (seed, stream id).
    Rng split(std::uint64_t stream) const;
    Rng split(std::string_view label) const;

    double normal();
    double uniform();
    /// Uniform integer on [lo, hi].
    int uniform_int(int lo, int hi);
    bool bernoulli(double p);

    /// Matrix of iid standard normals.
    Mat normal_matrix(Eigen::Index rows, Eigen::Index cols);

    std::mt19937_64& engine() { return engine_; }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace avdiff
