#pragma once

#include <cstdint>
#include <vector>

#include "flowforge/rng.hpp"

namespace flowforge::durations {

// Inter-packet durations span several orders of magnitude, so partitions are
// fit by 1-D k-means on log10 values. Members are stored in original units
// (after the epsilon floor) and sampled with +/-10% uniform noise.
struct DurationModel {
    int k = 0;
    std::vector<double> centroids;              // log10 space, ascending
    std::vector<std::vector<double>> members;   // original units, per partition
    double epsilon_floor = 1e-6;

    bool fitted() const { return k > 0; }
};

constexpr int kDefaultPartitions = 8;

DurationModel fit_duration_partitions(const std::vector<double>& durations, int k,
                                      double epsilon_floor = 1e-6);

int duration_to_token(const DurationModel& model, double q);

// Uniform member pick q, then uniform in [q - q/10, q + q/10].
double sample_duration(const DurationModel& model, int token, Rng& rng);

}  // namespace flowforge::durations
