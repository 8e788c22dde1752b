#include "flowforge/durations.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "flowforge/common.hpp"

namespace flowforge::durations {

namespace {

double clamp_floor(double q, double floor) { return q < floor ? floor : q; }

// Deterministic quantile seeding: centroid j at the ((j+0.5)/k)-quantile of
// the sorted values.
std::vector<double> quantile_init(const std::vector<double>& sorted_logs, int k) {
    std::vector<double> c(static_cast<std::size_t>(k));
    const std::size_t n = sorted_logs.size();
    for (int j = 0; j < k; ++j) {
        const double q = (j + 0.5) / k;
        auto idx = static_cast<std::size_t>(q * static_cast<double>(n));
        if (idx >= n) idx = n - 1;
        c[static_cast<std::size_t>(j)] = sorted_logs[idx];
    }
    return c;
}

std::size_t nearest_centroid(const std::vector<double>& centroids, double x) {
    std::size_t best = 0;
    double bd = std::abs(x - centroids[0]);
    for (std::size_t j = 1; j < centroids.size(); ++j) {
        const double d = std::abs(x - centroids[j]);
        if (d < bd) {  // strict: ties keep the lower index
            bd = d;
            best = j;
        }
    }
    return best;
}

}  // namespace

DurationModel fit_duration_partitions(const std::vector<double>& durations, int k,
                                      double epsilon_floor) {
    if (durations.empty()) throw DataError("no durations to fit");
    if (k < 1) throw ConfigError("duration partition count must be >= 1");

    std::vector<double> clamped;
    clamped.reserve(durations.size());
    for (double q : durations) clamped.push_back(clamp_floor(q, epsilon_floor));

    std::vector<double> logs;
    logs.reserve(clamped.size());
    for (double q : clamped) logs.push_back(std::log10(q));

    const std::size_t distinct =
        std::set<double>(logs.begin(), logs.end()).size();
    if (distinct < static_cast<std::size_t>(k)) {
        log_warn("only " + std::to_string(distinct) +
                 " distinct duration values, reducing k from " + std::to_string(k));
        k = static_cast<int>(distinct);
    }

    std::vector<double> sorted_logs = logs;
    std::sort(sorted_logs.begin(), sorted_logs.end());
    std::vector<double> centroids = quantile_init(sorted_logs, k);
    std::sort(centroids.begin(), centroids.end());
    centroids.erase(std::unique(centroids.begin(), centroids.end()), centroids.end());

    // Lloyd iterations; 1-D so convergence is quick.
    std::vector<std::size_t> assign(logs.size(), 0);
    for (int iter = 0; iter < 200; ++iter) {
        bool changed = false;
        for (std::size_t i = 0; i < logs.size(); ++i) {
            const std::size_t a = nearest_centroid(centroids, logs[i]);
            if (a != assign[i]) {
                assign[i] = a;
                changed = true;
            }
        }
        std::vector<double> sum(centroids.size(), 0.0);
        std::vector<std::size_t> cnt(centroids.size(), 0);
        for (std::size_t i = 0; i < logs.size(); ++i) {
            sum[assign[i]] += logs[i];
            ++cnt[assign[i]];
        }
        for (std::size_t j = 0; j < centroids.size(); ++j)
            if (cnt[j] > 0) centroids[j] = sum[j] / static_cast<double>(cnt[j]);
        if (!changed && iter > 0) break;
    }

    // Drop empty partitions, order by centroid.
    std::vector<std::size_t> counts(centroids.size(), 0);
    for (std::size_t a : assign) ++counts[a];
    std::vector<std::size_t> keep;
    for (std::size_t j = 0; j < centroids.size(); ++j)
        if (counts[j] > 0) keep.push_back(j);

    std::sort(keep.begin(), keep.end(), [&](std::size_t a, std::size_t b) {
        return centroids[a] < centroids[b];
    });

    DurationModel model;
    model.epsilon_floor = epsilon_floor;
    model.k = static_cast<int>(keep.size());
    model.centroids.resize(keep.size());
    model.members.resize(keep.size());
    std::vector<std::size_t> remap(centroids.size(), 0);
    for (std::size_t out = 0; out < keep.size(); ++out) {
        remap[keep[out]] = out;
        model.centroids[out] = centroids[keep[out]];
    }
    for (std::size_t i = 0; i < clamped.size(); ++i)
        model.members[remap[assign[i]]].push_back(clamped[i]);
    return model;
}

int duration_to_token(const DurationModel& model, double q) {
    if (!model.fitted()) throw DataError("duration model not fitted");
    const double x = std::log10(clamp_floor(q, model.epsilon_floor));
    return static_cast<int>(nearest_centroid(model.centroids, x));
}

double sample_duration(const DurationModel& model, int token, Rng& rng) {
    if (token < 0 || token >= model.k)
        throw InvalidTokenError("duration token " + std::to_string(token) +
                                " out of range [0," + std::to_string(model.k) + ")");
    const auto& mem = model.members[static_cast<std::size_t>(token)];
    const double q = mem[rng.uniform_u64(mem.size())];
    const double e = q / 10.0;
    const double sampled = rng.uniform(q - e, q + e);
    return sampled < 0.0 ? 0.0 : sampled;
}

}  // namespace flowforge::durations
