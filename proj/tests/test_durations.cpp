#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "flowforge/common.hpp"
#include "flowforge/durations.hpp"
#include "flowforge/rng.hpp"
#include "oracles.hpp"

using namespace flowforge;

namespace {

std::vector<double> magnitude_corpus() {
    std::vector<double> durs;
    Rng rng(9);
    for (int i = 0; i < 10; ++i) durs.push_back(0.001 * rng.uniform(0.9, 1.1));
    for (int i = 0; i < 10; ++i) durs.push_back(1.0 * rng.uniform(0.9, 1.1));
    for (int i = 0; i < 10; ++i) durs.push_back(60.0 * rng.uniform(0.9, 1.1));
    return durs;
}

}  // namespace

TEST_CASE("fit separates magnitudes and matches the exact 1-D k-means oracle") {
    const auto durs = magnitude_corpus();
    const auto model = durations::fit_duration_partitions(durs, 3);
    REQUIRE(model.k == 3);

    // oracle: exact DP k-means on the log10 values
    std::vector<double> logs;
    for (double q : durs) logs.push_back(std::log10(std::max(q, model.epsilon_floor)));
    const auto exact = oracles::kmeans1d_exact(logs, 3);
    REQUIRE(exact.size() == 3);

    // compare partition contents (as multisets of original values)
    auto to_multiset = [](const std::vector<double>& vals) {
        std::multiset<double> out(vals.begin(), vals.end());
        return out;
    };
    for (int part = 0; part < 3; ++part) {
        std::vector<double> members_log;
        for (double q : model.members[static_cast<std::size_t>(part)])
            members_log.push_back(std::log10(q));
        std::sort(members_log.begin(), members_log.end());
        CHECK(to_multiset(members_log) == to_multiset(exact[static_cast<std::size_t>(part)]));
    }
    // every training duration belongs to exactly one partition
    std::size_t total = 0;
    for (const auto& part : model.members) {
        CHECK_FALSE(part.empty());
        total += part.size();
    }
    CHECK(total == durs.size());
    CHECK(std::is_sorted(model.centroids.begin(), model.centroids.end()));
}

TEST_CASE("degenerate and clamped inputs") {
    SUBCASE("all equal durations collapse to one partition with a warning") {
        const auto before = warn_count();
        const auto model = durations::fit_duration_partitions({2.5, 2.5, 2.5, 2.5}, 4);
        CHECK(model.k == 1);
        CHECK(warn_count() > before);
    }
    SUBCASE("zero durations are clamped to the epsilon floor") {
        const auto model = durations::fit_duration_partitions({0.0, 0.0, 1.0}, 2);
        // the zero members were stored clamped
        bool found_floor = false;
        for (const auto& part : model.members)
            for (double q : part)
                if (q == model.epsilon_floor) found_floor = true;
        CHECK(found_floor);
    }
    SUBCASE("empty input throws") {
        CHECK_THROWS_AS(durations::fit_duration_partitions({}, 3), DataError);
    }
}

TEST_CASE("duration_to_token maps to the nearest centroid in log space") {
    const auto model = durations::fit_duration_partitions(magnitude_corpus(), 3);
    SUBCASE("training members map to their own partition") {
        for (int part = 0; part < model.k; ++part)
            for (double q : model.members[static_cast<std::size_t>(part)])
                CHECK(durations::duration_to_token(model, q) == part);
    }
    SUBCASE("zero maps to the smallest partition") {
        CHECK(durations::duration_to_token(model, 0.0) == 0);
    }
    SUBCASE("log-space midpoint ties break to the lower index") {
        durations::DurationModel tiny;
        tiny.k = 2;
        tiny.centroids = {0.0, 2.0};  // log10 values
        tiny.members = {{1.0}, {100.0}};
        CHECK(durations::duration_to_token(tiny, 10.0) == 0);  // log10 = 1.0: midway
    }
}

TEST_CASE("sample_duration stays within +/-10% of its partition members") {
    const auto model = durations::fit_duration_partitions(magnitude_corpus(), 3);
    Rng rng(77);
    for (int part = 0; part < model.k; ++part) {
        const auto& mem = model.members[static_cast<std::size_t>(part)];
        const double lo = 0.9 * *std::min_element(mem.begin(), mem.end());
        const double hi = 1.1 * *std::max_element(mem.begin(), mem.end());
        for (int i = 0; i < 2000; ++i) {
            const double q = durations::sample_duration(model, part, rng);
            CHECK(q >= lo);
            CHECK(q <= hi);
        }
    }
    CHECK_THROWS_AS(durations::sample_duration(model, model.k, rng), InvalidTokenError);
    CHECK_THROWS_AS(durations::sample_duration(model, -1, rng), InvalidTokenError);
}

TEST_CASE("single-member partition obeys the documented noise window") {
    durations::DurationModel m;
    m.k = 1;
    m.centroids = {0.0};
    m.members = {{1.0}};
    Rng rng(5);
    for (int i = 0; i < 1000; ++i) {
        const double q = durations::sample_duration(m, 0, rng);
        CHECK(q >= 0.9);
        CHECK(q <= 1.1);
    }
    // floor-valued member
    durations::DurationModel f;
    f.k = 1;
    f.centroids = {-6.0};
    f.members = {{1e-6}};
    for (int i = 0; i < 1000; ++i) {
        const double q = durations::sample_duration(f, 0, rng);
        CHECK(q >= 0.9e-6);
        CHECK(q <= 1.1e-6);
    }
}

TEST_CASE("token round trip holds when partitions are magnitude-separated") {
    const auto model = durations::fit_duration_partitions(magnitude_corpus(), 3);
    Rng rng(13);
    for (int part = 0; part < model.k; ++part)
        for (int i = 0; i < 500; ++i)
            CHECK(durations::duration_to_token(
                      model, durations::sample_duration(model, part, rng)) == part);
}

TEST_CASE("fit and sampling are deterministic under fixed seeds") {
    const auto durs = magnitude_corpus();
    const auto m1 = durations::fit_duration_partitions(durs, 3);
    const auto m2 = durations::fit_duration_partitions(durs, 3);
    CHECK(m1.centroids == m2.centroids);
    CHECK(m1.members == m2.members);
    Rng r1(42), r2(42);
    for (int i = 0; i < 100; ++i)
        CHECK(durations::sample_duration(m1, i % m1.k, r1) ==
              durations::sample_duration(m2, i % m2.k, r2));
}
