#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "flowforge/common.hpp"
#include "flowforge/rng.hpp"
#include "flowforge/seqgan.hpp"

using namespace flowforge;
using gan::DiscreteSequence;
namespace fs = std::filesystem;

namespace {

// alternating two-symbol pattern corpus, the sequence starts with either
// symbol so the generator has one stochastic choice
std::vector<DiscreteSequence> pattern_corpus(int count, int seq_len) {
    std::vector<DiscreteSequence> out;
    for (int i = 0; i < count; ++i) {
        DiscreteSequence s(static_cast<std::size_t>(seq_len));
        const int start = i % 2;
        for (int t = 0; t < seq_len; ++t) s[static_cast<std::size_t>(t)] = (start + t) % 2;
        out.push_back(std::move(s));
    }
    return out;
}

gan::GanTrainConfig fast_cfg() {
    gan::GanTrainConfig cfg;
    cfg.pretrain_epochs = 60;
    cfg.adversarial_rounds = 3;
    cfg.rollout_count = 4;
    cfg.batch_size = 16;
    cfg.seed = 21;
    return cfg;
}

// exact expected discriminator score of completing `prefix` under the policy
double analytic_rollout(const gan::GeneratorPolicy& gen, const gan::SequenceScorer& scorer,
                        const DiscreteSequence& prefix) {
    if (static_cast<int>(prefix.size()) == gen.seq_len()) return scorer(prefix);
    const auto dist = gen.step_distribution(prefix);
    double total = 0.0;
    for (int code = 0; code < gen.vocab(); ++code) {
        auto next = prefix;
        next.push_back(code);
        total += dist[static_cast<std::size_t>(code)] * analytic_rollout(gen, scorer, next);
    }
    return total;
}

}  // namespace

TEST_CASE("pretraining learns a deterministic alternating pattern") {
    const auto corpus = pattern_corpus(64, 10);
    gan::GeneratorPolicy gen(2, 10, 7);
    const auto nll = gan::pretrain(gen, corpus, fast_cfg());
    REQUIRE(nll.size() == static_cast<std::size_t>(fast_cfg().pretrain_epochs));
    CHECK(nll.back() <= nll.front());

    // after the first symbol, every following step is determined by the pattern
    const auto samples = gan::sample(gen, 100, 99);
    std::size_t correct = 0, total = 0;
    for (const auto& s : samples) {
        for (std::size_t t = 1; t < s.size(); ++t) {
            total += 1;
            correct += s[t] == (s[t - 1] + 1) % 2;
        }
    }
    CHECK(static_cast<double>(correct) / static_cast<double>(total) >= 0.95);
}

TEST_CASE("pretrain rejects an empty corpus") {
    gan::GeneratorPolicy gen(2, 10, 7);
    CHECK_THROWS_AS(gan::pretrain(gen, {}, fast_cfg()), DataError);
}

TEST_CASE("generator step distributions are valid probabilities") {
    gan::GeneratorPolicy gen(5, 6, 3);
    DiscreteSequence prefix;
    for (int t = 0; t < 5; ++t) {
        const auto dist = gen.step_distribution(prefix);
        REQUIRE(dist.size() == 5);
        double sum = 0.0;
        for (double p : dist) {
            CHECK(p >= 0.0);
            sum += p;
        }
        CHECK(std::fabs(sum - 1.0) < 1e-5);
        prefix.push_back(t % 5);
    }
}

TEST_CASE("rollout_reward matches the documented contracts") {
    gan::GeneratorPolicy gen(2, 4, 13);
    Rng rng(5);

    SUBCASE("complete prefix returns the score exactly") {
        const DiscreteSequence full = {0, 1, 1, 0};
        const gan::SequenceScorer table = [](const DiscreteSequence& s) {
            return s[0] == 0 ? 0.9 : 0.1;
        };
        CHECK(gan::rollout_reward(gen, table, full, 8, rng) == doctest::Approx(0.9));
    }
    SUBCASE("constant scorer gives the constant for any prefix") {
        const gan::SequenceScorer constant = [](const DiscreteSequence&) { return 0.7; };
        for (int t = 0; t <= 4; ++t) {
            DiscreteSequence prefix(static_cast<std::size_t>(t), 1);
            for (int n_roll : {1, 4, 16})
                CHECK(gan::rollout_reward(gen, constant, prefix, n_roll, rng) ==
                      doctest::Approx(0.7));
        }
    }
    SUBCASE("estimate converges to the enumerated expectation") {
        // fixed scorer table over complete K=2, C=2 sequences
        gan::GeneratorPolicy toy(2, 2, 17, 4, 4);
        const gan::SequenceScorer table = [](const DiscreteSequence& s) {
            static const std::map<DiscreteSequence, double> scores = {
                {{0, 0}, 0.9}, {{0, 1}, 0.2}, {{1, 0}, 0.6}, {{1, 1}, 0.4}};
            return scores.at(s);
        };
        const DiscreteSequence prefix = {};
        const double expected = analytic_rollout(toy, table, prefix);
        double err_small = 0.0, err_large = 0.0;
        const int trials = 60;
        for (int i = 0; i < trials; ++i) {
            Rng r1(seed_for(1000 + static_cast<std::uint64_t>(i), "small"));
            Rng r2(seed_for(1000 + static_cast<std::uint64_t>(i), "large"));
            err_small += std::fabs(gan::rollout_reward(toy, table, prefix, 2, r1) - expected);
            err_large +=
                std::fabs(gan::rollout_reward(toy, table, prefix, 128, r2) - expected);
        }
        CHECK(err_large / trials < err_small / trials);
        CHECK(err_large / trials < 0.05);
    }
}

TEST_CASE("adversarial training with zero rounds returns the generator unchanged") {
    const auto corpus = pattern_corpus(32, 10);
    gan::GeneratorPolicy gen(2, 10, 7);
    gan::pretrain(gen, corpus, fast_cfg());
    const auto before = gan::sample(gen, 10, 42);
    gan::SequenceDiscriminator disc(2, 10, 7);
    auto cfg = fast_cfg();
    cfg.adversarial_rounds = 0;
    const auto curve = gan::adversarial_train(gen, disc, corpus, cfg);
    CHECK(curve.empty());
    CHECK(gan::sample(gen, 10, 42) == before);
}

TEST_CASE("adversarial training records a curve and keeps samples in range") {
    const auto corpus = pattern_corpus(32, 10);
    gan::GeneratorPolicy gen(2, 10, 7);
    auto cfg = fast_cfg();
    cfg.pretrain_epochs = 20;
    gan::pretrain(gen, corpus, cfg);
    gan::SequenceDiscriminator disc(2, 10, 7);
    const auto curve = gan::adversarial_train(gen, disc, corpus, cfg);
    REQUIRE(curve.size() == static_cast<std::size_t>(cfg.adversarial_rounds));
    for (const auto& pt : curve) {
        CHECK(pt.disc_accuracy >= 0.0);
        CHECK(pt.disc_accuracy <= 1.0);
        CHECK(pt.mean_reward >= 0.0);
        CHECK(pt.mean_reward <= 1.0);
        CHECK(pt.nll > 0.0);
    }

    SUBCASE("curves export as csv") {
        const auto path = fs::temp_directory_path() / "flowforge_curves.csv";
        gan::write_curves_csv(path, curve);
        std::ifstream in(path);
        std::string header;
        std::getline(in, header);
        CHECK(header == "round,disc_accuracy,mean_reward,nll");
        int lines = 0;
        std::string line;
        while (std::getline(in, line))
            if (!line.empty()) ++lines;
        CHECK(lines == static_cast<int>(curve.size()));
    }
}

TEST_CASE("sample honors count, range and seed") {
    gan::GeneratorPolicy gen(6, 8, 23);
    const auto s1 = gan::sample(gen, 100, 5);
    REQUIRE(s1.size() == 100);
    for (const auto& s : s1) {
        REQUIRE(s.size() == 8);
        for (int c : s) {
            CHECK(c >= 0);
            CHECK(c < 6);
        }
    }
    CHECK(gan::sample(gen, 100, 5) == s1);
    CHECK(gan::sample(gen, 100, 6) != s1);
    CHECK(gan::sample(gen, 0, 5).empty());
}

TEST_CASE("variety check computes ratios and the inclusive bound") {
    std::vector<DiscreteSequence> same(100, DiscreteSequence{1, 2, 3});
    auto rep = gan::variety_check(same, 0.1);
    CHECK_FALSE(rep.pass);
    CHECK(rep.distinct_ratio == doctest::Approx(0.01));
    CHECK(rep.modal_share == doctest::Approx(1.0));

    std::vector<DiscreteSequence> distinct;
    for (int i = 0; i < 100; ++i) distinct.push_back({i, i + 1});
    rep = gan::variety_check(distinct, 0.1);
    CHECK(rep.pass);
    CHECK(rep.distinct_ratio == doctest::Approx(1.0));

    // ratio exactly tau passes (inclusive)
    std::vector<DiscreteSequence> half;
    for (int i = 0; i < 10; ++i) half.push_back({i / 2});
    rep = gan::variety_check(half, 0.5);
    CHECK(rep.distinct_ratio == doctest::Approx(0.5));
    CHECK(rep.pass);
}

TEST_CASE("variety guard recovers by raising temperature") {
    const auto corpus = pattern_corpus(32, 10);
    gan::GeneratorPolicy gen(2, 10, 7);
    auto cfg = fast_cfg();
    cfg.pretrain_epochs = 40;
    gan::pretrain(gen, corpus, cfg);
    gan::SequenceDiscriminator disc(2, 10, 7);
    // the pattern corpus has only 2 distinct sequences, so demand tau small
    cfg.variety_tau = 0.02;
    const auto pretrained = gen.clone();
    const auto res = gan::sample_with_variety_guard(gen, disc, pretrained, corpus, cfg,
                                                    100, 77);
    CHECK(res.samples.size() == 100);
    CHECK(res.variety.distinct_ratio >= 0.02);
    CHECK(res.attempts >= 1);
}

TEST_CASE("generator and discriminator checkpoints round-trip") {
    const auto corpus = pattern_corpus(16, 10);
    gan::GeneratorPolicy gen(3, 10, 31);
    auto cfg = fast_cfg();
    cfg.pretrain_epochs = 3;
    gan::pretrain(gen, corpus, cfg);
    const auto dir = fs::temp_directory_path() / "flowforge_gan_ckpt";
    fs::remove_all(dir);
    gen.save(dir / "gen");
    const auto loaded = gan::GeneratorPolicy::load(dir / "gen");
    CHECK(gan::sample(loaded, 20, 3) == gan::sample(gen, 20, 3));

    gan::SequenceDiscriminator disc(3, 10, 31);
    disc.save(dir / "disc");
    const auto dloaded = gan::SequenceDiscriminator::load(dir / "disc");
    const DiscreteSequence probe = {0, 1, 2, 0, 1, 2, 0, 1, 2, 0};
    CHECK(dloaded.score(probe) == doctest::Approx(disc.score(probe)));
}
