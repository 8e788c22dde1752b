#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "flowforge/adversary.hpp"
#include "flowforge/common.hpp"
#include "flowforge/rng.hpp"

using namespace flowforge;
namespace fs = std::filesystem;

namespace {

constexpr auto kOut = ingest::Direction::Outgoing;
constexpr auto kIn = ingest::Direction::Incoming;

ingest::TrafficWindow window_from_lengths(const std::vector<std::uint32_t>& lengths,
                                          double timing, std::uint16_t port,
                                          const std::string& device = "dev") {
    ingest::TrafficWindow w;
    w.device_id = device;
    for (std::size_t i = 0; i < lengths.size(); ++i) {
        ingest::PacketRecord r;
        r.frame_length = lengths[i];
        r.direction = i % 2 ? kIn : kOut;
        r.duration = timing;
        r.protocol_flags[ingest::PROTO_IP] = 1;
        r.protocol_flags[ingest::PROTO_TCP] = 1;
        r.src_port = port;
        r.dst_port = static_cast<std::uint16_t>(50000);
        r.device_id = device;
        w.packets.push_back(r);
    }
    return w;
}

// windows drawn from a small set of length patterns
std::vector<ingest::TrafficWindow> structured_windows(int count, std::uint64_t seed,
                                                      std::uint32_t base,
                                                      std::uint16_t port) {
    Rng rng(seed);
    std::vector<ingest::TrafficWindow> out;
    for (int i = 0; i < count; ++i) {
        std::vector<std::uint32_t> lens;
        for (int t = 0; t < 8; ++t)
            lens.push_back(base + static_cast<std::uint32_t>(rng.uniform_u64(4)) * 10);
        out.push_back(window_from_lengths(lens, rng.uniform(0.01, 0.02), port));
    }
    return out;
}

// metadata with lengths the training vocabulary has never seen
std::vector<ingest::TrafficWindow> random_metadata_windows(int count, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<ingest::TrafficWindow> out;
    for (int i = 0; i < count; ++i) {
        std::vector<std::uint32_t> lens;
        for (int t = 0; t < 8; ++t)
            lens.push_back(static_cast<std::uint32_t>(5000 + rng.uniform_u64(5000)));
        out.push_back(window_from_lengths(lens, rng.uniform(5.0, 50.0),
                                          static_cast<std::uint16_t>(rng.uniform_u64(65000))));
    }
    return out;
}

adversary::AdversaryConfig fast_cfg() {
    adversary::AdversaryConfig cfg;
    cfg.hidden = 24;
    cfg.epochs = 8;
    cfg.batch_size = 16;
    cfg.seed = 5;
    return cfg;
}

}  // namespace

TEST_CASE("feature encoding follows the documented rules") {
    const auto train = structured_windows(4, 1, 100, 443);
    const auto enc = adversary::FeatureEncoder::fit(train);

    SUBCASE("equal lengths share a category") {
        const auto in = adversary::encode_features(train[0], enc);
        for (std::size_t i = 0; i < train[0].packets.size(); ++i)
            for (std::size_t j = 0; j < i; ++j)
                if (train[0].packets[i].frame_length == train[0].packets[j].frame_length)
                    CHECK(in.length_ids[i] == in.length_ids[j]);
    }
    SUBCASE("unseen values map to UNK") {
        auto probe = window_from_lengths({9999, 9998, 9997, 9996}, 0.015, 443);
        const auto in = adversary::encode_features(probe, enc);
        for (int id : in.length_ids) CHECK(id == enc.length_unk);
        auto port_probe = window_from_lengths({100, 110, 120, 130}, 0.015, 12345);
        const auto in2 = adversary::encode_features(port_probe, enc);
        CHECK(in2.src_port_ids[0] == enc.port_unk);
    }
    SUBCASE("timings standardize with training mean and std") {
        adversary::FeatureEncoder manual;
        manual.timing_mean = 1.0;
        manual.timing_std = 0.5;
        CHECK(manual.standardize(2.0) == doctest::Approx(2.0));
    }
}

TEST_CASE("train_realfake separates trivially different classes") {
    const auto real = structured_windows(40, 2, 100, 443);
    const auto fake = random_metadata_windows(40, 3);
    const auto clf = adversary::train_realfake(real, fake, fast_cfg());

    const auto real_test = structured_windows(20, 7, 100, 443);
    const auto fake_test = random_metadata_windows(20, 8);
    std::vector<ingest::TrafficWindow> test = real_test;
    test.insert(test.end(), fake_test.begin(), fake_test.end());
    std::vector<int> labels(20, 1);
    labels.insert(labels.end(), 20, 0);
    CHECK(clf.accuracy(test, labels) >= 0.95);
}

TEST_CASE("shuffled copies of real windows stay near chance") {
    // identical marginal content, only the packet order differs; the
    // structured corpus has no order signal so accuracy sits near 0.5
    Rng rng(55);
    const auto real = structured_windows(60, 12, 100, 443);
    std::vector<ingest::TrafficWindow> fake;
    for (const auto& w : real) {
        auto copy = w;
        rng.shuffle(copy.packets);
        fake.push_back(std::move(copy));
    }
    auto cfg = fast_cfg();
    cfg.epochs = 6;
    const auto rep = adversary::cross_validate(real, fake, 3, cfg, 9, "dev");
    CHECK(rep.mean_accuracy >= 0.3);
    CHECK(rep.mean_accuracy <= 0.7);
}

TEST_CASE("class imbalance is fixed by downsampling") {
    const auto real = structured_windows(50, 2, 100, 443);
    auto fake = random_metadata_windows(25, 3);
    // trains without error and still learns; downsampling is logged
    const auto clf = adversary::train_realfake(real, fake, fast_cfg());
    CHECK(clf.classes() == 2);
    CHECK_THROWS_AS(adversary::train_realfake({}, fake, fast_cfg()), DataError);
    CHECK_THROWS_AS(adversary::train_realfake(real, {}, fast_cfg()), DataError);
}

TEST_CASE("cross_validate reports exact means and seeded splits") {
    const auto real = structured_windows(30, 4, 100, 443);
    const auto fake = random_metadata_windows(30, 5);
    auto cfg = fast_cfg();
    cfg.epochs = 4;
    const auto rep = adversary::cross_validate(real, fake, 3, cfg, 42, "dev");
    REQUIRE(rep.fold_accuracies.size() == 3);
    double mean = 0.0;
    for (double a : rep.fold_accuracies) mean += a;
    CHECK(rep.mean_accuracy == mean / 3.0);  // exact, not approximate
    CHECK(rep.real_count == 30);
    CHECK(rep.fake_count == 30);

    const auto rep2 = adversary::cross_validate(real, fake, 3, cfg, 42, "dev");
    CHECK(rep2.fold_accuracies == rep.fold_accuracies);

    CHECK_THROWS_AS(adversary::cross_validate(real, fake, 1, cfg, 42, "dev"), ConfigError);
    const std::vector<ingest::TrafficWindow> two(real.begin(), real.begin() + 2);
    CHECK_THROWS_AS(adversary::cross_validate(two, fake, 3, cfg, 42, "dev"), DataError);
}

TEST_CASE("fold vocabularies never leak from held-out data") {
    // fold-specific unique lengths must encode as UNK when the classifier
    // trained without them
    auto real = structured_windows(20, 6, 100, 443);
    const auto fake = random_metadata_windows(20, 7);
    const auto clf = adversary::train_realfake(real, fake, fast_cfg());
    auto probe = window_from_lengths({77777, 77777, 77777, 77777}, 0.015, 443);
    const auto in = adversary::encode_features(probe, clf.encoder());
    for (int id : in.length_ids) CHECK(id == clf.encoder().length_unk);
}

TEST_CASE("device classifier separates disjoint devices and rejects one class") {
    std::map<std::string, std::vector<ingest::TrafficWindow>> corpora;
    corpora["cam"] = structured_windows(30, 8, 100, 443);
    corpora["plug"] = structured_windows(30, 9, 900, 8883);
    auto cfg = fast_cfg();
    cfg.epochs = 10;
    const auto res = adversary::train_device_classifier(corpora, cfg);
    CHECK(res.overall_accuracy >= 0.9);
    REQUIRE(res.device_ids.size() == 2);

    std::map<std::string, std::vector<ingest::TrafficWindow>> single;
    single["cam"] = corpora["cam"];
    CHECK_THROWS_AS(adversary::train_device_classifier(single, cfg), DataError);
}

TEST_CASE("reports render as csv and a text table") {
    adversary::EvaluationReport r;
    r.device_id = "cam_device";
    r.fold_accuracies = {0.7, 0.75, 0.72, 0.71, 0.74};
    r.mean_accuracy = 0.724;
    r.real_count = 50;
    r.fake_count = 50;
    r.baselines.emplace_back("uniform_random", 1.0);
    adversary::EvaluationReport r2;
    r2.device_id = "switch_device";
    r2.fold_accuracies = {0.6, 0.55};
    r2.mean_accuracy = 0.575;
    r2.real_count = 40;
    r2.fake_count = 40;
    r2.baselines.emplace_back("uniform_random", 0.939);

    const auto path = fs::temp_directory_path() / "flowforge_report.csv";
    adversary::write_report_csv(path, {r, r2});
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header ==
          "device,real_count,fake_count,fold_0,fold_1,fold_2,fold_3,fold_4,mean_accuracy,"
          "uniform_random");
    std::string line;
    std::getline(in, line);
    CHECK(line.rfind("cam_device,50,50,", 0) == 0);

    const auto table = adversary::render_report_table({r, r2});
    CHECK(table.find("cam_device") != std::string::npos);
    CHECK(table.find("72.4%") != std::string::npos);
    CHECK(table.find("57.5%") != std::string::npos);
    CHECK(table.find("uniform_random") != std::string::npos);
}
