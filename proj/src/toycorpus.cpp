#include "flowforge/toycorpus.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "flowforge/common.hpp"
#include "flowforge/rng.hpp"
#include "flowforge/synthesize.hpp"

using ordered_json = nlohmann::ordered_json;

namespace flowforge::toy {

ToyCorpusSpec default_toy_spec() {
    ToyCorpusSpec spec;

    ToyDeviceSpec cam;
    cam.device_id = "toycam";
    cam.signatures = {
        {{117, 123, sigs::Direction::Outgoing}, {306, 312, sigs::Direction::Incoming}},
        {{1417, 1423, sigs::Direction::Outgoing},
         {85, 91, sigs::Direction::Incoming},
         {429, 435, sigs::Direction::Outgoing}},
    };
    cam.orphan_lengths = {66, 1514};
    cam.duration_levels = {0.002, 0.2, 20.0};
    cam.signature_port = 443;
    cam.orphan_port = 53;

    ToyDeviceSpec plug;
    plug.device_id = "toyplug";
    plug.signatures = {
        {{213, 219, sigs::Direction::Outgoing}, {520, 526, sigs::Direction::Incoming}},
        {{980, 986, sigs::Direction::Incoming}, {154, 160, sigs::Direction::Outgoing}},
    };
    plug.orphan_lengths = {60, 341};
    plug.duration_levels = {0.005, 1.5};
    plug.signature_port = 8883;
    plug.orphan_port = 123;

    spec.devices = {cam, plug};
    return spec;
}

namespace {

ingest::PacketRecord base_record(const std::string& device_id,
                                 const std::string& capture_id) {
    ingest::PacketRecord rec;
    rec.device_id = device_id;
    rec.capture_id = capture_id;
    return rec;
}

}  // namespace

void make_toy_corpus(const ToyCorpusSpec& spec, const std::filesystem::path& dataset_root,
                     std::uint64_t seed) {
    std::filesystem::create_directories(dataset_root);
    ordered_json truth;
    truth["format_version"] = 1;
    truth["seed"] = seed;
    ordered_json devices_json = ordered_json::array();

    for (const auto& dev : spec.devices) {
        if (dev.signatures.empty()) throw ConfigError("toy device needs >= 1 signature");
        if (dev.duration_levels.empty()) throw ConfigError("toy device needs duration levels");
        const auto dev_dir = dataset_root / dev.device_id;
        std::filesystem::create_directories(dev_dir);
        Rng rng(seed_for(seed, "toy-" + dev.device_id));

        for (int cap = 0; cap < dev.captures; ++cap) {
            const std::string capture_id = "setup_" + std::to_string(cap);
            std::vector<ingest::PacketRecord> records;

            while (static_cast<int>(records.size()) < dev.packets_per_capture) {
                const bool orphan = rng.uniform01() < dev.orphan_probability;
                if (orphan && !dev.orphan_lengths.empty()) {
                    auto rec = base_record(dev.device_id, capture_id);
                    rec.frame_length =
                        dev.orphan_lengths[rng.uniform_u64(dev.orphan_lengths.size())];
                    rec.direction = rng.uniform01() < 0.5 ? ingest::Direction::Outgoing
                                                          : ingest::Direction::Incoming;
                    rec.protocol_flags[ingest::PROTO_IP] = 1;
                    rec.protocol_flags[ingest::PROTO_UDP] = 1;
                    const bool out = rec.direction == ingest::Direction::Outgoing;
                    rec.src_port = out ? static_cast<std::uint16_t>(40000)
                                       : dev.orphan_port;
                    rec.dst_port = out ? dev.orphan_port
                                       : static_cast<std::uint16_t>(40000);
                    ingest::derive_app_flags(rec.protocol_flags, rec.src_port, rec.dst_port);
                    rec.duration =
                        dev.duration_levels[rng.uniform_u64(dev.duration_levels.size())] *
                        rng.uniform(0.8, 1.2);
                    records.push_back(std::move(rec));
                } else {
                    const auto& sig =
                        dev.signatures[rng.uniform_u64(dev.signatures.size())];
                    for (std::size_t pos = 0; pos < sig.size(); ++pos) {
                        auto rec = base_record(dev.device_id, capture_id);
                        const auto& range = sig[pos];
                        rec.frame_length = static_cast<std::uint32_t>(rng.uniform_int(
                            static_cast<std::int64_t>(range.min_len),
                            static_cast<std::int64_t>(range.max_len)));
                        rec.direction = range.dir;
                        rec.protocol_flags[ingest::PROTO_IP] = 1;
                        rec.protocol_flags[ingest::PROTO_TCP] = 1;
                        const bool out = rec.direction == ingest::Direction::Outgoing;
                        rec.src_port = out ? static_cast<std::uint16_t>(50000)
                                           : dev.signature_port;
                        rec.dst_port = out ? dev.signature_port
                                           : static_cast<std::uint16_t>(50000);
                        ingest::derive_app_flags(rec.protocol_flags, rec.src_port,
                                                 rec.dst_port);
                        // packets inside a burst arrive fast; the gap after the
                        // burst comes from a random magnitude level
                        const bool last = pos + 1 == sig.size();
                        const double level =
                            last ? dev.duration_levels[rng.uniform_u64(
                                       dev.duration_levels.size())]
                                 : dev.duration_levels.front();
                        rec.duration = level * rng.uniform(0.8, 1.2);
                        records.push_back(std::move(rec));
                    }
                }
            }
            records.resize(static_cast<std::size_t>(dev.packets_per_capture));
            // the capture ends with the last packet
            records.back().duration = 0.0;

            recon::SyntheticWindow carrier;
            carrier.device_id = dev.device_id;
            carrier.capture_id = capture_id;
            carrier.packets = std::move(records);
            synth::AddressingConfig addressing;
            Rng pkt_rng(seed_for(seed, "toy-pcap-" + dev.device_id + "-" + capture_id));
            const auto blueprints = synth::build_packets(carrier, addressing, pkt_rng);
            synth::write_capture(blueprints, dev_dir / (capture_id + ".pcap"));
        }

        ordered_json dj;
        dj["device_id"] = dev.device_id;
        dj["captures"] = dev.captures;
        dj["packets_per_capture"] = dev.packets_per_capture;
        ordered_json sigs_json = ordered_json::array();
        for (const auto& sig : dev.signatures) {
            ordered_json ranges = ordered_json::array();
            for (const auto& r : sig)
                ranges.push_back({{"min_len", r.min_len},
                                  {"max_len", r.max_len},
                                  {"direction", ingest::to_string(r.dir)}});
            sigs_json.push_back(ranges);
        }
        dj["signatures"] = sigs_json;
        dj["orphan_lengths"] = dev.orphan_lengths;
        dj["duration_levels"] = dev.duration_levels;
        dj["signature_port"] = dev.signature_port;
        dj["orphan_port"] = dev.orphan_port;
        devices_json.push_back(dj);
    }
    truth["devices"] = devices_json;
    std::ofstream out(dataset_root / "ground_truth.json", std::ios::trunc);
    out << truth.dump(2) << "\n";
    if (!out) throw IoError("cannot write ground truth sidecar");
}

static sigs::Direction dir_from_string(const std::string& s) {
    return s == "Outgoing" ? sigs::Direction::Outgoing : sigs::Direction::Incoming;
}

ToyCorpusSpec load_toy_spec(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open toy spec: " + path.string());
    const auto j = ordered_json::parse(in);
    ToyCorpusSpec spec;
    for (const auto& dj : j.at("devices")) {
        ToyDeviceSpec dev;
        dev.device_id = dj.at("device_id").get<std::string>();
        dev.captures = dj.value("captures", dev.captures);
        dev.packets_per_capture = dj.value("packets_per_capture", dev.packets_per_capture);
        for (const auto& sj : dj.at("signatures")) {
            std::vector<sigs::Range> ranges;
            for (const auto& rj : sj)
                ranges.push_back({rj.at("min_len").get<std::uint32_t>(),
                                  rj.at("max_len").get<std::uint32_t>(),
                                  dir_from_string(rj.at("direction").get<std::string>())});
            dev.signatures.push_back(std::move(ranges));
        }
        dev.orphan_lengths = dj.value("orphan_lengths", dev.orphan_lengths);
        dev.duration_levels = dj.value("duration_levels", dev.duration_levels);
        dev.signature_port = dj.value("signature_port", dev.signature_port);
        dev.orphan_port = dj.value("orphan_port", dev.orphan_port);
        dev.orphan_probability = dj.value("orphan_probability", dev.orphan_probability);
        spec.devices.push_back(std::move(dev));
    }
    return spec;
}

void save_toy_spec(const ToyCorpusSpec& spec, const std::filesystem::path& path) {
    ordered_json j;
    ordered_json devices = ordered_json::array();
    for (const auto& dev : spec.devices) {
        ordered_json dj;
        dj["device_id"] = dev.device_id;
        dj["captures"] = dev.captures;
        dj["packets_per_capture"] = dev.packets_per_capture;
        ordered_json sigs_json = ordered_json::array();
        for (const auto& sig : dev.signatures) {
            ordered_json ranges = ordered_json::array();
            for (const auto& r : sig)
                ranges.push_back({{"min_len", r.min_len},
                                  {"max_len", r.max_len},
                                  {"direction", ingest::to_string(r.dir)}});
            sigs_json.push_back(ranges);
        }
        dj["signatures"] = sigs_json;
        dj["orphan_lengths"] = dev.orphan_lengths;
        dj["duration_levels"] = dev.duration_levels;
        dj["signature_port"] = dev.signature_port;
        dj["orphan_port"] = dev.orphan_port;
        dj["orphan_probability"] = dev.orphan_probability;
        devices.push_back(dj);
    }
    j["devices"] = devices;
    std::ofstream out(path, std::ios::trunc);
    out << j.dump(2) << "\n";
    if (!out) throw IoError("cannot write toy spec: " + path.string());
}

}  // namespace flowforge::toy
