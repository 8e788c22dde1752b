#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "flowforge/signatures.hpp"

namespace flowforge::toy {

// Desk-scale pseudo-device corpus with known ground truth, used by the
// oracle-based tests and the acceptance suite.
struct ToyDeviceSpec {
    std::string device_id;
    int captures = 20;
    int packets_per_capture = 120;
    // planted signatures: every occurrence draws each position uniformly from
    // its [min,max] range with the given direction
    std::vector<std::vector<sigs::Range>> signatures;
    std::vector<std::uint32_t> orphan_lengths;
    std::vector<double> duration_levels;  // seconds, one magnitude per level
    std::uint16_t signature_port = 443;   // TCP, device <-> peer
    std::uint16_t orphan_port = 53;       // UDP
    double orphan_probability = 0.35;     // per event
};

struct ToyCorpusSpec {
    std::vector<ToyDeviceSpec> devices;
};

ToyCorpusSpec default_toy_spec();

// Writes dataset_root/<device>/<capture>.pcap plus a ground_truth.json
// sidecar; byte-identical for a fixed seed.
void make_toy_corpus(const ToyCorpusSpec& spec, const std::filesystem::path& dataset_root,
                     std::uint64_t seed);

ToyCorpusSpec load_toy_spec(const std::filesystem::path& path);
void save_toy_spec(const ToyCorpusSpec& spec, const std::filesystem::path& path);

}  // namespace flowforge::toy
