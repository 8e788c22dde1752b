#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "flowforge/durations.hpp"
#include "flowforge/ingest.hpp"

namespace flowforge::sigs {

using ingest::Direction;

struct SignatureConfig {
    double d = 10.0;   // neighborhood distance
    int s = 5;         // minimum samples per cluster
    int min_size = 2;  // signature lengths scanned
    int max_size = 6;

    void validate(int window_len) const;
};

struct LenDir {
    std::uint32_t len = 0;
    Direction dir = Direction::Incoming;

    bool operator==(const LenDir&) const = default;
};
using Flow = std::vector<LenDir>;

Flow to_flow(const ingest::TrafficWindow& w);

struct Range {
    std::uint32_t min_len = 0;
    std::uint32_t max_len = 0;
    Direction dir = Direction::Incoming;

    bool contains(const LenDir& p) const {
        return p.dir == dir && p.len >= min_len && p.len <= max_len;
    }
    auto operator<=>(const Range&) const = default;
};

struct Signature {
    int signature_id = -1;
    std::vector<Range> ranges;
    std::int64_t support_count = 0;

    std::size_t size() const { return ranges.size(); }
};

// Distance between two equal-length (length, direction) subarrays: Euclidean
// over lengths, or the maximal sentinel when any index has opposing
// directions. The sentinel is +infinity so no finite d can absorb it.
constexpr double kMaximalDistance = std::numeric_limits<double>::infinity();

double signature_distance(const Flow& a, const Flow& b);

std::vector<Signature> extract_signatures(const std::vector<Flow>& flows,
                                          const SignatureConfig& cfg);

// All start offsets in `flow` where the signature's ranges match.
std::vector<std::size_t> find_occurrences(const Signature& sig, const Flow& flow);

// Descending by support_count * length over the given windows; ties prefer
// the longer signature, then lexicographic ranges. Reassigns signature_id to
// the rank order.
std::vector<Signature> rank_signatures(std::vector<Signature> sigs,
                                       const std::vector<Flow>& windows);

struct Slot {
    int signature_id = -1;  // -1 = orphan
    int position = -1;

    bool orphan() const { return signature_id < 0; }
    bool operator==(const Slot&) const = default;
};

struct SignatureAssignment {
    std::vector<Slot> slots;  // one per packet
};

// Greedy by rank, left-to-right first-fit per signature; packets are never
// reassigned.
SignatureAssignment match_window(const Flow& window,
                                 const std::vector<Signature>& ranked);

struct FrameVocab {
    struct TokenInfo {
        bool is_signature = false;
        int signature_id = -1;
        int position = -1;
        std::uint32_t orphan_len = 0;
        Direction orphan_dir = Direction::Incoming;
        bool is_unk = false;
    };

    std::map<std::pair<int, int>, int> signature_tokens;             // (sig, pos) -> id
    std::map<std::pair<std::uint32_t, int>, int> orphan_tokens;      // (len, dir) -> id
    int unk_token = 0;

    int size() const { return unk_token + 1; }
    int token_for_slot(const Slot& slot, const LenDir& packet) const;
    int token_for_orphan(std::uint32_t len, Direction dir) const;
    TokenInfo lookup(int token) const;  // InvalidTokenError out of range
};

FrameVocab build_frame_vocab(const std::vector<SignatureAssignment>& assignments,
                             const std::vector<Flow>& windows,
                             const std::vector<Signature>& ranked);

struct TokenizedPacket {
    int frame_token = 0;
    int duration_token = 0;
    Direction direction = Direction::Incoming;
    ingest::ProtocolFlags protocol_flags{};
    std::optional<std::uint16_t> src_port;
    std::optional<std::uint16_t> dst_port;
};

struct TokenizedWindow {
    std::string device_id;
    std::vector<TokenizedPacket> packets;
};

TokenizedWindow tokenize_window(const ingest::TrafficWindow& window,
                                const SignatureAssignment& assignment,
                                const FrameVocab& vocab,
                                const durations::DurationModel& duration_model);

}  // namespace flowforge::sigs
