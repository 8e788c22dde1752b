#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "flowforge/pcap.hpp"
#include "flowforge/reconstruct.hpp"
#include "flowforge/rng.hpp"

namespace flowforge::synth {

struct AddressingConfig {
    std::string device_address = "10.0.0.2";
    std::string peer_prefix = "10.0.1.";  // peer pool: prefix + [0,255]
};

enum class HeaderStack : std::uint8_t {
    RawEther,   // no recognized layer; opaque payload after Ethernet
    Llc,        // 802.3 length + LLC header
    Arp,
    Eapol,
    Ipv4Raw,    // IPv4 with an opaque protocol payload
    Ipv4Icmp,
    Ipv4Tcp,
    Ipv4Udp,
};

struct PacketBlueprint {
    double timestamp = 0.0;
    std::uint32_t frame_length = 0;  // emitted frame length, post-clamp
    HeaderStack stack = HeaderStack::RawEther;
    std::string src_ip, dst_ip;
    std::uint16_t src_port = 0, dst_port = 0;
    std::uint32_t payload_len = 0;
    std::uint64_t payload_seed = 0;  // payload bytes derive from this
    std::uint8_t src_mac[6] = {0}, dst_mac[6] = {0};
    std::uint32_t seq = 0, ack = 0;  // TCP
    std::uint8_t ip_ttl = 64;
    std::uint16_t ip_id = 0;
    std::uint8_t raw_proto = 253;  // for Ipv4Raw
};

std::uint32_t header_overhead(HeaderStack stack);

// One blueprint per record: header stack from flags, addresses oriented by
// direction, mutable fields randomized, payload sized to hit the target frame
// length (clamped up to the minimum header size with a warning).
std::vector<PacketBlueprint> build_packets(const recon::SyntheticWindow& window,
                                           const AddressingConfig& addressing, Rng& rng);

// Serialize blueprints (timestamp order) to a classic pcap file with computed
// checksums; readable back through ingest::parse_capture.
void write_capture(const std::vector<PacketBlueprint>& blueprints,
                   const std::filesystem::path& path);

// byte-level rendering of a single blueprint (exposed for tests)
std::vector<std::uint8_t> render_frame(const PacketBlueprint& bp);

}  // namespace flowforge::synth
