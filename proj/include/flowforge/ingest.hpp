#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "flowforge/pcap.hpp"

namespace flowforge::ingest {

enum class Direction : std::uint8_t { Incoming = 0, Outgoing = 1 };

inline const char* to_string(Direction d) {
    return d == Direction::Outgoing ? "Outgoing" : "Incoming";
}

// Fixed flag order; every record carries exactly these 16 bits.
enum ProtoBit : int {
    PROTO_ARP = 0, PROTO_LLC, PROTO_IP, PROTO_ICMP, PROTO_ICMPV6, PROTO_EAPOL,
    PROTO_TCP, PROTO_UDP, PROTO_HTTP, PROTO_HTTPS, PROTO_DHCP, PROTO_BOOTP,
    PROTO_SSDP, PROTO_DNS, PROTO_MDNS, PROTO_NTP, kProtoCount
};

extern const std::array<const char*, kProtoCount> kProtoNames;

using ProtocolFlags = std::array<std::uint8_t, kProtoCount>;

struct RawPacket {
    double timestamp = 0.0;
    std::uint32_t frame_length = 0;
    std::string src_address;  // empty when the frame carries no network address
    std::string dst_address;
    std::optional<std::uint16_t> src_port;
    std::optional<std::uint16_t> dst_port;
    ProtocolFlags protocol_flags{};
};

struct PacketRecord {
    std::uint32_t frame_length = 0;
    Direction direction = Direction::Incoming;
    double duration = 0.0;  // seconds until the next packet; 0 for the last
    std::optional<std::uint16_t> src_port;
    std::optional<std::uint16_t> dst_port;
    ProtocolFlags protocol_flags{};
    std::string capture_id;
    std::string device_id;
};

struct TrafficWindow {
    std::string device_id;
    std::vector<PacketRecord> packets;  // exactly L, consecutive, one capture
};

struct WindowRef {
    std::string capture_id;
    std::size_t start_offset = 0;
};

// Dissect one link-layer frame. Frames that cannot be parsed yield a packet
// with all-zero flags and a warning, never a throw.
RawPacket dissect_frame(const pcap::CapturedFrame& frame);

// Port-derived application flags (HTTP/HTTPS/DNS/MDNS/SSDP/NTP/DHCP/BOOTP)
// given already-set transport flags. Shared by the dissector and the
// synthesizer so both sides stay consistent.
void derive_app_flags(ProtocolFlags& flags, std::optional<std::uint16_t> src_port,
                      std::optional<std::uint16_t> dst_port);

std::vector<RawPacket> parse_capture(const std::filesystem::path& path);

// Most common address across src and dst; lexicographic tie-break. Throws
// EmptyCaptureError when no packet carries an address.
std::string infer_device_address(const std::vector<RawPacket>& raws);

std::vector<PacketRecord> normalize(std::vector<RawPacket> raws,
                                    const std::string& device_address,
                                    const std::string& capture_id,
                                    const std::string& device_id);

// Uniform sample (without replacement) of L-length windows over all valid
// (capture, offset) pairs. Returns min(n, available) windows, sorted by
// (capture index, offset); fills `manifest` with the picked refs when given.
std::vector<TrafficWindow> make_windows(
    const std::vector<std::vector<PacketRecord>>& captures,
    int window_len, int count, std::uint64_t seed,
    std::vector<WindowRef>* manifest = nullptr);

void write_records_jsonl(const std::filesystem::path& path,
                         const std::vector<PacketRecord>& records);
std::vector<PacketRecord> read_records_jsonl(const std::filesystem::path& path);

std::string record_to_json_line(const PacketRecord& r);
PacketRecord record_from_json_line(const std::string& line);

}  // namespace flowforge::ingest
