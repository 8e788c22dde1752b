#include "flowforge/ingest.hpp"

#include <arpa/inet.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>

#include <nlohmann/json.hpp>

#include "flowforge/common.hpp"
#include "flowforge/rng.hpp"

using ordered_json = nlohmann::ordered_json;

namespace flowforge::ingest {

const std::array<const char*, kProtoCount> kProtoNames = {
    "ARP", "LLC", "IP", "ICMP", "ICMPv6", "EAPOL", "TCP", "UDP",
    "HTTP", "HTTPS", "DHCP", "BOOTP", "SSDP", "DNS", "MDNS", "NTP",
};

namespace {

std::uint16_t rd16(const std::uint8_t* p) {
    return static_cast<std::uint16_t>((p[0] << 8) | p[1]);
}

std::string ipv4_str(const std::uint8_t* p) {
    char buf[INET_ADDRSTRLEN];
    inet_ntop(AF_INET, p, buf, sizeof(buf));
    return buf;
}

std::string ipv6_str(const std::uint8_t* p) {
    char buf[INET6_ADDRSTRLEN];
    inet_ntop(AF_INET6, p, buf, sizeof(buf));
    return buf;
}

}  // namespace

// Application flags are inferred from well-known ports on the detected
// transport (HTTPS == TCP/443); the payload is never inspected.
void derive_app_flags(ProtocolFlags& f, std::optional<std::uint16_t> src_port,
                      std::optional<std::uint16_t> dst_port) {
    const auto has_port = [&](std::uint16_t port) {
        return (src_port && *src_port == port) || (dst_port && *dst_port == port);
    };
    for (int bit : {PROTO_HTTP, PROTO_HTTPS, PROTO_DHCP, PROTO_BOOTP, PROTO_SSDP,
                    PROTO_DNS, PROTO_MDNS, PROTO_NTP})
        f[static_cast<std::size_t>(bit)] = 0;
    if (f[PROTO_TCP]) {
        if (has_port(80) || has_port(8080)) f[PROTO_HTTP] = 1;
        if (has_port(443)) f[PROTO_HTTPS] = 1;
        if (has_port(53)) f[PROTO_DNS] = 1;
    }
    if (f[PROTO_UDP]) {
        if (has_port(53)) f[PROTO_DNS] = 1;
        if (has_port(5353)) f[PROTO_MDNS] = 1;
        if (has_port(1900)) f[PROTO_SSDP] = 1;
        if (has_port(123)) f[PROTO_NTP] = 1;
        if (has_port(67) || has_port(68)) {
            f[PROTO_BOOTP] = 1;  // DHCP rides the BOOTP frame format
            f[PROTO_DHCP] = 1;
        }
    }
}

RawPacket dissect_frame(const pcap::CapturedFrame& frame) {
    RawPacket pkt;
    pkt.timestamp = frame.timestamp;
    pkt.frame_length = frame.orig_len ? frame.orig_len
                                      : static_cast<std::uint32_t>(frame.bytes.size());
    if (pkt.frame_length == 0) {
        pkt.frame_length = 1;
        log_warn("zero-length frame, clamped to 1");
    }

    const std::uint8_t* p = frame.bytes.data();
    std::size_t len = frame.bytes.size();
    if (len < 14) {
        log_warn("frame too short for Ethernet header, flags left zero");
        return pkt;
    }

    std::size_t off = 12;
    std::uint16_t ethertype = rd16(p + off);
    off += 2;
    // Step over up to two VLAN tags.
    for (int i = 0; i < 2 && (ethertype == 0x8100 || ethertype == 0x88a8); ++i) {
        if (len < off + 4) {
            log_warn("truncated VLAN tag, flags left zero");
            return pkt;
        }
        ethertype = rd16(p + off + 2);
        off += 4;
    }

    auto& f = pkt.protocol_flags;
    if (ethertype < 1536) {
        f[PROTO_LLC] = 1;
        return pkt;
    }

    switch (ethertype) {
        case 0x0806:
            f[PROTO_ARP] = 1;
            return pkt;
        case 0x888e:
            f[PROTO_EAPOL] = 1;
            return pkt;
        case 0x0800: {  // IPv4
            if (len < off + 20) {
                log_warn("truncated IPv4 header, flags left zero");
                pkt.protocol_flags = {};
                return pkt;
            }
            const std::uint8_t ihl = static_cast<std::uint8_t>(p[off] & 0x0f);
            const std::size_t ip_hdr = static_cast<std::size_t>(ihl) * 4;
            if (ihl < 5 || len < off + ip_hdr) {
                log_warn("bad IPv4 header length, flags left zero");
                pkt.protocol_flags = {};
                return pkt;
            }
            f[PROTO_IP] = 1;
            const std::uint8_t proto = p[off + 9];
            pkt.src_address = ipv4_str(p + off + 12);
            pkt.dst_address = ipv4_str(p + off + 16);
            const std::size_t l4 = off + ip_hdr;
            if (proto == 1) {
                f[PROTO_ICMP] = 1;
            } else if (proto == 6 || proto == 17) {
                f[proto == 6 ? PROTO_TCP : PROTO_UDP] = 1;
                if (len >= l4 + 4) {
                    pkt.src_port = rd16(p + l4);
                    pkt.dst_port = rd16(p + l4 + 2);
                }
            }
            break;
        }
        case 0x86dd: {  // IPv6
            if (len < off + 40) {
                log_warn("truncated IPv6 header, flags left zero");
                pkt.protocol_flags = {};
                return pkt;
            }
            f[PROTO_IP] = 1;
            const std::uint8_t next = p[off + 6];
            pkt.src_address = ipv6_str(p + off + 8);
            pkt.dst_address = ipv6_str(p + off + 24);
            const std::size_t l4 = off + 40;
            if (next == 58) {
                f[PROTO_ICMPV6] = 1;
            } else if (next == 6 || next == 17) {
                f[next == 6 ? PROTO_TCP : PROTO_UDP] = 1;
                if (len >= l4 + 4) {
                    pkt.src_port = rd16(p + l4);
                    pkt.dst_port = rd16(p + l4 + 2);
                }
            }
            break;
        }
        default:
            // Unlisted ethertype: no flags to set.
            return pkt;
    }

    derive_app_flags(pkt.protocol_flags, pkt.src_port, pkt.dst_port);
    return pkt;
}

std::vector<RawPacket> parse_capture(const std::filesystem::path& path) {
    const auto frames = pcap::read_capture(path);
    std::vector<RawPacket> raws;
    raws.reserve(frames.size());
    for (const auto& fr : frames) raws.push_back(dissect_frame(fr));
    return raws;
}

std::string infer_device_address(const std::vector<RawPacket>& raws) {
    std::map<std::string, std::size_t> counts;
    for (const auto& r : raws) {
        if (!r.src_address.empty()) ++counts[r.src_address];
        if (!r.dst_address.empty()) ++counts[r.dst_address];
    }
    if (counts.empty()) throw EmptyCaptureError("no addressed packets in capture");
    // std::map iterates in key order, so the first max is the smallest key.
    std::string best;
    std::size_t best_count = 0;
    for (const auto& [addr, count] : counts) {
        if (count > best_count) {
            best = addr;
            best_count = count;
        }
    }
    return best;
}

std::vector<PacketRecord> normalize(std::vector<RawPacket> raws,
                                    const std::string& device_address,
                                    const std::string& capture_id,
                                    const std::string& device_id) {
    std::stable_sort(raws.begin(), raws.end(),
                     [](const RawPacket& a, const RawPacket& b) {
                         return a.timestamp < b.timestamp;
                     });
    std::vector<PacketRecord> out;
    out.reserve(raws.size());
    for (std::size_t i = 0; i < raws.size(); ++i) {
        const auto& r = raws[i];
        PacketRecord rec;
        rec.frame_length = r.frame_length;
        rec.direction = (!r.src_address.empty() && r.src_address == device_address)
                            ? Direction::Outgoing
                            : Direction::Incoming;
        rec.duration = (i + 1 < raws.size()) ? raws[i + 1].timestamp - r.timestamp : 0.0;
        if (rec.duration < 0.0) rec.duration = 0.0;
        rec.src_port = r.src_port;
        rec.dst_port = r.dst_port;
        rec.protocol_flags = r.protocol_flags;
        rec.capture_id = capture_id;
        rec.device_id = device_id;
        out.push_back(std::move(rec));
    }
    return out;
}

std::vector<TrafficWindow> make_windows(
    const std::vector<std::vector<PacketRecord>>& captures,
    int window_len, int count, std::uint64_t seed,
    std::vector<WindowRef>* manifest) {
    if (window_len < 2) throw ConfigError("window length must be >= 2");
    if (count < 1) throw ConfigError("window count must be >= 1");

    struct Cand {
        std::size_t cap;
        std::size_t off;
    };
    std::vector<Cand> cands;
    for (std::size_t c = 0; c < captures.size(); ++c) {
        const auto& cap = captures[c];
        if (cap.size() < static_cast<std::size_t>(window_len)) continue;
        for (std::size_t o = 0; o + window_len <= cap.size(); ++o)
            cands.push_back({c, o});
    }

    Rng rng(seed);
    rng.shuffle(cands);
    std::size_t take = std::min<std::size_t>(cands.size(), static_cast<std::size_t>(count));
    if (take < static_cast<std::size_t>(count)) {
        log_warn("requested " + std::to_string(count) + " windows but only " +
                 std::to_string(take) + " are available");
    }
    cands.resize(take);
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
        return a.cap != b.cap ? a.cap < b.cap : a.off < b.off;
    });

    std::vector<TrafficWindow> windows;
    windows.reserve(take);
    for (const auto& cd : cands) {
        const auto& cap = captures[cd.cap];
        TrafficWindow w;
        w.device_id = cap.front().device_id;
        w.packets.assign(cap.begin() + static_cast<std::ptrdiff_t>(cd.off),
                         cap.begin() + static_cast<std::ptrdiff_t>(cd.off + window_len));
        windows.push_back(std::move(w));
        if (manifest) manifest->push_back({cap.front().capture_id, cd.off});
    }
    return windows;
}

std::string record_to_json_line(const PacketRecord& r) {
    ordered_json j;
    j["frame_length"] = r.frame_length;
    j["direction"] = to_string(r.direction);
    j["duration"] = r.duration;
    j["src_port"] = r.src_port ? ordered_json(*r.src_port) : ordered_json(nullptr);
    j["dst_port"] = r.dst_port ? ordered_json(*r.dst_port) : ordered_json(nullptr);
    j["protocol_flags"] = r.protocol_flags;
    j["capture_id"] = r.capture_id;
    j["device_id"] = r.device_id;
    return j.dump();
}

PacketRecord record_from_json_line(const std::string& line) {
    const auto j = ordered_json::parse(line);
    PacketRecord r;
    r.frame_length = j.at("frame_length").get<std::uint32_t>();
    r.direction = j.at("direction").get<std::string>() == "Outgoing"
                      ? Direction::Outgoing
                      : Direction::Incoming;
    r.duration = j.at("duration").get<double>();
    if (!j.at("src_port").is_null()) r.src_port = j.at("src_port").get<std::uint16_t>();
    if (!j.at("dst_port").is_null()) r.dst_port = j.at("dst_port").get<std::uint16_t>();
    const auto& flags = j.at("protocol_flags");
    for (int i = 0; i < kProtoCount; ++i)
        r.protocol_flags[static_cast<std::size_t>(i)] = flags.at(static_cast<std::size_t>(i)).get<std::uint8_t>();
    r.capture_id = j.at("capture_id").get<std::string>();
    r.device_id = j.at("device_id").get<std::string>();
    return r;
}

void write_records_jsonl(const std::filesystem::path& path,
                         const std::vector<PacketRecord>& records) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    for (const auto& r : records) out << record_to_json_line(r) << "\n";
    if (!out) throw IoError("write failed: " + path.string());
}

std::vector<PacketRecord> read_records_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path.string());
    std::vector<PacketRecord> records;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        records.push_back(record_from_json_line(line));
    }
    return records;
}

}  // namespace flowforge::ingest
