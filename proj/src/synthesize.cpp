#include "flowforge/synthesize.hpp"

#include <algorithm>
#include <cstring>

#include "flowforge/common.hpp"
#include "flowforge/ingest.hpp"

namespace flowforge::synth {

namespace {

constexpr std::uint32_t kEther = 14;
constexpr std::uint32_t kIpv4 = 20;
constexpr std::uint32_t kTcp = 20;
constexpr std::uint32_t kUdp = 8;
constexpr std::uint32_t kIcmp = 8;
constexpr std::uint32_t kLlc = 3;
constexpr std::uint32_t kArpBody = 28;

void wr16(std::vector<std::uint8_t>& v, std::size_t off, std::uint16_t x) {
    v[off] = static_cast<std::uint8_t>(x >> 8);
    v[off + 1] = static_cast<std::uint8_t>(x & 0xff);
}

void wr32(std::vector<std::uint8_t>& v, std::size_t off, std::uint32_t x) {
    v[off] = static_cast<std::uint8_t>(x >> 24);
    v[off + 1] = static_cast<std::uint8_t>((x >> 16) & 0xff);
    v[off + 2] = static_cast<std::uint8_t>((x >> 8) & 0xff);
    v[off + 3] = static_cast<std::uint8_t>(x & 0xff);
}

bool parse_ipv4(const std::string& s, std::uint8_t out[4]) {
    unsigned a, b, c, d;
    if (std::sscanf(s.c_str(), "%u.%u.%u.%u", &a, &b, &c, &d) != 4) return false;
    if (a > 255 || b > 255 || c > 255 || d > 255) return false;
    out[0] = static_cast<std::uint8_t>(a);
    out[1] = static_cast<std::uint8_t>(b);
    out[2] = static_cast<std::uint8_t>(c);
    out[3] = static_cast<std::uint8_t>(d);
    return true;
}

std::uint16_t ones_complement_sum(const std::uint8_t* data, std::size_t len,
                                  std::uint32_t init = 0) {
    std::uint32_t sum = init;
    for (std::size_t i = 0; i + 1 < len; i += 2)
        sum += static_cast<std::uint32_t>((data[i] << 8) | data[i + 1]);
    if (len & 1) sum += static_cast<std::uint32_t>(data[len - 1] << 8);
    while (sum >> 16) sum = (sum & 0xffff) + (sum >> 16);
    return static_cast<std::uint16_t>(~sum & 0xffff);
}

}  // namespace

std::uint32_t header_overhead(HeaderStack stack) {
    switch (stack) {
        case HeaderStack::RawEther: return kEther;
        case HeaderStack::Llc: return kEther + kLlc;
        case HeaderStack::Arp: return kEther + kArpBody;
        case HeaderStack::Eapol: return kEther + 4;
        case HeaderStack::Ipv4Raw: return kEther + kIpv4;
        case HeaderStack::Ipv4Icmp: return kEther + kIpv4 + kIcmp;
        case HeaderStack::Ipv4Tcp: return kEther + kIpv4 + kTcp;
        case HeaderStack::Ipv4Udp: return kEther + kIpv4 + kUdp;
    }
    return kEther;
}

std::vector<PacketBlueprint> build_packets(const recon::SyntheticWindow& window,
                                           const AddressingConfig& addressing, Rng& rng) {
    std::vector<PacketBlueprint> out;
    out.reserve(window.packets.size());
    double t = 0.0;
    std::uint8_t device_mac[6] = {0x02, 0x00, 0x00, 0x00, 0x00, 0x01};
    std::uint8_t peer_mac[6] = {0x02, 0x00, 0x00, 0x00, 0x00, 0x02};

    for (const auto& rec : window.packets) {
        PacketBlueprint bp;
        bp.timestamp = t;
        t += rec.duration;

        const auto& f = rec.protocol_flags;
        if (f[ingest::PROTO_TCP])
            bp.stack = HeaderStack::Ipv4Tcp;
        else if (f[ingest::PROTO_UDP])
            bp.stack = HeaderStack::Ipv4Udp;
        else if (f[ingest::PROTO_ICMP])
            bp.stack = HeaderStack::Ipv4Icmp;
        else if (f[ingest::PROTO_IP])
            bp.stack = HeaderStack::Ipv4Raw;
        else if (f[ingest::PROTO_ARP])
            bp.stack = HeaderStack::Arp;
        else if (f[ingest::PROTO_EAPOL])
            bp.stack = HeaderStack::Eapol;
        else if (f[ingest::PROTO_LLC])
            bp.stack = HeaderStack::Llc;
        else
            bp.stack = HeaderStack::RawEther;
        if (f[ingest::PROTO_ICMPV6]) bp.stack = HeaderStack::Ipv4Raw;  // payload stand-in

        const std::string peer =
            addressing.peer_prefix + std::to_string(rng.uniform_u64(256));
        const bool outgoing = rec.direction == ingest::Direction::Outgoing;
        bp.src_ip = outgoing ? addressing.device_address : peer;
        bp.dst_ip = outgoing ? peer : addressing.device_address;
        std::memcpy(bp.src_mac, outgoing ? device_mac : peer_mac, 6);
        std::memcpy(bp.dst_mac, outgoing ? peer_mac : device_mac, 6);

        bp.src_port = rec.src_port.value_or(
            static_cast<std::uint16_t>(49152 + rng.uniform_u64(16384)));
        bp.dst_port = rec.dst_port.value_or(
            static_cast<std::uint16_t>(49152 + rng.uniform_u64(16384)));

        // mutable fields not covered by the metadata get random values
        bp.ip_ttl = static_cast<std::uint8_t>(32 + rng.uniform_u64(96));
        bp.ip_id = static_cast<std::uint16_t>(rng.uniform_u64(65536));
        bp.seq = static_cast<std::uint32_t>(rng.next_u64());
        bp.ack = static_cast<std::uint32_t>(rng.next_u64());
        bp.payload_seed = rng.next_u64();
        if (f[ingest::PROTO_ICMPV6]) bp.raw_proto = 58;

        const std::uint32_t overhead = header_overhead(bp.stack);
        std::uint32_t frame_len = rec.frame_length;
        if (frame_len < overhead) {
            log_warn("frame length " + std::to_string(frame_len) +
                     " below minimum header size " + std::to_string(overhead) +
                     ", clamped up");
            frame_len = overhead;
        }
        bp.frame_length = frame_len;
        bp.payload_len = frame_len - overhead;
        out.push_back(std::move(bp));
    }
    return out;
}

std::vector<std::uint8_t> render_frame(const PacketBlueprint& bp) {
    std::vector<std::uint8_t> frame(bp.frame_length, 0);
    // Ethernet
    std::memcpy(frame.data(), bp.dst_mac, 6);
    std::memcpy(frame.data() + 6, bp.src_mac, 6);

    Rng payload_rng(bp.payload_seed);
    auto fill_payload = [&](std::size_t off, std::size_t len) {
        for (std::size_t i = 0; i < len; ++i)
            frame[off + i] = static_cast<std::uint8_t>(payload_rng.uniform_u64(256));
    };

    std::uint8_t src4[4] = {0}, dst4[4] = {0};
    parse_ipv4(bp.src_ip, src4);
    parse_ipv4(bp.dst_ip, dst4);

    switch (bp.stack) {
        case HeaderStack::RawEther: {
            wr16(frame, 12, 0x88b5);  // local experimental ethertype
            fill_payload(kEther, frame.size() - kEther);
            return frame;
        }
        case HeaderStack::Llc: {
            const std::uint16_t len = static_cast<std::uint16_t>(frame.size() - kEther);
            wr16(frame, 12, len);  // 802.3 length
            frame[14] = 0xaa;      // SNAP DSAP/SSAP/control
            frame[15] = 0xaa;
            frame[16] = 0x03;
            fill_payload(kEther + kLlc, frame.size() - kEther - kLlc);
            return frame;
        }
        case HeaderStack::Arp: {
            wr16(frame, 12, 0x0806);
            wr16(frame, 14, 1);       // hardware: ethernet
            wr16(frame, 16, 0x0800);  // protocol: IPv4
            frame[18] = 6;
            frame[19] = 4;
            wr16(frame, 20, 1);  // opcode: request
            std::memcpy(frame.data() + 22, bp.src_mac, 6);
            std::memcpy(frame.data() + 28, src4, 4);
            std::memcpy(frame.data() + 32, bp.dst_mac, 6);
            std::memcpy(frame.data() + 38, dst4, 4);
            if (frame.size() > kEther + kArpBody)
                fill_payload(kEther + kArpBody, frame.size() - kEther - kArpBody);
            return frame;
        }
        case HeaderStack::Eapol: {
            wr16(frame, 12, 0x888e);
            frame[14] = 2;  // version
            frame[15] = 3;  // type: key
            wr16(frame, 16, static_cast<std::uint16_t>(frame.size() - kEther - 4));
            if (frame.size() > kEther + 4)
                fill_payload(kEther + 4, frame.size() - kEther - 4);
            return frame;
        }
        default:
            break;  // IPv4 family handled below
    }

    // IPv4 header
    wr16(frame, 12, 0x0800);
    const std::size_t ip = kEther;
    const std::uint16_t total_len = static_cast<std::uint16_t>(frame.size() - kEther);
    frame[ip] = 0x45;
    frame[ip + 1] = 0;
    wr16(frame, ip + 2, total_len);
    wr16(frame, ip + 4, bp.ip_id);
    wr16(frame, ip + 6, 0x4000);  // don't fragment
    frame[ip + 8] = bp.ip_ttl;
    std::uint8_t proto = bp.raw_proto;
    if (bp.stack == HeaderStack::Ipv4Icmp) proto = 1;
    if (bp.stack == HeaderStack::Ipv4Tcp) proto = 6;
    if (bp.stack == HeaderStack::Ipv4Udp) proto = 17;
    frame[ip + 9] = proto;
    std::memcpy(frame.data() + ip + 12, src4, 4);
    std::memcpy(frame.data() + ip + 16, dst4, 4);
    wr16(frame, ip + 10, ones_complement_sum(frame.data() + ip, kIpv4));

    const std::size_t l4 = ip + kIpv4;
    const std::size_t l4_len = frame.size() - l4;
    auto l4_checksum = [&](std::size_t csum_off) {
        // pseudo-header: src, dst, zero/proto, l4 length
        std::uint32_t sum = 0;
        sum += static_cast<std::uint32_t>((src4[0] << 8) | src4[1]);
        sum += static_cast<std::uint32_t>((src4[2] << 8) | src4[3]);
        sum += static_cast<std::uint32_t>((dst4[0] << 8) | dst4[1]);
        sum += static_cast<std::uint32_t>((dst4[2] << 8) | dst4[3]);
        sum += proto;
        sum += static_cast<std::uint32_t>(l4_len);
        wr16(frame, csum_off, 0);
        const std::uint16_t csum =
            ones_complement_sum(frame.data() + l4, l4_len, sum);
        wr16(frame, csum_off, csum == 0 ? 0xffff : csum);
    };

    switch (bp.stack) {
        case HeaderStack::Ipv4Raw:
            fill_payload(l4, l4_len);
            break;
        case HeaderStack::Ipv4Icmp:
            frame[l4] = 8;  // echo request
            frame[l4 + 1] = 0;
            wr16(frame, l4 + 4, bp.ip_id);
            wr16(frame, l4 + 6, 1);
            fill_payload(l4 + kIcmp, l4_len - kIcmp);
            wr16(frame, l4 + 2, 0);
            wr16(frame, l4 + 2, ones_complement_sum(frame.data() + l4, l4_len));
            break;
        case HeaderStack::Ipv4Tcp: {
            wr16(frame, l4, bp.src_port);
            wr16(frame, l4 + 2, bp.dst_port);
            wr32(frame, l4 + 4, bp.seq);
            wr32(frame, l4 + 8, bp.ack);
            frame[l4 + 12] = 0x50;  // data offset 5 words
            frame[l4 + 13] = 0x18;  // PSH|ACK
            wr16(frame, l4 + 14, 0xffff);
            fill_payload(l4 + kTcp, l4_len - kTcp);
            l4_checksum(l4 + 16);
            break;
        }
        case HeaderStack::Ipv4Udp: {
            wr16(frame, l4, bp.src_port);
            wr16(frame, l4 + 2, bp.dst_port);
            wr16(frame, l4 + 4, static_cast<std::uint16_t>(l4_len));
            fill_payload(l4 + kUdp, l4_len - kUdp);
            l4_checksum(l4 + 6);
            break;
        }
        default:
            break;
    }
    return frame;
}

void write_capture(const std::vector<PacketBlueprint>& blueprints,
                   const std::filesystem::path& path) {
    std::vector<pcap::CapturedFrame> frames;
    frames.reserve(blueprints.size());
    for (const auto& bp : blueprints) {
        pcap::CapturedFrame f;
        f.timestamp = bp.timestamp;
        f.bytes = render_frame(bp);
        f.orig_len = static_cast<std::uint32_t>(f.bytes.size());
        frames.push_back(std::move(f));
    }
    pcap::write_pcap(path, frames);
}

}  // namespace flowforge::synth
