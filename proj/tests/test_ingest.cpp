#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <vector>

#include "flowforge/common.hpp"
#include "flowforge/ingest.hpp"
#include "flowforge/rng.hpp"

using namespace flowforge;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "flowforge_ingest_tests";
    fs::create_directories(dir);
    return dir / name;
}

// Hand-assembled test fixtures: every byte below was written out by hand from
// the header layouts, independent of the library's writer.
struct Bytes {
    std::vector<std::uint8_t> data;

    void u8(std::uint8_t v) { data.push_back(v); }
    void be16(std::uint16_t v) {
        data.push_back(static_cast<std::uint8_t>(v >> 8));
        data.push_back(static_cast<std::uint8_t>(v & 0xff));
    }
    void be32(std::uint32_t v) {
        be16(static_cast<std::uint16_t>(v >> 16));
        be16(static_cast<std::uint16_t>(v & 0xffff));
    }
    void le16(std::uint16_t v) {
        data.push_back(static_cast<std::uint8_t>(v & 0xff));
        data.push_back(static_cast<std::uint8_t>(v >> 8));
    }
    void le32(std::uint32_t v) {
        le16(static_cast<std::uint16_t>(v & 0xffff));
        le16(static_cast<std::uint16_t>(v >> 16));
    }
    void raw(std::initializer_list<std::uint8_t> bytes) {
        data.insert(data.end(), bytes.begin(), bytes.end());
    }
    void pad(std::size_t n, std::uint8_t fill = 0) { data.insert(data.end(), n, fill); }
};

// Ethernet + IPv4 + TCP frame, no options, no payload checksum fidelity
// (checksums zero; the dissector does not verify them).
std::vector<std::uint8_t> tcp_frame(const std::uint8_t src_ip[4],
                                    const std::uint8_t dst_ip[4], std::uint16_t sport,
                                    std::uint16_t dport, std::size_t payload) {
    Bytes b;
    b.raw({0x02, 0, 0, 0, 0, 0x02});  // dst mac
    b.raw({0x02, 0, 0, 0, 0, 0x01});  // src mac
    b.be16(0x0800);
    // IPv4
    b.u8(0x45);
    b.u8(0);
    b.be16(static_cast<std::uint16_t>(20 + 20 + payload));
    b.be16(0x1234);
    b.be16(0x4000);
    b.u8(64);
    b.u8(6);  // TCP
    b.be16(0);
    b.data.insert(b.data.end(), src_ip, src_ip + 4);
    b.data.insert(b.data.end(), dst_ip, dst_ip + 4);
    // TCP
    b.be16(sport);
    b.be16(dport);
    b.be32(1);
    b.be32(0);
    b.u8(0x50);
    b.u8(0x02);  // SYN
    b.be16(0xffff);
    b.be16(0);
    b.be16(0);
    b.pad(payload, 0xab);
    return b.data;
}

void write_classic_pcap(const fs::path& path,
                        const std::vector<std::pair<double, std::vector<std::uint8_t>>>& pkts) {
    Bytes b;
    b.le32(0xa1b2c3d4);
    b.le16(2);
    b.le16(4);
    b.le32(0);
    b.le32(0);
    b.le32(65535);
    b.le32(1);  // ethernet
    for (const auto& [ts, frame] : pkts) {
        b.le32(static_cast<std::uint32_t>(ts));
        b.le32(static_cast<std::uint32_t>((ts - static_cast<std::uint32_t>(ts)) * 1e6 + 0.5));
        b.le32(static_cast<std::uint32_t>(frame.size()));
        b.le32(static_cast<std::uint32_t>(frame.size()));
        b.data.insert(b.data.end(), frame.begin(), frame.end());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(b.data.data()),
              static_cast<std::streamsize>(b.data.size()));
}

const std::uint8_t kDeviceIp[4] = {192, 168, 1, 10};
const std::uint8_t kServerIp[4] = {93, 184, 216, 34};

}  // namespace

TEST_CASE("hand-crafted TCP handshake dissects to the expected field dump") {
    // Frozen expectations derived by hand from the byte offsets above.
    const auto path = temp_file("handshake.pcap");
    write_classic_pcap(path, {
        {100.0, tcp_frame(kDeviceIp, kServerIp, 52100, 443, 0)},
        {100.25, tcp_frame(kServerIp, kDeviceIp, 443, 52100, 0)},
        {100.75, tcp_frame(kDeviceIp, kServerIp, 52100, 443, 10)},
    });

    const auto raws = ingest::parse_capture(path);
    REQUIRE(raws.size() == 3);

    CHECK(raws[0].frame_length == 54);
    CHECK(raws[0].src_address == "192.168.1.10");
    CHECK(raws[0].dst_address == "93.184.216.34");
    REQUIRE(raws[0].src_port.has_value());
    CHECK(*raws[0].src_port == 52100);
    CHECK(*raws[0].dst_port == 443);
    CHECK(raws[0].protocol_flags[ingest::PROTO_IP] == 1);
    CHECK(raws[0].protocol_flags[ingest::PROTO_TCP] == 1);
    CHECK(raws[0].protocol_flags[ingest::PROTO_HTTPS] == 1);  // TCP/443 rule
    CHECK(raws[0].protocol_flags[ingest::PROTO_UDP] == 0);
    CHECK(raws[0].protocol_flags[ingest::PROTO_ARP] == 0);

    CHECK(raws[1].src_address == "93.184.216.34");
    CHECK(*raws[1].src_port == 443);
    CHECK(raws[2].frame_length == 64);  // 54 + 10 payload
    CHECK(raws[0].timestamp == doctest::Approx(100.0));
    CHECK(raws[1].timestamp == doctest::Approx(100.25));
}

TEST_CASE("empty capture file yields an empty list with a warning") {
    const auto path = temp_file("empty.pcap");
    write_classic_pcap(path, {});
    const auto before = warn_count();
    const auto raws = ingest::parse_capture(path);
    CHECK(raws.empty());
    CHECK(warn_count() > before);
}

TEST_CASE("random bytes raise CaptureParseError") {
    const auto path = temp_file("garbage.bin");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    for (int i = 0; i < 300; ++i) out.put(static_cast<char>((i * 37 + 11) & 0xff));
    out.close();
    CHECK_THROWS_AS(ingest::parse_capture(path), CaptureParseError);
}

TEST_CASE("truncated record body raises CaptureParseError") {
    const auto path = temp_file("truncated.pcap");
    write_classic_pcap(path, {{1.0, tcp_frame(kDeviceIp, kServerIp, 1, 2, 0)}});
    // chop the last 10 bytes off
    auto size = fs::file_size(path);
    fs::resize_file(path, size - 10);
    CHECK_THROWS_AS(ingest::parse_capture(path), CaptureParseError);
}

TEST_CASE("pcapng EPB frames parse with timestamp resolution") {
    Bytes b;
    // SHB
    b.le32(0x0a0d0d0a);
    b.le32(28);
    b.le32(0x1a2b3c4d);
    b.le16(1);
    b.le16(0);
    b.le32(0xffffffff);
    b.le32(0xffffffff);  // section length -1
    b.le32(28);
    // IDB: ethernet, snaplen 0, no options
    b.le32(0x00000001);
    b.le32(20);
    b.le16(1);
    b.le16(0);
    b.le32(0);
    b.le32(20);
    // EPB with a small LLC frame (ethertype < 1536)
    std::vector<std::uint8_t> frame = {2, 0, 0, 0, 0, 2, 2, 0, 0, 0, 0, 1, 0x00, 0x10,
                                        0xaa, 0xaa, 0x03, 0, 0, 0};
    const std::uint32_t padded = (static_cast<std::uint32_t>(frame.size()) + 3u) & ~3u;
    b.le32(0x00000006);
    b.le32(32 + padded);
    b.le32(0);  // interface 0
    // timestamp 3.5 s at default 1e-6 resolution = 3500000
    b.le32(0);
    b.le32(3500000);
    b.le32(static_cast<std::uint32_t>(frame.size()));
    b.le32(static_cast<std::uint32_t>(frame.size()));
    b.data.insert(b.data.end(), frame.begin(), frame.end());
    b.pad(padded - frame.size());
    b.le32(32 + padded);

    const auto path = temp_file("sample.pcapng");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(b.data.data()),
              static_cast<std::streamsize>(b.data.size()));
    out.close();

    const auto raws = ingest::parse_capture(path);
    REQUIRE(raws.size() == 1);
    CHECK(raws[0].timestamp == doctest::Approx(3.5));
    CHECK(raws[0].protocol_flags[ingest::PROTO_LLC] == 1);
    CHECK(raws[0].src_address.empty());
}

TEST_CASE("short frame dissects to all-zero flags with a warning") {
    pcap::CapturedFrame f;
    f.timestamp = 1.0;
    f.orig_len = 5;
    f.bytes = {1, 2, 3, 4, 5};
    const auto before = warn_count();
    const auto pkt = ingest::dissect_frame(f);
    CHECK(warn_count() > before);
    for (int i = 0; i < ingest::kProtoCount; ++i)
        CHECK(pkt.protocol_flags[static_cast<std::size_t>(i)] == 0);
    CHECK(pkt.frame_length == 5);
}

TEST_CASE("ARP, EAPOL and VLAN-tagged frames set the right flags") {
    Bytes arp;
    arp.raw({2, 0, 0, 0, 0, 2, 2, 0, 0, 0, 0, 1});
    arp.be16(0x0806);
    arp.pad(28);
    pcap::CapturedFrame f;
    f.bytes = arp.data;
    f.orig_len = static_cast<std::uint32_t>(arp.data.size());
    auto pkt = ingest::dissect_frame(f);
    CHECK(pkt.protocol_flags[ingest::PROTO_ARP] == 1);
    CHECK(pkt.protocol_flags[ingest::PROTO_IP] == 0);

    Bytes eapol;
    eapol.raw({2, 0, 0, 0, 0, 2, 2, 0, 0, 0, 0, 1});
    eapol.be16(0x888e);
    eapol.pad(10);
    f.bytes = eapol.data;
    f.orig_len = static_cast<std::uint32_t>(eapol.data.size());
    pkt = ingest::dissect_frame(f);
    CHECK(pkt.protocol_flags[ingest::PROTO_EAPOL] == 1);

    // VLAN tag wrapped around an IPv4/UDP DNS query
    Bytes vlan;
    vlan.raw({2, 0, 0, 0, 0, 2, 2, 0, 0, 0, 0, 1});
    vlan.be16(0x8100);
    vlan.be16(0x0064);  // VID 100
    vlan.be16(0x0800);
    vlan.u8(0x45);
    vlan.u8(0);
    vlan.be16(20 + 8 + 4);
    vlan.be16(1);
    vlan.be16(0);
    vlan.u8(64);
    vlan.u8(17);  // UDP
    vlan.be16(0);
    vlan.raw({192, 168, 1, 10});
    vlan.raw({8, 8, 8, 8});
    vlan.be16(5353);
    vlan.be16(53);
    vlan.be16(12);
    vlan.be16(0);
    vlan.pad(4);
    f.bytes = vlan.data;
    f.orig_len = static_cast<std::uint32_t>(vlan.data.size());
    pkt = ingest::dissect_frame(f);
    CHECK(pkt.protocol_flags[ingest::PROTO_IP] == 1);
    CHECK(pkt.protocol_flags[ingest::PROTO_UDP] == 1);
    CHECK(pkt.protocol_flags[ingest::PROTO_DNS] == 1);   // port 53
    CHECK(pkt.protocol_flags[ingest::PROTO_MDNS] == 1);  // port 5353
    CHECK(pkt.src_address == "192.168.1.10");
}

TEST_CASE("infer_device_address follows the most-common rule") {
    auto mk = [](const std::string& src, const std::string& dst) {
        ingest::RawPacket p;
        p.src_address = src;
        p.dst_address = dst;
        p.frame_length = 60;
        return p;
    };
    SUBCASE("clear majority") {
        std::vector<ingest::RawPacket> raws;
        for (int i = 0; i < 3; ++i) raws.push_back(mk("10.0.0.5", "1.2.3.4"));
        raws.push_back(mk("1.2.3.4", "10.0.0.5"));
        raws.push_back(mk("9.9.9.9", "10.0.0.5"));
        CHECK(ingest::infer_device_address(raws) == "10.0.0.5");
    }
    SUBCASE("tie broken lexicographically") {
        std::vector<ingest::RawPacket> raws;
        raws.push_back(mk("b.example", "a.example"));
        raws.push_back(mk("a.example", "b.example"));
        raws.push_back(mk("a.example", "b.example"));
        raws.push_back(mk("b.example", "a.example"));
        CHECK(ingest::infer_device_address(raws) == "a.example");
    }
    SUBCASE("no addressed packets") {
        std::vector<ingest::RawPacket> raws(3);
        CHECK_THROWS_AS(ingest::infer_device_address(raws), EmptyCaptureError);
    }
}

TEST_CASE("normalize assigns directions, durations and drops addresses") {
    auto mk = [](double ts, const std::string& src, const std::string& dst) {
        ingest::RawPacket p;
        p.timestamp = ts;
        p.frame_length = 100;
        p.src_address = src;
        p.dst_address = dst;
        return p;
    };
    SUBCASE("documented duration example") {
        std::vector<ingest::RawPacket> raws = {mk(0.0, "d", "s"), mk(0.5, "s", "d"),
                                               mk(2.0, "d", "s")};
        const auto recs = ingest::normalize(raws, "d", "cap0", "dev0");
        REQUIRE(recs.size() == 3);
        CHECK(recs[0].duration == doctest::Approx(0.5));
        CHECK(recs[1].duration == doctest::Approx(1.5));
        CHECK(recs[2].duration == doctest::Approx(0.0));
        CHECK(recs[0].direction == ingest::Direction::Outgoing);
        CHECK(recs[1].direction == ingest::Direction::Incoming);
    }
    SUBCASE("unsorted input is sorted before durations") {
        std::vector<ingest::RawPacket> raws = {mk(2.0, "d", "s"), mk(0.0, "s", "d")};
        const auto recs = ingest::normalize(raws, "d", "cap0", "dev0");
        CHECK(recs[0].direction == ingest::Direction::Incoming);  // ts 0.0 packet
        CHECK(recs[0].duration == doctest::Approx(2.0));
        CHECK(recs[1].duration == doctest::Approx(0.0));
    }
    SUBCASE("flipping device address to a non-occurring one makes all Incoming") {
        std::vector<ingest::RawPacket> raws = {mk(0.0, "d", "s"), mk(0.5, "s", "d")};
        const auto recs = ingest::normalize(raws, "zz-not-present", "cap0", "dev0");
        for (const auto& r : recs) CHECK(r.direction == ingest::Direction::Incoming);
    }
    SUBCASE("duration sum equals the timestamp span") {
        std::vector<ingest::RawPacket> raws;
        Rng rng(7);
        double ts = 0.0;
        for (int i = 0; i < 50; ++i) {
            raws.push_back(mk(ts, "d", "s"));
            ts += rng.uniform(0.0, 3.0);
        }
        const auto recs = ingest::normalize(raws, "d", "c", "d");
        double total = 0.0;
        for (const auto& r : recs) total += r.duration;
        CHECK(total ==
              doctest::Approx(raws.back().timestamp - raws.front().timestamp).epsilon(1e-6));
    }
}

TEST_CASE("make_windows samples valid, reproducible windows") {
    auto capture = [](const std::string& id, int n) {
        std::vector<ingest::PacketRecord> recs;
        for (int i = 0; i < n; ++i) {
            ingest::PacketRecord r;
            r.frame_length = static_cast<std::uint32_t>(100 + i);
            r.capture_id = id;
            r.device_id = "dev";
            recs.push_back(r);
        }
        return recs;
    };
    SUBCASE("length and consecutiveness contract") {
        const std::vector<std::vector<ingest::PacketRecord>> caps = {capture("a", 100)};
        const auto wins = ingest::make_windows(caps, 20, 3, 1);
        REQUIRE(wins.size() == 3);
        for (const auto& w : wins) {
            REQUIRE(w.packets.size() == 20);
            for (std::size_t i = 1; i < w.packets.size(); ++i)
                CHECK(w.packets[i].frame_length == w.packets[i - 1].frame_length + 1);
        }
    }
    SUBCASE("captures shorter than L contribute nothing") {
        const std::vector<std::vector<ingest::PacketRecord>> caps = {capture("a", 5),
                                                                     capture("b", 19)};
        const auto before = warn_count();
        const auto wins = ingest::make_windows(caps, 20, 4, 1);
        CHECK(wins.empty());
        CHECK(warn_count() > before);
    }
    SUBCASE("same seed, same selection") {
        const std::vector<std::vector<ingest::PacketRecord>> caps = {capture("a", 60),
                                                                     capture("b", 45)};
        std::vector<ingest::WindowRef> refs1, refs2;
        ingest::make_windows(caps, 20, 10, 99, &refs1);
        ingest::make_windows(caps, 20, 10, 99, &refs2);
        REQUIRE(refs1.size() == refs2.size());
        for (std::size_t i = 0; i < refs1.size(); ++i) {
            CHECK(refs1[i].capture_id == refs2[i].capture_id);
            CHECK(refs1[i].start_offset == refs2[i].start_offset);
        }
    }
    SUBCASE("windows never straddle captures") {
        const std::vector<std::vector<ingest::PacketRecord>> caps = {capture("a", 30),
                                                                     capture("b", 30)};
        const auto wins = ingest::make_windows(caps, 20, 22, 5);
        CHECK(wins.size() == 22);
        for (const auto& w : wins) {
            for (const auto& p : w.packets)
                CHECK(p.capture_id == w.packets.front().capture_id);
        }
    }
}

TEST_CASE("records survive a JSONL round trip") {
    Rng rng(11);
    std::vector<ingest::PacketRecord> recs;
    for (int i = 0; i < 40; ++i) {
        ingest::PacketRecord r;
        r.frame_length = static_cast<std::uint32_t>(1 + rng.uniform_u64(1500));
        r.direction = rng.uniform01() < 0.5 ? ingest::Direction::Incoming
                                            : ingest::Direction::Outgoing;
        r.duration = rng.uniform(0.0, 5.0);
        if (rng.uniform01() < 0.7) {
            r.src_port = static_cast<std::uint16_t>(rng.uniform_u64(65536));
            r.dst_port = static_cast<std::uint16_t>(rng.uniform_u64(65536));
            r.protocol_flags[ingest::PROTO_TCP] = 1;
        }
        r.protocol_flags[ingest::PROTO_IP] = 1;
        r.capture_id = "cap" + std::to_string(i % 3);
        r.device_id = "dev";
        recs.push_back(r);
    }
    const auto path = temp_file("records.jsonl");
    ingest::write_records_jsonl(path, recs);
    const auto back = ingest::read_records_jsonl(path);
    REQUIRE(back.size() == recs.size());
    for (std::size_t i = 0; i < recs.size(); ++i) {
        CHECK(back[i].frame_length == recs[i].frame_length);
        CHECK(back[i].direction == recs[i].direction);
        CHECK(back[i].duration == doctest::Approx(recs[i].duration));
        CHECK(back[i].src_port == recs[i].src_port);
        CHECK(back[i].dst_port == recs[i].dst_port);
        CHECK(back[i].protocol_flags == recs[i].protocol_flags);
        CHECK(back[i].capture_id == recs[i].capture_id);
    }
}
