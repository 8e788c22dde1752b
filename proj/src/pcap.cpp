#include "flowforge/pcap.hpp"

#include <cstring>
#include <fstream>

#include "flowforge/common.hpp"

namespace flowforge::pcap {

namespace {

constexpr std::uint32_t kMagicUsec = 0xa1b2c3d4;
constexpr std::uint32_t kMagicUsecSwapped = 0xd4c3b2a1;
constexpr std::uint32_t kMagicNsec = 0xa1b23c4d;
constexpr std::uint32_t kMagicNsecSwapped = 0x4d3cb2a1;
constexpr std::uint32_t kPcapngShb = 0x0a0d0d0a;
constexpr std::uint32_t kByteOrderMagic = 0x1a2b3c4d;

std::uint32_t bswap32(std::uint32_t v) { return __builtin_bswap32(v); }
std::uint16_t bswap16(std::uint16_t v) { return __builtin_bswap16(v); }

struct Cursor {
    const std::uint8_t* p;
    std::size_t len;
    std::size_t off = 0;
    bool swap = false;

    std::size_t remaining() const { return len - off; }

    bool need(std::size_t n) const { return remaining() >= n; }

    std::uint16_t u16() {
        std::uint16_t v;
        std::memcpy(&v, p + off, 2);
        off += 2;
        return swap ? bswap16(v) : v;
    }
    std::uint32_t u32() {
        std::uint32_t v;
        std::memcpy(&v, p + off, 4);
        off += 4;
        return swap ? bswap32(v) : v;
    }
    void skip(std::size_t n) { off += n; }
};

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CaptureParseError("cannot open capture file: " + path.string());
    std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
    return data;
}

std::vector<CapturedFrame> read_classic(const std::vector<std::uint8_t>& data,
                                        const std::filesystem::path& path) {
    Cursor cur{data.data(), data.size()};
    const std::uint32_t magic = cur.u32();
    const bool swap = (magic == kMagicUsecSwapped || magic == kMagicNsecSwapped);
    const bool nsec = (magic == kMagicNsec || magic == kMagicNsecSwapped);
    cur.swap = swap;
    if (!cur.need(20)) throw CaptureParseError("truncated pcap global header: " + path.string());
    cur.skip(2 + 2 + 4 + 4);  // version, thiszone, sigfigs
    cur.u32();                // snaplen
    const std::uint32_t link_type = cur.u32() & 0x0fffffff;

    std::vector<CapturedFrame> frames;
    while (cur.remaining() > 0) {
        if (!cur.need(16)) throw CaptureParseError("truncated pcap record header: " + path.string());
        const std::uint32_t ts_sec = cur.u32();
        const std::uint32_t ts_frac = cur.u32();
        const std::uint32_t incl_len = cur.u32();
        const std::uint32_t orig_len = cur.u32();
        if (incl_len > 0x7fffffff || !cur.need(incl_len))
            throw CaptureParseError("truncated pcap record body: " + path.string());
        CapturedFrame f;
        f.timestamp = static_cast<double>(ts_sec) +
                      static_cast<double>(ts_frac) * (nsec ? 1e-9 : 1e-6);
        f.orig_len = orig_len;
        f.link_type = link_type;
        f.bytes.assign(cur.p + cur.off, cur.p + cur.off + incl_len);
        cur.skip(incl_len);
        frames.push_back(std::move(f));
    }
    return frames;
}

struct InterfaceInfo {
    std::uint32_t link_type = 1;
    std::uint32_t snaplen = 0;
    double tsresol = 1e-6;
};

std::vector<CapturedFrame> read_pcapng(const std::vector<std::uint8_t>& data,
                                       const std::filesystem::path& path) {
    std::vector<CapturedFrame> frames;
    std::vector<InterfaceInfo> ifaces;
    std::size_t off = 0;
    bool swap = false;
    bool in_section = false;

    while (off + 12 <= data.size()) {
        Cursor head{data.data() + off, data.size() - off};
        head.swap = swap;
        std::uint32_t type = head.u32();
        // A new section header resets byte order; detect it raw.
        std::uint32_t type_raw;
        std::memcpy(&type_raw, data.data() + off, 4);
        if (type_raw == kPcapngShb) type = kPcapngShb;

        if (type == kPcapngShb) {
            if (off + 28 > data.size()) throw CaptureParseError("truncated pcapng SHB: " + path.string());
            std::uint32_t bom;
            std::memcpy(&bom, data.data() + off + 8, 4);
            if (bom == kByteOrderMagic) swap = false;
            else if (bswap32(bom) == kByteOrderMagic) swap = true;
            else throw CaptureParseError("bad pcapng byte-order magic: " + path.string());
            head.swap = swap;
            ifaces.clear();
            in_section = true;
        } else if (!in_section) {
            throw CaptureParseError("pcapng block before section header: " + path.string());
        }

        Cursor blk{data.data() + off, data.size() - off};
        blk.swap = swap;
        blk.u32();  // type
        const std::uint32_t total_len = blk.u32();
        if (total_len < 12 || total_len % 4 != 0 || off + total_len > data.size())
            throw CaptureParseError("truncated pcapng block: " + path.string());
        const std::size_t body_len = total_len - 12;

        if (type == 0x00000001) {  // IDB
            if (body_len < 8) throw CaptureParseError("short pcapng IDB: " + path.string());
            InterfaceInfo info;
            info.link_type = blk.u16();
            blk.u16();  // reserved
            info.snaplen = blk.u32();
            // options: code u16, len u16, value padded to 4
            std::size_t opt_left = body_len - 8;
            while (opt_left >= 4) {
                const std::uint16_t code = blk.u16();
                const std::uint16_t olen = blk.u16();
                opt_left -= 4;
                const std::size_t padded = (olen + 3u) & ~3u;
                if (padded > opt_left) break;
                if (code == 9 && olen >= 1) {  // if_tsresol
                    const std::uint8_t r = data[off + (blk.off)];
                    if (r & 0x80)
                        info.tsresol = 1.0 / static_cast<double>(1ull << (r & 0x7f));
                    else {
                        double v = 1.0;
                        for (int i = 0; i < (r & 0x7f); ++i) v *= 10.0;
                        info.tsresol = 1.0 / v;
                    }
                }
                blk.skip(padded);
                opt_left -= padded;
                if (code == 0) break;  // opt_endofopt
            }
            ifaces.push_back(info);
        } else if (type == 0x00000006) {  // EPB
            if (body_len < 20) throw CaptureParseError("short pcapng EPB: " + path.string());
            const std::uint32_t if_id = blk.u32();
            const std::uint32_t ts_hi = blk.u32();
            const std::uint32_t ts_lo = blk.u32();
            const std::uint32_t cap_len = blk.u32();
            const std::uint32_t orig_len = blk.u32();
            if (cap_len > body_len - 20)
                throw CaptureParseError("truncated pcapng EPB data: " + path.string());
            const InterfaceInfo info =
                if_id < ifaces.size() ? ifaces[if_id] : InterfaceInfo{};
            CapturedFrame f;
            const std::uint64_t ticks = (static_cast<std::uint64_t>(ts_hi) << 32) | ts_lo;
            f.timestamp = static_cast<double>(ticks) * info.tsresol;
            f.orig_len = orig_len;
            f.link_type = info.link_type;
            f.bytes.assign(data.begin() + off + 28, data.begin() + off + 28 + cap_len);
            frames.push_back(std::move(f));
        } else if (type == 0x00000003) {  // SPB: no timestamp
            if (body_len < 4) throw CaptureParseError("short pcapng SPB: " + path.string());
            const std::uint32_t orig_len = blk.u32();
            const InterfaceInfo info = !ifaces.empty() ? ifaces[0] : InterfaceInfo{};
            std::uint32_t cap_len = orig_len;
            if (info.snaplen > 0 && cap_len > info.snaplen) cap_len = info.snaplen;
            if (cap_len > body_len - 4)
                throw CaptureParseError("truncated pcapng SPB data: " + path.string());
            CapturedFrame f;
            f.orig_len = orig_len;
            f.link_type = info.link_type;
            f.bytes.assign(data.begin() + off + 12, data.begin() + off + 12 + cap_len);
            frames.push_back(std::move(f));
        }
        // all other block types are skipped

        off += total_len;
    }
    if (off != data.size())
        throw CaptureParseError("trailing bytes after last pcapng block: " + path.string());
    return frames;
}

}  // namespace

std::vector<CapturedFrame> read_capture(const std::filesystem::path& path) {
    const auto data = slurp(path);
    if (data.size() < 4)
        throw CaptureParseError("file too short to be a capture: " + path.string());
    std::uint32_t magic;
    std::memcpy(&magic, data.data(), 4);

    std::vector<CapturedFrame> frames;
    if (magic == kMagicUsec || magic == kMagicUsecSwapped || magic == kMagicNsec ||
        magic == kMagicNsecSwapped) {
        if (data.size() < 24)
            throw CaptureParseError("truncated pcap global header: " + path.string());
        frames = read_classic(data, path);
    } else if (magic == kPcapngShb) {
        frames = read_pcapng(data, path);
    } else {
        throw CaptureParseError("unrecognized capture format: " + path.string());
    }
    if (frames.empty()) log_warn("empty capture: " + path.string());
    return frames;
}

void write_pcap(const std::filesystem::path& path,
                const std::vector<CapturedFrame>& frames,
                std::uint32_t link_type) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());

    auto put32 = [&out](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    auto put16 = [&out](std::uint16_t v) { out.write(reinterpret_cast<const char*>(&v), 2); };

    put32(kMagicUsec);
    put16(2);
    put16(4);
    put32(0);  // thiszone
    put32(0);  // sigfigs
    put32(65535);
    put32(link_type);

    for (const auto& f : frames) {
        const auto total_usec = static_cast<std::uint64_t>(f.timestamp * 1e6 + 0.5);
        put32(static_cast<std::uint32_t>(total_usec / 1000000));
        put32(static_cast<std::uint32_t>(total_usec % 1000000));
        put32(static_cast<std::uint32_t>(f.bytes.size()));
        put32(f.orig_len ? f.orig_len : static_cast<std::uint32_t>(f.bytes.size()));
        out.write(reinterpret_cast<const char*>(f.bytes.data()),
                  static_cast<std::streamsize>(f.bytes.size()));
    }
    if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace flowforge::pcap
