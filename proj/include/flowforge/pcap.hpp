#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

// Minimal capture-file I/O: reads classic libpcap (both endiannesses,
// micro/nanosecond magics) and pcapng (SHB/IDB/EPB/SPB, other blocks
// skipped); writes classic libpcap with microsecond timestamps.

namespace flowforge::pcap {

struct CapturedFrame {
    double timestamp = 0.0;  // seconds since epoch
    std::uint32_t orig_len = 0;
    std::uint32_t link_type = 1;  // LINKTYPE_ETHERNET
    std::vector<std::uint8_t> bytes;  // captured data (may be shorter than orig_len)
};

// Throws CaptureParseError on unrecognized or truncated files.
std::vector<CapturedFrame> read_capture(const std::filesystem::path& path);

void write_pcap(const std::filesystem::path& path,
                const std::vector<CapturedFrame>& frames,
                std::uint32_t link_type = 1);

}  // namespace flowforge::pcap
