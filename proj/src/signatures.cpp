#include "flowforge/signatures.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "flowforge/common.hpp"
#include "flowforge/kernels.hpp"

namespace flowforge::sigs {

void SignatureConfig::validate(int window_len) const {
    if (d <= 0.0) throw ConfigError("signature distance threshold must be > 0");
    if (s < 2) throw ConfigError("minimum samples must be >= 2");
    if (min_size < 2 || min_size > max_size || max_size > window_len)
        throw ConfigError("signature size bounds must satisfy 2 <= min <= max <= L");
}

Flow to_flow(const ingest::TrafficWindow& w) {
    Flow f;
    f.reserve(w.packets.size());
    for (const auto& p : w.packets) f.push_back({p.frame_length, p.direction});
    return f;
}

double signature_distance(const Flow& a, const Flow& b) {
    if (a.size() != b.size())
        throw LengthMismatchError("signature_distance: " + std::to_string(a.size()) +
                                  " vs " + std::to_string(b.size()));
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].dir != b[i].dir) return kMaximalDistance;
        const double d = static_cast<double>(a[i].len) - static_cast<double>(b[i].len);
        acc += d * d;
    }
    return std::sqrt(acc);
}

namespace {

// Subarray points for one signature size, in SoA layout so the pairwise
// distances run through the kernels: lengths as doubles, directions packed.
struct PointSet {
    std::size_t dim = 0;
    std::vector<double> lengths;       // [count, dim]
    std::vector<std::uint8_t> dirs;    // [count, dim]

    std::size_t count() const { return dim == 0 ? 0 : lengths.size() / dim; }

    const double* len_row(std::size_t i) const { return lengths.data() + i * dim; }
    const std::uint8_t* dir_row(std::size_t i) const { return dirs.data() + i * dim; }

    bool within(std::size_t i, std::size_t j, double eps_sq) const {
        const std::uint8_t* da = dir_row(i);
        const std::uint8_t* db = dir_row(j);
        for (std::size_t p = 0; p < dim; ++p)
            if (da[p] != db[p]) return false;  // maximal distance, never a neighbor
        return kernels::sq_dist(len_row(i), len_row(j), dim) <= eps_sq;
    }
};

PointSet collect_subarrays(const std::vector<Flow>& flows, std::size_t size) {
    PointSet ps;
    ps.dim = size;
    for (const auto& flow : flows) {
        if (flow.size() < size) continue;
        for (std::size_t start = 0; start + size <= flow.size(); ++start) {
            for (std::size_t p = 0; p < size; ++p) {
                ps.lengths.push_back(static_cast<double>(flow[start + p].len));
                ps.dirs.push_back(static_cast<std::uint8_t>(flow[start + p].dir));
            }
        }
    }
    return ps;
}

// Classic DBSCAN over the subarray points. min_samples counts the point
// itself; border points join the first cluster that reaches them.
std::vector<std::vector<std::size_t>> dbscan(const PointSet& ps, double eps, int min_samples) {
    const std::size_t n = ps.count();
    const double eps_sq = eps * eps;

    std::vector<std::vector<std::size_t>> neighbors(n);
    for (std::size_t i = 0; i < n; ++i) neighbors[i].push_back(i);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (ps.within(i, j, eps_sq)) {
                neighbors[i].push_back(j);
                neighbors[j].push_back(i);
            }
        }
    }

    constexpr int kUnvisited = -2;
    constexpr int kNoise = -1;
    std::vector<int> label(n, kUnvisited);
    std::vector<std::vector<std::size_t>> clusters;

    for (std::size_t i = 0; i < n; ++i) {
        if (label[i] != kUnvisited) continue;
        if (neighbors[i].size() < static_cast<std::size_t>(min_samples)) {
            label[i] = kNoise;
            continue;
        }
        const int cid = static_cast<int>(clusters.size());
        clusters.emplace_back();
        label[i] = cid;
        clusters.back().push_back(i);
        std::vector<std::size_t> frontier = neighbors[i];
        for (std::size_t f = 0; f < frontier.size(); ++f) {
            const std::size_t q = frontier[f];
            if (label[q] == kNoise) {
                label[q] = cid;
                clusters.back().push_back(q);
            }
            if (label[q] != kUnvisited) continue;
            label[q] = cid;
            clusters.back().push_back(q);
            if (neighbors[q].size() >= static_cast<std::size_t>(min_samples)) {
                for (std::size_t nb : neighbors[q]) frontier.push_back(nb);
            }
        }
    }
    return clusters;
}

std::vector<Range> cluster_ranges(const PointSet& ps,
                                  const std::vector<std::size_t>& members) {
    std::vector<Range> ranges(ps.dim);
    for (std::size_t p = 0; p < ps.dim; ++p) {
        std::uint32_t lo = UINT32_MAX, hi = 0;
        for (std::size_t m : members) {
            const auto len = static_cast<std::uint32_t>(ps.len_row(m)[p]);
            lo = std::min(lo, len);
            hi = std::max(hi, len);
        }
        // Direction mismatches have maximal distance, so a cluster cannot mix
        // directions at any index.
        ranges[p] = {lo, hi, static_cast<Direction>(ps.dir_row(members.front())[p])};
    }
    return ranges;
}

}  // namespace

std::vector<Signature> extract_signatures(const std::vector<Flow>& flows,
                                          const SignatureConfig& cfg) {
    if (flows.empty()) throw DataError("no flows to extract signatures from");
    if (cfg.d <= 0.0 || cfg.s < 2 || cfg.min_size < 2 || cfg.min_size > cfg.max_size)
        throw ConfigError("invalid signature extraction config");

    std::vector<Signature> out;
    std::set<std::vector<Range>> seen;  // duplicates appear across sizes
    for (int size = cfg.min_size; size <= cfg.max_size; ++size) {
        const PointSet ps = collect_subarrays(flows, static_cast<std::size_t>(size));
        if (ps.count() == 0) continue;
        for (const auto& cluster : dbscan(ps, cfg.d, cfg.s)) {
            auto ranges = cluster_ranges(ps, cluster);
            if (!seen.insert(ranges).second) continue;
            Signature sig;
            sig.signature_id = static_cast<int>(out.size());
            sig.ranges = std::move(ranges);
            out.push_back(std::move(sig));
        }
    }
    return out;
}

std::vector<std::size_t> find_occurrences(const Signature& sig, const Flow& flow) {
    std::vector<std::size_t> starts;
    if (sig.ranges.empty() || flow.size() < sig.ranges.size()) return starts;
    for (std::size_t start = 0; start + sig.ranges.size() <= flow.size(); ++start) {
        bool ok = true;
        for (std::size_t p = 0; p < sig.ranges.size(); ++p) {
            if (!sig.ranges[p].contains(flow[start + p])) {
                ok = false;
                break;
            }
        }
        if (ok) starts.push_back(start);
    }
    return starts;
}

std::vector<Signature> rank_signatures(std::vector<Signature> sigs,
                                       const std::vector<Flow>& windows) {
    for (auto& sig : sigs) {
        sig.support_count = 0;
        for (const auto& w : windows)
            sig.support_count += static_cast<std::int64_t>(find_occurrences(sig, w).size());
    }
    std::sort(sigs.begin(), sigs.end(), [](const Signature& a, const Signature& b) {
        const auto ka = a.support_count * static_cast<std::int64_t>(a.size());
        const auto kb = b.support_count * static_cast<std::int64_t>(b.size());
        if (ka != kb) return ka > kb;
        if (a.size() != b.size()) return a.size() > b.size();
        return a.ranges < b.ranges;
    });
    for (std::size_t i = 0; i < sigs.size(); ++i)
        sigs[i].signature_id = static_cast<int>(i);
    return sigs;
}

SignatureAssignment match_window(const Flow& window,
                                 const std::vector<Signature>& ranked) {
    SignatureAssignment asg;
    asg.slots.assign(window.size(), Slot{});
    for (const auto& sig : ranked) {
        const std::size_t len = sig.size();
        if (len == 0 || len > window.size()) continue;
        for (std::size_t start = 0; start + len <= window.size(); ++start) {
            bool fits = true;
            for (std::size_t p = 0; p < len && fits; ++p) {
                fits = asg.slots[start + p].orphan() &&
                       sig.ranges[p].contains(window[start + p]);
            }
            if (!fits) continue;
            for (std::size_t p = 0; p < len; ++p)
                asg.slots[start + p] = Slot{sig.signature_id, static_cast<int>(p)};
        }
    }
    return asg;
}

int FrameVocab::token_for_slot(const Slot& slot, const LenDir& packet) const {
    if (!slot.orphan()) {
        const auto it = signature_tokens.find({slot.signature_id, slot.position});
        if (it != signature_tokens.end()) return it->second;
        return unk_token;
    }
    return token_for_orphan(packet.len, packet.dir);
}

int FrameVocab::token_for_orphan(std::uint32_t len, Direction dir) const {
    const auto it = orphan_tokens.find({len, static_cast<int>(dir)});
    return it != orphan_tokens.end() ? it->second : unk_token;
}

FrameVocab::TokenInfo FrameVocab::lookup(int token) const {
    if (token < 0 || token > unk_token)
        throw InvalidTokenError("frame token " + std::to_string(token) + " out of range");
    TokenInfo info;
    if (token == unk_token) {
        info.is_unk = true;
        return info;
    }
    for (const auto& [key, id] : signature_tokens) {
        if (id == token) {
            info.is_signature = true;
            info.signature_id = key.first;
            info.position = key.second;
            return info;
        }
    }
    for (const auto& [key, id] : orphan_tokens) {
        if (id == token) {
            info.orphan_len = key.first;
            info.orphan_dir = static_cast<Direction>(key.second);
            return info;
        }
    }
    throw InvalidTokenError("frame token " + std::to_string(token) + " has no mapping");
}

FrameVocab build_frame_vocab(const std::vector<SignatureAssignment>& assignments,
                             const std::vector<Flow>& windows,
                             const std::vector<Signature>& ranked) {
    FrameVocab vocab;
    int next = 0;
    for (const auto& sig : ranked) {
        for (std::size_t p = 0; p < sig.size(); ++p)
            vocab.signature_tokens[{sig.signature_id, static_cast<int>(p)}] = next++;
    }
    std::set<std::pair<std::uint32_t, int>> orphans;
    for (std::size_t w = 0; w < assignments.size(); ++w) {
        const auto& asg = assignments[w];
        const auto& flow = windows[w];
        for (std::size_t i = 0; i < asg.slots.size(); ++i) {
            if (asg.slots[i].orphan())
                orphans.insert({flow[i].len, static_cast<int>(flow[i].dir)});
        }
    }
    for (const auto& key : orphans) vocab.orphan_tokens[key] = next++;
    vocab.unk_token = next;
    return vocab;
}

TokenizedWindow tokenize_window(const ingest::TrafficWindow& window,
                                const SignatureAssignment& assignment,
                                const FrameVocab& vocab,
                                const durations::DurationModel& duration_model) {
    if (assignment.slots.size() != window.packets.size())
        throw LengthMismatchError("assignment does not cover the window");
    TokenizedWindow out;
    out.device_id = window.device_id;
    out.packets.reserve(window.packets.size());
    for (std::size_t i = 0; i < window.packets.size(); ++i) {
        const auto& p = window.packets[i];
        TokenizedPacket t;
        t.frame_token =
            vocab.token_for_slot(assignment.slots[i], {p.frame_length, p.direction});
        t.duration_token = duration_to_token(duration_model, p.duration);
        t.direction = p.direction;
        t.protocol_flags = p.protocol_flags;
        t.src_port = p.src_port;
        t.dst_port = p.dst_port;
        out.packets.push_back(t);
    }
    return out;
}

}  // namespace flowforge::sigs
