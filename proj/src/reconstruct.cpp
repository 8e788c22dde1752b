#include "flowforge/reconstruct.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "flowforge/common.hpp"
#include "flowforge/nn/serialize.hpp"

using ordered_json = nlohmann::ordered_json;

namespace flowforge::recon {

namespace {
constexpr int kTokEmbDim = 8;
constexpr int kCodeEmbDim = 8;
constexpr int kLenEmbDim = 8;
}  // namespace

void FrameLengthConfig::validate() const {
    if (window < 0 || lookbehind < 0) throw ConfigError("window/lookbehind must be >= 0");
    if (noise_dim < 0) throw ConfigError("noise dim must be >= 0");
    if (hidden < 1 || epochs < 1 || batch_size < 1)
        throw ConfigError("hidden/epochs/batch must be >= 1");
}

nn::Tensor FrameLengthModel::features(const std::vector<int>& frame_tokens,
                                      const std::vector<int>& codes,
                                      const std::vector<std::uint32_t>& prev_lengths,
                                      int position, Rng& rng) const {
    const int l = static_cast<int>(frame_tokens.size());
    const int w = cfg_.window;
    std::vector<int> tok_ids, code_ids, len_ids;
    for (int off = -w; off <= w; ++off) {
        const int p = position + off;
        if (p < 0 || p >= l) {
            tok_ids.push_back(frame_vocab_);  // PAD
            code_ids.push_back(code_vocab_);
        } else {
            tok_ids.push_back(frame_tokens[static_cast<std::size_t>(p)]);
            code_ids.push_back(codes[static_cast<std::size_t>(p)]);
        }
    }
    for (int back = 1; back <= cfg_.lookbehind; ++back) {
        const int p = position - back;
        if (p < 0 || p >= static_cast<int>(prev_lengths.size())) {
            len_ids.push_back(static_cast<int>(lengths_.size()));  // PAD
        } else {
            const auto it = length_ids_.find(prev_lengths[static_cast<std::size_t>(p)]);
            len_ids.push_back(it != length_ids_.end() ? it->second
                                                      : static_cast<int>(lengths_.size()));
        }
    }
    std::vector<double> noise(static_cast<std::size_t>(cfg_.noise_dim));
    for (auto& v : noise) v = rng.normal();

    auto toks = nn::reshape(tok_emb_.forward(tok_ids), {1, (2 * w + 1) * kTokEmbDim});
    auto cds = nn::reshape(code_emb_.forward(code_ids), {1, (2 * w + 1) * kCodeEmbDim});
    std::vector<nn::Tensor> parts{toks, cds};
    if (cfg_.lookbehind > 0)
        parts.push_back(
            nn::reshape(len_emb_.forward(len_ids), {1, cfg_.lookbehind * kLenEmbDim}));
    if (cfg_.noise_dim > 0)
        parts.push_back(nn::Tensor::from({1, cfg_.noise_dim}, std::move(noise)));
    return nn::concat_lastdim(parts);
}

std::vector<double> FrameLengthModel::position_distribution(
    const std::vector<int>& frame_tokens, const std::vector<int>& codes,
    const std::vector<std::uint32_t>& prev_lengths, int position, Rng& rng) const {
    nn::NoGradGuard ng;
    auto x = features(frame_tokens, codes, prev_lengths, position, rng);
    auto h = nn::relu(fc2_.forward(nn::relu(fc1_.forward(x))));
    return nn::softmax_lastdim(out_.forward(h)).values();
}

std::vector<std::pair<std::string, nn::Tensor>> FrameLengthModel::named_params() const {
    return {{"tok_emb", tok_emb_.table}, {"code_emb", code_emb_.table},
            {"len_emb", len_emb_.table}, {"fc1.w", fc1_.w}, {"fc1.b", fc1_.b},
            {"fc2.w", fc2_.w},           {"fc2.b", fc2_.b}, {"out.w", out_.w},
            {"out.b", out_.b}};
}

FrameLengthModel train_frame_length_model(const std::vector<FrameSample>& samples,
                                          const sigs::FrameVocab& vocab,
                                          const std::vector<sigs::Signature>& ranked,
                                          int code_vocab, const FrameLengthConfig& cfg) {
    if (samples.empty()) throw DataError("no samples to train the frame length model on");
    cfg.validate();

    FrameLengthModel model;
    model.cfg_ = cfg;
    model.frame_vocab_ = vocab.size();
    model.code_vocab_ = code_vocab;

    std::set<std::uint32_t> distinct;
    for (const auto& s : samples)
        for (std::uint32_t len : s.lengths) distinct.insert(len);
    model.lengths_.assign(distinct.begin(), distinct.end());
    for (std::size_t i = 0; i < model.lengths_.size(); ++i)
        model.length_ids_[model.lengths_[i]] = static_cast<int>(i);

    // Per-token prediction rules from the vocabulary structure.
    model.token_rules_.assign(static_cast<std::size_t>(vocab.size()),
                              FrameLengthModel::TokenRule{});
    for (const auto& [key, token] : vocab.signature_tokens) {
        const auto& [sig_id, pos] = key;
        for (const auto& sig : ranked) {
            if (sig.signature_id != sig_id) continue;
            auto& rule = model.token_rules_[static_cast<std::size_t>(token)];
            rule.kind = FrameLengthModel::TokenRule::Kind::SignatureRange;
            rule.min_len = sig.ranges[static_cast<std::size_t>(pos)].min_len;
            rule.max_len = sig.ranges[static_cast<std::size_t>(pos)].max_len;
            break;
        }
    }
    for (const auto& [key, token] : vocab.orphan_tokens) {
        auto& rule = model.token_rules_[static_cast<std::size_t>(token)];
        rule.kind = FrameLengthModel::TokenRule::Kind::OrphanFixed;
        rule.min_len = rule.max_len = key.first;
        model.orphan_pool_.push_back(key.first);
    }
    model.token_rules_[static_cast<std::size_t>(vocab.unk_token)].kind =
        FrameLengthModel::TokenRule::Kind::Unk;
    if (model.orphan_pool_.empty()) model.orphan_pool_ = model.lengths_;

    Rng rng(seed_for(cfg.seed, "framelen-init"));
    const int in_dim = (2 * cfg.window + 1) * (kTokEmbDim + kCodeEmbDim) +
                       cfg.lookbehind * kLenEmbDim + cfg.noise_dim;
    model.tok_emb_ = nn::Embedding(model.frame_vocab_ + 1, kTokEmbDim, rng);
    model.code_emb_ = nn::Embedding(code_vocab + 1, kCodeEmbDim, rng);
    model.len_emb_ =
        nn::Embedding(static_cast<int>(model.lengths_.size()) + 1, kLenEmbDim, rng);
    model.fc1_ = nn::Linear(in_dim, cfg.hidden, rng);
    model.fc2_ = nn::Linear(cfg.hidden, cfg.hidden, rng);
    model.out_ = nn::Linear(cfg.hidden, static_cast<int>(model.lengths_.size()), rng);

    std::vector<nn::Tensor> params;
    for (auto& [name, t] : model.named_params()) params.push_back(t);
    nn::AdamConfig acfg;
    acfg.lr = cfg.lr;
    nn::Adam opt(std::move(params), acfg);

    // flatten training positions
    struct Pos {
        const FrameSample* s;
        int t;
    };
    std::vector<Pos> positions;
    for (const auto& s : samples)
        for (int t = 0; t < static_cast<int>(s.lengths.size()); ++t)
            positions.push_back({&s, t});

    Rng train_rng(seed_for(cfg.seed, "framelen-train"));
    std::size_t correct = 0, total = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        train_rng.shuffle(positions);
        const bool last_epoch = epoch == cfg.epochs - 1;
        for (std::size_t start = 0; start < positions.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end =
                std::min(positions.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<nn::Tensor> feats;
            std::vector<int> targets;
            for (std::size_t i = start; i < end; ++i) {
                const auto& [s, t] = positions[i];
                // teacher forcing: true previous lengths
                std::vector<std::uint32_t> prev(s->lengths.begin(),
                                                s->lengths.begin() + t);
                feats.push_back(model.features(s->frame_tokens, s->codes, prev, t, train_rng));
                targets.push_back(model.length_ids_.at(s->lengths[static_cast<std::size_t>(t)]));
            }
            // stack rows: concat along dim 0 via reshape trick
            nn::Tensor x;
            if (feats.size() == 1) {
                x = feats[0];
            } else {
                std::vector<nn::Tensor> cols;
                cols.reserve(feats.size());
                for (auto& f : feats) cols.push_back(f);
                // concat along last dim then reshape to [rows, in_dim]
                x = nn::reshape(nn::concat_lastdim(cols),
                                {static_cast<int>(feats.size()), feats[0].dim(1)});
            }
            auto h = nn::relu(model.fc2_.forward(nn::relu(model.fc1_.forward(x))));
            auto logits = model.out_.forward(h);
            auto loss = nn::softmax_cross_entropy(logits, targets);
            opt.zero_grad();
            nn::backward(loss);
            opt.step();
            if (last_epoch) {
                for (std::size_t r = 0; r < targets.size(); ++r) {
                    const double* row =
                        logits.data() + r * static_cast<std::size_t>(model.lengths_.size());
                    int best = 0;
                    for (int i = 1; i < static_cast<int>(model.lengths_.size()); ++i)
                        if (row[i] > row[best]) best = i;
                    correct += best == targets[r];
                    ++total;
                }
            }
        }
    }
    model.train_accuracy_ =
        total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
    return model;
}

std::vector<std::uint32_t> predict_frame_lengths(const FrameLengthModel& model,
                                                 const std::vector<int>& frame_tokens,
                                                 const std::vector<int>& codes, Rng& rng) {
    if (frame_tokens.size() != codes.size())
        throw LengthMismatchError("frame token / code length mismatch");
    std::vector<std::uint32_t> out;
    out.reserve(frame_tokens.size());
    for (int t = 0; t < static_cast<int>(frame_tokens.size()); ++t) {
        const int token = frame_tokens[static_cast<std::size_t>(t)];
        const auto& rule =
            token >= 0 && token < static_cast<int>(model.token_rules_.size())
                ? model.token_rules_[static_cast<std::size_t>(token)]
                : model.token_rules_.back();
        using Kind = FrameLengthModel::TokenRule::Kind;
        if (rule.kind == Kind::OrphanFixed) {
            out.push_back(rule.min_len);
            continue;
        }
        if (rule.kind == Kind::Unk) {
            out.push_back(model.orphan_pool_[rng.uniform_u64(model.orphan_pool_.size())]);
            continue;
        }
        auto probs = model.position_distribution(frame_tokens, codes, out, t, rng);
        if (rule.kind == Kind::SignatureRange) {
            // sample only lengths inside the signature position's range so the
            // mined ranges are honored; the clamp below covers the degenerate
            // case where no training length falls inside
            double mass = 0.0;
            for (std::size_t i = 0; i < probs.size(); ++i) {
                if (model.lengths_[i] < rule.min_len || model.lengths_[i] > rule.max_len)
                    probs[i] = 0.0;
                mass += probs[i];
            }
            if (mass <= 0.0)
                probs = model.position_distribution(frame_tokens, codes, out, t, rng);
        }
        std::uint32_t len = model.lengths_[rng.categorical(probs)];
        if (rule.kind == Kind::SignatureRange)
            len = std::clamp(len, rule.min_len, rule.max_len);
        out.push_back(len);
    }
    return out;
}

SyntheticWindow assemble_flow(const std::vector<vq::DecodedPacket>& decoded,
                              const std::vector<int>& codes,
                              const FrameLengthModel& frame_model,
                              const durations::DurationModel& duration_model,
                              const vq::PortVocab& ports, Rng& rng,
                              const std::string& device_id, const std::string& capture_id) {
    if (decoded.size() != codes.size())
        throw LengthMismatchError("decoded fields / codes length mismatch");
    std::vector<int> frame_tokens;
    frame_tokens.reserve(decoded.size());
    for (const auto& d : decoded) frame_tokens.push_back(d.frame_token);
    const auto lengths = predict_frame_lengths(frame_model, frame_tokens, codes, rng);

    SyntheticWindow win;
    win.device_id = device_id;
    win.capture_id = capture_id;
    win.packets.reserve(decoded.size());
    for (std::size_t i = 0; i < decoded.size(); ++i) {
        const auto& d = decoded[i];
        ingest::PacketRecord rec;
        rec.frame_length = lengths[i];
        rec.direction = d.direction;
        rec.duration = durations::sample_duration(duration_model, d.duration_token, rng);
        rec.protocol_flags = d.protocol_flags;
        rec.capture_id = capture_id;
        rec.device_id = device_id;

        const bool transport =
            rec.protocol_flags[ingest::PROTO_TCP] || rec.protocol_flags[ingest::PROTO_UDP];
        if (transport) {
            // transports imply an IP layer
            rec.protocol_flags[ingest::PROTO_IP] = 1;
            rec.src_port = ports.port_for(d.src_port_id);
            rec.dst_port = ports.port_for(d.dst_port_id);
            if (!rec.src_port)
                rec.src_port = static_cast<std::uint16_t>(49152 + rng.uniform_u64(16384));
            if (!rec.dst_port)
                rec.dst_port = static_cast<std::uint16_t>(49152 + rng.uniform_u64(16384));
        }
        if (rec.protocol_flags[ingest::PROTO_ICMP] ||
            rec.protocol_flags[ingest::PROTO_ICMPV6])
            rec.protocol_flags[ingest::PROTO_IP] = 1;
        // records without a network address (no IP layer) always dissect as
        // Incoming, so real corpora never contain the Outgoing combination
        if (!rec.protocol_flags[ingest::PROTO_IP])
            rec.direction = ingest::Direction::Incoming;
        ingest::derive_app_flags(rec.protocol_flags, rec.src_port, rec.dst_port);
        win.packets.push_back(std::move(rec));
    }
    return win;
}

void write_synthetic_jsonl(const std::filesystem::path& path,
                           const std::vector<SyntheticWindow>& windows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    for (const auto& w : windows)
        for (const auto& r : w.packets) out << ingest::record_to_json_line(r) << "\n";
    if (!out) throw IoError("write failed: " + path.string());
}

std::vector<SyntheticWindow> read_synthetic_jsonl(const std::filesystem::path& path,
                                                  int window_len) {
    const auto records = ingest::read_records_jsonl(path);
    if (records.size() % static_cast<std::size_t>(window_len) != 0)
        throw DataError("synthetic record count is not a multiple of the window length");
    std::vector<SyntheticWindow> out;
    for (std::size_t start = 0; start < records.size();
         start += static_cast<std::size_t>(window_len)) {
        SyntheticWindow w;
        w.device_id = records[start].device_id;
        w.capture_id = records[start].capture_id;
        w.packets.assign(records.begin() + static_cast<std::ptrdiff_t>(start),
                         records.begin() + static_cast<std::ptrdiff_t>(start + window_len));
        out.push_back(std::move(w));
    }
    return out;
}

void FrameLengthModel::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    ordered_json manifest;
    manifest["format_version"] = 1;
    manifest["kind"] = "frame-length";
    manifest["config"] = {{"window", cfg_.window},       {"lookbehind", cfg_.lookbehind},
                          {"noise_dim", cfg_.noise_dim}, {"hidden", cfg_.hidden},
                          {"epochs", cfg_.epochs},       {"batch_size", cfg_.batch_size},
                          {"lr", cfg_.lr},               {"seed", cfg_.seed}};
    manifest["frame_vocab"] = frame_vocab_;
    manifest["code_vocab"] = code_vocab_;
    manifest["lengths"] = lengths_;
    manifest["train_accuracy"] = train_accuracy_;
    ordered_json rules = ordered_json::array();
    for (const auto& r : token_rules_)
        rules.push_back({{"kind", static_cast<int>(r.kind)},
                         {"min", r.min_len},
                         {"max", r.max_len}});
    manifest["token_rules"] = rules;
    manifest["orphan_pool"] = orphan_pool_;
    std::ofstream mf(dir / "manifest.json", std::ios::trunc);
    mf << manifest.dump(2) << "\n";
    std::vector<std::pair<std::string, std::vector<double>>> entries;
    for (const auto& [name, t] : named_params()) entries.emplace_back(name, t.values());
    nn::save_weights(dir / "weights.bin", entries);
}

FrameLengthModel FrameLengthModel::load(const std::filesystem::path& dir) {
    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw IoError("cannot open manifest: " + (dir / "manifest.json").string());
    ordered_json manifest = ordered_json::parse(mf);
    if (manifest.at("kind") != "frame-length") throw IoError("manifest kind mismatch");

    FrameLengthModel model;
    const auto& jc = manifest.at("config");
    model.cfg_.window = jc.at("window").get<int>();
    model.cfg_.lookbehind = jc.at("lookbehind").get<int>();
    model.cfg_.noise_dim = jc.at("noise_dim").get<int>();
    model.cfg_.hidden = jc.at("hidden").get<int>();
    model.cfg_.epochs = jc.at("epochs").get<int>();
    model.cfg_.batch_size = jc.at("batch_size").get<int>();
    model.cfg_.lr = jc.at("lr").get<double>();
    model.cfg_.seed = jc.at("seed").get<std::uint64_t>();
    model.frame_vocab_ = manifest.at("frame_vocab").get<int>();
    model.code_vocab_ = manifest.at("code_vocab").get<int>();
    model.lengths_ = manifest.at("lengths").get<std::vector<std::uint32_t>>();
    for (std::size_t i = 0; i < model.lengths_.size(); ++i)
        model.length_ids_[model.lengths_[i]] = static_cast<int>(i);
    model.train_accuracy_ = manifest.at("train_accuracy").get<double>();
    for (const auto& r : manifest.at("token_rules")) {
        TokenRule rule;
        rule.kind = static_cast<TokenRule::Kind>(r.at("kind").get<int>());
        rule.min_len = r.at("min").get<std::uint32_t>();
        rule.max_len = r.at("max").get<std::uint32_t>();
        model.token_rules_.push_back(rule);
    }
    model.orphan_pool_ = manifest.at("orphan_pool").get<std::vector<std::uint32_t>>();

    Rng rng(seed_for(model.cfg_.seed, "framelen-init"));
    const int in_dim = (2 * model.cfg_.window + 1) * (kTokEmbDim + kCodeEmbDim) +
                       model.cfg_.lookbehind * kLenEmbDim + model.cfg_.noise_dim;
    model.tok_emb_ = nn::Embedding(model.frame_vocab_ + 1, kTokEmbDim, rng);
    model.code_emb_ = nn::Embedding(model.code_vocab_ + 1, kCodeEmbDim, rng);
    model.len_emb_ =
        nn::Embedding(static_cast<int>(model.lengths_.size()) + 1, kLenEmbDim, rng);
    model.fc1_ = nn::Linear(in_dim, model.cfg_.hidden, rng);
    model.fc2_ = nn::Linear(model.cfg_.hidden, model.cfg_.hidden, rng);
    model.out_ = nn::Linear(model.cfg_.hidden, static_cast<int>(model.lengths_.size()), rng);

    auto blob = nn::load_weights(dir / "weights.bin");
    for (auto& [name, t] : model.named_params()) {
        auto it = blob.find(name);
        if (it == blob.end() || it->second.size() != t.size())
            throw IoError("checkpoint missing or mis-sized tensor: " + name);
        std::copy(it->second.begin(), it->second.end(), t.data());
    }
    return model;
}

}  // namespace flowforge::recon
