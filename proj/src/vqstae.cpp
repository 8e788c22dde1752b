#include "flowforge/vqstae.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "flowforge/common.hpp"
#include "flowforge/kernels.hpp"
#include "flowforge/nn/serialize.hpp"

using ordered_json = nlohmann::ordered_json;

namespace flowforge::nn {

void save_weights(const std::filesystem::path& path,
                  const std::vector<std::pair<std::string, std::vector<double>>>& entries) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    const char magic[4] = {'F', 'F', 'W', 'B'};
    out.write(magic, 4);
    const std::uint32_t count = static_cast<std::uint32_t>(entries.size());
    out.write(reinterpret_cast<const char*>(&count), 4);
    for (const auto& [name, data] : entries) {
        const std::uint32_t nl = static_cast<std::uint32_t>(name.size());
        const std::uint64_t dl = data.size();
        out.write(reinterpret_cast<const char*>(&nl), 4);
        out.write(name.data(), nl);
        out.write(reinterpret_cast<const char*>(&dl), 8);
        out.write(reinterpret_cast<const char*>(data.data()),
                  static_cast<std::streamsize>(dl * sizeof(double)));
    }
    if (!out) throw IoError("write failed: " + path.string());
}

std::map<std::string, std::vector<double>> load_weights(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "FFWB", 4) != 0)
        throw IoError("bad weight blob: " + path.string());
    std::uint32_t count = 0;
    in.read(reinterpret_cast<char*>(&count), 4);
    std::map<std::string, std::vector<double>> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint32_t nl = 0;
        in.read(reinterpret_cast<char*>(&nl), 4);
        std::string name(nl, '\0');
        in.read(name.data(), nl);
        std::uint64_t dl = 0;
        in.read(reinterpret_cast<char*>(&dl), 8);
        std::vector<double> data(dl);
        in.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(dl * sizeof(double)));
        if (!in) throw IoError("truncated weight blob: " + path.string());
        out[name] = std::move(data);
    }
    return out;
}

}  // namespace flowforge::nn

namespace flowforge::vq {

namespace {

constexpr int kFrameEmbDim = 16;
constexpr int kDurEmbDim = 8;
constexpr int kDirEmbDim = 4;
constexpr int kPortEmbDim = 8;
constexpr int kInputWidth =
    kFrameEmbDim + kDurEmbDim + kDirEmbDim + ingest::kProtoCount + 2 * kPortEmbDim;

}  // namespace

void VqstaeConfig::validate() const {
    if (codebook_size < 2) throw ConfigError("codebook size must be >= 2");
    if (code_dim < 1) throw ConfigError("code dim must be >= 1");
    if (layers < 1 || heads < 1 || epochs < 1 || batch_size < 1)
        throw ConfigError("vqstae layer/head/epoch/batch counts must be >= 1");
    if (code_dim % heads != 0) throw ConfigError("code dim must be divisible by heads");
    if (beta < 0.0 || ema_decay <= 0.0 || ema_decay >= 1.0)
        throw ConfigError("vqstae beta/ema_decay out of range");
}

std::optional<std::uint16_t> PortVocab::port_for(int id) const {
    for (const auto& [port, pid] : ids)
        if (pid == id) return port;
    return std::nullopt;
}

PortVocab build_port_vocab(const std::vector<sigs::TokenizedWindow>& windows) {
    std::set<std::uint16_t> seen;
    for (const auto& w : windows) {
        for (const auto& p : w.packets) {
            if (p.src_port) seen.insert(*p.src_port);
            if (p.dst_port) seen.insert(*p.dst_port);
        }
    }
    PortVocab vocab;
    int next = 1;  // 0 is "no port"
    for (std::uint16_t port : seen) vocab.ids[port] = next++;
    vocab.unk_id = next;
    return vocab;
}

FeatureVector featurize(const sigs::TokenizedPacket& p, const Arities& ar,
                        const PortVocab& ports) {
    FeatureVector f;
    f.frame_token = p.frame_token < ar.frame_vocab ? p.frame_token : ar.frame_vocab - 1;
    f.duration_token =
        p.duration_token < ar.duration_vocab ? p.duration_token : ar.duration_vocab - 1;
    f.direction = p.direction == ingest::Direction::Outgoing ? 1 : 0;
    f.flags = p.protocol_flags;
    f.src_port_id = ports.id_for(p.src_port);
    f.dst_port_id = ports.id_for(p.dst_port);
    return f;
}

QuantizeResult quantize(const std::vector<double>& codebook, int dim,
                        const std::vector<double>& z) {
    if (dim <= 0 || codebook.empty() || codebook.size() % static_cast<std::size_t>(dim) != 0)
        throw ConfigError("malformed codebook");
    if (z.size() != static_cast<std::size_t>(dim))
        throw LengthMismatchError("quantize: vector dim mismatch");
    const std::size_t rows = codebook.size() / static_cast<std::size_t>(dim);
    QuantizeResult res;
    res.code = static_cast<int>(kernels::nearest_row(
        codebook.data(), rows, static_cast<std::size_t>(dim), z.data()));
    res.vector.assign(codebook.begin() + res.code * dim,
                      codebook.begin() + (res.code + 1) * dim);
    return res;
}

VqstaeModel::VqstaeModel(Arities arities, PortVocab ports, int seq_len, VqstaeConfig cfg)
    : arities_(arities), ports_(std::move(ports)), seq_len_(seq_len), cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed_for(cfg_.seed, "vqstae-init"));
    const int d = cfg_.code_dim;
    frame_emb_ = nn::Embedding(arities_.frame_vocab, kFrameEmbDim, rng);
    dur_emb_ = nn::Embedding(arities_.duration_vocab, kDurEmbDim, rng);
    dir_emb_ = nn::Embedding(2, kDirEmbDim, rng);
    port_emb_ = nn::Embedding(arities_.port_vocab, kPortEmbDim, rng);
    input_proj_ = nn::Linear(kInputWidth, d, rng);
    enc_pos_ = nn::Tensor::zeros({seq_len_, d}, true);
    dec_pos_ = nn::Tensor::zeros({seq_len_, d}, true);
    for (std::size_t i = 0; i < enc_pos_.size(); ++i) {
        enc_pos_.data()[i] = rng.normal(0.0, 0.02);
        dec_pos_.data()[i] = rng.normal(0.0, 0.02);
    }
    for (int l = 0; l < cfg_.layers; ++l) {
        enc_blocks_.emplace_back(d, cfg_.heads, rng);
        dec_blocks_.emplace_back(d, cfg_.heads, rng);
    }
    head_frame_ = nn::Linear(d, arities_.frame_vocab, rng);
    head_dur_ = nn::Linear(d, arities_.duration_vocab, rng);
    head_dir_ = nn::Linear(d, 2, rng);
    head_flags_ = nn::Linear(d, 2 * ingest::kProtoCount, rng);
    head_sport_ = nn::Linear(d, arities_.port_vocab, rng);
    head_dport_ = nn::Linear(d, arities_.port_vocab, rng);
    codebook_.assign(static_cast<std::size_t>(cfg_.codebook_size) * d, 0.0);
    for (auto& v : codebook_) v = rng.normal(0.0, 0.5);
}

nn::Tensor VqstaeModel::batch_input(
    const std::vector<const sigs::TokenizedWindow*>& batch) const {
    const int b = static_cast<int>(batch.size());
    const int l = seq_len_;
    std::vector<int> frame_ids, dur_ids, dir_ids, sport_ids, dport_ids;
    std::vector<double> flag_vals;
    frame_ids.reserve(static_cast<std::size_t>(b) * l);
    for (const auto* w : batch) {
        for (const auto& p : w->packets) {
            const FeatureVector f = featurize(p, arities_, ports_);
            frame_ids.push_back(f.frame_token);
            dur_ids.push_back(f.duration_token);
            dir_ids.push_back(f.direction);
            sport_ids.push_back(f.src_port_id);
            dport_ids.push_back(f.dst_port_id);
            for (auto bit : f.flags) flag_vals.push_back(static_cast<double>(bit));
        }
    }
    auto flags = nn::Tensor::from({b * l, ingest::kProtoCount}, std::move(flag_vals));
    auto x = nn::concat_lastdim({frame_emb_.forward(frame_ids), dur_emb_.forward(dur_ids),
                                 dir_emb_.forward(dir_ids), flags,
                                 port_emb_.forward(sport_ids), port_emb_.forward(dport_ids)});
    auto proj = nn::reshape(input_proj_.forward(x), {b, l, cfg_.code_dim});
    return nn::add_frame(proj, enc_pos_);
}

nn::Tensor VqstaeModel::encoder_forward(
    const std::vector<sigs::TokenizedWindow>& windows) const {
    std::vector<const sigs::TokenizedWindow*> ptrs;
    ptrs.reserve(windows.size());
    for (const auto& w : windows) ptrs.push_back(&w);
    auto x = batch_input(ptrs);
    for (const auto& blk : enc_blocks_) x = blk.forward(x);
    return x;  // z_e [B, L, D]
}

nn::Tensor VqstaeModel::decoder_forward(const nn::Tensor& z) const {
    auto x = nn::add_frame(z, dec_pos_);
    for (const auto& blk : dec_blocks_) x = blk.forward(x);
    return x;
}

nn::Tensor VqstaeModel::reconstruction_loss(
    const nn::Tensor& decoder_input,
    const std::vector<sigs::TokenizedWindow>& windows) const {
    const int b = static_cast<int>(windows.size());
    const int l = seq_len_;
    std::vector<int> frame_t, dur_t, dir_t, sport_t, dport_t, flag_t;
    for (const auto& w : windows) {
        for (const auto& p : w.packets) {
            const FeatureVector f = featurize(p, arities_, ports_);
            frame_t.push_back(f.frame_token);
            dur_t.push_back(f.duration_token);
            dir_t.push_back(f.direction);
            sport_t.push_back(f.src_port_id);
            dport_t.push_back(f.dst_port_id);
            for (auto bit : f.flags) flag_t.push_back(static_cast<int>(bit));
        }
    }
    auto trunk = nn::reshape(decoder_forward(decoder_input), {b * l, cfg_.code_dim});
    auto loss = nn::softmax_cross_entropy(head_frame_.forward(trunk), frame_t);
    loss = nn::add(loss, nn::softmax_cross_entropy(head_dur_.forward(trunk), dur_t));
    loss = nn::add(loss, nn::softmax_cross_entropy(head_dir_.forward(trunk), dir_t));
    auto flag_logits =
        nn::reshape(head_flags_.forward(trunk), {b * l * ingest::kProtoCount, 2});
    loss = nn::add(loss, nn::softmax_cross_entropy(flag_logits, flag_t));
    loss = nn::add(loss, nn::softmax_cross_entropy(head_sport_.forward(trunk), sport_t));
    loss = nn::add(loss, nn::softmax_cross_entropy(head_dport_.forward(trunk), dport_t));
    return loss;
}

std::vector<int> VqstaeModel::encode(const sigs::TokenizedWindow& window) const {
    if (static_cast<int>(window.packets.size()) != seq_len_)
        throw VocabMismatchError("window length " + std::to_string(window.packets.size()) +
                                 " does not match model sequence length " +
                                 std::to_string(seq_len_));
    for (const auto& p : window.packets) {
        if (p.frame_token < 0 || p.frame_token >= arities_.frame_vocab)
            throw VocabMismatchError("frame token " + std::to_string(p.frame_token) +
                                     " outside model vocabulary");
        if (p.duration_token < 0 || p.duration_token >= arities_.duration_vocab)
            throw VocabMismatchError("duration token " + std::to_string(p.duration_token) +
                                     " outside model vocabulary");
    }
    nn::NoGradGuard ng;
    auto z = encoder_forward({window});
    std::vector<int> codes(static_cast<std::size_t>(seq_len_));
    const int d = cfg_.code_dim;
    for (int i = 0; i < seq_len_; ++i) {
        codes[static_cast<std::size_t>(i)] = static_cast<int>(kernels::nearest_row(
            codebook_.data(), static_cast<std::size_t>(cfg_.codebook_size),
            static_cast<std::size_t>(d), z.data() + static_cast<std::size_t>(i) * d));
    }
    return codes;
}

std::vector<DecodedPacket> VqstaeModel::decode(const std::vector<int>& codes) const {
    if (static_cast<int>(codes.size()) != seq_len_)
        throw InvalidTokenError("code sequence length " + std::to_string(codes.size()) +
                                " does not match model sequence length");
    const int d = cfg_.code_dim;
    std::vector<double> zvals;
    zvals.reserve(codes.size() * static_cast<std::size_t>(d));
    for (int c : codes) {
        if (c < 0 || c >= cfg_.codebook_size)
            throw InvalidTokenError("code " + std::to_string(c) + " outside [0," +
                                    std::to_string(cfg_.codebook_size) + ")");
        zvals.insert(zvals.end(), codebook_.begin() + static_cast<std::size_t>(c) * d,
                     codebook_.begin() + static_cast<std::size_t>(c + 1) * d);
    }
    nn::NoGradGuard ng;
    auto z = nn::Tensor::from({1, seq_len_, d}, std::move(zvals));
    auto trunk = nn::reshape(decoder_forward(z), {seq_len_, d});

    auto argmax_rows = [](const nn::Tensor& logits) {
        std::vector<int> out(static_cast<std::size_t>(logits.dim(0)));
        const int v = logits.dim(1);
        for (int r = 0; r < logits.dim(0); ++r) {
            const double* row = logits.data() + static_cast<std::size_t>(r) * v;
            int best = 0;
            for (int i = 1; i < v; ++i)
                if (row[i] > row[best]) best = i;
            out[static_cast<std::size_t>(r)] = best;
        }
        return out;
    };

    const auto frame = argmax_rows(head_frame_.forward(trunk));
    const auto dur = argmax_rows(head_dur_.forward(trunk));
    const auto dir = argmax_rows(head_dir_.forward(trunk));
    const auto flags = argmax_rows(
        nn::reshape(head_flags_.forward(trunk), {seq_len_ * ingest::kProtoCount, 2}));
    const auto sport = argmax_rows(head_sport_.forward(trunk));
    const auto dport = argmax_rows(head_dport_.forward(trunk));

    std::vector<DecodedPacket> out(static_cast<std::size_t>(seq_len_));
    for (int i = 0; i < seq_len_; ++i) {
        auto& p = out[static_cast<std::size_t>(i)];
        p.frame_token = frame[static_cast<std::size_t>(i)];
        p.duration_token = dur[static_cast<std::size_t>(i)];
        p.direction = dir[static_cast<std::size_t>(i)] == 1 ? ingest::Direction::Outgoing
                                                            : ingest::Direction::Incoming;
        for (int fbit = 0; fbit < ingest::kProtoCount; ++fbit)
            p.protocol_flags[static_cast<std::size_t>(fbit)] = static_cast<std::uint8_t>(
                flags[static_cast<std::size_t>(i * ingest::kProtoCount + fbit)]);
        p.src_port_id = sport[static_cast<std::size_t>(i)];
        p.dst_port_id = dport[static_cast<std::size_t>(i)];
    }
    return out;
}

std::vector<std::pair<std::string, nn::Tensor>> VqstaeModel::named_params() const {
    std::vector<std::pair<std::string, nn::Tensor>> out;
    auto push = [&out](const std::string& name, const nn::Tensor& t) {
        out.emplace_back(name, t);
    };
    push("frame_emb", frame_emb_.table);
    push("dur_emb", dur_emb_.table);
    push("dir_emb", dir_emb_.table);
    push("port_emb", port_emb_.table);
    push("input_proj.w", input_proj_.w);
    push("input_proj.b", input_proj_.b);
    push("enc_pos", enc_pos_);
    push("dec_pos", dec_pos_);
    auto push_block = [&push](const std::string& prefix, const nn::TransformerBlock& blk) {
        push(prefix + ".wq.w", blk.wq.w);
        push(prefix + ".wq.b", blk.wq.b);
        push(prefix + ".wk.w", blk.wk.w);
        push(prefix + ".wk.b", blk.wk.b);
        push(prefix + ".wv.w", blk.wv.w);
        push(prefix + ".wv.b", blk.wv.b);
        push(prefix + ".wo.w", blk.wo.w);
        push(prefix + ".wo.b", blk.wo.b);
        push(prefix + ".ff1.w", blk.ff1.w);
        push(prefix + ".ff1.b", blk.ff1.b);
        push(prefix + ".ff2.w", blk.ff2.w);
        push(prefix + ".ff2.b", blk.ff2.b);
        push(prefix + ".ln1.g", blk.ln1.gain);
        push(prefix + ".ln1.b", blk.ln1.bias);
        push(prefix + ".ln2.g", blk.ln2.gain);
        push(prefix + ".ln2.b", blk.ln2.bias);
    };
    for (std::size_t i = 0; i < enc_blocks_.size(); ++i)
        push_block("enc" + std::to_string(i), enc_blocks_[i]);
    for (std::size_t i = 0; i < dec_blocks_.size(); ++i)
        push_block("dec" + std::to_string(i), dec_blocks_[i]);
    push("head_frame.w", head_frame_.w);
    push("head_frame.b", head_frame_.b);
    push("head_dur.w", head_dur_.w);
    push("head_dur.b", head_dur_.b);
    push("head_dir.w", head_dir_.w);
    push("head_dir.b", head_dir_.b);
    push("head_flags.w", head_flags_.w);
    push("head_flags.b", head_flags_.b);
    push("head_sport.w", head_sport_.w);
    push("head_sport.b", head_sport_.b);
    push("head_dport.w", head_dport_.w);
    push("head_dport.b", head_dport_.b);
    return out;
}

struct VqTrainer {
    static VqstaeModel run(const std::vector<sigs::TokenizedWindow>& windows,
                           const VqstaeConfig& cfg) {
        if (windows.empty()) throw DataError("no windows to train VQ-STAE on");
        cfg.validate();

        const int l = static_cast<int>(windows.front().packets.size());
        int max_frame = 0, max_dur = 0;
        for (const auto& w : windows) {
            if (static_cast<int>(w.packets.size()) != l)
                throw DataError("inconsistent window lengths in training set");
            for (const auto& p : w.packets) {
                max_frame = std::max(max_frame, p.frame_token);
                max_dur = std::max(max_dur, p.duration_token);
            }
        }
        Arities ar;
        ar.frame_vocab = max_frame + 2;  // +1 for UNK headroom
        ar.duration_vocab = max_dur + 2;
        PortVocab ports = build_port_vocab(windows);
        ar.port_vocab = ports.size();

        VqstaeModel model(ar, std::move(ports), l, cfg);
        const int k = cfg.codebook_size;
        const int d = cfg.code_dim;

        std::vector<nn::Tensor> params;
        for (auto& [name, t] : model.named_params()) params.push_back(t);
        nn::AdamConfig acfg;
        acfg.lr = cfg.lr;
        acfg.clip_norm = 5.0;
        nn::Adam opt(std::move(params), acfg);

        Rng rng(seed_for(cfg.seed, "vqstae-train"));

        // EMA codebook state
        std::vector<double> cluster_size(static_cast<std::size_t>(k), 1.0);
        std::vector<double> ema_sum = model.codebook_;
        bool codebook_seeded = false;

        std::vector<std::size_t> order(windows.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

        for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
            rng.shuffle(order);
            double ep_recon = 0.0, ep_commit = 0.0, ep_codebook = 0.0;
            std::size_t batches = 0;
            std::vector<std::size_t> usage(static_cast<std::size_t>(k), 0);
            std::vector<double> last_ze;  // for dead-code reseeding

            for (std::size_t start = 0; start < order.size();
                 start += static_cast<std::size_t>(cfg.batch_size)) {
                std::vector<sigs::TokenizedWindow> batch;
                for (std::size_t i = start;
                     i < std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
                     ++i)
                    batch.push_back(windows[order[i]]);

                auto z_e = model.encoder_forward(batch);
                const std::size_t m = z_e.size() / static_cast<std::size_t>(d);

                if (!codebook_seeded) {
                    // Seed codes from real encoder outputs so early EMA
                    // updates move every entry.
                    for (int c = 0; c < k; ++c) {
                        const std::size_t row = rng.uniform_u64(m);
                        for (int j = 0; j < d; ++j)
                            model.codebook_[static_cast<std::size_t>(c) * d + j] =
                                z_e.data()[row * d + j] + rng.normal(0.0, 0.01);
                    }
                    ema_sum = model.codebook_;
                    std::fill(cluster_size.begin(), cluster_size.end(), 1.0);
                    codebook_seeded = true;
                }

                // nearest codes + z_q values
                std::vector<int> codes(m);
                std::vector<double> zq(m * static_cast<std::size_t>(d));
                for (std::size_t r = 0; r < m; ++r) {
                    const auto c = kernels::nearest_row(
                        model.codebook_.data(), static_cast<std::size_t>(k),
                        static_cast<std::size_t>(d), z_e.data() + r * d);
                    codes[r] = static_cast<int>(c);
                    ++usage[c];
                    std::copy_n(model.codebook_.data() + c * static_cast<std::size_t>(d), d,
                                zq.data() + r * d);
                }
                last_ze.assign(z_e.data(), z_e.data() + z_e.size());

                const double cb_loss =
                    kernels::sq_dist(z_e.data(), zq.data(), zq.size()) /
                    static_cast<double>(zq.size());

                // straight-through: decoder sees z_q, encoder sees identity grads
                std::vector<double> delta(zq.size());
                for (std::size_t i = 0; i < zq.size(); ++i)
                    delta[i] = zq[i] - z_e.data()[i];
                auto st = nn::add(z_e, nn::Tensor::from(z_e.shape(), std::move(delta)));
                auto zq_const = nn::Tensor::from(z_e.shape(), zq);

                auto recon = model.reconstruction_loss(st, batch);
                auto commit = nn::scale(nn::mse(z_e, zq_const), cfg.beta);
                auto loss = nn::add(recon, commit);

                opt.zero_grad();
                nn::backward(loss);
                opt.step();

                ep_recon += recon.item();
                ep_commit += commit.item();
                ep_codebook += cb_loss;
                ++batches;

                // EMA codebook update
                std::vector<double> counts(static_cast<std::size_t>(k), 0.0);
                std::vector<double> sums(static_cast<std::size_t>(k) * d, 0.0);
                for (std::size_t r = 0; r < m; ++r) {
                    counts[static_cast<std::size_t>(codes[r])] += 1.0;
                    kernels::axpy(1.0, z_e.data() + r * d,
                                  sums.data() + static_cast<std::size_t>(codes[r]) * d, d);
                }
                const double decay = cfg.ema_decay;
                double total = 0.0;
                for (int c = 0; c < k; ++c) {
                    cluster_size[static_cast<std::size_t>(c)] =
                        decay * cluster_size[static_cast<std::size_t>(c)] +
                        (1.0 - decay) * counts[static_cast<std::size_t>(c)];
                    total += cluster_size[static_cast<std::size_t>(c)];
                    for (int j = 0; j < d; ++j) {
                        const std::size_t idx = static_cast<std::size_t>(c) * d + j;
                        ema_sum[idx] = decay * ema_sum[idx] + (1.0 - decay) * sums[idx];
                    }
                }
                const double eps = 1e-5;
                for (int c = 0; c < k; ++c) {
                    const double smoothed =
                        (cluster_size[static_cast<std::size_t>(c)] + eps) /
                        (total + static_cast<double>(k) * eps) * total;
                    for (int j = 0; j < d; ++j)
                        model.codebook_[static_cast<std::size_t>(c) * d + j] =
                            ema_sum[static_cast<std::size_t>(c) * d + j] / smoothed;
                }
            }

            // reseed entries unused for the whole epoch
            if (!last_ze.empty()) {
                const std::size_t m = last_ze.size() / static_cast<std::size_t>(d);
                for (int c = 0; c < k; ++c) {
                    if (usage[static_cast<std::size_t>(c)] > 0) continue;
                    const std::size_t row = rng.uniform_u64(m);
                    for (int j = 0; j < d; ++j) {
                        const std::size_t idx = static_cast<std::size_t>(c) * d + j;
                        model.codebook_[idx] = last_ze[row * d + j] + rng.normal(0.0, 0.01);
                        ema_sum[idx] = model.codebook_[idx];
                    }
                    cluster_size[static_cast<std::size_t>(c)] = 1.0;
                }
            }

            model.stats_.recon_loss.push_back(ep_recon / static_cast<double>(batches));
            model.stats_.commit_loss.push_back(ep_commit / static_cast<double>(batches));
            model.stats_.codebook_loss.push_back(ep_codebook / static_cast<double>(batches));
        }
        return model;
    }
};

VqstaeModel train_vqstae(const std::vector<sigs::TokenizedWindow>& windows,
                         const VqstaeConfig& cfg) {
    return VqTrainer::run(windows, cfg);
}

FieldAccuracy reconstruction_accuracy(const VqstaeModel& model,
                                      const std::vector<sigs::TokenizedWindow>& windows) {
    FieldAccuracy acc;
    std::size_t n = 0, frame_ok = 0, dur_ok = 0, dir_ok = 0, flags_ok = 0, ports_ok = 0;
    for (const auto& w : windows) {
        const auto decoded = model.decode(model.encode(w));
        for (std::size_t i = 0; i < w.packets.size(); ++i) {
            const auto& real = w.packets[i];
            const auto& rec = decoded[i];
            const FeatureVector f = featurize(real, model.arities(), model.port_vocab());
            ++n;
            frame_ok += rec.frame_token == f.frame_token;
            dur_ok += rec.duration_token == f.duration_token;
            dir_ok += (rec.direction == real.direction);
            bool flags_eq = true;
            for (int fbit = 0; fbit < ingest::kProtoCount; ++fbit)
                flags_eq = flags_eq && rec.protocol_flags[static_cast<std::size_t>(fbit)] ==
                                           real.protocol_flags[static_cast<std::size_t>(fbit)];
            flags_ok += flags_eq;
            ports_ok += (rec.src_port_id == f.src_port_id && rec.dst_port_id == f.dst_port_id);
        }
    }
    const double dn = static_cast<double>(n);
    acc.frame = static_cast<double>(frame_ok) / dn;
    acc.duration = static_cast<double>(dur_ok) / dn;
    acc.direction = static_cast<double>(dir_ok) / dn;
    acc.flags = static_cast<double>(flags_ok) / dn;
    acc.ports = static_cast<double>(ports_ok) / dn;
    return acc;
}

void VqstaeModel::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    ordered_json manifest;
    manifest["format_version"] = 1;
    manifest["kind"] = "vqstae";
    manifest["seq_len"] = seq_len_;
    manifest["arities"] = {{"frame_vocab", arities_.frame_vocab},
                           {"duration_vocab", arities_.duration_vocab},
                           {"port_vocab", arities_.port_vocab}};
    ordered_json ports = ordered_json::array();
    for (const auto& [port, id] : ports_.ids) ports.push_back({{"port", port}, {"id", id}});
    manifest["port_vocab"] = {{"ports", ports}, {"unk_id", ports_.unk_id}};
    manifest["config"] = {{"codebook_size", cfg_.codebook_size},
                          {"code_dim", cfg_.code_dim},
                          {"layers", cfg_.layers},
                          {"heads", cfg_.heads},
                          {"beta", cfg_.beta},
                          {"ema_decay", cfg_.ema_decay},
                          {"epochs", cfg_.epochs},
                          {"batch_size", cfg_.batch_size},
                          {"lr", cfg_.lr},
                          {"seed", cfg_.seed}};
    manifest["loss_history"] = {{"reconstruction", stats_.recon_loss},
                                {"commitment", stats_.commit_loss},
                                {"codebook", stats_.codebook_loss}};
    std::ofstream mf(dir / "manifest.json", std::ios::trunc);
    mf << manifest.dump(2) << "\n";
    if (!mf) throw IoError("cannot write manifest: " + (dir / "manifest.json").string());

    std::vector<std::pair<std::string, std::vector<double>>> entries;
    for (const auto& [name, t] : named_params()) entries.emplace_back(name, t.values());
    entries.emplace_back("codebook", codebook_);
    nn::save_weights(dir / "weights.bin", entries);
}

VqstaeModel VqstaeModel::load(const std::filesystem::path& dir) {
    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw IoError("cannot open manifest: " + (dir / "manifest.json").string());
    ordered_json manifest = ordered_json::parse(mf);
    if (manifest.at("kind") != "vqstae") throw IoError("manifest kind mismatch");

    Arities ar;
    ar.frame_vocab = manifest.at("arities").at("frame_vocab").get<int>();
    ar.duration_vocab = manifest.at("arities").at("duration_vocab").get<int>();
    ar.port_vocab = manifest.at("arities").at("port_vocab").get<int>();
    PortVocab ports;
    for (const auto& e : manifest.at("port_vocab").at("ports"))
        ports.ids[e.at("port").get<std::uint16_t>()] = e.at("id").get<int>();
    ports.unk_id = manifest.at("port_vocab").at("unk_id").get<int>();

    VqstaeConfig cfg;
    const auto& jc = manifest.at("config");
    cfg.codebook_size = jc.at("codebook_size").get<int>();
    cfg.code_dim = jc.at("code_dim").get<int>();
    cfg.layers = jc.at("layers").get<int>();
    cfg.heads = jc.at("heads").get<int>();
    cfg.beta = jc.at("beta").get<double>();
    cfg.ema_decay = jc.at("ema_decay").get<double>();
    cfg.epochs = jc.at("epochs").get<int>();
    cfg.batch_size = jc.at("batch_size").get<int>();
    cfg.lr = jc.at("lr").get<double>();
    cfg.seed = jc.at("seed").get<std::uint64_t>();

    VqstaeModel model(ar, std::move(ports), manifest.at("seq_len").get<int>(), cfg);
    auto blob = nn::load_weights(dir / "weights.bin");
    for (auto& [name, t] : model.named_params()) {
        auto it = blob.find(name);
        if (it == blob.end() || it->second.size() != t.size())
            throw IoError("checkpoint missing or mis-sized tensor: " + name);
        std::copy(it->second.begin(), it->second.end(), t.data());
    }
    auto cb = blob.find("codebook");
    if (cb == blob.end() || cb->second.size() != model.codebook_.size())
        throw IoError("checkpoint missing codebook");
    model.codebook_ = cb->second;
    model.stats_.recon_loss =
        manifest.at("loss_history").at("reconstruction").get<std::vector<double>>();
    model.stats_.commit_loss =
        manifest.at("loss_history").at("commitment").get<std::vector<double>>();
    model.stats_.codebook_loss =
        manifest.at("loss_history").at("codebook").get<std::vector<double>>();
    return model;
}

}  // namespace flowforge::vq
