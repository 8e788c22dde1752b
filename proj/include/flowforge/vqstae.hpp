#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "flowforge/nn/layers.hpp"
#include "flowforge/signatures.hpp"

namespace flowforge::vq {

struct VqstaeConfig {
    int codebook_size = 64;  // K
    int code_dim = 64;       // D, also the transformer width
    int layers = 2;
    int heads = 4;
    double beta = 0.25;      // commitment weight
    double ema_decay = 0.99;
    int epochs = 80;
    int batch_size = 16;
    double lr = 1e-3;
    std::uint64_t seed = 1;

    void validate() const;
};

// Per-device port vocabulary: id 0 = no port, then each observed port in
// ascending order, UNK last.
struct PortVocab {
    std::map<std::uint16_t, int> ids;
    int unk_id = 1;

    int size() const { return unk_id + 1; }
    int id_for(const std::optional<std::uint16_t>& port) const {
        if (!port) return 0;
        const auto it = ids.find(*port);
        return it != ids.end() ? it->second : unk_id;
    }
    std::optional<std::uint16_t> port_for(int id) const;  // nullopt for 0 / UNK
};

PortVocab build_port_vocab(const std::vector<sigs::TokenizedWindow>& windows);

struct Arities {
    int frame_vocab = 0;     // includes UNK
    int duration_vocab = 0;
    int port_vocab = 0;      // PortVocab::size()
};

struct FeatureVector {
    int frame_token = 0;
    int duration_token = 0;
    int direction = 0;  // Outgoing = 1
    std::array<std::uint8_t, ingest::kProtoCount> flags{};
    int src_port_id = 0;
    int dst_port_id = 0;
};

// Deterministic field-wise assembly; ports fall back to UNK.
FeatureVector featurize(const sigs::TokenizedPacket& p, const Arities& ar,
                        const PortVocab& ports);

struct DecodedPacket {
    int frame_token = 0;
    int duration_token = 0;
    ingest::Direction direction = ingest::Direction::Incoming;
    ingest::ProtocolFlags protocol_flags{};
    int src_port_id = 0;
    int dst_port_id = 0;
};

struct QuantizeResult {
    int code = 0;
    std::vector<double> vector;
};

// Nearest codebook row by squared Euclidean distance, lowest index on ties.
QuantizeResult quantize(const std::vector<double>& codebook, int dim,
                        const std::vector<double>& z);

struct TrainStats {
    std::vector<double> recon_loss;     // per epoch
    std::vector<double> commit_loss;    // per epoch (non-negative)
    std::vector<double> codebook_loss;  // per epoch (non-negative)
};

class VqstaeModel {
public:
    VqstaeModel() = default;
    VqstaeModel(Arities arities, PortVocab ports, int seq_len, VqstaeConfig cfg);

    std::vector<int> encode(const sigs::TokenizedWindow& window) const;
    std::vector<DecodedPacket> decode(const std::vector<int>& codes) const;

    const VqstaeConfig& config() const { return cfg_; }
    const Arities& arities() const { return arities_; }
    const PortVocab& port_vocab() const { return ports_; }
    int seq_len() const { return seq_len_; }
    const std::vector<double>& codebook() const { return codebook_; }
    const TrainStats& stats() const { return stats_; }

    std::vector<std::pair<std::string, nn::Tensor>> named_params() const;

    void save(const std::filesystem::path& dir) const;
    static VqstaeModel load(const std::filesystem::path& dir);

    friend VqstaeModel train_vqstae(const std::vector<sigs::TokenizedWindow>& windows,
                                    const VqstaeConfig& cfg);

    // test hook: straight-through wiring check runs the graph with
    // quantization replaced by identity
    nn::Tensor encoder_forward(const std::vector<sigs::TokenizedWindow>& windows) const;
    nn::Tensor reconstruction_loss(const nn::Tensor& decoder_input,
                                   const std::vector<sigs::TokenizedWindow>& windows) const;

private:
    nn::Tensor batch_input(const std::vector<const sigs::TokenizedWindow*>& batch) const;
    nn::Tensor decoder_forward(const nn::Tensor& z) const;

    Arities arities_;
    PortVocab ports_;
    int seq_len_ = 0;
    VqstaeConfig cfg_;

    nn::Embedding frame_emb_, dur_emb_, dir_emb_, port_emb_;
    nn::Linear input_proj_;
    nn::Tensor enc_pos_, dec_pos_;
    std::vector<nn::TransformerBlock> enc_blocks_, dec_blocks_;
    nn::Linear head_frame_, head_dur_, head_dir_, head_flags_, head_sport_, head_dport_;

    std::vector<double> codebook_;  // [K, D]
    TrainStats stats_;

    friend struct VqTrainer;
};

VqstaeModel train_vqstae(const std::vector<sigs::TokenizedWindow>& windows,
                         const VqstaeConfig& cfg);

struct FieldAccuracy {
    double frame = 0.0;
    double duration = 0.0;
    double direction = 0.0;
    double flags = 0.0;
    double ports = 0.0;
};

// encode-decode agreement on every field, averaged over packets.
FieldAccuracy reconstruction_accuracy(const VqstaeModel& model,
                                      const std::vector<sigs::TokenizedWindow>& windows);

}  // namespace flowforge::vq
