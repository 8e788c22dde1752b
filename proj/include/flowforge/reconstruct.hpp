#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "flowforge/durations.hpp"
#include "flowforge/nn/layers.hpp"
#include "flowforge/signatures.hpp"
#include "flowforge/vqstae.hpp"

namespace flowforge::recon {

struct FrameLengthConfig {
    int window = 2;      // sliding window half-width over tokens/codes
    int lookbehind = 2;  // previous predicted lengths fed back
    int noise_dim = 8;
    int hidden = 64;
    int epochs = 40;
    int batch_size = 32;
    double lr = 1e-3;
    std::uint64_t seed = 1;

    void validate() const;
};

struct FrameSample {
    std::vector<int> frame_tokens;
    std::vector<int> codes;
    std::vector<std::uint32_t> lengths;
};

// MLP classifier over the training length vocabulary. Inputs per position:
// frame tokens and codes in [t-w, t+w] (PAD outside), the previous b
// predicted lengths, and a noise vector.
class FrameLengthModel {
public:
    FrameLengthModel() = default;

    const std::vector<std::uint32_t>& length_vocab() const { return lengths_; }
    double training_accuracy() const { return train_accuracy_; }

    // Distribution over the length vocabulary for one position (exposed for
    // support tests); prev_lengths are the already-predicted lengths.
    std::vector<double> position_distribution(const std::vector<int>& frame_tokens,
                                              const std::vector<int>& codes,
                                              const std::vector<std::uint32_t>& prev_lengths,
                                              int position, Rng& rng) const;

    std::vector<std::pair<std::string, nn::Tensor>> named_params() const;
    void save(const std::filesystem::path& dir) const;
    static FrameLengthModel load(const std::filesystem::path& dir);

private:
    friend FrameLengthModel train_frame_length_model(
        const std::vector<FrameSample>& samples, const sigs::FrameVocab& vocab,
        const std::vector<sigs::Signature>& ranked, int code_vocab,
        const FrameLengthConfig& cfg);
    friend std::vector<std::uint32_t> predict_frame_lengths(const FrameLengthModel& model,
                                                            const std::vector<int>& frame_tokens,
                                                            const std::vector<int>& codes,
                                                            Rng& rng);

    nn::Tensor features(const std::vector<int>& frame_tokens, const std::vector<int>& codes,
                        const std::vector<std::uint32_t>& prev_lengths, int position,
                        Rng& rng) const;

    FrameLengthConfig cfg_;
    int frame_vocab_ = 0;  // PAD = frame_vocab_
    int code_vocab_ = 0;   // PAD = code_vocab_
    std::vector<std::uint32_t> lengths_;  // sorted distinct training lengths
    std::map<std::uint32_t, int> length_ids_;

    struct TokenRule {
        enum class Kind { Model, SignatureRange, OrphanFixed, Unk } kind = Kind::Model;
        std::uint32_t min_len = 0;
        std::uint32_t max_len = 0;
    };
    std::vector<TokenRule> token_rules_;     // indexed by frame token
    std::vector<std::uint32_t> orphan_pool_;  // empirical lengths for UNK

    nn::Embedding tok_emb_, code_emb_, len_emb_;
    nn::Linear fc1_, fc2_, out_;
    double train_accuracy_ = 0.0;
};

FrameLengthModel train_frame_length_model(const std::vector<FrameSample>& samples,
                                          const sigs::FrameVocab& vocab,
                                          const std::vector<sigs::Signature>& ranked,
                                          int code_vocab, const FrameLengthConfig& cfg);

// Autoregressive sampling; signature-bound tokens are clamped into their
// position's range, orphan tokens return their bound length directly, UNK
// samples from the empirical orphan pool.
std::vector<std::uint32_t> predict_frame_lengths(const FrameLengthModel& model,
                                                 const std::vector<int>& frame_tokens,
                                                 const std::vector<int>& codes, Rng& rng);

struct SyntheticWindow {
    std::string device_id;
    std::string capture_id;  // synthetic batch id
    std::vector<ingest::PacketRecord> packets;
    std::string generator_checkpoint;
    std::uint64_t seed = 0;
};

// Combine decoded fields, predicted lengths and sampled durations into a full
// metadata window. Ports are made coherent with the transport flags and the
// application flags are re-derived from ports the same way the dissector does.
SyntheticWindow assemble_flow(const std::vector<vq::DecodedPacket>& decoded,
                              const std::vector<int>& codes,
                              const FrameLengthModel& frame_model,
                              const durations::DurationModel& duration_model,
                              const vq::PortVocab& ports, Rng& rng,
                              const std::string& device_id, const std::string& capture_id);

void write_synthetic_jsonl(const std::filesystem::path& path,
                           const std::vector<SyntheticWindow>& windows);
std::vector<SyntheticWindow> read_synthetic_jsonl(const std::filesystem::path& path,
                                                  int window_len);

}  // namespace flowforge::recon
