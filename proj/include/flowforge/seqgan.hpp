#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "flowforge/nn/layers.hpp"
#include "flowforge/rng.hpp"

namespace flowforge::gan {

using DiscreteSequence = std::vector<int>;

struct GanTrainConfig {
    int pretrain_epochs = 30;
    int adversarial_rounds = 20;
    int rollout_count = 16;  // N_roll
    double gen_lr = 5e-3;
    double disc_lr = 1e-3;
    int disc_steps = 2;      // discriminator updates per generator step
    int batch_size = 16;
    double variety_tau = 0.3;
    std::uint64_t seed = 1;

    void validate() const;
};

// Autoregressive recurrent policy over a code vocabulary of size K, fixed
// sequence length C, with a dedicated start token.
class GeneratorPolicy {
public:
    GeneratorPolicy() = default;
    GeneratorPolicy(int vocab, int seq_len, std::uint64_t seed,
                    int emb_dim = 32, int hidden_dim = 32);

    int vocab() const { return vocab_; }
    int seq_len() const { return seq_len_; }
    double temperature() const { return temperature_; }
    void set_temperature(double t) { temperature_ = t; }

    std::vector<DiscreteSequence> sample_batch(int count, Rng& rng) const;
    // Probability row for the next code given a prefix (teacher-forced).
    std::vector<double> step_distribution(const DiscreteSequence& prefix) const;
    // Complete `count` sequences from the prefix.
    std::vector<DiscreteSequence> complete(const DiscreteSequence& prefix, int count,
                                           Rng& rng) const;

    std::vector<std::pair<std::string, nn::Tensor>> named_params() const;
    // Tensors are shared on copy; clone() duplicates the weights.
    GeneratorPolicy clone() const;
    void save(const std::filesystem::path& dir) const;
    static GeneratorPolicy load(const std::filesystem::path& dir);

private:
    friend class GanTrainer;
    friend struct GenRollout;

    int vocab_ = 0;
    int seq_len_ = 0;
    int emb_dim_ = 32;
    int hidden_dim_ = 32;
    double temperature_ = 1.0;
    std::uint64_t init_seed_ = 0;
    nn::Embedding emb_;  // vocab+1 rows, last = start token
    nn::GruCell cell_;
    nn::Linear head_;
};

// Convolutional classifier over complete code sequences; score is P(real).
class SequenceDiscriminator {
public:
    SequenceDiscriminator() = default;
    SequenceDiscriminator(int vocab, int seq_len, std::uint64_t seed,
                          int emb_dim = 32, int filters = 32);

    int vocab() const { return vocab_; }
    int seq_len() const { return seq_len_; }

    double score(const DiscreteSequence& seq) const;
    std::vector<double> score_batch(const std::vector<DiscreteSequence>& seqs) const;

    std::vector<std::pair<std::string, nn::Tensor>> named_params() const;
    void save(const std::filesystem::path& dir) const;
    static SequenceDiscriminator load(const std::filesystem::path& dir);

private:
    friend class GanTrainer;

    nn::Tensor logits(const std::vector<DiscreteSequence>& seqs) const;  // [B,2]

    int vocab_ = 0;
    int seq_len_ = 0;
    int emb_dim_ = 32;
    int filters_ = 32;
    std::uint64_t init_seed_ = 0;
    nn::Embedding emb_;
    nn::Linear conv3_, conv5_;
    nn::Linear highway_t_, highway_h_;
    nn::Linear out_;
};

struct TrainCurvePoint {
    int round = 0;
    double disc_accuracy = 0.0;
    double mean_reward = 0.0;
    double nll = 0.0;
};

// Maximum-likelihood pretraining on real code sequences; returns per-epoch
// mean NLL. Throws DataError on empty input.
std::vector<double> pretrain(GeneratorPolicy& gen,
                             const std::vector<DiscreteSequence>& real_codes,
                             const GanTrainConfig& cfg);

// Expected discriminator reward for a prefix of length t <= C: the score
// itself at t == C, otherwise the mean over rollout completions. The scorer
// overload lets tests plug a fixed reward table in place of a trained
// discriminator.
using SequenceScorer = std::function<double(const DiscreteSequence&)>;
double rollout_reward(const GeneratorPolicy& gen, const SequenceScorer& scorer,
                      const DiscreteSequence& prefix, int rollout_count, Rng& rng);
double rollout_reward(const GeneratorPolicy& gen, const SequenceDiscriminator& disc,
                      const DiscreteSequence& prefix, int rollout_count, Rng& rng);

// Mean per-token NLL of teacher-forced sequences, optionally weighted
// per (step, row); this is the loss surface both training phases descend.
nn::Tensor forced_nll(const GeneratorPolicy& gen,
                      const std::vector<DiscreteSequence>& batch,
                      const std::vector<std::vector<double>>* step_weights = nullptr);

std::vector<TrainCurvePoint> adversarial_train(
    GeneratorPolicy& gen, SequenceDiscriminator& disc,
    const std::vector<DiscreteSequence>& real_codes, const GanTrainConfig& cfg);

std::vector<DiscreteSequence> sample(const GeneratorPolicy& gen, int count,
                                     std::uint64_t seed);

struct VarietyReport {
    bool pass = false;
    double distinct_ratio = 0.0;
    double modal_share = 0.0;
};

VarietyReport variety_check(const std::vector<DiscreteSequence>& samples, double tau);

struct GenerationResult {
    std::vector<DiscreteSequence> samples;
    VarietyReport variety;
    int attempts = 0;
    bool retrained = false;
};

// Variety-guarded sampling: on failure resample with temperature raised by
// 0.2 (3 attempts), then restart adversarial training from the pretrained
// checkpoint with a fresh seed and try once more.
GenerationResult sample_with_variety_guard(GeneratorPolicy& gen,
                                           SequenceDiscriminator& disc,
                                           const GeneratorPolicy& pretrained,
                                           const std::vector<DiscreteSequence>& real_codes,
                                           const GanTrainConfig& cfg, int count,
                                           std::uint64_t seed);

void write_curves_csv(const std::filesystem::path& path,
                      const std::vector<TrainCurvePoint>& curve);

}  // namespace flowforge::gan
