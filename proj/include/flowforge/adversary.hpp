#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "flowforge/ingest.hpp"
#include "flowforge/nn/layers.hpp"

namespace flowforge::adversary {

struct AdversaryConfig {
    int hidden = 64;
    int epochs = 25;
    int batch_size = 16;
    double lr = 1e-3;
    int folds = 5;
    std::uint64_t seed = 1;

    void validate() const;
};

// Categorical vocabularies fitted on the adversary's training split only;
// anything unseen maps to UNK. Timings are standardized reals.
struct FeatureEncoder {
    std::map<std::uint32_t, int> length_ids;
    int length_unk = 0;
    std::map<std::uint16_t, int> port_ids;  // 0 reserved for "no port"
    int port_unk = 1;
    std::map<std::uint16_t, int> protocfg_ids;  // 16-bit flag pattern -> id
    int protocfg_unk = 0;
    double timing_mean = 0.0;
    double timing_std = 1.0;

    static FeatureEncoder fit(const std::vector<ingest::TrafficWindow>& train);

    int length_id(std::uint32_t len) const;
    int port_id(const std::optional<std::uint16_t>& port) const;
    int protocfg_id(const ingest::ProtocolFlags& flags) const;
    double standardize(double timing) const;

    int length_vocab() const { return length_unk + 1; }
    int port_vocab() const { return port_unk + 1; }
    int protocfg_vocab() const { return protocfg_unk + 1; }
};

struct AdversaryInput {
    std::vector<int> length_ids;    // per packet
    std::vector<double> timings;    // standardized
    std::vector<int> directions;
    std::vector<int> protocfg_ids;
    std::vector<int> src_port_ids;
    std::vector<int> dst_port_ids;
};

AdversaryInput encode_features(const ingest::TrafficWindow& window,
                               const FeatureEncoder& encoder);

// LSTM sequence classifier over AdversaryInput.
class SequenceClassifier {
public:
    SequenceClassifier() = default;
    SequenceClassifier(const FeatureEncoder& encoder, int classes, int hidden,
                       std::uint64_t seed);

    const FeatureEncoder& encoder() const { return encoder_; }
    int classes() const { return classes_; }

    std::vector<double> class_probabilities(const ingest::TrafficWindow& window) const;
    int predict(const ingest::TrafficWindow& window) const;
    double accuracy(const std::vector<ingest::TrafficWindow>& windows,
                    const std::vector<int>& labels) const;

private:
    friend class ClassifierTrainer;

    nn::Tensor logits(const std::vector<const ingest::TrafficWindow*>& batch) const;

    FeatureEncoder encoder_;
    int classes_ = 2;
    int hidden_ = 64;
    nn::Embedding len_emb_, cfg_emb_, port_emb_, dir_emb_;
    nn::LstmCell cell_;
    nn::Linear head_;
};

struct TrainCurve {
    std::vector<double> loss_per_epoch;
};

// Real-vs-synthetic classifier (class 1 = real). Classes are balanced by
// seeded downsampling of the larger side. Throws DataError on an empty class.
SequenceClassifier train_realfake(const std::vector<ingest::TrafficWindow>& real,
                                  const std::vector<ingest::TrafficWindow>& fake,
                                  const AdversaryConfig& cfg, TrainCurve* curve = nullptr);

struct EvaluationReport {
    std::string device_id;
    std::vector<double> fold_accuracies;
    double mean_accuracy = 0.0;
    int real_count = 0;
    int fake_count = 0;
    AdversaryConfig config;
    // name -> accuracy columns for external baselines
    std::vector<std::pair<std::string, double>> baselines;
};

EvaluationReport cross_validate(const std::vector<ingest::TrafficWindow>& real,
                                const std::vector<ingest::TrafficWindow>& fake, int folds,
                                const AdversaryConfig& cfg, std::uint64_t seed,
                                const std::string& device_id = "");

struct DeviceClassifierResult {
    SequenceClassifier classifier;
    std::vector<std::string> device_ids;  // label order
    std::map<std::string, double> holdout_accuracy;
    double overall_accuracy = 0.0;
};

DeviceClassifierResult train_device_classifier(
    const std::map<std::string, std::vector<ingest::TrafficWindow>>& corpora,
    const AdversaryConfig& cfg);

void write_report_csv(const std::filesystem::path& path,
                      const std::vector<EvaluationReport>& reports);
std::string render_report_table(const std::vector<EvaluationReport>& reports);

}  // namespace flowforge::adversary
