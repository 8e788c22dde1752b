#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "flowforge/adversary.hpp"
#include "flowforge/durations.hpp"
#include "flowforge/ingest.hpp"
#include "flowforge/reconstruct.hpp"
#include "flowforge/seqgan.hpp"
#include "flowforge/signatures.hpp"
#include "flowforge/synthesize.hpp"
#include "flowforge/vqstae.hpp"

namespace flowforge::pipeline {

struct PipelineConfig {
    std::filesystem::path dataset_root;
    std::vector<std::string> devices;  // empty = every subdirectory
    int window_len = 20;               // L
    int windows_per_device = 20;       // n
    sigs::SignatureConfig signature;
    int duration_partitions = durations::kDefaultPartitions;
    vq::VqstaeConfig vqstae;
    gan::GanTrainConfig gan;
    recon::FrameLengthConfig framelen;
    adversary::AdversaryConfig adversary;
    synth::AddressingConfig addressing;
    int synthetic_windows = 64;
    std::uint64_t master_seed = 1;
    std::filesystem::path output_dir;
    int workers = 1;
    // external baseline synthetic corpora: name -> JSONL path
    std::vector<std::pair<std::string, std::filesystem::path>> baselines;

    static PipelineConfig load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;
    std::string canonical_json() const;
    std::uint64_t config_hash() const;
    std::uint64_t stage_seed(const std::string& device, const std::string& stage) const;
    void validate() const;  // ConfigError before any work
};

// Stage names in execution order.
const std::vector<std::string>& stage_names();

struct StageOutcome {
    std::string device;
    std::string stage;
    bool skipped = false;  // already complete for this config
};

// Loaded per-device artifacts (what the stages exchange on disk).
struct DeviceArtifacts {
    std::vector<std::vector<ingest::PacketRecord>> captures;
    std::vector<ingest::TrafficWindow> windows;
    std::vector<sigs::Signature> ranked;
    sigs::FrameVocab vocab;
    durations::DurationModel duration_model;
};

std::filesystem::path device_dir(const PipelineConfig& cfg, const std::string& device);

// Runs every stage for every configured device; stages already satisfied for
// this config resume as skipped. Stage errors abort with the stage name after
// persisting partial state.
std::vector<StageOutcome> run_pipeline(const PipelineConfig& cfg);

// Run a subset of stages (CLI subcommands map onto this).
std::vector<StageOutcome> run_stages(const PipelineConfig& cfg,
                                     const std::vector<std::string>& stages);

std::vector<std::string> discover_devices(const PipelineConfig& cfg);

// Artifact loaders used by stages, tests, and the CLI.
DeviceArtifacts load_ingest_artifacts(const PipelineConfig& cfg, const std::string& device);
DeviceArtifacts load_signature_artifacts(const PipelineConfig& cfg,
                                         const std::string& device);

// signatures.json (signatures + frame vocab + duration model + config echo)
void save_signature_artifact(const std::filesystem::path& path,
                             const std::vector<sigs::Signature>& ranked,
                             const sigs::FrameVocab& vocab,
                             const durations::DurationModel* duration_model,
                             const sigs::SignatureConfig& cfg);
struct SignatureArtifact {
    std::vector<sigs::Signature> ranked;
    sigs::FrameVocab vocab;
    durations::DurationModel duration_model;
    bool has_durations = false;
    sigs::SignatureConfig config;
};
SignatureArtifact load_signature_artifact(const std::filesystem::path& path);

std::string render_reports(const PipelineConfig& cfg);

}  // namespace flowforge::pipeline
