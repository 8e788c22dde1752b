// flowforge CLI: configuration-driven train/generate/synthesize/evaluate
// pipeline for device-specific synthetic traffic flows.

#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "flowforge/common.hpp"
#include "flowforge/pipeline.hpp"
#include "flowforge/toycorpus.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitStageFailure = 2;

using flowforge::pipeline::PipelineConfig;

struct CommonOpts {
    std::string config_path;
    std::string dataset_root;
    std::string output_dir;
    std::vector<std::string> devices;
    std::uint64_t master_seed = 0;
    bool has_seed = false;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("-c,--config", opts.config_path, "pipeline config JSON");
    cmd->add_option("--dataset", opts.dataset_root,
                    "dataset root (overrides config / FLOWFORGE_DATASET_ROOT)");
    cmd->add_option("-o,--output", opts.output_dir, "artifact output directory");
    cmd->add_option("--device", opts.devices, "restrict to specific device ids");
    cmd->add_option("--seed", opts.master_seed, "master seed override")
        ->each([&opts](const std::string&) { opts.has_seed = true; });
}

PipelineConfig build_config(const CommonOpts& opts) {
    PipelineConfig cfg;
    if (!opts.config_path.empty()) cfg = PipelineConfig::load(opts.config_path);
    if (!opts.dataset_root.empty()) cfg.dataset_root = opts.dataset_root;
    if (cfg.dataset_root.empty()) {
        if (const char* env = std::getenv("FLOWFORGE_DATASET_ROOT"))
            cfg.dataset_root = env;
    }
    if (!opts.output_dir.empty()) cfg.output_dir = opts.output_dir;
    if (!opts.devices.empty()) cfg.devices = opts.devices;
    if (opts.has_seed) cfg.master_seed = opts.master_seed;
    return cfg;
}

int run_pipeline_stages(const CommonOpts& opts, const std::vector<std::string>& stages) {
    PipelineConfig cfg;
    try {
        cfg = build_config(opts);
        cfg.validate();
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitValidation;
    }
    try {
        const auto outcomes = flowforge::pipeline::run_stages(cfg, stages);
        for (const auto& oc : outcomes)
            std::cout << oc.device << "/" << oc.stage
                      << (oc.skipped ? ": skipped (up to date)" : ": done") << "\n";
    } catch (const std::exception& e) {
        std::cerr << "stage failure: " << e.what() << "\n";
        return kExitStageFailure;
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"flowforge: device-specific synthetic IoT traffic flows"};
    app.require_subcommand(1);

    CommonOpts opts;

    auto* ingest = app.add_subcommand("ingest", "parse captures into records and windows");
    add_common(ingest, opts);

    auto* mine = app.add_subcommand(
        "mine-signatures", "mine packet-level signatures and duration partitions");
    add_common(mine, opts);

    auto* train = app.add_subcommand("train", "train the generative models");
    add_common(train, opts);
    std::string train_stage = "all";
    train->add_option("--stage", train_stage, "vqstae | seqgan | framelen | all")
        ->check(CLI::IsMember({"vqstae", "seqgan", "framelen", "all"}));

    auto* generate =
        app.add_subcommand("generate", "sample the generator and reconstruct flows");
    add_common(generate, opts);

    auto* synth = app.add_subcommand("synth-pcap", "materialize synthetic flows as pcap");
    add_common(synth, opts);

    auto* evaluate =
        app.add_subcommand("evaluate", "train the adversary and report accuracy");
    add_common(evaluate, opts);
    std::vector<std::string> baseline_args;
    evaluate->add_option("--baseline", baseline_args,
                         "external baseline corpus as name=path (JSONL)");

    auto* report = app.add_subcommand("report", "render the evaluation table");
    add_common(report, opts);

    auto* toy = app.add_subcommand("make-toy-corpus", "write a pseudo-device test corpus");
    std::string toy_out = "toy_dataset";
    std::string toy_spec_path;
    std::uint64_t toy_seed = 1;
    toy->add_option("-o,--output", toy_out, "dataset directory to create");
    toy->add_option("--spec", toy_spec_path, "toy corpus spec JSON (default: built-in)");
    toy->add_option("--seed", toy_seed, "corpus seed");

    auto* run_all = app.add_subcommand("run-all", "run the full pipeline end to end");
    add_common(run_all, opts);

    CLI11_PARSE(app, argc, argv);

    if (toy->parsed()) {
        try {
            const auto spec = toy_spec_path.empty()
                                  ? flowforge::toy::default_toy_spec()
                                  : flowforge::toy::load_toy_spec(toy_spec_path);
            flowforge::toy::make_toy_corpus(spec, toy_out, toy_seed);
            std::cout << "toy corpus written to " << toy_out << "\n";
            return kExitOk;
        } catch (const flowforge::ConfigError& e) {
            std::cerr << "validation error: " << e.what() << "\n";
            return kExitValidation;
        } catch (const std::exception& e) {
            std::cerr << "failure: " << e.what() << "\n";
            return kExitStageFailure;
        }
    }

    if (report->parsed()) {
        try {
            auto cfg = build_config(opts);
            cfg.validate();
            std::cout << flowforge::pipeline::render_reports(cfg);
            return kExitOk;
        } catch (const std::exception& e) {
            std::cerr << "config error: " << e.what() << "\n";
            return kExitValidation;
        }
    }

    if (ingest->parsed()) return run_pipeline_stages(opts, {"ingest"});
    if (mine->parsed()) return run_pipeline_stages(opts, {"signatures", "durations"});
    if (train->parsed()) {
        std::vector<std::string> stages;
        if (train_stage == "vqstae" || train_stage == "all") stages.push_back("vqstae");
        if (train_stage == "seqgan" || train_stage == "all") stages.push_back("seqgan");
        if (train_stage == "framelen" || train_stage == "all")
            stages.push_back("reconstruct");
        return run_pipeline_stages(opts, stages);
    }
    if (generate->parsed()) return run_pipeline_stages(opts, {"generate"});
    if (synth->parsed()) return run_pipeline_stages(opts, {"synth-pcap"});
    if (evaluate->parsed()) {
        PipelineConfig cfg;
        try {
            cfg = build_config(opts);
            for (const auto& arg : baseline_args) {
                const auto eq = arg.find('=');
                if (eq == std::string::npos)
                    throw flowforge::ConfigError("--baseline expects name=path: " + arg);
                cfg.baselines.emplace_back(arg.substr(0, eq), arg.substr(eq + 1));
            }
            cfg.validate();
        } catch (const std::exception& e) {
            std::cerr << "config error: " << e.what() << "\n";
            return kExitValidation;
        }
        try {
            flowforge::pipeline::run_stages(cfg, {"evaluate"});
            std::cout << flowforge::pipeline::render_reports(cfg);
        } catch (const std::exception& e) {
            std::cerr << "stage failure: " << e.what() << "\n";
            return kExitStageFailure;
        }
        return kExitOk;
    }
    if (run_all->parsed())
        return run_pipeline_stages(opts, flowforge::pipeline::stage_names());

    return kExitValidation;
}
