#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

using namespace std::string_literals;
namespace fs = std::filesystem;

namespace {

const std::string kCli = FLOWFORGE_CLI_PATH;

fs::path fresh_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "flowforge_cli_tests" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

int run(const std::string& args) {
    const std::string cmd = "FLOWFORGE_QUIET=1 " + kCli + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

void write_tiny_config(const fs::path& path, const fs::path& dataset,
                       const fs::path& out) {
    std::ofstream cfg(path);
    cfg << R"({
  "dataset_root": ")" << dataset.string() << R"(",
  "output_dir": ")" << out.string() << R"(",
  "window_len": 10,
  "windows_per_device": 16,
  "synthetic_windows": 8,
  "duration_partitions": 3,
  "signatures": {"max_size": 3},
  "vqstae": {"codebook_size": 8, "code_dim": 16, "layers": 1, "heads": 2,
             "epochs": 4, "batch_size": 8},
  "gan": {"pretrain_epochs": 4, "adversarial_rounds": 1, "rollout_count": 2,
          "batch_size": 8},
  "framelen": {"epochs": 3, "hidden": 16},
  "adversary": {"epochs": 2, "hidden": 12, "folds": 2},
  "master_seed": 5
})";
}

}  // namespace

TEST_CASE("make-toy-corpus writes a dataset and ground truth") {
    const auto out = fresh_dir("toy");
    CHECK(run("make-toy-corpus -o " + out.string() + " --seed 3") == 0);
    CHECK(fs::exists(out / "ground_truth.json"));
    CHECK(fs::exists(out / "toycam"));
    CHECK(fs::exists(out / "toyplug"));
}

TEST_CASE("validation errors exit with code 1") {
    CHECK(run("ingest --dataset /nonexistent-path -o /tmp/x") == 1);
    CHECK(run("run-all -c /nonexistent-config.json") == 1);
}

TEST_CASE("stage subcommands run in sequence and resume") {
    const auto base = fresh_dir("stages");
    const auto dataset = base / "dataset";
    const auto out = base / "artifacts";
    // small single-device corpus: trim via spec file
    const auto spec_path = base / "spec.json";
    std::ofstream spec(spec_path);
    spec << R"({"devices": [{"device_id": "toycam", "captures": 5,
                "packets_per_capture": 50,
                "signatures": [[{"min_len": 117, "max_len": 123, "direction": "Outgoing"},
                                {"min_len": 306, "max_len": 312, "direction": "Incoming"}]],
                "orphan_lengths": [66], "duration_levels": [0.002, 1.0],
                "signature_port": 443, "orphan_port": 53}]})";
    spec.close();
    CHECK(run("make-toy-corpus -o " + dataset.string() + " --spec " + spec_path.string() +
              " --seed 4") == 0);

    const auto cfg = base / "config.json";
    write_tiny_config(cfg, dataset, out);

    CHECK(run("ingest -c " + cfg.string()) == 0);
    CHECK(fs::exists(out / "toycam" / "records.jsonl"));
    CHECK(run("mine-signatures -c " + cfg.string()) == 0);
    CHECK(fs::exists(out / "toycam" / "signatures.json"));
    CHECK(run("train -c " + cfg.string() + " --stage all") == 0);
    CHECK(run("generate -c " + cfg.string()) == 0);
    CHECK(fs::exists(out / "toycam" / "synthetic.jsonl"));
    CHECK(run("synth-pcap -c " + cfg.string()) == 0);
    CHECK(run("evaluate -c " + cfg.string()) == 0);
    CHECK(fs::exists(out / "toycam" / "report.csv"));
    CHECK(run("report -c " + cfg.string()) == 0);

    SUBCASE("run-all over complete artifacts is a no-op success") {
        CHECK(run("run-all -c " + cfg.string()) == 0);
    }
    SUBCASE("corrupt capture aborts with a stage failure exit code") {
        // truncate one capture so ingest raises CaptureParseError
        const auto out2 = base / "artifacts2";
        std::ofstream bad(dataset / "toycam" / "setup_0.pcap",
                          std::ios::binary | std::ios::trunc);
        bad << "nonsense";
        bad.close();
        CHECK(run("ingest -c " + cfg.string() + " -o " + out2.string()) == 2);
    }
}
