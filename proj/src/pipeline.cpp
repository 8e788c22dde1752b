#include "flowforge/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "flowforge/common.hpp"
#include "flowforge/toycorpus.hpp"

using ordered_json = nlohmann::ordered_json;

namespace flowforge::pipeline {

// --- config ------------------------------------------------------------------

namespace {

ordered_json signature_cfg_json(const sigs::SignatureConfig& c) {
    return {{"d", c.d}, {"s", c.s}, {"min_size", c.min_size}, {"max_size", c.max_size}};
}

sigs::SignatureConfig signature_cfg_from(const ordered_json& j) {
    sigs::SignatureConfig c;
    c.d = j.value("d", c.d);
    c.s = j.value("s", c.s);
    c.min_size = j.value("min_size", c.min_size);
    c.max_size = j.value("max_size", c.max_size);
    return c;
}

ordered_json vq_cfg_json(const vq::VqstaeConfig& c) {
    return {{"codebook_size", c.codebook_size}, {"code_dim", c.code_dim},
            {"layers", c.layers},               {"heads", c.heads},
            {"beta", c.beta},                   {"ema_decay", c.ema_decay},
            {"epochs", c.epochs},               {"batch_size", c.batch_size},
            {"lr", c.lr}};
}

vq::VqstaeConfig vq_cfg_from(const ordered_json& j) {
    vq::VqstaeConfig c;
    c.codebook_size = j.value("codebook_size", c.codebook_size);
    c.code_dim = j.value("code_dim", c.code_dim);
    c.layers = j.value("layers", c.layers);
    c.heads = j.value("heads", c.heads);
    c.beta = j.value("beta", c.beta);
    c.ema_decay = j.value("ema_decay", c.ema_decay);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    return c;
}

ordered_json gan_cfg_json(const gan::GanTrainConfig& c) {
    return {{"pretrain_epochs", c.pretrain_epochs},
            {"adversarial_rounds", c.adversarial_rounds},
            {"rollout_count", c.rollout_count},
            {"gen_lr", c.gen_lr},
            {"disc_lr", c.disc_lr},
            {"disc_steps", c.disc_steps},
            {"batch_size", c.batch_size},
            {"variety_tau", c.variety_tau}};
}

gan::GanTrainConfig gan_cfg_from(const ordered_json& j) {
    gan::GanTrainConfig c;
    c.pretrain_epochs = j.value("pretrain_epochs", c.pretrain_epochs);
    c.adversarial_rounds = j.value("adversarial_rounds", c.adversarial_rounds);
    c.rollout_count = j.value("rollout_count", c.rollout_count);
    c.gen_lr = j.value("gen_lr", c.gen_lr);
    c.disc_lr = j.value("disc_lr", c.disc_lr);
    c.disc_steps = j.value("disc_steps", c.disc_steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.variety_tau = j.value("variety_tau", c.variety_tau);
    return c;
}

ordered_json framelen_cfg_json(const recon::FrameLengthConfig& c) {
    return {{"window", c.window},       {"lookbehind", c.lookbehind},
            {"noise_dim", c.noise_dim}, {"hidden", c.hidden},
            {"epochs", c.epochs},       {"batch_size", c.batch_size},
            {"lr", c.lr}};
}

recon::FrameLengthConfig framelen_cfg_from(const ordered_json& j) {
    recon::FrameLengthConfig c;
    c.window = j.value("window", c.window);
    c.lookbehind = j.value("lookbehind", c.lookbehind);
    c.noise_dim = j.value("noise_dim", c.noise_dim);
    c.hidden = j.value("hidden", c.hidden);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    return c;
}

ordered_json adversary_cfg_json(const adversary::AdversaryConfig& c) {
    return {{"hidden", c.hidden},         {"epochs", c.epochs},
            {"batch_size", c.batch_size}, {"lr", c.lr},
            {"folds", c.folds}};
}

adversary::AdversaryConfig adversary_cfg_from(const ordered_json& j) {
    adversary::AdversaryConfig c;
    c.hidden = j.value("hidden", c.hidden);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.folds = j.value("folds", c.folds);
    return c;
}

ordered_json config_to_json(const PipelineConfig& c) {
    ordered_json j;
    j["schema_version"] = 1;
    j["dataset_root"] = c.dataset_root.string();
    j["devices"] = c.devices;
    j["window_len"] = c.window_len;
    j["windows_per_device"] = c.windows_per_device;
    j["signatures"] = signature_cfg_json(c.signature);
    j["duration_partitions"] = c.duration_partitions;
    j["vqstae"] = vq_cfg_json(c.vqstae);
    j["gan"] = gan_cfg_json(c.gan);
    j["framelen"] = framelen_cfg_json(c.framelen);
    j["adversary"] = adversary_cfg_json(c.adversary);
    j["addressing"] = {{"device_address", c.addressing.device_address},
                       {"peer_prefix", c.addressing.peer_prefix}};
    j["synthetic_windows"] = c.synthetic_windows;
    j["master_seed"] = c.master_seed;
    j["output_dir"] = c.output_dir.string();
    j["workers"] = c.workers;
    ordered_json bl = ordered_json::array();
    for (const auto& [name, path] : c.baselines)
        bl.push_back({{"name", name}, {"path", path.string()}});
    j["baselines"] = bl;
    return j;
}

PipelineConfig config_from_json(const ordered_json& j) {
    PipelineConfig c;
    if (j.value("schema_version", 1) != 1)
        throw ConfigError("unsupported config schema version");
    c.dataset_root = j.value("dataset_root", std::string());
    c.devices = j.value("devices", c.devices);
    c.window_len = j.value("window_len", c.window_len);
    c.windows_per_device = j.value("windows_per_device", c.windows_per_device);
    if (j.contains("signatures")) c.signature = signature_cfg_from(j.at("signatures"));
    c.duration_partitions = j.value("duration_partitions", c.duration_partitions);
    if (j.contains("vqstae")) c.vqstae = vq_cfg_from(j.at("vqstae"));
    if (j.contains("gan")) c.gan = gan_cfg_from(j.at("gan"));
    if (j.contains("framelen")) c.framelen = framelen_cfg_from(j.at("framelen"));
    if (j.contains("adversary")) c.adversary = adversary_cfg_from(j.at("adversary"));
    if (j.contains("addressing")) {
        c.addressing.device_address =
            j.at("addressing").value("device_address", c.addressing.device_address);
        c.addressing.peer_prefix =
            j.at("addressing").value("peer_prefix", c.addressing.peer_prefix);
    }
    c.synthetic_windows = j.value("synthetic_windows", c.synthetic_windows);
    c.master_seed = j.value("master_seed", c.master_seed);
    c.output_dir = j.value("output_dir", std::string());
    c.workers = j.value("workers", c.workers);
    if (j.contains("baselines")) {
        for (const auto& b : j.at("baselines"))
            c.baselines.emplace_back(b.at("name").get<std::string>(),
                                     b.at("path").get<std::string>());
    }
    return c;
}

std::uint64_t file_hash(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return 0;
    std::vector<char> data((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
    return fnv1a(data.data(), data.size());
}

}  // namespace

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config: " + path.string());
    ordered_json j;
    try {
        j = ordered_json::parse(in);
    } catch (const std::exception& e) {
        throw ConfigError("config parse error: " + std::string(e.what()));
    }
    return config_from_json(j);
}

void PipelineConfig::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    out << config_to_json(*this).dump(2) << "\n";
    if (!out) throw IoError("cannot write config: " + path.string());
}

std::string PipelineConfig::canonical_json() const { return config_to_json(*this).dump(); }

std::uint64_t PipelineConfig::config_hash() const { return fnv1a(canonical_json()); }

std::uint64_t PipelineConfig::stage_seed(const std::string& device,
                                         const std::string& stage) const {
    return seed_for(master_seed, device + "/" + stage);
}

void PipelineConfig::validate() const {
    if (dataset_root.empty() || !std::filesystem::exists(dataset_root))
        throw ConfigError("dataset root does not exist: " + dataset_root.string());
    if (output_dir.empty()) throw ConfigError("output dir not set");
    if (window_len < 2) throw ConfigError("window length must be >= 2");
    if (windows_per_device < 1) throw ConfigError("windows per device must be >= 1");
    if (synthetic_windows < 1) throw ConfigError("synthetic window count must be >= 1");
    if (workers < 1) throw ConfigError("workers must be >= 1");
    signature.validate(window_len);
    vqstae.validate();
    gan.validate();
    framelen.validate();
    adversary.validate();
    for (const auto& [name, path] : baselines)
        if (!std::filesystem::exists(path))
            throw ConfigError("baseline corpus missing: " + path.string());
}

const std::vector<std::string>& stage_names() {
    static const std::vector<std::string> names = {
        "ingest",      "signatures", "durations", "vqstae",  "seqgan",
        "reconstruct", "generate",   "synth-pcap", "evaluate"};
    return names;
}

std::filesystem::path device_dir(const PipelineConfig& cfg, const std::string& device) {
    return cfg.output_dir / device;
}

std::vector<std::string> discover_devices(const PipelineConfig& cfg) {
    if (!cfg.devices.empty()) return cfg.devices;
    std::vector<std::string> devices;
    for (const auto& entry : std::filesystem::directory_iterator(cfg.dataset_root))
        if (entry.is_directory()) devices.push_back(entry.path().filename().string());
    std::sort(devices.begin(), devices.end());
    if (devices.empty()) throw ConfigError("no device directories under dataset root");
    return devices;
}

// --- signatures.json ----------------------------------------------------------

namespace {

ordered_json vocab_to_json(const sigs::FrameVocab& vocab) {
    ordered_json sig_tokens = ordered_json::array();
    for (const auto& [key, id] : vocab.signature_tokens)
        sig_tokens.push_back(
            {{"signature_id", key.first}, {"position", key.second}, {"token", id}});
    ordered_json orphan_tokens = ordered_json::array();
    for (const auto& [key, id] : vocab.orphan_tokens)
        orphan_tokens.push_back({{"length", key.first},
                                 {"direction", key.second ? "Outgoing" : "Incoming"},
                                 {"token", id}});
    return {{"signature_tokens", sig_tokens},
            {"orphan_tokens", orphan_tokens},
            {"unk_token", vocab.unk_token}};
}

sigs::FrameVocab vocab_from_json(const ordered_json& j) {
    sigs::FrameVocab vocab;
    for (const auto& e : j.at("signature_tokens"))
        vocab.signature_tokens[{e.at("signature_id").get<int>(),
                                e.at("position").get<int>()}] = e.at("token").get<int>();
    for (const auto& e : j.at("orphan_tokens"))
        vocab.orphan_tokens[{e.at("length").get<std::uint32_t>(),
                             e.at("direction").get<std::string>() == "Outgoing" ? 1 : 0}] =
            e.at("token").get<int>();
    vocab.unk_token = j.at("unk_token").get<int>();
    return vocab;
}

ordered_json signatures_to_json(const std::vector<sigs::Signature>& ranked) {
    ordered_json arr = ordered_json::array();
    for (const auto& sig : ranked) {
        ordered_json ranges = ordered_json::array();
        for (const auto& r : sig.ranges)
            ranges.push_back({{"min_len", r.min_len},
                              {"max_len", r.max_len},
                              {"direction", ingest::to_string(r.dir)}});
        arr.push_back({{"signature_id", sig.signature_id},
                       {"support_count", sig.support_count},
                       {"ranges", ranges}});
    }
    return arr;
}

std::vector<sigs::Signature> signatures_from_json(const ordered_json& arr) {
    std::vector<sigs::Signature> out;
    for (const auto& e : arr) {
        sigs::Signature sig;
        sig.signature_id = e.at("signature_id").get<int>();
        sig.support_count = e.at("support_count").get<std::int64_t>();
        for (const auto& r : e.at("ranges"))
            sig.ranges.push_back(
                {r.at("min_len").get<std::uint32_t>(), r.at("max_len").get<std::uint32_t>(),
                 r.at("direction").get<std::string>() == "Outgoing"
                     ? sigs::Direction::Outgoing
                     : sigs::Direction::Incoming});
        out.push_back(std::move(sig));
    }
    return out;
}

ordered_json duration_model_to_json(const durations::DurationModel& m) {
    ordered_json members = ordered_json::array();
    for (const auto& part : m.members) members.push_back(part);
    return {{"k", m.k},
            {"centroids_log10", m.centroids},
            {"members", members},
            {"epsilon_floor", m.epsilon_floor}};
}

durations::DurationModel duration_model_from_json(const ordered_json& j) {
    durations::DurationModel m;
    m.k = j.at("k").get<int>();
    m.centroids = j.at("centroids_log10").get<std::vector<double>>();
    for (const auto& part : j.at("members"))
        m.members.push_back(part.get<std::vector<double>>());
    m.epsilon_floor = j.at("epsilon_floor").get<double>();
    return m;
}

ordered_json signature_artifact_json(const std::vector<sigs::Signature>& ranked,
                                     const sigs::FrameVocab& vocab,
                                     const durations::DurationModel* dm,
                                     const sigs::SignatureConfig& cfg) {
    ordered_json j;
    j["format_version"] = 1;
    j["config"] = signature_cfg_json(cfg);
    j["signatures"] = signatures_to_json(ranked);
    j["frame_vocab"] = vocab_to_json(vocab);
    j["duration_model"] = dm ? duration_model_to_json(*dm) : ordered_json(nullptr);
    return j;
}

// the signatures stage hashes its portion only, since the durations stage
// rewrites the same artifact with the duration model filled in
std::uint64_t signature_portion_hash(const ordered_json& artifact) {
    ordered_json portion = {{"config", artifact.at("config")},
                            {"signatures", artifact.at("signatures")},
                            {"frame_vocab", artifact.at("frame_vocab")}};
    return fnv1a(portion.dump());
}

}  // namespace

void save_signature_artifact(const std::filesystem::path& path,
                             const std::vector<sigs::Signature>& ranked,
                             const sigs::FrameVocab& vocab,
                             const durations::DurationModel* duration_model,
                             const sigs::SignatureConfig& cfg) {
    std::ofstream out(path, std::ios::trunc);
    out << signature_artifact_json(ranked, vocab, duration_model, cfg).dump(2) << "\n";
    if (!out) throw IoError("cannot write signature artifact: " + path.string());
}

SignatureArtifact load_signature_artifact(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open signature artifact: " + path.string());
    const auto j = ordered_json::parse(in);
    SignatureArtifact art;
    art.config = signature_cfg_from(j.at("config"));
    art.ranked = signatures_from_json(j.at("signatures"));
    art.vocab = vocab_from_json(j.at("frame_vocab"));
    if (!j.at("duration_model").is_null()) {
        art.duration_model = duration_model_from_json(j.at("duration_model"));
        art.has_durations = true;
    }
    return art;
}

// --- stage framework -----------------------------------------------------------

namespace {

struct StageCtx {
    const PipelineConfig& cfg;
    std::string device;
    std::filesystem::path dir;

    std::filesystem::path manifest_path(const std::string& stage) const {
        return dir / ("manifest_" + stage + ".json");
    }
};

const std::map<std::string, std::vector<std::string>>& stage_upstream() {
    static const std::map<std::string, std::vector<std::string>> deps = {
        {"ingest", {}},
        {"signatures", {"ingest"}},
        {"durations", {"signatures"}},
        {"vqstae", {"durations"}},
        {"seqgan", {"vqstae"}},
        {"reconstruct", {"seqgan"}},
        {"generate", {"reconstruct"}},
        {"synth-pcap", {"generate"}},
        {"evaluate", {"generate"}},
    };
    return deps;
}

// outputs: path (relative to device dir) -> hash-kind ("file" or "logical")
struct OutputEntry {
    std::string path;
    std::string kind = "file";
    std::uint64_t hash = 0;
};

std::uint64_t logical_output_hash(const StageCtx& ctx, const std::string& rel) {
    // only signatures.json carries a logical hash
    std::ifstream in(ctx.dir / rel);
    if (!in) return 0;
    try {
        return signature_portion_hash(ordered_json::parse(in));
    } catch (const std::exception&) {
        return 0;
    }
}

void write_manifest(const StageCtx& ctx, const std::string& stage,
                    const std::vector<OutputEntry>& outputs) {
    ordered_json j;
    j["format_version"] = 1;
    j["stage"] = stage;
    j["device"] = ctx.device;
    j["config_hash"] = hex64(ctx.cfg.config_hash());
    j["stage_seed"] = ctx.cfg.stage_seed(ctx.device, stage);
    ordered_json upstream;
    for (const auto& up : stage_upstream().at(stage))
        upstream[up] = hex64(file_hash(ctx.manifest_path(up)));
    j["upstream"] = upstream;
    ordered_json outs;
    for (const auto& o : outputs)
        outs[o.path] = {{"kind", o.kind}, {"hash", hex64(o.hash)}};
    j["outputs"] = outs;
    std::ofstream out(ctx.manifest_path(stage), std::ios::trunc);
    out << j.dump(2) << "\n";
    if (!out) throw IoError("cannot write stage manifest for " + stage);
}

std::uint64_t dir_tree_hash(const std::filesystem::path& dir);

bool stage_complete(const StageCtx& ctx, const std::string& stage) {
    const auto mpath = ctx.manifest_path(stage);
    std::ifstream in(mpath);
    if (!in) return false;
    ordered_json j;
    try {
        j = ordered_json::parse(in);
    } catch (const std::exception&) {
        return false;
    }
    if (j.value("config_hash", std::string()) != hex64(ctx.cfg.config_hash())) return false;
    for (const auto& up : stage_upstream().at(stage)) {
        const auto have = j.at("upstream").value(up, std::string());
        if (have != hex64(file_hash(ctx.manifest_path(up)))) return false;
    }
    for (const auto& [rel, meta] : j.at("outputs").items()) {
        const auto path = ctx.dir / rel;
        if (!std::filesystem::exists(path)) return false;
        const std::string kind = meta.at("kind").get<std::string>();
        std::uint64_t have = 0;
        if (kind == "logical") have = logical_output_hash(ctx, rel);
        else if (kind == "tree") have = dir_tree_hash(path);
        else have = file_hash(path);
        if (hex64(have) != meta.at("hash").get<std::string>()) return false;
    }
    return true;
}

std::uint64_t dir_tree_hash(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::recursive_directory_iterator(dir))
        if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& f : files) {
        h = fnv1a(f.filename().string(), h);
        const std::uint64_t fh = file_hash(f);
        h = fnv1a(&fh, sizeof(fh), h);
    }
    return h;
}

// --- helpers shared by stages ---------------------------------------------------

std::vector<ingest::TrafficWindow> rebuild_windows(
    const std::vector<std::vector<ingest::PacketRecord>>& captures,
    const std::filesystem::path& windows_path) {
    std::ifstream in(windows_path);
    if (!in) throw IoError("missing window manifest: " + windows_path.string());
    const auto j = ordered_json::parse(in);
    const int window_len = j.at("window_len").get<int>();
    std::map<std::string, const std::vector<ingest::PacketRecord>*> by_capture;
    for (const auto& cap : captures)
        if (!cap.empty()) by_capture[cap.front().capture_id] = &cap;
    std::vector<ingest::TrafficWindow> windows;
    for (const auto& ref : j.at("refs")) {
        const auto capture_id = ref.at("capture_id").get<std::string>();
        const auto start = ref.at("start_offset").get<std::size_t>();
        const auto it = by_capture.find(capture_id);
        if (it == by_capture.end())
            throw DataError("window manifest references unknown capture " + capture_id);
        const auto& cap = *it->second;
        if (start + static_cast<std::size_t>(window_len) > cap.size())
            throw DataError("window manifest offset out of range in " + capture_id);
        ingest::TrafficWindow w;
        w.device_id = cap.front().device_id;
        w.packets.assign(cap.begin() + static_cast<std::ptrdiff_t>(start),
                         cap.begin() + static_cast<std::ptrdiff_t>(start + window_len));
        windows.push_back(std::move(w));
    }
    return windows;
}

std::vector<std::vector<ingest::PacketRecord>> split_captures(
    const std::vector<ingest::PacketRecord>& records) {
    std::vector<std::vector<ingest::PacketRecord>> captures;
    for (const auto& rec : records) {
        if (captures.empty() || captures.back().back().capture_id != rec.capture_id)
            captures.emplace_back();
        captures.back().push_back(rec);
    }
    return captures;
}

struct TokenizedSet {
    std::vector<sigs::TokenizedWindow> tokenized;
    std::vector<std::vector<std::uint32_t>> lengths;  // per window real lengths
};

TokenizedSet tokenize_all(const std::vector<ingest::TrafficWindow>& windows,
                          const SignatureArtifact& art) {
    if (!art.has_durations)
        throw DataError("signature artifact lacks the duration model; run durations first");
    TokenizedSet set;
    for (const auto& w : windows) {
        const auto flow = sigs::to_flow(w);
        const auto asg = sigs::match_window(flow, art.ranked);
        set.tokenized.push_back(
            sigs::tokenize_window(w, asg, art.vocab, art.duration_model));
        std::vector<std::uint32_t> lens;
        for (const auto& p : w.packets) lens.push_back(p.frame_length);
        set.lengths.push_back(std::move(lens));
    }
    return set;
}

// --- stages ---------------------------------------------------------------------

void stage_ingest(const StageCtx& ctx) {
    std::vector<std::filesystem::path> captures;
    for (const auto& e :
         std::filesystem::directory_iterator(ctx.cfg.dataset_root / ctx.device)) {
        if (!e.is_regular_file()) continue;
        const auto ext = e.path().extension().string();
        if (ext == ".pcap" || ext == ".pcapng" || ext == ".cap")
            captures.push_back(e.path());
    }
    std::sort(captures.begin(), captures.end());
    if (captures.empty())
        throw DataError("no capture files for device " + ctx.device);

    std::vector<ingest::PacketRecord> all_records;
    std::vector<std::vector<ingest::PacketRecord>> per_capture;
    for (const auto& path : captures) {
        const auto raws = ingest::parse_capture(path);
        if (raws.empty()) continue;
        std::string address;
        try {
            address = ingest::infer_device_address(raws);
        } catch (const EmptyCaptureError&) {
            log_warn("capture " + path.string() + " has no addressed packets");
        }
        auto records =
            ingest::normalize(raws, address, path.stem().string(), ctx.device);
        all_records.insert(all_records.end(), records.begin(), records.end());
        per_capture.push_back(std::move(records));
    }
    ingest::write_records_jsonl(ctx.dir / "records.jsonl", all_records);

    std::vector<ingest::WindowRef> refs;
    const auto windows = ingest::make_windows(
        per_capture, ctx.cfg.window_len, ctx.cfg.windows_per_device,
        ctx.cfg.stage_seed(ctx.device, "ingest"), &refs);
    (void)windows;
    ordered_json wj;
    wj["format_version"] = 1;
    wj["window_len"] = ctx.cfg.window_len;
    wj["seed"] = ctx.cfg.stage_seed(ctx.device, "ingest");
    ordered_json refs_json = ordered_json::array();
    for (const auto& r : refs)
        refs_json.push_back(
            {{"capture_id", r.capture_id}, {"start_offset", r.start_offset}});
    wj["refs"] = refs_json;
    {
        std::ofstream out(ctx.dir / "windows.json", std::ios::trunc);
        out << wj.dump(2) << "\n";
        if (!out) throw IoError("cannot write window manifest");
    }

    write_manifest(ctx, "ingest",
                   {{"records.jsonl", "file", file_hash(ctx.dir / "records.jsonl")},
                    {"windows.json", "file", file_hash(ctx.dir / "windows.json")}});
}

void stage_signatures(const StageCtx& ctx) {
    const auto records = ingest::read_records_jsonl(ctx.dir / "records.jsonl");
    const auto captures = split_captures(records);
    const auto windows = rebuild_windows(captures, ctx.dir / "windows.json");

    std::vector<sigs::Flow> flows;
    flows.reserve(windows.size());
    for (const auto& w : windows) flows.push_back(sigs::to_flow(w));

    const auto extracted = sigs::extract_signatures(flows, ctx.cfg.signature);
    const auto ranked = sigs::rank_signatures(extracted, flows);
    std::vector<sigs::SignatureAssignment> assignments;
    assignments.reserve(flows.size());
    for (const auto& f : flows) assignments.push_back(sigs::match_window(f, ranked));
    const auto vocab = sigs::build_frame_vocab(assignments, flows, ranked);

    save_signature_artifact(ctx.dir / "signatures.json", ranked, vocab, nullptr,
                            ctx.cfg.signature);
    write_manifest(ctx, "signatures",
                   {{"signatures.json", "logical",
                     logical_output_hash(ctx, "signatures.json")}});
}

void stage_durations(const StageCtx& ctx) {
    const auto records = ingest::read_records_jsonl(ctx.dir / "records.jsonl");
    const auto captures = split_captures(records);
    const auto windows = rebuild_windows(captures, ctx.dir / "windows.json");
    auto art = load_signature_artifact(ctx.dir / "signatures.json");

    std::vector<double> durs;
    for (const auto& w : windows)
        for (const auto& p : w.packets) durs.push_back(p.duration);
    const auto model =
        durations::fit_duration_partitions(durs, ctx.cfg.duration_partitions);

    save_signature_artifact(ctx.dir / "signatures.json", art.ranked, art.vocab, &model,
                            ctx.cfg.signature);
    write_manifest(ctx, "durations",
                   {{"signatures.json", "file", file_hash(ctx.dir / "signatures.json")}});
}

void stage_vqstae(const StageCtx& ctx) {
    const auto records = ingest::read_records_jsonl(ctx.dir / "records.jsonl");
    const auto captures = split_captures(records);
    const auto windows = rebuild_windows(captures, ctx.dir / "windows.json");
    const auto art = load_signature_artifact(ctx.dir / "signatures.json");
    const auto set = tokenize_all(windows, art);

    vq::VqstaeConfig cfg = ctx.cfg.vqstae;
    cfg.seed = ctx.cfg.stage_seed(ctx.device, "vqstae");
    const auto model = vq::train_vqstae(set.tokenized, cfg);
    model.save(ctx.dir / "models" / "vqstae");
    write_manifest(ctx, "vqstae",
                   {{"models/vqstae", "tree", dir_tree_hash(ctx.dir / "models" / "vqstae")}});
}

void stage_seqgan(const StageCtx& ctx) {
    const auto records = ingest::read_records_jsonl(ctx.dir / "records.jsonl");
    const auto captures = split_captures(records);
    const auto windows = rebuild_windows(captures, ctx.dir / "windows.json");
    const auto art = load_signature_artifact(ctx.dir / "signatures.json");
    const auto set = tokenize_all(windows, art);
    const auto model = vq::VqstaeModel::load(ctx.dir / "models" / "vqstae");

    std::vector<gan::DiscreteSequence> codes;
    codes.reserve(set.tokenized.size());
    for (const auto& w : set.tokenized) codes.push_back(model.encode(w));

    gan::GanTrainConfig cfg = ctx.cfg.gan;
    cfg.seed = ctx.cfg.stage_seed(ctx.device, "seqgan");
    gan::GeneratorPolicy gen(model.config().codebook_size, model.seq_len(), cfg.seed);
    gan::SequenceDiscriminator disc(model.config().codebook_size, model.seq_len(),
                                    cfg.seed);
    pretrain(gen, codes, cfg);
    gen.save(ctx.dir / "models" / "seqgan_pretrained");
    const auto curve = adversarial_train(gen, disc, codes, cfg);
    gen.save(ctx.dir / "models" / "seqgan_gen");
    disc.save(ctx.dir / "models" / "seqgan_disc");
    gan::write_curves_csv(ctx.dir / "curves.csv", curve);

    write_manifest(
        ctx, "seqgan",
        {{"models/seqgan_pretrained", "tree",
          dir_tree_hash(ctx.dir / "models" / "seqgan_pretrained")},
         {"models/seqgan_gen", "tree", dir_tree_hash(ctx.dir / "models" / "seqgan_gen")},
         {"models/seqgan_disc", "tree", dir_tree_hash(ctx.dir / "models" / "seqgan_disc")},
         {"curves.csv", "file", file_hash(ctx.dir / "curves.csv")}});
}

void stage_reconstruct(const StageCtx& ctx) {
    const auto records = ingest::read_records_jsonl(ctx.dir / "records.jsonl");
    const auto captures = split_captures(records);
    const auto windows = rebuild_windows(captures, ctx.dir / "windows.json");
    const auto art = load_signature_artifact(ctx.dir / "signatures.json");
    const auto set = tokenize_all(windows, art);
    const auto model = vq::VqstaeModel::load(ctx.dir / "models" / "vqstae");

    std::vector<recon::FrameSample> samples;
    for (std::size_t i = 0; i < set.tokenized.size(); ++i) {
        recon::FrameSample s;
        for (const auto& p : set.tokenized[i].packets)
            s.frame_tokens.push_back(p.frame_token);
        s.codes = model.encode(set.tokenized[i]);
        s.lengths = set.lengths[i];
        samples.push_back(std::move(s));
    }
    recon::FrameLengthConfig cfg = ctx.cfg.framelen;
    cfg.seed = ctx.cfg.stage_seed(ctx.device, "reconstruct");
    const auto flm = recon::train_frame_length_model(
        samples, art.vocab, art.ranked, model.config().codebook_size, cfg);
    flm.save(ctx.dir / "models" / "framelen");
    write_manifest(ctx, "reconstruct",
                   {{"models/framelen", "tree",
                     dir_tree_hash(ctx.dir / "models" / "framelen")}});
}

void stage_generate(const StageCtx& ctx) {
    const auto art = load_signature_artifact(ctx.dir / "signatures.json");
    const auto model = vq::VqstaeModel::load(ctx.dir / "models" / "vqstae");
    auto gen = gan::GeneratorPolicy::load(ctx.dir / "models" / "seqgan_gen");
    auto disc = gan::SequenceDiscriminator::load(ctx.dir / "models" / "seqgan_disc");
    const auto pretrained =
        gan::GeneratorPolicy::load(ctx.dir / "models" / "seqgan_pretrained");
    const auto flm = recon::FrameLengthModel::load(ctx.dir / "models" / "framelen");

    // real codes are needed if variety recovery has to retrain
    const auto records = ingest::read_records_jsonl(ctx.dir / "records.jsonl");
    const auto captures = split_captures(records);
    const auto windows = rebuild_windows(captures, ctx.dir / "windows.json");
    const auto set = tokenize_all(windows, art);
    std::vector<gan::DiscreteSequence> codes;
    for (const auto& w : set.tokenized) codes.push_back(model.encode(w));

    gan::GanTrainConfig cfg = ctx.cfg.gan;
    const std::uint64_t seed = ctx.cfg.stage_seed(ctx.device, "generate");
    cfg.seed = seed;
    const auto result = gan::sample_with_variety_guard(
        gen, disc, pretrained, codes, cfg, ctx.cfg.synthetic_windows, seed);

    Rng rng(seed_for(seed, "reconstruct-samples"));
    std::vector<recon::SyntheticWindow> synthetic;
    for (std::size_t i = 0; i < result.samples.size(); ++i) {
        const auto decoded = model.decode(result.samples[i]);
        auto w = recon::assemble_flow(decoded, result.samples[i], flm,
                                      art.duration_model, model.port_vocab(), rng,
                                      ctx.device, "synthetic-" + std::to_string(i));
        w.generator_checkpoint =
            hex64(file_hash(ctx.dir / "models" / "seqgan_gen" / "weights.bin"));
        w.seed = seed;
        synthetic.push_back(std::move(w));
    }
    recon::write_synthetic_jsonl(ctx.dir / "synthetic.jsonl", synthetic);

    ordered_json prov;
    prov["format_version"] = 1;
    prov["device"] = ctx.device;
    prov["generator_checkpoint"] =
        hex64(file_hash(ctx.dir / "models" / "seqgan_gen" / "weights.bin"));
    prov["seed"] = seed;
    prov["windows"] = result.samples.size();
    prov["variety"] = {{"pass", result.variety.pass},
                       {"distinct_ratio", result.variety.distinct_ratio},
                       {"modal_share", result.variety.modal_share},
                       {"attempts", result.attempts},
                       {"retrained", result.retrained}};
    prov["protocol_note"] =
        "non-IP/TCP/UDP flagged protocols are emitted as opaque payloads";
    {
        std::ofstream pf(ctx.dir / "provenance.json", std::ios::trunc);
        pf << prov.dump(2) << "\n";
        if (!pf) throw IoError("cannot write provenance sidecar");
    }

    write_manifest(ctx, "generate",
                   {{"synthetic.jsonl", "file", file_hash(ctx.dir / "synthetic.jsonl")},
                    {"provenance.json", "file", file_hash(ctx.dir / "provenance.json")}});
}

void stage_synth_pcap(const StageCtx& ctx) {
    const auto synthetic =
        recon::read_synthetic_jsonl(ctx.dir / "synthetic.jsonl", ctx.cfg.window_len);
    const auto pcap_dir = ctx.dir / "pcaps";
    std::filesystem::create_directories(pcap_dir);
    const std::uint64_t seed = ctx.cfg.stage_seed(ctx.device, "synth-pcap");
    for (std::size_t i = 0; i < synthetic.size(); ++i) {
        Rng rng(seed_for(seed, "pcap-" + std::to_string(i)));
        const auto blueprints =
            synth::build_packets(synthetic[i], ctx.cfg.addressing, rng);
        char name[32];
        std::snprintf(name, sizeof(name), "win_%04zu.pcap", i);
        synth::write_capture(blueprints, pcap_dir / name);
    }
    write_manifest(ctx, "synth-pcap", {{"pcaps", "tree", dir_tree_hash(pcap_dir)}});
}

void stage_evaluate(const StageCtx& ctx) {
    const auto records = ingest::read_records_jsonl(ctx.dir / "records.jsonl");
    const auto captures = split_captures(records);
    const auto windows = rebuild_windows(captures, ctx.dir / "windows.json");
    const auto synthetic =
        recon::read_synthetic_jsonl(ctx.dir / "synthetic.jsonl", ctx.cfg.window_len);
    std::vector<ingest::TrafficWindow> fake;
    for (const auto& w : synthetic) {
        ingest::TrafficWindow tw;
        tw.device_id = w.device_id;
        tw.packets = w.packets;
        fake.push_back(std::move(tw));
    }

    auto report = adversary::cross_validate(
        windows, fake, ctx.cfg.adversary.folds, ctx.cfg.adversary,
        ctx.cfg.stage_seed(ctx.device, "evaluate"), ctx.device);

    for (const auto& [name, path] : ctx.cfg.baselines) {
        const auto baseline_windows =
            recon::read_synthetic_jsonl(path, ctx.cfg.window_len);
        std::vector<ingest::TrafficWindow> bw;
        for (const auto& w : baseline_windows) {
            if (w.device_id != ctx.device) continue;
            ingest::TrafficWindow tw;
            tw.device_id = w.device_id;
            tw.packets = w.packets;
            bw.push_back(std::move(tw));
        }
        if (bw.empty()) {
            log_warn("baseline " + name + " has no windows for device " + ctx.device);
            continue;
        }
        const auto br = adversary::cross_validate(
            windows, bw, ctx.cfg.adversary.folds, ctx.cfg.adversary,
            ctx.cfg.stage_seed(ctx.device, "evaluate-" + name), ctx.device);
        report.baselines.emplace_back(name, br.mean_accuracy);
    }

    adversary::write_report_csv(ctx.dir / "report.csv", {report});
    ordered_json rj;
    rj["format_version"] = 1;
    rj["device"] = report.device_id;
    rj["fold_accuracies"] = report.fold_accuracies;
    rj["mean_accuracy"] = report.mean_accuracy;
    rj["real_count"] = report.real_count;
    rj["fake_count"] = report.fake_count;
    rj["adversary"] = adversary_cfg_json(report.config);
    ordered_json bl = ordered_json::array();
    for (const auto& [name, acc] : report.baselines)
        bl.push_back({{"name", name}, {"accuracy", acc}});
    rj["baselines"] = bl;
    {
        std::ofstream rf(ctx.dir / "report.json", std::ios::trunc);
        rf << rj.dump(2) << "\n";
        if (!rf) throw IoError("cannot write report.json");
    }

    write_manifest(ctx, "evaluate",
                   {{"report.csv", "file", file_hash(ctx.dir / "report.csv")},
                    {"report.json", "file", file_hash(ctx.dir / "report.json")}});
}

void run_stage_fn(const StageCtx& ctx, const std::string& stage) {
    if (stage == "ingest") stage_ingest(ctx);
    else if (stage == "signatures") stage_signatures(ctx);
    else if (stage == "durations") stage_durations(ctx);
    else if (stage == "vqstae") stage_vqstae(ctx);
    else if (stage == "seqgan") stage_seqgan(ctx);
    else if (stage == "reconstruct") stage_reconstruct(ctx);
    else if (stage == "generate") stage_generate(ctx);
    else if (stage == "synth-pcap") stage_synth_pcap(ctx);
    else if (stage == "evaluate") stage_evaluate(ctx);
    else throw ConfigError("unknown stage: " + stage);
}

}  // namespace

DeviceArtifacts load_ingest_artifacts(const PipelineConfig& cfg,
                                      const std::string& device) {
    DeviceArtifacts art;
    const auto dir = device_dir(cfg, device);
    art.captures = split_captures(ingest::read_records_jsonl(dir / "records.jsonl"));
    art.windows = rebuild_windows(art.captures, dir / "windows.json");
    return art;
}

DeviceArtifacts load_signature_artifacts(const PipelineConfig& cfg,
                                         const std::string& device) {
    auto art = load_ingest_artifacts(cfg, device);
    const auto sa = load_signature_artifact(device_dir(cfg, device) / "signatures.json");
    art.ranked = sa.ranked;
    art.vocab = sa.vocab;
    art.duration_model = sa.duration_model;
    return art;
}

std::vector<StageOutcome> run_stages(const PipelineConfig& cfg,
                                     const std::vector<std::string>& stages) {
    cfg.validate();
    const auto devices = discover_devices(cfg);
    std::filesystem::create_directories(cfg.output_dir);

    std::vector<StageOutcome> outcomes;
    std::mutex outcomes_mutex;

    auto run_device = [&](const std::string& device) {
        StageCtx ctx{cfg, device, device_dir(cfg, device)};
        std::filesystem::create_directories(ctx.dir);
        for (const auto& stage : stages) {
            StageOutcome oc{device, stage, false};
            if (stage_complete(ctx, stage)) {
                oc.skipped = true;
                log_info(device + "/" + stage + ": up to date, skipping");
            } else {
                log_info(device + "/" + stage + ": running");
                try {
                    run_stage_fn(ctx, stage);
                } catch (const std::exception& e) {
                    throw DataError("stage " + stage + " failed for device " + device +
                                    ": " + e.what());
                }
            }
            std::lock_guard<std::mutex> lock(outcomes_mutex);
            outcomes.push_back(oc);
        }
    };

    if (cfg.workers <= 1 || devices.size() <= 1) {
        for (const auto& device : devices) run_device(device);
    } else {
        std::vector<std::thread> pool;
        std::atomic<std::size_t> next{0};
        std::exception_ptr error;
        std::mutex error_mutex;
        const int nworkers = std::min<int>(cfg.workers, static_cast<int>(devices.size()));
        for (int w = 0; w < nworkers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next.fetch_add(1); i < devices.size();
                     i = next.fetch_add(1)) {
                    try {
                        run_device(devices[i]);
                    } catch (...) {
                        std::lock_guard<std::mutex> lock(error_mutex);
                        if (!error) error = std::current_exception();
                    }
                }
            });
        }
        for (auto& t : pool) t.join();
        if (error) std::rethrow_exception(error);
    }
    return outcomes;
}

std::vector<StageOutcome> run_pipeline(const PipelineConfig& cfg) {
    return run_stages(cfg, stage_names());
}

std::string render_reports(const PipelineConfig& cfg) {
    std::vector<adversary::EvaluationReport> reports;
    for (const auto& device : discover_devices(cfg)) {
        const auto path = device_dir(cfg, device) / "report.json";
        std::ifstream in(path);
        if (!in) continue;
        const auto j = ordered_json::parse(in);
        adversary::EvaluationReport r;
        r.device_id = j.at("device").get<std::string>();
        r.fold_accuracies = j.at("fold_accuracies").get<std::vector<double>>();
        r.mean_accuracy = j.at("mean_accuracy").get<double>();
        r.real_count = j.at("real_count").get<int>();
        r.fake_count = j.at("fake_count").get<int>();
        for (const auto& b : j.at("baselines"))
            r.baselines.emplace_back(b.at("name").get<std::string>(),
                                     b.at("accuracy").get<double>());
        reports.push_back(std::move(r));
    }
    if (reports.empty()) return "no evaluation reports found; run the evaluate stage\n";
    return adversary::render_report_table(reports);
}

}  // namespace flowforge::pipeline
