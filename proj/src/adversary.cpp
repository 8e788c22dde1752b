#include "flowforge/adversary.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "flowforge/common.hpp"
#include "flowforge/rng.hpp"

namespace flowforge::adversary {

namespace {

constexpr int kLenEmbDim = 16;
constexpr int kCfgEmbDim = 8;
constexpr int kPortEmbDim = 8;
constexpr int kDirEmbDim = 4;

std::uint16_t flag_pattern(const ingest::ProtocolFlags& flags) {
    std::uint16_t p = 0;
    for (int i = 0; i < ingest::kProtoCount; ++i)
        if (flags[static_cast<std::size_t>(i)]) p |= static_cast<std::uint16_t>(1u << i);
    return p;
}

}  // namespace

void AdversaryConfig::validate() const {
    if (hidden < 1 || epochs < 1 || batch_size < 1) throw ConfigError("adversary sizes");
    if (folds < 2) throw ConfigError("folds must be >= 2");
}

FeatureEncoder FeatureEncoder::fit(const std::vector<ingest::TrafficWindow>& train) {
    FeatureEncoder enc;
    std::set<std::uint32_t> lens;
    std::set<std::uint16_t> ports;
    std::set<std::uint16_t> cfgs;
    double sum = 0.0, sum_sq = 0.0;
    std::size_t n = 0;
    for (const auto& w : train) {
        for (const auto& p : w.packets) {
            lens.insert(p.frame_length);
            if (p.src_port) ports.insert(*p.src_port);
            if (p.dst_port) ports.insert(*p.dst_port);
            cfgs.insert(flag_pattern(p.protocol_flags));
            sum += p.duration;
            sum_sq += p.duration * p.duration;
            ++n;
        }
    }
    int next = 0;
    for (auto v : lens) enc.length_ids[v] = next++;
    enc.length_unk = next;
    next = 1;  // 0 = no port
    for (auto v : ports) enc.port_ids[v] = next++;
    enc.port_unk = next;
    next = 0;
    for (auto v : cfgs) enc.protocfg_ids[v] = next++;
    enc.protocfg_unk = next;
    if (n > 0) {
        enc.timing_mean = sum / static_cast<double>(n);
        const double var = sum_sq / static_cast<double>(n) - enc.timing_mean * enc.timing_mean;
        enc.timing_std = var > 1e-12 ? std::sqrt(var) : 1.0;
    }
    return enc;
}

int FeatureEncoder::length_id(std::uint32_t len) const {
    const auto it = length_ids.find(len);
    return it != length_ids.end() ? it->second : length_unk;
}

int FeatureEncoder::port_id(const std::optional<std::uint16_t>& port) const {
    if (!port) return 0;
    const auto it = port_ids.find(*port);
    return it != port_ids.end() ? it->second : port_unk;
}

int FeatureEncoder::protocfg_id(const ingest::ProtocolFlags& flags) const {
    const auto it = protocfg_ids.find(flag_pattern(flags));
    return it != protocfg_ids.end() ? it->second : protocfg_unk;
}

double FeatureEncoder::standardize(double timing) const {
    return (timing - timing_mean) / timing_std;
}

AdversaryInput encode_features(const ingest::TrafficWindow& window,
                               const FeatureEncoder& encoder) {
    AdversaryInput in;
    for (const auto& p : window.packets) {
        in.length_ids.push_back(encoder.length_id(p.frame_length));
        in.timings.push_back(encoder.standardize(p.duration));
        in.directions.push_back(p.direction == ingest::Direction::Outgoing ? 1 : 0);
        in.protocfg_ids.push_back(encoder.protocfg_id(p.protocol_flags));
        in.src_port_ids.push_back(encoder.port_id(p.src_port));
        in.dst_port_ids.push_back(encoder.port_id(p.dst_port));
    }
    return in;
}

SequenceClassifier::SequenceClassifier(const FeatureEncoder& encoder, int classes,
                                       int hidden, std::uint64_t seed)
    : encoder_(encoder), classes_(classes), hidden_(hidden) {
    Rng rng(seed_for(seed, "adversary-init"));
    len_emb_ = nn::Embedding(encoder.length_vocab(), kLenEmbDim, rng);
    cfg_emb_ = nn::Embedding(encoder.protocfg_vocab(), kCfgEmbDim, rng);
    port_emb_ = nn::Embedding(encoder.port_vocab(), kPortEmbDim, rng);
    dir_emb_ = nn::Embedding(2, kDirEmbDim, rng);
    const int in_dim = kLenEmbDim + kCfgEmbDim + 2 * kPortEmbDim + kDirEmbDim + 1;
    cell_ = nn::LstmCell(in_dim, hidden, rng);
    head_ = nn::Linear(hidden, classes, rng);
}

nn::Tensor SequenceClassifier::logits(
    const std::vector<const ingest::TrafficWindow*>& batch) const {
    const int b = static_cast<int>(batch.size());
    const int l = static_cast<int>(batch.front()->packets.size());
    std::vector<AdversaryInput> inputs;
    inputs.reserve(batch.size());
    for (const auto* w : batch) {
        if (static_cast<int>(w->packets.size()) != l)
            throw DataError("adversary windows must share one length");
        inputs.push_back(encode_features(*w, encoder_));
    }
    auto state = cell_.initial_state(b);
    for (int t = 0; t < l; ++t) {
        std::vector<int> len_ids(static_cast<std::size_t>(b)), cfg_ids(static_cast<std::size_t>(b)),
            sport_ids(static_cast<std::size_t>(b)), dport_ids(static_cast<std::size_t>(b)),
            dir_ids(static_cast<std::size_t>(b));
        std::vector<double> timing(static_cast<std::size_t>(b));
        for (int i = 0; i < b; ++i) {
            const auto& in = inputs[static_cast<std::size_t>(i)];
            len_ids[static_cast<std::size_t>(i)] = in.length_ids[static_cast<std::size_t>(t)];
            cfg_ids[static_cast<std::size_t>(i)] = in.protocfg_ids[static_cast<std::size_t>(t)];
            sport_ids[static_cast<std::size_t>(i)] = in.src_port_ids[static_cast<std::size_t>(t)];
            dport_ids[static_cast<std::size_t>(i)] = in.dst_port_ids[static_cast<std::size_t>(t)];
            dir_ids[static_cast<std::size_t>(i)] = in.directions[static_cast<std::size_t>(t)];
            timing[static_cast<std::size_t>(i)] = in.timings[static_cast<std::size_t>(t)];
        }
        auto x = nn::concat_lastdim({len_emb_.forward(len_ids), cfg_emb_.forward(cfg_ids),
                                     port_emb_.forward(sport_ids), port_emb_.forward(dport_ids),
                                     dir_emb_.forward(dir_ids),
                                     nn::Tensor::from({b, 1}, std::move(timing))});
        state = cell_.forward(x, state);
    }
    return head_.forward(state.h);
}

std::vector<double> SequenceClassifier::class_probabilities(
    const ingest::TrafficWindow& window) const {
    nn::NoGradGuard ng;
    return nn::softmax_lastdim(logits({&window})).values();
}

int SequenceClassifier::predict(const ingest::TrafficWindow& window) const {
    const auto probs = class_probabilities(window);
    return static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

double SequenceClassifier::accuracy(const std::vector<ingest::TrafficWindow>& windows,
                                    const std::vector<int>& labels) const {
    if (windows.empty()) return 0.0;
    nn::NoGradGuard ng;
    std::size_t ok = 0;
    for (std::size_t i = 0; i < windows.size(); ++i)
        ok += predict(windows[i]) == labels[i];
    return static_cast<double>(ok) / static_cast<double>(windows.size());
}

class ClassifierTrainer {
public:
    static void train(SequenceClassifier& clf,
                      const std::vector<const ingest::TrafficWindow*>& windows,
                      const std::vector<int>& labels, const AdversaryConfig& cfg,
                      TrainCurve* curve) {
        std::vector<nn::Tensor> params;
        params.push_back(clf.len_emb_.table);
        params.push_back(clf.cfg_emb_.table);
        params.push_back(clf.port_emb_.table);
        params.push_back(clf.dir_emb_.table);
        clf.cell_.collect(params);
        clf.head_.collect(params);
        nn::AdamConfig acfg;
        acfg.lr = cfg.lr;
        acfg.clip_norm = 5.0;
        nn::Adam opt(std::move(params), acfg);

        Rng rng(seed_for(cfg.seed, "adversary-train"));
        std::vector<std::size_t> order(windows.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

        for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
            rng.shuffle(order);
            double total = 0.0;
            std::size_t batches = 0;
            for (std::size_t start = 0; start < order.size();
                 start += static_cast<std::size_t>(cfg.batch_size)) {
                const std::size_t end = std::min(
                    order.size(), start + static_cast<std::size_t>(cfg.batch_size));
                std::vector<const ingest::TrafficWindow*> batch;
                std::vector<int> batch_labels;
                for (std::size_t i = start; i < end; ++i) {
                    batch.push_back(windows[order[i]]);
                    batch_labels.push_back(labels[order[i]]);
                }
                auto loss = nn::softmax_cross_entropy(clf.logits(batch), batch_labels);
                opt.zero_grad();
                nn::backward(loss);
                opt.step();
                total += loss.item();
                ++batches;
            }
            if (curve) curve->loss_per_epoch.push_back(total / static_cast<double>(batches));
        }
    }
};

SequenceClassifier train_realfake(const std::vector<ingest::TrafficWindow>& real,
                                  const std::vector<ingest::TrafficWindow>& fake,
                                  const AdversaryConfig& cfg, TrainCurve* curve) {
    cfg.validate();
    if (real.empty() || fake.empty())
        throw DataError("real and synthetic training sets must both be non-empty");

    // balance classes by downsampling the larger one
    Rng rng(seed_for(cfg.seed, "adversary-balance"));
    auto pick = [&rng](const std::vector<ingest::TrafficWindow>& src, std::size_t count) {
        std::vector<std::size_t> idx(src.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        rng.shuffle(idx);
        std::vector<const ingest::TrafficWindow*> out;
        for (std::size_t i = 0; i < count; ++i) out.push_back(&src[idx[i]]);
        return out;
    };
    const std::size_t count = std::min(real.size(), fake.size());
    if (real.size() != fake.size())
        log_info("balancing classes to " + std::to_string(count) + " + " +
                 std::to_string(count) + " windows");
    auto real_ptrs = pick(real, count);
    auto fake_ptrs = pick(fake, count);

    std::vector<const ingest::TrafficWindow*> windows = real_ptrs;
    windows.insert(windows.end(), fake_ptrs.begin(), fake_ptrs.end());
    std::vector<int> labels(count, 1);
    labels.insert(labels.end(), count, 0);

    std::vector<ingest::TrafficWindow> train_view;
    train_view.reserve(windows.size());
    for (const auto* w : windows) train_view.push_back(*w);
    SequenceClassifier clf(FeatureEncoder::fit(train_view), 2, cfg.hidden, cfg.seed);
    ClassifierTrainer::train(clf, windows, labels, cfg, curve);
    return clf;
}

EvaluationReport cross_validate(const std::vector<ingest::TrafficWindow>& real,
                                const std::vector<ingest::TrafficWindow>& fake, int folds,
                                const AdversaryConfig& cfg, std::uint64_t seed,
                                const std::string& device_id) {
    if (folds < 2) throw ConfigError("folds must be >= 2");
    if (static_cast<int>(real.size()) < folds || static_cast<int>(fake.size()) < folds)
        throw DataError("need at least `folds` windows per class");

    Rng rng(seed_for(seed, "cv-split"));
    std::vector<std::size_t> real_idx(real.size()), fake_idx(fake.size());
    for (std::size_t i = 0; i < real_idx.size(); ++i) real_idx[i] = i;
    for (std::size_t i = 0; i < fake_idx.size(); ++i) fake_idx[i] = i;
    rng.shuffle(real_idx);
    rng.shuffle(fake_idx);

    EvaluationReport report;
    report.device_id = device_id;
    report.real_count = static_cast<int>(real.size());
    report.fake_count = static_cast<int>(fake.size());
    report.config = cfg;

    for (int fold = 0; fold < folds; ++fold) {
        std::vector<ingest::TrafficWindow> train_real, train_fake, test;
        std::vector<int> test_labels;
        for (std::size_t i = 0; i < real_idx.size(); ++i) {
            if (static_cast<int>(i % static_cast<std::size_t>(folds)) == fold) {
                test.push_back(real[real_idx[i]]);
                test_labels.push_back(1);
            } else {
                train_real.push_back(real[real_idx[i]]);
            }
        }
        for (std::size_t i = 0; i < fake_idx.size(); ++i) {
            if (static_cast<int>(i % static_cast<std::size_t>(folds)) == fold) {
                test.push_back(fake[fake_idx[i]]);
                test_labels.push_back(0);
            } else {
                train_fake.push_back(fake[fake_idx[i]]);
            }
        }
        AdversaryConfig fold_cfg = cfg;
        fold_cfg.seed = seed_for(seed, "fold" + std::to_string(fold));
        const auto clf = train_realfake(train_real, train_fake, fold_cfg);
        report.fold_accuracies.push_back(clf.accuracy(test, test_labels));
    }
    double mean = 0.0;
    for (double a : report.fold_accuracies) mean += a;
    report.mean_accuracy = mean / static_cast<double>(report.fold_accuracies.size());
    return report;
}

DeviceClassifierResult train_device_classifier(
    const std::map<std::string, std::vector<ingest::TrafficWindow>>& corpora,
    const AdversaryConfig& cfg) {
    cfg.validate();
    if (corpora.size() < 2)
        throw DataError("device classification needs at least two device labels");

    DeviceClassifierResult res;
    std::vector<const ingest::TrafficWindow*> train;
    std::vector<int> train_labels;
    std::vector<ingest::TrafficWindow> holdout;
    std::vector<int> holdout_labels;

    Rng rng(seed_for(cfg.seed, "device-split"));
    int label = 0;
    for (const auto& [device, windows] : corpora) {
        if (windows.empty()) throw DataError("device " + device + " has no windows");
        res.device_ids.push_back(device);
        std::vector<std::size_t> idx(windows.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        rng.shuffle(idx);
        const std::size_t held = std::max<std::size_t>(1, idx.size() / 5);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            if (i < held) {
                holdout.push_back(windows[idx[i]]);
                holdout_labels.push_back(label);
            } else {
                train.push_back(&windows[idx[i]]);
                train_labels.push_back(label);
            }
        }
        ++label;
    }

    std::vector<ingest::TrafficWindow> train_view;
    train_view.reserve(train.size());
    for (const auto* w : train) train_view.push_back(*w);
    res.classifier = SequenceClassifier(FeatureEncoder::fit(train_view),
                                        static_cast<int>(corpora.size()), cfg.hidden,
                                        cfg.seed);
    ClassifierTrainer::train(res.classifier, train, train_labels, cfg, nullptr);

    std::size_t ok = 0;
    std::map<std::string, std::pair<std::size_t, std::size_t>> per_device;
    for (std::size_t i = 0; i < holdout.size(); ++i) {
        const int pred = res.classifier.predict(holdout[i]);
        const auto& device = res.device_ids[static_cast<std::size_t>(holdout_labels[i])];
        auto& [dev_ok, dev_n] = per_device[device];
        dev_ok += pred == holdout_labels[i];
        ++dev_n;
        ok += pred == holdout_labels[i];
    }
    for (const auto& [device, counts] : per_device)
        res.holdout_accuracy[device] =
            static_cast<double>(counts.first) / static_cast<double>(counts.second);
    res.overall_accuracy = static_cast<double>(ok) / static_cast<double>(holdout.size());
    return res;
}

void write_report_csv(const std::filesystem::path& path,
                      const std::vector<EvaluationReport>& reports) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    int max_folds = 0;
    std::vector<std::string> baseline_names;
    for (const auto& r : reports) {
        max_folds = std::max(max_folds, static_cast<int>(r.fold_accuracies.size()));
        for (const auto& [name, acc] : r.baselines)
            if (std::find(baseline_names.begin(), baseline_names.end(), name) ==
                baseline_names.end())
                baseline_names.push_back(name);
    }
    out << "device,real_count,fake_count";
    for (int f = 0; f < max_folds; ++f) out << ",fold_" << f;
    out << ",mean_accuracy";
    for (const auto& name : baseline_names) out << "," << name;
    out << "\n";
    for (const auto& r : reports) {
        out << r.device_id << "," << r.real_count << "," << r.fake_count;
        for (int f = 0; f < max_folds; ++f) {
            out << ",";
            if (f < static_cast<int>(r.fold_accuracies.size()))
                out << r.fold_accuracies[static_cast<std::size_t>(f)];
        }
        out << "," << r.mean_accuracy;
        for (const auto& name : baseline_names) {
            out << ",";
            for (const auto& [bn, acc] : r.baselines)
                if (bn == name) out << acc;
        }
        out << "\n";
    }
}

std::string render_report_table(const std::vector<EvaluationReport>& reports) {
    std::vector<std::string> baseline_names;
    for (const auto& r : reports)
        for (const auto& [name, acc] : r.baselines)
            if (std::find(baseline_names.begin(), baseline_names.end(), name) ==
                baseline_names.end())
                baseline_names.push_back(name);

    std::ostringstream os;
    os << "Device";
    os << std::string(24 - 6, ' ') << "  Adversary acc";
    for (const auto& name : baseline_names) os << "  " << name;
    os << "\n";
    os << std::string(24, '-') << "  " << std::string(13, '-');
    for (const auto& name : baseline_names) os << "  " << std::string(name.size(), '-');
    os << "\n";
    char buf[32];
    for (const auto& r : reports) {
        std::string dev = r.device_id;
        if (dev.size() > 24) dev.resize(24);
        os << dev << std::string(24 - dev.size(), ' ');
        std::snprintf(buf, sizeof(buf), "  %12.1f%%", 100.0 * r.mean_accuracy);
        os << buf;
        for (const auto& name : baseline_names) {
            bool found = false;
            for (const auto& [bn, acc] : r.baselines) {
                if (bn == name) {
                    std::snprintf(buf, sizeof(buf), "  %*.1f%%",
                                  static_cast<int>(name.size()) - 1, 100.0 * acc);
                    os << buf;
                    found = true;
                }
            }
            if (!found) os << "  " << std::string(name.size(), ' ');
        }
        os << "\n";
    }
    return os.str();
}

}  // namespace flowforge::adversary
