#include "flowforge/seqgan.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "flowforge/common.hpp"
#include "flowforge/nn/serialize.hpp"

using ordered_json = nlohmann::ordered_json;

namespace flowforge::gan {

void GanTrainConfig::validate() const {
    if (pretrain_epochs < 1 || rollout_count < 1 || disc_steps < 1 || batch_size < 1)
        throw ConfigError("gan counts must be >= 1");
    if (adversarial_rounds < 0) throw ConfigError("adversarial rounds must be >= 0");
    if (variety_tau <= 0.0 || variety_tau > 1.0)
        throw ConfigError("variety threshold must be in (0,1]");
}

GeneratorPolicy::GeneratorPolicy(int vocab, int seq_len, std::uint64_t seed,
                                 int emb_dim, int hidden_dim)
    : vocab_(vocab), seq_len_(seq_len), emb_dim_(emb_dim), hidden_dim_(hidden_dim),
      init_seed_(seed) {
    if (vocab < 2) throw ConfigError("generator vocab must be >= 2");
    if (seq_len < 1) throw ConfigError("generator sequence length must be >= 1");
    Rng rng(seed_for(seed, "gen-init"));
    emb_ = nn::Embedding(vocab + 1, emb_dim, rng);  // last row: start token
    cell_ = nn::GruCell(emb_dim, hidden_dim, rng);
    head_ = nn::Linear(hidden_dim, vocab, rng);
}

namespace {

int sample_row(const double* probs, int n, Rng& rng) {
    double x = rng.uniform01();
    for (int i = 0; i < n; ++i) {
        x -= probs[i];
        if (x < 0.0) return i;
    }
    return n - 1;
}

}  // namespace

std::vector<DiscreteSequence> GeneratorPolicy::sample_batch(int count, Rng& rng) const {
    nn::NoGradGuard ng;
    std::vector<DiscreteSequence> out(static_cast<std::size_t>(count),
                                      DiscreteSequence(static_cast<std::size_t>(seq_len_)));
    if (count == 0) return out;
    std::vector<int> inputs(static_cast<std::size_t>(count), vocab_);  // start token
    auto h = cell_.initial_state(count);
    for (int t = 0; t < seq_len_; ++t) {
        h = cell_.forward(emb_.forward(inputs), h);
        auto probs = nn::softmax_lastdim(nn::scale(head_.forward(h), 1.0 / temperature_));
        for (int b = 0; b < count; ++b) {
            const int code = sample_row(probs.data() + static_cast<std::size_t>(b) * vocab_,
                                        vocab_, rng);
            out[static_cast<std::size_t>(b)][static_cast<std::size_t>(t)] = code;
            inputs[static_cast<std::size_t>(b)] = code;
        }
    }
    return out;
}

std::vector<double> GeneratorPolicy::step_distribution(const DiscreteSequence& prefix) const {
    if (static_cast<int>(prefix.size()) >= seq_len_)
        throw DataError("prefix already complete");
    nn::NoGradGuard ng;
    std::vector<int> input{vocab_};
    auto h = cell_.initial_state(1);
    nn::Tensor probs;
    for (std::size_t t = 0; t <= prefix.size(); ++t) {
        h = cell_.forward(emb_.forward(input), h);
        probs = nn::softmax_lastdim(nn::scale(head_.forward(h), 1.0 / temperature_));
        if (t < prefix.size()) input[0] = prefix[t];
    }
    return probs.values();
}

std::vector<DiscreteSequence> GeneratorPolicy::complete(const DiscreteSequence& prefix,
                                                        int count, Rng& rng) const {
    if (static_cast<int>(prefix.size()) > seq_len_)
        throw DataError("prefix longer than the sequence length");
    nn::NoGradGuard ng;
    std::vector<DiscreteSequence> out(static_cast<std::size_t>(count), prefix);
    if (count == 0 || static_cast<int>(prefix.size()) == seq_len_) return out;

    // advance the state through the prefix once
    std::vector<int> input{vocab_};
    auto h1 = cell_.initial_state(1);
    for (std::size_t t = 0; t < prefix.size(); ++t) {
        h1 = cell_.forward(emb_.forward(input), h1);
        input[0] = prefix[t];
    }
    // replicate for the rollout batch
    auto h = nn::Tensor::zeros({count, hidden_dim_});
    for (int b = 0; b < count; ++b)
        std::copy_n(h1.data(), static_cast<std::size_t>(hidden_dim_),
                    h.data() + static_cast<std::size_t>(b) * hidden_dim_);
    std::vector<int> inputs(static_cast<std::size_t>(count), input[0]);

    for (int t = static_cast<int>(prefix.size()); t < seq_len_; ++t) {
        h = cell_.forward(emb_.forward(inputs), h);
        auto probs = nn::softmax_lastdim(nn::scale(head_.forward(h), 1.0 / temperature_));
        for (int b = 0; b < count; ++b) {
            const int code = sample_row(probs.data() + static_cast<std::size_t>(b) * vocab_,
                                        vocab_, rng);
            out[static_cast<std::size_t>(b)].push_back(code);
            inputs[static_cast<std::size_t>(b)] = code;
        }
    }
    return out;
}

std::vector<std::pair<std::string, nn::Tensor>> GeneratorPolicy::named_params() const {
    return {{"emb", emb_.table},       {"gru.gates.w", cell_.gates.w},
            {"gru.gates.b", cell_.gates.b}, {"gru.cand.w", cell_.cand.w},
            {"gru.cand.b", cell_.cand.b},   {"head.w", head_.w},
            {"head.b", head_.b}};
}

GeneratorPolicy GeneratorPolicy::clone() const {
    GeneratorPolicy copy(vocab_, seq_len_, init_seed_, emb_dim_, hidden_dim_);
    copy.temperature_ = temperature_;
    const auto src = named_params();
    auto dst = copy.named_params();
    for (std::size_t i = 0; i < src.size(); ++i)
        std::copy(src[i].second.values().begin(), src[i].second.values().end(),
                  dst[i].second.data());
    return copy;
}

SequenceDiscriminator::SequenceDiscriminator(int vocab, int seq_len, std::uint64_t seed,
                                             int emb_dim, int filters)
    : vocab_(vocab), seq_len_(seq_len), emb_dim_(emb_dim), filters_(filters),
      init_seed_(seed) {
    if (seq_len < 5) throw ConfigError("discriminator needs sequence length >= 5");
    Rng rng(seed_for(seed, "disc-init"));
    emb_ = nn::Embedding(vocab, emb_dim, rng);
    conv3_ = nn::Linear(3 * emb_dim, filters, rng);
    conv5_ = nn::Linear(5 * emb_dim, filters, rng);
    highway_t_ = nn::Linear(2 * filters, 2 * filters, rng);
    highway_h_ = nn::Linear(2 * filters, 2 * filters, rng);
    out_ = nn::Linear(2 * filters, 2, rng);
}

nn::Tensor SequenceDiscriminator::logits(const std::vector<DiscreteSequence>& seqs) const {
    const int b = static_cast<int>(seqs.size());
    std::vector<int> ids;
    ids.reserve(static_cast<std::size_t>(b) * seq_len_);
    for (const auto& s : seqs) {
        if (static_cast<int>(s.size()) != seq_len_)
            throw DataError("discriminator scores complete sequences only");
        for (int c : s) {
            if (c < 0 || c >= vocab_)
                throw InvalidTokenError("code " + std::to_string(c) + " outside vocab");
            ids.push_back(c);
        }
    }
    auto x = nn::reshape(emb_.forward(ids), {b, seq_len_, emb_dim_});

    auto pool = [&](const nn::Linear& conv, int w) {
        auto u = nn::unfold1d(x, w);  // [B, T-w+1, w*E]
        const int tw = u.dim(1);
        auto feat = nn::relu(conv.forward(nn::reshape(u, {b * tw, w * emb_dim_})));
        return nn::maxpool_time(nn::reshape(feat, {b, tw, filters_}));
    };
    auto feat = nn::concat_lastdim({pool(conv3_, 3), pool(conv5_, 5)});
    auto t = nn::sigmoid(highway_t_.forward(feat));
    auto hw = nn::add(nn::mul(t, nn::relu(highway_h_.forward(feat))),
                      nn::mul(nn::affine(t, -1.0, 1.0), feat));
    return out_.forward(hw);  // [B, 2]; class 1 = real
}

double SequenceDiscriminator::score(const DiscreteSequence& seq) const {
    return score_batch({seq})[0];
}

std::vector<double> SequenceDiscriminator::score_batch(
    const std::vector<DiscreteSequence>& seqs) const {
    nn::NoGradGuard ng;
    auto lg = nn::softmax_lastdim(logits(seqs));
    std::vector<double> out(seqs.size());
    for (std::size_t i = 0; i < seqs.size(); ++i) out[i] = lg.data()[i * 2 + 1];
    return out;
}

std::vector<std::pair<std::string, nn::Tensor>> SequenceDiscriminator::named_params() const {
    return {{"emb", emb_.table},
            {"conv3.w", conv3_.w},     {"conv3.b", conv3_.b},
            {"conv5.w", conv5_.w},     {"conv5.b", conv5_.b},
            {"hw_t.w", highway_t_.w},  {"hw_t.b", highway_t_.b},
            {"hw_h.w", highway_h_.w},  {"hw_h.b", highway_h_.b},
            {"out.w", out_.w},         {"out.b", out_.b}};
}

// --- training ----------------------------------------------------------------

class GanTrainer {
public:
    // one teacher-forced pass; returns mean per-token CE with optional
    // per-(step,row) weights laid out [C][B]
    static nn::Tensor forced_loss(const GeneratorPolicy& gen,
                                  const std::vector<const DiscreteSequence*>& batch,
                                  const std::vector<std::vector<double>>* step_weights) {
        const int b = static_cast<int>(batch.size());
        const int c = gen.seq_len_;
        std::vector<int> inputs(static_cast<std::size_t>(b), gen.vocab_);
        auto h = gen.cell_.initial_state(b);
        nn::Tensor loss;
        for (int t = 0; t < c; ++t) {
            h = gen.cell_.forward(gen.emb_.forward(inputs), h);
            auto logit = gen.head_.forward(h);
            std::vector<int> targets(static_cast<std::size_t>(b));
            for (int i = 0; i < b; ++i) {
                targets[static_cast<std::size_t>(i)] =
                    (*batch[static_cast<std::size_t>(i)])[static_cast<std::size_t>(t)];
            }
            auto step_loss = nn::softmax_cross_entropy(
                logit, targets,
                step_weights ? &(*step_weights)[static_cast<std::size_t>(t)] : nullptr);
            loss = loss.defined() ? nn::add(loss, step_loss) : step_loss;
            for (int i = 0; i < b; ++i)
                inputs[static_cast<std::size_t>(i)] = targets[static_cast<std::size_t>(i)];
        }
        return nn::scale(loss, 1.0 / static_cast<double>(c));
    }

    static double corpus_nll(const GeneratorPolicy& gen,
                             const std::vector<DiscreteSequence>& codes) {
        nn::NoGradGuard ng;
        std::vector<const DiscreteSequence*> ptrs;
        ptrs.reserve(codes.size());
        for (const auto& s : codes) ptrs.push_back(&s);
        return forced_loss(gen, ptrs, nullptr).item();
    }

    // sample a batch and keep the recurrent states after each step so
    // rollouts can resume mid-sequence
    struct SampledBatch {
        std::vector<DiscreteSequence> seqs;
        std::vector<std::vector<double>> states;  // [C][B*hidden], state after step t
    };

    static SampledBatch sample_with_states(const GeneratorPolicy& gen, int count, Rng& rng) {
        nn::NoGradGuard ng;
        SampledBatch sb;
        sb.seqs.assign(static_cast<std::size_t>(count),
                       DiscreteSequence(static_cast<std::size_t>(gen.seq_len_)));
        std::vector<int> inputs(static_cast<std::size_t>(count), gen.vocab_);
        auto h = gen.cell_.initial_state(count);
        for (int t = 0; t < gen.seq_len_; ++t) {
            h = gen.cell_.forward(gen.emb_.forward(inputs), h);
            sb.states.emplace_back(h.data(), h.data() + h.size());
            auto probs =
                nn::softmax_lastdim(nn::scale(gen.head_.forward(h), 1.0 / gen.temperature_));
            for (int b = 0; b < count; ++b) {
                const int code = sample_row(
                    probs.data() + static_cast<std::size_t>(b) * gen.vocab_, gen.vocab_, rng);
                sb.seqs[static_cast<std::size_t>(b)][static_cast<std::size_t>(t)] = code;
                inputs[static_cast<std::size_t>(b)] = code;
            }
        }
        return sb;
    }

    // Q[t][b]: expected discriminator score after taking step t, estimated
    // with rollout_count completions (exact at the last step).
    static std::vector<std::vector<double>> rollout_rewards(
        const GeneratorPolicy& gen, const SequenceDiscriminator& disc,
        const SampledBatch& sb, int rollout_count, Rng& rng) {
        nn::NoGradGuard ng;
        const int b = static_cast<int>(sb.seqs.size());
        const int c = gen.seq_len_;
        const int hid = gen.hidden_dim_;
        std::vector<std::vector<double>> q(static_cast<std::size_t>(c),
                                           std::vector<double>(static_cast<std::size_t>(b), 0.0));

        const auto final_scores = disc.score_batch(sb.seqs);
        for (int i = 0; i < b; ++i)
            q[static_cast<std::size_t>(c - 1)][static_cast<std::size_t>(i)] =
                final_scores[static_cast<std::size_t>(i)];

        for (int t = 0; t < c - 1; ++t) {
            // resume from state after step t with input = chosen code at t
            const int rows = b * rollout_count;
            auto h = nn::Tensor::zeros({rows, hid});
            std::vector<int> inputs(static_cast<std::size_t>(rows));
            for (int i = 0; i < b; ++i) {
                for (int r = 0; r < rollout_count; ++r) {
                    const int row = i * rollout_count + r;
                    std::copy_n(sb.states[static_cast<std::size_t>(t)].data() +
                                    static_cast<std::size_t>(i) * hid,
                                static_cast<std::size_t>(hid),
                                h.data() + static_cast<std::size_t>(row) * hid);
                    inputs[static_cast<std::size_t>(row)] =
                        sb.seqs[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)];
                }
            }
            std::vector<DiscreteSequence> completions(
                static_cast<std::size_t>(rows), DiscreteSequence());
            for (int i = 0; i < b; ++i)
                for (int r = 0; r < rollout_count; ++r)
                    completions[static_cast<std::size_t>(i * rollout_count + r)].assign(
                        sb.seqs[static_cast<std::size_t>(i)].begin(),
                        sb.seqs[static_cast<std::size_t>(i)].begin() + t + 1);

            for (int step = t + 1; step < c; ++step) {
                h = gen.cell_.forward(gen.emb_.forward(inputs), h);
                auto probs = nn::softmax_lastdim(
                    nn::scale(gen.head_.forward(h), 1.0 / gen.temperature_));
                for (int row = 0; row < rows; ++row) {
                    const int code = sample_row(
                        probs.data() + static_cast<std::size_t>(row) * gen.vocab_,
                        gen.vocab_, rng);
                    completions[static_cast<std::size_t>(row)].push_back(code);
                    inputs[static_cast<std::size_t>(row)] = code;
                }
            }
            const auto scores = disc.score_batch(completions);
            for (int i = 0; i < b; ++i) {
                double avg = 0.0;
                for (int r = 0; r < rollout_count; ++r)
                    avg += scores[static_cast<std::size_t>(i * rollout_count + r)];
                q[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)] =
                    avg / rollout_count;
            }
        }
        return q;
    }

    static double disc_update(SequenceDiscriminator& disc, nn::Adam& opt,
                              const std::vector<DiscreteSequence>& real,
                              const std::vector<DiscreteSequence>& fake) {
        std::vector<DiscreteSequence> all = real;
        all.insert(all.end(), fake.begin(), fake.end());
        std::vector<int> labels(real.size(), 1);
        labels.insert(labels.end(), fake.size(), 0);
        auto lg = disc.logits(all);
        auto loss = nn::softmax_cross_entropy(lg, labels);
        opt.zero_grad();
        nn::backward(loss);
        opt.step();
        // batch accuracy
        std::size_t ok = 0;
        for (std::size_t i = 0; i < all.size(); ++i) {
            const int pred = lg.data()[i * 2 + 1] > lg.data()[i * 2] ? 1 : 0;
            ok += pred == labels[i];
        }
        return static_cast<double>(ok) / static_cast<double>(all.size());
    }
};

std::vector<double> pretrain(GeneratorPolicy& gen,
                             const std::vector<DiscreteSequence>& real_codes,
                             const GanTrainConfig& cfg) {
    cfg.validate();
    if (real_codes.empty()) throw DataError("no code sequences to pretrain on");
    for (const auto& s : real_codes)
        if (static_cast<int>(s.size()) != gen.seq_len())
            throw DataError("code sequence length mismatch");

    std::vector<nn::Tensor> params;
    for (auto& [name, t] : gen.named_params()) params.push_back(t);
    nn::AdamConfig acfg;
    acfg.lr = 1e-2;
    acfg.clip_norm = 5.0;
    nn::Adam opt(std::move(params), acfg);

    Rng rng(seed_for(cfg.seed, "gan-pretrain"));
    std::vector<std::size_t> order(real_codes.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::vector<double> nll_per_epoch;
    for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
        rng.shuffle(order);
        double total = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            std::vector<const DiscreteSequence*> batch;
            for (std::size_t i = start;
                 i < std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
                 ++i)
                batch.push_back(&real_codes[order[i]]);
            auto loss = GanTrainer::forced_loss(gen, batch, nullptr);
            opt.zero_grad();
            nn::backward(loss);
            opt.step();
            total += loss.item();
            ++batches;
        }
        nll_per_epoch.push_back(total / static_cast<double>(batches));
    }
    return nll_per_epoch;
}

double rollout_reward(const GeneratorPolicy& gen, const SequenceScorer& scorer,
                      const DiscreteSequence& prefix, int rollout_count, Rng& rng) {
    if (static_cast<int>(prefix.size()) > gen.seq_len())
        throw DataError("prefix longer than sequence length");
    if (static_cast<int>(prefix.size()) == gen.seq_len()) return scorer(prefix);
    if (rollout_count < 1) throw ConfigError("rollout count must be >= 1");
    const auto completions = gen.complete(prefix, rollout_count, rng);
    double avg = 0.0;
    for (const auto& c : completions) avg += scorer(c);
    return avg / static_cast<double>(completions.size());
}

double rollout_reward(const GeneratorPolicy& gen, const SequenceDiscriminator& disc,
                      const DiscreteSequence& prefix, int rollout_count, Rng& rng) {
    if (static_cast<int>(prefix.size()) > gen.seq_len())
        throw DataError("prefix longer than sequence length");
    if (static_cast<int>(prefix.size()) == gen.seq_len()) return disc.score(prefix);
    if (rollout_count < 1) throw ConfigError("rollout count must be >= 1");
    const auto completions = gen.complete(prefix, rollout_count, rng);
    const auto scores = disc.score_batch(completions);
    double avg = 0.0;
    for (double s : scores) avg += s;
    return avg / static_cast<double>(scores.size());
}

nn::Tensor forced_nll(const GeneratorPolicy& gen,
                      const std::vector<DiscreteSequence>& batch,
                      const std::vector<std::vector<double>>* step_weights) {
    std::vector<const DiscreteSequence*> ptrs;
    ptrs.reserve(batch.size());
    for (const auto& s : batch) ptrs.push_back(&s);
    return GanTrainer::forced_loss(gen, ptrs, step_weights);
}

std::vector<TrainCurvePoint> adversarial_train(
    GeneratorPolicy& gen, SequenceDiscriminator& disc,
    const std::vector<DiscreteSequence>& real_codes, const GanTrainConfig& cfg) {
    cfg.validate();
    if (real_codes.empty()) throw DataError("no code sequences for adversarial training");

    std::vector<TrainCurvePoint> curve;
    if (cfg.adversarial_rounds == 0) return curve;

    std::vector<nn::Tensor> gen_params;
    for (auto& [name, t] : gen.named_params()) gen_params.push_back(t);
    nn::AdamConfig gcfg;
    gcfg.lr = cfg.gen_lr;
    gcfg.clip_norm = 5.0;
    nn::Adam gen_opt(std::move(gen_params), gcfg);

    std::vector<nn::Tensor> disc_params;
    for (auto& [name, t] : disc.named_params()) disc_params.push_back(t);
    nn::AdamConfig dcfg;
    dcfg.lr = cfg.disc_lr;
    dcfg.clip_norm = 5.0;
    nn::Adam disc_opt(std::move(disc_params), dcfg);

    Rng rng(seed_for(cfg.seed, "gan-adversarial"));

    auto pick_real = [&](int count) {
        std::vector<DiscreteSequence> out;
        out.reserve(static_cast<std::size_t>(count));
        for (int i = 0; i < count; ++i)
            out.push_back(real_codes[rng.uniform_u64(real_codes.size())]);
        return out;
    };

    for (int round = 0; round < cfg.adversarial_rounds; ++round) {
        // generator step: REINFORCE with per-step rollout rewards
        auto sb = GanTrainer::sample_with_states(gen, cfg.batch_size, rng);
        auto q = GanTrainer::rollout_rewards(gen, disc, sb, cfg.rollout_count, rng);
        double mean_reward = 0.0;
        for (const auto& row : q)
            for (double v : row) mean_reward += v;
        mean_reward /= static_cast<double>(gen.seq_len() * cfg.batch_size);

        std::vector<const DiscreteSequence*> batch;
        batch.reserve(sb.seqs.size());
        for (const auto& s : sb.seqs) batch.push_back(&s);
        // minimizing weighted NLL == maximizing expected reward
        auto loss = GanTrainer::forced_loss(gen, batch, &q);
        gen_opt.zero_grad();
        nn::backward(loss);
        gen_opt.step();

        // discriminator steps
        double disc_acc = 0.0;
        for (int dstep = 0; dstep < cfg.disc_steps; ++dstep) {
            Rng srng(rng.next_u64());
            auto fake = gen.sample_batch(cfg.batch_size, srng);
            disc_acc = GanTrainer::disc_update(disc, disc_opt, pick_real(cfg.batch_size), fake);
        }

        TrainCurvePoint pt;
        pt.round = round;
        pt.disc_accuracy = disc_acc;
        pt.mean_reward = mean_reward;
        pt.nll = GanTrainer::corpus_nll(gen, real_codes);
        curve.push_back(pt);
    }
    return curve;
}

std::vector<DiscreteSequence> sample(const GeneratorPolicy& gen, int count,
                                     std::uint64_t seed) {
    Rng rng(seed_for(seed, "gan-sample"));
    if (count == 0) return {};
    return gen.sample_batch(count, rng);
}

VarietyReport variety_check(const std::vector<DiscreteSequence>& samples, double tau) {
    if (samples.empty()) throw DataError("variety check on empty sample set");
    std::map<DiscreteSequence, std::size_t> hist;
    for (const auto& s : samples) ++hist[s];
    VarietyReport rep;
    rep.distinct_ratio =
        static_cast<double>(hist.size()) / static_cast<double>(samples.size());
    std::size_t modal = 0;
    for (const auto& [seq, count] : hist) modal = std::max(modal, count);
    rep.modal_share = static_cast<double>(modal) / static_cast<double>(samples.size());
    rep.pass = rep.distinct_ratio >= tau;
    return rep;
}

GenerationResult sample_with_variety_guard(GeneratorPolicy& gen,
                                           SequenceDiscriminator& disc,
                                           const GeneratorPolicy& pretrained,
                                           const std::vector<DiscreteSequence>& real_codes,
                                           const GanTrainConfig& cfg, int count,
                                           std::uint64_t seed) {
    GenerationResult res;
    const double base_temp = gen.temperature();
    for (int attempt = 0; attempt < 3; ++attempt) {
        gen.set_temperature(base_temp + 0.2 * attempt);
        res.samples = sample(gen, count, seed_for(seed, "attempt" + std::to_string(attempt)));
        res.variety = variety_check(res.samples, cfg.variety_tau);
        ++res.attempts;
        if (res.variety.pass) {
            gen.set_temperature(base_temp);
            return res;
        }
        log_warn("variety check failed (ratio " + std::to_string(res.variety.distinct_ratio) +
                 "), raising sampling temperature");
    }
    gen.set_temperature(base_temp);

    // restart adversarial training from the pretrained checkpoint, new seed
    log_warn("variety recovery: restarting adversarial training with a fresh seed");
    gen = pretrained.clone();
    GanTrainConfig retry_cfg = cfg;
    retry_cfg.seed = seed_for(cfg.seed, "variety-retry");
    adversarial_train(gen, disc, real_codes, retry_cfg);
    res.retrained = true;

    for (int attempt = 0; attempt < 3; ++attempt) {
        gen.set_temperature(base_temp + 0.2 * attempt);
        res.samples =
            sample(gen, count, seed_for(seed, "retry-attempt" + std::to_string(attempt)));
        res.variety = variety_check(res.samples, cfg.variety_tau);
        ++res.attempts;
        if (res.variety.pass) break;
    }
    gen.set_temperature(base_temp);
    if (!res.variety.pass)
        log_warn("variety check still failing after retraining; emitting flagged samples");
    return res;
}

void write_curves_csv(const std::filesystem::path& path,
                      const std::vector<TrainCurvePoint>& curve) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << "round,disc_accuracy,mean_reward,nll\n";
    for (const auto& pt : curve)
        out << pt.round << "," << pt.disc_accuracy << "," << pt.mean_reward << ","
            << pt.nll << "\n";
}

// --- persistence ---------------------------------------------------------------

void GeneratorPolicy::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    ordered_json manifest;
    manifest["format_version"] = 1;
    manifest["kind"] = "seqgan-generator";
    manifest["vocab"] = vocab_;
    manifest["seq_len"] = seq_len_;
    manifest["emb_dim"] = emb_dim_;
    manifest["hidden_dim"] = hidden_dim_;
    manifest["temperature"] = temperature_;
    manifest["init_seed"] = init_seed_;
    std::ofstream mf(dir / "manifest.json", std::ios::trunc);
    mf << manifest.dump(2) << "\n";
    std::vector<std::pair<std::string, std::vector<double>>> entries;
    for (const auto& [name, t] : named_params()) entries.emplace_back(name, t.values());
    nn::save_weights(dir / "weights.bin", entries);
}

GeneratorPolicy GeneratorPolicy::load(const std::filesystem::path& dir) {
    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw IoError("cannot open manifest: " + (dir / "manifest.json").string());
    ordered_json manifest = ordered_json::parse(mf);
    if (manifest.at("kind") != "seqgan-generator") throw IoError("manifest kind mismatch");
    GeneratorPolicy gen(manifest.at("vocab").get<int>(), manifest.at("seq_len").get<int>(),
                        manifest.at("init_seed").get<std::uint64_t>(),
                        manifest.at("emb_dim").get<int>(),
                        manifest.at("hidden_dim").get<int>());
    gen.temperature_ = manifest.at("temperature").get<double>();
    auto blob = nn::load_weights(dir / "weights.bin");
    for (auto& [name, t] : gen.named_params()) {
        auto it = blob.find(name);
        if (it == blob.end() || it->second.size() != t.size())
            throw IoError("checkpoint missing or mis-sized tensor: " + name);
        std::copy(it->second.begin(), it->second.end(), t.data());
    }
    return gen;
}

void SequenceDiscriminator::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    ordered_json manifest;
    manifest["format_version"] = 1;
    manifest["kind"] = "seqgan-discriminator";
    manifest["vocab"] = vocab_;
    manifest["seq_len"] = seq_len_;
    manifest["emb_dim"] = emb_dim_;
    manifest["filters"] = filters_;
    manifest["init_seed"] = init_seed_;
    std::ofstream mf(dir / "manifest.json", std::ios::trunc);
    mf << manifest.dump(2) << "\n";
    std::vector<std::pair<std::string, std::vector<double>>> entries;
    for (const auto& [name, t] : named_params()) entries.emplace_back(name, t.values());
    nn::save_weights(dir / "weights.bin", entries);
}

SequenceDiscriminator SequenceDiscriminator::load(const std::filesystem::path& dir) {
    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw IoError("cannot open manifest: " + (dir / "manifest.json").string());
    ordered_json manifest = ordered_json::parse(mf);
    if (manifest.at("kind") != "seqgan-discriminator")
        throw IoError("manifest kind mismatch");
    SequenceDiscriminator disc(manifest.at("vocab").get<int>(),
                               manifest.at("seq_len").get<int>(),
                               manifest.at("init_seed").get<std::uint64_t>(),
                               manifest.at("emb_dim").get<int>(),
                               manifest.at("filters").get<int>());
    auto blob = nn::load_weights(dir / "weights.bin");
    for (auto& [name, t] : disc.named_params()) {
        auto it = blob.find(name);
        if (it == blob.end() || it->second.size() != t.size())
            throw IoError("checkpoint missing or mis-sized tensor: " + name);
        std::copy(it->second.begin(), it->second.end(), t.data());
    }
    return disc;
}

}  // namespace flowforge::gan
