#include "flowforge/nn/layers.hpp"

#include <cmath>

#include "flowforge/common.hpp"
#include "flowforge/kernels.hpp"

namespace flowforge::nn {

void xavier_init(Tensor& t, int fan_in, int fan_out, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(-bound, bound);
}

Linear::Linear(int in, int out, Rng& rng) {
    w = Tensor::zeros({out, in}, true);
    b = Tensor::zeros({out}, true);
    xavier_init(w, in, out, rng);
}

void Linear::collect(std::vector<Tensor>& params) const {
    params.push_back(w);
    params.push_back(b);
}

Embedding::Embedding(int vocab, int dim, Rng& rng) {
    table = Tensor::zeros({vocab, dim}, true);
    for (std::size_t i = 0; i < table.size(); ++i)
        table.data()[i] = rng.normal(0.0, 0.1);
}

void Embedding::collect(std::vector<Tensor>& params) const { params.push_back(table); }

LayerNorm::LayerNorm(int dim) {
    gain = Tensor::full({dim}, 1.0, true);
    bias = Tensor::zeros({dim}, true);
}

void LayerNorm::collect(std::vector<Tensor>& params) const {
    params.push_back(gain);
    params.push_back(bias);
}

TransformerBlock::TransformerBlock(int dim, int heads_, Rng& rng)
    : heads(heads_),
      wq(dim, dim, rng),
      wk(dim, dim, rng),
      wv(dim, dim, rng),
      wo(dim, dim, rng),
      ff1(dim, 2 * dim, rng),
      ff2(2 * dim, dim, rng),
      ln1(dim),
      ln2(dim) {
    if (dim % heads_ != 0) throw ConfigError("model dim must be divisible by heads");
}

Tensor TransformerBlock::forward(const Tensor& x) const {
    const int b = x.dim(0);
    const int l = x.dim(1);
    const int d = x.dim(2);
    const int dh = d / heads;

    auto flat = reshape(x, {b * l, d});
    auto q = split_heads(reshape(wq.forward(flat), {b, l, d}), heads);
    auto k = split_heads(reshape(wk.forward(flat), {b, l, d}), heads);
    auto v = split_heads(reshape(wv.forward(flat), {b, l, d}), heads);

    auto scores = scale(bmm(q, transpose_last2(k)), 1.0 / std::sqrt(static_cast<double>(dh)));
    auto ctx = bmm(softmax_lastdim(scores), v);
    auto attn = reshape(wo.forward(reshape(merge_heads(ctx, heads), {b * l, d})), {b, l, d});

    auto x1 = ln1.forward(add(x, attn));
    auto ff = ff2.forward(relu(ff1.forward(reshape(x1, {b * l, d}))));
    return ln2.forward(add(x1, reshape(ff, {b, l, d})));
}

void TransformerBlock::collect(std::vector<Tensor>& params) const {
    wq.collect(params);
    wk.collect(params);
    wv.collect(params);
    wo.collect(params);
    ff1.collect(params);
    ff2.collect(params);
    ln1.collect(params);
    ln2.collect(params);
}

GruCell::GruCell(int input, int hidden_, Rng& rng)
    : hidden(hidden_), gates(input + hidden_, 2 * hidden_, rng),
      cand(input + hidden_, hidden_, rng) {}

Tensor GruCell::forward(const Tensor& x, const Tensor& h) const {
    auto xh = concat_lastdim({x, h});
    auto rz = sigmoid(gates.forward(xh));
    auto r = slice_lastdim(rz, 0, hidden);
    auto z = slice_lastdim(rz, hidden, hidden);
    auto n = tanh_op(cand.forward(concat_lastdim({x, mul(r, h)})));
    // h' = (1-z)*n + z*h
    return add(mul(affine(z, -1.0, 1.0), n), mul(z, h));
}

void GruCell::collect(std::vector<Tensor>& params) const {
    gates.collect(params);
    cand.collect(params);
}

LstmCell::LstmCell(int input, int hidden_, Rng& rng)
    : hidden(hidden_), gates(input + hidden_, 4 * hidden_, rng) {
    // forget-gate bias starts at 1 so early training keeps state
    for (int i = hidden; i < 2 * hidden; ++i) gates.b.data()[i] = 1.0;
}

LstmCell::State LstmCell::forward(const Tensor& x, const State& s) const {
    auto acts = gates.forward(concat_lastdim({x, s.h}));
    auto i = sigmoid(slice_lastdim(acts, 0, hidden));
    auto f = sigmoid(slice_lastdim(acts, hidden, hidden));
    auto g = tanh_op(slice_lastdim(acts, 2 * hidden, hidden));
    auto o = sigmoid(slice_lastdim(acts, 3 * hidden, hidden));
    auto c = add(mul(f, s.c), mul(i, g));
    return {mul(o, tanh_op(c)), c};
}

void LstmCell::collect(std::vector<Tensor>& params) const { gates.collect(params); }

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
        m_.emplace_back(p.size(), 0.0);
        v_.emplace_back(p.size(), 0.0);
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

void Adam::step() {
    ++t_;
    double clip_scale = 1.0;
    if (cfg_.clip_norm > 0.0) {
        double total = 0.0;
        for (const auto& p : params_)
            total += kernels::dot(p.grad_data(), p.grad_data(), p.size());
        const double norm = std::sqrt(total);
        if (norm > cfg_.clip_norm) clip_scale = cfg_.clip_norm / norm;
    }
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
        auto& p = params_[pi];
        double* w = p.data();
        const double* g = p.grad_data();
        auto& m = m_[pi];
        auto& v = v_[pi];
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = g[i] * clip_scale;
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

}  // namespace flowforge::nn
