#pragma once

#include <vector>

#include "flowforge/nn/tensor.hpp"
#include "flowforge/rng.hpp"

namespace flowforge::nn {

struct Linear {
    Tensor w;  // [out, in]
    Tensor b;  // [out]

    Linear() = default;
    Linear(int in, int out, Rng& rng);

    // x: [M, in] -> [M, out]
    Tensor forward(const Tensor& x) const { return add_bias(matmul_nt(x, w), b); }
    void collect(std::vector<Tensor>& params) const;
};

struct Embedding {
    Tensor table;  // [vocab, dim]

    Embedding() = default;
    Embedding(int vocab, int dim, Rng& rng);

    Tensor forward(const std::vector<int>& ids) const { return rows(table, ids); }
    void collect(std::vector<Tensor>& params) const;
};

struct LayerNorm {
    Tensor gain;
    Tensor bias;

    LayerNorm() = default;
    explicit LayerNorm(int dim);

    Tensor forward(const Tensor& x) const { return layer_norm(x, gain, bias); }
    void collect(std::vector<Tensor>& params) const;
};

// Post-LN transformer block with multi-head self-attention and a 2x-wide
// feed-forward. Operates on [B, L, D].
struct TransformerBlock {
    int heads = 4;
    Linear wq, wk, wv, wo;
    Linear ff1, ff2;
    LayerNorm ln1, ln2;

    TransformerBlock() = default;
    TransformerBlock(int dim, int heads, Rng& rng);

    Tensor forward(const Tensor& x) const;
    void collect(std::vector<Tensor>& params) const;
};

struct GruCell {
    int hidden = 0;
    Linear gates;  // [x,h] -> 2*hidden (reset, update)
    Linear cand;   // [x, r*h] -> hidden

    GruCell() = default;
    GruCell(int input, int hidden, Rng& rng);

    // x: [B, input], h: [B, hidden] -> new h
    Tensor forward(const Tensor& x, const Tensor& h) const;
    Tensor initial_state(int batch) const { return Tensor::zeros({batch, hidden}); }
    void collect(std::vector<Tensor>& params) const;
};

struct LstmCell {
    int hidden = 0;
    Linear gates;  // [x,h] -> 4*hidden (input, forget, cell, output)

    LstmCell() = default;
    LstmCell(int input, int hidden, Rng& rng);

    struct State {
        Tensor h;
        Tensor c;
    };
    State forward(const Tensor& x, const State& s) const;
    State initial_state(int batch) const {
        return {Tensor::zeros({batch, hidden}), Tensor::zeros({batch, hidden})};
    }
    void collect(std::vector<Tensor>& params) const;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 0.0;  // 0 = no clipping
};

class Adam {
public:
    Adam(std::vector<Tensor> params, AdamConfig cfg);

    void zero_grad();
    void step();
    const std::vector<Tensor>& params() const { return params_; }

private:
    std::vector<Tensor> params_;
    AdamConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    long t_ = 0;
};

// Uniform init in [-bound, bound] with bound = sqrt(6 / (fan_in + fan_out)).
void xavier_init(Tensor& t, int fan_in, int fan_out, Rng& rng);

}  // namespace flowforge::nn
