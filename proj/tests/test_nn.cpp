#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "flowforge/nn/layers.hpp"
#include "flowforge/nn/tensor.hpp"
#include "flowforge/rng.hpp"
#include "oracles.hpp"

using namespace flowforge;
using nn::Tensor;

namespace {

Tensor random_param(std::vector<int> shape, Rng& rng, double scale = 0.5) {
    auto t = Tensor::zeros(std::move(shape), true);
    for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = rng.normal(0.0, scale);
    return t;
}

}  // namespace

TEST_CASE("every op passes a finite-difference gradient check") {
    Rng rng(100);
    auto a = random_param({3, 4}, rng);
    auto b = random_param({3, 4}, rng);
    auto w = random_param({5, 4}, rng);
    auto bias = random_param({4}, rng);
    auto bias5 = random_param({5}, rng);
    auto m1 = random_param({3, 4}, rng);
    auto m2 = random_param({4, 5}, rng);
    auto b3 = random_param({2, 3, 4}, rng);
    auto b3b = random_param({2, 4, 3}, rng);
    auto gain = random_param({4}, rng, 0.2);
    auto table = random_param({6, 3}, rng);

    const std::vector<int> targets = {1, 3, 0};
    const std::vector<double> weights = {0.5, -1.0, 2.0};
    const std::vector<int> ids = {0, 5, 2, 2};

    auto frame_b = random_param({3, 4}, rng);  // broadcast over dim 0 of b3

    struct Case {
        const char* name;
        std::vector<Tensor> params;
        std::function<Tensor()> graph;
    };

    const std::vector<Case> cases = {
        {"add+mul+scale", {a, b}, [&] {
             return nn::mean_all(nn::mul(nn::add(a, nn::scale(b, 1.7)), b));
         }},
        {"affine+relu", {a}, [&] { return nn::mean_all(nn::relu(nn::affine(a, 2.0, -0.3))); }},
        {"tanh+sigmoid", {a}, [&] {
             return nn::mean_all(nn::mul(nn::tanh_op(a), nn::sigmoid(a)));
         }},
        {"matmul", {m1, m2}, [&] { return nn::mean_all(nn::matmul(m1, m2)); }},
        {"matmul_nt+bias", {m1, w, bias5}, [&] {
             return nn::mean_all(nn::add_bias(nn::matmul_nt(m1, w), bias5));
         }},
        {"bmm+transpose", {b3, b3b}, [&] {
             return nn::mean_all(nn::bmm(b3, nn::transpose_last2(nn::transpose_last2(b3b))));
         }},
        {"softmax", {a}, [&] {
             return nn::mean_all(nn::mul(nn::softmax_lastdim(a), b));
         }},
        {"layer_norm", {a, gain, bias}, [&] {
             return nn::mean_all(nn::mul(nn::layer_norm(a, gain, bias), b));
         }},
        {"concat+slice", {a, b}, [&] {
             auto cat = nn::concat_lastdim({a, b});
             return nn::mean_all(nn::mul(nn::slice_lastdim(cat, 2, 4),
                                         nn::slice_lastdim(cat, 3, 4)));
         }},
        {"rows", {table}, [&] {
             return nn::mean_all(nn::mul(nn::rows(table, ids), nn::rows(table, ids)));
         }},
        {"split+merge heads", {b3}, [&] {
             return nn::mean_all(nn::merge_heads(nn::split_heads(b3, 2), 2));
         }},
        {"maxpool_time", {b3}, [&] { return nn::mean_all(nn::maxpool_time(b3)); }},
        {"unfold1d", {b3}, [&] { return nn::mean_all(nn::unfold1d(b3, 2)); }},
        {"mse", {a, b}, [&] { return nn::mse(a, b); }},
        {"reshape", {a}, [&] {
             return nn::mean_all(nn::mul(nn::reshape(a, {4, 3}), nn::reshape(b, {4, 3})));
         }},
        {"add_frame", {b3, frame_b}, [&] {
             return nn::mean_all(nn::add_frame(b3, frame_b));
         }},
        {"softmax_cross_entropy", {m1}, [&] {
             return nn::softmax_cross_entropy(m1, targets);
         }},
        {"weighted cross entropy", {m1}, [&] {
             return nn::softmax_cross_entropy(m1, targets, &weights);
         }},
    };

    for (const auto& c : cases) {
        CAPTURE(c.name);
        const double err = oracles::max_relative_grad_error(
            c.params, [&] { return c.graph().item(); }, c.graph);
        CHECK(err < 1e-5);
    }
}

TEST_CASE("gru and lstm cells pass gradient checks") {
    Rng rng(200);
    nn::GruCell gru(3, 4, rng);
    nn::LstmCell lstm(3, 4, rng);
    auto x = random_param({2, 3}, rng);

    std::vector<Tensor> gru_params{x};
    gru.collect(gru_params);
    auto gru_graph = [&] {
        auto h = gru.initial_state(2);
        h = gru.forward(x, h);
        h = gru.forward(x, h);
        return nn::mean_all(h);
    };
    CHECK(oracles::max_relative_grad_error(
              gru_params, [&] { return gru_graph().item(); }, gru_graph) < 1e-5);

    std::vector<Tensor> lstm_params{x};
    lstm.collect(lstm_params);
    auto lstm_graph = [&] {
        auto s = lstm.initial_state(2);
        s = lstm.forward(x, s);
        s = lstm.forward(x, s);
        return nn::mean_all(s.h);
    };
    CHECK(oracles::max_relative_grad_error(
              lstm_params, [&] { return lstm_graph().item(); }, lstm_graph) < 1e-5);
}

TEST_CASE("transformer block passes a gradient check") {
    Rng rng(300);
    nn::TransformerBlock blk(8, 2, rng);
    auto x = random_param({2, 3, 8}, rng);
    std::vector<Tensor> params{x};
    blk.collect(params);
    auto graph = [&] { return nn::mean_all(blk.forward(x)); };
    // relu pre-activations near zero make central differences cross the kink,
    // so the bound here is looser than for the smooth ops
    CHECK(oracles::max_relative_grad_error(params, [&] { return graph().item(); }, graph) <
          1e-3);
}

TEST_CASE("no-grad mode skips graph construction") {
    Rng rng(7);
    auto a = random_param({2, 2}, rng);
    {
        nn::NoGradGuard ng;
        auto out = nn::mul(a, a);
        CHECK_FALSE(out.requires_grad());
    }
    auto out = nn::mul(a, a);
    CHECK(out.requires_grad());
}

TEST_CASE("softmax rows sum to one") {
    Rng rng(8);
    auto a = random_param({5, 7}, rng, 3.0);
    const auto sm = nn::softmax_lastdim(a);
    for (int r = 0; r < 5; ++r) {
        double sum = 0.0;
        for (int c = 0; c < 7; ++c) sum += sm.data()[r * 7 + c];
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("adam descends a quadratic and clips gradients") {
    auto x = Tensor::from({2}, {5.0, -3.0}, true);
    nn::AdamConfig cfg;
    cfg.lr = 0.1;
    nn::Adam opt({x}, cfg);
    for (int i = 0; i < 300; ++i) {
        opt.zero_grad();
        auto loss = nn::mse(x, Tensor::from({2}, {1.0, 2.0}));
        nn::backward(loss);
        opt.step();
    }
    CHECK(x.data()[0] == doctest::Approx(1.0).epsilon(1e-2));
    CHECK(x.data()[1] == doctest::Approx(2.0).epsilon(1e-2));
}

TEST_CASE("backward accumulates across shared subgraphs") {
    // y = x * x reused twice: d/dx of mean(x*x + x*x) = 4x/n
    auto x = Tensor::from({2}, {3.0, -1.0}, true);
    auto sq = nn::mul(x, x);
    auto loss = nn::mean_all(nn::add(sq, sq));
    x.zero_grad();
    nn::backward(loss);
    CHECK(x.grad_data()[0] == doctest::Approx(4.0 * 3.0 / 2.0));
    CHECK(x.grad_data()[1] == doctest::Approx(4.0 * -1.0 / 2.0));
}
