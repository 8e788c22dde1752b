#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <vector>

// Reverse-mode autograd over dense double tensors. Inner loops run through
// flowforge::kernels, so the heavy math follows the runtime SIMD dispatch.
// Graphs are rebuilt every step and freed when the loss goes out of scope.

namespace flowforge::nn {

struct Node {
    std::vector<int> shape;
    std::vector<double> value;
    std::vector<double> grad;  // sized with value when requires_grad
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;
    std::uint64_t mark = 0;  // topological-sort scratch
};

using NodePtr = std::shared_ptr<Node>;

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(NodePtr n) : node_(std::move(n)) {}

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, double fill, bool requires_grad = false);
    static Tensor from(std::vector<int> shape, std::vector<double> value,
                       bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const { return node_->shape; }
    int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->value.size(); }
    double* data() { return node_->value.data(); }
    const double* data() const { return node_->value.data(); }
    double* grad_data() { return node_->grad.data(); }
    const double* grad_data() const { return node_->grad.data(); }
    std::vector<double>& values() { return node_->value; }
    const std::vector<double>& values() const { return node_->value; }
    double item() const { return node_->value.at(0); }
    bool requires_grad() const { return node_->requires_grad; }
    void zero_grad();
    NodePtr node() const { return node_; }

private:
    NodePtr node_;
};

// While a guard is alive, ops compute values only (no graph edges); used for
// sampling / evaluation passes.
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};
bool grad_enabled();

// --- ops --------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);      // [M,K]x[K,N] -> [M,N]
Tensor matmul_nt(const Tensor& a, const Tensor& w);   // [M,K]x[N,K]^T -> [M,N]
Tensor bmm(const Tensor& a, const Tensor& b);         // [B,M,K]x[B,K,N] -> [B,M,N]
Tensor transpose_last2(const Tensor& a);              // [B,M,N] -> [B,N,M]
Tensor reshape(const Tensor& a, std::vector<int> shape);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double k);
Tensor affine(const Tensor& a, double k, double c);   // k*a + c elementwise
Tensor add_bias(const Tensor& a, const Tensor& bias);     // bias over last dim
Tensor add_frame(const Tensor& a, const Tensor& frame);   // broadcast over dim 0
Tensor relu(const Tensor& a);
Tensor tanh_op(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softmax_lastdim(const Tensor& a);
Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);
Tensor concat_lastdim(const std::vector<Tensor>& parts);
Tensor slice_lastdim(const Tensor& a, int start, int len);
Tensor rows(const Tensor& table, const std::vector<int>& ids);  // gather -> [M,D]
Tensor split_heads(const Tensor& a, int heads);   // [B,L,D] -> [B*H,L,D/H]
Tensor merge_heads(const Tensor& a, int heads);   // [B*H,L,dh] -> [B,L,H*dh]
Tensor maxpool_time(const Tensor& a);             // [B,T,F] -> [B,F]
Tensor unfold1d(const Tensor& a, int width);      // [B,T,E] -> [B,T-w+1,w*E]
Tensor mean_all(const Tensor& a);                 // -> scalar [1]
Tensor mse(const Tensor& a, const Tensor& b);     // mean (a-b)^2 -> scalar [1]
Tensor detach(const Tensor& a);

// mean_i weight_i * CE(logits_i, target_i); weights default to 1.
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                             const std::vector<double>* row_weights = nullptr);

void backward(const Tensor& loss);

}  // namespace flowforge::nn
