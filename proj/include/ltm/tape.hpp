#pragma once

#include <cstdint>
#include <vector>

#include "ltm/tensor.hpp"

namespace ltm {

enum class Op : uint8_t {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale,
    Matmul,
    TransposeLast2,
    Reshape,
    Relu,
    Sigmoid,
    SoftmaxAxis,
    LayerNorm,
    SumAxis,
    SumAll,
    SliceLast,
    ConcatLast,
    ExtractPatches,
    CrossEntropyLogits,
};

// Reverse-mode tape over the fixed primitive vocabulary used by the models.
// Nodes are appended in execution order, so parents always precede children;
// backward walks the list once in reverse with additive, index-ordered
// gradient accumulation. Deterministic by construction.
class Tape {
public:
    struct Node {
        Op op = Op::Leaf;
        int a = -1, b = -1, c = -1;  // parent node ids
        Tensor value;
        bool needs_grad = false;
        int iaux0 = 0, iaux1 = 0;        // axis / slice offset+len / patch size
        double daux = 0.0;               // scale factor
        std::vector<int> in_shape;       // pre-reshape shape, patch geometry
        std::vector<double> aux;         // layernorm mean+rstd, CE probs
        std::vector<int> labels;         // CE labels
    };

    int leaf(Tensor v, bool requires_grad = false);

    int add(int a, int b);    // same shape, or b's shape a suffix of a's
    int sub(int a, int b);    // same broadcast rules as add
    int mul(int a, int b);    // same shape only
    int scale(int a, double s);
    // [m,k]x[k,n], [B,m,k]x[k,n], [B,m,k]x[B,k,n]
    int matmul(int a, int b);
    int transpose_last2(int a);
    int reshape(int a, std::vector<int> shape);
    int relu(int a);
    int sigmoid(int a);
    int softmax_axis(int a, int axis);  // negative axis counts from the back
    // x normalized over the last axis; gain/bias have that axis's length
    int layernorm(int x, int gain, int bias, double eps = 1e-5);
    int sum_axis(int a, int axis);
    int mean_axis(int a, int axis);
    int sum_all(int a);
    int slice_last(int a, int offset, int len);
    int concat_last(int a, int b);
    // [B,H,W,C] -> [B,(H/p)*(W/p), p*p*C], patches scanned row-major
    int extract_patches(int a, int patch);
    // logits [B,K] -> scalar mean negative log-likelihood
    int cross_entropy_logits(int a, std::vector<int> labels);

    const Tensor& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
    int size() const { return static_cast<int>(nodes_.size()); }

    // Gradients of a scalar loss with respect to every node that needs them
    // (empty Tensor elsewhere). Throws ContractError on a non-scalar loss.
    std::vector<Tensor> backward(int loss_id) const;

private:
    int push(Node n);
    const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }

    std::vector<Node> nodes_;
};

}  // namespace ltm
