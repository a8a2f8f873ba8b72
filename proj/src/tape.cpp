#include "ltm/tape.hpp"

#include <cmath>
#include <cstring>

#include "ltm/kernels.hpp"

namespace ltm {

namespace {

int64_t prod(const std::vector<int>& s, size_t from, size_t to) {
    int64_t p = 1;
    for (size_t i = from; i < to; ++i) p *= s[i];
    return p;
}

bool is_suffix(const std::vector<int>& small, const std::vector<int>& big) {
    if (small.size() > big.size()) return false;
    for (size_t i = 0; i < small.size(); ++i)
        if (small[small.size() - 1 - i] != big[big.size() - 1 - i]) return false;
    return true;
}

int norm_axis(int axis, int ndim) {
    int ax = axis < 0 ? axis + ndim : axis;
    if (ax < 0 || ax >= ndim) throw ShapeError("axis out of range");
    return ax;
}

// Softmax along one axis of a dense row-major tensor: lanes have fixed
// stride, each lane is handled by a single thread.
void softmax_lanes(const double* x, double* y, int64_t outer, int64_t len, int64_t inner) {
    const int64_t lanes = outer * inner;
    const bool par = kernels::parallel_enabled() && lanes >= 2;
#pragma omp parallel for schedule(static) if (par)
    for (int64_t lane = 0; lane < lanes; ++lane) {
        const int64_t o = lane / inner, i = lane % inner;
        const double* xb = x + o * len * inner + i;
        double* yb = y + o * len * inner + i;
        double mx = xb[0];
        for (int64_t l = 1; l < len; ++l)
            if (xb[l * inner] > mx) mx = xb[l * inner];
        double sum = 0.0;
        for (int64_t l = 0; l < len; ++l) {
            const double e = std::exp(xb[l * inner] - mx);
            yb[l * inner] = e;
            sum += e;
        }
        const double inv = 1.0 / sum;
        for (int64_t l = 0; l < len; ++l) yb[l * inner] *= inv;
    }
}

// dx = y * (g - sum_lane(g * y))
void softmax_lanes_backward(const double* y, const double* g, double* dx, int64_t outer, int64_t len,
                            int64_t inner) {
    const int64_t lanes = outer * inner;
    const bool par = kernels::parallel_enabled() && lanes >= 2;
#pragma omp parallel for schedule(static) if (par)
    for (int64_t lane = 0; lane < lanes; ++lane) {
        const int64_t o = lane / inner, i = lane % inner;
        const double* yb = y + o * len * inner + i;
        const double* gb = g + o * len * inner + i;
        double* db = dx + o * len * inner + i;
        double dot = 0.0;
        for (int64_t l = 0; l < len; ++l) dot += gb[l * inner] * yb[l * inner];
        for (int64_t l = 0; l < len; ++l) db[l * inner] += yb[l * inner] * (gb[l * inner] - dot);
    }
}

}  // namespace

int Tape::push(Node n) {
    n.value.round_to_dtype();
    n.value.check_finite("tape op");
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

int Tape::leaf(Tensor v, bool requires_grad) {
    Node n;
    n.op = Op::Leaf;
    n.needs_grad = requires_grad;
    n.value = std::move(v);
    return push(std::move(n));
}

int Tape::add(int a, int b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.dtype() != tb.dtype()) throw ContractError("add: dtype mismatch");
    if (!is_suffix(tb.shape(), ta.shape())) throw ShapeError("add: shapes not broadcastable");
    Node n;
    n.op = Op::Add;
    n.a = a;
    n.b = b;
    n.needs_grad = node(a).needs_grad || node(b).needs_grad;
    n.value = Tensor(ta.shape(), ta.dtype());
    const int64_t nb = tb.numel();
    if (nb == ta.numel()) {
        kernels::add(ta.data(), tb.data(), n.value.data(), ta.numel());
    } else {
        const double* pa = ta.data();
        const double* pb = tb.data();
        double* py = n.value.data();
        for (int64_t i = 0; i < ta.numel(); ++i) py[i] = pa[i] + pb[i % nb];
    }
    return push(std::move(n));
}

int Tape::sub(int a, int b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.dtype() != tb.dtype()) throw ContractError("sub: dtype mismatch");
    if (!is_suffix(tb.shape(), ta.shape())) throw ShapeError("sub: shapes not broadcastable");
    Node n;
    n.op = Op::Sub;
    n.a = a;
    n.b = b;
    n.needs_grad = node(a).needs_grad || node(b).needs_grad;
    n.value = Tensor(ta.shape(), ta.dtype());
    const int64_t nb = tb.numel();
    if (nb == ta.numel()) {
        kernels::sub(ta.data(), tb.data(), n.value.data(), ta.numel());
    } else {
        const double* pa = ta.data();
        const double* pb = tb.data();
        double* py = n.value.data();
        for (int64_t i = 0; i < ta.numel(); ++i) py[i] = pa[i] - pb[i % nb];
    }
    return push(std::move(n));
}

int Tape::mul(int a, int b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.dtype() != tb.dtype()) throw ContractError("mul: dtype mismatch");
    if (!Tensor::same_shape(ta, tb)) throw ShapeError("mul: shape mismatch");
    Node n;
    n.op = Op::Mul;
    n.a = a;
    n.b = b;
    n.needs_grad = node(a).needs_grad || node(b).needs_grad;
    n.value = Tensor(ta.shape(), ta.dtype());
    kernels::mul(ta.data(), tb.data(), n.value.data(), ta.numel());
    return push(std::move(n));
}

int Tape::scale(int a, double s) {
    const Tensor& ta = value(a);
    Node n;
    n.op = Op::Scale;
    n.a = a;
    n.daux = s;
    n.needs_grad = node(a).needs_grad;
    n.value = Tensor(ta.shape(), ta.dtype());
    kernels::scale(ta.data(), s, n.value.data(), ta.numel());
    return push(std::move(n));
}

int Tape::matmul(int a, int b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.dtype() != tb.dtype()) throw ContractError("matmul: dtype mismatch");
    Node n;
    n.op = Op::Matmul;
    n.a = a;
    n.b = b;
    n.needs_grad = node(a).needs_grad || node(b).needs_grad;
    if (ta.ndim() == 2 && tb.ndim() == 2) {
        const int m = ta.dim(0), k = ta.dim(1), n2 = tb.dim(1);
        if (tb.dim(0) != k) throw ShapeError("matmul: inner dimensions disagree");
        n.value = Tensor({m, n2}, ta.dtype());
        kernels::gemm_nn(ta.data(), tb.data(), n.value.data(), m, k, n2);
    } else if (ta.ndim() == 3 && tb.ndim() == 2) {
        const int bsz = ta.dim(0), m = ta.dim(1), k = ta.dim(2), n2 = tb.dim(1);
        if (tb.dim(0) != k) throw ShapeError("matmul: inner dimensions disagree");
        n.value = Tensor({bsz, m, n2}, ta.dtype());
        kernels::gemm_nn(ta.data(), tb.data(), n.value.data(), bsz * m, k, n2);
    } else if (ta.ndim() == 3 && tb.ndim() == 3) {
        const int bsz = ta.dim(0), m = ta.dim(1), k = ta.dim(2), n2 = tb.dim(2);
        if (tb.dim(0) != bsz || tb.dim(1) != k) throw ShapeError("matmul: batched shapes disagree");
        n.value = Tensor({bsz, m, n2}, ta.dtype());
        for (int s = 0; s < bsz; ++s)
            kernels::gemm_nn(ta.data() + static_cast<int64_t>(s) * m * k,
                             tb.data() + static_cast<int64_t>(s) * k * n2,
                             n.value.data() + static_cast<int64_t>(s) * m * n2, m, k, n2);
    } else {
        throw ShapeError("matmul: unsupported ranks");
    }
    return push(std::move(n));
}

int Tape::transpose_last2(int a) {
    const Tensor& ta = value(a);
    if (ta.ndim() < 2) throw ShapeError("transpose_last2: rank < 2");
    std::vector<int> shape = ta.shape();
    const int r = ta.dim(-2), c = ta.dim(-1);
    std::swap(shape[shape.size() - 2], shape[shape.size() - 1]);
    Node n;
    n.op = Op::TransposeLast2;
    n.a = a;
    n.needs_grad = node(a).needs_grad;
    n.value = Tensor(shape, ta.dtype());
    const int64_t mats = ta.numel() / (static_cast<int64_t>(r) * c);
    const double* px = ta.data();
    double* py = n.value.data();
    for (int64_t s = 0; s < mats; ++s) {
        const double* xs = px + s * r * c;
        double* ys = py + s * r * c;
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) ys[static_cast<int64_t>(j) * r + i] = xs[static_cast<int64_t>(i) * c + j];
    }
    return push(std::move(n));
}

int Tape::reshape(int a, std::vector<int> shape) {
    const Tensor& ta = value(a);
    Node n;
    n.op = Op::Reshape;
    n.a = a;
    n.needs_grad = node(a).needs_grad;
    n.in_shape = ta.shape();
    n.value = ta.reshaped(std::move(shape));
    return push(std::move(n));
}

int Tape::relu(int a) {
    const Tensor& ta = value(a);
    Node n;
    n.op = Op::Relu;
    n.a = a;
    n.needs_grad = node(a).needs_grad;
    n.value = Tensor(ta.shape(), ta.dtype());
    kernels::relu(ta.data(), n.value.data(), ta.numel());
    return push(std::move(n));
}

int Tape::sigmoid(int a) {
    const Tensor& ta = value(a);
    Node n;
    n.op = Op::Sigmoid;
    n.a = a;
    n.needs_grad = node(a).needs_grad;
    n.value = Tensor(ta.shape(), ta.dtype());
    kernels::sigmoid(ta.data(), n.value.data(), ta.numel());
    return push(std::move(n));
}

int Tape::softmax_axis(int a, int axis) {
    const Tensor& ta = value(a);
    const int ax = norm_axis(axis, ta.ndim());
    Node n;
    n.op = Op::SoftmaxAxis;
    n.a = a;
    n.iaux0 = ax;
    n.needs_grad = node(a).needs_grad;
    n.value = Tensor(ta.shape(), ta.dtype());
    const auto& s = ta.shape();
    const int64_t outer = prod(s, 0, static_cast<size_t>(ax));
    const int64_t len = s[static_cast<size_t>(ax)];
    const int64_t inner = prod(s, static_cast<size_t>(ax) + 1, s.size());
    if (inner == 1)
        kernels::softmax_rows(ta.data(), n.value.data(), outer, len);
    else
        softmax_lanes(ta.data(), n.value.data(), outer, len, inner);
    return push(std::move(n));
}

int Tape::layernorm(int x, int gain, int bias, double eps) {
    const Tensor& tx = value(x);
    const Tensor& tg = value(gain);
    const Tensor& tb = value(bias);
    const int cols = tx.dim(-1);
    if (tg.numel() != cols || tb.numel() != cols) throw ShapeError("layernorm: gain/bias length mismatch");
    const int64_t rows = tx.numel() / cols;
    Node n;
    n.op = Op::LayerNorm;
    n.a = x;
    n.b = gain;
    n.c = bias;
    n.daux = eps;
    n.needs_grad = node(x).needs_grad || node(gain).needs_grad || node(bias).needs_grad;
    n.value = Tensor(tx.shape(), tx.dtype());
    n.aux.resize(static_cast<size_t>(2 * rows));
    kernels::layernorm_rows(tx.data(), tg.data(), tb.data(), n.value.data(), n.aux.data(),
                            n.aux.data() + rows, rows, cols, eps);
    return push(std::move(n));
}

int Tape::sum_axis(int a, int axis) {
    const Tensor& ta = value(a);
    const int ax = norm_axis(axis, ta.ndim());
    if (ta.ndim() == 1) throw ShapeError("sum_axis: rank-1 tensor, use sum_all");
    std::vector<int> shape = ta.shape();
    shape.erase(shape.begin() + ax);
    Node n;
    n.op = Op::SumAxis;
    n.a = a;
    n.iaux0 = ax;
    n.needs_grad = node(a).needs_grad;
    n.value = Tensor(shape, ta.dtype());
    const auto& s = ta.shape();
    const int64_t outer = prod(s, 0, static_cast<size_t>(ax));
    const int64_t len = s[static_cast<size_t>(ax)];
    const int64_t inner = prod(s, static_cast<size_t>(ax) + 1, s.size());
    const double* px = ta.data();
    double* py = n.value.data();
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t i = 0; i < inner; ++i) {
            double acc = 0.0;
            for (int64_t l = 0; l < len; ++l) acc += px[o * len * inner + l * inner + i];
            py[o * inner + i] = acc;
        }
    return push(std::move(n));
}

int Tape::mean_axis(int a, int axis) {
    const int ax = norm_axis(axis, value(a).ndim());
    const int len = value(a).shape()[static_cast<size_t>(ax)];
    return scale(sum_axis(a, ax), 1.0 / len);
}

int Tape::sum_all(int a) {
    const Tensor& ta = value(a);
    Node n;
    n.op = Op::SumAll;
    n.a = a;
    n.needs_grad = node(a).needs_grad;
    double acc = 0.0;
    const double* px = ta.data();
    for (int64_t i = 0; i < ta.numel(); ++i) acc += px[i];
    n.value = Tensor::from({1}, {acc}, ta.dtype());
    return push(std::move(n));
}

int Tape::slice_last(int a, int offset, int len) {
    const Tensor& ta = value(a);
    const int last = ta.dim(-1);
    if (offset < 0 || len <= 0 || offset + len > last) throw ShapeError("slice_last: range out of bounds");
    std::vector<int> shape = ta.shape();
    shape.back() = len;
    Node n;
    n.op = Op::SliceLast;
    n.a = a;
    n.iaux0 = offset;
    n.iaux1 = len;
    n.needs_grad = node(a).needs_grad;
    n.value = Tensor(shape, ta.dtype());
    const int64_t rows = ta.numel() / last;
    const double* px = ta.data();
    double* py = n.value.data();
    for (int64_t r = 0; r < rows; ++r)
        std::memcpy(py + r * len, px + r * last + offset, static_cast<size_t>(len) * sizeof(double));
    return push(std::move(n));
}

int Tape::concat_last(int a, int b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.dtype() != tb.dtype()) throw ContractError("concat_last: dtype mismatch");
    if (ta.ndim() != tb.ndim()) throw ShapeError("concat_last: rank mismatch");
    for (int i = 0; i + 1 < ta.ndim(); ++i)
        if (ta.dim(i) != tb.dim(i)) throw ShapeError("concat_last: leading dims differ");
    const int wa = ta.dim(-1), wb = tb.dim(-1);
    std::vector<int> shape = ta.shape();
    shape.back() = wa + wb;
    Node n;
    n.op = Op::ConcatLast;
    n.a = a;
    n.b = b;
    n.iaux0 = wa;
    n.iaux1 = wb;
    n.needs_grad = node(a).needs_grad || node(b).needs_grad;
    n.value = Tensor(shape, ta.dtype());
    const int64_t rows = ta.numel() / wa;
    const double* pa = ta.data();
    const double* pb = tb.data();
    double* py = n.value.data();
    for (int64_t r = 0; r < rows; ++r) {
        std::memcpy(py + r * (wa + wb), pa + r * wa, static_cast<size_t>(wa) * sizeof(double));
        std::memcpy(py + r * (wa + wb) + wa, pb + r * wb, static_cast<size_t>(wb) * sizeof(double));
    }
    return push(std::move(n));
}

int Tape::extract_patches(int a, int patch) {
    const Tensor& ta = value(a);
    if (ta.ndim() != 4) throw ShapeError("extract_patches: expected [B,H,W,C]");
    const int B = ta.dim(0), H = ta.dim(1), W = ta.dim(2), C = ta.dim(3);
    if (patch <= 0 || H % patch != 0 || W % patch != 0)
        throw ShapeError("extract_patches: patch size does not divide image");
    const int gh = H / patch, gw = W / patch;
    Node n;
    n.op = Op::ExtractPatches;
    n.a = a;
    n.iaux0 = patch;
    n.in_shape = ta.shape();
    n.needs_grad = node(a).needs_grad;
    n.value = Tensor({B, gh * gw, patch * patch * C}, ta.dtype());
    const double* px = ta.data();
    double* py = n.value.data();
    const int64_t pc = static_cast<int64_t>(patch) * patch * C;
    for (int s = 0; s < B; ++s)
        for (int ph = 0; ph < gh; ++ph)
            for (int pw = 0; pw < gw; ++pw) {
                double* dst = py + ((static_cast<int64_t>(s) * gh * gw) + ph * gw + pw) * pc;
                for (int dy = 0; dy < patch; ++dy)
                    for (int dx = 0; dx < patch; ++dx)
                        for (int ch = 0; ch < C; ++ch)
                            *dst++ = px[(((static_cast<int64_t>(s) * H) + ph * patch + dy) * W +
                                         pw * patch + dx) * C + ch];
            }
    return push(std::move(n));
}

int Tape::cross_entropy_logits(int a, std::vector<int> labels) {
    const Tensor& ta = value(a);
    if (ta.ndim() != 2) throw ShapeError("cross_entropy_logits: expected [B,K]");
    const int B = ta.dim(0), K = ta.dim(1);
    if (static_cast<int>(labels.size()) != B) throw ContractError("cross_entropy_logits: label count mismatch");
    for (int y : labels)
        if (y < 0 || y >= K) throw ContractError("cross_entropy_logits: label out of range");
    Node n;
    n.op = Op::CrossEntropyLogits;
    n.a = a;
    n.needs_grad = node(a).needs_grad;
    n.labels = std::move(labels);
    n.aux.resize(static_cast<size_t>(B) * K);  // softmax probs for backward
    const double* px = ta.data();
    double loss = 0.0;
    for (int s = 0; s < B; ++s) {
        const double* row = px + static_cast<int64_t>(s) * K;
        double mx = row[0];
        for (int j = 1; j < K; ++j)
            if (row[j] > mx) mx = row[j];
        double sum = 0.0;
        for (int j = 0; j < K; ++j) {
            const double e = std::exp(row[j] - mx);
            n.aux[static_cast<size_t>(s) * K + j] = e;
            sum += e;
        }
        const double inv = 1.0 / sum;
        for (int j = 0; j < K; ++j) n.aux[static_cast<size_t>(s) * K + j] *= inv;
        loss -= row[n.labels[static_cast<size_t>(s)]] - mx - std::log(sum);
    }
    n.value = Tensor::from({1}, {loss / B}, ta.dtype());
    return push(std::move(n));
}

// --- backward -----------------------------------------------------------

namespace {

// Adds src into dst (allocating on first touch), rounding per dtype so f32
// gradient accumulation is exact float arithmetic in a fixed order.
void accumulate(Tensor& dst, const Tensor& src) {
    if (dst.numel() == 0) {
        dst = src;
        dst.round_to_dtype();
        return;
    }
    kernels::add(dst.data(), src.data(), dst.data(), dst.numel());
    dst.round_to_dtype();
}

}  // namespace

std::vector<Tensor> Tape::backward(int loss_id) const {
    const Node& loss = node(loss_id);
    if (loss.value.numel() != 1) throw ContractError("backward: loss must be a scalar");
    std::vector<Tensor> grads(nodes_.size());
    grads[static_cast<size_t>(loss_id)] = Tensor::full({1}, 1.0, loss.value.dtype());

    auto want = [&](int id) { return id >= 0 && node(id).needs_grad; };

    for (int id = loss_id; id >= 0; --id) {
        const Node& n = node(id);
        if (!n.needs_grad) continue;
        Tensor& g = grads[static_cast<size_t>(id)];
        if (g.numel() == 0) continue;  // not on a path to the loss
        g.round_to_dtype();
        const Dtype dt = n.value.dtype();
        switch (n.op) {
            case Op::Leaf:
                break;
            case Op::Add:
            case Op::Sub: {
                const double sign = n.op == Op::Add ? 1.0 : -1.0;
                if (want(n.a)) accumulate(grads[static_cast<size_t>(n.a)], g);
                if (want(n.b)) {
                    const Tensor& tb = value(n.b);
                    Tensor gb(tb.shape(), dt);
                    const int64_t nb = tb.numel();
                    const double* pg = g.data();
                    double* pb = gb.data();
                    for (int64_t i = 0; i < g.numel(); ++i) pb[i % nb] += sign * pg[i];
                    gb.round_to_dtype();
                    accumulate(grads[static_cast<size_t>(n.b)], gb);
                }
                break;
            }
            case Op::Mul: {
                if (want(n.a)) {
                    Tensor ga(n.value.shape(), dt);
                    kernels::mul(g.data(), value(n.b).data(), ga.data(), g.numel());
                    accumulate(grads[static_cast<size_t>(n.a)], ga);
                }
                if (want(n.b)) {
                    Tensor gb(n.value.shape(), dt);
                    kernels::mul(g.data(), value(n.a).data(), gb.data(), g.numel());
                    accumulate(grads[static_cast<size_t>(n.b)], gb);
                }
                break;
            }
            case Op::Scale: {
                if (want(n.a)) {
                    Tensor ga(n.value.shape(), dt);
                    kernels::scale(g.data(), n.daux, ga.data(), g.numel());
                    accumulate(grads[static_cast<size_t>(n.a)], ga);
                }
                break;
            }
            case Op::Matmul: {
                const Tensor& ta = value(n.a);
                const Tensor& tb = value(n.b);
                if (ta.ndim() == 2) {
                    const int m = ta.dim(0), k = ta.dim(1), n2 = tb.dim(1);
                    if (want(n.a)) {
                        Tensor ga(ta.shape(), dt);
                        kernels::gemm_nt(g.data(), tb.data(), ga.data(), m, n2, k);
                        ga.round_to_dtype();
                        accumulate(grads[static_cast<size_t>(n.a)], ga);
                    }
                    if (want(n.b)) {
                        Tensor gb(tb.shape(), dt);
                        kernels::gemm_tn(ta.data(), g.data(), gb.data(), k, m, n2);
                        gb.round_to_dtype();
                        accumulate(grads[static_cast<size_t>(n.b)], gb);
                    }
                } else if (tb.ndim() == 2) {
                    const int bsz = ta.dim(0), m = ta.dim(1), k = ta.dim(2), n2 = tb.dim(1);
                    if (want(n.a)) {
                        Tensor ga(ta.shape(), dt);
                        kernels::gemm_nt(g.data(), tb.data(), ga.data(), bsz * m, n2, k);
                        ga.round_to_dtype();
                        accumulate(grads[static_cast<size_t>(n.a)], ga);
                    }
                    if (want(n.b)) {
                        Tensor gb(tb.shape(), dt);
                        kernels::gemm_tn(ta.data(), g.data(), gb.data(), k, bsz * m, n2);
                        gb.round_to_dtype();
                        accumulate(grads[static_cast<size_t>(n.b)], gb);
                    }
                } else {
                    const int bsz = ta.dim(0), m = ta.dim(1), k = ta.dim(2), n2 = tb.dim(2);
                    if (want(n.a)) {
                        Tensor ga(ta.shape(), dt);
                        for (int s = 0; s < bsz; ++s)
                            kernels::gemm_nt(g.data() + static_cast<int64_t>(s) * m * n2,
                                             tb.data() + static_cast<int64_t>(s) * k * n2,
                                             ga.data() + static_cast<int64_t>(s) * m * k, m, n2, k);
                        ga.round_to_dtype();
                        accumulate(grads[static_cast<size_t>(n.a)], ga);
                    }
                    if (want(n.b)) {
                        Tensor gb(tb.shape(), dt);
                        for (int s = 0; s < bsz; ++s)
                            kernels::gemm_tn(ta.data() + static_cast<int64_t>(s) * m * k,
                                             g.data() + static_cast<int64_t>(s) * m * n2,
                                             gb.data() + static_cast<int64_t>(s) * k * n2, k, m, n2);
                        gb.round_to_dtype();
                        accumulate(grads[static_cast<size_t>(n.b)], gb);
                    }
                }
                break;
            }
            case Op::TransposeLast2: {
                if (want(n.a)) {
                    const Tensor& ta = value(n.a);
                    Tensor ga(ta.shape(), dt);
                    const int r = n.value.dim(-2), c = n.value.dim(-1);  // g's geometry
                    const int64_t mats = g.numel() / (static_cast<int64_t>(r) * c);
                    const double* pg = g.data();
                    double* pa = ga.data();
                    for (int64_t s = 0; s < mats; ++s)
                        for (int i = 0; i < r; ++i)
                            for (int j = 0; j < c; ++j)
                                pa[s * r * c + static_cast<int64_t>(j) * r + i] =
                                    pg[s * r * c + static_cast<int64_t>(i) * c + j];
                    accumulate(grads[static_cast<size_t>(n.a)], ga);
                }
                break;
            }
            case Op::Reshape: {
                if (want(n.a)) accumulate(grads[static_cast<size_t>(n.a)], g.reshaped(n.in_shape));
                break;
            }
            case Op::Relu: {
                if (want(n.a)) {
                    const Tensor& ta = value(n.a);
                    Tensor ga(ta.shape(), dt);
                    const double* px = ta.data();
                    const double* pg = g.data();
                    double* pa = ga.data();
                    for (int64_t i = 0; i < ta.numel(); ++i) pa[i] = px[i] > 0.0 ? pg[i] : 0.0;
                    accumulate(grads[static_cast<size_t>(n.a)], ga);
                }
                break;
            }
            case Op::Sigmoid: {
                if (want(n.a)) {
                    Tensor ga(n.value.shape(), dt);
                    const double* py = n.value.data();
                    const double* pg = g.data();
                    double* pa = ga.data();
                    for (int64_t i = 0; i < n.value.numel(); ++i) pa[i] = pg[i] * py[i] * (1.0 - py[i]);
                    ga.round_to_dtype();
                    accumulate(grads[static_cast<size_t>(n.a)], ga);
                }
                break;
            }
            case Op::SoftmaxAxis: {
                if (want(n.a)) {
                    const auto& s = n.value.shape();
                    const int ax = n.iaux0;
                    const int64_t outer = prod(s, 0, static_cast<size_t>(ax));
                    const int64_t len = s[static_cast<size_t>(ax)];
                    const int64_t inner = prod(s, static_cast<size_t>(ax) + 1, s.size());
                    Tensor ga(n.value.shape(), dt);
                    softmax_lanes_backward(n.value.data(), g.data(), ga.data(), outer, len, inner);
                    ga.round_to_dtype();
                    accumulate(grads[static_cast<size_t>(n.a)], ga);
                }
                break;
            }
            case Op::LayerNorm: {
                const Tensor& tx = value(n.a);
                const Tensor& tg = value(n.b);
                const int cols = tx.dim(-1);
                const int64_t rows = tx.numel() / cols;
                const double* mean = n.aux.data();
                const double* rstd = n.aux.data() + rows;
                const double* px = tx.data();
                const double* pgain = tg.data();
                const double* pg = g.data();
                if (want(n.a)) {
                    Tensor gx(tx.shape(), dt);
                    double* pd = gx.data();
                    for (int64_t r = 0; r < rows; ++r) {
                        const double* xr = px + r * cols;
                        const double* gr = pg + r * cols;
                        double* dr = pd + r * cols;
                        double m1 = 0.0, m2 = 0.0;
                        for (int j = 0; j < cols; ++j) {
                            const double xhat = (xr[j] - mean[r]) * rstd[r];
                            const double gg = gr[j] * pgain[j];
                            m1 += gg;
                            m2 += gg * xhat;
                        }
                        m1 /= cols;
                        m2 /= cols;
                        for (int j = 0; j < cols; ++j) {
                            const double xhat = (xr[j] - mean[r]) * rstd[r];
                            const double gg = gr[j] * pgain[j];
                            dr[j] = rstd[r] * (gg - m1 - xhat * m2);
                        }
                    }
                    gx.round_to_dtype();
                    accumulate(grads[static_cast<size_t>(n.a)], gx);
                }
                if (want(n.b)) {
                    Tensor ggain(tg.shape(), dt);
                    double* pd = ggain.data();
                    for (int64_t r = 0; r < rows; ++r)
                        for (int j = 0; j < cols; ++j)
                            pd[j] += pg[r * cols + j] * (px[r * cols + j] - mean[r]) * rstd[r];
                    ggain.round_to_dtype();
                    accumulate(grads[static_cast<size_t>(n.b)], ggain);
                }
                if (want(n.c)) {
                    Tensor gbias(value(n.c).shape(), dt);
                    double* pd = gbias.data();
                    for (int64_t r = 0; r < rows; ++r)
                        for (int j = 0; j < cols; ++j) pd[j] += pg[r * cols + j];
                    gbias.round_to_dtype();
                    accumulate(grads[static_cast<size_t>(n.c)], gbias);
                }
                break;
            }
            case Op::SumAxis: {
                if (want(n.a)) {
                    const Tensor& ta = value(n.a);
                    const auto& s = ta.shape();
                    const int ax = n.iaux0;
                    const int64_t outer = prod(s, 0, static_cast<size_t>(ax));
                    const int64_t len = s[static_cast<size_t>(ax)];
                    const int64_t inner = prod(s, static_cast<size_t>(ax) + 1, s.size());
                    Tensor ga(ta.shape(), dt);
                    const double* pg = g.data();
                    double* pa = ga.data();
                    for (int64_t o = 0; o < outer; ++o)
                        for (int64_t l = 0; l < len; ++l)
                            for (int64_t i = 0; i < inner; ++i)
                                pa[o * len * inner + l * inner + i] = pg[o * inner + i];
                    accumulate(grads[static_cast<size_t>(n.a)], ga);
                }
                break;
            }
            case Op::SumAll: {
                if (want(n.a)) {
                    accumulate(grads[static_cast<size_t>(n.a)],
                               Tensor::full(value(n.a).shape(), g[0], dt));
                }
                break;
            }
            case Op::SliceLast: {
                if (want(n.a)) {
                    const Tensor& ta = value(n.a);
                    const int last = ta.dim(-1);
                    Tensor ga(ta.shape(), dt);
                    const int64_t rows = ta.numel() / last;
                    const double* pg = g.data();
                    double* pa = ga.data();
                    for (int64_t r = 0; r < rows; ++r)
                        for (int j = 0; j < n.iaux1; ++j) pa[r * last + n.iaux0 + j] = pg[r * n.iaux1 + j];
                    accumulate(grads[static_cast<size_t>(n.a)], ga);
                }
                break;
            }
            case Op::ConcatLast: {
                const int wa = n.iaux0, wb = n.iaux1;
                const int64_t rows = n.value.numel() / (wa + wb);
                const double* pg = g.data();
                if (want(n.a)) {
                    Tensor ga(value(n.a).shape(), dt);
                    double* pa = ga.data();
                    for (int64_t r = 0; r < rows; ++r)
                        std::memcpy(pa + r * wa, pg + r * (wa + wb), static_cast<size_t>(wa) * sizeof(double));
                    accumulate(grads[static_cast<size_t>(n.a)], ga);
                }
                if (want(n.b)) {
                    Tensor gb(value(n.b).shape(), dt);
                    double* pb = gb.data();
                    for (int64_t r = 0; r < rows; ++r)
                        std::memcpy(pb + r * wb, pg + r * (wa + wb) + wa, static_cast<size_t>(wb) * sizeof(double));
                    accumulate(grads[static_cast<size_t>(n.b)], gb);
                }
                break;
            }
            case Op::ExtractPatches: {
                if (want(n.a)) {
                    const int B = n.in_shape[0], H = n.in_shape[1], W = n.in_shape[2], C = n.in_shape[3];
                    const int patch = n.iaux0;
                    const int gh = H / patch, gw = W / patch;
                    Tensor ga(n.in_shape, dt);
                    const double* pg = g.data();
                    double* pa = ga.data();
                    const int64_t pc = static_cast<int64_t>(patch) * patch * C;
                    for (int s = 0; s < B; ++s)
                        for (int ph = 0; ph < gh; ++ph)
                            for (int pw = 0; pw < gw; ++pw) {
                                const double* src = pg + ((static_cast<int64_t>(s) * gh * gw) + ph * gw + pw) * pc;
                                for (int dy = 0; dy < patch; ++dy)
                                    for (int dx = 0; dx < patch; ++dx)
                                        for (int ch = 0; ch < C; ++ch)
                                            pa[(((static_cast<int64_t>(s) * H) + ph * patch + dy) * W +
                                                pw * patch + dx) * C + ch] = *src++;
                            }
                    accumulate(grads[static_cast<size_t>(n.a)], ga);
                }
                break;
            }
            case Op::CrossEntropyLogits: {
                if (want(n.a)) {
                    const Tensor& ta = value(n.a);
                    const int B = ta.dim(0), K = ta.dim(1);
                    Tensor ga(ta.shape(), dt);
                    const double gs = g[0] / B;
                    double* pa = ga.data();
                    for (int s = 0; s < B; ++s)
                        for (int j = 0; j < K; ++j) {
                            double v = n.aux[static_cast<size_t>(s) * K + j];
                            if (j == n.labels[static_cast<size_t>(s)]) v -= 1.0;
                            pa[static_cast<int64_t>(s) * K + j] = gs * v;
                        }
                    ga.round_to_dtype();
                    accumulate(grads[static_cast<size_t>(n.a)], ga);
                }
                break;
            }
        }
    }
    return grads;
}

}  // namespace ltm
