#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace ratm {

enum class Op {
    Leaf,
    Matmul,
    Add,
    Sub,
    Mul,
    ScalarMul,
    Relu,
    Abs,
    Exp,
    Negate,
    Square,
    Reciprocal,
    Sum,
    Mean,
    Transpose,
    Slice,
    Concat,
    BiasAdd,
    Conv2d,
    MaxPool2x2,
    SoftmaxRows,
    DropoutMask,
    Reshape,
};

inline const char* op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::Matmul: return "matmul";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::ScalarMul: return "scalar-mul";
        case Op::Relu: return "relu";
        case Op::Abs: return "abs";
        case Op::Exp: return "exp";
        case Op::Negate: return "negate";
        case Op::Square: return "square";
        case Op::Reciprocal: return "reciprocal";
        case Op::Sum: return "sum";
        case Op::Mean: return "mean";
        case Op::Transpose: return "transpose";
        case Op::Slice: return "slice";
        case Op::Concat: return "concat";
        case Op::BiasAdd: return "broadcast-add-bias";
        case Op::Conv2d: return "conv2d";
        case Op::MaxPool2x2: return "maxpool2x2";
        case Op::SoftmaxRows: return "softmax-rows";
        case Op::DropoutMask: return "dropout-mask-apply";
        case Op::Reshape: return "reshape";
    }
    return "?";
}

struct GraphError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// One record on the tape. Values are computed eagerly at insertion.
struct Node {
    Op op = Op::Leaf;
    std::vector<int> inputs;
    Tensor value;
    bool needs_grad = false;
    // op-specific attributes
    double scalar_attr = 0.0;                 // ScalarMul
    std::vector<std::size_t> offsets, sizes;  // Slice
    Tensor mask;                              // DropoutMask
    std::vector<std::size_t> argmax;          // MaxPool2x2 (flat input index per output)
};

class Graph {
public:
    int add_leaf(Tensor t, bool requires_grad = false) {
        t.requires_grad = requires_grad;
        Node n;
        n.op = Op::Leaf;
        n.value = std::move(t);
        n.needs_grad = requires_grad;
        return push(std::move(n), /*check_finite=*/true);
    }

    int constant(Tensor t) { return add_leaf(std::move(t), false); }
    int constant(double v) { return add_leaf(Tensor::scalar_of(v), false); }

    const Tensor& value(int id) const { return nodes_.at(id).value; }
    std::size_t size() const { return nodes_.size(); }

    // ---- elementwise and binary ops ------------------------------------

    int add(int a, int b) { return binary(Op::Add, a, b); }
    int sub(int a, int b) { return binary(Op::Sub, a, b); }
    int mul(int a, int b) { return binary(Op::Mul, a, b); }

    int scalar_mul(double c, int a) {
        Node n = make(Op::ScalarMul, {a});
        n.scalar_attr = c;
        n.value = val(a);
        for (double& v : n.value.data) v *= c;
        return push(std::move(n));
    }

    int relu(int a) { return unary(Op::Relu, a, [](double v) { return v > 0 ? v : 0.0; }); }
    int abs(int a) { return unary(Op::Abs, a, [](double v) { return std::fabs(v); }); }
    int exp(int a) { return unary(Op::Exp, a, [](double v) { return std::exp(v); }); }
    int negate(int a) { return unary(Op::Negate, a, [](double v) { return -v; }); }
    int square(int a) { return unary(Op::Square, a, [](double v) { return v * v; }); }
    int reciprocal(int a) { return unary(Op::Reciprocal, a, [](double v) { return 1.0 / v; }); }

    // ---- reductions -----------------------------------------------------

    int sum(int a) {
        Node n = make(Op::Sum, {a});
        double s = 0.0;
        for (double v : val(a).data) s += v;
        n.value = Tensor::scalar_of(s);
        return push(std::move(n));
    }

    int mean(int a) {
        Node n = make(Op::Mean, {a});
        double s = 0.0;
        for (double v : val(a).data) s += v;
        n.value = Tensor::scalar_of(s / static_cast<double>(val(a).numel()));
        return push(std::move(n));
    }

    // ---- structural ops --------------------------------------------------

    int transpose(int a) {
        const Tensor& x = val(a);
        if (x.rank() != 2) fail(Op::Transpose, "expects rank-2, got " + Tensor::shape_str(x.shape));
        Node n = make(Op::Transpose, {a});
        n.value = Tensor({x.cols(), x.rows()});
        for (std::size_t i = 0; i < x.rows(); ++i)
            for (std::size_t j = 0; j < x.cols(); ++j) n.value.at(j, i) = x.at(i, j);
        return push(std::move(n));
    }

    int reshape(int a, std::vector<std::size_t> shape) {
        const Tensor& x = val(a);
        if (Tensor::numel_of(shape) != x.numel())
            fail(Op::Reshape, Tensor::shape_str(x.shape) + " -> " + Tensor::shape_str(shape));
        Node n = make(Op::Reshape, {a});
        n.value = Tensor(std::move(shape), x.data);
        return push(std::move(n));
    }

    int slice(int a, std::vector<std::size_t> offsets, std::vector<std::size_t> sizes) {
        const Tensor& x = val(a);
        if (offsets.size() != x.rank() || sizes.size() != x.rank())
            fail(Op::Slice, "rank mismatch for " + Tensor::shape_str(x.shape));
        for (std::size_t d = 0; d < x.rank(); ++d)
            if (offsets[d] + sizes[d] > x.shape[d])
                fail(Op::Slice, "out of bounds in dim " + std::to_string(d) + " of " +
                                    Tensor::shape_str(x.shape));
        Node n = make(Op::Slice, {a});
        n.offsets = offsets;
        n.sizes = sizes;
        n.value = Tensor(sizes);
        copy_region(x, n.value, offsets, sizes, /*scatter=*/false);
        return push(std::move(n));
    }

    // concat along axis 0; all other dims must match
    int concat(const std::vector<int>& parts) {
        if (parts.empty()) fail(Op::Concat, "no inputs");
        const Tensor& first = val(parts[0]);
        std::vector<std::size_t> shape = first.shape;
        std::size_t total = first.shape[0];
        for (std::size_t k = 1; k < parts.size(); ++k) {
            const Tensor& t = val(parts[k]);
            if (t.rank() != first.rank())
                fail(Op::Concat, "rank mismatch");
            for (std::size_t d = 1; d < t.rank(); ++d)
                if (t.shape[d] != first.shape[d]) fail(Op::Concat, "trailing dim mismatch");
            total += t.shape[0];
        }
        shape[0] = total;
        Node n = make(Op::Concat, parts);
        n.value = Tensor(shape);
        std::size_t pos = 0;
        for (int p : parts) {
            const Tensor& t = val(p);
            std::copy(t.data.begin(), t.data.end(), n.value.data.begin() + pos);
            pos += t.numel();
        }
        return push(std::move(n));
    }

    // x (m,n) + b (n) rowwise, or x (C,H,W) + b (C) channelwise
    int bias_add(int a, int b) {
        const Tensor& x = val(a);
        const Tensor& bias = val(b);
        bool row_mode = x.rank() == 2 && bias.rank() == 1 && bias.shape[0] == x.cols();
        bool chan_mode = x.rank() == 3 && bias.rank() == 1 && bias.shape[0] == x.shape[0];
        if (!row_mode && !chan_mode)
            fail(Op::BiasAdd, Tensor::shape_str(x.shape) + " + " + Tensor::shape_str(bias.shape));
        Node n = make(Op::BiasAdd, {a, b});
        n.value = x;
        if (row_mode) {
            for (std::size_t i = 0; i < x.rows(); ++i)
                for (std::size_t j = 0; j < x.cols(); ++j) n.value.at(i, j) += bias.data[j];
        } else {
            std::size_t hw = x.shape[1] * x.shape[2];
            for (std::size_t c = 0; c < x.shape[0]; ++c)
                for (std::size_t k = 0; k < hw; ++k) n.value.data[c * hw + k] += bias.data[c];
        }
        return push(std::move(n));
    }

    // ---- linear algebra ---------------------------------------------------

    // (m,k)x(k,n) -> (m,n);  (m,k)x(k) -> (m)
    int matmul(int a, int b) {
        const Tensor& A = val(a);
        const Tensor& B = val(b);
        if (A.rank() == 2 && B.rank() == 2 && A.cols() == B.rows()) {
            Node n = make(Op::Matmul, {a, b});
            n.value = Tensor({A.rows(), B.cols()});
            mm(A.data.data(), B.data.data(), n.value.data.data(), A.rows(), A.cols(), B.cols());
            return push(std::move(n));
        }
        if (A.rank() == 2 && B.rank() == 1 && A.cols() == B.shape[0]) {
            Node n = make(Op::Matmul, {a, b});
            n.value = Tensor({A.rows()});
            mm(A.data.data(), B.data.data(), n.value.data.data(), A.rows(), A.cols(), 1);
            return push(std::move(n));
        }
        fail(Op::Matmul, Tensor::shape_str(A.shape) + " x " + Tensor::shape_str(B.shape));
        return -1;
    }

    // input (Cin,H,W), weight (Cout,Cin,kh,kw), valid convolution, stride 1
    int conv2d(int a, int w) {
        const Tensor& x = val(a);
        const Tensor& W = val(w);
        if (x.rank() != 3 || W.rank() != 4 || W.shape[1] != x.shape[0] ||
            W.shape[2] > x.shape[1] || W.shape[3] > x.shape[2])
            fail(Op::Conv2d, Tensor::shape_str(x.shape) + " * " + Tensor::shape_str(W.shape));
        std::size_t cin = x.shape[0], H = x.shape[1], Wd = x.shape[2];
        std::size_t cout = W.shape[0], kh = W.shape[2], kw = W.shape[3];
        std::size_t oh = H - kh + 1, ow = Wd - kw + 1;
        Node n = make(Op::Conv2d, {a, w});
        n.value = Tensor({cout, oh, ow});
        for (std::size_t co = 0; co < cout; ++co)
            for (std::size_t ci = 0; ci < cin; ++ci)
                for (std::size_t u = 0; u < kh; ++u)
                    for (std::size_t v = 0; v < kw; ++v) {
                        double wv = W.data[((co * cin + ci) * kh + u) * kw + v];
                        const double* xin = &x.data[(ci * H + u) * Wd + v];
                        double* out = &n.value.data[co * oh * ow];
                        for (std::size_t y = 0; y < oh; ++y) {
                            const double* xr = xin + y * Wd;
                            double* orow = out + y * ow;
                            for (std::size_t q = 0; q < ow; ++q) orow[q] += wv * xr[q];
                        }
                    }
        return push(std::move(n));
    }

    int maxpool2x2(int a) {
        const Tensor& x = val(a);
        if (x.rank() != 3 || x.shape[1] % 2 || x.shape[2] % 2)
            fail(Op::MaxPool2x2, Tensor::shape_str(x.shape));
        std::size_t C = x.shape[0], H = x.shape[1], W = x.shape[2];
        Node n = make(Op::MaxPool2x2, {a});
        n.value = Tensor({C, H / 2, W / 2});
        n.argmax.resize(n.value.numel());
        std::size_t o = 0;
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t y = 0; y < H; y += 2)
                for (std::size_t xx = 0; xx < W; xx += 2) {
                    std::size_t base = (c * H + y) * W + xx;
                    std::size_t best = base;
                    double bv = x.data[base];
                    for (std::size_t dy = 0; dy < 2; ++dy)
                        for (std::size_t dx = 0; dx < 2; ++dx) {
                            std::size_t idx = base + dy * W + dx;
                            if (x.data[idx] > bv) {
                                bv = x.data[idx];
                                best = idx;
                            }
                        }
                    n.value.data[o] = bv;
                    n.argmax[o] = best;
                    ++o;
                }
        return push(std::move(n));
    }

    // (n) treated as one row; (m,n) rowwise. Numerically stabilized.
    int softmax_rows(int a) {
        const Tensor& x = val(a);
        if (x.rank() > 2) fail(Op::SoftmaxRows, Tensor::shape_str(x.shape));
        std::size_t m = x.rank() == 2 ? x.rows() : 1;
        std::size_t nn = x.rank() == 2 ? x.cols() : x.shape[0];
        Node n = make(Op::SoftmaxRows, {a});
        n.value = Tensor(x.shape);
        for (std::size_t i = 0; i < m; ++i) {
            const double* xi = &x.data[i * nn];
            double* yi = &n.value.data[i * nn];
            double mx = *std::max_element(xi, xi + nn);
            double s = 0.0;
            for (std::size_t j = 0; j < nn; ++j) s += (yi[j] = std::exp(xi[j] - mx));
            for (std::size_t j = 0; j < nn; ++j) yi[j] /= s;
        }
        return push(std::move(n));
    }

    // mask is pre-scaled (inverted dropout); value = x * mask, grad = g * mask
    int dropout_mask_apply(int a, Tensor mask) {
        const Tensor& x = val(a);
        if (!x.same_shape(mask))
            fail(Op::DropoutMask, Tensor::shape_str(x.shape) + " vs mask " +
                                      Tensor::shape_str(mask.shape));
        Node n = make(Op::DropoutMask, {a});
        n.value = x;
        for (std::size_t i = 0; i < x.numel(); ++i) n.value.data[i] *= mask.data[i];
        n.mask = std::move(mask);
        return push(std::move(n));
    }

    // ---- backward ----------------------------------------------------------

    void backward(int loss) {
        const Tensor& L = val(loss);
        if (!L.is_scalar())
            throw GraphError("backward: loss must be scalar, got " + Tensor::shape_str(L.shape));
        grads_.assign(nodes_.size(), Tensor());
        grads_[loss] = Tensor::scalar_of(1.0);
        for (int i = loss; i >= 0; --i) {
            if (grads_[i].data.empty() || !nodes_[i].needs_grad) continue;
            backprop_node(i);
        }
    }

    bool has_grad(int id) const {
        return id < static_cast<int>(grads_.size()) && !grads_[id].data.empty();
    }

    const Tensor& grad(int id) const {
        if (!has_grad(id)) throw GraphError("grad: node has no gradient");
        return grads_[id];
    }

private:
    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;

    const Tensor& val(int id) const { return nodes_.at(id).value; }

    [[noreturn]] static void fail(Op op, const std::string& what) {
        throw GraphError(std::string(op_name(op)) + ": " + what);
    }

    Node make(Op op, std::vector<int> inputs) {
        Node n;
        n.op = op;
        n.inputs = std::move(inputs);
        for (int i : n.inputs) n.needs_grad = n.needs_grad || nodes_.at(i).needs_grad;
        return n;
    }

    int push(Node n, bool check_finite = true) {
        if (check_finite && !n.value.all_finite())
            throw GraphError(std::string(op_name(n.op)) + ": non-finite output");
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size() - 1);
    }

    template <typename F>
    int unary(Op op, int a, F f) {
        Node n = make(op, {a});
        n.value = val(a);
        for (double& v : n.value.data) v = f(v);
        return push(std::move(n));
    }

    // equal shapes, or either side scalar (numel 1)
    int binary(Op op, int a, int b) {
        const Tensor& A = val(a);
        const Tensor& B = val(b);
        if (!A.same_shape(B) && !A.is_scalar() && !B.is_scalar())
            fail(op, Tensor::shape_str(A.shape) + " vs " + Tensor::shape_str(B.shape));
        Node n = make(op, {a, b});
        const Tensor& big = A.is_scalar() && !B.is_scalar() ? B : A;
        n.value = Tensor(big.shape);
        std::size_t sa = A.is_scalar() ? 0 : 1, sb = B.is_scalar() ? 0 : 1;
        for (std::size_t i = 0; i < n.value.numel(); ++i) {
            double x = A.data[i * sa], y = B.data[i * sb];
            n.value.data[i] = op == Op::Add ? x + y : op == Op::Sub ? x - y : x * y;
        }
        return push(std::move(n));
    }

    static void mm(const double* A, const double* B, double* C, std::size_t m, std::size_t k,
                   std::size_t n) {
        // C assumed zeroed; ikj order keeps the inner loop contiguous
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
                double a = A[i * k + p];
                const double* br = B + p * n;
                double* cr = C + i * n;
                for (std::size_t j = 0; j < n; ++j) cr[j] += a * br[j];
            }
    }

    // dst = region of src (scatter=false) or src scattered into region of dst (scatter=true)
    static void copy_region(const Tensor& full, Tensor& part, const std::vector<std::size_t>& off,
                            const std::vector<std::size_t>& sz, bool scatter,
                            Tensor* full_mut = nullptr) {
        std::size_t rank = full.rank();
        std::vector<std::size_t> idx(rank, 0);
        std::vector<std::size_t> stride(rank, 1);
        for (std::size_t d = rank; d-- > 1;) stride[d - 1] = stride[d] * full.shape[d];
        std::size_t n = part.numel();
        for (std::size_t flat = 0; flat < n; ++flat) {
            std::size_t src = 0;
            for (std::size_t d = 0; d < rank; ++d) src += (off[d] + idx[d]) * stride[d];
            if (scatter)
                full_mut->data[src] += part.data[flat];
            else
                part.data[flat] = full.data[src];
            for (std::size_t d = rank; d-- > 0;) {
                if (++idx[d] < sz[d]) break;
                idx[d] = 0;
            }
        }
    }

    Tensor& grad_buf(int id) {
        if (grads_[id].data.empty()) grads_[id] = Tensor::zeros(nodes_[id].value.shape);
        return grads_[id];
    }

    void accum_scalar_aware(int input, const Tensor& g, bool input_is_scalar) {
        Tensor& gi = grad_buf(input);
        if (input_is_scalar && g.numel() > 1) {
            double s = 0;
            for (double v : g.data) s += v;
            gi.data[0] += s;
        } else {
            for (std::size_t i = 0; i < g.numel(); ++i) gi.data[i] += g.data[i];
        }
    }

    void backprop_node(int id) {
        Node& n = nodes_[id];
        const Tensor& g = grads_[id];
        auto in_needs = [&](std::size_t k) { return nodes_[n.inputs[k]].needs_grad; };
        switch (n.op) {
            case Op::Leaf:
                break;
            case Op::Add:
            case Op::Sub: {
                const Tensor& A = val(n.inputs[0]);
                const Tensor& B = val(n.inputs[1]);
                if (in_needs(0)) accum_scalar_aware(n.inputs[0], g, A.is_scalar() && !B.is_scalar());
                if (in_needs(1)) {
                    if (n.op == Op::Add) {
                        accum_scalar_aware(n.inputs[1], g, B.is_scalar() && !A.is_scalar());
                    } else {
                        Tensor gneg = g;
                        for (double& v : gneg.data) v = -v;
                        accum_scalar_aware(n.inputs[1], gneg, B.is_scalar() && !A.is_scalar());
                    }
                }
                break;
            }
            case Op::Mul: {
                const Tensor& A = val(n.inputs[0]);
                const Tensor& B = val(n.inputs[1]);
                std::size_t sa = A.is_scalar() ? 0 : 1, sb = B.is_scalar() ? 0 : 1;
                if (in_needs(0)) {
                    Tensor t(g.shape);
                    for (std::size_t i = 0; i < g.numel(); ++i)
                        t.data[i] = g.data[i] * B.data[i * sb];
                    accum_scalar_aware(n.inputs[0], t, A.is_scalar() && !B.is_scalar());
                }
                if (in_needs(1)) {
                    Tensor t(g.shape);
                    for (std::size_t i = 0; i < g.numel(); ++i)
                        t.data[i] = g.data[i] * A.data[i * sa];
                    accum_scalar_aware(n.inputs[1], t, B.is_scalar() && !A.is_scalar());
                }
                break;
            }
            case Op::ScalarMul: {
                Tensor t = g;
                for (double& v : t.data) v *= n.scalar_attr;
                accum_scalar_aware(n.inputs[0], t, false);
                break;
            }
            case Op::Relu: {
                const Tensor& x = val(n.inputs[0]);
                Tensor t(g.shape);
                for (std::size_t i = 0; i < g.numel(); ++i)
                    t.data[i] = x.data[i] > 0 ? g.data[i] : 0.0;  // subgradient 0 at the kink
                accum_scalar_aware(n.inputs[0], t, false);
                break;
            }
            case Op::Abs: {
                const Tensor& x = val(n.inputs[0]);
                Tensor t(g.shape);
                for (std::size_t i = 0; i < g.numel(); ++i)
                    t.data[i] = x.data[i] > 0 ? g.data[i] : x.data[i] < 0 ? -g.data[i] : 0.0;
                accum_scalar_aware(n.inputs[0], t, false);
                break;
            }
            case Op::Exp: {
                Tensor t(g.shape);
                for (std::size_t i = 0; i < g.numel(); ++i) t.data[i] = g.data[i] * n.value.data[i];
                accum_scalar_aware(n.inputs[0], t, false);
                break;
            }
            case Op::Negate: {
                Tensor t = g;
                for (double& v : t.data) v = -v;
                accum_scalar_aware(n.inputs[0], t, false);
                break;
            }
            case Op::Square: {
                const Tensor& x = val(n.inputs[0]);
                Tensor t(g.shape);
                for (std::size_t i = 0; i < g.numel(); ++i)
                    t.data[i] = 2.0 * x.data[i] * g.data[i];
                accum_scalar_aware(n.inputs[0], t, false);
                break;
            }
            case Op::Reciprocal: {
                Tensor t(g.shape);
                for (std::size_t i = 0; i < g.numel(); ++i) {
                    double y = n.value.data[i];
                    t.data[i] = -g.data[i] * y * y;
                }
                accum_scalar_aware(n.inputs[0], t, false);
                break;
            }
            case Op::Sum: {
                const Tensor& x = val(n.inputs[0]);
                Tensor t(x.shape, g.data[0]);
                accum_scalar_aware(n.inputs[0], t, false);
                break;
            }
            case Op::Mean: {
                const Tensor& x = val(n.inputs[0]);
                Tensor t(x.shape, g.data[0] / static_cast<double>(x.numel()));
                accum_scalar_aware(n.inputs[0], t, false);
                break;
            }
            case Op::Transpose: {
                const Tensor& x = val(n.inputs[0]);
                Tensor t(x.shape);
                for (std::size_t i = 0; i < x.rows(); ++i)
                    for (std::size_t j = 0; j < x.cols(); ++j) t.at(i, j) = g.at(j, i);
                accum_scalar_aware(n.inputs[0], t, false);
                break;
            }
            case Op::Reshape: {
                const Tensor& x = val(n.inputs[0]);
                Tensor t(x.shape, g.data);
                accum_scalar_aware(n.inputs[0], t, false);
                break;
            }
            case Op::Slice: {
                const Tensor& x = val(n.inputs[0]);
                Tensor& gi = grad_buf(n.inputs[0]);
                Tensor gpart = g;
                copy_region(x, gpart, n.offsets, n.sizes, /*scatter=*/true, &gi);
                break;
            }
            case Op::Concat: {
                std::size_t pos = 0;
                for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                    const Tensor& x = val(n.inputs[k]);
                    if (in_needs(k)) {
                        Tensor t(x.shape);
                        std::copy(g.data.begin() + pos, g.data.begin() + pos + x.numel(),
                                  t.data.begin());
                        accum_scalar_aware(n.inputs[k], t, false);
                    }
                    pos += x.numel();
                }
                break;
            }
            case Op::BiasAdd: {
                const Tensor& x = val(n.inputs[0]);
                if (in_needs(0)) accum_scalar_aware(n.inputs[0], g, false);
                if (in_needs(1)) {
                    Tensor& gb = grad_buf(n.inputs[1]);
                    if (x.rank() == 2) {
                        for (std::size_t i = 0; i < x.rows(); ++i)
                            for (std::size_t j = 0; j < x.cols(); ++j) gb.data[j] += g.at(i, j);
                    } else {
                        std::size_t hw = x.shape[1] * x.shape[2];
                        for (std::size_t c = 0; c < x.shape[0]; ++c)
                            for (std::size_t k = 0; k < hw; ++k) gb.data[c] += g.data[c * hw + k];
                    }
                }
                break;
            }
            case Op::Matmul: {
                const Tensor& A = val(n.inputs[0]);
                const Tensor& B = val(n.inputs[1]);
                std::size_t m = A.rows(), k = A.cols();
                std::size_t nn = B.rank() == 2 ? B.cols() : 1;
                if (in_needs(0)) {
                    // dA = g * B^T
                    Tensor& ga = grad_buf(n.inputs[0]);
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < nn; ++j) {
                            double gv = g.data[i * nn + j];
                            const double* br = B.data.data() + j;  // column j
                            double* gar = ga.data.data() + i * k;
                            for (std::size_t p = 0; p < k; ++p) gar[p] += gv * br[p * nn];
                        }
                }
                if (in_needs(1)) {
                    // dB = A^T * g
                    Tensor& gb = grad_buf(n.inputs[1]);
                    for (std::size_t p = 0; p < k; ++p)
                        for (std::size_t i = 0; i < m; ++i) {
                            double a = A.data[i * k + p];
                            const double* gr = g.data.data() + i * nn;
                            double* gbr = gb.data.data() + p * nn;
                            for (std::size_t j = 0; j < nn; ++j) gbr[j] += a * gr[j];
                        }
                }
                break;
            }
            case Op::Conv2d: {
                const Tensor& x = val(n.inputs[0]);
                const Tensor& W = val(n.inputs[1]);
                std::size_t cin = x.shape[0], H = x.shape[1], Wd = x.shape[2];
                std::size_t cout = W.shape[0], kh = W.shape[2], kw = W.shape[3];
                std::size_t oh = H - kh + 1, ow = Wd - kw + 1;
                if (in_needs(0)) {
                    Tensor& gx = grad_buf(n.inputs[0]);
                    for (std::size_t co = 0; co < cout; ++co)
                        for (std::size_t ci = 0; ci < cin; ++ci)
                            for (std::size_t u = 0; u < kh; ++u)
                                for (std::size_t v = 0; v < kw; ++v) {
                                    double wv = W.data[((co * cin + ci) * kh + u) * kw + v];
                                    const double* gout = &g.data[co * oh * ow];
                                    double* gxin = &gx.data[(ci * H + u) * Wd + v];
                                    for (std::size_t y = 0; y < oh; ++y) {
                                        const double* gr = gout + y * ow;
                                        double* gxr = gxin + y * Wd;
                                        for (std::size_t q = 0; q < ow; ++q) gxr[q] += wv * gr[q];
                                    }
                                }
                }
                if (in_needs(1)) {
                    Tensor& gw = grad_buf(n.inputs[1]);
                    for (std::size_t co = 0; co < cout; ++co)
                        for (std::size_t ci = 0; ci < cin; ++ci)
                            for (std::size_t u = 0; u < kh; ++u)
                                for (std::size_t v = 0; v < kw; ++v) {
                                    double s = 0.0;
                                    const double* gout = &g.data[co * oh * ow];
                                    const double* xin = &x.data[(ci * H + u) * Wd + v];
                                    for (std::size_t y = 0; y < oh; ++y) {
                                        const double* gr = gout + y * ow;
                                        const double* xr = xin + y * Wd;
                                        for (std::size_t q = 0; q < ow; ++q) s += gr[q] * xr[q];
                                    }
                                    gw.data[((co * cin + ci) * kh + u) * kw + v] += s;
                                }
                }
                break;
            }
            case Op::MaxPool2x2: {
                Tensor& gx = grad_buf(n.inputs[0]);
                for (std::size_t o = 0; o < n.argmax.size(); ++o)
                    gx.data[n.argmax[o]] += g.data[o];
                break;
            }
            case Op::SoftmaxRows: {
                const Tensor& y = n.value;
                std::size_t m = y.rank() == 2 ? y.rows() : 1;
                std::size_t nn = y.rank() == 2 ? y.cols() : y.shape[0];
                Tensor t(y.shape);
                for (std::size_t i = 0; i < m; ++i) {
                    const double* yi = &y.data[i * nn];
                    const double* gi = &g.data[i * nn];
                    double dot = 0.0;
                    for (std::size_t j = 0; j < nn; ++j) dot += gi[j] * yi[j];
                    for (std::size_t j = 0; j < nn; ++j) t.data[i * nn + j] = yi[j] * (gi[j] - dot);
                }
                accum_scalar_aware(n.inputs[0], t, false);
                break;
            }
            case Op::DropoutMask: {
                Tensor t(g.shape);
                for (std::size_t i = 0; i < g.numel(); ++i) t.data[i] = g.data[i] * n.mask.data[i];
                accum_scalar_aware(n.inputs[0], t, false);
                break;
            }
        }
    }
};

}  // namespace ratm
