#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "missbench/linalg.hpp"

namespace missbench {

/// Flat double tensor. Rank is 0 (scalar), 1 (vector) or 2 (matrix); the
/// leading dimension of inputs may change between forward passes (variable
/// batch size).
struct Tensor {
    std::vector<std::size_t> shape;
    Vec data;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
        data.assign(numel(shape), 0.0);
    }
    Tensor(std::vector<std::size_t> s, Vec d) : shape(std::move(s)), data(std::move(d)) {}

    static std::size_t numel(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (auto v : s) n *= v;
        return n;
    }

    std::size_t size() const { return data.size(); }
    std::size_t rows() const { return shape.empty() ? 1 : shape[0]; }
    std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    static Tensor scalar(double v) { return Tensor({}, Vec{v}); }
    static Tensor from_mat(const Mat& m) { return Tensor({m.rows, m.cols}, m.a); }
    static Tensor from_vec(const Vec& v) { return Tensor({v.size()}, v); }

    bool operator==(const Tensor& o) const = default;
};

/// Reverse-mode differentiation over an append-only computation graph.
/// Nodes are created parents-first, so the storage order is already
/// topological: forward walks it once ascending, backward once descending.
/// Any non-finite value produced by an op raises NonFiniteValue.
class Graph {
public:
    enum class Op {
        input,     // value fed per batch; receives no gradient
        param,     // trainable leaf
        matmul,    // (n x k) * (k x m)
        add_bias,  // (n x k) + broadcast row vector (k)
        relu,      // elementwise max(0, x); gradient at 0 is 0
        mask_mul,  // elementwise product with a same-shape input tensor
        add,       // same-shape elementwise sum
        scale,     // tensor * scalar node (param or input)
        scale_c,   // tensor * compile-time constant
        sub_const, // tensor - constant
        mse_loss,  // mean squared error against an input tensor
    };

    int add_input() { return push({Op::input, -1, -1, 0.0}); }

    int add_param(Tensor init) {
        const int id = push({Op::param, -1, -1, 0.0});
        nodes_[id].val = std::move(init);
        return id;
    }

    int matmul(int a, int b) { return push({Op::matmul, a, b, 0.0}); }
    int add_bias(int a, int bias) { return push({Op::add_bias, a, bias, 0.0}); }
    int relu(int a) { return push({Op::relu, a, -1, 0.0}); }
    int mask_mul(int a, int mask) { return push({Op::mask_mul, a, mask, 0.0}); }
    int add(int a, int b) { return push({Op::add, a, b, 0.0}); }
    int scale(int a, int scalar_node) { return push({Op::scale, a, scalar_node, 0.0}); }
    int scale_const(int a, double c) { return push({Op::scale_c, a, -1, c}); }
    int sub_const(int a, double c) { return push({Op::sub_const, a, -1, c}); }
    int mse_loss(int pred, int target) { return push({Op::mse_loss, pred, target, 0.0}); }

    void set_value(int id, Tensor v) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.op != Op::input) throw Error("Graph: set_value on non-input node");
        n.val = std::move(v);
    }

    const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].val; }
    const Tensor& grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
    Tensor& param_value(int id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.op != Op::param) throw Error("Graph: param_value on non-param node");
        return n.val;
    }

    std::vector<int> params() const {
        std::vector<int> out;
        for (std::size_t i = 0; i < nodes_.size(); ++i)
            if (nodes_[i].op == Op::param) out.push_back(static_cast<int>(i));
        return out;
    }

    /// Evaluate nodes 0..upto; returns the value of `upto` when scalar.
    double forward(int upto) {
        for (int id = 0; id <= upto; ++id) eval(id);
        const Tensor& t = nodes_[static_cast<std::size_t>(upto)].val;
        return t.size() == 1 ? t.data[0] : 0.0;
    }

    /// Reverse pass from `loss` (must have been forwarded). Gradients of all
    /// nodes at or below `loss` are (re)computed.
    void backward(int loss) {
        for (int id = 0; id <= loss; ++id) {
            Node& n = nodes_[static_cast<std::size_t>(id)];
            n.grad.shape = n.val.shape;
            n.grad.data.assign(n.val.size(), 0.0);
        }
        Node& top = nodes_[static_cast<std::size_t>(loss)];
        if (top.val.size() != 1) throw Error("Graph: backward from non-scalar node");
        top.grad.data[0] = 1.0;
        for (int id = loss; id >= 0; --id) prop(id);
        for (int id = 0; id <= loss; ++id) {
            const Node& n = nodes_[static_cast<std::size_t>(id)];
            if (n.op == Op::param) check_finite(n.grad, "gradient");
        }
    }

private:
    struct Node {
        Op op;
        int a, b;
        double c;
        Tensor val;
        Tensor grad;
    };

    std::vector<Node> nodes_;

    int push(Node n) {
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    static void check_finite(const Tensor& t, const char* what) {
        for (double v : t.data)
            if (!std::isfinite(v))
                throw NonFiniteValue(std::string("Graph: non-finite ") + what);
    }

    Tensor& val(int id) { return nodes_[static_cast<std::size_t>(id)].val; }

    void eval(int id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        switch (n.op) {
            case Op::input:
            case Op::param:
                break;
            case Op::matmul: {
                const Tensor& a = val(n.a);
                const Tensor& b = val(n.b);
                if (a.cols() != b.rows()) throw DimensionMismatch("Graph matmul");
                n.val.shape = {a.rows(), b.cols()};
                n.val.data.assign(a.rows() * b.cols(), 0.0);
                mm_nn_acc(a.data.data(), b.data.data(), n.val.data.data(), a.rows(),
                          a.cols(), b.cols());
                break;
            }
            case Op::add_bias: {
                const Tensor& a = val(n.a);
                const Tensor& bias = val(n.b);
                if (bias.size() != a.cols()) throw DimensionMismatch("Graph add_bias");
                n.val = a;
                for (std::size_t i = 0; i < a.rows(); ++i) {
                    double* row = n.val.data.data() + i * a.cols();
                    for (std::size_t j = 0; j < a.cols(); ++j) row[j] += bias.data[j];
                }
                break;
            }
            case Op::relu: {
                const Tensor& a = val(n.a);
                n.val = a;
                for (auto& v : n.val.data) v = v > 0.0 ? v : 0.0;
                break;
            }
            case Op::mask_mul:
            case Op::add: {
                const Tensor& a = val(n.a);
                const Tensor& b = val(n.b);
                if (a.shape != b.shape) throw DimensionMismatch("Graph elementwise");
                n.val = a;
                if (n.op == Op::mask_mul)
                    for (std::size_t i = 0; i < a.size(); ++i) n.val.data[i] *= b.data[i];
                else
                    for (std::size_t i = 0; i < a.size(); ++i) n.val.data[i] += b.data[i];
                break;
            }
            case Op::scale: {
                const Tensor& a = val(n.a);
                const Tensor& s = val(n.b);
                if (s.size() != 1) throw DimensionMismatch("Graph scale: scalar node");
                n.val = a;
                for (auto& v : n.val.data) v *= s.data[0];
                break;
            }
            case Op::scale_c: {
                n.val = val(n.a);
                for (auto& v : n.val.data) v *= n.c;
                break;
            }
            case Op::sub_const: {
                n.val = val(n.a);
                for (auto& v : n.val.data) v -= n.c;
                break;
            }
            case Op::mse_loss: {
                const Tensor& p = val(n.a);
                const Tensor& t = val(n.b);
                if (p.size() != t.size()) throw DimensionMismatch("Graph mse_loss");
                double acc = 0.0;
                for (std::size_t i = 0; i < p.size(); ++i) {
                    const double d = p.data[i] - t.data[i];
                    acc += d * d;
                }
                n.val = Tensor::scalar(acc / static_cast<double>(p.size()));
                break;
            }
        }
        check_finite(n.val, "value");
    }

    void prop(int id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        const Tensor& g = n.grad;
        switch (n.op) {
            case Op::input:
            case Op::param:
                break;
            case Op::matmul: {
                const Tensor& a = val(n.a);
                const Tensor& b = val(n.b);
                Tensor& ga = nodes_[static_cast<std::size_t>(n.a)].grad;
                Tensor& gb = nodes_[static_cast<std::size_t>(n.b)].grad;
                // dA += G B^T, dB += A^T G
                mm_nt_acc(g.data.data(), b.data.data(), ga.data.data(), a.rows(),
                          b.cols(), a.cols());
                mm_tn_acc(a.data.data(), g.data.data(), gb.data.data(), a.cols(),
                          a.rows(), b.cols());
                break;
            }
            case Op::add_bias: {
                const Tensor& a = val(n.a);
                Tensor& ga = nodes_[static_cast<std::size_t>(n.a)].grad;
                Tensor& gb = nodes_[static_cast<std::size_t>(n.b)].grad;
                for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
                for (std::size_t i = 0; i < a.rows(); ++i) {
                    const double* row = g.data.data() + i * a.cols();
                    for (std::size_t j = 0; j < a.cols(); ++j) gb.data[j] += row[j];
                }
                break;
            }
            case Op::relu: {
                const Tensor& a = val(n.a);
                Tensor& ga = nodes_[static_cast<std::size_t>(n.a)].grad;
                for (std::size_t i = 0; i < g.size(); ++i)
                    if (a.data[i] > 0.0) ga.data[i] += g.data[i];
                break;
            }
            case Op::mask_mul: {
                const Tensor& b = val(n.b);
                const Tensor& a = val(n.a);
                Tensor& ga = nodes_[static_cast<std::size_t>(n.a)].grad;
                Tensor& gb = nodes_[static_cast<std::size_t>(n.b)].grad;
                for (std::size_t i = 0; i < g.size(); ++i) {
                    ga.data[i] += g.data[i] * b.data[i];
                    gb.data[i] += g.data[i] * a.data[i];
                }
                break;
            }
            case Op::add: {
                Tensor& ga = nodes_[static_cast<std::size_t>(n.a)].grad;
                Tensor& gb = nodes_[static_cast<std::size_t>(n.b)].grad;
                for (std::size_t i = 0; i < g.size(); ++i) {
                    ga.data[i] += g.data[i];
                    gb.data[i] += g.data[i];
                }
                break;
            }
            case Op::scale: {
                const Tensor& a = val(n.a);
                const Tensor& s = val(n.b);
                Tensor& ga = nodes_[static_cast<std::size_t>(n.a)].grad;
                Tensor& gs = nodes_[static_cast<std::size_t>(n.b)].grad;
                for (std::size_t i = 0; i < g.size(); ++i) {
                    ga.data[i] += g.data[i] * s.data[0];
                    gs.data[0] += g.data[i] * a.data[i];
                }
                break;
            }
            case Op::scale_c: {
                Tensor& ga = nodes_[static_cast<std::size_t>(n.a)].grad;
                for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * n.c;
                break;
            }
            case Op::sub_const: {
                Tensor& ga = nodes_[static_cast<std::size_t>(n.a)].grad;
                for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
                break;
            }
            case Op::mse_loss: {
                const Tensor& p = val(n.a);
                const Tensor& t = val(n.b);
                Tensor& gp = nodes_[static_cast<std::size_t>(n.a)].grad;
                const double scale = 2.0 * g.data[0] / static_cast<double>(p.size());
                for (std::size_t i = 0; i < p.size(); ++i)
                    gp.data[i] += scale * (p.data[i] - t.data[i]);
                break;
            }
        }
    }
};

} // namespace missbench
