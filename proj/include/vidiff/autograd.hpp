#pragma once

#include <deque>
#include <functional>
#include <vector>

#include "vidiff/tensor.hpp"

namespace vidiff::ag {

/// Handle to a node in a Graph.
struct Var {
    int id = -1;
    bool valid() const noexcept { return id >= 0; }
};

/// Reverse-mode tape over dense tensors. Each op computes its value eagerly
/// and, when recording, pushes a closure that propagates the output
/// gradient back to its inputs. Parameters enter as leaves that reference
/// caller-owned storage and accumulate into a caller-owned gradient sink.
template <typename T>
class Graph {
public:
    explicit Graph(bool record = true) : record_(record) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    bool recording() const noexcept { return record_; }

    Var constant(Tensor<T> value);
    /// `value` must outlive the graph. Gradients are added to `sink` (same
    /// shape) during backward; pass nullptr for a frozen parameter.
    Var param(const Tensor<T>& value, Tensor<T>* sink);

    const Tensor<T>& value(Var v) const;
    const Shape& shape(Var v) const { return value(v).shape(); }

    /// Seeds d(out) with `seed` and runs all recorded closures in reverse.
    void backward(Var out, const Tensor<T>& seed);

    // --- ops --------------------------------------------------------------
    /// 2-D convolution, stride 1, zero padding `pad`. w: [O, I, k, k], b: [O].
    Var conv2d(Var x, Var w, Var b, int pad);
    /// x: [N, F], w: [O, F], b: [O] -> [N, O].
    Var linear(Var x, Var w, Var b);
    Var silu(Var x);
    /// gamma/beta: [C]. C must be divisible by groups.
    Var group_norm(Var x, Var gamma, Var beta, int groups, T eps = T(1e-5));
    Var add(Var a, Var b);
    /// x: [N, C, H, W] plus per-item channel vector v: [N, C].
    Var add_channel(Var x, Var v);
    /// x: [N, C, H, W] scaled by per-item channel vector v: [N, C].
    Var mul_channel(Var x, Var v);
    Var avg_pool2(Var x);
    Var upsample2(Var x);
    Var concat_channels(Var a, Var b);
    /// Single-head spatial self-attention. qkv: [N, 3C, H, W] -> [N, C, H, W].
    Var attention(Var qkv);
    /// Row gather from table [K, E] -> [N, E].
    Var embedding(Var table, std::vector<int> rows);
    /// [N, C, H, W] -> [N, C].
    Var global_avg_pool(Var x);
    /// [N, ...] -> [N, prod(...)].
    Var flatten(Var x);
    /// Mean squared difference against a constant target -> shape [1].
    Var mse(Var x, const Tensor<T>& target);

private:
    struct Node {
        Tensor<T> own;
        const Tensor<T>* ext = nullptr;
        Tensor<T> grad;
        Tensor<T>* sink = nullptr;
        bool needs_grad = false;
        std::function<void()> back;
        const Tensor<T>& val() const { return ext ? *ext : own; }
    };

    Node& node(Var v) { return nodes_.at(static_cast<std::size_t>(v.id)); }
    const Node& node(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)); }
    Tensor<T>& grad_of(Var v);
    bool any_grad(std::initializer_list<Var> vs) const;
    Var push(Tensor<T> value, bool needs_grad);

    bool record_;
    std::deque<Node> nodes_;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace vidiff::ag
