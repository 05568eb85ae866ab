#pragma once

#include "stcn/random.hpp"
#include "stcn/tensor.hpp"

#include <cstddef>
#include <deque>
#include <functional>
#include <vector>

namespace stcn {

class Graph;

// Handle to a node in a Graph. Cheap to copy; valid for the graph lifetime.
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    // Gradient of the last backward() pass; throws if none was produced.
    const std::vector<double>& grad() const;
    bool requires_grad() const;

    Graph* graph() const { return graph_; }
    std::size_t id() const { return id_; }
    bool valid() const { return graph_ != nullptr; }

private:
    friend class Graph;
    Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}
    Graph* graph_ = nullptr;
    std::size_t id_ = 0;
};

// (temporal, height, width) triple for 5-d kernels, strides and paddings.
struct Dim3 {
    std::size_t t = 1;
    std::size_t h = 1;
    std::size_t w = 1;
};

enum class PoolKind { max, average };
enum class NormMode { train, eval };

// Per-feature running statistics owned by a batch-norm layer.
struct RunningStats {
    Tensor mean;
    Tensor var;
    static RunningStats init(std::size_t channels);
};

// Reverse-mode tape. Nodes are appended in forward order, which is a
// topological order by construction; backward() replays the recorded
// backward rules once in reverse. A Graph is confined to one thread.
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var leaf(Tensor value, bool requires_grad = false);

    // Seeds d(loss)/d(loss) = 1 and accumulates gradients into every
    // requires_grad node reachable from `loss`. May be called again after
    // zero_grad(); identical replays produce bit-identical gradients.
    void backward(const Var& loss);
    void zero_grad();

    const Tensor& value(const Var& v) const { return node_value(v.id()); }
    Tensor grad_tensor(const Var& v) const;

    std::size_t node_count() const { return nodes_.size(); }

    // ---- op-implementation surface ----
    using BackwardFn = std::function<void(Graph&, std::size_t node_id)>;
    Var emit(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);
    Tensor& node_value(std::size_t id);
    const Tensor& node_value(std::size_t id) const;
    // Gradient buffer of a node, allocated to zeros on first use.
    std::vector<double>& node_grad(std::size_t id);
    bool node_requires_grad(std::size_t id) const;
    const std::vector<std::size_t>& node_inputs(std::size_t id) const;

private:
    struct Node {
        Tensor value;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
    };
    // deque: node references stay valid while the tape grows
    std::deque<Node> nodes_;
};

// ---- elementwise and linear algebra ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
// y[n,m] = x[n,m] + bias[m]
Var add_rowvec(const Var& x, const Var& bias);
Var matmul(const Var& a, const Var& b);
Var transpose2d(const Var& a);
Var reshape(const Var& a, Shape shape);
Var permute(const Var& a, std::vector<std::size_t> order);
Var concat(const std::vector<Var>& parts, std::size_t axis);
Var slice(const Var& a, std::size_t axis, std::size_t start, std::size_t len);
// y[t, c] = x[t, c] * s[t];  s has shape [T] or [T x 1]
Var scale_rows(const Var& x, const Var& s);

// ---- reductions ----
Var sum_all(const Var& a);
Var mean_axes(const Var& a, std::vector<std::size_t> axes, bool keepdims = false);

// ---- activations and losses ----
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var softmax(const Var& a, std::size_t axis);
// Mean negative log probability of the labelled class; probs is [N x C].
Var cross_entropy(const Var& probs, const std::vector<std::size_t>& labels);

// ---- convolution, pooling, normalization ----

// Output extent arithmetic shared by the kernels and by shape propagation.
std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad);
std::size_t pool_out_extent(std::size_t in, std::size_t window, std::size_t stride,
                            std::size_t pad, bool ceil_mode);

// Temporal padding semantics for conv3d. Replicated edge frames preserve
// temporally constant inputs exactly; spatial padding is always zero.
enum class TemporalPad { zero, replicate };

// input [N x C x T x H x W], kernel [C' x C x kT x kH x kW]; cross-correlation.
Var conv3d(const Var& input, const Var& kernel, Dim3 stride, Dim3 padding,
           TemporalPad tpad = TemporalPad::zero);

// input [N x C x T], kernel [C' x C x kF]; y_t = sum_m x_{t-d*m} * h_m with
// implicit left zero padding, so the output length equals the input length.
Var dilated_causal_conv1d(const Var& input, const Var& kernel, std::size_t dilation);

// input [N x C x T x H x W]. Average pooling divides by the number of
// in-bounds elements under each window; max pooling routes the gradient to
// the argmax, ties broken to the lowest flat index.
Var pool3d(const Var& input, PoolKind kind, Dim3 window, Dim3 stride,
           Dim3 padding = Dim3{0, 0, 0}, bool ceil_mode = false);

// Normalizes over every axis except feature_axis. gamma/beta are rank-1 of
// the feature extent. Train mode uses batch statistics and, when
// update_running is set, folds them into *stats with the given momentum
// (stats <- momentum * stats + (1 - momentum) * batch). Eval mode uses the
// recorded running statistics.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta,
               std::size_t feature_axis, NormMode mode, RunningStats* stats,
               bool update_running, double momentum = 0.9, double eps = 1e-5);

// Inverted dropout: train-mode scaling by 1/(1-p) so eval is the identity.
Var dropout(const Var& x, double p, Rng& rng, bool train);

// Local temporal average pooling of a [k x C] feature map into [T x C]:
// window t (1-based) covers frame indices [t*w - w, t*w + w - 1] with
// w = k / T, clipped to the sequence; adjacent windows overlap by w.
Var ltap(const Var& feature, std::size_t T);
Tensor ltap(const Tensor& feature, std::size_t T);

} // namespace stcn
