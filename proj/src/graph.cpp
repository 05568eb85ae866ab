#include "stcn/graph.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace stcn {

const Tensor& Var::value() const { return graph_->node_value(id_); }

const std::vector<double>& Var::grad() const {
    const Tensor& t = graph_->node_value(id_);
    if (!t.grad) {
        throw InputError("no gradient recorded for this node; run backward() first");
    }
    return *t.grad;
}

bool Var::requires_grad() const { return graph_->node_requires_grad(id_); }

RunningStats RunningStats::init(std::size_t channels) {
    RunningStats s;
    s.mean = Tensor({channels}, 0.0);
    s.var = Tensor({channels}, 1.0);
    return s;
}

Var Graph::leaf(Tensor value, bool requires_grad) {
    value.requires_grad = requires_grad;
    value.grad.reset();
    nodes_.push_back(Node{std::move(value), {}, nullptr});
    return Var(this, nodes_.size() - 1);
}

Var Graph::emit(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
    bool req = false;
    for (std::size_t i : inputs) {
        if (i >= nodes_.size()) {
            throw InputError("graph: op input does not precede it on the tape");
        }
        req = req || nodes_[i].value.requires_grad;
    }
    value.requires_grad = req;
    value.grad.reset();
    nodes_.push_back(Node{std::move(value), std::move(inputs), std::move(backward)});
    return Var(this, nodes_.size() - 1);
}

Tensor& Graph::node_value(std::size_t id) { return nodes_.at(id).value; }
const Tensor& Graph::node_value(std::size_t id) const { return nodes_.at(id).value; }

std::vector<double>& Graph::node_grad(std::size_t id) {
    Tensor& t = nodes_.at(id).value;
    t.ensure_grad();
    return *t.grad;
}

bool Graph::node_requires_grad(std::size_t id) const { return nodes_.at(id).value.requires_grad; }

const std::vector<std::size_t>& Graph::node_inputs(std::size_t id) const {
    return nodes_.at(id).inputs;
}

void Graph::backward(const Var& loss) {
    if (loss.graph() != this) {
        throw InputError("backward() called with a var from another graph");
    }
    const Tensor& lv = nodes_.at(loss.id()).value;
    if (lv.size() != 1) {
        throw ShapeError("backward() requires a scalar loss, got " + shape_str(lv.shape()));
    }
    if (!lv.requires_grad) {
        throw InputError("backward() on a node that does not require gradients");
    }
    node_grad(loss.id())[0] += 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.backward || !n.value.requires_grad || !n.value.grad) continue;
        n.backward(*this, i);
    }
}

void Graph::zero_grad() {
    for (Node& n : nodes_) n.value.zero_grad();
}

Tensor Graph::grad_tensor(const Var& v) const {
    const Tensor& t = nodes_.at(v.id()).value;
    if (!t.grad) {
        throw InputError("no gradient recorded for this node; run backward() first");
    }
    return Tensor(t.shape(), *t.grad);
}

// ---------------------------------------------------------------------------
// helpers

namespace {

Graph& same_graph(const Var& a, const Var& b) {
    if (a.graph() == nullptr || a.graph() != b.graph()) {
        throw InputError("operands belong to different graphs");
    }
    return *a.graph();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shapes differ: " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    }
}

} // namespace

// ---------------------------------------------------------------------------
// elementwise

Var add(const Var& a, const Var& b) {
    Graph& g = same_graph(a, b);
    const Tensor& ta = a.value();
    const Tensor& tb = b.value();
    require_same_shape(ta, tb, "add");
    Tensor out(ta.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ta[i] + tb[i];
    const std::size_t ia = a.id(), ib = b.id();
    return g.emit(std::move(out), {ia, ib}, [ia, ib](Graph& gg, std::size_t self) {
        const std::vector<double>& dy = *gg.node_value(self).grad;
        if (gg.node_requires_grad(ia)) {
            std::vector<double>& da = gg.node_grad(ia);
            for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
        }
        if (gg.node_requires_grad(ib)) {
            std::vector<double>& db = gg.node_grad(ib);
            for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i];
        }
    });
}

Var sub(const Var& a, const Var& b) {
    Graph& g = same_graph(a, b);
    const Tensor& ta = a.value();
    const Tensor& tb = b.value();
    require_same_shape(ta, tb, "sub");
    Tensor out(ta.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ta[i] - tb[i];
    const std::size_t ia = a.id(), ib = b.id();
    return g.emit(std::move(out), {ia, ib}, [ia, ib](Graph& gg, std::size_t self) {
        const std::vector<double>& dy = *gg.node_value(self).grad;
        if (gg.node_requires_grad(ia)) {
            std::vector<double>& da = gg.node_grad(ia);
            for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
        }
        if (gg.node_requires_grad(ib)) {
            std::vector<double>& db = gg.node_grad(ib);
            for (std::size_t i = 0; i < dy.size(); ++i) db[i] -= dy[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    Graph& g = same_graph(a, b);
    const Tensor& ta = a.value();
    const Tensor& tb = b.value();
    require_same_shape(ta, tb, "mul");
    Tensor out(ta.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ta[i] * tb[i];
    const std::size_t ia = a.id(), ib = b.id();
    return g.emit(std::move(out), {ia, ib}, [ia, ib](Graph& gg, std::size_t self) {
        const std::vector<double>& dy = *gg.node_value(self).grad;
        const Tensor& va = gg.node_value(ia);
        const Tensor& vb = gg.node_value(ib);
        if (gg.node_requires_grad(ia)) {
            std::vector<double>& da = gg.node_grad(ia);
            for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * vb[i];
        }
        if (gg.node_requires_grad(ib)) {
            std::vector<double>& db = gg.node_grad(ib);
            for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * va[i];
        }
    });
}

Var scale(const Var& a, double c) {
    Graph& g = *a.graph();
    const Tensor& ta = a.value();
    Tensor out(ta.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ta[i] * c;
    const std::size_t ia = a.id();
    return g.emit(std::move(out), {ia}, [ia, c](Graph& gg, std::size_t self) {
        const std::vector<double>& dy = *gg.node_value(self).grad;
        if (!gg.node_requires_grad(ia)) return;
        std::vector<double>& da = gg.node_grad(ia);
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * c;
    });
}

Var add_rowvec(const Var& x, const Var& bias) {
    Graph& g = same_graph(x, bias);
    const Tensor& tx = x.value();
    const Tensor& tb = bias.value();
    if (tx.rank() != 2) {
        throw ShapeError("add_rowvec: expected rank-2 input, got " + shape_str(tx.shape()));
    }
    const std::size_t n = tx.extent(0), m = tx.extent(1);
    if (tb.size() != m) {
        throw ShapeError("add_rowvec: bias " + shape_str(tb.shape()) +
                         " does not match row width of " + shape_str(tx.shape()));
    }
    Tensor out(tx.shape());
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < m; ++c) out[r * m + c] = tx[r * m + c] + tb[c];
    const std::size_t ix = x.id(), ib = bias.id();
    return g.emit(std::move(out), {ix, ib}, [ix, ib, n, m](Graph& gg, std::size_t self) {
        const std::vector<double>& dy = *gg.node_value(self).grad;
        if (gg.node_requires_grad(ix)) {
            std::vector<double>& dx = gg.node_grad(ix);
            for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
        }
        if (gg.node_requires_grad(ib)) {
            std::vector<double>& db = gg.node_grad(ib);
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < m; ++c) db[c] += dy[r * m + c];
        }
    });
}

// ---------------------------------------------------------------------------
// linear algebra

Var matmul(const Var& a, const Var& b) {
    Graph& g = same_graph(a, b);
    const Tensor& ta = a.value();
    const Tensor& tb = b.value();
    if (ta.rank() != 2 || tb.rank() != 2) {
        throw ShapeError("matmul: expected rank-2 operands, got " + shape_str(ta.shape()) +
                         " and " + shape_str(tb.shape()));
    }
    const std::size_t m = ta.extent(0), k = ta.extent(1);
    const std::size_t k2 = tb.extent(0), n = tb.extent(1);
    if (k != k2) {
        throw ShapeError("matmul: inner extents differ: " + shape_str(ta.shape()) + " vs " +
                         shape_str(tb.shape()));
    }
    Tensor out({m, n});
    const double* pa = ta.data();
    const double* pb = tb.data();
    double* po = out.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = pa[i * k + kk];
            if (av == 0.0) continue;
            const double* brow = pb + kk * n;
            double* orow = po + i * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    const std::size_t ia = a.id(), ib = b.id();
    return g.emit(std::move(out), {ia, ib}, [ia, ib, m, k, n](Graph& gg, std::size_t self) {
        const std::vector<double>& dy = *gg.node_value(self).grad;
        const Tensor& va = gg.node_value(ia);
        const Tensor& vb = gg.node_value(ib);
        if (gg.node_requires_grad(ia)) {
            // dA = dY * B^T
            std::vector<double>& da = gg.node_grad(ia);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t kk = 0; kk < k; ++kk) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j) acc += dy[i * n + j] * vb[kk * n + j];
                    da[i * k + kk] += acc;
                }
        }
        if (gg.node_requires_grad(ib)) {
            // dB = A^T * dY
            std::vector<double>& db = gg.node_grad(ib);
            for (std::size_t kk = 0; kk < k; ++kk)
                for (std::size_t i = 0; i < m; ++i) {
                    const double av = va[i * k + kk];
                    if (av == 0.0) continue;
                    for (std::size_t j = 0; j < n; ++j) db[kk * n + j] += av * dy[i * n + j];
                }
        }
    });
}

Var transpose2d(const Var& a) {
    Graph& g = *a.graph();
    const Tensor& ta = a.value();
    if (ta.rank() != 2) {
        throw ShapeError("transpose2d: expected rank-2 input, got " + shape_str(ta.shape()));
    }
    const std::size_t m = ta.extent(0), n = ta.extent(1);
    Tensor out({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = ta[i * n + j];
    const std::size_t ia = a.id();
    return g.emit(std::move(out), {ia}, [ia, m, n](Graph& gg, std::size_t self) {
        if (!gg.node_requires_grad(ia)) return;
        const std::vector<double>& dy = *gg.node_value(self).grad;
        std::vector<double>& da = gg.node_grad(ia);
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t i = 0; i < m; ++i) da[i * n + j] += dy[j * m + i];
    });
}

Var reshape(const Var& a, Shape shape) {
    Graph& g = *a.graph();
    const Tensor& ta = a.value();
    if (shape_numel(shape) != ta.size()) {
        throw ShapeError("reshape: element count mismatch: " + shape_str(ta.shape()) + " -> " +
                         shape_str(shape));
    }
    Tensor out(std::move(shape), ta.values());
    const std::size_t ia = a.id();
    return g.emit(std::move(out), {ia}, [ia](Graph& gg, std::size_t self) {
        if (!gg.node_requires_grad(ia)) return;
        const std::vector<double>& dy = *gg.node_value(self).grad;
        std::vector<double>& da = gg.node_grad(ia);
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
    });
}

Var permute(const Var& a, std::vector<std::size_t> order) {
    Graph& g = *a.graph();
    const Tensor& ta = a.value();
    const std::size_t r = ta.rank();
    if (order.size() != r) {
        throw ShapeError("permute: order length " + std::to_string(order.size()) +
                         " does not match rank of " + shape_str(ta.shape()));
    }
    std::vector<bool> seen(r, false);
    Shape out_shape(r);
    for (std::size_t i = 0; i < r; ++i) {
        if (order[i] >= r || seen[order[i]]) {
            throw ShapeError("permute: invalid axis order");
        }
        seen[order[i]] = true;
        out_shape[i] = ta.extent(order[i]);
    }
    const std::vector<std::size_t> in_strides = row_major_strides(ta.shape());
    const std::vector<std::size_t> out_strides = row_major_strides(out_shape);
    // out flat index -> in flat index mapping, reused by the backward pass
    std::vector<std::size_t> src(ta.size());
    std::vector<std::size_t> idx(r, 0);
    for (std::size_t o = 0; o < ta.size(); ++o) {
        std::size_t in_flat = 0;
        for (std::size_t d = 0; d < r; ++d) in_flat += idx[d] * in_strides[order[d]];
        src[o] = in_flat;
        for (std::size_t d = r; d-- > 0;) {
            if (++idx[d] < out_shape[d]) break;
            idx[d] = 0;
        }
    }
    Tensor out(out_shape);
    for (std::size_t o = 0; o < out.size(); ++o) out[o] = ta[src[o]];
    const std::size_t ia = a.id();
    return g.emit(std::move(out), {ia}, [ia, src](Graph& gg, std::size_t self) {
        if (!gg.node_requires_grad(ia)) return;
        const std::vector<double>& dy = *gg.node_value(self).grad;
        std::vector<double>& da = gg.node_grad(ia);
        for (std::size_t o = 0; o < dy.size(); ++o) da[src[o]] += dy[o];
    });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
    if (parts.empty()) throw InputError("concat: no operands");
    Graph& g = *parts[0].graph();
    const Shape& first = parts[0].shape();
    if (axis >= first.size()) {
        throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(first));
    }
    Shape out_shape = first;
    out_shape[axis] = 0;
    for (const Var& p : parts) {
        if (p.graph() != &g) throw InputError("concat: operands belong to different graphs");
        const Shape& s = p.shape();
        if (s.size() != first.size()) {
            throw ShapeError("concat: rank mismatch: " + shape_str(first) + " vs " + shape_str(s));
        }
        for (std::size_t d = 0; d < s.size(); ++d) {
            if (d != axis && s[d] != first[d]) {
                throw ShapeError("concat: shapes differ off-axis: " + shape_str(first) + " vs " +
                                 shape_str(s));
            }
        }
        out_shape[axis] += s[axis];
    }
    // views as [outer, axis extent, inner]
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
    for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
    const std::size_t total_axis = out_shape[axis];

    Tensor out(out_shape);
    std::vector<std::size_t> ids;
    std::vector<std::size_t> extents;
    std::size_t off = 0;
    for (const Var& p : parts) {
        const Tensor& tp = p.value();
        const std::size_t e = tp.extent(axis);
        for (std::size_t o = 0; o < outer; ++o) {
            const double* srcp = tp.data() + o * e * inner;
            double* dstp = out.data() + (o * total_axis + off) * inner;
            std::copy(srcp, srcp + e * inner, dstp);
        }
        ids.push_back(p.id());
        extents.push_back(e);
        off += e;
    }
    return g.emit(std::move(out), ids,
                  [ids, extents, outer, inner, total_axis](Graph& gg, std::size_t self) {
                      const std::vector<double>& dy = *gg.node_value(self).grad;
                      std::size_t off2 = 0;
                      for (std::size_t pi = 0; pi < ids.size(); ++pi) {
                          const std::size_t e = extents[pi];
                          if (gg.node_requires_grad(ids[pi])) {
                              std::vector<double>& dp = gg.node_grad(ids[pi]);
                              for (std::size_t o = 0; o < outer; ++o) {
                                  const double* srcp = dy.data() + (o * total_axis + off2) * inner;
                                  double* dstp = dp.data() + o * e * inner;
                                  for (std::size_t i = 0; i < e * inner; ++i) dstp[i] += srcp[i];
                              }
                          }
                          off2 += e;
                      }
                  });
}

Var slice(const Var& a, std::size_t axis, std::size_t start, std::size_t len) {
    Graph& g = *a.graph();
    const Tensor& ta = a.value();
    if (axis >= ta.rank()) {
        throw ShapeError("slice: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(ta.shape()));
    }
    if (len == 0 || start + len > ta.extent(axis)) {
        throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") out of bounds for " +
                         shape_str(ta.shape()));
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= ta.extent(d);
    for (std::size_t d = axis + 1; d < ta.rank(); ++d) inner *= ta.extent(d);
    const std::size_t e = ta.extent(axis);
    Shape out_shape = ta.shape();
    out_shape[axis] = len;
    Tensor out(out_shape);
    for (std::size_t o = 0; o < outer; ++o) {
        const double* srcp = ta.data() + (o * e + start) * inner;
        std::copy(srcp, srcp + len * inner, out.data() + o * len * inner);
    }
    const std::size_t ia = a.id();
    return g.emit(std::move(out), {ia},
                  [ia, outer, inner, e, start, len](Graph& gg, std::size_t self) {
                      if (!gg.node_requires_grad(ia)) return;
                      const std::vector<double>& dy = *gg.node_value(self).grad;
                      std::vector<double>& da = gg.node_grad(ia);
                      for (std::size_t o = 0; o < outer; ++o) {
                          const double* srcp = dy.data() + o * len * inner;
                          double* dstp = da.data() + (o * e + start) * inner;
                          for (std::size_t i = 0; i < len * inner; ++i) dstp[i] += srcp[i];
                      }
                  });
}

Var scale_rows(const Var& x, const Var& s) {
    Graph& g = same_graph(x, s);
    const Tensor& tx = x.value();
    const Tensor& ts = s.value();
    if (tx.rank() != 2) {
        throw ShapeError("scale_rows: expected rank-2 input, got " + shape_str(tx.shape()));
    }
    const std::size_t t = tx.extent(0), c = tx.extent(1);
    if (ts.size() != t) {
        throw ShapeError("scale_rows: scale " + shape_str(ts.shape()) +
                         " does not match row count of " + shape_str(tx.shape()));
    }
    Tensor out(tx.shape());
    for (std::size_t r = 0; r < t; ++r)
        for (std::size_t j = 0; j < c; ++j) out[r * c + j] = tx[r * c + j] * ts[r];
    const std::size_t ix = x.id(), is = s.id();
    return g.emit(std::move(out), {ix, is}, [ix, is, t, c](Graph& gg, std::size_t self) {
        const std::vector<double>& dy = *gg.node_value(self).grad;
        const Tensor& vx = gg.node_value(ix);
        const Tensor& vs = gg.node_value(is);
        if (gg.node_requires_grad(ix)) {
            std::vector<double>& dx = gg.node_grad(ix);
            for (std::size_t r = 0; r < t; ++r)
                for (std::size_t j = 0; j < c; ++j) dx[r * c + j] += dy[r * c + j] * vs[r];
        }
        if (gg.node_requires_grad(is)) {
            std::vector<double>& ds = gg.node_grad(is);
            for (std::size_t r = 0; r < t; ++r) {
                double acc = 0.0;
                for (std::size_t j = 0; j < c; ++j) acc += dy[r * c + j] * vx[r * c + j];
                ds[r] += acc;
            }
        }
    });
}

// ---------------------------------------------------------------------------
// reductions

Var sum_all(const Var& a) {
    Graph& g = *a.graph();
    const Tensor& ta = a.value();
    double acc = 0.0;
    for (std::size_t i = 0; i < ta.size(); ++i) acc += ta[i];
    const std::size_t ia = a.id();
    return g.emit(Tensor::scalar(acc), {ia}, [ia](Graph& gg, std::size_t self) {
        if (!gg.node_requires_grad(ia)) return;
        const double dy = (*gg.node_value(self).grad)[0];
        std::vector<double>& da = gg.node_grad(ia);
        for (double& v : da) v += dy;
    });
}

Var mean_axes(const Var& a, std::vector<std::size_t> axes, bool keepdims) {
    Graph& g = *a.graph();
    const Tensor& ta = a.value();
    const std::size_t r = ta.rank();
    std::vector<bool> reduced(r, false);
    for (std::size_t ax : axes) {
        if (ax >= r) {
            throw ShapeError("mean_axes: axis " + std::to_string(ax) + " out of range for " +
                             shape_str(ta.shape()));
        }
        reduced[ax] = true;
    }
    Shape out_shape;
    std::size_t count = 1;
    for (std::size_t d = 0; d < r; ++d) {
        if (reduced[d]) {
            count *= ta.extent(d);
            if (keepdims) out_shape.push_back(1);
        } else {
            out_shape.push_back(ta.extent(d));
        }
    }
    if (out_shape.empty()) out_shape.push_back(1);

    // flat input index -> flat output index
    const std::vector<std::size_t> in_strides = row_major_strides(ta.shape());
    std::vector<std::size_t> out_stride_of_axis(r, 0);
    {
        const std::vector<std::size_t> out_strides = row_major_strides(out_shape);
        std::size_t od = 0;
        for (std::size_t d = 0; d < r; ++d) {
            if (reduced[d]) {
                if (keepdims) ++od;
                continue;
            }
            out_stride_of_axis[d] = out_strides[od++];
        }
    }
    std::vector<std::size_t> dst(ta.size());
    {
        std::vector<std::size_t> idx(r, 0);
        for (std::size_t i = 0; i < ta.size(); ++i) {
            std::size_t o = 0;
            for (std::size_t d = 0; d < r; ++d)
                if (!reduced[d]) o += idx[d] * out_stride_of_axis[d];
            dst[i] = o;
            for (std::size_t d = r; d-- > 0;) {
                if (++idx[d] < ta.extent(d)) break;
                idx[d] = 0;
            }
        }
    }
    Tensor out(out_shape, 0.0);
    for (std::size_t i = 0; i < ta.size(); ++i) out[dst[i]] += ta[i];
    const double inv = 1.0 / static_cast<double>(count);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= inv;
    const std::size_t ia = a.id();
    return g.emit(std::move(out), {ia}, [ia, dst, inv](Graph& gg, std::size_t self) {
        if (!gg.node_requires_grad(ia)) return;
        const std::vector<double>& dy = *gg.node_value(self).grad;
        std::vector<double>& da = gg.node_grad(ia);
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += dy[dst[i]] * inv;
    });
}

// ---------------------------------------------------------------------------
// activations and losses

Var relu(const Var& a) {
    Graph& g = *a.graph();
    const Tensor& ta = a.value();
    Tensor out(ta.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ta[i] > 0.0 ? ta[i] : 0.0;
    const std::size_t ia = a.id();
    return g.emit(std::move(out), {ia}, [ia](Graph& gg, std::size_t self) {
        if (!gg.node_requires_grad(ia)) return;
        const std::vector<double>& dy = *gg.node_value(self).grad;
        const Tensor& va = gg.node_value(ia);
        std::vector<double>& da = gg.node_grad(ia);
        for (std::size_t i = 0; i < dy.size(); ++i)
            if (va[i] > 0.0) da[i] += dy[i];
    });
}

Var sigmoid(const Var& a) {
    Graph& g = *a.graph();
    const Tensor& ta = a.value();
    Tensor out(ta.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = ta[i];
        if (v >= 0.0) {
            out[i] = 1.0 / (1.0 + std::exp(-v));
        } else {
            const double e = std::exp(v);
            out[i] = e / (1.0 + e);
        }
    }
    const std::size_t ia = a.id();
    return g.emit(std::move(out), {ia}, [ia](Graph& gg, std::size_t self) {
        if (!gg.node_requires_grad(ia)) return;
        const Tensor& y = gg.node_value(self);
        const std::vector<double>& dy = *y.grad;
        std::vector<double>& da = gg.node_grad(ia);
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * y[i] * (1.0 - y[i]);
    });
}

Var softmax(const Var& a, std::size_t axis) {
    Graph& g = *a.graph();
    const Tensor& ta = a.value();
    if (axis >= ta.rank()) {
        throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(ta.shape()));
    }
    const std::size_t e = ta.extent(axis);
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= ta.extent(d);
    for (std::size_t d = axis + 1; d < ta.rank(); ++d) inner *= ta.extent(d);
    Tensor out(ta.shape());
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * e * inner + in;
            double mx = ta[base];
            for (std::size_t j = 1; j < e; ++j) mx = std::max(mx, ta[base + j * inner]);
            double sum = 0.0;
            for (std::size_t j = 0; j < e; ++j) {
                const double v = std::exp(ta[base + j * inner] - mx);
                out[base + j * inner] = v;
                sum += v;
            }
            const double inv = 1.0 / sum;
            for (std::size_t j = 0; j < e; ++j) out[base + j * inner] *= inv;
        }
    }
    const std::size_t ia = a.id();
    return g.emit(std::move(out), {ia}, [ia, e, outer, inner](Graph& gg, std::size_t self) {
        if (!gg.node_requires_grad(ia)) return;
        const Tensor& y = gg.node_value(self);
        const std::vector<double>& dy = *y.grad;
        std::vector<double>& da = gg.node_grad(ia);
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = o * e * inner + in;
                double dot = 0.0;
                for (std::size_t j = 0; j < e; ++j)
                    dot += dy[base + j * inner] * y[base + j * inner];
                for (std::size_t j = 0; j < e; ++j) {
                    const std::size_t p = base + j * inner;
                    da[p] += y[p] * (dy[p] - dot);
                }
            }
        }
    });
}

Var cross_entropy(const Var& probs, const std::vector<std::size_t>& labels) {
    Graph& g = *probs.graph();
    const Tensor& tp = probs.value();
    if (tp.rank() != 2) {
        throw ShapeError("cross_entropy: expected [N x C] probabilities, got " +
                         shape_str(tp.shape()));
    }
    const std::size_t n = tp.extent(0), c = tp.extent(1);
    if (labels.size() != n) {
        throw InputError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " rows");
    }
    for (std::size_t label : labels) {
        if (label >= c) {
            throw InputError("cross_entropy: label " + std::to_string(label) +
                             " out of range for " + std::to_string(c) + " classes");
        }
    }
    // Guard against double underflow in saturated softmax outputs.
    const double floor_p = 1e-300;
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        loss -= std::log(std::max(tp[i * c + labels[i]], floor_p));
    }
    loss /= static_cast<double>(n);
    const std::size_t ip = probs.id();
    return g.emit(Tensor::scalar(loss), {ip}, [ip, labels, n, c, floor_p](Graph& gg, std::size_t self) {
        if (!gg.node_requires_grad(ip)) return;
        const double dy = (*gg.node_value(self).grad)[0];
        const Tensor& vp = gg.node_value(ip);
        std::vector<double>& dp = gg.node_grad(ip);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t pos = i * c + labels[i];
            dp[pos] -= dy / (static_cast<double>(n) * std::max(vp[pos], floor_p));
        }
    });
}

// ---------------------------------------------------------------------------
// dropout

Var dropout(const Var& x, double p, Rng& rng, bool train) {
    if (p < 0.0 || p >= 1.0) {
        throw ConfigError("dropout probability must lie in [0, 1), got " + std::to_string(p));
    }
    if (!train || p == 0.0) return x;
    Graph& g = *x.graph();
    const Tensor& tx = x.value();
    const double keep_scale = 1.0 / (1.0 - p);
    std::vector<double> mask(tx.size());
    for (double& m : mask) m = rng.uniform() < p ? 0.0 : keep_scale;
    Tensor out(tx.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = tx[i] * mask[i];
    const std::size_t ix = x.id();
    return g.emit(std::move(out), {ix}, [ix, mask](Graph& gg, std::size_t self) {
        if (!gg.node_requires_grad(ix)) return;
        const std::vector<double>& dy = *gg.node_value(self).grad;
        std::vector<double>& dx = gg.node_grad(ix);
        for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * mask[i];
    });
}

} // namespace stcn
