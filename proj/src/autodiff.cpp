#include "zsdg/autodiff.hpp"

#include "zsdg/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace zsdg::ad {

namespace {

void require_same_graph(const Var& a, const Var& b, const char* op) {
    if (!a.valid() || !b.valid()) {
        throw Error(std::string(op) + ": operand is not attached to a graph");
    }
    if (&a.graph() != &b.graph()) {
        throw Error(std::string(op) + ": operands belong to different graphs");
    }
}

void require_rank2(const Tensor& t, const char* op) {
    if (t.rank() != 2) {
        throw ShapeError(std::string(op) + ": expected a matrix, got " +
                         shape_string(t.shape()));
    }
}

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " +
                     shape_string(b));
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
    require_same_graph(a, b, op);
    if (a.shape() != b.shape()) shape_mismatch(op, a.shape(), b.shape());
}

// C (m x n) += A (m x k) * B (k x n)
// Each output element accumulates over p in a fixed order whatever the vector
// width, so the wider clone gives bit-identical results.
#if defined(__x86_64__) && defined(__GNUC__)
__attribute__((target_clones("avx2", "default")))
#endif
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
    // Four rows of A share each pass over a row of B.
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
        double* c0 = c + i * n;
        double* c1 = c0 + n;
        double* c2 = c1 + n;
        double* c3 = c2 + n;
        const double* a0 = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double s0 = a0[p], s1 = a0[k + p], s2 = a0[2 * k + p], s3 = a0[3 * k + p];
            if (s0 == 0.0 && s1 == 0.0 && s2 == 0.0 && s3 == 0.0) continue;
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                const double bj = brow[j];
                c0[j] += s0 * bj;
                c1[j] += s1 * bj;
                c2[j] += s2 * bj;
                c3[j] += s3 * bj;
            }
        }
    }
    for (; i < m; ++i) {
        double* crow = c + i * n;
        const double* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double s = arow[p];
            if (s == 0.0) continue;
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += s * brow[j];
        }
    }
}

// C (m x k) += A (m x n) * B^T, B is (k x n). Transposing B first lets the
// inner loop run over contiguous rows like gemm_nn.
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
             std::size_t k) {
    std::vector<double> bt(n * k);
    for (std::size_t p = 0; p < k; ++p) {
        for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
    }
    gemm_nn(a, bt.data(), c, m, n, k);
}

// C (k x n) += A^T * B, A is (m x k), B is (m x n)
#if defined(__x86_64__) && defined(__GNUC__)
__attribute__((target_clones("avx2", "default")))
#endif
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
    // Four batch rows per sweep over C; each element still accumulates over i
    // in increasing order.
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
        const double* a0 = a + i * k;
        const double* b0 = b + i * n;
        const double* b1 = b0 + n;
        const double* b2 = b1 + n;
        const double* b3 = b2 + n;
        for (std::size_t p = 0; p < k; ++p) {
            const double s0 = a0[p], s1 = a0[k + p], s2 = a0[2 * k + p], s3 = a0[3 * k + p];
            double* crow = c + p * n;
            if (s0 != 0.0 && s1 != 0.0 && s2 != 0.0 && s3 != 0.0) {
                for (std::size_t j = 0; j < n; ++j) {
                    double v = crow[j];
                    v += s0 * b0[j];
                    v += s1 * b1[j];
                    v += s2 * b2[j];
                    v += s3 * b3[j];
                    crow[j] = v;
                }
                continue;
            }
            const double ss[4] = {s0, s1, s2, s3};
            const double* bs[4] = {b0, b1, b2, b3};
            for (int r = 0; r < 4; ++r) {
                if (ss[r] == 0.0) continue;
                for (std::size_t j = 0; j < n; ++j) crow[j] += ss[r] * bs[r][j];
            }
        }
    }
    for (; i < m; ++i) {
        const double* arow = a + i * k;
        const double* brow = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double s = arow[p];
            if (s == 0.0) continue;
            double* crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += s * brow[j];
        }
    }
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

const Tensor& Var::value() const { return graph_->value(id_); }
const Tensor& Var::grad() const { return graph_->grad(id_); }

Var Graph::constant(Tensor value) {
    return emit(std::move(value), {}, nullptr);
}

Var Graph::parameter(Tensor value) {
    Var v = emit(std::move(value), {}, nullptr);
    nodes_[v.id()].needs_grad = true;
    return v;
}

Var Graph::emit(Tensor value, std::vector<std::size_t> inputs, Backprop backprop) {
    if (backward_done_) {
        throw Error("graph already differentiated; build a new graph for further ops");
    }
    Node node;
    node.value = std::move(value);
    for (std::size_t in : inputs) node.needs_grad = node.needs_grad || nodes_[in].needs_grad;
    node.inputs = std::move(inputs);
    if (node.needs_grad) node.backprop = std::move(backprop);
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

const Tensor& Graph::grad(std::size_t id) const {
    if (!backward_done_) throw Error("gradient requested before backward()");
    return grads_[id];
}

void Graph::zero_grad() {
    grads_.clear();
    backward_done_ = false;
}

void Graph::backward(Var root) {
    if (!root.valid() || &root.graph() != this) {
        throw Error("backward: root does not belong to this graph");
    }
    if (backward_done_) {
        throw Error("backward: already called on this graph; call zero_grad() first");
    }
    if (nodes_[root.id()].value.size() != 1) {
        throw ShapeError("backward: root must be scalar, got " +
                         shape_string(nodes_[root.id()].value.shape()));
    }
    grads_.clear();
    grads_.reserve(nodes_.size());
    for (const Node& n : nodes_) grads_.emplace_back(n.value.shape(), 0.0);
    backward_done_ = true;
    grads_[root.id()][0] = 1.0;
    for (std::size_t i = root.id() + 1; i-- > 0;) {
        const Node& n = nodes_[i];
        if (n.needs_grad && n.backprop) n.backprop(*this, i);
    }
}

Var add(Var a, Var b) {
    require_same_shape(a, b, "add");
    Tensor out = a.value();
    const auto bv = b.value().values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    const std::size_t ia = a.id(), ib = b.id();
    return a.graph().emit(std::move(out), {ia, ib}, [ia, ib](Graph& g, std::size_t self) {
        const Tensor& gout = g.grad(self);
        for (std::size_t in : {ia, ib}) {
            if (!g.needs_grad(in)) continue;
            Tensor& gin = g.grad_ref(in);
            for (std::size_t i = 0; i < gin.size(); ++i) gin[i] += gout[i];
        }
    });
}

Var sub(Var a, Var b) {
    require_same_shape(a, b, "sub");
    Tensor out = a.value();
    const auto bv = b.value().values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    const std::size_t ia = a.id(), ib = b.id();
    return a.graph().emit(std::move(out), {ia, ib}, [ia, ib](Graph& g, std::size_t self) {
        const Tensor& gout = g.grad(self);
        if (g.needs_grad(ia)) {
            Tensor& ga = g.grad_ref(ia);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gout[i];
        }
        if (g.needs_grad(ib)) {
            Tensor& gb = g.grad_ref(ib);
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= gout[i];
        }
    });
}

Var scale(Var a, double factor) {
    Tensor out = a.value();
    for (double& v : out.values()) v *= factor;
    const std::size_t ia = a.id();
    return a.graph().emit(std::move(out), {ia}, [ia, factor](Graph& g, std::size_t self) {
        const Tensor& gout = g.grad(self);
        Tensor& ga = g.grad_ref(ia);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += factor * gout[i];
    });
}

Var mul(Var a, Var b) {
    require_same_shape(a, b, "mul");
    Tensor out = a.value();
    const auto bv = b.value().values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    const std::size_t ia = a.id(), ib = b.id();
    return a.graph().emit(std::move(out), {ia, ib}, [ia, ib](Graph& g, std::size_t self) {
        const Tensor& gout = g.grad(self);
        const Tensor& av = g.value(ia);
        const Tensor& bv = g.value(ib);
        if (g.needs_grad(ia)) {
            Tensor& ga = g.grad_ref(ia);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gout[i] * bv[i];
        }
        if (g.needs_grad(ib)) {
            Tensor& gb = g.grad_ref(ib);
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gout[i] * av[i];
        }
    });
}

Var matmul(Var a, Var b) {
    require_same_graph(a, b, "matmul");
    require_rank2(a.value(), "matmul");
    require_rank2(b.value(), "matmul");
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    if (b.shape()[0] != k) shape_mismatch("matmul", a.shape(), b.shape());
    Tensor out({m, n});
    gemm_nn(a.value().values().data(), b.value().values().data(), out.values().data(), m, k,
            n);
    const std::size_t ia = a.id(), ib = b.id();
    return a.graph().emit(std::move(out), {ia, ib},
                          [ia, ib, m, k, n](Graph& g, std::size_t self) {
                              const double* gout = g.grad(self).values().data();
                              if (g.needs_grad(ia)) {
                                  gemm_nt(gout, g.value(ib).values().data(),
                                          g.grad_ref(ia).values().data(), m, n, k);
                              }
                              if (g.needs_grad(ib)) {
                                  gemm_tn(g.value(ia).values().data(), gout,
                                          g.grad_ref(ib).values().data(), m, k, n);
                              }
                          });
}

Var add_row(Var a, Var row) {
    require_same_graph(a, row, "add_row");
    require_rank2(a.value(), "add_row");
    require_rank2(row.value(), "add_row");
    const std::size_t m = a.shape()[0], n = a.shape()[1];
    if (row.shape()[0] != 1 || row.shape()[1] != n) {
        shape_mismatch("add_row", a.shape(), row.shape());
    }
    Tensor out = a.value();
    const auto rv = row.value().values();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] += rv[j];
    }
    const std::size_t ia = a.id(), ir = row.id();
    return a.graph().emit(std::move(out), {ia, ir}, [ia, ir, m, n](Graph& g, std::size_t self) {
        const Tensor& gout = g.grad(self);
        if (g.needs_grad(ia)) {
            Tensor& ga = g.grad_ref(ia);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gout[i];
        }
        if (g.needs_grad(ir)) {
            Tensor& gr = g.grad_ref(ir);
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) gr[j] += gout[i * n + j];
            }
        }
    });
}

Var relu(Var a) {
    Tensor out = a.value();
    for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
    const std::size_t ia = a.id();
    return a.graph().emit(std::move(out), {ia}, [ia](Graph& g, std::size_t self) {
        const Tensor& gout = g.grad(self);
        const Tensor& x = g.value(ia);
        Tensor& ga = g.grad_ref(ia);
        for (std::size_t i = 0; i < ga.size(); ++i) {
            if (x[i] > 0.0) ga[i] += gout[i];
        }
    });
}

Var softplus(Var a) {
    Tensor out = a.value();
    for (double& v : out.values()) v = std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v)));
    const std::size_t ia = a.id();
    return a.graph().emit(std::move(out), {ia}, [ia](Graph& g, std::size_t self) {
        const Tensor& gout = g.grad(self);
        const Tensor& x = g.value(ia);
        Tensor& ga = g.grad_ref(ia);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gout[i] * sigmoid(x[i]);
    });
}

Var tanh(Var a) {
    Tensor out = a.value();
    for (double& v : out.values()) v = std::tanh(v);
    const std::size_t ia = a.id();
    return a.graph().emit(std::move(out), {ia}, [ia](Graph& g, std::size_t self) {
        const Tensor& gout = g.grad(self);
        const Tensor& y = g.value(self);
        Tensor& ga = g.grad_ref(ia);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gout[i] * (1.0 - y[i] * y[i]);
    });
}

Var clamp01(Var a) {
    Tensor out = a.value();
    for (double& v : out.values()) v = std::clamp(v, 0.0, 1.0);
    const std::size_t ia = a.id();
    return a.graph().emit(std::move(out), {ia}, [ia](Graph& g, std::size_t self) {
        const Tensor& gout = g.grad(self);
        const Tensor& x = g.value(ia);
        Tensor& ga = g.grad_ref(ia);
        for (std::size_t i = 0; i < ga.size(); ++i) {
            if (x[i] >= 0.0 && x[i] <= 1.0) ga[i] += gout[i];
        }
    });
}

Var reshape(Var a, Shape shape) {
    if (shape_size(shape) != a.value().size()) {
        shape_mismatch("reshape", a.shape(), shape);
    }
    const auto src = a.value().values();
    Tensor out(std::move(shape), std::vector<double>(src.begin(), src.end()));
    const std::size_t ia = a.id();
    return a.graph().emit(std::move(out), {ia}, [ia](Graph& g, std::size_t self) {
        const Tensor& gout = g.grad(self);
        Tensor& ga = g.grad_ref(ia);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gout[i];
    });
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no operands");
    const Var& first = parts.front();
    require_rank2(first.value(), "concat_rows");
    const std::size_t n = first.shape()[1];
    std::size_t m = 0;
    std::vector<std::size_t> ids;
    for (const Var& p : parts) {
        require_same_graph(first, p, "concat_rows");
        require_rank2(p.value(), "concat_rows");
        if (p.shape()[1] != n) shape_mismatch("concat_rows", first.shape(), p.shape());
        m += p.shape()[0];
        ids.push_back(p.id());
    }
    Tensor out({m, n});
    std::size_t offset = 0;
    for (const Var& p : parts) {
        const auto v = p.value().values();
        std::copy(v.begin(), v.end(), out.values().begin() + static_cast<std::ptrdiff_t>(offset));
        offset += v.size();
    }
    return first.graph().emit(std::move(out), ids, [ids](Graph& g, std::size_t self) {
        const Tensor& gout = g.grad(self);
        std::size_t off = 0;
        for (std::size_t in : ids) {
            const std::size_t len = g.value(in).size();
            if (g.needs_grad(in)) {
                Tensor& gin = g.grad_ref(in);
                for (std::size_t i = 0; i < len; ++i) gin[i] += gout[off + i];
            }
            off += len;
        }
    });
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
    require_rank2(a.value(), "slice_rows");
    const std::size_t m = a.shape()[0], n = a.shape()[1];
    if (begin > end || end > m) {
        throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") outside " + shape_string(a.shape()));
    }
    Tensor out({end - begin, n});
    const auto v = a.value().values();
    std::copy(v.begin() + static_cast<std::ptrdiff_t>(begin * n),
              v.begin() + static_cast<std::ptrdiff_t>(end * n), out.values().begin());
    const std::size_t ia = a.id();
    return a.graph().emit(std::move(out), {ia}, [ia, begin, n](Graph& g, std::size_t self) {
        const Tensor& gout = g.grad(self);
        Tensor& ga = g.grad_ref(ia);
        for (std::size_t i = 0; i < gout.size(); ++i) ga[begin * n + i] += gout[i];
    });
}

Var mean_rows(Var a) {
    require_rank2(a.value(), "mean_rows");
    const std::size_t m = a.shape()[0], n = a.shape()[1];
    if (m == 0) throw ShapeError("mean_rows: empty matrix");
    Tensor out({1, n});
    const auto v = a.value().values();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) out[j] += v[i * n + j];
    }
    for (double& x : out.values()) x /= static_cast<double>(m);
    const std::size_t ia = a.id();
    return a.graph().emit(std::move(out), {ia}, [ia, m, n](Graph& g, std::size_t self) {
        const Tensor& gout = g.grad(self);
        Tensor& ga = g.grad_ref(ia);
        const double inv = 1.0 / static_cast<double>(m);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += gout[j] * inv;
        }
    });
}

Var sum(Var a) {
    double total = 0.0;
    for (double v : a.value().values()) total += v;
    const std::size_t ia = a.id();
    return a.graph().emit(Tensor::scalar(total), {ia}, [ia](Graph& g, std::size_t self) {
        const double gout = g.grad(self)[0];
        Tensor& ga = g.grad_ref(ia);
        for (double& x : ga.values()) x += gout;
    });
}

Var mean(Var a) {
    const std::size_t n = a.value().size();
    if (n == 0) throw ShapeError("mean: empty tensor");
    double total = 0.0;
    for (double v : a.value().values()) total += v;
    const double inv = 1.0 / static_cast<double>(n);
    const std::size_t ia = a.id();
    return a.graph().emit(Tensor::scalar(total * inv), {ia}, [ia, inv](Graph& g, std::size_t self) {
        const double gout = g.grad(self)[0] * inv;
        Tensor& ga = g.grad_ref(ia);
        for (double& x : ga.values()) x += gout;
    });
}

Var mse_loss(Var pred, Var target) {
    require_same_shape(pred, target, "mse_loss");
    const std::size_t n = pred.value().size();
    if (n == 0) throw ShapeError("mse_loss: empty tensors");
    const auto p = pred.value().values();
    const auto t = target.value().values();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = p[i] - t[i];
        total += d * d;
    }
    const double inv = 1.0 / static_cast<double>(n);
    const std::size_t ip = pred.id(), it = target.id();
    return pred.graph().emit(
        Tensor::scalar(total * inv), {ip, it}, [ip, it, inv](Graph& g, std::size_t self) {
            const double gout = g.grad(self)[0] * 2.0 * inv;
            const Tensor& pv = g.value(ip);
            const Tensor& tv = g.value(it);
            if (g.needs_grad(ip)) {
                Tensor& gp = g.grad_ref(ip);
                for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += gout * (pv[i] - tv[i]);
            }
            if (g.needs_grad(it)) {
                Tensor& gt = g.grad_ref(it);
                for (std::size_t i = 0; i < gt.size(); ++i) gt[i] -= gout * (pv[i] - tv[i]);
            }
        });
}

namespace {

void check_labels(const Tensor& logits, std::span<const std::size_t> labels) {
    require_rank2(logits, "softmax_cross_entropy");
    const std::size_t batch = logits.shape()[0], classes = logits.shape()[1];
    if (batch == 0) throw ShapeError("softmax_cross_entropy: empty batch");
    if (labels.size() != batch) {
        throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for logits " + shape_string(logits.shape()));
    }
    for (std::size_t i = 0; i < batch; ++i) {
        if (labels[i] >= classes) {
            throw ShapeError("softmax_cross_entropy: label " + std::to_string(labels[i]) +
                             " out of range for " + std::to_string(classes) + " classes");
        }
    }
}

// Row-wise softmax probabilities and the summed -log p[label].
double softmax_rows(const Tensor& logits, std::span<const std::size_t> labels, Tensor* probs) {
    const std::size_t batch = logits.shape()[0], classes = logits.shape()[1];
    double total = 0.0;
    for (std::size_t i = 0; i < batch; ++i) {
        const auto row = logits.row(i);
        const double mx = *std::max_element(row.begin(), row.end());
        double z = 0.0;
        for (double v : row) z += std::exp(v - mx);
        const double log_z = std::log(z);
        total += -(row[labels[i]] - mx - log_z);
        if (probs) {
            for (std::size_t c = 0; c < classes; ++c) {
                (*probs)[i * classes + c] = std::exp(row[c] - mx - log_z);
            }
        }
    }
    return total;
}

}  // namespace

double cross_entropy_value(const Tensor& logits, std::span<const std::size_t> labels) {
    check_labels(logits, labels);
    return softmax_rows(logits, labels, nullptr) / static_cast<double>(logits.shape()[0]);
}

Var softmax_cross_entropy(Var logits, std::span<const std::size_t> labels) {
    check_labels(logits.value(), labels);
    const std::size_t batch = logits.shape()[0];
    Tensor probs(logits.shape());
    const double total = softmax_rows(logits.value(), labels, &probs);
    std::vector<std::size_t> y(labels.begin(), labels.end());
    const std::size_t il = logits.id();
    return logits.graph().emit(
        Tensor::scalar(total / static_cast<double>(batch)), {il},
        [il, probs = std::move(probs), y = std::move(y), batch](Graph& g, std::size_t self) {
            const double gout = g.grad(self)[0] / static_cast<double>(batch);
            Tensor& gl = g.grad_ref(il);
            const std::size_t classes = gl.cols();
            for (std::size_t i = 0; i < batch; ++i) {
                for (std::size_t c = 0; c < classes; ++c) {
                    const double indicator = c == y[i] ? 1.0 : 0.0;
                    gl[i * classes + c] += gout * (probs[i * classes + c] - indicator);
                }
            }
        });
}

}  // namespace zsdg::ad
