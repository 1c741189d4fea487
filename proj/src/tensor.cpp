#include "derl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace derl {

namespace {

bool g_finite_checks = false;

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

long checked_numel(const Shape& shape) {
    if (shape.empty() || shape.size() > 2)
        throw ShapeError("tensor rank must be 1 or 2, got " + shape_str(shape));
    long n = 1;
    for (long e : shape) {
        if (e <= 0) throw ShapeError("non-positive extent in shape " + shape_str(shape));
        n *= e;
    }
    return n;
}

void check_finite(const detail::Node& n) {
    if (!g_finite_checks) return;
    for (double v : n.value)
        if (!std::isfinite(v))
            throw DomainError(std::string("non-finite value produced by op '") + n.op + "'");
}

std::shared_ptr<detail::Node> make_node(const char* op, Shape shape,
                                        std::vector<std::shared_ptr<detail::Node>> parents) {
    auto n = std::make_shared<detail::Node>();
    n->op = op;
    n->shape = std::move(shape);
    n->value.resize(static_cast<size_t>(n->numel()));
    n->parents = std::move(parents);
    for (const auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    return n;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

long row_count(const Shape& s) { return s.size() == 2 ? s[0] : 1; }
long col_count(const Shape& s) { return s.size() == 2 ? s[1] : s[0]; }

}  // namespace

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

void set_finite_checks(bool enabled) { g_finite_checks = enabled; }
bool finite_checks_enabled() { return g_finite_checks; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    checked_numel(shape);
    auto n = make_node("leaf", std::move(shape), {});
    n->requires_grad = requires_grad;
    return wrap(std::move(n));
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.node()->value.begin(), t.node()->value.end(), v);
    return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
    long n = checked_numel(shape);
    if (static_cast<size_t>(n) != data.size())
        throw ShapeError("data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    auto node = make_node("leaf", std::move(shape), {});
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    return wrap(std::move(node));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
    return from({1}, {v}, requires_grad);
}

long Tensor::rows() const { return row_count(node_->shape); }
long Tensor::cols() const { return col_count(node_->shape); }

std::span<const double> Tensor::grad() const {
    node_->ensure_grad();
    return node_->grad;
}
std::span<double> Tensor::grad_mut() {
    node_->ensure_grad();
    return node_->grad;
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
    return node_->value[0];
}

double Tensor::at(long i) const { return node_->value[static_cast<size_t>(i)]; }
double Tensor::at(long i, long j) const {
    return node_->value[static_cast<size_t>(i * cols() + j)];
}

void Tensor::zero_grad() {
    node_->ensure_grad();
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
    auto n = make_node("leaf", node_->shape, {});
    n->value = node_->value;
    return wrap(std::move(n));
}

Tensor Tensor::clone_leaf() const {
    auto n = make_node("leaf", node_->shape, {});
    n->value = node_->value;
    n->requires_grad = node_->requires_grad;
    return wrap(std::move(n));
}

void Tensor::backward() const {
    if (numel() != 1)
        throw ContractError("backward() requires a scalar loss, got " + shape_str(shape()));
    if (node_->backward_done)
        throw ContractError("backward() called twice on the same graph");
    node_->backward_done = true;

    // Post-order DFS, then reversed, gives a valid topological order.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    struct Frame {
        detail::Node* n;
        size_t next;
    };
    std::vector<Frame> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.n->parents.size()) {
            detail::Node* p = f.n->parents[f.next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }

    node_->ensure_grad();
    node_->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* n = *it;
        if (n->backward_fn) {
            n->ensure_grad();
            for (const auto& p : n->parents) p->ensure_grad();
            n->backward_fn(*n);
        }
    }
}

// ---- kernels ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
        throw ShapeError("matmul: non-conforming shapes " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    long m = a.rows(), k = a.cols(), n = b.cols();
    auto node = make_node("matmul", {m, n}, {a.node(), b.node()});
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* pc = node->value.data();
    for (long i = 0; i < m; ++i)
        for (long j = 0; j < k; ++j) {
            double aij = pa[i * k + j];
            for (long c = 0; c < n; ++c) pc[i * n + c] += aij * pb[j * n + c];
        }
    check_finite(*node);
    node->backward_fn = [m, k, n](detail::Node& out) {
        auto& pa = out.parents[0];
        auto& pb = out.parents[1];
        const double* g = out.grad.data();
        if (pa->requires_grad) {
            double* ga = pa->grad.data();
            const double* vb = pb->value.data();
            for (long i = 0; i < m; ++i)
                for (long c = 0; c < n; ++c) {
                    double gic = g[i * n + c];
                    for (long j = 0; j < k; ++j) ga[i * k + j] += gic * vb[j * n + c];
                }
        }
        if (pb->requires_grad) {
            double* gb = pb->grad.data();
            const double* va = pa->value.data();
            for (long i = 0; i < m; ++i)
                for (long j = 0; j < k; ++j) {
                    double aij = va[i * k + j];
                    for (long c = 0; c < n; ++c) gb[j * n + c] += aij * g[i * n + c];
                }
        }
    };
    return Tensor::wrap(node);
}

Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw ShapeError("transpose: rank-2 required, got " + shape_str(a.shape()));
    long m = a.rows(), n = a.cols();
    auto node = make_node("transpose", {n, m}, {a.node()});
    for (long i = 0; i < m; ++i)
        for (long j = 0; j < n; ++j) node->value[j * m + i] = a.at(i, j);
    node->backward_fn = [m, n](detail::Node& out) {
        auto& p = out.parents[0];
        if (!p->requires_grad) return;
        for (long i = 0; i < m; ++i)
            for (long j = 0; j < n; ++j) p->grad[i * n + j] += out.grad[j * m + i];
    };
    return Tensor::wrap(node);
}

namespace {

Tensor elementwise_binary(const char* op, const Tensor& a, const Tensor& b,
                          double (*fwd)(double, double),
                          void (*bwd)(double, double, double, double&, double&)) {
    require_same_shape(op, a, b);
    auto node = make_node(op, a.shape(), {a.node(), b.node()});
    for (size_t i = 0; i < node->value.size(); ++i)
        node->value[i] = fwd(a.data()[i], b.data()[i]);
    check_finite(*node);
    node->backward_fn = [bwd](detail::Node& out) {
        auto& pa = out.parents[0];
        auto& pb = out.parents[1];
        for (size_t i = 0; i < out.value.size(); ++i) {
            double da = 0, db = 0;
            bwd(pa->value[i], pb->value[i], out.grad[i], da, db);
            if (pa->requires_grad) pa->grad[i] += da;
            if (pb->requires_grad) pb->grad[i] += db;
        }
    };
    return Tensor::wrap(node);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return elementwise_binary(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double, double, double g, double& da, double& db) {
            da = g;
            db = g;
        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return elementwise_binary(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double, double, double g, double& da, double& db) {
            da = g;
            db = -g;
        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return elementwise_binary(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double x, double y, double g, double& da, double& db) {
            da = g * y;
            db = g * x;
        });
}

Tensor scale(const Tensor& a, double c) {
    auto node = make_node("scale", a.shape(), {a.node()});
    for (size_t i = 0; i < node->value.size(); ++i) node->value[i] = c * a.data()[i];
    check_finite(*node);
    node->backward_fn = [c](detail::Node& out) {
        auto& p = out.parents[0];
        if (!p->requires_grad) return;
        for (size_t i = 0; i < out.value.size(); ++i) p->grad[i] += c * out.grad[i];
    };
    return Tensor::wrap(node);
}

Tensor add_rowwise(const Tensor& m, const Tensor& row) {
    if (m.rank() != 2 || row.rank() != 1 || row.numel() != m.cols())
        throw ShapeError("add_rowwise: shapes " + shape_str(m.shape()) + " vs " +
                         shape_str(row.shape()));
    long r = m.rows(), c = m.cols();
    auto node = make_node("add_rowwise", m.shape(), {m.node(), row.node()});
    for (long i = 0; i < r; ++i)
        for (long j = 0; j < c; ++j) node->value[i * c + j] = m.at(i, j) + row.at(j);
    check_finite(*node);
    node->backward_fn = [r, c](detail::Node& out) {
        auto& pm = out.parents[0];
        auto& pr = out.parents[1];
        for (long i = 0; i < r; ++i)
            for (long j = 0; j < c; ++j) {
                double g = out.grad[i * c + j];
                if (pm->requires_grad) pm->grad[i * c + j] += g;
                if (pr->requires_grad) pr->grad[j] += g;
            }
    };
    return Tensor::wrap(node);
}

Tensor mul_rowwise(const Tensor& m, const Tensor& row) {
    if (m.rank() != 2 || row.rank() != 1 || row.numel() != m.cols())
        throw ShapeError("mul_rowwise: shapes " + shape_str(m.shape()) + " vs " +
                         shape_str(row.shape()));
    long r = m.rows(), c = m.cols();
    auto node = make_node("mul_rowwise", m.shape(), {m.node(), row.node()});
    for (long i = 0; i < r; ++i)
        for (long j = 0; j < c; ++j) node->value[i * c + j] = m.at(i, j) * row.at(j);
    check_finite(*node);
    node->backward_fn = [r, c](detail::Node& out) {
        auto& pm = out.parents[0];
        auto& pr = out.parents[1];
        for (long i = 0; i < r; ++i)
            for (long j = 0; j < c; ++j) {
                double g = out.grad[i * c + j];
                if (pm->requires_grad) pm->grad[i * c + j] += g * pr->value[j];
                if (pr->requires_grad) pr->grad[j] += g * pm->value[i * c + j];
            }
    };
    return Tensor::wrap(node);
}

Tensor scale_rows(const Tensor& m, const Tensor& col) {
    if (m.rank() != 2 || col.rank() != 1 || col.numel() != m.rows())
        throw ShapeError("scale_rows: shapes " + shape_str(m.shape()) + " vs " +
                         shape_str(col.shape()));
    long r = m.rows(), c = m.cols();
    auto node = make_node("scale_rows", m.shape(), {m.node(), col.node()});
    for (long i = 0; i < r; ++i)
        for (long j = 0; j < c; ++j) node->value[i * c + j] = m.at(i, j) * col.at(i);
    check_finite(*node);
    node->backward_fn = [r, c](detail::Node& out) {
        auto& pm = out.parents[0];
        auto& pc = out.parents[1];
        for (long i = 0; i < r; ++i)
            for (long j = 0; j < c; ++j) {
                double g = out.grad[i * c + j];
                if (pm->requires_grad) pm->grad[i * c + j] += g * pc->value[i];
                if (pc->requires_grad) pc->grad[i] += g * pm->value[i * c + j];
            }
    };
    return Tensor::wrap(node);
}

Tensor concat(const Tensor& a, const Tensor& b, int axis) {
    if (a.rank() == 1 && b.rank() == 1 && axis == 0) {
        long na = a.numel(), nb = b.numel();
        auto node = make_node("concat", {na + nb}, {a.node(), b.node()});
        std::copy(a.data().begin(), a.data().end(), node->value.begin());
        std::copy(b.data().begin(), b.data().end(), node->value.begin() + na);
        node->backward_fn = [na, nb](detail::Node& out) {
            auto& pa = out.parents[0];
            auto& pb = out.parents[1];
            if (pa->requires_grad)
                for (long i = 0; i < na; ++i) pa->grad[i] += out.grad[i];
            if (pb->requires_grad)
                for (long i = 0; i < nb; ++i) pb->grad[i] += out.grad[na + i];
        };
        return Tensor::wrap(node);
    }
    if (a.rank() != 2 || b.rank() != 2 || axis < 0 || axis > 1)
        throw ShapeError("concat: unsupported ranks/axis for " + shape_str(a.shape()) +
                         ", " + shape_str(b.shape()));
    if (axis == 0 && a.cols() != b.cols())
        throw ShapeError("concat axis 0: column mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    if (axis == 1 && a.rows() != b.rows())
        throw ShapeError("concat axis 1: row mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    long ra = a.rows(), ca = a.cols(), rb = b.rows(), cb = b.cols();
    Shape out_shape = axis == 0 ? Shape{ra + rb, ca} : Shape{ra, ca + cb};
    auto node = make_node("concat", out_shape, {a.node(), b.node()});
    long oc = out_shape[1];
    if (axis == 0) {
        std::copy(a.data().begin(), a.data().end(), node->value.begin());
        std::copy(b.data().begin(), b.data().end(), node->value.begin() + ra * ca);
    } else {
        for (long i = 0; i < ra; ++i) {
            for (long j = 0; j < ca; ++j) node->value[i * oc + j] = a.at(i, j);
            for (long j = 0; j < cb; ++j) node->value[i * oc + ca + j] = b.at(i, j);
        }
    }
    node->backward_fn = [axis, ra, ca, rb, cb, oc](detail::Node& out) {
        auto& pa = out.parents[0];
        auto& pb = out.parents[1];
        if (axis == 0) {
            if (pa->requires_grad)
                for (long i = 0; i < ra * ca; ++i) pa->grad[i] += out.grad[i];
            if (pb->requires_grad)
                for (long i = 0; i < rb * cb; ++i) pb->grad[i] += out.grad[ra * ca + i];
        } else {
            for (long i = 0; i < ra; ++i) {
                if (pa->requires_grad)
                    for (long j = 0; j < ca; ++j) pa->grad[i * ca + j] += out.grad[i * oc + j];
                if (pb->requires_grad)
                    for (long j = 0; j < cb; ++j) pb->grad[i * cb + j] += out.grad[i * oc + ca + j];
            }
        }
    };
    return Tensor::wrap(node);
}

Tensor slice(const Tensor& a, int axis, long begin, long end) {
    if (a.rank() == 1) {
        if (axis != 0 || begin < 0 || end > a.numel() || begin >= end)
            throw ShapeError("slice: bad range on " + shape_str(a.shape()));
        auto node = make_node("slice", {end - begin}, {a.node()});
        std::copy(a.data().begin() + begin, a.data().begin() + end, node->value.begin());
        node->backward_fn = [begin, end](detail::Node& out) {
            auto& p = out.parents[0];
            if (!p->requires_grad) return;
            for (long i = begin; i < end; ++i) p->grad[i] += out.grad[i - begin];
        };
        return Tensor::wrap(node);
    }
    if (a.rank() != 2 || axis < 0 || axis > 1)
        throw ShapeError("slice: unsupported rank/axis for " + shape_str(a.shape()));
    long r = a.rows(), c = a.cols();
    long limit = axis == 0 ? r : c;
    if (begin < 0 || end > limit || begin >= end)
        throw ShapeError("slice: bad range [" + std::to_string(begin) + "," +
                         std::to_string(end) + ") on " + shape_str(a.shape()));
    Shape out_shape = axis == 0 ? Shape{end - begin, c} : Shape{r, end - begin};
    auto node = make_node("slice", out_shape, {a.node()});
    long oc = out_shape[1];
    for (long i = 0; i < out_shape[0]; ++i)
        for (long j = 0; j < oc; ++j)
            node->value[i * oc + j] = axis == 0 ? a.at(i + begin, j) : a.at(i, j + begin);
    node->backward_fn = [axis, begin, c, oc, orows = out_shape[0]](detail::Node& out) {
        auto& p = out.parents[0];
        if (!p->requires_grad) return;
        for (long i = 0; i < orows; ++i)
            for (long j = 0; j < oc; ++j) {
                long src = axis == 0 ? (i + begin) * c + j : i * c + (j + begin);
                p->grad[src] += out.grad[i * oc + j];
            }
    };
    return Tensor::wrap(node);
}

Tensor mean_axis(const Tensor& m, int axis) {
    if (m.rank() != 2 || axis < 0 || axis > 1)
        throw ShapeError("mean_axis: rank-2 required, got " + shape_str(m.shape()));
    long r = m.rows(), c = m.cols();
    long out_n = axis == 0 ? c : r;
    auto node = make_node("mean_axis", {out_n}, {m.node()});
    for (long i = 0; i < r; ++i)
        for (long j = 0; j < c; ++j) node->value[axis == 0 ? j : i] += m.at(i, j);
    double inv = axis == 0 ? 1.0 / r : 1.0 / c;
    for (auto& v : node->value) v *= inv;
    node->backward_fn = [axis, r, c, inv](detail::Node& out) {
        auto& p = out.parents[0];
        if (!p->requires_grad) return;
        for (long i = 0; i < r; ++i)
            for (long j = 0; j < c; ++j)
                p->grad[i * c + j] += inv * out.grad[axis == 0 ? j : i];
    };
    return Tensor::wrap(node);
}

Tensor mean_all(const Tensor& a) {
    auto node = make_node("mean_all", {1}, {a.node()});
    double s = 0;
    for (double v : a.data()) s += v;
    double inv = 1.0 / static_cast<double>(a.numel());
    node->value[0] = s * inv;
    node->backward_fn = [inv](detail::Node& out) {
        auto& p = out.parents[0];
        if (!p->requires_grad) return;
        for (auto& g : p->grad) g += inv * out.grad[0];
    };
    return Tensor::wrap(node);
}

Tensor sum_all(const Tensor& a) {
    auto node = make_node("sum_all", {1}, {a.node()});
    double s = 0;
    for (double v : a.data()) s += v;
    node->value[0] = s;
    node->backward_fn = [](detail::Node& out) {
        auto& p = out.parents[0];
        if (!p->requires_grad) return;
        for (auto& g : p->grad) g += out.grad[0];
    };
    return Tensor::wrap(node);
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (checked_numel(shape) != a.numel())
        throw ShapeError("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape));
    auto node = make_node("reshape", std::move(shape), {a.node()});
    node->value = std::vector<double>(a.data().begin(), a.data().end());
    node->backward_fn = [](detail::Node& out) {
        auto& p = out.parents[0];
        if (!p->requires_grad) return;
        for (size_t i = 0; i < out.value.size(); ++i) p->grad[i] += out.grad[i];
    };
    return Tensor::wrap(node);
}

Tensor softmax_rows(const Tensor& logits, double temperature) {
    if (temperature <= 0.0)
        throw DomainError("softmax temperature must be positive, got " +
                          std::to_string(temperature));
    long r = logits.rows(), c = logits.cols();
    auto node = make_node("softmax", logits.shape(), {logits.node()});
    const double* x = logits.data().data();
    double* y = node->value.data();
    for (long i = 0; i < r; ++i) {
        double mx = x[i * c];
        for (long j = 1; j < c; ++j) mx = std::max(mx, x[i * c + j]);
        double z = 0;
        for (long j = 0; j < c; ++j) {
            y[i * c + j] = std::exp((x[i * c + j] - mx) / temperature);
            z += y[i * c + j];
        }
        for (long j = 0; j < c; ++j) y[i * c + j] /= z;
    }
    check_finite(*node);
    node->backward_fn = [r, c, temperature](detail::Node& out) {
        auto& p = out.parents[0];
        if (!p->requires_grad) return;
        for (long i = 0; i < r; ++i) {
            double dot = 0;
            for (long j = 0; j < c; ++j) dot += out.grad[i * c + j] * out.value[i * c + j];
            for (long j = 0; j < c; ++j)
                p->grad[i * c + j] +=
                    out.value[i * c + j] * (out.grad[i * c + j] - dot) / temperature;
        }
    };
    return Tensor::wrap(node);
}

Tensor div_by_scalar(const Tensor& a, const Tensor& s) {
    if (s.numel() != 1) throw ShapeError("div_by_scalar: divisor must be scalar");
    double d = s.item();
    if (d == 0.0) throw DomainError("div_by_scalar: division by zero");
    auto node = make_node("div_by_scalar", a.shape(), {a.node(), s.node()});
    for (size_t i = 0; i < node->value.size(); ++i) node->value[i] = a.data()[i] / d;
    check_finite(*node);
    node->backward_fn = [d](detail::Node& out) {
        auto& pa = out.parents[0];
        auto& ps = out.parents[1];
        for (size_t i = 0; i < out.value.size(); ++i) {
            if (pa->requires_grad) pa->grad[i] += out.grad[i] / d;
            if (ps->requires_grad) ps->grad[0] -= out.grad[i] * pa->value[i] / (d * d);
        }
    };
    return Tensor::wrap(node);
}

Tensor exp_elem(const Tensor& a) {
    auto node = make_node("exp", a.shape(), {a.node()});
    for (size_t i = 0; i < node->value.size(); ++i) node->value[i] = std::exp(a.data()[i]);
    check_finite(*node);
    node->backward_fn = [](detail::Node& out) {
        auto& p = out.parents[0];
        if (!p->requires_grad) return;
        for (size_t i = 0; i < out.value.size(); ++i) p->grad[i] += out.grad[i] * out.value[i];
    };
    return Tensor::wrap(node);
}

Tensor clamp(const Tensor& a, double lo, double hi) {
    auto node = make_node("clamp", a.shape(), {a.node()});
    for (size_t i = 0; i < node->value.size(); ++i)
        node->value[i] = std::min(hi, std::max(lo, a.data()[i]));
    node->backward_fn = [lo, hi](detail::Node& out) {
        auto& p = out.parents[0];
        if (!p->requires_grad) return;
        for (size_t i = 0; i < out.value.size(); ++i)
            if (p->value[i] > lo && p->value[i] < hi) p->grad[i] += out.grad[i];
    };
    return Tensor::wrap(node);
}

Tensor layer_norm_rows(const Tensor& m, double eps) {
    if (m.rank() != 2) throw ShapeError("layer_norm: rank-2 required, got " + shape_str(m.shape()));
    long r = m.rows(), c = m.cols();
    auto node = make_node("layer_norm", m.shape(), {m.node()});
    std::vector<double> inv_std(static_cast<size_t>(r));
    for (long i = 0; i < r; ++i) {
        double mu = 0;
        for (long j = 0; j < c; ++j) mu += m.at(i, j);
        mu /= c;
        double var = 0;
        for (long j = 0; j < c; ++j) {
            double d = m.at(i, j) - mu;
            var += d * d;
        }
        var /= c;
        double is = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<size_t>(i)] = is;
        for (long j = 0; j < c; ++j) node->value[i * c + j] = (m.at(i, j) - mu) * is;
    }
    check_finite(*node);
    node->backward_fn = [r, c, inv_std = std::move(inv_std)](detail::Node& out) {
        auto& p = out.parents[0];
        if (!p->requires_grad) return;
        for (long i = 0; i < r; ++i) {
            double gsum = 0, gxsum = 0;
            for (long j = 0; j < c; ++j) {
                gsum += out.grad[i * c + j];
                gxsum += out.grad[i * c + j] * out.value[i * c + j];
            }
            double is = inv_std[static_cast<size_t>(i)];
            for (long j = 0; j < c; ++j) {
                double xhat = out.value[i * c + j];
                p->grad[i * c + j] +=
                    is * (out.grad[i * c + j] - gsum / c - xhat * gxsum / c);
            }
        }
    };
    return Tensor::wrap(node);
}

Tensor gelu(const Tensor& a) {
    auto node = make_node("gelu", a.shape(), {a.node()});
    for (size_t i = 0; i < node->value.size(); ++i) {
        double x = a.data()[i];
        node->value[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
    }
    check_finite(*node);
    node->backward_fn = [](detail::Node& out) {
        auto& p = out.parents[0];
        if (!p->requires_grad) return;
        for (size_t i = 0; i < out.value.size(); ++i) {
            double x = p->value[i];
            double phi = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
            double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
            p->grad[i] += out.grad[i] * (phi + x * pdf);
        }
    };
    return Tensor::wrap(node);
}

Tensor abs_elem(const Tensor& a) {
    auto node = make_node("abs", a.shape(), {a.node()});
    for (size_t i = 0; i < node->value.size(); ++i) node->value[i] = std::abs(a.data()[i]);
    node->backward_fn = [](detail::Node& out) {
        auto& p = out.parents[0];
        if (!p->requires_grad) return;
        for (size_t i = 0; i < out.value.size(); ++i) {
            double x = p->value[i];
            double s = x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0);  // subgradient 0 at the kink
            p->grad[i] += out.grad[i] * s;
        }
    };
    return Tensor::wrap(node);
}

Tensor l1_distance(const Tensor& a, const Tensor& b) {
    require_same_shape("l1_distance", a, b);
    return mean_all(abs_elem(sub(a, b)));
}

Tensor squared_l2(const Tensor& a, const Tensor& b) {
    require_same_shape("squared_l2", a, b);
    Tensor d = sub(a, b);
    return sum_all(mul(d, d));
}

Tensor mse(const Tensor& a, const Tensor& b) {
    require_same_shape("mse", a, b);
    Tensor d = sub(a, b);
    return mean_all(mul(d, d));
}

Tensor cosine_rows(const Tensor& a, const Tensor& b, double eps) {
    require_same_shape("cosine_rows", a, b);
    if (a.rank() != 2) throw ShapeError("cosine_rows: rank-2 required");
    long r = a.rows(), c = a.cols();
    auto node = make_node("cosine_rows", {r}, {a.node(), b.node()});
    std::vector<double> na(static_cast<size_t>(r)), nb(static_cast<size_t>(r));
    for (long i = 0; i < r; ++i) {
        double dot = 0, sa = 0, sb = 0;
        for (long j = 0; j < c; ++j) {
            dot += a.at(i, j) * b.at(i, j);
            sa += a.at(i, j) * a.at(i, j);
            sb += b.at(i, j) * b.at(i, j);
        }
        na[i] = std::max(std::sqrt(sa), eps);
        nb[i] = std::max(std::sqrt(sb), eps);
        node->value[i] = dot / (na[i] * nb[i]);
    }
    check_finite(*node);
    node->backward_fn = [r, c, na = std::move(na), nb = std::move(nb)](detail::Node& out) {
        auto& pa = out.parents[0];
        auto& pb = out.parents[1];
        for (long i = 0; i < r; ++i) {
            double g = out.grad[i];
            if (g == 0) continue;
            double cosv = out.value[i];
            for (long j = 0; j < c; ++j) {
                double av = pa->value[i * c + j], bv = pb->value[i * c + j];
                if (pa->requires_grad)
                    pa->grad[i * c + j] +=
                        g * (bv / (na[i] * nb[i]) - cosv * av / (na[i] * na[i]));
                if (pb->requires_grad)
                    pb->grad[i * c + j] +=
                        g * (av / (na[i] * nb[i]) - cosv * bv / (nb[i] * nb[i]));
            }
        }
    };
    return Tensor::wrap(node);
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2)
        throw ShapeError("attention: rank-2 operands required");
    if (q.cols() != k.cols() || k.rows() != v.rows())
        throw ShapeError("attention: non-conforming shapes " + shape_str(q.shape()) + ", " +
                         shape_str(k.shape()) + ", " + shape_str(v.shape()));
    long d = q.cols();
    if (heads < 1 || d % heads != 0)
        throw ShapeError("attention: feature dim " + std::to_string(d) +
                         " not divisible by heads " + std::to_string(heads));
    long dh = d / heads;
    Tensor out;
    for (int h = 0; h < heads; ++h) {
        Tensor qh = heads == 1 ? q : slice(q, 1, h * dh, (h + 1) * dh);
        Tensor kh = heads == 1 ? k : slice(k, 1, h * dh, (h + 1) * dh);
        Tensor vh = heads == 1 ? v : slice(v, 1, h * dh, (h + 1) * dh);
        Tensor scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(double(dh)));
        Tensor oh = matmul(softmax_rows(scores), vh);
        out = h == 0 ? oh : concat(out, oh, 1);
    }
    return out;
}

double grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                  double step) {
    if (step <= 0) throw DomainError("grad_check: step must be positive");
    bool prev = finite_checks_enabled();
    set_finite_checks(true);
    for (auto p : params) p.zero_grad();
    f().backward();
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const auto& p : params)
        analytic.emplace_back(p.grad().begin(), p.grad().end());

    double max_err = 0;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor p = params[pi];
        auto vals = p.data_mut();
        for (size_t i = 0; i < vals.size(); ++i) {
            double orig = vals[i];
            vals[i] = orig + step;
            double fp = f().item();
            vals[i] = orig - step;
            double fm = f().item();
            vals[i] = orig;
            double cd = (fp - fm) / (2 * step);
            double an = analytic[pi][i];
            double err = std::abs(an - cd) / std::max({std::abs(an), std::abs(cd), 1e-8});
            max_err = std::max(max_err, err);
        }
    }
    set_finite_checks(prev);
    return max_err;
}

}  // namespace derl
