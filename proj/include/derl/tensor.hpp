#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace derl {

using Shape = std::vector<long>;

std::string shape_str(const Shape& s);

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};
struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// When enabled, every op verifies its output is finite and throws
// DomainError naming the op otherwise.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    bool backward_done = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    // Accumulates d(loss)/d(parent) into parents' grad buffers given this
    // node's grad buffer.
    std::function<void(Node&)> backward_fn;

    long numel() const {
        long n = 1;
        for (long e : shape) n *= e;
        return n;
    }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

}  // namespace detail

// Dense float64 tensor with define-by-run reverse-mode autodiff.
// Rank 1 and rank 2 are supported; a scalar is a rank-1 tensor of length 1.
// The graph is rebuilt on every forward pass; parameter tensors are leaves
// that persist across passes and accumulate gradients in-place.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double v, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    long rank() const { return static_cast<long>(node_->shape.size()); }
    long numel() const { return node_->numel(); }
    long rows() const;
    long cols() const;

    std::span<const double> data() const { return node_->value; }
    std::span<double> data_mut() { return node_->value; }
    std::span<const double> grad() const;
    std::span<double> grad_mut();

    bool requires_grad() const { return node_->requires_grad; }
    double item() const;
    double at(long i) const;
    double at(long i, long j) const;

    void zero_grad();
    // Leaf copy of the value with no graph history and no gradient.
    Tensor detach() const;
    // Deep copy as an independent leaf (keeps requires_grad).
    Tensor clone_leaf() const;

    // Reverse-mode backprop from a scalar. Seeds d(loss)/d(loss)=1 and
    // accumulates into every reachable requires_grad leaf. Calling it twice
    // on the same graph is a ContractError.
    void backward() const;

    std::shared_ptr<detail::Node> node() const { return node_; }
    static Tensor wrap(std::shared_ptr<detail::Node> n) {
        Tensor t;
        t.node_ = std::move(n);
        return t;
    }

private:
    std::shared_ptr<detail::Node> node_;
};

// ---- kernel catalog ----

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);         // elementwise
Tensor scale(const Tensor& a, double c);
Tensor add_rowwise(const Tensor& m, const Tensor& row);   // bias broadcast over rows
Tensor mul_rowwise(const Tensor& m, const Tensor& row);   // per-feature gain
Tensor scale_rows(const Tensor& m, const Tensor& col);    // per-row weight broadcast over features
Tensor concat(const Tensor& a, const Tensor& b, int axis);
Tensor slice(const Tensor& a, int axis, long begin, long end);
Tensor mean_axis(const Tensor& m, int axis);
Tensor mean_all(const Tensor& a);
Tensor sum_all(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor softmax_rows(const Tensor& logits, double temperature = 1.0);
Tensor div_by_scalar(const Tensor& a, const Tensor& s);   // s: scalar tensor, grads to both
Tensor exp_elem(const Tensor& a);
// Identity inside [lo, hi], clamped outside with zero gradient there.
Tensor clamp(const Tensor& a, double lo, double hi);
Tensor layer_norm_rows(const Tensor& m, double eps = 1e-5);
Tensor gelu(const Tensor& a);
Tensor abs_elem(const Tensor& a);                         // subgradient 0 at 0

Tensor l1_distance(const Tensor& a, const Tensor& b);     // mean |a-b|, scalar
Tensor squared_l2(const Tensor& a, const Tensor& b);      // sum (a-b)^2, scalar
Tensor mse(const Tensor& a, const Tensor& b);             // mean (a-b)^2, scalar
// Cosine similarity along the feature axis, one value per row.
// Norms floored at eps to keep the zero-vector case finite.
Tensor cosine_rows(const Tensor& a, const Tensor& b, double eps = 1e-12);

// Scaled dot-product self-attention over Q, K, V (each T x D), split into
// `heads` equal feature slices, each attended with 1/sqrt(d_head) scaling.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads = 1);

// ---- gradient oracle ----

// Max over all parameter entries of
// |analytic - central_difference| / max(|analytic|, |cd|, 1e-8).
// `f` must be a deterministic scalar-valued function of `params`.
double grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                  double step = 1e-5);

}  // namespace derl
