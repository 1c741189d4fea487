#include "derl/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace derl {

std::vector<long> Rng::sample_without_replacement(long n, long k) {
    // Floyd's algorithm.
    std::vector<long> chosen;
    chosen.reserve(static_cast<size_t>(k));
    for (long j = n - k; j < n; ++j) {
        long t = static_cast<long>(std::uniform_int_distribution<long>(0, j)(engine_));
        if (std::find(chosen.begin(), chosen.end(), t) != chosen.end())
            chosen.push_back(j);
        else
            chosen.push_back(t);
    }
    std::sort(chosen.begin(), chosen.end());
    return chosen;
}

uint64_t Rng::mix(uint64_t a, uint64_t b) {
    uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

Tensor ParamRegistry::create(const std::string& name, Shape shape, Rng& rng, double stddev) {
    Tensor t = Tensor::zeros(std::move(shape), true);
    for (auto& v : t.data_mut()) v = rng.normal(0.0, stddev);
    items_.emplace_back(name, t);
    return t;
}

Tensor ParamRegistry::create_zeros(const std::string& name, Shape shape) {
    Tensor t = Tensor::zeros(std::move(shape), true);
    items_.emplace_back(name, t);
    return t;
}

Tensor ParamRegistry::create_const(const std::string& name, Shape shape, double v) {
    Tensor t = Tensor::full(std::move(shape), v, true);
    items_.emplace_back(name, t);
    return t;
}

Tensor ParamRegistry::find(const std::string& name) const {
    for (const auto& [n, t] : items_)
        if (n == name) return t;
    throw std::out_of_range("no parameter named '" + name + "'");
}

long ParamRegistry::total_params() const {
    long n = 0;
    for (const auto& [_, t] : items_) n += t.numel();
    return n;
}

void ParamRegistry::zero_grads() {
    for (auto& [_, t] : items_) const_cast<Tensor&>(t).zero_grad();
}

Linear::Linear(ParamRegistry& reg, const std::string& name, long in, long out, Rng& rng,
               double stddev, bool zero_init) {
    // stddev <= 0 selects fan-in scaling, which keeps activations O(1)
    // across the small widths this engine runs at.
    if (stddev <= 0.0) stddev = 1.0 / std::sqrt(static_cast<double>(in));
    weight = zero_init ? reg.create_zeros(name + ".weight", {in, out})
                       : reg.create(name + ".weight", {in, out}, rng, stddev);
    bias = reg.create_zeros(name + ".bias", {out});
}

Mlp2::Mlp2(ParamRegistry& reg, const std::string& name, long in, long hidden, long out, Rng& rng,
           bool residual, bool zero_last)
    : fc1(reg, name + ".fc1", in, hidden, rng),
      fc2(reg, name + ".fc2", hidden, out, rng, 0.0, zero_last),
      residual(residual) {
    if (residual && in != out)
        throw ShapeError("residual Mlp2 requires in == out, got " + std::to_string(in) + " vs " +
                         std::to_string(out));
}

Tensor Mlp2::forward(const Tensor& x) const {
    Tensor h = fc2.forward(gelu(fc1.forward(x)));
    return residual ? add(x, h) : h;
}

TransformerBlock::TransformerBlock(ParamRegistry& reg, const std::string& name, long dim,
                                   int heads, Rng& rng)
    : heads(heads) {
    ln1_gamma = reg.create_const(name + ".ln1.gamma", {dim}, 1.0);
    ln1_beta = reg.create_zeros(name + ".ln1.beta", {dim});
    wq = Linear(reg, name + ".attn.wq", dim, dim, rng);
    wk = Linear(reg, name + ".attn.wk", dim, dim, rng);
    wv = Linear(reg, name + ".attn.wv", dim, dim, rng);
    wo = Linear(reg, name + ".attn.wo", dim, dim, rng);
    ln2_gamma = reg.create_const(name + ".ln2.gamma", {dim}, 1.0);
    ln2_beta = reg.create_zeros(name + ".ln2.beta", {dim});
    fc1 = Linear(reg, name + ".mlp.fc1", dim, 4 * dim, rng);
    fc2 = Linear(reg, name + ".mlp.fc2", 4 * dim, dim, rng);
}

Tensor TransformerBlock::forward(const Tensor& x) const {
    if (identity_mode) return x;
    Tensor n1 = add_rowwise(mul_rowwise(layer_norm_rows(x), ln1_gamma), ln1_beta);
    Tensor att = attention(wq.forward(n1), wk.forward(n1), wv.forward(n1), heads);
    Tensor h = add(x, wo.forward(att));
    Tensor n2 = add_rowwise(mul_rowwise(layer_norm_rows(h), ln2_gamma), ln2_beta);
    Tensor m = fc2.forward(gelu(fc1.forward(n2)));
    return add(h, m);
}

}  // namespace derl
