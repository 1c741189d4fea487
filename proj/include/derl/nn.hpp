#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "derl/tensor.hpp"

namespace derl {

// Deterministic RNG. All stochastic behavior in the engine flows through
// seeded instances of this, so equal seeds reproduce runs bit-exactly
// within one build.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    double normal(double mean = 0.0, double stddev = 1.0) {
        return std::normal_distribution<double>(mean, stddev)(engine_);
    }
    double uniform(double lo = 0.0, double hi = 1.0) {
        return std::uniform_real_distribution<double>(lo, hi)(engine_);
    }
    uint64_t next_u64() { return engine_(); }
    long index(long n) {
        return static_cast<long>(std::uniform_int_distribution<long>(0, n - 1)(engine_));
    }
    std::mt19937_64& engine() { return engine_; }

    // Sample k distinct indices from [0, n) in sorted order.
    std::vector<long> sample_without_replacement(long n, long k);

    // SplitMix64-style mixing for deriving independent stream seeds.
    static uint64_t mix(uint64_t a, uint64_t b);

private:
    std::mt19937_64 engine_;
};

// Owns every trainable tensor of a model in creation order. Creation order
// is fixed by construction code, which keeps serialization, optimizer state
// and parameter counting deterministic.
class ParamRegistry {
public:
    Tensor create(const std::string& name, Shape shape, Rng& rng, double stddev);
    Tensor create_zeros(const std::string& name, Shape shape);
    Tensor create_const(const std::string& name, Shape shape, double v);

    const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
    Tensor find(const std::string& name) const;
    long total_params() const;
    void zero_grads();

private:
    std::vector<std::pair<std::string, Tensor>> items_;
};

struct Linear {
    Tensor weight;  // in x out
    Tensor bias;    // out

    Linear() = default;
    Linear(ParamRegistry& reg, const std::string& name, long in, long out, Rng& rng,
           double stddev = 0.0, bool zero_init = false);  // stddev <= 0: 1/sqrt(in)
    Tensor forward(const Tensor& x) const { return add_rowwise(matmul(x, weight), bias); }
    long in_dim() const { return weight.rows(); }
    long out_dim() const { return weight.cols(); }
};

// Two-layer MLP with GELU, optionally residual (requires in==out; the last
// layer may be zero-initialized so the residual form starts as identity).
struct Mlp2 {
    Linear fc1, fc2;
    bool residual = false;

    Mlp2() = default;
    Mlp2(ParamRegistry& reg, const std::string& name, long in, long hidden, long out, Rng& rng,
         bool residual = false, bool zero_last = false);
    Tensor forward(const Tensor& x) const;
};

// Pre-norm transformer encoder block:
//   x + Attn(LN(x)),  then  x + MLP(LN(x)), MLP hidden = 4D with GELU.
struct TransformerBlock {
    Tensor ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
    Linear wq, wk, wv, wo;
    Linear fc1, fc2;
    int heads = 1;
    // Debug switch: the block becomes the identity function.
    bool identity_mode = false;

    TransformerBlock() = default;
    TransformerBlock(ParamRegistry& reg, const std::string& name, long dim, int heads, Rng& rng);
    Tensor forward(const Tensor& x) const;
};

}  // namespace derl
