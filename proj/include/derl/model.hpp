#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "derl/data.hpp"
#include "derl/nn.hpp"

namespace derl {

struct ModelConfig {
    long dim = 16;        // common feature dimension D
    long bottleneck = 2;  // number of shared bottleneck tokens N
    int unified_depth = 1;
    int fusion_depth = 2;
    int heads = 1;
    long k_private = 1;
    long k_shared = 3;
    long expert_hidden = 0;  // 0 means dim
    long recon_hidden = 0;
    long head_hidden = 0;
    std::array<long, 3> input_dims{16, 16, 16};
    std::array<long, 3> max_lengths{8, 8, 8};
    bool abs_cosine = true;       // |cos| in the decoupling loss; raw cos when false
    bool detach_targets = true;   // complete-branch reconstruction targets carry no grad
    double weight_task = 1.0, weight_dec = 1.0, weight_rec = 1.0;
    // Ablation switches.
    bool use_hed = true;   // false: one linear map produces both halves
    bool use_mlcr = true;
    bool recon_level1 = true, recon_level2 = true, recon_level3 = true;
    bool use_mrf = true;   // false: uniform 1/6 expert weights
    // Debug: every transformer block becomes the identity function.
    bool identity_blocks = false;

    long expert_hidden_dim() const { return expert_hidden > 0 ? expert_hidden : dim; }
    long recon_hidden_dim() const { return recon_hidden > 0 ? recon_hidden : dim; }
    long head_hidden_dim() const { return head_hidden > 0 ? head_hidden : dim; }
    long num_experts() const { return k_private + k_shared; }
};

// Outputs of one branch (corrupted or complete) of the shared-weight pipeline.
struct BranchOutputs {
    std::array<Tensor, 3> unified;         // N x D per modality
    std::array<Tensor, 3> expert_weights;  // N x (k_p + k_s) per modality
    std::array<Tensor, 3> priv;            // N x D
    std::array<Tensor, 3> shar;            // N x D
};

struct SampleForward {
    BranchOutputs corrupted;
    std::optional<BranchOutputs> complete;
    Tensor fusion_weights;  // N x 6
    Tensor fused;           // N x D, post fusion transformer
    Tensor prediction;      // scalar
    Tensor loss_dec;        // scalar
    Tensor loss_rec1, loss_rec2, loss_rec3, loss_rec;  // scalars, defined when MLCR runs
};

struct BatchLosses {
    Tensor total, task, dec, rec, rec1, rec2, rec3;
    std::vector<double> predictions;
};

class DerlModel {
public:
    DerlModel(const ModelConfig& cfg, uint64_t init_seed);

    const ModelConfig& config() const { return cfg_; }
    ParamRegistry& params() { return params_; }
    const ParamRegistry& params() const { return params_; }

    // ---- encoder ----
    Tensor project(const Tensor& features, Modality m) const;
    Tensor encode_unified(const Tensor& projected, Modality m) const;
    Tensor encode_modality(const ModalityBundle::Channel& ch, Modality m) const;

    // ---- hed ----
    Tensor route_experts(const Tensor& unified, Modality m) const;
    std::pair<Tensor, Tensor> disentangle(const Tensor& unified, const Tensor& weights,
                                          Modality m) const;
    Tensor decoupling_loss(const BranchOutputs& branch) const;
    Tensor expert_temperature() const;

    // ---- mrf ----
    Tensor route_fusion(const std::array<Tensor, 6>& experts) const;
    Tensor aggregate(const std::array<Tensor, 6>& experts, const Tensor& weights) const;
    Tensor fuse_transform(const Tensor& aggregated) const;
    Tensor predict_head(const Tensor& fused) const;
    Tensor fusion_temperature() const;

    BranchOutputs run_branch(const ModalityBundle& bundle) const;

    // Full forward pass for one sample. `complete` supplies reconstruction
    // targets; pass nullptr at inference, which skips MLCR entirely.
    SampleForward forward(const ModalityBundle& corrupted,
                          const ModalityBundle* complete) const;

    // Total-loss assembly over a batch; corrupted[i] and complete[i] are the
    // same sample through the two branches.
    BatchLosses batch_losses(std::span<const ModalityBundle> corrupted,
                             std::span<const ModalityBundle> complete) const;

    double predict_value(const ModalityBundle& bundle) const;

    void set_identity_blocks(bool on);

    struct ModuleCount {
        std::string module;
        long params;
    };
    std::pair<long, std::vector<ModuleCount>> count_params() const;

private:
    ModelConfig cfg_;
    ParamRegistry params_;

    Tensor bottleneck_;  // N x D, shared across modalities
    struct PerModalityEncoder {
        Linear proj;
        Tensor pos;  // T_max x D
        std::vector<TransformerBlock> blocks;
    };
    std::array<PerModalityEncoder, 3> enc_;

    // HED
    std::array<std::vector<Mlp2>, 3> private_experts_;
    std::vector<Mlp2> shared_experts_;  // one set, shared by all modalities
    std::array<Mlp2, 3> expert_router_;
    Tensor rho_e_;  // temperature log-parameter
    std::array<Linear, 3> hed_off_;  // ablation: D -> 2D

    // MLCR
    std::array<Mlp2, 3> recon1_;
    std::array<Mlp2, 3> recon2_priv_, recon2_shar_;
    std::array<Mlp2, 3> recon3_;

    // MRF
    Mlp2 fusion_router_;  // 6D -> hidden -> 6
    Tensor rho_r_;
    std::vector<TransformerBlock> fusion_blocks_;
    Mlp2 head_;

    Tensor recon_losses(const BranchOutputs& corrupted, const BranchOutputs& complete,
                        Tensor& l1, Tensor& l2, Tensor& l3) const;
};

}  // namespace derl
