#include "derl/model.hpp"

#include <cmath>

namespace derl {

namespace {

constexpr double kTempFloor = 1e-3;
constexpr double kTempCeil = 10.0;

Tensor channel_tensor(const ModalityBundle::Channel& ch) {
    return Tensor::from({ch.T, ch.D},
                        std::vector<double>(ch.features.begin(), ch.features.end()));
}

}  // namespace

DerlModel::DerlModel(const ModelConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
    Rng rng(init_seed);
    long d = cfg_.dim, n = cfg_.bottleneck;
    bottleneck_ = params_.create("encoder.bottleneck", {n, d}, rng, 0.02);
    for (size_t mi = 0; mi < 3; ++mi) {
        std::string base = std::string("encoder.") + modality_name(kModalities[mi]);
        enc_[mi].proj = Linear(params_, base + ".proj", cfg_.input_dims[mi], d, rng);
        enc_[mi].pos = params_.create(base + ".pos", {cfg_.max_lengths[mi], d}, rng, 0.02);
        for (int b = 0; b < cfg_.unified_depth; ++b)
            enc_[mi].blocks.emplace_back(params_, base + ".block" + std::to_string(b), d,
                                         cfg_.heads, rng);
    }

    if (cfg_.use_hed) {
        long eh = cfg_.expert_hidden_dim();
        for (size_t mi = 0; mi < 3; ++mi) {
            std::string base = std::string("hed.") + modality_name(kModalities[mi]);
            for (long k = 0; k < cfg_.k_private; ++k)
                private_experts_[mi].emplace_back(params_, base + ".private" + std::to_string(k),
                                                  d, eh, d, rng);
        }
        for (long k = 0; k < cfg_.k_shared; ++k)
            shared_experts_.emplace_back(params_, "hed.shared" + std::to_string(k), d, eh, d,
                                         rng);
        for (size_t mi = 0; mi < 3; ++mi) {
            std::string base = std::string("hed.") + modality_name(kModalities[mi]);
            expert_router_[mi] = Mlp2(params_, base + ".router", d, eh, cfg_.num_experts(), rng);
        }
        rho_e_ = params_.create_const("hed.rho", {1},
                                      std::log(1.0 / static_cast<double>(cfg_.num_experts())));
    } else {
        for (size_t mi = 0; mi < 3; ++mi)
            hed_off_[mi] = Linear(params_,
                                  std::string("hed.") + modality_name(kModalities[mi]) + ".linear",
                                  d, 2 * d, rng);
    }

    if (cfg_.use_mlcr) {
        long rh = cfg_.recon_hidden_dim();
        for (size_t mi = 0; mi < 3; ++mi) {
            std::string base = std::string("mlcr.") + modality_name(kModalities[mi]);
            if (cfg_.recon_level1)
                recon1_[mi] = Mlp2(params_, base + ".r1", d, rh, d, rng, true, true);
            if (cfg_.recon_level2) {
                recon2_priv_[mi] = Mlp2(params_, base + ".r2p", d, rh, d, rng, true, true);
                recon2_shar_[mi] = Mlp2(params_, base + ".r2s", d, rh, d, rng, true, true);
            }
            if (cfg_.recon_level3)
                recon3_[mi] = Mlp2(params_, base + ".r3", 2 * d, rh, d, rng);
        }
    }

    if (cfg_.use_mrf) {
        fusion_router_ = Mlp2(params_, "mrf.router", 6 * d, cfg_.expert_hidden_dim(), 6, rng);
        rho_r_ = params_.create_const("mrf.rho", {1}, std::log(1.0 / 6.0));
    }
    for (int b = 0; b < cfg_.fusion_depth; ++b)
        fusion_blocks_.emplace_back(params_, "mrf.block" + std::to_string(b), d, cfg_.heads, rng);
    head_ = Mlp2(params_, "head", d, cfg_.head_hidden_dim(), 1, rng);

    set_identity_blocks(cfg_.identity_blocks);
}

void DerlModel::set_identity_blocks(bool on) {
    cfg_.identity_blocks = on;
    for (auto& e : enc_)
        for (auto& b : e.blocks) b.identity_mode = on;
    for (auto& b : fusion_blocks_) b.identity_mode = on;
}

Tensor DerlModel::project(const Tensor& features, Modality m) const {
    size_t mi = static_cast<size_t>(m);
    if (features.cols() != cfg_.input_dims[mi])
        throw ShapeError(std::string("project: modality ") + modality_name(m) + " expects dim " +
                         std::to_string(cfg_.input_dims[mi]) + ", got " +
                         shape_str(features.shape()));
    long t = features.rows();
    if (t > cfg_.max_lengths[mi])
        throw ShapeError("project: sequence length " + std::to_string(t) +
                         " exceeds configured maximum " + std::to_string(cfg_.max_lengths[mi]));
    Tensor projected = enc_[mi].proj.forward(features);
    Tensor pos = t == cfg_.max_lengths[mi] ? enc_[mi].pos : slice(enc_[mi].pos, 0, 0, t);
    return add(projected, pos);
}

Tensor DerlModel::encode_unified(const Tensor& projected, Modality m) const {
    size_t mi = static_cast<size_t>(m);
    Tensor z = concat(bottleneck_, projected, 0);
    for (const auto& block : enc_[mi].blocks) z = block.forward(z);
    return slice(z, 0, 0, cfg_.bottleneck);
}

Tensor DerlModel::encode_modality(const ModalityBundle::Channel& ch, Modality m) const {
    return encode_unified(project(channel_tensor(ch), m), m);
}

Tensor DerlModel::expert_temperature() const {
    return clamp(exp_elem(rho_e_), kTempFloor, kTempCeil);
}

Tensor DerlModel::fusion_temperature() const {
    return clamp(exp_elem(rho_r_), kTempFloor, kTempCeil);
}

Tensor DerlModel::route_experts(const Tensor& unified, Modality m) const {
    Tensor logits = expert_router_[static_cast<size_t>(m)].forward(unified);
    return softmax_rows(div_by_scalar(logits, expert_temperature()));
}

std::pair<Tensor, Tensor> DerlModel::disentangle(const Tensor& unified, const Tensor& weights,
                                                 Modality m) const {
    size_t mi = static_cast<size_t>(m);
    Tensor priv, shar;
    for (long k = 0; k < cfg_.k_private; ++k) {
        Tensor term = scale_rows(private_experts_[mi][k].forward(unified),
                                 reshape(slice(weights, 1, k, k + 1), {weights.rows()}));
        priv = k == 0 ? term : add(priv, term);
    }
    for (long k = 0; k < cfg_.k_shared; ++k) {
        long col = cfg_.k_private + k;
        Tensor term = scale_rows(shared_experts_[k].forward(unified),
                                 reshape(slice(weights, 1, col, col + 1), {weights.rows()}));
        shar = k == 0 ? term : add(shar, term);
    }
    return {priv, shar};
}

Tensor DerlModel::decoupling_loss(const BranchOutputs& branch) const {
    Tensor loss;
    for (size_t mi = 0; mi < 3; ++mi) {
        Tensor c = cosine_rows(branch.priv[mi], branch.shar[mi]);
        Tensor per_mod = mean_all(cfg_.abs_cosine ? abs_elem(c) : c);
        loss = mi == 0 ? per_mod : add(loss, per_mod);
    }
    return loss;
}

BranchOutputs DerlModel::run_branch(const ModalityBundle& bundle) const {
    BranchOutputs out;
    for (size_t mi = 0; mi < 3; ++mi) {
        Modality m = kModalities[mi];
        out.unified[mi] = encode_modality(bundle.channels[mi], m);
        if (cfg_.use_hed) {
            out.expert_weights[mi] = route_experts(out.unified[mi], m);
            auto [p, s] = disentangle(out.unified[mi], out.expert_weights[mi], m);
            out.priv[mi] = p;
            out.shar[mi] = s;
        } else {
            Tensor both = hed_off_[mi].forward(out.unified[mi]);
            out.priv[mi] = slice(both, 1, 0, cfg_.dim);
            out.shar[mi] = slice(both, 1, cfg_.dim, 2 * cfg_.dim);
        }
    }
    return out;
}

Tensor DerlModel::route_fusion(const std::array<Tensor, 6>& experts) const {
    Tensor cat = experts[0];
    for (size_t j = 1; j < 6; ++j) cat = concat(cat, experts[j], 1);
    Tensor logits = fusion_router_.forward(cat);
    return softmax_rows(div_by_scalar(logits, fusion_temperature()));
}

Tensor DerlModel::aggregate(const std::array<Tensor, 6>& experts, const Tensor& weights) const {
    Tensor out;
    for (size_t j = 0; j < 6; ++j) {
        Tensor term = scale_rows(experts[j],
                                 reshape(slice(weights, 1, j, j + 1), {weights.rows()}));
        out = j == 0 ? term : add(out, term);
    }
    return out;
}

Tensor DerlModel::fuse_transform(const Tensor& aggregated) const {
    Tensor z = aggregated;
    for (const auto& block : fusion_blocks_) z = block.forward(z);
    return z;
}

Tensor DerlModel::predict_head(const Tensor& fused) const {
    Tensor pooled = reshape(mean_axis(fused, 0), {1, cfg_.dim});
    return reshape(head_.forward(pooled), {1});
}

Tensor DerlModel::recon_losses(const BranchOutputs& corrupted, const BranchOutputs& complete,
                               Tensor& l1, Tensor& l2, Tensor& l3) const {
    auto target = [&](const Tensor& t) { return cfg_.detach_targets ? t.detach() : t; };
    Tensor zero = Tensor::scalar(0.0);
    l1 = zero;
    l2 = zero;
    l3 = zero;
    for (size_t mi = 0; mi < 3; ++mi) {
        if (cfg_.recon_level1) {
            Tensor rec = recon1_[mi].forward(corrupted.unified[mi]);
            l1 = add(l1, l1_distance(rec, target(complete.unified[mi])));
        }
        if (cfg_.recon_level2) {
            Tensor rp = recon2_priv_[mi].forward(corrupted.priv[mi]);
            Tensor rs = recon2_shar_[mi].forward(corrupted.shar[mi]);
            l2 = add(l2, add(l1_distance(rp, target(complete.priv[mi])),
                             l1_distance(rs, target(complete.shar[mi]))));
        }
        if (cfg_.recon_level3) {
            Tensor joint = concat(corrupted.priv[mi], corrupted.shar[mi], 1);
            Tensor rec = recon3_[mi].forward(joint);
            l3 = add(l3, l1_distance(rec, target(complete.unified[mi])));
        }
    }
    return scale(add(add(l1, l2), l3), 1.0 / 3.0);
}

SampleForward DerlModel::forward(const ModalityBundle& corrupted,
                                 const ModalityBundle* complete) const {
    SampleForward out;
    out.corrupted = run_branch(corrupted);
    out.loss_dec = cfg_.use_hed ? decoupling_loss(out.corrupted) : Tensor::scalar(0.0);

    if (complete && cfg_.use_mlcr) {
        out.complete = run_branch(*complete);
        out.loss_rec = recon_losses(out.corrupted, *out.complete, out.loss_rec1, out.loss_rec2,
                                    out.loss_rec3);
    } else if (complete && !cfg_.use_mlcr) {
        out.loss_rec1 = out.loss_rec2 = out.loss_rec3 = out.loss_rec = Tensor::scalar(0.0);
    }

    std::array<Tensor, 6> experts{out.corrupted.priv[0],  out.corrupted.priv[1],
                                  out.corrupted.priv[2],  out.corrupted.shar[0],
                                  out.corrupted.shar[1],  out.corrupted.shar[2]};
    if (cfg_.use_mrf) {
        out.fusion_weights = route_fusion(experts);
        out.fused = fuse_transform(aggregate(experts, out.fusion_weights));
    } else {
        out.fusion_weights = Tensor::full({cfg_.bottleneck, 6}, 1.0 / 6.0);
        out.fused = fuse_transform(aggregate(experts, out.fusion_weights));
    }
    out.prediction = predict_head(out.fused);
    return out;
}

BatchLosses DerlModel::batch_losses(std::span<const ModalityBundle> corrupted,
                                    std::span<const ModalityBundle> complete) const {
    if (corrupted.empty()) throw ContractError("batch_losses: empty batch");
    if (corrupted.size() != complete.size())
        throw ContractError("batch_losses: branch batch sizes differ");
    long b = static_cast<long>(corrupted.size());

    BatchLosses out;
    Tensor preds, labels = Tensor::zeros({b});
    Tensor dec, rec, rec1, rec2, rec3;
    for (long i = 0; i < b; ++i) {
        SampleForward f = forward(corrupted[i], &complete[i]);
        preds = i == 0 ? f.prediction : concat(preds, f.prediction, 0);
        labels.data_mut()[i] = corrupted[i].label;
        dec = i == 0 ? f.loss_dec : add(dec, f.loss_dec);
        rec = i == 0 ? f.loss_rec : add(rec, f.loss_rec);
        rec1 = i == 0 ? f.loss_rec1 : add(rec1, f.loss_rec1);
        rec2 = i == 0 ? f.loss_rec2 : add(rec2, f.loss_rec2);
        rec3 = i == 0 ? f.loss_rec3 : add(rec3, f.loss_rec3);
        out.predictions.push_back(f.prediction.item());
    }
    double inv_b = 1.0 / static_cast<double>(b);
    out.task = mse(preds, labels);
    out.dec = scale(dec, inv_b);
    out.rec = scale(rec, inv_b);
    out.rec1 = scale(rec1, inv_b);
    out.rec2 = scale(rec2, inv_b);
    out.rec3 = scale(rec3, inv_b);
    out.total = add(add(scale(out.task, cfg_.weight_task), scale(out.dec, cfg_.weight_dec)),
                    scale(out.rec, cfg_.weight_rec));
    return out;
}

double DerlModel::predict_value(const ModalityBundle& bundle) const {
    return forward(bundle, nullptr).prediction.item();
}

std::pair<long, std::vector<DerlModel::ModuleCount>> DerlModel::count_params() const {
    std::vector<ModuleCount> by_module;
    long total = 0;
    auto bump = [&](const std::string& module, long n) {
        for (auto& mc : by_module)
            if (mc.module == module) {
                mc.params += n;
                return;
            }
        by_module.push_back({module, n});
    };
    for (const auto& [name, t] : params_.items()) {
        auto dot = name.find('.');
        bump(dot == std::string::npos ? name : name.substr(0, dot), t.numel());
        total += t.numel();
    }
    return {total, by_module};
}

}  // namespace derl
