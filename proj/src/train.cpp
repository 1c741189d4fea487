#include "derl/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <numbers>

namespace derl {

int sentiment_class7(double y) {
    long c = round_half_away_from_zero(y);
    c = std::max(-3L, std::min(3L, c));
    return static_cast<int>(c + 3);
}

int sentiment_class5(double y) {
    long c = round_half_away_from_zero(y);
    c = std::max(-2L, std::min(2L, c));
    return static_cast<int>(c + 2);
}

MetricRecord compute_metrics(std::span<const double> pred, std::span<const double> label) {
    if (pred.size() != label.size() || pred.empty())
        throw ContractError("compute_metrics: batches must be equal-length and non-empty");
    size_t n = pred.size();
    MetricRecord rec;

    double mae = 0;
    for (size_t i = 0; i < n; ++i) mae += std::abs(pred[i] - label[i]);
    rec.mae = mae / static_cast<double>(n);

    // Pearson, two-pass.
    double mp = 0, ml = 0;
    for (size_t i = 0; i < n; ++i) {
        mp += pred[i];
        ml += label[i];
    }
    mp /= static_cast<double>(n);
    ml /= static_cast<double>(n);
    double cov = 0, vp = 0, vl = 0;
    for (size_t i = 0; i < n; ++i) {
        cov += (pred[i] - mp) * (label[i] - ml);
        vp += (pred[i] - mp) * (pred[i] - mp);
        vl += (label[i] - ml) * (label[i] - ml);
    }
    if (vp == 0.0 || vl == 0.0) {
        rec.corr = 0.0;
        rec.corr_degenerate = true;
    } else {
        rec.corr = cov / std::sqrt(vp * vl);
    }

    long acc7 = 0, acc5 = 0;
    for (size_t i = 0; i < n; ++i) {
        int tc = sentiment_class7(label[i]);
        int pc = sentiment_class7(pred[i]);
        rec.confusion[tc][pc] += 1;
        if (tc == pc) ++acc7;
        if (sentiment_class5(label[i]) == sentiment_class5(pred[i])) ++acc5;
    }
    rec.acc7 = static_cast<double>(acc7) / static_cast<double>(n);
    rec.acc5 = static_cast<double>(acc5) / static_cast<double>(n);

    // Binary variants. F1 is reported for the positive-sentiment class, which
    // for the neg-vs-nonneg variant is the non-negative class.
    auto binary = [](auto include, auto is_pos_label, auto is_pos_pred, size_t n,
                     std::span<const double> pred, std::span<const double> label, double& acc,
                     double& f1) {
        long total = 0, correct = 0, tp = 0, fp = 0, fn = 0;
        for (size_t i = 0; i < n; ++i) {
            if (!include(label[i])) continue;
            ++total;
            bool tl = is_pos_label(label[i]);
            bool pl = is_pos_pred(pred[i]);
            if (tl == pl) ++correct;
            if (tl && pl) ++tp;
            if (!tl && pl) ++fp;
            if (tl && !pl) ++fn;
        }
        acc = total ? static_cast<double>(correct) / total : 0.0;
        f1 = (2 * tp + fp + fn) ? 2.0 * tp / static_cast<double>(2 * tp + fp + fn) : 0.0;
    };
    binary([](double) { return true; }, [](double y) { return y >= 0; },
           [](double y) { return y >= 0; }, n, pred, label, rec.acc2_neg_nonneg,
           rec.f1_neg_nonneg);
    binary([](double y) { return y != 0; }, [](double y) { return y > 0; },
           [](double y) { return y > 0; }, n, pred, label, rec.acc2_neg_pos, rec.f1_neg_pos);
    return rec;
}

AdamW::AdamW(ParamRegistry& params, double lr, double weight_decay, double beta1, double beta2,
             double eps)
    : params_(params), lr_(lr), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& [_, t] : params.items()) {
        m_.emplace_back(t.numel(), 0.0);
        v_.emplace_back(t.numel(), 0.0);
    }
}

void AdamW::step(double lr) {
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, t_);
    double bc2 = 1.0 - std::pow(beta2_, t_);
    for (size_t pi = 0; pi < params_.items().size(); ++pi) {
        Tensor t = params_.items()[pi].second;
        auto val = t.data_mut();
        auto g = t.grad_mut();
        for (size_t i = 0; i < val.size(); ++i) {
            m_[pi][i] = beta1_ * m_[pi][i] + (1 - beta1_) * g[i];
            v_[pi][i] = beta2_ * v_[pi][i] + (1 - beta2_) * g[i] * g[i];
            double mhat = m_[pi][i] / bc1;
            double vhat = v_[pi][i] / bc2;
            val[i] -= lr * (mhat / (std::sqrt(vhat) + eps_) + wd_ * val[i]);
        }
    }
}

double cosine_annealed_lr(double base_lr, long epoch, long total_epochs) {
    if (total_epochs <= 1) return base_lr;
    double t = static_cast<double>(epoch) / static_cast<double>(total_epochs);
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

void TrainConfig::validate() const {
    if (lr <= 0 || batch_size <= 0 || epochs <= 0)
        throw ContractError("TrainConfig: lr, batch size and epochs must be positive");
    if (augment_fraction < 0 || augment_fraction > 1 || selection_rate < 0 || selection_rate > 1)
        throw ContractError("TrainConfig: fractions must lie in [0,1]");
}

double valid_mae_at_rate(const DerlModel& model, std::span<const ModalityBundle> split,
                         double rate, uint64_t seed) {
    double mae = 0;
    for (size_t i = 0; i < split.size(); ++i) {
        ModalityBundle corrupted =
            random_missing(split[i], MissingSpec::intra(rate, Rng::mix(seed, i)));
        mae += std::abs(model.predict_value(corrupted) - split[i].label);
    }
    return mae / static_cast<double>(split.size());
}

double mean_predictor_mae(std::span<const ModalityBundle> train_split,
                          std::span<const ModalityBundle> test_split) {
    double mean = 0;
    for (const auto& b : train_split) mean += b.label;
    mean /= static_cast<double>(train_split.size());
    double mae = 0;
    for (const auto& b : test_split) mae += std::abs(b.label - mean);
    return mae / static_cast<double>(test_split.size());
}

long select_best_epoch(const std::vector<EpochStats>& history) {
    long best = 0;
    for (size_t i = 1; i < history.size(); ++i)
        if (history[i].valid_mae < history[best].valid_mae) best = static_cast<long>(i);
    return best;
}

TrainResult train_model(const Dataset& ds, const ModelConfig& mcfg, const TrainConfig& tcfg) {
    tcfg.validate();
    if (ds.train.empty() || ds.valid.empty())
        throw ContractError("train_model: dataset needs train and valid splits");

    TrainResult result;
    result.model = std::make_unique<DerlModel>(mcfg, Rng::mix(tcfg.seed, 0xD591));
    DerlModel& model = *result.model;
    AdamW opt(model.params(), tcfg.lr, tcfg.weight_decay);

    const uint64_t eval_seed = Rng::mix(tcfg.seed, 0xE7A1);
    long n = static_cast<long>(ds.train.size());
    std::vector<long> indices(n);
    for (long i = 0; i < n; ++i) indices[i] = i;

    std::vector<std::vector<double>> best_params;
    result.best_valid_mae = std::numeric_limits<double>::infinity();

    for (long epoch = 0; epoch < tcfg.epochs; ++epoch) {
        Rng erng(Rng::mix(tcfg.seed, 0x1000 + static_cast<uint64_t>(epoch)));
        double lr = cosine_annealed_lr(tcfg.lr, epoch, tcfg.epochs);

        // Independently resampled augmentation subset each epoch.
        long n_aug = round_half_away_from_zero(tcfg.augment_fraction * static_cast<double>(n));
        std::vector<bool> augmented(n, false);
        for (long idx : erng.sample_without_replacement(n, n_aug)) augmented[idx] = true;

        std::vector<ModalityBundle> corrupted(ds.train.begin(), ds.train.end());
        for (long i = 0; i < n; ++i)
            if (augmented[i])
                corrupted[i] = random_missing(ds.train[i],
                                              MissingSpec::intra_uniform(erng.next_u64()));

        std::shuffle(indices.begin(), indices.end(), erng.engine());

        double sum_task = 0, sum_dec = 0, sum_rec = 0, sum_total = 0;
        long n_batches = 0;
        for (long start = 0; start < n; start += tcfg.batch_size) {
            long end = std::min(n, start + tcfg.batch_size);
            std::vector<ModalityBundle> bc, bp;
            for (long i = start; i < end; ++i) {
                bc.push_back(corrupted[indices[i]]);
                bp.push_back(ds.train[indices[i]]);
            }
            model.params().zero_grads();
            BatchLosses losses = model.batch_losses(bc, bp);
            double total = losses.total.item();
            if (!std::isfinite(total))
                throw ContractError("training diverged at epoch " + std::to_string(epoch) +
                                    ", batch " + std::to_string(n_batches) +
                                    "; last finite losses task=" + std::to_string(sum_task) +
                                    " dec=" + std::to_string(sum_dec) +
                                    " rec=" + std::to_string(sum_rec));
            losses.total.backward();
            opt.step(lr);
            sum_task += losses.task.item();
            sum_dec += losses.dec.item();
            sum_rec += losses.rec.item();
            sum_total += total;
            ++n_batches;
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.lr = lr;
        stats.loss_task = sum_task / n_batches;
        stats.loss_dec = sum_dec / n_batches;
        stats.loss_rec = sum_rec / n_batches;
        stats.loss_total = sum_total / n_batches;
        stats.valid_mae = valid_mae_at_rate(model, ds.valid, tcfg.selection_rate, eval_seed);
        result.history.push_back(stats);

        if (stats.valid_mae < result.best_valid_mae) {
            result.best_valid_mae = stats.valid_mae;
            result.best_epoch = epoch;
            best_params.clear();
            for (const auto& [_, t] : model.params().items())
                best_params.emplace_back(t.data().begin(), t.data().end());
        }
    }

    // Restore the selected epoch's parameters.
    for (size_t pi = 0; pi < best_params.size(); ++pi) {
        Tensor t = model.params().items()[pi].second;
        std::copy(best_params[pi].begin(), best_params[pi].end(), t.data_mut().begin());
    }
    return result;
}

namespace {

MetricRecord eval_condition(const DerlModel& model, std::span<const ModalityBundle> split,
                            const std::function<ModalityBundle(const ModalityBundle&, size_t)>&
                                corrupt) {
    std::vector<double> pred, label;
    pred.reserve(split.size());
    label.reserve(split.size());
    for (size_t i = 0; i < split.size(); ++i) {
        pred.push_back(model.predict_value(corrupt(split[i], i)));
        label.push_back(split[i].label);
    }
    return compute_metrics(pred, label);
}

MetricRecord average_metrics(std::span<const EvalRow> rows) {
    MetricRecord avg;
    double n = static_cast<double>(rows.size());
    for (const auto& row : rows) {
        const auto& m = row.metrics;
        avg.mae += m.mae / n;
        avg.corr += m.corr / n;
        avg.acc2_neg_nonneg += m.acc2_neg_nonneg / n;
        avg.acc2_neg_pos += m.acc2_neg_pos / n;
        avg.f1_neg_nonneg += m.f1_neg_nonneg / n;
        avg.f1_neg_pos += m.f1_neg_pos / n;
        avg.acc5 += m.acc5 / n;
        avg.acc7 += m.acc7 / n;
        for (int i = 0; i < 7; ++i)
            for (int j = 0; j < 7; ++j) avg.confusion[i][j] += m.confusion[i][j];
    }
    return avg;
}

std::string rate_label(double r) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "r=%.1f", r);
    return buf;
}

}  // namespace

EvalReport eval_intra(const DerlModel& model, std::span<const ModalityBundle> split,
                      uint64_t seed) {
    EvalReport report;
    for (size_t ri = 0; ri < intra_rate_grid().size(); ++ri) {
        double r = intra_rate_grid()[ri];
        uint64_t rate_seed = Rng::mix(seed, ri);
        MetricRecord m = eval_condition(
            model, split, [&](const ModalityBundle& b, size_t i) {
                return random_missing(b, MissingSpec::intra(r, Rng::mix(rate_seed, i)));
            });
        report.rows.push_back({rate_label(r), m});
    }
    report.rows.push_back({"average", average_metrics(report.rows)});
    return report;
}

std::vector<std::string> inter_subset_names() {
    return {"{t}", "{v}", "{a}", "{t,v}", "{t,a}", "{v,a}", "{t,v,a}"};
}

EvalReport eval_inter(const DerlModel& model, std::span<const ModalityBundle> split) {
    static const std::array<std::array<bool, 3>, 7> subsets{{{true, false, false},
                                                             {false, true, false},
                                                             {false, false, true},
                                                             {true, true, false},
                                                             {true, false, true},
                                                             {false, true, true},
                                                             {true, true, true}}};
    EvalReport report;
    auto names = inter_subset_names();
    for (size_t si = 0; si < subsets.size(); ++si) {
        MissingSpec spec = MissingSpec::inter(subsets[si][0], subsets[si][1], subsets[si][2], 0);
        MetricRecord m = eval_condition(model, split, [&](const ModalityBundle& b, size_t) {
            return random_missing(b, spec);
        });
        report.rows.push_back({names[si], m});
    }
    // The summary row averages over the six incomplete subsets only.
    report.rows.push_back(
        {"average", average_metrics(std::span(report.rows.data(), 6))});
    return report;
}

std::string report_csv_header() {
    return "condition,MAE,Corr,Acc2_neg_nonneg,Acc2_neg_pos,F1_neg_nonneg,F1_neg_pos,Acc5,Acc7";
}

void write_report_csv(const EvalReport& report, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw FormatError("cannot write report: " + path);
    f << report_csv_header() << "\n";
    char buf[256];
    for (const auto& row : report.rows) {
        const auto& m = row.metrics;
        std::snprintf(buf, sizeof buf, "%s,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n",
                      row.condition.c_str(), m.mae, m.corr, m.acc2_neg_nonneg, m.acc2_neg_pos,
                      m.f1_neg_nonneg, m.f1_neg_pos, m.acc5, m.acc7);
        f << buf;
    }
}

void write_confusion_csv(const MetricRecord& metrics, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw FormatError("cannot write confusion matrix: " + path);
    f << "true\\pred,-3,-2,-1,0,1,2,3\n";
    for (int i = 0; i < 7; ++i) {
        f << (i - 3);
        for (int j = 0; j < 7; ++j) f << "," << metrics.confusion[i][j];
        f << "\n";
    }
}

void write_history_csv(const std::vector<EpochStats>& history, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw FormatError("cannot write history: " + path);
    f << "epoch,lr,loss_task,loss_dec,loss_rec,loss_total,valid_mae\n";
    char buf[256];
    for (const auto& s : history) {
        std::snprintf(buf, sizeof buf, "%ld,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n", s.epoch, s.lr,
                      s.loss_task, s.loss_dec, s.loss_rec, s.loss_total, s.valid_mae);
        f << buf;
    }
}

}  // namespace derl
