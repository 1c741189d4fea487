#pragma once

#include <array>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "derl/model.hpp"

namespace derl {

// ---- metrics ----

struct MetricRecord {
    double mae = 0.0;
    double corr = 0.0;
    bool corr_degenerate = false;  // zero-variance input, corr reported as 0
    double acc2_neg_nonneg = 0.0;
    double acc2_neg_pos = 0.0;
    double f1_neg_nonneg = 0.0;
    double f1_neg_pos = 0.0;
    double acc5 = 0.0;
    double acc7 = 0.0;
    std::array<std::array<long, 7>, 7> confusion{};  // [true][pred], classes -3..3
};

// Class index in 0..6 for the 7-point scale: round half away from zero, clamp.
int sentiment_class7(double y);
int sentiment_class5(double y);

MetricRecord compute_metrics(std::span<const double> pred, std::span<const double> label);

// ---- optimizer ----

// AdamW with decoupled weight decay. Slot order follows registry order, so
// optimizer state lines up deterministically across runs.
class AdamW {
public:
    AdamW(ParamRegistry& params, double lr, double weight_decay = 0.01, double beta1 = 0.9,
          double beta2 = 0.999, double eps = 1e-8);
    void step(double lr_override);
    void step() { step(lr_); }
    double base_lr() const { return lr_; }

private:
    ParamRegistry& params_;
    double lr_, wd_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

double cosine_annealed_lr(double base_lr, long epoch, long total_epochs);

// ---- training ----

struct TrainConfig {
    double lr = 1e-4;
    long batch_size = 64;
    long epochs = 200;
    double augment_fraction = 0.5;   // share of training samples corrupted per epoch
    double selection_rate = 0.5;     // fixed missing rate for validation model selection
    double weight_decay = 0.01;
    uint64_t seed = 0;

    void validate() const;
};

struct EpochStats {
    long epoch = 0;
    double lr = 0.0;
    double loss_task = 0.0, loss_dec = 0.0, loss_rec = 0.0, loss_total = 0.0;
    double valid_mae = 0.0;
};

struct TrainResult {
    std::unique_ptr<DerlModel> model;  // parameters restored to the selected epoch
    std::vector<EpochStats> history;
    long best_epoch = 0;
    double best_valid_mae = 0.0;
};

TrainResult train_model(const Dataset& ds, const ModelConfig& mcfg, const TrainConfig& tcfg);

// Re-runs model selection over a history; used to verify selection determinism.
long select_best_epoch(const std::vector<EpochStats>& history);

double valid_mae_at_rate(const DerlModel& model, std::span<const ModalityBundle> split,
                         double rate, uint64_t seed);

double mean_predictor_mae(std::span<const ModalityBundle> train_split,
                          std::span<const ModalityBundle> test_split);

// ---- evaluation protocols ----

struct EvalRow {
    std::string condition;
    MetricRecord metrics;
};

struct EvalReport {
    std::vector<EvalRow> rows;
};

inline const std::vector<double>& intra_rate_grid() {
    static const std::vector<double> grid{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    return grid;
}

// Per-rate rows over the r = 0.0 .. 0.9 grid plus an "average" row. Eval-time
// masks are fixed per (seed, rate).
EvalReport eval_intra(const DerlModel& model, std::span<const ModalityBundle> split,
                      uint64_t seed);

// All 7 non-empty availability subsets plus the average over the 6 incomplete
// ones.
EvalReport eval_inter(const DerlModel& model, std::span<const ModalityBundle> split);

std::vector<std::string> inter_subset_names();

// ---- report serialization ----

std::string report_csv_header();
void write_report_csv(const EvalReport& report, const std::string& path);
void write_confusion_csv(const MetricRecord& metrics, const std::string& path);
void write_history_csv(const std::vector<EpochStats>& history, const std::string& path);

}  // namespace derl
