#pragma once

// Independent reference implementation of the evaluation metrics, written as
// plain loops against the written definitions. Kept deliberately separate
// from the library code so the two can disagree.

#include <cmath>
#include <cstddef>
#include <vector>

namespace oracle {

inline int clamp7(double y) {
    double r = std::round(y);  // std::round is half-away-from-zero
    if (r < -3) r = -3;
    if (r > 3) r = 3;
    return static_cast<int>(r) + 3;
}

inline int clamp5(double y) {
    double r = std::round(y);
    if (r < -2) r = -2;
    if (r > 2) r = 2;
    return static_cast<int>(r) + 2;
}

struct Metrics {
    double mae, corr, acc2_neg_nonneg, acc2_neg_pos, f1_neg_nonneg, f1_neg_pos, acc5, acc7;
    bool corr_degenerate;
    long confusion[7][7];
};

inline double f1_from_counts(long tp, long fp, long fn) {
    double denom_p = static_cast<double>(tp + fp);
    double denom_r = static_cast<double>(tp + fn);
    if (denom_p == 0.0 || denom_r == 0.0) return 0.0;
    double p = tp / denom_p, r = tp / denom_r;
    if (p + r == 0.0) return 0.0;
    return 2.0 * p * r / (p + r);
}

inline Metrics compute(const std::vector<double>& pred, const std::vector<double>& label) {
    Metrics m{};
    size_t n = pred.size();

    double abs_sum = 0;
    for (size_t i = 0; i < n; ++i) abs_sum += std::fabs(pred[i] - label[i]);
    m.mae = abs_sum / static_cast<double>(n);

    double mp = 0, ml = 0;
    for (size_t i = 0; i < n; ++i) {
        mp += pred[i];
        ml += label[i];
    }
    mp /= static_cast<double>(n);
    ml /= static_cast<double>(n);
    double sxy = 0, sxx = 0, syy = 0;
    for (size_t i = 0; i < n; ++i) {
        sxy += (pred[i] - mp) * (label[i] - ml);
        sxx += (pred[i] - mp) * (pred[i] - mp);
        syy += (label[i] - ml) * (label[i] - ml);
    }
    if (sxx == 0.0 || syy == 0.0) {
        m.corr = 0.0;
        m.corr_degenerate = true;
    } else {
        m.corr = sxy / (std::sqrt(sxx) * std::sqrt(syy));
        m.corr_degenerate = false;
    }

    // Left binarization: negative vs non-negative, all samples; the
    // positive-sentiment class is "non-negative".
    long hit = 0, tp = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < n; ++i) {
        bool pl = label[i] >= 0.0, pp = pred[i] >= 0.0;
        if (pl == pp) ++hit;
        if (pl && pp) ++tp;
        if (!pl && pp) ++fp;
        if (pl && !pp) ++fn;
    }
    m.acc2_neg_nonneg = static_cast<double>(hit) / static_cast<double>(n);
    m.f1_neg_nonneg = f1_from_counts(tp, fp, fn);

    // Right binarization: negative vs positive, samples with label == 0 excluded.
    long total = 0;
    hit = tp = fp = fn = 0;
    for (size_t i = 0; i < n; ++i) {
        if (label[i] == 0.0) continue;
        ++total;
        bool pl = label[i] > 0.0, pp = pred[i] > 0.0;
        if (pl == pp) ++hit;
        if (pl && pp) ++tp;
        if (!pl && pp) ++fp;
        if (pl && !pp) ++fn;
    }
    m.acc2_neg_pos = total == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(total);
    m.f1_neg_pos = f1_from_counts(tp, fp, fn);

    long h5 = 0, h7 = 0;
    for (long i = 0; i < 7; ++i)
        for (long j = 0; j < 7; ++j) m.confusion[i][j] = 0;
    for (size_t i = 0; i < n; ++i) {
        if (clamp5(pred[i]) == clamp5(label[i])) ++h5;
        int cp = clamp7(pred[i]), cl = clamp7(label[i]);
        if (cp == cl) ++h7;
        ++m.confusion[cl][cp];
    }
    m.acc5 = static_cast<double>(h5) / static_cast<double>(n);
    m.acc7 = static_cast<double>(h7) / static_cast<double>(n);
    return m;
}

}  // namespace oracle
