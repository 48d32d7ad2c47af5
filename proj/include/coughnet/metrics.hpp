#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "coughnet/errors.hpp"

namespace coughnet {

// Entries are reals so fold means stay representable.
struct ConfusionMatrix {
    double tp = 0, tn = 0, fp = 0, fn = 0;
    double total() const { return tp + tn + fp + fn; }
};

// prediction = (score >= threshold); label 1 is covid positive
inline ConfusionMatrix confusion(const std::vector<double>& scores, const std::vector<int>& labels,
                                 double threshold) {
    if (scores.size() != labels.size()) throw LengthMismatch("confusion: scores vs labels");
    if (scores.empty()) throw EmptyInput("confusion: no samples");
    ConfusionMatrix cm;
    for (size_t i = 0; i < scores.size(); ++i) {
        const bool predicted = scores[i] >= threshold;
        if (labels[i] == 1) {
            (predicted ? cm.tp : cm.fn) += 1.0;
        } else {
            (predicted ? cm.fp : cm.tn) += 1.0;
        }
    }
    return cm;
}

struct MetricSummary {
    double acc = 0, se = 0, sp = 0, pr = 0, f1 = 0;
};

inline MetricSummary summary(const ConfusionMatrix& cm) {
    MetricSummary s;
    if (cm.total() <= 0) throw UndefinedMetric("accuracy: empty confusion matrix");
    s.acc = (cm.tp + cm.tn) / cm.total();
    if (cm.tp + cm.fn <= 0) throw UndefinedMetric("sensitivity: no positive samples");
    s.se = cm.tp / (cm.tp + cm.fn);
    if (cm.tn + cm.fp <= 0) throw UndefinedMetric("specificity: no negative samples");
    s.sp = cm.tn / (cm.tn + cm.fp);
    if (cm.tp + cm.fp <= 0) throw UndefinedMetric("precision: no positive predictions");
    s.pr = cm.tp / (cm.tp + cm.fp);
    if (s.pr + s.se <= 0) throw UndefinedMetric("f1: precision and sensitivity both zero");
    s.f1 = 2.0 * s.pr * s.se / (s.pr + s.se);
    return s;
}

// Report-table variant: undefined entries become NaN instead of aborting the
// whole report when one fold degenerates.
inline MetricSummary summary_allow_nan(const ConfusionMatrix& cm) {
    constexpr double nan = std::numeric_limits<double>::quiet_NaN();
    MetricSummary s;
    s.acc = cm.total() > 0 ? (cm.tp + cm.tn) / cm.total() : nan;
    s.se = cm.tp + cm.fn > 0 ? cm.tp / (cm.tp + cm.fn) : nan;
    s.sp = cm.tn + cm.fp > 0 ? cm.tn / (cm.tn + cm.fp) : nan;
    s.pr = cm.tp + cm.fp > 0 ? cm.tp / (cm.tp + cm.fp) : nan;
    s.f1 = s.pr + s.se > 0 ? 2.0 * s.pr * s.se / (s.pr + s.se) : nan;
    return s;
}

struct RocCurve {
    std::vector<double> fpr, tpr, thresholds;
};

// Threshold sweep over the distinct scores, descending; ties share one
// threshold. Endpoints (0,0) and (1,1) are always present.
inline RocCurve roc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw LengthMismatch("roc: scores vs labels");
    double p = 0, n = 0;
    for (int l : labels) (l == 1 ? p : n) += 1.0;
    if (p == 0 || n == 0) throw SingleClass("roc: both classes required");

    std::vector<size_t> order(scores.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] > scores[b]; });

    RocCurve curve;
    curve.fpr.push_back(0.0);
    curve.tpr.push_back(0.0);
    curve.thresholds.push_back(std::numeric_limits<double>::infinity());

    double tp = 0, fp = 0;
    size_t i = 0;
    while (i < order.size()) {
        const double t = scores[order[i]];
        while (i < order.size() && scores[order[i]] == t) {
            (labels[order[i]] == 1 ? tp : fp) += 1.0;
            ++i;
        }
        curve.fpr.push_back(fp / n);
        curve.tpr.push_back(tp / p);
        curve.thresholds.push_back(t);
    }
    // consuming every sample lands the sweep on (1,1), so both endpoints are
    // already present: (0,0) from the +inf row, (1,1) from the last group
    return curve;
}

// Trapezoidal area; equals the Mann-Whitney statistic with half weight on ties.
inline double auc(const RocCurve& curve) {
    double area = 0.0;
    for (size_t i = 1; i < curve.fpr.size(); ++i) {
        area += (curve.fpr[i] - curve.fpr[i - 1]) * (curve.tpr[i] + curve.tpr[i - 1]) * 0.5;
    }
    return area;
}

inline double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    return auc(roc(scores, labels));
}

inline ConfusionMatrix mean_folds(const std::vector<ConfusionMatrix>& cms) {
    if (cms.empty()) throw EmptyInput("mean over zero folds");
    ConfusionMatrix m;
    for (const auto& cm : cms) {
        m.tp += cm.tp;
        m.tn += cm.tn;
        m.fp += cm.fp;
        m.fn += cm.fn;
    }
    const double k = static_cast<double>(cms.size());
    m.tp /= k;
    m.tn /= k;
    m.fp /= k;
    m.fn /= k;
    return m;
}

// CSV with a gnuplot-friendly comment header.
inline std::string roc_csv(const RocCurve& curve) {
    std::ostringstream os;
    os << "# ROC curve; plot with: plot 'file' using 2:3 with lines\n";
    os << "threshold,fpr,tpr\n";
    os.precision(9);
    for (size_t i = 0; i < curve.fpr.size(); ++i) {
        os << curve.thresholds[i] << ',' << curve.fpr[i] << ',' << curve.tpr[i] << '\n';
    }
    return os.str();
}

}  // namespace coughnet
