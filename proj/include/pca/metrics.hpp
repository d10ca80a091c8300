#pragma once

#include <algorithm>
#include <cstdint>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "pca/tensor.hpp"

namespace pca::metrics {

/// Rows are true classes, columns predicted. One-vs-rest counts treat the
/// given class as positive and everything else as negative.
class ConfusionMatrix {
  public:
    explicit ConfusionMatrix(int classes) : classes_(classes) {
        if (classes < 1) throw std::invalid_argument("confusion: classes must be >= 1");
        counts_.assign(static_cast<std::size_t>(classes) * classes, 0);
    }

    static ConfusionMatrix from_predictions(const std::vector<int>& labels, const std::vector<int>& preds,
                                            int classes) {
        if (labels.size() != preds.size())
            throw std::invalid_argument("confusion: " + std::to_string(labels.size()) + " labels vs " +
                                        std::to_string(preds.size()) + " predictions");
        ConfusionMatrix cm(classes);
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] < 0 || labels[i] >= classes || preds[i] < 0 || preds[i] >= classes)
                throw std::invalid_argument("confusion: class out of range at sample " + std::to_string(i));
            ++cm.at(labels[i], preds[i]);
        }
        return cm;
    }

    int classes() const { return classes_; }

    std::int64_t& at(int t, int p) { return counts_[static_cast<std::size_t>(t) * classes_ + p]; }
    std::int64_t at(int t, int p) const { return counts_[static_cast<std::size_t>(t) * classes_ + p]; }

    std::int64_t total() const { return std::accumulate(counts_.begin(), counts_.end(), std::int64_t{0}); }

    std::int64_t tp(int c) const { return at(c, c); }

    std::int64_t fp(int c) const {
        std::int64_t n = 0;
        for (int t = 0; t < classes_; ++t)
            if (t != c) n += at(t, c);
        return n;
    }

    std::int64_t fn(int c) const {
        std::int64_t n = 0;
        for (int p = 0; p < classes_; ++p)
            if (p != c) n += at(c, p);
        return n;
    }

    std::int64_t tn(int c) const { return total() - tp(c) - fp(c) - fn(c); }

    /// Number of samples whose true class is c.
    std::int64_t support(int c) const {
        std::int64_t n = 0;
        for (int p = 0; p < classes_; ++p) n += at(c, p);
        return n;
    }

    std::int64_t trace() const {
        std::int64_t n = 0;
        for (int c = 0; c < classes_; ++c) n += at(c, c);
        return n;
    }

  private:
    int classes_;
    std::vector<std::int64_t> counts_;
};

namespace detail {
inline double ratio(std::int64_t num, std::int64_t den) { return den == 0 ? 0.0 : static_cast<double>(num) / den; }
}  // namespace detail

// one-vs-rest metrics; every 0/0 reports 0 (never inflates a score)

inline double accuracy(const ConfusionMatrix& cm, int c) { return detail::ratio(cm.tp(c) + cm.tn(c), cm.total()); }
inline double precision(const ConfusionMatrix& cm, int c) { return detail::ratio(cm.tp(c), cm.tp(c) + cm.fp(c)); }
inline double sensitivity(const ConfusionMatrix& cm, int c) { return detail::ratio(cm.tp(c), cm.tp(c) + cm.fn(c)); }
inline double specificity(const ConfusionMatrix& cm, int c) { return detail::ratio(cm.tn(c), cm.tn(c) + cm.fp(c)); }

inline double f1(const ConfusionMatrix& cm, int c) {
    const double p = precision(cm, c), r = sensitivity(cm, c);
    return (p + r) == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

/// Top-1 accuracy of the aggregate: correct predictions over all samples.
inline double global_accuracy(const ConfusionMatrix& cm) { return detail::ratio(cm.trace(), cm.total()); }

struct AucReport {
    std::vector<double> per_class;  // 0 for skipped classes
    std::vector<int> skipped;       // classes lacking positives or negatives
    double macro = 0.0;             // mean over evaluated classes
};

/// One-vs-rest area under the ROC curve from the rank statistic, with
/// midranks on ties. scores is (n,1,1,L); column c scores class c.
inline AucReport roc_auc_ovr(const Tensor<double>& scores, const std::vector<int>& labels) {
    const Shape& s = scores.shape();
    if (s.h != 1 || s.w != 1) throw std::invalid_argument("roc_auc: scores must be (n,1,1,L), got " + s.str());
    if (static_cast<std::size_t>(s.n) != labels.size())
        throw std::invalid_argument("roc_auc: " + std::to_string(s.n) + " score rows vs " +
                                    std::to_string(labels.size()) + " labels");
    const int n = s.n, classes = s.c;
    for (int label : labels)
        if (label < 0 || label >= classes) throw std::invalid_argument("roc_auc: label out of range");

    AucReport report;
    report.per_class.assign(static_cast<std::size_t>(classes), 0.0);
    double sum = 0.0;
    int evaluated = 0;

    std::vector<int> order(static_cast<std::size_t>(n));
    std::vector<double> rank(static_cast<std::size_t>(n));
    for (int c = 0; c < classes; ++c) {
        std::int64_t pos = 0;
        for (int label : labels) pos += (label == c);
        const std::int64_t neg = n - pos;
        if (pos == 0 || neg == 0) {
            report.skipped.push_back(c);
            continue;
        }

        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(),
                  [&](int a, int b) { return scores.at(a, 0, 0, c) < scores.at(b, 0, 0, c); });
        for (int i = 0; i < n;) {
            int j = i;
            while (j < n && scores.at(order[j], 0, 0, c) == scores.at(order[i], 0, 0, c)) ++j;
            const double mid = 0.5 * ((i + 1) + j);  // average of 1-based ranks i+1..j
            for (int t = i; t < j; ++t) rank[static_cast<std::size_t>(order[t])] = mid;
            i = j;
        }

        double pos_ranks = 0.0;
        for (int i = 0; i < n; ++i)
            if (labels[static_cast<std::size_t>(i)] == c) pos_ranks += rank[static_cast<std::size_t>(i)];
        const double auc =
            (pos_ranks - 0.5 * static_cast<double>(pos) * (static_cast<double>(pos) + 1)) /
            (static_cast<double>(pos) * static_cast<double>(neg));
        report.per_class[static_cast<std::size_t>(c)] = auc;
        sum += auc;
        ++evaluated;
    }
    report.macro = evaluated == 0 ? 0.0 : sum / evaluated;
    return report;
}

struct ClassMetrics {
    double accuracy = 0.0;
    double precision = 0.0;
    double sensitivity = 0.0;
    double specificity = 0.0;
    double f1 = 0.0;
    std::int64_t support = 0;
    bool degenerate = false;  // some denominator hit the 0/0 convention
};

struct MetricsReport {
    int classes = 0;
    std::int64_t samples = 0;
    double global_accuracy = 0.0;
    std::vector<ClassMetrics> per_class;
    double macro_accuracy = 0.0, macro_precision = 0.0, macro_sensitivity = 0.0, macro_specificity = 0.0,
           macro_f1 = 0.0;
    double weighted_precision = 0.0, weighted_sensitivity = 0.0, weighted_specificity = 0.0, weighted_f1 = 0.0;
    AucReport auc;
    bool has_auc = false;

    std::string to_json() const {
        nlohmann::json j;
        j["classes"] = classes;
        j["samples"] = samples;
        j["global_accuracy"] = global_accuracy;
        j["per_class"] = nlohmann::json::array();
        for (int c = 0; c < classes; ++c) {
            const auto& m = per_class[static_cast<std::size_t>(c)];
            nlohmann::json row{{"class", c},           {"accuracy", m.accuracy},       {"precision", m.precision},
                               {"sensitivity", m.sensitivity}, {"specificity", m.specificity}, {"f1", m.f1},
                               {"support", m.support}, {"degenerate", m.degenerate}};
            if (has_auc) row["auc"] = auc.per_class[static_cast<std::size_t>(c)];
            j["per_class"].push_back(std::move(row));
        }
        j["macro"] = {{"accuracy", macro_accuracy},
                      {"precision", macro_precision},
                      {"sensitivity", macro_sensitivity},
                      {"specificity", macro_specificity},
                      {"f1", macro_f1}};
        j["weighted"] = {{"precision", weighted_precision},
                         {"sensitivity", weighted_sensitivity},
                         {"specificity", weighted_specificity},
                         {"f1", weighted_f1}};
        if (has_auc) {
            j["macro"]["auc"] = auc.macro;
            j["auc_skipped"] = auc.skipped;
        }
        return j.dump(2);
    }

    std::string to_table() const {
        std::ostringstream out;
        out << std::fixed << std::setprecision(4);
        out << std::setw(6) << "class" << std::setw(10) << "support" << std::setw(10) << "acc" << std::setw(10)
            << "prec" << std::setw(10) << "sens" << std::setw(10) << "spec" << std::setw(10) << "f1";
        if (has_auc) out << std::setw(10) << "auc";
        out << "\n";
        for (int c = 0; c < classes; ++c) {
            const auto& m = per_class[static_cast<std::size_t>(c)];
            out << std::setw(6) << c << std::setw(10) << m.support << std::setw(10) << m.accuracy << std::setw(10)
                << m.precision << std::setw(10) << m.sensitivity << std::setw(10) << m.specificity << std::setw(10)
                << m.f1;
            if (has_auc) out << std::setw(10) << auc.per_class[static_cast<std::size_t>(c)];
            if (m.degenerate) out << "  (degenerate)";
            out << "\n";
        }
        out << std::setw(6) << "macro" << std::setw(10) << samples << std::setw(10) << macro_accuracy << std::setw(10)
            << macro_precision << std::setw(10) << macro_sensitivity << std::setw(10) << macro_specificity
            << std::setw(10) << macro_f1;
        if (has_auc) out << std::setw(10) << auc.macro;
        out << "\n";
        out << "global accuracy " << global_accuracy << "\n";
        return out.str();
    }
};

inline MetricsReport evaluate(const ConfusionMatrix& cm) {
    MetricsReport r;
    r.classes = cm.classes();
    r.samples = cm.total();
    r.global_accuracy = global_accuracy(cm);
    const double total_support = static_cast<double>(r.samples);
    for (int c = 0; c < r.classes; ++c) {
        ClassMetrics m;
        m.accuracy = accuracy(cm, c);
        m.precision = precision(cm, c);
        m.sensitivity = sensitivity(cm, c);
        m.specificity = specificity(cm, c);
        m.f1 = f1(cm, c);
        m.support = cm.support(c);
        m.degenerate = (cm.tp(c) + cm.fp(c) == 0) || (cm.tp(c) + cm.fn(c) == 0) || (cm.tn(c) + cm.fp(c) == 0) ||
                       cm.total() == 0;
        r.per_class.push_back(m);

        r.macro_accuracy += m.accuracy;
        r.macro_precision += m.precision;
        r.macro_sensitivity += m.sensitivity;
        r.macro_specificity += m.specificity;
        r.macro_f1 += m.f1;
        if (total_support > 0) {
            const double w = static_cast<double>(m.support) / total_support;
            r.weighted_precision += w * m.precision;
            r.weighted_sensitivity += w * m.sensitivity;
            r.weighted_specificity += w * m.specificity;
            r.weighted_f1 += w * m.f1;
        }
    }
    r.macro_accuracy /= r.classes;
    r.macro_precision /= r.classes;
    r.macro_sensitivity /= r.classes;
    r.macro_specificity /= r.classes;
    r.macro_f1 /= r.classes;
    return r;
}

inline MetricsReport evaluate(const ConfusionMatrix& cm, const Tensor<double>& scores,
                              const std::vector<int>& labels) {
    MetricsReport r = evaluate(cm);
    r.auc = roc_auc_ovr(scores, labels);
    r.has_auc = true;
    return r;
}

}  // namespace pca::metrics
