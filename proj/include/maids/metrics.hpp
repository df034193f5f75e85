#pragma once

#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "maids/error.hpp"
#include "maids/labels.hpp"

namespace maids {

/// Counts indexed (true class, predicted class). The last column collects
/// predictions outside the class set.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(ClassSet classes)
        : classes_(std::move(classes)), counts_(classes_.size() * (classes_.size() + 1), 0) {}

    const ClassSet& classes() const noexcept { return classes_; }
    std::size_t num_classes() const noexcept { return classes_.size(); }
    std::size_t unknown_column() const noexcept { return classes_.size(); }

    void accumulate(const ClassLabel& truth, const ClassLabel& predicted) {
        auto t = classes_.index_of(truth);
        if (!t) throw Error(ErrorCode::UnknownTrueLabel, "true label '" + truth.name() + "' not in class set");
        auto p = classes_.index_of(predicted);
        ++at(*t, p ? *p : unknown_column());
    }

    void add(std::size_t truth, std::size_t predicted_col, std::uint64_t n = 1) { at(truth, predicted_col) += n; }

    std::uint64_t count(std::size_t truth, std::size_t predicted_col) const {
        return counts_[truth * (classes_.size() + 1) + predicted_col];
    }

    std::uint64_t total() const {
        std::uint64_t t = 0;
        for (auto c : counts_) t += c;
        return t;
    }

    std::uint64_t row_sum(std::size_t truth) const {
        std::uint64_t s = 0;
        for (std::size_t p = 0; p <= classes_.size(); ++p) s += count(truth, p);
        return s;
    }

    /// Cell-wise addition; matrices must share the class set.
    void merge(const ConfusionMatrix& other) {
        if (other.classes_.names() != classes_.names())
            throw Error(ErrorCode::InvalidConfig, "merging confusion matrices over different class sets");
        for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    }

    friend bool operator==(const ConfusionMatrix& a, const ConfusionMatrix& b) {
        return a.classes_.names() == b.classes_.names() && a.counts_ == b.counts_;
    }

    nlohmann::json to_json() const {
        nlohmann::json rows = nlohmann::json::array();
        for (std::size_t t = 0; t < classes_.size(); ++t) {
            std::vector<std::uint64_t> row;
            for (std::size_t p = 0; p <= classes_.size(); ++p) row.push_back(count(t, p));
            rows.push_back(row);
        }
        auto cols = classes_.names();
        cols.push_back("Unknown");
        return {{"rows", classes_.names()}, {"columns", cols}, {"counts", rows}};
    }

private:
    std::uint64_t& at(std::size_t t, std::size_t p) { return counts_[t * (classes_.size() + 1) + p]; }

    ClassSet classes_;
    std::vector<std::uint64_t> counts_;
};

struct ClassMetrics {
    std::string name;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::uint64_t support = 0;
};

struct MetricsReport {
    double accuracy = 0.0;
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
    std::vector<ClassMetrics> per_class;
    std::uint64_t scored = 0;

    nlohmann::json to_json() const {
        nlohmann::json pc = nlohmann::json::object();
        for (auto& c : per_class)
            pc[c.name] = {{"precision", c.precision}, {"recall", c.recall}, {"f1", c.f1}, {"support", c.support}};
        return {{"accuracy", accuracy},       {"macro_precision", macro_precision},
                {"macro_recall", macro_recall}, {"macro_f1", macro_f1},
                {"scored", scored},           {"per_class", pc}};
    }
};

/// Per-class precision, recall, and F1, then their unweighted means over
/// the class set. Undefined ratios are 0 and still enter the mean. Unknown
/// predictions are false negatives for the true class and false positives
/// for no class. Macro F1 is the mean of per-class F1.
inline MetricsReport macro_metrics(const ConfusionMatrix& cm) {
    const std::size_t n = cm.num_classes();
    const std::uint64_t total = cm.total();
    if (total == 0) throw Error(ErrorCode::EmptyMatrix, "no scored outcomes");
    MetricsReport r;
    r.scored = total;
    std::uint64_t trace = 0;
    for (std::size_t c = 0; c < n; ++c) {
        const std::uint64_t tp = cm.count(c, c);
        trace += tp;
        std::uint64_t predicted = 0;
        for (std::size_t t = 0; t < n; ++t) predicted += cm.count(t, c);
        const std::uint64_t support = cm.row_sum(c);
        ClassMetrics m;
        m.name = cm.classes().names()[c];
        m.support = support;
        m.precision = predicted ? static_cast<double>(tp) / static_cast<double>(predicted) : 0.0;
        m.recall = support ? static_cast<double>(tp) / static_cast<double>(support) : 0.0;
        m.f1 = (m.precision + m.recall) > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
        r.macro_precision += m.precision;
        r.macro_recall += m.recall;
        r.macro_f1 += m.f1;
        r.per_class.push_back(std::move(m));
    }
    r.macro_precision /= static_cast<double>(n);
    r.macro_recall /= static_cast<double>(n);
    r.macro_f1 /= static_cast<double>(n);
    r.accuracy = static_cast<double>(trace) / static_cast<double>(total);
    return r;
}

/// One scored prediction in stream order.
struct ScoredOutcome {
    ClassLabel truth;
    ClassLabel predicted;
    std::uint64_t library_size = 0;  // library size after this outcome
};

struct CurvePoint {
    std::uint64_t sequence_end = 0;  // 1-based count of outcomes consumed
    double window_macro_f1 = 0.0;
    double cumulative_macro_f1 = 0.0;
    std::uint64_t library_size = 0;
};

/// One point per completed window of `window` outcomes: macro F1 over that
/// trailing window and over everything from the start.
inline std::vector<CurvePoint> windowed_curve(std::span<const ScoredOutcome> outcomes, const ClassSet& classes,
                                              std::size_t window) {
    if (window == 0) throw Error(ErrorCode::OutOfRange, "curve window must be >= 1");
    std::vector<CurvePoint> curve;
    ConfusionMatrix cumulative(classes);
    ConfusionMatrix current(classes);
    for (std::size_t i = 0; i < outcomes.size(); ++i) {
        cumulative.accumulate(outcomes[i].truth, outcomes[i].predicted);
        current.accumulate(outcomes[i].truth, outcomes[i].predicted);
        if ((i + 1) % window == 0) {
            curve.push_back({i + 1, macro_metrics(current).macro_f1, macro_metrics(cumulative).macro_f1,
                             outcomes[i].library_size});
            current = ConfusionMatrix(classes);
        }
    }
    return curve;
}

inline std::string curve_csv(std::span<const CurvePoint> curve) {
    std::string out = "sequence_end,window_macro_f1,cumulative_macro_f1,library_size\n";
    char buf[128];
    for (auto& p : curve) {
        std::snprintf(buf, sizeof buf, "%llu,%.6f,%.6f,%llu\n", static_cast<unsigned long long>(p.sequence_end),
                      p.window_macro_f1, p.cumulative_macro_f1, static_cast<unsigned long long>(p.library_size));
        out += buf;
    }
    return out;
}

}  // namespace maids
