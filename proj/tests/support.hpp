#pragma once

// Independent oracles and small builders shared by the unit and acceptance
// suites. Oracles deliberately avoid calling the code they check.

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "maids/experience_library.hpp"
#include "maids/labels.hpp"
#include "maids/metrics.hpp"

namespace maids::oracle {

inline std::vector<float> random_unit(std::mt19937_64& rng, std::size_t dim) {
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> v(dim);
    double sq = 0;
    for (auto& x : v) {
        x = n(rng);
        sq += x * x;
    }
    std::vector<float> out(dim);
    for (std::size_t i = 0; i < dim; ++i) out[i] = static_cast<float>(v[i] / std::sqrt(sq));
    return out;
}

inline EntryFields make_fields(const FlowEmbedding& key, const ClassSet& classes, std::size_t actual,
                               std::size_t predicted, std::int64_t source = -1) {
    const auto y = classes.at(actual), yhat = classes.at(predicted);
    return {key, RuleText::make("IF x THEN class=" + y.name() + "; previously misclassified as " + yhat.name(), y, yhat),
            yhat, y, source};
}

struct BruteHit {
    std::size_t index;
    double similarity;
};

/// Plain argmax over stored keys; ties by smaller index. Double-precision
/// dot product of the float values, as the library documents.
inline std::optional<BruteHit> brute_top1(const std::vector<std::vector<float>>& keys, const std::vector<float>& q,
                                          double tau) {
    std::optional<BruteHit> best;
    for (std::size_t i = 0; i < keys.size(); ++i) {
        double dot = 0;
        bool zero = true;
        for (std::size_t d = 0; d < q.size(); ++d) {
            dot += static_cast<double>(keys[i][d]) * static_cast<double>(q[d]);
            if (keys[i][d] != 0.0f) zero = false;
        }
        if (zero) continue;
        if (!best || dot > best->similarity) best = BruteHit{i, dot};
    }
    if (best && best->similarity >= tau) return best;
    return std::nullopt;
}

/// Textbook macro P/R/F1 from a dense matrix whose last column is Unknown.
struct OracleMetrics {
    double precision, recall, f1, accuracy;
};

inline OracleMetrics oracle_macro(const std::vector<std::vector<std::uint64_t>>& m) {
    const std::size_t k = m.size();
    double p_sum = 0, r_sum = 0, f_sum = 0, diag = 0, total = 0;
    for (std::size_t c = 0; c < k; ++c) {
        double tp = static_cast<double>(m[c][c]), fp = 0, fn = 0;
        for (std::size_t t = 0; t < k; ++t)
            if (t != c) fp += static_cast<double>(m[t][c]);
        for (std::size_t p = 0; p <= k; ++p) {
            if (p != c) fn += static_cast<double>(m[c][p]);
            total += static_cast<double>(m[c][p]);
        }
        diag += tp;
        const double p = tp + fp > 0 ? tp / (tp + fp) : 0.0;
        const double r = tp + fn > 0 ? tp / (tp + fn) : 0.0;
        p_sum += p;
        r_sum += r;
        f_sum += p + r > 0 ? 2 * p * r / (p + r) : 0.0;
    }
    return {p_sum / static_cast<double>(k), r_sum / static_cast<double>(k), f_sum / static_cast<double>(k),
            diag / total};
}

inline ClassSet numbered_classes(std::size_t k) {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < k; ++i) names.push_back("C" + std::to_string(i));
    return ClassSet(names);
}

inline ConfusionMatrix to_matrix(const ClassSet& classes, const std::vector<std::vector<std::uint64_t>>& m) {
    ConfusionMatrix cm(classes);
    for (std::size_t t = 0; t < m.size(); ++t)
        for (std::size_t p = 0; p < m[t].size(); ++p) cm.add(t, p, m[t][p]);
    return cm;
}

/// FNV-1a 64 written out longhand, seed folded into the offset basis.
inline std::uint64_t reference_fnv(const std::string& s, std::uint64_t seed = 0) {
    std::uint64_t h = 14695981039346656037ULL ^ seed;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace maids::oracle
