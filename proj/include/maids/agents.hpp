#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "maids/embedding.hpp"
#include "maids/error.hpp"
#include "maids/experience_library.hpp"
#include "maids/flow_model.hpp"
#include "maids/hashing.hpp"
#include "maids/labels.hpp"
#include "maids/rule.hpp"

namespace maids {

// ---------------------------------------------------------------------------
// Prompts
// ---------------------------------------------------------------------------

enum class PromptKind { classify, induce };

struct Prompt {
    std::string system_text;
    std::string user_text;
    PromptKind kind = PromptKind::classify;
    // Set on induction prompts only.
    ClassLabel predicted;
    ClassLabel actual;

    std::string hash() const { return hex64(fnv1a64(user_text, fnv1a64(system_text))); }
};

inline constexpr std::string_view kContextSeparator = "\n\n";
inline constexpr std::string_view kNoExperience = "No relevant past experience.";
inline constexpr std::string_view kExperiencePrefix = "Relevant past experience (similarity ";
inline constexpr std::string_view kPriorRulePrefix = "Previous related experience: ";
inline constexpr std::string_view kNoPriorRule = "Previous related experience: none.";

inline std::string format_similarity(double s) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", s);
    return buf;
}

namespace detail {

inline std::string join_classes(const ClassSet& classes) {
    std::string out;
    for (std::size_t i = 0; i < classes.size(); ++i) {
        if (i) out += ", ";
        out += classes.names()[i];
    }
    return out;
}

}  // namespace detail

inline Prompt build_classification_prompt(std::string_view flow_json, const RetrievalResult& retrieval,
                                          const ClassSet& classes) {
    if (classes.empty()) throw Error(ErrorCode::PreconditionViolation, "class set must be non-empty");
    Prompt p;
    p.kind = PromptKind::classify;
    p.system_text =
        "You are a network intrusion detection analyst. Classify the network flow given as JSON into exactly one "
        "of these classes: " +
        detail::join_classes(classes) +
        ".\n"
        "If past experience is provided, it is a rule learned from an earlier misclassification of a similar flow; "
        "use it when its conditions apply.\n"
        "Answer with exactly one line `LABEL: <class>` followed by one short rationale line.";
    p.user_text = std::string(flow_json);
    p.user_text += kContextSeparator;
    if (auto* hit = as_hit(retrieval)) {
        p.user_text += kExperiencePrefix;
        p.user_text += format_similarity(hit->similarity) + "): " + hit->entry.rule.text;
    } else {
        p.user_text += kNoExperience;
    }
    return p;
}

inline Prompt build_induction_prompt(std::string_view flow_json, const ClassLabel& predicted,
                                     const ClassLabel& actual, const RetrievalResult& retrieval) {
    if (predicted == actual)
        throw Error(ErrorCode::PreconditionViolation, "induction requires predicted != actual");
    Prompt p;
    p.kind = PromptKind::induce;
    p.predicted = predicted;
    p.actual = actual;
    p.system_text =
        "You are a network security analyst performing error analysis for an intrusion detection system. "
        "A flow was misclassified. Compare the flow against the true class and the wrong prediction, and isolate "
        "the features that discriminate them (for example, a high average inter-arrival time can be the primary "
        "indicator of one attack type over another).\n"
        "Respond with one rule on a single line in the form:\n"
        "IF <feature conditions> THEN class=<true class>; previously misclassified as <predicted class>; "
        "key features: <comma-separated feature names>";
    p.user_text = "Flow: " + std::string(flow_json) + "\n";
    p.user_text += "predicted: " + predicted.name() + "\n";
    p.user_text += "actual: " + actual.name() + "\n";
    if (auto* hit = as_hit(retrieval)) {
        p.user_text += kPriorRulePrefix;
        p.user_text += hit->entry.rule.text + " (similarity " + format_similarity(hit->similarity) + ")";
    } else {
        p.user_text += kNoPriorRule;
    }
    return p;
}

// ---------------------------------------------------------------------------
// Verdicts and label parsing
// ---------------------------------------------------------------------------

enum class ParseStatus { exact, fuzzy, unparsed };

inline constexpr std::string_view to_string(ParseStatus s) {
    switch (s) {
        case ParseStatus::exact: return "exact";
        case ParseStatus::fuzzy: return "fuzzy";
        case ParseStatus::unparsed: return "unparsed";
    }
    return "unparsed";
}

struct AgentVerdict {
    ClassLabel label;
    std::string raw_text;
    ParseStatus parse_status = ParseStatus::unparsed;
};

namespace detail {

inline bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_'; }

inline std::string utf8_prefix(std::string_view s, std::size_t max_bytes) {
    if (s.size() <= max_bytes) return std::string(s);
    std::size_t cut = max_bytes;
    while (cut > 0 && (static_cast<unsigned char>(s[cut]) & 0xC0) == 0x80) --cut;
    return std::string(s.substr(0, cut));
}

}  // namespace detail

/// Three stages: a `LABEL: <class>` line naming a class exactly (any case);
/// else the earliest whole-word mention of any class name (ties by class
/// order); else Unknown holding the first 40 bytes. `LABEL: UNKNOWN` is an
/// exact, deliberate abstention.
inline std::pair<ClassLabel, ParseStatus> parse_label(std::string_view raw, const ClassSet& classes) {
    std::size_t pos = 0;
    while (pos <= raw.size()) {
        std::size_t end = raw.find('\n', pos);
        if (end == std::string_view::npos) end = raw.size();
        auto line = detail::trim(raw.substr(pos, end - pos));
        if (line.size() >= 6 && detail::iequals(line.substr(0, 6), "LABEL:")) {
            auto value = detail::trim(line.substr(6));
            while (!value.empty() && (value.back() == '.' || value.back() == '*' || value.back() == '`'))
                value.remove_suffix(1);
            while (!value.empty() && (value.front() == '*' || value.front() == '`')) value.remove_prefix(1);
            value = detail::trim(value);
            if (auto i = classes.index_of(value)) return {classes.at(*i), ParseStatus::exact};
            if (detail::iequals(value, "UNKNOWN")) return {ClassLabel::unknown("UNKNOWN"), ParseStatus::exact};
        }
        pos = end + 1;
    }

    const std::string lower = detail::to_lower(raw);
    std::optional<std::size_t> best_class;
    std::size_t best_pos = std::string::npos;
    for (std::size_t c = 0; c < classes.size(); ++c) {
        const std::string name = detail::to_lower(classes.names()[c]);
        std::size_t from = 0;
        while ((from = lower.find(name, from)) != std::string::npos) {
            const bool left_ok = from == 0 || !detail::is_word_char(lower[from - 1]);
            const std::size_t after = from + name.size();
            const bool right_ok = after >= lower.size() || !detail::is_word_char(lower[after]);
            if (left_ok && right_ok) {
                if (from < best_pos) {
                    best_pos = from;
                    best_class = c;
                }
                break;
            }
            ++from;
        }
    }
    if (best_class) return {classes.at(*best_class), ParseStatus::fuzzy};
    return {ClassLabel::unknown(detail::utf8_prefix(raw, 40)), ParseStatus::unparsed};
}

/// A rule from the induction agent, with how well the response fit the template.
struct InducedRule {
    RuleText rule;
    std::string raw_text;
    ParseStatus parse_status = ParseStatus::exact;
};

/// Accepts a response that already follows the template; anything else is
/// wrapped verbatim into it and marked unparsed.
inline InducedRule rule_from_response(std::string_view raw, const ClassLabel& actual, const ClassLabel& predicted) {
    auto body = detail::trim(raw);
    // Use the first line that looks like a rule.
    std::size_t pos = 0;
    while (pos <= body.size()) {
        std::size_t end = body.find('\n', pos);
        if (end == std::string_view::npos) end = body.size();
        auto line = detail::trim(body.substr(pos, end - pos));
        const auto lower = detail::to_lower(line);
        if (lower.rfind("if ", 0) == 0 && lower.find(" then class=") != std::string::npos)
            return {RuleText::make(std::string(line), actual, predicted), std::string(raw), ParseStatus::exact};
        pos = end + 1;
    }
    std::string flat(body);
    std::replace(flat.begin(), flat.end(), '\n', ' ');
    if (flat.empty()) flat = "(empty response)";
    std::string wrapped = "IF " + flat + " THEN class=" + actual.name() + "; previously misclassified as " +
                          predicted.name() + "; key features: unspecified";
    return {RuleText::make(std::move(wrapped), actual, predicted), std::string(raw), ParseStatus::unparsed};
}

// ---------------------------------------------------------------------------
// Agent interfaces
// ---------------------------------------------------------------------------

enum class AgentKind { remote_llm, mock };

struct AgentSpec {
    AgentKind kind = AgentKind::mock;
    std::string model_name = "gpt-4o";
    double temperature = 0.0;
    int max_response_tokens = 256;
    std::string endpoint;
    std::string api_key_env;
    std::chrono::milliseconds timeout{60000};
    int retries = 3;
    std::size_t max_in_flight = 4;
};

class ClassificationAgent {
public:
    virtual ~ClassificationAgent() = default;
    /// Throws AgentUnavailable or ResponseTimeout; never invents a label.
    virtual AgentVerdict classify(const Prompt& prompt) = 0;
};

class InductionAgent {
public:
    virtual ~InductionAgent() = default;
    virtual InducedRule induce_rule(const Prompt& prompt) = 0;
};

/// Hook for agents that learn from revealed ground truth during Phase 1.
class ObservingAgent {
public:
    virtual ~ObservingAgent() = default;
    virtual void observe(const FlowEmbedding& embedding, const FlowRecord& record, const ClassLabel& truth) = 0;
};

// ---------------------------------------------------------------------------
// Mock agents
// ---------------------------------------------------------------------------

/// Running per-class statistics shared by the mock classifier and inducer:
/// embedding centroids, and Welford mean/variance of each numeric feature.
class MockAgentState final : public ObservingAgent {
public:
    static constexpr std::size_t kNumeric = kNumericFeatureNames.size();

    MockAgentState(ClassSet classes, std::size_t dim)
        : classes_(std::move(classes)), dim_(dim), classes_state_(classes_.size(), PerClass(dim)) {}

    const ClassSet& classes() const noexcept { return classes_; }
    std::size_t dim() const noexcept { return dim_; }

    void observe(const FlowEmbedding& embedding, const FlowRecord& record, const ClassLabel& truth) override {
        auto c = classes_.index_of(truth);
        if (!c) return;
        observe_embedding(embedding, truth);
        auto& s = classes_state_[*c];
        ++s.feature_count;
        const double n = static_cast<double>(s.feature_count);
        auto x = record.numeric_features();
        for (std::size_t f = 0; f < kNumeric; ++f) {
            const double delta = x[f] - s.mean[f];
            s.mean[f] += delta / n;
            s.m2[f] += delta * (x[f] - s.mean[f]);
        }
    }

    /// Centroid-only update, used to prime a frozen mock from library keys.
    void observe_embedding(const FlowEmbedding& embedding, const ClassLabel& truth) {
        auto c = classes_.index_of(truth);
        if (!c || embedding.is_zero_sentinel()) return;
        if (embedding.dim() != dim_) throw Error(ErrorCode::DimensionMismatch, "observation dim");
        auto& s = classes_state_[*c];
        ++s.count;
        const double n = static_cast<double>(s.count);
        auto v = embedding.values();
        for (std::size_t i = 0; i < dim_; ++i) s.centroid[i] += (static_cast<double>(v[i]) - s.centroid[i]) / n;
    }

    /// Primes centroids from every library entry's key and true label.
    void prime_from_library(const ExperienceLibrary& library) {
        for (auto& e : library.entries()) observe_embedding(e.key, e.actual);
    }

    std::uint64_t count(std::size_t c) const { return classes_state_.at(c).count; }
    std::uint64_t feature_count(std::size_t c) const { return classes_state_.at(c).feature_count; }
    const std::vector<double>& centroid(std::size_t c) const { return classes_state_.at(c).centroid; }
    double feature_mean(std::size_t c, std::size_t f) const { return classes_state_.at(c).mean.at(f); }
    double feature_variance(std::size_t c, std::size_t f) const {
        auto& s = classes_state_.at(c);
        return s.feature_count ? s.m2.at(f) / static_cast<double>(s.feature_count) : 0.0;
    }

    /// Class whose centroid has the highest cosine with `query`; ties by
    /// class order. Empty when nothing has been observed.
    std::optional<std::size_t> nearest_centroid(const FlowEmbedding& query) const {
        if (query.is_zero_sentinel()) return std::nullopt;
        std::optional<std::size_t> best;
        double best_sim = -2.0;
        auto q = query.values();
        for (std::size_t c = 0; c < classes_state_.size(); ++c) {
            auto& s = classes_state_[c];
            if (!s.count) continue;
            double dot = 0.0, norm = 0.0;
            for (std::size_t i = 0; i < dim_; ++i) {
                dot += static_cast<double>(q[i]) * s.centroid[i];
                norm += s.centroid[i] * s.centroid[i];
            }
            const double sim = norm > 0.0 ? dot / std::sqrt(norm) : -1.0;
            if (sim > best_sim) {
                best_sim = sim;
                best = c;
            }
        }
        return best;
    }

    nlohmann::json to_json() const {
        nlohmann::json per = nlohmann::json::array();
        for (auto& s : classes_state_)
            per.push_back({{"count", s.count},
                           {"centroid", s.centroid},
                           {"feature_count", s.feature_count},
                           {"mean", s.mean},
                           {"m2", s.m2}});
        return {{"classes", classes_.names()}, {"dim", dim_}, {"per_class", per}};
    }

    static MockAgentState from_json(const nlohmann::json& j) {
        MockAgentState st(ClassSet(j.at("classes").get<std::vector<std::string>>()), j.at("dim").get<std::size_t>());
        auto& per = j.at("per_class");
        for (std::size_t c = 0; c < st.classes_state_.size(); ++c) {
            auto& s = st.classes_state_[c];
            s.count = per[c].at("count").get<std::uint64_t>();
            s.centroid = per[c].at("centroid").get<std::vector<double>>();
            s.feature_count = per[c].at("feature_count").get<std::uint64_t>();
            auto mean = per[c].at("mean").get<std::vector<double>>();
            auto m2 = per[c].at("m2").get<std::vector<double>>();
            std::copy_n(mean.begin(), kNumeric, s.mean.begin());
            std::copy_n(m2.begin(), kNumeric, s.m2.begin());
        }
        return st;
    }

private:
    struct PerClass {
        explicit PerClass(std::size_t dim) : centroid(dim, 0.0) {}
        std::uint64_t count = 0;
        std::vector<double> centroid;
        std::uint64_t feature_count = 0;
        std::array<double, kNumeric> mean{};
        std::array<double, kNumeric> m2{};
    };

    ClassSet classes_;
    std::size_t dim_;
    std::vector<PerClass> classes_state_;
};

namespace detail {

/// The flow JSON is the first line of every prompt we build; induction
/// prompts prefix it with "Flow: ".
inline std::string_view prompt_flow_json(std::string_view user_text) {
    auto line = user_text.substr(0, user_text.find('\n'));
    if (line.rfind("Flow: ", 0) == 0) line.remove_prefix(6);
    return line;
}

/// Target class of the rule quoted in a classification prompt, if any.
inline std::optional<std::string> retrieved_rule_target(std::string_view user_text) {
    auto at = user_text.find(kExperiencePrefix);
    if (at == std::string_view::npos) return std::nullopt;
    auto rest = user_text.substr(at);
    static constexpr std::string_view kThen = "THEN class=";
    auto t = rest.find(kThen);
    if (t == std::string_view::npos) return std::nullopt;
    auto value = rest.substr(t + kThen.size());
    auto end = value.find_first_of(";\n");
    return std::string(trim(value.substr(0, end)));
}

}  // namespace detail

/// Deterministic classifier. If the prompt carries a retrieved rule whose
/// target is a known class, it follows the rule. Otherwise it answers with
/// the nearest class centroid over observed embeddings, or UNKNOWN when
/// nothing has been observed.
class MockClassifier final : public ClassificationAgent {
public:
    MockClassifier(std::shared_ptr<const MockAgentState> state, std::shared_ptr<const Embedder> embedder)
        : state_(std::move(state)), embedder_(std::move(embedder)) {}

    AgentVerdict classify(const Prompt& prompt) override {
        if (prompt.kind != PromptKind::classify)
            throw Error(ErrorCode::PreconditionViolation, "classify needs a classification prompt");
        std::string raw;
        if (auto target = detail::retrieved_rule_target(prompt.user_text)) {
            if (auto c = state_->classes().index_of(*target)) {
                raw = "LABEL: " + state_->classes().names()[*c] + "\nFollowing the retrieved rule for a similar flow.";
            }
        }
        if (raw.empty()) {
            auto query = embedder_->embed(detail::prompt_flow_json(prompt.user_text));
            if (auto c = state_->nearest_centroid(query))
                raw = "LABEL: " + state_->classes().names()[*c] + "\nNearest class centroid.";
            else
                raw = "LABEL: UNKNOWN\nNo observations yet.";
        }
        auto [label, status] = parse_label(raw, state_->classes());
        return {label, raw, status};
    }

private:
    std::shared_ptr<const MockAgentState> state_;
    std::shared_ptr<const Embedder> embedder_;
};

/// Ranks numeric features of `record` by |z| against the running stats of
/// class `c` and returns the top `k` (index, z), ties by schema order.
/// A feature with zero variance uses unit scale; an unobserved class gives z = 0.
inline std::vector<std::pair<std::size_t, double>> top_z_features(const MockAgentState& state, std::size_t c,
                                                                  const FlowRecord& record, std::size_t k = 2) {
    auto x = record.numeric_features();
    std::vector<std::pair<std::size_t, double>> z;
    for (std::size_t f = 0; f < x.size(); ++f) {
        double score = 0.0;
        if (state.feature_count(c)) {
            const double var = state.feature_variance(c, f);
            const double sd = var > 0.0 ? std::sqrt(var) : 1.0;
            score = (x[f] - state.feature_mean(c, f)) / sd;
        }
        z.emplace_back(f, score);
    }
    std::stable_sort(z.begin(), z.end(),
                     [](const auto& a, const auto& b) { return std::fabs(a.second) > std::fabs(b.second); });
    z.resize(std::min(k, z.size()));
    return z;
}

/// Deterministic inducer: names the two features that deviate most from
/// the true class's running means.
class MockInducer final : public InductionAgent {
public:
    explicit MockInducer(std::shared_ptr<const MockAgentState> state) : state_(std::move(state)) {}

    InducedRule induce_rule(const Prompt& prompt) override {
        if (prompt.kind != PromptKind::induce)
            throw Error(ErrorCode::PreconditionViolation, "induce_rule needs an induction prompt");
        if (prompt.predicted == prompt.actual)
            throw Error(ErrorCode::PreconditionViolation, "induction requires predicted != actual");
        auto record = parse_flow_record(detail::prompt_flow_json(prompt.user_text));
        auto c = state_->classes().index_of(prompt.actual);
        if (!c) throw Error(ErrorCode::PreconditionViolation, "actual label outside class set");
        auto top = top_z_features(*state_, *c, record);
        auto x = record.numeric_features();

        std::string conditions, keys;
        for (std::size_t i = 0; i < top.size(); ++i) {
            auto [f, z] = top[i];
            if (i) {
                conditions += " AND ";
                keys += ", ";
            }
            conditions += std::string(kNumericFeatureNames[f]) + (z >= 0.0 ? " >= " : " <= ") + format_real(x[f]);
            char zbuf[32];
            std::snprintf(zbuf, sizeof zbuf, "%+.2f", z);
            keys += std::string(kNumericFeatureNames[f]) + " (z=" + zbuf + ")";
        }
        std::string text = "IF " + conditions + " THEN class=" + prompt.actual.name() +
                           "; previously misclassified as " + prompt.predicted.name() + "; key features: " + keys;
        return {RuleText::make(text, prompt.actual, prompt.predicted), text, ParseStatus::exact};
    }

private:
    std::shared_ptr<const MockAgentState> state_;
};

}  // namespace maids
