#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <mutex>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "maids/agents.hpp"
#include "maids/config.hpp"
#include "maids/embedding.hpp"
#include "maids/error.hpp"
#include "maids/experience_library.hpp"
#include "maids/flow_model.hpp"
#include "maids/metrics.hpp"

namespace maids {

// ---------------------------------------------------------------------------
// Transcript
// ---------------------------------------------------------------------------

struct TranscriptRecord {
    std::uint64_t flow_id = 0;
    std::string kind;  // "classify" | "induce"
    std::string prompt_hash;
    std::string raw_text;
    std::string parse_status;  // exact | fuzzy | unparsed | error

    std::string to_line() const {
        nlohmann::json j = {{"flow_id", flow_id},
                            {"kind", kind},
                            {"prompt_hash", prompt_hash},
                            {"raw_text", raw_text},
                            {"parse_status", parse_status}};
        return j.dump() + "\n";
    }
};

/// Appends JSON Lines records of every agent response.
class TranscriptWriter {
public:
    explicit TranscriptWriter(std::ostream& out) : out_(out) {}

    void write(const TranscriptRecord& r) {
        std::lock_guard lock(mu_);
        out_ << r.to_line();
        out_.flush();
    }

private:
    std::ostream& out_;
    std::mutex mu_;
};

// ---------------------------------------------------------------------------
// Outcomes and reports
// ---------------------------------------------------------------------------

struct StageLatency {
    double embed_ms = 0, retrieve_ms = 0, classify_ms = 0, induce_ms = 0;
};

struct FlowOutcome {
    std::uint64_t flow_id = 0;
    ClassLabel truth;
    std::optional<ClassLabel> predicted;      // empty when the flow errored
    std::optional<double> hit_similarity;     // empty on NoContext
    std::optional<std::uint64_t> hit_entry_id;
    std::string parse_status;                 // exact | fuzzy | unparsed | error
    std::optional<std::uint64_t> induced_rule_id;
    std::string induction;                    // none | ok | unparsed | failed
    std::optional<std::string> error;
    std::uint64_t library_size_after = 0;
    std::optional<StageLatency> latency;

    bool classified() const { return predicted.has_value(); }
    bool correct() const { return predicted && *predicted == truth; }

    nlohmann::json to_json() const {
        nlohmann::json j = {{"flow_id", flow_id},
                            {"true_label", truth.name()},
                            {"predicted", predicted ? nlohmann::json(predicted->name()) : nlohmann::json(nullptr)},
                            {"retrieval", hit_similarity ? nlohmann::json{{"similarity", *hit_similarity},
                                                                          {"entry_id", *hit_entry_id}}
                                                         : nlohmann::json("none")},
                            {"parse_status", parse_status},
                            {"induced_rule_id", induced_rule_id ? nlohmann::json(*induced_rule_id) : nlohmann::json(nullptr)},
                            {"induction", induction},
                            {"library_size_after", library_size_after}};
        if (error) j["error"] = *error;
        if (latency)
            j["latency_ms"] = {{"embed", latency->embed_ms},
                               {"retrieve", latency->retrieve_ms},
                               {"classify", latency->classify_ms},
                               {"induce", latency->induce_ms}};
        return j;
    }

    static FlowOutcome from_json(const nlohmann::json& j, const ClassSet& classes) {
        FlowOutcome o;
        o.flow_id = j.at("flow_id").get<std::uint64_t>();
        o.truth = classes.canonicalize(j.at("true_label").get<std::string>());
        if (!j.at("predicted").is_null()) o.predicted = classes.canonicalize(j.at("predicted").get<std::string>());
        if (j.at("retrieval").is_object()) {
            o.hit_similarity = j.at("retrieval").at("similarity").get<double>();
            o.hit_entry_id = j.at("retrieval").at("entry_id").get<std::uint64_t>();
        }
        o.parse_status = j.at("parse_status").get<std::string>();
        if (!j.at("induced_rule_id").is_null()) o.induced_rule_id = j.at("induced_rule_id").get<std::uint64_t>();
        o.induction = j.at("induction").get<std::string>();
        o.library_size_after = j.at("library_size_after").get<std::uint64_t>();
        if (j.contains("error")) o.error = j.at("error").get<std::string>();
        if (j.contains("latency_ms")) {
            auto& l = j.at("latency_ms");
            o.latency = StageLatency{l.at("embed").get<double>(), l.at("retrieve").get<double>(),
                                     l.at("classify").get<double>(), l.at("induce").get<double>()};
        }
        return o;
    }
};

struct ErrorTallies {
    std::uint64_t total = 0;
    std::uint64_t classified = 0;
    std::uint64_t errored = 0;
    std::uint64_t agent_failures = 0;
    std::uint64_t parse_failures = 0;
    std::uint64_t inductions = 0;
    std::uint64_t induction_failures = 0;
    std::uint64_t induction_unparsed = 0;

    nlohmann::json to_json() const {
        return {{"total", total},
                {"classified", classified},
                {"errored", errored},
                {"agent_failures", agent_failures},
                {"parse_failures", parse_failures},
                {"inductions", inductions},
                {"induction_failures", induction_failures},
                {"induction_unparsed", induction_unparsed}};
    }
};

/// BuildReport and EvalReport share this shape; `curve` is filled for builds.
struct RunReport {
    Phase phase = Phase::build;
    AblationMode mode = AblationMode::full;
    nlohmann::json config;
    std::string config_hash;
    std::vector<FlowOutcome> outcomes;
    std::optional<MetricsReport> metrics;
    std::optional<ConfusionMatrix> confusion;
    std::vector<CurvePoint> curve;
    std::uint64_t library_before = 0;
    std::uint64_t library_after = 0;
    ErrorTallies tallies;

    nlohmann::json to_json() const {
        nlohmann::json outs = nlohmann::json::array();
        for (auto& o : outcomes) outs.push_back(o.to_json());
        nlohmann::json curve_json = nlohmann::json::array();
        for (auto& p : curve)
            curve_json.push_back({{"sequence_end", p.sequence_end},
                                  {"window_macro_f1", p.window_macro_f1},
                                  {"cumulative_macro_f1", p.cumulative_macro_f1},
                                  {"library_size", p.library_size}});
        return {{"phase", to_string(phase)},
                {"mode", to_string(mode)},
                {"config", config},
                {"config_hash", config_hash},
                {"metrics", metrics ? metrics->to_json() : nlohmann::json(nullptr)},
                {"confusion", confusion ? confusion->to_json() : nlohmann::json(nullptr)},
                {"learning_curve", curve_json},
                {"library_before", library_before},
                {"library_after", library_after},
                {"tallies", tallies.to_json()},
                {"outcomes", outs}};
    }
};

namespace detail {

inline void finalize_report(RunReport& report, const ClassSet& classes, std::size_t curve_window, bool with_curve) {
    ConfusionMatrix cm(classes);
    std::vector<ScoredOutcome> scored;
    ErrorTallies t;
    t.total = report.outcomes.size();
    for (auto& o : report.outcomes) {
        if (o.classified()) {
            ++t.classified;
            cm.accumulate(o.truth, *o.predicted);
            scored.push_back({o.truth, *o.predicted, o.library_size_after});
            if (o.parse_status == "unparsed") ++t.parse_failures;
        } else {
            ++t.errored;
            ++t.agent_failures;
        }
        if (o.induced_rule_id) ++t.inductions;
        if (o.induction == "failed") ++t.induction_failures;
        if (o.induction == "unparsed") ++t.induction_unparsed;
    }
    report.tallies = t;
    if (cm.total() > 0) report.metrics = macro_metrics(cm);
    report.confusion = cm;
    if (with_curve) report.curve = windowed_curve(scored, classes, curve_window);
}

inline bool is_agent_error(const Error& e) {
    return e.code() == ErrorCode::AgentUnavailable || e.code() == ErrorCode::ResponseTimeout ||
           e.code() == ErrorCode::RemoteUnavailable || e.code() == ErrorCode::DimensionMismatch;
}

using Clock = std::chrono::steady_clock;

inline double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Phase 1
// ---------------------------------------------------------------------------

/// Agents taking part in a run. `inducer` is used only in full mode;
/// `observer` (if any) sees every flow's ground truth in full mode.
struct AgentSet {
    ClassificationAgent* classifier = nullptr;
    InductionAgent* inducer = nullptr;
    ObservingAgent* observer = nullptr;
};

struct BuildOptions {
    /// Resume support: outcomes already committed and the library size
    /// when the run first started.
    std::vector<FlowOutcome> prior_outcomes;
    std::optional<std::uint64_t> library_before;
    /// Called after every `checkpoint_interval` committed flows with the
    /// number of flows done so far.
    std::function<void(std::size_t done, const std::vector<FlowOutcome>&)> on_checkpoint;
    TranscriptWriter* transcript = nullptr;
};

/// Phase 1: each flow strictly in order, serialize, embed, retrieve,
/// classify, compare with ground truth, and in full mode induce a rule on
/// error and append it, so flow t+1 sees the library as it stood after t.
///
/// `library` is null for zero_shot. library_only retrieves without
/// inducing. Agent errors abort only their flow and are tallied.
inline RunReport run_build(const RunConfig& config, std::span<const LabeledFlow> flows, const Embedder& embedder,
                           AgentSet agents, ExperienceLibrary* library, BuildOptions options = {}) {
    if (!agents.classifier) throw Error(ErrorCode::InvalidConfig, "build needs a classification agent");
    const bool full = config.mode == AblationMode::full;
    if (config.mode == AblationMode::zero_shot && library)
        throw Error(ErrorCode::InvalidConfig, "zero_shot runs without a library");
    if (config.mode != AblationMode::zero_shot && !library)
        throw Error(ErrorCode::InvalidConfig, std::string(to_string(config.mode)) + " needs a library");
    if (full && !agents.inducer) throw Error(ErrorCode::InvalidConfig, "full mode needs an induction agent");
    if (full && !library->writable()) throw Error(ErrorCode::ReadOnlyLibrary, "full-mode build needs a writable library");
    if (library && library->dim() != embedder.dim())
        throw Error(ErrorCode::DimensionMismatch, "library and embedder dimensions differ");

    RunReport report;
    report.phase = Phase::build;
    report.mode = config.mode;
    report.config = config.to_json();
    report.config_hash = config.hash();
    report.library_before = options.library_before.value_or(library ? library->size() : 0);
    report.outcomes = std::move(options.prior_outcomes);
    const std::size_t start = report.outcomes.size();
    if (start > flows.size()) throw Error(ErrorCode::InvalidConfig, "resume point beyond the build set");

    for (std::size_t seq = start; seq < flows.size(); ++seq) {
        const auto& flow = flows[seq];
        FlowOutcome out;
        out.flow_id = flow.flow_id;
        out.truth = flow.label;
        out.induction = "none";
        StageLatency lat;

        const std::string json = to_canonical_json(flow.record);
        auto t0 = detail::Clock::now();
        std::optional<FlowEmbedding> emb;
        try {
            emb = embedder.embed(json);
        } catch (const Error& e) {
            if (!detail::is_agent_error(e)) throw;
            out.error = e.what();
            out.parse_status = "error";
        }
        lat.embed_ms = detail::ms_since(t0);

        if (emb) {
            t0 = detail::Clock::now();
            RetrievalResult retrieval = library ? library->retrieve(*emb, config.tau) : RetrievalResult{NoContext{}};
            lat.retrieve_ms = detail::ms_since(t0);
            if (auto* hit = as_hit(retrieval)) {
                out.hit_similarity = hit->similarity;
                out.hit_entry_id = hit->entry.entry_id;
            }

            auto prompt = build_classification_prompt(json, retrieval, config.classes);
            t0 = detail::Clock::now();
            try {
                auto verdict = agents.classifier->classify(prompt);
                out.predicted = verdict.label;
                out.parse_status = std::string(to_string(verdict.parse_status));
                if (options.transcript)
                    options.transcript->write({flow.flow_id, "classify", prompt.hash(), verdict.raw_text, out.parse_status});
            } catch (const Error& e) {
                if (!detail::is_agent_error(e)) throw;
                out.error = e.what();
                out.parse_status = "error";
                if (options.transcript) options.transcript->write({flow.flow_id, "classify", prompt.hash(), "", "error"});
            }
            lat.classify_ms = detail::ms_since(t0);

            if (out.predicted && !(*out.predicted == flow.label) && full) {
                auto ind_prompt = build_induction_prompt(json, *out.predicted, flow.label, retrieval);
                t0 = detail::Clock::now();
                try {
                    auto induced = agents.inducer->induce_rule(ind_prompt);
                    if (options.transcript)
                        options.transcript->write({flow.flow_id, "induce", ind_prompt.hash(), induced.raw_text,
                                                   std::string(to_string(induced.parse_status))});
                    out.induced_rule_id = library->insert(
                        EntryFields{*emb, std::move(induced.rule), *out.predicted, flow.label,
                                    static_cast<std::int64_t>(flow.flow_id)});
                    out.induction = induced.parse_status == ParseStatus::unparsed ? "unparsed" : "ok";
                } catch (const Error& e) {
                    if (!detail::is_agent_error(e)) throw;
                    out.induction = "failed";
                    if (options.transcript) options.transcript->write({flow.flow_id, "induce", ind_prompt.hash(), "", "error"});
                }
                lat.induce_ms = detail::ms_since(t0);
            }
            if (full && agents.observer) agents.observer->observe(*emb, flow.record, flow.label);
        }

        out.library_size_after = library ? library->size() : 0;
        if (config.record_latency) out.latency = lat;
        report.outcomes.push_back(std::move(out));

        const std::size_t done = seq + 1;
        if (options.on_checkpoint && config.checkpoint_interval > 0 && done % config.checkpoint_interval == 0 &&
            done < flows.size())
            options.on_checkpoint(done, report.outcomes);
    }

    report.library_after = library ? library->size() : 0;
    detail::finalize_report(report, config.classes, config.curve_window, true);
    return report;
}

// ---------------------------------------------------------------------------
// Phase 2
// ---------------------------------------------------------------------------

/// Phase 2: classification only against a frozen library (null for
/// zero_shot). Flows are spread over `config.workers` threads; outcomes and
/// transcript lines are committed in input order. The library is checked
/// bit-identical afterwards.
inline RunReport run_evaluate(const RunConfig& config, std::span<const LabeledFlow> flows, const Embedder& embedder,
                              ClassificationAgent& classifier, const ExperienceLibrary* library,
                              TranscriptWriter* transcript = nullptr) {
    if (config.mode == AblationMode::zero_shot && library)
        throw Error(ErrorCode::InvalidConfig, "zero_shot runs without a library");
    if (config.mode == AblationMode::library_only && !library)
        throw Error(ErrorCode::InvalidConfig, "library_only needs a library");
    if (config.mode == AblationMode::full)
        throw Error(ErrorCode::InvalidConfig, "evaluation runs in zero_shot or library_only mode");
    if (library && library->dim() != embedder.dim())
        throw Error(ErrorCode::DimensionMismatch, "library and embedder dimensions differ");

    RunReport report;
    report.phase = Phase::evaluate;
    report.mode = config.mode;
    report.config = config.to_json();
    report.config_hash = config.hash();
    const std::uint32_t checksum_before = library ? library->content_checksum() : 0;
    report.library_before = library ? library->size() : 0;

    std::vector<FlowOutcome> outcomes(flows.size());
    std::vector<std::optional<TranscriptRecord>> lines(flows.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;

    auto worker = [&] {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= flows.size()) return;
            try {
                const auto& flow = flows[i];
                FlowOutcome out;
                out.flow_id = flow.flow_id;
                out.truth = flow.label;
                out.induction = "none";
                StageLatency lat;
                const std::string json = to_canonical_json(flow.record);
                auto t0 = detail::Clock::now();
                std::optional<FlowEmbedding> emb;
                try {
                    emb = embedder.embed(json);
                } catch (const Error& e) {
                    if (!detail::is_agent_error(e)) throw;
                    out.error = e.what();
                    out.parse_status = "error";
                }
                lat.embed_ms = detail::ms_since(t0);
                if (emb) {
                    t0 = detail::Clock::now();
                    RetrievalResult retrieval =
                        library ? library->retrieve(*emb, config.tau) : RetrievalResult{NoContext{}};
                    lat.retrieve_ms = detail::ms_since(t0);
                    if (auto* hit = as_hit(retrieval)) {
                        out.hit_similarity = hit->similarity;
                        out.hit_entry_id = hit->entry.entry_id;
                    }
                    auto prompt = build_classification_prompt(json, retrieval, config.classes);
                    t0 = detail::Clock::now();
                    try {
                        auto verdict = classifier.classify(prompt);
                        out.predicted = verdict.label;
                        out.parse_status = std::string(to_string(verdict.parse_status));
                        lines[i] = TranscriptRecord{flow.flow_id, "classify", prompt.hash(), verdict.raw_text,
                                                    out.parse_status};
                    } catch (const Error& e) {
                        if (!detail::is_agent_error(e)) throw;
                        out.error = e.what();
                        out.parse_status = "error";
                        lines[i] = TranscriptRecord{flow.flow_id, "classify", prompt.hash(), "", "error"};
                    }
                    lat.classify_ms = detail::ms_since(t0);
                }
                out.library_size_after = report.library_before;
                if (config.record_latency) out.latency = lat;
                outcomes[i] = std::move(out);
            } catch (...) {
                std::lock_guard lock(failure_mu);
                if (!failure) failure = std::current_exception();
                next.store(flows.size());
                return;
            }
        }
    };

    const std::size_t n_workers = std::max<std::size_t>(1, std::min(config.workers, flows.size()));
    if (n_workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);

    if (transcript)
        for (auto& l : lines)
            if (l) transcript->write(*l);

    report.outcomes = std::move(outcomes);
    report.library_after = library ? library->size() : 0;
    if (library && (library->content_checksum() != checksum_before || report.library_after != report.library_before))
        throw Error(ErrorCode::Io, "library changed during evaluation");
    detail::finalize_report(report, config.classes, config.curve_window, false);
    return report;
}

// ---------------------------------------------------------------------------
// Ablation
// ---------------------------------------------------------------------------

struct AblationReport {
    RunReport zero_shot;
    RunReport library_only;
    RunReport full;
    std::string split_hash;

    nlohmann::json to_json() const {
        return {{"split_hash", split_hash},
                {"zero_shot", zero_shot.to_json()},
                {"library_only", library_only.to_json()},
                {"full", full.to_json()}};
    }
};

/// Fresh agents for one ablation arm. For library modes `library` is the
/// library the arm will query.
using AgentFactory = std::function<AgentSet(AblationMode mode, const ExperienceLibrary* library)>;

inline std::string flow_sequence_hash(std::span<const LabeledFlow> flows) {
    std::string ids;
    for (auto& f : flows) ids += std::to_string(f.flow_id) + ",";
    return hex64(fnv1a64(ids));
}

/// Runs the three configurations over the same flows: zero_shot (no
/// retrieval), library_only (frozen `library`), and full (retrieval plus
/// continued induction on a private copy of `library`). The library passed
/// in is never modified.
inline AblationReport run_ablation(const RunConfig& config, std::span<const LabeledFlow> flows, const Embedder& embedder,
                                   const AgentFactory& make_agents, const ExperienceLibrary& library,
                                   TranscriptWriter* transcript = nullptr) {
    AblationReport out;
    out.split_hash = flow_sequence_hash(flows);

    RunConfig zs = config;
    zs.phase = Phase::evaluate;
    zs.mode = AblationMode::zero_shot;
    auto zs_agents = make_agents(AblationMode::zero_shot, nullptr);
    out.zero_shot = run_evaluate(zs, flows, embedder, *zs_agents.classifier, nullptr, transcript);

    RunConfig lo = config;
    lo.phase = Phase::evaluate;
    lo.mode = AblationMode::library_only;
    auto lo_agents = make_agents(AblationMode::library_only, &library);
    out.library_only = run_evaluate(lo, flows, embedder, *lo_agents.classifier, &library, transcript);

    RunConfig fu = config;
    fu.phase = Phase::build;
    fu.mode = AblationMode::full;
    ExperienceLibrary working = library.writable_copy();
    auto fu_agents = make_agents(AblationMode::full, &working);
    BuildOptions opts;
    opts.transcript = transcript;
    out.full = run_build(fu, flows, embedder, fu_agents, &working, std::move(opts));
    return out;
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

struct ComparisonRow {
    std::string name;
    double accuracy = 0, precision = 0, recall = 0, f1 = 0;
};

inline ComparisonRow comparison_row(const std::string& name, const nlohmann::json& report) {
    const auto& m = report.at("metrics");
    if (m.is_null()) return {name, 0, 0, 0, 0};
    return {name, m.at("accuracy").get<double>(), m.at("macro_precision").get<double>(),
            m.at("macro_recall").get<double>(), m.at("macro_f1").get<double>()};
}

/// Aligned text table with Accuracy / Precision / Recall / F1 in percent.
inline std::string render_comparison_table(std::span<const ComparisonRow> rows) {
    std::size_t width = std::string("Configuration").size();
    for (auto& r : rows) width = std::max(width, r.name.size());
    auto pad = [&](const std::string& s) { return s + std::string(width - s.size(), ' '); };
    char buf[160];
    std::string out = pad("Configuration");
    std::snprintf(buf, sizeof buf, " | %9s | %9s | %9s | %9s\n", "Accuracy", "Precision", "Recall", "F1");
    out += buf;
    out += std::string(width, '-') + "-+-----------+-----------+-----------+----------\n";
    for (auto& r : rows) {
        out += pad(r.name);
        std::snprintf(buf, sizeof buf, " | %9.2f | %9.2f | %9.2f | %9.2f\n", 100 * r.accuracy, 100 * r.precision,
                      100 * r.recall, 100 * r.f1);
        out += buf;
    }
    return out;
}

}  // namespace maids
