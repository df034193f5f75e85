#pragma once

// File-level orchestration behind the command-line tool: component
// factories, dataset and split handling, checkpoints, and report output.

#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "maids/agents.hpp"
#include "maids/config.hpp"
#include "maids/embedding.hpp"
#include "maids/experience_library.hpp"
#include "maids/flow_model.hpp"
#include "maids/metrics.hpp"
#include "maids/pipeline.hpp"
#include "maids/remote.hpp"

namespace maids {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Factories
// ---------------------------------------------------------------------------

/// Offline runs always use the hash embedder and the mock agents.
inline RunConfig resolve_offline(RunConfig config) {
    if (config.offline) {
        config.embedder.kind = EmbedderKind::hash;
        config.agent.kind = AgentKind::mock;
    }
    return config;
}

/// Embedder for the run, wrapped in a per-run cache.
inline std::shared_ptr<const Embedder> make_embedder(const RunConfig& config) {
    std::shared_ptr<const Embedder> inner;
    if (config.embedder.kind == EmbedderKind::hash)
        inner = std::make_shared<HashEmbedder>(config.embedder);
    else
        inner = std::make_shared<RemoteEmbedder>(config.embedder, RetryPolicy{config.agent.retries},
                                                 config.agent.timeout, config.agent.max_in_flight);
    return std::make_shared<CachingEmbedder>(std::move(inner));
}

/// Owns the agents of one run and hands out the non-owning AgentSet.
struct AgentBundle {
    std::shared_ptr<MockAgentState> mock_state;
    std::shared_ptr<ClassificationAgent> classifier;
    std::shared_ptr<InductionAgent> inducer;

    AgentSet set() const {
        return {classifier.get(), inducer.get(), mock_state.get()};
    }
};

/// Mock agents start cold. With a library given, the mock is primed from
/// the library's keys so a frozen library also carries its class geometry.
inline AgentBundle make_agents(const RunConfig& config, std::shared_ptr<const Embedder> embedder,
                               const ExperienceLibrary* prime_from = nullptr) {
    AgentBundle b;
    if (config.agent.kind == AgentKind::mock) {
        b.mock_state = std::make_shared<MockAgentState>(config.classes, embedder->dim());
        if (prime_from) b.mock_state->prime_from_library(*prime_from);
        b.classifier = std::make_shared<MockClassifier>(b.mock_state, embedder);
        b.inducer = std::make_shared<MockInducer>(b.mock_state);
    } else {
        auto chat = std::make_shared<RemoteChatAgent>(config.agent, config.classes);
        b.classifier = chat;
        b.inducer = chat;
    }
    return b;
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

inline void write_text_atomic(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCode::Io, "cannot write " + tmp.string());
        out << text;
        if (!out) throw Error(ErrorCode::Io, "short write to " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw Error(ErrorCode::Io, "rename to " + path.string() + ": " + ec.message());
}

inline nlohmann::json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::Io, path.string() + ": " + e.what());
    }
}

inline void write_json(const fs::path& path, const nlohmann::json& j) { write_text_atomic(path, j.dump(2) + "\n"); }

struct OutputPaths {
    fs::path dir;
    fs::path build_report() const { return dir / "build_report.json"; }
    fs::path learning_curve() const { return dir / "learning_curve.csv"; }
    fs::path build_transcript() const { return dir / "build_transcript.jsonl"; }
    fs::path checkpoint() const { return dir / "checkpoint.json"; }
    fs::path checkpoint_library() const { return dir / "checkpoint_library.bin"; }
    fs::path eval_report() const { return dir / "eval_report.json"; }
    fs::path eval_transcript() const { return dir / "eval_transcript.jsonl"; }
    fs::path ablation_report() const { return dir / "ablation_report.json"; }
    fs::path ablation_table() const { return dir / "ablation_table.txt"; }
    fs::path ablation_transcript() const { return dir / "ablation_transcript.jsonl"; }
    fs::path ingestion_report() const { return dir / "ingestion.json"; }
};

// ---------------------------------------------------------------------------
// Dataset and split
// ---------------------------------------------------------------------------

struct PreparedSplit {
    DatasetSplit split;
    IngestionReport ingestion;
    bool from_manifest = false;
};

/// Loads the dataset and applies the manifest if it exists; otherwise
/// draws a fresh stratified split and writes the manifest.
inline PreparedSplit prepare_split(const RunConfig& config, bool force_resample = false) {
    if (config.dataset_path.empty()) throw Error(ErrorCode::InvalidConfig, "no dataset path configured");
    auto loaded = load_labeled_flows(config.dataset_path, config.schema, config.classes);
    PreparedSplit out;
    out.ingestion = std::move(loaded.report);
    const fs::path manifest = config.manifest_path;
    if (!force_resample && fs::exists(manifest)) {
        out.split = split_from_manifest(read_json_file(manifest), loaded.flows);
        out.from_manifest = true;
    } else {
        out.split = stratified_split(loaded.flows, config.classes, config.quota_build, config.quota_eval, config.seed);
        write_json(manifest, out.split.manifest());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Phase 1 with checkpoints
// ---------------------------------------------------------------------------

struct BuildResult {
    RunReport report;
    std::size_t resumed_from = 0;
};

/// Runs Phase 1 over `flows`, saving the library to `config.library_path`
/// at the end. Every `checkpoint_interval` flows the committed outcomes,
/// a library snapshot, the mock state, and the transcript length are
/// written to the output directory; `resume` restarts from the last one.
/// A non-resumed build starts from an empty library.
inline BuildResult build_with_checkpoints(const RunConfig& config, std::span<const LabeledFlow> flows,
                                          bool resume = false,
                                          std::function<void(std::size_t)> after_checkpoint = {}) {
    const OutputPaths out{config.out_dir};
    fs::create_directories(out.dir);
    auto embedder = make_embedder(config);
    const auto fingerprint = embedder->spec().fingerprint();

    std::optional<ExperienceLibrary> library;
    if (config.mode != AblationMode::zero_shot) {
        // Fails early with ReadOnlyLibrary when the destination is not writable.
        auto opened = ExperienceLibrary::open_writable(config.library_path, embedder->dim(), fingerprint);
        library.emplace(embedder->dim(), fingerprint, true);
        if (config.mode == AblationMode::library_only) library.emplace(opened);
    }
    auto agents = make_agents(config, embedder, config.mode == AblationMode::library_only && library ? &*library : nullptr);

    BuildOptions options;
    std::uint64_t transcript_bytes = 0;
    BuildResult result;
    if (resume && fs::exists(out.checkpoint())) {
        auto ck = read_json_file(out.checkpoint());
        if (ck.at("config_hash").get<std::string>() != config.hash())
            throw Error(ErrorCode::InvalidConfig, "checkpoint was written under a different configuration");
        for (auto& o : ck.at("outcomes")) options.prior_outcomes.push_back(FlowOutcome::from_json(o, config.classes));
        options.library_before = ck.at("library_before").get<std::uint64_t>();
        if (library && ck.contains("library_checksum")) {
            auto snap = ExperienceLibrary::load_expecting(out.checkpoint_library(), embedder->dim(), fingerprint, true);
            if (snap.content_checksum() != ck.at("library_checksum").get<std::uint32_t>())
                throw Error(ErrorCode::ChecksumFailure, "checkpoint library does not match checkpoint record");
            library.emplace(snap);
        }
        if (agents.mock_state && ck.contains("mock_state"))
            *agents.mock_state = MockAgentState::from_json(ck.at("mock_state"));
        transcript_bytes = ck.at("transcript_bytes").get<std::uint64_t>();
        result.resumed_from = options.prior_outcomes.size();
    }
    if (transcript_bytes > 0 && fs::exists(out.build_transcript()))
        fs::resize_file(out.build_transcript(), transcript_bytes);

    std::ofstream transcript_file(out.build_transcript(),
                                  transcript_bytes > 0 ? std::ios::binary | std::ios::app
                                                       : std::ios::binary | std::ios::trunc);
    if (!transcript_file) throw Error(ErrorCode::Io, "cannot write " + out.build_transcript().string());
    TranscriptWriter transcript(transcript_file);
    options.transcript = &transcript;

    const std::uint64_t library_before = options.library_before.value_or(library ? library->size() : 0);
    options.on_checkpoint = [&](std::size_t done, const std::vector<FlowOutcome>& outcomes) {
        transcript_file.flush();
        nlohmann::json ck = {{"next_seq", done},
                             {"config_hash", config.hash()},
                             {"library_before", library_before},
                             {"transcript_bytes", static_cast<std::uint64_t>(transcript_file.tellp())}};
        nlohmann::json outs = nlohmann::json::array();
        for (auto& o : outcomes) outs.push_back(o.to_json());
        ck["outcomes"] = std::move(outs);
        if (library) {
            library->save(out.checkpoint_library());
            ck["library_checksum"] = library->content_checksum();
        }
        if (agents.mock_state) ck["mock_state"] = agents.mock_state->to_json();
        write_json(out.checkpoint(), ck);
        if (after_checkpoint) after_checkpoint(done);
    };

    result.report = run_build(config, flows, *embedder, agents.set(), library ? &*library : nullptr, std::move(options));
    transcript_file.close();

    if (library && config.mode == AblationMode::full) library->save(config.library_path);
    write_json(out.build_report(), result.report.to_json());
    write_text_atomic(out.learning_curve(), curve_csv(result.report.curve));
    std::error_code ec;
    fs::remove(out.checkpoint(), ec);
    fs::remove(out.checkpoint_library(), ec);
    return result;
}

// ---------------------------------------------------------------------------
// Phase 2 and ablation
// ---------------------------------------------------------------------------

inline ExperienceLibrary load_frozen_library(const RunConfig& config, const Embedder& embedder) {
    return ExperienceLibrary::load_expecting(config.library_path, embedder.dim(), embedder.spec().fingerprint(), false);
}

inline RunReport evaluate_frozen(const RunConfig& config, std::span<const LabeledFlow> flows) {
    const OutputPaths out{config.out_dir};
    fs::create_directories(out.dir);
    auto embedder = make_embedder(config);
    std::optional<ExperienceLibrary> library;
    if (config.mode == AblationMode::library_only) library.emplace(load_frozen_library(config, *embedder));
    auto agents = make_agents(config, embedder, library ? &*library : nullptr);

    std::ofstream transcript_file(out.eval_transcript(), std::ios::binary | std::ios::trunc);
    TranscriptWriter transcript(transcript_file);
    auto report = run_evaluate(config, flows, *embedder, *agents.classifier, library ? &*library : nullptr, &transcript);
    write_json(out.eval_report(), report.to_json());
    return report;
}

inline std::string render_ablation_table(const AblationReport& r) {
    std::vector<ComparisonRow> rows = {comparison_row("Zero-shot (no library)", r.zero_shot.to_json()),
                                       comparison_row("Library only (frozen)", r.library_only.to_json()),
                                       comparison_row("Full (library + induction)", r.full.to_json())};
    return render_comparison_table(rows);
}

inline AblationReport ablate(const RunConfig& config, std::span<const LabeledFlow> flows) {
    const OutputPaths out{config.out_dir};
    fs::create_directories(out.dir);
    auto embedder = make_embedder(config);
    auto library = load_frozen_library(config, *embedder);

    // Agents must outlive the run; each arm gets its own bundle.
    std::vector<AgentBundle> bundles;
    bundles.reserve(3);
    AgentFactory factory = [&](AblationMode mode, const ExperienceLibrary* lib) {
        bundles.push_back(make_agents(config, embedder, mode == AblationMode::zero_shot ? nullptr : lib));
        return bundles.back().set();
    };

    std::ofstream transcript_file(out.ablation_transcript(), std::ios::binary | std::ios::trunc);
    TranscriptWriter transcript(transcript_file);
    auto report = run_ablation(config, flows, *embedder, factory, library, &transcript);
    write_json(out.ablation_report(), report.to_json());
    write_text_atomic(out.ablation_table(), render_ablation_table(report));
    return report;
}

/// Comparison rows for one report file: three for an ablation report, one
/// (named `name`) for a build or evaluation report.
inline std::vector<ComparisonRow> comparison_rows(const std::string& name, const nlohmann::json& report) {
    if (report.contains("zero_shot"))
        return {comparison_row("Zero-shot (no library)", report.at("zero_shot")),
                comparison_row("Library only (frozen)", report.at("library_only")),
                comparison_row("Full (library + induction)", report.at("full"))};
    return {comparison_row(name, report)};
}

/// Text summary of any report file written by this tool.
inline std::string render_report_summary(const nlohmann::json& report) {
    std::ostringstream os;
    if (report.contains("zero_shot")) return render_comparison_table(comparison_rows("", report));
    const std::string name = report.at("phase").get<std::string>() + " / " + report.at("mode").get<std::string>();
    os << render_comparison_table(comparison_rows(name, report));
    const auto& t = report.at("tallies");
    os << "\nflows " << t.at("total") << ", classified " << t.at("classified") << ", errored " << t.at("errored")
       << ", unparsed " << t.at("parse_failures") << ", rules induced " << t.at("inductions")
       << ", induction failures " << t.at("induction_failures") << "\n";
    os << "library size " << report.at("library_before") << " -> " << report.at("library_after") << "\n";
    return os.str();
}

/// One table across several report files; single-report rows are named
/// after the file stem.
inline std::string render_report_comparison(std::span<const fs::path> paths) {
    if (paths.size() == 1) return render_report_summary(read_json_file(paths.front()));
    std::vector<ComparisonRow> rows;
    for (auto& p : paths) {
        auto more = comparison_rows(p.stem().string(), read_json_file(p));
        rows.insert(rows.end(), more.begin(), more.end());
    }
    return render_comparison_table(rows);
}

}  // namespace maids
