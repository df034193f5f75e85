// maids: command-line front end for building and evaluating an experience
// library of induced detection rules.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "maids/runner.hpp"
#include "maids/synthetic.hpp"

namespace {

struct GlobalOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<double> tau;
    bool offline = false;
    std::string dataset, out_dir, library, manifest;
    std::optional<std::size_t> workers, window;
    std::optional<std::uint64_t> quota_build, quota_eval;
};

// Precedence: defaults < config file < environment < flags.
maids::RunConfig resolve(const GlobalOptions& g) {
    maids::RunConfig c = g.config_path.empty() ? maids::RunConfig{} : maids::RunConfig::from_file(g.config_path);
    c.merge_env();
    if (g.seed) c.seed = *g.seed;
    if (g.tau) c.tau = *g.tau;
    if (g.offline) c.offline = true;
    if (!g.dataset.empty()) c.dataset_path = g.dataset;
    if (!g.out_dir.empty()) c.out_dir = g.out_dir;
    if (!g.library.empty()) c.library_path = g.library;
    if (!g.manifest.empty()) c.manifest_path = g.manifest;
    if (g.workers) c.workers = *g.workers;
    if (g.window) c.curve_window = *g.window;
    if (g.quota_build) c.quota_build = *g.quota_build;
    if (g.quota_eval) c.quota_eval = *g.quota_eval;
    c = maids::resolve_offline(std::move(c));
    c.validate();
    return c;
}

void print_metrics_line(const maids::RunReport& r) {
    if (!r.metrics) {
        std::printf("no flows were classified\n");
        return;
    }
    std::printf("accuracy %.4f  macro P %.4f  macro R %.4f  macro F1 %.4f  (%llu flows, library %llu -> %llu)\n",
                r.metrics->accuracy, r.metrics->macro_precision, r.metrics->macro_recall, r.metrics->macro_f1,
                static_cast<unsigned long long>(r.tallies.total), static_cast<unsigned long long>(r.library_before),
                static_cast<unsigned long long>(r.library_after));
}

std::string hint_for(maids::ErrorCode code) {
    switch (code) {
        case maids::ErrorCode::ReadOnlyLibrary:
            return "the library path must be writable for a build; pick another --library or fix permissions";
        case maids::ErrorCode::MissingColumn:
            return "the dataset header lacks a column named in the schema map; check dataset.schema_map";
        case maids::ErrorCode::DimensionHeaderMismatch:
            return "the library was built with a different embedder; rebuild it or match the embedder settings";
        case maids::ErrorCode::ChecksumFailure:
            return "the library file is truncated or corrupted; rebuild it";
        default:
            return {};
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Experience-library intrusion detection: build, evaluate, and ablate"};
    app.require_subcommand(1);
    GlobalOptions g;
    app.add_option("--config", g.config_path, "JSON configuration file");
    app.add_option("--seed", g.seed, "sampling seed");
    app.add_option("--tau", g.tau, "retrieval similarity threshold in [-1, 1]");
    app.add_flag("--offline", g.offline, "use the hash embedder and mock agents; no network");
    app.add_option("--dataset", g.dataset, "flow CSV (optionally .gz)");
    app.add_option("--out-dir", g.out_dir, "directory for reports and transcripts");
    app.add_option("--library", g.library, "experience library file");
    app.add_option("--manifest", g.manifest, "split manifest file");
    app.add_option("--workers", g.workers, "parallel workers for evaluation");
    app.add_option("--window", g.window, "learning-curve window size");
    app.add_option("--quota-build", g.quota_build, "build flows per class");
    app.add_option("--quota-eval", g.quota_eval, "evaluation flows per class");

    auto* synth = app.add_subcommand("synth", "write a synthetic labelled flow CSV");
    std::string synth_out;
    maids::SyntheticSpec synth_spec;
    synth->add_option("--out", synth_out, "output CSV path")->required();
    synth->add_option("--flows", synth_spec.flows, "number of flows");
    synth->add_option("--prototypes", synth_spec.prototypes_per_class, "prototypes per class");

    auto* sample = app.add_subcommand("sample", "draw the stratified split and write the manifest");

    auto* build = app.add_subcommand("build", "Phase 1: build the experience library over the build set");
    bool resume = false;
    std::string build_mode = "full";
    build->add_flag("--resume", resume, "continue from the last checkpoint");
    build->add_option("--mode", build_mode, "full | library_only | zero_shot");

    auto* evaluate = app.add_subcommand("evaluate", "Phase 2: classify the eval set against the frozen library");
    std::string eval_mode = "library_only";
    evaluate->add_option("--mode", eval_mode, "library_only | zero_shot");

    auto* ablate = app.add_subcommand("ablate", "run zero_shot, library_only, and full over the eval set");
    auto* stats = app.add_subcommand("stats", "print per-class rule counts of the library");
    auto* report = app.add_subcommand("report", "render one or more report files as a comparison table");
    std::vector<std::string> report_paths;
    report->add_option("files,--inputs", report_paths, "report JSON files")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) {
            auto config = resolve(g);
            synth_spec.seed = config.seed;
            auto flows = maids::synthetic_flows(config.classes, synth_spec);
            std::ofstream out(synth_out, std::ios::binary | std::ios::trunc);
            if (!out) throw maids::Error(maids::ErrorCode::Io, "cannot write " + synth_out);
            maids::write_flow_csv(out, flows);
            std::printf("wrote %zu flows to %s\n", flows.size(), synth_out.c_str());
            return 0;
        }
        if (report->parsed()) {
            std::vector<std::filesystem::path> paths(report_paths.begin(), report_paths.end());
            std::cout << maids::render_report_comparison(paths);
            return 0;
        }

        auto config = resolve(g);
        const maids::OutputPaths out{config.out_dir};

        if (stats->parsed()) {
            auto lib = maids::ExperienceLibrary::load(config.library_path, false);
            auto s = lib.stats(config.classes);
            for (auto& [cls, n] : s.per_class_rule_counts) std::printf("%-24s %llu\n", cls.c_str(), static_cast<unsigned long long>(n));
            std::printf("%-24s %llu\n", "total", static_cast<unsigned long long>(s.total));
            return 0;
        }

        auto prepared = maids::prepare_split(config, sample->parsed());
        maids::write_json(out.ingestion_report(), prepared.ingestion.to_json());
        const auto& split = prepared.split;

        if (sample->parsed()) {
            for (auto& c : split.per_class)
                std::printf("%-24s available %llu  build %llu  eval %llu%s\n", c.class_name.c_str(),
                            static_cast<unsigned long long>(c.available), static_cast<unsigned long long>(c.build),
                            static_cast<unsigned long long>(c.eval),
                            c.deficit_build + c.deficit_eval ? "  (short of quota)" : "");
            std::printf("manifest written to %s\n", config.manifest_path.c_str());
            return 0;
        }
        if (build->parsed()) {
            config.phase = maids::Phase::build;
            config.mode = maids::ablation_mode_from_string(build_mode);
            auto result = maids::build_with_checkpoints(config, split.build_set, resume);
            if (result.resumed_from) std::printf("resumed after %zu flows\n", result.resumed_from);
            print_metrics_line(result.report);
            std::printf("reports in %s\n", config.out_dir.c_str());
            return 0;
        }
        if (evaluate->parsed()) {
            config.phase = maids::Phase::evaluate;
            config.mode = maids::ablation_mode_from_string(eval_mode);
            auto r = maids::evaluate_frozen(config, split.eval_set);
            print_metrics_line(r);
            return 0;
        }
        if (ablate->parsed()) {
            config.phase = maids::Phase::ablate;
            auto r = maids::ablate(config, split.eval_set);
            std::cout << maids::render_ablation_table(r);
            return 0;
        }
    } catch (const maids::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        if (auto hint = hint_for(e.code()); !hint.empty()) std::fprintf(stderr, "hint: %s\n", hint.c_str());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
