#pragma once

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "maids/agents.hpp"
#include "maids/embedding.hpp"
#include "maids/error.hpp"
#include "maids/flow_model.hpp"
#include "maids/hashing.hpp"
#include "maids/labels.hpp"

namespace maids {

enum class Phase { build, evaluate, ablate };
enum class AblationMode { zero_shot, library_only, full };

inline constexpr std::string_view to_string(Phase p) {
    switch (p) {
        case Phase::build: return "build";
        case Phase::evaluate: return "evaluate";
        case Phase::ablate: return "ablate";
    }
    return "build";
}

inline constexpr std::string_view to_string(AblationMode m) {
    switch (m) {
        case AblationMode::zero_shot: return "zero_shot";
        case AblationMode::library_only: return "library_only";
        case AblationMode::full: return "full";
    }
    return "full";
}

inline AblationMode ablation_mode_from_string(std::string_view s) {
    if (s == "zero_shot") return AblationMode::zero_shot;
    if (s == "library_only") return AblationMode::library_only;
    if (s == "full") return AblationMode::full;
    throw Error(ErrorCode::InvalidConfig, "unknown mode '" + std::string(s) + "'");
}

/// Resolved run configuration. Secrets never live here, only the names of
/// the environment variables that hold them.
struct RunConfig {
    std::string dataset_path;
    ClassSet classes = ClassSet::bot_iot();
    SchemaMap schema = SchemaMap::uq_netflow();
    EmbedderSpec embedder;
    AgentSpec agent;
    bool offline = false;

    double tau = 0.5;
    std::size_t top_k = 1;
    std::uint64_t quota_build = 50000;
    std::uint64_t quota_eval = 20000;
    std::uint64_t seed = 7;

    Phase phase = Phase::build;
    AblationMode mode = AblationMode::full;
    std::size_t curve_window = 1000;
    std::size_t checkpoint_interval = 500;
    std::size_t workers = 4;
    bool record_latency = false;

    std::string manifest_path = "split.json";
    std::string library_path = "library.bin";
    std::string out_dir = "out";

    void validate() const {
        if (classes.empty()) throw Error(ErrorCode::InvalidConfig, "class set is empty");
        schema.validate();
        if (!(tau >= -1.0 && tau <= 1.0)) throw Error(ErrorCode::InvalidConfig, "tau must lie in [-1, 1]");
        if (top_k != 1) throw Error(ErrorCode::InvalidConfig, "only top_k = 1 is supported by the prompt templates");
        if (curve_window == 0) throw Error(ErrorCode::InvalidConfig, "curve_window must be positive");
        if (embedder.dim < 2) throw Error(ErrorCode::InvalidConfig, "embedding dim must be >= 2");
        if (agent.temperature != 0.0) throw Error(ErrorCode::InvalidConfig, "agent temperature must be 0.0");
        if (!offline) {
            if (embedder.kind == EmbedderKind::remote && embedder.endpoint.empty())
                throw Error(ErrorCode::InvalidConfig, "remote embedder needs an endpoint");
            if (agent.kind == AgentKind::remote_llm && agent.endpoint.empty())
                throw Error(ErrorCode::InvalidConfig, "remote agent needs an endpoint");
        }
    }

    nlohmann::json to_json() const {
        return {
            {"dataset", {{"path", dataset_path}, {"schema_map", schema.to_json()}}},
            {"classes", classes.names()},
            {"embedder",
             {{"kind", embedder.kind == EmbedderKind::hash ? "hash" : "remote"},
              {"dim", embedder.dim},
              {"hash_seed", embedder.hash_seed},
              {"endpoint", embedder.endpoint},
              {"model", embedder.model_name},
              {"api_key_env", embedder.api_key_env},
              {"batch_size", embedder.batch_size}}},
            {"agent",
             {{"kind", agent.kind == AgentKind::mock ? "mock" : "remote_llm"},
              {"model", agent.model_name},
              {"temperature", agent.temperature},
              {"max_response_tokens", agent.max_response_tokens},
              {"endpoint", agent.endpoint},
              {"api_key_env", agent.api_key_env},
              {"timeout_ms", agent.timeout.count()},
              {"retries", agent.retries},
              {"max_in_flight", agent.max_in_flight}}},
            {"offline", offline},
            {"tau", tau},
            {"top_k", top_k},
            {"quota_build", quota_build},
            {"quota_eval", quota_eval},
            {"seed", seed},
            {"phase", to_string(phase)},
            {"mode", to_string(mode)},
            {"curve_window", curve_window},
            {"checkpoint_interval", checkpoint_interval},
            {"workers", workers},
            {"record_latency", record_latency},
            {"paths", {{"manifest", manifest_path}, {"library", library_path}, {"out_dir", out_dir}}},
        };
    }

    /// Fills fields present in `j`; absent fields keep their current value.
    void merge_json(const nlohmann::json& j) {
        auto take = [](const nlohmann::json& obj, const char* key, auto& field) {
            if (obj.contains(key) && !obj.at(key).is_null()) field = obj.at(key).get<std::decay_t<decltype(field)>>();
        };
        if (j.contains("dataset")) {
            auto& d = j.at("dataset");
            take(d, "path", dataset_path);
            if (d.contains("schema_map")) schema = SchemaMap::from_json(d.at("schema_map"));
        }
        if (j.contains("classes")) classes = ClassSet(j.at("classes").get<std::vector<std::string>>());
        if (j.contains("embedder")) {
            auto& e = j.at("embedder");
            if (e.contains("kind")) {
                auto k = e.at("kind").get<std::string>();
                if (k != "hash" && k != "remote") throw Error(ErrorCode::InvalidConfig, "embedder kind '" + k + "'");
                embedder.kind = k == "hash" ? EmbedderKind::hash : EmbedderKind::remote;
            }
            take(e, "dim", embedder.dim);
            take(e, "hash_seed", embedder.hash_seed);
            take(e, "endpoint", embedder.endpoint);
            take(e, "model", embedder.model_name);
            take(e, "api_key_env", embedder.api_key_env);
            take(e, "batch_size", embedder.batch_size);
        }
        if (j.contains("agent")) {
            auto& a = j.at("agent");
            if (a.contains("kind")) {
                auto k = a.at("kind").get<std::string>();
                if (k != "mock" && k != "remote_llm") throw Error(ErrorCode::InvalidConfig, "agent kind '" + k + "'");
                agent.kind = k == "mock" ? AgentKind::mock : AgentKind::remote_llm;
            }
            take(a, "model", agent.model_name);
            take(a, "temperature", agent.temperature);
            take(a, "max_response_tokens", agent.max_response_tokens);
            take(a, "endpoint", agent.endpoint);
            take(a, "api_key_env", agent.api_key_env);
            if (a.contains("timeout_ms")) agent.timeout = std::chrono::milliseconds(a.at("timeout_ms").get<long long>());
            take(a, "retries", agent.retries);
            take(a, "max_in_flight", agent.max_in_flight);
        }
        take(j, "offline", offline);
        take(j, "tau", tau);
        take(j, "top_k", top_k);
        take(j, "quota_build", quota_build);
        take(j, "quota_eval", quota_eval);
        take(j, "seed", seed);
        if (j.contains("mode")) mode = ablation_mode_from_string(j.at("mode").get<std::string>());
        take(j, "curve_window", curve_window);
        take(j, "checkpoint_interval", checkpoint_interval);
        take(j, "workers", workers);
        take(j, "record_latency", record_latency);
        if (j.contains("paths")) {
            auto& p = j.at("paths");
            take(p, "manifest", manifest_path);
            take(p, "library", library_path);
            take(p, "out_dir", out_dir);
        }
    }

    /// Environment overrides: MAIDS_SEED, MAIDS_TAU, MAIDS_OFFLINE.
    void merge_env() {
        if (const char* v = std::getenv("MAIDS_SEED")) seed = std::stoull(v);
        if (const char* v = std::getenv("MAIDS_TAU")) tau = std::stod(v);
        if (const char* v = std::getenv("MAIDS_OFFLINE")) offline = std::string(v) == "1" || std::string(v) == "true";
    }

    static RunConfig from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw Error(ErrorCode::Io, "cannot open config " + path);
        RunConfig c;
        try {
            c.merge_json(nlohmann::json::parse(in));
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::InvalidConfig, path + ": " + e.what());
        }
        return c;
    }

    /// Hash of the resolved configuration, for report provenance.
    std::string hash() const { return hex64(fnv1a64(to_json().dump())); }
};

}  // namespace maids
