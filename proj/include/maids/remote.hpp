#pragma once

// HTTP clients for the live-mode chat and embedding services. Include this
// header only where network access is wanted; it pulls in cpp-httplib.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "maids/agents.hpp"
#include "maids/embedding.hpp"
#include "maids/error.hpp"

namespace maids {

struct Endpoint {
    std::string base;  // scheme://host[:port]
    std::string path;  // starts with '/'

    static Endpoint parse(const std::string& url) {
        auto scheme_end = url.find("://");
        if (scheme_end == std::string::npos) throw Error(ErrorCode::InvalidConfig, "endpoint needs a scheme: " + url);
        auto path_start = url.find('/', scheme_end + 3);
        if (path_start == std::string::npos) return {url, "/"};
        return {url.substr(0, path_start), url.substr(path_start)};
    }
};

struct RetryPolicy {
    int attempts = 3;
    std::chrono::milliseconds initial_backoff{500};
    double multiplier = 2.0;
};

/// Bounds concurrent requests.
class InFlightLimiter {
public:
    explicit InFlightLimiter(std::size_t limit) : available_(limit ? limit : 1) {}

    class Slot {
    public:
        explicit Slot(InFlightLimiter& l) : l_(l) {
            std::unique_lock lock(l_.mu_);
            l_.cv_.wait(lock, [&] { return l_.available_ > 0; });
            --l_.available_;
        }
        ~Slot() {
            {
                std::lock_guard lock(l_.mu_);
                ++l_.available_;
            }
            l_.cv_.notify_one();
        }
        Slot(const Slot&) = delete;
        Slot& operator=(const Slot&) = delete;

    private:
        InFlightLimiter& l_;
    };

private:
    std::mutex mu_;
    std::condition_variable cv_;
    std::size_t available_;
};

inline std::string api_key_from_env(const std::string& var) {
    if (var.empty()) return {};
    const char* v = std::getenv(var.c_str());
    return v ? std::string(v) : std::string();
}

/// POSTs JSON with bounded retries and exponential backoff. Transport
/// failures and 5xx/429 are retried; other statuses fail at once.
class JsonPoster {
public:
    JsonPoster(const std::string& url, std::string api_key, std::chrono::milliseconds timeout, RetryPolicy retry,
               std::size_t max_in_flight)
        : endpoint_(Endpoint::parse(url)), api_key_(std::move(api_key)), timeout_(timeout), retry_(retry),
          limiter_(max_in_flight) {}

    /// `unavailable` is the code thrown once retries are exhausted.
    nlohmann::json post(const nlohmann::json& body, ErrorCode unavailable) {
        InFlightLimiter::Slot slot(limiter_);
        const std::string payload = body.dump();
        auto backoff = retry_.initial_backoff;
        std::string last_error;
        bool timed_out = false;
        for (int attempt = 1; attempt <= retry_.attempts; ++attempt) {
            ++requests_;
            httplib::Client client(endpoint_.base);
            client.set_connection_timeout(timeout_);
            client.set_read_timeout(timeout_);
            client.set_write_timeout(timeout_);
            httplib::Headers headers;
            if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
            auto res = client.Post(endpoint_.path, headers, payload, "application/json");
            if (res && res->status >= 200 && res->status < 300) {
                try {
                    return nlohmann::json::parse(res->body);
                } catch (const nlohmann::json::exception& e) {
                    throw Error(unavailable, std::string("malformed JSON response: ") + e.what());
                }
            }
            if (res) {
                last_error = "HTTP " + std::to_string(res->status);
                timed_out = false;
                if (res->status != 429 && res->status < 500) break;
            } else {
                last_error = httplib::to_string(res.error());
                timed_out = res.error() == httplib::Error::ConnectionTimeout || res.error() == httplib::Error::Read;
            }
            if (attempt < retry_.attempts) {
                std::this_thread::sleep_for(backoff);
                backoff = std::chrono::milliseconds(static_cast<long long>(backoff.count() * retry_.multiplier));
            }
        }
        if (timed_out && unavailable == ErrorCode::AgentUnavailable)
            throw Error(ErrorCode::ResponseTimeout, endpoint_.base + endpoint_.path + ": " + last_error);
        throw Error(unavailable, endpoint_.base + endpoint_.path + " after " + std::to_string(retry_.attempts) +
                                     " attempts: " + last_error);
    }

    std::uint64_t requests() const { return requests_.load(); }

private:
    Endpoint endpoint_;
    std::string api_key_;
    std::chrono::milliseconds timeout_;
    RetryPolicy retry_;
    InFlightLimiter limiter_;
    std::atomic<std::uint64_t> requests_{0};
};

/// Client for an embeddings API: `{"model", "input": [...]}` ->
/// `{"data": [{"embedding": [...]}, ...]}`.
class RemoteEmbedder final : public Embedder {
public:
    RemoteEmbedder(EmbedderSpec spec, RetryPolicy retry = {}, std::chrono::milliseconds timeout = std::chrono::seconds(30),
                   std::size_t max_in_flight = 4)
        : spec_(std::move(spec)),
          poster_(spec_.endpoint, api_key_from_env(spec_.api_key_env), timeout, retry, max_in_flight) {
        spec_.kind = EmbedderKind::remote;
        if (spec_.batch_size == 0) throw Error(ErrorCode::InvalidConfig, "batch_size must be positive");
    }

    FlowEmbedding embed(std::string_view text) const override {
        std::vector<std::string> one{std::string(text)};
        return std::move(embed_batch(one).front());
    }

    std::vector<FlowEmbedding> embed_batch(std::span<const std::string> texts) const override {
        if (texts.empty()) throw Error(ErrorCode::EmptyBatch, "empty batch");
        if (texts.size() > spec_.batch_size * spec_.max_requests_per_batch)
            throw Error(ErrorCode::OutOfRange, "batch larger than batch_size x max requests");
        std::vector<FlowEmbedding> out;
        out.reserve(texts.size());
        for (std::size_t start = 0; start < texts.size(); start += spec_.batch_size) {
            const std::size_t n = std::min(spec_.batch_size, texts.size() - start);
            for (std::size_t i = start; i < start + n; ++i)
                if (texts[i].empty())
                    throw Error(ErrorCode::PreconditionViolation, "empty text at batch index " + std::to_string(i), -1,
                                static_cast<std::int64_t>(i));
            nlohmann::json body = {{"model", spec_.model_name},
                                   {"input", std::vector<std::string>(texts.begin() + static_cast<std::ptrdiff_t>(start),
                                                                      texts.begin() + static_cast<std::ptrdiff_t>(start + n))}};
            nlohmann::json res;
            try {
                res = poster_.post(body, ErrorCode::RemoteUnavailable);
            } catch (const Error& e) {
                throw Error(e.code(), e.what(), -1, static_cast<std::int64_t>(start));
            }
            const auto& data = res.contains("data") ? res["data"] : nlohmann::json::array();
            if (!data.is_array() || data.size() != n)
                throw Error(ErrorCode::DimensionMismatch, "service returned " + std::to_string(data.size()) +
                                                              " embeddings for " + std::to_string(n) + " inputs",
                            -1, static_cast<std::int64_t>(start));
            for (std::size_t k = 0; k < n; ++k) {
                auto values = data[k].at("embedding").get<std::vector<float>>();
                if (values.size() != spec_.dim)
                    throw Error(ErrorCode::DimensionMismatch,
                                "embedding length " + std::to_string(values.size()) + ", expected " +
                                    std::to_string(spec_.dim),
                                -1, static_cast<std::int64_t>(start + k));
                out.push_back(FlowEmbedding::normalized(std::move(values)));
            }
        }
        return out;
    }

    const EmbedderSpec& spec() const override { return spec_; }
    std::uint64_t requests() const { return poster_.requests(); }

private:
    EmbedderSpec spec_;
    mutable JsonPoster poster_;
};

/// Chat-completions client serving as both agents. Temperature is always 0.
/// Each call is a fresh two-message conversation.
class RemoteChatAgent final : public ClassificationAgent, public InductionAgent {
public:
    RemoteChatAgent(AgentSpec spec, ClassSet classes, RetryPolicy retry = {})
        : spec_(std::move(spec)), classes_(std::move(classes)),
          poster_(spec_.endpoint, api_key_from_env(spec_.api_key_env), spec_.timeout,
                  RetryPolicy{spec_.retries, retry.initial_backoff, retry.multiplier}, spec_.max_in_flight) {
        spec_.temperature = 0.0;
    }

    AgentVerdict classify(const Prompt& prompt) override {
        if (prompt.kind != PromptKind::classify)
            throw Error(ErrorCode::PreconditionViolation, "classify needs a classification prompt");
        auto raw = complete(prompt);
        auto [label, status] = parse_label(raw, classes_);
        return {label, raw, status};
    }

    InducedRule induce_rule(const Prompt& prompt) override {
        if (prompt.kind != PromptKind::induce)
            throw Error(ErrorCode::PreconditionViolation, "induce_rule needs an induction prompt");
        if (prompt.predicted == prompt.actual)
            throw Error(ErrorCode::PreconditionViolation, "induction requires predicted != actual");
        return rule_from_response(complete(prompt), prompt.actual, prompt.predicted);
    }

    static nlohmann::json request_body(const AgentSpec& spec, const Prompt& prompt) {
        return {{"model", spec.model_name},
                {"temperature", 0.0},
                {"max_tokens", spec.max_response_tokens},
                {"messages",
                 nlohmann::json::array({{{"role", "system"}, {"content", prompt.system_text}},
                                        {{"role", "user"}, {"content", prompt.user_text}}})}};
    }

    std::uint64_t requests() const { return poster_.requests(); }

private:
    std::string complete(const Prompt& prompt) {
        auto res = poster_.post(request_body(spec_, prompt), ErrorCode::AgentUnavailable);
        try {
            return res.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::AgentUnavailable, std::string("response lacks choices[0].message.content: ") + e.what());
        }
    }

    AgentSpec spec_;
    ClassSet classes_;
    JsonPoster poster_;
};

}  // namespace maids
