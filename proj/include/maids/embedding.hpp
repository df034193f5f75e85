#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "maids/error.hpp"
#include "maids/hashing.hpp"

namespace maids {

/// Unit-norm embedding, or the flagged all-zero sentinel produced for
/// inputs that carry no signal.
class FlowEmbedding {
public:
    FlowEmbedding() = default;

    /// L2-normalizes `raw`. An all-zero (or non-finite) input yields the sentinel.
    static FlowEmbedding normalized(std::vector<float> raw) {
        double sq = 0.0;
        bool finite = true;
        for (float v : raw) {
            if (!std::isfinite(v)) finite = false;
            sq += static_cast<double>(v) * v;
        }
        FlowEmbedding e;
        if (!finite || sq == 0.0) {
            e.values_.assign(raw.size(), 0.0f);
            e.zero_ = true;
            return e;
        }
        const double inv = 1.0 / std::sqrt(sq);
        for (auto& v : raw) v = static_cast<float>(v * inv);
        e.values_ = std::move(raw);
        return e;
    }

    static FlowEmbedding zero(std::size_t dim) {
        FlowEmbedding e;
        e.values_.assign(dim, 0.0f);
        e.zero_ = true;
        return e;
    }

    /// Takes stored values verbatim (used when loading a library). Values
    /// must already be unit norm or all zero.
    static FlowEmbedding from_stored(std::vector<float> values) {
        FlowEmbedding e;
        e.zero_ = true;
        for (float v : values)
            if (v != 0.0f) e.zero_ = false;
        e.values_ = std::move(values);
        return e;
    }

    std::size_t dim() const noexcept { return values_.size(); }
    bool is_zero_sentinel() const noexcept { return zero_; }
    std::span<const float> values() const noexcept { return values_; }

    friend bool operator==(const FlowEmbedding&, const FlowEmbedding&) = default;

private:
    std::vector<float> values_;
    bool zero_ = false;
};

/// Cosine similarity. For stored unit vectors this is the dot product; the
/// zero sentinel on either side scores -1 so it can never be retrieved.
inline double cosine(const FlowEmbedding& a, const FlowEmbedding& b) {
    if (a.dim() != b.dim())
        throw Error(ErrorCode::DimensionMismatch,
                    "cosine of dims " + std::to_string(a.dim()) + " and " + std::to_string(b.dim()));
    if (a.is_zero_sentinel() || b.is_zero_sentinel()) return -1.0;
    auto x = a.values(), y = b.values();
    double dot = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) dot += static_cast<double>(x[i]) * static_cast<double>(y[i]);
    return dot;
}

enum class EmbedderKind { remote, hash };

struct EmbedderSpec {
    EmbedderKind kind = EmbedderKind::hash;
    std::size_t dim = 384;
    std::uint64_t hash_seed = 0;
    std::string endpoint;
    std::string model_name;
    std::string api_key_env;
    std::size_t batch_size = 64;
    std::size_t max_requests_per_batch = 1024;

    /// Identifies the key space. Stored in the library header so keys from
    /// different embedders are never compared.
    std::string fingerprint() const {
        if (kind == EmbedderKind::hash)
            return "hash:dim=" + std::to_string(dim) + ":seed=" + std::to_string(hash_seed);
        return "remote:dim=" + std::to_string(dim) + ":model=" + model_name;
    }
};

class Embedder {
public:
    virtual ~Embedder() = default;

    virtual FlowEmbedding embed(std::string_view text) const = 0;

    /// Order-preserving. Failure aborts the batch; the thrown Error carries
    /// the failing index.
    virtual std::vector<FlowEmbedding> embed_batch(std::span<const std::string> texts) const {
        if (texts.empty()) throw Error(ErrorCode::EmptyBatch, "empty batch");
        std::vector<FlowEmbedding> out;
        out.reserve(texts.size());
        for (std::size_t i = 0; i < texts.size(); ++i) {
            try {
                out.push_back(embed(texts[i]));
            } catch (const Error& e) {
                throw Error(e.code(), "batch index " + std::to_string(i) + ": " + e.what(), -1,
                            static_cast<std::int64_t>(i));
            }
        }
        return out;
    }

    virtual const EmbedderSpec& spec() const = 0;
    std::size_t dim() const { return spec().dim; }
};

/// Splits on anything that is not an ASCII letter or digit.
inline std::vector<std::string_view> tokenize_alnum(std::string_view text) {
    std::vector<std::string_view> tokens;
    std::size_t start = std::string_view::npos;
    for (std::size_t i = 0; i <= text.size(); ++i) {
        bool alnum = i < text.size() && std::isalnum(static_cast<unsigned char>(text[i])) != 0;
        if (alnum && start == std::string_view::npos) start = i;
        if (!alnum && start != std::string_view::npos) {
            tokens.push_back(text.substr(start, i - start));
            start = std::string_view::npos;
        }
    }
    return tokens;
}

/// Signed feature hashing: each token adds +-1 to bucket h mod dim, where
/// h = FNV-1a64(token, seed) and the sign is negative when bit 1 of h is set.
inline FlowEmbedding hash_embed(std::string_view text, std::size_t dim, std::uint64_t seed = 0) {
    std::vector<float> acc(dim, 0.0f);
    for (auto tok : tokenize_alnum(text)) {
        const std::uint64_t h = fnv1a64(tok, seed);
        acc[h % dim] += ((h >> 1) & 1u) ? -1.0f : 1.0f;
    }
    return FlowEmbedding::normalized(std::move(acc));
}

/// Deterministic offline embedder.
class HashEmbedder final : public Embedder {
public:
    explicit HashEmbedder(std::size_t dim = 384, std::uint64_t seed = 0) {
        if (dim < 2) throw Error(ErrorCode::InvalidConfig, "hash embedder dim must be >= 2");
        spec_.kind = EmbedderKind::hash;
        spec_.dim = dim;
        spec_.hash_seed = seed;
    }
    explicit HashEmbedder(const EmbedderSpec& spec) : HashEmbedder(spec.dim, spec.hash_seed) {
        spec_.batch_size = spec.batch_size;
    }

    FlowEmbedding embed(std::string_view text) const override { return hash_embed(text, spec_.dim, spec_.hash_seed); }
    const EmbedderSpec& spec() const override { return spec_; }

private:
    EmbedderSpec spec_;
};

/// Memoizes embeddings by exact input text for the lifetime of the object.
class CachingEmbedder final : public Embedder {
public:
    explicit CachingEmbedder(std::shared_ptr<const Embedder> inner) : inner_(std::move(inner)) {}

    FlowEmbedding embed(std::string_view text) const override {
        {
            std::shared_lock lock(mu_);
            if (auto it = cache_.find(text); it != cache_.end()) return it->second;
        }
        auto e = inner_->embed(text);
        std::unique_lock lock(mu_);
        cache_.emplace(std::string(text), e);
        return e;
    }

    std::vector<FlowEmbedding> embed_batch(std::span<const std::string> texts) const override {
        if (texts.empty()) throw Error(ErrorCode::EmptyBatch, "empty batch");
        std::vector<std::string> missing;
        {
            std::shared_lock lock(mu_);
            for (auto& t : texts)
                if (!cache_.contains(t)) missing.push_back(t);
        }
        if (!missing.empty()) {
            auto fresh = inner_->embed_batch(missing);
            std::unique_lock lock(mu_);
            for (std::size_t i = 0; i < missing.size(); ++i) cache_.emplace(missing[i], std::move(fresh[i]));
        }
        std::shared_lock lock(mu_);
        std::vector<FlowEmbedding> out;
        out.reserve(texts.size());
        for (auto& t : texts) out.push_back(cache_.find(t)->second);
        return out;
    }

    const EmbedderSpec& spec() const override { return inner_->spec(); }
    std::size_t cache_size() const {
        std::shared_lock lock(mu_);
        return cache_.size();
    }

private:
    std::shared_ptr<const Embedder> inner_;
    mutable std::shared_mutex mu_;
    mutable std::map<std::string, FlowEmbedding, std::less<>> cache_;
};

}  // namespace maids
