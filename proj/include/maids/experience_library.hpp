#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "maids/embedding.hpp"
#include "maids/error.hpp"
#include "maids/hashing.hpp"
#include "maids/labels.hpp"
#include "maids/rule.hpp"

namespace maids {

static_assert(std::endian::native == std::endian::little, "library file format assumes a little-endian host");

struct ExperienceEntry {
    std::uint64_t entry_id = 0;
    FlowEmbedding key;
    RuleText rule;
    ClassLabel predicted;
    ClassLabel actual;
    std::int64_t source_flow_id = -1;
    std::uint64_t created_seq = 0;
};

/// Everything the caller supplies on insert; the library assigns ids.
struct EntryFields {
    FlowEmbedding key;
    RuleText rule;
    ClassLabel predicted;
    ClassLabel actual;
    std::int64_t source_flow_id = -1;
};

struct RetrievalHit {
    ExperienceEntry entry;
    double similarity = 0.0;
};

struct NoContext {};

/// Hit, or the no-context branch taken when nothing clears the threshold.
using RetrievalResult = std::variant<RetrievalHit, NoContext>;

inline bool is_hit(const RetrievalResult& r) { return std::holds_alternative<RetrievalHit>(r); }
inline const RetrievalHit* as_hit(const RetrievalResult& r) { return std::get_if<RetrievalHit>(&r); }

struct LibraryStats {
    /// Configured classes first, in class-set order; off-schema labels
    /// after, sorted by their literal text.
    std::vector<std::pair<std::string, std::uint64_t>> per_class_rule_counts;
    std::uint64_t total = 0;

    nlohmann::json to_json() const {
        nlohmann::json rows = nlohmann::json::array();
        for (auto& [cls, n] : per_class_rule_counts) rows.push_back({{"class", cls}, {"rules", n}});
        return {{"classes", rows}, {"total", total}};
    }

    std::uint64_t count(std::string_view cls) const {
        for (auto& [c, n] : per_class_rule_counts)
            if (detail::iequals(c, cls)) return n;
        return 0;
    }
};

/// Exact flat cosine index over experience entries, append-only.
///
/// Keys live in one contiguous row-major float buffer. Retrieval is a
/// linear dot-product scan; the best entry wins, ties go to the smaller
/// entry_id. One writer and any number of readers may use the library
/// concurrently; a reader never sees a partially inserted entry.
class ExperienceLibrary {
public:
    static constexpr std::uint32_t kFormatVersion = 1;
    static constexpr std::array<char, 8> kMagic = {'M', 'A', 'I', 'D', 'S', 'L', 'I', 'B'};
    static constexpr std::size_t kFingerprintBytes = 64;
    static constexpr std::size_t kHeaderBytes = 8 + 4 + 4 + 8 + kFingerprintBytes + 4 + 4;
    static constexpr std::size_t kParallelScanMin = 1u << 16;

    explicit ExperienceLibrary(std::size_t dim, std::string fingerprint = {}, bool writable = true)
        : dim_(dim), fingerprint_(std::move(fingerprint)), writable_(writable) {
        if (dim == 0) throw Error(ErrorCode::InvalidConfig, "library dim must be positive");
        if (fingerprint_.size() > kFingerprintBytes)
            throw Error(ErrorCode::InvalidConfig, "embedder fingerprint longer than 64 bytes");
    }

    ExperienceLibrary(const ExperienceLibrary& other) {
        std::shared_lock lock(other.mu_);
        dim_ = other.dim_;
        fingerprint_ = other.fingerprint_;
        writable_ = other.writable_;
        keys_ = other.keys_;
        entries_ = other.entries_;
    }
    ExperienceLibrary& operator=(const ExperienceLibrary&) = delete;

    std::size_t dim() const noexcept { return dim_; }
    const std::string& fingerprint() const noexcept { return fingerprint_; }
    bool writable() const noexcept { return writable_; }
    void set_read_only() noexcept { writable_ = false; }

    /// Independent in-memory copy that accepts inserts.
    ExperienceLibrary writable_copy() const {
        ExperienceLibrary copy(*this);
        copy.writable_ = true;
        return copy;
    }

    std::size_t size() const {
        std::shared_lock lock(mu_);
        return entries_.size();
    }

    std::uint64_t insert(EntryFields fields) {
        if (!writable_) throw Error(ErrorCode::ReadOnlyLibrary, "library opened read-only");
        if (fields.key.dim() != dim_)
            throw Error(ErrorCode::DimensionMismatch, "key dim " + std::to_string(fields.key.dim()) +
                                                          " vs library dim " + std::to_string(dim_));
        if (fields.rule.text.empty()) throw Error(ErrorCode::PreconditionViolation, "empty rule text");
        std::unique_lock lock(mu_);
        ExperienceEntry e;
        e.entry_id = entries_.size();
        e.created_seq = entries_.size();
        e.key = std::move(fields.key);
        e.rule = std::move(fields.rule);
        e.predicted = std::move(fields.predicted);
        e.actual = std::move(fields.actual);
        e.source_flow_id = fields.source_flow_id;
        keys_.insert(keys_.end(), e.key.values().begin(), e.key.values().end());
        entries_.push_back(std::move(e));
        return entries_.back().entry_id;
    }

    std::optional<ExperienceEntry> entry(std::uint64_t id) const {
        std::shared_lock lock(mu_);
        if (id >= entries_.size()) return std::nullopt;
        return entries_[id];
    }

    std::vector<ExperienceEntry> entries() const {
        std::shared_lock lock(mu_);
        return entries_;
    }

    /// Top-1 retrieval: the entry maximizing cosine similarity, if that
    /// maximum reaches `tau`.
    RetrievalResult retrieve(const FlowEmbedding& query, double tau) const {
        auto hits = retrieve_top_k(query, tau, 1);
        if (hits.empty()) return NoContext{};
        return std::move(hits.front());
    }

    /// Up to k hits with similarity >= tau, best first, ties by entry_id.
    std::vector<RetrievalHit> retrieve_top_k(const FlowEmbedding& query, double tau, std::size_t k) const {
        check_query(query, tau);
        std::shared_lock lock(mu_);
        std::vector<RetrievalHit> out;
        if (entries_.empty() || k == 0 || query.is_zero_sentinel()) return out;
        std::vector<Scored> best;
        if (k == 1 && entries_.size() >= kParallelScanMin) {
            best = scan_parallel(query.values());
        } else {
            best = scan(query.values(), 0, entries_.size(), k);
        }
        for (auto& s : best) {
            if (s.similarity < tau) break;
            out.push_back({entries_[s.index], s.similarity});
        }
        return out;
    }

    LibraryStats stats(const ClassSet& classes) const {
        std::shared_lock lock(mu_);
        LibraryStats st;
        std::vector<std::uint64_t> known(classes.size(), 0);
        std::map<std::string, std::uint64_t> other;
        for (auto& e : entries_) {
            if (auto i = classes.index_of(e.actual))
                ++known[*i];
            else
                ++other[e.actual.name()];
        }
        for (std::size_t i = 0; i < classes.size(); ++i) st.per_class_rule_counts.emplace_back(classes.names()[i], known[i]);
        for (auto& [name, n] : other) st.per_class_rule_counts.emplace_back(name, n);
        st.total = entries_.size();
        return st;
    }

    // ------------------------------------------------------------------
    // Persistence
    // ------------------------------------------------------------------

    /// Serialized file image; the checksum covers every byte but its own field.
    std::vector<unsigned char> serialize() const {
        std::shared_lock lock(mu_);
        std::vector<unsigned char> buf(kHeaderBytes, 0);
        std::memcpy(buf.data(), kMagic.data(), kMagic.size());
        put_u32(buf, 8, kFormatVersion);
        put_u32(buf, 12, static_cast<std::uint32_t>(dim_));
        put_u64(buf, 16, entries_.size());
        std::memcpy(buf.data() + 24, fingerprint_.data(), fingerprint_.size());

        // resize + memcpy rather than insert: GCC 11 misreports insert of a
        // possibly empty range as an overread.
        auto append = [&buf](const void* src, std::size_t n) {
            if (n == 0) return;
            const std::size_t at = buf.size();
            buf.resize(at + n);
            std::memcpy(buf.data() + at, src, n);
        };
        append(keys_.data(), keys_.size() * sizeof(float));
        for (auto& e : entries_) {
            std::string meta = entry_metadata(e).dump();
            const auto n = static_cast<std::uint32_t>(meta.size());
            append(&n, 4);
            append(meta.data(), meta.size());
        }
        put_u32(buf, kChecksumOffset, checksum_of_image(buf));
        return buf;
    }

    std::uint32_t content_checksum() const {
        auto image = serialize();
        return get_u32(image, kChecksumOffset);
    }

    /// Writes to a sibling temp file and renames over `path`.
    void save(const std::filesystem::path& path) const {
        auto image = serialize();
        auto tmp = path;
        tmp += ".tmp";
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            if (!out) throw Error(ErrorCode::ReadOnlyLibrary, "cannot write " + tmp.string());
            out.write(reinterpret_cast<const char*>(image.data()), static_cast<std::streamsize>(image.size()));
            if (!out) throw Error(ErrorCode::Io, "short write to " + tmp.string());
        }
        std::error_code ec;
        std::filesystem::rename(tmp, path, ec);
        if (ec) throw Error(ErrorCode::Io, "rename to " + path.string() + ": " + ec.message());
    }

    static ExperienceLibrary deserialize(std::span<const unsigned char> image, bool writable = false) {
        if (image.size() < kHeaderBytes) throw Error(ErrorCode::ChecksumFailure, "file shorter than header");
        if (std::memcmp(image.data(), kMagic.data(), kMagic.size()) != 0)
            throw Error(ErrorCode::FormatVersionMismatch, "not an experience library file");
        const auto version = get_u32(image, 8);
        if (version != kFormatVersion)
            throw Error(ErrorCode::FormatVersionMismatch,
                        "format version " + std::to_string(version) + ", expected " + std::to_string(kFormatVersion));
        if (get_u32(image, kChecksumOffset) != checksum_of_image(image))
            throw Error(ErrorCode::ChecksumFailure, "checksum mismatch (truncated or corrupted file)");

        const std::size_t dim = get_u32(image, 12);
        const std::uint64_t count = get_u64(image, 16);
        std::string fp(reinterpret_cast<const char*>(image.data() + 24), kFingerprintBytes);
        fp.resize(std::strlen(fp.c_str()));
        if (dim == 0) throw Error(ErrorCode::DimensionHeaderMismatch, "zero dimension in header");
        const std::size_t vec_bytes = count * dim * sizeof(float);
        if (image.size() < kHeaderBytes + vec_bytes)
            throw Error(ErrorCode::DimensionHeaderMismatch, "vector block shorter than dim x count");

        ExperienceLibrary lib(dim, fp, true);
        lib.keys_.resize(count * dim);
        std::memcpy(lib.keys_.data(), image.data() + kHeaderBytes, vec_bytes);
        std::size_t off = kHeaderBytes + vec_bytes;
        lib.entries_.reserve(count);
        for (std::uint64_t i = 0; i < count; ++i) {
            if (off + 4 > image.size()) throw Error(ErrorCode::DimensionHeaderMismatch, "metadata block truncated");
            const std::uint32_t len = get_u32(image, off);
            off += 4;
            if (off + len > image.size()) throw Error(ErrorCode::DimensionHeaderMismatch, "metadata block truncated");
            auto meta = nlohmann::json::parse(image.begin() + static_cast<std::ptrdiff_t>(off),
                                              image.begin() + static_cast<std::ptrdiff_t>(off + len));
            off += len;
            ExperienceEntry e;
            e.entry_id = meta.at("entry_id").get<std::uint64_t>();
            if (e.entry_id != i) throw Error(ErrorCode::ChecksumFailure, "entry ids out of sequence");
            e.created_seq = meta.at("created_seq").get<std::uint64_t>();
            e.source_flow_id = meta.at("source_flow_id").get<std::int64_t>();
            e.predicted = label_from_json(meta.at("predicted"));
            e.actual = label_from_json(meta.at("actual"));
            e.rule = RuleText{meta.at("rule").get<std::string>(), label_from_json(meta.at("rule_target")),
                              label_from_json(meta.at("rule_confused_with"))};
            e.key = FlowEmbedding::from_stored(std::vector<float>(lib.keys_.begin() + static_cast<std::ptrdiff_t>(i * dim),
                                                                  lib.keys_.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim)));
            lib.entries_.push_back(std::move(e));
        }
        if (off != image.size()) throw Error(ErrorCode::ChecksumFailure, "trailing bytes after metadata");
        lib.writable_ = writable;
        return lib;
    }

    static ExperienceLibrary load(const std::filesystem::path& path, bool writable = false) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw Error(ErrorCode::Io, "cannot open library " + path.string());
        std::vector<unsigned char> image((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        return deserialize(image, writable);
    }

    /// Loads and checks the header against the embedder that will query it.
    static ExperienceLibrary load_expecting(const std::filesystem::path& path, std::size_t dim,
                                           const std::string& fingerprint, bool writable = false) {
        auto lib = load(path, writable);
        if (lib.dim() != dim)
            throw Error(ErrorCode::DimensionHeaderMismatch,
                        "library dim " + std::to_string(lib.dim()) + ", embedder dim " + std::to_string(dim));
        if (!fingerprint.empty() && lib.fingerprint() != fingerprint)
            throw Error(ErrorCode::DimensionHeaderMismatch,
                        "library embedder '" + lib.fingerprint() + "', configured '" + fingerprint + "'");
        return lib;
    }

    /// Opens for Phase 1: loads `path` if it exists, else starts empty.
    /// Fails with ReadOnlyLibrary if the file (or its directory) is not writable.
    static ExperienceLibrary open_writable(const std::filesystem::path& path, std::size_t dim,
                                           const std::string& fingerprint) {
        auto dir = path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path();
        if (!std::filesystem::is_directory(dir) || ::access(dir.c_str(), W_OK) != 0)
            throw Error(ErrorCode::ReadOnlyLibrary, "directory not writable: " + dir.string());
        if (std::filesystem::exists(path)) {
            if (::access(path.c_str(), W_OK) != 0)
                throw Error(ErrorCode::ReadOnlyLibrary, "library file not writable: " + path.string());
            return load_expecting(path, dim, fingerprint, true);
        }
        return ExperienceLibrary(dim, fingerprint, true);
    }

private:
    static constexpr std::size_t kChecksumOffset = 24 + kFingerprintBytes;

    struct Scored {
        std::size_t index;
        double similarity;
    };

    void check_query(const FlowEmbedding& query, double tau) const {
        if (query.dim() != dim_)
            throw Error(ErrorCode::DimensionMismatch,
                        "query dim " + std::to_string(query.dim()) + " vs library dim " + std::to_string(dim_));
        if (!(tau >= -1.0 && tau <= 1.0)) throw Error(ErrorCode::OutOfRange, "tau must lie in [-1, 1]");
    }

    double dot_row(std::span<const float> q, std::size_t row) const {
        const float* k = keys_.data() + row * dim_;
        double dot = 0.0;
        for (std::size_t j = 0; j < dim_; ++j) dot += static_cast<double>(q[j]) * static_cast<double>(k[j]);
        return dot;
    }

    static bool better(const Scored& a, const Scored& b) {
        return a.similarity > b.similarity || (a.similarity == b.similarity && a.index < b.index);
    }

    /// Best k rows in [begin, end). Zero-sentinel keys are never candidates.
    std::vector<Scored> scan(std::span<const float> q, std::size_t begin, std::size_t end, std::size_t k) const {
        std::vector<Scored> best;
        best.reserve(k + 1);
        for (std::size_t i = begin; i < end; ++i) {
            if (entries_[i].key.is_zero_sentinel()) continue;
            Scored s{i, dot_row(q, i)};
            if (best.size() == k && !better(s, best.back())) continue;
            auto pos = std::upper_bound(best.begin(), best.end(), s, better);
            best.insert(pos, s);
            if (best.size() > k) best.pop_back();
        }
        return best;
    }

    std::vector<Scored> scan_parallel(std::span<const float> q) const {
        const std::size_t shards = std::max(1u, std::thread::hardware_concurrency());
        const std::size_t n = entries_.size();
        const std::size_t per = (n + shards - 1) / shards;
        std::vector<std::future<std::vector<Scored>>> parts;
        for (std::size_t b = 0; b < n; b += per)
            parts.push_back(std::async(std::launch::async, [this, q, b, per, n] { return scan(q, b, std::min(n, b + per), 1); }));
        std::vector<Scored> best;
        for (auto& p : parts) {
            auto r = p.get();
            if (!r.empty() && (best.empty() || better(r.front(), best.front()))) best = {r.front()};
        }
        return best;
    }

    static nlohmann::json label_to_json(const ClassLabel& l) { return {{"name", l.name()}, {"known", l.is_known()}}; }
    static ClassLabel label_from_json(const nlohmann::json& j) {
        auto name = j.at("name").get<std::string>();
        return j.at("known").get<bool>() ? ClassLabel::known(name) : ClassLabel::unknown(name);
    }

    static nlohmann::json entry_metadata(const ExperienceEntry& e) {
        return {{"entry_id", e.entry_id},
                {"created_seq", e.created_seq},
                {"source_flow_id", e.source_flow_id},
                {"predicted", label_to_json(e.predicted)},
                {"actual", label_to_json(e.actual)},
                {"rule", e.rule.text},
                {"rule_target", label_to_json(e.rule.target_class)},
                {"rule_confused_with", label_to_json(e.rule.confused_with)}};
    }

    static std::uint32_t checksum_of_image(std::span<const unsigned char> image) {
        auto crc = crc32_of(image.first(kChecksumOffset));
        return crc32_update(crc, image.subspan(kChecksumOffset + 4));
    }

    static void put_u32(std::vector<unsigned char>& b, std::size_t off, std::uint32_t v) { std::memcpy(b.data() + off, &v, 4); }
    static void put_u64(std::vector<unsigned char>& b, std::size_t off, std::uint64_t v) { std::memcpy(b.data() + off, &v, 8); }
    static std::uint32_t get_u32(std::span<const unsigned char> b, std::size_t off) {
        std::uint32_t v;
        std::memcpy(&v, b.data() + off, 4);
        return v;
    }
    static std::uint64_t get_u64(std::span<const unsigned char> b, std::size_t off) {
        std::uint64_t v;
        std::memcpy(&v, b.data() + off, 8);
        return v;
    }

    std::size_t dim_;
    std::string fingerprint_;
    bool writable_;
    std::vector<float> keys_;
    std::vector<ExperienceEntry> entries_;
    mutable std::shared_mutex mu_;
};

}  // namespace maids
