#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "maids/csv.hpp"
#include "maids/error.hpp"
#include "maids/labels.hpp"

namespace maids {

// ---------------------------------------------------------------------------
// Feature schema
// ---------------------------------------------------------------------------

/// Canonical feature names in serialization order: 4 contextual,
/// 4 volumetric, 3 temporal, 2 throughput, 1 flag aggregate.
inline constexpr std::array<std::string_view, 14> kFeatureNames = {
    "src_ip",           "dst_ip",         "dst_port",           "protocol",
    "in_bytes",         "out_bytes",      "in_pkts",            "out_pkts",
    "flow_duration_ms", "avg_iat_src_to_dst", "avg_iat_dst_to_src",
    "throughput_src_to_dst", "throughput_dst_to_src",
    "tcp_flags_aggregate",
};

/// Features the mock inducer reasons over (everything but addresses and protocol).
inline constexpr std::array<std::string_view, 11> kNumericFeatureNames = {
    "dst_port",         "in_bytes",           "out_bytes",          "in_pkts",
    "out_pkts",         "flow_duration_ms",   "avg_iat_src_to_dst", "avg_iat_dst_to_src",
    "throughput_src_to_dst", "throughput_dst_to_src", "tcp_flags_aggregate",
};

/// Binds each canonical feature (plus the label) to a source column name.
struct SchemaMap {
    std::map<std::string, std::string, std::less<>> features;
    std::string label_column;

    /// Column names of the UQ NetFlow v3 exports.
    static SchemaMap uq_netflow() {
        SchemaMap m;
        m.features = {
            {"src_ip", "IPV4_SRC_ADDR"},
            {"dst_ip", "IPV4_DST_ADDR"},
            {"dst_port", "L4_DST_PORT"},
            {"protocol", "PROTOCOL"},
            {"in_bytes", "IN_BYTES"},
            {"out_bytes", "OUT_BYTES"},
            {"in_pkts", "IN_PKTS"},
            {"out_pkts", "OUT_PKTS"},
            {"flow_duration_ms", "FLOW_DURATION_MILLISECONDS"},
            {"avg_iat_src_to_dst", "SRC_TO_DST_IAT_AVG"},
            {"avg_iat_dst_to_src", "DST_TO_SRC_IAT_AVG"},
            {"throughput_src_to_dst", "SRC_TO_DST_AVG_THROUGHPUT"},
            {"throughput_dst_to_src", "DST_TO_SRC_AVG_THROUGHPUT"},
            {"tcp_flags_aggregate", "TCP_FLAGS"},
        };
        m.label_column = "Attack";
        return m;
    }

    void validate() const {
        for (auto name : kFeatureNames) {
            if (!features.contains(name))
                throw Error(ErrorCode::InvalidConfig, "schema_map lacks feature '" + std::string(name) + "'");
        }
        if (label_column.empty()) throw Error(ErrorCode::InvalidConfig, "schema_map lacks label column");
    }

    nlohmann::json to_json() const {
        nlohmann::json j = nlohmann::json::object();
        for (auto name : kFeatureNames) j[std::string(name)] = features.at(std::string(name));
        j["label"] = label_column;
        return j;
    }

    static SchemaMap from_json(const nlohmann::json& j) {
        SchemaMap m;
        for (auto& [k, v] : j.items()) {
            if (k == "label")
                m.label_column = v.get<std::string>();
            else
                m.features[k] = v.get<std::string>();
        }
        m.validate();
        return m;
    }
};

/// Column indices for a schema resolved against one header.
struct BoundSchema {
    std::array<std::size_t, 14> feature_index{};
    std::size_t label_index = 0;

    static BoundSchema bind(const std::vector<std::string>& header, const SchemaMap& schema) {
        schema.validate();
        auto find = [&](const std::string& column) {
            for (std::size_t i = 0; i < header.size(); ++i)
                if (detail::trim(header[i]) == column) return i;
            throw Error(ErrorCode::MissingColumn, "column '" + column + "' not in header", 1);
        };
        BoundSchema b;
        for (std::size_t f = 0; f < kFeatureNames.size(); ++f)
            b.feature_index[f] = find(schema.features.find(kFeatureNames[f])->second);
        b.label_index = find(schema.label_column);
        return b;
    }
};

// ---------------------------------------------------------------------------
// Rows and records
// ---------------------------------------------------------------------------

/// One CSV data record, aligned with the file header.
struct RawFlowRow {
    std::shared_ptr<const std::vector<std::string>> header;
    std::vector<std::string> values;
    std::int64_t line_number = 0;

    std::size_t size() const noexcept { return values.size(); }
    const std::string& column_name(std::size_t i) const { return header->at(i); }

    std::optional<std::string_view> value(std::string_view column) const {
        for (std::size_t i = 0; i < header->size(); ++i)
            if (detail::trim((*header)[i]) == column) return std::string_view(values[i]);
        return std::nullopt;
    }
};

struct FlowRecord {
    std::string src_ip = "0.0.0.0";
    std::string dst_ip = "0.0.0.0";
    std::uint32_t dst_port = 0;
    std::string protocol = "PROTO_0";
    std::uint64_t in_bytes = 0;
    std::uint64_t out_bytes = 0;
    std::uint64_t in_pkts = 0;
    std::uint64_t out_pkts = 0;
    std::uint64_t flow_duration_ms = 0;
    double avg_iat_src_to_dst = 0.0;
    double avg_iat_dst_to_src = 0.0;
    double throughput_src_to_dst = 0.0;
    double throughput_dst_to_src = 0.0;
    std::uint32_t tcp_flags_aggregate = 0;

    friend bool operator==(const FlowRecord&, const FlowRecord&) = default;

    /// Values in kNumericFeatureNames order.
    std::array<double, 11> numeric_features() const {
        return {static_cast<double>(dst_port),   static_cast<double>(in_bytes),
                static_cast<double>(out_bytes),  static_cast<double>(in_pkts),
                static_cast<double>(out_pkts),   static_cast<double>(flow_duration_ms),
                avg_iat_src_to_dst,              avg_iat_dst_to_src,
                throughput_src_to_dst,           throughput_dst_to_src,
                static_cast<double>(tcp_flags_aggregate)};
    }
};

struct LabeledFlow {
    FlowRecord record;
    ClassLabel label;
    std::uint64_t flow_id = 0;
};

/// Per-run audit of what normalization changed or rejected.
struct IngestionReport {
    struct Rejection {
        std::int64_t line_number;
        std::string reason;
    };

    std::uint64_t rows_read = 0;
    std::uint64_t rows_accepted = 0;
    std::uint64_t normalizations = 0;
    std::map<std::string, std::uint64_t> normalizations_by_feature;
    std::vector<Rejection> rejections;

    void count_normalization(std::string_view feature) {
        ++normalizations;
        ++normalizations_by_feature[std::string(feature)];
    }

    nlohmann::json to_json() const {
        nlohmann::json rej = nlohmann::json::array();
        for (auto& r : rejections) rej.push_back({{"line", r.line_number}, {"reason", r.reason}});
        return {{"rows_read", rows_read},
                {"rows_accepted", rows_accepted},
                {"normalizations", normalizations},
                {"normalizations_by_feature", normalizations_by_feature},
                {"rejections", rej}};
    }
};

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

/// Lazily yields RawFlowRow records. The header is read and validated
/// against the schema at construction. A ragged record throws RaggedRow
/// carrying its line number; the reader stays usable afterwards.
class FlowCsvReader {
public:
    FlowCsvReader(std::istream& in, const SchemaMap& schema) : records_(in) {
        auto head = records_.next();
        if (!head) throw Error(ErrorCode::EmptyFile, "no header record");
        for (auto& h : head->fields) h = std::string(detail::trim(h));
        header_ = std::make_shared<const std::vector<std::string>>(std::move(head->fields));
        bound_ = BoundSchema::bind(*header_, schema);
    }

    std::optional<RawFlowRow> next() {
        auto rec = records_.next();
        if (!rec) return std::nullopt;
        if (rec->fields.size() != header_->size()) {
            throw Error(ErrorCode::RaggedRow,
                        "line " + std::to_string(rec->line_number) + ": expected " +
                            std::to_string(header_->size()) + " fields, got " + std::to_string(rec->fields.size()),
                        rec->line_number);
        }
        return RawFlowRow{header_, std::move(rec->fields), rec->line_number};
    }

    const std::vector<std::string>& header() const { return *header_; }
    const BoundSchema& bound() const { return bound_; }

private:
    CsvRecordReader records_;
    std::shared_ptr<const std::vector<std::string>> header_;
    BoundSchema bound_;
};

/// Collects every row eagerly. Prefer FlowCsvReader for large inputs.
inline std::vector<RawFlowRow> parse_flow_csv(std::istream& in, const SchemaMap& schema) {
    FlowCsvReader reader(in, schema);
    std::vector<RawFlowRow> rows;
    while (auto row = reader.next()) rows.push_back(std::move(*row));
    return rows;
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

inline std::string normalize_protocol(int proto_number) {
    if (proto_number < 0 || proto_number > 255)
        throw Error(ErrorCode::OutOfRange, "protocol number " + std::to_string(proto_number));
    switch (proto_number) {
        case 1: return "ICMP";
        case 6: return "TCP";
        case 17: return "UDP";
        default: return "PROTO_" + std::to_string(proto_number);
    }
}

namespace detail {

inline std::optional<double> parse_real(std::string_view s) {
    s = trim(s);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    if (s.empty()) return std::nullopt;
    double v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

/// Dotted-quad IPv4 with recovery of surrounding whitespace, quotes, and
/// leading zeros in octets.
inline std::optional<std::string> normalize_ipv4(std::string_view s) {
    s = trim(s);
    while (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') || (s.front() == '\'' && s.back() == '\''))) {
        s = trim(s.substr(1, s.size() - 2));
    }
    std::string out;
    int parts = 0;
    std::size_t pos = 0;
    while (parts < 4) {
        std::size_t end = s.find('.', pos);
        if (parts < 3 && end == std::string_view::npos) return std::nullopt;
        if (parts == 3) end = s.size();
        auto octet = s.substr(pos, end - pos);
        while (octet.size() > 1 && octet.front() == '0') octet.remove_prefix(1);
        if (octet.empty() || octet.size() > 3) return std::nullopt;
        unsigned value = 0;
        for (char c : octet) {
            if (c < '0' || c > '9') return std::nullopt;
            value = value * 10 + static_cast<unsigned>(c - '0');
        }
        if (value > 255) return std::nullopt;
        if (!out.empty()) out.push_back('.');
        out += std::to_string(value);
        ++parts;
        pos = end + 1;
    }
    return out;
}

}  // namespace detail

/// Maps one row onto the 14-feature record. Invalid numeric values
/// (missing, non-numeric, negative, non-finite, out of field range) become
/// 0 and are counted in `report`. Non-integral values in integer fields are
/// floored and counted. Addresses that cannot be recovered reject the row.
inline FlowRecord select_and_normalize(const RawFlowRow& row, const BoundSchema& bound,
                                       IngestionReport* report = nullptr) {
    auto field = [&](std::size_t f) -> std::string_view { return row.values.at(bound.feature_index[f]); };
    auto note = [&](std::size_t f) {
        if (report) report->count_normalization(kFeatureNames[f]);
    };
    auto real_field = [&](std::size_t f) -> double {
        auto v = detail::parse_real(field(f));
        if (!v || !std::isfinite(*v) || *v < 0.0) {
            note(f);
            return 0.0;
        }
        return *v == 0.0 ? 0.0 : *v;  // folds -0
    };
    auto int_field = [&](std::size_t f, double max_value) -> std::uint64_t {
        auto text = detail::trim(field(f));
        std::uint64_t iv = 0;
        auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), iv);
        if (ec == std::errc() && ptr == text.data() + text.size() && !text.empty()) {
            if (static_cast<double>(iv) > max_value) {
                note(f);
                return 0;
            }
            return iv;
        }
        auto v = detail::parse_real(text);
        if (!v || !std::isfinite(*v) || *v < 0.0 || *v > max_value) {
            note(f);
            return 0;
        }
        double fl = std::floor(*v);
        if (fl != *v) note(f);
        return static_cast<std::uint64_t>(fl);
    };

    constexpr double kU64Max = 18446744073709549568.0;  // largest double below 2^64
    FlowRecord r;
    auto src = detail::normalize_ipv4(field(0));
    if (!src)
        throw Error(ErrorCode::UnparseableIP, "line " + std::to_string(row.line_number) + ": source address '" +
                                                  std::string(field(0)) + "'", row.line_number);
    auto dst = detail::normalize_ipv4(field(1));
    if (!dst)
        throw Error(ErrorCode::UnparseableIP, "line " + std::to_string(row.line_number) +
                                                  ": destination address '" + std::string(field(1)) + "'",
                    row.line_number);
    r.src_ip = *src;
    r.dst_ip = *dst;
    r.dst_port = static_cast<std::uint32_t>(int_field(2, 65535.0));

    {
        auto text = detail::trim(field(3));
        if (detail::iequals(text, "TCP") || detail::iequals(text, "UDP") || detail::iequals(text, "ICMP")) {
            r.protocol = detail::to_lower(text) == "tcp" ? "TCP" : detail::to_lower(text) == "udp" ? "UDP" : "ICMP";
        } else {
            r.protocol = normalize_protocol(static_cast<int>(int_field(3, 255.0)));
        }
    }
    r.in_bytes = int_field(4, kU64Max);
    r.out_bytes = int_field(5, kU64Max);
    r.in_pkts = int_field(6, kU64Max);
    r.out_pkts = int_field(7, kU64Max);
    r.flow_duration_ms = int_field(8, kU64Max);
    r.avg_iat_src_to_dst = real_field(9);
    r.avg_iat_dst_to_src = real_field(10);
    r.throughput_src_to_dst = real_field(11);
    r.throughput_dst_to_src = real_field(12);
    r.tcp_flags_aggregate = static_cast<std::uint32_t>(int_field(13, 255.0));
    return r;
}

inline FlowRecord select_and_normalize(const RawFlowRow& row, const SchemaMap& schema,
                                       IngestionReport* report = nullptr) {
    return select_and_normalize(row, BoundSchema::bind(*row.header, schema), report);
}

// ---------------------------------------------------------------------------
// Canonical JSON
// ---------------------------------------------------------------------------

/// Fixed-point with at most 6 fractional digits, trailing zeros trimmed.
inline std::string format_real(double v) {
    char buf[400];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, 6);
    std::string s(buf, ptr);
    if (s.find('.') != std::string::npos) {
        while (s.back() == '0') s.pop_back();
        if (s.back() == '.') s.pop_back();
    }
    if (s == "-0") s = "0";
    return s;
}

/// Single-line JSON object, keys in kFeatureNames order. This string is
/// both the prompt payload and the embedding input, so it must be stable.
inline std::string to_canonical_json(const FlowRecord& r) {
    auto str = [](const std::string& s) { return nlohmann::json(s).dump(); };
    std::string out;
    out.reserve(320);
    out += "{\"src_ip\":" + str(r.src_ip);
    out += ",\"dst_ip\":" + str(r.dst_ip);
    out += ",\"dst_port\":" + std::to_string(r.dst_port);
    out += ",\"protocol\":" + str(r.protocol);
    out += ",\"in_bytes\":" + std::to_string(r.in_bytes);
    out += ",\"out_bytes\":" + std::to_string(r.out_bytes);
    out += ",\"in_pkts\":" + std::to_string(r.in_pkts);
    out += ",\"out_pkts\":" + std::to_string(r.out_pkts);
    out += ",\"flow_duration_ms\":" + std::to_string(r.flow_duration_ms);
    out += ",\"avg_iat_src_to_dst\":" + format_real(r.avg_iat_src_to_dst);
    out += ",\"avg_iat_dst_to_src\":" + format_real(r.avg_iat_dst_to_src);
    out += ",\"throughput_src_to_dst\":" + format_real(r.throughput_src_to_dst);
    out += ",\"throughput_dst_to_src\":" + format_real(r.throughput_dst_to_src);
    out += ",\"tcp_flags_aggregate\":" + std::to_string(r.tcp_flags_aggregate);
    out += "}";
    return out;
}

inline FlowRecord flow_record_from_json(const nlohmann::json& j) {
    FlowRecord r;
    r.src_ip = j.at("src_ip").get<std::string>();
    r.dst_ip = j.at("dst_ip").get<std::string>();
    r.dst_port = j.at("dst_port").get<std::uint32_t>();
    r.protocol = j.at("protocol").get<std::string>();
    r.in_bytes = j.at("in_bytes").get<std::uint64_t>();
    r.out_bytes = j.at("out_bytes").get<std::uint64_t>();
    r.in_pkts = j.at("in_pkts").get<std::uint64_t>();
    r.out_pkts = j.at("out_pkts").get<std::uint64_t>();
    r.flow_duration_ms = j.at("flow_duration_ms").get<std::uint64_t>();
    r.avg_iat_src_to_dst = j.at("avg_iat_src_to_dst").get<double>();
    r.avg_iat_dst_to_src = j.at("avg_iat_dst_to_src").get<double>();
    r.throughput_src_to_dst = j.at("throughput_src_to_dst").get<double>();
    r.throughput_dst_to_src = j.at("throughput_dst_to_src").get<double>();
    r.tcp_flags_aggregate = j.at("tcp_flags_aggregate").get<std::uint32_t>();
    return r;
}

inline FlowRecord parse_flow_record(std::string_view text) {
    return flow_record_from_json(nlohmann::json::parse(text));
}

// ---------------------------------------------------------------------------
// Dataset loading and splitting
// ---------------------------------------------------------------------------

struct LoadedDataset {
    std::vector<LabeledFlow> flows;
    IngestionReport report;
};

/// Reads, normalizes, and labels every row. flow_id is the 0-based ordinal
/// of the data record in the file, so ids stay stable when rows are
/// rejected. Ragged rows, unparseable addresses, and labels outside the
/// class set are rejected and listed in the report.
inline LoadedDataset load_labeled_flows(std::istream& in, const SchemaMap& schema, const ClassSet& classes) {
    LoadedDataset out;
    FlowCsvReader reader(in, schema);
    std::uint64_t ordinal = 0;
    while (true) {
        std::optional<RawFlowRow> row;
        try {
            row = reader.next();
        } catch (const Error& e) {
            if (e.code() != ErrorCode::RaggedRow) throw;
            ++out.report.rows_read;
            out.report.rejections.push_back({e.line(), e.what()});
            ++ordinal;
            continue;
        }
        if (!row) break;
        ++out.report.rows_read;
        const std::uint64_t id = ordinal++;
        try {
            auto record = select_and_normalize(*row, reader.bound(), &out.report);
            auto label = classes.canonicalize(row->values.at(reader.bound().label_index));
            if (label.is_unknown()) {
                out.report.rejections.push_back({row->line_number, "label '" + label.name() + "' outside class set"});
                continue;
            }
            out.flows.push_back({std::move(record), std::move(label), id});
            ++out.report.rows_accepted;
        } catch (const Error& e) {
            if (e.code() != ErrorCode::UnparseableIP) throw;
            out.report.rejections.push_back({row->line_number, e.what()});
        }
    }
    return out;
}

inline LoadedDataset load_labeled_flows(const std::string& path, const SchemaMap& schema, const ClassSet& classes) {
    InputFile file(path);
    return load_labeled_flows(file.stream(), schema, classes);
}

struct ClassSplitCounts {
    std::string class_name;
    std::uint64_t available = 0;
    std::uint64_t build = 0;
    std::uint64_t eval = 0;
    std::uint64_t deficit_build = 0;
    std::uint64_t deficit_eval = 0;
};

struct DatasetSplit {
    std::vector<LabeledFlow> build_set;
    std::vector<LabeledFlow> eval_set;
    std::uint64_t seed = 0;
    std::uint64_t per_class_quota_build = 0;
    std::uint64_t per_class_quota_eval = 0;
    std::vector<ClassSplitCounts> per_class;

    /// Manifest form: everything except the flow payloads.
    nlohmann::json manifest() const {
        nlohmann::json classes = nlohmann::json::array();
        for (auto& c : per_class) {
            classes.push_back({{"class", c.class_name},
                               {"available", c.available},
                               {"build", c.build},
                               {"eval", c.eval},
                               {"deficit_build", c.deficit_build},
                               {"deficit_eval", c.deficit_eval}});
        }
        std::vector<std::uint64_t> build_ids, eval_ids;
        for (auto& f : build_set) build_ids.push_back(f.flow_id);
        for (auto& f : eval_set) eval_ids.push_back(f.flow_id);
        return {{"seed", seed},
                {"per_class_quota_build", per_class_quota_build},
                {"per_class_quota_eval", per_class_quota_eval},
                {"classes", classes},
                {"build_ids", build_ids},
                {"eval_ids", eval_ids}};
    }
};

/// Per-class uniform sampling without replacement. Quotas are totals,
/// divided evenly (floor) across classes. A class with fewer rows than its
/// combined quota fills build first, gives the remainder to eval, and
/// records the deficit. Both output sets are shuffled so classes
/// interleave. Deterministic for a fixed seed and input order.
inline DatasetSplit stratified_split(std::span<const LabeledFlow> flows, const ClassSet& classes,
                                     std::uint64_t quota_build, std::uint64_t quota_eval, std::uint64_t seed) {
    if (classes.empty()) throw Error(ErrorCode::InvalidConfig, "empty class set");
    DatasetSplit split;
    split.seed = seed;
    split.per_class_quota_build = quota_build / classes.size();
    split.per_class_quota_eval = quota_eval / classes.size();

    std::vector<std::vector<std::size_t>> by_class(classes.size());
    for (std::size_t i = 0; i < flows.size(); ++i) {
        auto c = classes.index_of(flows[i].label);
        if (c) by_class[*c].push_back(i);
    }

    std::mt19937_64 rng(seed);
    for (std::size_t c = 0; c < classes.size(); ++c) {
        auto& idx = by_class[c];
        ClassSplitCounts counts;
        counts.class_name = classes.names()[c];
        counts.available = idx.size();
        const std::uint64_t qb = split.per_class_quota_build, qe = split.per_class_quota_eval;
        if (qb + qe > 0 && idx.empty())
            throw Error(ErrorCode::EmptyClass, "class '" + counts.class_name + "' has no rows");
        std::shuffle(idx.begin(), idx.end(), rng);
        counts.build = std::min<std::uint64_t>(qb, idx.size());
        counts.eval = std::min<std::uint64_t>(qe, idx.size() - counts.build);
        counts.deficit_build = qb - counts.build;
        counts.deficit_eval = qe - counts.eval;
        for (std::uint64_t k = 0; k < counts.build; ++k) split.build_set.push_back(flows[idx[k]]);
        for (std::uint64_t k = 0; k < counts.eval; ++k) split.eval_set.push_back(flows[idx[counts.build + k]]);
        split.per_class.push_back(counts);
    }
    std::shuffle(split.build_set.begin(), split.build_set.end(), rng);
    std::shuffle(split.eval_set.begin(), split.eval_set.end(), rng);
    return split;
}

/// Re-materializes a split from a manifest against the loaded dataset.
inline DatasetSplit split_from_manifest(const nlohmann::json& manifest, std::span<const LabeledFlow> flows) {
    std::map<std::uint64_t, const LabeledFlow*> by_id;
    for (auto& f : flows) by_id[f.flow_id] = &f;
    DatasetSplit split;
    split.seed = manifest.at("seed").get<std::uint64_t>();
    split.per_class_quota_build = manifest.at("per_class_quota_build").get<std::uint64_t>();
    split.per_class_quota_eval = manifest.at("per_class_quota_eval").get<std::uint64_t>();
    for (auto& c : manifest.at("classes")) {
        split.per_class.push_back({c.at("class").get<std::string>(), c.at("available").get<std::uint64_t>(),
                                   c.at("build").get<std::uint64_t>(), c.at("eval").get<std::uint64_t>(),
                                   c.at("deficit_build").get<std::uint64_t>(),
                                   c.at("deficit_eval").get<std::uint64_t>()});
    }
    auto pull = [&](const char* key, std::vector<LabeledFlow>& out) {
        for (auto& id : manifest.at(key)) {
            auto it = by_id.find(id.get<std::uint64_t>());
            if (it == by_id.end())
                throw Error(ErrorCode::InvalidConfig, "manifest flow_id " + id.dump() + " not in dataset");
            out.push_back(*it->second);
        }
    };
    pull("build_ids", split.build_set);
    pull("eval_ids", split.eval_set);
    return split;
}

/// Writes flows as a CSV in the UQ NetFlow column layout (plus Label/Attack).
inline void write_flow_csv(std::ostream& out, std::span<const LabeledFlow> flows) {
    auto schema = SchemaMap::uq_netflow();
    for (std::size_t f = 0; f < kFeatureNames.size(); ++f)
        out << schema.features.at(std::string(kFeatureNames[f])) << ',';
    out << "Label,Attack\n";
    auto proto_number = [](const std::string& p) -> std::string {
        if (p == "TCP") return "6";
        if (p == "UDP") return "17";
        if (p == "ICMP") return "1";
        if (p.rfind("PROTO_", 0) == 0) return p.substr(6);
        return "0";
    };
    for (auto& lf : flows) {
        const auto& r = lf.record;
        out << r.src_ip << ',' << r.dst_ip << ',' << r.dst_port << ',' << proto_number(r.protocol) << ','
            << r.in_bytes << ',' << r.out_bytes << ',' << r.in_pkts << ',' << r.out_pkts << ','
            << r.flow_duration_ms << ',' << format_real(r.avg_iat_src_to_dst) << ','
            << format_real(r.avg_iat_dst_to_src) << ',' << format_real(r.throughput_src_to_dst) << ','
            << format_real(r.throughput_dst_to_src) << ',' << r.tcp_flags_aggregate << ','
            << (detail::iequals(lf.label.name(), "Benign") ? 0 : 1) << ',' << csv_escape(lf.label.name()) << '\n';
    }
}

}  // namespace maids
