#pragma once

// Seeded generator of labelled NetFlow-like records for offline runs and
// tests. Each class owns a set of prototypes (fixed endpoints, port,
// protocol, and traffic shape); a flow is a prototype with small jitter on
// its volume and timing fields.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "maids/flow_model.hpp"
#include "maids/labels.hpp"

namespace maids {

struct SyntheticSpec {
    std::size_t flows = 2000;
    std::size_t prototypes_per_class = 40;
    std::uint64_t seed = 7;
};

namespace detail {

struct TrafficShape {
    std::uint64_t bytes_lo, bytes_hi;
    std::uint64_t pkts_lo, pkts_hi;
    std::uint64_t dur_lo, dur_hi;
};

// Loose per-class volume and timing shapes, keyed by position in the class
// set. Endpoints, ports, protocols, and flags come from pools shared by all
// classes, so no single categorical token gives the class away.
inline TrafficShape shape_for(std::size_t class_index) {
    switch (class_index % 4) {
        case 0: return {400, 60000, 4, 80, 50, 30000};    // ordinary sessions
        case 1: return {40, 600, 1, 4, 0, 20};            // distributed floods
        case 2: return {600, 9000, 6, 60, 1000, 60000};   // single-source floods
        default: return {40, 120, 1, 2, 0, 5};            // scans
    }
}

inline const std::vector<std::uint32_t> kPorts = {22, 23, 53, 80, 123, 139, 443, 445, 3389, 8080};
inline const std::vector<std::string> kProtocols = {"TCP", "UDP", "TCP", "ICMP"};
inline const std::vector<std::uint32_t> kFlags = {0, 2, 4, 18, 20, 24, 27};
inline const std::vector<int> kFirstOctets = {10, 172, 192};

inline std::string random_ipv4(std::mt19937_64& rng, int first_octet) {
    std::uniform_int_distribution<int> octet(1, 254);
    return std::to_string(first_octet) + "." + std::to_string(octet(rng)) + "." + std::to_string(octet(rng)) + "." +
           std::to_string(octet(rng));
}

template <class T>
T pick(std::mt19937_64& rng, const std::vector<T>& v) {
    return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
}

inline std::uint64_t uniform(std::mt19937_64& rng, std::uint64_t lo, std::uint64_t hi) {
    return std::uniform_int_distribution<std::uint64_t>(lo, hi)(rng);
}

}  // namespace detail

/// Prototype records, `prototypes_per_class` per class, in class order.
inline std::vector<LabeledFlow> synthetic_prototypes(const ClassSet& classes, std::size_t per_class,
                                                     std::mt19937_64& rng) {
    std::vector<LabeledFlow> protos;
    for (std::size_t c = 0; c < classes.size(); ++c) {
        auto shape = detail::shape_for(c);
        for (std::size_t p = 0; p < per_class; ++p) {
            FlowRecord r;
            r.src_ip = detail::random_ipv4(rng, detail::pick(rng, detail::kFirstOctets));
            r.dst_ip = detail::random_ipv4(rng, detail::pick(rng, detail::kFirstOctets));
            r.dst_port = detail::pick(rng, detail::kPorts);
            r.protocol = detail::pick(rng, detail::kProtocols);
            r.in_bytes = detail::uniform(rng, shape.bytes_lo, shape.bytes_hi);
            r.out_bytes = detail::uniform(rng, 0, shape.bytes_hi / 2);
            r.in_pkts = detail::uniform(rng, shape.pkts_lo, shape.pkts_hi);
            r.out_pkts = detail::uniform(rng, 0, shape.pkts_hi);
            r.flow_duration_ms = detail::uniform(rng, shape.dur_lo, shape.dur_hi);
            const double secs = std::max<double>(1.0, static_cast<double>(r.flow_duration_ms)) / 1000.0;
            r.avg_iat_src_to_dst = std::round(1000.0 * secs / static_cast<double>(r.in_pkts + 1)) / 1000.0;
            r.avg_iat_dst_to_src = std::round(1000.0 * secs / static_cast<double>(r.out_pkts + 1)) / 1000.0;
            r.throughput_src_to_dst = std::round(8.0 * static_cast<double>(r.in_bytes) / secs);
            r.throughput_dst_to_src = std::round(8.0 * static_cast<double>(r.out_bytes) / secs);
            r.tcp_flags_aggregate = r.protocol == "TCP" ? detail::pick(rng, detail::kFlags) : 0;
            protos.push_back({std::move(r), classes.at(c), 0});
        }
    }
    return protos;
}

/// `spec.flows` records with uniformly drawn class and prototype. flow_id
/// is the record's position. Deterministic for a fixed spec.
inline std::vector<LabeledFlow> synthetic_flows(const ClassSet& classes, const SyntheticSpec& spec) {
    std::mt19937_64 rng(spec.seed);
    auto protos = synthetic_prototypes(classes, spec.prototypes_per_class, rng);
    std::vector<LabeledFlow> out;
    out.reserve(spec.flows);
    std::uniform_int_distribution<std::size_t> which(0, protos.size() - 1);
    for (std::size_t i = 0; i < spec.flows; ++i) {
        LabeledFlow f = protos[which(rng)];
        // Jitter volume and timing; endpoints, port, protocol, and shape stay.
        f.record.in_bytes += detail::uniform(rng, 0, 3);
        f.record.flow_duration_ms += detail::uniform(rng, 0, 2);
        f.flow_id = i;
        out.push_back(std::move(f));
    }
    return out;
}

}  // namespace maids
