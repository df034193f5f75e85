#pragma once

#include <algorithm>
#include <cctype>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "maids/error.hpp"

namespace maids {

namespace detail {

inline std::string_view trim(std::string_view s) {
    auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

inline std::string to_lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

inline bool iequals(std::string_view a, std::string_view b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (std::tolower(static_cast<unsigned char>(a[i])) != std::tolower(static_cast<unsigned char>(b[i])))
            return false;
    }
    return true;
}

}  // namespace detail

/// A traffic class. Members of the configured class set carry their
/// canonical spelling; anything else is the Unknown sentinel holding the
/// literal text it was built from.
class ClassLabel {
public:
    ClassLabel() : name_("UNKNOWN"), known_(false) {}

    static ClassLabel known(std::string canonical) { return ClassLabel(std::move(canonical), true); }
    static ClassLabel unknown(std::string text) { return ClassLabel(std::move(text), false); }

    const std::string& name() const noexcept { return name_; }
    bool is_known() const noexcept { return known_; }
    bool is_unknown() const noexcept { return !known_; }

    /// Case-insensitive on the canonical name. Unknown labels never equal a
    /// known label, even if the text matches.
    friend bool operator==(const ClassLabel& a, const ClassLabel& b) {
        return a.known_ == b.known_ && detail::iequals(a.name_, b.name_);
    }

private:
    ClassLabel(std::string name, bool known) : name_(std::move(name)), known_(known) {}

    std::string name_;
    bool known_;
};

/// Ordered set of target classes. Order matters: it fixes confusion-matrix
/// layout and parse tie-breaks.
class ClassSet {
public:
    ClassSet() = default;
    explicit ClassSet(std::vector<std::string> names) {
        for (auto& n : names) {
            auto t = std::string(detail::trim(n));
            if (t.empty()) throw Error(ErrorCode::InvalidConfig, "empty class name");
            if (index_of(t)) throw Error(ErrorCode::InvalidConfig, "duplicate class name: " + t);
            names_.push_back(std::move(t));
        }
    }

    static ClassSet bot_iot() { return ClassSet({"Benign", "DDoS", "DoS", "Reconnaissance"}); }
    static ClassSet ton_iot() {
        return ClassSet({"Benign", "Scanning", "DDoS", "Backdoor", "DoS", "Injection", "Password", "XSS", "MITM"});
    }

    std::size_t size() const noexcept { return names_.size(); }
    bool empty() const noexcept { return names_.empty(); }
    const std::vector<std::string>& names() const noexcept { return names_; }
    ClassLabel at(std::size_t i) const { return ClassLabel::known(names_.at(i)); }

    std::optional<std::size_t> index_of(std::string_view name) const {
        auto t = detail::trim(name);
        for (std::size_t i = 0; i < names_.size(); ++i)
            if (detail::iequals(names_[i], t)) return i;
        return std::nullopt;
    }

    std::optional<std::size_t> index_of(const ClassLabel& label) const {
        if (label.is_unknown()) return std::nullopt;
        return index_of(label.name());
    }

    bool contains(const ClassLabel& label) const { return index_of(label).has_value(); }

    /// Trims and matches case-insensitively; off-schema text becomes Unknown(text).
    ClassLabel canonicalize(std::string_view text) const {
        if (auto i = index_of(text)) return at(*i);
        return ClassLabel::unknown(std::string(detail::trim(text)));
    }

private:
    std::vector<std::string> names_;
};

}  // namespace maids
