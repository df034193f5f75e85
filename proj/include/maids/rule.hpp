#pragma once

#include <string>
#include <string_view>

#include "maids/error.hpp"
#include "maids/labels.hpp"

namespace maids {

inline constexpr std::size_t kMaxRuleChars = 1000;
inline constexpr std::string_view kTruncationMarker = " ...[truncated]";

/// Cuts `text` to at most `limit` bytes, ending with the truncation marker,
/// without splitting a UTF-8 sequence.
inline std::string truncate_rule_text(std::string text, std::size_t limit = kMaxRuleChars) {
    if (text.size() <= limit) return text;
    std::size_t cut = limit - kTruncationMarker.size();
    while (cut > 0 && (static_cast<unsigned char>(text[cut]) & 0xC0) == 0x80) --cut;
    text.resize(cut);
    text += kTruncationMarker;
    return text;
}

/// A human-readable rule induced from one misclassification.
struct RuleText {
    std::string text;
    ClassLabel target_class;   // ground truth y
    ClassLabel confused_with;  // erroneous prediction

    static RuleText make(std::string text, ClassLabel target, ClassLabel confused) {
        if (text.empty()) throw Error(ErrorCode::PreconditionViolation, "rule text must be non-empty");
        return RuleText{truncate_rule_text(std::move(text)), std::move(target), std::move(confused)};
    }
};

}  // namespace maids
