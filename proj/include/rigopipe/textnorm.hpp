#pragma once

#include <string>
#include <string_view>

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/utypes.h>

#include "rigopipe/common.hpp"

namespace rigopipe {

/// NFC normalization of valid UTF-8.
inline std::string nfc(std::string_view s) {
    UErrorCode status = U_ZERO_ERROR;
    const icu::Normalizer2* norm = icu::Normalizer2::getNFCInstance(status);
    if (U_FAILURE(status)) throw std::runtime_error("icu: NFC instance unavailable");
    std::string out;
    icu::StringByteSink<std::string> sink(&out);
    norm->normalizeUTF8(0, icu::StringPiece(s.data(), static_cast<int>(s.size())), sink,
                        nullptr, status);
    if (U_FAILURE(status)) throw DataError("icu: NFC normalization failed");
    return out;
}

/// Per-code-point Unicode lowercasing. Full casing (e.g. final sigma) is not
/// needed for n-gram statistics, so the simple mapping is fine and keeps the
/// code point count stable.
inline std::string to_lower(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    utf8_for_each(s, [&](char32_t cp) {
        utf8_encode(static_cast<char32_t>(u_tolower(static_cast<UChar32>(cp))), out);
    });
    return out;
}

inline bool is_space_cp(char32_t cp) {
    return u_isUWhiteSpace(static_cast<UChar32>(cp)) != 0;
}

inline bool is_punct_cp(char32_t cp) {
    // P* plus S* so that symbols like "=" and "€" count toward punctuation
    // density in the heuristics.
    const auto cat = static_cast<UCharCategory>(u_charType(static_cast<UChar32>(cp)));
    switch (cat) {
        case U_DASH_PUNCTUATION:
        case U_START_PUNCTUATION:
        case U_END_PUNCTUATION:
        case U_CONNECTOR_PUNCTUATION:
        case U_OTHER_PUNCTUATION:
        case U_INITIAL_PUNCTUATION:
        case U_FINAL_PUNCTUATION:
        case U_MATH_SYMBOL:
        case U_CURRENCY_SYMBOL:
        case U_MODIFIER_SYMBOL:
        case U_OTHER_SYMBOL:
            return true;
        default:
            return false;
    }
}

inline bool is_alpha_cp(char32_t cp) {
    return u_isalpha(static_cast<UChar32>(cp)) != 0;
}

inline bool is_digit_cp(char32_t cp) {
    return u_isdigit(static_cast<UChar32>(cp)) != 0;
}

/// Collapses every run of Unicode whitespace to a single ASCII space and trims
/// the ends.
inline std::string collapse_whitespace(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool pending_space = false;
    bool seen_any = false;
    utf8_for_each(s, [&](char32_t cp) {
        if (is_space_cp(cp)) {
            pending_space = seen_any;
            return;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        utf8_encode(cp, out);
        seen_any = true;
    });
    return out;
}

}  // namespace rigopipe
