#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "rigopipe/common.hpp"
#include "rigopipe/document.hpp"
#include "rigopipe/textnorm.hpp"

namespace rigopipe {

// ---------------------------------------------------------------------------
// Mojibake repair

/// Marker code points betray UTF-8 bytes that were re-decoded as Latin-1:
/// stray continuation-range points (U+0080..U+00BF) and lead-range points
/// (U+00C2..U+00F4) immediately followed by a continuation-range point.
/// Legitimate Spanish text never produces the second pattern ("Ã±", "Ã©", ...).
inline std::size_t mojibake_marker_count(const std::u32string& cps) {
    std::size_t count = 0;
    for (std::size_t i = 0; i < cps.size(); ++i) {
        const char32_t cp = cps[i];
        if (cp >= 0x80 && cp <= 0xbf) {
            ++count;
        } else if (cp >= 0xc2 && cp <= 0xf4 && i + 1 < cps.size() && cps[i + 1] >= 0x80 &&
                   cps[i + 1] <= 0xbf) {
            ++count;
        }
    }
    return count;
}

/// One reverse transform: encode as Latin-1, decode as UTF-8. Fails (returns
/// false) if any code point exceeds U+00FF or the byte string is not valid
/// UTF-8.
inline bool mojibake_reverse_once(const std::u32string& cps, std::u32string& out) {
    std::string bytes;
    bytes.reserve(cps.size());
    for (char32_t cp : cps) {
        if (cp > 0xff) return false;
        bytes.push_back(static_cast<char>(cp));
    }
    if (!utf8_valid(bytes)) return false;
    out = utf8_decode_all(bytes);
    return true;
}

/// Repairs Latin-1-misdecoded UTF-8 if and only if the reverse transform
/// succeeds and strictly reduces the marker count; otherwise identity.
/// Applied to fixpoint, at most 3 rounds, so doubly corrupted text heals too.
inline std::string fix_mojibake(std::string_view text) {
    std::u32string cps = utf8_decode_all(text);
    std::size_t markers = mojibake_marker_count(cps);
    if (markers == 0) return std::string(text);
    for (int round = 0; round < 3; ++round) {
        std::u32string repaired;
        if (!mojibake_reverse_once(cps, repaired)) break;
        const std::size_t repaired_markers = mojibake_marker_count(repaired);
        if (repaired_markers >= markers) break;
        cps = std::move(repaired);
        markers = repaired_markers;
        if (markers == 0) break;
    }
    return utf8_encode_all(cps);
}

inline FilterOutcome mojibake_stage(const Document& doc, Document& out) {
    out = doc;
    out.text = fix_mojibake(doc.text);
    const bool changed = out.text != doc.text;
    return FilterOutcome::keep(doc, "mojibake", {{"repaired", changed ? 1.0 : 0.0}});
}

// ---------------------------------------------------------------------------
// Length filter

/// Rejects texts shorter than min_chars Unicode scalar values (strict less-than).
inline FilterOutcome length_filter_stage(const Document& doc, std::size_t min_chars = 200) {
    const std::size_t chars = utf8_length(doc.text);
    std::map<std::string, double> scores{{"chars", static_cast<double>(chars)}};
    if (chars < min_chars) return FilterOutcome::reject(doc, "length", "too_short", scores);
    return FilterOutcome::keep(doc, "length", scores);
}

// ---------------------------------------------------------------------------
// Punctuation / quality heuristics

struct PunctuationRules {
    double max_punct_ratio = 0.30;          // punctuation / non-space chars
    double min_alpha_ratio = 0.60;          // letters / non-space chars
    std::size_t max_char_run = 20;          // longest identical-char run
    double min_mean_words_per_sentence = 3.0;
    double min_terminal_punct_line_ratio = 0.50;  // only for docs with >= 3 lines

    void validate() const {
        if (max_punct_ratio < 0 || max_punct_ratio > 1)
            throw ConfigError("max_punct_ratio must be in [0,1]");
        if (min_alpha_ratio < 0 || min_alpha_ratio > 1)
            throw ConfigError("min_alpha_ratio must be in [0,1]");
        if (min_terminal_punct_line_ratio < 0 || min_terminal_punct_line_ratio > 1)
            throw ConfigError("min_terminal_punct_line_ratio must be in [0,1]");
        if (max_char_run < 1) throw ConfigError("max_char_run must be >= 1");
        if (min_mean_words_per_sentence < 0)
            throw ConfigError("min_mean_words_per_sentence must be >= 0");
    }
};

namespace detail {

inline bool is_sentence_terminal(char32_t cp) {
    return cp == U'.' || cp == U'!' || cp == U'?' || cp == U'…';
}

// line counts as terminated when its last non-space char is terminal
// punctuation or a closing quote (the C4-style heuristic)
inline bool is_line_terminal(char32_t cp) {
    return is_sentence_terminal(cp) || cp == U':' || cp == U';' || cp == U'"' ||
           cp == U'”' || cp == U'»';
}

/// Sentences end after a terminal-punctuation run followed by whitespace; a
/// trailing fragment with at least one word counts as a final sentence.
inline void count_sentences(const std::u32string& cps, std::size_t& sentences,
                            std::size_t& words) {
    sentences = 0;
    words = 0;
    bool in_word = false;
    bool words_in_sentence = false;
    bool after_terminal = false;
    for (char32_t cp : cps) {
        if (is_space_cp(cp)) {
            in_word = false;
            if (after_terminal && words_in_sentence) {
                ++sentences;
                words_in_sentence = false;
            }
            after_terminal = false;
            continue;
        }
        if (!in_word) {
            in_word = true;
            ++words;
            words_in_sentence = true;
        }
        after_terminal = is_sentence_terminal(cp);
    }
    if (words_in_sentence) ++sentences;
}

}  // namespace detail

/// Applies every rule; the reason names the first violated rule in declaration
/// order, and all computed ratios land in scores either way.
inline FilterOutcome punctuation_filter_stage(const Document& doc, const PunctuationRules& rules) {
    rules.validate();
    const std::u32string cps = utf8_decode_all(doc.text);

    std::size_t non_space = 0, punct = 0, alpha = 0;
    std::size_t run = 0, max_run = 0;
    char32_t prev = 0;
    bool have_prev = false;
    for (char32_t cp : cps) {
        if (!is_space_cp(cp)) {
            ++non_space;
            if (is_punct_cp(cp)) ++punct;
            if (is_alpha_cp(cp)) ++alpha;
        }
        if (have_prev && cp == prev) {
            ++run;
        } else {
            run = 1;
            prev = cp;
            have_prev = true;
        }
        if (run > max_run) max_run = run;
    }
    const double punct_ratio = non_space ? static_cast<double>(punct) / non_space : 0.0;
    const double alpha_ratio = non_space ? static_cast<double>(alpha) / non_space : 0.0;

    std::size_t sentences = 0, words = 0;
    detail::count_sentences(cps, sentences, words);
    const double mean_words = sentences ? static_cast<double>(words) / sentences : 0.0;

    std::size_t lines = 0, terminated_lines = 0;
    {
        std::size_t start = 0;
        for (std::size_t i = 0; i <= cps.size(); ++i) {
            if (i == cps.size() || cps[i] == U'\n') {
                char32_t last = 0;
                for (std::size_t j = i; j > start;) {
                    --j;
                    if (!is_space_cp(cps[j])) {
                        last = cps[j];
                        break;
                    }
                }
                if (last != 0) {
                    ++lines;
                    if (detail::is_line_terminal(last)) ++terminated_lines;
                }
                start = i + 1;
            }
        }
    }
    const double line_ratio = lines ? static_cast<double>(terminated_lines) / lines : 1.0;

    std::map<std::string, double> scores{
        {"punct_ratio", punct_ratio},
        {"alpha_ratio", alpha_ratio},
        {"max_char_run", static_cast<double>(max_run)},
        {"mean_words_per_sentence", mean_words},
        {"terminal_punct_line_ratio", line_ratio},
        {"lines", static_cast<double>(lines)},
    };

    const char* violated = nullptr;
    if (punct_ratio > rules.max_punct_ratio) violated = "max_punct_ratio";
    else if (alpha_ratio < rules.min_alpha_ratio) violated = "min_alpha_ratio";
    else if (max_run > rules.max_char_run) violated = "max_char_run";
    else if (mean_words < rules.min_mean_words_per_sentence) violated = "min_mean_words_per_sentence";
    else if (lines >= 3 && line_ratio < rules.min_terminal_punct_line_ratio)
        violated = "min_terminal_punct_line_ratio";

    if (violated) return FilterOutcome::reject(doc, "punctuation", violated, scores);
    return FilterOutcome::keep(doc, "punctuation", scores);
}

}  // namespace rigopipe
