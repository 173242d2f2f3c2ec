#pragma once

// Byte-level BPE: trainer, encoder with exact character offsets, decoder.
// Every byte of the input is covered, so round trips are lossless and no
// unknown token is ever produced for plain text.

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "rigopipe/common.hpp"
#include "rigopipe/document.hpp"

namespace rigopipe {

inline const std::vector<std::string> kDefaultSpecials = {"[CLS]", "[SEP]", "[PAD]", "[UNK]",
                                                          "[MASK]"};

// Bytes that print as themselves keep their code point; the rest are lifted
// to 256 and up, in byte order. The map is a bijection into printable space.
inline const std::array<char32_t, 256>& byte_to_unicode() {
    static const std::array<char32_t, 256> table = [] {
        std::array<char32_t, 256> t{};
        auto printable = [](int b) {
            return (b >= 0x21 && b <= 0x7e) || (b >= 0xa1 && b <= 0xac) || (b >= 0xae && b <= 0xff);
        };
        char32_t next = 256;
        for (int b = 0; b < 256; ++b)
            t[static_cast<std::size_t>(b)] = printable(b) ? static_cast<char32_t>(b) : next++;
        return t;
    }();
    return table;
}

inline const std::unordered_map<char32_t, std::uint8_t>& unicode_to_byte() {
    static const std::unordered_map<char32_t, std::uint8_t> inverse = [] {
        std::unordered_map<char32_t, std::uint8_t> m;
        const auto& table = byte_to_unicode();
        for (int b = 0; b < 256; ++b) m[table[static_cast<std::size_t>(b)]] = static_cast<std::uint8_t>(b);
        return m;
    }();
    return inverse;
}

inline std::string byte_unit(std::uint8_t b) {
    std::string out;
    utf8_encode(byte_to_unicode()[b], out);
    return out;
}

struct BpeVocab {
    std::vector<std::string> specials = kDefaultSpecials;
    std::vector<std::pair<std::string, std::string>> merges;
    std::vector<std::string> id_to_token;
    std::unordered_map<std::string, std::uint32_t> token_to_id;

    std::uint32_t vocab_size() const { return static_cast<std::uint32_t>(id_to_token.size()); }
    std::uint32_t cls_id() const { return 0; }
    std::uint32_t sep_id() const { return 1; }
    std::uint32_t pad_id() const { return 2; }
    std::uint32_t unk_id() const { return 3; }
    std::uint32_t mask_id() const { return 4; }
    bool is_special(std::uint32_t id) const { return id < specials.size(); }
};

struct Encoding {
    std::vector<std::uint32_t> ids;
    std::vector<std::string> tokens;
    // character offsets into the original text; a token that splits a
    // multibyte character gets an empty or partial-looking char span, but
    // spans always tile the text in order
    std::vector<std::pair<std::size_t, std::size_t>> offsets;
    // byte offsets; non-special spans concatenate to the original bytes
    std::vector<std::pair<std::size_t, std::size_t>> byte_offsets;
    std::vector<bool> special_mask;

    std::size_t size() const { return ids.size(); }
};

namespace detail {

inline bool is_pretoken_space(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

// Byte spans that tile the text. A single space directly before a word is
// attached to that word; all other whitespace runs stand alone.
inline std::vector<std::pair<std::size_t, std::size_t>> pretoken_spans(const std::string& text) {
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    const std::size_t n = text.size();
    std::size_t i = 0;
    while (i < n) {
        if (is_pretoken_space(text[i])) {
            std::size_t k = i;
            while (k < n && is_pretoken_space(text[k])) ++k;
            if (k < n && text[k - 1] == ' ') {
                if (k - 1 > i) spans.emplace_back(i, k - 1);
                std::size_t e = k;
                while (e < n && !is_pretoken_space(text[e])) ++e;
                spans.emplace_back(k - 1, e);
                i = e;
            } else {
                spans.emplace_back(i, k);
                i = k;
            }
        } else {
            std::size_t e = i;
            while (e < n && !is_pretoken_space(text[e])) ++e;
            spans.emplace_back(i, e);
            i = e;
        }
    }
    return spans;
}

inline std::vector<std::string> word_units(const std::string& word) {
    std::vector<std::string> units;
    units.reserve(word.size());
    for (const char c : word) units.push_back(byte_unit(static_cast<std::uint8_t>(c)));
    return units;
}

inline void apply_merge(std::vector<std::string>& units, const std::string& left,
                        const std::string& right) {
    std::size_t w = 0;
    for (std::size_t r = 0; r < units.size(); ++r) {
        if (r + 1 < units.size() && units[r] == left && units[r + 1] == right) {
            units[w++] = left + right;
            ++r;
        } else {
            if (w != r) units[w] = std::move(units[r]);
            ++w;
        }
    }
    units.resize(w);
}

}  // namespace detail

inline BpeVocab train_bpe(const std::vector<Document>& docs, std::size_t vocab_size,
                          const std::vector<std::string>& specials = kDefaultSpecials,
                          std::size_t threads = 1) {
    if (specials.empty()) throw ConfigError("at least one special token is required");
    if (vocab_size <= 256 + specials.size())
        throw ConfigError("vocab size must exceed the byte alphabet plus specials");

    // word histogram; spans keep attached leading spaces
    const auto partials = parallel_map(
        docs,
        [](const Document& doc) {
            std::unordered_map<std::string, std::size_t> counts;
            for (const auto& [s, e] : detail::pretoken_spans(doc.text))
                counts[doc.text.substr(s, e - s)] += 1;
            return counts;
        },
        static_cast<unsigned>(threads));
    std::unordered_map<std::string, std::size_t> word_counts;
    for (const auto& partial : partials)
        for (const auto& [word, count] : partial) word_counts[word] += count;
    if (word_counts.empty()) throw DataError("empty corpus");

    std::vector<std::pair<std::vector<std::string>, std::size_t>> words;
    words.reserve(word_counts.size());
    {
        // deterministic iteration order for the merge loop
        std::map<std::string, std::size_t> ordered(word_counts.begin(), word_counts.end());
        for (const auto& [word, count] : ordered)
            words.emplace_back(detail::word_units(word), count);
    }

    BpeVocab vocab;
    vocab.specials = specials;
    for (const auto& sp : specials) {
        vocab.token_to_id[sp] = static_cast<std::uint32_t>(vocab.id_to_token.size());
        vocab.id_to_token.push_back(sp);
    }
    for (int b = 0; b < 256; ++b) {
        const std::string unit = byte_unit(static_cast<std::uint8_t>(b));
        vocab.token_to_id[unit] = static_cast<std::uint32_t>(vocab.id_to_token.size());
        vocab.id_to_token.push_back(unit);
    }

    while (vocab.id_to_token.size() < vocab_size) {
        // most frequent adjacent pair; ties go to the smallest (left, right)
        std::map<std::pair<std::string, std::string>, std::size_t> pair_counts;
        for (const auto& [units, count] : words)
            for (std::size_t i = 0; i + 1 < units.size(); ++i)
                pair_counts[{units[i], units[i + 1]}] += count;
        if (pair_counts.empty()) break;
        std::pair<std::string, std::string> best;
        std::size_t best_count = 0;
        for (const auto& [pair, count] : pair_counts) {
            if (count > best_count) {
                best = pair;
                best_count = count;
            }
        }
        for (auto& [units, count] : words) detail::apply_merge(units, best.first, best.second);
        const std::string merged = best.first + best.second;
        vocab.merges.push_back(best);
        vocab.token_to_id[merged] = static_cast<std::uint32_t>(vocab.id_to_token.size());
        vocab.id_to_token.push_back(merged);
    }
    return vocab;
}

inline Encoding encode(const BpeVocab& vocab, const std::string& text) {
    const std::size_t invalid = utf8_find_invalid(text);
    if (invalid != npos)
        throw DataError("invalid UTF-8 at byte " + std::to_string(invalid));

    // rank lookup reproduces in-order merge application within a pre-token
    std::unordered_map<std::string, std::size_t> rank;
    for (std::size_t r = 0; r < vocab.merges.size(); ++r)
        rank.emplace(vocab.merges[r].first + "\x01" + vocab.merges[r].second, r);
    const auto pair_rank = [&](const std::string& a, const std::string& b) {
        const auto it = rank.find(a + "\x01" + b);
        return it == rank.end() ? npos : it->second;
    };

    // char index for every byte boundary; mid-character bytes floor to the
    // character they sit inside
    std::vector<std::size_t> char_at(text.size() + 1, 0);
    {
        std::size_t ci = 0, i = 0;
        while (i < text.size()) {
            const std::size_t start = i;
            utf8_decode(text, i);
            for (std::size_t b = start; b < i; ++b) char_at[b] = ci;
            ++ci;
        }
        char_at[text.size()] = ci;
    }

    Encoding out;
    for (const auto& [span_start, span_end] : detail::pretoken_spans(text)) {
        std::vector<std::string> units;
        std::vector<std::size_t> starts;
        for (std::size_t b = span_start; b < span_end; ++b) {
            units.push_back(byte_unit(static_cast<std::uint8_t>(text[b])));
            starts.push_back(b);
        }
        while (units.size() > 1) {
            std::size_t best_rank = npos;
            for (std::size_t i = 0; i + 1 < units.size(); ++i)
                best_rank = std::min(best_rank, pair_rank(units[i], units[i + 1]));
            if (best_rank == npos) break;
            const auto& [left, right] = vocab.merges[best_rank];
            // merge every occurrence of this pair, left to right
            std::size_t w = 0;
            std::vector<std::size_t> new_starts;
            for (std::size_t r = 0; r < units.size(); ++r) {
                if (r + 1 < units.size() && units[r] == left && units[r + 1] == right) {
                    units[w] = left + right;
                    new_starts.push_back(starts[r]);
                    ++w;
                    ++r;
                } else {
                    if (w != r) units[w] = std::move(units[r]);
                    new_starts.push_back(starts[r]);
                    ++w;
                }
            }
            units.resize(w);
            starts = std::move(new_starts);
        }
        for (std::size_t i = 0; i < units.size(); ++i) {
            const std::size_t byte_start = starts[i];
            const std::size_t byte_end = i + 1 < units.size() ? starts[i + 1] : span_end;
            const auto it = vocab.token_to_id.find(units[i]);
            if (it == vocab.token_to_id.end())
                throw DataError("unit missing from vocabulary: " + units[i]);
            out.ids.push_back(it->second);
            out.tokens.push_back(units[i]);
            out.byte_offsets.emplace_back(byte_start, byte_end);
            out.offsets.emplace_back(char_at[byte_start], char_at[byte_end]);
            out.special_mask.push_back(false);
        }
    }
    return out;
}

inline std::string decode(const BpeVocab& vocab, const std::vector<std::uint32_t>& ids) {
    std::string out;
    const auto& inverse = unicode_to_byte();
    for (const std::uint32_t id : ids) {
        if (id >= vocab.id_to_token.size())
            throw DataError("token id out of range: " + std::to_string(id));
        if (vocab.is_special(id)) continue;
        const std::string& token = vocab.id_to_token[id];
        std::size_t i = 0;
        while (i < token.size()) {
            const char32_t cp = utf8_decode(token, i);
            const auto it = inverse.find(cp);
            if (it == inverse.end()) throw DataError("token contains a non-unit code point");
            out.push_back(static_cast<char>(it->second));
        }
    }
    return out;
}

// merges.txt: one "left right" pair per line, order significant.
// vocab.json: token -> id for specials, byte units, and merged tokens.
inline void save_bpe(const BpeVocab& vocab, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::string merges;
    for (const auto& [left, right] : vocab.merges) merges += left + " " + right + "\n";
    write_file(dir / "merges.txt", merges);
    nlohmann::ordered_json j;
    j["specials"] = vocab.specials;
    nlohmann::ordered_json tokens = nlohmann::ordered_json::object();
    for (std::size_t id = 0; id < vocab.id_to_token.size(); ++id)
        tokens[vocab.id_to_token[id]] = id;
    j["tokens"] = std::move(tokens);
    write_file(dir / "vocab.json", j.dump(2) + "\n");
}

inline BpeVocab load_bpe(const std::filesystem::path& dir) {
    BpeVocab vocab;
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(dir / "vocab.json"));
        vocab.specials = j.at("specials").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed vocab.json: ") + e.what());
    }
    if (vocab.specials.empty()) throw DataError("vocab has no special tokens");

    const std::string merges = read_file(dir / "merges.txt");
    std::size_t start = 0, lineno = 0;
    while (start < merges.size()) {
        const std::size_t end = merges.find('\n', start);
        const std::string line =
            merges.substr(start, end == std::string::npos ? std::string::npos : end - start);
        start = end == std::string::npos ? merges.size() : end + 1;
        ++lineno;
        if (line.empty()) continue;
        const std::size_t space = line.find(' ');
        if (space == std::string::npos || space == 0 || space + 1 >= line.size())
            throw DataError("malformed merge at line " + std::to_string(lineno));
        vocab.merges.emplace_back(line.substr(0, space), line.substr(space + 1));
    }

    // rebuild the dense id tables, then verify against the saved map
    for (const auto& sp : vocab.specials) {
        vocab.token_to_id[sp] = static_cast<std::uint32_t>(vocab.id_to_token.size());
        vocab.id_to_token.push_back(sp);
    }
    for (int b = 0; b < 256; ++b) {
        const std::string unit = byte_unit(static_cast<std::uint8_t>(b));
        vocab.token_to_id[unit] = static_cast<std::uint32_t>(vocab.id_to_token.size());
        vocab.id_to_token.push_back(unit);
    }
    for (const auto& [left, right] : vocab.merges) {
        if (!vocab.token_to_id.count(left) || !vocab.token_to_id.count(right))
            throw DataError("merge references an unknown unit: " + left + " " + right);
        const std::string merged = left + right;
        vocab.token_to_id[merged] = static_cast<std::uint32_t>(vocab.id_to_token.size());
        vocab.id_to_token.push_back(merged);
    }

    const auto& saved = j.at("tokens");
    if (saved.size() != vocab.id_to_token.size())
        throw DataError("vocab.json token count does not match merges.txt");
    for (const auto& [token, id] : saved.items()) {
        const auto it = vocab.token_to_id.find(token);
        if (it == vocab.token_to_id.end() || it->second != id.get<std::uint32_t>())
            throw DataError("vocab.json disagrees with merges.txt on token " + token);
    }
    return vocab;
}

}  // namespace rigopipe
