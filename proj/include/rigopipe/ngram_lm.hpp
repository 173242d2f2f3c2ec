#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "rigopipe/common.hpp"
#include "rigopipe/document.hpp"
#include "rigopipe/textnorm.hpp"

namespace rigopipe {

inline constexpr std::uint32_t kLmBos = 0xffffffffu;  // context-only padding
inline constexpr std::uint32_t kLmUnk = 0xfffffffeu;

/// LM tokenization: lowercase, split on whitespace.
inline std::vector<std::string> lm_tokenize(std::string_view text) {
    return split_whitespace(to_lower(text));
}

namespace detail {

/// n-gram key: ids packed little-endian, 4 bytes each.
inline std::string pack_ids(const std::uint32_t* ids, std::size_t n) {
    std::string key(n * 4, '\0');
    for (std::size_t i = 0; i < n; ++i)
        for (int b = 0; b < 4; ++b)
            key[i * 4 + b] = static_cast<char>((ids[i] >> (8 * b)) & 0xff);
    return key;
}

inline std::vector<std::uint32_t> unpack_ids(const std::string& key) {
    std::vector<std::uint32_t> ids(key.size() / 4);
    for (std::size_t i = 0; i < ids.size(); ++i)
        for (int b = 0; b < 4; ++b)
            ids[i] |= static_cast<std::uint32_t>(static_cast<unsigned char>(key[i * 4 + b]))
                      << (8 * b);
    return ids;
}

}  // namespace detail

/// Interpolated add-k word n-gram model.
///
/// Documents are single token streams padded with n-1 BOS markers that only
/// ever appear as context. Smoothing runs over the closed training vocabulary
/// (V word types, specials excluded), so each order's conditionals sum to 1
/// over the vocabulary; out-of-vocabulary tokens score a fixed probability
/// floor instead of entering the distributions.
struct NGramLm {
    int order = 3;
    double k = 0.1;
    std::vector<double> lambdas;  // per order 1..n, sum 1
    double unk_floor = 1e-10;
    std::vector<std::string> vocab;  // id order
    std::unordered_map<std::string, std::uint32_t> word_ids;
    // index o-1: counts of o-grams whose predicted (last) token is real, and
    // of their length-(o-1) contexts; order 1 has the single empty context
    std::vector<std::unordered_map<std::string, std::uint64_t>> ngram_counts;
    std::vector<std::unordered_map<std::string, std::uint64_t>> context_counts;

    std::uint32_t id_of(const std::string& word) const {
        const auto it = word_ids.find(word);
        return it == word_ids.end() ? kLmUnk : it->second;
    }

    /// P(w | context) for the full window of `order` ids ending at w (BOS pads
    /// included); w must not be a special id.
    double cond_prob(const std::uint32_t* window) const {
        const double v = static_cast<double>(vocab.size());
        double p = 0;
        for (int o = 1; o <= order; ++o) {
            const std::uint32_t* sub = window + (order - o);
            const std::string gram = detail::pack_ids(sub, static_cast<std::size_t>(o));
            const std::string ctx = detail::pack_ids(sub, static_cast<std::size_t>(o - 1));
            const auto& grams = ngram_counts[static_cast<std::size_t>(o - 1)];
            const auto& ctxs = context_counts[static_cast<std::size_t>(o - 1)];
            const auto git = grams.find(gram);
            const double gc = git == grams.end() ? 0.0 : static_cast<double>(git->second);
            const auto cit = ctxs.find(ctx);
            const double cc = cit == ctxs.end() ? 0.0 : static_cast<double>(cit->second);
            p += lambdas[static_cast<std::size_t>(o - 1)] * (gc + k) / (cc + k * v);
        }
        return p;
    }
};

inline NGramLm train_ngram_lm(const std::vector<Document>& docs, int n, double k = 0.1,
                              std::vector<double> lambdas = {}) {
    if (n < 1) throw ConfigError("lm order must be >= 1");
    if (k <= 0) throw ConfigError("lm smoothing k must be > 0");
    if (lambdas.empty()) lambdas.assign(static_cast<std::size_t>(n), 1.0 / n);
    if (lambdas.size() != static_cast<std::size_t>(n))
        throw ConfigError("need one interpolation weight per order");
    double lsum = 0;
    for (double l : lambdas) {
        if (l < 0) throw ConfigError("interpolation weights must be >= 0");
        lsum += l;
    }
    if (std::abs(lsum - 1.0) > 1e-9) throw ConfigError("interpolation weights must sum to 1");

    NGramLm lm;
    lm.order = n;
    lm.k = k;
    lm.lambdas = std::move(lambdas);
    lm.ngram_counts.resize(static_cast<std::size_t>(n));
    lm.context_counts.resize(static_cast<std::size_t>(n));

    std::size_t total_tokens = 0;
    for (const Document& doc : docs) {
        const std::vector<std::string> tokens = lm_tokenize(doc.text);
        if (tokens.empty()) continue;
        std::vector<std::uint32_t> ids(static_cast<std::size_t>(n - 1), kLmBos);
        ids.reserve(ids.size() + tokens.size());
        for (const std::string& tok : tokens) {
            const auto [it, inserted] = lm.word_ids.try_emplace(
                tok, static_cast<std::uint32_t>(lm.vocab.size()));
            if (inserted) lm.vocab.push_back(tok);
            ids.push_back(it->second);
        }
        total_tokens += tokens.size();
        const std::size_t pad = static_cast<std::size_t>(n - 1);
        for (std::size_t t = pad; t < ids.size(); ++t) {
            for (int o = 1; o <= n; ++o) {
                const std::uint32_t* sub = ids.data() + t + 1 - o;
                ++lm.ngram_counts[static_cast<std::size_t>(o - 1)][detail::pack_ids(
                    sub, static_cast<std::size_t>(o))];
                ++lm.context_counts[static_cast<std::size_t>(o - 1)][detail::pack_ids(
                    sub, static_cast<std::size_t>(o - 1))];
            }
        }
    }
    if (total_tokens == 0) throw DataError("empty corpus for lm training");
    return lm;
}

/// exp of the mean negative log probability over the text's tokens.
inline double perplexity(const NGramLm& lm, std::string_view text) {
    const std::vector<std::string> tokens = lm_tokenize(text);
    if (tokens.empty()) throw DataError("cannot score empty text");
    const std::size_t pad = static_cast<std::size_t>(lm.order - 1);
    std::vector<std::uint32_t> ids(pad, kLmBos);
    ids.reserve(pad + tokens.size());
    for (const std::string& tok : tokens) ids.push_back(lm.id_of(tok));

    double neg_log = 0;
    for (std::size_t t = pad; t < ids.size(); ++t) {
        double p;
        if (ids[t] == kLmUnk) {
            p = lm.unk_floor;
        } else {
            p = lm.cond_prob(ids.data() + t + 1 - lm.order);
        }
        neg_log -= std::log(p);
    }
    return std::exp(neg_log / static_cast<double>(tokens.size()));
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::ordered_json ngram_lm_to_json(const NGramLm& lm) {
    nlohmann::ordered_json j;
    j["order"] = lm.order;
    j["k"] = lm.k;
    j["lambdas"] = lm.lambdas;
    j["unk_floor"] = lm.unk_floor;
    j["vocab"] = lm.vocab;
    j["orders"] = nlohmann::ordered_json::array();
    const auto key_str = [](const std::string& packed) {
        std::string out;
        for (std::uint32_t id : detail::unpack_ids(packed)) {
            if (!out.empty()) out += ',';
            out += std::to_string(id);
        }
        return out;
    };
    for (int o = 1; o <= lm.order; ++o) {
        nlohmann::ordered_json jo;
        jo["o"] = o;
        std::map<std::string, std::uint64_t> grams, ctxs;  // sorted for stable files
        for (const auto& [key, c] : lm.ngram_counts[static_cast<std::size_t>(o - 1)])
            grams[key_str(key)] = c;
        for (const auto& [key, c] : lm.context_counts[static_cast<std::size_t>(o - 1)])
            ctxs[key_str(key)] = c;
        jo["ngrams"] = grams;
        jo["contexts"] = ctxs;
        j["orders"].push_back(std::move(jo));
    }
    return j;
}

inline NGramLm ngram_lm_from_json(const nlohmann::json& j) {
    NGramLm lm;
    lm.order = j.at("order").get<int>();
    lm.k = j.at("k").get<double>();
    lm.lambdas = j.at("lambdas").get<std::vector<double>>();
    lm.unk_floor = j.at("unk_floor").get<double>();
    lm.vocab = j.at("vocab").get<std::vector<std::string>>();
    for (std::size_t i = 0; i < lm.vocab.size(); ++i)
        lm.word_ids[lm.vocab[i]] = static_cast<std::uint32_t>(i);
    lm.ngram_counts.resize(static_cast<std::size_t>(lm.order));
    lm.context_counts.resize(static_cast<std::size_t>(lm.order));
    const auto parse_key = [](const std::string& s) {
        std::vector<std::uint32_t> ids;
        std::size_t pos = 0;
        while (pos < s.size()) {
            std::size_t comma = s.find(',', pos);
            if (comma == std::string::npos) comma = s.size();
            ids.push_back(static_cast<std::uint32_t>(std::stoul(s.substr(pos, comma - pos))));
            pos = comma + 1;
        }
        return detail::pack_ids(ids.data(), ids.size());
    };
    for (const auto& jo : j.at("orders")) {
        const int o = jo.at("o").get<int>();
        if (o < 1 || o > lm.order) throw DataError("lm file has an out-of-range order");
        for (const auto& [key, c] : jo.at("ngrams").items())
            lm.ngram_counts[static_cast<std::size_t>(o - 1)][parse_key(key)] =
                c.get<std::uint64_t>();
        for (const auto& [key, c] : jo.at("contexts").items())
            lm.context_counts[static_cast<std::size_t>(o - 1)][parse_key(key)] =
                c.get<std::uint64_t>();
    }
    return lm;
}

inline void save_ngram_lm(const NGramLm& lm, const std::filesystem::path& path) {
    write_file(path, ngram_lm_to_json(lm).dump() + "\n");
}

inline NGramLm load_ngram_lm(const std::filesystem::path& path) {
    try {
        return ngram_lm_from_json(nlohmann::json::parse(read_file(path)));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": malformed lm file: " + e.what());
    }
}

}  // namespace rigopipe
