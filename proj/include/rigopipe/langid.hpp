#pragma once

#include <cmath>
#include <map>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "rigopipe/common.hpp"
#include "rigopipe/document.hpp"
#include "rigopipe/textnorm.hpp"

namespace rigopipe {

/// Thrown by posterior computation when the input has fewer than the minimum
/// non-whitespace characters to classify.
class InsufficientTextError : public DataError {
public:
    using DataError::DataError;
};

inline constexpr char32_t kLangidBoundary = U'';
inline constexpr std::size_t kLangidMinChars = 20;

/// Normalization applied before n-gram extraction, for training and scoring
/// alike: NFC, lowercase, whitespace runs collapsed to single spaces.
inline std::string langid_normalize(std::string_view text) {
    return collapse_whitespace(to_lower(nfc(text)));
}

/// Add-k smoothed character n-gram model for one language.
///
/// Events are the n-character windows of the padded text whose final (predicted)
/// character is not the boundary symbol; the boundary thus conditions initial
/// windows but is never itself predicted. The alphabet is the set of training
/// characters plus the boundary, so smoothed masses normalize over it.
struct LanguageProfile {
    std::string language;
    int n = 3;
    double smoothing_k = 0.5;
    std::size_t alphabet_size = 0;
    double total_mass = 0;  // training event count
    std::unordered_map<std::u32string, double> logprob;        // seen n-grams
    std::unordered_map<std::u32string, double> context_floor;  // log P(unseen | seen context)
    double default_floor = 0;                                  // log P under an unseen context

    /// Total log-likelihood of the text's event stream under this profile.
    double log_likelihood(std::string_view text) const {
        const std::u32string padded =
            kLangidBoundary + utf8_decode_all(langid_normalize(text)) + kLangidBoundary;
        double ll = 0;
        const std::size_t order = static_cast<std::size_t>(n);
        if (padded.size() < order) return 0;
        for (std::size_t i = 0; i + order <= padded.size(); ++i) {
            if (padded[i + order - 1] == kLangidBoundary) continue;
            const std::u32string gram = padded.substr(i, order);
            if (auto it = logprob.find(gram); it != logprob.end()) {
                ll += it->second;
                continue;
            }
            if (order > 1) {
                const std::u32string ctx = gram.substr(0, order - 1);
                if (auto it = context_floor.find(ctx); it != context_floor.end()) {
                    ll += it->second;
                    continue;
                }
            }
            ll += default_floor;
        }
        return ll;
    }
};

/// Trains one profile per language with add-k smoothing. Each document is
/// padded with one boundary symbol per side before window extraction.
inline std::vector<LanguageProfile> train_profiles(
    const std::map<std::string, std::vector<Document>>& corpora, int n = 3, double k = 0.5) {
    if (n < 1 || n > 5) throw ConfigError("langid order must be in [1,5]");
    if (k <= 0) throw ConfigError("langid smoothing k must be > 0");

    std::vector<LanguageProfile> profiles;
    for (const auto& [language, docs] : corpora) {
        std::unordered_map<std::u32string, std::size_t> gram_counts;
        std::unordered_map<std::u32string, std::size_t> context_counts;
        std::unordered_set<char32_t> alphabet{kLangidBoundary};
        std::size_t events = 0;
        const auto order = static_cast<std::size_t>(n);

        for (const Document& doc : docs) {
            const std::string norm = langid_normalize(doc.text);
            if (norm.empty()) continue;
            const std::u32string padded =
                kLangidBoundary + utf8_decode_all(norm) + kLangidBoundary;
            for (char32_t cp : padded) alphabet.insert(cp);
            if (padded.size() < order) continue;
            for (std::size_t i = 0; i + order <= padded.size(); ++i) {
                if (padded[i + order - 1] == kLangidBoundary) continue;
                ++gram_counts[padded.substr(i, order)];
                if (order > 1) ++context_counts[padded.substr(i, order - 1)];
                ++events;
            }
        }
        if (events == 0)
            throw DataError("empty training corpus for language: " + language);

        LanguageProfile p;
        p.language = language;
        p.n = n;
        p.smoothing_k = k;
        p.alphabet_size = alphabet.size();
        p.total_mass = static_cast<double>(events);
        const double ka = k * static_cast<double>(p.alphabet_size);
        p.default_floor = std::log(k / ka);  // == -log(alphabet_size)

        const auto context_total = [&](const std::u32string& gram) -> double {
            if (order == 1) return static_cast<double>(events);
            return static_cast<double>(context_counts.at(gram.substr(0, order - 1)));
        };
        for (const auto& [gram, count] : gram_counts)
            p.logprob[gram] =
                std::log((static_cast<double>(count) + k) / (context_total(gram) + ka));
        if (order > 1) {
            for (const auto& [ctx, count] : context_counts)
                p.context_floor[ctx] = std::log(k / (static_cast<double>(count) + ka));
        } else {
            // order 1 has a single (empty) context shared by all events
            p.context_floor[std::u32string()] =
                std::log(k / (static_cast<double>(events) + ka));
            p.default_floor = p.context_floor[std::u32string()];
        }
        profiles.push_back(std::move(p));
    }
    return profiles;
}

/// Softmax over per-profile log-likelihoods with uniform priors.
inline std::map<std::string, double> language_posteriors(
    std::string_view text, const std::vector<LanguageProfile>& profiles) {
    if (profiles.empty()) throw ConfigError("no language profiles");
    std::size_t informative = 0;
    utf8_for_each(text, [&](char32_t cp) {
        if (!is_space_cp(cp)) ++informative;
    });
    if (informative < kLangidMinChars)
        throw InsufficientTextError("text has fewer than " + std::to_string(kLangidMinChars) +
                                    " non-whitespace characters");

    std::vector<double> lls;
    lls.reserve(profiles.size());
    double max_ll = -std::numeric_limits<double>::infinity();
    for (const auto& p : profiles) {
        lls.push_back(p.log_likelihood(text));
        max_ll = std::max(max_ll, lls.back());
    }
    double denom = 0;
    for (double ll : lls) denom += std::exp(ll - max_ll);
    std::map<std::string, double> out;
    for (std::size_t i = 0; i < profiles.size(); ++i)
        out[profiles[i].language] = std::exp(lls[i] - max_ll) / denom;
    return out;
}

/// Keeps the document iff the target-language posterior clears the threshold.
inline FilterOutcome language_filter_stage(const Document& doc,
                                           const std::vector<LanguageProfile>& profiles,
                                           const std::string& target, double threshold = 0.8) {
    if (threshold <= 0 || threshold >= 1) throw ConfigError("langid threshold must be in (0,1)");
    bool have_target = false;
    for (const auto& p : profiles) have_target |= (p.language == target);
    if (!have_target) throw ConfigError("no profile for target language: " + target);

    std::map<std::string, double> posteriors;
    try {
        posteriors = language_posteriors(doc.text, profiles);
    } catch (const InsufficientTextError&) {
        return FilterOutcome::reject(doc, "langid", "too_short_for_langid");
    }
    const double p = posteriors.at(target);
    std::map<std::string, double> scores{{"posterior", p}};
    if (p >= threshold) return FilterOutcome::keep(doc, "langid", scores);
    return FilterOutcome::reject(doc, "langid", "low_language_probability", scores);
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::ordered_json profile_to_json(const LanguageProfile& p) {
    nlohmann::ordered_json j;
    j["language"] = p.language;
    j["n"] = p.n;
    j["k"] = p.smoothing_k;
    j["alphabet_size"] = p.alphabet_size;
    j["total_mass"] = p.total_mass;
    j["default_floor"] = p.default_floor;
    // keys sorted for stable files
    std::map<std::string, double> lp, cf;
    for (const auto& [gram, v] : p.logprob) lp[utf8_encode_all(gram)] = v;
    for (const auto& [ctx, v] : p.context_floor) cf[utf8_encode_all(ctx)] = v;
    j["logprob"] = lp;
    j["context_floor"] = cf;
    return j;
}

inline LanguageProfile profile_from_json(const nlohmann::json& j) {
    LanguageProfile p;
    p.language = j.at("language").get<std::string>();
    p.n = j.at("n").get<int>();
    p.smoothing_k = j.at("k").get<double>();
    p.alphabet_size = j.at("alphabet_size").get<std::size_t>();
    p.total_mass = j.at("total_mass").get<double>();
    p.default_floor = j.at("default_floor").get<double>();
    for (const auto& [gram, v] : j.at("logprob").items())
        p.logprob[utf8_decode_all(gram)] = v.get<double>();
    for (const auto& [ctx, v] : j.at("context_floor").items())
        p.context_floor[utf8_decode_all(ctx)] = v.get<double>();
    return p;
}

inline void save_profiles(const std::vector<LanguageProfile>& profiles,
                          const std::filesystem::path& path) {
    nlohmann::ordered_json j;
    j["profiles"] = nlohmann::ordered_json::array();
    for (const auto& p : profiles) j["profiles"].push_back(profile_to_json(p));
    write_file(path, j.dump(2) + "\n");
}

inline std::vector<LanguageProfile> load_profiles(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": malformed profile file: " + e.what());
    }
    std::vector<LanguageProfile> out;
    for (const auto& pj : j.at("profiles")) out.push_back(profile_from_json(pj));
    if (out.empty()) throw DataError(path.string() + ": no profiles");
    return out;
}

}  // namespace rigopipe
