#pragma once

// Extractive-QA feature building with a guarantee: every feature emitted with
// a verified span decodes back to the exact answer text. Alignment never
// trusts a char-to-token table alone; the decoded bytes are the arbiter.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rigopipe/bpe.hpp"
#include "rigopipe/common.hpp"

namespace rigopipe {

struct MissingClsToken : ConfigError {
    using ConfigError::ConfigError;
};

struct QaExample {
    std::string id;
    std::string question;
    std::string context;
    std::string answer_text;
    std::size_t answer_char_start = 0;
};

struct QaFeature {
    std::string example_id;
    std::vector<std::uint32_t> input_ids;
    // token index range of the context segment inside input_ids
    std::size_t context_begin = 0;
    std::size_t context_end = 0;
    // char range of the context window, into the original context
    std::size_t window_char_begin = 0;
    std::size_t window_char_end = 0;
    // answer span in input_ids token positions; CLS (0, 0) when the answer
    // is not inside this window
    std::size_t start_token = 0;
    std::size_t end_token = 0;
    bool verified = false;
    bool query_truncated = false;
};

struct QaParams {
    std::size_t max_len = 384;
    std::size_t doc_stride = 128;
    std::size_t max_query_len = 64;
    std::size_t threads = 1;
};

struct QaStats {
    std::size_t examples = 0;
    std::size_t features = 0;
    std::size_t verified = 0;
    std::size_t excluded = 0;
    std::size_t query_truncated = 0;
    std::map<std::string, std::size_t> reasons;
    std::vector<std::pair<std::string, std::string>> failures;  // example id, reason
};

struct QaProcessResult {
    std::vector<QaFeature> features;
    QaStats stats;
};

// strips the byte-level leading-space artifact and nothing else
inline std::string qa_normalize(const std::string& decoded) {
    if (!decoded.empty() && decoded.front() == ' ') return decoded.substr(1);
    return decoded;
}

namespace detail {

inline void require_cls(const BpeVocab& vocab) {
    if (vocab.specials.empty() || vocab.specials[0] != "[CLS]")
        throw MissingClsToken("tokenizer does not provide a CLS token at id 0");
}

}  // namespace detail

inline bool verify_feature(const QaFeature& f, const BpeVocab& vocab, const QaExample& ex) {
    if (f.start_token == 0 && f.end_token == 0) return true;  // CLS label, no span claim
    if (f.start_token > f.end_token) return false;
    if (f.start_token < f.context_begin || f.end_token >= f.context_end) return false;
    const std::vector<std::uint32_t> span(f.input_ids.begin() + static_cast<std::ptrdiff_t>(f.start_token),
                                          f.input_ids.begin() + static_cast<std::ptrdiff_t>(f.end_token) + 1);
    return qa_normalize(decode(vocab, span)) == ex.answer_text;
}

inline std::string reconstruct_answer(const QaFeature& f, std::size_t start, std::size_t end,
                                      const BpeVocab& vocab) {
    if (start > end) throw ConfigError("span start exceeds end");
    if (start < f.context_begin || end >= f.context_end)
        throw ConfigError("span touches positions outside the context segment");
    const std::vector<std::uint32_t> span(f.input_ids.begin() + static_cast<std::ptrdiff_t>(start),
                                          f.input_ids.begin() + static_cast<std::ptrdiff_t>(end) + 1);
    return qa_normalize(decode(vocab, span));
}

inline std::vector<QaFeature> build_qa_features(const QaExample& ex, const BpeVocab& vocab,
                                                std::size_t max_len = 384,
                                                std::size_t doc_stride = 128,
                                                std::size_t max_query_len = 64) {
    detail::require_cls(vocab);
    if (doc_stride == 0 || doc_stride >= max_len)
        throw ConfigError("doc_stride must be positive and below max_len");

    Encoding question = encode(vocab, ex.question);
    bool truncated = false;
    if (question.ids.size() > max_query_len) {
        question.ids.resize(max_query_len);
        truncated = true;
    }
    const std::size_t q_len = question.ids.size();
    if (max_len < q_len + 4) throw ConfigError("max_len leaves no room for context tokens");
    const std::size_t window_tokens = max_len - q_len - 3;

    const Encoding ctx = encode(vocab, ex.context);
    const std::size_t n = ctx.ids.size();
    if (n == 0) throw DataError("empty context for example " + ex.id);
    if (n > window_tokens && doc_stride >= window_tokens)
        throw ConfigError("doc_stride must be smaller than the context window");

    const std::size_t a_start = ex.answer_char_start;
    const std::size_t a_end = a_start + utf8_length(ex.answer_text);

    std::vector<QaFeature> features;
    std::size_t w_start = 0;
    while (true) {
        const std::size_t w_end = std::min(w_start + window_tokens, n);

        QaFeature f;
        f.example_id = ex.id;
        f.query_truncated = truncated;
        f.input_ids.push_back(vocab.cls_id());
        f.input_ids.insert(f.input_ids.end(), question.ids.begin(), question.ids.end());
        f.input_ids.push_back(vocab.sep_id());
        f.context_begin = f.input_ids.size();
        f.input_ids.insert(f.input_ids.end(), ctx.ids.begin() + static_cast<std::ptrdiff_t>(w_start),
                           ctx.ids.begin() + static_cast<std::ptrdiff_t>(w_end));
        f.context_end = f.input_ids.size();
        f.input_ids.push_back(vocab.sep_id());
        f.window_char_begin = ctx.offsets[w_start].first;
        f.window_char_end = ctx.offsets[w_end - 1].second;

        const bool answer_inside =
            f.window_char_begin <= a_start && a_end <= f.window_char_end && a_end > a_start;
        if (!answer_inside) {
            f.verified = true;  // CLS label is vacuously correct
            features.push_back(std::move(f));
        } else {
            // minimal covering span over window tokens
            std::size_t s_tok = npos, e_tok = npos;
            for (std::size_t i = w_start; i < w_end; ++i) {
                if (s_tok == npos && ctx.offsets[i].second > a_start) s_tok = i;
                if (ctx.offsets[i].first < a_end) e_tok = i;
            }
            bool placed = false;
            if (s_tok != npos && e_tok != npos && s_tok <= e_tok) {
                // bounded repair: nearest candidates first, initial guess is
                // the (0, 0) candidate
                std::vector<std::pair<int, int>> deltas;
                for (int ds = -2; ds <= 2; ++ds)
                    for (int de = -2; de <= 2; ++de) deltas.emplace_back(ds, de);
                std::stable_sort(deltas.begin(), deltas.end(),
                                 [](const auto& a, const auto& b) {
                                     const int ma = std::abs(a.first) + std::abs(a.second);
                                     const int mb = std::abs(b.first) + std::abs(b.second);
                                     return std::tie(ma, a.first, a.second) <
                                            std::tie(mb, b.first, b.second);
                                 });
                for (const auto& [ds, de] : deltas) {
                    const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(s_tok) + ds;
                    const std::ptrdiff_t e = static_cast<std::ptrdiff_t>(e_tok) + de;
                    if (s < static_cast<std::ptrdiff_t>(w_start) ||
                        e >= static_cast<std::ptrdiff_t>(w_end) || s > e)
                        continue;
                    f.start_token = f.context_begin + static_cast<std::size_t>(s) - w_start;
                    f.end_token = f.context_begin + static_cast<std::size_t>(e) - w_start;
                    f.verified = true;
                    if (verify_feature(f, vocab, ex)) {
                        placed = true;
                        break;
                    }
                }
            }
            if (!placed) {
                f.start_token = 0;
                f.end_token = 0;
                f.verified = false;  // span claim failed; excluded downstream
            }
            features.push_back(std::move(f));
        }

        if (w_end >= n) break;
        w_start += window_tokens - doc_stride;
    }
    return features;
}

inline QaProcessResult process_qa_dataset(const std::vector<QaExample>& examples,
                                          const BpeVocab& vocab, const QaParams& params = {}) {
    detail::require_cls(vocab);
    const auto per_example = parallel_map(
        examples,
        [&](const QaExample& ex) {
            return build_qa_features(ex, vocab, params.max_len, params.doc_stride,
                                     params.max_query_len);
        },
        static_cast<unsigned>(params.threads));

    QaProcessResult result;
    result.stats.examples = examples.size();
    for (std::size_t i = 0; i < examples.size(); ++i) {
        bool any_window_had_answer = false;
        bool any_verified_span = false;
        bool truncated = false;
        for (const QaFeature& f : per_example[i]) {
            truncated |= f.query_truncated;
            const bool has_span = f.start_token != 0 || f.end_token != 0;
            if (has_span || f.verified) {
                if (has_span) {
                    any_window_had_answer = true;
                    any_verified_span = true;
                    ++result.stats.verified;
                }
                result.stats.features += 1;
                result.features.push_back(f);
            } else {
                any_window_had_answer = true;
                ++result.stats.excluded;
                ++result.stats.reasons["span_verification_failed"];
            }
        }
        if (truncated) ++result.stats.query_truncated;
        if (!any_verified_span) {
            const std::string reason = any_window_had_answer ? "span_verification_failed"
                                                             : "answer_outside_all_windows";
            if (!any_window_had_answer) ++result.stats.reasons[reason];
            result.stats.failures.emplace_back(examples[i].id, reason);
        }
    }
    return result;
}

inline std::vector<QaExample> parse_squad(const std::string& content) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(content);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed dataset json: ") + e.what());
    }
    std::vector<QaExample> examples;
    try {
        for (const auto& article : j.at("data")) {
            for (const auto& paragraph : article.at("paragraphs")) {
                const std::string context = paragraph.at("context").get<std::string>();
                for (const auto& qa : paragraph.at("qas")) {
                    QaExample ex;
                    ex.id = qa.at("id").get<std::string>();
                    ex.question = qa.at("question").get<std::string>();
                    ex.context = context;
                    const auto& answers = qa.at("answers");
                    if (answers.empty()) throw DataError("example " + ex.id + " has no answers");
                    ex.answer_text = answers[0].at("text").get<std::string>();
                    ex.answer_char_start = answers[0].at("answer_start").get<std::size_t>();
                    if (ex.answer_text.empty())
                        throw DataError("example " + ex.id + " has an empty answer");
                    const std::size_t len = utf8_length(ex.answer_text);
                    if (utf8_substr(ex.context, ex.answer_char_start,
                                    ex.answer_char_start + len) != ex.answer_text)
                        throw DataError("answer does not match context for example " + ex.id);
                    examples.push_back(std::move(ex));
                }
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed dataset json: ") + e.what());
    }
    return examples;
}

inline std::vector<QaExample> load_squad(const std::filesystem::path& path) {
    return parse_squad(read_file(path));
}

inline std::string feature_to_json_line(const QaFeature& f) {
    nlohmann::ordered_json j;
    j["example_id"] = f.example_id;
    j["input_ids"] = f.input_ids;
    j["context_begin"] = f.context_begin;
    j["context_end"] = f.context_end;
    j["window_char_begin"] = f.window_char_begin;
    j["window_char_end"] = f.window_char_end;
    j["start_token"] = f.start_token;
    j["end_token"] = f.end_token;
    j["verified"] = f.verified;
    j["query_truncated"] = f.query_truncated;
    return j.dump();
}

inline nlohmann::ordered_json qa_stats_to_json(const QaStats& stats) {
    nlohmann::ordered_json j;
    j["examples"] = stats.examples;
    j["features"] = stats.features;
    j["verified"] = stats.verified;
    j["excluded"] = stats.excluded;
    j["query_truncated"] = stats.query_truncated;
    j["reasons"] = stats.reasons;
    nlohmann::ordered_json failures = nlohmann::json::array();
    for (const auto& [id, reason] : stats.failures)
        failures.push_back({{"example_id", id}, {"reason", reason}});
    j["failures"] = std::move(failures);
    return j;
}

}  // namespace rigopipe
