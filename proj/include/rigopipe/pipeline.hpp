#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "rigopipe/cleaners.hpp"
#include "rigopipe/common.hpp"
#include "rigopipe/corpus_io.hpp"
#include "rigopipe/dedup.hpp"
#include "rigopipe/document.hpp"
#include "rigopipe/langid.hpp"
#include "rigopipe/ngram_lm.hpp"
#include "rigopipe/ppl_sample.hpp"
#include "rigopipe/quality.hpp"

namespace rigopipe {

// ---------------------------------------------------------------------------
// Configuration

/// One stage slot in the pipeline. `name` labels log files and error messages
/// and must be unique; it defaults to `kind`, so the same kind can appear
/// twice only under distinct names. An empty `sources` list applies the stage
/// to every document; otherwise documents from other sources pass through
/// untouched and unlogged.
struct StageConfig {
    std::string kind;
    std::string name;
    bool enabled = true;
    std::vector<std::string> sources;
    nlohmann::json params = nlohmann::json::object();

    bool operator==(const StageConfig&) const = default;
};

struct PipelineConfig {
    std::uint64_t seed = 0;
    std::string input;
    std::string input_format = "jsonl";
    std::string output_dir;
    std::size_t shard_size = 1000;
    bool compress = true;
    unsigned threads = 1;
    std::vector<StageConfig> stages;

    bool operator==(const PipelineConfig&) const = default;

    void validate() const;
};

inline const std::map<std::string, std::set<std::string>>& stage_param_keys() {
    static const std::map<std::string, std::set<std::string>> keys = {
        {"langid", {"profiles", "target", "threshold"}},
        {"length", {"min_chars"}},
        {"mojibake", {}},
        {"punctuation",
         {"max_punct_ratio", "min_alpha_ratio", "max_char_run", "min_mean_words_per_sentence",
          "min_terminal_punct_line_ratio"}},
        {"ppl_sample", {"lm", "mode", "target_fraction"}},
        {"dedup", {"k", "bands", "rows", "shingle_width", "threshold"}},
        {"quality", {"model", "alpha"}},
    };
    return keys;
}

inline void PipelineConfig::validate() const {
    if (input.empty()) throw ConfigError("pipeline input path is empty");
    if (output_dir.empty()) throw ConfigError("pipeline output_dir is empty");
    if (shard_size == 0) throw ConfigError("shard_size must be positive");
    if (threads == 0) throw ConfigError("threads must be positive");
    parse_corpus_format(input_format);

    std::set<std::string> names;
    for (const StageConfig& s : stages) {
        const auto it = stage_param_keys().find(s.kind);
        if (it == stage_param_keys().end())
            throw ConfigError("unknown stage kind: " + s.kind);
        if (s.name.empty()) throw ConfigError("stage of kind " + s.kind + " has an empty name");
        if (!names.insert(s.name).second)
            throw ConfigError("duplicate stage name: " + s.name);
        if (!s.params.is_object())
            throw ConfigError("stage " + s.name + ": params must be an object");
        for (const auto& [key, value] : s.params.items())
            if (!it->second.count(key))
                throw ConfigError("stage " + s.name + ": unknown parameter '" + key + "'");
    }
}

/// Filtering order follows the curation recipe: language, then length, then
/// the encoding repair and punctuation heuristics, then perplexity sampling
/// of web-crawl sources, then near-duplicate removal. The quality classifier
/// slot ships disabled.
inline std::vector<StageConfig> default_stage_list() {
    auto stage = [](std::string kind, nlohmann::json params) {
        StageConfig s;
        s.kind = kind;
        s.name = std::move(kind);
        s.params = std::move(params);
        return s;
    };
    std::vector<StageConfig> stages;
    stages.push_back(stage("langid", {{"profiles", ""}, {"target", "es"}, {"threshold", 0.8}}));
    stages.push_back(stage("length", {{"min_chars", 200}}));
    stages.push_back(stage("mojibake", nlohmann::json::object()));
    StageConfig punct = stage("punctuation", nlohmann::json::object());
    punct.sources = {"mc4"};
    stages.push_back(std::move(punct));
    StageConfig ppl = stage("ppl_sample",
                            {{"lm", ""}, {"mode", "gaussian"}, {"target_fraction", 0.6}});
    ppl.sources = {"mc4"};
    stages.push_back(std::move(ppl));
    stages.push_back(stage("dedup", nlohmann::json::object()));
    StageConfig quality = stage("quality", {{"model", ""}, {"alpha", 9.0}});
    quality.enabled = false;
    stages.push_back(std::move(quality));
    return stages;
}

inline PipelineConfig default_pipeline_config() {
    PipelineConfig c;
    c.stages = default_stage_list();
    return c;
}

inline nlohmann::ordered_json pipeline_config_to_json(const PipelineConfig& c) {
    nlohmann::ordered_json j;
    j["seed"] = c.seed;
    j["input"] = c.input;
    j["input_format"] = c.input_format;
    j["output_dir"] = c.output_dir;
    j["shard_size"] = c.shard_size;
    j["compress"] = c.compress;
    j["threads"] = c.threads;
    j["stages"] = nlohmann::ordered_json::array();
    for (const StageConfig& s : c.stages) {
        nlohmann::ordered_json js;
        js["kind"] = s.kind;
        js["name"] = s.name;
        js["enabled"] = s.enabled;
        js["sources"] = s.sources;
        js["params"] = s.params;
        j["stages"].push_back(std::move(js));
    }
    return j;
}

/// A config without a "stages" key gets the default stage list; an explicit
/// empty array means the identity pipeline. Unknown keys are rejected so
/// typos cannot silently disable a stage.
inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("pipeline config must be a JSON object");
    static const std::set<std::string> top_keys = {
        "seed", "input", "input_format", "output_dir", "shard_size",
        "compress", "threads", "stages"};
    static const std::set<std::string> stage_keys = {"kind", "name", "enabled", "sources",
                                                     "params"};
    for (const auto& [key, value] : j.items())
        if (!top_keys.count(key)) throw ConfigError("unknown config key: " + key);

    PipelineConfig c;
    try {
        c.seed = j.value("seed", std::uint64_t{0});
        c.input = j.value("input", std::string{});
        c.input_format = j.value("input_format", std::string{"jsonl"});
        c.output_dir = j.value("output_dir", std::string{});
        c.shard_size = j.value("shard_size", std::size_t{1000});
        c.compress = j.value("compress", true);
        c.threads = j.value("threads", 1u);
        if (!j.contains("stages")) {
            c.stages = default_stage_list();
            return c;
        }
        for (const auto& js : j.at("stages")) {
            if (!js.is_object()) throw ConfigError("stage entries must be JSON objects");
            for (const auto& [key, value] : js.items())
                if (!stage_keys.count(key))
                    throw ConfigError("unknown stage key: " + key);
            StageConfig s;
            s.kind = js.at("kind").get<std::string>();
            s.name = js.value("name", s.kind);
            s.enabled = js.value("enabled", true);
            s.sources = js.value("sources", std::vector<std::string>{});
            s.params = js.value("params", nlohmann::json::object());
            c.stages.push_back(std::move(s));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed pipeline config: ") + e.what());
    }
    return c;
}

inline PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": malformed pipeline config: " + e.what());
    }
    return pipeline_config_from_json(j);
}

// ---------------------------------------------------------------------------
// Run report

struct StageRunStats {
    std::string name;
    std::string kind;
    std::size_t docs_in = 0;
    std::size_t docs_out = 0;
    std::size_t skipped = 0;  // out-of-scope pass-throughs
    std::uint64_t bytes_out = 0;
    double wall_seconds = 0;
    std::map<std::string, std::size_t> rejected_by_reason;
};

struct RunReport {
    std::uint64_t seed = 0;
    unsigned threads = 1;
    std::size_t input_documents = 0;
    std::uint64_t input_bytes = 0;
    std::vector<StageRunStats> stages;
    ShardManifest manifest;
    double wall_seconds = 0;
    nlohmann::ordered_json config_echo;
};

inline nlohmann::ordered_json run_report_to_json(const RunReport& r) {
    nlohmann::ordered_json j;
    j["seed"] = r.seed;
    j["threads"] = r.threads;
    j["input"] = {{"documents", r.input_documents}, {"bytes", r.input_bytes}};
    j["stages"] = nlohmann::ordered_json::array();
    for (const StageRunStats& s : r.stages) {
        nlohmann::ordered_json js;
        js["name"] = s.name;
        js["kind"] = s.kind;
        js["docs_in"] = s.docs_in;
        js["docs_out"] = s.docs_out;
        js["skipped"] = s.skipped;
        js["rejected"] = s.docs_in - s.docs_out;
        js["rejected_by_reason"] = s.rejected_by_reason;
        js["bytes_out"] = s.bytes_out;
        js["wall_seconds"] = s.wall_seconds;
        j["stages"].push_back(std::move(js));
    }
    j["output"] = {{"documents", r.manifest.total_documents},
                   {"bytes", r.manifest.total_bytes},
                   {"shards", r.manifest.shards.size()}};
    j["wall_seconds"] = r.wall_seconds;
    j["config"] = r.config_echo;
    return j;
}

inline std::string outcome_to_json_line(const FilterOutcome& o) {
    nlohmann::ordered_json j;
    j["doc_id"] = o.doc_id;
    j["stage"] = o.stage;
    j["kept"] = o.kept;
    if (!o.kept) j["reason"] = o.reason;
    j["scores"] = o.scores;
    return j.dump();
}

// ---------------------------------------------------------------------------
// Stage execution

namespace detail {

inline bool stage_applies(const StageConfig& s, const Document& d) {
    if (s.sources.empty()) return true;
    return std::find(s.sources.begin(), s.sources.end(), d.source) != s.sources.end();
}

/// Every random stage draws from its own stream so reordering or toggling
/// stages never shifts another stage's decisions.
inline std::uint64_t stage_seed(std::uint64_t global_seed, const std::string& stage_name) {
    std::uint64_t state = global_seed ^ fnv1a64(stage_name);
    return splitmix64(state);
}

template <typename E>
[[noreturn]] inline void rethrow_in_stage(const E& e, const std::string& stage,
                                          const std::string& doc_id = {}) {
    std::string msg = "stage " + stage;
    if (!doc_id.empty()) msg += ", doc " + doc_id;
    throw E(msg + ": " + e.what());
}

inline double param_double(const StageConfig& s, const std::string& key, double fallback) {
    if (!s.params.contains(key)) return fallback;
    try {
        return s.params.at(key).get<double>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("stage " + s.name + ": parameter '" + key + "' must be a number");
    }
}

inline std::size_t param_size(const StageConfig& s, const std::string& key,
                              std::size_t fallback) {
    if (!s.params.contains(key)) return fallback;
    try {
        return s.params.at(key).get<std::size_t>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("stage " + s.name + ": parameter '" + key +
                          "' must be a non-negative integer");
    }
}

inline std::string param_string(const StageConfig& s, const std::string& key,
                                const std::string& fallback) {
    if (!s.params.contains(key)) return fallback;
    try {
        return s.params.at(key).get<std::string>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("stage " + s.name + ": parameter '" + key + "' must be a string");
    }
}

/// Path to the model file a stage needs, empty when the kind needs none.
inline std::string stage_model_path(const StageConfig& s) {
    if (s.kind == "langid") return param_string(s, "profiles", "");
    if (s.kind == "ppl_sample") return param_string(s, "lm", "");
    if (s.kind == "quality") return param_string(s, "model", "");
    return {};
}

inline PunctuationRules punctuation_rules_from_config(const StageConfig& s) {
    PunctuationRules r;
    r.max_punct_ratio = param_double(s, "max_punct_ratio", r.max_punct_ratio);
    r.min_alpha_ratio = param_double(s, "min_alpha_ratio", r.min_alpha_ratio);
    r.max_char_run = param_size(s, "max_char_run", r.max_char_run);
    r.min_mean_words_per_sentence =
        param_double(s, "min_mean_words_per_sentence", r.min_mean_words_per_sentence);
    r.min_terminal_punct_line_ratio =
        param_double(s, "min_terminal_punct_line_ratio", r.min_terminal_punct_line_ratio);
    return r;
}

struct StageOutput {
    std::vector<Document> docs;  // stream leaving the stage, input order
    std::vector<FilterOutcome> outcomes;  // in-scope documents only, input order
    std::size_t skipped = 0;
    nlohmann::ordered_json extra;  // stage-specific artifacts for the log dir
};

/// Runs an independent per-document stage; `fn` returns the outcome and the
/// (possibly rewritten) document.
template <typename Fn>
StageOutput run_per_doc_stage(const std::vector<Document>& docs, const StageConfig& cfg,
                              unsigned threads, Fn fn) {
    struct Cell {
        bool in_scope = false;
        FilterOutcome outcome;
        Document doc;
    };
    std::vector<Cell> cells = parallel_map(
        docs,
        [&](const Document& d) -> Cell {
            if (!stage_applies(cfg, d)) return {false, {}, d};
            try {
                auto [outcome, out_doc] = fn(d);
                return {true, std::move(outcome), std::move(out_doc)};
            } catch (const ConfigError& e) {
                rethrow_in_stage(e, cfg.name, d.id);
            } catch (const DataError& e) {
                rethrow_in_stage(e, cfg.name, d.id);
            }
        },
        threads);

    StageOutput out;
    for (Cell& c : cells) {
        if (!c.in_scope) {
            ++out.skipped;
            out.docs.push_back(std::move(c.doc));
            continue;
        }
        if (c.outcome.kept) out.docs.push_back(std::move(c.doc));
        out.outcomes.push_back(std::move(c.outcome));
    }
    return out;
}

/// Runs a whole-corpus stage on the in-scope subset via `fn`, which returns
/// one outcome per subset document in order, then merges pass-throughs back.
template <typename Fn>
StageOutput run_subset_stage(const std::vector<Document>& docs, const StageConfig& cfg,
                             Fn fn) {
    std::vector<Document> subset;
    std::vector<bool> in_scope(docs.size());
    for (std::size_t i = 0; i < docs.size(); ++i) {
        in_scope[i] = stage_applies(cfg, docs[i]);
        if (in_scope[i]) subset.push_back(docs[i]);
    }

    StageOutput out;
    try {
        out.outcomes = fn(subset, out);
    } catch (const ConfigError& e) {
        rethrow_in_stage(e, cfg.name);
    } catch (const DataError& e) {
        rethrow_in_stage(e, cfg.name);
    }
    if (out.outcomes.size() != subset.size())
        throw ConfigError("stage " + cfg.name + ": outcome count mismatch");

    std::size_t next = 0;
    for (std::size_t i = 0; i < docs.size(); ++i) {
        if (!in_scope[i]) {
            ++out.skipped;
            out.docs.push_back(docs[i]);
            continue;
        }
        if (out.outcomes[next].doc_id != docs[i].id)
            throw ConfigError("stage " + cfg.name + ": outcome order mismatch");
        if (out.outcomes[next].kept) out.docs.push_back(docs[i]);
        ++next;
    }
    return out;
}

inline StageOutput apply_stage(const std::vector<Document>& docs, const StageConfig& cfg,
                               const PipelineConfig& config) {
    const unsigned threads = config.threads;
    if (cfg.kind == "langid") {
        const auto profiles = load_profiles(stage_model_path(cfg));
        const std::string target = param_string(cfg, "target", "es");
        const double threshold = param_double(cfg, "threshold", 0.8);
        return run_per_doc_stage(docs, cfg, threads, [&](const Document& d) {
            return std::pair(language_filter_stage(d, profiles, target, threshold), d);
        });
    }
    if (cfg.kind == "length") {
        const std::size_t min_chars = param_size(cfg, "min_chars", 200);
        return run_per_doc_stage(docs, cfg, threads, [&](const Document& d) {
            return std::pair(length_filter_stage(d, min_chars), d);
        });
    }
    if (cfg.kind == "mojibake") {
        return run_per_doc_stage(docs, cfg, threads, [&](const Document& d) {
            Document repaired;
            FilterOutcome o = mojibake_stage(d, repaired);
            return std::pair(std::move(o), std::move(repaired));
        });
    }
    if (cfg.kind == "punctuation") {
        const PunctuationRules rules = punctuation_rules_from_config(cfg);
        rules.validate();
        return run_per_doc_stage(docs, cfg, threads, [&](const Document& d) {
            return std::pair(punctuation_filter_stage(d, rules), d);
        });
    }
    if (cfg.kind == "ppl_sample") {
        const NGramLm lm = load_ngram_lm(stage_model_path(cfg));
        const SamplingMode mode =
            parse_sampling_mode(param_string(cfg, "mode", "gaussian"));
        const double target = param_double(cfg, "target_fraction", 0.6);
        return run_subset_stage(docs, cfg, [&](const std::vector<Document>& subset,
                                               StageOutput& out) {
            PplSampleResult r = perplexity_sample_stage(subset, lm, mode, target,
                                                        stage_seed(config.seed, cfg.name),
                                                        threads);
            out.extra["policy"] = sampling_policy_to_json(r.policy);
            return std::move(r.outcomes);
        });
    }
    if (cfg.kind == "dedup") {
        DedupParams params;
        params.k = param_size(cfg, "k", params.k);
        params.bands = param_size(cfg, "bands", params.bands);
        params.rows = param_size(cfg, "rows", params.rows);
        params.shingle_width = param_size(cfg, "shingle_width", params.shingle_width);
        params.threshold = param_double(cfg, "threshold", params.threshold);
        params.seed = stage_seed(config.seed, cfg.name);
        params.threads = threads;
        return run_subset_stage(docs, cfg, [&](const std::vector<Document>& subset,
                                               StageOutput& out) {
            const DedupResult r = deduplicate(subset, params);
            std::map<std::string, const DuplicateRecord*> dropped;
            for (const DuplicateRecord& rec : r.duplicates)
                dropped[rec.dropped_id] = &rec;
            nlohmann::ordered_json dup_log = nlohmann::ordered_json::array();
            std::vector<FilterOutcome> outcomes;
            outcomes.reserve(subset.size());
            for (const Document& d : subset) {
                const auto it = dropped.find(d.id);
                if (it == dropped.end()) {
                    outcomes.push_back(FilterOutcome::keep(d, "dedup"));
                    continue;
                }
                outcomes.push_back(FilterOutcome::reject(
                    d, "dedup", "near_duplicate", {{"estimate", it->second->estimate}}));
                dup_log.push_back({{"dropped_id", it->second->dropped_id},
                                   {"representative_id", it->second->representative_id},
                                   {"estimate", it->second->estimate}});
            }
            out.extra["duplicates"] = std::move(dup_log);
            return outcomes;
        });
    }
    if (cfg.kind == "quality") {
        const QualityModel model = load_quality_model(stage_model_path(cfg));
        const double alpha = param_double(cfg, "alpha", 9.0);
        return run_subset_stage(docs, cfg, [&](const std::vector<Document>& subset,
                                               StageOutput&) {
            return quality_filter_stage(subset, model, alpha,
                                        stage_seed(config.seed, cfg.name), threads);
        });
    }
    throw ConfigError("unknown stage kind: " + cfg.kind);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Orchestration

/// Executes the enabled stages in order and writes, under output_dir: the kept
/// corpus as sharded JSONL plus manifest.json, one outcome log per stage under
/// logs/, and run_report.json echoing the config. Rerunning the same config on
/// the same input reproduces the kept-document id set and shard checksums
/// exactly, at any thread count.
inline RunReport run_pipeline(const PipelineConfig& config) {
    namespace fs = std::filesystem;
    const auto t_start = std::chrono::steady_clock::now();
    config.validate();
    for (const StageConfig& s : config.stages) {
        if (!s.enabled) continue;
        const std::string model = detail::stage_model_path(s);
        if (s.kind == "langid" || s.kind == "ppl_sample" || s.kind == "quality") {
            if (model.empty())
                throw ConfigError("stage " + s.name + ": model path is empty");
            if (!fs::exists(model))
                throw ConfigError("stage " + s.name + ": no such model file: " + model);
        }
    }

    std::vector<Document> docs =
        CorpusReader::open(config.input, parse_corpus_format(config.input_format)).read_all();
    std::unordered_set<std::string> seen_ids;
    for (const Document& d : docs)
        if (!seen_ids.insert(d.id).second)
            throw DataError("duplicate document id in input: " + d.id);

    RunReport report;
    report.seed = config.seed;
    report.threads = config.threads;
    report.config_echo = pipeline_config_to_json(config);
    report.input_documents = docs.size();
    for (const Document& d : docs) report.input_bytes += d.text.size();

    const fs::path out_dir = config.output_dir;
    const fs::path log_dir = out_dir / "logs";
    fs::create_directories(log_dir);

    for (const StageConfig& s : config.stages) {
        if (!s.enabled) continue;
        const auto t0 = std::chrono::steady_clock::now();
        detail::StageOutput so = detail::apply_stage(docs, s, config);

        std::string log;
        for (const FilterOutcome& o : so.outcomes) log += outcome_to_json_line(o) + "\n";
        write_file(log_dir / (s.name + ".jsonl"), log);
        if (!so.extra.is_null())
            write_file(log_dir / (s.name + "_artifacts.json"), so.extra.dump(2) + "\n");

        StageRunStats stats;
        stats.name = s.name;
        stats.kind = s.kind;
        stats.docs_in = docs.size();
        stats.docs_out = so.docs.size();
        stats.skipped = so.skipped;
        for (const FilterOutcome& o : so.outcomes)
            if (!o.kept) ++stats.rejected_by_reason[o.reason];
        for (const Document& d : so.docs) stats.bytes_out += d.text.size();
        stats.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        report.stages.push_back(std::move(stats));

        docs = std::move(so.docs);
    }

    ShardWriter writer(out_dir, config.shard_size, config.compress);
    for (const Document& d : docs) writer.add(d);
    report.manifest = writer.finish();
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    write_file(out_dir / "run_report.json", run_report_to_json(report).dump(2) + "\n");
    return report;
}

}  // namespace rigopipe
