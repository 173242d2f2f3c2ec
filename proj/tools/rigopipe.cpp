#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "rigopipe/bpe.hpp"
#include "rigopipe/evalstats.hpp"
#include "rigopipe/ngram_lm.hpp"
#include "rigopipe/pipeline.hpp"
#include "rigopipe/qa_align.hpp"
#include "rigopipe/quality.hpp"

using namespace rigopipe;
namespace fs = std::filesystem;

namespace {

std::uint64_t parse_u64(const std::string& s, const std::string& what) {
    char* end = nullptr;
    errno = 0;
    const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
    if (errno != 0 || end == s.c_str() || *end != '\0')
        throw ConfigError(what + " is not a non-negative integer: " + s);
    return v;
}

/// Flag beats RIGOPIPE_SEED beats the built-in or config default.
std::uint64_t resolve_seed(const CLI::Option* opt, std::uint64_t flag_value,
                           std::uint64_t fallback) {
    if (opt != nullptr && opt->count() > 0) return flag_value;
    if (const char* env = std::getenv("RIGOPIPE_SEED")) return parse_u64(env, "RIGOPIPE_SEED");
    return fallback;
}

std::vector<Document> read_corpus(const std::string& path, const std::string& format) {
    return CorpusReader::open(path, parse_corpus_format(format)).read_all();
}

void print_json(const nlohmann::ordered_json& j) { std::printf("%s\n", j.dump(2).c_str()); }

/// Shared corpus-in, corpus-out plumbing for the single-stage subcommands.
struct StageRunOpts {
    std::string input;
    std::string format = "jsonl";
    std::string output;
    std::size_t shard_size = 1000;
    bool no_compress = false;
    unsigned threads = 1;
    std::uint64_t seed = 0;
    CLI::Option* seed_opt = nullptr;
};

void add_stage_run_options(CLI::App& cmd, StageRunOpts& o, bool seeded) {
    cmd.add_option("--input", o.input, "corpus file or shard directory")->required();
    cmd.add_option("--format", o.format, "input format: jsonl or plain");
    cmd.add_option("--output", o.output, "output directory")->required();
    cmd.add_option("--shard-size", o.shard_size, "documents per output shard");
    cmd.add_flag("--no-compress", o.no_compress, "write plain .jsonl shards");
    cmd.add_option("--threads", o.threads, "worker threads");
    if (seeded) o.seed_opt = cmd.add_option("--seed", o.seed, "rng seed");
}

void run_stages(const StageRunOpts& o, std::vector<StageConfig> stages) {
    PipelineConfig c;
    c.seed = resolve_seed(o.seed_opt, o.seed, 0);
    c.input = o.input;
    c.input_format = o.format;
    c.output_dir = o.output;
    c.shard_size = o.shard_size;
    c.compress = !o.no_compress;
    c.threads = o.threads;
    c.stages = std::move(stages);
    print_json(run_report_to_json(run_pipeline(c)));
}

void setup_ingest(CLI::App& app) {
    auto o = std::make_shared<StageRunOpts>();
    auto source = std::make_shared<std::string>();
    CLI::App* cmd = app.add_subcommand(
        "ingest", "convert raw text or jsonl into sharded corpus form");
    add_stage_run_options(*cmd, *o, false);
    cmd->add_option("--source", *source, "source label stamped on every document");
    cmd->callback([o, source] {
        std::vector<Document> docs = read_corpus(o->input, o->format);
        if (!source->empty())
            for (Document& d : docs) d.source = *source;
        const ShardManifest m =
            write_corpus(docs, o->output, o->shard_size, !o->no_compress);
        print_json(manifest_to_json(m));
    });
}

void setup_langid_train(CLI::App& app) {
    struct Opts {
        std::vector<std::string> seeds;
        int order = 3;
        double smoothing = 0.5;
        std::string output;
    };
    auto o = std::make_shared<Opts>();
    CLI::App* cmd =
        app.add_subcommand("langid-train", "train character n-gram language profiles");
    cmd->add_option("--seed-text", o->seeds,
                    "lang=path pair of plain-text seed lines, repeatable")
        ->required();
    cmd->add_option("--order", o->order, "n-gram order");
    cmd->add_option("--smoothing", o->smoothing, "add-k smoothing constant");
    cmd->add_option("--output", o->output, "profiles json path")->required();
    cmd->callback([o] {
        std::map<std::string, std::vector<Document>> corpora;
        for (const std::string& pair : o->seeds) {
            const std::size_t eq = pair.find('=');
            if (eq == std::string::npos || eq == 0 || eq + 1 == pair.size())
                throw ConfigError("--seed-text expects lang=path, got: " + pair);
            corpora[pair.substr(0, eq)] =
                read_corpus(pair.substr(eq + 1), "plain");
        }
        save_profiles(train_profiles(corpora, o->order, o->smoothing), o->output);
        std::printf("wrote %zu profiles to %s\n", corpora.size(), o->output.c_str());
    });
}

void setup_clean(CLI::App& app) {
    struct Opts {
        StageRunOpts run;
        std::string profiles;
        std::string target = "es";
        double threshold = 0.8;
        std::size_t min_chars = 200;
        bool skip_mojibake = false;
        bool skip_length = false;
        bool skip_punctuation = false;
        double max_punct_ratio = 0, min_alpha_ratio = 0;
        std::size_t max_char_run = 0;
        double min_words_per_sentence = 0, min_terminal_line_ratio = 0;
        CLI::Option *punct_opt = nullptr, *alpha_opt = nullptr, *run_opt = nullptr,
                    *words_opt = nullptr, *lines_opt = nullptr;
    };
    auto o = std::make_shared<Opts>();
    CLI::App* cmd = app.add_subcommand(
        "clean", "language, mojibake, length, and punctuation filtering");
    add_stage_run_options(*cmd, o->run, false);
    cmd->add_option("--profiles", o->profiles,
                    "language profiles json; omit to skip language filtering");
    cmd->add_option("--target", o->target, "language to keep");
    cmd->add_option("--threshold", o->threshold, "posterior needed to keep");
    cmd->add_option("--min-chars", o->min_chars, "minimum document length");
    cmd->add_flag("--skip-mojibake", o->skip_mojibake, "skip encoding repair");
    cmd->add_flag("--skip-length", o->skip_length, "skip the length filter");
    cmd->add_flag("--skip-punctuation", o->skip_punctuation, "skip punctuation rules");
    o->punct_opt = cmd->add_option("--max-punct-ratio", o->max_punct_ratio,
                                   "punctuation share of non-space chars");
    o->alpha_opt = cmd->add_option("--min-alpha-ratio", o->min_alpha_ratio,
                                   "letter share of non-space chars");
    o->run_opt = cmd->add_option("--max-char-run", o->max_char_run,
                                 "longest identical-char run");
    o->words_opt = cmd->add_option("--min-words-per-sentence", o->min_words_per_sentence,
                                   "mean sentence length floor");
    o->lines_opt = cmd->add_option("--min-terminal-line-ratio", o->min_terminal_line_ratio,
                                   "share of lines ending in terminal punctuation");
    cmd->callback([o] {
        std::vector<StageConfig> stages;
        auto stage = [](std::string kind, nlohmann::json params) {
            StageConfig s;
            s.kind = kind;
            s.name = std::move(kind);
            s.params = std::move(params);
            return s;
        };
        if (!o->profiles.empty())
            stages.push_back(stage("langid", {{"profiles", o->profiles},
                                              {"target", o->target},
                                              {"threshold", o->threshold}}));
        if (!o->skip_mojibake) stages.push_back(stage("mojibake", nlohmann::json::object()));
        if (!o->skip_length)
            stages.push_back(stage("length", {{"min_chars", o->min_chars}}));
        if (!o->skip_punctuation) {
            nlohmann::json params = nlohmann::json::object();
            if (o->punct_opt->count()) params["max_punct_ratio"] = o->max_punct_ratio;
            if (o->alpha_opt->count()) params["min_alpha_ratio"] = o->min_alpha_ratio;
            if (o->run_opt->count()) params["max_char_run"] = o->max_char_run;
            if (o->words_opt->count())
                params["min_mean_words_per_sentence"] = o->min_words_per_sentence;
            if (o->lines_opt->count())
                params["min_terminal_punct_line_ratio"] = o->min_terminal_line_ratio;
            stages.push_back(stage("punctuation", std::move(params)));
        }
        run_stages(o->run, std::move(stages));
    });
}

void setup_dedup(CLI::App& app) {
    struct Opts {
        StageRunOpts run;
        std::size_t k = 256, bands = 16, rows = 16, shingle_width = 5;
        double threshold = 0.8;
    };
    auto o = std::make_shared<Opts>();
    CLI::App* cmd = app.add_subcommand("dedup", "drop near-duplicate documents");
    add_stage_run_options(*cmd, o->run, true);
    cmd->add_option("--hashes", o->k, "minhash signature length");
    cmd->add_option("--bands", o->bands, "lsh bands");
    cmd->add_option("--rows", o->rows, "rows per band");
    cmd->add_option("--shingle-width", o->shingle_width, "word shingle width");
    cmd->add_option("--threshold", o->threshold, "jaccard estimate needed to merge");
    cmd->callback([o] {
        StageConfig s;
        s.kind = s.name = "dedup";
        s.params = {{"k", o->k},
                    {"bands", o->bands},
                    {"rows", o->rows},
                    {"shingle_width", o->shingle_width},
                    {"threshold", o->threshold}};
        run_stages(o->run, {std::move(s)});
    });
}

void setup_ppl_train(CLI::App& app) {
    struct Opts {
        std::string input;
        std::string format = "jsonl";
        int order = 3;
        double smoothing = 0.1;
        std::string output;
    };
    auto o = std::make_shared<Opts>();
    CLI::App* cmd =
        app.add_subcommand("ppl-train", "train the word n-gram language model");
    cmd->add_option("--input", o->input, "corpus file or shard directory")->required();
    cmd->add_option("--format", o->format, "input format: jsonl or plain");
    cmd->add_option("--order", o->order, "n-gram order");
    cmd->add_option("--smoothing", o->smoothing, "add-k smoothing constant");
    cmd->add_option("--output", o->output, "model json path")->required();
    cmd->callback([o] {
        const NGramLm lm =
            train_ngram_lm(read_corpus(o->input, o->format), o->order, o->smoothing);
        save_ngram_lm(lm, o->output);
        std::printf("trained order-%d model over %zu types\n", o->order, lm.vocab.size());
    });
}

void setup_ppl_sample(CLI::App& app) {
    struct Opts {
        StageRunOpts run;
        std::string lm;
        std::string mode = "gaussian";
        double target = 0.6;
    };
    auto o = std::make_shared<Opts>();
    CLI::App* cmd =
        app.add_subcommand("ppl-sample", "perplexity-calibrated downsampling");
    add_stage_run_options(*cmd, o->run, true);
    cmd->add_option("--lm", o->lm, "word n-gram model json")->required();
    cmd->add_option("--mode", o->mode, "gaussian or stepwise");
    cmd->add_option("--target", o->target, "fraction of documents to keep");
    cmd->callback([o] {
        StageConfig s;
        s.kind = s.name = "ppl_sample";
        s.params = {{"lm", o->lm}, {"mode", o->mode}, {"target_fraction", o->target}};
        run_stages(o->run, {std::move(s)});
    });
}

void setup_quality_train(CLI::App& app) {
    struct Opts {
        std::string labeled;
        std::uint32_t dim = 1u << 20;
        std::size_t epochs = 5;
        double learning_rate = 0.1;
        double l2 = 1e-6;
        std::uint64_t seed = 0;
        CLI::Option* seed_opt = nullptr;
        std::string output;
    };
    auto o = std::make_shared<Opts>();
    CLI::App* cmd = app.add_subcommand(
        "quality-train", "train the logistic-regression quality classifier");
    cmd->add_option("--labeled", o->labeled, "jsonl of {text, label} examples")->required();
    cmd->add_option("--dim", o->dim, "hashed feature space size, a power of two");
    cmd->add_option("--epochs", o->epochs, "sgd epochs");
    cmd->add_option("--learning-rate", o->learning_rate, "sgd step size");
    cmd->add_option("--l2", o->l2, "l2 regularization strength");
    o->seed_opt = cmd->add_option("--seed", o->seed, "shuffle seed");
    cmd->add_option("--output", o->output, "model json path")->required();
    cmd->callback([o] {
        const QualityModel model = train_quality_model(
            load_labeled_texts(o->labeled), o->dim, o->epochs, o->learning_rate, o->l2,
            resolve_seed(o->seed_opt, o->seed, 0));
        save_quality_model(model, o->output);
        nlohmann::ordered_json j;
        j["epoch_loss"] = model.epoch_loss;
        print_json(j);
    });
}

void setup_quality_filter(CLI::App& app) {
    struct Opts {
        StageRunOpts run;
        std::string model;
        double alpha = 9.0;
    };
    auto o = std::make_shared<Opts>();
    CLI::App* cmd =
        app.add_subcommand("quality-filter", "pareto-sampled quality filtering");
    add_stage_run_options(*cmd, o->run, true);
    cmd->add_option("--model", o->model, "quality classifier json")->required();
    cmd->add_option("--alpha", o->alpha, "pareto shape");
    cmd->callback([o] {
        StageConfig s;
        s.kind = s.name = "quality";
        s.params = {{"model", o->model}, {"alpha", o->alpha}};
        run_stages(o->run, {std::move(s)});
    });
}

void setup_tok_train(CLI::App& app) {
    struct Opts {
        std::string input;
        std::string format = "jsonl";
        std::size_t vocab_size = 0;
        unsigned threads = 1;
        std::string output;
    };
    auto o = std::make_shared<Opts>();
    CLI::App* cmd =
        app.add_subcommand("tok-train", "learn byte-level bpe merges from a corpus");
    cmd->add_option("--input", o->input, "corpus file or shard directory")->required();
    cmd->add_option("--format", o->format, "input format: jsonl or plain");
    cmd->add_option("--vocab-size", o->vocab_size, "total vocabulary budget")->required();
    cmd->add_option("--threads", o->threads, "worker threads");
    cmd->add_option("--output", o->output, "directory for merges.txt and vocab.json")
        ->required();
    cmd->callback([o] {
        const BpeVocab vocab = train_bpe(read_corpus(o->input, o->format), o->vocab_size,
                                         kDefaultSpecials, o->threads);
        save_bpe(vocab, o->output);
        std::printf("learned %zu merges, vocabulary size %zu\n", vocab.merges.size(),
                    static_cast<std::size_t>(vocab.vocab_size()));
    });
}

void setup_tok_encode(CLI::App& app) {
    struct Opts {
        std::string vocab_dir;
        std::string text;
        std::string input;
    };
    auto o = std::make_shared<Opts>();
    CLI::App* cmd = app.add_subcommand("tok-encode", "tokenize text with offsets");
    cmd->add_option("--vocab", o->vocab_dir, "tokenizer directory")->required();
    CLI::Option* text_opt = cmd->add_option("--text", o->text, "one text to encode");
    CLI::Option* input_opt =
        cmd->add_option("--input", o->input, "plain file, one text per line");
    text_opt->excludes(input_opt);
    cmd->callback([o] {
        if (o->text.empty() && o->input.empty())
            throw ConfigError("tok-encode needs --text or --input");
        const BpeVocab vocab = load_bpe(o->vocab_dir);
        std::vector<std::string> texts;
        if (!o->text.empty()) texts.push_back(o->text);
        else
            for (const Document& d : read_corpus(o->input, "plain"))
                texts.push_back(d.text);
        for (const std::string& text : texts) {
            const Encoding enc = encode(vocab, text);
            nlohmann::ordered_json j;
            j["text"] = text;
            j["ids"] = enc.ids;
            j["tokens"] = enc.tokens;
            j["offsets"] = enc.offsets;
            j["byte_offsets"] = enc.byte_offsets;
            std::printf("%s\n", j.dump().c_str());
        }
    });
}

void setup_qa_process(CLI::App& app) {
    struct Opts {
        std::string input;
        std::string vocab_dir;
        QaParams params;
        std::string output;
    };
    auto o = std::make_shared<Opts>();
    CLI::App* cmd = app.add_subcommand(
        "qa-process", "build verified qa features with exact answer spans");
    cmd->add_option("--input", o->input, "squad-format json")->required();
    cmd->add_option("--vocab", o->vocab_dir, "tokenizer directory")->required();
    cmd->add_option("--max-len", o->params.max_len, "window length in tokens");
    cmd->add_option("--doc-stride", o->params.doc_stride, "window overlap in tokens");
    cmd->add_option("--max-query-len", o->params.max_query_len, "question token budget");
    cmd->add_option("--threads", o->params.threads, "worker threads");
    cmd->add_option("--output", o->output, "feature jsonl path")->required();
    cmd->callback([o] {
        const BpeVocab vocab = load_bpe(o->vocab_dir);
        const QaProcessResult result =
            process_qa_dataset(load_squad(o->input), vocab, o->params);
        std::string lines;
        for (const QaFeature& f : result.features) lines += feature_to_json_line(f) + "\n";
        write_file(o->output, lines);
        print_json(qa_stats_to_json(result.stats));
    });
}

void setup_eval_stats(CLI::App& app) {
    struct Opts {
        std::string scores;
        double alpha = 0.05;
        double epsilon = 0.001;
        bool lower_is_better = false;
        std::string svg;
        std::string csv;
    };
    auto o = std::make_shared<Opts>();
    CLI::App* cmd = app.add_subcommand(
        "eval-stats", "friedman and nemenyi rank comparison over a score table");
    cmd->add_option("--scores", o->scores, "csv of dataset rows by model columns")
        ->required();
    cmd->add_option("--alpha", o->alpha, "significance level, 0.05 or 0.10");
    cmd->add_option("--epsilon", o->epsilon, "imputation offset below the row minimum");
    cmd->add_flag("--lower-is-better", o->lower_is_better, "rank ascending scores first");
    cmd->add_option("--svg", o->svg, "write a critical-distance diagram here");
    cmd->add_option("--csv", o->csv, "companion csv path for the diagram");
    cmd->callback([o] {
        const ScoreMatrix m = impute_missing(load_score_matrix(o->scores), o->epsilon);
        const RankReport report = nemenyi(m, o->alpha, !o->lower_is_better);
        if (!o->svg.empty()) {
            if (!o->csv.empty()) render_cd_diagram(report, o->svg, o->csv);
            else render_cd_diagram(report, o->svg);
        }
        nlohmann::ordered_json j;
        j["models"] = report.models;
        j["average_ranks"] = report.avg_ranks;
        j["n_datasets"] = report.n_datasets;
        j["alpha"] = report.alpha;
        j["cd"] = report.cd;
        j["friedman"] = friedman_statistic(m, !o->lower_is_better);
        j["significant"] = nlohmann::ordered_json::array();
        for (std::size_t i = 0; i < report.models.size(); ++i)
            for (std::size_t k = i + 1; k < report.models.size(); ++k)
                j["significant"].push_back({{"a", report.models[i]},
                                            {"b", report.models[k]},
                                            {"significant", report.significant[i][k]}});
        j["groups"] = report.groups;
        print_json(j);
    });
}

void setup_run(CLI::App& app) {
    struct Opts {
        std::string config;
        std::uint64_t seed = 0;
        CLI::Option* seed_opt = nullptr;
    };
    auto o = std::make_shared<Opts>();
    CLI::App* cmd = app.add_subcommand("run", "execute a full pipeline config");
    cmd->add_option("--config", o->config, "pipeline config json")->required();
    o->seed_opt = cmd->add_option("--seed", o->seed, "override the config seed");
    cmd->callback([o] {
        PipelineConfig c = load_pipeline_config(o->config);
        c.seed = resolve_seed(o->seed_opt, o->seed, c.seed);
        print_json(run_report_to_json(run_pipeline(c)));
    });
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"corpus curation and evaluation toolkit"};
    app.require_subcommand(1);
    setup_ingest(app);
    setup_langid_train(app);
    setup_clean(app);
    setup_dedup(app);
    setup_ppl_train(app);
    setup_ppl_sample(app);
    setup_quality_train(app);
    setup_quality_filter(app);
    setup_tok_train(app);
    setup_tok_encode(app);
    setup_qa_process(app);
    setup_eval_stats(app);
    setup_run(app);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return 4;
    }
    return 0;
}
