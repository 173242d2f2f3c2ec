#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <set>

#include "rigopipe/ngram_lm.hpp"
#include "rigopipe/ppl_sample.hpp"

using namespace rigopipe;

namespace {

Document doc(const std::string& id, const std::string& text) {
    return Document{id, text, "test", "", {}};
}

std::vector<Document> one_doc(const std::string& text) { return {doc("d0", text)}; }

}  // namespace

TEST_CASE("equal-count unigrams keep their MLE under add-k", "[ngram]") {
    // "a b . a b .": counts 2/2/2, so (2+k)/(6+3k) = 1/3 for any k
    const NGramLm lm = train_ngram_lm(one_doc("a b . a b ."), 1, 0.1);
    REQUIRE(lm.vocab.size() == 3);
    for (std::uint32_t id = 0; id < 3; ++id) {
        CHECK(lm.cond_prob(&id) == Catch::Approx(1.0 / 3.0).epsilon(1e-12));
    }
}

TEST_CASE("training is deterministic", "[ngram]") {
    const auto docs = one_doc("el perro corre por el parque y el gato duerme");
    const NGramLm a = train_ngram_lm(docs, 3, 0.1);
    const NGramLm b = train_ngram_lm(docs, 3, 0.1);
    CHECK(a.vocab == b.vocab);
    for (int o = 0; o < 3; ++o) {
        CHECK(a.ngram_counts[o] == b.ngram_counts[o]);
        CHECK(a.context_counts[o] == b.context_counts[o]);
    }
}

TEST_CASE("bigram conditional matches the hand-computed interpolation", "[ngram]") {
    // corpus "a b", n=2, k=0.1, uniform lambdas, V=2:
    //   P1(b) = (1+0.1)/(2+0.2) = 0.5
    //   P2(b|a) = (1+0.1)/(1+0.2) = 11/12
    //   P(b|a) = 0.5*0.5 + 0.5*11/12 = 0.708333...
    const NGramLm lm = train_ngram_lm(one_doc("a b"), 2, 0.1);
    const std::uint32_t a = lm.id_of("a"), b = lm.id_of("b");
    const double expected = 0.5 * (1.1 / 2.2) + 0.5 * (1.1 / 1.2);
    const std::uint32_t win_ab[2] = {a, b};
    CHECK(lm.cond_prob(win_ab) == Catch::Approx(expected).epsilon(1e-12));
    // P(a|<s>) has the same counts by construction
    const std::uint32_t win_sa[2] = {kLmBos, a};
    CHECK(lm.cond_prob(win_sa) == Catch::Approx(expected).epsilon(1e-12));
    // and the 2-token perplexity is the reciprocal of that shared probability
    CHECK(perplexity(lm, "a b") == Catch::Approx(1.0 / expected).epsilon(1e-12));
}

TEST_CASE("conditionals sum to one over the vocabulary", "[ngram]") {
    const auto docs = std::vector<Document>{
        doc("d0", "la casa verde tiene un jardin grande y la puerta azul"),
        doc("d1", "el jardin de la casa azul es grande"),
        doc("d2", "una puerta verde en un jardin"),
    };
    const NGramLm lm = train_ngram_lm(docs, 3, 0.1);
    const std::size_t v = lm.vocab.size();
    REQUIRE(v >= 10);

    // seen contexts plus synthetic unseen ones
    std::vector<std::array<std::uint32_t, 2>> contexts;
    for (const auto& [key, unused] : lm.context_counts[2]) {
        const auto ids = detail::unpack_ids(key);
        contexts.push_back({ids[0], ids[1]});
        if (contexts.size() >= 80) break;
    }
    for (std::uint32_t i = 0; i < 20; ++i)
        contexts.push_back({i % static_cast<std::uint32_t>(v),
                            (i * 7 + 3) % static_cast<std::uint32_t>(v)});

    for (const auto& ctx : contexts) {
        double sum = 0;
        for (std::uint32_t w = 0; w < v; ++w) {
            const std::uint32_t window[3] = {ctx[0], ctx[1], w};
            sum += lm.cond_prob(window);
        }
        CHECK(sum == Catch::Approx(1.0).margin(1e-9));
    }
}

TEST_CASE("uniform unigram perplexity equals the vocabulary size", "[ngram]") {
    const NGramLm lm = train_ngram_lm(one_doc("uno dos tres cuatro cinco"), 1, 0.1);
    REQUIRE(lm.vocab.size() == 5);
    CHECK(perplexity(lm, "uno dos") == Catch::Approx(5.0).epsilon(1e-9));
    CHECK(perplexity(lm, "cinco cinco cinco") == Catch::Approx(5.0).epsilon(1e-9));
    CHECK(perplexity(lm, "tres") == Catch::Approx(5.0).epsilon(1e-9));
}

TEST_CASE("perplexity is invariant to repeating the text under a unigram model", "[ngram]") {
    const NGramLm lm = train_ngram_lm(one_doc("rojo rojo verde azul azul azul"), 1, 0.1);
    const std::string text = "rojo verde azul";
    CHECK(perplexity(lm, text + " " + text) == Catch::Approx(perplexity(lm, text)).epsilon(1e-12));
}

TEST_CASE("unknown words hit the floor instead of crashing", "[ngram]") {
    const NGramLm lm = train_ngram_lm(one_doc("palabras conocidas solamente"), 1, 0.1);
    const double p = perplexity(lm, "desconocida");
    CHECK(std::isfinite(p));
    CHECK(p == Catch::Approx(1e10));  // exp(-log(1e-10))
}

TEST_CASE("empty input is refused at train and score time", "[ngram]") {
    CHECK_THROWS_AS(train_ngram_lm({}, 3, 0.1), DataError);
    CHECK_THROWS_AS(train_ngram_lm(one_doc("   "), 3, 0.1), DataError);
    const NGramLm lm = train_ngram_lm(one_doc("algo de texto"), 2, 0.1);
    CHECK_THROWS_AS(perplexity(lm, ""), DataError);
    CHECK_THROWS_AS(perplexity(lm, " \t "), DataError);
}

TEST_CASE("lm parameters are validated", "[ngram]") {
    CHECK_THROWS_AS(train_ngram_lm(one_doc("x"), 0, 0.1), ConfigError);
    CHECK_THROWS_AS(train_ngram_lm(one_doc("x"), 2, 0.0), ConfigError);
    CHECK_THROWS_AS(train_ngram_lm(one_doc("x"), 2, 0.1, {0.5, 0.4}), ConfigError);
    CHECK_THROWS_AS(train_ngram_lm(one_doc("x"), 2, 0.1, {1.5, -0.5}), ConfigError);
}

TEST_CASE("lm survives a save/load round trip", "[ngram]") {
    namespace fs = std::filesystem;
    const auto docs = std::vector<Document>{
        doc("d0", "un texto con palabras repetidas y un texto mas"),
        doc("d1", "otro texto con palabras distintas"),
    };
    const NGramLm lm = train_ngram_lm(docs, 3, 0.1);
    const fs::path p = fs::temp_directory_path() / "rigopipe_test_lm.json";
    save_ngram_lm(lm, p);
    const NGramLm loaded = load_ngram_lm(p);
    CHECK(loaded.vocab == lm.vocab);
    const std::string probe = "un texto con palabras nuevas";
    CHECK(perplexity(loaded, probe) == Catch::Approx(perplexity(lm, probe)).epsilon(1e-12));
}

TEST_CASE("lowercasing folds tokens together", "[ngram]") {
    const NGramLm a = train_ngram_lm(one_doc("Hola HOLA hola"), 1, 0.1);
    CHECK(a.vocab == std::vector<std::string>{"hola"});
}

// ---------------------------------------------------------------------------
// sampling

TEST_CASE("gaussian acceptance peaks at the median and is symmetric", "[ngram]") {
    SamplingPolicy p;
    p.q1 = 80;
    p.median = 100;
    p.q3 = 120;
    p.sigma = 15;
    p.scale_c = 1.0;
    CHECK(acceptance_probability(100, p) == 1.0);
    CHECK(acceptance_probability(115, p) == Catch::Approx(std::exp(-0.5)));
    CHECK(acceptance_probability(85, p) == Catch::Approx(acceptance_probability(115, p)));
    CHECK(acceptance_probability(100 + 37, p) == Catch::Approx(acceptance_probability(100 - 37, p)));
    // clamping
    p.scale_c = 5.0;
    CHECK(acceptance_probability(100, p) == 1.0);
    p.scale_c = std::numeric_limits<double>::infinity();
    CHECK(acceptance_probability(1e9, p) == 1.0);
}

TEST_CASE("stepwise acceptance reads the quartile table", "[ngram]") {
    SamplingPolicy p;
    p.mode = SamplingMode::stepwise;
    p.q1 = 80;
    p.median = 100;
    p.q3 = 120;
    p.weights = {0.1, 1.0, 1.0, 0.1};
    p.scale_c = 0.5;
    CHECK(acceptance_probability(70, p) == Catch::Approx(0.05));   // below q1
    CHECK(acceptance_probability(90, p) == Catch::Approx(0.5));    // [q1, median)
    CHECK(acceptance_probability(110, p) == Catch::Approx(0.5));   // [median, q3)
    CHECK(acceptance_probability(500, p) == Catch::Approx(0.05));  // >= q3
}

TEST_CASE("policy invariants are enforced", "[ngram]") {
    SamplingPolicy p;
    p.q1 = 10;
    p.median = 5;  // out of order
    p.q3 = 20;
    CHECK_THROWS_AS(acceptance_probability(1, p), ConfigError);
    SamplingPolicy w;
    w.weights = {0.1, 2.0, 1.0, 0.1};
    CHECK_THROWS_AS(acceptance_probability(1, w), ConfigError);
}

TEST_CASE("quantiles follow linear interpolation and sigma tracks the IQR", "[ngram]") {
    std::vector<double> sample;
    for (int i = 0; i <= 100; ++i) sample.push_back(static_cast<double>(i));
    const SamplingPolicy p = calibrate_policy(sample, SamplingMode::gaussian, 0.5);
    CHECK(p.q1 == Catch::Approx(25.0));
    CHECK(p.median == Catch::Approx(50.0));
    CHECK(p.q3 == Catch::Approx(75.0));
    CHECK(p.sigma == Catch::Approx(50.0 / 1.349));
}

TEST_CASE("calibration hits the target expected acceptance", "[ngram]") {
    // roughly normal perplexities via a sum of uniforms
    std::vector<double> ppls;
    DocRng rng(31, "calibration");
    for (int i = 0; i < 20000; ++i) {
        double s = 0;
        for (int j = 0; j < 12; ++j) s += rng.next_uniform();
        ppls.push_back(100 + 10 * (s - 6));
    }
    for (const auto mode : {SamplingMode::gaussian, SamplingMode::stepwise}) {
        const SamplingPolicy p = calibrate_policy(ppls, mode, 0.6);
        double mean = 0;
        for (double x : ppls) mean += acceptance_probability(x, p);
        mean /= static_cast<double>(ppls.size());
        CHECK(mean == Catch::Approx(0.6).margin(1e-6));
    }
}

TEST_CASE("target fraction one keeps everything", "[ngram]") {
    const SamplingPolicy p = calibrate_policy({1, 2, 3}, SamplingMode::gaussian, 1.0);
    CHECK(std::isinf(p.scale_c));
    CHECK(acceptance_probability(1e12, p) == 1.0);
}

namespace {

std::vector<Document> synthetic_corpus(std::size_t count) {
    std::vector<Document> docs;
    std::vector<std::string> words;
    for (int i = 0; i < 100; ++i) words.push_back("w" + std::to_string(i));
    for (std::size_t i = 0; i < count; ++i) {
        DocRng rng(5, "gen-" + std::to_string(i));
        // varying vocabulary breadth spreads the perplexities out
        const std::size_t breadth = 2 + rng.next_u64() % 98;
        std::string text;
        for (int t = 0; t < 30; ++t) {
            if (t) text += ' ';
            text += words[rng.next_u64() % breadth];
        }
        docs.push_back(doc("syn-" + std::to_string(i), text));
    }
    return docs;
}

}  // namespace

TEST_CASE("sampling stage lands within two points of the target", "[ngram]") {
    const auto docs = synthetic_corpus(10000);
    const NGramLm lm = train_ngram_lm(docs, 3, 0.1);
    const auto result = perplexity_sample_stage(docs, lm, SamplingMode::gaussian, 0.6, 17);
    REQUIRE(result.outcomes.size() == docs.size());
    std::size_t kept = 0;
    for (const auto& o : result.outcomes) kept += o.kept ? 1 : 0;
    const double fraction = static_cast<double>(kept) / static_cast<double>(docs.size());
    CHECK(fraction >= 0.58);
    CHECK(fraction <= 0.62);
}

TEST_CASE("sampling is deterministic and thread-invariant", "[ngram]") {
    const auto docs = synthetic_corpus(500);
    const NGramLm lm = train_ngram_lm(docs, 2, 0.1);
    const auto r1 = perplexity_sample_stage(docs, lm, SamplingMode::gaussian, 0.5, 23, 1);
    const auto r2 = perplexity_sample_stage(docs, lm, SamplingMode::gaussian, 0.5, 23, 8);
    REQUIRE(r1.outcomes.size() == r2.outcomes.size());
    for (std::size_t i = 0; i < r1.outcomes.size(); ++i) {
        CHECK(r1.outcomes[i].kept == r2.outcomes[i].kept);
        CHECK(r1.outcomes[i].doc_id == r2.outcomes[i].doc_id);
    }
    // different seed flips some decisions
    const auto r3 = perplexity_sample_stage(docs, lm, SamplingMode::gaussian, 0.5, 24, 1);
    bool any_diff = false;
    for (std::size_t i = 0; i < r1.outcomes.size(); ++i)
        any_diff |= (r1.outcomes[i].kept != r3.outcomes[i].kept);
    CHECK(any_diff);
}

TEST_CASE("untokenizable documents are rejected per-doc, not fatally", "[ngram]") {
    auto docs = synthetic_corpus(50);
    docs.push_back(doc("blank", "   \t  "));
    const NGramLm lm = train_ngram_lm(docs, 2, 0.1);
    const auto result = perplexity_sample_stage(docs, lm, SamplingMode::gaussian, 1.0, 3);
    REQUIRE(result.outcomes.size() == 51);
    const auto& blank = result.outcomes.back();
    CHECK_FALSE(blank.kept);
    CHECK(blank.reason == "empty_after_tokenization");
    // everything else kept because target is 1.0
    for (std::size_t i = 0; i + 1 < result.outcomes.size(); ++i) CHECK(result.outcomes[i].kept);
}

TEST_CASE("sampling policy json round trip", "[ngram]") {
    SamplingPolicy p;
    p.mode = SamplingMode::stepwise;
    p.q1 = 10;
    p.median = 20;
    p.q3 = 40;
    p.sigma = 22.2;
    p.weights = {0.2, 0.9, 0.8, 0.1};
    p.scale_c = 1.75;
    const SamplingPolicy q = sampling_policy_from_json(sampling_policy_to_json(p));
    CHECK(q.mode == p.mode);
    CHECK(q.q1 == p.q1);
    CHECK(q.weights == p.weights);
    CHECK(q.scale_c == p.scale_c);

    p.scale_c = std::numeric_limits<double>::infinity();
    CHECK(std::isinf(sampling_policy_from_json(sampling_policy_to_json(p)).scale_c));
}
