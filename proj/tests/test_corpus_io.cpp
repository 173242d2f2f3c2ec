#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "rigopipe/corpus_io.hpp"

using namespace rigopipe;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
    const fs::path p = fs::temp_directory_path() / ("rigopipe_test_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::vector<Document> sample_docs() {
    std::vector<Document> docs;
    docs.push_back({"d1", "hola mundo", "oscar", "http://a.example", {{"lang", "es"}}});
    docs.push_back({"d2", "texto con e\xc3\xb1" "e y acentos \xc3\xa9\xc3\xa1", "mc4", "", {}});
    docs.push_back({"d3", "tercero", "news", "", {{"k1", "v1"}, {"k2", "v2"}}});
    return docs;
}

}  // namespace

TEST_CASE("document json line round trip", "[corpus_io]") {
    for (const auto& doc : sample_docs()) {
        const std::string line = document_to_json_line(doc);
        const Document back = parse_document_line(line, "mem", 1);
        CHECK(back == doc);
    }
}

TEST_CASE("parse errors carry file and line number", "[corpus_io]") {
    CHECK_THROWS_WITH(parse_document_line(R"({"text": "x"})", "f.jsonl", 1),
                      Catch::Matchers::ContainsSubstring("missing field id at line 1"));
    CHECK_THROWS_WITH(parse_document_line(R"({"id": "a"})", "f.jsonl", 7),
                      Catch::Matchers::ContainsSubstring("missing field text at line 7"));
    CHECK_THROWS_WITH(parse_document_line("not json", "f.jsonl", 3),
                      Catch::Matchers::ContainsSubstring("line 3"));
    CHECK_THROWS_WITH(parse_document_line("{\"id\":\"a\",\"text\":\"\xff\"}", "f.jsonl", 2),
                      Catch::Matchers::ContainsSubstring("invalid UTF-8 at byte 18"));
    CHECK_THROWS_AS(parse_document_line(R"({"id": "", "text": "x"})", "f", 1), DataError);
    CHECK_THROWS_AS(parse_document_line(R"({"id": "a", "text": "x", "meta": {"n": 3}})", "f", 1),
                    DataError);
}

TEST_CASE("empty file yields empty stream", "[corpus_io]") {
    const auto dir = temp_dir("empty");
    write_file(dir / "empty.jsonl", "");
    CorpusReader r = CorpusReader::open(dir / "empty.jsonl", CorpusFormat::jsonl);
    CHECK_FALSE(r.next().has_value());
}

TEST_CASE("write then read reproduces documents exactly", "[corpus_io]") {
    const auto dir = temp_dir("roundtrip");
    const auto docs = sample_docs();
    const ShardManifest m = write_corpus(docs, dir, 2, /*compress=*/true);
    CHECK(m.total_documents == 3);
    CHECK(m.shards.size() == 2);
    CHECK(m.shards[0].documents == 2);
    CHECK(m.shards[1].documents == 1);
    CHECK(verify_manifest(dir, m));

    CorpusReader r = CorpusReader::open(dir, CorpusFormat::jsonl);
    const auto back = r.read_all();
    CHECK(back == docs);
}

TEST_CASE("uncompressed shards round trip too", "[corpus_io]") {
    const auto dir = temp_dir("plainshards");
    const auto docs = sample_docs();
    const ShardManifest m = write_corpus(docs, dir, 10, /*compress=*/false);
    CHECK(m.shards.size() == 1);
    CHECK(m.shards[0].path == "shard-00000.jsonl");
    CorpusReader r = CorpusReader::open(dir, CorpusFormat::jsonl);
    CHECK(r.read_all() == docs);
}

TEST_CASE("shard sizes follow shard_size", "[corpus_io]") {
    const auto dir = temp_dir("sizes");
    std::vector<Document> docs;
    for (int i = 0; i < 5; ++i)
        docs.push_back({"d" + std::to_string(i), "text " + std::to_string(i), "s", "", {}});
    const ShardManifest m = write_corpus(docs, dir, 2);
    REQUIRE(m.shards.size() == 3);
    CHECK(m.shards[0].documents == 2);
    CHECK(m.shards[1].documents == 2);
    CHECK(m.shards[2].documents == 1);
    CHECK(m.total_documents == 5);
}

TEST_CASE("zero docs produce a manifest with zero shards", "[corpus_io]") {
    const auto dir = temp_dir("zerodocs");
    const ShardManifest m = write_corpus({}, dir, 2);
    CHECK(m.shards.empty());
    CHECK(m.total_documents == 0);
    const ShardManifest loaded = load_manifest(dir);
    CHECK(loaded.shards.empty());
}

TEST_CASE("same input twice gives byte-identical shards", "[corpus_io]") {
    const auto d1 = temp_dir("det1");
    const auto d2 = temp_dir("det2");
    const auto docs = sample_docs();
    const ShardManifest m1 = write_corpus(docs, d1, 2);
    const ShardManifest m2 = write_corpus(docs, d2, 2);
    REQUIRE(m1.shards.size() == m2.shards.size());
    for (std::size_t i = 0; i < m1.shards.size(); ++i) {
        CHECK(m1.shards[i].checksum == m2.shards[i].checksum);
        CHECK(read_file(d1 / m1.shards[i].path) == read_file(d2 / m2.shards[i].path));
    }
}

TEST_CASE("manifest json round trip", "[corpus_io]") {
    const auto dir = temp_dir("manifest");
    const auto docs = sample_docs();
    const ShardManifest m = write_corpus(docs, dir, 2);
    const ShardManifest loaded = load_manifest(dir);
    CHECK(loaded.total_documents == m.total_documents);
    CHECK(loaded.total_bytes == m.total_bytes);
    CHECK(loaded.checksum_algorithm == "fnv1a-64");
    REQUIRE(loaded.shards.size() == m.shards.size());
    for (std::size_t i = 0; i < m.shards.size(); ++i) {
        CHECK(loaded.shards[i].path == m.shards[i].path);
        CHECK(loaded.shards[i].checksum == m.shards[i].checksum);
    }
}

TEST_CASE("plain format derives ids from basename and line number", "[corpus_io]") {
    const auto dir = temp_dir("plainfmt");
    write_file(dir / "wiki.txt", "primera linea\n\nsegunda linea\n");
    CorpusReader r = CorpusReader::open(dir / "wiki.txt", CorpusFormat::plain);
    const auto docs = r.read_all();
    REQUIRE(docs.size() == 2);
    CHECK(docs[0].id == "wiki.txt#1");
    CHECK(docs[0].text == "primera linea");
    CHECK(docs[1].id == "wiki.txt#3");  // blank line 2 skipped, numbering preserved
    CHECK(docs[1].text == "segunda linea");
}

TEST_CASE("gzip round trip through sink and source", "[corpus_io]") {
    const auto dir = temp_dir("gz");
    const fs::path p = dir / "data.txt.gz";
    {
        GzipSink sink(p);
        sink.write("linea uno\n");
        sink.write("linea dos con \xc3\xb1\n");
        sink.close();
    }
    LineReader r(open_byte_source(p));
    std::string line;
    REQUIRE(r.next_line(line));
    CHECK(line == "linea uno");
    REQUIRE(r.next_line(line));
    CHECK(line == "linea dos con \xc3\xb1");
    CHECK_FALSE(r.next_line(line));
}

TEST_CASE("gzip output is byte-stable across writes", "[corpus_io]") {
    const auto dir = temp_dir("gzdet");
    for (int i = 0; i < 2; ++i) {
        GzipSink sink(dir / ("f" + std::to_string(i) + ".gz"));
        sink.write("payload that should compress identically every time\n");
        sink.close();
    }
    CHECK(read_file(dir / "f0.gz") == read_file(dir / "f1.gz"));
}

TEST_CASE("line reader handles crlf and missing trailing newline", "[corpus_io]") {
    const auto dir = temp_dir("lines");
    write_file(dir / "f.txt", "a\r\nb\nc");
    LineReader r(open_byte_source(dir / "f.txt"));
    std::string line;
    std::vector<std::string> lines;
    while (r.next_line(line)) lines.push_back(line);
    CHECK(lines == std::vector<std::string>{"a", "b", "c"});
}

TEST_CASE("streaming read keeps memory bounded", "[corpus_io]") {
    // 200k small docs written sharded, then streamed one at a time; the reader
    // only ever holds one buffered block, so this both finishes fast and never
    // materializes the corpus.
    const auto dir = temp_dir("stream");
    {
        ShardWriter w(dir, 50000);
        Document d;
        d.source = "synthetic";
        for (int i = 0; i < 200000; ++i) {
            d.id = "doc-" + std::to_string(i);
            d.text = "cuerpo del documento numero " + std::to_string(i);
            w.add(d);
        }
        w.finish();
    }
    CorpusReader r = CorpusReader::open(dir, CorpusFormat::jsonl);
    std::size_t count = 0;
    while (auto doc = r.next()) {
        if (count == 0) CHECK(doc->id == "doc-0");
        ++count;
    }
    CHECK(count == 200000);
}

TEST_CASE("stage_report aggregates per stage and reason", "[corpus_io]") {
    Document a{"a", "", "s", "", {}}, b{"b", "", "s", "", {}};
    std::vector<FilterOutcome> outcomes;
    for (int i = 0; i < 3; ++i) outcomes.push_back(FilterOutcome::keep(a, "length"));
    for (int i = 0; i < 2; ++i)
        outcomes.push_back(FilterOutcome::reject(b, "length", "too_short"));
    outcomes.push_back(FilterOutcome::reject(b, "langid", "low_language_probability"));

    const auto reports = stage_report(outcomes);
    REQUIRE(reports.size() == 2);
    CHECK(reports[0].stage == "length");
    CHECK(reports[0].total == 5);
    CHECK(reports[0].kept == 3);
    CHECK(reports[0].rejected_by_reason.at("too_short") == 2);
    CHECK(reports[1].stage == "langid");
    CHECK(reports[1].kept == 0);
}

TEST_CASE("stage_report of empty stream is empty", "[corpus_io]") {
    CHECK(stage_report({}).empty());
}

TEST_CASE("rejected outcome requires a reason", "[corpus_io]") {
    Document d{"x", "", "s", "", {}};
    CHECK_THROWS_AS(FilterOutcome::reject(d, "stage", ""), ConfigError);
}
