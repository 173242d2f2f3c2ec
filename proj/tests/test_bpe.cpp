#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <set>

#include "rigopipe/bpe.hpp"

using namespace rigopipe;

namespace {

std::vector<Document> word_corpus(const std::vector<std::pair<std::string, int>>& words) {
    std::vector<Document> docs;
    int n = 0;
    for (const auto& [word, count] : words)
        for (int i = 0; i < count; ++i)
            docs.push_back(Document{"d" + std::to_string(n++), word, "test", "", {}});
    return docs;
}

BpeVocab toy_vocab() {
    // classic corpus: 5 x "low", 2 x "lower"
    return train_bpe(word_corpus({{"low", 5}, {"lower", 2}}), 261 + 4);
}

std::string random_text(DocRng& rng) {
    static const std::vector<std::pair<char32_t, char32_t>> pools = {
        {0x20, 0x7e}, {0xa1, 0x17f}, {0x400, 0x4ff}, {0x4e00, 0x4e7f}, {0x1f600, 0x1f64f}};
    const std::size_t len = rng.next_u64() % 40;
    std::string out;
    for (std::size_t i = 0; i < len; ++i) {
        const auto& [lo, hi] = pools[rng.next_u64() % pools.size()];
        utf8_encode(lo + static_cast<char32_t>(rng.next_u64() % (hi - lo + 1)), out);
    }
    return out;
}

}  // namespace

TEST_CASE("byte surrogate map is a printable bijection", "[bpe]") {
    const auto& table = byte_to_unicode();
    std::set<char32_t> seen(table.begin(), table.end());
    CHECK(seen.size() == 256);
    CHECK(table[static_cast<std::size_t>('A')] == U'A');
    CHECK(table[0x21] == 0x21);
    CHECK(table[0x7e] == 0x7e);
    CHECK(table[0x20] == 0x120);  // space lifts to a printable letter
    CHECK(table[0x00] == 0x100);
    CHECK(table[0xad] == 0x143);  // soft hyphen is the last lifted byte
    for (int b = 0; b < 256; ++b)
        CHECK(unicode_to_byte().at(table[static_cast<std::size_t>(b)]) == b);
    CHECK(byte_unit(0x20) == "Ġ");
}

TEST_CASE("toy corpus merges follow the hand-run pair frequencies", "[bpe]") {
    // (l,o) and (o,w) tie at 7; lexicographic order picks (l,o); then (lo,w)
    // at 7; then (e,r) beats (low,e) on the tie at 2; then (low,er)
    const BpeVocab vocab = toy_vocab();
    const std::vector<std::pair<std::string, std::string>> expected = {
        {"l", "o"}, {"lo", "w"}, {"e", "r"}, {"low", "er"}};
    REQUIRE(vocab.merges == expected);
    CHECK(vocab.vocab_size() == 265);
}

TEST_CASE("a budget of one extra token learns exactly the top pair", "[bpe]") {
    const BpeVocab vocab = train_bpe(word_corpus({{"low", 5}, {"lower", 2}}), 262);
    REQUIRE(vocab.merges.size() == 1);
    CHECK(vocab.merges[0] == std::make_pair(std::string("l"), std::string("o")));
}

TEST_CASE("training is deterministic and serialization is byte-identical", "[bpe]") {
    namespace fs = std::filesystem;
    const auto docs = word_corpus({{"hola", 4}, {"mundo", 3}, {"hondo", 2}});
    const BpeVocab a = train_bpe(docs, 275);
    const BpeVocab b = train_bpe(docs, 275, kDefaultSpecials, 4);
    CHECK(a.merges == b.merges);
    CHECK(a.id_to_token == b.id_to_token);

    const fs::path d1 = fs::temp_directory_path() / "rigopipe_bpe_a";
    const fs::path d2 = fs::temp_directory_path() / "rigopipe_bpe_b";
    save_bpe(a, d1);
    save_bpe(b, d2);
    CHECK(read_file(d1 / "merges.txt") == read_file(d2 / "merges.txt"));
    CHECK(read_file(d1 / "vocab.json") == read_file(d2 / "vocab.json"));
}

TEST_CASE("training rejects bad budgets and empty corpora", "[bpe]") {
    const auto docs = word_corpus({{"low", 1}});
    CHECK_THROWS_AS(train_bpe(docs, 261), ConfigError);
    CHECK_THROWS_AS(train_bpe(docs, 100), ConfigError);
    CHECK_THROWS_AS(train_bpe({}, 300), DataError);
    CHECK_THROWS_AS(train_bpe(word_corpus({{"", 1}}), 300), DataError);
}

TEST_CASE("merge supply can run out before the budget", "[bpe]") {
    const BpeVocab vocab = train_bpe(word_corpus({{"ab", 1}}), 400);
    CHECK(vocab.merges.size() == 1);  // only (a,b) exists
    CHECK(vocab.vocab_size() == 262);
}

TEST_CASE("special ids are fixed and reserved", "[bpe]") {
    const BpeVocab vocab = toy_vocab();
    CHECK(vocab.cls_id() == 0);
    CHECK(vocab.sep_id() == 1);
    CHECK(vocab.pad_id() == 2);
    CHECK(vocab.unk_id() == 3);
    CHECK(vocab.mask_id() == 4);
    CHECK(vocab.id_to_token[0] == "[CLS]");
    CHECK(vocab.is_special(4));
    CHECK_FALSE(vocab.is_special(5));
    CHECK(vocab.token_to_id.at("low") >= 261);
}

TEST_CASE("encoding applies merges within pre-token boundaries", "[bpe]") {
    const BpeVocab vocab = toy_vocab();
    const Encoding enc = encode(vocab, "low lower");
    REQUIRE(enc.tokens == std::vector<std::string>{"low", "Ġ", "lower"});
    CHECK(enc.offsets == std::vector<std::pair<std::size_t, std::size_t>>{{0, 3}, {3, 4}, {4, 9}});
    CHECK(enc.byte_offsets ==
          std::vector<std::pair<std::size_t, std::size_t>>{{0, 3}, {3, 4}, {4, 9}});
    for (const bool s : enc.special_mask) CHECK_FALSE(s);
    CHECK(decode(vocab, enc.ids) == "low lower");
}

TEST_CASE("empty text gives an empty encoding", "[bpe]") {
    const Encoding enc = encode(toy_vocab(), "");
    CHECK(enc.size() == 0);
    CHECK(enc.ids.empty());
}

TEST_CASE("whitespace runs split into standalone and attached pieces", "[bpe]") {
    const BpeVocab vocab = toy_vocab();
    // double space: first space stands alone, second attaches to the word
    const Encoding enc = encode(vocab, "low  low");
    REQUIRE(enc.tokens.size() == 4);
    CHECK(enc.tokens[0] == "low");
    CHECK(enc.tokens[1] == "Ġ");
    CHECK(enc.tokens[2] == "Ġ");
    CHECK(enc.tokens[3] == "low");
    CHECK(enc.byte_offsets[1] == std::make_pair(std::size_t{3}, std::size_t{4}));
    CHECK(enc.byte_offsets[2] == std::make_pair(std::size_t{4}, std::size_t{5}));

    const Encoding tabbed = encode(vocab, "low\tlow");
    REQUIRE(tabbed.tokens.size() == 3);
    CHECK(decode(vocab, tabbed.ids) == "low\tlow");
}

TEST_CASE("encoding a pre-token ignores what follows the boundary", "[bpe]") {
    const BpeVocab vocab = train_bpe(
        word_corpus({{"hola", 4}, {"mundo", 3}, {"hondo", 2}, {"mar", 2}}), 280);
    const Encoding solo = encode(vocab, "hola");
    const Encoding more = encode(vocab, "hola mundo azul");
    REQUIRE(more.tokens.size() >= solo.tokens.size());
    for (std::size_t i = 0; i < solo.tokens.size(); ++i) CHECK(more.tokens[i] == solo.tokens[i]);
}

TEST_CASE("multibyte characters may split but offsets still tile", "[bpe]") {
    const BpeVocab vocab = train_bpe(word_corpus({{"x", 1}}), 300);  // no merges
    REQUIRE(vocab.merges.empty());
    const std::string text = "año";  // n-tilde spans two bytes
    const Encoding enc = encode(vocab, text);
    REQUIRE(enc.size() == 4);
    CHECK(enc.offsets[0] == std::make_pair(std::size_t{0}, std::size_t{1}));
    CHECK(enc.offsets[1] == std::make_pair(std::size_t{1}, std::size_t{1}));  // half a char
    CHECK(enc.offsets[2] == std::make_pair(std::size_t{1}, std::size_t{2}));
    CHECK(enc.offsets[3] == std::make_pair(std::size_t{2}, std::size_t{3}));
    std::string sliced;
    for (const auto& [s, e] : enc.offsets) sliced += utf8_substr(text, s, e);
    CHECK(sliced == text);
    CHECK(decode(vocab, enc.ids) == text);
}

TEST_CASE("round trips and offset tiling hold under fuzzing", "[bpe]") {
    const BpeVocab vocab = train_bpe(
        word_corpus({{"hola", 6}, {"mundo", 5}, {"hondo", 3}, {"mañana", 3}, {"sol", 2}}),
        290);
    DocRng rng(99, "bpe-fuzz");
    for (int trial = 0; trial < 2000; ++trial) {
        const std::string text = random_text(rng);
        const Encoding enc = encode(vocab, text);
        REQUIRE(decode(vocab, enc.ids) == text);
        std::string bytes, chars;
        std::size_t last_byte = 0, last_char = 0;
        for (std::size_t i = 0; i < enc.size(); ++i) {
            REQUIRE(enc.byte_offsets[i].first == last_byte);
            REQUIRE(enc.offsets[i].first == last_char);
            REQUIRE(enc.offsets[i].second >= enc.offsets[i].first);
            last_byte = enc.byte_offsets[i].second;
            last_char = enc.offsets[i].second;
            bytes += text.substr(enc.byte_offsets[i].first,
                                 enc.byte_offsets[i].second - enc.byte_offsets[i].first);
            chars += utf8_substr(text, enc.offsets[i].first, enc.offsets[i].second);
        }
        REQUIRE(bytes == text);
        REQUIRE(chars == text);
        if (!text.empty()) {
            REQUIRE(last_byte == text.size());
            REQUIRE(last_char == utf8_length(text));
        }
    }
}

TEST_CASE("aligned tokens slice back to their own bytes", "[bpe]") {
    const BpeVocab vocab = toy_vocab();
    const std::string text = "lower low lowest";
    const Encoding enc = encode(vocab, text);
    for (std::size_t i = 0; i < enc.size(); ++i) {
        const std::string slice = utf8_substr(text, enc.offsets[i].first, enc.offsets[i].second);
        const std::string bytes = text.substr(enc.byte_offsets[i].first,
                                              enc.byte_offsets[i].second - enc.byte_offsets[i].first);
        CHECK(slice == bytes);  // pure ASCII: char and byte views agree
    }
}

TEST_CASE("encode rejects invalid UTF-8", "[bpe]") {
    CHECK_THROWS_AS(encode(toy_vocab(), "ok\xff"), DataError);
}

TEST_CASE("decode handles specials, empties, and bad ids", "[bpe]") {
    const BpeVocab vocab = toy_vocab();
    CHECK(decode(vocab, {}) == "");
    const std::uint32_t low = vocab.token_to_id.at("low");
    CHECK(decode(vocab, {vocab.cls_id(), low, vocab.sep_id()}) == "low");
    CHECK_THROWS_AS(decode(vocab, {vocab.vocab_size()}), DataError);
}

TEST_CASE("vocab survives a save/load round trip", "[bpe]") {
    namespace fs = std::filesystem;
    const BpeVocab vocab = train_bpe(
        word_corpus({{"hola", 6}, {"mundo", 5}, {"mañana", 3}}), 280);
    const fs::path dir = fs::temp_directory_path() / "rigopipe_bpe_rt";
    save_bpe(vocab, dir);
    const BpeVocab loaded = load_bpe(dir);
    CHECK(loaded.merges == vocab.merges);
    CHECK(loaded.id_to_token == vocab.id_to_token);
    const std::string probe = "hola mundo mañana tarde";
    const Encoding a = encode(vocab, probe);
    const Encoding b = encode(loaded, probe);
    CHECK(a.ids == b.ids);
    CHECK(a.offsets == b.offsets);
}

TEST_CASE("inconsistent vocab files are rejected on load", "[bpe]") {
    namespace fs = std::filesystem;
    const BpeVocab vocab = toy_vocab();
    const fs::path dir = fs::temp_directory_path() / "rigopipe_bpe_bad";
    save_bpe(vocab, dir);
    // drop the first merge; ids shift and the saved map no longer agrees
    write_file(dir / "merges.txt", "lo w\ne r\nlow er\n");
    CHECK_THROWS_AS(load_bpe(dir), DataError);
}
