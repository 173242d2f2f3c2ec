#include <catch2/catch_amalgamated.hpp>

#include "rigopipe/common.hpp"
#include "rigopipe/textnorm.hpp"

using namespace rigopipe;

TEST_CASE("fnv1a64 matches reference vectors", "[common]") {
    // Reference values from the published FNV test suite.
    CHECK(fnv1a64("") == 0xcbf29ce484222325ull);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cull);
    CHECK(fnv1a64("foobar") == 0x85944171f73967e8ull);
}

TEST_CASE("incremental fnv1a64 equals one-shot", "[common]") {
    Fnv1a64 inc;
    inc.update("hello ");
    inc.update("world");
    CHECK(inc.digest() == fnv1a64("hello world"));
}

TEST_CASE("hex64 round trip", "[common]") {
    CHECK(format_hex64(0) == "0000000000000000");
    CHECK(format_hex64(0xdeadbeef12345678ull) == "deadbeef12345678");
    CHECK(parse_hex64("deadbeef12345678") == 0xdeadbeef12345678ull);
    CHECK(parse_hex64(format_hex64(fnv1a64("x"))) == fnv1a64("x"));
}

TEST_CASE("DocRng is deterministic per key and independent across keys", "[common]") {
    DocRng a1(42, "doc-1"), a2(42, "doc-1"), b(42, "doc-2"), c(7, "doc-1");
    std::vector<std::uint64_t> s1, s2;
    for (int i = 0; i < 16; ++i) {
        s1.push_back(a1.next_u64());
        s2.push_back(a2.next_u64());
    }
    CHECK(s1 == s2);
    CHECK(b.next_u64() != s1[0]);
    CHECK(c.next_u64() != s1[0]);
}

TEST_CASE("DocRng uniforms live in [0,1)", "[common]") {
    DocRng rng(123, "u");
    for (int i = 0; i < 1000; ++i) {
        const double u = rng.next_uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
}

TEST_CASE("utf8 validation finds the first bad byte", "[common]") {
    CHECK(utf8_find_invalid("plain ascii") == npos);
    CHECK(utf8_find_invalid("a\xc3\xb1o") == npos);      // año
    CHECK(utf8_find_invalid("\xe2\x82\xac") == npos);    // euro sign
    CHECK(utf8_find_invalid("\xf0\x9f\x98\x80") == npos);// emoji
    CHECK(utf8_find_invalid("ab\x80") == 2);             // stray continuation
    CHECK(utf8_find_invalid("\xc3") == 0);               // truncated
    CHECK(utf8_find_invalid("\xc0\xaf") == 0);           // overlong '/'
    CHECK(utf8_find_invalid("\xed\xa0\x80") == 0);       // surrogate half
    CHECK(utf8_find_invalid("\xf4\x90\x80\x80") == 0);   // > U+10FFFF
}

TEST_CASE("utf8 decode/encode round trip", "[common]") {
    const std::string s = "a\xc3\xb1o \xe2\x82\xac \xf0\x9f\x98\x80";
    REQUIRE(utf8_valid(s));
    CHECK(utf8_encode_all(utf8_decode_all(s)) == s);
    CHECK(utf8_length(s) == 7);
}

TEST_CASE("utf8_substr slices by code point", "[common]") {
    const std::string s = "a\xc3\xb1o";  // a ñ o
    CHECK(utf8_substr(s, 0, 1) == "a");
    CHECK(utf8_substr(s, 1, 2) == "\xc3\xb1");
    CHECK(utf8_substr(s, 0, 3) == s);
    CHECK(utf8_substr(s, 2, 2) == "");
    CHECK(utf8_substr(s, 3, 10) == "");
}

TEST_CASE("split_whitespace", "[common]") {
    CHECK(split_whitespace("  a  b\tc\n") == std::vector<std::string>{"a", "b", "c"});
    CHECK(split_whitespace("").empty());
    CHECK(split_whitespace(" \t\n").empty());
}

TEST_CASE("nfc composes and is idempotent", "[common]") {
    const std::string decomposed = "n\xcc\x83";  // n + combining tilde
    const std::string composed = "\xc3\xb1";     // ñ
    CHECK(nfc(decomposed) == composed);
    CHECK(nfc(composed) == composed);
    CHECK(nfc("plain") == "plain");
}

TEST_CASE("to_lower handles non-ascii", "[common]") {
    CHECK(to_lower("HoLA") == "hola");
    CHECK(to_lower("\xc3\x91") == "\xc3\xb1");  // Ñ -> ñ
    CHECK(to_lower("\xc3\x89") == "\xc3\xa9");  // É -> é
}

TEST_CASE("char class predicates", "[common]") {
    CHECK(is_punct_cp(U'.'));
    CHECK(is_punct_cp(U'!'));
    CHECK(is_punct_cp(U'='));
    CHECK(is_punct_cp(U'€'));  // €
    CHECK_FALSE(is_punct_cp(U'a'));
    CHECK_FALSE(is_punct_cp(U'5'));
    CHECK(is_alpha_cp(U'ñ'));
    CHECK_FALSE(is_alpha_cp(U'.'));
    CHECK(is_space_cp(U' '));
    CHECK(is_space_cp(U'\t'));
    CHECK(is_space_cp(U' '));  // NBSP carries White_Space=Yes
}

TEST_CASE("collapse_whitespace", "[common]") {
    CHECK(collapse_whitespace("  a \t b \n\n c  ") == "a b c");
    CHECK(collapse_whitespace("abc") == "abc");
    CHECK(collapse_whitespace("   ") == "");
}

TEST_CASE("parallel_map preserves order at any thread count", "[common]") {
    std::vector<int> xs(1000);
    for (int i = 0; i < 1000; ++i) xs[i] = i;
    auto sq = [](const int& x) { return x * x; };
    const auto r1 = parallel_map(xs, sq, 1);
    const auto r4 = parallel_map(xs, sq, 4);
    const auto r16 = parallel_map(xs, sq, 16);
    CHECK(r1 == r4);
    CHECK(r1 == r16);
    CHECK(r1[999] == 999 * 999);
}
