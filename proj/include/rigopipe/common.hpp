#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace rigopipe {

/// Bad or inconsistent configuration (CLI flags, config files, parameter
/// preconditions). Maps to exit code 2 in the CLI.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or unreadable input data. Maps to exit code 3 in the CLI.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Hashing

inline constexpr std::uint64_t kFnvOffsetBasis = 0xcbf29ce484222325ull;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ull;

/// FNV-1a over raw bytes. This is the fixed 64-bit streaming hash used for
/// shard checksums, shingle hashing and feature hashing; the algorithm name
/// recorded in manifests is "fnv1a-64".
inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = kFnvOffsetBasis) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= kFnvPrime;
    }
    return h;
}

inline std::uint64_t fnv1a64_u64(std::uint64_t value, std::uint64_t h = kFnvOffsetBasis) {
    for (int i = 0; i < 8; ++i) {
        h ^= value & 0xffu;
        h *= kFnvPrime;
        value >>= 8;
    }
    return h;
}

/// Incremental FNV-1a, for checksumming streams block by block.
class Fnv1a64 {
public:
    void update(std::string_view bytes) { h_ = fnv1a64(bytes, h_); }
    void update(const char* data, std::size_t n) { update(std::string_view(data, n)); }
    std::uint64_t digest() const { return h_; }

private:
    std::uint64_t h_ = kFnvOffsetBasis;
};

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

/// Uniform double in [0, 1) from the high 53 bits.
inline double u64_to_uniform(std::uint64_t x) {
    return static_cast<double>(x >> 11) * 0x1.0p-53;
}

/// Deterministic per-key RNG stream derived from (seed, key). Every place the
/// pipeline draws randomness per document uses one of these, so parallel order
/// and sharding cannot change decisions.
class DocRng {
public:
    DocRng(std::uint64_t seed, std::string_view key)
        : state_(seed ^ fnv1a64(key)) {
        // burn one round so nearby seeds decorrelate
        splitmix64(state_);
    }

    std::uint64_t next_u64() { return splitmix64(state_); }
    double next_uniform() { return u64_to_uniform(next_u64()); }

private:
    std::uint64_t state_;
};

// ---------------------------------------------------------------------------
// UTF-8

inline constexpr std::size_t npos = std::string_view::npos;

/// Returns the byte offset of the first invalid UTF-8 sequence, or npos if the
/// whole string is well formed. Rejects overlongs, surrogates and > U+10FFFF.
inline std::size_t utf8_find_invalid(std::string_view s) {
    std::size_t i = 0;
    const std::size_t n = s.size();
    while (i < n) {
        const unsigned char b0 = static_cast<unsigned char>(s[i]);
        if (b0 < 0x80) {
            ++i;
            continue;
        }
        std::size_t len;
        std::uint32_t cp;
        if ((b0 & 0xe0) == 0xc0) {
            len = 2;
            cp = b0 & 0x1fu;
        } else if ((b0 & 0xf0) == 0xe0) {
            len = 3;
            cp = b0 & 0x0fu;
        } else if ((b0 & 0xf8) == 0xf0) {
            len = 4;
            cp = b0 & 0x07u;
        } else {
            return i;
        }
        if (i + len > n) return i;
        for (std::size_t j = 1; j < len; ++j) {
            const unsigned char bj = static_cast<unsigned char>(s[i + j]);
            if ((bj & 0xc0) != 0x80) return i;
            cp = (cp << 6) | (bj & 0x3fu);
        }
        if (len == 2 && cp < 0x80) return i;
        if (len == 3 && cp < 0x800) return i;
        if (len == 4 && cp < 0x10000) return i;
        if (cp > 0x10ffff || (cp >= 0xd800 && cp <= 0xdfff)) return i;
        i += len;
    }
    return npos;
}

inline bool utf8_valid(std::string_view s) { return utf8_find_invalid(s) == npos; }

/// Decodes the code point starting at byte i and advances i. Input must be
/// valid UTF-8.
inline char32_t utf8_decode(std::string_view s, std::size_t& i) {
    const unsigned char b0 = static_cast<unsigned char>(s[i]);
    if (b0 < 0x80) {
        ++i;
        return b0;
    }
    std::size_t len = (b0 & 0xe0) == 0xc0 ? 2 : (b0 & 0xf0) == 0xe0 ? 3 : 4;
    char32_t cp = b0 & (0x7fu >> len);
    for (std::size_t j = 1; j < len; ++j)
        cp = (cp << 6) | (static_cast<unsigned char>(s[i + j]) & 0x3fu);
    i += len;
    return cp;
}

inline void utf8_encode(char32_t cp, std::string& out) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xc0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xe0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    } else {
        out.push_back(static_cast<char>(0xf0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3f)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    }
}

inline std::string utf8_encode(char32_t cp) {
    std::string out;
    utf8_encode(cp, out);
    return out;
}

/// Number of Unicode scalar values. Input must be valid UTF-8.
inline std::size_t utf8_length(std::string_view s) {
    std::size_t count = 0;
    for (std::size_t i = 0; i < s.size();) {
        const unsigned char b = static_cast<unsigned char>(s[i]);
        i += b < 0x80 ? 1 : (b & 0xe0) == 0xc0 ? 2 : (b & 0xf0) == 0xe0 ? 3 : 4;
        ++count;
    }
    return count;
}

template <typename Fn>
inline void utf8_for_each(std::string_view s, Fn&& fn) {
    for (std::size_t i = 0; i < s.size();)
        fn(utf8_decode(s, i));
}

inline std::u32string utf8_decode_all(std::string_view s) {
    std::u32string out;
    out.reserve(s.size());
    utf8_for_each(s, [&](char32_t cp) { out.push_back(cp); });
    return out;
}

inline std::string utf8_encode_all(std::u32string_view s) {
    std::string out;
    out.reserve(s.size());
    for (char32_t cp : s) utf8_encode(cp, out);
    return out;
}

/// Slices a string by code point indices [first, last).
inline std::string utf8_substr(std::string_view s, std::size_t first, std::size_t last) {
    std::size_t idx = 0, from = s.size(), to = s.size(), i = 0;
    while (i < s.size()) {
        if (idx == first) from = i;
        if (idx == last) {
            to = i;
            break;
        }
        const unsigned char b = static_cast<unsigned char>(s[i]);
        i += b < 0x80 ? 1 : (b & 0xe0) == 0xc0 ? 2 : (b & 0xf0) == 0xe0 ? 3 : 4;
        ++idx;
    }
    if (idx == first) from = s.size();
    if (first >= last || from >= s.size()) return from <= to ? std::string(s.substr(from, to - from)) : std::string();
    return std::string(s.substr(from, to - from));
}

// ---------------------------------------------------------------------------
// Small string helpers

inline std::vector<std::string> split_whitespace(std::string_view s) {
    std::vector<std::string> out;
    std::size_t i = 0;
    const auto is_ws = [](char c) {
        return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
    };
    while (i < s.size()) {
        while (i < s.size() && is_ws(s[i])) ++i;
        std::size_t j = i;
        while (j < s.size() && !is_ws(s[j])) ++j;
        if (j > i) out.emplace_back(s.substr(i, j - i));
        i = j;
    }
    return out;
}

inline std::string ascii_lower(std::string_view s) {
    std::string out(s);
    for (char& c : out)
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c + 32);
    return out;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write file: " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw DataError("write failed: " + path.string());
}

inline std::string format_hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

inline std::uint64_t parse_hex64(std::string_view s) {
    std::uint64_t v = 0;
    for (char c : s) {
        v <<= 4;
        if (c >= '0' && c <= '9') v |= static_cast<std::uint64_t>(c - '0');
        else if (c >= 'a' && c <= 'f') v |= static_cast<std::uint64_t>(c - 'a' + 10);
        else if (c >= 'A' && c <= 'F') v |= static_cast<std::uint64_t>(c - 'A' + 10);
        else throw DataError("bad hex digit in checksum");
    }
    return v;
}

// ---------------------------------------------------------------------------
// Parallel map

/// Applies fn to every element, in parallel chunks, preserving input order in
/// the result. Results are identical at any thread count; fn must be pure.
template <typename T, typename Fn>
auto parallel_map(const std::vector<T>& items, Fn fn, unsigned threads)
    -> std::vector<decltype(fn(items.front()))> {
    using R = decltype(fn(items.front()));
    std::vector<R> out(items.size());
    if (items.empty()) return out;
    if (threads <= 1 || items.size() < 2) {
        for (std::size_t i = 0; i < items.size(); ++i) out[i] = fn(items[i]);
        return out;
    }
    const unsigned workers = std::min<unsigned>(threads, static_cast<unsigned>(items.size()));
    std::vector<std::future<void>> futs;
    futs.reserve(workers);
    const std::size_t chunk = (items.size() + workers - 1) / workers;
    for (unsigned w = 0; w < workers; ++w) {
        const std::size_t begin = w * chunk;
        const std::size_t end = std::min(items.size(), begin + chunk);
        if (begin >= end) break;
        futs.push_back(std::async(std::launch::async, [&, begin, end] {
            for (std::size_t i = begin; i < end; ++i) out[i] = fn(items[i]);
        }));
    }
    for (auto& f : futs) f.get();
    return out;
}

}  // namespace rigopipe
