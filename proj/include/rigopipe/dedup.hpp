#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "rigopipe/common.hpp"
#include "rigopipe/document.hpp"
#include "rigopipe/textnorm.hpp"

namespace rigopipe {

inline constexpr std::uint64_t kMersenne61 = (1ull << 61) - 1;

/// (a*x) mod 2^61-1 via 128-bit product and two folds.
inline std::uint64_t mulmod_p61(std::uint64_t a, std::uint64_t x) {
    const unsigned __int128 prod = static_cast<unsigned __int128>(a) * x;
    std::uint64_t s = static_cast<std::uint64_t>(prod & kMersenne61) +
                      static_cast<std::uint64_t>(prod >> 61);
    s = (s & kMersenne61) + (s >> 61);
    return s >= kMersenne61 ? s - kMersenne61 : s;
}

struct MinHashParams {
    std::size_t k = 256;
    std::size_t shingle_width = 5;  // words
    std::uint64_t seed = 0;

    void validate() const {
        if (k < 16) throw ConfigError("minhash k must be >= 16");
        if (shingle_width < 1) throw ConfigError("shingle width must be >= 1");
    }
};

struct MinHashSignature {
    std::vector<std::uint64_t> minima;
    std::uint32_t k = 0;
    std::uint32_t shingle_width = 0;
    std::uint64_t seed = 0;

    bool compatible(const MinHashSignature& other) const {
        return k == other.k && shingle_width == other.shingle_width && seed == other.seed;
    }
};

/// w-word shingles of the lowercased, whitespace-collapsed text, hashed to
/// 64 bits. Texts with fewer than w words yield the whole text as one shingle.
inline std::vector<std::uint64_t> shingle_hashes(std::string_view text, std::size_t w) {
    const std::string norm = collapse_whitespace(to_lower(text));
    const std::vector<std::string> words = split_whitespace(norm);
    std::vector<std::uint64_t> hashes;
    if (words.size() < w) {
        hashes.push_back(fnv1a64(norm));
        return hashes;
    }
    hashes.reserve(words.size() - w + 1);
    for (std::size_t i = 0; i + w <= words.size(); ++i) {
        std::string joined = words[i];
        for (std::size_t j = 1; j < w; ++j) {
            joined += ' ';
            joined += words[i + j];
        }
        hashes.push_back(fnv1a64(joined));
    }
    return hashes;
}

/// minima[i] = min over shingles x of (a_i*x + b_i) mod 2^61-1, with the
/// coefficient pairs drawn deterministically from the seed.
inline MinHashSignature compute_signature(std::string_view text, const MinHashParams& params) {
    params.validate();
    const std::vector<std::uint64_t> raw = shingle_hashes(text, params.shingle_width);
    std::vector<std::uint64_t> xs(raw.size());
    for (std::size_t j = 0; j < raw.size(); ++j) xs[j] = raw[j] % kMersenne61;

    MinHashSignature sig;
    sig.k = static_cast<std::uint32_t>(params.k);
    sig.shingle_width = static_cast<std::uint32_t>(params.shingle_width);
    sig.seed = params.seed;
    sig.minima.resize(params.k);

    std::uint64_t state = params.seed;
    for (std::size_t i = 0; i < params.k; ++i) {
        const std::uint64_t a = splitmix64(state) % (kMersenne61 - 1) + 1;
        const std::uint64_t b = splitmix64(state) % kMersenne61;
        std::uint64_t best = std::numeric_limits<std::uint64_t>::max();
        for (std::uint64_t x : xs) {
            std::uint64_t h = mulmod_p61(a, x) + b;
            if (h >= kMersenne61) h -= kMersenne61;
            best = std::min(best, h);
        }
        sig.minima[i] = best;
    }
    return sig;
}

/// Fraction of positions where the minima agree; an unbiased Jaccard estimate.
inline double estimate_jaccard(const MinHashSignature& a, const MinHashSignature& b) {
    if (!a.compatible(b) || a.minima.size() != b.minima.size())
        throw ConfigError("incompatible signatures");
    std::size_t agree = 0;
    for (std::size_t i = 0; i < a.minima.size(); ++i)
        if (a.minima[i] == b.minima[i]) ++agree;
    return static_cast<double>(agree) / static_cast<double>(a.minima.size());
}

/// Banded LSH over signatures: b bands of r rows each, b*r = k. Docs sharing
/// at least one band bucket become candidate pairs.
class LshIndex {
public:
    LshIndex(std::size_t bands, std::size_t rows) : bands_(bands), rows_(rows) {
        if (bands < 1 || rows < 1) throw ConfigError("lsh bands and rows must be >= 1");
        buckets_.resize(bands);
    }

    void insert(const std::string& id, const MinHashSignature& sig) {
        if (sig.minima.size() != bands_ * rows_)
            throw ConfigError("signature k does not match lsh bands*rows");
        if (!ids_.empty() && !sig.compatible(first_sig_))
            throw ConfigError("incompatible signatures");
        if (!id_set_.insert(id).second) throw DataError("duplicate doc id: " + id);
        if (ids_.empty()) first_sig_ = {{}, sig.k, sig.shingle_width, sig.seed};
        const std::size_t idx = ids_.size();
        ids_.push_back(id);
        for (std::size_t band = 0; band < bands_; ++band) {
            Fnv1a64 h;
            for (std::size_t row = 0; row < rows_; ++row) {
                const std::uint64_t v = sig.minima[band * rows_ + row];
                char bytes[8];
                for (int byte = 0; byte < 8; ++byte)
                    bytes[byte] = static_cast<char>((v >> (8 * byte)) & 0xff);
                h.update(bytes, 8);
            }
            buckets_[band][h.digest()].push_back(idx);
        }
    }

    std::size_t size() const { return ids_.size(); }
    const std::string& id_of(std::size_t idx) const { return ids_[idx]; }

    /// Unique candidate pairs (i < j by insertion index), sorted.
    std::vector<std::pair<std::size_t, std::size_t>> candidate_pairs() const {
        std::unordered_set<std::uint64_t> seen;
        std::vector<std::pair<std::size_t, std::size_t>> pairs;
        for (const auto& band : buckets_) {
            for (const auto& [hash, members] : band) {
                for (std::size_t i = 0; i < members.size(); ++i) {
                    for (std::size_t j = i + 1; j < members.size(); ++j) {
                        const std::size_t lo = std::min(members[i], members[j]);
                        const std::size_t hi = std::max(members[i], members[j]);
                        const std::uint64_t key = (static_cast<std::uint64_t>(lo) << 32) | hi;
                        if (seen.insert(key).second) pairs.emplace_back(lo, hi);
                    }
                }
            }
        }
        std::sort(pairs.begin(), pairs.end());
        return pairs;
    }

private:
    std::size_t bands_;
    std::size_t rows_;
    std::vector<std::unordered_map<std::uint64_t, std::vector<std::size_t>>> buckets_;
    std::vector<std::string> ids_;
    std::unordered_set<std::string> id_set_;
    MinHashSignature first_sig_;
};

inline LshIndex build_lsh_index(
    const std::vector<std::pair<std::string, MinHashSignature>>& sigs, std::size_t bands,
    std::size_t rows) {
    LshIndex index(bands, rows);
    for (const auto& [id, sig] : sigs) index.insert(id, sig);
    return index;
}

namespace detail {

class UnionFind {
public:
    explicit UnionFind(std::size_t n) : parent_(n) {
        std::iota(parent_.begin(), parent_.end(), std::size_t{0});
    }
    std::size_t find(std::size_t x) {
        while (parent_[x] != x) {
            parent_[x] = parent_[parent_[x]];
            x = parent_[x];
        }
        return x;
    }
    void unite(std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a != b) parent_[std::max(a, b)] = std::min(a, b);
    }

private:
    std::vector<std::size_t> parent_;
};

}  // namespace detail

struct DedupParams {
    std::size_t k = 256;
    std::size_t bands = 16;
    std::size_t rows = 16;
    std::size_t shingle_width = 5;
    double threshold = 0.8;
    std::uint64_t seed = 0;
    unsigned threads = 1;

    void validate() const {
        MinHashParams{k, shingle_width, seed}.validate();
        if (bands * rows != k) throw ConfigError("dedup requires bands*rows == k");
        if (threshold <= 0 || threshold > 1) throw ConfigError("dedup threshold must be in (0,1]");
    }
};

struct DuplicateRecord {
    std::string dropped_id;
    std::string representative_id;
    double estimate = 0;
};

struct DedupResult {
    std::vector<Document> kept;  // input order
    std::vector<DuplicateRecord> duplicates;  // sorted by dropped_id
};

/// Clusters candidate pairs whose signature estimate clears the threshold and
/// keeps one representative per cluster: longest text, ties broken by
/// lexicographically smallest id. Both the partition and the representatives
/// are independent of input order.
inline DedupResult deduplicate(const std::vector<Document>& docs, const DedupParams& params) {
    params.validate();
    const MinHashParams mh{params.k, params.shingle_width, params.seed};
    const std::vector<MinHashSignature> sigs = parallel_map(
        docs, [&](const Document& d) { return compute_signature(d.text, mh); }, params.threads);

    LshIndex index(params.bands, params.rows);
    for (std::size_t i = 0; i < docs.size(); ++i) index.insert(docs[i].id, sigs[i]);

    detail::UnionFind uf(docs.size());
    for (const auto& [i, j] : index.candidate_pairs())
        if (estimate_jaccard(sigs[i], sigs[j]) >= params.threshold) uf.unite(i, j);

    std::unordered_map<std::size_t, std::size_t> representative;  // root -> doc index
    for (std::size_t i = 0; i < docs.size(); ++i) {
        const std::size_t root = uf.find(i);
        auto [it, inserted] = representative.try_emplace(root, i);
        if (inserted) continue;
        const Document& cur = docs[it->second];
        const Document& cand = docs[i];
        if (cand.text.size() > cur.text.size() ||
            (cand.text.size() == cur.text.size() && cand.id < cur.id))
            it->second = i;
    }

    DedupResult result;
    for (std::size_t i = 0; i < docs.size(); ++i) {
        const std::size_t rep = representative.at(uf.find(i));
        if (rep == i) {
            result.kept.push_back(docs[i]);
        } else {
            result.duplicates.push_back(
                {docs[i].id, docs[rep].id, estimate_jaccard(sigs[i], sigs[rep])});
        }
    }
    std::sort(result.duplicates.begin(), result.duplicates.end(),
              [](const DuplicateRecord& a, const DuplicateRecord& b) {
                  return a.dropped_id < b.dropped_id;
              });
    return result;
}

inline std::string duplicate_report_to_jsonl(const std::vector<DuplicateRecord>& records) {
    std::string out;
    for (const auto& r : records) {
        nlohmann::ordered_json j;
        j["dropped_id"] = r.dropped_id;
        j["representative_id"] = r.representative_id;
        j["estimate"] = r.estimate;
        out += j.dump();
        out += '\n';
    }
    return out;
}

}  // namespace rigopipe
