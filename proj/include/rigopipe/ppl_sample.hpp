#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rigopipe/common.hpp"
#include "rigopipe/document.hpp"
#include "rigopipe/ngram_lm.hpp"

namespace rigopipe {

enum class SamplingMode { gaussian, stepwise };

inline SamplingMode parse_sampling_mode(std::string_view s) {
    if (s == "gaussian") return SamplingMode::gaussian;
    if (s == "stepwise") return SamplingMode::stepwise;
    throw ConfigError("unknown sampling mode: " + std::string(s));
}

/// Acceptance model over document perplexities. Gaussian mode favors
/// mid-perplexity documents with a kernel peaked at the median; stepwise mode
/// assigns one weight per quartile. scale_c is calibrated so the expected
/// retained fraction hits a target; +infinity means "keep everything".
struct SamplingPolicy {
    SamplingMode mode = SamplingMode::gaussian;
    double q1 = 0;
    double median = 0;
    double q3 = 0;
    double sigma = 1;                                   // gaussian mode
    std::array<double, 4> weights{0.1, 1.0, 1.0, 0.1};  // stepwise mode
    double scale_c = 1.0;

    void validate() const {
        if (!(q1 <= median && median <= q3))
            throw ConfigError("sampling quantiles must be ordered q1 <= median <= q3");
        if (sigma <= 0) throw ConfigError("sampling sigma must be > 0");
        for (double w : weights)
            if (w < 0 || w > 1) throw ConfigError("stepwise weights must be in [0,1]");
        if (scale_c < 0) throw ConfigError("scale_c must be >= 0");
    }
};

inline double acceptance_probability(double ppl, const SamplingPolicy& policy) {
    policy.validate();
    if (std::isinf(policy.scale_c)) return 1.0;
    double raw;
    if (policy.mode == SamplingMode::gaussian) {
        const double z = (ppl - policy.median) / policy.sigma;
        raw = policy.scale_c * std::exp(-0.5 * z * z);
    } else {
        std::size_t quartile;
        if (ppl < policy.q1) quartile = 0;
        else if (ppl < policy.median) quartile = 1;
        else if (ppl < policy.q3) quartile = 2;
        else quartile = 3;
        raw = policy.scale_c * policy.weights[quartile];
    }
    return std::clamp(raw, 0.0, 1.0);
}

namespace detail {

/// Linear-interpolation quantile of a sorted sample.
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) throw ConfigError("quantile of empty sample");
    if (sorted.size() == 1) return sorted[0];
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

}  // namespace detail

/// Fits quantiles (and sigma = IQR/1.349 in gaussian mode) from sampled
/// perplexities, then bisects scale_c so that the mean clamped acceptance over
/// the sample equals target_fraction. target_fraction >= 1 pins scale_c to
/// +infinity.
inline SamplingPolicy calibrate_policy(std::vector<double> ppls, SamplingMode mode,
                                       double target_fraction,
                                       std::array<double, 4> weights = {0.1, 1.0, 1.0, 0.1}) {
    if (ppls.empty()) throw DataError("cannot calibrate on an empty perplexity sample");
    if (target_fraction <= 0 || target_fraction > 1)
        throw ConfigError("target_fraction must be in (0,1]");

    std::sort(ppls.begin(), ppls.end());
    SamplingPolicy policy;
    policy.mode = mode;
    policy.weights = weights;
    policy.q1 = detail::quantile_sorted(ppls, 0.25);
    policy.median = detail::quantile_sorted(ppls, 0.50);
    policy.q3 = detail::quantile_sorted(ppls, 0.75);
    const double iqr = policy.q3 - policy.q1;
    // 1.349 = 2*Phi^-1(0.75): IQR of a normal in sigma units
    policy.sigma = iqr > 0 ? iqr / 1.349 : 1.0;

    if (target_fraction >= 1.0) {
        policy.scale_c = std::numeric_limits<double>::infinity();
        policy.validate();
        return policy;
    }

    const auto mean_acceptance = [&](double c) {
        SamplingPolicy trial = policy;
        trial.scale_c = c;
        double sum = 0;
        for (double p : ppls) sum += acceptance_probability(p, trial);
        return sum / static_cast<double>(ppls.size());
    };

    double lo = 0.0, hi = 1.0;
    for (int i = 0; i < 1100 && mean_acceptance(hi) < target_fraction; ++i) hi *= 2;
    for (int i = 0; i < 80; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (mean_acceptance(mid) < target_fraction) lo = mid;
        else hi = mid;
    }
    policy.scale_c = hi;
    policy.validate();
    return policy;
}

inline constexpr std::size_t kPplReservoirCap = 100000;

struct PplSampleResult {
    std::vector<FilterOutcome> outcomes;  // one per input doc, input order
    SamplingPolicy policy;
};

/// Two passes: score every document and calibrate the policy on a reservoir
/// sample of perplexities, then accept each document independently with its
/// own (seed, doc id) RNG stream so thread count and shard order cannot change
/// any decision.
inline PplSampleResult perplexity_sample_stage(const std::vector<Document>& docs,
                                               const NGramLm& lm, SamplingMode mode,
                                               double target_fraction, std::uint64_t seed,
                                               unsigned threads = 1) {
    if (target_fraction <= 0 || target_fraction > 1)
        throw ConfigError("target_fraction must be in (0,1]");

    const std::vector<double> ppls = parallel_map(
        docs,
        [&](const Document& d) -> double {
            try {
                return perplexity(lm, d.text);
            } catch (const DataError&) {
                return -1.0;  // tokenizes to nothing
            }
        },
        threads);

    std::vector<double> reservoir;
    reservoir.reserve(std::min(docs.size(), kPplReservoirCap));
    DocRng reservoir_rng(seed, "ppl-reservoir");
    std::size_t seen = 0;
    for (double p : ppls) {
        if (p < 0) continue;
        ++seen;
        if (reservoir.size() < kPplReservoirCap) {
            reservoir.push_back(p);
        } else {
            const std::size_t j = reservoir_rng.next_u64() % seen;
            if (j < kPplReservoirCap) reservoir[j] = p;
        }
    }
    if (reservoir.empty()) throw DataError("no scorable documents for perplexity sampling");

    PplSampleResult result;
    result.policy = calibrate_policy(std::move(reservoir), mode, target_fraction);

    result.outcomes.reserve(docs.size());
    for (std::size_t i = 0; i < docs.size(); ++i) {
        if (ppls[i] < 0) {
            result.outcomes.push_back(
                FilterOutcome::reject(docs[i], "ppl_sample", "empty_after_tokenization"));
            continue;
        }
        const double accept = acceptance_probability(ppls[i], result.policy);
        std::map<std::string, double> scores{{"perplexity", ppls[i]}, {"acceptance", accept}};
        DocRng rng(seed, docs[i].id);
        if (rng.next_uniform() < accept) {
            result.outcomes.push_back(FilterOutcome::keep(docs[i], "ppl_sample", scores));
        } else {
            result.outcomes.push_back(
                FilterOutcome::reject(docs[i], "ppl_sample", "perplexity_sampled_out", scores));
        }
    }
    return result;
}

inline nlohmann::ordered_json sampling_policy_to_json(const SamplingPolicy& p) {
    nlohmann::ordered_json j;
    j["mode"] = p.mode == SamplingMode::gaussian ? "gaussian" : "stepwise";
    j["q1"] = p.q1;
    j["median"] = p.median;
    j["q3"] = p.q3;
    j["sigma"] = p.sigma;
    j["weights"] = p.weights;
    j["scale_c"] = std::isinf(p.scale_c) ? -1.0 : p.scale_c;  // -1 encodes infinity
    return j;
}

inline SamplingPolicy sampling_policy_from_json(const nlohmann::json& j) {
    SamplingPolicy p;
    p.mode = parse_sampling_mode(j.at("mode").get<std::string>());
    p.q1 = j.at("q1").get<double>();
    p.median = j.at("median").get<double>();
    p.q3 = j.at("q3").get<double>();
    p.sigma = j.at("sigma").get<double>();
    const auto w = j.at("weights").get<std::vector<double>>();
    if (w.size() != 4) throw DataError("sampling policy needs 4 weights");
    std::copy(w.begin(), w.end(), p.weights.begin());
    const double c = j.at("scale_c").get<double>();
    p.scale_c = c < 0 ? std::numeric_limits<double>::infinity() : c;
    p.validate();
    return p;
}

}  // namespace rigopipe
