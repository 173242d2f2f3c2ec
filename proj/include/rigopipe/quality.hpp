#pragma once

// Hashed-feature logistic regression for document quality plus the
// Pareto keep rule used to stochastically retain borderline documents.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "rigopipe/common.hpp"
#include "rigopipe/document.hpp"
#include "rigopipe/textnorm.hpp"

namespace rigopipe {

struct LabeledText {
    std::string text;
    bool valid = false;
    std::string origin;
};

// index -> L2-normalized count, sorted by index
using FeatureVector = std::vector<std::pair<std::uint32_t, double>>;

struct QualityModel {
    std::uint32_t dim = 1u << 20;
    std::uint64_t seed = 0;
    std::vector<double> weights;
    double bias = 0.0;
    // training metadata
    std::size_t epochs = 0;
    double learning_rate = 0.0;
    double l2 = 0.0;
    std::vector<double> epoch_loss;
};

inline bool is_power_of_two(std::uint32_t x) { return x != 0 && (x & (x - 1)) == 0; }

// Feature index of a word: FNV-1a over the word, chained after the seed hash,
// masked into [0, dim). The seed changes every index, not just a rotation.
inline std::uint32_t feature_index(const std::string& word, std::uint32_t dim,
                                   std::uint64_t seed) {
    return static_cast<std::uint32_t>(fnv1a64(word, fnv1a64_u64(seed)) & (dim - 1));
}

inline FeatureVector hash_features(const std::string& text, std::uint32_t dim,
                                   std::uint64_t seed) {
    if (!is_power_of_two(dim)) throw ConfigError("feature dimension must be a power of two");
    std::unordered_map<std::uint32_t, double> counts;
    for (const auto& word : split_whitespace(to_lower(text)))
        counts[feature_index(word, dim, seed)] += 1.0;
    FeatureVector features(counts.begin(), counts.end());
    std::sort(features.begin(), features.end());
    double sq = 0.0;
    for (const auto& [i, c] : features) sq += c * c;
    if (sq > 0.0) {
        const double inv = 1.0 / std::sqrt(sq);
        for (auto& [i, c] : features) c *= inv;
    }
    return features;
}

inline double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

namespace detail {

inline double dot(const std::vector<double>& weights, const FeatureVector& x) {
    double z = 0.0;
    for (const auto& [i, v] : x) z += weights[i] * v;
    return z;
}

// Per-sample objective: log loss plus (l2/2)*||w||^2. The dense gradient
// below must match this exactly; tests difference them against each other.
inline double sample_loss(const std::vector<double>& weights, double bias,
                          const FeatureVector& x, bool valid, double l2) {
    const double p = sigmoid(dot(weights, x) + bias);
    const double eps = 1e-12;
    double loss = valid ? -std::log(std::max(p, eps)) : -std::log(std::max(1.0 - p, eps));
    double sq = 0.0;
    for (double w : weights) sq += w * w;
    return loss + 0.5 * l2 * sq;
}

inline std::pair<std::vector<double>, double> sample_grad(const std::vector<double>& weights,
                                                          double bias, const FeatureVector& x,
                                                          bool valid, double l2) {
    const double p = sigmoid(dot(weights, x) + bias);
    const double residual = p - (valid ? 1.0 : 0.0);
    std::vector<double> grad(weights.size(), 0.0);
    for (std::size_t i = 0; i < weights.size(); ++i) grad[i] = l2 * weights[i];
    for (const auto& [i, v] : x) grad[i] += residual * v;
    return {std::move(grad), residual};
}

}  // namespace detail

// Plain SGD on log loss with L2. The L2 shrink is applied through a running
// scale factor so each step touches only the active indices.
inline QualityModel train_quality_model(const std::vector<LabeledText>& data, std::uint32_t dim,
                                        std::size_t epochs, double lr, double l2,
                                        std::uint64_t seed) {
    if (!is_power_of_two(dim) || dim < (1u << 10))
        throw ConfigError("model dimension must be a power of two, at least 1024");
    if (lr <= 0.0) throw ConfigError("learning rate must be positive");
    if (l2 < 0.0) throw ConfigError("l2 penalty must be nonnegative");
    if (lr * l2 >= 1.0) throw ConfigError("lr * l2 must stay below 1");
    if (data.empty()) throw DataError("no labeled texts to train on");
    bool any_valid = false, any_invalid = false;
    for (const auto& item : data) (item.valid ? any_valid : any_invalid) = true;
    if (!any_valid || !any_invalid) throw DataError("training data must contain both labels");

    QualityModel model;
    model.dim = dim;
    model.seed = seed;
    model.weights.assign(dim, 0.0);
    model.epochs = epochs;
    model.learning_rate = lr;
    model.l2 = l2;

    std::vector<FeatureVector> features;
    features.reserve(data.size());
    for (const auto& item : data) features.push_back(hash_features(item.text, dim, seed));

    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::uint64_t shuffle_state = seed ^ 0x9e3779b97f4a7c15ull;

    double scale = 1.0;
    const auto flush_scale = [&] {
        if (scale == 1.0) return;
        for (double& w : model.weights) w *= scale;
        scale = 1.0;
    };

    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) {
            const std::size_t j = splitmix64(shuffle_state) % i;
            std::swap(order[i - 1], order[j]);
        }
        double loss_sum = 0.0;
        for (const std::size_t idx : order) {
            const FeatureVector& x = features[idx];
            const double target = data[idx].valid ? 1.0 : 0.0;
            const double p = sigmoid(scale * detail::dot(model.weights, x) + model.bias);
            const double eps = 1e-12;
            loss_sum += data[idx].valid ? -std::log(std::max(p, eps))
                                        : -std::log(std::max(1.0 - p, eps));
            const double residual = p - target;
            // w <- (1 - lr*l2) * w - lr * residual * x, via the scale factor
            scale *= (1.0 - lr * l2);
            if (scale < 1e-9) flush_scale();
            for (const auto& [i, v] : x) model.weights[i] -= lr * residual * v / scale;
            model.bias -= lr * residual;
        }
        model.epoch_loss.push_back(loss_sum / static_cast<double>(order.size()));
    }
    flush_scale();
    return model;
}

inline double quality_score(const QualityModel& model, const std::string& text) {
    if (model.weights.size() != model.dim) throw ConfigError("model weights do not match dim");
    const FeatureVector x = hash_features(text, model.dim, model.seed);
    return sigmoid(detail::dot(model.weights, x) + model.bias);
}

// Lomax draw with survival (1+t)^(-alpha); keep iff the draw clears 1 - score.
// High scores almost always survive, low scores survive rarely but not never.
inline bool pareto_keep(double score, double alpha, DocRng& rng) {
    if (alpha <= 0.0) throw ConfigError("alpha must be positive");
    const double u = rng.next_uniform();
    const double x = std::pow(1.0 - u, -1.0 / alpha) - 1.0;
    return x > 1.0 - score;
}

inline std::vector<FilterOutcome> quality_filter_stage(const std::vector<Document>& docs,
                                                       const QualityModel& model, double alpha,
                                                       std::uint64_t seed,
                                                       std::size_t threads = 1) {
    if (alpha <= 0.0) throw ConfigError("alpha must be positive");
    return parallel_map(
        docs,
        [&](const Document& doc) {
            const double score = quality_score(model, doc.text);
            DocRng rng(seed, doc.id);
            const std::map<std::string, double> scores{{"quality_score", score}};
            if (pareto_keep(score, alpha, rng)) return FilterOutcome::keep(doc, "quality", scores);
            return FilterOutcome::reject(doc, "quality", "quality_sampled_out", scores);
        },
        threads);
}

inline nlohmann::ordered_json quality_model_to_json(const QualityModel& model) {
    nlohmann::ordered_json j;
    j["dim"] = model.dim;
    j["seed"] = model.seed;
    j["bias"] = model.bias;
    j["epochs"] = model.epochs;
    j["learning_rate"] = model.learning_rate;
    j["l2"] = model.l2;
    j["epoch_loss"] = model.epoch_loss;
    nlohmann::ordered_json indices = nlohmann::json::array();
    nlohmann::ordered_json values = nlohmann::json::array();
    for (std::uint32_t i = 0; i < model.dim; ++i) {
        if (model.weights[i] != 0.0) {
            indices.push_back(i);
            values.push_back(model.weights[i]);
        }
    }
    j["indices"] = std::move(indices);
    j["values"] = std::move(values);
    return j;
}

inline QualityModel quality_model_from_json(const nlohmann::json& j) {
    QualityModel model;
    try {
        model.dim = j.at("dim").get<std::uint32_t>();
        model.seed = j.at("seed").get<std::uint64_t>();
        model.bias = j.at("bias").get<double>();
        model.epochs = j.at("epochs").get<std::size_t>();
        model.learning_rate = j.at("learning_rate").get<double>();
        model.l2 = j.at("l2").get<double>();
        model.epoch_loss = j.at("epoch_loss").get<std::vector<double>>();
        const auto& indices = j.at("indices");
        const auto& values = j.at("values");
        if (indices.size() != values.size()) throw DataError("index/value arrays differ in size");
        if (!is_power_of_two(model.dim)) throw DataError("model dim is not a power of two");
        model.weights.assign(model.dim, 0.0);
        for (std::size_t k = 0; k < indices.size(); ++k) {
            const std::uint32_t i = indices[k].get<std::uint32_t>();
            if (i >= model.dim) throw DataError("weight index out of range");
            model.weights[i] = values[k].get<double>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed quality model: ") + e.what());
    }
    return model;
}

inline void save_quality_model(const QualityModel& model, const std::filesystem::path& path) {
    write_file(path, quality_model_to_json(model).dump(2) + "\n");
}

inline QualityModel load_quality_model(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed quality model: ") + e.what());
    }
    return quality_model_from_json(j);
}

inline std::vector<LabeledText> parse_labeled_texts(const std::string& content) {
    std::vector<LabeledText> items;
    std::size_t lineno = 0;
    std::size_t start = 0;
    while (start <= content.size()) {
        const std::size_t end = content.find('\n', start);
        const std::string line =
            content.substr(start, end == std::string::npos ? std::string::npos : end - start);
        start = end == std::string::npos ? content.size() + 1 : end + 1;
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError("malformed labeled text at line " + std::to_string(lineno) + ": " +
                            e.what());
        }
        if (!j.contains("text") || !j["text"].is_string())
            throw DataError("missing field text at line " + std::to_string(lineno));
        if (!j.contains("label") || !j["label"].is_string())
            throw DataError("missing field label at line " + std::to_string(lineno));
        const std::string label = j["label"].get<std::string>();
        if (label != "valid" && label != "non-valid")
            throw DataError("unknown label \"" + label + "\" at line " + std::to_string(lineno));
        LabeledText item;
        item.text = j["text"].get<std::string>();
        item.valid = (label == "valid");
        if (j.contains("origin") && j["origin"].is_string())
            item.origin = j["origin"].get<std::string>();
        items.push_back(std::move(item));
    }
    return items;
}

inline std::vector<LabeledText> load_labeled_texts(const std::filesystem::path& path) {
    return parse_labeled_texts(read_file(path));
}

}  // namespace rigopipe
