#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rigopipe/common.hpp"

namespace rigopipe {

/// One corpus unit. `text` must be valid UTF-8; `id` must be unique within a
/// corpus. `url` is optional (empty means absent).
struct Document {
    std::string id;
    std::string text;
    std::string source;
    std::string url;
    std::map<std::string, std::string> meta;

    bool operator==(const Document&) const = default;
};

/// Verdict of one filter stage on one document.
struct FilterOutcome {
    std::string doc_id;
    std::string stage;
    bool kept = false;
    std::string reason;  // non-empty iff rejected
    std::map<std::string, double> scores;

    static FilterOutcome keep(const Document& doc, std::string stage,
                              std::map<std::string, double> scores = {}) {
        FilterOutcome o;
        o.doc_id = doc.id;
        o.stage = std::move(stage);
        o.kept = true;
        o.scores = std::move(scores);
        o.check_scores();
        return o;
    }

    static FilterOutcome reject(const Document& doc, std::string stage, std::string reason,
                                std::map<std::string, double> scores = {}) {
        if (reason.empty()) throw ConfigError("rejected outcome needs a reason");
        FilterOutcome o;
        o.doc_id = doc.id;
        o.stage = std::move(stage);
        o.kept = false;
        o.reason = std::move(reason);
        o.scores = std::move(scores);
        o.check_scores();
        return o;
    }

    void check_scores() const {
        for (const auto& [k, v] : scores)
            if (!std::isfinite(v)) throw ConfigError("non-finite score '" + k + "' for doc " + doc_id);
    }
};

/// Per-stage keep/reject accounting.
struct StageReport {
    std::string stage;
    std::size_t total = 0;
    std::size_t kept = 0;
    std::map<std::string, std::size_t> rejected_by_reason;
};

/// Groups outcomes by stage, stages in first-seen order.
inline std::vector<StageReport> stage_report(const std::vector<FilterOutcome>& outcomes) {
    std::vector<StageReport> reports;
    std::map<std::string, std::size_t> index;
    for (const auto& o : outcomes) {
        auto [it, inserted] = index.try_emplace(o.stage, reports.size());
        if (inserted) {
            reports.emplace_back();
            reports.back().stage = o.stage;
        }
        StageReport& r = reports[it->second];
        ++r.total;
        if (o.kept) ++r.kept;
        else ++r.rejected_by_reason[o.reason];
    }
    return reports;
}

inline nlohmann::ordered_json stage_reports_to_json(const std::vector<StageReport>& reports) {
    nlohmann::ordered_json out = nlohmann::ordered_json::array();
    for (const auto& r : reports) {
        nlohmann::ordered_json j;
        j["stage"] = r.stage;
        j["total"] = r.total;
        j["kept"] = r.kept;
        j["rejected"] = r.total - r.kept;
        j["rejected_by_reason"] = r.rejected_by_reason;
        out.push_back(std::move(j));
    }
    return out;
}

}  // namespace rigopipe
