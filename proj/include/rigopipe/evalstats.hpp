#pragma once

// Macro-F1, score-matrix imputation, fractional average ranks, the Friedman
// statistic, Nemenyi critical distances, and a deterministic CD diagram.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "rigopipe/common.hpp"

namespace rigopipe {

struct ScoreMatrix {
    std::vector<std::string> datasets;
    std::vector<std::string> models;
    std::vector<std::vector<std::optional<double>>> cells;  // [dataset][model]

    void validate() const {
        if (models.size() < 2) throw DataError("score matrix needs at least two models");
        if (datasets.empty()) throw DataError("score matrix has no rows");
        if (cells.size() != datasets.size()) throw DataError("row count mismatch");
        for (std::size_t r = 0; r < cells.size(); ++r) {
            if (cells[r].size() != models.size())
                throw DataError("row " + datasets[r] + " has the wrong number of cells");
            std::size_t present = 0;
            for (const auto& c : cells[r]) present += c.has_value() ? 1 : 0;
            if (present < 2)
                throw DataError("row " + datasets[r] + " has fewer than two scores");
        }
    }
};

struct RankReport {
    std::vector<std::string> models;
    std::vector<double> avg_ranks;
    std::size_t n_datasets = 0;
    double alpha = 0.05;
    double cd = 0.0;
    std::vector<std::vector<bool>> significant;  // k x k, symmetric, false diagonal
    std::vector<std::vector<std::string>> groups;  // bars of the diagram, rank order
};

inline double macro_f1(const std::vector<std::string>& gold, const std::vector<std::string>& pred,
                       const std::vector<std::string>& labels) {
    if (gold.size() != pred.size()) throw DataError("gold and predicted label counts differ");
    if (gold.empty()) throw DataError("no labels to score");
    if (labels.empty()) throw ConfigError("label set is empty");
    const std::set<std::string> unique(labels.begin(), labels.end());
    double sum = 0.0;
    for (const std::string& label : unique) {
        std::size_t tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < gold.size(); ++i) {
            const bool g = gold[i] == label, p = pred[i] == label;
            if (g && p) ++tp;
            else if (p) ++fp;
            else if (g) ++fn;
        }
        // 0/0 forms collapse to 0 rather than poisoning the mean
        const double precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
        const double recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
        sum += precision + recall == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
    }
    return sum / static_cast<double>(unique.size());
}

inline ScoreMatrix impute_missing(const ScoreMatrix& m, double epsilon = 0.001) {
    if (epsilon <= 0.0) throw ConfigError("epsilon must be positive");
    ScoreMatrix out = m;
    for (std::size_t r = 0; r < out.cells.size(); ++r) {
        double row_min = std::numeric_limits<double>::infinity();
        bool any = false;
        for (const auto& c : out.cells[r]) {
            if (c.has_value()) {
                row_min = std::min(row_min, *c);
                any = true;
            }
        }
        if (!any) throw DataError("row " + m.datasets[r] + " is fully missing");
        for (auto& c : out.cells[r])
            if (!c.has_value()) c = row_min - epsilon;
    }
    return out;
}

namespace detail {

// fractional ranks for one row: best gets 1, ties share the mean rank
inline std::vector<double> row_ranks(const std::vector<double>& scores, bool higher_is_better) {
    const std::size_t k = scores.size();
    std::vector<std::size_t> order(k);
    for (std::size_t i = 0; i < k; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return higher_is_better ? scores[a] > scores[b] : scores[a] < scores[b];
    });
    std::vector<double> ranks(k, 0.0);
    std::size_t i = 0;
    while (i < k) {
        std::size_t j = i;
        while (j + 1 < k && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double shared = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = shared;
        i = j + 1;
    }
    return ranks;
}

inline std::vector<std::vector<double>> all_row_ranks(const ScoreMatrix& m,
                                                      bool higher_is_better) {
    m.validate();
    std::vector<std::vector<double>> rows;
    for (std::size_t r = 0; r < m.cells.size(); ++r) {
        std::vector<double> scores;
        for (const auto& c : m.cells[r]) {
            if (!c.has_value())
                throw DataError("matrix has missing cells; run impute_missing first");
            scores.push_back(*c);
        }
        rows.push_back(row_ranks(scores, higher_is_better));
    }
    return rows;
}

inline std::string fmt4(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", x);
    return buf;
}

inline std::string fmt2(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", x);
    return buf;
}

}  // namespace detail

inline std::vector<double> average_ranks(const ScoreMatrix& m, bool higher_is_better = true) {
    const auto rows = detail::all_row_ranks(m, higher_is_better);
    std::vector<double> avg(m.models.size(), 0.0);
    for (const auto& row : rows)
        for (std::size_t j = 0; j < avg.size(); ++j) avg[j] += row[j];
    for (double& a : avg) a /= static_cast<double>(rows.size());
    return avg;
}

// studentized-range constants / sqrt(2) after Demsar (2006), JMLR 7
inline double nemenyi_q(std::size_t k, double alpha) {
    static const double q05[] = {1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164};
    static const double q10[] = {1.645, 2.052, 2.291, 2.459, 2.589, 2.693, 2.780, 2.855, 2.920};
    if (k < 2 || k > 10)
        throw ConfigError("critical values are tabulated for 2 to 10 models");
    if (std::abs(alpha - 0.05) < 1e-12) return q05[k - 2];
    if (std::abs(alpha - 0.10) < 1e-12) return q10[k - 2];
    throw ConfigError("alpha must be 0.05 or 0.10");
}

inline RankReport nemenyi(const std::vector<std::string>& models,
                          const std::vector<double>& avg_ranks, std::size_t n_datasets,
                          double alpha = 0.05) {
    const std::size_t k = models.size();
    if (avg_ranks.size() != k) throw ConfigError("rank count does not match model count");
    if (n_datasets < 2) throw ConfigError("at least two datasets are required");
    const double q = nemenyi_q(k, alpha);

    RankReport report;
    report.models = models;
    report.avg_ranks = avg_ranks;
    report.n_datasets = n_datasets;
    report.alpha = alpha;
    report.cd = q * std::sqrt(static_cast<double>(k) * (static_cast<double>(k) + 1.0) /
                              (6.0 * static_cast<double>(n_datasets)));
    report.significant.assign(k, std::vector<bool>(k, false));
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j)
            report.significant[i][j] = i != j && std::abs(avg_ranks[i] - avg_ranks[j]) > report.cd;

    // bars: maximal rank-contiguous windows whose extremes sit within CD
    std::vector<std::size_t> order(k);
    for (std::size_t i = 0; i < k; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (avg_ranks[a] != avg_ranks[b]) return avg_ranks[a] < avg_ranks[b];
        return models[a] < models[b];
    });
    std::size_t prev_end = 0;
    for (std::size_t i = 0; i < k; ++i) {
        std::size_t j = i;
        while (j + 1 < k && avg_ranks[order[j + 1]] - avg_ranks[order[i]] <= report.cd) ++j;
        if (j > i && j + 1 > prev_end) {
            std::vector<std::string> group;
            for (std::size_t t = i; t <= j; ++t) group.push_back(models[order[t]]);
            report.groups.push_back(std::move(group));
            prev_end = j + 1;
        }
    }
    return report;
}

inline RankReport nemenyi(const ScoreMatrix& m, double alpha = 0.05,
                          bool higher_is_better = true) {
    return nemenyi(m.models, average_ranks(m, higher_is_better), m.datasets.size(), alpha);
}

inline double friedman_statistic(const ScoreMatrix& m, bool higher_is_better = true) {
    const auto avg = average_ranks(m, higher_is_better);
    const double n = static_cast<double>(m.datasets.size());
    const double k = static_cast<double>(m.models.size());
    double sum_sq = 0.0;
    for (const double r : avg) sum_sq += r * r;
    return 12.0 * n / (k * (k + 1.0)) * sum_sq - 3.0 * n * (k + 1.0);
}

inline ScoreMatrix parse_score_matrix(const std::string& content) {
    std::vector<std::vector<std::string>> rows;
    std::size_t start = 0;
    while (start < content.size()) {
        const std::size_t end = content.find('\n', start);
        std::string line =
            content.substr(start, end == std::string::npos ? std::string::npos : end - start);
        start = end == std::string::npos ? content.size() : end + 1;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::size_t f = 0;
        while (true) {
            const std::size_t comma = line.find(',', f);
            fields.push_back(line.substr(f, comma == std::string::npos ? std::string::npos
                                                                       : comma - f));
            if (comma == std::string::npos) break;
            f = comma + 1;
        }
        rows.push_back(std::move(fields));
    }
    if (rows.size() < 2) throw DataError("score matrix needs a header and at least one row");

    ScoreMatrix m;
    m.models.assign(rows[0].begin() + 1, rows[0].end());
    for (std::size_t r = 1; r < rows.size(); ++r) {
        if (rows[r].size() != rows[0].size())
            throw DataError("row " + std::to_string(r + 1) + " has the wrong number of fields");
        m.datasets.push_back(rows[r][0]);
        std::vector<std::optional<double>> cells;
        for (std::size_t c = 1; c < rows[r].size(); ++c) {
            std::string field = rows[r][c];
            const auto is_blank = [](const std::string& s) {
                return s.find_first_not_of(" \t") == std::string::npos;
            };
            if (is_blank(field)) {
                cells.push_back(std::nullopt);
                continue;
            }
            try {
                std::size_t used = 0;
                const double value = std::stod(field, &used);
                while (used < field.size() && (field[used] == ' ' || field[used] == '\t')) ++used;
                if (used != field.size()) throw std::invalid_argument(field);
                cells.push_back(value);
            } catch (const std::exception&) {
                throw DataError("bad score \"" + field + "\" at row " + std::to_string(r + 1));
            }
        }
        m.cells.push_back(std::move(cells));
    }
    m.validate();
    return m;
}

inline ScoreMatrix load_score_matrix(const std::filesystem::path& path) {
    return parse_score_matrix(read_file(path));
}

inline std::string rank_report_to_csv(const RankReport& report) {
    std::vector<std::size_t> order(report.models.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (report.avg_ranks[a] != report.avg_ranks[b])
            return report.avg_ranks[a] < report.avg_ranks[b];
        return report.models[a] < report.models[b];
    });
    std::string csv = "model,average_rank\n";
    for (const std::size_t i : order)
        csv += report.models[i] + "," + detail::fmt4(report.avg_ranks[i]) + "\n";
    csv += "cd," + detail::fmt4(report.cd) + "\n";
    csv += "alpha," + detail::fmt2(report.alpha) + "\n";
    csv += "n_datasets," + std::to_string(report.n_datasets) + "\n";
    csv += "model_a,model_b,rank_difference,significant\n";
    for (std::size_t a = 0; a < order.size(); ++a) {
        for (std::size_t b = a + 1; b < order.size(); ++b) {
            const std::size_t i = order[a], j = order[b];
            csv += report.models[i] + "," + report.models[j] + "," +
                   detail::fmt4(std::abs(report.avg_ranks[i] - report.avg_ranks[j])) + "," +
                   (report.significant[i][j] ? "true" : "false") + "\n";
        }
    }
    return csv;
}

inline std::string rank_report_to_svg(const RankReport& report) {
    const std::size_t k = report.models.size();
    const double margin = 70.0, width = 640.0;
    const double plot_w = width - 2.0 * margin;
    const double axis_y = 80.0;
    const auto x_of = [&](double rank) {
        return margin + (rank - 1.0) / (static_cast<double>(k) - 1.0) * plot_w;
    };

    std::vector<std::size_t> order(k);
    for (std::size_t i = 0; i < k; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (report.avg_ranks[a] != report.avg_ranks[b])
            return report.avg_ranks[a] < report.avg_ranks[b];
        return report.models[a] < report.models[b];
    });

    const std::size_t left_count = (k + 1) / 2;
    const double label_h = 22.0;
    const double labels_top = axis_y + 16.0 + static_cast<double>(report.groups.size()) * 9.0;
    const double height = labels_top + static_cast<double>(left_count) * label_h + 30.0;

    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + detail::fmt4(width) +
           "\" height=\"" + detail::fmt4(height) + "\" viewBox=\"0 0 " + detail::fmt4(width) +
           " " + detail::fmt4(height) + "\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

    // CD ruler
    const double ruler_y = 34.0;
    svg += "<line x1=\"" + detail::fmt4(x_of(1.0)) + "\" y1=\"" + detail::fmt4(ruler_y) +
           "\" x2=\"" + detail::fmt4(x_of(1.0 + report.cd)) + "\" y2=\"" + detail::fmt4(ruler_y) +
           "\" stroke=\"black\" stroke-width=\"1\"/>\n";
    for (const double rx : {x_of(1.0), x_of(1.0 + report.cd)})
        svg += "<line x1=\"" + detail::fmt4(rx) + "\" y1=\"" + detail::fmt4(ruler_y - 4.0) +
               "\" x2=\"" + detail::fmt4(rx) + "\" y2=\"" + detail::fmt4(ruler_y + 4.0) +
               "\" stroke=\"black\" stroke-width=\"1\"/>\n";
    svg += "<text x=\"" + detail::fmt4((x_of(1.0) + x_of(1.0 + report.cd)) / 2.0) + "\" y=\"" +
           detail::fmt4(ruler_y - 8.0) +
           "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">CD = " +
           detail::fmt4(report.cd) + "</text>\n";

    // axis with integer ticks
    svg += "<line x1=\"" + detail::fmt4(margin) + "\" y1=\"" + detail::fmt4(axis_y) + "\" x2=\"" +
           detail::fmt4(width - margin) + "\" y2=\"" + detail::fmt4(axis_y) +
           "\" stroke=\"black\" stroke-width=\"1.5\"/>\n";
    for (std::size_t t = 1; t <= k; ++t) {
        const double tx = x_of(static_cast<double>(t));
        svg += "<line x1=\"" + detail::fmt4(tx) + "\" y1=\"" + detail::fmt4(axis_y - 5.0) +
               "\" x2=\"" + detail::fmt4(tx) + "\" y2=\"" + detail::fmt4(axis_y) +
               "\" stroke=\"black\" stroke-width=\"1\"/>\n";
        svg += "<text x=\"" + detail::fmt4(tx) + "\" y=\"" + detail::fmt4(axis_y - 10.0) +
               "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">" +
               std::to_string(t) + "</text>\n";
    }

    // group bars under the axis
    for (std::size_t g = 0; g < report.groups.size(); ++g) {
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (const std::string& name : report.groups[g]) {
            for (std::size_t i = 0; i < k; ++i) {
                if (report.models[i] == name) {
                    lo = std::min(lo, report.avg_ranks[i]);
                    hi = std::max(hi, report.avg_ranks[i]);
                }
            }
        }
        const double gy = axis_y + 8.0 + static_cast<double>(g) * 9.0;
        svg += "<line x1=\"" + detail::fmt4(x_of(lo) - 3.0) + "\" y1=\"" + detail::fmt4(gy) +
               "\" x2=\"" + detail::fmt4(x_of(hi) + 3.0) + "\" y2=\"" + detail::fmt4(gy) +
               "\" stroke=\"black\" stroke-width=\"4\"/>\n";
    }

    // model stems and labels, best half on the left
    for (std::size_t pos = 0; pos < k; ++pos) {
        const std::size_t i = order[pos];
        const bool left = pos < left_count;
        const std::size_t slot = left ? pos : k - 1 - pos;
        const double ly = labels_top + static_cast<double>(slot) * label_h + 12.0;
        const double mx = x_of(report.avg_ranks[i]);
        const double label_x = left ? margin - 8.0 : width - margin + 8.0;
        const double turn_x = left ? margin - 4.0 : width - margin + 4.0;
        svg += "<polyline fill=\"none\" stroke=\"black\" stroke-width=\"1\" points=\"" +
               detail::fmt4(mx) + "," + detail::fmt4(axis_y) + " " + detail::fmt4(mx) + "," +
               detail::fmt4(ly - 4.0) + " " + detail::fmt4(turn_x) + "," + detail::fmt4(ly - 4.0) +
               "\"/>\n";
        svg += "<text x=\"" + detail::fmt4(label_x) + "\" y=\"" + detail::fmt4(ly) +
               "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"" +
               (left ? "end" : "start") + "\">" + report.models[i] + " (" +
               detail::fmt4(report.avg_ranks[i]) + ")</text>\n";
    }
    svg += "</svg>\n";
    return svg;
}

inline void render_cd_diagram(const RankReport& report, const std::filesystem::path& svg_path,
                              const std::filesystem::path& csv_path) {
    if (report.models.size() < 2) throw ConfigError("report has fewer than two models");
    write_file(svg_path, rank_report_to_svg(report));
    write_file(csv_path, rank_report_to_csv(report));
}

inline void render_cd_diagram(const RankReport& report, const std::filesystem::path& svg_path) {
    std::filesystem::path csv = svg_path;
    csv.replace_extension(".csv");
    render_cd_diagram(report, svg_path, csv);
}

}  // namespace rigopipe
