#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "evret/common.hpp"
#include "evret/submission.hpp"

namespace evret {

/// Which truth column a submission's ids are checked against.
enum class EvalTarget { article, image };

/// One relevant article and one relevant image per query.
class GroundTruth {
public:
    struct Entry {
        std::string article_id;
        std::string image_id;
    };

    /// CSV `query_id,article_id,image_id`, optional literal header line.
    static GroundTruth load_csv(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw MetricError("cannot open ground-truth file: " + path);

        GroundTruth truth;
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            if (line_no == 1 && line == "query_id,article_id,image_id") continue;

            std::stringstream ss(line);
            std::string query_id, article_id, image_id;
            if (!std::getline(ss, query_id, ',') || !std::getline(ss, article_id, ',') ||
                !std::getline(ss, image_id, ',')) {
                throw MetricError(path + " line " + std::to_string(line_no) +
                                  ": expected query_id,article_id,image_id");
            }
            if (!truth.by_query_.emplace(query_id, Entry{article_id, image_id}).second) {
                throw MetricError(path + " line " + std::to_string(line_no) + ": duplicate query_id \"" +
                                  query_id + "\"");
            }
        }
        return truth;
    }

    void add(const std::string& query_id, Entry entry) { by_query_[query_id] = std::move(entry); }

    const Entry* find(const std::string& query_id) const {
        auto it = by_query_.find(query_id);
        return it == by_query_.end() ? nullptr : &it->second;
    }

    std::size_t size() const { return by_query_.size(); }

private:
    std::unordered_map<std::string, Entry> by_query_;
};

namespace detail {

inline const std::string& relevant_id(const GroundTruth::Entry& entry, EvalTarget target) {
    return target == EvalTarget::article ? entry.article_id : entry.image_id;
}

/// 1-based rank of the relevant id among the row's non-pad entries, or 0 when
/// absent. Pads never count as ranking positions.
inline int relevant_rank(const SubmissionTable& sub, const SubmissionRow& row, const std::string& relevant) {
    int rank = 0;
    for (const auto& id : row.ids) {
        if (id == sub.pad_token()) break;
        ++rank;
        if (id == relevant) return rank;
    }
    return 0;
}

inline const GroundTruth::Entry& require_truth(const GroundTruth& truth, const std::string& query_id) {
    const GroundTruth::Entry* entry = truth.find(query_id);
    if (entry == nullptr) {
        throw MetricError("query \"" + query_id + "\" has no ground-truth entry");
    }
    return *entry;
}

}  // namespace detail

/// Fraction of queries whose relevant id appears within the top-k non-pad
/// entries of their row.
inline double recall_at_k(const SubmissionTable& sub, const GroundTruth& truth, int k,
                          EvalTarget target = EvalTarget::image) {
    if (k < 1) throw MetricError("recall_at_k: k must be >= 1");
    if (sub.rows().empty()) return 0.0;
    std::size_t hits = 0;
    for (const auto& row : sub.rows()) {
        const auto& entry = detail::require_truth(truth, row.query_id);
        int rank = detail::relevant_rank(sub, row, detail::relevant_id(entry, target));
        if (rank >= 1 && rank <= k) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(sub.rows().size());
}

/// Mean reciprocal rank; a query whose relevant id is absent contributes 0.
inline double mrr(const SubmissionTable& sub, const GroundTruth& truth, EvalTarget target = EvalTarget::image) {
    if (sub.rows().empty()) return 0.0;
    double total = 0.0;
    for (const auto& row : sub.rows()) {
        const auto& entry = detail::require_truth(truth, row.query_id);
        int rank = detail::relevant_rank(sub, row, detail::relevant_id(entry, target));
        if (rank >= 1) total += 1.0 / static_cast<double>(rank);
    }
    return total / static_cast<double>(sub.rows().size());
}

/// Mean average precision, computed as a genuine AP sweep (precision at each
/// relevant hit, divided by the relevant count). With exactly one relevant
/// item per query this reduces to 1/rank, so it equals mrr() exactly.
inline double map_single_relevant(const SubmissionTable& sub, const GroundTruth& truth,
                                  EvalTarget target = EvalTarget::image) {
    if (sub.rows().empty()) return 0.0;
    double total = 0.0;
    for (const auto& row : sub.rows()) {
        const auto& entry = detail::require_truth(truth, row.query_id);
        const std::string& relevant = detail::relevant_id(entry, target);
        int position = 0;
        int hits = 0;
        double precision_sum = 0.0;
        for (const auto& id : row.ids) {
            if (id == sub.pad_token()) break;
            ++position;
            if (id == relevant) {
                ++hits;
                precision_sum += static_cast<double>(hits) / static_cast<double>(position);
            }
        }
        const int relevant_count = 1;
        total += precision_sum / relevant_count;
    }
    return total / static_cast<double>(sub.rows().size());
}

// ---------------------------------------------------------------------------
// Reports and the overall score
// ---------------------------------------------------------------------------

struct MetricReport {
    std::map<int, double> recall_at;
    double map_score = 0.0;
    double mrr = 0.0;
    double overall = 0.0;

    nlohmann::json to_json() const {
        nlohmann::json recall = nlohmann::json::object();
        for (const auto& [k, v] : recall_at) recall[std::to_string(k)] = v;
        return nlohmann::json{{"recall", recall}, {"mAP", map_score}, {"MRR", mrr}, {"overall", overall}};
    }

    std::string to_table() const {
        std::string out;
        char buf[64];
        auto row = [&](const std::string& name, double value) {
            std::snprintf(buf, sizeof(buf), "  %-8s %.4f\n", name.c_str(), value);
            out += buf;
        };
        row("mAP", map_score);
        row("MRR", mrr);
        for (const auto& [k, v] : recall_at) row("R@" + std::to_string(k), v);
        row("Overall", overall);
        return out;
    }
};

/// The challenge's published "overall" column has no public formula, so the
/// combination is configuration. The shipped default is a constrained
/// least-squares fit to publicly reported leaderboard rows (see
/// fit_overall_weights); treat it as an approximation, not ground truth.
inline const std::map<std::string, double>& default_overall_weights() {
    static const std::map<std::string, double> weights{
        {"mAP", 0.4635085}, {"MRR", 0.4635085}, {"R@10", 0.072983}};
    return weights;
}

/// Weighted sum of named metrics. Weights must be non-negative and sum to 1.
/// Known names: "mAP", "MRR", and "R@k" for every k present in the report.
inline double overall_score(const MetricReport& report, const std::map<std::string, double>& weights) {
    double total_weight = 0.0;
    double score = 0.0;
    for (const auto& [name, weight] : weights) {
        if (weight < 0.0) throw MetricError("overall weight for " + name + " is negative");
        total_weight += weight;
        double value = 0.0;
        if (name == "mAP") {
            value = report.map_score;
        } else if (name == "MRR") {
            value = report.mrr;
        } else if (name.size() > 2 && name.rfind("R@", 0) == 0) {
            int k = 0;
            try {
                k = std::stoi(name.substr(2));
            } catch (const std::exception&) {
                throw MetricError("unknown metric name \"" + name + "\"");
            }
            auto it = report.recall_at.find(k);
            if (it == report.recall_at.end()) {
                throw MetricError("report has no recall at k=" + std::to_string(k));
            }
            value = it->second;
        } else {
            throw MetricError("unknown metric name \"" + name + "\"");
        }
        score += weight * value;
    }
    if (std::fabs(total_weight - 1.0) > 1e-9) {
        throw MetricError("overall weights sum to " + std::to_string(total_weight) + ", expected 1");
    }
    return score;
}

inline MetricReport compute_report(const SubmissionTable& sub, const GroundTruth& truth,
                                   const std::vector<int>& ks = {1, 5, 10},
                                   EvalTarget target = EvalTarget::image,
                                   const std::map<std::string, double>& weights = default_overall_weights()) {
    MetricReport report;
    for (int k : ks) report.recall_at[k] = recall_at_k(sub, truth, k, target);
    report.map_score = map_single_relevant(sub, truth, target);
    report.mrr = mrr(sub, truth, target);
    report.overall = overall_score(report, weights);
    return report;
}

// ---------------------------------------------------------------------------
// Overall-weight fitting
// ---------------------------------------------------------------------------

/// Feature order used by the fitting utility.
inline const std::array<std::string, 5>& overall_feature_names() {
    static const std::array<std::string, 5> names{"mAP", "MRR", "R@1", "R@5", "R@10"};
    return names;
}

/// One leaderboard row: the five metrics plus the published overall score.
struct LeaderboardRow {
    std::array<double, 5> metrics{};  // mAP, MRR, R@1, R@5, R@10
    double overall = 0.0;
};

struct WeightFit {
    std::map<std::string, double> weights;
    std::vector<double> residuals;  // prediction - published, per row
    double rms_error = 0.0;
    double max_abs_error = 0.0;
};

namespace detail {

// Gaussian elimination with partial pivoting; nullopt when singular.
inline std::optional<std::vector<double>> solve_linear(std::vector<std::vector<double>> a,
                                                       std::vector<double> b) {
    const std::size_t n = b.size();
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < n; ++r) {
            if (std::fabs(a[r][col]) > std::fabs(a[pivot][col])) pivot = r;
        }
        if (std::fabs(a[pivot][col]) < 1e-12) return std::nullopt;
        std::swap(a[col], a[pivot]);
        std::swap(b[col], b[pivot]);
        for (std::size_t r = 0; r < n; ++r) {
            if (r == col) continue;
            double factor = a[r][col] / a[col][col];
            for (std::size_t c = col; c < n; ++c) a[r][c] -= factor * a[col][c];
            b[r] -= factor * b[col];
        }
    }
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = b[i] / a[i][i];
    return x;
}

}  // namespace detail

/// Fit non-negative, sum-to-one weights minimizing the squared error of
/// `metrics · w` against the published overall column.
///
/// Identical feature columns (mAP and MRR coincide on every published row)
/// are collapsed before solving and their fitted weight is split equally.
/// The feasible optimum is found by enumerating active sets: with five
/// features that is at most 31 small equality-constrained solves.
inline WeightFit fit_overall_weights(const std::vector<LeaderboardRow>& rows) {
    const std::size_t n_features = 5;
    if (rows.size() < 2) throw MetricError("fit_overall_weights: need at least 2 rows");

    // group bit-identical columns
    std::vector<std::vector<std::size_t>> groups;
    std::vector<int> group_of(n_features, -1);
    for (std::size_t f = 0; f < n_features; ++f) {
        for (std::size_t g = 0; g < groups.size(); ++g) {
            std::size_t rep = groups[g].front();
            bool same = true;
            for (const auto& row : rows) {
                if (row.metrics[f] != row.metrics[rep]) {
                    same = false;
                    break;
                }
            }
            if (same) {
                group_of[f] = static_cast<int>(g);
                groups[g].push_back(f);
                break;
            }
        }
        if (group_of[f] == -1) {
            group_of[f] = static_cast<int>(groups.size());
            groups.push_back({f});
        }
    }

    const std::size_t m = groups.size();
    auto feature = [&](const LeaderboardRow& row, std::size_t g) { return row.metrics[groups[g].front()]; };

    double best_sse = std::numeric_limits<double>::infinity();
    std::vector<double> best_w;

    for (unsigned mask = 1; mask < (1u << m); ++mask) {
        std::vector<std::size_t> active;
        for (std::size_t g = 0; g < m; ++g) {
            if (mask & (1u << g)) active.push_back(g);
        }
        const std::size_t a = active.size();

        // KKT system for min ||Aw-b||^2 s.t. sum(w)=1 on the active features
        std::vector<std::vector<double>> kkt(a + 1, std::vector<double>(a + 1, 0.0));
        std::vector<double> rhs(a + 1, 0.0);
        for (std::size_t i = 0; i < a; ++i) {
            for (std::size_t j = 0; j < a; ++j) {
                double acc = 0.0;
                for (const auto& row : rows) acc += feature(row, active[i]) * feature(row, active[j]);
                kkt[i][j] = acc;
            }
            kkt[i][i] += 1e-12;
            double acc = 0.0;
            for (const auto& row : rows) acc += feature(row, active[i]) * row.overall;
            rhs[i] = acc;
            kkt[i][a] = 1.0;
            kkt[a][i] = 1.0;
        }
        rhs[a] = 1.0;

        auto solution = detail::solve_linear(kkt, rhs);
        if (!solution) continue;
        bool feasible = true;
        for (std::size_t i = 0; i < a; ++i) {
            if ((*solution)[i] < -1e-12) {
                feasible = false;
                break;
            }
        }
        if (!feasible) continue;

        std::vector<double> w(m, 0.0);
        for (std::size_t i = 0; i < a; ++i) w[active[i]] = std::max(0.0, (*solution)[i]);
        double sse = 0.0;
        for (const auto& row : rows) {
            double pred = 0.0;
            for (std::size_t g = 0; g < m; ++g) pred += w[g] * feature(row, g);
            double r = pred - row.overall;
            sse += r * r;
        }
        if (sse < best_sse) {
            best_sse = sse;
            best_w = w;
        }
    }
    if (best_w.empty()) throw MetricError("fit_overall_weights: no feasible weights found");

    WeightFit fit;
    for (std::size_t g = 0; g < m; ++g) {
        double split = best_w[g] / static_cast<double>(groups[g].size());
        for (std::size_t f : groups[g]) fit.weights[overall_feature_names()[f]] = split;
    }
    for (const auto& row : rows) {
        double pred = 0.0;
        for (std::size_t f = 0; f < n_features; ++f) {
            pred += fit.weights.at(overall_feature_names()[f]) * row.metrics[f];
        }
        double r = pred - row.overall;
        fit.residuals.push_back(r);
        fit.max_abs_error = std::max(fit.max_abs_error, std::fabs(r));
    }
    fit.rms_error = std::sqrt(best_sse / static_cast<double>(rows.size()));
    return fit;
}

/// CSV `mAP,MRR,R@1,R@5,R@10,overall` (optional header) for the fit utility.
inline std::vector<LeaderboardRow> load_leaderboard_rows(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MetricError("cannot open leaderboard rows file: " + path);
    std::vector<LeaderboardRow> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line_no == 1 && line.find("mAP") != std::string::npos) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> values;
        while (std::getline(ss, cell, ',')) {
            try {
                values.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw MetricError(path + " line " + std::to_string(line_no) + ": bad number \"" + cell + "\"");
            }
        }
        if (values.size() != 6) {
            throw MetricError(path + " line " + std::to_string(line_no) + ": expected 6 columns");
        }
        LeaderboardRow row;
        for (std::size_t i = 0; i < 5; ++i) row.metrics[i] = values[i];
        row.overall = values[5];
        rows.push_back(row);
    }
    return rows;
}

}  // namespace evret
