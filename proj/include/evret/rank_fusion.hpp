#pragma once

/**
 * Reciprocal Rank Fusion over per-query submission rows.
 *
 * Each image id appearing in any run receives
 *
 *     score(i) = sum over runs containing i of  1 / (rrf_k + rank_i)
 *
 * with 1-based ranks, so consistent high placement across runs beats a single
 * top spot. Pads carry no evidence and are stripped before scoring.
 */

#include <algorithm>
#include <map>
#include <string>
#include <unordered_set>
#include <vector>

#include "evret/common.hpp"
#include "evret/submission.hpp"

namespace evret {

inline constexpr double kDefaultRrfK = 60.0;

/// Fuse one query across runs; returns exactly `output_len` ids, padded with
/// `pad_token` when fewer unique ids exist. Ties on the fused score break by
/// ascending id, making output independent of run order.
inline std::vector<std::string> rrf_fuse(const std::vector<SubmissionTable>& runs, const std::string& query_id,
                                         double rrf_k, int output_len, const std::string& pad_token) {
    if (rrf_k <= 0.0) throw FusionError("rrf_k must be positive");
    if (output_len < 1) throw FusionError("output_len must be >= 1");
    if (runs.empty()) throw FusionError("no runs to fuse");

    // id -> ranks across runs. std::map keeps id iteration deterministic.
    std::map<std::string, std::vector<int>> ranks;
    for (const auto& run : runs) {
        if (!run.contains(query_id)) {
            throw FusionError("query \"" + query_id + "\" missing from one of the runs");
        }
        std::vector<std::string> ids = run.non_pad_ids(query_id);
        std::unordered_set<std::string> seen;
        for (std::size_t pos = 0; pos < ids.size(); ++pos) {
            if (!seen.insert(ids[pos]).second) {
                throw FusionError("duplicate id \"" + ids[pos] + "\" within one run for query \"" +
                                  query_id + "\"");
            }
            ranks[ids[pos]].push_back(static_cast<int>(pos) + 1);
        }
    }

    // Summing each id's terms in sorted-rank order makes the float total
    // independent of run order, so permutation invariance holds bit-exactly.
    std::vector<std::pair<double, const std::string*>> fused;
    fused.reserve(ranks.size());
    for (auto& [id, rank_list] : ranks) {
        std::sort(rank_list.begin(), rank_list.end());
        double score = 0.0;
        for (int r : rank_list) score += 1.0 / (rrf_k + static_cast<double>(r));
        fused.emplace_back(score, &id);
    }
    std::sort(fused.begin(), fused.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return *a.second < *b.second;
    });

    std::vector<std::string> out;
    out.reserve(static_cast<std::size_t>(output_len));
    for (const auto& [score, id] : fused) {
        if (static_cast<int>(out.size()) >= output_len) break;
        out.push_back(*id);
    }
    while (static_cast<int>(out.size()) < output_len) out.push_back(pad_token);
    return out;
}

/// Per-id fused scores for one query (diagnostics and tests).
inline std::map<std::string, double> rrf_scores(const std::vector<SubmissionTable>& runs,
                                                const std::string& query_id, double rrf_k) {
    std::map<std::string, std::vector<int>> ranks;
    for (const auto& run : runs) {
        if (!run.contains(query_id)) {
            throw FusionError("query \"" + query_id + "\" missing from one of the runs");
        }
        std::vector<std::string> ids = run.non_pad_ids(query_id);
        for (std::size_t pos = 0; pos < ids.size(); ++pos) {
            ranks[ids[pos]].push_back(static_cast<int>(pos) + 1);
        }
    }
    std::map<std::string, double> out;
    for (auto& [id, rank_list] : ranks) {
        std::sort(rank_list.begin(), rank_list.end());
        double score = 0.0;
        for (int r : rank_list) score += 1.0 / (rrf_k + static_cast<double>(r));
        out.emplace(id, score);
    }
    return out;
}

/// Fuse whole submissions. Every run must cover exactly the same query set;
/// the fused table preserves the first run's query order.
inline SubmissionTable fuse_submissions(const std::vector<SubmissionTable>& runs, double rrf_k, int output_len,
                                        const std::string& pad_token = "#") {
    if (runs.empty()) throw FusionError("no runs to fuse");
    const SubmissionTable& reference = runs.front();
    for (std::size_t i = 1; i < runs.size(); ++i) {
        for (const auto& row : reference.rows()) {
            if (!runs[i].contains(row.query_id)) {
                throw FusionError("query \"" + row.query_id + "\" missing from run " + std::to_string(i));
            }
        }
        for (const auto& row : runs[i].rows()) {
            if (!reference.contains(row.query_id)) {
                throw FusionError("query \"" + row.query_id + "\" missing from run 0");
            }
        }
    }

    SubmissionTable fused(output_len, pad_token);
    for (const auto& row : reference.rows()) {
        fused.add_row(row.query_id, rrf_fuse(runs, row.query_id, rrf_k, output_len, pad_token));
    }
    return fused;
}

}  // namespace evret
