#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "evret/common.hpp"

namespace evret {

struct SubmissionRow {
    std::string query_id;
    std::vector<std::string> ids;  // exactly output_len entries, pads as suffix
};

/// Fixed-width per-query result table, the external exchange format.
/// CSV shape: `query_id,id1,...,idN` (no header), pads written literally.
class SubmissionTable {
public:
    SubmissionTable(int output_len, std::string pad_token)
        : output_len_(output_len), pad_token_(std::move(pad_token)) {
        if (output_len_ < 1) throw ConfigError("submission output_len must be >= 1");
        if (pad_token_.empty()) throw ConfigError("submission pad_token must be non-empty");
    }

    int output_len() const { return output_len_; }
    const std::string& pad_token() const { return pad_token_; }
    const std::vector<SubmissionRow>& rows() const { return rows_; }
    std::size_t size() const { return rows_.size(); }

    bool contains(const std::string& query_id) const { return by_query_.count(query_id) != 0; }

    const SubmissionRow& row(const std::string& query_id) const {
        auto it = by_query_.find(query_id);
        if (it == by_query_.end()) throw MetricError("no submission row for query \"" + query_id + "\"");
        return rows_[it->second];
    }

    /// Validates row shape: exact length, unique non-pad ids, pads only as a
    /// suffix. Rows keep insertion order, which fixes the output byte order.
    void add_row(std::string query_id, std::vector<std::string> ids) {
        if (static_cast<int>(ids.size()) != output_len_) {
            throw ConfigError("row for query \"" + query_id + "\" has " + std::to_string(ids.size()) +
                              " ids, expected " + std::to_string(output_len_));
        }
        bool in_pads = false;
        std::unordered_set<std::string> seen;
        for (const auto& id : ids) {
            if (id == pad_token_) {
                in_pads = true;
                continue;
            }
            if (in_pads) {
                throw ConfigError("row for query \"" + query_id + "\" has a non-pad id after a pad");
            }
            if (id.empty()) {
                throw ConfigError("row for query \"" + query_id + "\" has an empty id cell");
            }
            if (!seen.insert(id).second) {
                throw ConfigError("row for query \"" + query_id + "\" repeats id \"" + id + "\"");
            }
        }
        if (by_query_.count(query_id)) {
            throw ConfigError("duplicate submission row for query \"" + query_id + "\"");
        }
        by_query_.emplace(query_id, rows_.size());
        rows_.push_back({std::move(query_id), std::move(ids)});
    }

    /// Non-pad prefix of a row.
    std::vector<std::string> non_pad_ids(const std::string& query_id) const {
        const SubmissionRow& r = row(query_id);
        std::vector<std::string> out;
        for (const auto& id : r.ids) {
            if (id == pad_token_) break;
            out.push_back(id);
        }
        return out;
    }

    void write_csv(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw ConfigError("cannot write submission file: " + path);
        write_csv(out);
    }

    void write_csv(std::ostream& out) const {
        for (const auto& r : rows_) {
            out << r.query_id;
            for (const auto& id : r.ids) out << ',' << id;
            out << '\n';
        }
    }

    static SubmissionTable read_csv(const std::string& path, const std::string& pad_token = "#") {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw ConfigError("cannot open submission file: " + path);

        std::vector<std::pair<std::string, std::vector<std::string>>> parsed;
        std::string line;
        std::size_t line_no = 0;
        int width = -1;
        while (std::getline(in, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;

            std::vector<std::string> cells;
            std::stringstream ss(line);
            std::string cell;
            while (std::getline(ss, cell, ',')) cells.push_back(cell);
            if (!line.empty() && line.back() == ',') cells.push_back("");
            if (cells.size() < 2) {
                throw ConfigError(path + " line " + std::to_string(line_no) + ": expected query_id plus ids");
            }
            int row_width = static_cast<int>(cells.size()) - 1;
            if (width == -1) {
                width = row_width;
            } else if (row_width != width) {
                throw ConfigError(path + " line " + std::to_string(line_no) + ": row width " +
                                  std::to_string(row_width) + " differs from " + std::to_string(width));
            }
            parsed.emplace_back(cells.front(), std::vector<std::string>(cells.begin() + 1, cells.end()));
        }
        if (parsed.empty()) throw ConfigError(path + ": no submission rows");

        SubmissionTable table(width, pad_token);
        for (auto& [query_id, ids] : parsed) {
            try {
                table.add_row(std::move(query_id), std::move(ids));
            } catch (const ConfigError& e) {
                throw ConfigError(path + ": " + e.what());
            }
        }
        return table;
    }

private:
    int output_len_;
    std::string pad_token_;
    std::vector<SubmissionRow> rows_;
    std::unordered_map<std::string, std::size_t> by_query_;
};

}  // namespace evret
