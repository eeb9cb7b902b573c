#pragma once

#include <fstream>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "evret/common.hpp"

namespace evret {

/// One news document. `image_ids` preserves the order images were listed in.
struct Article {
    std::string article_id;
    std::string title;
    std::string pub_date;  // display text, e.g. "October 14, 2023"; never parsed
    std::string content;
    std::vector<std::string> image_ids;
};

/// An image attached to an article. `uri` is an opaque locator; pixels are
/// never fetched by the engine itself.
struct ImageRecord {
    std::string image_id;
    std::string owner_article_id;
    std::string uri;
};

struct QueryCaption {
    std::string query_id;
    std::string caption;
};

namespace detail {

// Ids end up in CSV cells and one-per-line id tables, so separators and line
// breaks inside them cannot round-trip.
inline void check_id_charset(const std::string& id, const char* what, std::size_t line_no) {
    if (id.empty()) {
        throw CorpusError(std::string(what) + " is empty (line " + std::to_string(line_no) + ")");
    }
    if (id.find_first_of(",\r\n") != std::string::npos) {
        throw CorpusError(std::string(what) + " \"" + id +
                          "\" contains ',' or a line break (line " + std::to_string(line_no) + ")");
    }
}

}  // namespace detail

/// Immutable article/image store. Built once by `ingest`, then read-only:
/// any number of threads may call the lookup methods concurrently.
class CorpusStore {
public:
    /// Ingest a JSONL corpus file (one article object per line).
    /// Rejects malformed lines, duplicate ids, and broken image references,
    /// always naming the offending line or id.
    static CorpusStore ingest(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw CorpusError("cannot open corpus file: " + path);

        CorpusStore store;
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;

            nlohmann::json doc;
            try {
                doc = nlohmann::json::parse(line);
            } catch (const nlohmann::json::exception& e) {
                throw CorpusError("malformed corpus line " + std::to_string(line_no) + ": " + e.what());
            }
            store.add_article(doc, line_no);
        }
        store.articles_.shrink_to_fit();
        store.images_.shrink_to_fit();
        return store;
    }

    std::size_t article_count() const { return articles_.size(); }
    std::size_t image_count() const { return images_.size(); }

    /// Exact ingested record, or nullptr when the id is unknown (image ids
    /// live in a separate namespace and never resolve here).
    const Article* find_article(const std::string& article_id) const {
        auto it = article_by_id_.find(article_id);
        return it == article_by_id_.end() ? nullptr : &articles_[it->second];
    }

    const ImageRecord* find_image(const std::string& image_id) const {
        auto it = image_by_id_.find(image_id);
        return it == image_by_id_.end() ? nullptr : &images_[it->second];
    }

    /// Articles in file order (deterministic across ingests of the same bytes).
    const std::vector<Article>& articles() const { return articles_; }
    const std::vector<ImageRecord>& images() const { return images_; }

private:
    void add_article(const nlohmann::json& doc, std::size_t line_no) {
        if (!doc.is_object()) {
            throw CorpusError("corpus line " + std::to_string(line_no) + " is not an object");
        }
        Article art;
        try {
            art.article_id = doc.at("article_id").get<std::string>();
            art.title = doc.value("title", std::string());
            art.pub_date = doc.value("pub_date", std::string());
            art.content = doc.value("content", std::string());
        } catch (const nlohmann::json::exception& e) {
            throw CorpusError("corpus line " + std::to_string(line_no) + ": " + e.what());
        }
        detail::check_id_charset(art.article_id, "article_id", line_no);
        if (article_by_id_.count(art.article_id)) {
            throw CorpusError("duplicate article_id \"" + art.article_id + "\" (line " +
                              std::to_string(line_no) + ")");
        }

        if (doc.contains("images")) {
            const auto& images = doc.at("images");
            if (!images.is_array()) {
                throw CorpusError("corpus line " + std::to_string(line_no) + ": \"images\" must be an array");
            }
            for (const auto& entry : images) {
                ImageRecord rec;
                try {
                    rec.image_id = entry.at("image_id").get<std::string>();
                    rec.uri = entry.value("uri", std::string());
                } catch (const nlohmann::json::exception& e) {
                    throw CorpusError("corpus line " + std::to_string(line_no) +
                                      ": bad image entry: " + e.what());
                }
                detail::check_id_charset(rec.image_id, "image_id", line_no);
                if (image_by_id_.count(rec.image_id)) {
                    throw CorpusError("duplicate image_id \"" + rec.image_id + "\" (line " +
                                      std::to_string(line_no) + ")");
                }
                rec.owner_article_id = art.article_id;
                art.image_ids.push_back(rec.image_id);
                image_by_id_.emplace(rec.image_id, images_.size());
                images_.push_back(std::move(rec));
            }
        }

        // Global image-id uniqueness already implies per-article uniqueness.
        article_by_id_.emplace(art.article_id, articles_.size());
        articles_.push_back(std::move(art));
    }

    std::vector<Article> articles_;
    std::vector<ImageRecord> images_;
    std::unordered_map<std::string, std::size_t> article_by_id_;
    std::unordered_map<std::string, std::size_t> image_by_id_;
};

/// Load a query set (JSONL, one {"query_id","caption"} object per line).
inline std::vector<QueryCaption> load_queries(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CorpusError("cannot open query file: " + path);

    std::vector<QueryCaption> queries;
    std::unordered_map<std::string, std::size_t> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;

        nlohmann::json doc;
        try {
            doc = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw CorpusError("malformed query line " + std::to_string(line_no) + ": " + e.what());
        }
        QueryCaption q;
        try {
            q.query_id = doc.at("query_id").get<std::string>();
            q.caption = doc.at("caption").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw CorpusError("query line " + std::to_string(line_no) + ": " + e.what());
        }
        detail::check_id_charset(q.query_id, "query_id", line_no);
        if (q.caption.empty()) {
            throw CorpusError("query \"" + q.query_id + "\" has an empty caption (line " +
                              std::to_string(line_no) + ")");
        }
        if (!seen.emplace(q.query_id, line_no).second) {
            throw CorpusError("duplicate query_id \"" + q.query_id + "\" (line " +
                              std::to_string(line_no) + ")");
        }
        queries.push_back(std::move(q));
    }
    return queries;
}

}  // namespace evret
