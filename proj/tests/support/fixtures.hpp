#pragma once

// Shared test fixtures: temp directories and a deterministic synthetic
// corpus with planted caption -> article -> image chains.

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace evtest {

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        namespace fs = std::filesystem;
        std::random_device rd;
        path_ = fs::temp_directory_path() / ("evret-" + tag + "-" + std::to_string(rd()));
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

struct PlantedQuery {
    std::string query_id;
    std::string caption;     // verbatim content of the target article
    std::string article_id;  // ground truth
    std::string image_id;    // ground truth (the article's first image)
};

struct SyntheticArticle {
    std::string article_id;
    std::string title;
    std::string pub_date;
    std::string content;
    std::vector<std::pair<std::string, std::string>> images;  // (image_id, uri)
};

/// Synthetic corpus: every article gets its own token vocabulary, so dense
/// retrieval over the token-hash embedder behaves like retrieval over
/// distinctive real documents. For the first `n_planted` articles the first
/// image's id equals the article content, which makes that image's local-test
/// embedding identical to the caption embedding.
struct SyntheticCorpus {
    std::vector<SyntheticArticle> articles;
    std::vector<PlantedQuery> queries;

    static SyntheticCorpus make(std::size_t n_articles, std::size_t n_planted, unsigned seed,
                                std::size_t content_tokens = 24, int max_extra_images = 4) {
        SyntheticCorpus corpus;
        std::mt19937 rng(seed);
        std::uniform_int_distribution<int> extra_images(1, max_extra_images);

        corpus.articles.reserve(n_articles);
        for (std::size_t i = 0; i < n_articles; ++i) {
            SyntheticArticle art;
            char buf[32];
            std::snprintf(buf, sizeof(buf), "a%05zu", i);
            art.article_id = buf;
            art.title = "headline-" + std::to_string(i) + " region-" + std::to_string(i % 7);
            art.pub_date = "March " + std::to_string(1 + i % 28) + ", 202" + std::to_string(i % 5);

            std::string content;
            for (std::size_t t = 0; t < content_tokens; ++t) {
                if (t) content += ' ';
                content += "ev" + std::to_string(i) + "w" + std::to_string(t);
            }
            art.content = content;

            if (i < n_planted) {
                art.images.emplace_back(content, "synthetic://planted/" + art.article_id);
            }
            int extra = extra_images(rng);
            for (int e = 0; e < extra; ++e) {
                std::string img_id = "img-" + std::to_string(i) + "-" + std::to_string(e);
                art.images.emplace_back(img_id, "synthetic://img/" + img_id);
            }
            corpus.articles.push_back(std::move(art));
        }

        corpus.queries.reserve(n_planted);
        for (std::size_t i = 0; i < n_planted; ++i) {
            PlantedQuery q;
            char buf[32];
            std::snprintf(buf, sizeof(buf), "q%04zu", i);
            q.query_id = buf;
            q.caption = corpus.articles[i].content;
            q.article_id = corpus.articles[i].article_id;
            q.image_id = corpus.articles[i].images.front().first;
            corpus.queries.push_back(std::move(q));
        }
        return corpus;
    }

    void write_corpus_jsonl(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        for (const auto& art : articles) {
            nlohmann::json images = nlohmann::json::array();
            for (const auto& [id, uri] : art.images) images.push_back({{"image_id", id}, {"uri", uri}});
            out << nlohmann::json{{"article_id", art.article_id},
                                  {"title", art.title},
                                  {"pub_date", art.pub_date},
                                  {"content", art.content},
                                  {"images", images}}
                       .dump()
                << "\n";
        }
    }

    void write_queries_jsonl(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        for (const auto& q : queries) {
            out << nlohmann::json{{"query_id", q.query_id}, {"caption", q.caption}}.dump() << "\n";
        }
    }

    void write_truth_csv(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        out << "query_id,article_id,image_id\n";
        for (const auto& q : queries) {
            out << q.query_id << ',' << q.article_id << ',' << q.image_id << "\n";
        }
    }
};

}  // namespace evtest
