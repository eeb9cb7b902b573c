#pragma once

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "evret/common.hpp"
#include "evret/corpus.hpp"
#include "evret/embedding.hpp"
#include "evret/http_provider.hpp"
#include "evret/image_stage.hpp"
#include "evret/rank_fusion.hpp"
#include "evret/rerank.hpp"
#include "evret/submission.hpp"
#include "evret/vector_index.hpp"

namespace evret {

/// Full engine configuration, loaded from one declarative JSON document.
/// Environment variables EVRET_TEXT_ENDPOINT / EVRET_IMAGE_ENDPOINT /
/// EVRET_RERANK_ENDPOINT override the provider endpoints and nothing else.
struct PipelineConfig {
    std::string corpus_path;
    std::string index_dir;          // empty: build in memory from the corpus
    std::string index_backend = "exact";
    AnnParams ann;

    ProviderSpec text_provider{ProviderKind::text_embed, "local-test", 64, 32, 8192, 0};
    ProviderSpec image_provider{ProviderKind::image_embed, "local-test", 64, 32, 8192, 0};
    ProviderSpec rerank_provider{ProviderKind::rerank, "local-test", 0, 8, 8192, 0};

    int stage1_pool = 50;
    StageConfig stage;
    double rrf_k = kDefaultRrfK;
    std::string rerank_instruct = std::string(kDefaultRerankInstruct);

    int max_in_flight = 4;
    RetryPolicy retry;
    std::uint64_t seed = 0;  // local-test providers
    bool fail_hard = false;  // abort on the first per-query provider failure
    int workers = 0;         // 0: hardware concurrency

    void validate(bool require_corpus = true) const {
        text_provider.validate();
        image_provider.validate();
        stage.validate();
        retry.validate();
        if (stage1_pool < stage.top_articles) {
            throw ConfigError("stage1_pool (" + std::to_string(stage1_pool) +
                              ") must be >= stage.top_articles (" + std::to_string(stage.top_articles) + ")");
        }
        if (stage1_pool < 1) throw ConfigError("stage1_pool must be >= 1");
        if (rrf_k <= 0.0) throw ConfigError("rrf_k must be positive");
        if (max_in_flight < 1) throw ConfigError("max_in_flight must be >= 1");
        if (workers < 0) throw ConfigError("workers must be >= 0");
        if (require_corpus) {
            if (corpus_path.empty()) throw ConfigError("config: \"corpus\" is required");
            if (!std::filesystem::exists(corpus_path)) {
                throw ConfigError("config: corpus file does not exist: " + corpus_path);
            }
        }
    }

    static PipelineConfig from_json(const nlohmann::json& doc) {
        try {
            return from_json_unchecked(doc);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("config: ") + e.what());
        }
    }

    static PipelineConfig load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw ConfigError("cannot open config file: " + path);
        nlohmann::json doc;
        try {
            in >> doc;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(path + ": " + e.what());
        }
        return from_json(doc);
    }

private:
    static PipelineConfig from_json_unchecked(const nlohmann::json& doc) {
        PipelineConfig cfg;
        cfg.corpus_path = doc.value("corpus", "");
        cfg.index_dir = doc.value("index_dir", "");
        cfg.index_backend = doc.value("index_backend", cfg.index_backend);
        cfg.seed = doc.value("seed", cfg.seed);
        cfg.stage1_pool = doc.value("stage1_pool", cfg.stage1_pool);
        cfg.rrf_k = doc.value("rrf_k", cfg.rrf_k);
        cfg.max_in_flight = doc.value("max_in_flight", cfg.max_in_flight);
        cfg.fail_hard = doc.value("fail_hard", cfg.fail_hard);
        cfg.workers = doc.value("workers", cfg.workers);
        cfg.rerank_instruct = doc.value("rerank_instruct", cfg.rerank_instruct);

        if (doc.contains("ann")) {
            const auto& ann = doc["ann"];
            cfg.ann.max_degree = ann.value("max_degree", cfg.ann.max_degree);
            cfg.ann.build_beam = ann.value("build_beam", cfg.ann.build_beam);
            cfg.ann.search_beam = ann.value("search_beam", cfg.ann.search_beam);
            cfg.ann.level_seed = ann.value("level_seed", cfg.ann.level_seed);
        }
        if (doc.contains("retry")) {
            const auto& retry = doc["retry"];
            cfg.retry.max_attempts = retry.value("max_attempts", cfg.retry.max_attempts);
            cfg.retry.initial_backoff_ms = retry.value("initial_backoff_ms", cfg.retry.initial_backoff_ms);
            cfg.retry.multiplier = retry.value("multiplier", cfg.retry.multiplier);
            cfg.retry.max_backoff_ms = retry.value("max_backoff_ms", cfg.retry.max_backoff_ms);
        }
        if (doc.contains("stage")) {
            const auto& stage = doc["stage"];
            cfg.stage.top_articles = stage.value("top_articles", cfg.stage.top_articles);
            cfg.stage.min_source_articles = stage.value("min_source_articles", cfg.stage.min_source_articles);
            cfg.stage.min_images = stage.value("min_images", cfg.stage.min_images);
            cfg.stage.per_article_cap = stage.value("per_article_cap", cfg.stage.per_article_cap);
            cfg.stage.output_len = stage.value("output_len", cfg.stage.output_len);
            cfg.stage.pad_token = stage.value("pad_token", cfg.stage.pad_token);
        }
        if (doc.contains("providers")) {
            const auto& providers = doc["providers"];
            auto read_provider = [&](const char* key, ProviderSpec& spec) {
                if (!providers.contains(key)) return;
                const auto& p = providers[key];
                spec.endpoint = p.value("endpoint", spec.endpoint);
                spec.dim = p.value("dim", spec.dim);
                spec.max_batch = p.value("max_batch", spec.max_batch);
                spec.max_chars = p.value("max_chars", spec.max_chars);
            };
            read_provider("text", cfg.text_provider);
            read_provider("image", cfg.image_provider);
            read_provider("rerank", cfg.rerank_provider);
        }
        cfg.text_provider.seed = cfg.seed;
        cfg.image_provider.seed = cfg.seed;
        apply_env_overrides(cfg);
        return cfg;
    }

    static void apply_env_overrides(PipelineConfig& cfg) {
        if (const char* v = std::getenv("EVRET_TEXT_ENDPOINT")) cfg.text_provider.endpoint = v;
        if (const char* v = std::getenv("EVRET_IMAGE_ENDPOINT")) cfg.image_provider.endpoint = v;
        if (const char* v = std::getenv("EVRET_RERANK_ENDPOINT")) cfg.rerank_provider.endpoint = v;
    }
};

// ---------------------------------------------------------------------------
// Provider factory
// ---------------------------------------------------------------------------

struct ProviderSet {
    std::unique_ptr<TextEmbedder> text;
    std::unique_ptr<ImageEmbedder> image;
    std::unique_ptr<Reranker> reranker;
    std::shared_ptr<InFlightLimiter> limiter;
};

inline ProviderSet make_providers(const PipelineConfig& cfg) {
    ProviderSet set;
    set.limiter = std::make_shared<InFlightLimiter>(cfg.max_in_flight);
    if (cfg.text_provider.is_local()) {
        set.text = std::make_unique<LocalHashEmbedder>(cfg.text_provider.dim, cfg.seed,
                                                       cfg.text_provider.max_chars);
    } else {
        set.text = std::make_unique<HttpTextEmbedder>(cfg.text_provider, cfg.retry, set.limiter);
    }
    if (cfg.image_provider.is_local()) {
        set.image = std::make_unique<LocalHashEmbedder>(cfg.image_provider.dim, cfg.seed,
                                                        cfg.image_provider.max_chars);
    } else {
        set.image = std::make_unique<HttpImageEmbedder>(cfg.image_provider, cfg.retry, set.limiter);
    }
    if (cfg.rerank_provider.is_local()) {
        set.reranker = std::make_unique<LocalOverlapReranker>();
    } else {
        set.reranker = std::make_unique<HttpReranker>(cfg.rerank_provider, cfg.retry, set.limiter);
    }
    return set;
}

// ---------------------------------------------------------------------------
// Embedding the corpus
// ---------------------------------------------------------------------------

/// Format and embed every article; entries come back in corpus order.
/// Providers batch internally per their spec, so the full list goes in once.
inline std::vector<IndexEntry> embed_corpus(const CorpusStore& corpus, TextEmbedder& embedder,
                                            int max_chars) {
    std::vector<std::string> docs;
    docs.reserve(corpus.article_count());
    for (const auto& article : corpus.articles()) {
        docs.push_back(format_document(article, static_cast<std::size_t>(max_chars)));
    }
    std::vector<EmbeddingVector> vectors = docs.empty() ? std::vector<EmbeddingVector>{} : embedder.embed_texts(docs);
    std::vector<IndexEntry> entries;
    entries.reserve(vectors.size());
    for (std::size_t i = 0; i < vectors.size(); ++i) {
        entries.push_back({corpus.articles()[i].article_id, std::move(vectors[i])});
    }
    return entries;
}

// ---------------------------------------------------------------------------
// Per-query provenance
// ---------------------------------------------------------------------------

struct QueryResult {
    std::string query_id;
    RankedList stage1_articles;    // cosine order from the index
    RankedList reranked_articles;  // relevance order, top-K
    std::vector<CandidateImage> candidates;
    std::vector<std::string> row;  // exactly output_len ids, padded
    bool rerank_fallback = false;
    bool scoring_fallback = false;
};

struct StageTimings {
    std::atomic<std::int64_t> embed_us{0};
    std::atomic<std::int64_t> search_us{0};
    std::atomic<std::int64_t> rerank_us{0};
    std::atomic<std::int64_t> image_us{0};
    std::atomic<std::int64_t> candidates_total{0};
};

// ---------------------------------------------------------------------------

/// The four-stage engine over one immutable corpus + index. Thread-safe for
/// concurrent run_query calls once constructed.
class Pipeline {
public:
    explicit Pipeline(PipelineConfig cfg)
        : cfg_(validated(std::move(cfg))), corpus_(CorpusStore::ingest(cfg_.corpus_path)) {
        providers_ = make_providers(cfg_);

        namespace fs = std::filesystem;
        if (!cfg_.index_dir.empty() && fs::exists(fs::path(cfg_.index_dir) / "manifest.json")) {
            auto start = std::chrono::steady_clock::now();
            index_ = load_index(cfg_.index_dir);
            log_info("loaded " + index_->backend() + " index (" + std::to_string(index_->size()) +
                     " vectors, dim " + std::to_string(index_->dim()) + ") in " + ms_since(start) + " ms");
        } else {
            auto start = std::chrono::steady_clock::now();
            std::vector<IndexEntry> entries =
                embed_corpus(corpus_, *providers_.text, cfg_.text_provider.max_chars);
            index_ = build_index(std::move(entries), cfg_.index_backend, cfg_.ann);
            log_info("built in-memory " + cfg_.index_backend + " index over " +
                     std::to_string(index_->size()) + " articles in " + ms_since(start) + " ms");
        }
        if (index_->size() > 0 && index_->dim() != providers_.text->dim()) {
            throw ConfigError("index dim " + std::to_string(index_->dim()) + " != text provider dim " +
                              std::to_string(providers_.text->dim()));
        }
    }

    const CorpusStore& corpus() const { return corpus_; }
    const VectorIndex& index() const { return *index_; }
    const PipelineConfig& config() const { return cfg_; }

    QueryResult run_query(const QueryCaption& query) const {
        QueryResult result;
        result.query_id = query.query_id;

        // Stage 1: dense retrieval
        EmbeddingVector caption_vec;
        try {
            auto t0 = now();
            caption_vec = providers_.text->embed_texts({query.caption}).at(0);
            timings_.embed_us += us_since(t0);
        } catch (const Error& e) {
            if (cfg_.fail_hard) {
                throw QueryError("caption embedding failed for query \"" + query.query_id + "\": " + e.what(),
                                 query.query_id);
            }
            log_error("query \"" + query.query_id + "\": caption embedding failed (" + e.what() +
                      "); emitting an all-pad row");
            result.row.assign(static_cast<std::size_t>(cfg_.stage.output_len), cfg_.stage.pad_token);
            return result;
        }
        {
            auto t0 = now();
            result.stage1_articles = index_->top_k(caption_vec, cfg_.stage1_pool, query.query_id);
            timings_.search_us += us_since(t0);
        }

        // Stage 2: prompted relevance rerank
        try {
            auto t0 = now();
            result.reranked_articles =
                rerank_articles(query.query_id, query.caption, result.stage1_articles, corpus_,
                                *providers_.reranker, cfg_.stage.top_articles, cfg_.rerank_instruct,
                                cfg_.rerank_provider.max_chars);
            timings_.rerank_us += us_since(t0);
        } catch (const QueryError& e) {
            if (cfg_.fail_hard) throw;
            log_error("query \"" + query.query_id + "\": rerank failed (" + std::string(e.what()) +
                      "); falling back to dense order");
            result.rerank_fallback = true;
            result.reranked_articles.query_id = query.query_id;
            std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(cfg_.stage.top_articles),
                                                     result.stage1_articles.entries.size());
            result.reranked_articles.entries.assign(result.stage1_articles.entries.begin(),
                                                    result.stage1_articles.entries.begin() +
                                                        static_cast<std::ptrdiff_t>(keep));
        }

        // Stage 3: collect, score, select
        result.candidates = collect_candidates(result.reranked_articles, corpus_, cfg_.stage);
        timings_.candidates_total += static_cast<std::int64_t>(result.candidates.size());
        if (!result.candidates.empty()) {
            try {
                auto t0 = now();
                result.candidates = score_candidates(query.caption, std::move(result.candidates),
                                                     *providers_.text, *providers_.image, corpus_);
                timings_.image_us += us_since(t0);
            } catch (const Error& e) {
                if (cfg_.fail_hard) {
                    throw QueryError("image scoring failed for query \"" + query.query_id + "\": " + e.what(),
                                     query.query_id);
                }
                log_error("query \"" + query.query_id + "\": image scoring failed (" + e.what() +
                          "); keeping collection order");
                result.scoring_fallback = true;
                for (auto& cand : result.candidates) cand.score = 0.0;
            }
        }
        result.row = rank_aware_select(result.candidates, cfg_.stage);
        return result;
    }

    /// Run every query on a worker pool. Results come back in input order,
    /// so submissions are byte-identical run to run.
    std::vector<QueryResult> run_all(const std::vector<QueryCaption>& queries) const {
        std::vector<QueryResult> results(queries.size());
        if (queries.empty()) return results;

        int workers = cfg_.workers > 0 ? cfg_.workers : static_cast<int>(std::thread::hardware_concurrency());
        workers = std::max(1, std::min<int>(workers, static_cast<int>(queries.size())));

        std::atomic<std::size_t> next{0};
        std::atomic<bool> failed{false};
        std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(workers));
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                while (true) {
                    std::size_t i = next.fetch_add(1);
                    if (i >= queries.size() || failed.load()) return;
                    try {
                        results[i] = run_query(queries[i]);
                    } catch (...) {
                        errors[static_cast<std::size_t>(w)] = std::current_exception();
                        failed.store(true);
                        return;
                    }
                }
            });
        }
        for (auto& t : pool) t.join();
        for (const auto& err : errors) {
            if (err) std::rethrow_exception(err);
        }
        log_timings(queries.size());
        return results;
    }

    SubmissionTable to_submission(const std::vector<QueryResult>& results) const {
        SubmissionTable table(cfg_.stage.output_len, cfg_.stage.pad_token);
        for (const auto& r : results) table.add_row(r.query_id, r.row);
        return table;
    }

    SubmissionTable run_retrieval(const std::vector<QueryCaption>& queries) const {
        return to_submission(run_all(queries));
    }

private:
    static PipelineConfig validated(PipelineConfig cfg) {
        cfg.validate();
        return cfg;
    }

    static std::chrono::steady_clock::time_point now() { return std::chrono::steady_clock::now(); }

    static std::int64_t us_since(std::chrono::steady_clock::time_point start) {
        return std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now() - start)
            .count();
    }

    static std::string ms_since(std::chrono::steady_clock::time_point start) {
        return std::to_string(us_since(start) / 1000);
    }

    void log_timings(std::size_t query_count) const {
        auto ms = [](std::int64_t us) { return std::to_string(us / 1000); };
        log_info("stage timings over " + std::to_string(query_count) + " queries: caption-embed " +
                 ms(timings_.embed_us) + " ms, dense-search " + ms(timings_.search_us) + " ms, rerank " +
                 ms(timings_.rerank_us) + " ms, image-score " + ms(timings_.image_us) +
                 " ms; candidate images scored: " + std::to_string(timings_.candidates_total.load()));
    }

    PipelineConfig cfg_;
    CorpusStore corpus_;
    std::unique_ptr<VectorIndex> index_;
    ProviderSet providers_;
    mutable StageTimings timings_;
};

// ---------------------------------------------------------------------------
// Intermediate stage artifacts (JSONL)
// ---------------------------------------------------------------------------

/// `{"query_id":q,"stage":"articles","items":[{"id":...,"score":...},...]}`
inline void write_articles_jsonl(const std::string& path, const std::vector<QueryResult>& results,
                                 bool reranked) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path);
    for (const auto& r : results) {
        const RankedList& list = reranked ? r.reranked_articles : r.stage1_articles;
        nlohmann::json items = nlohmann::json::array();
        for (const auto& e : list.entries) items.push_back({{"id", e.id}, {"score", e.score}});
        out << nlohmann::json{{"query_id", r.query_id}, {"stage", "articles"}, {"items", items}}.dump()
            << "\n";
    }
}

/// `{"query_id":q,"stage":"candidates","items":[{"id","score","article_rank"}]}`
inline void write_candidates_jsonl(const std::string& path, const std::vector<QueryResult>& results) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path);
    for (const auto& r : results) {
        nlohmann::json items = nlohmann::json::array();
        for (const auto& c : r.candidates) {
            items.push_back({{"id", c.image_id}, {"score", c.score}, {"article_rank", c.article_rank}});
        }
        out << nlohmann::json{{"query_id", r.query_id}, {"stage", "candidates"}, {"items", items}}.dump()
            << "\n";
    }
}

/// Read an "articles" JSONL back into per-query ranked lists (file order).
inline std::vector<RankedList> read_articles_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path);
    std::vector<RankedList> lists;
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
            throw ConfigError(path + " line " + std::to_string(line_no) + ": " + e.what());
        }
        if (doc.value("stage", "") != "articles") {
            throw ConfigError(path + " line " + std::to_string(line_no) + ": expected stage \"articles\"");
        }
        RankedList list;
        try {
            list.query_id = doc.at("query_id").get<std::string>();
            for (const auto& item : doc.at("items")) {
                list.entries.push_back({item.at("id").get<std::string>(), item.at("score").get<double>()});
            }
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(path + " line " + std::to_string(line_no) + ": " + e.what());
        }
        lists.push_back(std::move(list));
    }
    return lists;
}

}  // namespace evret
