#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "evret/pipeline.hpp"
#include "evret/metrics.hpp"
#include "support/fixtures.hpp"

using namespace evret;
using evtest::SyntheticCorpus;
using evtest::TempDir;

namespace {

PipelineConfig small_config(const TempDir& dir, const SyntheticCorpus& synth) {
    synth.write_corpus_jsonl(dir.file("corpus.jsonl"));
    PipelineConfig cfg;
    cfg.corpus_path = dir.file("corpus.jsonl");
    cfg.text_provider.dim = 64;
    cfg.image_provider.dim = 64;
    cfg.stage1_pool = 20;
    cfg.workers = 2;
    return cfg;
}

std::vector<QueryCaption> captions_of(const SyntheticCorpus& synth) {
    std::vector<QueryCaption> queries;
    for (const auto& q : synth.queries) queries.push_back({q.query_id, q.caption});
    return queries;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("config defaults, stage knobs and rrf_k come from the document") {
    nlohmann::json doc{{"corpus", "/nonexistent"}};
    PipelineConfig cfg = PipelineConfig::from_json(doc);
    CHECK(cfg.rrf_k == 60.0);
    CHECK(cfg.stage.top_articles == 10);
    CHECK(cfg.stage.min_source_articles == 3);
    CHECK(cfg.stage.min_images == 10);
    CHECK(cfg.stage.per_article_cap == 3);
    CHECK(cfg.stage.output_len == 10);
    CHECK(cfg.stage.pad_token == "#");
    CHECK(cfg.stage1_pool == 50);
    CHECK(cfg.retry.max_attempts == 3);

    nlohmann::json tuned = doc;
    tuned["rrf_k"] = 15.5;
    tuned["stage"] = {{"per_article_cap", 2}, {"output_len", 5}};
    PipelineConfig cfg2 = PipelineConfig::from_json(tuned);
    CHECK(cfg2.rrf_k == 15.5);
    CHECK(cfg2.stage.per_article_cap == 2);
    CHECK(cfg2.stage.output_len == 5);
    CHECK(cfg2.stage.top_articles == 10);  // untouched keys keep defaults
}

TEST_CASE("config validation rejects inconsistent settings") {
    PipelineConfig cfg;
    cfg.corpus_path = "/nonexistent-corpus.jsonl";
    CHECK_THROWS_AS(cfg.validate(), ConfigError);  // missing path

    cfg.corpus_path.clear();
    CHECK_THROWS_AS(cfg.validate(), ConfigError);  // corpus required

    cfg.stage1_pool = 5;  // < top_articles
    CHECK_THROWS_WITH_AS(cfg.validate(false), doctest::Contains("stage1_pool"), ConfigError);
}

TEST_CASE("environment variables override only provider endpoints") {
    setenv("EVRET_RERANK_ENDPOINT", "http://override:9999", 1);
    PipelineConfig cfg = PipelineConfig::from_json(nlohmann::json{
        {"corpus", "x"}, {"providers", {{"rerank", {{"endpoint", "local-test"}}}}}});
    unsetenv("EVRET_RERANK_ENDPOINT");
    CHECK(cfg.rerank_provider.endpoint == "http://override:9999");
    CHECK(cfg.text_provider.endpoint == "local-test");
}

TEST_CASE("planted queries come back with their article and image at rank 1") {
    TempDir dir("pipeline");
    SyntheticCorpus synth = SyntheticCorpus::make(200, 20, 3);
    Pipeline pipeline(small_config(dir, synth));

    std::vector<QueryResult> results = pipeline.run_all(captions_of(synth));
    REQUIRE(results.size() == 20);
    for (std::size_t i = 0; i < results.size(); ++i) {
        const auto& planted = synth.queries[i];
        REQUIRE(!results[i].reranked_articles.entries.empty());
        CHECK(results[i].reranked_articles.entries[0].id == planted.article_id);
        REQUIRE(!results[i].row.empty());
        CHECK(results[i].row[0] == planted.image_id);
        CHECK(results[i].rerank_fallback == false);
    }
}

TEST_CASE("submission rows satisfy the provenance invariant") {
    TempDir dir("pipeline");
    SyntheticCorpus synth = SyntheticCorpus::make(100, 10, 5);
    Pipeline pipeline(small_config(dir, synth));
    std::vector<QueryResult> results = pipeline.run_all(captions_of(synth));

    for (const auto& r : results) {
        std::set<std::string> top_articles;
        for (const auto& e : r.reranked_articles.entries) top_articles.insert(e.id);
        for (const auto& id : r.row) {
            if (id == "#") continue;
            const ImageRecord* rec = pipeline.corpus().find_image(id);
            REQUIRE(rec != nullptr);  // every non-pad id exists in the corpus
            CHECK(top_articles.count(rec->owner_article_id) == 1);
        }
    }
}

TEST_CASE("two runs over the same inputs are byte-identical") {
    TempDir dir("pipeline");
    SyntheticCorpus synth = SyntheticCorpus::make(120, 12, 9);
    PipelineConfig cfg = small_config(dir, synth);

    for (int run = 0; run < 2; ++run) {
        Pipeline pipeline(cfg);
        SubmissionTable table = pipeline.run_retrieval(captions_of(synth));
        table.write_csv(dir.file("run" + std::to_string(run) + ".csv"));
    }
    CHECK(slurp(dir.file("run0.csv")) == slurp(dir.file("run1.csv")));
    CHECK(!slurp(dir.file("run0.csv")).empty());
}

TEST_CASE("empty query lists produce empty submissions") {
    TempDir dir("pipeline");
    SyntheticCorpus synth = SyntheticCorpus::make(20, 2, 1);
    Pipeline pipeline(small_config(dir, synth));
    SubmissionTable table = pipeline.run_retrieval({});
    CHECK(table.size() == 0);
}

TEST_CASE("an imageless corpus yields all-pad rows") {
    TempDir dir("pipeline");
    std::ofstream out(dir.file("corpus.jsonl"), std::ios::binary);
    for (int i = 0; i < 5; ++i) {
        out << R"({"article_id":"a)" << i << R"(","title":"t","pub_date":"d","content":"body tokens )" << i
            << R"(","images":[]})"
            << "\n";
    }
    out.close();

    PipelineConfig cfg;
    cfg.corpus_path = dir.file("corpus.jsonl");
    cfg.stage1_pool = 10;
    Pipeline pipeline(cfg);
    std::vector<QueryResult> results = pipeline.run_all({{"q1", "body tokens 2"}});
    REQUIRE(results.size() == 1);
    CHECK(results[0].row == std::vector<std::string>(10, "#"));
    CHECK(results[0].candidates.empty());
}

TEST_CASE("rerank outages fall back to the dense order unless fail_hard") {
    TempDir dir("pipeline");
    SyntheticCorpus synth = SyntheticCorpus::make(30, 3, 2);
    PipelineConfig cfg = small_config(dir, synth);
    cfg.rerank_provider.endpoint = "http://127.0.0.1:1";  // nothing listens here
    cfg.retry.max_attempts = 1;
    cfg.retry.initial_backoff_ms = 0;

    SUBCASE("fallback mode keeps going with the cosine order") {
        Pipeline pipeline(cfg);
        std::vector<QueryResult> results = pipeline.run_all(captions_of(synth));
        REQUIRE(results.size() == 3);
        for (std::size_t i = 0; i < results.size(); ++i) {
            CHECK(results[i].rerank_fallback);
            REQUIRE(!results[i].reranked_articles.entries.empty());
            // dense stage already ranks the planted article first
            CHECK(results[i].reranked_articles.entries[0].id == synth.queries[i].article_id);
            CHECK(results[i].row[0] == synth.queries[i].image_id);
        }
    }

    SUBCASE("fail_hard aborts with the query id") {
        cfg.fail_hard = true;
        cfg.workers = 1;
        Pipeline pipeline(cfg);
        CHECK_THROWS_AS(pipeline.run_all(captions_of(synth)), QueryError);
    }
}

TEST_CASE("pipeline can load a prebuilt index directory") {
    TempDir dir("pipeline");
    SyntheticCorpus synth = SyntheticCorpus::make(50, 5, 4);
    PipelineConfig cfg = small_config(dir, synth);

    // build + persist the index the way the CLI embed/index steps do
    CorpusStore corpus = CorpusStore::ingest(cfg.corpus_path);
    LocalHashEmbedder embedder(cfg.text_provider.dim, cfg.seed, cfg.text_provider.max_chars);
    auto index = build_index(embed_corpus(corpus, embedder, cfg.text_provider.max_chars), "exact");
    index->save(dir.file("index"));

    cfg.index_dir = dir.file("index");
    Pipeline pipeline(cfg);
    CHECK(pipeline.index().backend() == "exact");
    std::vector<QueryResult> results = pipeline.run_all(captions_of(synth));
    CHECK(results[0].row[0] == synth.queries[0].image_id);
}

TEST_CASE("index/provider dim mismatch is caught at construction") {
    TempDir dir("pipeline");
    SyntheticCorpus synth = SyntheticCorpus::make(10, 1, 4);
    PipelineConfig cfg = small_config(dir, synth);

    CorpusStore corpus = CorpusStore::ingest(cfg.corpus_path);
    LocalHashEmbedder embedder(32, 0, 8192);  // dim 32, config says 64
    auto index = build_index(embed_corpus(corpus, embedder, 8192), "exact");
    index->save(dir.file("index32"));

    cfg.index_dir = dir.file("index32");
    CHECK_THROWS_WITH_AS([&] { Pipeline p(cfg); }(), doctest::Contains("dim"), ConfigError);
}

TEST_CASE("stage artifacts round-trip through jsonl") {
    TempDir dir("pipeline");
    SyntheticCorpus synth = SyntheticCorpus::make(40, 4, 8);
    Pipeline pipeline(small_config(dir, synth));
    std::vector<QueryResult> results = pipeline.run_all(captions_of(synth));

    write_articles_jsonl(dir.file("stage1.jsonl"), results, false);
    write_articles_jsonl(dir.file("reranked.jsonl"), results, true);
    write_candidates_jsonl(dir.file("cands.jsonl"), results);

    std::vector<RankedList> stage1 = read_articles_jsonl(dir.file("stage1.jsonl"));
    REQUIRE(stage1.size() == results.size());
    for (std::size_t i = 0; i < stage1.size(); ++i) {
        CHECK(stage1[i].query_id == results[i].query_id);
        REQUIRE(stage1[i].entries.size() == results[i].stage1_articles.entries.size());
        for (std::size_t j = 0; j < stage1[i].entries.size(); ++j) {
            CHECK(stage1[i].entries[j].id == results[i].stage1_articles.entries[j].id);
            CHECK(stage1[i].entries[j].score ==
                  doctest::Approx(results[i].stage1_articles.entries[j].score).epsilon(1e-12));
        }
    }

    // candidates file carries stage + article_rank fields
    std::ifstream in(dir.file("cands.jsonl"), std::ios::binary);
    std::string line;
    REQUIRE(std::getline(in, line));
    nlohmann::json doc = nlohmann::json::parse(line);
    CHECK(doc["stage"] == "candidates");
    REQUIRE(doc["items"].is_array());
    if (!doc["items"].empty()) CHECK(doc["items"][0].contains("article_rank"));
}

TEST_CASE("full evaluation over a planted corpus scores perfectly") {
    TempDir dir("pipeline");
    SyntheticCorpus synth = SyntheticCorpus::make(150, 15, 21);
    Pipeline pipeline(small_config(dir, synth));
    SubmissionTable table = pipeline.run_retrieval(captions_of(synth));

    synth.write_truth_csv(dir.file("truth.csv"));
    GroundTruth truth = GroundTruth::load_csv(dir.file("truth.csv"));
    MetricReport report = compute_report(table, truth);
    CHECK(report.recall_at.at(1) == 1.0);
    CHECK(report.mrr == 1.0);
    CHECK(report.map_score == 1.0);
}
