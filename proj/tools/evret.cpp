// evret - event-centric caption-to-image retrieval engine, batch CLI.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "evret/common.hpp"
#include "evret/corpus.hpp"
#include "evret/metrics.hpp"
#include "evret/pipeline.hpp"
#include "evret/rank_fusion.hpp"
#include "evret/service.hpp"
#include "evret/submission.hpp"

namespace {

using namespace evret;

struct CommonOpts {
    std::string config_path;
    bool verbose = false;
    bool quiet = false;
};

PipelineConfig load_config(const CommonOpts& opts, bool require_corpus = true) {
    if (opts.config_path.empty()) throw ConfigError("--config is required for this subcommand");
    PipelineConfig cfg = PipelineConfig::load(opts.config_path);
    cfg.validate(require_corpus);
    return cfg;
}

void apply_log_level(const CommonOpts& opts) {
    if (opts.verbose) {
        set_log_level(LogLevel::debug);
    } else if (opts.quiet) {
        set_log_level(LogLevel::warn);
    }
}

int cmd_ingest(const CommonOpts& opts, const std::string& queries_path) {
    PipelineConfig cfg = load_config(opts);
    CorpusStore corpus = CorpusStore::ingest(cfg.corpus_path);
    std::printf("corpus ok: %zu articles, %zu images\n", corpus.article_count(), corpus.image_count());
    if (!queries_path.empty()) {
        std::vector<QueryCaption> queries = load_queries(queries_path);
        std::printf("queries ok: %zu captions\n", queries.size());
    }
    return 0;
}

int cmd_embed(const CommonOpts& opts, const std::string& out_dir) {
    PipelineConfig cfg = load_config(opts);
    CorpusStore corpus = CorpusStore::ingest(cfg.corpus_path);
    ProviderSet providers = make_providers(cfg);

    auto start = std::chrono::steady_clock::now();
    std::vector<IndexEntry> entries = embed_corpus(corpus, *providers.text, cfg.text_provider.max_chars);
    auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start);

    std::vector<std::string> ids;
    std::vector<float> vectors;
    ids.reserve(entries.size());
    vectors.reserve(entries.size() * static_cast<std::size_t>(cfg.text_provider.dim));
    for (auto& e : entries) {
        ids.push_back(std::move(e.item_id));
        vectors.insert(vectors.end(), e.vector.begin(), e.vector.end());
    }
    save_embedding_table(out_dir, cfg.text_provider.dim, ids, vectors);
    std::printf("embedded %zu articles (dim %d) in %lld ms -> %s\n", ids.size(), cfg.text_provider.dim,
                static_cast<long long>(ms.count()), out_dir.c_str());
    return 0;
}

int cmd_index(const std::string& embeddings_dir, const std::string& out_dir, const std::string& backend,
              const AnnParams& ann) {
    EmbeddingTable table = load_embedding_table(embeddings_dir);
    auto start = std::chrono::steady_clock::now();
    std::unique_ptr<VectorIndex> index = build_index(table.to_entries(), backend, ann);
    auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start);
    index->save(out_dir);
    std::printf("built %s index over %zu vectors (dim %d) in %lld ms -> %s\n", backend.c_str(), index->size(),
                index->dim(), static_cast<long long>(ms.count()), out_dir.c_str());
    return 0;
}

int cmd_retrieve(const CommonOpts& opts, const std::string& queries_path, const std::string& out_path,
                 const std::string& dump_dir, const std::string& index_dir_override) {
    PipelineConfig cfg = load_config(opts);
    if (!index_dir_override.empty()) cfg.index_dir = index_dir_override;
    std::vector<QueryCaption> queries = load_queries(queries_path);

    Pipeline pipeline(cfg);
    std::vector<QueryResult> results = pipeline.run_all(queries);
    SubmissionTable table = pipeline.to_submission(results);
    table.write_csv(out_path);
    std::printf("wrote %zu submission rows -> %s\n", table.size(), out_path.c_str());

    if (!dump_dir.empty()) {
        namespace fs = std::filesystem;
        fs::create_directories(dump_dir);
        write_articles_jsonl((fs::path(dump_dir) / "articles_stage1.jsonl").string(), results, false);
        write_articles_jsonl((fs::path(dump_dir) / "articles_reranked.jsonl").string(), results, true);
        write_candidates_jsonl((fs::path(dump_dir) / "candidates.jsonl").string(), results);
        std::printf("stage artifacts -> %s\n", dump_dir.c_str());
    }
    return 0;
}

int cmd_rerank_only(const CommonOpts& opts, const std::string& queries_path, const std::string& articles_path,
                    const std::string& out_path, int top_k) {
    PipelineConfig cfg = load_config(opts);
    CorpusStore corpus = CorpusStore::ingest(cfg.corpus_path);
    ProviderSet providers = make_providers(cfg);
    std::vector<QueryCaption> queries = load_queries(queries_path);
    std::vector<RankedList> stage1 = read_articles_jsonl(articles_path);

    std::unordered_map<std::string, const QueryCaption*> caption_of;
    for (const auto& q : queries) caption_of[q.query_id] = &q;

    int keep = top_k > 0 ? top_k : cfg.stage.top_articles;
    std::vector<QueryResult> results;
    results.reserve(stage1.size());
    for (const auto& list : stage1) {
        auto it = caption_of.find(list.query_id);
        if (it == caption_of.end()) {
            throw ConfigError("articles file names query \"" + list.query_id +
                              "\" which is absent from the query set");
        }
        QueryResult r;
        r.query_id = list.query_id;
        r.stage1_articles = list;
        r.reranked_articles = rerank_articles(list.query_id, it->second->caption, list, corpus,
                                              *providers.reranker, keep, cfg.rerank_instruct,
                                              cfg.rerank_provider.max_chars);
        results.push_back(std::move(r));
    }
    write_articles_jsonl(out_path, results, true);
    std::printf("reranked %zu queries (top %d) -> %s\n", results.size(), keep, out_path.c_str());
    return 0;
}

int cmd_fuse(const CommonOpts& opts, const std::vector<std::string>& run_paths, const std::string& out_path,
             double rrf_k_flag, int output_len, const std::string& pad_token) {
    double rrf_k = kDefaultRrfK;
    if (!opts.config_path.empty()) rrf_k = load_config(opts, /*require_corpus=*/false).rrf_k;
    if (rrf_k_flag > 0.0) rrf_k = rrf_k_flag;

    std::vector<SubmissionTable> runs;
    runs.reserve(run_paths.size());
    for (const auto& path : run_paths) runs.push_back(SubmissionTable::read_csv(path, pad_token));
    int width = output_len > 0 ? output_len : runs.front().output_len();

    SubmissionTable fused = fuse_submissions(runs, rrf_k, width, pad_token);
    fused.write_csv(out_path);
    std::printf("fused %zu runs (rrf_k=%g) over %zu queries -> %s\n", runs.size(), rrf_k, fused.size(),
                out_path.c_str());
    return 0;
}

int cmd_eval(const std::string& submission_path, const std::string& truth_path, const std::string& target_name,
             const std::string& ks_csv, const std::string& weights_path, const std::string& fit_rows_path,
             const std::string& json_out, const std::string& pad_token) {
    if (!fit_rows_path.empty()) {
        std::vector<LeaderboardRow> rows = load_leaderboard_rows(fit_rows_path);
        WeightFit fit = fit_overall_weights(rows);
        std::printf("fitted overall weights over %zu rows:\n", rows.size());
        for (const auto& [name, w] : fit.weights) std::printf("  %-5s %.6f\n", name.c_str(), w);
        std::printf("  rms error %.6f, max |error| %.6f\n", fit.rms_error, fit.max_abs_error);
        if (submission_path.empty()) return 0;
    }

    if (submission_path.empty() || truth_path.empty()) {
        throw ConfigError("eval requires --submission and --truth");
    }
    SubmissionTable sub = SubmissionTable::read_csv(submission_path, pad_token);
    GroundTruth truth = GroundTruth::load_csv(truth_path);
    EvalTarget target = EvalTarget::image;
    if (target_name == "article") {
        target = EvalTarget::article;
    } else if (target_name != "image") {
        throw ConfigError("--target must be image or article");
    }

    std::vector<int> ks;
    {
        std::stringstream ss(ks_csv);
        std::string cell;
        while (std::getline(ss, cell, ',')) ks.push_back(std::stoi(cell));
    }

    std::map<std::string, double> weights = default_overall_weights();
    if (!weights_path.empty()) {
        std::ifstream in(weights_path, std::ios::binary);
        if (!in) throw ConfigError("cannot open weights file: " + weights_path);
        nlohmann::json doc;
        in >> doc;
        weights.clear();
        for (const auto& [name, w] : doc.items()) weights[name] = w.get<double>();
    }

    MetricReport report = compute_report(sub, truth, ks, target, weights);
    std::printf("%zu queries evaluated (%s task)\n%s", sub.size(), target_name.c_str(),
                report.to_table().c_str());
    if (!json_out.empty()) {
        std::ofstream out(json_out, std::ios::binary);
        if (!out) throw ConfigError("cannot write " + json_out);
        nlohmann::json doc = report.to_json();
        doc["weights"] = weights;
        doc["queries"] = sub.size();
        out << doc.dump(2) << "\n";
    }
    return 0;
}

int cmd_serve(const CommonOpts& opts, const std::string& host, int port) {
    PipelineConfig cfg = load_config(opts);
    auto pipeline = std::make_shared<const Pipeline>(cfg);
    RetrievalService service(pipeline);
    service.run(host, port);  // blocks
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"evret - event-centric caption-to-image retrieval engine"};
    app.require_subcommand(1);

    CommonOpts common;
    app.add_option("-c,--config", common.config_path, "pipeline config (JSON)")->envname("EVRET_CONFIG");
    app.add_flag("-v,--verbose", common.verbose, "debug logging");
    app.add_flag("-q,--quiet", common.quiet, "warnings and errors only");

    // ingest
    std::string ingest_queries;
    CLI::App* ingest = app.add_subcommand("ingest", "validate a corpus (and optionally a query set)");
    ingest->add_option("--queries", ingest_queries, "query set JSONL to validate too");

    // embed
    std::string embed_out;
    CLI::App* embed = app.add_subcommand("embed", "embed all articles into a raw vector table");
    embed->add_option("-o,--out", embed_out, "output directory")->required();

    // index
    std::string index_embeddings, index_out, index_backend = "exact";
    AnnParams index_ann;
    CLI::App* index = app.add_subcommand("index", "build a search index from embedded vectors");
    index->add_option("--embeddings", index_embeddings, "directory written by `embed`")->required();
    index->add_option("-o,--out", index_out, "output index directory")->required();
    index->add_option("--backend", index_backend, "exact | ann")->check(CLI::IsMember({"exact", "ann"}));
    index->add_option("--max-degree", index_ann.max_degree, "ann graph degree");
    index->add_option("--build-beam", index_ann.build_beam, "ann construction beam");
    index->add_option("--search-beam", index_ann.search_beam, "ann query beam");

    // retrieve
    std::string retrieve_queries, retrieve_out, retrieve_dump, retrieve_index_dir;
    CLI::App* retrieve = app.add_subcommand("retrieve", "run the full four-stage pipeline");
    retrieve->add_option("--queries", retrieve_queries, "query set JSONL")->required();
    retrieve->add_option("-o,--out", retrieve_out, "submission CSV path")->required();
    retrieve->add_option("--dump-dir", retrieve_dump, "write per-stage JSONL artifacts here");
    retrieve->add_option("--index-dir", retrieve_index_dir, "override config index_dir");

    // rerank-only
    std::string ro_queries, ro_articles, ro_out;
    int ro_top_k = 0;
    CLI::App* rerank_only = app.add_subcommand("rerank-only", "rerank persisted stage-1 article lists");
    rerank_only->add_option("--queries", ro_queries, "query set JSONL")->required();
    rerank_only->add_option("--articles", ro_articles, "stage-1 articles JSONL")->required();
    rerank_only->add_option("-o,--out", ro_out, "reranked articles JSONL path")->required();
    rerank_only->add_option("--top-k", ro_top_k, "keep this many articles (default: stage.top_articles)");

    // fuse
    std::vector<std::string> fuse_runs;
    std::string fuse_out, fuse_pad = "#";
    double fuse_rrf_k = 0.0;
    int fuse_output_len = 0;
    CLI::App* fuse = app.add_subcommand("fuse", "ensemble submission runs with reciprocal rank fusion");
    fuse->add_option("runs", fuse_runs, "submission CSV files")->required()->expected(-1);
    fuse->add_option("-o,--out", fuse_out, "fused submission CSV path")->required();
    fuse->add_option("--rrf-k", fuse_rrf_k, "smoothing constant (overrides config)");
    fuse->add_option("--output-len", fuse_output_len, "fused row length (default: first run's width)");
    fuse->add_option("--pad-token", fuse_pad, "pad token (default '#')");

    // eval
    std::string eval_submission, eval_truth, eval_target = "image", eval_ks = "1,5,10";
    std::string eval_weights, eval_fit_rows, eval_json, eval_pad = "#";
    CLI::App* eval = app.add_subcommand("eval", "score a submission against ground truth");
    eval->add_option("--submission", eval_submission, "submission CSV");
    eval->add_option("--truth", eval_truth, "ground truth CSV (query_id,article_id,image_id)");
    eval->add_option("--target", eval_target, "image | article (default image)");
    eval->add_option("--ks", eval_ks, "recall cutoffs, comma separated (default 1,5,10)");
    eval->add_option("--weights", eval_weights, "overall-score weights JSON file");
    eval->add_option("--fit-weights", eval_fit_rows, "fit overall weights from a leaderboard rows CSV");
    eval->add_option("--json", eval_json, "also write the report as JSON here");
    eval->add_option("--pad-token", eval_pad, "pad token (default '#')");

    // serve
    std::string serve_host = "127.0.0.1";
    int serve_port = 8080;
    CLI::App* serve = app.add_subcommand("serve", "run the single-caption retrieval service");
    serve->add_option("--host", serve_host, "bind host (default 127.0.0.1)");
    serve->add_option("--port", serve_port, "bind port (default 8080, 0 = ephemeral)");

    CLI11_PARSE(app, argc, argv);
    apply_log_level(common);

    try {
        if (ingest->parsed()) return cmd_ingest(common, ingest_queries);
        if (embed->parsed()) return cmd_embed(common, embed_out);
        if (index->parsed()) return cmd_index(index_embeddings, index_out, index_backend, index_ann);
        if (retrieve->parsed()) {
            return cmd_retrieve(common, retrieve_queries, retrieve_out, retrieve_dump, retrieve_index_dir);
        }
        if (rerank_only->parsed()) return cmd_rerank_only(common, ro_queries, ro_articles, ro_out, ro_top_k);
        if (fuse->parsed()) return cmd_fuse(common, fuse_runs, fuse_out, fuse_rrf_k, fuse_output_len, fuse_pad);
        if (eval->parsed()) {
            return cmd_eval(eval_submission, eval_truth, eval_target, eval_ks, eval_weights, eval_fit_rows,
                            eval_json, eval_pad);
        }
        if (serve->parsed()) return cmd_serve(common, serve_host, serve_port);
    } catch (const evret::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
