#pragma once

#include <atomic>
#include <memory>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "evret/common.hpp"
#include "evret/http_provider.hpp"
#include "evret/pipeline.hpp"

namespace evret {

/// HTTP front end over a Pipeline. Endpoints:
///
///   POST /retrieve {"caption": str, "query_id"?: str}
///     -> {"query_id", "row": [output_len ids], "images": [provenance...],
///         "articles": [top-K with relevance scores]}
///   GET /health
///     -> {"status", "corpus": {...}, "index": {...}, "providers": {...}}
///
/// The pipeline state is immutable, so requests are served concurrently.
class RetrievalService {
public:
    explicit RetrievalService(std::shared_ptr<const Pipeline> pipeline) : pipeline_(std::move(pipeline)) {
        server_.Post("/retrieve", [this](const httplib::Request& req, httplib::Response& res) {
            handle_retrieve(req, res);
        });
        server_.Get("/health", [this](const httplib::Request&, httplib::Response& res) { handle_health(res); });
    }

    /// Bind and serve; blocks until stop(). Throws ConfigError when the port
    /// cannot be bound. port 0 picks an ephemeral port (see bound_port()).
    void run(const std::string& host, int port) {
        if (port == 0) {
            int picked = server_.bind_to_any_port(host);
            if (picked < 0) throw ConfigError("cannot bind " + host + " to an ephemeral port");
            bound_port_ = picked;
        } else {
            if (!server_.bind_to_port(host, port)) {
                throw ConfigError("cannot bind " + host + ":" + std::to_string(port));
            }
            bound_port_ = port;
        }
        log_info("serving on " + host + ":" + std::to_string(bound_port_.load()));
        server_.listen_after_bind();
    }

    /// run() on a background thread; returns once the server accepts requests.
    std::thread run_async(const std::string& host, int port) {
        std::thread t([this, host, port] {
            try {
                run(host, port);
            } catch (const Error& e) {
                log_error(std::string("service failed: ") + e.what());
            }
        });
        server_.wait_until_ready();
        return t;
    }

    void stop() { server_.stop(); }
    int bound_port() const { return bound_port_.load(); }

private:
    void handle_retrieve(const httplib::Request& req, httplib::Response& res) {
        nlohmann::json body;
        try {
            body = nlohmann::json::parse(req.body);
        } catch (const nlohmann::json::exception& e) {
            fail(res, 400, std::string("invalid JSON body: ") + e.what());
            return;
        }
        if (!body.contains("caption") || !body["caption"].is_string()) {
            fail(res, 400, "\"caption\" (string) is required");
            return;
        }
        QueryCaption query;
        query.caption = body["caption"].get<std::string>();
        query.query_id = body.value("query_id", "adhoc");
        if (query.caption.empty()) {
            fail(res, 400, "caption must be non-empty");
            return;
        }

        try {
            QueryResult result = pipeline_->run_query(query);
            nlohmann::json images = nlohmann::json::array();
            for (const auto& id : result.row) {
                if (id == pipeline_->config().stage.pad_token) break;
                for (const auto& cand : result.candidates) {
                    if (cand.image_id == id) {
                        images.push_back({{"image_id", cand.image_id},
                                          {"source_article_id", cand.source_article_id},
                                          {"article_rank", cand.article_rank},
                                          {"score", cand.score}});
                        break;
                    }
                }
            }
            nlohmann::json articles = nlohmann::json::array();
            for (const auto& e : result.reranked_articles.entries) {
                articles.push_back({{"article_id", e.id}, {"score", e.score}});
            }
            nlohmann::json payload{{"query_id", result.query_id},
                                   {"row", result.row},
                                   {"images", images},
                                   {"articles", articles},
                                   {"rerank_fallback", result.rerank_fallback},
                                   {"scoring_fallback", result.scoring_fallback}};
            res.set_content(payload.dump(), "application/json");
        } catch (const Error& e) {
            fail(res, 500, e.what());
        }
    }

    void handle_health(httplib::Response& res) {
        const PipelineConfig& cfg = pipeline_->config();
        auto provider_health = [&](const ProviderSpec& spec) -> nlohmann::json {
            nlohmann::json out{{"endpoint", spec.endpoint}};
            out["reachable"] = spec.is_local() ? true : probe_endpoint(spec.endpoint);
            return out;
        };
        nlohmann::json providers{{"text", provider_health(cfg.text_provider)},
                                 {"image", provider_health(cfg.image_provider)},
                                 {"rerank", provider_health(cfg.rerank_provider)}};
        bool all_reachable = true;
        for (const auto& [name, p] : providers.items()) {
            if (!p["reachable"].get<bool>()) all_reachable = false;
        }
        nlohmann::json payload{
            {"status", all_reachable ? "ok" : "degraded"},
            {"corpus", {{"articles", pipeline_->corpus().article_count()},
                        {"images", pipeline_->corpus().image_count()}}},
            {"index", {{"backend", pipeline_->index().backend()},
                       {"count", pipeline_->index().size()},
                       {"dim", pipeline_->index().dim()}}},
            {"providers", providers}};
        res.set_content(payload.dump(), "application/json");
    }

    static void fail(httplib::Response& res, int status, const std::string& message) {
        res.status = status;
        res.set_content(nlohmann::json{{"error", message}}.dump(), "application/json");
    }

    std::shared_ptr<const Pipeline> pipeline_;
    httplib::Server server_;
    std::atomic<int> bound_port_{-1};
};

}  // namespace evret
