#pragma once

#include <chrono>
#include <memory>
#include <semaphore>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "evret/common.hpp"
#include "evret/embedding.hpp"
#include "evret/rerank.hpp"

namespace evret {

/// Bounded exponential backoff between remote attempts.
struct RetryPolicy {
    int max_attempts = 3;
    int initial_backoff_ms = 100;
    double multiplier = 2.0;
    int max_backoff_ms = 5000;

    void validate() const {
        if (max_attempts < 1) throw ConfigError("retry max_attempts must be >= 1");
        if (initial_backoff_ms < 0) throw ConfigError("retry initial_backoff_ms must be >= 0");
        if (multiplier < 1.0) throw ConfigError("retry multiplier must be >= 1");
    }
};

/// Caps concurrent in-flight remote requests across all provider clients.
class InFlightLimiter {
public:
    explicit InFlightLimiter(int limit) : sem_(limit) {
        if (limit < 1) throw ConfigError("in-flight limit must be >= 1");
    }

    class Guard {
    public:
        explicit Guard(InFlightLimiter& limiter) : limiter_(limiter) { limiter_.sem_.acquire(); }
        ~Guard() { limiter_.sem_.release(); }
        Guard(const Guard&) = delete;
        Guard& operator=(const Guard&) = delete;

    private:
        InFlightLimiter& limiter_;
    };

private:
    std::counting_semaphore<1 << 20> sem_;
};

namespace detail {

struct ParsedEndpoint {
    std::string host_port;  // scheme://host:port
    std::string base_path;  // "" or "/prefix"
};

inline ParsedEndpoint parse_endpoint(const std::string& endpoint) {
    std::size_t scheme = endpoint.find("://");
    std::size_t path_start = scheme == std::string::npos ? endpoint.find('/') : endpoint.find('/', scheme + 3);
    if (path_start == std::string::npos) return {endpoint, ""};
    std::string path = endpoint.substr(path_start);
    if (path == "/") path.clear();
    return {endpoint.substr(0, path_start), path};
}

/// POST JSON with retries; retries transport failures and 5xx responses.
/// Throws TransportError carrying the attempt count once retries run out.
inline nlohmann::json post_json_with_retry(const std::string& endpoint, const std::string& route,
                                           const nlohmann::json& body, const RetryPolicy& retry,
                                           InFlightLimiter* limiter, int timeout_sec) {
    retry.validate();
    ParsedEndpoint parsed = parse_endpoint(endpoint);
    std::string payload = body.dump();
    std::string last_error;
    int backoff_ms = retry.initial_backoff_ms;

    for (int attempt = 1; attempt <= retry.max_attempts; ++attempt) {
        if (attempt > 1) {
            std::this_thread::sleep_for(std::chrono::milliseconds(backoff_ms));
            backoff_ms = std::min(retry.max_backoff_ms, static_cast<int>(backoff_ms * retry.multiplier));
        }
        httplib::Result res = [&] {
            std::unique_ptr<InFlightLimiter::Guard> guard;
            if (limiter) guard = std::make_unique<InFlightLimiter::Guard>(*limiter);
            httplib::Client client(parsed.host_port);
            client.set_connection_timeout(timeout_sec, 0);
            client.set_read_timeout(timeout_sec, 0);
            return client.Post(parsed.base_path + route, payload, "application/json");
        }();

        if (!res) {
            last_error = "transport failure (" + httplib::to_string(res.error()) + ")";
            log_warn("POST " + endpoint + route + " attempt " + std::to_string(attempt) + "/" +
                     std::to_string(retry.max_attempts) + ": " + last_error);
            continue;
        }
        if (res->status >= 500) {
            last_error = "server error " + std::to_string(res->status);
            log_warn("POST " + endpoint + route + " attempt " + std::to_string(attempt) + "/" +
                     std::to_string(retry.max_attempts) + ": " + last_error);
            continue;
        }
        if (res->status != 200) {
            // 4xx is not retryable: the request itself is wrong
            throw ConfigError("POST " + endpoint + route + " returned " + std::to_string(res->status) + ": " +
                              res->body);
        }
        try {
            return nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("POST " + endpoint + route + " returned invalid JSON: " + e.what());
        }
    }
    throw TransportError("POST " + endpoint + route + " failed after " + std::to_string(retry.max_attempts) +
                             " attempts: " + last_error,
                         retry.max_attempts);
}

inline std::vector<EmbeddingVector> parse_vectors(const nlohmann::json& response, std::size_t expected,
                                                  int dim, const std::string& context) {
    if (!response.contains("vectors") || !response["vectors"].is_array()) {
        throw ConfigError(context + ": response has no \"vectors\" array");
    }
    const auto& arr = response["vectors"];
    if (arr.size() != expected) {
        throw ConfigError(context + ": expected " + std::to_string(expected) + " vectors, got " +
                          std::to_string(arr.size()));
    }
    std::vector<EmbeddingVector> out;
    out.reserve(arr.size());
    for (const auto& row : arr) {
        if (!row.is_array()) throw ConfigError(context + ": \"vectors\" rows must be arrays");
        EmbeddingVector v;
        v.reserve(row.size());
        try {
            for (const auto& x : row) v.push_back(x.get<float>());
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(context + ": non-numeric vector component: " + e.what());
        }
        if (static_cast<int>(v.size()) != dim) {
            throw ConfigError(context + ": provider returned dim " + std::to_string(v.size()) +
                              ", configured dim is " + std::to_string(dim));
        }
        normalize_l2(v);  // accept un-normalized providers, normalize once here
        out.push_back(std::move(v));
    }
    return out;
}

}  // namespace detail

/// Remote text embedding over `POST {endpoint}/embed_text {"texts":[...]}`.
class HttpTextEmbedder : public TextEmbedder {
public:
    HttpTextEmbedder(ProviderSpec spec, RetryPolicy retry, std::shared_ptr<InFlightLimiter> limiter,
                     int timeout_sec = 60)
        : spec_(std::move(spec)), retry_(retry), limiter_(std::move(limiter)), timeout_sec_(timeout_sec) {
        spec_.validate();
    }

    int dim() const override { return spec_.dim; }
    int max_chars() const override { return spec_.max_chars; }

    std::vector<EmbeddingVector> embed_texts(const std::vector<std::string>& texts) override {
        std::vector<std::string> truncated;
        truncated.reserve(texts.size());
        for (const auto& t : texts) truncated.push_back(truncate_utf8(t, static_cast<std::size_t>(spec_.max_chars)));
        return run_batched(truncated, spec_.max_batch, [&](const std::vector<std::string>& chunk) {
            nlohmann::json response = detail::post_json_with_retry(
                spec_.endpoint, "/embed_text", nlohmann::json{{"texts", chunk}}, retry_, limiter_.get(),
                timeout_sec_);
            return detail::parse_vectors(response, chunk.size(), spec_.dim, "embed_text");
        });
    }

private:
    ProviderSpec spec_;
    RetryPolicy retry_;
    std::shared_ptr<InFlightLimiter> limiter_;
    int timeout_sec_;
};

/// Remote image embedding over `POST {endpoint}/embed_image {"uris":[...]}`.
/// The provider fetches/decodes pixels itself; the engine only ships uris.
class HttpImageEmbedder : public ImageEmbedder {
public:
    HttpImageEmbedder(ProviderSpec spec, RetryPolicy retry, std::shared_ptr<InFlightLimiter> limiter,
                      int timeout_sec = 60)
        : spec_(std::move(spec)), retry_(retry), limiter_(std::move(limiter)), timeout_sec_(timeout_sec) {
        spec_.validate();
    }

    int dim() const override { return spec_.dim; }

    std::vector<EmbeddingVector> embed_images(const std::vector<ImageRecord>& images) override {
        return run_batched(images, spec_.max_batch, [&](const std::vector<ImageRecord>& chunk) {
            std::vector<std::string> uris;
            uris.reserve(chunk.size());
            for (const auto& img : chunk) uris.push_back(img.uri);
            nlohmann::json response = detail::post_json_with_retry(
                spec_.endpoint, "/embed_image", nlohmann::json{{"uris", uris}}, retry_, limiter_.get(),
                timeout_sec_);
            return detail::parse_vectors(response, chunk.size(), spec_.dim, "embed_image");
        });
    }

private:
    ProviderSpec spec_;
    RetryPolicy retry_;
    std::shared_ptr<InFlightLimiter> limiter_;
    int timeout_sec_;
};

/// Remote reranker over `POST {endpoint}/rerank`. Accepts either direct
/// scores or raw yes/no logit pairs:
///   {"scores": [s, ...]}            s in [0,1], aligned with documents
///   {"logits": [[yes, no], ...]}    converted via score_yes_from_logits
class HttpReranker : public Reranker {
public:
    HttpReranker(ProviderSpec spec, RetryPolicy retry, std::shared_ptr<InFlightLimiter> limiter,
                 int timeout_sec = 120)
        : spec_(std::move(spec)), retry_(retry), limiter_(std::move(limiter)), timeout_sec_(timeout_sec) {
        spec_.validate();
    }

    std::vector<double> score(const std::string& instruct, const std::string& query,
                              const std::vector<std::string>& documents) override {
        std::vector<double> scores;
        scores.reserve(documents.size());
        for (std::size_t start = 0; start < documents.size();
             start += static_cast<std::size_t>(spec_.max_batch)) {
            std::size_t stop = std::min(documents.size(), start + static_cast<std::size_t>(spec_.max_batch));
            std::vector<std::string> chunk(documents.begin() + static_cast<std::ptrdiff_t>(start),
                                           documents.begin() + static_cast<std::ptrdiff_t>(stop));
            nlohmann::json response = detail::post_json_with_retry(
                spec_.endpoint, "/rerank",
                nlohmann::json{{"instruct", instruct}, {"query", query}, {"documents", chunk}}, retry_,
                limiter_.get(), timeout_sec_);

            try {
                if (response.contains("scores")) {
                    const auto& arr = response["scores"];
                    if (arr.size() != chunk.size()) {
                        throw ConfigError("rerank: expected " + std::to_string(chunk.size()) + " scores, got " +
                                          std::to_string(arr.size()));
                    }
                    for (const auto& s : arr) scores.push_back(s.get<double>());
                } else if (response.contains("logits")) {
                    const auto& arr = response["logits"];
                    if (arr.size() != chunk.size()) {
                        throw ConfigError("rerank: expected " + std::to_string(chunk.size()) +
                                          " logit pairs, got " + std::to_string(arr.size()));
                    }
                    for (const auto& pair : arr) {
                        if (!pair.is_array() || pair.size() != 2) {
                            throw ConfigError("rerank: each logits entry must be [yes, no]");
                        }
                        scores.push_back(score_yes_from_logits(pair[0].get<double>(), pair[1].get<double>()));
                    }
                } else {
                    throw ConfigError("rerank: response has neither \"scores\" nor \"logits\"");
                }
            } catch (const nlohmann::json::exception& e) {
                throw ConfigError(std::string("rerank: malformed response: ") + e.what());
            }
        }
        return scores;
    }

private:
    ProviderSpec spec_;
    RetryPolicy retry_;
    std::shared_ptr<InFlightLimiter> limiter_;
    int timeout_sec_;
};

/// True when a TCP round-trip to the endpoint yields any HTTP response.
inline bool probe_endpoint(const std::string& endpoint, int timeout_sec = 2) {
    detail::ParsedEndpoint parsed = detail::parse_endpoint(endpoint);
    httplib::Client client(parsed.host_port);
    client.set_connection_timeout(timeout_sec, 0);
    client.set_read_timeout(timeout_sec, 0);
    httplib::Result res = client.Get(parsed.base_path.empty() ? "/" : parsed.base_path);
    return static_cast<bool>(res);
}

}  // namespace evret
