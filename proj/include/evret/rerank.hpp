#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "evret/common.hpp"
#include "evret/corpus.hpp"
#include "evret/embedding.hpp"
#include "evret/vector_index.hpp"

namespace evret {

/// System sentence of the relevance-judging chat prompt.
inline constexpr std::string_view kRerankSystemPrompt =
    "Judge whether the Document meets the requirements based on the Query and the Instruct "
    "provided. Note that the answer can only be \"yes\" or \"no\".";

/// Default task instruction placed in the user message.
inline constexpr std::string_view kDefaultRerankInstruct =
    "Given a caption describing a real-world event, determine if the document provides relevant "
    "details to identify the corresponding image. Only answer \"yes\" or \"no\".";

/// One scoring request: task instruction, the event caption, and the already
/// formatted (and truncated) document string.
struct RerankRequest {
    std::string instruct;
    std::string query;
    std::string document;
};

namespace detail {

inline void warn_delimiter_hazard(std::string_view field, std::string_view text) {
    if (text.find("<|im_start|>") != std::string_view::npos ||
        text.find("<|im_end|>") != std::string_view::npos) {
        log_warn("rerank " + std::string(field) +
                 " contains a chat template delimiter; it is passed through unescaped");
    }
}

}  // namespace detail

/// Assemble the full chat prompt, byte-exact:
///
///   <|im_start|>system
///   {system sentence}
///   <|im_end|>
///   <|im_start|>user
///   <Instruct>: {instruct}
///   <Query>: {query}
///   <Document>: {document}
///   <|im_end|>
///   <|im_start|>assistant
///   <think>
///
///   </think>
///
/// Template delimiters occurring inside the fields are not escaped (the
/// scored text must stay verbatim); a warning is logged instead.
inline std::string assemble_prompt(const RerankRequest& req) {
    detail::warn_delimiter_hazard("instruct", req.instruct);
    detail::warn_delimiter_hazard("query", req.query);
    detail::warn_delimiter_hazard("document", req.document);

    std::string prompt;
    prompt.reserve(req.instruct.size() + req.query.size() + req.document.size() + 256);
    prompt += "<|im_start|>system\n";
    prompt += kRerankSystemPrompt;
    prompt += "\n<|im_end|>\n";
    prompt += "<|im_start|>user\n";
    prompt += "<Instruct>: ";
    prompt += req.instruct;
    prompt += "\n<Query>: ";
    prompt += req.query;
    prompt += "\n<Document>: ";
    prompt += req.document;
    prompt += "\n<|im_end|>\n";
    prompt += "<|im_start|>assistant\n<think>\n\n</think>\n\n";
    return prompt;
}

/// Two-way softmax probability of "yes" given the final-position logits of
/// the "yes" and "no" tokens. Stable for any finite pair: computed as
/// 1 / (1 + e^(no - yes)), which never overflows toward the winning side.
inline double score_yes_from_logits(double logit_yes, double logit_no) {
    if (!std::isfinite(logit_yes) || !std::isfinite(logit_no)) {
        throw ConfigError("score_yes_from_logits: non-finite logit");
    }
    return 1.0 / (1.0 + std::exp(logit_no - logit_yes));
}

// ---------------------------------------------------------------------------

/// Relevance-scoring provider: one score in [0,1] per document, aligned with
/// input order. Implementations must accept concurrent calls.
class Reranker {
public:
    virtual ~Reranker() = default;
    virtual std::vector<double> score(const std::string& instruct, const std::string& query,
                                      const std::vector<std::string>& documents) = 0;
};

/// Deterministic provider-free reranker: the fraction of distinct query
/// tokens present in the document is mapped to synthetic yes/no logits and
/// pushed through the same softmax as a logit-exposing provider would be.
class LocalOverlapReranker : public Reranker {
public:
    explicit LocalOverlapReranker(double logit_scale = 8.0) : logit_scale_(logit_scale) {}

    std::vector<double> score(const std::string& instruct, const std::string& query,
                              const std::vector<std::string>& documents) override {
        (void)instruct;
        std::vector<std::string_view> query_tokens;
        detail::split_tokens(query, query_tokens);
        std::unordered_set<std::string_view> distinct(query_tokens.begin(), query_tokens.end());

        std::vector<double> scores;
        scores.reserve(documents.size());
        std::vector<std::string_view> doc_tokens;
        for (const auto& doc : documents) {
            detail::split_tokens(doc, doc_tokens);
            std::unordered_set<std::string_view> doc_set(doc_tokens.begin(), doc_tokens.end());
            std::size_t hit = 0;
            for (std::string_view tok : distinct) {
                if (doc_set.count(tok)) ++hit;
            }
            double overlap = distinct.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(distinct.size());
            scores.push_back(score_yes_from_logits(logit_scale_ * overlap, logit_scale_ * (1.0 - overlap)));
        }
        return scores;
    }

private:
    double logit_scale_;
};

// ---------------------------------------------------------------------------

/// Rerank Stage-1 candidates with the relevance provider and keep the top K.
/// Output scores are the provider's relevance scores, not the cosines. Ties
/// keep the Stage-1 relative order, then ascending article_id.
///
/// Provider failures surface as QueryError carrying `query_id`; choosing a
/// fallback (Stage-1 order vs abort) is the caller's policy.
inline RankedList rerank_articles(const std::string& query_id, const std::string& caption,
                                  const RankedList& candidates, const CorpusStore& corpus,
                                  Reranker& reranker, int top_k,
                                  const std::string& instruct = std::string(kDefaultRerankInstruct),
                                  int document_max_chars = 8192) {
    if (top_k < 1) throw ConfigError("rerank_articles: top_k must be >= 1");

    RankedList out;
    out.query_id = query_id;
    if (candidates.entries.empty()) return out;

    std::vector<std::string> documents;
    documents.reserve(candidates.entries.size());
    for (const auto& entry : candidates.entries) {
        const Article* article = corpus.find_article(entry.id);
        if (article == nullptr) {
            throw ConfigError("rerank_articles: candidate \"" + entry.id + "\" is not in the corpus");
        }
        documents.push_back(format_document(*article, static_cast<std::size_t>(document_max_chars)));
    }
    detail::warn_delimiter_hazard("query", caption);
    for (const auto& doc : documents) detail::warn_delimiter_hazard("document", doc);

    std::vector<double> scores;
    try {
        scores = reranker.score(instruct, caption, documents);
    } catch (const QueryError&) {
        throw;
    } catch (const Error& e) {
        throw QueryError(std::string("rerank failed for query \"") + query_id + "\": " + e.what(), query_id);
    }
    if (scores.size() != documents.size()) {
        throw QueryError("rerank provider returned " + std::to_string(scores.size()) + " scores for " +
                             std::to_string(documents.size()) + " documents (query \"" + query_id + "\")",
                         query_id);
    }
    for (double s : scores) {
        if (!(s >= 0.0 && s <= 1.0)) {
            throw QueryError("rerank provider returned score outside [0,1] for query \"" + query_id + "\"",
                             query_id);
        }
    }

    // Stability keeps Stage-1 relative order on ties; candidate lists are
    // duplicate-free, so the ascending-id tie-break can never bind after it.
    std::vector<std::size_t> order(candidates.entries.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(top_k), order.size());
    out.entries.reserve(keep);
    for (std::size_t i = 0; i < keep; ++i) {
        out.entries.push_back({candidates.entries[order[i]].id, scores[order[i]]});
    }
    return out;
}

}  // namespace evret
