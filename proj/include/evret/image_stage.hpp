#pragma once

#include <algorithm>
#include <string>
#include <unordered_set>
#include <vector>

#include "evret/common.hpp"
#include "evret/corpus.hpp"
#include "evret/embedding.hpp"
#include "evret/vector_index.hpp"

namespace evret {

/// Stage-3 knobs: traversal depth, early-stopping thresholds, per-article cap
/// and the fixed output shape.
struct StageConfig {
    int top_articles = 10;       // K: reranked articles considered
    int min_source_articles = 3; // A: distinct contributing articles before stopping
    int min_images = 10;         // I: candidate images before stopping
    int per_article_cap = 3;     // M: images an article may place in the capped pass
    int output_len = 10;
    std::string pad_token = "#";

    void validate() const {
        if (min_source_articles < 1 || min_source_articles > top_articles) {
            throw ConfigError("stage config: need 1 <= min_source_articles <= top_articles");
        }
        if (min_images < 1) throw ConfigError("stage config: min_images must be >= 1");
        if (per_article_cap < 1) throw ConfigError("stage config: per_article_cap must be >= 1");
        if (output_len < 1) throw ConfigError("stage config: output_len must be >= 1");
        if (pad_token.empty()) throw ConfigError("stage config: pad_token must be non-empty");
    }
};

/// A collected image plus the rank of the article it came from.
struct CandidateImage {
    std::string image_id;
    std::string source_article_id;
    int article_rank = 0;  // 1-based rank in the Stage-2 list
    double score = 0.0;    // filled by score_candidates
};

/// Walk the reranked articles in order, appending each article's images, and
/// stop after the first article at which both thresholds hold: at least
/// `min_images` collected AND at least `min_source_articles` distinct
/// contributors. If the thresholds are never both met within the top
/// `top_articles`, everything collected is returned.
///
/// Zero-image articles contribute nothing and do not count as contributors.
/// An image id listed by several articles is kept at its best article rank.
inline std::vector<CandidateImage> collect_candidates(const RankedList& ranked_articles,
                                                      const CorpusStore& corpus, const StageConfig& cfg) {
    cfg.validate();
    std::vector<CandidateImage> pool;
    std::unordered_set<std::string> seen_images;
    int contributors = 0;
    int rank = 0;

    for (const auto& entry : ranked_articles.entries) {
        if (rank >= cfg.top_articles) break;
        ++rank;
        const Article* article = corpus.find_article(entry.id);
        if (article == nullptr) {
            log_warn("collect_candidates: article \"" + entry.id + "\" missing from corpus, skipped");
            continue;
        }
        bool contributed = false;
        for (const auto& image_id : article->image_ids) {
            if (!seen_images.insert(image_id).second) continue;  // earlier rank wins
            pool.push_back({image_id, article->article_id, rank, 0.0});
            contributed = true;
        }
        if (contributed) ++contributors;
        if (static_cast<int>(pool.size()) >= cfg.min_images && contributors >= cfg.min_source_articles) {
            break;
        }
    }
    return pool;
}

/// Score every candidate by cosine(caption embedding, image embedding).
/// Input order is preserved. Both providers must share one dimension;
/// providers batch internally per their spec.
inline std::vector<CandidateImage> score_candidates(const std::string& caption,
                                                    std::vector<CandidateImage> candidates,
                                                    TextEmbedder& text_provider, ImageEmbedder& image_provider,
                                                    const CorpusStore& corpus) {
    if (candidates.empty()) return candidates;
    if (text_provider.dim() != image_provider.dim()) {
        throw ConfigError("score_candidates: provider dims differ (" + std::to_string(text_provider.dim()) +
                          " vs " + std::to_string(image_provider.dim()) + ")");
    }

    EmbeddingVector caption_vec = text_provider.embed_texts({caption}).at(0);
    check_finite_unit(caption_vec, "caption embedding");

    std::vector<ImageRecord> records;
    records.reserve(candidates.size());
    for (const auto& cand : candidates) {
        const ImageRecord* rec = corpus.find_image(cand.image_id);
        if (rec == nullptr) {
            throw ConfigError("score_candidates: image \"" + cand.image_id + "\" is not in the corpus");
        }
        records.push_back(*rec);
    }

    std::vector<EmbeddingVector> vectors = image_provider.embed_images(records);
    if (vectors.size() != candidates.size()) {
        throw ConfigError("score_candidates: provider returned " + std::to_string(vectors.size()) +
                          " vectors for " + std::to_string(candidates.size()) + " images");
    }

    for (std::size_t i = 0; i < candidates.size(); ++i) {
        check_finite_unit(vectors[i], "image embedding");
        candidates[i].score = dot(caption_vec, vectors[i]);
    }
    return candidates;
}

/// Rank-aware final selection, two passes over the scored pool:
///
///  1. capped pass: article ranks in ascending order, each contributing its
///     top `per_article_cap` images by score (ties by ascending image_id),
///     until `output_len` ids are placed;
///  2. overflow pass: if slots remain, the images excluded only by the cap,
///     ordered by (article_rank, score desc, image_id).
///
/// The row is then padded with `pad_token` to exactly `output_len`.
inline std::vector<std::string> rank_aware_select(const std::vector<CandidateImage>& candidates,
                                                  const StageConfig& cfg) {
    cfg.validate();

    // group by article rank, order within a group by (score desc, id asc)
    std::vector<CandidateImage> sorted(candidates);
    std::sort(sorted.begin(), sorted.end(), [](const CandidateImage& a, const CandidateImage& b) {
        if (a.article_rank != b.article_rank) return a.article_rank < b.article_rank;
        if (a.score != b.score) return a.score > b.score;
        return a.image_id < b.image_id;
    });

    std::vector<std::string> selected;
    selected.reserve(static_cast<std::size_t>(cfg.output_len));
    std::vector<const CandidateImage*> overflow;  // already in (rank, score desc, id) order

    int current_rank = -1;
    int taken_from_article = 0;
    for (const auto& cand : sorted) {
        if (cand.article_rank != current_rank) {
            current_rank = cand.article_rank;
            taken_from_article = 0;
        }
        if (taken_from_article < cfg.per_article_cap) {
            if (static_cast<int>(selected.size()) < cfg.output_len) {
                selected.push_back(cand.image_id);
                ++taken_from_article;
            }
        } else {
            overflow.push_back(&cand);
        }
    }

    for (const CandidateImage* cand : overflow) {
        if (static_cast<int>(selected.size()) >= cfg.output_len) break;
        selected.push_back(cand->image_id);
    }
    while (static_cast<int>(selected.size()) < cfg.output_len) {
        selected.push_back(cfg.pad_token);
    }
    return selected;
}

}  // namespace evret
