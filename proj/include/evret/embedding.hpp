#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "evret/common.hpp"
#include "evret/corpus.hpp"

namespace evret {

/// Fixed-dimension dense vector, unit L2 norm at every provider boundary.
using EmbeddingVector = std::vector<float>;

enum class ProviderKind { text_embed, image_embed, rerank };

/// How to reach a provider. `endpoint == "local-test"` selects the built-in
/// deterministic provider; anything else is treated as an HTTP base URL.
struct ProviderSpec {
    ProviderKind kind = ProviderKind::text_embed;
    std::string endpoint = "local-test";
    int dim = 64;
    int max_batch = 32;
    int max_chars = 8192;   // text truncation budget; ignored by image providers
    std::uint64_t seed = 0; // local-test only

    bool is_local() const { return endpoint == "local-test"; }

    void validate() const {
        if (kind != ProviderKind::rerank && dim <= 0) throw ConfigError("provider dim must be positive");
        if (max_batch < 1) throw ConfigError("provider max_batch must be >= 1");
        if (kind != ProviderKind::image_embed && max_chars < 1) {
            throw ConfigError("text provider max_chars must be >= 1");
        }
    }
};

// ---------------------------------------------------------------------------
// Document formatting
// ---------------------------------------------------------------------------

/// Truncate to at most `max_chars` bytes without splitting a UTF-8 sequence.
inline std::string truncate_utf8(std::string_view text, std::size_t max_chars) {
    if (text.size() <= max_chars) return std::string(text);
    std::size_t cut = max_chars;
    // back off over continuation bytes (10xxxxxx)
    while (cut > 0 && (static_cast<unsigned char>(text[cut]) & 0xC0) == 0x80) --cut;
    return std::string(text.substr(0, cut));
}

/// "Title: ...\nDate: ...\nContent: ...", truncated to `max_chars`.
/// This exact string is what gets embedded and what rerank providers see.
inline std::string format_document(const Article& article, std::size_t max_chars) {
    std::string doc;
    doc.reserve(article.title.size() + article.pub_date.size() + article.content.size() + 24);
    doc += "Title: ";
    doc += article.title;
    doc += "\nDate: ";
    doc += article.pub_date;
    doc += "\nContent: ";
    doc += article.content;
    return truncate_utf8(doc, max_chars);
}

// ---------------------------------------------------------------------------
// Vector math
// ---------------------------------------------------------------------------

inline double l2_norm(const EmbeddingVector& v) {
    double acc = 0.0;
    for (float x : v) acc += static_cast<double>(x) * static_cast<double>(x);
    return std::sqrt(acc);
}

inline void normalize_l2(EmbeddingVector& v) {
    double norm = l2_norm(v);
    if (norm <= 0.0 || !std::isfinite(norm)) {
        throw ConfigError("cannot normalize zero or non-finite vector");
    }
    for (float& x : v) x = static_cast<float>(x / norm);
}

/// Dot product with double accumulation; equals cosine for unit-norm inputs.
inline double dot(const EmbeddingVector& a, const EmbeddingVector& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    }
    return acc;
}

inline void check_finite_unit(const EmbeddingVector& v, const char* what) {
    for (float x : v) {
        if (!std::isfinite(x)) throw ConfigError(std::string(what) + ": non-finite component");
    }
    double norm = l2_norm(v);
    if (std::fabs(norm - 1.0) > 1e-4) {
        throw ConfigError(std::string(what) + ": norm " + std::to_string(norm) + " not within 1e-4 of 1");
    }
}

// ---------------------------------------------------------------------------
// Provider interfaces
// ---------------------------------------------------------------------------

/// Text embedding provider. Output order always matches input order; every
/// vector is unit-norm with dim() components. Implementations must accept
/// concurrent calls.
class TextEmbedder {
public:
    virtual ~TextEmbedder() = default;
    virtual int dim() const = 0;
    virtual int max_chars() const = 0;
    virtual std::vector<EmbeddingVector> embed_texts(const std::vector<std::string>& texts) = 0;
};

/// Image embedding provider, same contract keyed by ImageRecord.
class ImageEmbedder {
public:
    virtual ~ImageEmbedder() = default;
    virtual int dim() const = 0;
    virtual std::vector<EmbeddingVector> embed_images(const std::vector<ImageRecord>& images) = 0;
};

// ---------------------------------------------------------------------------
// Deterministic local-test provider
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t seed) {
    std::uint64_t h = 1469598103934665603ull ^ (seed * 0x9E3779B97F4A7C15ull);
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

struct SplitMix64 {
    std::uint64_t state;
    std::uint64_t next() {
        std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }
    // uniform in (0, 1]
    double next_unit() { return (static_cast<double>(next() >> 11) + 1.0) * 0x1.0p-53; }
};

// Box-Muller; only explicit IEEE arithmetic and libm calls, so the stream is
// bit-stable across processes and runs.
struct GaussianStream {
    SplitMix64 rng;
    bool have_spare = false;
    double spare = 0.0;
    explicit GaussianStream(std::uint64_t seed) : rng{seed} {}
    double next() {
        if (have_spare) {
            have_spare = false;
            return spare;
        }
        double u1 = rng.next_unit();
        double u2 = rng.next_unit();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        spare = r * std::sin(theta);
        have_spare = true;
        return r * std::cos(theta);
    }
};

inline void split_tokens(std::string_view text, std::vector<std::string_view>& out) {
    out.clear();
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        std::size_t start = i;
        while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        if (i > start) out.push_back(text.substr(start, i - start));
    }
}

}  // namespace detail

/// Provider-free embedder for tests and offline runs. Each whitespace token
/// is hashed into a seeded Gaussian direction; the token sum is L2-normalized.
/// A pure function of (input, dim, seed): bitwise identical across processes.
/// Texts sharing most of their tokens land close in cosine, which gives the
/// synthetic corpora realistic retrieval behavior; unrelated inputs are
/// near-orthogonal at the default dims.
///
/// Text and image vectors share one hash space (images are keyed by image_id,
/// never pixels), mirroring a cross-modal encoder.
class LocalHashEmbedder : public TextEmbedder, public ImageEmbedder {
public:
    LocalHashEmbedder(int dim, std::uint64_t seed, int max_chars = 8192)
        : dim_(dim), seed_(seed), max_chars_(max_chars) {
        if (dim <= 0) throw ConfigError("LocalHashEmbedder: dim must be positive");
    }

    int dim() const override { return dim_; }
    int max_chars() const override { return max_chars_; }

    EmbeddingVector embed_one(std::string_view input) const {
        if (input.empty()) throw ConfigError("LocalHashEmbedder: empty input");
        std::vector<std::string_view> tokens;
        detail::split_tokens(input, tokens);

        std::vector<double> acc(static_cast<std::size_t>(dim_), 0.0);
        if (tokens.empty()) {
            accumulate_token(input, acc);  // whitespace-only input: hash it whole
        } else {
            for (std::string_view tok : tokens) accumulate_token(tok, acc);
        }

        double norm = 0.0;
        for (double x : acc) norm += x * x;
        norm = std::sqrt(norm);
        EmbeddingVector out(static_cast<std::size_t>(dim_));
        for (int i = 0; i < dim_; ++i) {
            out[static_cast<std::size_t>(i)] = static_cast<float>(acc[static_cast<std::size_t>(i)] / norm);
        }
        return out;
    }

    std::vector<EmbeddingVector> embed_texts(const std::vector<std::string>& texts) override {
        std::vector<EmbeddingVector> out;
        out.reserve(texts.size());
        for (const auto& t : texts) {
            out.push_back(embed_one(truncate_utf8(t, static_cast<std::size_t>(max_chars_))));
        }
        return out;
    }

    std::vector<EmbeddingVector> embed_images(const std::vector<ImageRecord>& images) override {
        std::vector<EmbeddingVector> out;
        out.reserve(images.size());
        for (const auto& img : images) out.push_back(embed_one(img.image_id));
        return out;
    }

private:
    void accumulate_token(std::string_view token, std::vector<double>& acc) const {
        detail::GaussianStream g(detail::fnv1a64(token, seed_));
        for (double& slot : acc) slot += g.next();
    }

    int dim_;
    std::uint64_t seed_;
    int max_chars_;
};

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

/// Run `fn` over consecutive slices of at most `max_batch` inputs and stitch
/// the results back together in input order.
template <typename Item, typename Fn>
std::vector<EmbeddingVector> run_batched(const std::vector<Item>& items, int max_batch, Fn&& fn) {
    if (max_batch < 1) throw ConfigError("max_batch must be >= 1");
    std::vector<EmbeddingVector> out;
    out.reserve(items.size());
    for (std::size_t start = 0; start < items.size(); start += static_cast<std::size_t>(max_batch)) {
        std::size_t stop = std::min(items.size(), start + static_cast<std::size_t>(max_batch));
        std::vector<Item> chunk(items.begin() + static_cast<std::ptrdiff_t>(start),
                                items.begin() + static_cast<std::ptrdiff_t>(stop));
        std::vector<EmbeddingVector> part = fn(chunk);
        if (part.size() != chunk.size()) {
            throw ConfigError("provider returned " + std::to_string(part.size()) + " vectors for " +
                              std::to_string(chunk.size()) + " inputs");
        }
        for (auto& v : part) out.push_back(std::move(v));
    }
    return out;
}

}  // namespace evret
