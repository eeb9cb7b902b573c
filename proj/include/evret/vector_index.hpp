#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <queue>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "evret/common.hpp"
#include "evret/embedding.hpp"

namespace evret {

/// (item id, score) with the canonical ordering used everywhere between
/// stages: score descending, ties by ascending id.
struct ScoredId {
    std::string id;
    double score = 0.0;

    bool operator==(const ScoredId&) const = default;
};

/// Ordered, duplicate-free result list for one query.
struct RankedList {
    std::string query_id;
    std::vector<ScoredId> entries;
};

struct IndexEntry {
    std::string item_id;
    EmbeddingVector vector;
};

/// HNSW construction/search knobs, persisted in the index manifest.
/// Defaults are sized for recall@10 >= 0.95 even on unstructured (uniform
/// random) vectors, the hardest case for graph search.
struct AnnParams {
    int max_degree = 24;     // M: links per node above layer 0 (2M at layer 0)
    int build_beam = 200;    // ef during construction
    int search_beam = 160;   // ef during queries (floor; raised to k if needed)
    std::uint64_t level_seed = 0x5eed;
};

// ---------------------------------------------------------------------------

/// Immutable top-k cosine index over unit-norm vectors. Build is exclusive;
/// a built index is read-only, so queries are lock-free from any thread.
class VectorIndex {
public:
    virtual ~VectorIndex() = default;

    int dim() const { return dim_; }
    std::size_t size() const { return ids_.size(); }
    virtual std::string backend() const = 0;
    virtual nlohmann::json metadata() const = 0;

    const std::vector<std::string>& ids() const { return ids_; }
    const float* vector_at(std::size_t i) const { return vectors_.data() + i * static_cast<std::size_t>(dim_); }

    /// True cosine top-k for the exact backend; beam-search approximation for
    /// the ANN backend. At most k entries, score descending, ties by id.
    RankedList top_k(const EmbeddingVector& query, int k, std::string query_id = {}) const {
        if (k < 1) throw ConfigError("top_k: k must be >= 1");
        RankedList out;
        out.query_id = std::move(query_id);
        if (ids_.empty()) return out;
        if (static_cast<int>(query.size()) != dim_) {
            throw ConfigError("top_k: query dim " + std::to_string(query.size()) +
                              " does not match index dim " + std::to_string(dim_));
        }

        std::vector<std::pair<double, std::uint32_t>> hits = search_impl(query.data(), k);
        std::sort(hits.begin(), hits.end(), [this](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return ids_[a.second] < ids_[b.second];
        });
        if (hits.size() > static_cast<std::size_t>(k)) hits.resize(static_cast<std::size_t>(k));

        out.entries.reserve(hits.size());
        for (const auto& [score, idx] : hits) out.entries.push_back({ids_[idx], score});
        return out;
    }

    void save(const std::string& dir) const {
        namespace fs = std::filesystem;
        fs::create_directories(dir);

        nlohmann::json manifest;
        manifest["format"] = "evret-index-v1";
        manifest["backend"] = backend();
        manifest["dim"] = dim_;
        manifest["count"] = ids_.size();
        nlohmann::json extra = metadata();
        if (!extra.empty()) manifest["params"] = extra;
        {
            std::ofstream out(fs::path(dir) / "manifest.json", std::ios::binary);
            if (!out) throw ConfigError("cannot write manifest.json in " + dir);
            out << manifest.dump(2) << "\n";
        }
        {
            std::ofstream out(fs::path(dir) / "vectors.f32le", std::ios::binary);
            if (!out) throw ConfigError("cannot write vectors.f32le in " + dir);
            std::vector<char> buf;
            buf.reserve(vectors_.size() * 4);
            for (float f : vectors_) {
                std::uint32_t bits = std::bit_cast<std::uint32_t>(f);
                buf.push_back(static_cast<char>(bits & 0xFF));
                buf.push_back(static_cast<char>((bits >> 8) & 0xFF));
                buf.push_back(static_cast<char>((bits >> 16) & 0xFF));
                buf.push_back(static_cast<char>((bits >> 24) & 0xFF));
            }
            out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
        }
        {
            std::ofstream out(fs::path(dir) / "ids.txt", std::ios::binary);
            if (!out) throw ConfigError("cannot write ids.txt in " + dir);
            for (const auto& id : ids_) out << id << "\n";
        }
    }

protected:
    virtual std::vector<std::pair<double, std::uint32_t>> search_impl(const float* query, int k) const = 0;

    double sim(const float* query, std::size_t i) const {
        const float* row = vector_at(i);
        double acc = 0.0;
        for (int d = 0; d < dim_; ++d) {
            acc += static_cast<double>(query[d]) * static_cast<double>(row[d]);
        }
        return acc;
    }

    void adopt_entries(std::vector<IndexEntry> entries) {
        std::unordered_set<std::string> seen;
        seen.reserve(entries.size());
        dim_ = entries.empty() ? 0 : static_cast<int>(entries.front().vector.size());
        ids_.reserve(entries.size());
        vectors_.reserve(entries.size() * static_cast<std::size_t>(dim_));
        for (auto& e : entries) {
            if (static_cast<int>(e.vector.size()) != dim_) {
                throw ConfigError("build_index: mixed dimensions (" + std::to_string(e.vector.size()) +
                                  " vs " + std::to_string(dim_) + ") at id \"" + e.item_id + "\"");
            }
            if (!seen.insert(e.item_id).second) {
                throw ConfigError("build_index: duplicate item_id \"" + e.item_id + "\"");
            }
            check_finite_unit(e.vector, "build_index");
            vectors_.insert(vectors_.end(), e.vector.begin(), e.vector.end());
            ids_.push_back(std::move(e.item_id));
        }
    }

    int dim_ = 0;
    std::vector<float> vectors_;  // row-major, size() == ids_.size() * dim_
    std::vector<std::string> ids_;
};

// ---------------------------------------------------------------------------

/// Brute-force scan. The correctness oracle for the ANN backend.
class ExactIndex : public VectorIndex {
public:
    explicit ExactIndex(std::vector<IndexEntry> entries) { adopt_entries(std::move(entries)); }

    std::string backend() const override { return "exact"; }
    nlohmann::json metadata() const override { return nlohmann::json::object(); }

protected:
    std::vector<std::pair<double, std::uint32_t>> search_impl(const float* query, int k) const override {
        std::vector<std::pair<double, std::uint32_t>> scored;
        scored.reserve(ids_.size());
        for (std::size_t i = 0; i < ids_.size(); ++i) {
            scored.emplace_back(sim(query, i), static_cast<std::uint32_t>(i));
        }
        auto cmp = [this](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return ids_[a.second] < ids_[b.second];
        };
        std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(k), scored.size());
        std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), scored.end(), cmp);
        scored.resize(keep);
        return scored;
    }
};

// ---------------------------------------------------------------------------

/// Hierarchical small-world graph over cosine similarity. Build is
/// single-threaded and fully deterministic (seeded level sampling, fixed
/// insertion order); queries never mutate the graph.
class HnswIndex : public VectorIndex {
public:
    HnswIndex(std::vector<IndexEntry> entries, AnnParams params) : params_(params) {
        if (params_.max_degree < 2) throw ConfigError("ann max_degree must be >= 2");
        if (params_.build_beam < 1) throw ConfigError("ann build_beam must be >= 1");
        if (params_.search_beam < 1) throw ConfigError("ann search_beam must be >= 1");
        adopt_entries(std::move(entries));

        links_.resize(ids_.size());
        levels_.assign(ids_.size(), 0);
        level_mult_ = 1.0 / std::log(static_cast<double>(params_.max_degree));
        detail::SplitMix64 level_rng{params_.level_seed ^ 0xA5A5A5A5A5A5A5A5ull};
        for (std::size_t i = 0; i < ids_.size(); ++i) {
            levels_[i] = sample_level(level_rng);
            insert(static_cast<std::uint32_t>(i));
        }
    }

    std::string backend() const override { return "ann"; }

    nlohmann::json metadata() const override {
        return nlohmann::json{{"max_degree", params_.max_degree},
                              {"build_beam", params_.build_beam},
                              {"search_beam", params_.search_beam},
                              {"level_seed", params_.level_seed}};
    }

    const AnnParams& params() const { return params_; }

    /// Query-time beam width; does not touch the built graph.
    void set_search_beam(int beam) {
        if (beam < 1) throw ConfigError("ann search_beam must be >= 1");
        params_.search_beam = beam;
    }

protected:
    std::vector<std::pair<double, std::uint32_t>> search_impl(const float* query, int k) const override {
        if (ids_.empty()) return {};
        std::uint32_t ep = entry_point_;
        double ep_sim = sim(query, ep);
        for (int level = max_level_; level > 0; --level) {
            greedy_step(query, level, ep, ep_sim);
        }
        int beam = std::max(params_.search_beam, k);
        return search_layer(query, ep, ep_sim, beam, 0);
    }

private:
    using Scored = std::pair<double, std::uint32_t>;  // (similarity, node)

    int sample_level(detail::SplitMix64& rng) const {
        double u = rng.next_unit();
        return static_cast<int>(-std::log(u) * level_mult_);
    }

    int max_links(int level) const { return level == 0 ? 2 * params_.max_degree : params_.max_degree; }

    const std::vector<std::uint32_t>& neighbors(std::uint32_t node, int level) const {
        return links_[node][static_cast<std::size_t>(level)];
    }

    void greedy_step(const float* query, int level, std::uint32_t& ep, double& ep_sim) const {
        bool improved = true;
        while (improved) {
            improved = false;
            if (static_cast<int>(links_[ep].size()) <= level) break;
            for (std::uint32_t n : neighbors(ep, level)) {
                double s = sim(query, n);
                if (s > ep_sim) {
                    ep = n;
                    ep_sim = s;
                    improved = true;
                }
            }
        }
    }

    // Beam search at one level; returns up to `beam` best nodes, unsorted.
    std::vector<Scored> search_layer(const float* query, std::uint32_t ep, double ep_sim, int beam,
                                     int level) const {
        std::vector<std::uint8_t> visited(ids_.size(), 0);
        visited[ep] = 1;

        std::priority_queue<Scored> candidates;  // best first
        // worst first, capped at `beam`
        std::priority_queue<Scored, std::vector<Scored>, std::greater<>> results;
        candidates.emplace(ep_sim, ep);
        results.emplace(ep_sim, ep);

        while (!candidates.empty()) {
            auto [c_sim, c] = candidates.top();
            candidates.pop();
            if (results.size() >= static_cast<std::size_t>(beam) && c_sim < results.top().first) break;
            if (static_cast<int>(links_[c].size()) <= level) continue;
            for (std::uint32_t n : neighbors(c, level)) {
                if (visited[n]) continue;
                visited[n] = 1;
                double s = sim(query, n);
                if (results.size() < static_cast<std::size_t>(beam) || s > results.top().first) {
                    candidates.emplace(s, n);
                    results.emplace(s, n);
                    if (results.size() > static_cast<std::size_t>(beam)) results.pop();
                }
            }
        }

        std::vector<Scored> out;
        out.reserve(results.size());
        while (!results.empty()) {
            out.push_back(results.top());
            results.pop();
        }
        return out;
    }

    // Neighbor selection heuristic: keep a candidate only if it is closer to
    // the query node than to every already-kept neighbor, then backfill with
    // the best pruned ones.
    std::vector<std::uint32_t> select_neighbors(std::vector<Scored> candidates, int m) const {
        std::sort(candidates.begin(), candidates.end(),
                  [](const Scored& a, const Scored& b) { return a.first > b.first; });
        std::vector<std::uint32_t> selected;
        std::vector<std::uint32_t> pruned;
        selected.reserve(static_cast<std::size_t>(m));
        for (const auto& [c_sim, c] : candidates) {
            if (static_cast<int>(selected.size()) >= m) break;
            bool keep = true;
            for (std::uint32_t s : selected) {
                if (sim(vector_at(c), s) > c_sim) {
                    keep = false;
                    break;
                }
            }
            if (keep) {
                selected.push_back(c);
            } else {
                pruned.push_back(c);
            }
        }
        for (std::uint32_t c : pruned) {
            if (static_cast<int>(selected.size()) >= m) break;
            selected.push_back(c);
        }
        return selected;
    }

    void insert(std::uint32_t node) {
        int level = levels_[node];
        links_[node].resize(static_cast<std::size_t>(level) + 1);

        if (inserted_ == 0) {
            entry_point_ = node;
            max_level_ = level;
            ++inserted_;
            return;
        }

        const float* vec = vector_at(node);
        std::uint32_t ep = entry_point_;
        double ep_sim = sim(vec, ep);
        for (int lc = max_level_; lc > level; --lc) {
            greedy_step(vec, lc, ep, ep_sim);
        }

        for (int lc = std::min(level, max_level_); lc >= 0; --lc) {
            std::vector<Scored> found = search_layer(vec, ep, ep_sim, params_.build_beam, lc);
            std::vector<std::uint32_t> chosen = select_neighbors(found, params_.max_degree);
            links_[node][static_cast<std::size_t>(lc)] = chosen;

            for (std::uint32_t n : chosen) {
                auto& back = links_[n][static_cast<std::size_t>(lc)];
                back.push_back(node);
                int cap = max_links(lc);
                if (static_cast<int>(back.size()) > cap) {
                    std::vector<Scored> rescored;
                    rescored.reserve(back.size());
                    const float* nvec = vector_at(n);
                    for (std::uint32_t b : back) rescored.emplace_back(sim(nvec, b), b);
                    back = select_neighbors(std::move(rescored), cap);
                }
            }

            // best found node seeds the next (lower) layer
            for (const auto& [s, idx] : found) {
                if (s > ep_sim) {
                    ep_sim = s;
                    ep = idx;
                }
            }
        }

        if (level > max_level_) {
            max_level_ = level;
            entry_point_ = node;
        }
        ++inserted_;
    }

    AnnParams params_;
    double level_mult_ = 0.0;
    std::vector<int> levels_;
    std::vector<std::vector<std::vector<std::uint32_t>>> links_;  // [node][level] -> neighbors
    std::uint32_t entry_point_ = 0;
    int max_level_ = -1;
    std::size_t inserted_ = 0;
};

// ---------------------------------------------------------------------------

inline std::unique_ptr<VectorIndex> build_index(std::vector<IndexEntry> entries, const std::string& backend,
                                                const AnnParams& params = {}) {
    if (backend == "exact") return std::make_unique<ExactIndex>(std::move(entries));
    if (backend == "ann") return std::make_unique<HnswIndex>(std::move(entries), params);
    throw ConfigError("unknown index backend \"" + backend + "\" (expected \"exact\" or \"ann\")");
}

namespace detail {

inline std::vector<float> read_f32le(const std::string& path, std::size_t expected_count) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() != expected_count * 4) {
        throw ConfigError(path + ": expected " + std::to_string(expected_count * 4) + " bytes, found " +
                          std::to_string(bytes.size()));
    }
    std::vector<float> out(expected_count);
    for (std::size_t i = 0; i < expected_count; ++i) {
        std::uint32_t bits = (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4]))) |
                             (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4 + 1])) << 8) |
                             (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4 + 2])) << 16) |
                             (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4 + 3])) << 24);
        out[i] = std::bit_cast<float>(bits);
    }
    return out;
}

}  // namespace detail

/// Raw embedding table as written by `save` / the `embed` subcommand.
struct EmbeddingTable {
    int dim = 0;
    std::string backend;  // "raw" for plain embeddings, else the index backend
    std::vector<std::string> ids;
    std::vector<float> vectors;  // row-major
    nlohmann::json params;

    std::vector<IndexEntry> to_entries() const {
        std::vector<IndexEntry> entries;
        entries.reserve(ids.size());
        for (std::size_t i = 0; i < ids.size(); ++i) {
            const float* row = vectors.data() + i * static_cast<std::size_t>(dim);
            entries.push_back({ids[i], EmbeddingVector(row, row + dim)});
        }
        return entries;
    }
};

inline EmbeddingTable load_embedding_table(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream mf(fs::path(dir) / "manifest.json", std::ios::binary);
    if (!mf) throw ConfigError("cannot open manifest.json in " + dir);
    nlohmann::json manifest;
    try {
        mf >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(dir + "/manifest.json: " + e.what());
    }

    EmbeddingTable table;
    table.dim = manifest.at("dim").get<int>();
    table.backend = manifest.value("backend", "raw");
    table.params = manifest.value("params", nlohmann::json::object());
    std::size_t count = manifest.at("count").get<std::size_t>();

    {
        std::ifstream in(fs::path(dir) / "ids.txt", std::ios::binary);
        if (!in) throw ConfigError("cannot open ids.txt in " + dir);
        std::string id;
        while (std::getline(in, id)) {
            if (!id.empty() && id.back() == '\r') id.pop_back();
            if (!id.empty()) table.ids.push_back(id);
        }
    }
    if (table.ids.size() != count) {
        throw ConfigError(dir + ": manifest count " + std::to_string(count) + " but ids.txt has " +
                          std::to_string(table.ids.size()) + " lines");
    }
    table.vectors = detail::read_f32le((fs::path(dir) / "vectors.f32le").string(),
                                       count * static_cast<std::size_t>(table.dim));
    return table;
}

/// Write a raw (index-less) embedding table in the index directory layout.
inline void save_embedding_table(const std::string& dir, int dim, const std::vector<std::string>& ids,
                                 const std::vector<float>& vectors) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json manifest{{"format", "evret-index-v1"}, {"backend", "raw"}, {"dim", dim}, {"count", ids.size()}};
    std::ofstream mf(fs::path(dir) / "manifest.json", std::ios::binary);
    mf << manifest.dump(2) << "\n";
    std::ofstream vf(fs::path(dir) / "vectors.f32le", std::ios::binary);
    for (float f : vectors) {
        std::uint32_t bits = std::bit_cast<std::uint32_t>(f);
        char buf[4] = {static_cast<char>(bits & 0xFF), static_cast<char>((bits >> 8) & 0xFF),
                       static_cast<char>((bits >> 16) & 0xFF), static_cast<char>((bits >> 24) & 0xFF)};
        vf.write(buf, 4);
    }
    std::ofstream idf(fs::path(dir) / "ids.txt", std::ios::binary);
    for (const auto& id : ids) idf << id << "\n";
}

/// Load an index directory. ANN graphs are rebuilt deterministically from the
/// persisted vectors and manifest params (the layout stores no graph).
inline std::unique_ptr<VectorIndex> load_index(const std::string& dir) {
    EmbeddingTable table = load_embedding_table(dir);
    if (table.backend == "raw") {
        throw ConfigError(dir + " holds raw embeddings; run the index step to pick a backend");
    }
    AnnParams params;
    if (table.backend == "ann") {
        params.max_degree = table.params.value("max_degree", params.max_degree);
        params.build_beam = table.params.value("build_beam", params.build_beam);
        params.search_beam = table.params.value("search_beam", params.search_beam);
        params.level_seed = table.params.value("level_seed", params.level_seed);
    }
    return build_index(table.to_entries(), table.backend, params);
}

}  // namespace evret
