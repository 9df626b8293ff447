#include "mergectx/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <spdlog/spdlog.h>

#include "mergectx/error.hpp"
#include "mergectx/text.hpp"

namespace mergectx {

namespace {

std::set<std::string> token_set(std::string_view text) {
    auto toks = normalized_tokens(text);
    return {toks.begin(), toks.end()};
}

double checked(double s, const Chunk& chunk) {
    if (!std::isfinite(s)) {
        throw Error("scorer produced a non-finite score for chunk " + std::to_string(chunk.id));
    }
    return s;
}

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

} // namespace

std::vector<double> Scorer::score_all(std::span<const Chunk> chunks, const Query& query) const {
    std::vector<double> out;
    out.reserve(chunks.size());
    for (const auto& c : chunks) out.push_back(score(c, query));
    return out;
}

double LexicalOverlapScorer::score(const Chunk& chunk, const Query& query) const {
    if (trim(chunk.text).empty()) {
        spdlog::warn("chunk {} has empty text; scoring 0", chunk.id);
        return 0.0;
    }
    const auto q = token_set(query.text);
    if (q.empty()) return 0.0;
    const auto c = token_set(chunk.text);
    std::size_t hits = 0;
    for (const auto& t : q) hits += c.count(t);
    return static_cast<double>(hits) / static_cast<double>(q.size());
}

FixedTableScorer::FixedTableScorer(std::map<ChunkId, double> table) : table_(std::move(table)) {}

FixedTableScorer FixedTableScorer::from_labels(const std::map<std::string, double>& by_label,
                                               std::span<const Chunk> chunks) {
    std::map<ChunkId, double> table;
    for (const auto& c : chunks) {
        auto it = by_label.find(c.label);
        if (it == by_label.end()) throw ConfigError("score table has no entry for chunk '" + c.label + "'");
        table[c.id] = it->second;
    }
    return FixedTableScorer(std::move(table));
}

double FixedTableScorer::score(const Chunk& chunk, const Query&) const {
    if (auto it = table_.find(chunk.id); it != table_.end()) return it->second;
    if (chunk.provenance.empty()) throw Error("no table score for chunk " + std::to_string(chunk.id));
    double sum = 0.0;
    for (ChunkId id : chunk.provenance) {
        auto it = table_.find(id);
        if (it == table_.end()) throw Error("no table score for chunk " + std::to_string(id));
        sum += it->second;
    }
    return sum / static_cast<double>(chunk.provenance.size());
}

std::vector<std::vector<double>> HashingEmbedder::embed(std::span<const std::string> texts) const {
    std::vector<std::vector<double>> out;
    out.reserve(texts.size());
    for (const auto& t : texts) {
        std::vector<double> v(dims_, 0.0);
        for (const auto& tok : normalized_tokens(t)) v[fnv1a(tok) % dims_] += 1.0;
        out.push_back(std::move(v));
    }
    return out;
}

std::vector<std::vector<double>> FixedEmbeddingTable::embed(std::span<const std::string> texts) const {
    std::vector<std::vector<double>> out;
    out.reserve(texts.size());
    for (const auto& t : texts) {
        auto it = table_.find(t);
        if (it == table_.end()) throw Error("no fixed embedding for text: " + t.substr(0, 60));
        out.push_back(it->second);
    }
    return out;
}

std::vector<std::vector<double>> RemoteEmbedder::embed(std::span<const std::string> texts) const {
    nlohmann::json body{{"model", client_.endpoint().model},
                        {"input", std::vector<std::string>(texts.begin(), texts.end())}};
    const auto res = client_.post(path_, body);
    if (!res.contains("data") || !res["data"].is_array() || res["data"].size() != texts.size()) {
        throw TransportError("embedding response does not align with inputs", false);
    }
    std::vector<std::vector<double>> out(texts.size());
    for (std::size_t i = 0; i < texts.size(); ++i) {
        const auto& item = res["data"][i];
        const std::size_t idx = item.value("index", i);
        if (idx >= texts.size()) throw TransportError("embedding index out of range", false);
        out[idx] = item.at("embedding").get<std::vector<double>>();
    }
    return out;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw Error("embedding dimensions differ");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

double EmbeddingCosineScorer::score(const Chunk& chunk, const Query& query) const {
    return score_all(std::span<const Chunk>(&chunk, 1), query).front();
}

std::vector<double> EmbeddingCosineScorer::score_all(std::span<const Chunk> chunks,
                                                     const Query& query) const {
    std::vector<std::string> texts{query.text};
    for (const auto& c : chunks) texts.push_back(c.text);
    const auto vecs = embedder_->embed(texts);
    std::vector<double> out;
    out.reserve(chunks.size());
    for (std::size_t i = 0; i < chunks.size(); ++i) out.push_back(cosine_similarity(vecs[0], vecs[i + 1]));
    return out;
}

double RemoteRerankerScorer::score(const Chunk& chunk, const Query& query) const {
    return score_all(std::span<const Chunk>(&chunk, 1), query).front();
}

std::vector<double> RemoteRerankerScorer::score_all(std::span<const Chunk> chunks,
                                                    const Query& query) const {
    if (chunks.empty()) return {};
    std::vector<std::string> docs;
    for (const auto& c : chunks) docs.push_back(c.text);
    const auto res = client_.post(path_, nlohmann::json{{"query", query.text}, {"documents", docs}});
    if (!res.contains("scores") || !res["scores"].is_array() || res["scores"].size() != chunks.size()) {
        throw TransportError("reranker response scores do not align with documents", false);
    }
    return res["scores"].get<std::vector<double>>();
}

double score(const Scorer& backend, const Chunk& chunk, const Query& query) {
    if (trim(query.text).empty()) throw ConfigError("query text is empty");
    return checked(backend.score(chunk, query), chunk);
}

std::vector<ScoredChunk> score_batch(const Scorer& backend, std::span<const Chunk> chunks,
                                     const Query& query) {
    if (trim(query.text).empty()) throw ConfigError("query text is empty");
    if (chunks.empty()) return {};
    const auto scores = backend.score_all(chunks, query);
    if (scores.size() != chunks.size()) throw Error("scorer returned a misaligned batch");
    std::vector<ScoredChunk> out;
    out.reserve(chunks.size());
    for (std::size_t i = 0; i < chunks.size(); ++i) {
        out.push_back(ScoredChunk{chunks[i], checked(scores[i], chunks[i])});
    }
    return out;
}

std::vector<ScoredChunk> select_topk(std::span<const ScoredChunk> scored, std::size_t k) {
    if (k == 0) throw ConfigError("k must be at least 1");
    std::vector<ScoredChunk> sorted(scored.begin(), scored.end());
    std::sort(sorted.begin(), sorted.end(), score_descending);
    if (sorted.size() > k) sorted.resize(k);
    return sorted;
}

} // namespace mergectx
