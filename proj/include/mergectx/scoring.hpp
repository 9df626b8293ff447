#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mergectx/context.hpp"
#include "mergectx/http_client.hpp"

namespace mergectx {

/// Query-relevance scorer S(c; q). Higher means more relevant.
class Scorer {
public:
    virtual ~Scorer() = default;

    virtual double score(const Chunk& chunk, const Query& query) const = 0;

    /// Scores in input order. Remote backends override this to batch.
    virtual std::vector<double> score_all(std::span<const Chunk> chunks, const Query& query) const;

    /// False when the engine must not call this scorer from several threads.
    virtual bool concurrent_safe() const { return true; }
    virtual std::string kind() const = 0;
};

/// |tokens(chunk) ∩ tokens(query)| / |tokens(query)| over normalized token sets.
class LexicalOverlapScorer final : public Scorer {
public:
    double score(const Chunk& chunk, const Query& query) const override;
    std::string kind() const override { return "lexical-overlap"; }
};

/// Table lookup by chunk id. A fused chunk absent from the table scores as the
/// mean of its original chunks' entries.
class FixedTableScorer final : public Scorer {
public:
    explicit FixedTableScorer(std::map<ChunkId, double> table);

    /// Binds a label->score table to the chunks that carry those labels.
    static FixedTableScorer from_labels(const std::map<std::string, double>& by_label,
                                        std::span<const Chunk> chunks);

    double score(const Chunk& chunk, const Query& query) const override;
    std::string kind() const override { return "fixed-table"; }

private:
    std::map<ChunkId, double> table_;
};

/// Produces dense vectors for texts.
class Embedder {
public:
    virtual ~Embedder() = default;
    virtual std::vector<std::vector<double>> embed(std::span<const std::string> texts) const = 0;
};

/// Bag of normalized tokens hashed into a fixed number of buckets.
class HashingEmbedder final : public Embedder {
public:
    explicit HashingEmbedder(std::size_t dims = 256) : dims_(dims) {}
    std::vector<std::vector<double>> embed(std::span<const std::string> texts) const override;

private:
    std::size_t dims_;
};

/// Vectors looked up by exact text.
class FixedEmbeddingTable final : public Embedder {
public:
    explicit FixedEmbeddingTable(std::map<std::string, std::vector<double>> table)
        : table_(std::move(table)) {}
    std::vector<std::vector<double>> embed(std::span<const std::string> texts) const override;

private:
    std::map<std::string, std::vector<double>> table_;
};

/// OpenAI-style embeddings endpoint: {model, input:[...]} -> {data:[{embedding}]}.
class RemoteEmbedder final : public Embedder {
public:
    explicit RemoteEmbedder(JsonHttpClient client, std::string path = "/embeddings")
        : client_(std::move(client)), path_(std::move(path)) {}
    std::vector<std::vector<double>> embed(std::span<const std::string> texts) const override;

private:
    JsonHttpClient client_;
    std::string path_;
};

/// Zero vectors have cosine 0 with everything.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

class EmbeddingCosineScorer final : public Scorer {
public:
    explicit EmbeddingCosineScorer(std::shared_ptr<const Embedder> embedder)
        : embedder_(std::move(embedder)) {}

    double score(const Chunk& chunk, const Query& query) const override;
    std::vector<double> score_all(std::span<const Chunk> chunks, const Query& query) const override;
    std::string kind() const override { return "embedding-cosine"; }

private:
    std::shared_ptr<const Embedder> embedder_;
};

/// Cross-encoder reranker over HTTP: {query, documents:[...]} -> {scores:[...]}.
/// Scores are used as returned.
class RemoteRerankerScorer final : public Scorer {
public:
    explicit RemoteRerankerScorer(JsonHttpClient client, std::string path = "/rerank")
        : client_(std::move(client)), path_(std::move(path)) {}

    double score(const Chunk& chunk, const Query& query) const override;
    std::vector<double> score_all(std::span<const Chunk> chunks, const Query& query) const override;
    std::string kind() const override { return "remote-reranker"; }

private:
    JsonHttpClient client_;
    std::string path_;
};

double score(const Scorer& backend, const Chunk& chunk, const Query& query);

/// Elementwise equal to score(); preserves input order. Errors propagate and no
/// partial result is returned.
std::vector<ScoredChunk> score_batch(const Scorer& backend, std::span<const Chunk> chunks,
                                     const Query& query);

/// The k highest-scoring chunks, descending by score, ties by lower id.
std::vector<ScoredChunk> select_topk(std::span<const ScoredChunk> scored, std::size_t k);

} // namespace mergectx
