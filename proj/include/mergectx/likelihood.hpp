#pragma once

#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mergectx/context.hpp"
#include "mergectx/error.hpp"
#include "mergectx/http_client.hpp"
#include "mergectx/scoring.hpp"

namespace mergectx {

/// Supplies log P(x_t | anchor, x_<t) for every token of a source chunk.
/// All values use the natural log.
class NllBackend {
public:
    virtual ~NllBackend() = default;

    virtual std::vector<double> source_logprobs(const Chunk& source, const Chunk& anchor) const = 0;

    /// Number of log-probabilities a well-formed answer must contain, or nullopt
    /// when only the backend itself can tell (remote tokenizers).
    virtual std::optional<std::size_t> expected_token_count(const Chunk& source) const;

    virtual bool concurrent_safe() const { return true; }
    virtual std::string kind() const = 0;
};

/// ln(V) per token, whatever the context.
class UniformNllBackend final : public NllBackend {
public:
    explicit UniformNllBackend(std::size_t vocab_size);
    std::vector<double> source_logprobs(const Chunk& source, const Chunk& anchor) const override;
    std::string kind() const override { return "uniform-mock"; }

private:
    double logprob_;
};

/// Additive-smoothed bigram model over whitespace tokens, trained on the anchor
/// text alone and evaluated on the source tokens. The first source token is
/// conditioned on the anchor's last token. Vocabulary is the union of anchor and
/// source tokens plus one unknown symbol.
class BigramNllBackend final : public NllBackend {
public:
    explicit BigramNllBackend(double alpha = 1.0,
                              std::size_t max_anchor_tokens = std::numeric_limits<std::size_t>::max());
    std::vector<double> source_logprobs(const Chunk& source, const Chunk& anchor) const override;
    std::string kind() const override { return "bigram-oracle"; }

private:
    double alpha_;
    std::size_t max_anchor_tokens_;
};

/// Completion endpoint with echoed prompt logprobs. The prompt is
/// anchor + "\n" + source; only tokens whose offsets fall inside the source span
/// contribute.
class RemoteLogprobBackend final : public NllBackend {
public:
    RemoteLogprobBackend(JsonHttpClient client,
                         std::size_t max_anchor_tokens = std::numeric_limits<std::size_t>::max(),
                         std::string path = "/completions");

    std::vector<double> source_logprobs(const Chunk& source, const Chunk& anchor) const override;
    std::optional<std::size_t> expected_token_count(const Chunk&) const override { return std::nullopt; }
    std::string kind() const override { return "remote-logprob"; }

    /// Request body sent for one (source, anchor) pair.
    nlohmann::json request_body(const Chunk& source, const Chunk& anchor) const;

    /// Extracts the source-span logprobs from a completion response.
    static std::vector<double> parse_span(const nlohmann::json& response, std::size_t span_begin,
                                          std::size_t span_end);

private:
    JsonHttpClient client_;
    std::size_t max_anchor_tokens_;
    std::string path_;
};

/// Keeps the last `max_tokens` whitespace tokens of `text`.
std::string truncate_to_tail(const std::string& text, std::size_t max_tokens);

/// -(1/l) Σ log P(x_t | anchor, x_<t).
double conditional_nll(const NllBackend& backend, const Chunk& source, const Chunk& anchor);

/// Candidate minimizing conditional_nll(source | candidate); ties go to the lower id.
/// NLL values are computed with up to `parallelism` concurrent calls, then compared.
ScoredChunk best_anchor(const NllBackend& backend, const ScoredChunk& source,
                        std::span<const ScoredChunk> candidates, std::size_t parallelism = 1);

enum class SimilarityMetric { cosine, nll };

std::string_view to_string(SimilarityMetric m);

struct PairwiseMatrix {
    /// Row/column order: descending relevance score, ties by id.
    std::vector<ChunkId> ids;
    std::vector<std::string> labels;
    /// Row-major n*n. Diagonal cells hold NaN.
    std::vector<double> values;
    SimilarityMetric metric = SimilarityMetric::cosine;

    std::size_t size() const { return ids.size(); }
    double at(std::size_t row, std::size_t col) const { return values[row * ids.size() + col]; }
};

/// Raised when a backend fails mid-matrix; `partial` holds the finished rows.
class MatrixError : public Error {
public:
    MatrixError(const std::string& what, PairwiseMatrix partial, std::size_t rows_done)
        : Error(what), partial_(std::move(partial)), rows_done_(rows_done) {}

    const PairwiseMatrix& partial() const { return partial_; }
    std::size_t rows_done() const { return rows_done_; }

private:
    PairwiseMatrix partial_;
    std::size_t rows_done_;
};

/// cell(i, j) = cosine(embed(c_i), embed(c_j)) or conditional_nll(c_i | c_j).
PairwiseMatrix pairwise_matrix(std::span<const ScoredChunk> chunks, SimilarityMetric metric,
                               const Embedder* embedder, const NllBackend* nll);

/// CSV with a "# metric: <name>" comment line, a header of chunk labels and an
/// empty diagonal cell.
std::string matrix_to_csv(const PairwiseMatrix& m);

} // namespace mergectx
