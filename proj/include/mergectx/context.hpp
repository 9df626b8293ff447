#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mergectx {

using ChunkId = std::uint64_t;

/// Counts tokens of a text. Implementations must be deterministic.
class Tokenizer {
public:
    virtual ~Tokenizer() = default;
    virtual std::size_t count(std::string_view text) const = 0;
    virtual std::string name() const = 0;
};

/// Reference tokenizer: one token per whitespace-separated word.
class WhitespaceTokenizer final : public Tokenizer {
public:
    std::size_t count(std::string_view text) const override;
    std::string name() const override { return "whitespace"; }
};

/// An original retrieved chunk or the result of a fusion.
///
/// `provenance` is kept sorted and lists the original chunk ids the text was
/// derived from. Originals have provenance {id} and depth 0.
struct Chunk {
    ChunkId id = 0;
    std::string text;
    std::size_t token_len = 0;
    std::vector<ChunkId> provenance;
    std::size_t depth = 0;
    /// External identifier from the input file; fused chunks get "f<id>".
    std::string label;

    bool is_original() const { return depth == 0; }
};

struct ScoredChunk {
    Chunk chunk;
    double score = 0.0;

    ChunkId id() const { return chunk.id; }
};

struct Query {
    std::string text;
    std::optional<std::string> id;
};

/// Throws ConfigError on empty text.
Query make_query(std::string text, std::optional<std::string> id = std::nullopt);

struct Budget {
    std::size_t limit_tokens = 0;
    double multiplier = 0.0;
    double avg_chunk_len = 0.0;
};

Chunk make_original_chunk(ChunkId id, std::string text, const Tokenizer& tokenizer,
                          std::string label = {});

/// Builds the chunk produced by fusing `a` and `b` into `text`.
Chunk make_fused_chunk(ChunkId id, std::string text, const Chunk& a, const Chunk& b,
                       const Tokenizer& tokenizer);

/// Assigns ids 0, 1, 2, ... in input order.
std::vector<Chunk> make_original_chunks(const std::vector<std::string>& texts,
                                        const Tokenizer& tokenizer);

Budget compute_budget(std::span<const Chunk> chunks, double multiplier);

std::size_t total_length(std::span<const Chunk> chunks);
std::size_t total_length(std::span<const ScoredChunk> chunks);

std::vector<Chunk> unwrap(std::span<const ScoredChunk> scored);

/// Strict weak order used for every "lowest score first" choice: ascending score,
/// then ascending id.
bool score_ascending(const ScoredChunk& a, const ScoredChunk& b);
/// Descending score, ties by ascending id.
bool score_descending(const ScoredChunk& a, const ScoredChunk& b);

enum class MergeStrategy { symmetric, asymmetric };
enum class MergeSchedule { sequential, hierarchical };

std::string_view to_string(MergeStrategy s);
std::string_view to_string(MergeSchedule s);
MergeStrategy parse_strategy(std::string_view s);
MergeSchedule parse_schedule(std::string_view s);

/// One fusion in a merge run.
struct TraceNode {
    ChunkId result = 0;
    ChunkId left = 0;
    ChunkId right = 0;
    std::size_t layer = 0;
    MergeStrategy strategy = MergeStrategy::symmetric;
    /// Set for asymmetric fusions: the parent that acted as host.
    std::optional<ChunkId> anchor;
    std::vector<std::string> warnings;
};

struct TraceChunkInfo {
    ChunkId id = 0;
    std::string label;
    double score = 0.0;
    std::size_t token_len = 0;
    std::size_t depth = 0;
};

struct LayerStats {
    std::size_t layer = 0;
    std::size_t working_size = 0;
    std::size_t pairs = 0;
    /// Batches of at most B concurrent fusions needed for this layer.
    std::size_t rounds = 0;
};

/// The binary merge forest of a run. Always produced, even when nothing merged.
struct MergeTrace {
    std::vector<TraceNode> nodes;
    std::set<ChunkId> initial_ids;
    std::set<ChunkId> final_ids;
    std::map<ChunkId, TraceChunkInfo> chunks;
    std::vector<LayerStats> layers;
    /// False when the run aborted; nodes then hold only completed fusions.
    bool complete = true;

    std::size_t fusion_count() const { return nodes.size(); }
    std::size_t batch_rounds() const;
    void record_chunk(const ScoredChunk& sc);
};

/// Checks the forest, conservation and layer-order invariants against the final
/// context. Returns human-readable violations; empty means valid.
std::vector<std::string> validate_trace(const MergeTrace& trace,
                                        std::span<const ScoredChunk> final_context);

} // namespace mergectx
