#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mergectx/context.hpp"
#include "mergectx/error.hpp"
#include "mergectx/fusion.hpp"
#include "mergectx/likelihood.hpp"
#include "mergectx/scoring.hpp"

namespace mergectx {

struct MergeConfig {
    MergeStrategy strategy = MergeStrategy::symmetric;
    MergeSchedule schedule = MergeSchedule::sequential;
    Budget budget;
    /// Maximum concurrent fusion (and NLL) calls within a hierarchical layer.
    std::size_t concurrency = 8;
    /// When false, a fused chunk inherits the higher of its parents' scores.
    bool rescore_fused = true;
};

/// Everything a merge run calls out to. `nll` is required for asymmetric runs.
struct MergeBackends {
    const Tokenizer& tokenizer;
    const Scorer& scorer;
    const Fuser& fuser;
    const NllBackend* nll = nullptr;
};

struct MergeResult {
    std::vector<ScoredChunk> context;
    MergeTrace trace;
};

/// A planned fusion. For asymmetric plans `left` is the anchor and `right` the
/// source, matching the argument order of fuse().
struct PlannedPair {
    ScoredChunk left;
    ScoredChunk right;
};

struct LayerPlan {
    std::vector<PlannedPair> pairs;
    std::vector<ScoredChunk> leftovers;
    std::size_t layer_index = 0;
};

/// A run aborted after a fusion or backend failure; the partial trace is kept.
class MergeAborted : public Error {
public:
    MergeAborted(const std::string& what, MergeTrace partial)
        : Error(what), partial_(std::move(partial)) {}
    const MergeTrace& partial_trace() const { return partial_; }

private:
    MergeTrace partial_;
};

/// Indices of the two lowest-scoring chunks (lowest first); ties by lower id.
std::pair<std::size_t, std::size_t> select_pair_symmetric(std::span<const ScoredChunk> working);

/// Index of the global minimum-score chunk and of its best anchor among the rest.
std::pair<std::size_t, std::size_t> select_source_and_anchor(std::span<const ScoredChunk> working,
                                                             const NllBackend& nll,
                                                             std::size_t parallelism = 1);

/// Sorts ascending by score and pairs (1,2), (3,4), ...; an odd set leaves the
/// highest-scoring chunk over.
LayerPlan plan_symmetric_layer(std::span<const ScoredChunk> working);

/// Greedy select-and-remove: floor(n/2) times, take the lowest-score available
/// chunk as source and its minimum-NLL available partner as anchor. NLL values
/// are computed against the layer-start pool.
LayerPlan plan_asymmetric_layer(std::span<const ScoredChunk> working, const NllBackend& nll,
                                std::size_t parallelism = 1);

/// Repeats select, fuse, update until the budget holds or one chunk remains.
MergeResult merge_sequential(std::span<const ScoredChunk> working, const Query& query,
                             const MergeConfig& config, const MergeBackends& backends);

/// Per layer: plan, fuse all pairs with at most `concurrency` calls in flight,
/// rescore, and continue with leftovers plus fused chunks. The budget is only
/// checked between layers.
MergeResult merge_hierarchical(std::span<const ScoredChunk> working, const Query& query,
                               const MergeConfig& config, const MergeBackends& backends);

/// Dispatches on config.schedule.
MergeResult run_merge(std::span<const ScoredChunk> working, const Query& query,
                      const MergeConfig& config, const MergeBackends& backends);

struct RoundsBound {
    /// Σ over k with N/2^k > M of max(ceil((N/2^k)/B), 1).
    std::size_t summation = 0;
    /// ceil(N/B + log2(N/M)).
    std::size_t closed_form = 0;

    bool holds() const { return summation <= closed_form; }
};

RoundsBound rounds_upper_bound(std::size_t n, std::size_t m, std::size_t b);

/// ceil(log2(n/m)), exact for integers.
std::size_t ceil_log2_ratio(std::size_t n, std::size_t m);

/// Maximum generation depth over the trace's final chunks.
std::size_t trace_max_depth(const MergeTrace& trace);

/// Graphviz digraph: nodes are chunks labeled score/len/depth, edges run parent
/// to child and carry the layer and strategy.
std::string trace_to_dot(const MergeTrace& trace);

/// One JSON object per line: "initial" records, one "fusion" per node, "layer"
/// stats and a closing "final" record.
std::string trace_to_jsonl(const MergeTrace& trace);

/// Describes the first layer a run would execute, without calling the fuser.
/// Later layers depend on fusion output, so only their size recurrence is shown.
std::string describe_plan(std::span<const ScoredChunk> working, const MergeConfig& config,
                          const NllBackend* nll);

} // namespace mergectx
