#include "mergectx/merge.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"
#include "mergectx/parallel.hpp"
#include "mergectx/text.hpp"

namespace mergectx {

namespace {

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

void validate_config(const MergeConfig& config, const MergeBackends& backends) {
    if (config.concurrency < 1) throw ConfigError("concurrency limit B must be at least 1");
    if (config.budget.limit_tokens < 1) throw ConfigError("budget limit must be positive");
    if (config.strategy == MergeStrategy::asymmetric && !backends.nll) {
        throw ConfigError("asymmetric merging needs an NLL backend");
    }
}

bool over_budget(std::span<const ScoredChunk> working, const Budget& budget) {
    return total_length(working) > budget.limit_tokens && working.size() > 1;
}

ChunkId next_free_id(std::span<const ScoredChunk> working) {
    ChunkId next = 0;
    for (const auto& s : working) {
        next = std::max(next, s.id() + 1);
        for (ChunkId p : s.chunk.provenance) next = std::max(next, p + 1);
    }
    return next;
}

MergeTrace start_trace(std::span<const ScoredChunk> working) {
    MergeTrace trace;
    for (const auto& s : working) {
        trace.initial_ids.insert(s.chunk.provenance.begin(), s.chunk.provenance.end());
        trace.record_chunk(s);
    }
    return trace;
}

void finish_trace(MergeTrace& trace, std::span<const ScoredChunk> working) {
    trace.final_ids.clear();
    for (const auto& s : working) {
        trace.final_ids.insert(s.id());
        trace.record_chunk(s);
    }
}

TraceNode make_node(const PlannedPair& pair, const FusionResult& fused, std::size_t layer,
                    MergeStrategy strategy) {
    TraceNode node;
    node.result = fused.chunk.id;
    node.left = pair.left.id();
    node.right = pair.right.id();
    node.layer = layer;
    node.strategy = strategy;
    if (strategy == MergeStrategy::asymmetric) node.anchor = pair.left.id();
    node.warnings = fused.warnings;
    return node;
}

double inherited_score(const PlannedPair& pair) { return std::max(pair.left.score, pair.right.score); }

} // namespace

std::pair<std::size_t, std::size_t> select_pair_symmetric(std::span<const ScoredChunk> working) {
    if (working.size() < 2) throw Error("pair selection needs at least 2 chunks");
    std::size_t first = 0;
    std::size_t second = 1;
    if (score_ascending(working[1], working[0])) std::swap(first, second);
    for (std::size_t i = 2; i < working.size(); ++i) {
        if (score_ascending(working[i], working[first])) {
            second = first;
            first = i;
        } else if (score_ascending(working[i], working[second])) {
            second = i;
        }
    }
    return {first, second};
}

std::pair<std::size_t, std::size_t> select_source_and_anchor(std::span<const ScoredChunk> working,
                                                             const NllBackend& nll,
                                                             std::size_t parallelism) {
    if (working.size() < 2) throw Error("pair selection needs at least 2 chunks");
    std::size_t source = 0;
    for (std::size_t i = 1; i < working.size(); ++i) {
        if (score_ascending(working[i], working[source])) source = i;
    }
    std::vector<ScoredChunk> candidates;
    std::vector<std::size_t> index;
    for (std::size_t i = 0; i < working.size(); ++i) {
        if (i == source) continue;
        candidates.push_back(working[i]);
        index.push_back(i);
    }
    const auto anchor = best_anchor(nll, working[source], candidates, parallelism);
    for (std::size_t k = 0; k < candidates.size(); ++k) {
        if (candidates[k].id() == anchor.id()) return {source, index[k]};
    }
    throw Error("anchor not found among candidates");
}

LayerPlan plan_symmetric_layer(std::span<const ScoredChunk> working) {
    LayerPlan plan;
    std::vector<ScoredChunk> sorted(working.begin(), working.end());
    std::sort(sorted.begin(), sorted.end(), score_ascending);
    if (sorted.size() < 2) {
        plan.leftovers = std::move(sorted);
        return plan;
    }
    std::size_t i = 0;
    for (; i + 1 < sorted.size(); i += 2) plan.pairs.push_back({sorted[i], sorted[i + 1]});
    for (; i < sorted.size(); ++i) plan.leftovers.push_back(sorted[i]);
    return plan;
}

LayerPlan plan_asymmetric_layer(std::span<const ScoredChunk> working, const NllBackend& nll,
                                std::size_t parallelism) {
    LayerPlan plan;
    std::vector<ScoredChunk> pool(working.begin(), working.end());
    std::sort(pool.begin(), pool.end(), score_ascending);
    std::vector<bool> available(pool.size(), true);
    const std::size_t limit = nll.concurrent_safe() ? parallelism : 1;

    const std::size_t k_pairs = pool.size() / 2;
    for (std::size_t k = 0; k < k_pairs; ++k) {
        std::size_t source = 0;
        while (!available[source]) ++source;
        std::vector<std::size_t> candidates;
        for (std::size_t j = 0; j < pool.size(); ++j) {
            if (available[j] && j != source) candidates.push_back(j);
        }
        std::vector<double> values(candidates.size());
        bounded_parallel_for(candidates.size(), limit, [&](std::size_t c) {
            values[c] = conditional_nll(nll, pool[source].chunk, pool[candidates[c]].chunk);
        });
        std::size_t best = 0;
        for (std::size_t c = 1; c < candidates.size(); ++c) {
            const bool lower = values[c] < values[best];
            const bool tie_lower_id = values[c] == values[best] && pool[candidates[c]].id() < pool[candidates[best]].id();
            if (lower || tie_lower_id) best = c;
        }
        const std::size_t anchor = candidates[best];
        plan.pairs.push_back({pool[anchor], pool[source]});
        available[source] = false;
        available[anchor] = false;
    }
    for (std::size_t j = 0; j < pool.size(); ++j) {
        if (available[j]) plan.leftovers.push_back(pool[j]);
    }
    return plan;
}

MergeResult merge_sequential(std::span<const ScoredChunk> working, const Query& query,
                             const MergeConfig& config, const MergeBackends& backends) {
    validate_config(config, backends);
    if (working.empty()) throw ConfigError("empty context set");

    std::vector<ScoredChunk> current(working.begin(), working.end());
    MergeTrace trace = start_trace(current);
    ChunkId next_id = next_free_id(current);
    std::size_t iteration = 0;

    while (over_budget(current, config.budget)) {
        try {
            std::size_t i = 0;
            std::size_t j = 0;
            if (config.strategy == MergeStrategy::symmetric) {
                std::tie(i, j) = select_pair_symmetric(current);
            } else {
                // Fuse(anchor, source): the anchor is the host.
                auto [source, anchor] = select_source_and_anchor(current, *backends.nll);
                i = anchor;
                j = source;
            }
            const PlannedPair pair{current[i], current[j]};
            auto fused = fuse(backends.fuser, pair.left.chunk, pair.right.chunk, query, config.strategy,
                              next_id++, backends.tokenizer);
            const double s = config.rescore_fused ? score(backends.scorer, fused.chunk, query)
                                                  : inherited_score(pair);
            trace.nodes.push_back(make_node(pair, fused, iteration, config.strategy));
            trace.layers.push_back(LayerStats{iteration, current.size(), 1, 1});

            ScoredChunk result{std::move(fused.chunk), s};
            trace.record_chunk(result);
            current.erase(current.begin() + static_cast<std::ptrdiff_t>(std::max(i, j)));
            current.erase(current.begin() + static_cast<std::ptrdiff_t>(std::min(i, j)));
            current.push_back(std::move(result));
            ++iteration;
        } catch (const std::exception& e) {
            trace.complete = false;
            finish_trace(trace, current);
            throw MergeAborted(std::string("merge aborted at iteration ") + std::to_string(iteration) +
                                   ": " + e.what(),
                               std::move(trace));
        }
    }
    finish_trace(trace, current);
    return MergeResult{std::move(current), std::move(trace)};
}

MergeResult merge_hierarchical(std::span<const ScoredChunk> working, const Query& query,
                               const MergeConfig& config, const MergeBackends& backends) {
    validate_config(config, backends);
    if (working.empty()) throw ConfigError("empty context set");

    std::vector<ScoredChunk> current(working.begin(), working.end());
    MergeTrace trace = start_trace(current);
    ChunkId next_id = next_free_id(current);
    const std::size_t limit = std::max<std::size_t>(1, std::min(config.concurrency, backends.fuser.max_in_flight()));
    std::size_t layer = 0;

    while (over_budget(current, config.budget)) {
        LayerPlan plan;
        try {
            plan = config.strategy == MergeStrategy::symmetric
                       ? plan_symmetric_layer(current)
                       : plan_asymmetric_layer(current, *backends.nll, config.concurrency);
        } catch (const std::exception& e) {
            trace.complete = false;
            finish_trace(trace, current);
            throw MergeAborted("merge aborted while planning layer " + std::to_string(layer) + ": " + e.what(),
                               std::move(trace));
        }
        plan.layer_index = layer;

        const std::size_t n_pairs = plan.pairs.size();
        std::vector<FusionResult> fused(n_pairs);
        std::vector<bool> completed;
        try {
            bounded_parallel_for(
                n_pairs, limit,
                [&](std::size_t p) {
                    const auto& pair = plan.pairs[p];
                    fused[p] = fuse(backends.fuser, pair.left.chunk, pair.right.chunk, query, config.strategy,
                                    next_id + p, backends.tokenizer);
                },
                &completed);
        } catch (const std::exception& e) {
            for (std::size_t p = 0; p < n_pairs; ++p) {
                if (!completed[p]) continue;
                trace.nodes.push_back(make_node(plan.pairs[p], fused[p], layer, config.strategy));
                trace.record_chunk(ScoredChunk{fused[p].chunk, inherited_score(plan.pairs[p])});
            }
            trace.complete = false;
            finish_trace(trace, current);
            throw MergeAborted("merge aborted in layer " + std::to_string(layer) + ": " + e.what(), std::move(trace));
        }
        next_id += n_pairs;

        std::vector<double> scores(n_pairs);
        try {
            if (config.rescore_fused) {
                std::vector<Chunk> chunks;
                chunks.reserve(n_pairs);
                for (const auto& f : fused) chunks.push_back(f.chunk);
                const auto scored = score_batch(backends.scorer, chunks, query);
                for (std::size_t p = 0; p < n_pairs; ++p) scores[p] = scored[p].score;
            } else {
                for (std::size_t p = 0; p < n_pairs; ++p) scores[p] = inherited_score(plan.pairs[p]);
            }
        } catch (const std::exception& e) {
            trace.complete = false;
            finish_trace(trace, current);
            throw MergeAborted("merge aborted rescoring layer " + std::to_string(layer) + ": " + e.what(),
                               std::move(trace));
        }

        std::set<ChunkId> consumed;
        for (const auto& pair : plan.pairs) {
            consumed.insert(pair.left.id());
            consumed.insert(pair.right.id());
        }
        std::vector<ScoredChunk> next;
        for (auto& s : current) {
            if (!consumed.count(s.id())) next.push_back(std::move(s));
        }
        for (std::size_t p = 0; p < n_pairs; ++p) {
            trace.nodes.push_back(make_node(plan.pairs[p], fused[p], layer, config.strategy));
            ScoredChunk sc{std::move(fused[p].chunk), scores[p]};
            trace.record_chunk(sc);
            next.push_back(std::move(sc));
        }
        trace.layers.push_back(LayerStats{layer, current.size(), n_pairs, ceil_div(n_pairs, limit)});
        current = std::move(next);
        ++layer;
    }
    finish_trace(trace, current);
    return MergeResult{std::move(current), std::move(trace)};
}

MergeResult run_merge(std::span<const ScoredChunk> working, const Query& query, const MergeConfig& config,
                      const MergeBackends& backends) {
    return config.schedule == MergeSchedule::sequential ? merge_sequential(working, query, config, backends)
                                                        : merge_hierarchical(working, query, config, backends);
}

RoundsBound rounds_upper_bound(std::size_t n, std::size_t m, std::size_t b) {
    if (n < 1 || m < 1 || b < 1) throw ConfigError("rounds bound needs N, M, B >= 1");
    if (m > n) throw ConfigError("target count M exceeds initial count N");
    RoundsBound r;
    // N / 2^k > M  <=>  N > M * 2^k, evaluated exactly.
    for (std::size_t pow = 1; n > m * pow; pow *= 2) {
        r.summation += std::max<std::size_t>(ceil_div(n, b * pow), 1);
    }
    const long double x = static_cast<long double>(n) / static_cast<long double>(b) +
                          std::log2(static_cast<long double>(n) / static_cast<long double>(m));
    r.closed_form = static_cast<std::size_t>(std::ceil(x - 1e-12L));
    return r;
}

std::size_t ceil_log2_ratio(std::size_t n, std::size_t m) {
    if (m < 1) throw ConfigError("ratio denominator must be positive");
    std::size_t d = 0;
    for (std::size_t cap = m; cap < n; cap *= 2) ++d;
    return d;
}

std::size_t trace_max_depth(const MergeTrace& trace) {
    std::size_t depth = 0;
    for (ChunkId id : trace.final_ids) {
        if (auto it = trace.chunks.find(id); it != trace.chunks.end()) depth = std::max(depth, it->second.depth);
    }
    return depth;
}

std::string trace_to_dot(const MergeTrace& trace) {
    std::ostringstream out;
    out << "digraph merge_trace {\n  rankdir=BT;\n  node [shape=box];\n";
    for (const auto& [id, info] : trace.chunks) {
        out << "  n" << id << " [label=\"" << info.label << "\\nscore=" << format_number(info.score)
            << " len=" << info.token_len << " depth=" << info.depth << "\"";
        if (trace.final_ids.count(id)) out << ", peripheries=2";
        out << "];\n";
    }
    for (const auto& node : trace.nodes) {
        for (ChunkId parent : {node.left, node.right}) {
            out << "  n" << parent << " -> n" << node.result << " [label=\"L" << node.layer << " "
                << to_string(node.strategy);
            if (node.anchor) out << (*node.anchor == parent ? " anchor" : " source");
            out << "\"];\n";
        }
    }
    out << "}\n";
    return out.str();
}

std::string trace_to_jsonl(const MergeTrace& trace) {
    using nlohmann::json;
    std::string out;
    auto emit = [&](const json& j) { out += j.dump() + "\n"; };
    auto chunk_json = [&](ChunkId id) {
        const auto& info = trace.chunks.at(id);
        return json{{"id", id}, {"label", info.label}, {"score", info.score}, {"token_len", info.token_len},
                    {"depth", info.depth}};
    };
    for (ChunkId id : trace.initial_ids) {
        if (trace.chunks.count(id)) emit(json{{"event", "initial"}, {"chunk", chunk_json(id)}});
    }
    for (const auto& n : trace.nodes) {
        json j{{"event", "fusion"}, {"layer", n.layer},       {"strategy", to_string(n.strategy)},
               {"left", n.left},    {"right", n.right},       {"result", chunk_json(n.result)},
               {"warnings", n.warnings}};
        if (n.anchor) j["anchor"] = *n.anchor;
        emit(j);
    }
    for (const auto& l : trace.layers) {
        emit(json{{"event", "layer"}, {"layer", l.layer}, {"working_size", l.working_size}, {"pairs", l.pairs},
                  {"rounds", l.rounds}});
    }
    emit(json{{"event", "final"}, {"ids", trace.final_ids}, {"complete", trace.complete},
              {"fusions", trace.fusion_count()}, {"rounds", trace.batch_rounds()}});
    return out;
}

std::string describe_plan(std::span<const ScoredChunk> working, const MergeConfig& config, const NllBackend* nll) {
    std::ostringstream out;
    const std::size_t total = total_length(working);
    out << "strategy=" << to_string(config.strategy) << " schedule=" << to_string(config.schedule)
        << " B=" << config.concurrency << " budget=" << config.budget.limit_tokens << " tokens"
        << " (multiplier " << format_number(config.budget.multiplier) << " x avg "
        << format_number(config.budget.avg_chunk_len) << ")\n";
    out << "working set: " << working.size() << " chunks, " << total << " tokens\n";
    if (!over_budget(working, config.budget)) {
        out << "within budget: no fusion needed\n";
        return out.str();
    }
    if (config.strategy == MergeStrategy::asymmetric && !nll) throw ConfigError("asymmetric merging needs an NLL backend");

    LayerPlan plan;
    if (config.schedule == MergeSchedule::sequential) {
        if (config.strategy == MergeStrategy::symmetric) {
            auto [i, j] = select_pair_symmetric(working);
            plan.pairs.push_back({working[i], working[j]});
        } else {
            auto [s, a] = select_source_and_anchor(working, *nll);
            plan.pairs.push_back({working[a], working[s]});
        }
        out << "first iteration:\n";
    } else {
        plan = config.strategy == MergeStrategy::symmetric ? plan_symmetric_layer(working)
                                                           : plan_asymmetric_layer(working, *nll, config.concurrency);
        out << "layer 0: " << plan.pairs.size() << " pairs, " << ceil_div(plan.pairs.size(), config.concurrency)
            << " rounds\n";
    }
    for (const auto& p : plan.pairs) {
        out << "  fuse " << p.left.chunk.label << " (score " << format_number(p.left.score) << ") + "
            << p.right.chunk.label << " (score " << format_number(p.right.score) << ")";
        if (config.strategy == MergeStrategy::asymmetric) out << " [anchor " << p.left.chunk.label << "]";
        out << "\n";
    }
    for (const auto& l : plan.leftovers) out << "  carry " << l.chunk.label << "\n";

    out << "worst-case working-set sizes:";
    std::size_t n = working.size();
    out << " " << n;
    while (n > 1) {
        n = config.schedule == MergeSchedule::sequential ? n - 1 : n - n / 2;
        out << " -> " << n;
    }
    out << "\n";
    return out.str();
}

} // namespace mergectx
