#include "mergectx/context.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <numeric>
#include <sstream>

#include "mergectx/error.hpp"
#include "mergectx/text.hpp"

namespace mergectx {

std::size_t WhitespaceTokenizer::count(std::string_view text) const {
    return split_whitespace(text).size();
}

Query make_query(std::string text, std::optional<std::string> id) {
    if (trim(text).empty()) throw ConfigError("query text is empty");
    return Query{std::move(text), std::move(id)};
}

Chunk make_original_chunk(ChunkId id, std::string text, const Tokenizer& tokenizer,
                          std::string label) {
    Chunk c;
    c.id = id;
    c.token_len = tokenizer.count(text);
    c.text = std::move(text);
    c.provenance = {id};
    c.depth = 0;
    c.label = label.empty() ? std::to_string(id) : std::move(label);
    return c;
}

Chunk make_fused_chunk(ChunkId id, std::string text, const Chunk& a, const Chunk& b,
                       const Tokenizer& tokenizer) {
    Chunk c;
    c.id = id;
    c.token_len = tokenizer.count(text);
    c.text = std::move(text);
    std::set_union(a.provenance.begin(), a.provenance.end(), b.provenance.begin(),
                   b.provenance.end(), std::back_inserter(c.provenance));
    c.depth = 1 + std::max(a.depth, b.depth);
    c.label = "f" + std::to_string(id);
    return c;
}

std::vector<Chunk> make_original_chunks(const std::vector<std::string>& texts,
                                        const Tokenizer& tokenizer) {
    std::vector<Chunk> out;
    out.reserve(texts.size());
    for (std::size_t i = 0; i < texts.size(); ++i) {
        out.push_back(make_original_chunk(static_cast<ChunkId>(i), texts[i], tokenizer));
    }
    return out;
}

Budget compute_budget(std::span<const Chunk> chunks, double multiplier) {
    if (chunks.empty()) throw ConfigError("empty context set");
    if (!(multiplier > 0.0) || !std::isfinite(multiplier)) {
        throw ConfigError("budget multiplier must be a positive finite number");
    }
    const double avg = static_cast<double>(total_length(chunks)) / static_cast<double>(chunks.size());
    if (!(avg > 0.0)) throw ConfigError("average chunk length is zero");
    // The epsilon absorbs representation error such as 0.29 * 100 = 28.999999999999996.
    const double raw = std::floor(multiplier * avg + 1e-9);
    if (raw < 1.0) throw ConfigError("budget rounds down to zero tokens");
    return Budget{static_cast<std::size_t>(raw), multiplier, avg};
}

std::size_t total_length(std::span<const Chunk> chunks) {
    std::size_t total = 0;
    for (const auto& c : chunks) total += c.token_len;
    return total;
}

std::size_t total_length(std::span<const ScoredChunk> chunks) {
    std::size_t total = 0;
    for (const auto& c : chunks) total += c.chunk.token_len;
    return total;
}

std::vector<Chunk> unwrap(std::span<const ScoredChunk> scored) {
    std::vector<Chunk> out;
    out.reserve(scored.size());
    for (const auto& s : scored) out.push_back(s.chunk);
    return out;
}

bool score_ascending(const ScoredChunk& a, const ScoredChunk& b) {
    if (a.score != b.score) return a.score < b.score;
    return a.id() < b.id();
}

bool score_descending(const ScoredChunk& a, const ScoredChunk& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id() < b.id();
}

std::string_view to_string(MergeStrategy s) {
    return s == MergeStrategy::symmetric ? "symmetric" : "asymmetric";
}

std::string_view to_string(MergeSchedule s) {
    return s == MergeSchedule::sequential ? "sequential" : "hierarchical";
}

MergeStrategy parse_strategy(std::string_view s) {
    if (s == "symmetric") return MergeStrategy::symmetric;
    if (s == "asymmetric") return MergeStrategy::asymmetric;
    throw ConfigError("unknown strategy: " + std::string(s));
}

MergeSchedule parse_schedule(std::string_view s) {
    if (s == "sequential") return MergeSchedule::sequential;
    if (s == "hierarchical") return MergeSchedule::hierarchical;
    throw ConfigError("unknown schedule: " + std::string(s));
}

std::size_t MergeTrace::batch_rounds() const {
    std::size_t r = 0;
    for (const auto& l : layers) r += l.rounds;
    return r;
}

void MergeTrace::record_chunk(const ScoredChunk& sc) {
    chunks[sc.id()] = TraceChunkInfo{sc.id(), sc.chunk.label, sc.score, sc.chunk.token_len,
                                     sc.chunk.depth};
}

std::vector<std::string> validate_trace(const MergeTrace& trace,
                                        std::span<const ScoredChunk> final_context) {
    std::vector<std::string> problems;
    auto fail = [&](const std::string& msg) { problems.push_back(msg); };

    std::map<ChunkId, std::size_t> consumed;
    std::map<ChunkId, const TraceNode*> produced;
    for (const auto& n : trace.nodes) {
        ++consumed[n.left];
        ++consumed[n.right];
        if (n.left == n.right) fail("node " + std::to_string(n.result) + " fuses a chunk with itself");
        if (!produced.emplace(n.result, &n).second) {
            fail("chunk " + std::to_string(n.result) + " produced twice");
        }
    }
    for (const auto& [id, count] : consumed) {
        if (count > 1) fail("chunk " + std::to_string(id) + " consumed by " + std::to_string(count) + " fusions");
        if (!trace.initial_ids.count(id) && !produced.count(id)) {
            fail("chunk " + std::to_string(id) + " consumed but never produced");
        }
    }
    // Parents are fused no later than their children.
    for (const auto& n : trace.nodes) {
        for (ChunkId parent : {n.left, n.right}) {
            auto it = produced.find(parent);
            if (it != produced.end() && it->second->layer > n.layer) {
                fail("layer order violated at node " + std::to_string(n.result));
            }
        }
    }

    std::set<ChunkId> ids;
    std::set<ChunkId> covered;
    std::size_t provenance_total = 0;
    for (const auto& sc : final_context) {
        ids.insert(sc.id());
        provenance_total += sc.chunk.provenance.size();
        covered.insert(sc.chunk.provenance.begin(), sc.chunk.provenance.end());
        if (consumed.count(sc.id())) fail("final chunk " + std::to_string(sc.id()) + " was consumed");
    }
    if (ids != trace.final_ids) fail("final ids differ from trace");
    if (covered != trace.initial_ids) fail("provenance union differs from the initial id set");
    if (provenance_total != covered.size()) fail("provenance sets overlap");
    return problems;
}

} // namespace mergectx
