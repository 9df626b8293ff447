#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "mergectx/context.hpp"
#include "mergectx/fusion.hpp"
#include "mergectx/likelihood.hpp"
#include "mergectx/scoring.hpp"

namespace testsupport {

using namespace mergectx;

inline const WhitespaceTokenizer& tok() {
    static WhitespaceTokenizer t;
    return t;
}

inline ScoredChunk sc(ChunkId id, double score, std::string text = {}) {
    if (text.empty()) text = "chunk number " + std::to_string(id) + " says something.";
    return ScoredChunk{make_original_chunk(id, std::move(text), tok()), score};
}

/// Ids 0..n-1 with the given scores.
inline std::vector<ScoredChunk> scored(const std::vector<double>& scores) {
    std::vector<ScoredChunk> out;
    for (std::size_t i = 0; i < scores.size(); ++i) out.push_back(sc(i, scores[i]));
    return out;
}

/// Returns a fixed list of logprobs whatever the pair.
class EchoNll final : public NllBackend {
public:
    explicit EchoNll(std::vector<double> lps) : lps_(std::move(lps)) {}
    std::vector<double> source_logprobs(const Chunk&, const Chunk&) const override { return lps_; }
    std::optional<std::size_t> expected_token_count(const Chunk&) const override { return std::nullopt; }
    std::string kind() const override { return "echo"; }

private:
    std::vector<double> lps_;
};

/// NLL looked up by (source id, anchor id); one logprob per call.
class TableNll final : public NllBackend {
public:
    explicit TableNll(std::map<std::pair<ChunkId, ChunkId>, double> t) : t_(std::move(t)) {}
    std::vector<double> source_logprobs(const Chunk& s, const Chunk& a) const override {
        ++calls;
        return {-t_.at({s.id, a.id})};
    }
    std::optional<std::size_t> expected_token_count(const Chunk&) const override { return 1; }
    std::string kind() const override { return "table"; }
    mutable std::atomic<int> calls{0};

private:
    std::map<std::pair<ChunkId, ChunkId>, double> t_;
};

/// Extractive fusion after an optional random sleep, counting calls.
class CountingFuser final : public Fuser {
public:
    explicit CountingFuser(int max_sleep_ms = 0, std::size_t in_flight = SIZE_MAX)
        : max_sleep_ms_(max_sleep_ms), in_flight_(in_flight) {}
    std::string fuse_text(const Chunk& a, const Chunk& b, const Query& q, MergeStrategy m) const override {
        ++calls;
        if (max_sleep_ms_ > 0) {
            thread_local std::mt19937 rng(std::random_device{}());
            std::this_thread::sleep_for(std::chrono::milliseconds(rng() % max_sleep_ms_));
        }
        return extractive_fuse_text(a, b, q, m);
    }
    std::size_t max_in_flight() const override { return in_flight_; }
    std::string kind() const override { return "counting"; }
    mutable std::atomic<int> calls{0};

private:
    int max_sleep_ms_;
    std::size_t in_flight_;
};

/// Fails on the call whose pair contains `poison`.
class PoisonFuser final : public Fuser {
public:
    explicit PoisonFuser(ChunkId poison) : poison_(poison) {}
    std::string fuse_text(const Chunk& a, const Chunk& b, const Query& q, MergeStrategy m) const override {
        if (a.id == poison_ || b.id == poison_) throw TransportError("endpoint unavailable", true);
        return extractive_fuse_text(a, b, q, m);
    }
    std::string kind() const override { return "poison"; }

private:
    ChunkId poison_;
};

inline const std::vector<std::string>& sentence_pool() {
    static const std::vector<std::string> pool{
        "Military instruction began in 1912.",
        "The campus library holds old maps.",
        "Cadets drilled on the parade ground.",
        "The university hired a new commandant.",
        "Rain fell over the northern provinces.",
        "A cartoonist drew the campus newspaper strips.",
        "Students debated compulsory training.",
        "The museum opened a new wing.",
        "Officers taught tactics and map reading.",
        "The harbor froze during that winter.",
    };
    return pool;
}

/// Random chunk texts of 1..3 sentences drawn from a small pool.
inline std::vector<ScoredChunk> random_instance(std::mt19937& rng, std::size_t n) {
    std::vector<ScoredChunk> out;
    std::uniform_int_distribution<std::size_t> pick(0, sentence_pool().size() - 1);
    std::uniform_int_distribution<int> count(1, 3);
    std::uniform_real_distribution<double> score(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        std::string text;
        for (int s = count(rng); s > 0; --s) text += (text.empty() ? "" : " ") + sentence_pool()[pick(rng)];
        out.push_back(ScoredChunk{make_original_chunk(i, text, tok()), std::round(score(rng) * 100.0) / 100.0});
    }
    return out;
}

} // namespace testsupport
