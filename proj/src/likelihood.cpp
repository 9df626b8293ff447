#include "mergectx/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "mergectx/parallel.hpp"
#include "mergectx/text.hpp"

namespace mergectx {

std::optional<std::size_t> NllBackend::expected_token_count(const Chunk& source) const {
    return split_whitespace(source.text).size();
}

UniformNllBackend::UniformNllBackend(std::size_t vocab_size) {
    if (vocab_size < 2) throw ConfigError("uniform vocabulary size must be at least 2");
    logprob_ = -std::log(static_cast<double>(vocab_size));
}

std::vector<double> UniformNllBackend::source_logprobs(const Chunk& source, const Chunk&) const {
    return std::vector<double>(split_whitespace(source.text).size(), logprob_);
}

BigramNllBackend::BigramNllBackend(double alpha, std::size_t max_anchor_tokens)
    : alpha_(alpha), max_anchor_tokens_(max_anchor_tokens) {
    if (!(alpha > 0.0)) throw ConfigError("bigram smoothing constant must be positive");
}

std::vector<double> BigramNllBackend::source_logprobs(const Chunk& source, const Chunk& anchor) const {
    auto anchor_tokens = split_whitespace(anchor.text);
    if (anchor_tokens.size() > max_anchor_tokens_) {
        anchor_tokens.erase(anchor_tokens.begin(),
                            anchor_tokens.end() - static_cast<std::ptrdiff_t>(max_anchor_tokens_));
    }
    const auto source_tokens = split_whitespace(source.text);

    std::map<std::pair<std::string, std::string>, std::size_t> pair_counts;
    std::map<std::string, std::size_t> prefix_counts;
    for (std::size_t i = 0; i + 1 < anchor_tokens.size(); ++i) {
        ++pair_counts[{anchor_tokens[i], anchor_tokens[i + 1]}];
        ++prefix_counts[anchor_tokens[i]];
    }
    std::set<std::string> vocab(anchor_tokens.begin(), anchor_tokens.end());
    vocab.insert(source_tokens.begin(), source_tokens.end());
    const double v = static_cast<double>(vocab.size() + 1);

    std::vector<double> out;
    out.reserve(source_tokens.size());
    // "<s>" never occurs as a whitespace token prefix count, so an empty anchor
    // yields the uniform 1/V for the first token.
    std::string prev = anchor_tokens.empty() ? std::string("<s>") : anchor_tokens.back();
    for (const auto& tok : source_tokens) {
        const auto pc = pair_counts.find({prev, tok});
        const auto fc = prefix_counts.find(prev);
        const double num = (pc == pair_counts.end() ? 0.0 : static_cast<double>(pc->second)) + alpha_;
        const double den = (fc == prefix_counts.end() ? 0.0 : static_cast<double>(fc->second)) + alpha_ * v;
        out.push_back(std::log(num / den));
        prev = tok;
    }
    return out;
}

std::string truncate_to_tail(const std::string& text, std::size_t max_tokens) {
    const auto tokens = split_whitespace(text);
    if (tokens.size() <= max_tokens) return text;
    return join(std::vector<std::string>(tokens.end() - static_cast<std::ptrdiff_t>(max_tokens), tokens.end()), " ");
}

RemoteLogprobBackend::RemoteLogprobBackend(JsonHttpClient client, std::size_t max_anchor_tokens,
                                           std::string path)
    : client_(std::move(client)), max_anchor_tokens_(max_anchor_tokens), path_(std::move(path)) {}

nlohmann::json RemoteLogprobBackend::request_body(const Chunk& source, const Chunk& anchor) const {
    const std::string prompt = truncate_to_tail(anchor.text, max_anchor_tokens_) + "\n" + source.text;
    return nlohmann::json{{"model", client_.endpoint().model},
                          {"prompt", prompt},
                          {"max_tokens", 1},
                          {"temperature", 0},
                          {"echo", true},
                          {"logprobs", 0}};
}

std::vector<double> RemoteLogprobBackend::parse_span(const nlohmann::json& response,
                                                     std::size_t span_begin, std::size_t span_end) {
    const auto fail = [] { return Error("logprob alignment failure"); };
    if (!response.contains("choices") || response["choices"].empty()) throw fail();
    const auto& lp = response["choices"][0].value("logprobs", nlohmann::json());
    if (!lp.is_object() || !lp.contains("token_logprobs") || !lp.contains("text_offset")) throw fail();
    const auto& values = lp["token_logprobs"];
    const auto& offsets = lp["text_offset"];
    if (values.size() < offsets.size()) throw fail();

    std::vector<double> out;
    for (std::size_t i = 0; i < offsets.size(); ++i) {
        const auto off = offsets[i].get<std::size_t>();
        if (off < span_begin || off >= span_end) continue;
        if (!values[i].is_number()) throw fail();
        out.push_back(values[i].get<double>());
    }
    if (out.empty()) throw fail();
    return out;
}

std::vector<double> RemoteLogprobBackend::source_logprobs(const Chunk& source, const Chunk& anchor) const {
    const auto body = request_body(source, anchor);
    const auto& prompt = body["prompt"].get_ref<const std::string&>();
    const std::size_t begin = prompt.size() - source.text.size();
    return parse_span(client_.post(path_, body), begin, prompt.size());
}

double conditional_nll(const NllBackend& backend, const Chunk& source, const Chunk& anchor) {
    if (split_whitespace(source.text).empty()) throw Error("empty source chunk");
    const auto logprobs = backend.source_logprobs(source, anchor);
    const auto expected = backend.expected_token_count(source);
    if (logprobs.empty() || (expected && logprobs.size() != *expected)) {
        throw Error("logprob alignment failure");
    }
    double sum = 0.0;
    for (double lp : logprobs) sum += lp;
    return -sum / static_cast<double>(logprobs.size());
}

ScoredChunk best_anchor(const NllBackend& backend, const ScoredChunk& source,
                        std::span<const ScoredChunk> candidates, std::size_t parallelism) {
    if (candidates.empty()) throw Error("no anchor available");
    for (const auto& c : candidates) {
        if (c.id() == source.id()) throw Error("source chunk listed among its anchor candidates");
    }
    std::vector<double> nll(candidates.size());
    bounded_parallel_for(candidates.size(), backend.concurrent_safe() ? parallelism : 1,
                         [&](std::size_t i) { nll[i] = conditional_nll(backend, source.chunk, candidates[i].chunk); });
    std::size_t best = 0;
    for (std::size_t i = 1; i < candidates.size(); ++i) {
        if (nll[i] < nll[best] || (nll[i] == nll[best] && candidates[i].id() < candidates[best].id())) {
            best = i;
        }
    }
    return candidates[best];
}

std::string_view to_string(SimilarityMetric m) {
    return m == SimilarityMetric::cosine ? "cosine" : "nll";
}

PairwiseMatrix pairwise_matrix(std::span<const ScoredChunk> chunks, SimilarityMetric metric,
                               const Embedder* embedder, const NllBackend* nll) {
    if (chunks.size() < 2) throw ConfigError("a similarity matrix needs at least 2 chunks");
    if (metric == SimilarityMetric::cosine && !embedder) throw ConfigError("cosine matrix needs an embedding backend");
    if (metric == SimilarityMetric::nll && !nll) throw ConfigError("nll matrix needs an NLL backend");

    std::vector<ScoredChunk> sorted(chunks.begin(), chunks.end());
    std::sort(sorted.begin(), sorted.end(), score_descending);
    const std::size_t n = sorted.size();

    PairwiseMatrix m;
    m.metric = metric;
    for (const auto& s : sorted) {
        m.ids.push_back(s.id());
        m.labels.push_back(s.chunk.label);
    }
    m.values.assign(n * n, std::numeric_limits<double>::quiet_NaN());

    std::vector<std::vector<double>> vecs;
    if (metric == SimilarityMetric::cosine) {
        std::vector<std::string> texts;
        for (const auto& s : sorted) texts.push_back(s.chunk.text);
        try {
            vecs = embedder->embed(texts);
        } catch (const std::exception& e) {
            throw MatrixError(std::string("embedding failed before row 0: ") + e.what(), m, 0);
        }
    }

    for (std::size_t i = 0; i < n; ++i) {
        try {
            for (std::size_t j = 0; j < n; ++j) {
                if (i == j) continue;
                m.values[i * n + j] = metric == SimilarityMetric::cosine
                                          ? cosine_similarity(vecs[i], vecs[j])
                                          : conditional_nll(*nll, sorted[i].chunk, sorted[j].chunk);
            }
        } catch (const std::exception& e) {
            for (std::size_t j = 0; j < n; ++j) m.values[i * n + j] = std::numeric_limits<double>::quiet_NaN();
            throw MatrixError("matrix row " + std::to_string(i) + " failed (" + std::to_string(i) +
                                  " rows complete): " + e.what(),
                              m, i);
        }
    }
    return m;
}

std::string matrix_to_csv(const PairwiseMatrix& m) {
    std::string out = "# metric: " + std::string(to_string(m.metric)) + "\n";
    out += "id";
    for (const auto& l : m.labels) out += "," + csv_escape(l);
    out += "\n";
    for (std::size_t i = 0; i < m.size(); ++i) {
        out += csv_escape(m.labels[i]);
        for (std::size_t j = 0; j < m.size(); ++j) {
            out += ",";
            if (i != j) out += format_number(m.at(i, j));
        }
        out += "\n";
    }
    return out;
}

} // namespace mergectx
