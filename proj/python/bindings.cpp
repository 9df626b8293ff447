#include <sstream>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mergectx/cli.hpp"
#include "mergectx/evaluation.hpp"
#include "mergectx/merge.hpp"

namespace py = pybind11;
using namespace mergectx;

namespace {

const WhitespaceTokenizer& tokenizer() {
    static WhitespaceTokenizer t;
    return t;
}

std::vector<Chunk> chunks_of(const std::vector<std::string>& texts) {
    return make_original_chunks(texts, tokenizer());
}

/// Inline scores when given, lexical overlap otherwise.
std::unique_ptr<Scorer> scorer_for(std::span<const Chunk> chunks, const std::optional<std::vector<double>>& scores) {
    if (!scores) return std::make_unique<LexicalOverlapScorer>();
    if (scores->size() != chunks.size()) throw ConfigError("scores must align with texts");
    std::map<ChunkId, double> table;
    for (std::size_t i = 0; i < chunks.size(); ++i) table[chunks[i].id] = (*scores)[i];
    return std::make_unique<FixedTableScorer>(std::move(table));
}

py::list to_py(std::span<const ScoredChunk> context) {
    py::list out;
    for (const auto& c : context) {
        py::dict d;
        d["id"] = c.chunk.id;
        d["text"] = c.chunk.text;
        d["score"] = c.score;
        d["sources"] = c.chunk.provenance;
        d["depth"] = c.chunk.depth;
        out.append(d);
    }
    return out;
}

py::dict merge(const std::vector<std::string>& texts, const std::string& query,
               const std::optional<std::vector<double>>& scores, const std::string& strategy,
               const std::string& schedule, double multiplier, std::size_t b, bool rescore) {
    const auto chunks = chunks_of(texts);
    const auto q = make_query(query);
    const auto scorer = scorer_for(chunks, scores);
    const auto scored = score_batch(*scorer, chunks, q);
    MergeConfig cfg;
    cfg.strategy = parse_strategy(strategy);
    cfg.schedule = parse_schedule(schedule);
    cfg.budget = compute_budget(chunks, multiplier);
    cfg.concurrency = b;
    cfg.rescore_fused = rescore;
    ExtractiveFuser fuser;
    BigramNllBackend nll;
    MergeResult result;
    {
        py::gil_scoped_release release;
        result = run_merge(scored, q, cfg, MergeBackends{tokenizer(), *scorer, fuser, &nll});
    }
    py::dict d;
    d["context"] = to_py(result.context);
    d["budget"] = cfg.budget.limit_tokens;
    d["fusions"] = result.trace.fusion_count();
    d["rounds"] = result.trace.batch_rounds();
    d["depth"] = trace_max_depth(result.trace);
    d["dot"] = trace_to_dot(result.trace);
    return d;
}

py::list topk(const std::vector<std::string>& texts, const std::string& query,
              const std::optional<std::vector<double>>& scores, std::size_t k) {
    const auto chunks = chunks_of(texts);
    const auto scorer = scorer_for(chunks, scores);
    const auto scored = score_batch(*scorer, chunks, make_query(query));
    return to_py(select_topk(scored, k));
}

py::tuple cli(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    int code = 0;
    {
        py::gil_scoped_release release;
        code = run_cli(args, out, err);
    }
    return py::make_tuple(code, out.str(), err.str());
}

} // namespace

PYBIND11_MODULE(_mergectx, m) {
    m.doc() = "Query-aware context merging";

    py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

    m.def("merge", &merge, py::arg("texts"), py::arg("query"), py::arg("scores") = py::none(),
          py::arg("strategy") = "asymmetric", py::arg("schedule") = "hierarchical", py::arg("multiplier") = 5.0,
          py::arg("b") = 8, py::arg("rescore") = true,
          "Merge chunks down to multiplier x average chunk length with the extractive fuser.");
    m.def("topk", &topk, py::arg("texts"), py::arg("query"), py::arg("scores") = py::none(), py::arg("k") = 5);
    m.def(
        "lexical_scores",
        [](const std::vector<std::string>& texts, const std::string& query) {
            const auto chunks = chunks_of(texts);
            return LexicalOverlapScorer().score_all(chunks, make_query(query));
        },
        py::arg("texts"), py::arg("query"));
    m.def(
        "budget",
        [](const std::vector<std::string>& texts, double multiplier) {
            return compute_budget(chunks_of(texts), multiplier).limit_tokens;
        },
        py::arg("texts"), py::arg("multiplier") = 5.0);
    m.def(
        "conditional_nll",
        [](const std::string& source, const std::string& anchor) {
            const auto s = make_original_chunk(0, source, tokenizer());
            const auto a = make_original_chunk(1, anchor, tokenizer());
            return conditional_nll(BigramNllBackend(), s, a);
        },
        py::arg("source"), py::arg("anchor"), "Bigram conditional NLL of source given anchor.");
    m.def(
        "extractive_fuse",
        [](const std::string& a, const std::string& b, const std::string& query, const std::string& strategy) {
            return extractive_fuse_text(make_original_chunk(0, a, tokenizer()), make_original_chunk(1, b, tokenizer()),
                                        make_query(query), parse_strategy(strategy));
        },
        py::arg("a"), py::arg("b"), py::arg("query"), py::arg("strategy") = "asymmetric");

    m.def("normalize_answer", [](const std::string& s) { return normalize_answer(s); });
    m.def("exact_match", [](const std::string& p, const std::vector<std::string>& g) { return exact_match(p, g); },
          py::arg("prediction"), py::arg("golds"));
    m.def("token_f1", [](const std::string& p, const std::vector<std::string>& g) { return token_f1(p, g); },
          py::arg("prediction"), py::arg("golds"));
    m.def("substring_accuracy",
          [](const std::string& p, const std::vector<std::string>& g) { return substring_accuracy(p, g); },
          py::arg("prediction"), py::arg("golds"));

    m.def("run_cli", &cli, py::arg("args"), "Run a CLI subcommand in-process; returns (code, stdout, stderr).");
}
