#include "mergectx/cli.hpp"

#include <algorithm>
#include <exception>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>

#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "mergectx/chunk_io.hpp"
#include "mergectx/config.hpp"
#include "mergectx/evaluation.hpp"
#include "mergectx/likelihood.hpp"
#include "mergectx/merge.hpp"
#include "mergectx/scoring.hpp"
#include "mergectx/text.hpp"

namespace mergectx {

namespace {

struct Options {
    std::string config_path;
    std::string strategy;
    std::string schedule;
    double multiplier = 0.0;
    std::size_t b = 0;
    std::string scorer;
    std::string nll = "bigram";
    std::string fuser = "extractive";
    std::size_t jobs = 1;
    long long seed = 0;
    std::string log_level = "info";

    std::string chunks;
    std::string query;
    std::string out = "-";
    std::string trace_dot;
    std::string trace_jsonl;
    bool dry_run = false;
    bool no_rescore = false;
    std::size_t k = 5;

    std::string data;
    std::vector<std::string> methods{"merge"};
    std::string generator = "gold";
    bool timing = false;

    std::size_t synthetic = 16;
    long delay_ms = 50;

    std::string metric = "cosine";
    std::string embed = "hash";

    /// One entry per subcommand.
    std::vector<CLI::Option*> seed_opt, strategy_opt, multiplier_opt, b_opt, schedule_opt;
};

bool given(const std::vector<CLI::Option*>& opts) {
    return std::any_of(opts.begin(), opts.end(), [](const CLI::Option* opt) { return opt->count() > 0; });
}

/// Everything one subcommand run needs; backends live here so references stay valid.
struct Runtime {
    AppConfig config;
    WhitespaceTokenizer tokenizer;
    PromptSet prompts;
    std::unique_ptr<Fuser> fuser;
    std::unique_ptr<NllBackend> nll;
};

template <class F>
auto stage(const std::string& what, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (...) {
        std::throw_with_nested(Error(what));
    }
}

std::string error_type(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return "config";
    if (dynamic_cast<const TransportError*>(&e)) return "transport";
    if (dynamic_cast<const FusionError*>(&e)) return "fusion";
    if (dynamic_cast<const MergeAborted*>(&e)) return "merge-aborted";
    if (dynamic_cast<const MatrixError*>(&e)) return "matrix";
    return "error";
}

void collect_chain(const std::exception& e, nlohmann::json& chain, std::string& innermost_type) {
    chain.push_back(e.what());
    innermost_type = error_type(e);
    try {
        std::rethrow_if_nested(e);
    } catch (const std::exception& inner) {
        collect_chain(inner, chain, innermost_type);
    } catch (...) {
        chain.push_back("unknown error");
    }
}

void write_file(const std::string& path, const std::string& content, std::ostream& out) {
    if (path == "-") {
        out << content;
        out.flush();
        return;
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot write " + path);
    f << content;
    if (!f) throw ConfigError("failed writing " + path);
}

std::pair<std::string, std::string> split_spec(const std::string& spec) {
    const auto colon = spec.find(':');
    if (colon == std::string::npos) return {spec, ""};
    return {spec.substr(0, colon), spec.substr(colon + 1)};
}

ChatCompletionClient chat_client(const Runtime& rt) {
    ChatCompletionClient client(JsonHttpClient(resolve_endpoint(rt.config, "chat"), rt.config.retry),
                                rt.config.temperature, rt.config.seed);
    return client;
}

std::unique_ptr<Fuser> make_fuser(const std::string& spec, const Runtime& rt) {
    const auto [kind, arg] = split_spec(spec);
    if (kind == "extractive") return std::make_unique<ExtractiveFuser>();
    if (kind == "remote") return std::make_unique<RemoteChatFuser>(chat_client(rt), rt.prompts);
    if (kind == "replay" && !arg.empty()) return std::make_unique<ReplayFuser>(ReplayFuser::from_file(arg));
    throw ConfigError("unknown fuser '" + spec + "' (extractive|remote|replay:<file>)");
}

std::unique_ptr<NllBackend> make_nll(const std::string& spec, const Runtime& rt) {
    const auto [kind, arg] = split_spec(spec);
    if (kind == "bigram") return std::make_unique<BigramNllBackend>();
    if (kind == "uniform" && !arg.empty()) {
        std::size_t v = 0;
        try {
            v = std::stoul(arg);
        } catch (const std::exception&) {
            throw ConfigError("uniform vocabulary size must be an integer, got '" + arg + "'");
        }
        return std::make_unique<UniformNllBackend>(v);
    }
    if (kind == "remote")
        return std::make_unique<RemoteLogprobBackend>(JsonHttpClient(resolve_endpoint(rt.config, "logprob"), rt.config.retry));
    throw ConfigError("unknown nll backend '" + spec + "' (bigram|uniform:<V>|remote)");
}

std::map<std::string, double> read_score_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read score table " + path);
    try {
        return nlohmann::json::parse(in).get<std::map<std::string, double>>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("score table " + path + ": " + e.what());
    }
}

/// Builds a per-record scorer factory. "inline" uses scores carried by the input;
/// no spec means inline when every chunk has one, lexical otherwise.
std::function<std::shared_ptr<const Scorer>(std::span<const Chunk>, const std::vector<std::optional<double>>&)>
scorer_factory(const std::string& spec, const Runtime& rt) {
    const auto [kind, arg] = split_spec(spec);
    auto inline_table = [](std::span<const Chunk> chunks, const std::vector<std::optional<double>>& given) {
        std::map<ChunkId, double> table;
        for (std::size_t i = 0; i < chunks.size(); ++i) {
            if (!given[i]) throw ConfigError("chunk '" + chunks[i].label + "' has no inline score");
            table[chunks[i].id] = *given[i];
        }
        return std::make_shared<FixedTableScorer>(std::move(table));
    };
    if (kind.empty()) {
        return [inline_table](std::span<const Chunk> chunks, const auto& given) -> std::shared_ptr<const Scorer> {
            const bool all = std::all_of(given.begin(), given.end(), [](const auto& s) { return s.has_value(); });
            if (all && !given.empty()) return inline_table(chunks, given);
            return std::make_shared<LexicalOverlapScorer>();
        };
    }
    if (kind == "inline")
        return [inline_table](std::span<const Chunk> chunks, const auto& given) -> std::shared_ptr<const Scorer> {
            return inline_table(chunks, given);
        };
    if (kind == "lexical") {
        auto s = std::make_shared<LexicalOverlapScorer>();
        return [s](std::span<const Chunk>, const auto&) -> std::shared_ptr<const Scorer> { return s; };
    }
    if (kind == "rerank") {
        auto s = std::make_shared<RemoteRerankerScorer>(JsonHttpClient(resolve_endpoint(rt.config, "rerank"), rt.config.retry));
        return [s](std::span<const Chunk>, const auto&) -> std::shared_ptr<const Scorer> { return s; };
    }
    if (kind == "fixed" && !arg.empty()) {
        auto table = read_score_table(arg);
        return [table](std::span<const Chunk> chunks, const auto&) -> std::shared_ptr<const Scorer> {
            return std::make_shared<FixedTableScorer>(FixedTableScorer::from_labels(table, chunks));
        };
    }
    throw ConfigError("unknown scorer '" + spec + "' (lexical|rerank|fixed:<file>|inline)");
}

void apply_overrides(const Options& o, AppConfig& c) {
    if (given(o.strategy_opt)) c.strategy = parse_strategy(o.strategy);
    if (given(o.schedule_opt)) c.schedule = parse_schedule(o.schedule);
    if (given(o.multiplier_opt)) c.multiplier = o.multiplier;
    if (given(o.b_opt)) c.b = o.b;
    if (given(o.seed_opt)) c.seed = o.seed;
    if (!(c.multiplier > 0.0)) throw ConfigError("--multiplier must be positive");
    if (c.b < 1) throw ConfigError("--b must be at least 1");
}

Runtime make_runtime(const Options& o, bool need_fuser, bool need_nll) {
    Runtime rt;
    if (!o.config_path.empty())
        rt.config = stage("loading config " + o.config_path, [&] { return load_config(o.config_path); });
    apply_overrides(o, rt.config);
    spdlog::info("config {} hash {}", o.config_path.empty() ? "<defaults>" : o.config_path, config_hash(rt.config));
    rt.prompts = stage("loading prompt templates", [&] { return load_prompts(rt.config); });
    if (need_fuser) rt.fuser = stage("configuring fuser", [&] { return make_fuser(o.fuser, rt); });
    if (need_nll) rt.nll = stage("configuring nll backend", [&] { return make_nll(o.nll, rt); });
    return rt;
}

struct LoadedInput {
    Query query;
    LoadedChunks loaded;
    std::vector<ScoredChunk> scored;
    std::shared_ptr<const Scorer> scorer;
};

LoadedInput load_and_score(const Options& o, const Runtime& rt) {
    auto query = make_query(o.query);
    auto loaded = stage("loading chunks from " + o.chunks,
                        [&] { return materialize(read_chunks_file(o.chunks), rt.tokenizer); });
    auto scorer = scorer_factory(o.scorer, rt)(loaded.chunks, loaded.given_scores);
    spdlog::info("scorer {}", scorer->kind());
    auto scored = stage("scoring chunks", [&] { return score_batch(*scorer, loaded.chunks, query); });
    return {std::move(query), std::move(loaded), std::move(scored), std::move(scorer)};
}

void write_trace_files(const Options& o, const MergeTrace& trace, std::ostream& out) {
    if (!o.trace_dot.empty()) write_file(o.trace_dot, trace_to_dot(trace), out);
    if (!o.trace_jsonl.empty()) write_file(o.trace_jsonl, trace_to_jsonl(trace), out);
}

int cmd_merge(const Options& o, std::ostream& out) {
    auto rt = make_runtime(o, !o.dry_run, false);
    auto in = load_and_score(o, rt);

    MergeConfig cfg;
    cfg.strategy = rt.config.strategy;
    cfg.schedule = rt.config.schedule;
    cfg.budget = compute_budget(in.loaded.chunks, rt.config.multiplier);
    cfg.concurrency = rt.config.b;
    cfg.rescore_fused = !o.no_rescore;
    if (cfg.strategy == MergeStrategy::asymmetric)
        rt.nll = stage("configuring nll backend", [&] { return make_nll(o.nll, rt); });
    const NllBackend* nll = rt.nll.get();

    if (o.dry_run) {
        write_file(o.out, describe_plan(in.scored, cfg, nll), out);
        return 0;
    }
    MergeResult result;
    try {
        result = run_merge(in.scored, in.query, cfg, MergeBackends{rt.tokenizer, *in.scorer, *rt.fuser, nll});
    } catch (const MergeAborted& e) {
        write_trace_files(o, e.partial_trace(), out);
        throw;
    }
    spdlog::info("merged {} chunks into {} ({} fusions, {} rounds, {} tokens, budget {})", in.scored.size(),
                 result.context.size(), result.trace.fusion_count(), result.trace.batch_rounds(),
                 total_length(result.context), cfg.budget.limit_tokens);
    write_file(o.out, chunks_to_jsonl(result.context, in.loaded.chunks), out);
    write_trace_files(o, result.trace, out);
    return 0;
}

int cmd_topk(const Options& o, std::ostream& out) {
    auto rt = make_runtime(o, false, false);
    auto in = load_and_score(o, rt);
    const auto ctx = select_topk(in.scored, o.k);
    write_file(o.out, chunks_to_jsonl(ctx, in.loaded.chunks), out);
    return 0;
}

std::unique_ptr<Generator> make_generator(const std::string& spec, const Runtime& rt) {
    const auto [kind, arg] = split_spec(spec);
    if (kind == "gold") return std::make_unique<GoldInContextGenerator>();
    if (kind == "replay" && !arg.empty()) return std::make_unique<ReplayGenerator>(ReplayGenerator::from_file(arg));
    if (kind == "remote") return std::make_unique<RemoteChatGenerator>(chat_client(rt));
    throw ConfigError("unknown generator '" + spec + "' (gold|replay:<file>|remote)");
}

EvalBackends eval_backends(const Options& o, const Runtime& rt, const Generator& gen) {
    auto factory = scorer_factory(o.scorer, rt);
    return EvalBackends{rt.tokenizer,
                        [factory](const EvalRecord& r) { return factory(r.chunks, r.given_scores); },
                        *rt.fuser,
                        rt.nll.get(),
                        gen,
                        rt.prompts.answer};
}

int cmd_eval(const Options& o, std::ostream& out) {
    auto rt = make_runtime(o, true, true);
    const auto records = stage("loading dataset " + o.data, [&] { return read_dataset_jsonl(o.data, rt.tokenizer); });
    const auto gen = stage("configuring generator", [&] { return make_generator(o.generator, rt); });
    const auto backends = eval_backends(o, rt, *gen);

    std::vector<EvalReport> reports;
    std::string csv;
    for (const auto& m : o.methods) {
        PipelineSpec spec;
        spec.method = m == "topk" ? PipelineSpec::Method::topk : PipelineSpec::Method::merge;
        spec.k = o.k;
        spec.strategy = rt.config.strategy;
        spec.schedule = rt.config.schedule;
        spec.multiplier = rt.config.multiplier;
        spec.concurrency = rt.config.b;
        spec.rescore_fused = !o.no_rescore;
        auto report = evaluate_pipeline(records, spec, backends, o.jobs);
        for (const auto& row : report.rows) {
            if (!row.ok() && row.status != "skipped") spdlog::warn("{} record {}: {}", report.method_tag, row.record_id, row.status);
        }
        auto part = report_to_csv(report, o.timing);
        csv += csv.empty() ? part : part.substr(part.find('\n') + 1);
        reports.push_back(std::move(report));
    }
    if (!o.out.empty() && o.out != "-") write_file(o.out, csv, out);
    out << reports_to_table(reports);
    out.flush();
    return 0;
}

int cmd_bench(const Options& o, std::ostream& out) {
    auto rt = make_runtime(o, true, true);
    std::vector<EvalRecord> records;
    if (!o.data.empty()) {
        records = stage("loading dataset " + o.data, [&] { return read_dataset_jsonl(o.data, rt.tokenizer); });
    } else {
        records.push_back(synthetic_record(o.synthetic, rt.tokenizer));
    }
    std::vector<MergeStrategy> strategies;
    if (given(o.strategy_opt)) strategies.push_back(rt.config.strategy);
    else strategies = {MergeStrategy::symmetric, MergeStrategy::asymmetric};
    std::vector<BenchConfig> configs;
    for (auto s : strategies) {
        configs.push_back({s, MergeSchedule::sequential, rt.config.multiplier});
        configs.push_back({s, MergeSchedule::hierarchical, rt.config.multiplier});
    }
    GoldInContextGenerator unused;
    const auto backends = eval_backends(o, rt, unused);
    const auto table = bench_latency(records, configs, std::chrono::milliseconds(o.delay_ms), rt.config.b, backends);
    for (const auto& [strategy, ratio] : table.speedup) spdlog::info("speedup {} {:.2f}x", strategy, ratio);
    write_file(o.out, latency_to_csv(table), out);
    return 0;
}

int cmd_simmatrix(const Options& o, std::ostream& out) {
    const auto metric = o.metric == "nll" ? SimilarityMetric::nll : SimilarityMetric::cosine;
    auto rt = make_runtime(o, false, metric == SimilarityMetric::nll);
    auto in = load_and_score(o, rt);
    std::unique_ptr<Embedder> embedder;
    if (metric == SimilarityMetric::cosine) {
        if (o.embed == "remote")
            embedder = std::make_unique<RemoteEmbedder>(JsonHttpClient(resolve_endpoint(rt.config, "embeddings"), rt.config.retry));
        else
            embedder = std::make_unique<HashingEmbedder>();
    }
    try {
        write_file(o.out, matrix_to_csv(pairwise_matrix(in.scored, metric, embedder.get(), rt.nll.get())), out);
    } catch (const MatrixError& e) {
        if (o.out != "-") write_file(o.out, matrix_to_csv(e.partial()), out);
        throw;
    }
    return 0;
}

void add_common(CLI::App* sub, Options& o) {
    sub->add_option("--config", o.config_path, "JSON config file")->check(CLI::ExistingFile);
    o.strategy_opt.push_back(sub->add_option("--strategy", o.strategy, "symmetric|asymmetric")
                                 ->check(CLI::IsMember({"symmetric", "asymmetric"})));
    o.schedule_opt.push_back(sub->add_option("--schedule", o.schedule, "sequential|hierarchical")
                                 ->check(CLI::IsMember({"sequential", "hierarchical"})));
    o.multiplier_opt.push_back(
        sub->add_option("--multiplier", o.multiplier, "budget = multiplier x average chunk length")->default_str("5"));
    o.b_opt.push_back(
        sub->add_option("--b", o.b, "fusion calls in flight per round")->check(CLI::PositiveNumber)->default_str("8"));
    sub->add_option("--scorer", o.scorer, "lexical|rerank|fixed:<file>|inline");
    sub->add_option("--nll", o.nll, "bigram|uniform:<V>|remote");
    sub->add_option("--fuser", o.fuser, "extractive|remote|replay:<file>");
    sub->add_option("--jobs", o.jobs, "records evaluated concurrently")->check(CLI::PositiveNumber);
    o.seed_opt.push_back(
        sub->add_option("--seed", o.seed, "sampling seed passed to remote endpoints")->default_str(""));
    sub->add_option("--log-level", o.log_level, "trace|debug|info|warn|error|off")
        ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));
}

void add_chunk_input(CLI::App* sub, Options& o) {
    sub->add_option("--chunks", o.chunks, "chunks JSONL")->required();
    sub->add_option("--query", o.query, "query text")->required();
    sub->add_option("--out", o.out, "output path, - for stdout");
}

void setup_logging(const std::string& level, std::ostream& err) {
    auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err, true);
    auto logger = std::make_shared<spdlog::logger>("mergectx", sink);
    logger->set_pattern("%Y-%m-%dT%H:%M:%S.%e [%l] %v");
    logger->set_level(spdlog::level::from_str(level));
    spdlog::set_default_logger(logger);
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    Options o;
    CLI::App app{"Query-aware context merging for retrieval-augmented generation", "mergectx"};
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default();

    auto* merge = app.add_subcommand("merge", "merge a chunk set down to the token budget");
    add_common(merge, o);
    add_chunk_input(merge, o);
    merge->add_option("--trace-dot", o.trace_dot, "write the merge tree as Graphviz DOT");
    merge->add_option("--trace-jsonl", o.trace_jsonl, "write the merge events as JSONL");
    merge->add_flag("--dry-run", o.dry_run, "print the layer plan without fusing");
    merge->add_flag("--no-rescore", o.no_rescore, "fused chunks inherit the higher parent score");

    auto* topk = app.add_subcommand("topk", "keep the k highest-scoring chunks");
    add_common(topk, o);
    add_chunk_input(topk, o);
    topk->add_option("--k", o.k, "chunks to keep")->check(CLI::PositiveNumber);

    auto* eval = app.add_subcommand("eval", "evaluate context construction methods on a QA dataset");
    add_common(eval, o);
    eval->add_option("--data", o.data, "dataset JSONL")->required();
    eval->add_option("--method", o.methods, "topk and/or merge")->check(CLI::IsMember({"topk", "merge"}));
    eval->add_option("--k", o.k, "top-k baseline size")->check(CLI::PositiveNumber);
    eval->add_option("--generator", o.generator, "gold|replay:<file>|remote");
    eval->add_option("--out", o.out, "per-record CSV report");
    eval->add_flag("--timing", o.timing, "include wall_ms in the CSV");
    eval->add_flag("--no-rescore", o.no_rescore, "fused chunks inherit the higher parent score");

    auto* bench = app.add_subcommand("bench", "latency of sequential vs hierarchical merging under injected delay");
    add_common(bench, o);
    bench->add_option("--data", o.data, "dataset JSONL; default is one synthetic record");
    bench->add_option("--synthetic", o.synthetic, "chunks in the synthetic record")->check(CLI::Range(2, 4096));
    bench->add_option("--delay-ms", o.delay_ms, "sleep before every fusion call")->check(CLI::PositiveNumber);
    bench->add_option("--out", o.out, "latency CSV, - for stdout");

    auto* sim = app.add_subcommand("simmatrix", "pairwise chunk similarity matrix as CSV");
    add_common(sim, o);
    add_chunk_input(sim, o);
    sim->add_option("--metric", o.metric, "cosine|nll")->check(CLI::IsMember({"cosine", "nll"}));
    sim->add_option("--embed", o.embed, "hash|remote")->check(CLI::IsMember({"hash", "remote"}));

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n";
        const auto subs = app.get_subcommands();
        err << (subs.empty() ? app.help() : subs.front()->help());
        return 2;
    }

    setup_logging(o.log_level, err);
    try {
        if (merge->parsed()) return cmd_merge(o, out);
        if (topk->parsed()) return cmd_topk(o, out);
        if (eval->parsed()) return cmd_eval(o, out);
        if (bench->parsed()) return cmd_bench(o, out);
        return cmd_simmatrix(o, out);
    } catch (const std::exception& e) {
        nlohmann::json chain = nlohmann::json::array();
        std::string type;
        collect_chain(e, chain, type);
        nlohmann::json report{{"error", {{"type", type}, {"message", chain.back()}, {"causes", chain}}}};
        err << report.dump() << "\n";
        return 1;
    }
}

int run_cli(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run_cli(args, std::cout, std::cerr);
}

} // namespace mergectx
