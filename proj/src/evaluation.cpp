#include "mergectx/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <thread>

#include <spdlog/spdlog.h>

#include "mergectx/parallel.hpp"
#include "mergectx/text.hpp"

namespace mergectx {

namespace {

bool is_article(const std::string& t) { return t == "a" || t == "an" || t == "the"; }

std::vector<std::string> answer_tokens(std::string_view text) {
    return split_whitespace(normalize_answer(text));
}

void require_golds(std::span<const std::string> golds) {
    if (golds.empty()) throw ConfigError("at least one gold answer is required");
}

double f1_single(const std::vector<std::string>& pred, const std::vector<std::string>& gold) {
    if (pred.empty() && gold.empty()) return 1.0;
    if (pred.empty() || gold.empty()) return 0.0;
    std::map<std::string, int> counts;
    for (const auto& t : gold) ++counts[t];
    std::size_t common = 0;
    for (const auto& t : pred) {
        auto it = counts.find(t);
        if (it != counts.end() && it->second > 0) {
            --it->second;
            ++common;
        }
    }
    if (common == 0) return 0.0;
    const double precision = static_cast<double>(common) / static_cast<double>(pred.size());
    const double recall = static_cast<double>(common) / static_cast<double>(gold.size());
    return 2.0 * precision * recall / (precision + recall);
}

std::string fixed1(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f", v);
    return buf;
}

std::string pad(std::string s, std::size_t width) {
    if (s.size() < width) s.append(width - s.size(), ' ');
    return s;
}

} // namespace

std::string normalize_answer(std::string_view text) {
    std::vector<std::string> kept;
    for (auto& t : split_whitespace(lower_strip_punctuation(text))) {
        if (!is_article(t)) kept.push_back(std::move(t));
    }
    return join(kept, " ");
}

int exact_match(std::string_view prediction, std::span<const std::string> golds) {
    require_golds(golds);
    const auto p = normalize_answer(prediction);
    for (const auto& g : golds) {
        if (normalize_answer(g) == p) return 1;
    }
    return 0;
}

double token_f1(std::string_view prediction, std::span<const std::string> golds) {
    require_golds(golds);
    const auto p = answer_tokens(prediction);
    double best = 0.0;
    for (const auto& g : golds) best = std::max(best, f1_single(p, answer_tokens(g)));
    return best;
}

int substring_accuracy(std::string_view prediction, std::span<const std::string> golds) {
    require_golds(golds);
    const auto p = normalize_answer(prediction);
    for (const auto& g : golds) {
        if (p.find(normalize_answer(g)) != std::string::npos) return 1;
    }
    return 0;
}

bool EvalRecord::all_scored() const {
    return std::all_of(given_scores.begin(), given_scores.end(), [](const auto& s) { return s.has_value(); });
}

EvalRecord parse_eval_record(const nlohmann::json& j, const Tokenizer& tokenizer) {
    if (!j.is_object()) throw ConfigError("dataset entry is not a JSON object");
    std::optional<std::string> id;
    if (j.contains("id") && !j["id"].is_null()) id = j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
    EvalRecord r{make_query(j.at("question").get<std::string>(), id), {}, {}, {}, j.value("dataset", std::string())};
    r.gold_answers = j.at("answers").get<std::vector<std::string>>();
    if (r.gold_answers.empty()) throw ConfigError("record has no gold answers");
    std::vector<InputChunk> input;
    for (const auto& c : j.value("chunks", nlohmann::json::array())) input.push_back(parse_input_chunk(c));
    auto loaded = materialize(input, tokenizer);
    r.chunks = std::move(loaded.chunks);
    r.given_scores = std::move(loaded.given_scores);
    return r;
}

std::vector<EvalRecord> read_dataset_jsonl(const std::filesystem::path& path, const Tokenizer& tokenizer) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read dataset " + path.string());
    std::vector<EvalRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            auto rec = parse_eval_record(nlohmann::json::parse(line), tokenizer);
            if (!rec.query.id) rec.query.id = std::to_string(out.size());
            out.push_back(std::move(rec));
        } catch (const std::exception& e) {
            throw ConfigError(path.string() + " line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

std::string RemoteChatGenerator::answer(const GenerationRequest& request) const {
    return trim(client_.complete(request.prompt));
}

ReplayGenerator ReplayGenerator::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read answer fixture " + path.string());
    try {
        return ReplayGenerator(nlohmann::json::parse(in).get<std::map<std::string, std::string>>());
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("answer fixture " + path.string() + ": " + e.what());
    }
}

std::string ReplayGenerator::answer(const GenerationRequest& request) const {
    if (request.record.query.id) {
        if (auto it = answers_.find(*request.record.query.id); it != answers_.end()) return it->second;
    }
    if (auto it = answers_.find(request.record.query.text); it != answers_.end()) return it->second;
    throw Error("no replay answer for record '" + request.record.query.id.value_or(request.record.query.text) + "'");
}

std::string GoldInContextGenerator::answer(const GenerationRequest& request) const {
    const auto context = normalize_answer(request.context);
    for (const auto& g : request.record.gold_answers) {
        const auto ng = normalize_answer(g);
        if (!ng.empty() && context.find(ng) != std::string::npos) return g;
    }
    return "";
}

std::string DelayedFuser::fuse_text(const Chunk& a, const Chunk& b, const Query& query, MergeStrategy mode) const {
    std::this_thread::sleep_for(delay_);
    return inner_.fuse_text(a, b, query, mode);
}

std::string PipelineSpec::tag() const {
    if (method == Method::topk) return "topk(k=" + std::to_string(k) + ")";
    return "merge(" + std::string(to_string(strategy)) + "," + std::string(to_string(schedule)) +
           ",x" + format_number(multiplier) + ",B=" + std::to_string(concurrency) + ")";
}

void EvalReport::aggregate() {
    em = f1 = acc = mean_context_tokens = 0.0;
    evaluated = errors = skipped = 0;
    for (const auto& r : rows) {
        if (r.status == "skipped") {
            ++skipped;
        } else if (!r.ok()) {
            ++errors;
        } else {
            ++evaluated;
            em += r.em;
            f1 += r.f1;
            acc += r.acc;
            mean_context_tokens += static_cast<double>(r.context_tokens);
        }
    }
    if (evaluated > 0) {
        const double n = static_cast<double>(evaluated);
        em = 100.0 * em / n;
        f1 = 100.0 * f1 / n;
        acc = 100.0 * acc / n;
        mean_context_tokens /= n;
    }
}

std::string render_context(std::span<const ScoredChunk> context) {
    std::vector<ScoredChunk> ordered(context.begin(), context.end());
    std::sort(ordered.begin(), ordered.end(), score_descending);
    std::vector<std::string> parts;
    for (const auto& c : ordered) parts.push_back(c.chunk.text);
    return join(parts, "\n\n");
}

EvalReport evaluate_pipeline(std::span<const EvalRecord> records, const PipelineSpec& pipeline,
                             const EvalBackends& backends, std::size_t jobs) {
    if (records.empty()) throw ConfigError("no records to evaluate");
    EvalReport report;
    report.method_tag = pipeline.tag();
    report.rows.resize(records.size());

    bounded_parallel_for(records.size(), jobs, [&](std::size_t i) {
        const auto& rec = records[i];
        auto& row = report.rows[i];
        row.record_id = rec.query.id.value_or(std::to_string(i));
        row.dataset = rec.dataset_tag;
        if (rec.chunks.empty()) {
            spdlog::warn("record {} has no chunks; skipped", row.record_id);
            row.status = "skipped";
            return;
        }
        const auto start = std::chrono::steady_clock::now();
        try {
            const auto scorer = backends.scorer_for(rec);
            const auto scored = score_batch(*scorer, rec.chunks, rec.query);
            std::vector<ScoredChunk> context;
            if (pipeline.method == PipelineSpec::Method::topk) {
                context = select_topk(scored, pipeline.k);
            } else {
                MergeConfig cfg;
                cfg.strategy = pipeline.strategy;
                cfg.schedule = pipeline.schedule;
                cfg.budget = compute_budget(rec.chunks, pipeline.multiplier);
                cfg.concurrency = pipeline.concurrency;
                cfg.rescore_fused = pipeline.rescore_fused;
                auto result = run_merge(scored, rec.query, cfg,
                                        MergeBackends{backends.tokenizer, *scorer, backends.fuser, backends.nll});
                row.merge_rounds = result.trace.batch_rounds();
                context = std::move(result.context);
            }
            row.context_tokens = total_length(context);
            const auto text = render_context(context);
            const auto prompt = render_prompt(backends.answer_prompt, {{"context", text}, {"question", rec.query.text}});
            row.prediction = backends.generator.answer(GenerationRequest{prompt, text, rec});
            row.em = exact_match(row.prediction, rec.gold_answers);
            row.f1 = token_f1(row.prediction, rec.gold_answers);
            row.acc = substring_accuracy(row.prediction, rec.gold_answers);
        } catch (const std::exception& e) {
            row.status = std::string("error: ") + e.what();
        }
        row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    });

    report.aggregate();
    return report;
}

std::string report_to_csv(const EvalReport& report, bool include_timing) {
    std::string out = "method,record,dataset,status,em,f1,acc,context_tokens,merge_rounds";
    if (include_timing) out += ",wall_ms";
    out += ",prediction\n";
    const auto tag = csv_escape(report.method_tag);
    for (const auto& r : report.rows) {
        out += tag + "," + csv_escape(r.record_id) + "," + csv_escape(r.dataset) + "," + csv_escape(r.status) + "," +
               std::to_string(r.em) + "," + format_number(r.f1) + "," + std::to_string(r.acc) + "," +
               std::to_string(r.context_tokens) + "," + std::to_string(r.merge_rounds);
        if (include_timing) out += "," + format_number(r.wall_ms);
        out += "," + csv_escape(r.prediction) + "\n";
    }
    out += tag + ",ALL,," + csv_escape("n=" + std::to_string(report.evaluated) + " errors=" +
                                       std::to_string(report.errors) + " skipped=" + std::to_string(report.skipped)) +
           "," + format_number(report.em) + "," + format_number(report.f1) + "," + format_number(report.acc) + "," +
           format_number(report.mean_context_tokens) + ",";
    if (include_timing) out += ",";
    out += ",\n";
    return out;
}

std::string reports_to_table(std::span<const EvalReport> reports) {
    std::size_t width = 6;
    for (const auto& r : reports) width = std::max(width, r.method_tag.size());
    std::string out = pad("method", width + 2) + pad("n", 6) + pad("EM", 8) + pad("F1", 8) + pad("Acc", 8) +
                      pad("tokens", 9) + "errors\n";
    for (const auto& r : reports) {
        out += pad(r.method_tag, width + 2) + pad(std::to_string(r.evaluated), 6) + pad(fixed1(r.em), 8) +
               pad(fixed1(r.f1), 8) + pad(fixed1(r.acc), 8) + pad(fixed1(r.mean_context_tokens), 9) +
               std::to_string(r.errors) + "\n";
    }
    return out;
}

LatencyTable bench_latency(std::span<const EvalRecord> records, std::span<const BenchConfig> configs,
                           std::chrono::milliseconds delay, std::size_t b, const EvalBackends& backends) {
    if (delay.count() <= 0) throw ConfigError("bench delay must be positive");
    if (b < 1) throw ConfigError("concurrency limit B must be at least 1");
    LatencyTable table;
    const DelayedFuser delayed(backends.fuser, delay);
    std::map<std::string, double> seq_wall;
    std::map<std::string, double> hier_wall;

    for (const auto& rec : records) {
        if (rec.chunks.empty()) continue;
        const auto scorer = backends.scorer_for(rec);
        const auto scored = score_batch(*scorer, rec.chunks, rec.query);
        for (const auto& bc : configs) {
            MergeConfig cfg;
            cfg.strategy = bc.strategy;
            cfg.schedule = bc.schedule;
            cfg.budget = compute_budget(rec.chunks, bc.multiplier);
            cfg.concurrency = b;
            const auto start = std::chrono::steady_clock::now();
            const auto result =
                run_merge(scored, rec.query, cfg, MergeBackends{backends.tokenizer, *scorer, delayed, backends.nll});
            const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();

            const std::string strategy(to_string(bc.strategy));
            table.rows.push_back(LatencyRow{strategy + "/" + std::string(to_string(bc.schedule)), rec.chunks.size(),
                                            result.context.size(), b, result.trace.fusion_count(),
                                            result.trace.batch_rounds(), ms});
            (bc.schedule == MergeSchedule::sequential ? seq_wall : hier_wall)[strategy] += ms;
        }
    }
    for (const auto& [strategy, seq] : seq_wall) {
        auto it = hier_wall.find(strategy);
        if (it != hier_wall.end() && it->second > 0.0) table.speedup[strategy] = seq / it->second;
    }
    return table;
}

std::string latency_to_csv(const LatencyTable& table) {
    std::string out = "method,N,M_final,B,calls,rounds,wall_ms\n";
    for (const auto& r : table.rows) {
        char ms[32];
        std::snprintf(ms, sizeof(ms), "%.3f", r.wall_ms);
        out += r.method + "," + std::to_string(r.n) + "," + std::to_string(r.m_final) + "," + std::to_string(r.b) +
               "," + std::to_string(r.calls) + "," + std::to_string(r.rounds) + "," + ms + "\n";
    }
    return out;
}

EvalRecord synthetic_record(std::size_t n, const Tokenizer& tokenizer) {
    const std::string sentence = "Military instruction at the University of the Philippines began in 1912.";
    EvalRecord r{make_query("When did military instruction start at the university?", "synthetic-" + std::to_string(n)),
                 {}, {}, {"1912"}, "synthetic"};
    for (std::size_t i = 0; i < n; ++i) {
        r.chunks.push_back(make_original_chunk(static_cast<ChunkId>(i), sentence, tokenizer));
        r.given_scores.emplace_back(std::nullopt);
    }
    return r;
}

} // namespace mergectx
