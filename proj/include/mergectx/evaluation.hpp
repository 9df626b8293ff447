#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mergectx/chunk_io.hpp"
#include "mergectx/context.hpp"
#include "mergectx/fusion.hpp"
#include "mergectx/merge.hpp"

namespace mergectx {

/// Lowercase, strip punctuation, drop the articles a/an/the, collapse whitespace.
std::string normalize_answer(std::string_view text);

int exact_match(std::string_view prediction, std::span<const std::string> golds);

/// Max over golds of token-multiset F1 on normalized answers.
double token_f1(std::string_view prediction, std::span<const std::string> golds);

/// 1 when some normalized gold is a substring of the normalized prediction.
int substring_accuracy(std::string_view prediction, std::span<const std::string> golds);

struct EvalRecord {
    Query query;
    std::vector<Chunk> chunks;
    std::vector<std::optional<double>> given_scores;
    std::vector<std::string> gold_answers;
    std::string dataset_tag;

    bool all_scored() const;
};

/// {"question", "answers": [...], "chunks": [...], "dataset"?, "id"?} per line.
std::vector<EvalRecord> read_dataset_jsonl(const std::filesystem::path& path, const Tokenizer& tokenizer);
EvalRecord parse_eval_record(const nlohmann::json& j, const Tokenizer& tokenizer);

struct GenerationRequest {
    std::string prompt;
    std::string context;
    const EvalRecord& record;
};

/// Produces the final answer for a rendered generation prompt.
class Generator {
public:
    virtual ~Generator() = default;
    virtual std::string answer(const GenerationRequest& request) const = 0;
    virtual std::string kind() const = 0;
};

class RemoteChatGenerator final : public Generator {
public:
    explicit RemoteChatGenerator(ChatCompletionClient client) : client_(std::move(client)) {}
    std::string answer(const GenerationRequest& request) const override;
    std::string kind() const override { return "remote-chat"; }

private:
    ChatCompletionClient client_;
};

/// Canned answers keyed by record id, falling back to the question text.
class ReplayGenerator final : public Generator {
public:
    explicit ReplayGenerator(std::map<std::string, std::string> answers) : answers_(std::move(answers)) {}
    /// JSON object {key: answer}.
    static ReplayGenerator from_file(const std::filesystem::path& path);
    std::string answer(const GenerationRequest& request) const override;
    std::string kind() const override { return "replay-fixture"; }

private:
    std::map<std::string, std::string> answers_;
};

/// Offline probe: answers with the first gold answer that survives in the built
/// context, else the empty string. Measures answer retention, not reasoning.
class GoldInContextGenerator final : public Generator {
public:
    std::string answer(const GenerationRequest& request) const override;
    std::string kind() const override { return "gold-in-context"; }
};

/// Adds a fixed sleep before every fusion call.
class DelayedFuser final : public Fuser {
public:
    DelayedFuser(const Fuser& inner, std::chrono::milliseconds delay) : inner_(inner), delay_(delay) {}
    std::string fuse_text(const Chunk& a, const Chunk& b, const Query& query, MergeStrategy mode) const override;
    std::size_t max_in_flight() const override { return inner_.max_in_flight(); }
    std::string kind() const override { return "delayed-" + inner_.kind(); }

private:
    const Fuser& inner_;
    std::chrono::milliseconds delay_;
};

struct PipelineSpec {
    enum class Method { topk, merge };
    Method method = Method::topk;
    std::size_t k = 5;
    MergeStrategy strategy = MergeStrategy::asymmetric;
    MergeSchedule schedule = MergeSchedule::hierarchical;
    double multiplier = 5.0;
    std::size_t concurrency = 8;
    bool rescore_fused = true;

    std::string tag() const;
};

struct EvalBackends {
    const Tokenizer& tokenizer;
    /// Scorer used for one record; lets inline dataset scores act as a table.
    std::function<std::shared_ptr<const Scorer>(const EvalRecord&)> scorer_for;
    const Fuser& fuser;
    const NllBackend* nll = nullptr;
    const Generator& generator;
    PromptTemplate answer_prompt = default_template(TemplateKind::answer_generation);
};

struct EvalRow {
    std::string record_id;
    std::string dataset;
    std::string prediction;
    int em = 0;
    double f1 = 0.0;
    int acc = 0;
    std::size_t context_tokens = 0;
    std::size_t merge_rounds = 0;
    double wall_ms = 0.0;
    /// "ok", "skipped" (no chunks) or "error: ..." rows; only "ok" rows are aggregated.
    std::string status = "ok";

    bool ok() const { return status == "ok"; }
};

struct EvalReport {
    std::string method_tag;
    std::vector<EvalRow> rows;
    /// Percent means over ok rows.
    double em = 0.0;
    double f1 = 0.0;
    double acc = 0.0;
    double mean_context_tokens = 0.0;
    std::size_t evaluated = 0;
    std::size_t errors = 0;
    std::size_t skipped = 0;

    void aggregate();
};

/// Renders the context in descending-score order, blocks separated by a blank line.
std::string render_context(std::span<const ScoredChunk> context);

EvalReport evaluate_pipeline(std::span<const EvalRecord> records, const PipelineSpec& pipeline,
                             const EvalBackends& backends, std::size_t jobs = 1);

/// Per-record rows then an "ALL" aggregate row. Wall time is included only on request.
std::string report_to_csv(const EvalReport& report, bool include_timing = false);
std::string reports_to_table(std::span<const EvalReport> reports);

struct LatencyRow {
    std::string method;
    std::size_t n = 0;
    std::size_t m_final = 0;
    std::size_t b = 0;
    std::size_t calls = 0;
    std::size_t rounds = 0;
    double wall_ms = 0.0;
};

struct LatencyTable {
    std::vector<LatencyRow> rows;
    /// sequential wall / hierarchical wall per strategy, over all records.
    std::map<std::string, double> speedup;
};

struct BenchConfig {
    MergeStrategy strategy = MergeStrategy::symmetric;
    MergeSchedule schedule = MergeSchedule::sequential;
    double multiplier = 5.0;
};

/// Runs every config on every record with `delay` injected before each fusion.
LatencyTable bench_latency(std::span<const EvalRecord> records, std::span<const BenchConfig> configs,
                           std::chrono::milliseconds delay, std::size_t b, const EvalBackends& backends);

std::string latency_to_csv(const LatencyTable& table);

/// n copies of one sentence: fused copies keep the original length, so the
/// working set shrinks without the token total changing per chunk.
EvalRecord synthetic_record(std::size_t n, const Tokenizer& tokenizer);

} // namespace mergectx
