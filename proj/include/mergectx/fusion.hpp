#pragma once

#include <cstddef>
#include <filesystem>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "mergectx/context.hpp"
#include "mergectx/error.hpp"
#include "mergectx/http_client.hpp"

namespace mergectx {

enum class TemplateKind { symmetric_merge, asymmetric_merge, answer_generation };

std::string_view to_string(TemplateKind kind);

struct PromptTemplate {
    TemplateKind kind = TemplateKind::symmetric_merge;
    std::string body;
};

/// Placeholders a template of this kind must contain.
std::vector<std::string> required_placeholders(TemplateKind kind);

/// Every `{identifier}` occurring in the body, in order of first appearance.
std::vector<std::string> template_placeholders(std::string_view body);

PromptTemplate default_template(TemplateKind kind);

/// Reads a template file and checks it contains the kind's placeholders.
PromptTemplate load_template(TemplateKind kind, const std::filesystem::path& path);

/// Single-pass substitution; bound values are inserted verbatim and never
/// re-expanded. Throws ConfigError("unbound placeholder: <name>").
std::string render_prompt(const PromptTemplate& tmpl, const std::map<std::string, std::string>& bindings);

struct PromptSet {
    PromptTemplate symmetric = default_template(TemplateKind::symmetric_merge);
    PromptTemplate asymmetric = default_template(TemplateKind::asymmetric_merge);
    PromptTemplate answer = default_template(TemplateKind::answer_generation);

    const PromptTemplate& for_mode(MergeStrategy mode) const {
        return mode == MergeStrategy::symmetric ? symmetric : asymmetric;
    }
};

/// The fusion operator M(a, b; q). In asymmetric mode `a` is the anchor (host)
/// and `b` the source.
class Fuser {
public:
    virtual ~Fuser() = default;
    virtual std::string fuse_text(const Chunk& a, const Chunk& b, const Query& query,
                                  MergeStrategy mode) const = 0;
    /// Upper bound on concurrent fuse_text calls the backend accepts.
    virtual std::size_t max_in_flight() const { return std::numeric_limits<std::size_t>::max(); }
    virtual std::string kind() const = 0;
};

/// Deterministic sentence-level extraction. See extractive_fuse_text.
class ExtractiveFuser final : public Fuser {
public:
    std::string fuse_text(const Chunk& a, const Chunk& b, const Query& query,
                          MergeStrategy mode) const override;
    std::string kind() const override { return "extractive"; }
};

/// Renders the mode's prompt and returns the model response verbatim.
class RemoteChatFuser final : public Fuser {
public:
    RemoteChatFuser(ChatCompletionClient client, PromptSet prompts)
        : client_(std::move(client)), prompts_(std::move(prompts)) {}

    std::string render(const Chunk& a, const Chunk& b, const Query& query, MergeStrategy mode) const;
    std::string fuse_text(const Chunk& a, const Chunk& b, const Query& query,
                          MergeStrategy mode) const override;
    std::size_t max_in_flight() const override { return client_.max_in_flight(); }
    std::string kind() const override { return "remote-chat"; }

private:
    ChatCompletionClient client_;
    PromptSet prompts_;
};

/// Canned responses keyed by (left id, right id, mode).
class ReplayFuser final : public Fuser {
public:
    using Key = std::tuple<ChunkId, ChunkId, MergeStrategy>;

    explicit ReplayFuser(std::map<Key, std::string> responses) : responses_(std::move(responses)) {}

    /// JSON array of {"left", "right", "mode", "response"} objects.
    static ReplayFuser from_file(const std::filesystem::path& path);

    std::string fuse_text(const Chunk& a, const Chunk& b, const Query& query,
                          MergeStrategy mode) const override;
    std::string kind() const override { return "replay-fixture"; }

private:
    std::map<Key, std::string> responses_;
};

/// A fusion call failed for the pair (left, right).
class FusionError : public Error {
public:
    FusionError(const std::string& what, ChunkId left, ChunkId right)
        : Error(what), left_(left), right_(right) {}
    ChunkId left() const { return left_; }
    ChunkId right() const { return right_; }

private:
    ChunkId left_;
    ChunkId right_;
};

inline constexpr std::string_view kWarnGrowth = "growth";
inline constexpr std::string_view kWarnFallback = "empty-response-fallback";

struct FusionResult {
    Chunk chunk;
    std::vector<std::string> warnings;
};

/// Fuses a and b into a new chunk with id `fresh_id`. An empty backend response
/// falls back to the extractive fuser; output longer than both parents combined
/// is flagged as growth.
FusionResult fuse(const Fuser& backend, const Chunk& a, const Chunk& b, const Query& query,
                  MergeStrategy mode, ChunkId fresh_id, const Tokenizer& tokenizer);

/// Identical parents fuse to one copy. Otherwise keeps sentences sharing at least one normalized token with the query and drops
/// any sentence of `b` whose token set is covered by a kept sentence of `a`.
/// Asymmetric mode emits all of a's sentences before b's; symmetric mode
/// alternates a, b, a, b in source order. When nothing overlaps the query, the
/// best-overlapping sentence of a and of b (among those a does not cover) is kept instead.
std::string extractive_fuse_text(const Chunk& a, const Chunk& b, const Query& query, MergeStrategy mode);

Chunk extractive_fuse(const Chunk& a, const Chunk& b, const Query& query, MergeStrategy mode,
                      ChunkId fresh_id, const Tokenizer& tokenizer);

} // namespace mergectx
