#include "mergectx/fusion.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "mergectx/builtin_prompts.hpp"
#include "mergectx/text.hpp"

namespace mergectx {

namespace {

bool is_ident_char(char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
}

// Calls on_text for literal runs and on_placeholder for each {identifier}.
template <class OnText, class OnPlaceholder>
void scan_template(std::string_view body, OnText&& on_text, OnPlaceholder&& on_placeholder) {
    std::size_t i = 0;
    std::size_t literal_start = 0;
    while (i < body.size()) {
        if (body[i] == '{') {
            std::size_t j = i + 1;
            while (j < body.size() && is_ident_char(body[j])) ++j;
            if (j > i + 1 && j < body.size() && body[j] == '}') {
                on_text(body.substr(literal_start, i - literal_start));
                on_placeholder(std::string(body.substr(i + 1, j - i - 1)));
                i = j + 1;
                literal_start = i;
                continue;
            }
        }
        ++i;
    }
    on_text(body.substr(literal_start));
}

std::set<std::string> token_set(std::string_view text) {
    auto toks = normalized_tokens(text);
    return {toks.begin(), toks.end()};
}

struct Sentence {
    std::string text;
    std::set<std::string> tokens;
    std::size_t overlap = 0;
};

std::vector<Sentence> analyse(const std::string& text, const std::set<std::string>& query_tokens) {
    std::vector<Sentence> out;
    for (auto& s : split_sentences(text)) {
        Sentence sent{std::move(s), {}, 0};
        sent.tokens = token_set(sent.text);
        for (const auto& t : sent.tokens) sent.overlap += query_tokens.count(t);
        out.push_back(std::move(sent));
    }
    return out;
}

bool covered_by(const Sentence& s, const std::vector<const Sentence*>& kept) {
    return std::any_of(kept.begin(), kept.end(), [&](const Sentence* k) {
        return std::includes(k->tokens.begin(), k->tokens.end(), s.tokens.begin(), s.tokens.end());
    });
}

const Sentence* best_overlap(const std::vector<Sentence>& sentences) {
    const Sentence* best = nullptr;
    for (const auto& s : sentences) {
        if (!best || s.overlap > best->overlap) best = &s;
    }
    return best;
}

} // namespace

std::string_view to_string(TemplateKind kind) {
    switch (kind) {
    case TemplateKind::symmetric_merge: return "symmetric-merge";
    case TemplateKind::asymmetric_merge: return "asymmetric-merge";
    case TemplateKind::answer_generation: return "answer-generation";
    }
    return "unknown";
}

std::vector<std::string> required_placeholders(TemplateKind kind) {
    if (kind == TemplateKind::answer_generation) return {"context", "question"};
    return {"query", "chunk_a", "chunk_b"};
}

std::vector<std::string> template_placeholders(std::string_view body) {
    std::vector<std::string> out;
    scan_template(body, [](std::string_view) {}, [&](std::string name) {
        if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(std::move(name));
    });
    return out;
}

PromptTemplate default_template(TemplateKind kind) {
    switch (kind) {
    case TemplateKind::symmetric_merge: return {kind, builtin_prompts::symmetric_merge};
    case TemplateKind::asymmetric_merge: return {kind, builtin_prompts::asymmetric_merge};
    case TemplateKind::answer_generation: return {kind, builtin_prompts::answer_generation};
    }
    throw ConfigError("unknown template kind");
}

PromptTemplate load_template(TemplateKind kind, const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read prompt template " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    PromptTemplate t{kind, ss.str()};
    const auto present = template_placeholders(t.body);
    for (const auto& name : required_placeholders(kind)) {
        if (std::find(present.begin(), present.end(), name) == present.end()) {
            throw ConfigError("template " + path.string() + " lacks placeholder {" + name + "}");
        }
    }
    return t;
}

std::string render_prompt(const PromptTemplate& tmpl, const std::map<std::string, std::string>& bindings) {
    for (const auto& name : template_placeholders(tmpl.body)) {
        if (!bindings.count(name)) throw ConfigError("unbound placeholder: " + name);
    }
    std::string out;
    scan_template(tmpl.body, [&](std::string_view lit) { out.append(lit); },
                  [&](const std::string& name) { out.append(bindings.at(name)); });
    return out;
}

std::string ExtractiveFuser::fuse_text(const Chunk& a, const Chunk& b, const Query& query,
                                       MergeStrategy mode) const {
    return extractive_fuse_text(a, b, query, mode);
}

std::string RemoteChatFuser::render(const Chunk& a, const Chunk& b, const Query& query,
                                    MergeStrategy mode) const {
    return render_prompt(prompts_.for_mode(mode),
                         {{"query", query.text}, {"chunk_a", a.text}, {"chunk_b", b.text}});
}

std::string RemoteChatFuser::fuse_text(const Chunk& a, const Chunk& b, const Query& query,
                                       MergeStrategy mode) const {
    return client_.complete(render(a, b, query, mode));
}

ReplayFuser ReplayFuser::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read replay fixture " + path.string());
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("replay fixture " + path.string() + ": " + e.what());
    }
    if (!doc.is_array()) throw ConfigError("replay fixture must be a JSON array");
    std::map<Key, std::string> responses;
    for (const auto& item : doc) {
        responses[{item.at("left").get<ChunkId>(), item.at("right").get<ChunkId>(),
                   parse_strategy(item.at("mode").get<std::string>())}] = item.at("response").get<std::string>();
    }
    return ReplayFuser(std::move(responses));
}

std::string ReplayFuser::fuse_text(const Chunk& a, const Chunk& b, const Query&, MergeStrategy mode) const {
    auto it = responses_.find({a.id, b.id, mode});
    if (it == responses_.end()) {
        throw Error("no replay fixture for pair " + std::to_string(a.id) + "-" + std::to_string(b.id) +
                    " (" + std::string(to_string(mode)) + ")");
    }
    return it->second;
}

FusionResult fuse(const Fuser& backend, const Chunk& a, const Chunk& b, const Query& query,
                  MergeStrategy mode, ChunkId fresh_id, const Tokenizer& tokenizer) {
    const auto pair = std::to_string(a.id) + "-" + std::to_string(b.id);
    if (trim(a.text).empty() || trim(b.text).empty()) {
        throw FusionError("cannot fuse pair " + pair + ": empty chunk text", a.id, b.id);
    }
    FusionResult result;
    std::string text;
    try {
        text = backend.fuse_text(a, b, query, mode);
    } catch (const std::exception& e) {
        throw FusionError("fusion of pair " + pair + " failed: " + e.what(), a.id, b.id);
    }
    if (trim(text).empty()) {
        result.warnings.emplace_back(kWarnFallback);
        text = extractive_fuse_text(a, b, query, mode);
    }
    result.chunk = make_fused_chunk(fresh_id, std::move(text), a, b, tokenizer);
    if (result.chunk.token_len > a.token_len + b.token_len) result.warnings.emplace_back(kWarnGrowth);
    return result;
}

std::string extractive_fuse_text(const Chunk& a, const Chunk& b, const Query& query, MergeStrategy mode) {
    if (trim(a.text) == trim(b.text)) return std::string(trim(a.text));
    const auto qtokens = token_set(query.text);
    const auto sa = analyse(a.text, qtokens);
    const auto sb = analyse(b.text, qtokens);

    std::vector<const Sentence*> kept_a;
    std::vector<const Sentence*> kept_b;
    for (const auto& s : sa) {
        if (s.overlap > 0) kept_a.push_back(&s);
    }
    for (const auto& s : sb) {
        if (s.overlap > 0 && !covered_by(s, kept_a)) kept_b.push_back(&s);
    }
    if (kept_a.empty() && kept_b.empty()) {
        if (auto* s = best_overlap(sa)) kept_a.push_back(s);
        const Sentence* best_b = nullptr;
        for (const auto& s : sb) {
            if (!covered_by(s, kept_a) && (!best_b || s.overlap > best_b->overlap)) best_b = &s;
        }
        if (best_b) kept_b.push_back(best_b);
    }

    std::vector<std::string> parts;
    if (mode == MergeStrategy::asymmetric) {
        for (auto* s : kept_a) parts.push_back(s->text);
        for (auto* s : kept_b) parts.push_back(s->text);
    } else {
        for (std::size_t i = 0; i < std::max(kept_a.size(), kept_b.size()); ++i) {
            if (i < kept_a.size()) parts.push_back(kept_a[i]->text);
            if (i < kept_b.size()) parts.push_back(kept_b[i]->text);
        }
    }
    return join(parts, " ");
}

Chunk extractive_fuse(const Chunk& a, const Chunk& b, const Query& query, MergeStrategy mode,
                      ChunkId fresh_id, const Tokenizer& tokenizer) {
    return make_fused_chunk(fresh_id, extractive_fuse_text(a, b, query, mode), a, b, tokenizer);
}

} // namespace mergectx
