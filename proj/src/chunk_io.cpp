#include "mergectx/chunk_io.hpp"

#include <fstream>
#include <map>
#include <set>

#include "mergectx/error.hpp"
#include "mergectx/text.hpp"

namespace mergectx {

InputChunk parse_input_chunk(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("chunk entry is not a JSON object");
    if (!j.contains("text") || !j["text"].is_string()) throw ConfigError("chunk entry lacks a string \"text\"");
    InputChunk c;
    c.text = j["text"].get<std::string>();
    if (j.contains("id") && !j["id"].is_null()) {
        c.label = j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
    }
    if (j.contains("score") && !j["score"].is_null()) {
        if (!j["score"].is_number()) throw ConfigError("chunk \"score\" must be a number");
        c.score = j["score"].get<double>();
    }
    return c;
}

std::vector<InputChunk> parse_chunks_jsonl(std::istream& in) {
    std::vector<InputChunk> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            out.push_back(parse_input_chunk(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
        } catch (const ConfigError& e) {
            throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

std::vector<InputChunk> read_chunks_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read chunk file " + path.string());
    try {
        return parse_chunks_jsonl(in);
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

bool LoadedChunks::all_scored() const {
    for (const auto& s : given_scores) {
        if (!s) return false;
    }
    return true;
}

LoadedChunks materialize(const std::vector<InputChunk>& input, const Tokenizer& tokenizer) {
    LoadedChunks out;
    std::set<std::string> seen;
    for (std::size_t i = 0; i < input.size(); ++i) {
        const auto id = static_cast<ChunkId>(i);
        auto chunk = make_original_chunk(id, input[i].text, tokenizer, input[i].label.value_or(""));
        if (!seen.insert(chunk.label).second) throw ConfigError("duplicate chunk id '" + chunk.label + "'");
        out.chunks.push_back(std::move(chunk));
        out.given_scores.push_back(input[i].score);
    }
    return out;
}

std::string chunks_to_jsonl(std::span<const ScoredChunk> chunks, std::span<const Chunk> originals) {
    std::map<ChunkId, std::string> label_of;
    for (const auto& c : originals) label_of[c.id] = c.label;
    std::string out;
    for (const auto& sc : chunks) {
        nlohmann::ordered_json j;
        j["id"] = sc.chunk.label;
        j["text"] = sc.chunk.text;
        j["score"] = sc.score;
        if (!sc.chunk.is_original()) {
            std::vector<std::string> sources;
            for (ChunkId p : sc.chunk.provenance) {
                auto it = label_of.find(p);
                sources.push_back(it == label_of.end() ? std::to_string(p) : it->second);
            }
            j["sources"] = sources;
        }
        out += j.dump() + "\n";
    }
    return out;
}

} // namespace mergectx
