#pragma once

#include <filesystem>
#include <istream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mergectx/context.hpp"

namespace mergectx {

/// One line of a chunk file: {"id"?: string|number, "text": string, "score"?: number}.
struct InputChunk {
    std::optional<std::string> label;
    std::string text;
    std::optional<double> score;
};

InputChunk parse_input_chunk(const nlohmann::json& j);
std::vector<InputChunk> parse_chunks_jsonl(std::istream& in);
std::vector<InputChunk> read_chunks_file(const std::filesystem::path& path);

struct LoadedChunks {
    std::vector<Chunk> chunks;
    /// Scores supplied by the input, aligned with `chunks`.
    std::vector<std::optional<double>> given_scores;

    bool all_scored() const;
};

/// Assigns ids 0..n-1 in input order; missing labels default to the id.
/// Throws ConfigError on duplicate labels.
LoadedChunks materialize(const std::vector<InputChunk>& input, const Tokenizer& tokenizer);

/// Writes {"id", "text", "score"} per line; fused chunks also list the labels of
/// the original chunks they came from under "sources".
std::string chunks_to_jsonl(std::span<const ScoredChunk> chunks,
                            std::span<const Chunk> originals = {});

} // namespace mergectx
