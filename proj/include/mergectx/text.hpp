#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace mergectx {

std::vector<std::string> split_whitespace(std::string_view text);

/// Lowercase ASCII letters and drop ASCII punctuation. Other bytes pass through.
std::string lower_strip_punctuation(std::string_view text);

/// Lowercase, strip punctuation, split on whitespace.
std::vector<std::string> normalized_tokens(std::string_view text);

/// Splits after '.', '!' or '?' when followed by whitespace. The delimiter stays
/// with its sentence; surrounding whitespace is trimmed and empty pieces dropped.
std::vector<std::string> split_sentences(std::string_view text);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

std::string trim(std::string_view text);

/// Quotes a CSV field when it contains a comma, quote or newline.
std::string csv_escape(std::string_view field);

/// Shortest round-trip decimal form of a double.
std::string format_number(double value);

} // namespace mergectx
