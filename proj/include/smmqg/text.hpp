#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace smmqg {

/// Lowercases ASCII letters and splits on runs of non-alphanumeric ASCII
/// characters. Bytes >= 0x80 are kept inside tokens so UTF-8 words survive.
/// No stemming, no stopwords. Shared by BM25, ROUGE-1 and the mock embedder.
std::vector<std::string> tokenize(std::string_view text);

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);

/// Trim followed by ASCII case folding.
std::string normalize_entity(std::string_view s);

/// Number of UTF-8 code points (continuation bytes are not counted).
std::size_t utf8_length(std::string_view s);

std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

std::vector<std::string> split_lines(std::string_view s);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

bool starts_with_ci(std::string_view s, std::string_view prefix);

/// True for "None", "none.", " NONE " and friends: a model refusal.
bool is_refusal(std::string_view response);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);

}  // namespace smmqg
