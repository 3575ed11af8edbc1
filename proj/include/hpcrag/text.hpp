#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace hpcrag {

/// True when `bytes` is well-formed UTF-8 (no overlongs, no surrogates).
bool is_valid_utf8(std::string_view bytes) noexcept;

/// Replaces every byte that is not part of a well-formed UTF-8 sequence with
/// '?', so the byte length is preserved. Sets `replaced` when anything changed.
std::string sanitize_utf8(std::string_view bytes, bool* replaced = nullptr);

/// Byte offsets of every code point start in valid UTF-8 text, plus a final
/// entry equal to text.size(). Length of the result minus one is the code
/// point count.
std::vector<std::size_t> code_point_offsets(std::string_view text);

std::size_t code_point_count(std::string_view text) noexcept;

std::string_view trim(std::string_view s) noexcept;
std::string to_lower_ascii(std::string_view s);
bool starts_with_icase(std::string_view s, std::string_view prefix) noexcept;

/// Whitespace tokenization with ASCII case folding and trimming of leading and
/// trailing ASCII punctuation; inner punctuation ("nvidia-smi") is kept.
/// Shared by the offline embedder and the offline overlap reranker.
std::vector<std::string> tokenize(std::string_view text);

/// Hex SHA-256 of the input bytes.
std::string sha256_hex(std::string_view bytes);

/// UTC timestamp, e.g. "2024-05-01T12:00:00.123Z".
std::string iso_timestamp(std::chrono::system_clock::time_point tp = std::chrono::system_clock::now());

std::string replace_all(std::string text, std::string_view from, std::string_view to);

}  // namespace hpcrag
