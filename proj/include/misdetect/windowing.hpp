#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "misdetect/tokenizer.hpp"

namespace misdetect {

/// Sliding-window geometry. Two of the max_seq_length slots go to CLS and
/// SEP, the remaining capacity W is what the window formula operates on.
struct WindowConfig {
  std::size_t max_seq_length = 128;
  // Overlap is a rational so O = floor(W * num / den) is exact.
  std::size_t overlap_num = 4;
  std::size_t overlap_den = 5;

  std::size_t capacity() const { return max_seq_length - 2; }
  std::size_t overlap() const { return capacity() * overlap_num / overlap_den; }
  std::size_t stride() const { return capacity() - overlap(); }

  void validate() const;
};

struct Window {
  std::string doc_id;
  std::size_t index = 0;
  std::size_t content_start = 0;   ///< offset of the first content token in the document
  std::size_t content_length = 0;  ///< number of content tokens held
  std::vector<TokenId> ids;        ///< [CLS, content..., SEP, PAD...], length M
  std::vector<std::uint8_t> attention_mask;

  /// Positions with mask 1: content_length + 2.
  std::size_t valid_length() const { return content_length + 2; }
};

/// Number of windows for a sequence of length L with window size M and
/// stride S: 1 when L <= M, otherwise ceil((L - M) / S) + 1.
std::size_t count_windows(std::size_t length, std::size_t window, std::size_t stride);

/// Window i covers content [i*S, i*S + W) except the last, which is shifted
/// left to end exactly at L. An empty sequence yields one [CLS, SEP, PAD...]
/// window.
std::vector<Window> make_windows(const TokenSequence& seq, const WindowConfig& cfg);

/// Same layout for an explicit capacity W and stride S (1 <= S <= W); every
/// window has W + 2 positions.
std::vector<Window> make_windows(const TokenSequence& seq, std::size_t capacity, std::size_t stride);

nlohmann::json window_to_json(const Window& w);

}  // namespace misdetect
