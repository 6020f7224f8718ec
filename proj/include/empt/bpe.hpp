#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "empt/labels.hpp"

namespace empt {

using TokenId = std::int32_t;

// Byte-level BPE vocabulary.
//
// Id layout: a contiguous block of special tokens, then 512 base symbols
// (each byte, plain and word-final), then one id per learned merge in merge
// order. A word-final symbol means "a single space follows"; every other
// whitespace is carried by explicit whitespace symbols, so decoding is
// lossless for arbitrary bytes.
class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kCls = 3;
  static constexpr TokenId kSpeaker1 = 4;
  static constexpr TokenId kSpeaker2 = 5;
  static constexpr TokenId kFirstEmotion = 6;
  static constexpr TokenId kFirstAct = kFirstEmotion + kNumEmotions;
  static constexpr TokenId kFirstTopic = kFirstAct + kNumActs;
  static constexpr TokenId kNeutral = kFirstTopic + kNumTopics;
  static constexpr int kNumSpecials = kNeutral + 1;
  static constexpr int kNumBase = 512;
  static constexpr int kMinSize = kNumSpecials + kNumBase;

  static constexpr TokenId emotion_token(Emotion e) { return kFirstEmotion + static_cast<int>(e); }
  static constexpr TokenId act_token(Act a) { return kFirstAct + static_cast<int>(a); }
  static constexpr TokenId topic_token(Topic t) { return kFirstTopic + static_cast<int>(t); }
  // Speaker of utterance `index` in a conversation: even -> speaker1.
  static constexpr TokenId speaker_token(std::size_t index) {
    return index % 2 == 0 ? kSpeaker1 : kSpeaker2;
  }
  static constexpr bool is_special(TokenId id) { return id >= 0 && id < kNumSpecials; }

  // Character-level vocabulary with no merges.
  Vocabulary();

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::string& token(TokenId id) const;
  std::optional<TokenId> id(std::string_view token) const;
  // Decoded bytes of a non-special token, including its trailing space if word-final.
  const std::string& bytes(TokenId id) const;
  const std::vector<std::pair<TokenId, TokenId>>& merges() const { return merges_; }
  std::optional<int> merge_rank(TokenId left, TokenId right) const;

  void add_merge(TokenId left, TokenId right);

  std::string to_json() const;
  static Vocabulary from_json(std::string_view text);
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);
  // Stable content hash (hex) of the serialized vocabulary.
  std::string hash() const;

 private:
  std::vector<std::string> tokens_;
  std::vector<std::string> bytes_;
  std::unordered_map<std::string, TokenId> id_of_;
  std::vector<std::pair<TokenId, TokenId>> merges_;
  std::unordered_map<std::uint64_t, int> rank_;
};

// Pre-tokenization unit: a run of word characters, one punctuation byte, or
// a whitespace run. `word_final` is set when exactly one space follows and
// was absorbed into the piece.
struct Piece {
  std::string text;
  bool word_final = false;
};
std::vector<Piece> split_pieces(std::string_view text);

// Base symbol ids of one piece before any merge.
std::vector<TokenId> base_symbols(const Piece& piece);

// Greedy BPE training: merges the most frequent adjacent pair (counted
// without overlap, ties to the pair seen first in the corpus) until the
// vocabulary reaches `target_size` or no pair occurs at least twice.
// Throws ConfigError if target_size < Vocabulary::kMinSize.
Vocabulary train_bpe(std::span<const std::string> corpus, int target_size);

std::vector<TokenId> encode(std::string_view text, const Vocabulary& vocab);
// Throws IndexError on an id outside the vocabulary.
std::string decode(std::span<const TokenId> ids, const Vocabulary& vocab,
                   bool show_specials = false);

// Replaces each maximal invalid UTF-8 subsequence with U+FFFD.
std::string to_valid_utf8(std::string_view bytes);

}  // namespace empt
