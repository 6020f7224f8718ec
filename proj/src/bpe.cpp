#include "empt/bpe.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <climits>
#include <cstdint>
#include <map>
#include <set>

#include "json.hpp"

#include "empt/checkpoint.hpp"
#include "empt/error.hpp"
#include "empt/rng.hpp"

namespace empt {
namespace {

constexpr const char* kWordFinalMarker = "</w>";

std::uint64_t pair_key(TokenId a, TokenId b) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
         static_cast<std::uint32_t>(b);
}

void append_utf8(std::string& out, std::uint32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

// Printable stand-in for every byte so that token strings are valid UTF-8
// (the usual byte-level BPE display mapping).
const std::array<std::string, 256>& byte_glyphs() {
  static const std::array<std::string, 256> glyphs = [] {
    std::array<std::string, 256> g;
    std::uint32_t extra = 0;
    for (std::uint32_t b = 0; b < 256; ++b) {
      const bool printable = (b >= '!' && b <= '~') || (b >= 0xA1 && b <= 0xAC) || (b >= 0xAE);
      append_utf8(g[b], printable ? b : 256 + extra++);
    }
    return g;
  }();
  return glyphs;
}

std::string special_name(int i) {
  static const std::array<const char*, 6> fixed = {"<pad>", "<bos>", "<eos>", "<cls>",
                                                   "<speaker1>", "<speaker2>"};
  if (i < 6) return fixed[i];
  if (i < Vocabulary::kFirstAct) return "<emotion:" + std::string(kEmotionNames[i - Vocabulary::kFirstEmotion]) + ">";
  if (i < Vocabulary::kFirstTopic) return "<act:" + std::string(kActNames[i - Vocabulary::kFirstAct]) + ">";
  if (i < Vocabulary::kNeutral) return "<topic:" + std::string(kTopicNames[i - Vocabulary::kFirstTopic]) + ">";
  return "<neutral>";
}

enum class CharClass { kWord, kPunct, kSpace };

CharClass classify(unsigned char c) {
  switch (c) {
    case ' ': case '\t': case '\n': case '\r': case '\v': case '\f':
      return CharClass::kSpace;
    default:
      break;
  }
  if (c < 0x80 && std::ispunct(c)) return CharClass::kPunct;
  return CharClass::kWord;
}

// Pairs of one symbol sequence, counted without overlap: in "a a a" the
// pair (a, a) counts once.
template <class F>
void for_each_pair(const std::vector<TokenId>& s, F&& f) {
  std::size_t last_same = SIZE_MAX;  // start index of the last counted (x, x) pair
  for (std::size_t i = 0; i + 1 < s.size(); ++i) {
    if (s[i] == s[i + 1]) {
      if (last_same != SIZE_MAX && last_same + 1 == i && s[last_same] == s[i]) continue;
      last_same = i;
    }
    f(s[i], s[i + 1], i);
  }
}

void apply_merge(std::vector<TokenId>& s, TokenId left, TokenId right, TokenId merged) {
  std::size_t w = 0;
  for (std::size_t r = 0; r < s.size();) {
    if (r + 1 < s.size() && s[r] == left && s[r + 1] == right) {
      s[w++] = merged;
      r += 2;
    } else {
      s[w++] = s[r++];
    }
  }
  s.resize(w);
}

}  // namespace

Vocabulary::Vocabulary() {
  const auto& glyphs = byte_glyphs();
  for (int i = 0; i < kNumSpecials; ++i) {
    tokens_.push_back(special_name(i));
    bytes_.emplace_back();
  }
  for (int b = 0; b < 256; ++b) {
    tokens_.push_back(glyphs[b]);
    bytes_.emplace_back(1, static_cast<char>(b));
  }
  for (int b = 0; b < 256; ++b) {
    tokens_.push_back(glyphs[b] + kWordFinalMarker);
    bytes_.push_back(std::string(1, static_cast<char>(b)) + " ");
  }
  for (TokenId i = 0; i < static_cast<TokenId>(tokens_.size()); ++i) id_of_[tokens_[i]] = i;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || id >= size()) throw IndexError("token id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

std::optional<TokenId> Vocabulary::id(std::string_view token) const {
  auto it = id_of_.find(std::string(token));
  if (it == id_of_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocabulary::bytes(TokenId id) const {
  if (id < 0 || id >= size()) throw IndexError("token id " + std::to_string(id) + " out of range");
  return bytes_[id];
}

std::optional<int> Vocabulary::merge_rank(TokenId left, TokenId right) const {
  auto it = rank_.find(pair_key(left, right));
  if (it == rank_.end()) return std::nullopt;
  return it->second;
}

void Vocabulary::add_merge(TokenId left, TokenId right) {
  if (is_special(left) || is_special(right)) throw InvalidValue("special tokens cannot be merged");
  const std::string& lt = token(left);
  if (lt.size() >= 4 && lt.compare(lt.size() - 4, 4, kWordFinalMarker) == 0) {
    throw InvalidValue("word-final symbol cannot be the left side of a merge");
  }
  const TokenId merged = size();
  rank_[pair_key(left, right)] = static_cast<int>(merges_.size());
  merges_.emplace_back(left, right);
  tokens_.push_back(lt + token(right));
  bytes_.push_back(bytes_[left] + bytes_[right]);
  id_of_.emplace(tokens_.back(), merged);
}

std::string Vocabulary::to_json() const {
  nlohmann::json j;
  j["version"] = 1;
  j["specials"] = std::vector<std::string>(tokens_.begin(), tokens_.begin() + kNumSpecials);
  j["tokens"] = tokens_;
  auto merges = nlohmann::json::array();
  for (auto [l, r] : merges_) merges.push_back({tokens_[l], tokens_[r]});
  j["merges"] = std::move(merges);
  return j.dump(1);
}

Vocabulary Vocabulary::from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("vocabulary: ") + e.what());
  }
  if (j.value("version", 0) != 1) throw DataError("vocabulary: unsupported version");
  Vocabulary v;
  const auto specials = j.at("specials").get<std::vector<std::string>>();
  if (specials.size() != static_cast<std::size_t>(kNumSpecials) ||
      !std::equal(specials.begin(), specials.end(), v.tokens_.begin())) {
    throw DataError("vocabulary: special-token block does not match this build");
  }
  for (const auto& m : j.at("merges")) {
    const auto l = v.id(m.at(0).get<std::string>());
    const auto r = v.id(m.at(1).get<std::string>());
    if (!l || !r) throw DataError("vocabulary: merge refers to unknown token");
    v.add_merge(*l, *r);
  }
  const auto tokens = j.at("tokens").get<std::vector<std::string>>();
  if (tokens != v.tokens_) throw DataError("vocabulary: token list inconsistent with merges");
  return v;
}

void Vocabulary::save(const std::string& path) const { write_file_atomic(path, to_json()); }

Vocabulary Vocabulary::load(const std::string& path) { return from_json(read_file(path)); }

std::string Vocabulary::hash() const { return hex64(fnv1a64(to_json())); }

std::vector<Piece> split_pieces(std::string_view text) {
  std::vector<Piece> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto cls = classify(static_cast<unsigned char>(text[i]));
    std::size_t j = i + 1;
    if (cls != CharClass::kPunct) {
      while (j < text.size() && classify(static_cast<unsigned char>(text[j])) == cls) ++j;
    }
    Piece p{std::string(text.substr(i, j - i)), false};
    if (cls != CharClass::kSpace && j < text.size() && text[j] == ' ' &&
        (j + 1 == text.size() || classify(static_cast<unsigned char>(text[j + 1])) != CharClass::kSpace)) {
      p.word_final = true;
      ++j;
    }
    out.push_back(std::move(p));
    i = j;
  }
  return out;
}

std::vector<TokenId> base_symbols(const Piece& piece) {
  std::vector<TokenId> s;
  s.reserve(piece.text.size());
  for (unsigned char c : piece.text) s.push_back(Vocabulary::kNumSpecials + c);
  if (piece.word_final && !s.empty()) s.back() += 256;
  return s;
}

Vocabulary train_bpe(std::span<const std::string> corpus, int target_size) {
  if (target_size < Vocabulary::kMinSize) {
    throw ConfigError("vocabulary size " + std::to_string(target_size) + " is below the minimum of " +
                      std::to_string(Vocabulary::kMinSize) + " (" +
                      std::to_string(Vocabulary::kNumSpecials) + " specials + " +
                      std::to_string(Vocabulary::kNumBase) + " base symbols)");
  }
  if (corpus.empty()) throw DataError("train_bpe: empty corpus");

  // Unique pieces in order of first appearance, with frequencies.
  std::vector<std::vector<TokenId>> words;
  std::vector<std::int64_t> freq;
  {
    std::map<std::pair<std::string, bool>, std::size_t> index;
    for (const auto& text : corpus) {
      for (auto& p : split_pieces(text)) {
        auto [it, inserted] = index.try_emplace({p.text, p.word_final}, words.size());
        if (inserted) {
          words.push_back(base_symbols(p));
          freq.push_back(0);
        }
        ++freq[it->second];
      }
    }
  }

  std::unordered_map<std::uint64_t, std::int64_t> counts;
  std::unordered_map<std::uint64_t, std::set<std::size_t>> where;
  auto add_word = [&](std::size_t w, int sign) {
    for_each_pair(words[w], [&](TokenId a, TokenId b, std::size_t) {
      const auto key = pair_key(a, b);
      counts[key] += sign * freq[w];
      if (sign > 0) where[key].insert(w);
    });
    if (sign < 0) {
      for (std::size_t i = 0; i + 1 < words[w].size(); ++i) {
        auto it = where.find(pair_key(words[w][i], words[w][i + 1]));
        if (it != where.end()) it->second.erase(w);
      }
    }
  };
  for (std::size_t w = 0; w < words.size(); ++w) add_word(w, +1);

  // Corpus position of a pair's first occurrence: (first word, offset).
  auto first_occurrence = [&](std::uint64_t key) {
    const auto& ws = where.at(key);
    for (std::size_t w : ws) {
      std::size_t pos = SIZE_MAX;
      for_each_pair(words[w], [&](TokenId a, TokenId b, std::size_t i) {
        if (pos == SIZE_MAX && pair_key(a, b) == key) pos = i;
      });
      if (pos != SIZE_MAX) return std::make_pair(w, pos);
    }
    return std::make_pair(SIZE_MAX, SIZE_MAX);
  };

  Vocabulary vocab;
  while (vocab.size() < target_size) {
    std::int64_t best = 1;
    std::vector<std::uint64_t> tied;
    for (const auto& [key, c] : counts) {
      if (c > best) {
        best = c;
        tied.assign(1, key);
      } else if (c == best && best >= 2) {
        tied.push_back(key);
      }
    }
    if (tied.empty()) break;
    std::uint64_t chosen = tied.front();
    if (tied.size() > 1) {
      auto best_pos = first_occurrence(chosen);
      for (std::size_t i = 1; i < tied.size(); ++i) {
        auto pos = first_occurrence(tied[i]);
        if (pos < best_pos) {
          best_pos = pos;
          chosen = tied[i];
        }
      }
    }
    const auto left = static_cast<TokenId>(chosen >> 32);
    const auto right = static_cast<TokenId>(chosen & 0xffffffffu);
    const TokenId merged = vocab.size();
    vocab.add_merge(left, right);

    const std::vector<std::size_t> affected(where[chosen].begin(), where[chosen].end());
    for (std::size_t w : affected) {
      add_word(w, -1);
      apply_merge(words[w], left, right, merged);
      add_word(w, +1);
    }
    for (auto it = counts.begin(); it != counts.end();) {
      it = it->second == 0 ? counts.erase(it) : std::next(it);
    }
  }
  return vocab;
}

std::vector<TokenId> encode(std::string_view text, const Vocabulary& vocab) {
  std::vector<TokenId> out;
  for (const auto& piece : split_pieces(text)) {
    std::vector<TokenId> s = base_symbols(piece);
    // Apply the lowest-ranked applicable merge until none applies; this is
    // equivalent to replaying the merge list in order.
    while (s.size() > 1) {
      int best_rank = INT32_MAX;
      for (std::size_t i = 0; i + 1 < s.size(); ++i) {
        if (auto r = vocab.merge_rank(s[i], s[i + 1]); r && *r < best_rank) best_rank = *r;
      }
      if (best_rank == INT32_MAX) break;
      const auto [l, r] = vocab.merges()[best_rank];
      apply_merge(s, l, r, Vocabulary::kMinSize + best_rank);
    }
    out.insert(out.end(), s.begin(), s.end());
  }
  return out;
}

std::string decode(std::span<const TokenId> ids, const Vocabulary& vocab, bool show_specials) {
  std::string out;
  for (TokenId id : ids) {
    if (id < 0 || id >= vocab.size()) {
      throw IndexError("decode: token id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(vocab.size()));
    }
    if (Vocabulary::is_special(id)) {
      if (show_specials) out += vocab.token(id);
    } else {
      out += vocab.bytes(id);
    }
  }
  return out;
}

std::string to_valid_utf8(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    const auto b = static_cast<unsigned char>(s[i]);
    std::size_t len = 0;
    unsigned lo = 0x80, hi = 0xBF;  // bounds for the second byte
    if (b < 0x80) len = 1;
    else if (b >= 0xC2 && b <= 0xDF) len = 2;
    else if (b >= 0xE0 && b <= 0xEF) {
      len = 3;
      if (b == 0xE0) lo = 0xA0;
      if (b == 0xED) hi = 0x9F;
    } else if (b >= 0xF0 && b <= 0xF4) {
      len = 4;
      if (b == 0xF0) lo = 0x90;
      if (b == 0xF4) hi = 0x8F;
    }
    std::size_t ok = len == 0 ? 0 : 1;
    while (ok > 0 && ok < len && i + ok < s.size()) {
      const auto c = static_cast<unsigned char>(s[i + ok]);
      if (c < (ok == 1 ? lo : 0x80) || c > (ok == 1 ? hi : 0xBF)) break;
      ++ok;
    }
    if (len > 0 && ok == len) {
      out.append(s.substr(i, len));
      i += len;
    } else {
      out += "\xEF\xBF\xBD";
      i += ok == 0 ? 1 : ok;
    }
  }
  return out;
}

}  // namespace empt
