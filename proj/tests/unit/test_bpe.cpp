#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "doctest.h"
#include "empt/bpe.hpp"
#include "empt/error.hpp"
#include "empt/rng.hpp"
#include "../support/bpe_oracle.hpp"

using namespace empt;
using oracle::naive_merges;

namespace {

std::vector<std::pair<std::string, std::string>> merges_as_bytes(const Vocabulary& v) {
  std::vector<std::pair<std::string, std::string>> out;
  for (auto [l, r] : v.merges()) out.emplace_back(v.bytes(l), v.bytes(r));
  return out;
}

std::string random_text(Rng& rng, std::size_t max_len, bool arbitrary_bytes) {
  static const std::vector<std::string> alphabet = {
      "a", "b", "c", "l", "o", "w", " ", " ", " ", "  ", "\n", "\t", ".", ",", "?", "'",
      "\xc3\xa9", "\xe2\x82\xac", "\xf0\x9f\x98\x80", "\xe4\xb8\xad", "Z", "0", "9"};
  std::string s;
  const std::size_t len = rng.uniform_index(max_len + 1);
  for (std::size_t i = 0; i < len; ++i) {
    if (arbitrary_bytes && rng.uniform() < 0.2) {
      s.push_back(static_cast<char>(rng.uniform_index(256)));
    } else {
      s += alphabet[rng.uniform_index(alphabet.size())];
    }
  }
  return s;
}

}  // namespace

TEST_CASE("special token block layout") {
  Vocabulary v;
  CHECK(v.size() == Vocabulary::kMinSize);
  CHECK(Vocabulary::kNumSpecials == 28);
  CHECK(v.token(Vocabulary::kPad) == "<pad>");
  CHECK(v.token(Vocabulary::kEos) == "<eos>");
  CHECK(v.token(Vocabulary::emotion_token(Emotion::kHappiness)) == "<emotion:happiness>");
  CHECK(v.token(Vocabulary::act_token(Act::kQuestion)) == "<act:question>");
  CHECK(v.token(Vocabulary::topic_token(Topic::kFinance)) == "<topic:finance>");
  CHECK(v.token(Vocabulary::kNeutral) == "<neutral>");
  CHECK(Vocabulary::speaker_token(0) == Vocabulary::kSpeaker1);
  CHECK(Vocabulary::speaker_token(3) == Vocabulary::kSpeaker2);
  CHECK(v.token(Vocabulary::kNumSpecials + 'a') == "a");
  CHECK(v.token(Vocabulary::kNumSpecials + 256 + 'a') == "a</w>");
}

TEST_CASE("pre-tokenizer splits words, punctuation and whitespace") {
  auto p = split_pieces("Hi, there  you.\n");
  std::vector<std::pair<std::string, bool>> got;
  for (auto& x : p) got.emplace_back(x.text, x.word_final);
  std::vector<std::pair<std::string, bool>> want = {
      {"Hi", false}, {",", true}, {"there", false}, {"  ", false}, {"you", false}, {".", false}, {"\n", false}};
  CHECK(got == want);
  CHECK(split_pieces("").empty());
  auto q = split_pieces("a b");
  REQUIRE(q.size() == 2);
  CHECK(q[0].word_final);
  CHECK_FALSE(q[1].word_final);
}

TEST_CASE("first merges match hand-worked fixtures") {
  std::vector<std::string> corpus = {"low low lowest"};
  auto v = train_bpe(corpus, Vocabulary::kMinSize + 1);
  REQUIRE(v.merges().size() == 1);
  CHECK(v.bytes(v.merges()[0].first) == "l");
  CHECK(v.bytes(v.merges()[0].second) == "o");

  std::vector<std::string> aaaa = {"aaaa"};
  auto w = train_bpe(aaaa, Vocabulary::kMinSize + 10);
  REQUIRE(w.merges().size() == 1);
  CHECK(w.bytes(w.merges()[0].first) == "a");
  CHECK(w.bytes(w.merges()[0].second) == "a");
  CHECK(encode("aaaa", w).size() == 2);
}

TEST_CASE("merge list (l,o),(lo,w) encodes low as one token") {
  Vocabulary v;
  const TokenId l = *v.id("l"), o = *v.id("o"), w = *v.id("w");
  v.add_merge(l, o);
  const TokenId lo = *v.id("lo");
  v.add_merge(lo, w);
  const auto ids = encode("low", v);
  REQUIRE(ids.size() == 1);
  CHECK(v.token(ids[0]) == "low");
  CHECK(decode(ids, v) == "low");
  // word-final "w" is a different symbol, so "low " stops at lo + w</w>
  CHECK(encode("low ", v).size() == 2);
}

TEST_CASE("training agrees with the brute-force trainer") {
  Rng rng(2024);
  for (int trial = 0; trial < 25; ++trial) {
    std::vector<std::string> corpus;
    const std::size_t lines = 1 + rng.uniform_index(8);
    for (std::size_t i = 0; i < lines; ++i) corpus.push_back(random_text(rng, 30, false));
    const int budget = 1 + static_cast<int>(rng.uniform_index(40));
    auto v = train_bpe(corpus, Vocabulary::kMinSize + budget);
    CHECK(merges_as_bytes(v) == naive_merges(corpus, budget));
  }
}

TEST_CASE("vocabulary size bounds") {
  std::vector<std::string> corpus = {"the cat sat on the mat the end"};
  auto v = train_bpe(corpus, Vocabulary::kMinSize);
  CHECK(v.merges().empty());
  CHECK(v.size() == Vocabulary::kMinSize);
  CHECK_THROWS_AS(train_bpe(corpus, Vocabulary::kMinSize - 1), ConfigError);
  auto big = train_bpe(corpus, 100000);
  CHECK(big.size() < 100000);
}

TEST_CASE("training is deterministic and round-trips through json") {
  std::vector<std::string> corpus = {"how are you today?", "I am fine, thank you.", "are you sure?"};
  auto a = train_bpe(corpus, 600);
  auto b = train_bpe(corpus, 600);
  CHECK(a.to_json() == b.to_json());
  CHECK(a.hash() == b.hash());
  auto c = Vocabulary::from_json(a.to_json());
  CHECK(c.to_json() == a.to_json());
  CHECK(encode("are you fine?", c) == encode("are you fine?", a));
  CHECK_THROWS_AS(Vocabulary::from_json("{nope"), DataError);
}

TEST_CASE("merges never cross a whitespace boundary") {
  std::vector<std::string> corpus(20, "ab ab ab\tab\nab  ab");
  auto v = train_bpe(corpus, 700);
  for (TokenId id = Vocabulary::kMinSize; id < v.size(); ++id) {
    const std::string& b = v.bytes(id);
    // A space may only appear as the final byte of a word-final symbol, or
    // inside a pure whitespace token.
    const bool all_space = std::all_of(b.begin(), b.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); });
    if (!all_space) {
      for (std::size_t i = 0; i + 1 < b.size(); ++i) CHECK_FALSE(std::isspace(static_cast<unsigned char>(b[i])));
    }
  }
}

TEST_CASE("encode/decode round trip on random strings") {
  Rng rng(99);
  std::vector<std::string> corpus;
  for (int i = 0; i < 200; ++i) corpus.push_back(random_text(rng, 40, false));
  auto v = train_bpe(corpus, 800);
  for (int trial = 0; trial < 2000; ++trial) {
    auto s = random_text(rng, 60, trial % 2 == 1);
    auto ids = encode(s, v);
    for (TokenId id : ids) CHECK_FALSE(Vocabulary::is_special(id));
    CHECK(decode(ids, v) == s);
  }
}

TEST_CASE("decode handles specials and rejects bad ids") {
  Vocabulary v;
  std::vector<TokenId> ids = {Vocabulary::kBos, Vocabulary::kNumSpecials + 'h', Vocabulary::kNumSpecials + 'i',
                              Vocabulary::kEos};
  CHECK(decode(ids, v) == "hi");
  CHECK(decode(ids, v, true) == "<bos>hi<eos>");
  std::vector<TokenId> bad = {v.size()};
  CHECK_THROWS_AS(decode(bad, v), IndexError);
  std::vector<TokenId> neg = {-1};
  CHECK_THROWS_AS(decode(neg, v), IndexError);
}

TEST_CASE("invalid utf-8 is replaced, valid text passes through") {
  const std::string r = "\xEF\xBF\xBD";
  CHECK(to_valid_utf8("caf\xc3\xa9 \xe2\x82\xac \xf0\x9f\x98\x80") == "caf\xc3\xa9 \xe2\x82\xac \xf0\x9f\x98\x80");
  CHECK(to_valid_utf8("a\xff" "b") == "a" + r + "b");
  CHECK(to_valid_utf8("\xe2\x82") == r);
  CHECK(to_valid_utf8("\xc0\xaf") == r + r);
  CHECK(to_valid_utf8("\xed\xa0\x80") == r + r + r);
  CHECK(to_valid_utf8("\xf4\x90\x80\x80") == r + r + r + r);
  CHECK(to_valid_utf8("") == "");
}
