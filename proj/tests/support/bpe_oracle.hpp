#pragma once

#include <algorithm>
#include <string>
#include <utility>
#include <vector>

#include "empt/bpe.hpp"

namespace oracle {

// Brute-force trainer over explicit symbol strings. Every piece occurrence is
// kept separately and all counts are recomputed from scratch after each merge.
// Symbols are their decoded bytes, so a word-final symbol ends in ' '.
inline std::vector<std::pair<std::string, std::string>> naive_merges(const std::vector<std::string>& corpus,
                                                                     int n_merges) {
  std::vector<std::vector<std::string>> words;
  for (const auto& text : corpus) {
    for (const auto& p : empt::split_pieces(text)) {
      std::vector<std::string> w;
      for (char c : p.text) w.emplace_back(1, c);
      if (p.word_final) w.back() += ' ';
      words.push_back(w);
    }
  }
  auto greedy_count = [](const std::vector<std::string>& w, const std::string& a, const std::string& b) {
    int n = 0;
    for (std::size_t i = 0; i + 1 < w.size();) {
      if (w[i] == a && w[i + 1] == b) {
        ++n;
        i += 2;
      } else {
        ++i;
      }
    }
    return n;
  };
  std::vector<std::pair<std::string, std::string>> out;
  for (int m = 0; m < n_merges; ++m) {
    // Candidate pairs in order of first occurrence in the corpus.
    std::vector<std::pair<std::string, std::string>> order;
    for (const auto& w : words) {
      for (std::size_t i = 0; i + 1 < w.size(); ++i) {
        std::pair<std::string, std::string> p{w[i], w[i + 1]};
        if (std::find(order.begin(), order.end(), p) == order.end()) order.push_back(p);
      }
    }
    int best = 1;
    std::pair<std::string, std::string> chosen;
    for (const auto& p : order) {
      int c = 0;
      for (const auto& w : words) c += greedy_count(w, p.first, p.second);
      if (c > best) {
        best = c;
        chosen = p;
      }
    }
    if (best < 2) break;
    // A word-final symbol can never be a left side (it already ends in a space
    // boundary); such pairs cannot occur inside one piece anyway.
    for (auto& w : words) {
      std::vector<std::string> nw;
      for (std::size_t i = 0; i < w.size();) {
        if (i + 1 < w.size() && w[i] == chosen.first && w[i + 1] == chosen.second) {
          nw.push_back(w[i] + w[i + 1]);
          i += 2;
        } else {
          nw.push_back(w[i++]);
        }
      }
      w = std::move(nw);
    }
    out.push_back(chosen);
  }
  return out;
}

}  // namespace oracle
