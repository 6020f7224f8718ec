#pragma once

// Standalone corpus BLEU-4 written directly from the metric's definition:
// n-grams are joined into strings, counts live in flat vectors and the
// geometric mean is taken as a product. Shares no code with the library.

#include <cmath>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace oracle {

inline std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

inline std::vector<std::string> grams(const std::vector<std::string>& w, std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i + n <= w.size(); ++i) {
    std::string g;
    for (std::size_t k = 0; k < n; ++k) g += w[i + k] + "\x1f";
    out.push_back(g);
  }
  return out;
}

inline long count_in(const std::vector<std::string>& v, const std::string& g) {
  long c = 0;
  for (const auto& x : v) c += x == g;
  return c;
}

// hyps/refs are whitespace-tokenized sentences
inline double corpus_bleu(const std::vector<std::string>& hyps, const std::vector<std::string>& refs) {
  double match[5] = {0, 0, 0, 0, 0}, total[5] = {0, 0, 0, 0, 0};
  double c = 0, r = 0;
  for (std::size_t k = 0; k < hyps.size(); ++k) {
    const auto h = split_ws(hyps[k]);
    const auto ref = split_ws(refs[k]);
    c += static_cast<double>(h.size());
    r += static_cast<double>(ref.size());
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto hg = grams(h, n);
      const auto rg = grams(ref, n);
      std::vector<std::string> seen;
      for (const auto& g : hg) {
        bool dup = false;
        for (const auto& s : seen) dup = dup || s == g;
        if (dup) continue;
        seen.push_back(g);
        const long hc = count_in(hg, g), rc = count_in(rg, g);
        match[n] += static_cast<double>(hc < rc ? hc : rc);
      }
      total[n] += static_cast<double>(hg.size());
    }
  }
  if (c == 0 || match[1] == 0) return 0.0;
  double prod = match[1] / total[1];
  for (int n = 2; n <= 4; ++n) prod *= match[n] == 0 ? 1.0 / (total[n] + 1.0) : match[n] / total[n];
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::pow(prod, 0.25);
}

inline const std::vector<std::pair<std::string, std::string>>& hand_pairs() {
  static const std::vector<std::pair<std::string, std::string>> p = {
      {"the the the", "the cat sat"},
      {"the cat sat on the mat", "the cat sat on the mat"},
      {"the cat is on the mat", "the cat sat on the mat"},
      {"a dog", "the cat sat on the mat"},
      {"congratulations !", "really ? congratulations !"},
      {"thank you", "thank you paul ."},
      {"you look so happy", "you look so happy , any good news ?"},
      {"yes , i won", "yes , i 've won the math contest"},
      {"i want to take him on my knee", "i really want to take him on my knee ."},
      {"he keeps pulling the tail", "he keeps pulling the cat 's tail ."},
      {"what time is it", "do you know what time it is ?"},
      {"no", "yes"},
      {"the weather is nice today", "it is a nice day today"},
      {"let us go to the park", "let 's go to the park after lunch"},
      {"i am sorry to hear that", "i 'm so sorry to hear that"},
      {"that sounds great great great", "that sounds great"},
      {"could you help me with this", "could you help me carry this box"},
      {"we should leave now", "we should leave now or we will be late"},
      {"how much is it", "how much does it cost ?"},
      {"see you tomorrow then", "see you tomorrow"},
  };
  return p;
}

}  // namespace oracle
