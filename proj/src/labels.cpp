#include "empt/labels.hpp"

#include <algorithm>
#include <cctype>

namespace empt {
namespace {

std::string normalize(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    if (c == '-' || c == ' ' || c == '&') {
      if (!out.empty() && out.back() != '_') out.push_back('_');
    } else {
      out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  return out;
}

template <class E, std::size_t N>
std::optional<E> lookup(const std::array<std::string_view, N>& names, std::string_view s) {
  const std::string key = normalize(s);
  auto it = std::find(names.begin(), names.end(), key);
  if (it == names.end()) return std::nullopt;
  return static_cast<E>(it - names.begin());
}

}  // namespace

std::optional<Emotion> parse_emotion(std::string_view s) {
  return lookup<Emotion>(kEmotionNames, s);
}
std::optional<Act> parse_act(std::string_view s) { return lookup<Act>(kActNames, s); }
std::optional<Topic> parse_topic(std::string_view s) { return lookup<Topic>(kTopicNames, s); }

std::optional<Emotion> emotion_from_digit(int d) {
  if (d < 0 || d >= kNumEmotions) return std::nullopt;
  return static_cast<Emotion>(d);
}
std::optional<Act> act_from_digit(int d) {
  if (d < 1 || d > kNumActs) return std::nullopt;
  return static_cast<Act>(d - 1);
}
std::optional<Topic> topic_from_digit(int d) {
  if (d < 1 || d > kNumTopics) return std::nullopt;
  return static_cast<Topic>(d - 1);
}

}  // namespace empt
