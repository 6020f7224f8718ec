#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

namespace empt {

// Closed label sets of the DailyDialog annotation scheme. The numeric value
// of each enumerator is its row in the corresponding embedding table; the
// extra "neutral" row (index == count) marks positions that belong to no
// utterance (topic slot, bos, cls).

enum class Emotion : int {
  kNoEmotion = 0,
  kAnger,
  kDisgust,
  kFear,
  kHappiness,
  kSadness,
  kSurprise,
};
inline constexpr int kNumEmotions = 7;

enum class Act : int { kInform = 0, kQuestion, kDirective, kCommissive };
inline constexpr int kNumActs = 4;

enum class Topic : int {
  kOrdinaryLife = 0,
  kSchoolLife,
  kCultureAndEducation,
  kAttitudeAndEmotion,
  kRelationship,
  kTourism,
  kHealth,
  kWork,
  kPolitics,
  kFinance,
};
inline constexpr int kNumTopics = 10;

inline constexpr int kNeutralEmotionRow = kNumEmotions;
inline constexpr int kNeutralActRow = kNumActs;

inline constexpr std::array<std::string_view, kNumEmotions> kEmotionNames = {
    "no_emotion", "anger", "disgust", "fear", "happiness", "sadness", "surprise"};
inline constexpr std::array<std::string_view, kNumActs> kActNames = {
    "inform", "question", "directive", "commissive"};
inline constexpr std::array<std::string_view, kNumTopics> kTopicNames = {
    "ordinary_life", "school_life", "culture_and_education",
    "attitude_and_emotion", "relationship", "tourism",
    "health", "work", "politics", "finance"};

inline std::string_view name_of(Emotion e) { return kEmotionNames[static_cast<int>(e)]; }
inline std::string_view name_of(Act a) { return kActNames[static_cast<int>(a)]; }
inline std::string_view name_of(Topic t) { return kTopicNames[static_cast<int>(t)]; }

std::optional<Emotion> parse_emotion(std::string_view s);
std::optional<Act> parse_act(std::string_view s);
std::optional<Topic> parse_topic(std::string_view s);

// DailyDialog digit codes: emotion 0..6, act 1..4, topic 1..10.
std::optional<Emotion> emotion_from_digit(int d);
std::optional<Act> act_from_digit(int d);
std::optional<Topic> topic_from_digit(int d);

}  // namespace empt
