#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace dmf::synth {

inline constexpr std::size_t kForegroundSlots = 14;
inline constexpr std::size_t kBackgroundSlots = 4;
inline constexpr std::size_t kCaptionLength = kForegroundSlots + kBackgroundSlots;
inline constexpr int kVocabularyVersion = 1;
inline constexpr std::string_view kPadWord = "<pad>";

struct AttributeSlot {
  std::string name;
  std::vector<std::string> categories;
};

/// Fixed attribute taxonomy. Slot order is the caption word order.
const std::vector<AttributeSlot>& foreground_slots();
const std::vector<AttributeSlot>& background_slots();

/// Closed word list. Token id 0 is the pad word; every (slot, category)
/// pair owns exactly one word of the form "<slot>:<category>".
class Vocabulary {
 public:
  static const Vocabulary& standard();

  std::size_t size() const { return words_.size(); }
  const std::string& word(std::size_t id) const { return words_.at(id); }
  /// Throws std::out_of_range for unknown words.
  std::size_t id(const std::string& word) const;
  bool contains(const std::string& word) const;

  std::string foreground_word(std::size_t slot, std::size_t category) const;
  std::string background_word(std::size_t slot, std::size_t category) const;

  /// Inverse of *_word: (is_foreground, slot, category).
  struct SlotValue {
    bool foreground;
    std::size_t slot;
    std::size_t category;
  };
  SlotValue decode(const std::string& word) const;

  /// JSON array of words; array index is the token id.
  nlohmann::json to_json() const;

 private:
  Vocabulary();
  std::vector<std::string> words_;
};

}  // namespace dmf::synth
