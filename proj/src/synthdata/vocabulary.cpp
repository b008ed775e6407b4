#include "dmf/synthdata/vocabulary.hpp"

#include <algorithm>
#include <optional>
#include <stdexcept>

namespace dmf::synth {

const std::vector<AttributeSlot>& foreground_slots() {
  static const std::vector<AttributeSlot> slots = {
      {"gender", {"male", "female", "unspecified"}},
      {"age", {"child", "young", "adult", "elderly"}},
      {"skin", {"light", "tan", "brown", "dark"}},
      {"hair-color", {"black", "brown", "blonde", "gray", "red"}},
      {"hair-length", {"short", "medium", "long"}},
      {"hat", {"none", "cap", "beanie", "helmet"}},
      {"upper-color", {"red", "green", "blue", "yellow", "white", "black", "purple", "orange"}},
      {"upper-type", {"tshirt", "shirt", "jacket"}},
      {"sleeve", {"short", "long", "none"}},
      {"upper-pattern", {"plain", "striped", "checked", "logo"}},
      {"lower-color", {"black", "blue", "gray", "brown", "white", "green", "red", "beige"}},
      {"lower-type", {"pants", "shorts", "skirt"}},
      {"shoes", {"black", "white", "brown", "red", "blue"}},
      {"bag", {"none", "handbag", "backpack", "shoulder"}},
  };
  return slots;
}

const std::vector<AttributeSlot>& background_slots() {
  static const std::vector<AttributeSlot> slots = {
      {"viewpoint", {"front", "back", "left", "right"}},
      {"weather", {"sunny", "cloudy", "rainy", "foggy"}},
      {"illumination", {"bright", "dim", "warm", "cool"}},
      {"scene", {"street", "park", "mall", "station", "campus", "plaza"}},
  };
  return slots;
}

Vocabulary::Vocabulary() {
  words_.emplace_back(kPadWord);
  for (const auto& s : foreground_slots())
    for (const auto& c : s.categories) words_.push_back(s.name + ":" + c);
  for (const auto& s : background_slots())
    for (const auto& c : s.categories) words_.push_back(s.name + ":" + c);
}

const Vocabulary& Vocabulary::standard() {
  static const Vocabulary v;
  return v;
}

std::size_t Vocabulary::id(const std::string& word) const {
  auto it = std::find(words_.begin(), words_.end(), word);
  if (it == words_.end()) throw std::out_of_range("vocabulary: unknown word '" + word + "'");
  return static_cast<std::size_t>(it - words_.begin());
}

bool Vocabulary::contains(const std::string& word) const {
  return std::find(words_.begin(), words_.end(), word) != words_.end();
}

std::string Vocabulary::foreground_word(std::size_t slot, std::size_t category) const {
  const auto& s = foreground_slots().at(slot);
  return s.name + ":" + s.categories.at(category);
}

std::string Vocabulary::background_word(std::size_t slot, std::size_t category) const {
  const auto& s = background_slots().at(slot);
  return s.name + ":" + s.categories.at(category);
}

Vocabulary::SlotValue Vocabulary::decode(const std::string& word) const {
  const auto colon = word.find(':');
  if (colon == std::string::npos) throw std::out_of_range("vocabulary: '" + word + "' is not an attribute word");
  const std::string name = word.substr(0, colon);
  const std::string value = word.substr(colon + 1);
  auto search = [&](const std::vector<AttributeSlot>& slots, bool fg) -> std::optional<SlotValue> {
    for (std::size_t s = 0; s < slots.size(); ++s) {
      if (slots[s].name != name) continue;
      const auto& cats = slots[s].categories;
      auto it = std::find(cats.begin(), cats.end(), value);
      if (it != cats.end()) return SlotValue{fg, s, static_cast<std::size_t>(it - cats.begin())};
    }
    return std::nullopt;
  };
  if (auto v = search(foreground_slots(), true)) return *v;
  if (auto v = search(background_slots(), false)) return *v;
  throw std::out_of_range("vocabulary: unknown word '" + word + "'");
}

nlohmann::json Vocabulary::to_json() const { return nlohmann::json(words_); }

}  // namespace dmf::synth
