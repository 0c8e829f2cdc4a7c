// SPDX-License-Identifier: Apache-2.0
#include "spectrafuse/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include "spectrafuse/errors.hpp"

namespace spectrafuse {

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {}

const Vocabulary& Vocabulary::standard() {
  static const Vocabulary vocab({
      "<pad>", "<bos>", "<eos>", "<unk>", "yes",   "no",     "obj",    "bg",
      "is",    "there", "a",     "an",    "any",   "person-like", "warm", "object",
      "objects", "light", "source", "sources", "how", "many", "are", "in",
      "the",   "scene", "?",     "zero",  "one",   "two",    "three",  "cold",
      "dark",  "bright", "body", "glows", "at",    "night",  "lamp",   "shines",
      "empty", "room",  "heat",  "camera", "sees", "through", "smoke", "and",
      "of",    "from",  "thermal", "image", "visible", "shows", "people", "street",
      "car",   "engine", "still", "hot",  "after", "sunset", "quiet", "road",
  });
  return vocab;
}

TokenId Vocabulary::id(std::string_view word) const {
  const auto it = std::find(words_.begin(), words_.end(), word);
  if (it == words_.end()) throw ContractError("vocabulary: unknown word '" + std::string(word) + "'");
  return static_cast<TokenId>(it - words_.begin());
}

bool Vocabulary::contains(std::string_view word) const {
  return std::find(words_.begin(), words_.end(), word) != words_.end();
}

const std::string& Vocabulary::word(TokenId id) const {
  if (id >= words_.size()) throw ContractError("vocabulary: token id " + std::to_string(id) + " out of range");
  return words_[id];
}

std::vector<TokenId> Vocabulary::encode(std::string_view text) const {
  std::string lowered(text);
  std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  std::istringstream in(lowered);
  std::vector<TokenId> ids;
  std::string w;
  while (in >> w) {
    const bool question = w.size() > 1 && w.back() == '?';
    if (question) w.pop_back();
    ids.push_back(id(w));
    if (question) ids.push_back(id("?"));
  }
  return ids;
}

std::string Vocabulary::decode(const std::vector<TokenId>& ids) const {
  std::string out;
  for (TokenId t : ids) {
    if (!out.empty()) out += ' ';
    out += word(t);
  }
  return out;
}

std::string question_text(QuestionKind kind) {
  switch (kind) {
    case QuestionKind::warm:
      return "is there a person-like warm object?";
    case QuestionKind::light:
      return "is there a light source?";
    case QuestionKind::count:
      return "how many warm objects are in the scene?";
  }
  throw ContractError("unknown question kind");
}

QuestionKind question_kind(std::string_view text) {
  for (auto k : {QuestionKind::warm, QuestionKind::light, QuestionKind::count})
    if (question_text(k) == text) return k;
  throw ContractError("not a question template: '" + std::string(text) + "'");
}

const std::vector<std::string>& memorized_sentences() {
  static const std::vector<std::string> s{
      "the thermal camera sees a warm body at night",
  };
  return s;
}

}  // namespace spectrafuse
