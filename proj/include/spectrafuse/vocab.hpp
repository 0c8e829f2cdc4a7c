// SPDX-License-Identifier: Apache-2.0
//
// Fixed word-level vocabulary shared by the toy decoder, the question
// templates and the dataset files.
#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace spectrafuse {

using TokenId = std::size_t;

class Vocabulary {
 public:
  static const Vocabulary& standard();

  std::size_t size() const { return words_.size(); }
  TokenId id(std::string_view word) const;  // ContractError if unknown
  bool contains(std::string_view word) const;
  const std::string& word(TokenId id) const;

  /// Lowercases, splits on whitespace and detaches a trailing '?'.
  std::vector<TokenId> encode(std::string_view text) const;
  std::string decode(const std::vector<TokenId>& ids) const;

  TokenId pad() const { return id("<pad>"); }
  TokenId bos() const { return id("<bos>"); }
  TokenId eos() const { return id("<eos>"); }
  TokenId yes() const { return id("yes"); }
  TokenId no() const { return id("no"); }
  TokenId object() const { return id("obj"); }

 private:
  explicit Vocabulary(std::vector<std::string> words);
  std::vector<std::string> words_;
};

enum class QuestionKind { warm, light, count };

/// Canonical template text for a question kind.
std::string question_text(QuestionKind kind);
QuestionKind question_kind(std::string_view text);  // ContractError if not a template

/// Sentences the decoder memorises during its text pretraining.
const std::vector<std::string>& memorized_sentences();

}  // namespace spectrafuse
