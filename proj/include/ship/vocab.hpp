#pragma once

#include <algorithm>
#include <string>
#include <unordered_map>
#include <vector>

#include "ship/corpus.hpp"

namespace ship {

// One token table shared by all three networks. Output heads cover subsets:
// the task head predicts data symbols, the decoder head instruction tokens.
class Vocab {
 public:
  explicit Vocab(int alphabet_size = 16) : alphabet_size_(alphabet_size) {
    for (const char* s : {"<bos>", "<eos>", "<sep>", "<x>", "<y>", "=", ";", "->"}) add(s);
    for (int i = 0; i < alphabet_size; ++i) add(std::string(1, corpus::letter(i)));
    for (int i = 0; i < alphabet_size; ++i) add(std::string(1, corpus::upper_letter(i)));
    const int max_num = std::max(alphabet_size - 1, corpus::kMaxInputLen - 1);
    for (int n = 1; n <= max_num; ++n) add(std::to_string(n));
    for (const auto& w : corpus::instruction_words()) add(w);

    for (int i = 0; i < alphabet_size; ++i) task_out_.push_back(id(std::string(1, corpus::letter(i))));
    for (int i = 0; i < alphabet_size; ++i) task_out_.push_back(id(std::string(1, corpus::upper_letter(i))));
    task_out_.push_back(eos());
    for (int i = 0; i < alphabet_size; ++i) instr_out_.push_back(id(std::string(1, corpus::letter(i))));
    for (int n = 1; n <= max_num; ++n) instr_out_.push_back(id(std::to_string(n)));
    for (const auto& w : corpus::instruction_words()) instr_out_.push_back(id(w));
    instr_out_.push_back(eos());
    task_class_.assign(tokens_.size(), -1);
    instr_class_.assign(tokens_.size(), -1);
    for (std::size_t c = 0; c < task_out_.size(); ++c) task_class_[static_cast<std::size_t>(task_out_[c])] = static_cast<int>(c);
    for (std::size_t c = 0; c < instr_out_.size(); ++c)
      instr_class_[static_cast<std::size_t>(instr_out_[c])] = static_cast<int>(c);
  }

  int alphabet_size() const { return alphabet_size_; }
  std::size_t size() const { return tokens_.size(); }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }

  int id(const std::string& tok) const {
    auto it = index_.find(tok);
    if (it == index_.end()) throw Error("out-of-vocabulary token '" + tok + "'");
    return it->second;
  }
  bool contains(const std::string& tok) const { return index_.count(tok) > 0; }
  std::vector<int> ids(const corpus::TokenList& toks) const {
    std::vector<int> out;
    for (const auto& t : toks) out.push_back(id(t));
    return out;
  }
  std::vector<int> ids(const corpus::Sequence& seq) const {
    std::vector<int> out;
    for (char c : seq) out.push_back(id(std::string(1, c)));
    return out;
  }

  int bos() const { return 0; }
  int eos() const { return 1; }
  int sep() const { return 2; }
  int x_marker() const { return 3; }
  int y_marker() const { return 4; }
  int equals() const { return 5; }
  int semicolon() const { return 6; }
  int arrow() const { return 7; }

  // Output-class tables: class index -> token id, and token id -> class (-1 if absent).
  const std::vector<int>& task_outputs() const { return task_out_; }
  const std::vector<int>& instruction_outputs() const { return instr_out_; }
  int task_class(int token) const { return task_class_.at(static_cast<std::size_t>(token)); }
  int instruction_class(int token) const { return instr_class_.at(static_cast<std::size_t>(token)); }

 private:
  void add(const std::string& t) {
    if (index_.emplace(t, static_cast<int>(tokens_.size())).second) tokens_.push_back(t);
  }

  int alphabet_size_;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  std::vector<int> task_out_, instr_out_, task_class_, instr_class_;
};

}  // namespace ship
