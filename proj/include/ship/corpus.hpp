#pragma once

// Synthetic instruction-task universe: executable string-transformation
// programs, paraphrase templates that render them as instructions, a parser
// that inverts the rendering, and seeded seen/unseen splits.

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "ship/rng.hpp"
#include "ship/tensor.hpp"

namespace ship::corpus {

enum class Family { reverse, shift, map, duplicate, drop_first, sort, swap_case, take_last };

inline constexpr std::array<Family, 8> kAllFamilies{Family::reverse,   Family::shift,      Family::map,
                                                    Family::duplicate, Family::drop_first, Family::sort,
                                                    Family::swap_case, Family::take_last};

inline const char* family_name(Family f) {
  switch (f) {
    case Family::reverse: return "REVERSE";
    case Family::shift: return "SHIFT";
    case Family::map: return "MAP";
    case Family::duplicate: return "DUPLICATE";
    case Family::drop_first: return "DROP_FIRST";
    case Family::sort: return "SORT";
    case Family::swap_case: return "SWAP_CASE";
    case Family::take_last: return "TAKE_LAST";
  }
  return "?";
}

inline std::optional<Family> family_from_name(std::string_view s) {
  for (Family f : kAllFamilies)
    if (s == family_name(f)) return f;
  return std::nullopt;
}

inline constexpr int kMinInputLen = 3;
inline constexpr int kMaxInputLen = 8;
inline constexpr int kTestPerTask = 5;
inline constexpr int kTemplatesPerFamily = 3;
inline constexpr std::size_t kMinTasks = 20;

// Cipher catalogue: two-letter swaps, or arbitrary non-rotation permutations.
enum class MapKind { transposition, random };

struct CorpusConfig {
  int alphabet_size = 16;
  std::set<Family> families{kAllFamilies.begin(), kAllFamilies.end()};
  int map_count = 33;
  MapKind map_kind = MapKind::transposition;
  std::uint64_t map_seed = 1234;
  int max_instruction_len = 24;
};

// A data sequence: one char per token, lowercase letters for inputs.
using Sequence = std::string;
using TokenList = std::vector<std::string>;

struct TaskProgram {
  Family family = Family::reverse;
  int n = 0;              // SHIFT and TAKE_LAST
  std::vector<int> perm;  // MAP: image of each alphabet index

  bool operator==(const TaskProgram&) const = default;

  std::string canonical() const {
    std::string s = family_name(family);
    if (family == Family::shift || family == Family::take_last) s += "(" + std::to_string(n) + ")";
    if (family == Family::map) {
      s += "(";
      for (int p : perm) s += static_cast<char>('a' + p);
      s += ")";
    }
    return s;
  }

  // Stable 16-hex-digit hash of (family, params).
  std::string task_id() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(canonical())));
    return buf;
  }

  std::vector<int> params() const {
    if (family == Family::map) return perm;
    if (family == Family::shift || family == Family::take_last) return {n};
    return {};
  }
};

struct Instruction {
  TokenList text;
  int template_id = 0;
  std::string task_id;

  bool operator==(const Instruction&) const = default;
  std::string str() const {
    std::string s;
    for (std::size_t i = 0; i < text.size(); ++i) s += (i ? " " : "") + text[i];
    return s;
  }
};

struct Instance {
  Sequence x;
  Sequence y;
  bool operator==(const Instance&) const = default;
};

class CorpusError : public Error {
 public:
  using Error::Error;
};

inline char letter(int i) { return static_cast<char>('a' + i); }
inline char upper_letter(int i) { return static_cast<char>('A' + i); }

inline TokenList split_tokens(std::string_view s) {
  TokenList out;
  std::istringstream is{std::string(s)};
  for (std::string t; is >> t;) out.push_back(t);
  return out;
}

inline std::string join_tokens(const TokenList& t) {
  std::string s;
  for (std::size_t i = 0; i < t.size(); ++i) s += (i ? " " : "") + t[i];
  return s;
}

inline std::string spaced(const Sequence& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ' ';
    out += s[i];
  }
  return out;
}

inline Sequence unspaced(std::string_view s) {
  Sequence out;
  for (const auto& t : split_tokens(s)) {
    if (t.size() != 1) throw CorpusError("sequence token '" + t + "' is not a single symbol");
    out += t[0];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Execution

inline Sequence execute(const TaskProgram& p, const Sequence& x, int alphabet_size) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    const int c = x[i] - 'a';
    if (c < 0 || c >= alphabet_size)
      throw CorpusError("execute: invalid token '" + std::string(1, x[i]) + "' at position " + std::to_string(i));
  }
  const auto idx = [](char c) { return c - 'a'; };
  Sequence y;
  switch (p.family) {
    case Family::reverse: y.assign(x.rbegin(), x.rend()); break;
    case Family::shift:
      for (char c : x) y += letter((idx(c) + p.n) % alphabet_size);
      break;
    case Family::map:
      for (char c : x) y += letter(p.perm[static_cast<std::size_t>(idx(c))]);
      break;
    case Family::duplicate: y = x + x; break;
    case Family::drop_first: y = x.empty() ? x : x.substr(1); break;
    case Family::sort:
      y = x;
      std::sort(y.begin(), y.end());
      break;
    case Family::swap_case:
      for (char c : x) y += upper_letter(idx(c));
      break;
    case Family::take_last: y = x.size() <= static_cast<std::size_t>(p.n) ? x : x.substr(x.size() - p.n); break;
  }
  return y;
}

// ---------------------------------------------------------------------------
// Enumeration

inline bool is_rotation(const std::vector<int>& perm) {
  const int a = static_cast<int>(perm.size());
  for (int s = 0; s < a; ++s) {
    bool all = true;
    for (int i = 0; i < a && all; ++i) all = perm[static_cast<std::size_t>(i)] == (i + s) % a;
    if (all) return true;
  }
  return false;
}

// Seeded catalogue of substitution ciphers. Rotations (which SHIFT already
// covers) and the identity never appear.
inline std::vector<std::vector<int>> map_catalogue(int alphabet_size, int count, std::uint64_t seed,
                                                   MapKind kind = MapKind::transposition) {
  Rng rng(seed);
  std::vector<std::vector<int>> out;
  if (kind == MapKind::transposition) {
    std::vector<std::pair<int, int>> pairs;
    for (int i = 0; i < alphabet_size; ++i)
      for (int j = i + 1; j < alphabet_size; ++j) pairs.emplace_back(i, j);
    if (count > static_cast<int>(pairs.size())) throw CorpusError("map_catalogue: too many ciphers requested");
    rng.shuffle(pairs.begin(), pairs.end());
    for (int c = 0; c < count; ++c) {
      std::vector<int> p(static_cast<std::size_t>(alphabet_size));
      for (int i = 0; i < alphabet_size; ++i) p[static_cast<std::size_t>(i)] = i;
      std::swap(p[static_cast<std::size_t>(pairs[static_cast<std::size_t>(c)].first)],
                p[static_cast<std::size_t>(pairs[static_cast<std::size_t>(c)].second)]);
      out.push_back(std::move(p));
    }
    return out;
  }
  std::set<std::vector<int>> seen;
  while (static_cast<int>(out.size()) < count) {
    std::vector<int> p(static_cast<std::size_t>(alphabet_size));
    for (int i = 0; i < alphabet_size; ++i) p[static_cast<std::size_t>(i)] = i;
    rng.shuffle(p.begin(), p.end());
    if (is_rotation(p) || !seen.insert(p).second) continue;
    out.push_back(std::move(p));
  }
  return out;
}

inline std::vector<TaskProgram> enumerate_tasks(const CorpusConfig& cfg = {}) {
  if (cfg.alphabet_size < 8 || cfg.alphabet_size > 26)
    throw CorpusError("enumerate_tasks: alphabet size must lie in [8, 26], got " + std::to_string(cfg.alphabet_size));
  std::vector<TaskProgram> out;
  auto has = [&](Family f) { return cfg.families.count(f) > 0; };
  if (has(Family::reverse)) out.push_back({Family::reverse, 0, {}});
  if (has(Family::shift))
    for (int n = 1; n < cfg.alphabet_size; ++n) out.push_back({Family::shift, n, {}});
  if (has(Family::map))
    for (auto& p : map_catalogue(cfg.alphabet_size, cfg.map_count, cfg.map_seed, cfg.map_kind)) out.push_back({Family::map, 0, p});
  if (has(Family::duplicate)) out.push_back({Family::duplicate, 0, {}});
  if (has(Family::drop_first)) out.push_back({Family::drop_first, 0, {}});
  if (has(Family::sort)) out.push_back({Family::sort, 0, {}});
  if (has(Family::swap_case)) out.push_back({Family::swap_case, 0, {}});
  if (has(Family::take_last))
    for (int n = 1; n < kMaxInputLen; ++n) out.push_back({Family::take_last, n, {}});
  return out;
}

// ---------------------------------------------------------------------------
// Instruction grammar. "{n}" is a number slot, "{key}" the cipher key (one
// letter per alphabet position).

inline const std::array<std::string_view, kTemplatesPerFamily>& templates(Family f) {
  static const std::map<Family, std::array<std::string_view, kTemplatesPerFamily>> table{
      {Family::reverse, {"reverse the input sequence", "reverse the sequence", "write the letters in backward order"}},
      {Family::shift,
       {"shift each letter by {n}", "shift every letter forward by {n}",
        "replace every letter with the letter {n} places later"}},
      {Family::map,
       {"map the letters using key {key}", "substitute letters with key {key}", "encode each letter with cipher key {key}"}},
      {Family::duplicate, {"repeat the sequence twice", "write the input two times", "duplicate the sequence"}},
      {Family::drop_first,
       {"remove the first letter", "drop the first letter of the input", "delete the leading letter"}},
      {Family::sort,
       {"sort the letters", "sort the letters in alphabetical order", "arrange the input in alphabetical order"}},
      {Family::swap_case,
       {"swap the case of each letter", "change every letter to the opposite case", "invert the case of the letters"}},
      {Family::take_last,
       {"keep the last {n} letters", "take the last {n} letters", "output only the final {n} letters"}},
  };
  return table.at(f);
}

// Words the templates use, plus the neutral phrase used to seed induction.
inline std::vector<std::string> instruction_words() {
  std::vector<std::string> words;
  std::set<std::string> seen;
  auto add = [&](const std::string& w) {
    if (w.front() != '{' && seen.insert(w).second) words.push_back(w);
  };
  for (Family f : kAllFamilies)
    for (auto t : templates(f))
      for (const auto& w : split_tokens(t)) add(w);
  for (const auto& w : split_tokens("do the task")) add(w);
  return words;
}

inline const TokenList& neutral_instruction() {
  static const TokenList t = split_tokens("do the task");
  return t;
}

inline Instruction render_instruction(const TaskProgram& p, int template_id) {
  if (template_id < 0 || template_id >= kTemplatesPerFamily)
    throw CorpusError("render_instruction: unknown template id " + std::to_string(template_id));
  Instruction ins;
  ins.template_id = template_id;
  ins.task_id = p.task_id();
  for (const auto& w : split_tokens(templates(p.family)[static_cast<std::size_t>(template_id)])) {
    if (w == "{n}") {
      ins.text.push_back(std::to_string(p.n));
    } else if (w == "{key}") {
      for (int v : p.perm) ins.text.emplace_back(1, letter(v));
    } else {
      ins.text.push_back(w);
    }
  }
  return ins;
}

struct ParseResult {
  std::optional<TaskProgram> program;
  int template_id = -1;
  std::string failure;  // empty on success

  explicit operator bool() const { return program.has_value(); }
};

inline ParseResult parse_instruction(const TokenList& text, int alphabet_size = 16) {
  for (Family f : kAllFamilies) {
    for (int t = 0; t < kTemplatesPerFamily; ++t) {
      const TokenList pat = split_tokens(templates(f)[static_cast<std::size_t>(t)]);
      const bool keyed = f == Family::map;
      const std::size_t want = keyed ? pat.size() - 1 + static_cast<std::size_t>(alphabet_size) : pat.size();
      if (text.size() != want) continue;
      TaskProgram prog{f, 0, {}};
      bool ok = true;
      std::size_t pos = 0;
      for (const auto& w : pat) {
        if (w == "{key}") {
          std::set<int> used;
          for (int i = 0; i < alphabet_size; ++i) {
            const std::string& tok = text[pos++];
            const int v = tok.size() == 1 ? tok[0] - 'a' : -1;
            if (v < 0 || v >= alphabet_size || !used.insert(v).second) ok = false;
            prog.perm.push_back(v);
          }
        } else if (w == "{n}") {
          const std::string& tok = text[pos++];
          const bool digits = !tok.empty() && tok.size() <= 2 && std::all_of(tok.begin(), tok.end(), ::isdigit);
          prog.n = digits ? std::stoi(tok) : -1;
          const int hi = f == Family::shift ? alphabet_size - 1 : kMaxInputLen - 1;
          if (prog.n < 1 || prog.n > hi) ok = false;
        } else if (text[pos++] != w) {
          ok = false;
        }
        if (!ok) break;
      }
      if (ok) return {prog, t, {}};
    }
  }
  return {std::nullopt, -1, "no template matches \"" + join_tokens(text) + "\""};
}

// ---------------------------------------------------------------------------
// Splits

enum class SplitTag { seen, unseen };
inline const char* split_name(SplitTag s) { return s == SplitTag::seen ? "seen" : "unseen"; }

struct Example {
  Instance instance;
  Instruction instruction;
  bool operator==(const Example&) const = default;
};

struct TaskEntry {
  TaskProgram program;
  SplitTag split = SplitTag::seen;
  std::vector<Example> train;  // empty for unseen tasks
  std::vector<Example> test;   // exactly kTestPerTask

  bool operator==(const TaskEntry&) const = default;
  // The instruction attached to the held-out instances.
  const Instruction& annotated_instruction() const { return test.front().instruction; }
};

struct CorpusSplit {
  int alphabet_size = 16;
  std::vector<TaskEntry> tasks;

  bool operator==(const CorpusSplit&) const = default;

  std::vector<const TaskEntry*> by_split(SplitTag tag) const {
    std::vector<const TaskEntry*> out;
    for (const auto& t : tasks)
      if (t.split == tag) out.push_back(&t);
    return out;
  }
  std::vector<TaskProgram> seen_tasks() const { return programs(SplitTag::seen); }
  std::vector<TaskProgram> unseen_tasks() const { return programs(SplitTag::unseen); }
  const TaskEntry* find(const std::string& task_id) const {
    for (const auto& t : tasks)
      if (t.program.task_id() == task_id) return &t;
    return nullptr;
  }

 private:
  std::vector<TaskProgram> programs(SplitTag tag) const {
    std::vector<TaskProgram> out;
    for (const auto& t : tasks)
      if (t.split == tag) out.push_back(t.program);
    return out;
  }
};

inline Sequence random_input(Rng& rng, int alphabet_size) {
  Sequence x;
  const int len = rng.range(kMinInputLen, kMaxInputLen);
  for (int i = 0; i < len; ++i) x += letter(static_cast<int>(rng.below(static_cast<std::uint64_t>(alphabet_size))));
  return x;
}

inline std::size_t family_size(const std::vector<TaskProgram>& tasks, Family f) {
  return static_cast<std::size_t>(
      std::count_if(tasks.begin(), tasks.end(), [f](const TaskProgram& p) { return p.family == f; }));
}

// Instances for one task: kTestPerTask held-out examples under the annotated
// template, plus train_per_task training examples when seen. Inputs are
// distinct within a task.
inline TaskEntry make_task_entry(const TaskProgram& program, SplitTag tag, int train_per_task, std::uint64_t seed,
                                 int alphabet_size) {
  TaskEntry e;
  e.program = program;
  e.split = tag;
  Rng trng = Rng::derive(seed, fnv1a(program.canonical()));
  const int annotated = static_cast<int>(trng.below(kTemplatesPerFamily));
  const int want = kTestPerTask + (tag == SplitTag::seen ? train_per_task : 0);
  std::set<Sequence> used;
  std::vector<Sequence> xs;
  while (static_cast<int>(xs.size()) < want) {
    Sequence x = random_input(trng, alphabet_size);
    if (used.insert(x).second) xs.push_back(std::move(x));
  }
  for (int j = 0; j < want; ++j) {
    const bool test = j < kTestPerTask;
    const int tmpl = test ? annotated : static_cast<int>(trng.below(kTemplatesPerFamily));
    const auto& x = xs[static_cast<std::size_t>(j)];
    Example ex{{x, execute(program, x, alphabet_size)}, render_instruction(program, tmpl)};
    (test ? e.test : e.train).push_back(std::move(ex));
  }
  return e;
}

// 90/10 split (unseen count rounds down). Unseen tasks are drawn only from
// families with several members so every family keeps seen representatives.
inline CorpusSplit build_split(const std::vector<TaskProgram>& tasks, int train_per_task, std::uint64_t seed,
                               int alphabet_size = 16) {
  if (train_per_task < 8) throw CorpusError("build_split: train_per_task must be at least 8");
  if (tasks.size() < kMinTasks)
    throw CorpusError("build_split: " + std::to_string(tasks.size()) + " tasks given; at least " +
                      std::to_string(kMinTasks) + " are needed for a 90/10 split");
  Rng rng(seed);
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < tasks.size(); ++i)
    if (family_size(tasks, tasks[i].family) > 1) candidates.push_back(i);
  const std::size_t n_unseen = tasks.size() / 10;
  if (candidates.size() < n_unseen) throw CorpusError("build_split: not enough multi-member families to hold out");
  rng.shuffle(candidates.begin(), candidates.end());
  std::set<std::size_t> unseen(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(n_unseen));

  CorpusSplit split;
  split.alphabet_size = alphabet_size;
  for (std::size_t i = 0; i < tasks.size(); ++i)
    split.tasks.push_back(make_task_entry(tasks[i], unseen.count(i) ? SplitTag::unseen : SplitTag::seen,
                                          train_per_task, seed, alphabet_size));
  return split;
}

// ---------------------------------------------------------------------------
// Serialization: one JSON object per line.

inline std::string serialize(const CorpusSplit& split) {
  std::ostringstream os;
  for (const auto& t : split.tasks) {
    auto emit = [&](const Example& ex, const char* role) {
      nlohmann::ordered_json j;
      j["task_id"] = t.program.task_id();
      j["family"] = family_name(t.program.family);
      j["params"] = t.program.params();
      j["split_tag"] = split_name(t.split);
      j["role"] = role;
      j["instruction_text"] = ex.instruction.str();
      j["template_id"] = ex.instruction.template_id;
      j["x"] = spaced(ex.instance.x);
      j["y"] = spaced(ex.instance.y);
      j["alphabet"] = split.alphabet_size;
      os << j.dump() << '\n';
    };
    for (const auto& ex : t.train) emit(ex, "train");
    for (const auto& ex : t.test) emit(ex, "test");
  }
  return os.str();
}

inline CorpusSplit deserialize(std::istream& in) {
  CorpusSplit split;
  std::map<std::string, std::size_t> index;
  std::string line;
  std::size_t lineno = 0;
  bool alphabet_set = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto fail = [&](const std::string& why) -> CorpusError {
      return CorpusError("corpus line " + std::to_string(lineno) + ": " + why);
    };
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw fail(std::string("malformed record (") + e.what() + ")");
    }
    try {
      const int alphabet = j.value("alphabet", 16);
      if (!alphabet_set) {
        split.alphabet_size = alphabet;
        alphabet_set = true;
      } else if (alphabet != split.alphabet_size) {
        throw fail("alphabet size changes mid-file");
      }
      auto fam = family_from_name(j.at("family").get<std::string>());
      if (!fam) throw fail("unknown family");
      TaskProgram p{*fam, 0, {}};
      auto params = j.at("params").get<std::vector<int>>();
      if (p.family == Family::map) p.perm = params;
      else if (p.family == Family::shift || p.family == Family::take_last) p.n = params.empty() ? 0 : params[0];
      if (p.task_id() != j.at("task_id").get<std::string>()) throw fail("task_id does not match family/params");
      const std::string tag = j.at("split_tag").get<std::string>();
      const std::string role = j.at("role").get<std::string>();
      if ((tag != "seen" && tag != "unseen") || (role != "train" && role != "test")) throw fail("bad split_tag or role");
      Example ex;
      ex.instruction.text = split_tokens(j.at("instruction_text").get<std::string>());
      ex.instruction.template_id = j.at("template_id").get<int>();
      ex.instruction.task_id = p.task_id();
      ex.instance.x = unspaced(j.at("x").get<std::string>());
      ex.instance.y = unspaced(j.at("y").get<std::string>());
      if (execute(p, ex.instance.x, split.alphabet_size) != ex.instance.y) throw fail("y is not the program output");
      auto [it, fresh] = index.emplace(p.task_id(), split.tasks.size());
      if (fresh) {
        TaskEntry e;
        e.program = p;
        e.split = tag == "seen" ? SplitTag::seen : SplitTag::unseen;
        split.tasks.push_back(std::move(e));
      }
      TaskEntry& e = split.tasks[it->second];
      if (split_name(e.split) != tag) throw fail("task changes split tag");
      (role == "train" ? e.train : e.test).push_back(std::move(ex));
    } catch (const CorpusError& e) {
      if (std::string_view(e.what()).starts_with("corpus line")) throw;
      throw fail(e.what());
    } catch (const nlohmann::json::exception& e) {
      throw fail(std::string("missing or mistyped field (") + e.what() + ")");
    }
  }
  for (const auto& t : split.tasks) {
    std::set<Sequence> xs;
    for (const auto* part : {&t.train, &t.test})
      for (const auto& ex : *part)
        if (!xs.insert(ex.instance.x).second)
          throw CorpusError("corpus: duplicate instance '" + ex.instance.x + "' in task " + t.program.canonical());
  }
  return split;
}

inline void save_split(const CorpusSplit& split, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorpusError("cannot write corpus file " + path);
  out << serialize(split);
}

inline CorpusSplit load_split(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot read corpus file " + path);
  return deserialize(in);
}

inline std::uint64_t corpus_hash(const CorpusSplit& split) { return fnv1a(serialize(split)); }

}  // namespace ship::corpus
