#pragma once

#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "ship/corpus.hpp"

namespace ship {

enum class EvalKind { deduction, induction, reasoning };

inline const char* kind_name(EvalKind k) {
  switch (k) {
    case EvalKind::deduction: return "deduction";
    case EvalKind::induction: return "induction";
    case EvalKind::reasoning: return "reasoning";
  }
  return "?";
}

struct EvalRecord {
  EvalKind kind = EvalKind::deduction;
  std::string task_id;
  std::string split_tag;  // "seen" or "unseen"
  std::string method;     // e.g. "ship", "zero-z", "refined"
  std::string prediction;
  bool verdict = false;
  std::string detail;

  nlohmann::ordered_json to_json() const {
    return {{"kind", kind_name(kind)}, {"task_id", task_id}, {"split_tag", split_tag}, {"method", method},
            {"prediction", prediction}, {"verdict", verdict},   {"detail", detail}};
  }
};

inline std::string strip_spaces(const std::string& s) {
  std::string out;
  for (char c : s)
    if (!std::isspace(static_cast<unsigned char>(c))) out += c;
  return out;
}

// Data tokens are single symbols, so whitespace normalization is removal.
inline bool judge_deduction(const std::string& prediction, const std::string& target) {
  return strip_spaces(prediction) == strip_spaces(target);
}

inline constexpr int kDefaultProbes = 50;

// Deterministic probe inputs for a task: seeded by its id.
inline std::vector<corpus::Sequence> probe_inputs(const std::string& task_id, int probes, int alphabet_size) {
  Rng rng(fnv1a(task_id, fnv1a("probes")));
  std::vector<corpus::Sequence> out;
  for (int i = 0; i < probes; ++i) out.push_back(corpus::random_input(rng, alphabet_size));
  return out;
}

struct InductionVerdict {
  bool verdict = false;
  std::string detail;
};

inline InductionVerdict judge_induction(const corpus::TokenList& k_hat, const corpus::TaskProgram& truth,
                                        int probes = kDefaultProbes, int alphabet_size = 16) {
  if (probes < 50) throw Error("judge_induction: at least 50 probes required");
  const auto parsed = corpus::parse_instruction(k_hat, alphabet_size);
  if (!parsed) return {false, "parse-failure"};
  int agree = 0;
  for (const auto& x : probe_inputs(truth.task_id(), probes, alphabet_size)) {
    if (corpus::execute(*parsed.program, x, alphabet_size) != corpus::execute(truth, x, alphabet_size)) break;
    ++agree;
  }
  const bool ok = agree == probes;
  return {ok, "parsed " + parsed.program->canonical() + "; agreed on " + std::to_string(agree) + "/" +
                  std::to_string(probes) + " probes"};
}

struct AccuracyRow {
  std::string kind, split_tag, method;
  std::size_t correct = 0, total = 0;
  double accuracy() const { return total ? 100.0 * static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

// Accuracy per (kind, split, method), in sorted key order.
inline std::vector<AccuracyRow> aggregate(const std::vector<EvalRecord>& records) {
  std::map<std::tuple<std::string, std::string, std::string>, AccuracyRow> groups;
  for (const auto& r : records) {
    auto& g = groups[{kind_name(r.kind), r.split_tag, r.method}];
    g.kind = kind_name(r.kind);
    g.split_tag = r.split_tag;
    g.method = r.method;
    g.correct += r.verdict ? 1 : 0;
    ++g.total;
  }
  std::vector<AccuracyRow> out;
  for (auto& [_, g] : groups) out.push_back(g);
  return out;
}

inline const AccuracyRow* find_row(const std::vector<AccuracyRow>& rows, const std::string& kind,
                                   const std::string& split, const std::string& method) {
  for (const auto& r : rows)
    if (r.kind == kind && r.split_tag == split && r.method == method) return &r;
  return nullptr;
}

inline std::string format_pct(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << v;
  return os.str();
}

inline std::string accuracy_csv(const std::vector<AccuracyRow>& rows) {
  std::ostringstream os;
  os << "kind,split,method,correct,total,accuracy\n";
  for (const auto& r : rows)
    os << r.kind << ',' << r.split_tag << ',' << r.method << ',' << r.correct << ',' << r.total << ','
       << format_pct(r.accuracy()) << '\n';
  return os.str();
}

inline std::string accuracy_text(const std::vector<AccuracyRow>& rows) {
  std::vector<std::vector<std::string>> cells{{"kind", "split", "method", "correct", "total", "accuracy"}};
  for (const auto& r : rows)
    cells.push_back({r.kind, r.split_tag, r.method, std::to_string(r.correct), std::to_string(r.total),
                     format_pct(r.accuracy())});
  std::vector<std::size_t> width(6, 0);
  for (const auto& row : cells)
    for (std::size_t c = 0; c < 6; ++c) width[c] = std::max(width[c], row[c].size());
  std::ostringstream os;
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < 6; ++c) {
      if (c) os << "  ";
      if (c >= 3) os << std::setw(static_cast<int>(width[c])) << std::right << row[c];
      else os << std::setw(static_cast<int>(width[c])) << std::left << row[c];
    }
    os << '\n';
  }
  return os.str();
}

inline std::string records_jsonl(const std::vector<EvalRecord>& records) {
  std::string out;
  for (const auto& r : records) out += r.to_json().dump() + "\n";
  return out;
}

}  // namespace ship
