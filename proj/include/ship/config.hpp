#pragma once

// key=value configuration files. Blank lines and '#' comments are ignored.
// Unknown keys are rejected when applied.

#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "ship/inference.hpp"
#include "ship/judge.hpp"
#include "ship/trainer.hpp"

namespace ship {

class ConfigError : public Error {
 public:
  using Error::Error;
};

class KeyValues {
 public:
  static KeyValues parse(std::istream& in, const std::string& origin = "config") {
    KeyValues kv;
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      const auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return std::string();
        return s.substr(a, s.find_last_not_of(" \t\r") - a + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError(origin + ":" + std::to_string(n) + ": expected key = value");
      kv.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return kv;
  }
  static KeyValues load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    return parse(in, path);
  }

  void set(const std::string& k, const std::string& v) { values_[k] = v; }
  bool has(const std::string& k) const { return values_.count(k) > 0; }
  const std::map<std::string, std::string>& values() const { return values_; }

  // Typed readers; each marks the key as consumed.
  void read(const std::string& k, double& out) const { with(k, [&](const std::string& v) { out = std::stod(v); }); }
  void read(const std::string& k, std::size_t& out) const { with(k, [&](const std::string& v) { out = std::stoul(v); }); }
  void read(const std::string& k, int& out) const { with(k, [&](const std::string& v) { out = std::stoi(v); }); }
  void read(const std::string& k, bool& out) const {
    with(k, [&](const std::string& v) {
      if (v == "1" || v == "true") out = true;
      else if (v == "0" || v == "false") out = false;
      else throw std::invalid_argument("expected a boolean");
    });
  }
  void read(const std::string& k, std::string& out) const { with(k, [&](const std::string& v) { out = v; }); }

  void reject_unknown() const {
    for (const auto& [k, _] : values_)
      if (!used_.count(k)) throw ConfigError("unknown config key '" + k + "'");
  }

 private:
  template <class F>
  void with(const std::string& k, F f) const {
    auto it = values_.find(k);
    if (it == values_.end()) return;
    used_.insert(k);
    try {
      f(it->second);
    } catch (const std::exception&) {
      throw ConfigError("bad value '" + it->second + "' for config key '" + k + "'");
    }
  }
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

struct RunConfig {
  corpus::CorpusConfig corpus;
  std::size_t train_per_task = 256;
  ModelConfig model;
  TrainConfig train;
  InduceOptions induce;
  int probes = kDefaultProbes;
};

inline void apply(const KeyValues& kv, RunConfig& c) {
  kv.read("corpus.alphabet", c.corpus.alphabet_size);
  kv.read("corpus.map_count", c.corpus.map_count);
  kv.read("corpus.map_seed", c.corpus.map_seed);
  std::string map_kind = c.corpus.map_kind == corpus::MapKind::random ? "random" : "transposition";
  kv.read("corpus.map_kind", map_kind);
  if (map_kind == "random") c.corpus.map_kind = corpus::MapKind::random;
  else if (map_kind == "transposition") c.corpus.map_kind = corpus::MapKind::transposition;
  else throw ConfigError("corpus.map_kind must be random or transposition");
  kv.read("corpus.train_per_task", c.train_per_task);
  kv.read("corpus.max_instruction_len", c.corpus.max_instruction_len);
  c.model.alphabet_size = c.corpus.alphabet_size;

  kv.read("model.d_model", c.model.d_model);
  kv.read("model.m_soft", c.model.m_soft);
  kv.read("model.layers", c.model.layers);
  kv.read("model.heads", c.model.heads);
  kv.read("model.ffn", c.model.ffn);
  kv.read("model.embed_init", c.model.embed_init);
  kv.read("model.logvar_init", c.model.logvar_init);

  kv.read("train.w0", c.train.weights.w0);
  kv.read("train.w1", c.train.weights.w1);
  kv.read("train.w2", c.train.weights.w2);
  kv.read("train.lr", c.train.lr);
  kv.read("train.weight_decay", c.train.weight_decay);
  std::string opt = optimizer_name(c.train.optimizer);
  kv.read("train.optimizer", opt);
  c.train.optimizer = optimizer_from_name(opt);
  kv.read("train.batch_size", c.train.batch_size);
  kv.read("train.steps", c.train.steps);
  kv.read("train.k_dropout", c.train.k_dropout);
  std::string sampling = sampling_name(c.train.sampling);
  kv.read("train.sampling", sampling);
  c.train.sampling = sampling_from_name(sampling);
  kv.read("train.temperature", c.train.temperature);
  kv.read("train.checkpoint_every", c.train.checkpoint_every);
  kv.read("train.log_every", c.train.log_every);

  kv.read("induce.steps", c.induce.steps);
  kv.read("induce.lr", c.induce.lr);
  kv.read("induce.kl_weight", c.induce.kl_weight);
  kv.read("induce.m_k", c.induce.m_k);
  bool sampled = c.induce.latent == LatentMode::sampled;
  kv.read("induce.sampled", sampled);
  c.induce.latent = sampled ? LatentMode::sampled : LatentMode::mean;
  kv.read("judge.probes", c.probes);
  kv.reject_unknown();
}

inline std::string describe(const RunConfig& c) {
  std::ostringstream os;
  os.precision(std::numeric_limits<double>::max_digits10);
  const auto kv = [&](const char* k, const auto& v) { os << k << "=" << v << "\n"; };
  kv("corpus.alphabet", c.corpus.alphabet_size);
  kv("corpus.map_count", c.corpus.map_count);
  kv("corpus.map_kind", c.corpus.map_kind == corpus::MapKind::random ? "random" : "transposition");
  kv("corpus.map_seed", c.corpus.map_seed);
  kv("corpus.train_per_task", c.train_per_task);
  kv("corpus.max_instruction_len", c.corpus.max_instruction_len);
  kv("model.d_model", c.model.d_model);
  kv("model.m_soft", c.model.m_soft);
  kv("model.layers", c.model.layers);
  kv("model.heads", c.model.heads);
  kv("model.ffn", c.model.ffn);
  kv("model.embed_init", c.model.embed_init);
  kv("model.logvar_init", c.model.logvar_init);
  kv("train.w0", c.train.weights.w0);
  kv("train.w1", c.train.weights.w1);
  kv("train.w2", c.train.weights.w2);
  kv("train.lr", c.train.lr);
  kv("train.weight_decay", c.train.weight_decay);
  kv("train.optimizer", optimizer_name(c.train.optimizer));
  kv("train.batch_size", c.train.batch_size);
  kv("train.steps", c.train.steps);
  kv("train.k_dropout", c.train.k_dropout);
  kv("train.sampling", sampling_name(c.train.sampling));
  kv("train.temperature", c.train.temperature);
  kv("train.checkpoint_every", c.train.checkpoint_every);
  kv("train.log_every", c.train.log_every);
  kv("induce.steps", c.induce.steps);
  kv("induce.lr", c.induce.lr);
  kv("induce.kl_weight", c.induce.kl_weight);
  kv("induce.m_k", c.induce.m_k);
  kv("induce.sampled", c.induce.latent == LatentMode::sampled ? 1 : 0);
  kv("judge.probes", c.probes);
  return os.str();
}

}  // namespace ship
