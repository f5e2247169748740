#pragma once

// Deduction (instruction + input -> output), induction (instances ->
// instruction) via optimization of a continuous instruction surrogate through
// the frozen Encoder, and inductive reasoning built from the two.

#include <cmath>
#include <string>
#include <vector>

#include "json.hpp"
#include "ship/objective.hpp"
#include "ship/optimizer.hpp"

namespace ship {

enum class LatentMode { mean, sampled };

struct DemonstrationSet {
  std::vector<corpus::Instance> instances;
  std::string task_id;  // for scoring only
  std::size_t n() const { return instances.size(); }
};

// The first n demos of a task: its held-out instances, then fresh instances
// drawn from the program when n exceeds them.
inline DemonstrationSet make_demos(const corpus::TaskEntry& task, std::size_t n, int alphabet_size) {
  if (n < 1 || n > 6) throw Error("make_demos: n must lie in [1, 6]");
  DemonstrationSet d;
  d.task_id = task.program.task_id();
  for (const auto& ex : task.test) {
    if (d.instances.size() == n) break;
    d.instances.push_back(ex.instance);
  }
  Rng rng(fnv1a(d.task_id, fnv1a("extra-demos")));
  while (d.instances.size() < n) {
    const auto x = corpus::random_input(rng, alphabet_size);
    bool dup = false;
    for (const auto& i : d.instances) dup = dup || i.x == x;
    for (const auto& ex : task.test) dup = dup || ex.instance.x == x;
    if (!dup) d.instances.push_back({x, corpus::execute(task.program, x, alphabet_size)});
  }
  return d;
}

// ---------------------------------------------------------------------------
// Deduction

// Latents for a batch of instructions: mean of Enc(k), or one reparameterized sample.
inline Tensor latents_for(const ModelBundle& m, const std::vector<corpus::TokenList>& ks, LatentMode mode, Rng* rng) {
  Binder bind(false);
  const LatentDistribution d = encode(m, bind, ks);
  if (mode == LatentMode::mean) return d.mu->value;
  if (!rng) throw Error("sampled latent mode needs an rng");
  const Tensor eps = standard_normal(d.mu->value.shape, *rng);
  return sample_latent(d, &eps)->value;
}

inline std::vector<corpus::Sequence> deduce_batch(const ModelBundle& m, const std::vector<corpus::TokenList>& ks,
                                                  const std::vector<corpus::Sequence>& xs, LatentMode mode = LatentMode::mean,
                                                  Rng* rng = nullptr, bool zero_latent = false, bool with_k = true) {
  Tensor z = latents_for(m, ks, mode, rng);
  if (zero_latent) z = Tensor(z.shape, 0.0);
  std::vector<TaskPrefix> prefixes;
  for (const auto& k : ks) prefixes.push_back({with_k ? &k : nullptr, nullptr});
  return generate_task(m, z, prefixes, xs);
}

inline corpus::Sequence deduce(const ModelBundle& m, const corpus::TokenList& k, const corpus::Sequence& x,
                               LatentMode mode = LatentMode::mean, Rng* rng = nullptr) {
  return deduce_batch(m, {k}, {x}, mode, rng).front();
}

// ---------------------------------------------------------------------------
// Induction

struct InduceOptions {
  std::size_t steps = 200;
  double lr = 0.1;
  std::uint64_t seed = 0;
  bool use_indirect = true;
  // Weight of the KL term on the surrogate latent; 0 gives the bare task
  // likelihood objective.
  double kl_weight = 1e-3;
  LatentMode latent = LatentMode::mean;
  std::size_t m_k = 20;  // surrogate length; median rendered instruction length
  std::size_t max_instruction_len = 24;
};

struct InducedResult {
  std::string task_id;
  std::size_t n = 0;
  Tensor k_star;  // [m_k, d]; empty without indirect training
  Tensor z_star;  // [1, D_z]
  corpus::TokenList k_hat;
  std::size_t condition_index = 0;
  corpus::Instance condition;
  std::vector<double> trace;  // mean task NLL over demos at each step

  nlohmann::ordered_json to_json(bool parsed, const std::string& detail) const {
    return {{"task_id", task_id},
            {"n", n},
            {"k_hat", corpus::join_tokens(k_hat)},
            {"parse_status", parsed ? "parsed" : "parse-failure"},
            {"detail", detail},
            {"condition", {{"x", corpus::spaced(condition.x)}, {"y", corpus::spaced(condition.y)}}},
            {"j_first", trace.empty() ? 0.0 : trace.front()},
            {"j_last", trace.empty() ? 0.0 : trace.back()},
            {"j_min", trace.empty() ? 0.0 : *std::min_element(trace.begin(), trace.end())},
            {"steps", trace.size()}};
  }
};

// Rows of the Encoder's token table for the neutral phrase, tiled to m_k.
inline Tensor neutral_surrogate(const ModelBundle& m, std::size_t m_k) {
  const auto& words = corpus::neutral_instruction();
  const Tensor& table = m.encoder.token_table().value();
  const std::size_t d = table.cols();
  Tensor k({m_k, d});
  for (std::size_t i = 0; i < m_k; ++i) {
    const auto row = static_cast<std::size_t>(m.vocab().id(words[i % words.size()]));
    for (std::size_t c = 0; c < d; ++c) k.at(i, c) = table.at(row, c);
  }
  return k;
}

inline InducedResult induce(const ModelBundle& m, const DemonstrationSet& demos, const InduceOptions& opt) {
  if (demos.instances.empty()) throw Error("induce: no demonstrations");
  const std::size_t n = demos.n();
  Rng rng = Rng::derive(opt.seed, fnv1a(demos.task_id, fnv1a("induce")));
  Binder bind(false);  // bundle stays frozen; only the surrogate is a leaf

  std::vector<TaskExample> batch;
  for (const auto& d : demos.instances) batch.push_back({{nullptr, nullptr}, &d.x, &d.y});
  const std::vector<double> w(n, 1.0 / static_cast<double>(n));
  const std::vector<std::size_t> rep(n, 0);

  InducedResult res;
  res.task_id = demos.task_id;
  res.n = n;
  ad::ParamBlock surrogate =
      opt.use_indirect ? ad::ParamBlock("k_tilde", neutral_surrogate(m, opt.m_k))
                       : ad::ParamBlock("z_tilde", encode_mean(m, {corpus::neutral_instruction()}));
  Optimizer adam({&surrogate}, OptimizerKind::adam, opt.lr);

  for (std::size_t step = 0; step < opt.steps; ++step) {
    Var z, reg;
    if (opt.use_indirect) {
      const LatentDistribution dist = encode_embeddings(m, bind, surrogate.node());
      if (opt.latent == LatentMode::sampled) {
        const Tensor eps = standard_normal(dist.mu->value.shape, rng);
        z = sample_latent(dist, &eps);
      } else {
        z = dist.mu;
      }
      reg = kl_to_standard_normal(dist);
    } else {
      z = surrogate.node();
      reg = ad::scale(ad::sum(ad::mul(z, z)), 0.5);
    }
    const Var j = task_nll(m, bind, ad::gather_rows(z, rep), batch, w);
    res.trace.push_back(j->value.item());
    const Var loss = opt.kl_weight > 0 ? ad::add(j, ad::scale(reg, opt.kl_weight)) : j;
    if (!std::isfinite(loss->value.item()))
      throw Error("induce: non-finite objective at step " + std::to_string(step) + " (task " + demos.task_id + ")");
    adam.zero_grad();
    ad::backward(loss);
    adam.step();
  }
  adam.zero_grad();

  if (opt.use_indirect) {
    res.k_star = surrogate.value();
    Binder b2(false);
    res.z_star = encode_embeddings(m, b2, ad::constant(res.k_star)).mu->value;
  } else {
    res.z_star = surrogate.value();
  }
  res.condition_index = rng.below(n);
  res.condition = demos.instances[res.condition_index];
  res.k_hat = generate_instruction(m, res.z_star, {&res.condition}, opt.max_instruction_len).front();
  return res;
}

// ---------------------------------------------------------------------------
// Inductive reasoning

enum class ReasonMode { sft, refined, context };

inline const char* reason_mode_name(ReasonMode r) {
  switch (r) {
    case ReasonMode::sft: return "sft";
    case ReasonMode::refined: return "refined";
    case ReasonMode::context: return "context";
  }
  return "?";
}
inline ReasonMode reason_mode_from_name(const std::string& s) {
  if (s == "sft") return ReasonMode::sft;
  if (s == "refined") return ReasonMode::refined;
  if (s == "context") return ReasonMode::context;
  throw Error("unknown reasoning mode '" + s + "'");
}

// Latent used by refined reasoning: mean of Enc(k_hat), or zeros when the
// decoded instruction is empty.
inline Tensor refined_latent(const ModelBundle& m, const InducedResult& r) {
  if (r.k_hat.empty()) return Tensor({1, m.config().d_z()}, 0.0);
  return encode_mean(m, {r.k_hat});
}

// Predictions for several queries sharing one demonstration set. For sft and
// refined, `induced` must come from induce() on the same demos.
inline std::vector<corpus::Sequence> reason(const ModelBundle& m, const DemonstrationSet& demos,
                                            const std::vector<corpus::Sequence>& queries, ReasonMode mode,
                                            const InducedResult* induced = nullptr) {
  const std::size_t dz = m.config().d_z();
  Tensor z1({1, dz}, 0.0);
  if (mode != ReasonMode::context) {
    if (!induced) throw Error("reason: sft and refined modes need an induced result");
    z1 = mode == ReasonMode::sft ? induced->z_star : refined_latent(m, *induced);
  }
  Tensor z({queries.size(), dz});
  for (std::size_t i = 0; i < queries.size(); ++i) std::copy(z1.data.begin(), z1.data.end(), z.data.begin() + static_cast<std::ptrdiff_t>(i * dz));
  std::vector<TaskPrefix> prefixes(queries.size(), TaskPrefix{nullptr, mode == ReasonMode::context ? &demos.instances : nullptr});
  return generate_task(m, z, prefixes, queries);
}

}  // namespace ship
