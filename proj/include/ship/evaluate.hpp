#pragma once

// Split-level evaluation drivers producing judged records. Tasks are spread
// over worker threads; each worker owns a clone of the bundle and results are
// merged in task order, so output never depends on scheduling.

#include <algorithm>
#include <atomic>
#include <thread>

#include "ship/analysis.hpp"
#include "ship/inference.hpp"
#include "ship/judge.hpp"

namespace ship {

struct EvalOptions {
  std::size_t n_demos = 5;
  std::size_t queries = 5;  // reasoning queries per task
  int probes = kDefaultProbes;
  std::size_t jobs = 1;
  InduceOptions induce;
};

template <class R, class F>
std::vector<R> per_task(const ModelBundle& m, const std::vector<const corpus::TaskEntry*>& tasks, std::size_t jobs, F fn) {
  std::vector<R> out(tasks.size());
  jobs = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(tasks.size(), 1));
  if (jobs == 1) {
    for (std::size_t i = 0; i < tasks.size(); ++i) out[i] = fn(m, *tasks[i]);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(jobs);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < jobs; ++w)
    pool.emplace_back([&, w] {
      try {
        const ModelBundle local = m.clone();
        for (std::size_t i; (i = next++) < tasks.size();) out[i] = fn(local, *tasks[i]);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

template <class R>
std::vector<R> flatten(std::vector<std::vector<R>> parts) {
  std::vector<R> out;
  for (auto& p : parts) std::move(p.begin(), p.end(), std::back_inserter(out));
  return out;
}

inline std::vector<const corpus::TaskEntry*> all_tasks(const corpus::CorpusSplit& s) {
  std::vector<const corpus::TaskEntry*> out;
  for (const auto& t : s.tasks) out.push_back(&t);
  return out;
}

// Deduction on every held-out instance: "ship" uses the mean latent of the
// annotated instruction, "zero-z" replaces it with zeros.
inline std::vector<EvalRecord> eval_deduction(const ModelBundle& m, const std::vector<const corpus::TaskEntry*>& tasks,
                                              const EvalOptions& opt) {
  return flatten(per_task<std::vector<EvalRecord>>(m, tasks, opt.jobs, [](const ModelBundle& b, const corpus::TaskEntry& t) {
    std::vector<corpus::TokenList> ks;
    std::vector<corpus::Sequence> xs;
    for (const auto& ex : t.test) {
      ks.push_back(ex.instruction.text);
      xs.push_back(ex.instance.x);
    }
    std::vector<EvalRecord> recs;
    for (bool zero : {false, true}) {
      const auto ys = deduce_batch(b, ks, xs, LatentMode::mean, nullptr, zero);
      for (std::size_t i = 0; i < ys.size(); ++i)
        recs.push_back({EvalKind::deduction, t.program.task_id(), corpus::split_name(t.split), zero ? "zero-z" : "ship",
                        ys[i], judge_deduction(ys[i], t.test[i].instance.y), "x=" + xs[i] + " y=" + t.test[i].instance.y});
    }
    return recs;
  }));
}

inline std::string induction_method(const EvalOptions& opt) {
  return std::string(opt.induce.use_indirect ? "indirect" : "direct") + "-n" + std::to_string(opt.n_demos);
}

struct InductionOutcome {
  EvalRecord record;
  nlohmann::ordered_json detail;
};

inline std::vector<InductionOutcome> eval_induction(const ModelBundle& m, const std::vector<const corpus::TaskEntry*>& tasks,
                                                    const EvalOptions& opt) {
  const int alphabet = m.config().alphabet_size;
  return per_task<InductionOutcome>(m, tasks, opt.jobs, [&](const ModelBundle& b, const corpus::TaskEntry& t) {
    const auto r = induce(b, make_demos(t, opt.n_demos, alphabet), opt.induce);
    const auto v = judge_induction(r.k_hat, t.program, opt.probes, alphabet);
    InductionOutcome o;
    o.record = {EvalKind::induction, t.program.task_id(), corpus::split_name(t.split), induction_method(opt),
                corpus::join_tokens(r.k_hat), v.verdict, v.detail};
    o.detail = r.to_json(v.detail != "parse-failure", v.detail);
    return o;
  });
}

// Fresh inputs for reasoning, disjoint from the demonstrations.
inline std::vector<corpus::Sequence> reasoning_queries(const corpus::TaskEntry& t, const DemonstrationSet& demos,
                                                       std::size_t count, int alphabet_size) {
  Rng rng = Rng::derive(fnv1a(t.program.task_id()), fnv1a("queries"));
  std::vector<corpus::Sequence> out;
  while (out.size() < count) {
    const auto x = corpus::random_input(rng, alphabet_size);
    const bool used = std::any_of(demos.instances.begin(), demos.instances.end(), [&](const auto& d) { return d.x == x; }) ||
                      std::find(out.begin(), out.end(), x) != out.end();
    if (!used) out.push_back(x);
  }
  return out;
}

inline std::vector<EvalRecord> eval_reasoning(const ModelBundle& m, const std::vector<const corpus::TaskEntry*>& tasks,
                                              const std::vector<ReasonMode>& modes, const EvalOptions& opt) {
  const int alphabet = m.config().alphabet_size;
  return flatten(per_task<std::vector<EvalRecord>>(m, tasks, opt.jobs, [&](const ModelBundle& b, const corpus::TaskEntry& t) {
    const auto demos = make_demos(t, opt.n_demos, alphabet);
    const auto queries = reasoning_queries(t, demos, opt.queries, alphabet);
    const bool needs_induction = std::any_of(modes.begin(), modes.end(), [](ReasonMode r) { return r != ReasonMode::context; });
    InducedResult r;
    if (needs_induction) r = induce(b, demos, opt.induce);
    std::vector<EvalRecord> recs;
    for (ReasonMode mode : modes) {
      const auto ys = reason(b, demos, queries, mode, &r);
      for (std::size_t i = 0; i < ys.size(); ++i) {
        const auto truth = corpus::execute(t.program, queries[i], alphabet);
        recs.push_back({EvalKind::reasoning, t.program.task_id(), corpus::split_name(t.split), reason_mode_name(mode), ys[i],
                        judge_deduction(ys[i], truth), "x=" + queries[i] + " y=" + truth});
      }
    }
    return recs;
  }));
}

inline std::vector<LatentTriple> collect_latents_parallel(const ModelBundle& m, const std::vector<const corpus::TaskEntry*>& tasks,
                                                          const EvalOptions& opt) {
  return flatten(per_task<std::vector<LatentTriple>>(m, tasks, opt.jobs, [&](const ModelBundle& b, const corpus::TaskEntry& t) {
    return collect_latents(b, {&t}, opt.n_demos, opt.induce);
  }));
}

}  // namespace ship
