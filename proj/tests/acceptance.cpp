// End-to-end acceptance harness. Prints one PASS/FAIL line per criterion.
//
//   acceptance [cache-dir]
//
// Trained checkpoints are cached in cache-dir (default ./acceptance_cache),
// keyed by a hash of the full run configuration and corpus.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "ship/config.hpp"
#include "ship/evaluate.hpp"
#include "ship/grad_check.hpp"
#include "ship/trainer.hpp"

namespace fs = std::filesystem;
using namespace ship;
using Clock = std::chrono::steady_clock;

namespace {

// Tolerances and thresholds.
constexpr double kGradTol = 1e-4;
constexpr double kGradSeconds = 60.0;
constexpr double kKlRelTol = 0.01;
constexpr std::size_t kKlSamples = 1'000'000;
constexpr std::size_t kKlDistributions = 100;
constexpr std::size_t kLossWindow = 50;
constexpr double kMonotoneFraction = 0.90;
constexpr double kRunMinutes = 30.0;
constexpr double kSeenDeduction = 90.0, kSeenGap = 20.0, kUnseenGap = 10.0;
constexpr double kSeenInduction = 80.0, kAblatedInduction = 10.0;
constexpr double kFewShotGap = 10.0;
constexpr double kReasoningMargin = 5.0;
constexpr double kDistanceWins = 0.70;
const std::vector<std::uint64_t> kSeeds{1, 2, 3};

int failures = 0;

void verdict(int id, const std::string& name, bool pass, const std::string& detail) {
  if (!pass) ++failures;
  std::cout << "criterion " << std::setw(2) << id << ": " << (pass ? "PASS" : "FAIL") << "  " << name << "  [" << detail << "]"
            << std::endl;
}

std::string pct(double v) { return format_pct(v); }

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// ---------------------------------------------------------------------------
// 1. Gradient check of the full objective on a two-task micro corpus.

void criterion_grad_check() {
  ModelConfig c;
  c.d_model = 8;
  c.m_soft = 2;
  c.layers = 1;
  c.heads = 2;
  c.ffn = 12;
  ModelBundle m(c, 3);
  std::vector<corpus::TokenList> ks;
  std::vector<corpus::Instance> inst;
  for (corpus::Family f : {corpus::Family::reverse, corpus::Family::swap_case}) {
    const corpus::TaskProgram p{f, 0, {}};
    for (const char* x : {"abc", "dbca"}) {
      ks.push_back(corpus::render_instruction(p, 0).text);
      inst.push_back({x, corpus::execute(p, x, 16)});
    }
  }
  std::vector<Triple> batch;
  for (std::size_t i = 0; i < ks.size(); ++i) batch.push_back({&ks[i], &inst[i], i % 2 == 0});
  Rng rng(8);
  const Tensor eps = standard_normal({batch.size(), c.d_z()}, rng);
  const auto t0 = Clock::now();
  const auto report = ad::grad_check(
      [&] {
        Binder bind(true);
        return ship_objective(m, bind, batch, &eps).total;
      },
      m.params(), {.eps = 1e-5, .tol = kGradTol});
  const double secs = seconds_since(t0);
  std::ostringstream d;
  d << "max rel err " << report.max_rel_error << ", " << std::fixed << std::setprecision(1) << secs << "s";
  verdict(1, "grad check of full objective", report.max_rel_error < kGradTol && secs < kGradSeconds, d.str());
}

// ---------------------------------------------------------------------------
// 2. Closed-form KL against a Monte Carlo oracle.

double kl_monte_carlo(const std::vector<double>& mu, const std::vector<double>& lv, std::size_t samples, Rng& rng) {
  double acc = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    double lr = 0.0;  // log q(z) - log p(z)
    for (std::size_t i = 0; i < mu.size(); ++i) {
      const double e = rng.normal();
      const double z = mu[i] + std::exp(0.5 * lv[i]) * e;
      lr += -0.5 * e * e - 0.5 * lv[i] + 0.5 * z * z;
    }
    acc += lr;
  }
  return acc / static_cast<double>(samples);
}

void criterion_kl() {
  Rng rng(77);
  double worst = 0.0;
  for (std::size_t k = 0; k < kKlDistributions; ++k) {
    std::vector<double> mu(4), lv(4);
    for (std::size_t i = 0; i < 4; ++i) {
      const double mag = 0.5 + rng.uniform();
      mu[i] = rng.uniform() < 0.5 ? -mag : mag;
      lv[i] = -1.0 + 2.0 * rng.uniform();
    }
    const double exact = kl_to_standard_normal(mu, lv);
    const double mc = kl_monte_carlo(mu, lv, kKlSamples, rng);
    worst = std::max(worst, std::abs(mc - exact) / exact);
  }
  const double at_prior = kl_to_standard_normal(std::vector<double>(8, 0.0), std::vector<double>(8, 0.0));
  std::ostringstream d;
  d << "worst rel err " << worst << " over " << kKlDistributions << " distributions; kl(0, I) = " << at_prior;
  verdict(2, "KL matches Monte Carlo", worst < kKlRelTol && at_prior == 0.0, d.str());
}

// ---------------------------------------------------------------------------
// Training runs, cached on disk.

struct Run {
  std::string name;
  ModelBundle bundle;
  TrainLog log;
  double seconds = 0.0;
};

Run trained(const fs::path& cache, const std::string& name, const RunConfig& rc, const corpus::CorpusSplit& split,
            std::uint64_t seed, bool no_xy, bool no_k) {
  TrainConfig cfg = rc.train;
  cfg.seed = seed;
  cfg.drop_xy_condition = no_xy;
  cfg.drop_k_condition = no_k;
  const std::string key = describe(rc) + "seed=" + std::to_string(seed) + "xy=" + std::to_string(no_xy) +
                          "k=" + std::to_string(no_k) + "corpus=" + std::to_string(corpus::corpus_hash(split));
  const fs::path ckpt = cache / (name + "-" + std::to_string(fnv1a(key)) + ".ckpt");
  const fs::path secs = fs::path(ckpt).replace_extension(".seconds");
  if (fs::exists(ckpt) && fs::exists(secs)) {
    Trainer t = Trainer::resume(ckpt.string(), split, cfg);
    if (t.step() == cfg.steps) {
      double s = 0;
      std::ifstream(secs) >> s;
      std::cout << "  [" << name << "] cached " << ckpt.filename().string() << std::endl;
      return {name, t.bundle().clone(), t.log(), s};
    }
  }
  std::cout << "  [" << name << "] training " << cfg.steps << " steps" << std::endl;
  const auto t0 = Clock::now();
  Trainer t(ModelBundle(rc.model, seed), split, cfg);
  t.run(cfg.steps);
  const double s = seconds_since(t0);
  t.save(ckpt.string());
  std::ofstream(secs) << std::setprecision(17) << s << "\n";
  std::cout << "  [" << name << "] done in " << static_cast<int>(s) << "s" << std::endl;
  return {name, t.bundle().clone(), t.log(), s};
}

// ---------------------------------------------------------------------------
// 3. Loss-curve shape.

struct CurveCheck {
  bool pass = false;
  std::string detail;
};

CurveCheck loss_shape(const Run& r) {
  const auto& rows = r.log.rows;
  const std::size_t n = rows.size();
  const std::size_t at = (n / 10 / kLossWindow) * kLossWindow;
  const double reg0 = rows.front().l_reg;
  const double reg_at = r.log.windowed(&TrainLogRow::l_reg, kLossWindow, at, at + kLossWindow).front();
  auto monotone = [&](double TrainLogRow::*col) {
    const auto w = r.log.windowed(col, kLossWindow, 0, n / 2);
    std::size_t ok = 0;
    for (std::size_t i = 0; i + 1 < w.size(); ++i) ok += w[i + 1] <= w[i];
    return static_cast<double>(ok) / static_cast<double>(w.size() - 1);
  };
  const double task = monotone(&TrainLogRow::l_task), recon = monotone(&TrainLogRow::l_recon);
  std::ostringstream d;
  d << r.name << ": reg " << std::setprecision(4) << reg0 << " -> " << reg_at << " at step " << at << "; non-increasing pairs task "
    << pct(100 * task) << "% recon " << pct(100 * recon) << "%; " << static_cast<int>(r.seconds) << "s";
  return {reg_at > reg0 && task >= kMonotoneFraction && recon >= kMonotoneFraction && r.seconds < kRunMinutes * 60, d.str()};
}

double acc(const std::vector<AccuracyRow>& rows, const std::string& kind, const std::string& split, const std::string& method) {
  const auto* r = find_row(rows, kind, split, method);
  return r ? r->accuracy() : 0.0;
}

template <class T>
void append(std::vector<T>& a, const std::vector<T>& b) {
  a.insert(a.end(), b.begin(), b.end());
}

std::vector<EvalRecord> records_of(const std::vector<InductionOutcome>& v) {
  std::vector<EvalRecord> out;
  for (const auto& o : v) out.push_back(o.record);
  return out;
}

// ---------------------------------------------------------------------------
// 9. Determinism: repeated runs, resume and parallel evaluation.

void criterion_determinism(const RunConfig& rc, const corpus::CorpusSplit& split, const fs::path& cache) {
  TrainConfig cfg = rc.train;
  cfg.steps = 30;
  cfg.seed = 5;
  std::vector<std::string> problems;
  Trainer a(ModelBundle(rc.model, 5), split, cfg), b(ModelBundle(rc.model, 5), split, cfg);
  a.run(30);
  b.run(30);
  if (encode_checkpoint(a.to_checkpoint()) != encode_checkpoint(b.to_checkpoint())) problems.push_back("checkpoints differ");
  if (loss_curve_svg(a.log(), 5) != loss_curve_svg(b.log(), 5)) problems.push_back("loss SVGs differ");

  const fs::path mid = cache / "determinism-mid.ckpt";
  Trainer c(ModelBundle(rc.model, 5), split, cfg);
  c.run(15);
  c.save(mid.string());
  Trainer d = Trainer::resume(mid.string(), split, cfg);
  d.run(30);
  if (encode_checkpoint(a.to_checkpoint()) != encode_checkpoint(d.to_checkpoint())) problems.push_back("resume differs");
  fs::remove(mid);

  EvalOptions one, two;
  one.induce = two.induce = rc.induce;
  one.induce.steps = two.induce.steps = 10;
  two.jobs = 2;
  auto tasks = split.by_split(corpus::SplitTag::seen);
  tasks.resize(6);
  const auto t1 = accuracy_csv(aggregate(eval_deduction(a.bundle(), tasks, one)));
  const auto t2 = accuracy_csv(aggregate(eval_deduction(b.bundle(), tasks, two)));
  if (t1 != t2) problems.push_back("deduction tables differ");
  const auto r1 = records_jsonl(eval_reasoning(a.bundle(), tasks, {ReasonMode::sft, ReasonMode::refined}, one));
  const auto r2 = records_jsonl(eval_reasoning(b.bundle(), tasks, {ReasonMode::sft, ReasonMode::refined}, two));
  if (r1 != r2) problems.push_back("reasoning records differ");
  const auto l1 = latents_scatter_svg(collect_latents_parallel(a.bundle(), tasks, one));
  const auto l2 = latents_scatter_svg(collect_latents_parallel(b.bundle(), tasks, two));
  if (l1 != l2) problems.push_back("latent SVGs differ");

  std::string detail = "checkpoints, resume, tables, SVGs, jobs=1 vs 2";
  for (const auto& p : problems) detail += "; " + p;
  verdict(9, "determinism", problems.empty(), detail);
}

// ---------------------------------------------------------------------------
// 10. Corpus soundness.

void criterion_corpus(const RunConfig& rc, const corpus::CorpusSplit& split) {
  const int a = split.alphabet_size;
  std::size_t roundtrip_bad = 0, inconsistent = 0, indistinct = 0, checked = 0;
  const auto tasks = corpus::enumerate_tasks(rc.corpus);
  for (const auto& p : tasks)
    for (int t = 0; t < corpus::kTemplatesPerFamily; ++t) {
      const auto r = corpus::parse_instruction(corpus::render_instruction(p, t).text, a);
      roundtrip_bad += !r || !(*r.program == p);
    }
  for (const auto& t : split.tasks) {
    for (const auto* exs : {&t.train, &t.test})
      for (const auto& ex : *exs) {
        inconsistent += corpus::execute(t.program, ex.instance.x, a) != ex.instance.y;
        ++checked;
      }
  }
  Rng rng(2024);
  std::vector<corpus::Sequence> probes;
  for (int i = 0; i < 200; ++i) probes.push_back(corpus::random_input(rng, a));
  for (std::size_t i = 0; i < tasks.size(); ++i)
    for (std::size_t j = i + 1; j < tasks.size(); ++j) {
      bool differ = false;
      for (const auto& x : probes)
        if (corpus::execute(tasks[i], x, a) != corpus::execute(tasks[j], x, a)) {
          differ = true;
          break;
        }
      indistinct += !differ;
    }
  std::istringstream in(corpus::serialize(split));
  const bool serial = corpus::deserialize(in) == split;
  std::ostringstream d;
  d << tasks.size() << " tasks; round-trip failures " << roundtrip_bad << "; inconsistent " << inconsistent << "/" << checked
    << "; indistinct pairs " << indistinct << "; serialization " << (serial ? "ok" : "mismatch");
  verdict(10, "corpus soundness", roundtrip_bad == 0 && inconsistent == 0 && indistinct == 0 && serial, d.str());
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path cache = argc > 1 ? fs::path(argv[1]) : fs::path("acceptance_cache");
  fs::create_directories(cache);
  const auto t_start = Clock::now();

  criterion_grad_check();
  criterion_kl();

  const RunConfig rc;
  const auto split = corpus::build_split(corpus::enumerate_tasks(rc.corpus), static_cast<int>(rc.train_per_task), 1,
                                         rc.corpus.alphabet_size);
  const auto seen = split.by_split(corpus::SplitTag::seen);
  const auto unseen = split.by_split(corpus::SplitTag::unseen);

  std::vector<Run> runs;
  for (auto s : kSeeds) runs.push_back(trained(cache, "seed" + std::to_string(s), rc, split, s, false, false));
  const Run no_xy = trained(cache, "no-xy", rc, split, kSeeds.front(), true, false);
  const Run no_k = trained(cache, "no-k", rc, split, kSeeds.front(), false, true);

  // 3. Loss curves.
  {
    bool all = true;
    std::string detail;
    for (const auto& r : runs) {
      const auto c = loss_shape(r);
      all = all && c.pass;
      detail += (detail.empty() ? "" : " | ") + c.detail;
    }
    verdict(3, "loss-curve shape on 3 seeds", all, detail);
  }

  EvalOptions opt;
  opt.induce = rc.induce;
  opt.probes = rc.probes;
  std::vector<EvalRecord> ded, ded_first_unseen, ind5, ind1, direct, reasoning, ded_nok, ind_noxy;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto& m = runs[i].bundle;
    opt.induce.seed = kSeeds[i];
    std::cout << "  [" << runs[i].name << "] evaluating" << std::endl;
    const auto d = eval_deduction(m, all_tasks(split), opt);
    append(ded, d);
    if (i == 0)
      for (const auto& r : d)
        if (r.split_tag == "unseen") ded_first_unseen.push_back(r);
    opt.n_demos = 5;
    append(ind5, records_of(eval_induction(m, seen, opt)));
    opt.induce.use_indirect = false;
    append(direct, records_of(eval_induction(m, seen, opt)));
    opt.induce.use_indirect = true;
    opt.n_demos = 1;
    append(ind1, records_of(eval_induction(m, seen, opt)));
    opt.n_demos = 5;
    append(reasoning, eval_reasoning(m, seen, {ReasonMode::sft, ReasonMode::refined, ReasonMode::context}, opt));
  }
  opt.induce.seed = kSeeds.front();
  append(ded_nok, eval_deduction(no_k.bundle, unseen, opt));
  append(ind_noxy, records_of(eval_induction(no_xy.bundle, seen, opt)));

  // 4. Deduction.
  {
    const auto rows = aggregate(ded);
    const double s = acc(rows, "deduction", "seen", "ship"), sz = acc(rows, "deduction", "seen", "zero-z");
    const double u = acc(rows, "deduction", "unseen", "ship"), uz = acc(rows, "deduction", "unseen", "zero-z");
    verdict(4, "deduction efficacy", s >= kSeenDeduction && s - sz >= kSeenGap && u - uz >= kUnseenGap,
            "seen " + pct(s) + " vs zero-z " + pct(sz) + "; unseen " + pct(u) + " vs zero-z " + pct(uz));
  }
  // 5. Induction and its ablations.
  {
    const double full = acc(aggregate(ind5), "induction", "seen", "indirect-n5");
    const double dir = acc(aggregate(direct), "induction", "seen", "direct-n5");
    const double noxy = acc(aggregate(ind_noxy), "induction", "seen", "indirect-n5");
    // The w/o-k model shares the first seed, so it is compared with that run.
    const double u_full = acc(aggregate(ded_first_unseen), "deduction", "unseen", "ship");
    const double u_nok = acc(aggregate(ded_nok), "deduction", "unseen", "ship");
    verdict(5, "induction and ablations",
            full >= kSeenInduction && dir <= kAblatedInduction && noxy <= kAblatedInduction && u_nok < u_full,
            "indirect " + pct(full) + "; w/o indirect " + pct(dir) + "; w/o x,y " + pct(noxy) + "; unseen deduction w/o k " +
                pct(u_nok) + " vs full " + pct(u_full));
  }
  // 6. Few-shot induction.
  {
    const double n5 = acc(aggregate(ind5), "induction", "seen", "indirect-n5");
    const double n1 = acc(aggregate(ind1), "induction", "seen", "indirect-n1");
    verdict(6, "induction with one demo", std::abs(n5 - n1) <= kFewShotGap, "n=1 " + pct(n1) + " vs n=5 " + pct(n5));
  }
  // 7. Reasoning.
  {
    const auto rows = aggregate(reasoning);
    const double ref = acc(rows, "reasoning", "seen", "refined"), sft = acc(rows, "reasoning", "seen", "sft"),
                 ctx = acc(rows, "reasoning", "seen", "context");
    verdict(7, "refined reasoning beats sft and context", ref - sft >= kReasoningMargin && ref - ctx >= kReasoningMargin,
            "refined " + pct(ref) + "; sft " + pct(sft) + "; context " + pct(ctx) + " (" + std::to_string(kSeeds.size()) + " seeds)");
  }
  // 8. Latent distances.
  {
    opt.induce.seed = kSeeds.front();
    const auto report = distance_report(collect_latents_parallel(runs.front().bundle, seen, opt));
    std::ostringstream d;
    d << "mean |z_ref - z_truth| " << report.mean_refined << " vs |z_sft - z_truth| " << report.mean_sft << "; wins "
      << report.refined_wins << "/" << report.n;
    verdict(8, "refined latents nearer the truth", report.mean_refined < report.mean_sft && report.win_fraction() >= kDistanceWins,
            d.str());
  }
  criterion_determinism(rc, split, cache);
  criterion_corpus(rc, split);

  std::cout << "acceptance: " << (10 - failures) << "/10 criteria passed in " << static_cast<int>(seconds_since(t_start)) << "s"
            << std::endl;
  return failures == 0 ? 0 : 1;
}
