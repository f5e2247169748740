// ship: corpus generation, training, evaluation and latent analysis.
//
//   ship gen     --seed 7 --alphabet 16
//   ship train   [--no-xy-cond] [--no-k-cond] [--steps N]
//   ship eval    deduction | induction [--n-demos N] [--no-indirect] | reasoning [--mode M]...
//   ship analyze [--tasks N]
//
// Every command writes <command>.manifest.json into the output directory.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "ship/config.hpp"
#include "ship/evaluate.hpp"
#include "ship/trainer.hpp"

namespace fs = std::filesystem;
using namespace ship;
using nlohmann::ordered_json;

namespace {

class UsageError : public Error {
 public:
  using Error::Error;
};

struct Shared {
  std::uint64_t seed = 1;
  std::string config_path;
  std::string out_dir;
  std::size_t jobs = 1;
  std::string corpus_path;      // default <out>/corpus.jsonl
  std::string checkpoint_path;  // default <out>/model.ckpt
};

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

class Manifest {
 public:
  Manifest(std::string command, const Shared& s, const RunConfig& rc) : command_(std::move(command)), out_dir_(s.out_dir) {
    j_["command"] = command_;
    ordered_json cfg;
    std::istringstream in(describe(rc));
    for (std::string line; std::getline(in, line);) {
      const auto eq = line.find('=');
      cfg[line.substr(0, eq)] = line.substr(eq + 1);
    }
    j_["config"] = cfg;
    j_["seeds"] = {{"master", s.seed}};
    j_["started"] = utc_now();
    j_["outputs"] = ordered_json::object();
  }
  ordered_json& json() { return j_; }

  // Writes one output file and records it.
  void write(const std::string& key, const std::string& name, const std::string& content) {
    const fs::path p = fs::path(out_dir_) / name;
    std::ofstream out(p, std::ios::binary);
    out << content;
    if (!out) throw Error("cannot write " + p.string());
    j_["outputs"][key] = p.string();
  }
  void record(const std::string& key, const std::string& path) { j_["outputs"][key] = path; }

  void finish() {
    j_["finished"] = utc_now();
    for (const auto& [k, v] : j_["outputs"].items())
      if (!fs::exists(v.get<std::string>())) throw Error("manifest output " + k + " missing: " + v.get<std::string>());
    const fs::path p = fs::path(out_dir_) / (command_ + ".manifest.json");
    std::ofstream out(p);
    out << j_.dump(2) << "\n";
    if (!out) throw Error("cannot write " + p.string());
  }

 private:
  std::string command_, out_dir_;
  ordered_json j_;
};

RunConfig load_config(const Shared& s) {
  RunConfig rc;
  if (!s.config_path.empty()) apply(KeyValues::load(s.config_path), rc);
  return rc;
}

std::string in_out(const Shared& s, const std::string& given, const std::string& name) {
  return given.empty() ? (fs::path(s.out_dir) / name).string() : given;
}

corpus::CorpusSplit read_corpus(const std::string& path) {
  if (!fs::exists(path)) throw UsageError("corpus not found: " + path + " (run `ship gen` first)");
  return corpus::load_split(path);
}

// Loads the bundle and checks that it was trained on this corpus.
ModelBundle read_model(const std::string& path, const corpus::CorpusSplit& split) {
  if (!fs::exists(path)) throw UsageError("checkpoint not found: " + path + " (run `ship train` first)");
  const Checkpoint ck = load_checkpoint(path);
  const std::string want = std::to_string(corpus::corpus_hash(split));
  if (ck.get("train.corpus_hash") != want)
    throw UsageError("checkpoint " + path + " was trained on corpus " + ck.get("train.corpus_hash") + ", not " + want);
  return bundle_from_checkpoint(ck);
}

// ---------------------------------------------------------------------------

int cmd_gen(const Shared& s, std::optional<int> alphabet) {
  RunConfig rc = load_config(s);
  if (alphabet) rc.corpus.alphabet_size = *alphabet;
  corpus::CorpusSplit split;
  try {
    split = corpus::build_split(corpus::enumerate_tasks(rc.corpus), static_cast<int>(rc.train_per_task), s.seed,
                                rc.corpus.alphabet_size);
  } catch (const corpus::CorpusError& e) {
    throw UsageError(e.what());
  }
  Manifest man("gen", s, rc);
  const std::string path = in_out(s, s.corpus_path, "corpus.jsonl");
  corpus::save_split(split, path);
  man.record("corpus", path);
  man.json()["corpus_hash"] = corpus::corpus_hash(split);
  std::cout << "seen tasks:   " << split.by_split(corpus::SplitTag::seen).size() << "\n"
            << "unseen tasks: " << split.by_split(corpus::SplitTag::unseen).size() << "\n"
            << "corpus hash:  " << corpus::corpus_hash(split) << "\n"
            << "wrote " << path << "\n";
  man.finish();
  return 0;
}

int cmd_train(const Shared& s, std::optional<std::size_t> steps, bool no_xy, bool no_k, const std::string& resume) {
  RunConfig rc = load_config(s);
  if (steps) rc.train.steps = *steps;
  rc.train.seed = s.seed;
  rc.train.drop_xy_condition = no_xy;
  rc.train.drop_k_condition = no_k;
  const std::string corpus_path = in_out(s, s.corpus_path, "corpus.jsonl");
  const auto split = read_corpus(corpus_path);
  rc.model.alphabet_size = split.alphabet_size;
  const std::string ckpt = in_out(s, s.checkpoint_path, "model.ckpt");
  rc.train.checkpoint_path = ckpt;
  if (!rc.train.checkpoint_every) rc.train.checkpoint_every = 500;
  if (!rc.train.log_every) rc.train.log_every = 100;

  Manifest man("train", s, rc);
  man.json()["corpus_hash"] = corpus::corpus_hash(split);
  man.json()["ablations"] = {{"no_xy_cond", no_xy}, {"no_k_cond", no_k}};
  Trainer t = resume.empty() ? Trainer(ModelBundle(rc.model, s.seed), split, rc.train) : Trainer::resume(resume, split, rc.train);
  const auto t0 = std::chrono::steady_clock::now();
  try {
    t.run(rc.train.steps, [&](const TrainLogRow& r) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::cout << "step " << r.step << "  l_reg " << r.l_reg << "  l_task " << r.l_task << "  l_recon " << r.l_recon << "  ("
                << static_cast<int>(secs) << "s)" << std::endl;
    });
  } catch (const TrainError& e) {
    std::cerr << "training aborted: " << e.what() << "\n";
    return 3;
  }
  t.save(ckpt);
  man.record("checkpoint", ckpt);
  man.write("loss_csv", "loss.csv", t.log().csv());
  man.write("loss_svg", "loss.svg", loss_curve_svg(t.log()));
  std::cout << "wrote " << ckpt << "\n";
  man.finish();
  return 0;
}

struct EvalFlags {
  std::string kind;
  std::size_t n_demos = 5;
  bool no_indirect = false;
  std::vector<std::string> modes;
  std::string split = "all";
};

int cmd_eval(const Shared& s, const EvalFlags& f) {
  RunConfig rc = load_config(s);
  const std::string corpus_path = in_out(s, s.corpus_path, "corpus.jsonl");
  const auto split = read_corpus(corpus_path);
  const std::string ckpt = in_out(s, s.checkpoint_path, "model.ckpt");
  const ModelBundle m = read_model(ckpt, split);

  EvalOptions opt;
  opt.n_demos = f.n_demos;
  opt.probes = rc.probes;
  opt.jobs = s.jobs;
  opt.induce = rc.induce;
  opt.induce.seed = s.seed;
  opt.induce.use_indirect = !f.no_indirect;

  std::vector<const corpus::TaskEntry*> tasks;
  for (const auto* t : all_tasks(split))
    if (f.split == "all" || f.split == corpus::split_name(t->split)) tasks.push_back(t);

  Manifest man("eval-" + f.kind, s, rc);
  man.json()["corpus_hash"] = corpus::corpus_hash(split);
  man.json()["checkpoint"] = ckpt;
  std::vector<EvalRecord> records;
  std::string stem = f.kind;
  if (f.kind == "deduction") {
    records = eval_deduction(m, tasks, opt);
  } else if (f.kind == "induction") {
    stem += "-" + induction_method(opt);
    std::string details;
    for (auto& o : eval_induction(m, tasks, opt)) {
      records.push_back(o.record);
      details += o.detail.dump() + "\n";
    }
    man.write("induced", stem + ".induced.jsonl", details);
  } else {
    std::vector<ReasonMode> modes;
    for (const auto& name : f.modes) modes.push_back(reason_mode_from_name(name));
    if (modes.empty()) modes = {ReasonMode::sft, ReasonMode::refined, ReasonMode::context};
    records = eval_reasoning(m, tasks, modes, opt);
  }
  const auto rows = aggregate(records);
  man.write("records", stem + ".records.jsonl", records_jsonl(records));
  man.write("table_csv", stem + ".csv", accuracy_csv(rows));
  man.write("table_txt", stem + ".txt", accuracy_text(rows));
  std::cout << accuracy_text(rows);
  man.finish();
  return 0;
}

int cmd_analyze(const Shared& s, std::size_t n_tasks) {
  if (n_tasks < 5) throw UsageError("--tasks must be at least 5 (the distance report needs 5 tasks)");
  RunConfig rc = load_config(s);
  const auto split = read_corpus(in_out(s, s.corpus_path, "corpus.jsonl"));
  const std::string ckpt = in_out(s, s.checkpoint_path, "model.ckpt");
  const ModelBundle m = read_model(ckpt, split);
  auto tasks = split.by_split(corpus::SplitTag::seen);
  if (tasks.size() > n_tasks) tasks.resize(n_tasks);
  EvalOptions opt;
  opt.jobs = s.jobs;
  opt.induce = rc.induce;
  opt.induce.seed = s.seed;
  const auto triples = collect_latents_parallel(m, tasks, opt);
  const auto report = distance_report(triples);

  Manifest man("analyze", s, rc);
  man.json()["checkpoint"] = ckpt;
  Projection proj;
  const std::string svg = latents_scatter_svg(triples, &proj);
  if (!proj.warning.empty()) std::cerr << "warning: " << proj.warning << "\n";
  man.write("latents_csv", "latents.csv", latents_csv(triples));
  man.write("latents_svg", "latents.svg", svg);
  man.write("distances", "distances.txt", report.text());
  std::cout << report.text();
  man.finish();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ship: instructions <-> soft prompts via a variational latent"};
  app.require_subcommand(1);
  Shared s;
  const char* env_out = std::getenv("SHIP_OUT_DIR");
  s.out_dir = env_out ? env_out : "ship_out";
  auto shared = [&](CLI::App* c) {
    c->add_option("--seed", s.seed, "master seed")->capture_default_str();
    c->add_option("--config", s.config_path, "key = value config file")->check(CLI::ExistingFile);
    c->add_option("--out-dir", s.out_dir, "output directory (default $SHIP_OUT_DIR or ./ship_out)");
    c->add_option("--jobs", s.jobs, "parallel per-task jobs")->check(CLI::PositiveNumber)->capture_default_str();
    c->add_option("--corpus", s.corpus_path, "corpus file (default <out-dir>/corpus.jsonl)");
  };
  auto model_opt = [&](CLI::App* c) {
    c->add_option("--checkpoint", s.checkpoint_path, "checkpoint (default <out-dir>/model.ckpt)");
  };

  auto* gen = app.add_subcommand("gen", "generate the task corpus");
  shared(gen);
  std::optional<int> alphabet;
  gen->add_option("--alphabet", alphabet, "data alphabet size");

  auto* train = app.add_subcommand("train", "train encoder, decoder and task model");
  shared(train);
  model_opt(train);
  std::optional<std::size_t> steps;
  bool no_xy = false, no_k = false;
  std::string resume;
  train->add_option("--steps", steps, "optimizer steps");
  train->add_flag("--no-xy-cond", no_xy, "decoder sees no (x, y) condition");
  train->add_flag("--no-k-cond", no_k, "task model never sees the instruction text");
  train->add_option("--resume", resume, "continue from a checkpoint")->check(CLI::ExistingFile);

  auto* eval = app.add_subcommand("eval", "judge deduction, induction or reasoning");
  shared(eval);
  model_opt(eval);
  EvalFlags ef;
  eval->add_option("kind", ef.kind, "deduction | induction | reasoning")
      ->required()
      ->check(CLI::IsMember({"deduction", "induction", "reasoning"}));
  eval->add_option("--n-demos", ef.n_demos, "demonstrations per task")->check(CLI::Range(1, 6))->capture_default_str();
  eval->add_flag("--no-indirect", ef.no_indirect, "optimize z directly instead of the instruction surrogate");
  eval->add_option("--mode", ef.modes, "reasoning mode(s): sft | refined | context")
      ->check(CLI::IsMember({"sft", "refined", "context"}));
  eval->add_option("--split", ef.split, "seen | unseen | all")->check(CLI::IsMember({"seen", "unseen", "all"}))->capture_default_str();

  auto* analyze = app.add_subcommand("analyze", "latent projection and distance report");
  shared(analyze);
  model_opt(analyze);
  std::size_t n_tasks = 20;
  analyze->add_option("--tasks", n_tasks, "number of seen tasks")->capture_default_str();

  CLI11_PARSE(app, argc, argv);
  try {
    fs::create_directories(s.out_dir);
    if (gen->parsed()) return cmd_gen(s, alphabet);
    if (train->parsed()) return cmd_train(s, steps, no_xy, no_k, resume);
    if (eval->parsed()) return cmd_eval(s, ef);
    return cmd_analyze(s, n_tasks);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
