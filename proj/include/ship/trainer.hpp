#pragma once

#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ship/checkpoint.hpp"
#include "ship/objective.hpp"
#include "ship/optimizer.hpp"
#include "ship/svg.hpp"

namespace ship {

enum class Sampling { tempered, epoch };

inline const char* sampling_name(Sampling s) { return s == Sampling::tempered ? "tempered" : "epoch"; }
inline Sampling sampling_from_name(const std::string& s) {
  if (s == "tempered") return Sampling::tempered;
  if (s == "epoch") return Sampling::epoch;
  throw Error("unknown sampling scheme '" + s + "'");
}

struct TrainConfig {
  LossWeights weights;
  double lr = 3e-3;
  double weight_decay = 0.0;  // decoupled, matrices only
  OptimizerKind optimizer = OptimizerKind::adam;
  std::size_t batch_size = 32;
  std::size_t steps = 12000;
  std::uint64_t seed = 1;
  bool drop_xy_condition = false;
  bool drop_k_condition = false;
  // Probability that the Task Model sees a triple without its instruction.
  double k_dropout = 0.5;
  // Tempered: task drawn with weight family_size^-temperature, then a random
  // instance. Epoch: shuffled passes over all (task, instance) pairs.
  Sampling sampling = Sampling::tempered;
  double temperature = 0.5;
  std::size_t checkpoint_every = 0;  // 0 disables periodic checkpoints
  std::string checkpoint_path;
  std::size_t log_every = 0;  // progress callback cadence

  bool operator==(const TrainConfig&) const = default;
};

struct TrainLogRow {
  std::size_t step = 0;
  double l_reg = 0, l_task = 0, l_recon = 0, total = 0;
  bool operator==(const TrainLogRow&) const = default;
};

struct TrainLog {
  std::vector<TrainLogRow> rows;
  double wall_seconds = 0.0;

  void append(const TrainLogRow& r) {
    if (!rows.empty() && r.step <= rows.back().step) throw Error("train log: steps must strictly increase");
    rows.push_back(r);
  }

  std::string csv() const {
    std::ostringstream os;
    os << "step,l_reg,l_task,l_recon,total\n" << std::setprecision(17);
    for (const auto& r : rows) os << r.step << ',' << r.l_reg << ',' << r.l_task << ',' << r.l_recon << ',' << r.total << '\n';
    return os.str();
  }

  // Means over consecutive non-overlapping windows of one column.
  std::vector<double> windowed(double TrainLogRow::*col, std::size_t window, std::size_t begin = 0,
                               std::size_t end = static_cast<std::size_t>(-1)) const {
    std::vector<double> out;
    end = std::min(end, rows.size());
    for (std::size_t s = begin; s + window <= end; s += window) {
      double acc = 0.0;
      for (std::size_t i = s; i < s + window; ++i) acc += rows[i].*col;
      out.push_back(acc / static_cast<double>(window));
    }
    return out;
  }
};

class TrainError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Model (de)serialization

inline void put_config(std::map<std::string, std::string>& h, const ModelConfig& c) {
  h["model.alphabet_size"] = std::to_string(c.alphabet_size);
  h["model.d_model"] = std::to_string(c.d_model);
  h["model.m_soft"] = std::to_string(c.m_soft);
  h["model.layers"] = std::to_string(c.layers);
  h["model.heads"] = std::to_string(c.heads);
  h["model.ffn"] = std::to_string(c.ffn);
  h["model.max_positions"] = std::to_string(c.max_positions);
  h["model.max_index"] = std::to_string(c.max_index);
  std::ostringstream a, b;
  a << std::setprecision(17) << c.embed_init;
  b << std::setprecision(17) << c.logvar_init;
  h["model.embed_init"] = a.str();
  h["model.logvar_init"] = b.str();
}

inline ModelConfig get_config(const Checkpoint& ck) {
  ModelConfig c;
  try {
    c.alphabet_size = std::stoi(ck.get("model.alphabet_size"));
    c.d_model = std::stoul(ck.get("model.d_model"));
    c.m_soft = std::stoul(ck.get("model.m_soft"));
    c.layers = std::stoul(ck.get("model.layers"));
    c.heads = std::stoul(ck.get("model.heads"));
    c.ffn = std::stoul(ck.get("model.ffn"));
    c.max_positions = std::stoul(ck.get("model.max_positions"));
    c.max_index = std::stoul(ck.get("model.max_index"));
    c.embed_init = std::stod(ck.get("model.embed_init"));
    c.logvar_init = std::stod(ck.get("model.logvar_init"));
  } catch (const std::logic_error& e) {
    throw CheckpointError(std::string("checkpoint: malformed model config (") + e.what() + ")");
  }
  return c;
}

inline void put_params(Checkpoint& ck, const ModelBundle& m) {
  for (const auto* p : m.params()) ck.blocks.emplace_back("param/" + p->name(), p->value());
}

inline void load_params(ModelBundle& m, const Checkpoint& ck) {
  for (auto* p : m.params()) {
    const Tensor& t = ck.block("param/" + p->name());
    if (t.shape != p->shape())
      throw CheckpointError("checkpoint: shape mismatch for " + p->name() + ": " + shape_str(t.shape) + " vs " +
                            shape_str(p->shape()));
    p->value() = t;
  }
}

inline ModelBundle bundle_from_checkpoint(const Checkpoint& ck) {
  ModelBundle m(get_config(ck), std::stoull(ck.get("model.init_seed")));
  load_params(m, ck);
  return m;
}

inline ModelBundle load_bundle(const std::string& path) { return bundle_from_checkpoint(load_checkpoint(path)); }

// ---------------------------------------------------------------------------

inline std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

// Owns the training state: bundle, optimizer, sampler RNG and log. A run can
// be checkpointed at any step boundary and resumed bit-exactly.
class Trainer {
 public:
  using Progress = std::function<void(const TrainLogRow&)>;

  Trainer(ModelBundle bundle, const corpus::CorpusSplit& split, TrainConfig cfg)
      : bundle_(std::make_unique<ModelBundle>(std::move(bundle))),
        split_(split),
        cfg_(std::move(cfg)),
        opt_(bundle_->params(), cfg_.optimizer, cfg_.lr, cfg_.weight_decay),
        rng_(Rng::derive(cfg_.seed, fnv1a("train-stream"))) {
    if (cfg_.batch_size == 0) throw TrainError("train: batch size must be positive");
    for (const auto& t : split_.tasks) {
      if (t.split != corpus::SplitTag::seen) continue;
      if (t.train.empty()) throw TrainError("train: seen task without training instances");
      seen_.push_back(&t);
    }
    if (seen_.empty()) throw TrainError("train: no seen tasks");
    std::vector<corpus::TaskProgram> programs;
    for (const auto* t : seen_) programs.push_back(t->program);
    for (const auto* t : seen_) {
      weights_.push_back(std::pow(static_cast<double>(corpus::family_size(programs, t->program.family)), -cfg_.temperature));
      std::vector<corpus::TokenList> r;
      for (int tm = 0; tm < corpus::kTemplatesPerFamily; ++tm) r.push_back(corpus::render_instruction(t->program, tm).text);
      renders_.push_back(std::move(r));
    }
    double acc = 0.0;
    for (double w : weights_) cumulative_.push_back(acc += w);
  }

  ModelBundle& bundle() { return *bundle_; }
  const ModelBundle& bundle() const { return *bundle_; }
  const TrainLog& log() const { return log_; }
  const TrainConfig& config() const { return cfg_; }
  std::size_t step() const { return step_; }
  const Rng& rng() const { return rng_; }

  // One optimizer step; returns the logged row.
  TrainLogRow train_step() {
    if (!opt_.grads_zeroed()) throw TrainError("train: gradients not zeroed before step " + std::to_string(step_));
    std::vector<Triple> batch = sample_batch();
    const Tensor eps = standard_normal({batch.size(), bundle_->config().d_z()}, rng_);
    Binder bind(true);
    ObjectiveOptions oo{cfg_.weights, cfg_.drop_xy_condition};
    const ObjectiveResult r = ship_objective(*bundle_, bind, batch, &eps, oo);
    if (!std::isfinite(r.breakdown.total)) abort_non_finite("loss");
    ad::backward(r.total);
    for (auto* p : bundle_->params())
      if (p->node()->has_grad())
        for (double g : p->node()->grad.data)
          if (!std::isfinite(g)) abort_non_finite("gradient of " + p->name());
    opt_.step();
    for (auto* p : bundle_->params())
      for (double v : p->value().data)
        if (!std::isfinite(v)) abort_non_finite("parameter " + p->name());
    opt_.zero_grad();
    TrainLogRow row{step_, r.breakdown.l_reg, r.breakdown.l_task, r.breakdown.l_recon, r.breakdown.total};
    log_.append(row);
    ++step_;
    if (cfg_.checkpoint_every && !cfg_.checkpoint_path.empty() && step_ % cfg_.checkpoint_every == 0) {
      save(cfg_.checkpoint_path);
      last_good_ = cfg_.checkpoint_path;
    }
    return row;
  }

  void run(std::size_t until_step, const Progress& progress = {}) {
    while (step_ < until_step) {
      const auto row = train_step();
      if (progress && cfg_.log_every && (row.step % cfg_.log_every == 0 || step_ == until_step)) progress(row);
    }
  }

  Checkpoint to_checkpoint() const {
    Checkpoint ck;
    auto& h = ck.header;
    put_config(h, bundle_->config());
    h["model.init_seed"] = std::to_string(bundle_->init_seed());
    h["train.seed"] = std::to_string(cfg_.seed);
    h["train.step"] = std::to_string(step_);
    h["train.lr"] = fmt_double(cfg_.lr);
    h["train.optimizer"] = optimizer_name(cfg_.optimizer);
    h["train.weight_decay"] = fmt_double(cfg_.weight_decay);
    h["train.batch_size"] = std::to_string(cfg_.batch_size);
    h["train.steps"] = std::to_string(cfg_.steps);
    h["train.w0"] = fmt_double(cfg_.weights.w0);
    h["train.w1"] = fmt_double(cfg_.weights.w1);
    h["train.w2"] = fmt_double(cfg_.weights.w2);
    h["train.drop_xy_condition"] = cfg_.drop_xy_condition ? "1" : "0";
    h["train.drop_k_condition"] = cfg_.drop_k_condition ? "1" : "0";
    h["train.k_dropout"] = fmt_double(cfg_.k_dropout);
    h["train.sampling"] = sampling_name(cfg_.sampling);
    h["train.temperature"] = fmt_double(cfg_.temperature);
    h["train.corpus_hash"] = std::to_string(corpus::corpus_hash(split_));
    const auto st = rng_.state();
    for (int i = 0; i < 4; ++i) h["train.rng" + std::to_string(i)] = std::to_string(st[static_cast<std::size_t>(i)]);
    h["train.epoch_pos"] = std::to_string(epoch_pos_);
    h["train.optimizer_t"] = std::to_string(opt_.step_count());
    put_params(ck, *bundle_);
    auto& self = const_cast<Trainer&>(*this);
    const auto params = self.bundle_->params();
    for (std::size_t i = 0; i < params.size(); ++i) {
      ck.blocks.emplace_back("adam.m/" + params[i]->name(), self.opt_.first_moments()[i]);
      ck.blocks.emplace_back("adam.v/" + params[i]->name(), self.opt_.second_moments()[i]);
    }
    Tensor order({epoch_order_.size()});
    for (std::size_t i = 0; i < epoch_order_.size(); ++i) order[i] = static_cast<double>(epoch_order_[i]);
    ck.blocks.emplace_back("train.epoch_order", order);
    Tensor lg({log_.rows.size(), 5});
    for (std::size_t i = 0; i < log_.rows.size(); ++i) {
      const auto& r = log_.rows[i];
      for (std::size_t c = 0; c < 5; ++c)
        lg.at(i, c) = std::array<double, 5>{static_cast<double>(r.step), r.l_reg, r.l_task, r.l_recon, r.total}[c];
    }
    ck.blocks.emplace_back("train.log", lg);
    return ck;
  }

  void save(const std::string& path) const { save_checkpoint(to_checkpoint(), path); }

  // Restores a run from a checkpoint. The configuration must match the one
  // stored (apart from the target step count and checkpoint cadence).
  static Trainer resume(const std::string& path, const corpus::CorpusSplit& split, TrainConfig cfg) {
    const Checkpoint ck = load_checkpoint(path);
    auto check = [&](const std::string& key, const std::string& want) {
      if (ck.get(key) != want)
        throw CheckpointError("resume: " + key + " is " + ck.get(key) + " in checkpoint but " + want + " requested");
    };
    check("train.seed", std::to_string(cfg.seed));
    check("train.lr", fmt_double(cfg.lr));
    check("train.optimizer", optimizer_name(cfg.optimizer));
    check("train.weight_decay", fmt_double(cfg.weight_decay));
    check("train.batch_size", std::to_string(cfg.batch_size));
    check("train.drop_xy_condition", cfg.drop_xy_condition ? "1" : "0");
    check("train.drop_k_condition", cfg.drop_k_condition ? "1" : "0");
    check("train.sampling", sampling_name(cfg.sampling));
    check("train.corpus_hash", std::to_string(corpus::corpus_hash(split)));
    Trainer t(bundle_from_checkpoint(ck), split, std::move(cfg));
    t.step_ = std::stoul(ck.get("train.step"));
    std::array<std::uint64_t, 4> st{};
    for (int i = 0; i < 4; ++i) st[static_cast<std::size_t>(i)] = std::stoull(ck.get("train.rng" + std::to_string(i)));
    t.rng_.set_state(st);
    t.epoch_pos_ = std::stoul(ck.get("train.epoch_pos"));
    t.opt_.set_step_count(std::stol(ck.get("train.optimizer_t")));
    const auto params = t.bundle_->params();
    for (std::size_t i = 0; i < params.size(); ++i) {
      t.opt_.first_moments()[i] = ck.block("adam.m/" + params[i]->name());
      t.opt_.second_moments()[i] = ck.block("adam.v/" + params[i]->name());
    }
    for (double v : ck.block("train.epoch_order").data) t.epoch_order_.push_back(static_cast<std::size_t>(v));
    const Tensor& lg = ck.block("train.log");
    for (std::size_t i = 0; i < lg.rows(); ++i)
      t.log_.append({static_cast<std::size_t>(lg.at(i, 0)), lg.at(i, 1), lg.at(i, 2), lg.at(i, 3), lg.at(i, 4)});
    return t;
  }

 private:
  std::vector<Triple> sample_batch() {
    std::vector<Triple> batch;
    for (std::size_t b = 0; b < cfg_.batch_size; ++b) {
      std::size_t ti, ii;
      if (cfg_.sampling == Sampling::tempered) {
        const double u = rng_.uniform() * cumulative_.back();
        ti = static_cast<std::size_t>(std::upper_bound(cumulative_.begin(), cumulative_.end(), u) - cumulative_.begin());
        ti = std::min(ti, seen_.size() - 1);
        ii = rng_.below(seen_[ti]->train.size());
      } else {
        if (epoch_pos_ >= epoch_order_.size()) {
          epoch_order_.clear();
          for (std::size_t t = 0; t < seen_.size(); ++t)
            for (std::size_t i = 0; i < seen_[t]->train.size(); ++i) epoch_order_.push_back(t << 20 | i);
          rng_.shuffle(epoch_order_.begin(), epoch_order_.end());
          epoch_pos_ = 0;
        }
        const std::size_t code = epoch_order_[epoch_pos_++];
        ti = code >> 20;
        ii = code & ((1u << 20) - 1);
      }
      const auto tmpl = rng_.below(corpus::kTemplatesPerFamily);
      const bool use_k = !cfg_.drop_k_condition && rng_.uniform() >= cfg_.k_dropout;
      batch.push_back({&renders_[ti][tmpl], &seen_[ti]->train[ii].instance, use_k});
    }
    return batch;
  }

  [[noreturn]] void abort_non_finite(const std::string& what) const {
    throw TrainError("train: non-finite " + what + " at step " + std::to_string(step_) +
                     (last_good_.empty() ? std::string("; no checkpoint written yet")
                                         : "; last good checkpoint: " + last_good_));
  }

  std::unique_ptr<ModelBundle> bundle_;  // stable address for the optimizer's parameter pointers
  const corpus::CorpusSplit& split_;
  TrainConfig cfg_;
  Optimizer opt_;
  Rng rng_;
  std::size_t step_ = 0;
  TrainLog log_;
  std::vector<const corpus::TaskEntry*> seen_;
  std::vector<double> weights_, cumulative_;
  std::vector<std::vector<corpus::TokenList>> renders_;
  std::vector<std::size_t> epoch_order_;
  std::size_t epoch_pos_ = 0;
  std::string last_good_;
};

inline std::pair<ModelBundle, TrainLog> train(ModelBundle bundle, const corpus::CorpusSplit& split,
                                              const TrainConfig& cfg, const Trainer::Progress& progress = {}) {
  Trainer t(std::move(bundle), split, cfg);
  t.run(cfg.steps, progress);
  return {std::move(t.bundle()), t.log()};
}

// Windowed means of the three loss terms, one labeled series each.
inline std::string loss_curve_svg(const TrainLog& log, std::size_t window = 50) {
  window = std::max<std::size_t>(1, std::min(window, log.rows.size()));
  std::vector<svg::Series> series{{"l_reg (KL)", "#1f77b4", {}, {}},
                                  {"l_task", "#d62728", {}, {}},
                                  {"l_recon", "#2ca02c", {}, {}}};
  const std::array<double TrainLogRow::*, 3> cols{&TrainLogRow::l_reg, &TrainLogRow::l_task, &TrainLogRow::l_recon};
  for (std::size_t c = 0; c < 3; ++c) {
    const auto means = log.windowed(cols[c], window);
    for (std::size_t i = 0; i < means.size(); ++i) {
      series[c].x.push_back(static_cast<double>(i * window));
      series[c].y.push_back(std::log10(std::max(means[i], 1e-6)));
    }
  }
  return svg::line_chart("training losses (window " + std::to_string(window) + ")", "step", "log10 loss", series);
}

}  // namespace ship
