#pragma once

#include <cmath>
#include <vector>

#include "ship/models.hpp"

namespace ship {

struct LossWeights {
  double w0 = 1e-3;  // KL regularizer
  double w1 = 1.0;   // task likelihood
  double w2 = 1.0;   // instruction reconstruction
  bool operator==(const LossWeights&) const = default;
};

struct LossBreakdown {
  double l_reg = 0.0;
  double l_task = 0.0;
  double l_recon = 0.0;
  double total = 0.0;
  LossWeights weights;
};

// KL(N(mu, exp(log_var)) || N(0, I)) summed over latent dims, averaged over rows.
inline Var kl_to_standard_normal(const LatentDistribution& d) {
  const double rows = static_cast<double>(d.mu->value.rows());
  const Var inner = ad::sub(ad::add(ad::mul(d.mu, d.mu), ad::exp(d.log_var)), d.log_var);
  return ad::scale(ad::sub(ad::sum(inner), ad::constant(Tensor::scalar(static_cast<double>(d.mu->value.size())))),
                   0.5 / rows);
}

inline double kl_to_standard_normal(const std::vector<double>& mu, const std::vector<double>& log_var) {
  double s = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) s += 0.5 * (mu[i] * mu[i] + std::exp(log_var[i]) - 1.0 - log_var[i]);
  return s;
}

inline Var total_loss(const Var& l_reg, const Var& l_task, const Var& l_recon, const LossWeights& w,
                      LossBreakdown* out = nullptr) {
  if (w.w0 < 0 || w.w1 < 0 || w.w2 < 0) throw Error("total_loss: weights must be nonnegative");
  const Var total = ad::add(ad::add(ad::scale(l_reg, w.w0), ad::scale(l_task, w.w1)), ad::scale(l_recon, w.w2));
  if (out) {
    out->l_reg = l_reg->value.item();
    out->l_task = l_task->value.item();
    out->l_recon = l_recon->value.item();
    out->total = total->value.item();
    out->weights = w;
  }
  return total;
}

inline LossBreakdown total_loss(double l_reg, double l_task, double l_recon, const LossWeights& w) {
  if (w.w0 < 0 || w.w1 < 0 || w.w2 < 0) throw Error("total_loss: weights must be nonnegative");
  return {l_reg, l_task, l_recon, w.w0 * l_reg + w.w1 * l_task + w.w2 * l_recon, w};
}

// One (k, x, y) training triple. use_k is false when the instruction is
// withheld from the Task Model for this occurrence.
struct Triple {
  const corpus::TokenList* k = nullptr;
  const corpus::Instance* instance = nullptr;
  bool use_k = true;
};

struct ObjectiveOptions {
  LossWeights weights;
  bool drop_xy_condition = false;
};

struct ObjectiveResult {
  Var total;
  Var l_reg, l_task, l_recon;
  LossBreakdown breakdown;
};

// Full objective on a minibatch. eps is [B, D_z] standard-normal noise (one
// sample per triple); nullptr uses z = mu.
inline ObjectiveResult ship_objective(const ModelBundle& m, Binder& bind, const std::vector<Triple>& batch,
                                      const Tensor* eps, const ObjectiveOptions& opt = {}) {
  if (batch.empty()) throw Error("ship_objective: empty batch");
  std::vector<corpus::TokenList> ks;
  for (const auto& t : batch) ks.push_back(*t.k);
  const LatentDistribution dist = encode(m, bind, ks);
  const Var z = sample_latent(dist, eps);

  const double inv_b = 1.0 / static_cast<double>(batch.size());
  std::vector<double> w(batch.size(), inv_b);
  std::vector<TaskExample> tb;
  std::vector<DecoderExample> db;
  for (const auto& t : batch) {
    tb.push_back({{t.use_k ? t.k : nullptr, nullptr}, &t.instance->x, &t.instance->y});
    db.push_back({opt.drop_xy_condition ? nullptr : t.instance, t.k});
  }
  ObjectiveResult r;
  r.l_reg = kl_to_standard_normal(dist);
  r.l_task = task_nll(m, bind, z, tb, w);
  r.l_recon = decoder_nll(m, bind, z, db, w);
  r.total = total_loss(r.l_reg, r.l_task, r.l_recon, opt.weights, &r.breakdown);
  return r;
}

}  // namespace ship
