#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ship/autodiff.hpp"

namespace ship {

enum class OptimizerKind { adam, sgd };

inline const char* optimizer_name(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }
inline OptimizerKind optimizer_from_name(const std::string& s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "sgd") return OptimizerKind::sgd;
  throw Error("unknown optimizer '" + s + "'");
}

// Adam (or plain SGD) over a fixed list of parameter blocks. Moment buffers
// are exposed so checkpoints can restore them exactly. Weight decay is
// decoupled and touches matrices only; biases and norm gains are exempt.
class Optimizer {
 public:
  Optimizer(std::vector<ad::ParamBlock*> params, OptimizerKind kind, double lr, double weight_decay = 0.0,
            double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), kind_(kind), lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
    for (auto* p : params_) {
      m_.emplace_back(p->shape(), 0.0);
      v_.emplace_back(p->shape(), 0.0);
    }
  }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      ad::Node& n = *params_[i]->node();
      if (!n.has_grad()) continue;
      auto& x = n.value.data;
      const auto& g = n.grad.data;
      if (wd_ > 0.0 && n.value.shape.size() == 2)
        for (double& w : x) w -= lr_ * wd_ * w;
      if (kind_ == OptimizerKind::sgd) {
        for (std::size_t j = 0; j < x.size(); ++j) x[j] -= lr_ * g[j];
        continue;
      }
      auto& m = m_[i].data;
      auto& v = v_[i].data;
      for (std::size_t j = 0; j < x.size(); ++j) {
        m[j] = b1_ * m[j] + (1.0 - b1_) * g[j];
        v[j] = b2_ * v[j] + (1.0 - b2_) * g[j] * g[j];
        x[j] -= lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
      }
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }
  bool grads_zeroed() const {
    for (auto* p : params_)
      if (!p->grad_is_zero()) return false;
    return true;
  }

  OptimizerKind kind() const { return kind_; }
  double lr() const { return lr_; }
  double weight_decay() const { return wd_; }
  long step_count() const { return t_; }
  void set_step_count(long t) { t_ = t; }
  std::vector<Tensor>& first_moments() { return m_; }
  std::vector<Tensor>& second_moments() { return v_; }

 private:
  std::vector<ad::ParamBlock*> params_;
  OptimizerKind kind_;
  double lr_, wd_, b1_, b2_, eps_;
  long t_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace ship
