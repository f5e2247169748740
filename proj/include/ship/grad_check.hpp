#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "ship/autodiff.hpp"
#include "ship/rng.hpp"

namespace ship::ad {

struct GradCheckEntry {
  std::string name;
  std::size_t checked = 0;
  std::size_t worst_index = 0;
  double max_rel_error = 0.0;
  double analytic = 0.0;  // at worst_index
  double numeric = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  bool passed = true;
};

struct GradCheckOptions {
  double eps = 1e-5;
  double tol = 1e-4;
  // Gradients smaller than this are compared on an absolute scale.
  double floor = 1e-6;
  // 0 checks every entry; otherwise a seeded sample of this many per block.
  std::size_t max_entries_per_param = 0;
  std::uint64_t seed = 0;
};

// Compares reverse-mode gradients of a scalar function against central
// finite differences. `f` must rebuild its graph from the current parameter
// values on every call and be deterministic.
inline GradCheckReport grad_check(const std::function<Var()>& f, const std::vector<ParamBlock*>& params,
                                  const GradCheckOptions& opt = {}) {
  if (!(opt.eps >= 1e-6 && opt.eps <= 1e-3)) throw Error("grad_check: eps must lie in [1e-6, 1e-3]");
  auto eval = [&](const char* when) {
    Var out = f();
    const double v = out->value.item();
    if (!std::isfinite(v)) throw Error(std::string("grad_check: non-finite function value ") + when);
    return out;
  };

  for (auto* p : params) p->zero_grad();
  Var root = eval("at the base point");
  backward(root);
  std::vector<Tensor> analytic;
  for (auto* p : params) {
    analytic.push_back(p->node()->has_grad() ? p->node()->grad : Tensor(p->shape(), 0.0));
    p->zero_grad();
  }

  GradCheckReport report;
  Rng rng(opt.seed);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    ParamBlock& p = *params[pi];
    std::vector<std::size_t> idx(p.numel());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (opt.max_entries_per_param && idx.size() > opt.max_entries_per_param) {
      rng.shuffle(idx.begin(), idx.end());
      idx.resize(opt.max_entries_per_param);
      std::sort(idx.begin(), idx.end());
    }
    GradCheckEntry e;
    e.name = p.name();
    for (std::size_t i : idx) {
      double& x = p.value()[i];
      const double saved = x;
      x = saved + opt.eps;
      const double fp = eval("under +eps perturbation")->value.item();
      x = saved - opt.eps;
      const double fm = eval("under -eps perturbation")->value.item();
      x = saved;
      const double num = (fp - fm) / (2.0 * opt.eps);
      const double ana = analytic[pi][i];
      const double denom = std::max({std::abs(ana), std::abs(num), opt.floor});
      const double rel = std::abs(ana - num) / denom;
      ++e.checked;
      if (rel >= e.max_rel_error) {
        e.max_rel_error = rel;
        e.worst_index = i;
        e.analytic = ana;
        e.numeric = num;
      }
    }
    e.passed = e.max_rel_error < opt.tol;
    report.max_rel_error = std::max(report.max_rel_error, e.max_rel_error);
    report.passed = report.passed && e.passed;
    report.entries.push_back(std::move(e));
  }
  return report;
}

}  // namespace ship::ad
