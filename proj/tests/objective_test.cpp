#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "ship/grad_check.hpp"
#include "ship/objective.hpp"

using namespace ship;

namespace {

// Monte Carlo estimate of E_q[log q(z) - log p(z)] for a diagonal Gaussian q
// against N(0, I).
double kl_monte_carlo(const std::vector<double>& mu, const std::vector<double>& lv, std::size_t samples, Rng& rng) {
  double total = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    double acc = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) {
      const double e = rng.normal();
      const double z = mu[i] + std::exp(0.5 * lv[i]) * e;
      acc += -0.5 * e * e - 0.5 * lv[i] + 0.5 * z * z;
    }
    total += acc;
  }
  return total / static_cast<double>(samples);
}

double uniform_in(Rng& rng, double lo, double hi) { return lo + (hi - lo) * rng.uniform(); }

ModelConfig micro_config() {
  ModelConfig c;
  c.d_model = 8;
  c.m_soft = 2;
  c.layers = 1;
  c.heads = 2;
  c.ffn = 12;
  return c;
}

struct MicroBatch {
  std::vector<corpus::TokenList> ks;
  std::vector<corpus::Instance> instances;
  std::vector<Triple> triples;
};

// Two tasks, two instances each.
MicroBatch micro_batch() {
  MicroBatch b;
  const corpus::TaskProgram rev{corpus::Family::reverse, 0, {}};
  const corpus::TaskProgram swp{corpus::Family::swap_case, 0, {}};
  for (const auto* p : {&rev, &swp})
    for (const char* x : {"abc", "dbca"}) {
      b.ks.push_back(corpus::render_instruction(*p, 0).text);
      b.instances.push_back({x, corpus::execute(*p, x, 16)});
    }
  for (std::size_t i = 0; i < b.ks.size(); ++i) b.triples.push_back({&b.ks[i], &b.instances[i], i % 2 == 0});
  return b;
}

}  // namespace

TEST(Objective, KlOfStandardNormalIsZero) {
  LatentDistribution d{ad::constant(Tensor({2, 5}, 0.0)), ad::constant(Tensor({2, 5}, 0.0))};
  EXPECT_EQ(kl_to_standard_normal(d)->value.item(), 0.0);
  EXPECT_EQ(kl_to_standard_normal(std::vector<double>(5, 0.0), std::vector<double>(5, 0.0)), 0.0);
}

TEST(Objective, KlClosedFormExamples) {
  EXPECT_DOUBLE_EQ(kl_to_standard_normal({1.0, 0.0}, {0.0, 0.0}), 0.5);
  EXPECT_NEAR(kl_to_standard_normal({0.0}, {std::log(4.0)}), 0.5 * (4.0 - 1.0 - std::log(4.0)), 1e-15);
  EXPECT_NEAR(kl_to_standard_normal({0.0}, {std::log(4.0)}), 0.8069, 1e-4);
}

TEST(Objective, KlAveragesOverRows) {
  const Tensor mu = Tensor::matrix(2, 2, {1, 0, 0, 2});
  const Tensor lv = Tensor::matrix(2, 2, {0, 0.5, -1, 0});
  const double expected =
      0.5 * (kl_to_standard_normal({1, 0}, {0, 0.5}) + kl_to_standard_normal({0, 2}, {-1, 0}));
  EXPECT_NEAR(kl_to_standard_normal(LatentDistribution{ad::constant(mu), ad::constant(lv)})->value.item(), expected, 1e-14);
}

TEST(Objective, KlMatchesMonteCarloOracle) {
  Rng rng(2024);
  EXPECT_NEAR(kl_monte_carlo({0.0}, {std::log(4.0)}, 1000000, rng) / 0.8068528194400547, 1.0, 0.01);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> mu(3), lv(3);
    for (auto& v : mu) v = uniform_in(rng, -1.5, 1.5);
    for (auto& v : lv) v = uniform_in(rng, -2.0, 2.0);
    const double exact = kl_to_standard_normal(mu, lv);
    const double mc = kl_monte_carlo(mu, lv, 100000, rng);
    // 1e5 samples per distribution here; the acceptance run uses 1e6.
    EXPECT_NEAR(mc, exact, 0.02 * exact + 0.01) << "trial " << trial;
  }
}

TEST(Objective, KlIsNonnegative) {
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> mu(4), lv(4);
    for (auto& v : mu) v = uniform_in(rng, -3, 3);
    for (auto& v : lv) v = uniform_in(rng, kLogVarMin, kLogVarMax);
    EXPECT_GE(kl_to_standard_normal(mu, lv), 0.0);
  }
}

TEST(Objective, WeightedTotal) {
  const auto b = total_loss(2.0, 1.0, 0.5, LossWeights{1e-3, 1.0, 1.0});
  EXPECT_NEAR(b.total, 1.502, 1e-15);
  EXPECT_EQ(total_loss(2.0, 1.0, 0.5, LossWeights{0, 0, 0}).total, 0.0);
  EXPECT_THROW(total_loss(1.0, 1.0, 1.0, LossWeights{-1, 1, 1}), Error);
  LossBreakdown out;
  const Var t = total_loss(ad::constant(Tensor::scalar(2.0)), ad::constant(Tensor::scalar(1.0)),
                           ad::constant(Tensor::scalar(0.5)), LossWeights{}, &out);
  EXPECT_EQ(t->value.item(), out.total);
  EXPECT_EQ(out.total, 1e-3 * 2.0 + 1.0 + 0.5);
}

TEST(Objective, UniformDecoderGivesLogVocab) {
  ModelBundle m(micro_config(), 1);
  for (auto* p : m.params())
    if (p->name().rfind("dec.head", 0) == 0) p->value() = Tensor(p->shape(), 0.0);
  Binder bind(false);
  const auto k = corpus::split_tokens("reverse the sequence");
  const corpus::Instance c{"ab", "ba"};
  const Var l = decoder_nll(m, bind, ad::constant(Tensor({1, micro_config().d_z()}, 0.0)), {{&c, &k}}, {1.0});
  EXPECT_NEAR(l->value.item(), std::log(static_cast<double>(m.vocab().instruction_outputs().size())), 1e-12);
}

TEST(Objective, FullObjectivePassesGradientCheck) {
  ModelBundle m(micro_config(), 3);
  const MicroBatch b = micro_batch();
  Rng rng(8);
  const Tensor eps = standard_normal({b.triples.size(), micro_config().d_z()}, rng);
  auto f = [&] {
    Binder bind(true);
    return ship_objective(m, bind, b.triples, &eps).total;
  };
  const auto report = ad::grad_check(f, m.params(), {.eps = 1e-5, .tol = 1e-4});
  for (const auto& e : report.entries) EXPECT_TRUE(e.passed) << e.name << " rel " << e.max_rel_error;
  EXPECT_LT(report.max_rel_error, 1e-4);
}

TEST(Objective, GradientIsWeightedSumOfTerms) {
  ModelBundle m(micro_config(), 4);
  const MicroBatch b = micro_batch();
  Rng rng(3);
  const Tensor eps = standard_normal({b.triples.size(), micro_config().d_z()}, rng);
  const LossWeights w{0.3, 1.5, 0.7};
  auto grads = [&](auto pick) {
    for (auto* p : m.params()) p->zero_grad();
    Binder bind(true);
    auto r = ship_objective(m, bind, b.triples, &eps, {w, false});
    ad::backward(pick(r));
    std::vector<Tensor> g;
    for (auto* p : m.params()) g.push_back(p->node()->has_grad() ? p->node()->grad : Tensor(p->shape(), 0.0));
    return g;
  };
  const auto gt = grads([](const ObjectiveResult& r) { return r.total; });
  const auto g0 = grads([](const ObjectiveResult& r) { return r.l_reg; });
  const auto g1 = grads([](const ObjectiveResult& r) { return r.l_task; });
  const auto g2 = grads([](const ObjectiveResult& r) { return r.l_recon; });
  for (std::size_t i = 0; i < gt.size(); ++i)
    for (std::size_t j = 0; j < gt[i].size(); ++j)
      EXPECT_NEAR(gt[i][j], w.w0 * g0[i][j] + w.w1 * g1[i][j] + w.w2 * g2[i][j], 1e-12);
}

TEST(Objective, InvariantToBatchOrder) {
  ModelBundle m(micro_config(), 5);
  const MicroBatch b = micro_batch();
  Rng rng(1);
  const Tensor eps = standard_normal({b.triples.size(), micro_config().d_z()}, rng);
  std::vector<std::size_t> perm{2, 0, 3, 1};
  std::vector<Triple> shuffled;
  Tensor eps2(eps.shape);
  const std::size_t dz = micro_config().d_z();
  for (std::size_t i = 0; i < perm.size(); ++i) {
    shuffled.push_back(b.triples[perm[i]]);
    std::copy_n(eps.data.begin() + static_cast<std::ptrdiff_t>(perm[i] * dz), dz,
                eps2.data.begin() + static_cast<std::ptrdiff_t>(i * dz));
  }
  Binder b1(false), b2(false);
  const double a = ship_objective(m, b1, b.triples, &eps).breakdown.total;
  const double c = ship_objective(m, b2, shuffled, &eps2).breakdown.total;
  EXPECT_NEAR(a, c, 1e-12);
}

TEST(Objective, RegularizerIsNonnegativeOnModel) {
  ModelBundle m(micro_config(), 6);
  const MicroBatch b = micro_batch();
  Binder bind(false);
  const auto r = ship_objective(m, bind, b.triples, nullptr);
  EXPECT_GE(r.breakdown.l_reg, 0.0);
  EXPECT_EQ(r.breakdown.total, r.total->value.item());
}

TEST(Objective, DroppedConditionChangesReconstruction) {
  ModelBundle m(micro_config(), 6);
  const MicroBatch b = micro_batch();
  Binder b1(false), b2(false);
  const auto with = ship_objective(m, b1, b.triples, nullptr, {LossWeights{}, false});
  const auto without = ship_objective(m, b2, b.triples, nullptr, {LossWeights{}, true});
  EXPECT_EQ(with.breakdown.l_task, without.breakdown.l_task);
  EXPECT_NE(with.breakdown.l_recon, without.breakdown.l_recon);
}
