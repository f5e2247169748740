#include <gtest/gtest.h>

#include <cmath>

#include "ship/analysis.hpp"

using namespace ship;

namespace {

LatentTriple triple(const std::string& id, std::vector<double> truth, std::vector<double> sft, std::vector<double> refined) {
  return {id, "seen", std::move(truth), std::move(sft), std::move(refined)};
}

std::vector<LatentTriple> five_triples() {
  std::vector<LatentTriple> t;
  for (int i = 0; i < 5; ++i) {
    const double v = i;
    t.push_back(triple("t" + std::to_string(i), {v, 0, 0}, {v + 2, 0, 0}, {v, i == 4 ? 3.0 : 1.0, 0}));
  }
  return t;
}

}  // namespace

TEST(Analysis, RankTwoPointsAreReconstructed) {
  // Points on the plane spanned by u and w inside R^6.
  const std::vector<double> u{1, 2, 0, -1, 0, 1}, w{0, 1, 1, 1, -2, 0};
  std::vector<std::vector<double>> pts;
  for (int i = 0; i < 8; ++i) {
    const double a = std::sin(i * 1.3) * 3, b = std::cos(i * 0.7);
    std::vector<double> p(6);
    for (int j = 0; j < 6; ++j) p[static_cast<std::size_t>(j)] = 0.5 + a * u[static_cast<std::size_t>(j)] + b * w[static_cast<std::size_t>(j)];
    pts.push_back(p);
  }
  const Projection p = project_2d(pts);
  EXPECT_FALSE(p.degenerate);
  EXPECT_GE(p.variance[0], p.variance[1]);
  // Pairwise distances are preserved exactly by a rank-2 projection.
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = i + 1; j < pts.size(); ++j) {
      const double d2 = std::hypot(p.coords[i][0] - p.coords[j][0], p.coords[i][1] - p.coords[j][1]);
      EXPECT_NEAR(d2, l2_distance(pts[i], pts[j]), 1e-9);
    }
}

TEST(Analysis, IdenticalVectorsGiveZerosAndWarning) {
  const Projection p = project_2d({{1, 2, 3}, {1, 2, 3}, {1, 2, 3}});
  EXPECT_TRUE(p.degenerate);
  EXPECT_FALSE(p.warning.empty());
  for (const auto& c : p.coords) EXPECT_EQ(c, (std::array<double, 2>{0, 0}));
}

TEST(Analysis, ProjectionNeedsThreeVectors) {
  EXPECT_THROW(project_2d({{1, 2}, {3, 4}}), Error);
}

TEST(Analysis, SignConventionIsDeterministic) {
  const std::vector<std::vector<double>> a{{1, 0, 0}, {-1, 0.1, 0}, {3, 0, 0.2}, {-3, -0.1, 0}};
  std::vector<std::vector<double>> neg;
  for (const auto& v : a) neg.push_back({-v[0], -v[1], -v[2]});
  const auto pa = project_2d(a), pn = project_2d(neg);
  // Negating the data flips the coordinates but not the component directions.
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(pa.coords[i][0], -pn.coords[i][0], 1e-12);
  EXPECT_EQ(project_2d(a).coords, pa.coords);
}

TEST(Analysis, DistanceReport) {
  const auto r = distance_report(five_triples());
  EXPECT_EQ(r.n, 5u);
  EXPECT_DOUBLE_EQ(r.mean_sft, 2.0);
  EXPECT_DOUBLE_EQ(r.median_sft, 2.0);
  EXPECT_DOUBLE_EQ(r.mean_refined, 7.0 / 5.0);
  EXPECT_DOUBLE_EQ(r.median_refined, 1.0);
  EXPECT_EQ(r.refined_wins, 4u);
  EXPECT_DOUBLE_EQ(r.win_fraction(), 0.8);
  EXPECT_NE(r.text().find("4/5"), std::string::npos);
}

TEST(Analysis, ExactRefinedLatentHasZeroDistance) {
  auto t = five_triples();
  for (auto& x : t) x.z_refined = x.z_truth;
  const auto r = distance_report(t);
  EXPECT_EQ(r.mean_refined, 0.0);
  EXPECT_EQ(r.refined_wins, 5u);
}

TEST(Analysis, ReportIsPermutationInvariant) {
  auto t = five_triples();
  const std::string a = distance_report(t).text();
  std::reverse(t.begin(), t.end());
  std::swap(t[1], t[3]);
  EXPECT_EQ(distance_report(t).text(), a);
}

TEST(Analysis, ReportNeedsFiveTriples) {
  auto t = five_triples();
  t.pop_back();
  EXPECT_THROW(distance_report(t), Error);
}

TEST(Analysis, CsvAndScatter) {
  const auto t = five_triples();
  const std::string csv = latents_csv(t);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "task_id,kind,z0,z1,z2");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 16);
  Projection p;
  const std::string svg = latents_scatter_svg(t, &p);
  EXPECT_EQ(p.coords.size(), 15u);
  EXPECT_NE(svg.find("<circle"), std::string::npos);
  EXPECT_NE(svg.find("<rect x"), std::string::npos);
  EXPECT_NE(svg.find("<polygon"), std::string::npos);
  EXPECT_EQ(svg, latents_scatter_svg(t));
}

TEST(Analysis, CollectLatentsOnUntrainedModel) {
  ModelConfig c;
  c.d_model = 8;
  c.m_soft = 2;
  c.layers = 1;
  c.heads = 2;
  c.ffn = 16;
  ModelBundle m(c, 1);
  corpus::CorpusSplit s;
  s.tasks.push_back(corpus::make_task_entry({corpus::Family::reverse, 0, {}}, corpus::SplitTag::seen, 8, 1, 16));
  s.tasks.push_back(corpus::make_task_entry({corpus::Family::sort, 0, {}}, corpus::SplitTag::seen, 8, 1, 16));
  InduceOptions o;
  o.steps = 5;
  const auto a = collect_latents(m, s.by_split(corpus::SplitTag::seen), 3, o);
  const auto b = collect_latents(m, s.by_split(corpus::SplitTag::seen), 3, o);
  ASSERT_EQ(a.size(), 2u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].z_truth.size(), c.d_z());
    EXPECT_EQ(a[i].z_sft.size(), c.d_z());
    EXPECT_EQ(a[i].z_refined.size(), c.d_z());
    EXPECT_EQ(a[i].z_sft, b[i].z_sft);
    EXPECT_EQ(a[i].z_refined, b[i].z_refined);
  }
  EXPECT_NE(a[0].z_truth, a[1].z_truth);
}
