#pragma once

// Latent-space analysis: ground-truth, SFT and refined latents per task,
// PCA projection and distance statistics.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "ship/inference.hpp"
#include "ship/svg.hpp"

namespace ship {

struct LatentTriple {
  std::string task_id;
  std::string split_tag;
  std::vector<double> z_truth, z_sft, z_refined;
};

// One triple per task: z_truth is the mean of Enc(annotated k); z_sft and
// z_refined come from induction on the task's first demos_per_task demos.
inline std::vector<LatentTriple> collect_latents(const ModelBundle& m, const std::vector<const corpus::TaskEntry*>& tasks,
                                                 std::size_t demos_per_task, const InduceOptions& opt) {
  std::vector<LatentTriple> out;
  for (const auto* t : tasks) {
    LatentTriple tr;
    tr.task_id = t->program.task_id();
    tr.split_tag = corpus::split_name(t->split);
    tr.z_truth = encode_mean(m, {t->annotated_instruction().text}).data;
    const auto demos = make_demos(*t, demos_per_task, m.config().alphabet_size);
    const auto r = induce(m, demos, opt);
    tr.z_sft = r.z_star.data;
    tr.z_refined = refined_latent(m, r).data;
    out.push_back(std::move(tr));
  }
  return out;
}

struct Projection {
  std::vector<std::array<double, 2>> coords;
  std::array<double, 2> variance{0, 0};
  bool degenerate = false;
  std::string warning;
};

// Top-two principal components after mean-centering. Each component's sign
// is fixed so that its largest-magnitude loading is positive.
inline Projection project_2d(const std::vector<std::vector<double>>& vectors) {
  if (vectors.size() < 3) throw Error("project_2d: at least 3 vectors required");
  const auto n = static_cast<Eigen::Index>(vectors.size());
  const auto d = static_cast<Eigen::Index>(vectors.front().size());
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (static_cast<Eigen::Index>(vectors[static_cast<std::size_t>(i)].size()) != d)
      throw ShapeError("project_2d: vectors differ in dimension");
    for (Eigen::Index j = 0; j < d; ++j) x(i, j) = vectors[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
  x.rowwise() -= x.colwise().mean();
  Projection p;
  p.coords.assign(vectors.size(), {0.0, 0.0});
  if (x.cwiseAbs().maxCoeff() == 0.0) {
    p.degenerate = true;
    p.warning = "project_2d: all vectors identical; returning zero coordinates";
    return p;
  }
  const Eigen::MatrixXd cov = x.transpose() * x / static_cast<double>(std::max<Eigen::Index>(n - 1, 1));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  for (int c = 0; c < 2 && c < d; ++c) {
    Eigen::VectorXd v = es.eigenvectors().col(d - 1 - c);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    const Eigen::VectorXd proj = x * v;
    for (Eigen::Index i = 0; i < n; ++i) p.coords[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)] = proj(i);
    p.variance[static_cast<std::size_t>(c)] = std::max(0.0, es.eigenvalues()(d - 1 - c));
  }
  return p;
}

struct DistanceReport {
  std::size_t n = 0;
  double mean_sft = 0, median_sft = 0, mean_refined = 0, median_refined = 0;
  std::size_t refined_wins = 0;
  double win_fraction() const { return n ? static_cast<double>(refined_wins) / static_cast<double>(n) : 0.0; }

  std::string text() const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    os << "tasks                      " << n << "\n";
    os << "mean   |z_sft - z_truth|     " << mean_sft << "\n";
    os << "median |z_sft - z_truth|     " << median_sft << "\n";
    os << "mean   |z_refined - z_truth| " << mean_refined << "\n";
    os << "median |z_refined - z_truth| " << median_refined << "\n";
    os << "refined closer              " << refined_wins << "/" << n << " (" << std::setprecision(2)
       << 100.0 * win_fraction() << "%)\n";
    return os.str();
  }
};

inline double l2_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline DistanceReport distance_report(const std::vector<LatentTriple>& triples) {
  if (triples.size() < 5) throw Error("distance_report: at least 5 triples required, got " + std::to_string(triples.size()));
  DistanceReport r;
  r.n = triples.size();
  std::vector<double> ds, dr;
  for (const auto& t : triples) {
    ds.push_back(l2_distance(t.z_sft, t.z_truth));
    dr.push_back(l2_distance(t.z_refined, t.z_truth));
    if (dr.back() < ds.back()) ++r.refined_wins;
  }
  // Sorted before summing so the result does not depend on task order.
  auto mean = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  r.mean_sft = mean(ds);
  r.mean_refined = mean(dr);
  r.median_sft = median(ds);
  r.median_refined = median(dr);
  return r;
}

inline std::string latents_csv(const std::vector<LatentTriple>& triples) {
  std::ostringstream os;
  os << std::setprecision(17);
  const std::size_t dz = triples.empty() ? 0 : triples.front().z_truth.size();
  os << "task_id,kind";
  for (std::size_t i = 0; i < dz; ++i) os << ",z" << i;
  os << '\n';
  for (const auto& t : triples) {
    const std::pair<const char*, const std::vector<double>*> rows[] = {
        {"truth", &t.z_truth}, {"sft", &t.z_sft}, {"refined", &t.z_refined}};
    for (const auto& [kind, v] : rows) {
      os << t.task_id << ',' << kind;
      for (double x : *v) os << ',' << x;
      os << '\n';
    }
  }
  return os.str();
}

inline std::string latents_scatter_svg(const std::vector<LatentTriple>& triples, Projection* out = nullptr) {
  std::vector<std::vector<double>> all;
  for (const auto& t : triples) {
    all.push_back(t.z_truth);
    all.push_back(t.z_sft);
    all.push_back(t.z_refined);
  }
  const Projection p = project_2d(all);
  std::vector<svg::PointSet> sets{{"ground truth", "#1f77b4", svg::Marker::circle, {}, {}},
                                  {"SFT", "#d62728", svg::Marker::square, {}, {}},
                                  {"refined", "#2ca02c", svg::Marker::triangle, {}, {}}};
  for (std::size_t i = 0; i < all.size(); ++i) {
    sets[i % 3].x.push_back(p.coords[i][0]);
    sets[i % 3].y.push_back(p.coords[i][1]);
  }
  if (out) *out = p;
  return svg::scatter("Latent z (PCA projection)", sets);
}

}  // namespace ship
