// SPDX-License-Identifier: Apache-2.0
//
// Test-side reference computations. Nothing here calls the autodiff ops: each
// oracle recomputes a quantity from plain loops or dense matrices.

#pragma once

#include "krlm/kg.hpp"
#include "krlm/params.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

namespace oracle {

using krlm::Matrix;

inline Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// Relational graph by enumerating every ordered pair of distinct triplet
// occurrences.
inline std::set<std::tuple<int, int, int>> relational_edges(const krlm::KnowledgeGraph& kg) {
  std::set<std::tuple<int, int, int>> out;
  const auto& ts = kg.triplets();
  for (std::size_t a = 0; a < ts.size(); ++a) {
    for (std::size_t b = 0; b < ts.size(); ++b) {
      if (a == b) continue;
      const auto& x = ts[a];
      const auto& y = ts[b];
      if (x.head == y.head) out.emplace(x.rel, 1, y.rel);
      if (x.tail == y.tail) out.emplace(x.rel, 3, y.rel);
      if (x.head == y.tail) out.emplace(x.rel, 0, y.rel);
      if (x.tail == y.head) out.emplace(x.rel, 2, y.rel);
    }
  }
  return out;
}

inline Matrix layer_norm(const Matrix& x, double eps = 1e-5) {
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double mean = 0.0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) mean += x(i, j);
    mean /= static_cast<double>(x.cols());
    double var = 0.0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) var += (x(i, j) - mean) * (x(i, j) - mean);
    var /= static_cast<double>(x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) out(i, j) = (x(i, j) - mean) / std::sqrt(var + eps);
  }
  return out;
}

inline Matrix relu(Matrix x) { return x.cwiseMax(0.0); }

inline Matrix add_row(Matrix x, const Matrix& row) {
  for (Eigen::Index i = 0; i < x.rows(); ++i) x.row(i) += row.row(0);
  return x;
}

// Sum over relation types of A_r * X * diag(rel_r), with A_r[dst, src] the edge count.
inline Matrix dense_propagate(const Matrix& x, const Matrix& rel, std::span<const krlm::TypedEdge> edges,
                              Eigen::Index n_out) {
  Matrix out = Matrix::Zero(n_out, x.cols());
  for (Eigen::Index r = 0; r < rel.rows(); ++r) {
    Matrix a = Matrix::Zero(n_out, x.rows());
    for (const auto& e : edges) {
      if (e.type == r) a(e.dst, e.src) += 1.0;
    }
    out += a * x * rel.row(r).asDiagonal();
  }
  return out;
}

inline Matrix gnn_update(const krlm::ParameterStore& store, const std::string& prefix, const Matrix& self,
                         const Matrix& agg) {
  Matrix cat(self.rows(), self.cols() + agg.cols());
  cat << self, agg;
  Matrix z = add_row(cat * store.get(prefix + ".weight").value, store.get(prefix + ".bias").value);
  z = layer_norm(z);
  z = z * store.get(prefix + ".norm_gain").value.row(0).asDiagonal();
  return relu(add_row(z, store.get(prefix + ".norm_shift").value));
}

inline Matrix mlp(const krlm::ParameterStore& store, const std::string& prefix, const Matrix& x) {
  Matrix h = relu(add_row(x * store.get(prefix + ".w1").value, store.get(prefix + ".b1").value));
  return add_row(h * store.get(prefix + ".w2").value, store.get(prefix + ".b2").value);
}

inline Matrix relation_gnn(const krlm::ParameterStore& store, const std::string& prefix,
                           const krlm::RelationalGraph& rg, int query_rel, int layers, int d) {
  Matrix h = Matrix::Zero(rg.node_count, d);
  h.row(query_rel).setOnes();
  const Matrix& patterns = store.get(prefix + ".patterns").value;
  for (int s = 0; s < layers; ++s) {
    h = gnn_update(store, prefix + ".layer" + std::to_string(s) + ".update", h,
                   dense_propagate(h, patterns, rg.edges, rg.node_count));
  }
  return h;
}

inline Matrix entity_gnn(const krlm::ParameterStore& store, const std::string& prefix, const Matrix& init,
                         const Matrix& relations, std::span<const krlm::TypedEdge> edges, int layers) {
  Matrix h = init;
  for (int s = 0; s < layers; ++s) {
    const std::string p = prefix + ".layer" + std::to_string(s);
    const Matrix rel = mlp(store, p + ".rel_mlp", relations);
    h = gnn_update(store, p + ".update", h, dense_propagate(h, rel, edges, init.rows()));
  }
  return h;
}

// Population standard deviation by the two-pass formula.
inline double two_pass_std(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

// Attribute-aware pooling: rows of `table` at `ids`, projected by w_down, the
// column mean, max, min and two-pass std concatenated, then times w_fusion.
inline Matrix paa(const Matrix& table, const std::vector<int>& ids, const Matrix& w_down, const Matrix& w_fusion) {
  const Eigen::Index d = w_down.cols();
  Matrix stats(1, 4 * d);
  for (Eigen::Index c = 0; c < d; ++c) {
    std::vector<double> col;
    for (int id : ids) col.push_back(table.row(id).dot(w_down.col(c)));
    double mean = 0.0;
    for (double v : col) mean += v;
    stats(0, c) = mean / static_cast<double>(col.size());
    stats(0, d + c) = *std::max_element(col.begin(), col.end());
    stats(0, 2 * d + c) = *std::min_element(col.begin(), col.end());
    stats(0, 3 * d + c) = two_pass_std(col);
  }
  return stats * w_fusion;
}

inline double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

// Binary cross-entropy from probabilities: -log p+ - mean log(1 - p-).
inline double bce_from_probs(const std::vector<double>& logits) {
  auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  double neg = 0.0;
  for (std::size_t i = 1; i < logits.size(); ++i) neg += std::log(1.0 - sig(logits[i]));
  return -std::log(sig(logits[0])) - neg / static_cast<double>(logits.size() - 1);
}

inline std::vector<double> softmax(const std::vector<double>& x) {
  const double mx = *std::max_element(x.begin(), x.end());
  std::vector<double> p(x.size());
  double z = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) z += (p[i] = std::exp(x[i] - mx));
  for (double& v : p) v /= z;
  return p;
}

inline double kl(const std::vector<double>& p_logits, const std::vector<double>& q_logits) {
  const auto p = softmax(p_logits);
  const auto q = softmax(q_logits);
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += p[i] * (std::log(p[i]) - std::log(q[i]));
  return s;
}

// Rank by sorting all entities on (score desc, id asc) and locating the answer
// among the non-excluded ones.
inline int sort_rank(const std::vector<double>& scores, int answer, const std::vector<char>* excluded) {
  std::vector<int> ids;
  for (int e = 0; e < static_cast<int>(scores.size()); ++e) {
    if (e == answer || excluded == nullptr || !(*excluded)[static_cast<std::size_t>(e)]) ids.push_back(e);
  }
  std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) {
    if (scores[static_cast<std::size_t>(a)] != scores[static_cast<std::size_t>(b)]) {
      return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
    }
    return a < b;
  });
  return static_cast<int>(std::find(ids.begin(), ids.end(), answer) - ids.begin()) + 1;
}

// Expected reciprocal rank of a uniformly random rank over n candidates.
inline double random_mrr(int n) {
  double s = 0.0;
  for (int r = 1; r <= n; ++r) s += 1.0 / r;
  return s / n;
}

}  // namespace oracle
