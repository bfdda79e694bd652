#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "topoens/error.hpp"
#include "topoens/risk.hpp"

namespace topoens {

inline constexpr double kEigenvalueFloor = 1e-8;
inline constexpr double kTieTolerance = 1e-12;
inline constexpr std::size_t kMaxEnumerationModels = 12;

// Throws InvariantViolation unless alphas lie on the probability simplex.
inline void ValidateWeights(std::span<const double> alphas) {
  if (alphas.empty()) throw Error(ErrorKind::kInvariantViolation, "empty weight vector");
  double sum = 0.0;
  for (double a : alphas) {
    if (!(a >= -1e-12) || !std::isfinite(a)) {
      throw Error(ErrorKind::kInvariantViolation, "negative or non-finite weight " + std::to_string(a));
    }
    sum += a;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw Error(ErrorKind::kInvariantViolation, "weights sum to " + std::to_string(sum));
  }
}

inline std::vector<double> UniformWeights(std::size_t k) {
  return std::vector<double>(k, 1.0 / static_cast<double>(k));
}

struct QpSolution {
  std::vector<double> weights;
  double objective = 0.0;
  std::vector<std::size_t> active_set;  // indices with zero weight
  double psd_shift = 0.0;
  std::vector<double> repaired_b;       // the B actually optimized, row-major
};

struct PsdRepair {
  std::vector<double> b;
  double shift = 0.0;  // magnitude of the most negative clipped eigenvalue
};

// Symmetric eigenvalue clipping at kEigenvalueFloor. B is returned untouched
// when no eigenvalue needs clipping.
inline PsdRepair RepairPsd(std::span<const double> b, std::size_t k) {
  Eigen::MatrixXd m(k, k);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) m(i, j) = 0.5 * (b[i * k + j] + b[j * k + i]);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
  Eigen::VectorXd values = eig.eigenvalues();
  PsdRepair out;
  if (values.minCoeff() >= kEigenvalueFloor) {
    out.b.resize(k * k);
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j) out.b[i * k + j] = m(i, j);
    }
    return out;
  }
  out.shift = std::max(0.0, -values.minCoeff());
  // Add only the clipping correction so unclipped directions keep B's exact entries.
  Eigen::VectorXd lift(values.size());
  for (Eigen::Index i = 0; i < values.size(); ++i) lift[i] = std::max(kEigenvalueFloor - values[i], 0.0);
  const Eigen::MatrixXd v = eig.eigenvectors();
  Eigen::MatrixXd repaired = m + v * lift.asDiagonal() * v.transpose();
  repaired = 0.5 * (repaired + repaired.transpose()).eval();
  out.b.resize(k * k);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) out.b[i * k + j] = repaired(i, j);
  }
  return out;
}

namespace detail {

inline double Objective(std::span<const double> linear, std::span<const double> b,
                        std::span<const double> alpha) {
  const std::size_t k = alpha.size();
  double lin = 0.0, quad = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    lin += alpha[i] * linear[i];
    double row = 0.0;
    for (std::size_t j = 0; j < k; ++j) row += b[i * k + j] * alpha[j];
    quad += alpha[i] * row;
  }
  return lin + quad;
}

inline double DistanceToUniform(std::span<const double> alpha) {
  const double u = 1.0 / static_cast<double>(alpha.size());
  double d = 0.0;
  for (double a : alpha) d += (a - u) * (a - u);
  return std::sqrt(d);
}

// Clamp tiny negatives, renormalize.
inline void Normalize(std::vector<double>& alpha) {
  double sum = 0.0;
  for (double& a : alpha) {
    if (a < kTieTolerance) a = 0.0;
    sum += a;
  }
  for (double& a : alpha) a /= sum;
}

// Stationary point of the objective restricted to the face {alpha_S >= 0,
// sum alpha_S = 1, alpha_{not S} = 0}; empty when it is not feasible.
// Solved in coordinates alpha_S = u_S + D z with D's columns e_i - e_m; the
// columns sum to exactly zero, so a constant part of B cancels without
// rounding and exchangeable models land exactly on uniform weights.
inline std::vector<double> SolveFace(std::span<const double> linear, std::span<const double> b,
                                     std::span<const std::size_t> support, std::size_t k) {
  const auto m = static_cast<Eigen::Index>(support.size());
  std::vector<double> alpha(k, 0.0);
  if (m == 1) {
    alpha[support[0]] = 1.0;
    return alpha;
  }
  auto bs = [&](Eigen::Index i, Eigen::Index j) { return b[support[i] * k + support[j]]; };
  const double u = 1.0 / static_cast<double>(m);
  // Gradient at u_S.
  Eigen::VectorXd grad(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    double row = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) row += bs(i, j);
    grad[i] = linear[support[i]] + 2.0 * u * row;
  }
  const Eigen::Index last = m - 1;
  Eigen::MatrixXd h(last, last);
  Eigen::VectorXd g(last);
  for (Eigen::Index i = 0; i < last; ++i) {
    g[i] = grad[i] - grad[last];
    for (Eigen::Index j = 0; j < last; ++j) {
      h(i, j) = 2.0 * ((bs(i, j) - bs(i, last)) - (bs(last, j) - bs(last, last)));
    }
  }
  const Eigen::VectorXd z = h.fullPivLu().solve(-g);
  double tail = u;
  for (Eigen::Index i = 0; i < last; ++i) {
    const double x = u + z[i];
    if (!std::isfinite(x) || x < -1e-10) return {};
    alpha[support[i]] = x;
    tail -= z[i];
  }
  if (!std::isfinite(tail) || tail < -1e-10) return {};
  alpha[support[last]] = tail;
  Normalize(alpha);
  return alpha;
}

// Euclidean projection onto the probability simplex.
inline void ProjectToSimplex(std::vector<double>& v) {
  std::vector<double> sorted = v;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double cumulative = 0.0, theta = 0.0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    cumulative += sorted[i];
    const double t = (cumulative - 1.0) / static_cast<double>(i + 1);
    if (sorted[i] - t > 0.0) theta = t;
  }
  for (double& x : v) x = std::max(x - theta, 0.0);
}

struct Candidate {
  std::vector<double> alpha;
  double objective = std::numeric_limits<double>::infinity();
};

// Lower objective wins; within kTieTolerance the one closer to uniform.
inline bool Better(const Candidate& a, const Candidate& b) {
  if (a.objective < b.objective - kTieTolerance) return true;
  if (a.objective > b.objective + kTieTolerance) return false;
  return DistanceToUniform(a.alpha) < DistanceToUniform(b.alpha);
}

inline Candidate Enumerate(std::span<const double> linear, std::span<const double> b, std::size_t k) {
  Candidate best;
  std::vector<std::size_t> support;
  for (std::uint32_t mask = 1; mask < (1u << k); ++mask) {
    support.clear();
    for (std::size_t i = 0; i < k; ++i) {
      if (mask & (1u << i)) support.push_back(i);
    }
    Candidate c;
    c.alpha = SolveFace(linear, b, support, k);
    if (c.alpha.empty()) continue;
    c.objective = Objective(linear, b, c.alpha);
    if (best.alpha.empty() || Better(c, best)) best = std::move(c);
  }
  return best;
}

inline Candidate ProjectedGradient(std::span<const double> linear, std::span<const double> b,
                                   std::size_t k) {
  Eigen::MatrixXd m(k, k);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) m(i, j) = b[i * k + j];
  }
  const double lipschitz =
      std::max(2.0 * Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(m, Eigen::EigenvaluesOnly)
                         .eigenvalues()
                         .maxCoeff(),
               1e-12);
  std::vector<double> alpha = UniformWeights(k), next(k);
  for (int iter = 0; iter < 100000; ++iter) {
    for (std::size_t i = 0; i < k; ++i) {
      double grad = linear[i];
      for (std::size_t j = 0; j < k; ++j) grad += 2.0 * b[i * k + j] * alpha[j];
      next[i] = alpha[i] - grad / lipschitz;
    }
    ProjectToSimplex(next);
    double mapping = 0.0;
    for (std::size_t i = 0; i < k; ++i) mapping += (next[i] - alpha[i]) * (next[i] - alpha[i]);
    alpha.swap(next);
    if (lipschitz * std::sqrt(mapping) < 1e-10) break;
  }
  Normalize(alpha);
  Candidate best{alpha, Objective(linear, b, alpha)};

  // Polish on the identified support.
  std::vector<std::size_t> support;
  for (std::size_t i = 0; i < k; ++i) {
    if (alpha[i] > 0.0) support.push_back(i);
  }
  Candidate polished;
  polished.alpha = SolveFace(linear, b, support, k);
  if (!polished.alpha.empty()) {
    polished.objective = Objective(linear, b, polished.alpha);
    if (Better(polished, best)) best = std::move(polished);
  }
  return best;
}

}  // namespace detail

// Global minimizer of alpha^T (a - c) + alpha^T B' alpha over the simplex,
// B' being B after PSD repair. Exact support enumeration up to
// kMaxEnumerationModels models, projected gradient beyond.
inline QpSolution OptimizeWeights(const RiskModel& risk) {
  risk.CheckShape();
  const std::size_t k = risk.size();
  for (std::size_t i = 0; i < k; ++i) {
    if (!std::isfinite(risk.a[i]) || !std::isfinite(risk.c[i])) {
      throw Error(ErrorKind::kDegenerateInput, "non-finite a or c");
    }
  }
  for (double v : risk.b) {
    if (!std::isfinite(v)) throw Error(ErrorKind::kDegenerateInput, "non-finite B entry");
  }

  QpSolution sol;
  PsdRepair repair = RepairPsd(risk.b, k);
  sol.psd_shift = repair.shift;
  sol.repaired_b = std::move(repair.b);
  std::vector<double> linear(k);
  for (std::size_t i = 0; i < k; ++i) linear[i] = risk.a[i] - risk.c[i];

  detail::Candidate best;
  if (k == 1) {
    best.alpha = {1.0};
  } else if (k <= kMaxEnumerationModels) {
    best = detail::Enumerate(linear, sol.repaired_b, k);
  } else {
    best = detail::ProjectedGradient(linear, sol.repaired_b, k);
  }
  if (best.alpha.empty()) throw Error(ErrorKind::kDegenerateInput, "no feasible stationary point");
  // Uniform weights are the closest feasible point to uniform, so they win any tie.
  detail::Candidate uniform{UniformWeights(k), 0.0};
  uniform.objective = detail::Objective(linear, sol.repaired_b, uniform.alpha);
  if (k > 1 && detail::Better(uniform, best)) best = std::move(uniform);
  sol.weights = std::move(best.alpha);
  sol.objective = detail::Objective(linear, sol.repaired_b, sol.weights);
  for (std::size_t i = 0; i < k; ++i) {
    if (sol.weights[i] == 0.0) sol.active_set.push_back(i);
  }
  ValidateWeights(sol.weights);
  return sol;
}

struct SubsetResult {
  std::vector<std::size_t> models;  // ascending
  QpSolution solution;              // weights aligned with `models`
};

// For each size s: the s models with the largest full-set weights (ties to
// the lower index), re-optimized on their own.
inline std::map<std::size_t, SubsetResult> SelectSubsets(const RiskModel& risk,
                                                         std::span<const std::size_t> sizes) {
  const std::size_t k = risk.size();
  for (std::size_t s : sizes) {
    if (s < 1 || s > k) {
      throw Error(ErrorKind::kSizeOutOfRange,
                  "subset size " + std::to_string(s) + " outside 1.." + std::to_string(k));
    }
  }
  const QpSolution full = OptimizeWeights(risk);
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return full.weights[x] > full.weights[y];
  });

  std::map<std::size_t, SubsetResult> out;
  for (std::size_t s : sizes) {
    SubsetResult r;
    r.models.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(s));
    std::sort(r.models.begin(), r.models.end());
    r.solution = s == k ? full : OptimizeWeights(risk.Restrict(r.models));
    out[s] = std::move(r);
  }
  return out;
}

// Weights file: {"model_ids", "alphas", "objective", "psd_shift", "mode"}.
struct WeightsFile {
  std::vector<std::string> model_ids;
  std::vector<double> alphas;
  double objective = 0.0;
  double psd_shift = 0.0;
  std::string mode;
};

inline nlohmann::json ToJson(const WeightsFile& w) {
  return {{"model_ids", w.model_ids},
          {"alphas", w.alphas},
          {"objective", w.objective},
          {"psd_shift", w.psd_shift},
          {"mode", w.mode}};
}

inline WeightsFile WeightsFromJson(const nlohmann::json& doc) {
  WeightsFile w;
  try {
    w.model_ids = doc.at("model_ids").get<std::vector<std::string>>();
    w.alphas = doc.at("alphas").get<std::vector<double>>();
    w.objective = doc.at("objective").get<double>();
    w.psd_shift = doc.at("psd_shift").get<double>();
    if (doc.contains("mode")) w.mode = doc.at("mode").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kInvariantViolation, std::string("malformed weights file: ") + e.what());
  }
  if (w.model_ids.size() != w.alphas.size()) {
    throw Error(ErrorKind::kDimensionMismatch, "model_ids and alphas differ in length");
  }
  ValidateWeights(w.alphas);
  return w;
}

}  // namespace topoens
