#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "topoens/error.hpp"
#include "topoens/tensor_io.hpp"

namespace topoens {

// Convex combination of aligned prediction sets.
inline PredictionSet EnsemblePredict(const std::vector<PredictionSet>& preds,
                                     std::span<const double> alphas) {
  if (preds.empty() || alphas.size() != preds.size()) {
    throw Error(ErrorKind::kDimensionMismatch, std::to_string(alphas.size()) + " weights for " +
                                                   std::to_string(preds.size()) + " models");
  }
  const auto& first = preds.front();
  for (const auto& p : preds) {
    if (p.num_classes != first.num_classes || p.sample_ids != first.sample_ids ||
        p.labels != first.labels) {
      throw Error(ErrorKind::kMisaligned, "prediction sets disagree on samples or labels");
    }
  }
  PredictionSet out;
  out.num_classes = first.num_classes;
  out.sample_ids = first.sample_ids;
  out.labels = first.labels;
  out.probs.assign(first.probs.size(), 0.0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    for (std::size_t e = 0; e < out.probs.size(); ++e) out.probs[e] += alphas[i] * preds[i].probs[e];
  }
  for (std::size_t s = 0; s < out.size(); ++s) {
    double sum = 0.0;
    for (double p : out.row(s)) sum += p;
    if (std::abs(sum - 1.0) > 1e-6) {
      throw Error(ErrorKind::kInvariantViolation,
                  "ensemble row of sample '" + out.sample_ids[s] + "' sums to " + std::to_string(sum));
    }
  }
  return out;
}

// Argmax with ties to the lower class index.
inline int PredictedClass(std::span<const double> row) {
  return static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
}

inline double MaxProb(std::span<const double> row) {
  return *std::max_element(row.begin(), row.end());
}

inline double Accuracy(const PredictionSet& preds) {
  if (preds.size() == 0) throw Error(ErrorKind::kEmptySample, "accuracy of an empty set");
  std::size_t correct = 0;
  for (std::size_t s = 0; s < preds.size(); ++s) {
    correct += PredictedClass(preds.row(s)) == preds.labels[s] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(preds.size());
}

// What a(tau) means when no sample has uncertainty <= tau.
enum class EmptyRetainedPolicy {
  kPerfect,  // accuracy 1.0
  kSkip,     // segment excluded; AURC is averaged over the remaining width
};

struct CurvePoint {
  double tau;
  double accuracy;
  double retained_fraction;
  bool empty;  // no sample retained at this tau
};

// Step function a(tau) = accuracy over samples with 1 - MaxProb <= tau,
// right-continuous, sampled at 0, every distinct uncertainty and 1.
struct RejectionCurve {
  std::vector<CurvePoint> points;
};

inline RejectionCurve ComputeRejectionCurve(const PredictionSet& preds,
                                            EmptyRetainedPolicy policy = EmptyRetainedPolicy::kPerfect) {
  const std::size_t n = preds.size();
  if (n == 0) throw Error(ErrorKind::kEmptySample, "rejection curve of an empty set");

  struct Item {
    double uncertainty;
    bool correct;
  };
  std::vector<Item> items(n);
  for (std::size_t s = 0; s < n; ++s) {
    const auto row = preds.row(s);
    items[s] = {1.0 - MaxProb(row), PredictedClass(row) == preds.labels[s]};
  }
  std::sort(items.begin(), items.end(), [](const Item& x, const Item& y) {
    return x.uncertainty < y.uncertainty;
  });

  std::vector<double> taus{0.0};
  for (const auto& it : items) {
    if (it.uncertainty > taus.back()) taus.push_back(it.uncertainty);
  }
  if (taus.back() < 1.0) taus.push_back(1.0);

  RejectionCurve curve;
  std::size_t retained = 0, correct = 0;
  for (double tau : taus) {
    while (retained < n && items[retained].uncertainty <= tau) {
      correct += items[retained].correct ? 1 : 0;
      ++retained;
    }
    CurvePoint p{tau, 1.0, static_cast<double>(retained) / static_cast<double>(n), retained == 0};
    if (retained > 0) p.accuracy = static_cast<double>(correct) / static_cast<double>(retained);
    if (p.empty && policy == EmptyRetainedPolicy::kSkip) continue;
    curve.points.push_back(p);
  }
  return curve;
}

// Exact integral of the step function over [0, 1]. Skipped leading
// segments are excluded from both the area and the width.
inline double Aurc(const RejectionCurve& curve) {
  const auto& pts = curve.points;
  if (pts.empty()) return 0.0;
  double area = 0.0;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    area += (pts[i + 1].tau - pts[i].tau) * pts[i].accuracy;
  }
  const double width = 1.0 - pts.front().tau;
  if (width <= 0.0) return pts.back().accuracy;
  return pts.front().tau == 0.0 ? area : area / width;
}

// Curve CSV: header `tau,accuracy,retained_fraction`.
inline void WriteCurveCsv(const RejectionCurve& curve, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIoFailure, "cannot write " + path.string());
  out << "tau,accuracy,retained_fraction\n";
  char buf[96];
  for (const auto& p : curve.points) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g\n", p.tau, p.accuracy, p.retained_fraction);
    out << buf;
  }
  if (!out) throw Error(ErrorKind::kIoFailure, "short write to " + path.string());
}

}  // namespace topoens
