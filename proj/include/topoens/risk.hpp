#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <span>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "topoens/error.hpp"
#include "topoens/rtd.hpp"
#include "topoens/tensor_io.hpp"

namespace topoens {

enum class RiskSource {
  kMoments,     // cross moments E<y_i, y_j>
  kPearson,     // output correlation rescaled to moment magnitude
  kRtd,         // similarity exp(-rtd / sigma) rescaled to moment magnitude
  kRtdLiteral,  // raw divergence matrix in the quadratic term
};

constexpr std::string_view ToString(RiskSource s) {
  switch (s) {
    case RiskSource::kMoments: return "moments";
    case RiskSource::kPearson: return "pearson";
    case RiskSource::kRtd: return "rtd";
    case RiskSource::kRtdLiteral: return "rtd-literal";
  }
  return "unknown";
}

inline RiskSource ParseRiskSource(std::string_view s) {
  if (s == "moments") return RiskSource::kMoments;
  if (s == "pearson") return RiskSource::kPearson;
  if (s == "rtd") return RiskSource::kRtd;
  if (s == "rtd-literal") return RiskSource::kRtdLiteral;
  throw Error(ErrorKind::kInvalidArgument, "unknown risk source '" + std::string(s) + "'");
}

// Coefficients of the ensemble quadratic risk
//   L(alpha) = alpha^T (a - c) + alpha^T B alpha
// with a_i the per-model squared error, c_i = b_ii the second moments and
// B the cross moments (or a surrogate for them).
struct RiskModel {
  std::vector<double> a;
  std::vector<double> c;
  std::vector<double> b;  // row-major k x k
  RiskSource source = RiskSource::kMoments;

  std::size_t size() const { return a.size(); }
  double B(std::size_t i, std::size_t j) const { return b[i * size() + j]; }
  double& B(std::size_t i, std::size_t j) { return b[i * size() + j]; }

  void CheckShape() const {
    const std::size_t k = size();
    if (k == 0) throw Error(ErrorKind::kDegenerateInput, "empty risk model");
    if (c.size() != k || b.size() != k * k) {
      throw Error(ErrorKind::kDimensionMismatch, "a, c and B disagree on the model count");
    }
  }

  // Restriction to the given model indices, in the given order.
  RiskModel Restrict(std::span<const std::size_t> idx) const {
    RiskModel r;
    r.source = source;
    for (std::size_t i : idx) {
      r.a.push_back(a.at(i));
      r.c.push_back(c.at(i));
    }
    for (std::size_t i : idx) {
      for (std::size_t j : idx) r.b.push_back(B(i, j));
    }
    return r;
  }
};

enum class CorrelationMode { kMoments, kPearson };

namespace detail {

inline void CheckAligned(const std::vector<PredictionSet>& preds) {
  if (preds.empty()) throw Error(ErrorKind::kDimensionMismatch, "no models");
  const auto& first = preds.front();
  if (first.size() == 0) throw Error(ErrorKind::kEmptySample, "no samples");
  for (const auto& p : preds) {
    if (p.num_classes != first.num_classes || p.sample_ids != first.sample_ids ||
        p.labels != first.labels) {
      throw Error(ErrorKind::kMisaligned, "prediction sets disagree on samples or labels");
    }
  }
}

inline double PearsonCorrelation(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  // Constant outputs: correlated only with an identical constant.
  if (sxx == 0.0 || syy == 0.0) {
    return std::equal(x.begin(), x.end(), y.begin()) ? 1.0 : 0.0;
  }
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

}  // namespace detail

// Per-model a_i and c_i, each divided by the class count so binary and
// multi-class coefficients share a scale.
inline void EstimateErrorsAndMoments(const std::vector<PredictionSet>& preds, RiskModel& risk) {
  detail::CheckAligned(preds);
  const std::size_t k = preds.size();
  const std::size_t n = preds.front().size();
  const int classes = preds.front().num_classes;
  const double norm = static_cast<double>(n) * classes;
  risk.a.assign(k, 0.0);
  risk.c.assign(k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    double err = 0.0, sq = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      const auto row = preds[i].row(s);
      const int label = preds[i].labels[s];
      for (int cl = 0; cl < classes; ++cl) {
        const double target = cl == label ? 1.0 : 0.0;
        err += (row[cl] - target) * (row[cl] - target);
        sq += row[cl] * row[cl];
      }
    }
    risk.a[i] = err / norm;
    risk.c[i] = sq / norm;
  }
}

inline RiskModel EstimateFromOutputs(const std::vector<PredictionSet>& preds,
                                     CorrelationMode mode = CorrelationMode::kMoments) {
  RiskModel risk;
  EstimateErrorsAndMoments(preds, risk);
  const std::size_t k = preds.size();
  const std::size_t n = preds.front().size();
  const int classes = preds.front().num_classes;
  risk.b.assign(k * k, 0.0);
  risk.source = mode == CorrelationMode::kMoments ? RiskSource::kMoments : RiskSource::kPearson;
  for (std::size_t i = 0; i < k; ++i) {
    risk.B(i, i) = risk.c[i];
    for (std::size_t j = i + 1; j < k; ++j) {
      double v;
      if (mode == CorrelationMode::kMoments) {
        double dot = 0.0;
        for (std::size_t e = 0; e < n * classes; ++e) dot += preds[i].probs[e] * preds[j].probs[e];
        v = dot / (static_cast<double>(n) * classes);
      } else {
        v = detail::PearsonCorrelation(preds[i].probs, preds[j].probs) *
            std::sqrt(risk.c[i] * risk.c[j]);
      }
      risk.B(i, j) = v;
      risk.B(j, i) = v;
    }
  }
  return risk;
}

// Median of the strictly positive off-diagonal entries; 1 when there are none.
inline double RtdScale(const RtdMatrix& rtd) {
  std::vector<double> positive;
  for (std::size_t i = 0; i < rtd.size(); ++i) {
    for (std::size_t j = i + 1; j < rtd.size(); ++j) {
      if (rtd(i, j) > 0.0) positive.push_back(rtd(i, j));
    }
  }
  if (positive.empty()) return 1.0;
  std::sort(positive.begin(), positive.end());
  const std::size_t m = positive.size();
  return m % 2 == 1 ? positive[m / 2] : 0.5 * (positive[m / 2 - 1] + positive[m / 2]);
}

// Divergence turned into a cross-moment surrogate:
//   B_ij = sqrt(c_i c_j) exp(-rtd_ij / sigma),  B_ii = c_i.
inline RiskModel RtdToRisk(const RtdMatrix& rtd, const std::vector<PredictionSet>& preds) {
  if (rtd.size() != preds.size()) {
    throw Error(ErrorKind::kDimensionMismatch, "rtd matrix has " + std::to_string(rtd.size()) +
                                                   " models, predictions " +
                                                   std::to_string(preds.size()));
  }
  RiskModel risk;
  EstimateErrorsAndMoments(preds, risk);
  risk.source = RiskSource::kRtd;
  const std::size_t k = preds.size();
  const double sigma = RtdScale(rtd);
  risk.b.assign(k * k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    risk.B(i, i) = risk.c[i];
    for (std::size_t j = i + 1; j < k; ++j) {
      const double v = std::sqrt(risk.c[i] * risk.c[j]) * std::exp(-rtd(i, j) / sigma);
      risk.B(i, j) = v;
      risk.B(j, i) = v;
    }
  }
  return risk;
}

// The divergence matrix R used directly:
//   L(alpha) = alpha^T (a - diag R) + alpha^T R alpha.
inline RiskModel RtdLiteralRisk(const RtdMatrix& rtd, const std::vector<PredictionSet>& preds) {
  if (rtd.size() != preds.size()) {
    throw Error(ErrorKind::kDimensionMismatch, "rtd matrix has " + std::to_string(rtd.size()) +
                                                   " models, predictions " +
                                                   std::to_string(preds.size()));
  }
  RiskModel risk;
  EstimateErrorsAndMoments(preds, risk);
  risk.source = RiskSource::kRtdLiteral;
  const std::size_t k = preds.size();
  risk.b = rtd.r;
  for (std::size_t i = 0; i < k; ++i) risk.c[i] = rtd(i, i);
  return risk;
}

// Quadratic risk of the alpha-weighted ensemble under `risk`.
inline double QuadraticRisk(const RiskModel& risk, std::span<const double> alpha) {
  const std::size_t k = risk.size();
  double linear = 0.0, quad = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    linear += alpha[i] * (risk.a[i] - risk.c[i]);
    double row = 0.0;
    for (std::size_t j = 0; j < k; ++j) row += risk.B(i, j) * alpha[j];
    quad += alpha[i] * row;
  }
  return linear + quad;
}

inline nlohmann::json ToJson(const RiskModel& risk) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < risk.size(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t j = 0; j < risk.size(); ++j) row.push_back(risk.B(i, j));
    rows.push_back(std::move(row));
  }
  return {{"a", risk.a}, {"c", risk.c}, {"B", std::move(rows)},
          {"source", std::string(ToString(risk.source))}};
}

inline RiskModel RiskModelFromJson(const nlohmann::json& doc) {
  RiskModel risk;
  try {
    risk.a = doc.at("a").get<std::vector<double>>();
    risk.c = doc.at("c").get<std::vector<double>>();
    for (const auto& row : doc.at("B")) {
      if (row.size() != risk.a.size()) throw Error(ErrorKind::kDimensionMismatch, "B column count");
      for (const auto& v : row) risk.b.push_back(v.get<double>());
    }
    risk.source = ParseRiskSource(doc.at("source").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kInvariantViolation, std::string("malformed risk model: ") + e.what());
  }
  risk.CheckShape();
  return risk;
}

}  // namespace topoens
