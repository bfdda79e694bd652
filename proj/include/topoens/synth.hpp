#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "topoens/error.hpp"
#include "topoens/graph.hpp"
#include "topoens/rtd.hpp"
#include "topoens/tensor_io.hpp"

namespace topoens {

// Synthetic ensemble: k classifiers whose output noise and attention fields
// are correlated according to `similarity`.
struct SynthConfig {
  std::string dataset_name = "synthetic";
  std::size_t k = 5;
  std::size_t n_samples = 1000;
  std::size_t n_tokens = 32;
  int num_classes = 2;
  std::uint32_t layers = 1;
  std::uint32_t heads = 2;
  // Attention is generated for the first `attention_samples` samples only.
  std::size_t attention_samples = 32;
  std::vector<double> similarity;  // k x k, unit diagonal
  std::vector<double> skill;       // per-model signal strength
  double noise_scale = 1.0;
  // Per-sample signal is 1 + signal_spread * N(0,1).
  double signal_spread = 0.5;
  // Attention logits are sharpness * field.
  double attention_sharpness = 3.0;
  std::uint64_t seed = 0;

  double Similarity(std::size_t i, std::size_t j) const { return similarity[i * k + j]; }
};

// Five models: four strong ones with mildly correlated noise and one weak
// model that is strongly correlated with the first.
inline SynthConfig BenchmarkConfig(std::uint64_t seed) {
  SynthConfig cfg;
  cfg.dataset_name = "synthetic-benchmark";
  cfg.k = 5;
  cfg.n_samples = 8000;
  cfg.skill = {2.0, 2.0, 2.0, 2.0, 0.5};
  cfg.similarity.assign(25, 0.3);
  for (std::size_t i = 0; i < 5; ++i) cfg.similarity[i * 5 + i] = 1.0;
  cfg.similarity[0 * 5 + 4] = cfg.similarity[4 * 5 + 0] = 0.8;
  cfg.seed = seed;
  return cfg;
}

// One strong and one weaker model.
inline SynthConfig WeakStrongConfig(std::uint64_t seed) {
  SynthConfig cfg;
  cfg.dataset_name = "synthetic-weak-strong";
  cfg.k = 2;
  cfg.n_samples = 8000;
  cfg.skill = {2.0, 1.2};
  cfg.similarity = {1.0, 0.3, 0.3, 1.0};
  cfg.seed = seed;
  return cfg;
}

// k perfectly correlated models of equal skill.
inline SynthConfig IdenticalConfig(std::size_t k, std::uint64_t seed) {
  SynthConfig cfg;
  cfg.dataset_name = "synthetic-identical";
  cfg.k = k;
  cfg.skill.assign(k, 2.0);
  cfg.similarity.assign(k * k, 1.0);
  cfg.seed = seed;
  return cfg;
}

struct SynthEnsemble {
  std::vector<std::string> model_ids;
  std::vector<PredictionSet> predictions;
  std::vector<ModelAttention> attention;
};

namespace detail {

// Box-Muller over mt19937_64 so draws do not depend on the standard
// library's distribution implementations.
class NormalSource {
 public:
  explicit NormalSource(std::uint64_t seed) : rng_(seed) {}

  double Uniform() {  // (0, 1)
    return (static_cast<double>(rng_() >> 11) + 0.5) * 0x1.0p-53;
  }
  double Normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double r = std::sqrt(-2.0 * std::log(Uniform()));
    const double theta = 2.0 * std::numbers::pi * Uniform();
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }
  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline void ValidateSynthConfig(const SynthConfig& cfg) {
  auto fail = [](const std::string& what) { throw Error(ErrorKind::kInvalidArgument, what); };
  if (cfg.k < 1 || cfg.k > kMaxModels) fail("k must be in 1..64");
  if (cfg.n_samples < 1) fail("n_samples must be >= 1");
  if (cfg.n_tokens < 2) fail("n_tokens must be >= 2");
  if (cfg.num_classes < 2) fail("num_classes must be >= 2");
  if (cfg.layers < 1 || cfg.heads < 1) fail("layers and heads must be >= 1");
  if (cfg.skill.size() != cfg.k) fail("skill must have k entries");
  for (double s : cfg.skill) {
    if (!(s >= 0.0)) fail("skill entries must be >= 0");
  }
  if (cfg.similarity.size() != cfg.k * cfg.k) fail("similarity must be k x k");
  for (std::size_t i = 0; i < cfg.k; ++i) {
    if (cfg.Similarity(i, i) != 1.0) fail("similarity diagonal must be 1");
    for (std::size_t j = 0; j < cfg.k; ++j) {
      const double v = cfg.Similarity(i, j);
      if (!(v >= 0.0 && v <= 1.0)) fail("similarity entries must lie in [0,1]");
      if (v != cfg.Similarity(j, i)) fail("similarity must be symmetric");
    }
  }
}

// Symmetric square root of the similarity matrix. Models joined by
// similarity exactly 1 share one row so their draws coincide bit for bit.
inline std::vector<double> SimilarityFactor(const SynthConfig& cfg) {
  const std::size_t k = cfg.k;
  Eigen::MatrixXd s(k, k);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) s(i, j) = cfg.Similarity(i, j);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s);
  if (eig.eigenvalues().minCoeff() < -1e-10) {
    throw Error(ErrorKind::kInfeasibleSimilarity,
                "similarity has eigenvalue " + std::to_string(eig.eigenvalues().minCoeff()));
  }
  const Eigen::VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd f = eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();

  UnionFind groups(k);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) {
      if (cfg.Similarity(i, j) == 1.0) groups.Unite(i, j);
    }
  }
  std::vector<std::size_t> representative(k, k);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t root_id = groups.Find(i);
    if (representative[root_id] == k) representative[root_id] = i;
  }
  std::vector<double> out(k * k);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t src = representative[groups.Find(i)];
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] = f(static_cast<Eigen::Index>(src), static_cast<Eigen::Index>(j));
  }
  return out;
}

inline double RoundSignificant(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", digits, v);
  return std::strtod(buf, nullptr);
}

// Softmax of `logits` into `out`.
template <typename T>
void Softmax(std::span<const double> logits, std::span<T> out) {
  const double peak = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  std::vector<double> e(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    e[i] = std::exp(logits[i] - peak);
    sum += e[i];
  }
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = static_cast<T>(e[i] / sum);
}

}  // namespace detail

inline std::string SyntheticSampleId(std::size_t s) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "s%06zu", s);
  return buf;
}

inline std::string SyntheticModelId(std::size_t i) { return "m" + std::to_string(i); }

// In-memory generation. Probabilities are rounded to the 9 significant
// digits the predictions CSV stores, so in-memory and on-disk runs agree.
inline SynthEnsemble GenerateEnsemble(const SynthConfig& cfg) {
  detail::ValidateSynthConfig(cfg);
  const std::size_t k = cfg.k;
  const std::size_t classes = static_cast<std::size_t>(cfg.num_classes);
  const std::vector<double> factor = detail::SimilarityFactor(cfg);

  SynthEnsemble out;
  for (std::size_t i = 0; i < k; ++i) out.model_ids.push_back(SyntheticModelId(i));

  // Outputs.
  detail::NormalSource normal(DeriveSeed(cfg.seed, {0x0u}));
  std::vector<std::string> sample_ids(cfg.n_samples);
  std::vector<int> labels(cfg.n_samples);
  out.predictions.assign(k, PredictionSet{});
  for (auto& p : out.predictions) {
    p.num_classes = cfg.num_classes;
    p.probs.resize(cfg.n_samples * classes);
  }
  std::vector<double> draws(k), logits(classes);
  std::vector<std::vector<double>> noise(classes, std::vector<double>(k));
  for (std::size_t s = 0; s < cfg.n_samples; ++s) {
    sample_ids[s] = SyntheticSampleId(s);
    labels[s] = static_cast<int>(UniformBelow(normal.engine(), classes));
    const double signal = 1.0 + cfg.signal_spread * normal.Normal();
    for (std::size_t c = 0; c < classes; ++c) {
      for (auto& d : draws) d = normal.Normal();
      for (std::size_t i = 0; i < k; ++i) {
        double v = 0.0;
        for (std::size_t j = 0; j < k; ++j) v += factor[i * k + j] * draws[j];
        noise[c][i] = v;
      }
    }
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t c = 0; c < classes; ++c) {
        logits[c] = cfg.noise_scale * noise[c][i] +
                    (static_cast<int>(c) == labels[s] ? cfg.skill[i] * signal : 0.0);
      }
      auto row = out.predictions[i].row(s);
      detail::Softmax<double>(logits, row);
      for (double& p : row) p = detail::RoundSignificant(p, 9);
    }
  }
  for (auto& p : out.predictions) {
    p.sample_ids = sample_ids;
    p.labels = labels;
  }

  // Attention: per (sample, layer, head) k correlated Gaussian fields.
  const std::size_t n = cfg.n_tokens;
  const std::size_t attn_samples = std::min(cfg.attention_samples, cfg.n_samples);
  out.attention.resize(k);
  for (std::size_t i = 0; i < k; ++i) out.attention[i].model_id = out.model_ids[i];
  std::vector<std::vector<double>> fields(k, std::vector<double>(n * n));
  std::vector<double> base(n * n), row_logits(n);
  for (std::size_t s = 0; s < attn_samples; ++s) {
    std::vector<AttentionTensor> tensors(k);
    for (std::size_t i = 0; i < k; ++i) {
      tensors[i] = {out.model_ids[i], sample_ids[s], cfg.layers, cfg.heads,
                    static_cast<std::uint32_t>(n), std::vector<float>(cfg.layers * cfg.heads * n * n)};
    }
    for (std::uint32_t l = 0; l < cfg.layers; ++l) {
      for (std::uint32_t h = 0; h < cfg.heads; ++h) {
        detail::NormalSource field_normal(DeriveSeed(cfg.seed, {0x1u, s, l, h}));
        for (auto& f : fields) std::fill(f.begin(), f.end(), 0.0);
        for (std::size_t j = 0; j < k; ++j) {
          for (auto& b : base) b = field_normal.Normal();
          for (std::size_t i = 0; i < k; ++i) {
            const double w = factor[i * k + j];
            if (w == 0.0) continue;
            for (std::size_t e = 0; e < n * n; ++e) fields[i][e] += w * base[e];
          }
        }
        for (std::size_t i = 0; i < k; ++i) {
          auto m = tensors[i].matrix(l, h);
          for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < n; ++c) {
              row_logits[c] = cfg.attention_sharpness * fields[i][r * n + c];
            }
            detail::Softmax<float>(row_logits, m.subspan(r * n, n));
          }
        }
      }
    }
    for (std::size_t i = 0; i < k; ++i) out.attention[i].samples.push_back(std::move(tensors[i]));
  }
  return out;
}

// Writes manifest.json, labels.csv and models/<id>/{predictions.csv,
// attention/<sample>.atnb} under `out_dir`; returns the manifest.
inline Manifest WriteEnsemble(const SynthEnsemble& ens, const std::string& dataset_name,
                              const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorKind::kIoFailure, "cannot create " + out_dir.string());
  Manifest m;
  m.dataset_name = dataset_name;
  m.num_classes = ens.predictions.front().num_classes;
  m.validation_labels_path = out_dir / "labels.csv";
  WriteLabels({ens.predictions.front().sample_ids, ens.predictions.front().labels},
              m.validation_labels_path);
  for (std::size_t i = 0; i < ens.model_ids.size(); ++i) {
    const fs::path model_dir = out_dir / "models" / ens.model_ids[i];
    ModelEntry e{ens.model_ids[i], model_dir / "predictions.csv", model_dir / "attention"};
    fs::create_directories(e.attention_dir, ec);
    if (ec) throw Error(ErrorKind::kIoFailure, "cannot create " + e.attention_dir.string());
    WritePredictions(ens.predictions[i], e.predictions_path);
    for (const auto& t : ens.attention[i].samples) {
      WriteAttention(t, AttentionPath(e.attention_dir, t.sample_id));
    }
    m.models.push_back(std::move(e));
  }
  WriteManifest(m, out_dir / "manifest.json");
  return m;
}

inline Manifest Generate(const SynthConfig& cfg, const fs::path& out_dir) {
  return WriteEnsemble(GenerateEnsemble(cfg), cfg.dataset_name, out_dir);
}

}  // namespace topoens
