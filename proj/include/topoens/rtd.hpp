#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <exception>
#include <functional>
#include <iterator>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "topoens/barcode.hpp"
#include "topoens/error.hpp"
#include "topoens/graph.hpp"
#include "topoens/tensor_io.hpp"

namespace topoens {

struct RtdConfig {
  std::size_t runs = 10;
  // nullopt means every vertex; otherwise clamped to the token count.
  std::optional<std::size_t> subset_size = 64;
  std::uint64_t seed = 0;
  std::size_t max_samples = 32;
  // nullopt means every layer.
  std::optional<std::vector<std::size_t>> layers;
  // Worker threads for RtdMatrix; results do not depend on this.
  unsigned threads = 1;

  void Validate() const {
    if (runs < 1) throw Error(ErrorKind::kInvalidArgument, "runs must be >= 1");
    if (subset_size && *subset_size < 2) {
      throw Error(ErrorKind::kSubsetTooSmall, "subset_size must be >= 2");
    }
    if (max_samples < 1) throw Error(ErrorKind::kInvalidArgument, "max_samples must be >= 1");
  }
};

// Stream seeds. Every random draw is keyed by the values that identify its
// task so results do not depend on evaluation order.
inline std::uint64_t SplitMix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t DeriveSeed(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = SplitMix64(seed);
  for (std::uint64_t k : keys) h = SplitMix64(h ^ SplitMix64(k + 0x632BE59BD9B4E019ULL));
  return h;
}

// Uniform integer in [0, bound) by rejection; independent of the standard
// library's distribution implementations.
inline std::uint64_t UniformBelow(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t threshold = (0 - bound) % bound;
  while (true) {
    const std::uint64_t r = rng();
    if (r >= threshold) return r % bound;
  }
}

// m distinct vertices out of n, ascending.
inline std::vector<std::size_t> SampleVertices(std::size_t n, std::size_t m, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (m < n) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t j = i + UniformBelow(rng, n - i);
      std::swap(idx[i], idx[j]);
    }
    idx.resize(m);
    std::sort(idx.begin(), idx.end());
  }
  return idx;
}

// Optional sinks receiving every bar computed by RtdPair, per direction.
struct BarcodeSinks {
  Barcode* forward = nullptr;  // g1 against the union
  Barcode* reverse = nullptr;  // g2 against the union
};

namespace detail {

inline std::vector<std::size_t> SelectedLayers(const RtdConfig& cfg, std::uint32_t layers) {
  std::vector<std::size_t> out;
  if (!cfg.layers) {
    for (std::size_t l = 0; l < layers; ++l) out.push_back(l);
    return out;
  }
  for (std::size_t l : *cfg.layers) {
    if (l >= layers) {
      throw Error(ErrorKind::kShapeMismatch, "layer " + std::to_string(l) +
                                                 " selected but tensor has " +
                                                 std::to_string(layers));
    }
    out.push_back(l);
  }
  if (out.empty()) throw Error(ErrorKind::kInvalidArgument, "empty layer selection");
  return out;
}

}  // namespace detail

// Symmetrized topological divergence between two models on one sample:
// mean over selected layers, heads, runs and both directions of the total
// cross-barcode length on a random vertex subset. Both directions of a run
// share the subset.
inline double RtdPair(const AttentionTensor& t1, const AttentionTensor& t2, const RtdConfig& cfg,
                      BarcodeSinks sinks = {}) {
  cfg.Validate();
  if (t1.tokens != t2.tokens || t1.layers != t2.layers || t1.heads != t2.heads) {
    throw Error(ErrorKind::kShapeMismatch,
                "attention shapes differ for sample '" + t1.sample_id + "'");
  }
  if (t1.sample_id != t2.sample_id) {
    throw Error(ErrorKind::kShapeMismatch,
                "sample ids differ: '" + t1.sample_id + "' vs '" + t2.sample_id + "'");
  }
  const std::size_t n = t1.tokens;
  const std::size_t m = std::min(cfg.subset_size.value_or(n), n);
  if (m < 2) {
    throw Error(ErrorKind::kSubsetTooSmall,
                "need at least 2 vertices, sample '" + t1.sample_id + "' has " + std::to_string(n));
  }
  const auto layers = detail::SelectedLayers(cfg, t1.layers);
  if (t1.heads == 0) throw Error(ErrorKind::kShapeMismatch, "tensor has no heads");

  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t layer : layers) {
    for (std::size_t head = 0; head < t1.heads; ++head) {
      const DistanceGraph full1 = Symmetrize(t1.matrix(layer, head), n);
      const DistanceGraph full2 = Symmetrize(t2.matrix(layer, head), n);
      for (std::size_t run = 0; run < cfg.runs; ++run) {
        const auto subset =
            SampleVertices(n, m, DeriveSeed(cfg.seed, {layer, head, run}));
        const DistanceGraph g1 = full1.Induced(subset);
        const DistanceGraph g2 = full2.Induced(subset);
        // The union graph is shared by both directions.
        const MergeSequence joined = ComputeMergeSequence(ElementwiseMin(g1, g2));
        const MergeSequence seq1 = ComputeMergeSequence(g1);
        const MergeSequence seq2 = ComputeMergeSequence(g2);
        const Barcode forward = PairMergeSequences(joined, seq1);
        const Barcode reverse = PairMergeSequences(joined, seq2);
        total += TotalLength(forward);
        total += TotalLength(reverse);
        count += 2;
        if (sinks.forward) {
          sinks.forward->bars.insert(sinks.forward->bars.end(), forward.bars.begin(),
                                     forward.bars.end());
        }
        if (sinks.reverse) {
          sinks.reverse->bars.insert(sinks.reverse->bars.end(), reverse.bars.begin(),
                                     reverse.bars.end());
        }
      }
    }
  }
  return total / static_cast<double>(count);
}

// k x k symmetric divergence matrix with a zero diagonal.
struct RtdMatrix {
  std::vector<std::string> model_ids;
  std::vector<double> r;  // row-major k x k

  std::size_t size() const { return model_ids.size(); }
  double operator()(std::size_t i, std::size_t j) const { return r[i * size() + j]; }
  double& operator()(std::size_t i, std::size_t j) { return r[i * size() + j]; }

  void Validate() const {
    const std::size_t k = size();
    if (r.size() != k * k) {
      throw Error(ErrorKind::kDimensionMismatch, "rtd matrix is not " + std::to_string(k) +
                                                     "x" + std::to_string(k));
    }
    for (std::size_t i = 0; i < k; ++i) {
      if ((*this)(i, i) != 0.0) {
        throw Error(ErrorKind::kInvariantViolation, "nonzero rtd diagonal at " + std::to_string(i));
      }
      for (std::size_t j = 0; j < k; ++j) {
        const double v = (*this)(i, j);
        if (!(v >= 0.0) || !std::isfinite(v)) {
          throw Error(ErrorKind::kInvariantViolation, "negative or non-finite rtd entry");
        }
        if (v != (*this)(j, i)) throw Error(ErrorKind::kInvariantViolation, "asymmetric rtd matrix");
      }
    }
  }
};

// All attention tensors of one model, any sample order.
struct ModelAttention {
  std::string model_id;
  std::vector<AttentionTensor> samples;
};

// Called once per ordered model pair (i, j), i != j, with every bar of the
// direction "model i against the union".
using BarcodeDumpFn = std::function<void(std::size_t i, std::size_t j, const Barcode&)>;

// Sample ids present for every model, sorted, truncated to max_samples.
inline std::vector<std::string> CommonSamples(const std::vector<std::vector<std::string>>& per_model,
                                              std::size_t max_samples) {
  if (per_model.empty()) return {};
  std::vector<std::string> common = per_model.front();
  std::sort(common.begin(), common.end());
  for (std::size_t i = 1; i < per_model.size(); ++i) {
    std::vector<std::string> other = per_model[i];
    std::sort(other.begin(), other.end());
    std::vector<std::string> merged;
    std::set_intersection(common.begin(), common.end(), other.begin(), other.end(),
                          std::back_inserter(merged));
    common = std::move(merged);
  }
  if (common.size() > max_samples) common.resize(max_samples);
  return common;
}

// r[i][j] = mean over the used samples of RtdPair(model i, model j). Subsets
// are drawn per sample from (seed, sample index, layer, head, run) and are the
// same for every model pair.
inline RtdMatrix ComputeRtdMatrix(const std::vector<ModelAttention>& models, const RtdConfig& cfg,
                                  const BarcodeDumpFn& dump = nullptr) {
  cfg.Validate();
  const std::size_t k = models.size();
  RtdMatrix out;
  for (const auto& m : models) out.model_ids.push_back(m.model_id);
  out.r.assign(k * k, 0.0);
  if (k == 0) return out;

  std::vector<std::vector<std::string>> ids(k);
  std::vector<std::map<std::string, const AttentionTensor*>> lookup(k);
  for (std::size_t i = 0; i < k; ++i) {
    for (const auto& t : models[i].samples) {
      ids[i].push_back(t.sample_id);
      lookup[i][t.sample_id] = &t;
    }
  }
  const auto samples = CommonSamples(ids, cfg.max_samples);
  if (samples.empty()) throw Error(ErrorKind::kNoCommonSamples, "no sample has attention for every model");
  if (k == 1) return out;

  struct Task {
    std::size_t i, j, s;
  };
  std::vector<Task> tasks;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) {
      for (std::size_t s = 0; s < samples.size(); ++s) tasks.push_back({i, j, s});
    }
  }
  std::vector<double> values(tasks.size(), 0.0);
  std::vector<Barcode> forward(dump ? tasks.size() : 0);
  std::vector<Barcode> reverse(dump ? tasks.size() : 0);

  auto run_task = [&](std::size_t t) {
    const Task& task = tasks[t];
    RtdConfig local = cfg;
    local.seed = DeriveSeed(cfg.seed, {0x5A3D1E, task.s});
    const auto& a = *lookup[task.i].at(samples[task.s]);
    const auto& b = *lookup[task.j].at(samples[task.s]);
    BarcodeSinks sinks;
    if (dump) sinks = {&forward[t], &reverse[t]};
    values[t] = RtdPair(a, b, local, sinks);
  };

  const unsigned workers = std::max(1u, std::min<unsigned>(cfg.threads, tasks.size()));
  if (workers == 1) {
    for (std::size_t t = 0; t < tasks.size(); ++t) run_task(t);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t t; (t = next.fetch_add(1)) < tasks.size();) run_task(t);
        } catch (...) {
          errors[w] = std::current_exception();
          next = tasks.size();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  // Ordered reduction: tasks are laid out pair-major, sample-minor.
  for (std::size_t t0 = 0; t0 < tasks.size(); t0 += samples.size()) {
    double sum = 0.0;
    for (std::size_t s = 0; s < samples.size(); ++s) sum += values[t0 + s];
    const double mean = sum / static_cast<double>(samples.size());
    out(tasks[t0].i, tasks[t0].j) = mean;
    out(tasks[t0].j, tasks[t0].i) = mean;
    if (dump) {
      Barcode fw, rv;
      for (std::size_t s = 0; s < samples.size(); ++s) {
        fw.bars.insert(fw.bars.end(), forward[t0 + s].bars.begin(), forward[t0 + s].bars.end());
        rv.bars.insert(rv.bars.end(), reverse[t0 + s].bars.begin(), reverse[t0 + s].bars.end());
      }
      dump(tasks[t0].i, tasks[t0].j, fw);
      dump(tasks[t0].j, tasks[t0].i, rv);
    }
  }
  return out;
}

// Loads the attention tensors of every manifest model for the samples used by
// ComputeRtdMatrix.
inline std::vector<ModelAttention> LoadAttention(const Manifest& manifest, std::size_t max_samples) {
  std::vector<std::vector<std::string>> ids;
  for (const auto& e : manifest.models) ids.push_back(ListAttentionSamples(e.attention_dir));
  const auto samples = CommonSamples(ids, max_samples);
  if (samples.empty()) throw Error(ErrorKind::kNoCommonSamples, "no sample has attention for every model");
  std::vector<ModelAttention> out;
  for (const auto& e : manifest.models) {
    ModelAttention ma{e.model_id, {}};
    for (const auto& s : samples) ma.samples.push_back(ReadAttention(AttentionPath(e.attention_dir, s), e.model_id));
    out.push_back(std::move(ma));
  }
  return out;
}

inline nlohmann::json ToJson(const RtdMatrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < m.size(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t j = 0; j < m.size(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return {{"model_ids", m.model_ids}, {"rtd", std::move(rows)}};
}

inline RtdMatrix RtdMatrixFromJson(const nlohmann::json& doc) {
  RtdMatrix m;
  try {
    m.model_ids = doc.at("model_ids").get<std::vector<std::string>>();
    const auto& rows = doc.at("rtd");
    if (rows.size() != m.size()) throw Error(ErrorKind::kDimensionMismatch, "rtd row count");
    for (const auto& row : rows) {
      if (row.size() != m.size()) throw Error(ErrorKind::kDimensionMismatch, "rtd column count");
      for (const auto& v : row) m.r.push_back(v.get<double>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kInvariantViolation, std::string("malformed rtd matrix: ") + e.what());
  }
  m.Validate();
  return m;
}

}  // namespace topoens
