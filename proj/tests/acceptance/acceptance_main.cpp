// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero when any criterion fails.

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "test_support.hpp"
#include "topoens/topoens.hpp"

using namespace topoens;

namespace {

using Clock = std::chrono::steady_clock;

double Seconds(Clock::time_point since) {
  return std::chrono::duration<double>(Clock::now() - since).count();
}

struct Outcome {
  bool pass = true;
  std::string detail;

  void Require(bool ok, const std::string& why) {
    if (!ok && pass) detail = why;
    pass = pass && ok;
  }
};

std::string Format(const char* fmt, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), fmt, args...);
  return buf;
}

PredictionSet Slice(const PredictionSet& p, std::size_t begin, std::size_t end) {
  PredictionSet out;
  out.num_classes = p.num_classes;
  out.sample_ids.assign(p.sample_ids.begin() + begin, p.sample_ids.begin() + end);
  out.labels.assign(p.labels.begin() + begin, p.labels.begin() + end);
  out.probs.assign(p.probs.begin() + begin * p.num_classes, p.probs.begin() + end * p.num_classes);
  return out;
}

// Fitting half and held-out half of every model's predictions.
struct Split {
  std::vector<PredictionSet> fit, eval;
};

Split HalfSplit(const std::vector<PredictionSet>& preds) {
  Split s;
  const std::size_t half = preds.front().size() / 2;
  for (const auto& p : preds) {
    s.fit.push_back(Slice(p, 0, half));
    s.eval.push_back(Slice(p, half, p.size()));
  }
  return s;
}

RtdMatrix AttentionRtd(const SynthEnsemble& ens, std::uint64_t seed) {
  RtdConfig cfg;
  cfg.seed = seed;
  return ComputeRtdMatrix(ens.attention, cfg);
}

// ---------------------------------------------------------------------------

Outcome BarcodeOracle() {
  Outcome o;
  const auto start = Clock::now();
  std::size_t checks = 0;
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t n = 1 + rng() % 8;
    const auto g1 = testing_support::RandomGraph(n, rng);
    const auto g2 = testing_support::RandomGraph(n, rng);
    const auto gu = ElementwiseMin(g1, g2);
    auto w1 = oracle::DistinctWeights(g1), w2 = oracle::DistinctWeights(g2);
    o.Require(w1.size() == n * (n - 1) / 2 && w2.size() == n * (n - 1) / 2,
              Format("seed %llu: repeated weights", static_cast<unsigned long long>(seed)));

    const auto b = RCrossBarcode(g1, g2);
    auto cuts = oracle::DistinctWeights(gu);
    cuts.insert(cuts.end(), w1.begin(), w1.end());
    for (double tau : cuts) {
      const std::size_t expected = oracle::ComponentsAt(g1, tau) - oracle::ComponentsAt(gu, tau);
      o.Require(b.AliveAt(tau) == expected,
                Format("seed %llu: count mismatch at tau=%.17g", static_cast<unsigned long long>(seed), tau));
      ++checks;
    }
    const double gap = SpanningTreeWeight(ComputeMergeSequence(g1)) -
                       SpanningTreeWeight(ComputeMergeSequence(gu));
    o.Require(std::abs(TotalLength(b) - gap) <= 1e-12,
              Format("seed %llu: total length off MST gap", static_cast<unsigned long long>(seed)));
  }
  const double secs = Seconds(start);
  o.Require(secs < 10.0, Format("took %.2fs", secs));
  if (o.pass) o.detail = Format("500 graphs, %zu threshold checks, %.2fs", checks, secs);
  return o;
}

Outcome RtdIdentitySymmetry() {
  Outcome o;
  std::mt19937_64 rng(2024);
  for (int t = 0; t < 100; ++t) {
    const auto tensor = testing_support::RandomAttention(1 + t % 3, 1 + t % 4, 4 + (t * 7) % 90, rng);
    RtdConfig cfg;
    cfg.seed = t;
    const double v = RtdPair(tensor, tensor, cfg);
    o.Require(v == 0.0, Format("tensor %d: rtd(t,t)=%.17g", t, v));
  }
  int matrices = 0;
  for (int t = 0; t < 30; ++t) {
    const std::size_t k = 1 + t % 6, samples = 1 + t % 4;
    const std::uint32_t n = 3 + t % 20;
    std::vector<ModelAttention> models;
    for (std::size_t i = 0; i < k; ++i) {
      ModelAttention m{"m" + std::to_string(i), {}};
      for (std::size_t s = 0; s < samples; ++s) {
        m.samples.push_back(testing_support::RandomAttention(1 + t % 2, 1 + t % 3, n, rng,
                                                             "s" + std::to_string(s)));
      }
      models.push_back(std::move(m));
    }
    RtdConfig cfg;
    cfg.seed = t;
    cfg.runs = 1 + t % 4;
    cfg.subset_size = 2 + t % 30;
    cfg.threads = 1 + t % 3;
    const auto m = ComputeRtdMatrix(models, cfg);
    bool ok = true;
    try {
      m.Validate();
    } catch (const Error&) {
      ok = false;
    }
    for (std::size_t i = 0; i < k; ++i) {
      ok = ok && m(i, i) == 0.0;
      for (std::size_t j = 0; j < k; ++j) ok = ok && m(i, j) == m(j, i);
    }
    o.Require(ok, Format("fuzzed matrix %d not symmetric with zero diagonal", t));
    ++matrices;
  }
  if (o.pass) o.detail = Format("100 identity pairs exact, %d fuzzed matrices valid", matrices);
  return o;
}

Outcome QpOracle() {
  Outcome o;
  const auto start = Clock::now();
  std::mt19937_64 rng(77);
  double worst_grid = -1e300, worst_random = -1e300;
  for (int t = 0; t < 200; ++t) {
    const auto risk = testing_support::RandomRisk(3, rng);
    const double obj = QuadraticRisk(risk, OptimizeWeights(risk).weights);
    const double grid = oracle::GridSearch3(risk, 1e-3);
    worst_grid = std::max(worst_grid, obj - grid);
    o.Require(obj <= grid + 1e-5, Format("k=3 model %d: %.17g > grid %.17g", t, obj, grid));
  }
  for (int t = 0; t < 200; ++t) {
    const std::size_t k = 1 + t % 5;
    const auto risk = testing_support::RandomRisk(k, rng);
    const double obj = QuadraticRisk(risk, OptimizeWeights(risk).weights);
    double best = 1e300;
    for (int s = 0; s < 10000; ++s) {
      best = std::min(best, QuadraticRisk(risk, oracle::RandomSimplexPoint(k, rng)));
    }
    worst_random = std::max(worst_random, obj - best);
    o.Require(obj <= best + 1e-9, Format("k=%zu model %d: %.17g > sampled %.17g", k, t, obj, best));
  }
  const double secs = Seconds(start);
  o.Require(secs < 30.0, Format("took %.2fs", secs));
  if (o.pass) {
    o.detail = Format("max(obj-grid)=%.2e, max(obj-sampled)=%.2e, %.2fs", worst_grid, worst_random, secs);
  }
  return o;
}

Outcome HandQp() {
  Outcome o;
  const RiskModel risk{{0.2, 0.3}, {0.5, 0.5}, {0.5, 0.4, 0.4, 0.5}, RiskSource::kMoments};
  const auto sol = OptimizeWeights(risk);
  o.Require(std::abs(sol.weights[0] - 0.75) <= 1e-6 && std::abs(sol.weights[1] - 0.25) <= 1e-6,
            Format("alpha=(%.17g, %.17g)", sol.weights[0], sol.weights[1]));
  if (o.pass) o.detail = Format("alpha=(%.12g, %.12g), L=%.12g", sol.weights[0], sol.weights[1], sol.objective);
  return o;
}

Outcome AurcExactness() {
  Outcome o;
  using testing_support::MakePredictions;
  const auto two = MakePredictions(2, {0, 1}, {0.9, 0.1, 0.6, 0.4});
  const double hand = Aurc(ComputeRejectionCurve(two));
  o.Require(hand == 0.7, Format("two-sample AURC=%.17g", hand));
  const auto correct = MakePredictions(3, {0, 1, 2}, {0.5, 0.3, 0.2, 0.1, 0.8, 0.1, 0.3, 0.3, 0.4});
  const double all = Aurc(ComputeRejectionCurve(correct));
  o.Require(all == 1.0, Format("all-correct AURC=%.17g", all));
  const auto flat = MakePredictions(2, {0, 1, 1, 0, 1}, {1, 0, 1, 0, 0, 1, 0, 1, 0, 1});
  const double z = Aurc(ComputeRejectionCurve(flat));
  o.Require(z == Accuracy(flat), Format("zero-uncertainty AURC=%.17g vs accuracy %.17g", z, Accuracy(flat)));
  if (o.pass) o.detail = Format("%.17g / %.17g / %.17g == accuracy", hand, all, z);
  return o;
}

struct BenchmarkSeed {
  double acc_opt, acc_eq, acc_best;
  double risk_opt, risk_eq;
  std::vector<double> subset_acc, subset_aurc;  // sizes 2..5
};

std::vector<BenchmarkSeed> RunBenchmark(double& secs) {
  const auto start = Clock::now();
  std::vector<BenchmarkSeed> out;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto ens = GenerateEnsemble(BenchmarkConfig(seed));
    const Split split = HalfSplit(ens.predictions);
    const RiskModel risk = RtdToRisk(AttentionRtd(ens, seed), split.fit);
    const auto sol = OptimizeWeights(risk);
    const auto equal = UniformWeights(risk.size());

    BenchmarkSeed r{};
    r.acc_opt = Accuracy(EnsemblePredict(split.eval, sol.weights));
    r.acc_eq = Accuracy(EnsemblePredict(split.eval, equal));
    r.acc_best = 0.0;
    for (const auto& p : split.eval) r.acc_best = std::max(r.acc_best, Accuracy(p));
    // True quadratic risk of the ensemble on the fitting half.
    const RiskModel moments = EstimateFromOutputs(split.fit);
    r.risk_opt = QuadraticRisk(moments, sol.weights);
    r.risk_eq = QuadraticRisk(moments, equal);

    const std::vector<std::size_t> sizes{2, 3, 4, 5};
    for (const auto& [size, sub] : SelectSubsets(risk, sizes)) {
      std::vector<PredictionSet> chosen;
      for (std::size_t i : sub.models) chosen.push_back(split.eval[i]);
      const auto pred = EnsemblePredict(chosen, sub.solution.weights);
      r.subset_acc.push_back(Accuracy(pred));
      r.subset_aurc.push_back(Aurc(ComputeRejectionCurve(pred)));
    }
    out.push_back(std::move(r));
  }
  secs = Seconds(start);
  return out;
}

Outcome EndToEnd(const std::vector<BenchmarkSeed>& runs, double secs) {
  Outcome o;
  double opt = 0, eq = 0, best = 0;
  int wins = 0, risk_wins = 0;
  for (const auto& r : runs) {
    opt += r.acc_opt / runs.size();
    eq += r.acc_eq / runs.size();
    best += r.acc_best / runs.size();
    wins += r.acc_opt > r.acc_eq ? 1 : 0;
    risk_wins += r.risk_opt < r.risk_eq ? 1 : 0;
  }
  o.Require(opt >= eq, Format("mean optimized %.4f < equal %.4f", opt, eq));
  o.Require(eq >= best - 0.002, Format("mean equal %.4f < best single %.4f - 0.002", eq, best));
  o.Require(wins >= 15, Format("optimized > equal in only %d/20 seeds", wins));
  o.Require(risk_wins == 20, Format("risk below equal weights in only %d/20 seeds", risk_wins));
  o.Require(secs < 300.0, Format("took %.1fs", secs));
  if (o.pass) {
    o.detail = Format("acc opt %.4f >= equal %.4f >= best single %.4f; opt>eq %d/20; risk %d/20; %.1fs",
                      opt, eq, best, wins, risk_wins, secs);
  }
  return o;
}

Outcome WeakStrong() {
  Outcome o;
  int better = 0, light = 0;
  double mean_weak = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto cfg = WeakStrongConfig(seed);
    const auto ens = GenerateEnsemble(cfg);
    const Split split = HalfSplit(ens.predictions);
    const auto sol = OptimizeWeights(RtdToRisk(AttentionRtd(ens, seed), split.fit));
    const double pair = Accuracy(EnsemblePredict(split.eval, sol.weights));
    const double strong = Accuracy(split.eval[0]);
    better += pair >= strong ? 1 : 0;
    light += sol.weights[1] < 0.5 ? 1 : 0;
    mean_weak += sol.weights[1] / 20.0;
  }
  o.Require(better >= 15, Format("pair >= strong in only %d/20 seeds", better));
  o.Require(light == 20, Format("weak weight < 0.5 in only %d/20 seeds", light));
  if (o.pass) o.detail = Format("pair >= strong %d/20; weak weight < 0.5 %d/20 (mean %.3f)", better, light, mean_weak);
  return o;
}

Outcome SubsetMonotone(const std::vector<BenchmarkSeed>& runs) {
  Outcome o;
  int monotone = 0;
  for (const auto& r : runs) {
    bool ok = true;
    for (std::size_t i = 1; i < r.subset_acc.size(); ++i) {
      ok = ok && r.subset_acc[i] >= r.subset_acc[i - 1] && r.subset_aurc[i] >= r.subset_aurc[i - 1];
    }
    monotone += ok ? 1 : 0;
  }
  o.Require(monotone >= 15, Format("monotone in only %d/20 seeds", monotone));
  if (o.pass) o.detail = Format("accuracy and AURC non-decreasing over sizes 2..5 in %d/20 seeds", monotone);
  return o;
}

Outcome Performance() {
  Outcome o;
  std::mt19937_64 rng(128);
  const auto a = testing_support::RandomAttention(1, 1, 128, rng);
  const auto b = testing_support::RandomAttention(1, 1, 128, rng);
  RtdConfig cfg;
  cfg.runs = 10;
  cfg.subset_size = 64;
  auto start = Clock::now();
  const double v = RtdPair(a, b, cfg);
  const double pair_secs = Seconds(start);
  o.Require(v > 0.0 && pair_secs < 1.0, Format("rtd_pair took %.3fs", pair_secs));

  auto synth = BenchmarkConfig(1);
  synth.n_samples = 32;
  synth.attention_samples = 32;
  synth.n_tokens = 128;
  const auto ens = GenerateEnsemble(synth);
  cfg.threads = 1;
  cfg.max_samples = 32;
  start = Clock::now();
  const auto m = ComputeRtdMatrix(ens.attention, cfg);
  const double matrix_secs = Seconds(start);
  o.Require(m.size() == 5 && matrix_secs < 120.0, Format("rtd matrix took %.1fs", matrix_secs));
  if (o.pass) {
    o.detail = Format("rtd_pair n=128: %.3fs; 5 models x 32 samples x 2 heads, n=128: %.2fs",
                      pair_secs, matrix_secs);
  }
  return o;
}

Outcome CliDeterminism() {
  Outcome o;
  testing_support::TempDir dir;
  // Both runs use the same paths; the tree is cleared in between.
  const fs::path root = dir / "run";
  auto run = [&] {
    fs::remove_all(root);
    const std::string data = (root / "data").string();
    const std::string manifest = data + "/manifest.json";
    const std::vector<std::vector<std::string>> commands = {
        {"synth", "--out", data, "--seed", "5", "--samples", "600"},
        {"rtd", "--manifest", manifest, "--seed", "5", "--out", (root / "rtd.json").string(),
         "--dump-barcodes", (root / "bars").string(), "--threads", "3"},
        {"optimize", "--manifest", manifest, "--mode", "rtd", "--rtd", (root / "rtd.json").string(),
         "--out", (root / "w_rtd.json").string(), "--risk-out", (root / "risk_rtd.json").string()},
        {"optimize", "--manifest", manifest, "--mode", "rtd", "--seed", "5", "--objective", "literal",
         "--out", (root / "w_lit.json").string()},
        {"optimize", "--manifest", manifest, "--mode", "output-corr", "--correlation", "pearson",
         "--out", (root / "w_corr.json").string()},
        {"optimize", "--manifest", manifest, "--mode", "equal", "--out", (root / "w_eq.json").string()},
        {"evaluate", "--manifest", manifest, "--weights", (root / "w_rtd.json").string(), "--out",
         (root / "report.json").string(), "--curve-out", (root / "curves").string(), "--subset",
         "2,3,4,5", "--risk", (root / "risk_rtd.json").string(), "--subset-out",
         (root / "subsets.csv").string()},
    };
    for (const auto& args : commands) {
      const auto r = testing_support::RunCli(args);
      o.Require(r.exit_code == 0, "command " + args[0] + " failed: " + r.output);
    }
    return testing_support::Snapshot(root);
  };
  const auto first = run();
  const auto second = run();
  std::size_t bytes = 0;
  for (const auto& f : first) bytes += f.second.size();
  o.Require(first.size() > 30, Format("only %zu output files", first.size()));
  bool same = first.size() == second.size();
  for (std::size_t i = 0; same && i < first.size(); ++i) {
    same = first[i] == second[i];
    if (!same) o.Require(false, "differs: " + first[i].first);
  }
  o.Require(same, "output trees differ");
  if (o.pass) o.detail = Format("%zu files (%zu bytes) identical across reruns", first.size(), bytes);
  return o;
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Outcome()> check;
  };
  double bench_secs = 0.0;
  std::vector<BenchmarkSeed> bench;
  auto benchmark = [&]() -> const std::vector<BenchmarkSeed>& {
    if (bench.empty()) bench = RunBenchmark(bench_secs);
    return bench;
  };

  const std::vector<Criterion> criteria = {
      {"barcode oracle", BarcodeOracle},
      {"rtd identity and symmetry", RtdIdentitySymmetry},
      {"qp oracle", QpOracle},
      {"hand-verified qp", HandQp},
      {"aurc exactness", AurcExactness},
      {"end-to-end improvement", [&] {
         const auto& runs = benchmark();
         return EndToEnd(runs, bench_secs);
       }},
      {"weak and strong pairing", WeakStrong},
      {"subset selection monotone", [&] { return SubsetMonotone(benchmark()); }},
      {"performance", Performance},
      {"cli determinism", CliDeterminism},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].check();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failures += o.pass ? 0 : 1;
    std::printf("%s [%2zu] %-28s %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].name,
                o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
