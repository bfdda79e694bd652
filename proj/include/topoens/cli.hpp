#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "topoens/barcode.hpp"
#include "topoens/error.hpp"
#include "topoens/evaluation.hpp"
#include "topoens/json_file.hpp"
#include "topoens/risk.hpp"
#include "topoens/rtd.hpp"
#include "topoens/synth.hpp"
#include "topoens/tensor_io.hpp"
#include "topoens/weights.hpp"

namespace topoens::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitIo = 3;

struct RtdFlags {
  std::uint64_t seed = 0;
  std::size_t runs = 10;
  std::string subset_size = "64";
  std::size_t max_samples = 32;
  std::string layers = "all";
  unsigned threads = 1;

  void Register(CLI::App* app) {
    app->add_option("--seed", seed, "Seed for vertex subsets");
    app->add_option("--runs", runs, "Random vertex subsets per layer/head");
    app->add_option("--subset-size", subset_size, "Vertices per subset, or 'all'");
    app->add_option("--max-samples", max_samples, "Samples used (first by sorted id)");
    app->add_option("--layers", layers, "'all' or comma-separated layer indices");
    app->add_option("--threads", threads, "Worker threads (results are thread-count independent)");
  }

  RtdConfig Resolve() const {
    RtdConfig cfg;
    cfg.seed = seed;
    cfg.runs = runs;
    cfg.max_samples = max_samples;
    cfg.threads = threads;
    if (subset_size == "all") {
      cfg.subset_size.reset();
    } else {
      cfg.subset_size = ParseCount(subset_size, "--subset-size");
    }
    if (layers != "all") {
      std::vector<std::size_t> picked;
      std::stringstream ss(layers);
      for (std::string item; std::getline(ss, item, ',');) picked.push_back(ParseCount(item, "--layers"));
      cfg.layers = std::move(picked);
    }
    cfg.Validate();
    return cfg;
  }

  static std::size_t ParseCount(const std::string& text, const char* flag) {
    try {
      std::size_t pos = 0;
      const long long v = std::stoll(text, &pos);
      if (pos == text.size() && v >= 0) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
    throw Error(ErrorKind::kInvalidArgument, std::string(flag) + " expects a count, got '" + text + "'");
  }
};

inline std::vector<std::size_t> ParseSizes(const std::string& text) {
  std::vector<std::size_t> sizes;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    sizes.push_back(RtdFlags::ParseCount(item, "--subset"));
  }
  return sizes;
}

// ---------------------------------------------------------------------------

struct SynthOptions {
  std::string out;
  std::uint64_t seed = 0;
  std::string preset = "benchmark";
  std::optional<std::size_t> k, samples, tokens, attention_samples;
  std::optional<int> classes;
  std::optional<std::uint32_t> layers, heads;
  std::vector<double> skill;
  std::string similarity_path;
  std::optional<double> noise, sharpness;
};

inline SynthConfig ResolveSynth(const SynthOptions& o) {
  SynthConfig cfg;
  if (o.preset == "benchmark") {
    cfg = BenchmarkConfig(o.seed);
  } else if (o.preset == "weak-strong") {
    cfg = WeakStrongConfig(o.seed);
  } else if (o.preset == "identical") {
    cfg = IdenticalConfig(o.k.value_or(5), o.seed);
  } else if (o.preset == "custom") {
    if (!o.k || o.skill.empty() || o.similarity_path.empty()) {
      throw Error(ErrorKind::kInvalidArgument, "preset 'custom' needs --k, --skill and --similarity");
    }
    cfg.k = *o.k;
    cfg.seed = o.seed;
  } else {
    throw Error(ErrorKind::kInvalidArgument, "unknown preset '" + o.preset + "'");
  }
  if (o.k && o.preset != "identical" && o.preset != "custom" && *o.k != cfg.k) {
    throw Error(ErrorKind::kInvalidArgument, "--k conflicts with preset '" + o.preset + "'");
  }
  if (!o.skill.empty()) cfg.skill = o.skill;
  if (!o.similarity_path.empty()) {
    const auto doc = ReadJsonFile(o.similarity_path);
    cfg.similarity.clear();
    try {
      for (const auto& row : doc) {
        for (const auto& v : row) cfg.similarity.push_back(v.get<double>());
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::kInvalidArgument, std::string("similarity must be a k x k array: ") + e.what());
    }
  }
  if (o.samples) cfg.n_samples = *o.samples;
  if (o.tokens) cfg.n_tokens = *o.tokens;
  if (o.attention_samples) cfg.attention_samples = *o.attention_samples;
  if (o.classes) cfg.num_classes = *o.classes;
  if (o.layers) cfg.layers = *o.layers;
  if (o.heads) cfg.heads = *o.heads;
  if (o.noise) cfg.noise_scale = *o.noise;
  if (o.sharpness) cfg.attention_sharpness = *o.sharpness;
  return cfg;
}

inline int CmdSynth(const SynthOptions& o, std::ostream& out) {
  const SynthConfig cfg = ResolveSynth(o);
  Generate(cfg, o.out);
  out << (fs::path(o.out) / "manifest.json").string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct RtdOptions {
  std::string manifest;
  std::string out;
  std::string dump_barcodes;
  RtdFlags rtd;
};

inline RtdMatrix ComputeManifestRtd(const Manifest& manifest, const RtdConfig& cfg,
                                    const std::string& dump_dir = {}) {
  const auto attention = LoadAttention(manifest, cfg.max_samples);
  BarcodeDumpFn dump;
  if (!dump_dir.empty()) {
    std::error_code ec;
    fs::create_directories(dump_dir, ec);
    if (ec) throw Error(ErrorKind::kIoFailure, "cannot create " + dump_dir);
    const auto ids = manifest.model_ids();
    dump = [&, ids](std::size_t i, std::size_t j, const Barcode& b) {
      WriteBarcodeCsv(b, fs::path(dump_dir) / (ids[i] + "__vs__" + ids[j] + ".csv"));
    };
  }
  RtdMatrix m = ComputeRtdMatrix(attention, cfg, dump);
  m.Validate();
  return m;
}

inline int CmdRtd(const RtdOptions& o, std::ostream& out) {
  const RtdConfig cfg = o.rtd.Resolve();
  const Manifest manifest = ReadManifest(o.manifest);
  const RtdMatrix m = ComputeManifestRtd(manifest, cfg, o.dump_barcodes);
  WriteJsonFile(ToJson(m), o.out);
  out << o.out << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct OptimizeOptions {
  std::string manifest;
  std::string out;
  std::string mode = "rtd";
  std::string rtd_path;
  std::string objective = "similarity";
  std::string correlation = "moments";
  std::string risk_out;
  RtdFlags rtd;
};

inline int CmdOptimize(const OptimizeOptions& o, std::ostream& out) {
  const Manifest manifest = ReadManifest(o.manifest);
  const auto preds = ReadAllPredictions(manifest);
  const auto ids = manifest.model_ids();
  if (o.objective != "similarity" && o.objective != "literal") {
    throw Error(ErrorKind::kInvalidArgument, "unknown objective '" + o.objective + "'");
  }
  if (o.correlation != "moments" && o.correlation != "pearson") {
    throw Error(ErrorKind::kInvalidArgument, "unknown correlation '" + o.correlation + "'");
  }

  WeightsFile w;
  w.model_ids = ids;
  w.mode = o.mode;
  RiskModel risk;
  if (o.mode == "equal") {
    risk = EstimateFromOutputs(preds, CorrelationMode::kMoments);
    w.alphas = UniformWeights(ids.size());
    w.objective = QuadraticRisk(risk, w.alphas);
  } else {
    if (o.mode == "output-corr") {
      risk = EstimateFromOutputs(preds, o.correlation == "pearson" ? CorrelationMode::kPearson
                                                                   : CorrelationMode::kMoments);
    } else if (o.mode == "rtd") {
      RtdMatrix rtd;
      if (!o.rtd_path.empty()) {
        rtd = RtdMatrixFromJson(ReadJsonFile(o.rtd_path));
        if (rtd.model_ids != ids) {
          throw Error(ErrorKind::kModelIdMismatch, "rtd matrix models differ from the manifest");
        }
      } else {
        rtd = ComputeManifestRtd(manifest, o.rtd.Resolve());
      }
      risk = o.objective == "literal" ? RtdLiteralRisk(rtd, preds) : RtdToRisk(rtd, preds);
    } else {
      throw Error(ErrorKind::kInvalidArgument, "unknown mode '" + o.mode + "'");
    }
    const QpSolution sol = OptimizeWeights(risk);
    w.alphas = sol.weights;
    w.objective = sol.objective;
    w.psd_shift = sol.psd_shift;
  }
  WriteJsonFile(ToJson(w), o.out);
  if (!o.risk_out.empty()) WriteJsonFile(ToJson(risk), o.risk_out);
  out << o.out << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct EvaluateOptions {
  std::string manifest;
  std::string weights;
  std::string out;
  std::string curve_out;
  std::string subset;
  std::string subset_out;
  std::string risk;
  std::string empty_policy = "perfect";
};

struct EnsembleScores {
  double accuracy;
  double aurc;
  RejectionCurve curve;
};

inline EnsembleScores Score(const PredictionSet& p, EmptyRetainedPolicy policy) {
  EnsembleScores s{Accuracy(p), 0.0, ComputeRejectionCurve(p, policy)};
  s.aurc = Aurc(s.curve);
  return s;
}

inline int CmdEvaluate(const EvaluateOptions& o, std::ostream& out) {
  EmptyRetainedPolicy policy;
  if (o.empty_policy == "perfect") {
    policy = EmptyRetainedPolicy::kPerfect;
  } else if (o.empty_policy == "skip") {
    policy = EmptyRetainedPolicy::kSkip;
  } else {
    throw Error(ErrorKind::kInvalidArgument, "unknown empty policy '" + o.empty_policy + "'");
  }
  const Manifest manifest = ReadManifest(o.manifest);
  const auto preds = ReadAllPredictions(manifest);
  const auto ids = manifest.model_ids();
  const WeightsFile w = WeightsFromJson(ReadJsonFile(o.weights));
  if (w.model_ids != ids) {
    throw Error(ErrorKind::kModelIdMismatch, "weights file models differ from the manifest");
  }

  const EnsembleScores ensemble = Score(EnsemblePredict(preds, w.alphas), policy);
  std::vector<EnsembleScores> standalone;
  for (const auto& p : preds) standalone.push_back(Score(p, policy));

  nlohmann::json report;
  report["mode"] = w.mode;
  report["weights"] = {{"model_ids", w.model_ids}, {"alphas", w.alphas}};
  report["accuracy"] = ensemble.accuracy;
  report["aurc"] = ensemble.aurc;
  std::vector<double> acc, aurc;
  for (const auto& s : standalone) {
    acc.push_back(s.accuracy);
    aurc.push_back(s.aurc);
  }
  report["standalone_accuracy"] = acc;
  report["standalone_aurc"] = aurc;
  report["config"] = {{"manifest", o.manifest},
                      {"weights", o.weights},
                      {"objective", w.objective},
                      {"psd_shift", w.psd_shift},
                      {"empty_policy", o.empty_policy},
                      {"subset", o.subset},
                      {"risk", o.risk},
                      {"num_samples", preds.front().size()},
                      {"num_classes", manifest.num_classes}};

  if (!o.subset.empty()) {
    if (o.risk.empty()) {
      throw Error(ErrorKind::kInvalidArgument, "--subset needs --risk (written by optimize --risk-out)");
    }
    const RiskModel risk = RiskModelFromJson(ReadJsonFile(o.risk));
    if (risk.size() != ids.size()) {
      throw Error(ErrorKind::kModelIdMismatch, "risk model size differs from the manifest");
    }
    const auto sizes = ParseSizes(o.subset);
    const auto subsets = SelectSubsets(risk, sizes);
    nlohmann::json rows = nlohmann::json::array();
    std::string table = "size,accuracy,aurc\n";
    for (const auto& [size, result] : subsets) {
      std::vector<PredictionSet> chosen;
      std::vector<std::string> chosen_ids;
      for (std::size_t i : result.models) {
        chosen.push_back(preds[i]);
        chosen_ids.push_back(ids[i]);
      }
      const auto scores = Score(EnsemblePredict(chosen, result.solution.weights), policy);
      rows.push_back({{"size", size},
                      {"model_ids", chosen_ids},
                      {"alphas", result.solution.weights},
                      {"accuracy", scores.accuracy},
                      {"aurc", scores.aurc}});
      char buf[96];
      std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g\n", size, scores.accuracy, scores.aurc);
      table += buf;
    }
    report["subsets"] = std::move(rows);
    if (!o.subset_out.empty()) {
      std::ofstream f(o.subset_out, std::ios::binary | std::ios::trunc);
      if (!f || !(f << table)) throw Error(ErrorKind::kIoFailure, "cannot write " + o.subset_out);
    }
  }

  if (!o.curve_out.empty()) {
    std::error_code ec;
    fs::create_directories(o.curve_out, ec);
    if (ec) throw Error(ErrorKind::kIoFailure, "cannot create " + o.curve_out);
    WriteCurveCsv(ensemble.curve, fs::path(o.curve_out) / "ensemble.csv");
    for (std::size_t i = 0; i < ids.size(); ++i) {
      WriteCurveCsv(standalone[i].curve, fs::path(o.curve_out) / ("model_" + ids[i] + ".csv"));
    }
  }
  WriteJsonFile(report, o.out);
  out << o.out << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

inline int Run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"Topology-weighted classifier ensembles"};
  app.require_subcommand(1);

  SynthOptions synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic ensemble");
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();
  synth_cmd->add_option("--seed", synth.seed, "Generator seed");
  synth_cmd->add_option("--preset", synth.preset, "benchmark | weak-strong | identical | custom");
  synth_cmd->add_option("--k", synth.k, "Model count (identical/custom presets)");
  synth_cmd->add_option("--samples", synth.samples, "Validation samples");
  synth_cmd->add_option("--tokens", synth.tokens, "Tokens per attention matrix");
  synth_cmd->add_option("--attention-samples", synth.attention_samples, "Samples with attention files");
  synth_cmd->add_option("--classes", synth.classes, "Class count");
  synth_cmd->add_option("--layers", synth.layers, "Attention layers");
  synth_cmd->add_option("--heads", synth.heads, "Attention heads");
  synth_cmd->add_option("--skill", synth.skill, "Per-model signal strength")->delimiter(',');
  synth_cmd->add_option("--similarity", synth.similarity_path, "JSON file with a k x k matrix");
  synth_cmd->add_option("--noise", synth.noise, "Output noise scale");
  synth_cmd->add_option("--sharpness", synth.sharpness, "Attention logit scale");

  RtdOptions rtd;
  auto* rtd_cmd = app.add_subcommand("rtd", "Compute the pairwise topological divergence matrix");
  rtd_cmd->add_option("--manifest", rtd.manifest, "Experiment manifest")->required();
  rtd_cmd->add_option("--out", rtd.out, "Output JSON")->required();
  rtd_cmd->add_option("--dump-barcodes", rtd.dump_barcodes, "Directory for per-pair barcode CSVs");
  rtd.rtd.Register(rtd_cmd);

  OptimizeOptions opt;
  auto* opt_cmd = app.add_subcommand("optimize", "Solve for ensemble weights");
  opt_cmd->add_option("--manifest", opt.manifest, "Experiment manifest")->required();
  opt_cmd->add_option("--out", opt.out, "Weights JSON")->required();
  opt_cmd->add_option("--mode", opt.mode, "equal | output-corr | rtd");
  opt_cmd->add_option("--rtd", opt.rtd_path, "Precomputed RTD matrix (rtd mode)");
  opt_cmd->add_option("--objective", opt.objective, "similarity | literal (rtd mode)");
  opt_cmd->add_option("--correlation", opt.correlation, "moments | pearson (output-corr mode)");
  opt_cmd->add_option("--risk-out", opt.risk_out, "Also write the risk model JSON");
  opt.rtd.Register(opt_cmd);

  EvaluateOptions eval;
  auto* eval_cmd = app.add_subcommand("evaluate", "Score an ensemble and its members");
  eval_cmd->add_option("--manifest", eval.manifest, "Experiment manifest")->required();
  eval_cmd->add_option("--weights", eval.weights, "Weights JSON")->required();
  eval_cmd->add_option("--out", eval.out, "Report JSON")->required();
  eval_cmd->add_option("--curve-out", eval.curve_out, "Directory for rejection-curve CSVs");
  eval_cmd->add_option("--subset", eval.subset, "Comma-separated subset sizes");
  eval_cmd->add_option("--subset-out", eval.subset_out, "CSV table of subset results");
  eval_cmd->add_option("--risk", eval.risk, "Risk model JSON (needed by --subset)");
  eval_cmd->add_option("--empty-policy", eval.empty_policy, "perfect | skip");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (*synth_cmd) return CmdSynth(synth, out);
    if (*rtd_cmd) return CmdRtd(rtd, out);
    if (*opt_cmd) return CmdOptimize(opt, out);
    if (*eval_cmd) return CmdEvaluate(eval, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return IsIoError(e.kind()) ? kExitIo : kExitValidation;
  } catch (const fs::filesystem_error& e) {
    err << "error: IoFailure: " << e.what() << '\n';
    return kExitIo;
  }
  return kExitValidation;
}

}  // namespace topoens::cli
