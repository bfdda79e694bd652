#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "topoens/error.hpp"

namespace topoens {

namespace fs = std::filesystem;

inline constexpr std::size_t kMaxModels = 64;
inline constexpr double kPredictionRowTolerance = 1e-5;
inline constexpr double kAttentionRowTolerance = 1e-4;
inline constexpr std::uint16_t kAttentionFormatVersion = 1;

struct ModelEntry {
  std::string model_id;
  fs::path predictions_path;
  fs::path attention_dir;
};

struct Manifest {
  std::string dataset_name;
  int num_classes = 2;
  std::vector<ModelEntry> models;
  fs::path validation_labels_path;

  std::size_t size() const { return models.size(); }
  std::vector<std::string> model_ids() const {
    std::vector<std::string> ids;
    ids.reserve(models.size());
    for (const auto& m : models) ids.push_back(m.model_id);
    return ids;
  }
};

// Validation-set outputs of one classifier. `probs` is row-major,
// sample-major: probs[s * num_classes + c].
struct PredictionSet {
  int num_classes = 2;
  std::vector<std::string> sample_ids;
  std::vector<int> labels;
  std::vector<double> probs;

  std::size_t size() const { return sample_ids.size(); }
  std::span<const double> row(std::size_t s) const {
    return {probs.data() + s * num_classes, static_cast<std::size_t>(num_classes)};
  }
  std::span<double> row(std::size_t s) {
    return {probs.data() + s * num_classes, static_cast<std::size_t>(num_classes)};
  }
};

// Attention weights of one model on one sample, layer-major then head-major,
// each head an n x n row-stochastic matrix.
struct AttentionTensor {
  std::string model_id;
  std::string sample_id;
  std::uint32_t layers = 0;
  std::uint32_t heads = 0;
  std::uint32_t tokens = 0;
  std::vector<float> values;

  std::size_t matrix_size() const {
    return static_cast<std::size_t>(tokens) * tokens;
  }
  std::span<const float> matrix(std::size_t layer, std::size_t head) const {
    return {values.data() + (layer * heads + head) * matrix_size(), matrix_size()};
  }
  std::span<float> matrix(std::size_t layer, std::size_t head) {
    return {values.data() + (layer * heads + head) * matrix_size(), matrix_size()};
  }
};

inline void ValidatePredictions(const PredictionSet& set) {
  if (set.num_classes < 2) {
    throw Error(ErrorKind::kInvariantViolation,
                "num_classes must be >= 2, got " + std::to_string(set.num_classes));
  }
  if (set.labels.size() != set.size() ||
      set.probs.size() != set.size() * static_cast<std::size_t>(set.num_classes)) {
    throw Error(ErrorKind::kInvariantViolation, "prediction set arrays have inconsistent sizes");
  }
  for (std::size_t s = 0; s < set.size(); ++s) {
    if (set.labels[s] < 0 || set.labels[s] >= set.num_classes) {
      throw Error(ErrorKind::kInvariantViolation,
                  "label " + std::to_string(set.labels[s]) + " out of range for sample '" +
                      set.sample_ids[s] + "'");
    }
    double sum = 0.0;
    for (double p : set.row(s)) {
      if (!(p >= 0.0 && p <= 1.0)) {
        throw Error(ErrorKind::kInvariantViolation,
                    "probability outside [0,1] for sample '" + set.sample_ids[s] + "'");
      }
      sum += p;
    }
    if (std::abs(sum - 1.0) > kPredictionRowTolerance) {
      throw Error(ErrorKind::kInvariantViolation,
                  "probability row of sample '" + set.sample_ids[s] + "' sums to " +
                      std::to_string(sum));
    }
  }
}

inline void ValidateAttention(const AttentionTensor& t) {
  if (t.values.size() != static_cast<std::size_t>(t.layers) * t.heads * t.matrix_size()) {
    throw Error(ErrorKind::kShapeMismatch, "attention value count does not match L*H*n*n");
  }
  const std::size_t n = t.tokens;
  for (std::size_t l = 0; l < t.layers; ++l) {
    for (std::size_t h = 0; h < t.heads; ++h) {
      auto m = t.matrix(l, h);
      for (std::size_t r = 0; r < n; ++r) {
        double sum = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
          const float v = m[r * n + c];
          if (!(v >= 0.0f && v <= 1.0f)) {
            throw Error(ErrorKind::kEntryOutOfRange,
                        "attention value " + std::to_string(v) + " at layer " +
                            std::to_string(l) + " head " + std::to_string(h) + " row " +
                            std::to_string(r) + " col " + std::to_string(c));
          }
          sum += v;
        }
        if (std::abs(sum - 1.0) > kAttentionRowTolerance) {
          throw Error(ErrorKind::kRowSumViolation,
                      "layer " + std::to_string(l) + " head " + std::to_string(h) + " row " +
                          std::to_string(r) + " sums to " + std::to_string(sum));
        }
      }
    }
  }
}

namespace detail {

inline std::vector<std::string> SplitCsvLine(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

inline double ParseDouble(const std::string& text, const std::string& what) {
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (text.empty() || end != text.c_str() + text.size() || !std::isfinite(v)) {
    throw Error(ErrorKind::kInvariantViolation, "cannot parse " + what + " '" + text + "'");
  }
  return v;
}

inline int ParseInt(const std::string& text, const std::string& what) {
  char* end = nullptr;
  const long v = std::strtol(text.c_str(), &end, 10);
  if (text.empty() || end != text.c_str() + text.size()) {
    throw Error(ErrorKind::kInvariantViolation, "cannot parse " + what + " '" + text + "'");
  }
  return static_cast<int>(v);
}

inline std::string FormatDouble(double v, int significant_digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", significant_digits, v);
  return buf;
}

inline std::ifstream OpenForRead(const fs::path& path, std::ios::openmode mode = std::ios::in) {
  if (!fs::exists(path)) {
    throw Error(ErrorKind::kMissingFile, path.string());
  }
  std::ifstream in(path, mode);
  if (!in) throw Error(ErrorKind::kIoFailure, "cannot open " + path.string());
  return in;
}

inline std::ofstream OpenForWrite(const fs::path& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(path, mode | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIoFailure, "cannot write " + path.string());
  return out;
}

template <typename T>
void PutLittleEndian(std::string& buf, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    buf.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
  }
}

template <typename T>
T GetLittleEndian(const unsigned char* p) {
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    value |= static_cast<T>(static_cast<T>(p[i]) << (8 * i));
  }
  return value;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Predictions CSV: header `sample_id,label,p_0,...,p_{C-1}`.

inline void WritePredictions(const PredictionSet& set, const fs::path& path) {
  ValidatePredictions(set);
  std::string text = "sample_id,label";
  for (int c = 0; c < set.num_classes; ++c) text += ",p_" + std::to_string(c);
  text += '\n';
  for (std::size_t s = 0; s < set.size(); ++s) {
    text += set.sample_ids[s];
    text += ',';
    text += std::to_string(set.labels[s]);
    for (double p : set.row(s)) {
      text += ',';
      text += detail::FormatDouble(p, 9);
    }
    text += '\n';
  }
  auto out = detail::OpenForWrite(path, std::ios::binary);
  out << text;
  if (!out) throw Error(ErrorKind::kIoFailure, "short write to " + path.string());
}

inline PredictionSet ReadPredictions(const fs::path& path) {
  auto in = detail::OpenForRead(path);
  std::string line;
  if (!std::getline(in, line)) {
    throw Error(ErrorKind::kInvariantViolation, "empty predictions file " + path.string());
  }
  const auto header = detail::SplitCsvLine(line);
  if (header.size() < 4 || header[0] != "sample_id" || header[1] != "label") {
    throw Error(ErrorKind::kInvariantViolation, "bad predictions header in " + path.string());
  }
  PredictionSet set;
  set.num_classes = static_cast<int>(header.size() - 2);
  for (int c = 0; c < set.num_classes; ++c) {
    if (header[2 + c] != "p_" + std::to_string(c)) {
      throw Error(ErrorKind::kInvariantViolation,
                  "bad probability column '" + header[2 + c] + "' in " + path.string());
    }
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto fields = detail::SplitCsvLine(line);
    if (fields.size() != header.size()) {
      throw Error(ErrorKind::kInvariantViolation,
                  "row with " + std::to_string(fields.size()) + " fields in " + path.string());
    }
    set.sample_ids.push_back(fields[0]);
    set.labels.push_back(detail::ParseInt(fields[1], "label"));
    for (int c = 0; c < set.num_classes; ++c) {
      set.probs.push_back(detail::ParseDouble(fields[2 + c], "probability"));
    }
  }
  ValidatePredictions(set);
  return set;
}

// Labels CSV: header `sample_id,label`.
struct LabelSet {
  std::vector<std::string> sample_ids;
  std::vector<int> labels;
};

inline void WriteLabels(const LabelSet& labels, const fs::path& path) {
  std::string text = "sample_id,label\n";
  for (std::size_t s = 0; s < labels.sample_ids.size(); ++s) {
    text += labels.sample_ids[s] + "," + std::to_string(labels.labels[s]) + "\n";
  }
  auto out = detail::OpenForWrite(path, std::ios::binary);
  out << text;
  if (!out) throw Error(ErrorKind::kIoFailure, "short write to " + path.string());
}

inline LabelSet ReadLabels(const fs::path& path) {
  auto in = detail::OpenForRead(path);
  std::string line;
  if (!std::getline(in, line) || line != "sample_id,label") {
    throw Error(ErrorKind::kInvariantViolation, "bad labels header in " + path.string());
  }
  LabelSet labels;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto fields = detail::SplitCsvLine(line);
    if (fields.size() != 2) {
      throw Error(ErrorKind::kInvariantViolation, "bad labels row in " + path.string());
    }
    labels.sample_ids.push_back(fields[0]);
    labels.labels.push_back(detail::ParseInt(fields[1], "label"));
  }
  return labels;
}

// ---------------------------------------------------------------------------
// Attention binary: "ATNB", u16 version, u32 L, u32 H, u32 n, then L*H*n*n
// float32 values; all little-endian.

inline constexpr std::array<char, 4> kAttentionMagic = {'A', 'T', 'N', 'B'};
inline constexpr std::size_t kAttentionHeaderBytes = 4 + 2 + 3 * 4;

inline std::string EncodeAttention(const AttentionTensor& t) {
  std::string buf;
  buf.reserve(kAttentionHeaderBytes + t.values.size() * 4);
  buf.append(kAttentionMagic.data(), kAttentionMagic.size());
  detail::PutLittleEndian<std::uint16_t>(buf, kAttentionFormatVersion);
  detail::PutLittleEndian<std::uint32_t>(buf, t.layers);
  detail::PutLittleEndian<std::uint32_t>(buf, t.heads);
  detail::PutLittleEndian<std::uint32_t>(buf, t.tokens);
  for (float v : t.values) {
    std::uint32_t bits;
    static_assert(sizeof(bits) == sizeof(v));
    std::memcpy(&bits, &v, sizeof(bits));
    detail::PutLittleEndian<std::uint32_t>(buf, bits);
  }
  return buf;
}

// `model_id` and `sample_id` are not stored in the file; the caller supplies
// them (the sample id is the file stem by convention).
inline AttentionTensor DecodeAttention(std::span<const unsigned char> bytes,
                                       std::string model_id = {},
                                       std::string sample_id = {}) {
  const std::size_t prefix = std::min<std::size_t>(bytes.size(), kAttentionMagic.size());
  if (!std::equal(kAttentionMagic.begin(), kAttentionMagic.begin() + prefix, bytes.begin(),
                  [](char a, unsigned char b) { return static_cast<unsigned char>(a) == b; })) {
    throw Error(ErrorKind::kBadMagic, "expected 'ATNB'");
  }
  if (bytes.size() < kAttentionHeaderBytes) {
    throw Error(ErrorKind::kTruncatedFile, "header shorter than " +
                                               std::to_string(kAttentionHeaderBytes) + " bytes");
  }
  const unsigned char* p = bytes.data() + 4;
  const auto version = detail::GetLittleEndian<std::uint16_t>(p);
  if (version != kAttentionFormatVersion) {
    throw Error(ErrorKind::kBadMagic, "unsupported version " + std::to_string(version));
  }
  AttentionTensor t;
  t.model_id = std::move(model_id);
  t.sample_id = std::move(sample_id);
  t.layers = detail::GetLittleEndian<std::uint32_t>(p + 2);
  t.heads = detail::GetLittleEndian<std::uint32_t>(p + 6);
  t.tokens = detail::GetLittleEndian<std::uint32_t>(p + 10);
  const std::uint64_t count =
      static_cast<std::uint64_t>(t.layers) * t.heads * t.tokens * t.tokens;
  const std::uint64_t expected = kAttentionHeaderBytes + count * 4;
  if (bytes.size() < expected) {
    throw Error(ErrorKind::kTruncatedFile, "expected " + std::to_string(expected) +
                                               " bytes, got " + std::to_string(bytes.size()));
  }
  if (bytes.size() > expected) {
    throw Error(ErrorKind::kTruncatedFile, std::to_string(bytes.size() - expected) +
                                               " trailing bytes after payload");
  }
  t.values.resize(count);
  const unsigned char* payload = bytes.data() + kAttentionHeaderBytes;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto bits = detail::GetLittleEndian<std::uint32_t>(payload + 4 * i);
    std::memcpy(&t.values[i], &bits, sizeof(bits));
  }
  ValidateAttention(t);
  return t;
}

inline void WriteAttention(const AttentionTensor& t, const fs::path& path) {
  ValidateAttention(t);
  const std::string buf = EncodeAttention(t);
  auto out = detail::OpenForWrite(path, std::ios::binary);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw Error(ErrorKind::kIoFailure, "short write to " + path.string());
}

inline AttentionTensor ReadAttention(const fs::path& path, std::string model_id = {}) {
  auto in = detail::OpenForRead(path, std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return DecodeAttention(bytes, std::move(model_id), path.stem().string());
}

inline fs::path AttentionPath(const fs::path& attention_dir, const std::string& sample_id) {
  return attention_dir / (sample_id + ".atnb");
}

// Sample ids with an attention file in `dir`, sorted.
inline std::vector<std::string> ListAttentionSamples(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorKind::kMissingFile, dir.string());
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".atnb") {
      ids.push_back(entry.path().stem().string());
    }
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

// ---------------------------------------------------------------------------
// Manifest JSON.

namespace detail {

inline const nlohmann::json& RequireField(const nlohmann::json& obj, const char* field,
                                          const char* context) {
  auto it = obj.find(field);
  if (it == obj.end()) {
    throw Error(ErrorKind::kMalformedManifest,
                std::string("missing field '") + field + "' in " + context);
  }
  return *it;
}

inline std::string RequireString(const nlohmann::json& obj, const char* field,
                                 const char* context) {
  const auto& v = RequireField(obj, field, context);
  if (!v.is_string()) {
    throw Error(ErrorKind::kMalformedManifest, std::string("field '") + field + "' must be a string");
  }
  return v.get<std::string>();
}

inline void RejectUnknownKeys(const nlohmann::json& obj, const std::set<std::string>& allowed,
                              const char* context) {
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) {
      throw Error(ErrorKind::kMalformedManifest,
                  "unexpected field '" + key + "' in " + context);
    }
  }
}

}  // namespace detail

// Relative paths are resolved against the manifest's directory.
inline Manifest ParseManifest(const nlohmann::json& doc, const fs::path& base_dir,
                              bool check_paths = true) {
  if (!doc.is_object()) throw Error(ErrorKind::kMalformedManifest, "top level must be an object");
  detail::RejectUnknownKeys(doc, {"dataset_name", "num_classes", "models", "validation_labels_path"},
                            "manifest");
  auto resolve = [&](const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  };

  Manifest m;
  m.dataset_name = detail::RequireString(doc, "dataset_name", "manifest");
  const auto& classes = detail::RequireField(doc, "num_classes", "manifest");
  if (!classes.is_number_integer() || classes.get<long long>() < 2) {
    throw Error(ErrorKind::kMalformedManifest, "field 'num_classes' must be an integer >= 2");
  }
  m.num_classes = classes.get<int>();
  m.validation_labels_path =
      resolve(detail::RequireString(doc, "validation_labels_path", "manifest"));

  const auto& models = detail::RequireField(doc, "models", "manifest");
  if (!models.is_array()) throw Error(ErrorKind::kMalformedManifest, "field 'models' must be an array");
  if (models.empty() || models.size() > kMaxModels) {
    throw Error(ErrorKind::kMalformedManifest,
                "field 'models' must list 1.." + std::to_string(kMaxModels) + " entries, got " +
                    std::to_string(models.size()));
  }
  std::set<std::string> seen;
  for (const auto& entry : models) {
    if (!entry.is_object()) throw Error(ErrorKind::kMalformedManifest, "models[] entries must be objects");
    detail::RejectUnknownKeys(entry, {"model_id", "predictions_path", "attention_dir"}, "models[]");
    ModelEntry e;
    e.model_id = detail::RequireString(entry, "model_id", "models[]");
    if (e.model_id.empty()) throw Error(ErrorKind::kMalformedManifest, "field 'model_id' is empty");
    if (!seen.insert(e.model_id).second) throw Error(ErrorKind::kDuplicateModelId, e.model_id);
    e.predictions_path = resolve(detail::RequireString(entry, "predictions_path", "models[]"));
    e.attention_dir = resolve(detail::RequireString(entry, "attention_dir", "models[]"));
    m.models.push_back(std::move(e));
  }

  if (check_paths) {
    if (!fs::exists(m.validation_labels_path)) {
      throw Error(ErrorKind::kMissingFile, m.validation_labels_path.string());
    }
    for (const auto& e : m.models) {
      if (!fs::exists(e.predictions_path)) throw Error(ErrorKind::kMissingFile, e.predictions_path.string());
      if (!fs::is_directory(e.attention_dir)) throw Error(ErrorKind::kMissingFile, e.attention_dir.string());
    }
  }
  return m;
}

inline Manifest ReadManifest(const fs::path& path) {
  auto in = detail::OpenForRead(path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::kMalformedManifest, std::string("invalid JSON: ") + e.what());
  }
  return ParseManifest(doc, path.parent_path());
}

// Paths are written relative to `base_dir` when they live beneath it.
inline nlohmann::json ManifestToJson(const Manifest& m, const fs::path& base_dir) {
  auto rel = [&](const fs::path& p) {
    const auto r = p.lexically_relative(base_dir);
    return (r.empty() || *r.begin() == "..") ? p.generic_string() : r.generic_string();
  };
  nlohmann::json doc;
  doc["dataset_name"] = m.dataset_name;
  doc["num_classes"] = m.num_classes;
  doc["validation_labels_path"] = rel(m.validation_labels_path);
  doc["models"] = nlohmann::json::array();
  for (const auto& e : m.models) {
    doc["models"].push_back({{"model_id", e.model_id},
                             {"predictions_path", rel(e.predictions_path)},
                             {"attention_dir", rel(e.attention_dir)}});
  }
  return doc;
}

inline void WriteManifest(const Manifest& m, const fs::path& path) {
  auto out = detail::OpenForWrite(path, std::ios::binary);
  out << ManifestToJson(m, path.parent_path()).dump(2) << '\n';
  if (!out) throw Error(ErrorKind::kIoFailure, "short write to " + path.string());
}

// Reads every model's predictions and checks that they are aligned with each
// other and with the labels file.
inline std::vector<PredictionSet> ReadAllPredictions(const Manifest& m) {
  const LabelSet labels = ReadLabels(m.validation_labels_path);
  std::vector<PredictionSet> sets;
  sets.reserve(m.size());
  for (const auto& e : m.models) {
    PredictionSet set = ReadPredictions(e.predictions_path);
    if (set.num_classes != m.num_classes) {
      throw Error(ErrorKind::kMisaligned, "model '" + e.model_id + "' has " +
                                              std::to_string(set.num_classes) +
                                              " classes, manifest says " +
                                              std::to_string(m.num_classes));
    }
    if (set.sample_ids != labels.sample_ids) {
      throw Error(ErrorKind::kMisaligned,
                  "sample ids of model '" + e.model_id + "' differ from the labels file");
    }
    if (set.labels != labels.labels) {
      throw Error(ErrorKind::kMisaligned,
                  "labels of model '" + e.model_id + "' differ from the labels file");
    }
    sets.push_back(std::move(set));
  }
  return sets;
}

}  // namespace topoens
