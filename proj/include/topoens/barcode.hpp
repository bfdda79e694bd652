#pragma once

#include <cstddef>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "topoens/error.hpp"
#include "topoens/graph.hpp"

namespace topoens {

struct Bar {
  double birth;
  double death;

  double length() const { return death - birth; }
  bool AliveAt(double tau) const { return birth <= tau && tau < death; }
};

struct Barcode {
  std::vector<Bar> bars;

  std::size_t AliveAt(double tau) const {
    std::size_t count = 0;
    for (const auto& b : bars) count += b.AliveAt(tau) ? 1 : 0;
    return count;
  }
};

inline double TotalLength(const Barcode& b) {
  double total = 0.0;
  for (const auto& bar : b.bars) total += bar.length();
  return total;
}

// Bars from two merge sequences, i-th birth with i-th death.
inline Barcode PairMergeSequences(const MergeSequence& births, const MergeSequence& deaths) {
  Barcode b;
  b.bars.reserve(births.times.size());
  for (std::size_t i = 0; i < births.times.size(); ++i) {
    b.bars.push_back({births.times[i], deaths.times[i]});
  }
  return b;
}

// H0 cross-barcode of `g1` against the union graph min(g1, g_other). A bar
// is born when the union graph merges two components and dies when g1
// catches up; bars pair the i-th union merge with the i-th g1 merge, so the
// number of bars alive at tau is components(g1, tau) - components(union, tau).
// Zero-length bars are kept.
inline Barcode RCrossBarcode(const DistanceGraph& g1, const DistanceGraph& g_other) {
  const DistanceGraph joined = ElementwiseMin(g1, g_other);
  return PairMergeSequences(ComputeMergeSequence(joined), ComputeMergeSequence(g1));
}

// CSV dump with header `birth,death`; 17 significant digits.
inline void WriteBarcodeCsv(const Barcode& b, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIoFailure, "cannot write " + path.string());
  out << "birth,death\n";
  char buf[64];
  for (const auto& bar : b.bars) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g\n", bar.birth, bar.death);
    out << buf;
  }
  if (!out) throw Error(ErrorKind::kIoFailure, "short write to " + path.string());
}

}  // namespace topoens
