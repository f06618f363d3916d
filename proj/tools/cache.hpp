#pragma once

#include <atomic>
#include <filesystem>
#include <string>
#include <string_view>

#include "kefam/family_geom.hpp"

namespace kefam::app {

std::string sha256_hex(std::string_view data);

// Converged slice solutions stored under `dir` by a content hash of the
// family, parameters, base value, lattice, interior footprint, Fefferman level
// and tolerance. A hit warm-starts Newton from the stored u; when that state is
// already converged the stored trace and iteration count are restored, so
// outputs match the run that filled the cache.
class SliceCache {
 public:
  SliceCache() = default;  // disabled
  SliceCache(std::filesystem::path dir, const FamilyDefinition& F);

  MASolution solve(const GridPtr& G, const BackgroundPair& B, const SolveOptions& opt) const;
  SliceSolver solver() const;

  bool enabled() const { return !dir_.empty(); }
  int hits() const { return hits_; }
  int misses() const { return misses_; }

 private:
  std::string key(const SliceGrid& G, const BackgroundPair& B, const SolveOptions& opt) const;

  std::filesystem::path dir_;
  std::string family_;
  nlohmann::json params_;
  mutable std::atomic<int> hits_{0}, misses_{0};
};

// Flat float64 dump of a per-node field, native byte order.
void write_field(const std::filesystem::path& path, const std::vector<double>& values);
std::vector<double> read_field(const std::filesystem::path& path);

// Grid metadata for a field dump.
nlohmann::json lattice_json(const SliceGrid& G);

}  // namespace kefam::app
