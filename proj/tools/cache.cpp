#include "cache.hpp"

#include <fmt/format.h>
#include <openssl/evp.h>
#include <spdlog/spdlog.h>

#include <fstream>

#include "kefam/error.hpp"

namespace kefam::app {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw Error(ErrorKind::InvalidArgument, "SHA-256 digest failed");
  std::string out;
  for (unsigned int i = 0; i < len; ++i) out += fmt::format("{:02x}", md[i]);
  return out;
}

void write_field(const fs::path& path, const std::vector<double>& values) {
  std::ofstream f(path, std::ios::binary);
  f.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
  if (!f) throw Error(ErrorKind::InvalidArgument, "cannot write " + path.string());
}

std::vector<double> read_field(const fs::path& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) return {};
  const auto bytes = static_cast<std::size_t>(f.tellg());
  std::vector<double> v(bytes / sizeof(double));
  f.seekg(0);
  f.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  if (!f) return {};
  return v;
}

json lattice_json(const SliceGrid& G) {
  const auto& L = G.lattice;
  json lo = json::array(), sp = json::array(), counts = json::array(), strides = json::array();
  for (int a = 0; a < L.axes(); ++a) {
    lo.push_back(L.lo(a));
    sp.push_back(L.spacing(a));
    counts.push_back(L.count(a));
    strides.push_back(L.stride(a));
  }
  return {{"n", G.n},
          {"s", {G.s.real(), G.s.imag()}},
          {"resolution", G.resolution},
          {"eps_cut", G.eps_cut},
          {"lo", lo},
          {"spacing", sp},
          {"counts", counts},
          {"strides", strides},
          {"nodes", G.size()},
          {"interior", G.interior.size()},
          {"axes", "2a = Re z_a, 2a+1 = Im z_a"}};
}

SliceCache::SliceCache(fs::path dir, const FamilyDefinition& F) : dir_(std::move(dir)), family_(F.name), params_(F.params) {
  fs::create_directories(dir_);
}

std::string SliceCache::key(const SliceGrid& G, const BackgroundPair& B, const SolveOptions& opt) const {
  std::string ids(reinterpret_cast<const char*>(G.interior.data()), G.interior.size() * sizeof(std::size_t));
  json k{{"family", family_},
         {"params", params_},
         {"s", {G.s.real(), G.s.imag()}},
         {"lattice", lattice_json(G)},
         {"footprint", sha256_hex(ids)},
         {"level", B.level},
         {"delta0", B.delta0},
         {"blended", B.blended},
         {"tol", opt.tol},
         {"max_iterations", opt.max_iterations}};
  return sha256_hex(k.dump());
}

MASolution SliceCache::solve(const GridPtr& G, const BackgroundPair& B, const SolveOptions& opt) const {
  if (!enabled()) return solve_slice(G, B, opt);
  const std::string k = key(*G, B, opt);
  const fs::path bin = dir_ / (k + ".bin"), side = dir_ / (k + ".json");
  if (fs::exists(bin) && fs::exists(side)) {
    auto u = read_field(bin);
    json meta;
    {
      std::ifstream f(side);
      meta = json::parse(f, nullptr, false);
    }
    if (u.size() == G->size() && meta.is_object()) {
      SolveOptions warm = opt;
      warm.initial_guess = std::move(u);
      MASolution U = solve_slice(G, B, warm);
      if (U.converged && U.iterations == 0) {
        U.trace = meta.at("trace").get<std::vector<double>>();
        U.iterations = meta.at("iterations").get<int>();
        ++hits_;
        spdlog::debug("cache hit {}", k);
        return U;
      }
      spdlog::info("cache entry {} did not reproduce a converged state; solving again", k);
    }
  }
  ++misses_;
  MASolution U = solve_slice(G, B, opt);
  if (!U.converged) return U;
  const fs::path tmp_bin = dir_ / (k + ".bin.tmp"), tmp_side = dir_ / (k + ".json.tmp");
  write_field(tmp_bin, U.u);
  {
    std::ofstream f(tmp_side);
    f << json{{"trace", U.trace}, {"iterations", U.iterations}, {"lattice", lattice_json(*G)}}.dump(2) << '\n';
  }
  fs::rename(tmp_bin, bin);
  fs::rename(tmp_side, side);
  return U;
}

SliceSolver SliceCache::solver() const {
  return [this](const GridPtr& G, const BackgroundPair& B, const SolveOptions& opt) { return solve(G, B, opt); };
}

}  // namespace kefam::app
