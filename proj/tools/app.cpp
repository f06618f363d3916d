#include "app.hpp"

#include <fmt/format.h>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>
#include <tbb/global_control.h>
#include <tbb/parallel_for.h>
#include <tbb/task_arena.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <numbers>
#include <thread>

#include "cache.hpp"
#include "kefam/error.hpp"
#include "kefam/linalg.hpp"
#include "kefam/triviality.hpp"

namespace kefam::app {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

[[noreturn]] void invalid(const std::string& field, const std::string& why) {
  throw Error(ErrorKind::ConfigInvalid, field + ": " + why);
}

double number_at(const json& j, const std::string& field) {
  if (!j.is_number()) invalid(field, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) invalid(field, "must be finite");
  return v;
}

double positive_at(const json& j, const std::string& field) {
  const double v = number_at(j, field);
  if (!(v > 0.0)) invalid(field, "must be positive");
  return v;
}

int int_at(const json& j, const std::string& field, int lo, int hi) {
  if (!j.is_number_integer()) invalid(field, "expected an integer");
  const auto v = j.get<long long>();
  if (v < lo || v > hi) invalid(field, fmt::format("must lie in [{}, {}]", lo, hi));
  return static_cast<int>(v);
}

cplx complex_at(const json& j, const std::string& field) {
  if (j.is_number()) return {number_at(j, field), 0.0};
  if (j.is_array() && j.size() == 2) return {number_at(j[0], field + "[0]"), number_at(j[1], field + "[1]")};
  invalid(field, "expected a number or [re, im]");
}

void only_keys(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
  if (!j.is_object()) invalid(where.empty() ? "config" : where, "expected an object");
  for (const auto& [k, v] : j.items()) {
    bool known = false;
    for (const char* key : keys) known = known || k == key;
    if (!known) invalid(where.empty() ? k : where + "." + k, "unknown field");
  }
}

json cjson(cplx v) { return json::array({v.real(), v.imag()}); }

json point_json(const CPoint& p) {
  json z = json::array();
  for (auto v : p.z) z.push_back(cjson(v));
  return {{"z", z}, {"s", cjson(p.s)}};
}

std::string num(double x) { return fmt::format("{:.17g}", x); }

class Csv {
 public:
  Csv(const fs::path& path, const std::vector<std::string>& header) : f_(path) {
    if (!f_) throw Error(ErrorKind::InvalidArgument, "cannot write " + path.string());
    row(header);
  }
  void row(const std::vector<std::string>& cells) {
    for (std::size_t k = 0; k < cells.size(); ++k) f_ << (k ? "," : "") << cells[k];
    f_ << '\n';
  }

 private:
  std::ofstream f_;
};

void write_json(const fs::path& path, const json& j) {
  std::ofstream f(path);
  f << j.dump(2) << '\n';
  if (!f) throw Error(ErrorKind::InvalidArgument, "cannot write " + path.string());
}

// Columns z_a (Re, Im) followed by s (Re, Im).
std::vector<std::string> point_header(int n) {
  std::vector<std::string> h;
  for (int a = 1; a <= n; ++a) {
    h.push_back(fmt::format("re_z{}", a));
    h.push_back(fmt::format("im_z{}", a));
  }
  h.push_back("re_s");
  h.push_back("im_s");
  return h;
}
std::vector<std::string> point_cells(const CPoint& p) {
  std::vector<std::string> c;
  for (auto v : p.z) {
    c.push_back(num(v.real()));
    c.push_back(num(v.imag()));
  }
  c.push_back(num(p.s.real()));
  c.push_back(num(p.s.imag()));
  return c;
}

// Named pass/fail checks; `criterion` tags the acceptance item a check feeds
// (0 for plain invariants).
class Verdicts {
 public:
  static json finite_or_text(double v) { return std::isfinite(v) ? json(v) : json(fmt::format("{}", v)); }

  void add(int criterion, const std::string& name, double value, const std::string& relation, double threshold,
           bool pass) {
    list_.push_back({{"criterion", criterion},
                     {"name", name},
                     {"value", finite_or_text(value)},
                     {"relation", relation},
                     {"threshold", threshold},
                     {"pass", pass}});
    all_ = all_ && pass;
    if (!pass) spdlog::warn("verdict {} failed: {} {} {}", name, value, relation, threshold);
  }
  void le(int criterion, const std::string& name, double value, double threshold) {
    add(criterion, name, value, "<=", threshold, value <= threshold);
  }
  void ge(int criterion, const std::string& name, double value, double threshold) {
    add(criterion, name, value, ">=", threshold, value >= threshold);
  }
  // Not evaluated; neither passes nor fails the document.
  void skip(int criterion, const std::string& name, const std::string& why) {
    list_.push_back({{"criterion", criterion}, {"name", name}, {"skipped", why}, {"pass", nullptr}});
  }
  const json& list() const { return list_; }
  bool pass() const { return all_; }

 private:
  json list_ = json::array();
  bool all_ = true;
};

struct Context {
  const ExperimentConfig& cfg;
  const FamilyDefinition& F;
  SliceCache cache;
  Verdicts verdicts;

  bool trivial() const { return static_cast<bool>(F.oracle_transport); }
  bool use_oracle() const {
    if (cfg.source == "numeric") return false;
    if (cfg.source == "oracle") return true;
    return static_cast<bool>(F.oracle_h);
  }
  SolveOptions solve_options() const {
    SolveOptions o;
    o.tol = cfg.tol;
    return o;
  }
  fs::path file(const std::string& name) const { return cfg.out / name; }

  std::vector<cplx> base_net() const {
    std::vector<cplx> b{cfg.s};
    if (cfg.base_samples > 1)
      for (auto v : base_samples(F, cfg.base_samples - 1, cfg.seed)) b.push_back(v);
    return b;
  }
  std::vector<CPoint> slice_net(cplx s) const {
    std::vector<CPoint> pts{CPoint{F.slice_center(s), s}};
    for (auto& p : interior_samples(F, s, cfg.interior_samples, cfg.seed)) pts.push_back(p);
    return pts;
  }
  HSourcePtr source_at(cplx s, int resolution) const {
    if (use_oracle()) return std::make_shared<OracleH>(F.oracle_h);
    const auto B = background_pair(F, s, cfg.fefferman_level());
    return std::make_shared<NumericH>(
        solve_slice_stack(F, B, s, resolution, cfg.delta, solve_options(), cache.solver()));
  }
  json header(const std::string& subcommand) const {
    return {{"subcommand", subcommand},
            {"family", F.name},
            {"params", F.params},
            {"n", F.n},
            {"s", cjson(cfg.s)},
            {"level", cfg.fefferman_level()},
            {"tol", cfg.tol},
            {"seed", cfg.seed},
            {"source", use_oracle() ? "oracle" : "numeric"}};
  }
  int finish(json doc, const std::string& name) {
    doc["verdicts"] = verdicts.list();
    doc["pass"] = verdicts.pass();
    write_json(file(name), doc);
    if (cache.enabled()) spdlog::info("slice cache: {} hits, {} misses", cache.hits(), cache.misses());
    return verdicts.pass() ? 0 : 1;
  }
};

double fit_order(double e_coarse, double e_fine, double h_coarse, double h_fine) {
  return std::log(e_coarse / e_fine) / std::log(h_coarse / h_fine);
}

// ---- fefferman -------------------------------------------------------------

int run_fefferman(Context& ctx) {
  const auto& F = ctx.F;
  const cplx s = ctx.cfg.s;
  const int L = ctx.cfg.fefferman_level();
  const auto seq = fefferman_sequence(F, s, L);
  std::vector<BoundaryRay> rays;
  for (const auto& p : boundary_samples(F, s, 3, ctx.cfg.seed)) rays.push_back(boundary_ray(F, s, p, 10, -0.1, 0.5));

  Csv samples(ctx.file("fefferman.csv"), {"level", "ray", "abs_phi", "j_defect"});
  Csv fits(ctx.file("fefferman_fits.csv"), {"level", "ray", "order", "intercept", "rms", "used", "vanishing"});
  json levels = json::array();
  for (int l = 1; l <= L; ++l) {
    const auto J = j_field(seq.rho_l[static_cast<std::size_t>(l - 1)]);
    const auto defect = std::make_shared<ClosedFormField>(
        F.n, [g = J->generator()](const Coords& c) { return 1.0 - g(c); }, J->loss());
    double worst = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < rays.size(); ++r) {
      for (std::size_t k = 0; k < rays[r].size(); ++k)
        samples.row({std::to_string(l), std::to_string(r), num(-rays[r].phi[k]),
                     num(field_value(*defect, rays[r].points[k]).real())});
      const auto fit = vanishing_order_fit(*defect, rays[r], 1e-10);
      fits.row({std::to_string(l), std::to_string(r), num(fit.order), num(fit.intercept), num(fit.residual),
                std::to_string(fit.used), fit.vanishing ? "1" : "0"});
      worst = std::min(worst, fit.order);
    }
    levels.push_back({{"level", l}, {"min_order", std::isinf(worst) ? json("inf") : json(worst)}});
    ctx.verdicts.ge(2, fmt::format("vanishing_order_l{}", l), worst, l - 0.3);
  }
  json doc = ctx.header("fefferman");
  doc["levels"] = levels;
  return ctx.finish(doc, "fefferman.json");
}

// ---- solve-slice -----------------------------------------------------------

// Ray samples with |phi| at most this enter the decay fit.
constexpr double kDecayWindow = 0.1;

std::vector<std::size_t> center_line(const SliceGrid& G, const std::vector<cplx>& c) {
  const auto& L = G.lattice;
  std::vector<int> ijk(static_cast<std::size_t>(L.axes()));
  for (int a = 0; a < L.axes(); ++a) {
    const double x = a % 2 == 0 ? c[static_cast<std::size_t>(a / 2)].real() : c[static_cast<std::size_t>(a / 2)].imag();
    ijk[static_cast<std::size_t>(a)] = static_cast<int>(std::lround((x - L.lo(a)) / L.spacing(a)));
  }
  std::vector<std::size_t> line;
  for (int i = 0; i < L.count(0); ++i) {
    ijk[0] = i;
    const auto node = L.index(ijk);
    if (G.cls[node] != NodeClass::Exterior) line.push_back(node);
  }
  return line;
}

int run_solve_slice(Context& ctx) {
  const auto& F = ctx.F;
  const cplx s = ctx.cfg.s;
  const auto B = background_pair(F, s, ctx.cfg.fefferman_level());
  std::vector<MASolution> sol;
  json per = json::array();
  for (int res : ctx.cfg.resolutions) {
    const auto G = build_slice_grid(F, s, res);
    MASolution U = ctx.cache.solve(G, B, ctx.solve_options());
    ctx.verdicts.add(0, fmt::format("converged_r{}", res), U.residual(), "<=", ctx.cfg.tol, U.converged);

    const std::string stem = fmt::format("slice_u_r{}", res);
    write_field(ctx.file(stem + ".bin"), U.u);
    {
      std::ofstream f(ctx.file(fmt::format("slice_class_r{}.bin", res)), std::ios::binary);
      f.write(reinterpret_cast<const char*>(G->cls.data()), static_cast<std::streamsize>(G->cls.size()));
    }
    json side = lattice_json(*G);
    side["dtype"] = "float64";
    side["field"] = "u";
    side["classes"] = fmt::format("slice_class_r{}.bin (uint8: 0 exterior, 1 band, 2 interior)", res);
    side["iterations"] = U.iterations;
    side["converged"] = U.converged;
    side["trace"] = U.trace;
    side["pinch"] = U.pinch;
    write_json(ctx.file(stem + ".json"), side);

    Csv prof(ctx.file(fmt::format("slice_profile_r{}.csv", res)), {"x", "phi", "u", "interior"});
    for (auto node : center_line(*G, F.slice_center(s)))
      prof.row({num(G->lattice.position(node)[0].real()), num(G->phi[node]), num(U.u[node]),
                G->cls[node] == NodeClass::Interior ? "1" : "0"});

    double usup = 0.0;
    for (auto i : G->interior) usup = std::max(usup, std::abs(U.u[i]));
    per.push_back({{"resolution", res},
                   {"spacing", G->lattice.spacing(0)},
                   {"interior", G->interior.size()},
                   {"band", G->band_count},
                   {"iterations", U.iterations},
                   {"converged", U.converged},
                   {"residual", U.residual()},
                   {"trace", U.trace},
                   {"pinch", U.pinch},
                   {"u_sup", usup}});
    sol.push_back(std::move(U));
  }

  json doc = ctx.header("solve-slice");
  if (sol.size() >= 3) {
    // Differences and Einstein defects at nodes of the coarsest interior.
    const auto& coarse = *sol.front().grid;
    std::vector<std::vector<double>> ein;
    for (const auto& U : sol) ein.push_back(einstein_residual(ke_metric_field(B, U)));
    std::vector<double> diff(sol.size() - 1, 0.0), esup(sol.size(), 0.0);
    for (auto node : coarse.interior) {
      const auto z = coarse.lattice.position(node);
      std::vector<std::size_t> at;
      for (const auto& U : sol) {
        const auto j = U.grid->lattice.node_at(z);
        if (!j) throw Error(ErrorKind::StencilInconsistent, "resolutions do not nest; use 2^k + 1 refinements");
        at.push_back(*j);
      }
      for (std::size_t k = 0; k + 1 < sol.size(); ++k)
        diff[k] = std::max(diff[k], std::abs(sol[k].u[at[k]] - sol[k + 1].u[at[k + 1]]));
      bool finite = true;
      for (std::size_t k = 0; k < sol.size(); ++k) finite = finite && std::isfinite(ein[k][at[k]]);
      if (finite)
        for (std::size_t k = 0; k < sol.size(); ++k) esup[k] = std::max(esup[k], ein[k][at[k]]);
    }
    json conv = json::array();
    for (std::size_t k = 0; k + 2 < sol.size(); ++k) {
      const double h0 = sol[k].grid->lattice.spacing(0), h1 = sol[k + 1].grid->lattice.spacing(0);
      const double uo = fit_order(diff[k], diff[k + 1], h0, h1);
      ctx.verdicts.ge(5, fmt::format("u_order_r{}", sol[k].grid->resolution), uo, 1.7);
      conv.push_back({{"resolutions", {sol[k].grid->resolution, sol[k + 1].grid->resolution, sol[k + 2].grid->resolution}},
                      {"u_differences", {diff[k], diff[k + 1]}},
                      {"u_order", uo}});
    }
    for (std::size_t k = 0; k + 1 < sol.size(); ++k) {
      const double eo =
          fit_order(esup[k], esup[k + 1], sol[k].grid->lattice.spacing(0), sol[k + 1].grid->lattice.spacing(0));
      ctx.verdicts.ge(5, fmt::format("einstein_order_r{}", sol[k].grid->resolution), eo, 1.5);
    }
    doc["self_convergence"] = conv;
    doc["einstein_sup"] = esup;
  }
  doc["resolutions"] = per;

  // Boundary decay of u on the finest lattice.
  const auto& fine = sol.back();
  const std::vector<cplx> uc(fine.u.begin(), fine.u.end());
  json decay = json::array();
  double worst = std::numeric_limits<double>::infinity();
  std::string unresolved;
  const auto anchors = boundary_samples(F, s, 6, ctx.cfg.seed);
  for (std::size_t r = 0; r < anchors.size(); ++r) {
    const auto ray = boundary_ray(F, s, anchors[r], 30, -kDecayWindow, 0.8);
    try {
      const auto fit = boundary_decay_fit(*fine.grid, uc, ray, kDecayWindow);
      decay.push_back({{"ray", r}, {"order", fit.order}, {"rms", fit.rms}, {"used", fit.used},
                       {"abs_phi", {fit.min_abs_phi, fit.max_abs_phi}}});
      worst = std::min(worst, fit.order);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::DegenerateRay) throw;
      decay.push_back({{"ray", r}, {"unresolved", e.what()}});
      unresolved = e.what();
    }
  }
  doc["decay"] = {{"window", kDecayWindow}, {"rays", decay}};
  if (F.n <= 2) {
    const double need = F.n == 1 ? 1.2 : 1.8;
    if (unresolved.empty())
      ctx.verdicts.ge(10, "u_decay_order", worst, need);
    else
      ctx.verdicts.skip(10, "u_decay_order", "interior does not reach the decay window: " + unresolved);
  }
  return ctx.finish(doc, "solve_slice.json");
}

// ---- family-scan -----------------------------------------------------------

struct ScanRow {
  CPoint p;
  double phi = 0.0, cW = 0.0, cH = 0.0, cH_error = 0.0, dbar = 0.0, lap = 0.0, residual = 0.0, normalized = 0.0,
         min_eig = 0.0;
  bool closure = false;
};

std::vector<ScanRow> scan_rows(const Context& ctx, const HSource& src, const BackgroundPair& B,
                               const std::vector<CPoint>& pts) {
  std::vector<ScanRow> rows(pts.size());
  tbb::parallel_for(std::size_t{0}, pts.size(), [&](std::size_t k) {
    ScanRow& r = rows[k];
    r.p = pts[k];
    r.phi = ctx.F.phi_value(r.p);
    const auto ch = c_of_H(src, r.p);
    const auto sch = schumacher_residual(src, r.p);
    r.cH = ch.value;
    r.cH_error = ch.error;
    r.closure = ch.closure;
    r.dbar = sch.dbar_norm;
    r.lap = sch.laplacian_c;
    r.residual = sch.residual;
    r.normalized = sch.normalized;
    r.min_eig = min_eigenvalue(src.at(r.p).M);
    r.cW = c_of_W(ctx.F, B, r.p).c;
  });
  return rows;
}

int run_family_scan(Context& ctx) {
  const auto& F = ctx.F;
  const auto& cfg = ctx.cfg;
  const bool oracle = ctx.use_oracle();
  const auto base = ctx.base_net();
  // The oracle does not depend on the resolution.
  const std::vector<int> res = oracle ? std::vector<int>{cfg.resolution()} : cfg.resolutions;

  auto header = std::vector<std::string>{"resolution"};
  for (auto& h : point_header(F.n)) header.push_back(h);
  for (const char* h : {"phi", "cW", "cH", "cH_error", "ratio", "dbar_norm", "laplacian_c", "residual",
                        "residual_normalized", "min_eig", "closure"})
    header.push_back(h);
  Csv csv(ctx.file("family_scan.csv"), header);

  json per = json::array();
  std::vector<double> resid_sup;
  double cH_max = 0.0, dbar_max = 0.0, resid_max = 0.0, min_eig = std::numeric_limits<double>::infinity();
  HSourcePtr src_at_s;
  for (int r : res) {
    double rsup = 0.0;
    for (std::size_t b = 0; b < base.size(); ++b) {
      const auto B = background_pair(F, base[b], cfg.fefferman_level());
      const auto src = ctx.source_at(base[b], r);
      if (b == 0) src_at_s = src;
      for (const auto& row : scan_rows(ctx, *src, B, ctx.slice_net(base[b]))) {
        std::vector<std::string> cells{oracle ? "0" : std::to_string(r)};
        for (auto& c : point_cells(row.p)) cells.push_back(c);
        for (double v : {row.phi, row.cW, row.cH, row.cH_error, row.cH / row.cW, row.dbar, row.lap, row.residual,
                         row.normalized, row.min_eig})
          cells.push_back(num(v));
        cells.push_back(row.closure ? "1" : "0");
        csv.row(cells);
        if (row.closure) continue;
        cH_max = std::max(cH_max, std::abs(row.cH));
        dbar_max = std::max(dbar_max, std::abs(row.dbar));
        rsup = std::max(rsup, std::abs(row.normalized));
        min_eig = std::min(min_eig, row.min_eig);
      }
    }
    resid_sup.push_back(rsup);
    resid_max = std::max(resid_max, rsup);
    per.push_back({{"resolution", oracle ? json(nullptr) : json(r)}, {"residual_sup", rsup}});
  }

  if (ctx.trivial()) {
    ctx.verdicts.le(7, "cH_max", cH_max, oracle ? 1e-8 : 5e-3);
    ctx.verdicts.le(7, "dbar_max", dbar_max, oracle ? 1e-8 : 5e-3);
  }
  if (oracle) {
    ctx.verdicts.le(8, "schumacher_residual_max", resid_max, 1e-8);
  } else if (res.size() >= 2) {
    for (std::size_t k = 0; k + 1 < res.size(); ++k)
      ctx.verdicts.ge(8, fmt::format("schumacher_order_r{}", res[k]),
                      fit_order(resid_sup[k], resid_sup[k + 1], 1.0 / (res[k] - 1), 1.0 / (res[k + 1] - 1)), 1.5);
  }

  // Boundary ratio scans at s (finest resolution for numeric sources).
  const auto B = background_pair(F, cfg.s, cfg.fefferman_level());
  auto rh = std::vector<std::string>{"ray"};
  for (auto& h : point_header(F.n)) rh.push_back(h);
  for (const char* h : {"abs_phi", "cW", "cH", "ratio", "defect", "closure"}) rh.push_back(h);
  Csv rcsv(ctx.file("ratio_scan.csv"), rh);
  json scans = json::array();
  const auto anchors = boundary_samples(F, cfg.s, 2, cfg.seed);
  for (std::size_t r = 0; r < anchors.size(); ++r) {
    const auto ray = boundary_ray(F, cfg.s, anchors[r], cfg.ray_count, cfg.ray_phi_start, 0.5);
    RatioScan scan;
    try {
      scan = boundary_ratio_scan(F, B, *src_at_s, ray);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::NotStronglyPseudoconvexPoint) throw;
      scans.push_back({{"ray", r}, {"skipped", e.what()}});
      ctx.verdicts.skip(9, fmt::format("ratio_ray{}", r), "boundary point is not strongly pseudoconvex");
      continue;
    }
    for (const auto& row : scan.rows) {
      std::vector<std::string> cells{std::to_string(r)};
      for (auto& c : point_cells(row.p)) cells.push_back(c);
      for (double v : {-row.phi, row.cW, row.cH, row.ratio, std::abs(row.ratio - 1.0)}) cells.push_back(num(v));
      cells.push_back(row.closure ? "1" : "0");
      rcsv.row(cells);
    }
    scans.push_back({{"ray", r},
                     {"monotone_tail", scan.monotone_tail},
                     {"final_defect", scan.final_defect},
                     {"longest_decreasing", scan.longest_decreasing}});
    if (ctx.trivial()) continue;
    ctx.verdicts.add(9, fmt::format("ratio_monotone_ray{}", r), scan.monotone_tail ? 1.0 : 0.0, "==", 1.0,
                     scan.monotone_tail);
    ctx.verdicts.le(9, fmt::format("ratio_final_ray{}", r), scan.final_defect, 0.05);
  }

  json doc = ctx.header("family-scan");
  doc["cH_max"] = cH_max;
  doc["dbar_max"] = dbar_max;
  doc["schumacher_residual_max"] = resid_max;
  doc["min_eigenvalue"] = min_eig;
  doc["per_resolution"] = per;
  doc["ratio_scans"] = scans;
  return ctx.finish(doc, "family_scan.json");
}

// ---- psh-check -------------------------------------------------------------

int run_psh_check(Context& ctx) {
  const auto& F = ctx.F;
  Csv csv(ctx.file("psh_samples.csv"), [&] {
    auto h = point_header(F.n);
    h.push_back("min_eig");
    return h;
  }());
  PshScan all;
  all.min_eigen = std::numeric_limits<double>::infinity();
  for (cplx b : ctx.base_net()) {
    const auto src = ctx.source_at(b, ctx.cfg.resolution());
    const auto pts = ctx.slice_net(b);
    const auto scan = psh_min_eigen_scan(*src, pts);
    for (std::size_t k = 0; k < pts.size(); ++k) {
      auto cells = point_cells(pts[k]);
      cells.push_back(num(scan.per_sample[k]));
      csv.row(cells);
    }
    if (scan.min_eigen < all.min_eigen) {
      all.min_eigen = scan.min_eigen;
      all.where = scan.where;
    }
  }
  if (ctx.trivial()) {
    ctx.verdicts.le(7, "psh_min_eigenvalue_abs", std::abs(all.min_eigen), ctx.use_oracle() ? 1e-8 : 5e-3);
  } else {
    ctx.verdicts.add(0, "strictly_psh", all.min_eigen, ">", 0.0, all.min_eigen > 0.0);
  }
  json doc = ctx.header("psh-check");
  doc["min_eigenvalue"] = all.min_eigen;
  doc["location"] = point_json(all.where);
  return ctx.finish(doc, "psh_check.json");
}

// ---- flow ------------------------------------------------------------------

int run_flow(Context& ctx) {
  const auto& F = ctx.F;
  const auto& cfg = ctx.cfg;
  const cplx s = cfg.s;
  cplx target;
  if (cfg.flow_target) {
    target = *cfg.flow_target;
  } else {
    const cplx e = std::abs(s) > 0.0 ? s / std::abs(s) : cplx(1.0);
    target = (std::abs(s) < 0.8 * F.base_radius ? 0.8 : -0.8) * F.base_radius * e;
  }

  LiftField lift;
  if (ctx.use_oracle()) {
    lift = lift_of(std::make_shared<OracleH>(F.oracle_h));
  } else {
    StationOptions so;
    so.resolution = cfg.resolution();
    so.level = cfg.fefferman_level();
    so.delta = cfg.delta;
    so.tol = cfg.tol;
    lift = station_lift(F, s, target, so);
  }

  std::vector<CPoint> starts;
  if (!cfg.flow_starts.empty()) {
    for (const auto& z : cfg.flow_starts) starts.push_back(CPoint{z, s});
  } else {
    starts.push_back(CPoint{F.slice_center(s), s});
    for (auto& p : interior_samples(F, s, std::min(cfg.interior_samples, 7), cfg.seed)) starts.push_back(p);
  }

  FlowOptions fo{cfg.flow_tol, cfg.flow_samples};
  std::vector<FlowPath> paths(starts.size()), back(starts.size());
  tbb::parallel_for(std::size_t{0}, starts.size(), [&](std::size_t k) {
    paths[k] = integrate_flow(F, lift, starts[k], target, fo);
    back[k] = integrate_flow(F, lift, paths[k].end(), s, fo);
  });

  double fib = 0.0, endpoint = 0.0, reverse = 0.0, c_fit = 0.0;
  json flows = json::array();
  for (std::size_t k = 0; k < paths.size(); ++k) {
    const auto& P = paths[k];
    auto h = std::vector<std::string>{"t"};
    for (auto& c : point_header(F.n)) h.push_back(c);
    h.push_back("phi");
    Csv csv(ctx.file(fmt::format("flow_{}.csv", k)), h);
    for (std::size_t i = 0; i < P.t.size(); ++i) {
      std::vector<std::string> cells{num(P.t[i])};
      for (auto& c : point_cells(P.points[i])) cells.push_back(c);
      cells.push_back(num(P.phi[i]));
      csv.row(cells);
    }
    fib = std::max(fib, std::abs(P.end().s - target));
    double rev = 0.0;
    for (int a = 0; a < F.n; ++a) rev = std::max(rev, std::abs(back[k].end().z[a] - starts[k].z[a]));
    reverse = std::max(reverse, rev);
    json row{{"start", point_json(starts[k])}, {"end", point_json(P.end())}, {"reverse_error", rev}};
    if (F.oracle_transport) {
      const auto z = F.oracle_transport(starts[k].z, s, target);
      double err = 0.0;
      for (int a = 0; a < F.n; ++a) err = std::max(err, std::abs(P.end().z[a] - z[a]));
      endpoint = std::max(endpoint, err);
      row["endpoint_error"] = err;
    }
    const auto env = envelope_check(P, 1.0);
    row["min_c"] = env.min_c;
    c_fit = std::max(c_fit, env.min_c);
    flows.push_back(row);
  }
  // One envelope constant for every path.
  const double c_env = 1.01 * c_fit + 1e-12;
  bool env_ok = true;
  for (const auto& P : paths) env_ok = env_ok && envelope_check(P, c_env).holds;

  ctx.verdicts.le(13, "fibration_error", fib, 1e-10);
  ctx.verdicts.le(0, "reverse_error", reverse, 1e-6);
  if (F.oracle_transport) ctx.verdicts.le(13, "endpoint_error", endpoint, 1e-6);
  ctx.verdicts.add(13, "envelope_holds", c_env, "holds at", c_env, env_ok);

  json doc = ctx.header("flow");
  doc["target"] = cjson(target);
  doc["flows"] = flows;
  doc["envelope_c"] = c_env;
  if (F.oracle_h) {
    // Holomorphy defect over a base net around s, with the closed-form lift
    // (station lifts only cover the flow segment).
    const auto L = lift_of(std::make_shared<OracleH>(F.oracle_h));
    const double rr = 0.3 * (F.base_radius - std::abs(s));
    const std::vector<cplx> bnet{s + rr, s + cplx(0.0, rr), s + rr * std::polar(1.0, 0.75 * std::numbers::pi)};
    const std::vector<CPoint> dstarts(starts.begin(), starts.begin() + std::min<std::ptrdiff_t>(3, std::ssize(starts)));
    const auto rep = trivialization_residual(F, L, dstarts, bnet, cfg.defect_step);
    doc["holomorphy_defect"] = rep.defect;
    if (ctx.trivial())
      ctx.verdicts.le(13, "holomorphy_defect", rep.defect, 1e-6);
    else
      ctx.verdicts.ge(13, "holomorphy_defect", rep.defect, 1e-2);
  } else {
    ctx.verdicts.skip(13, "holomorphy_defect", "needs a lift over a base neighbourhood; family has no closed form");
  }
  return ctx.finish(doc, "flow.json");
}

// ---- exhaustion ------------------------------------------------------------

int run_exhaustion(Context& ctx) {
  const auto& F = ctx.F;
  const auto& cfg = ctx.cfg;
  const auto R = exhaustion_run(F, cfg.exhaustion_levels, cfg.s, cfg.resolution(), cfg.fefferman_level(),
                                ctx.solve_options());
  const bool ball = F.name == "ball_family";
  Csv csv(ctx.file("exhaustion.csv"), {"N", "center_logdet", "closed_form", "iterations"});
  json levels = json::array();
  double closed_err = 0.0;
  for (const auto& L : R.levels) {
    double expect = std::numeric_limits<double>::quiet_NaN();
    if (ball) {
      const double r2 = 1.0 - std::norm(cfg.s) - std::exp(-L.N);
      expect = F.n * std::log(1.0 / r2);
      closed_err = std::max(closed_err, std::abs(L.center_logdet - expect));
    }
    csv.row({num(L.N), num(L.center_logdet), num(expect), std::to_string(L.solution.iterations)});
    levels.push_back({{"N", L.N}, {"center_logdet", L.center_logdet}, {"closed_form", ball ? json(expect) : json()}});
  }
  ctx.verdicts.ge(12, "monotonicity_margin", R.min_margin, -1e-8);
  if (ball) ctx.verdicts.le(12, "closed_form_error", closed_err, 1e-6);
  json doc = ctx.header("exhaustion");
  doc["levels"] = levels;
  doc["common_nodes"] = R.common.size();
  doc["min_margin"] = R.min_margin;
  return ctx.finish(doc, "exhaustion.json");
}

// ---- report ----------------------------------------------------------------

int run_report(Context& ctx) {
  json criteria = json::object(), sources = json::array();
  for (const char* name :
       {"fefferman.json", "solve_slice.json", "family_scan.json", "psh_check.json", "flow.json", "exhaustion.json"}) {
    const fs::path p = ctx.file(name);
    if (!fs::exists(p)) continue;
    std::ifstream f(p);
    const json doc = json::parse(f, nullptr, false);
    if (doc.is_discarded() || !doc.contains("verdicts")) continue;
    sources.push_back(name);
    for (const auto& v : doc["verdicts"]) {
      const std::string id = std::to_string(v.value("criterion", 0));
      auto& c = criteria[id];
      if (c.is_null()) c = {{"pass", nullptr}, {"checks", json::array()}};
      json check = v;
      check["source"] = name;
      c["checks"].push_back(check);
      if (v["pass"].is_boolean()) c["pass"] = (c["pass"].is_null() || c["pass"].get<bool>()) && v["pass"].get<bool>();
    }
  }
  // Criteria with only skipped checks stay null (not evaluated).
  bool all = !sources.empty();
  for (auto& [id, c] : criteria.items()) all = all && (c["pass"].is_null() || c["pass"].get<bool>());
  json doc{{"sources", sources}, {"criteria", criteria}, {"pass", all}};
  write_json(ctx.file("report.json"), doc);
  if (sources.empty()) spdlog::warn("no verdict documents under {}", ctx.cfg.out.string());
  return all ? 0 : 1;
}

}  // namespace

std::pair<int, int> resolution_range(int n) {
  switch (n) {
    case 1: return {17, 1025};
    case 2: return {13, 65};
    case 3: return {9, 13};
    default: return {9, 9};
  }
}

ExperimentConfig parse_config(const json& j, const Overrides& o) {
  only_keys(j, "", {"family", "params", "resolution", "resolutions", "level", "tol", "s", "base_samples",
                    "interior_samples", "delta", "source", "ray", "flow", "exhaustion", "seed", "out", "workers",
                    "cache"});
  ExperimentConfig c;
  if (j.contains("family")) {
    if (!j["family"].is_string()) invalid("family", "expected a string");
    c.family = j["family"].get<std::string>();
  }
  if (j.contains("params")) {
    if (!j["params"].is_object()) invalid("params", "expected an object");
    c.params = j["params"];
  }
  try {
    c.F = catalog_instantiate(c.family, c.params);
  } catch (const Error& e) {
    invalid(e.kind() == ErrorKind::UnknownFamily ? "family" : "params", e.what());
  }
  const int n = c.F.n;
  const auto [rlo, rhi] = resolution_range(n);

  if (j.contains("resolution") && j.contains("resolutions")) invalid("resolution", "give resolution or resolutions");
  if (j.contains("resolution")) c.resolutions = {int_at(j["resolution"], "resolution", rlo, rhi)};
  if (j.contains("resolutions")) {
    if (!j["resolutions"].is_array() || j["resolutions"].empty()) invalid("resolutions", "expected a non-empty array");
    for (std::size_t k = 0; k < j["resolutions"].size(); ++k)
      c.resolutions.push_back(int_at(j["resolutions"][k], fmt::format("resolutions[{}]", k), rlo, rhi));
  }
  if (o.resolution) {
    if (*o.resolution < rlo || *o.resolution > rhi)
      invalid("resolution", fmt::format("must lie in [{}, {}] for n = {}", rlo, rhi, n));
    c.resolutions = {*o.resolution};
  }
  if (c.resolutions.empty()) c.resolutions = {n == 1 ? 65 : rlo};

  if (j.contains("level")) c.level = int_at(j["level"], "level", 0, n + 1);
  if (o.level) {
    if (*o.level < 0 || *o.level > n + 1) invalid("level", fmt::format("must lie in [0, {}]", n + 1));
    c.level = *o.level;
  }
  if (j.contains("tol")) c.tol = positive_at(j["tol"], "tol");
  if (o.tol) {
    if (!(*o.tol > 0.0) || !std::isfinite(*o.tol)) invalid("tol", "must be positive");
    c.tol = *o.tol;
  }
  if (j.contains("s")) c.s = complex_at(j["s"], "s");
  if (!(std::abs(c.s) < c.F.base_radius)) invalid("s", "must lie in the base disc");
  if (j.contains("base_samples")) c.base_samples = int_at(j["base_samples"], "base_samples", 1, 4096);
  if (j.contains("interior_samples")) c.interior_samples = int_at(j["interior_samples"], "interior_samples", 0, 100000);
  if (j.contains("delta")) c.delta = positive_at(j["delta"], "delta");
  if (j.contains("source")) {
    if (!j["source"].is_string()) invalid("source", "expected a string");
    c.source = j["source"].get<std::string>();
    if (c.source != "auto" && c.source != "oracle" && c.source != "numeric")
      invalid("source", "expected auto, oracle or numeric");
  }
  if (c.source == "oracle" && !c.F.oracle_h) invalid("source", "family " + c.family + " has no closed-form potential");

  if (j.contains("ray")) {
    const auto& r = j["ray"];
    only_keys(r, "ray", {"count", "phi_start"});
    if (r.contains("count")) c.ray_count = int_at(r["count"], "ray.count", 5, 64);
    if (r.contains("phi_start")) {
      c.ray_phi_start = number_at(r["phi_start"], "ray.phi_start");
      if (!(c.ray_phi_start < 0.0)) invalid("ray.phi_start", "must be negative");
    }
  }
  if (j.contains("flow")) {
    const auto& f = j["flow"];
    only_keys(f, "flow", {"starts", "target", "tol", "samples", "defect_step"});
    if (f.contains("starts")) {
      if (!f["starts"].is_array()) invalid("flow.starts", "expected an array of points");
      for (std::size_t k = 0; k < f["starts"].size(); ++k) {
        const auto& p = f["starts"][k];
        const std::string path = fmt::format("flow.starts[{}]", k);
        if (!p.is_array() || static_cast<int>(p.size()) != n) invalid(path, fmt::format("expected {} coordinates", n));
        std::vector<cplx> z;
        for (std::size_t a = 0; a < p.size(); ++a) z.push_back(complex_at(p[a], fmt::format("{}[{}]", path, a)));
        if (!c.F.inside(CPoint{z, c.s})) invalid(path, "not inside the slice over s");
        c.flow_starts.push_back(z);
      }
    }
    if (f.contains("target")) {
      c.flow_target = complex_at(f["target"], "flow.target");
      if (!(std::abs(*c.flow_target) < c.F.base_radius)) invalid("flow.target", "must lie in the base disc");
    }
    if (f.contains("tol")) c.flow_tol = positive_at(f["tol"], "flow.tol");
    if (f.contains("samples")) c.flow_samples = int_at(f["samples"], "flow.samples", 10, 100000);
    if (f.contains("defect_step")) c.defect_step = positive_at(f["defect_step"], "flow.defect_step");
  }
  if (j.contains("exhaustion")) {
    const auto& e = j["exhaustion"];
    only_keys(e, "exhaustion", {"levels"});
    if (e.contains("levels")) {
      if (!e["levels"].is_array() || e["levels"].empty()) invalid("exhaustion.levels", "expected a non-empty array");
      c.exhaustion_levels.clear();
      for (std::size_t k = 0; k < e["levels"].size(); ++k)
        c.exhaustion_levels.push_back(positive_at(e["levels"][k], fmt::format("exhaustion.levels[{}]", k)));
    }
  }
  if (j.contains("seed")) {
    if (!j["seed"].is_number_integer() || j["seed"].get<long long>() < 0) invalid("seed", "expected a non-negative integer");
    c.seed = j["seed"].get<std::uint64_t>();
  }
  if (o.seed) c.seed = *o.seed;
  if (j.contains("out")) {
    if (!j["out"].is_string()) invalid("out", "expected a string");
    c.out = j["out"].get<std::string>();
  }
  if (o.out) c.out = *o.out;
  if (j.contains("workers")) c.workers = int_at(j["workers"], "workers", 0, 4096);
  if (o.workers) {
    if (*o.workers < 0) invalid("workers", "must be non-negative");
    c.workers = *o.workers;
  }
  if (j.contains("cache")) {
    if (!j["cache"].is_boolean()) invalid("cache", "expected true or false");
    c.cache = j["cache"].get<bool>();
  }
  return c;
}

ExperimentConfig load_config(const fs::path& path, const Overrides& o) {
  std::ifstream f(path);
  if (!f) invalid("config", "cannot read " + path.string());
  const json j = json::parse(f, nullptr, false);
  if (j.is_discarded()) invalid("config", path.string() + " is not valid JSON");
  return parse_config(j, o);
}

const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names{"fefferman", "solve-slice", "family-scan", "psh-check",
                                              "flow",      "exhaustion",  "report"};
  return names;
}

int run(const ExperimentConfig& cfg, const std::string& subcommand) {
  const int workers =
      cfg.workers > 0 ? cfg.workers : std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
  using Runner = int (*)(Context&);
  static const std::map<std::string, Runner> runners{
      {"fefferman", run_fefferman},   {"solve-slice", run_solve_slice}, {"family-scan", run_family_scan},
      {"psh-check", run_psh_check},   {"flow", run_flow},               {"exhaustion", run_exhaustion},
      {"report", run_report}};
  const auto it = runners.find(subcommand);
  if (it == runners.end()) throw Error(ErrorKind::InvalidArgument, "unknown subcommand " + subcommand);

  // An explicit arena gets `workers` threads even beyond the core count.
  tbb::global_control gc(tbb::global_control::max_allowed_parallelism, static_cast<std::size_t>(workers));
  tbb::task_arena arena(workers);
  fs::create_directories(cfg.out);
  Context ctx{cfg, cfg.F, cfg.cache && subcommand != "report" ? SliceCache(cfg.out / "cache", cfg.F) : SliceCache(), {}};
  spdlog::info("{} on {} (n = {}), {} workers, output {}", subcommand, cfg.F.name, cfg.F.n, workers, cfg.out.string());
  return arena.execute([&] { return it->second(ctx); });
}

int run_guarded(const json& config, const Overrides& o, const std::string& subcommand) {
  try {
    return run(parse_config(config, o), subcommand);
  } catch (const Error& e) {
    spdlog::error("{}: {}", subcommand, e.what());
    return e.kind() == ErrorKind::ConfigInvalid ? 2 : 3;
  } catch (const std::exception& e) {
    spdlog::error("{}: {}", subcommand, e.what());
    return 3;
  }
}

void init_logging() {
  auto logger = spdlog::stderr_logger_mt("kefam");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  spdlog::level::level_enum lvl = spdlog::level::warn;
  if (const char* env = std::getenv("KEFAM_LOG")) {
    const auto parsed = spdlog::level::from_str(env);
    // from_str maps unknown names to off.
    if (parsed != spdlog::level::off || std::string_view(env) == "off") lvl = parsed;
  }
  spdlog::set_level(lvl);
}

}  // namespace kefam::app
