#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "bfstar/driver.hpp"
#include "bfstar/errors.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace bfstar;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("bfstar_test_driver_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string config_error(RunConfig& cfg, const std::string& text) {
  try {
    parse_config_text(cfg, text, "test.cfg");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

} // namespace

TEST_CASE("config parsing") {
  RunConfig cfg;
  parse_config_text(cfg,
                    "# reference point\n"
                    "gamma = 0.2\n"
                    "lambda_self = 5   # underscores are accepted\n"
                    "  mu-c=0.8\n"
                    "\n"
                    "farfield = Robin\n"
                    "emit = csv, svg\n"
                    "sweep_param = sigma_c\n"
                    "sweep-range = 0.1:0.3\n"
                    "sweep-count = 4\n"
                    "warm-start = off\n"
                    "verify = yes\n"
                    "cells-inner = 64\n",
                    "test.cfg");
  CHECK(cfg.params.gamma == 0.2);
  CHECK(cfg.params.Lambda == 5.0);
  CHECK(cfg.params.mu_c == 0.8);
  CHECK(cfg.canm.farfield == FarField::Robin);
  CHECK(cfg.emit.csv);
  CHECK(cfg.emit.svg);
  CHECK_FALSE(cfg.emit.json);
  CHECK(cfg.sweep.param == SweepParam::SigmaC);
  CHECK(cfg.sweep.start == 0.1);
  CHECK(cfg.sweep.stop == 0.3);
  CHECK(cfg.sweep.count == 4);
  CHECK_FALSE(cfg.sweep.warm_start);
  CHECK(cfg.verify);
  CHECK(cfg.canm.mesh.inner_cells == 64);
  CHECK_NOTHROW(cfg.validate());

  const std::vector<double> v = cfg.sweep.values();
  REQUIRE(v.size() == 4);
  CHECK(v.front() == 0.1);
  CHECK(v.back() == 0.3);

  SUBCASE("describe round-trips") {
    RunConfig again;
    parse_config_text(again, cfg.describe(), "echo");
    CHECK(again.describe() == cfg.describe());
  }

  SUBCASE("every documented key is accepted") {
    for (const auto& key : config_keys()) CHECK(config_error(cfg, key + " = ").find("unknown key") == std::string::npos);
  }
}

TEST_CASE("config errors name the location") {
  RunConfig cfg;
  CHECK(config_error(cfg, "gamma = 0.1\nbogus = 3\n").find("test.cfg:2: unknown key 'bogus'") == 0);
  CHECK(config_error(cfg, "mu-c = 1.2x\n").find("test.cfg:1: mu-c") == 0);
  CHECK(config_error(cfg, "farfield = neumann\n").find("dirichlet or robin") != std::string::npos);
  CHECK(config_error(cfg, "emit = pdf\n").find("unknown format") != std::string::npos);
  CHECK(config_error(cfg, "sweep-range = 1\n").find("start:stop") != std::string::npos);
  CHECK(config_error(cfg, "no equals sign\n").find("key = value") != std::string::npos);
  CHECK(config_error(cfg, "cells-inner = 1\n").find(">= 2") != std::string::npos);
  CHECK(config_error(cfg, "verify = maybe\n").find("true or false") != std::string::npos);
  CHECK_THROWS_AS(parse_config_file(cfg, "/nonexistent/x.cfg"), ConfigError);
}

TEST_CASE("validation names the key and range") {
  auto invalid = [](const std::string& key, const std::string& value) {
    RunConfig cfg;
    cfg.set(key, value, "test");
    try {
      cfg.validate();
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  const std::string eps = invalid("eps", "1e-6");
  CHECK(eps.find("eps") == 0);
  CHECK(eps.find("[1e-12, 1e-8]") != std::string::npos);
  CHECK(invalid("mu-c", "0").find("mu-c") == 0);
  CHECK(invalid("b", "-1").find("b:") == 0);
  CHECK(invalid("sweep-count", "0").find("sweep-count") == 0);
  CHECK(invalid("x-inf", "0.5").find("x-inf") == 0);
  CHECK(invalid("omega0", "1.5").find("omega0") == 0);
  CHECK(invalid("sweep-range", "-1:2").find("sweep-range") == 0);
  CHECK(invalid("eps", "1e-9").empty());
}

TEST_CASE("flags override the file and the override is logged") {
  RunConfig cfg;
  parse_config_text(cfg, "mu-c = 0.8\ngamma = 0.1\n", "run.cfg");
  cfg.set("mu_c", "1.1", "flag");
  cfg.set("gamma", "0.1", "run.cfg");
  CHECK(cfg.params.mu_c == 1.1);
  REQUIRE(cfg.provenance.size() == 1);
  CHECK(cfg.provenance[0] == "mu-c: flag value '1.1' overrides run.cfg value '0.8'");
}

TEST_CASE("CSV round trip is exact") {
  RunConfig cfg;
  cfg.emit = {false, false, false};
  cfg.out_dir = scratch("csv").string();
  const RunResult r = run_single(cfg);
  REQUIRE(r.solution.report.converged);
  for (bool inner : {true, false}) {
    const auto& f = inner ? r.solution.inner : r.solution.outer;
    const CsvTable t = parse_csv(profiles_csv(r.solution, inner));
    REQUIRE(t.header.size() == 2 + f.dim());
    CHECK(t.header[0] == "x");
    CHECK(t.header[2] == "lambda");
    REQUIRE(t.data.rows() == static_cast<Eigen::Index>(f.mesh().nodes().size()));
    bool exact = true;
    for (Eigen::Index j = 0; j < t.data.rows(); ++j) {
      exact = exact && t.data(j, 0) == f.mesh().nodes()[static_cast<std::size_t>(j)];
      for (Eigen::Index c = 0; c < f.values().cols(); ++c) exact = exact && t.data(j, c + 2) == f.values()(j, c);
    }
    CHECK(exact);
  }
  CHECK_THROWS_AS(parse_csv("a,b\n1\n"), ConfigError);
}

TEST_CASE("single run: emission and determinism") {
  RunConfig cfg;
  cfg.emit = {true, true, true};
  cfg.verify = true;
  const fs::path a = scratch("det_a"), b = scratch("det_b");
  cfg.out_dir = a.string();
  const RunResult ra = run_single(cfg);
  cfg.out_dir = b.string();
  run_single(cfg);
  for (const char* name : {"profiles_inner.csv", "profiles_outer.csv", "summary.json", "profiles.svg"}) {
    CAPTURE(name);
    REQUIRE(fs::exists(a / name));
    CHECK(slurp(a / name) == slurp(b / name));
  }

  const auto j = nlohmann::json::parse(slurp(a / "summary.json"));
  CHECK(j["converged"].get<bool>());
  CHECK(j["R_s"].get<double>() == ra.solution.spectral.R_s);
  CHECK(j["log"].size() == ra.solution.report.log.size());
  REQUIRE(ra.verify);
  CHECK(ra.verify->converged);
  CHECK(ra.verify->rel_R_s < 1e-5);
  CHECK(ra.verify->abs_Omega < 1e-5);
  CHECK(ra.verify->rel_M < 1e-5);
  CHECK(j["verify"]["rel_M"].get<double>() == ra.verify->rel_M);

  const std::string svg = slurp(a / "profiles.svg");
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("</svg>") != std::string::npos);
}

TEST_CASE("pure fermion summary has a null Omega") {
  RunConfig cfg;
  cfg.params.sigma_c = 0.0;
  cfg.emit = {false, true, false};
  const fs::path d = scratch("pure");
  cfg.out_dir = d.string();
  run_single(cfg);
  const auto j = nlohmann::json::parse(slurp(d / "summary.json"));
  CHECK(j["Omega"].is_null());
  CHECK(j["pure_fermion"].get<bool>());
  CHECK(j["M_RB"].get<double>() == 0.0);
}

TEST_CASE("failed solve still writes diagnostics") {
  RunConfig cfg;
  cfg.canm.max_iter = 2;
  cfg.emit = {true, true, false};
  const fs::path d = scratch("fail");
  cfg.out_dir = d.string();
  const RunResult r = run_single(cfg);
  CHECK_FALSE(r.solution.report.converged);
  REQUIRE(fs::exists(d / "summary.json"));
  const auto j = nlohmann::json::parse(slurp(d / "summary.json"));
  CHECK_FALSE(j["converged"].get<bool>());
  CHECK_FALSE(j["failure"].get<std::string>().empty());
  CHECK(j["log"].size() == 2);
}

TEST_CASE("one-point sweep equals a single run") {
  RunConfig cfg;
  cfg.emit = {true, false, false};
  cfg.sweep.count = 1;
  cfg.sweep.start = cfg.params.mu_c;
  cfg.out_dir = scratch("one").string();
  const std::vector<SweepPoint> pts = run_sweep(cfg);
  const RunResult r = run_single(cfg);
  REQUIRE(pts.size() == 1);
  CHECK(pts[0].converged);
  CHECK(pts[0].iterations == r.solution.report.iterations);
  CHECK(pts[0].spectral.R_s == r.solution.spectral.R_s);
  CHECK(pts[0].spectral.Omega == r.solution.spectral.Omega);
  CHECK(pts[0].spectral.phi_s == r.solution.spectral.phi_s);
  CHECK(pts[0].observables.M == r.solution.observables.M);
  CHECK(pts[0].observables.E_b == r.solution.observables.E_b);

  const CsvTable t = parse_csv(slurp(fs::path(cfg.out_dir) / "sweep.csv"));
  REQUIRE(t.header.size() == 10);
  CHECK(t.header[0] == "mu_c");
  CHECK(t.header[8] == "converged");
  CHECK(t.data(0, 4) == r.solution.observables.M);
}

TEST_CASE("warm and cold sweeps agree") {
  RunConfig cfg;
  cfg.emit = {false, false, false};
  cfg.sweep.start = 1.0;
  cfg.sweep.stop = 1.4;
  cfg.sweep.count = 3;
  const std::vector<SweepPoint> warm = run_sweep(cfg);
  cfg.sweep.warm_start = false;
  const std::vector<SweepPoint> cold = run_sweep(cfg);
  REQUIRE(warm.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    REQUIRE(warm[i].converged);
    REQUIRE(cold[i].converged);
    CHECK(warm[i].spectral.R_s == doctest::Approx(cold[i].spectral.R_s).epsilon(1e-9));
    CHECK(warm[i].spectral.Omega == doctest::Approx(cold[i].spectral.Omega).epsilon(1e-9));
    CHECK(warm[i].observables.M == doctest::Approx(cold[i].observables.M).epsilon(1e-9));
  }
  // Concurrent cold points match serial single runs bit for bit.
  RunConfig one = cfg;
  one.params.mu_c = 1.2;
  const RunResult r = run_single(one);
  CHECK(cold[1].spectral.R_s == r.solution.spectral.R_s);
  CHECK(cold[1].observables.M == r.solution.observables.M);
}

TEST_CASE("sweep records failures and continues") {
  RunConfig cfg;
  cfg.canm.max_iter = 2;
  cfg.emit = {true, true, true};
  cfg.sweep.start = 1.0;
  cfg.sweep.stop = 1.2;
  cfg.sweep.count = 2;
  const fs::path d = scratch("sweepfail");
  cfg.out_dir = d.string();
  const std::vector<SweepPoint> pts = run_sweep(cfg);
  REQUIRE(pts.size() == 2);
  for (const auto& p : pts) {
    CHECK_FALSE(p.converged);
    CHECK(std::isnan(p.observables.M));
    CHECK_FALSE(p.failure.empty());
  }
  const CsvTable t = parse_csv(slurp(d / "sweep.csv"));
  CHECK(t.data(1, 8) == 0.0);
  CHECK(std::isnan(t.data(1, 1)));
  const auto j = nlohmann::json::parse(slurp(d / "sweep.json"));
  CHECK(j["points"][0]["M"].is_null());
  CHECK(fs::exists(d / "mass_diagram.svg"));
  CHECK(fs::exists(d / "binding_diagram.svg"));
}

TEST_CASE("svg plot") {
  const std::string s = svg_plot("a < b", "x", "y", {{"one", {0, 1, 2}, {0, 1, 4}}, {"two", {0, 2}, {1, NAN}}});
  CHECK(s.rfind("<svg", 0) == 0);
  CHECK(s.find("a &lt; b") != std::string::npos);
  std::size_t n = 0;
  for (std::size_t p = s.find("<polyline"); p != std::string::npos; p = s.find("<polyline", p + 1)) ++n;
  CHECK(n == 2);
  CHECK(s.find("nan") == std::string::npos);
  // Degenerate input still yields a valid document.
  CHECK(svg_plot("t", "x", "y", {}).find("</svg>") != std::string::npos);
}
