#ifndef BFSTAR_DRIVER_HPP
#define BFSTAR_DRIVER_HPP

// Run configuration, single solves, parameter sweeps and file emission.
//
// Configuration keys mirror the CLI flags without the leading dashes:
//   gamma lambda-self b sigma-c mu-c                      model
//   x-inf r-max cells-inner cells-outer outer-ratio       meshes
//   eps max-iter freeze-threshold tau-min farfield        solver
//   r-s0 omega0 phi-s0 boson-width                        initial guess
//   sweep-param sweep-range sweep-count warm-start        sweeps
//   verify out-dir emit                                   output
// Files use one `key = value` per line; `#` starts a comment.

#include "bfstar/canm.hpp"
#include "bfstar/solution.hpp"

#include <Eigen/Core>

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace bfstar {

enum class SweepParam { MuC, SigmaC };

struct SweepSpec {
  SweepParam param = SweepParam::MuC;
  double start = 0.1;
  double stop = 3.0;
  int count = 1;
  bool warm_start = true;
  int max_halvings = 3;

  std::vector<double> values() const;
};

struct EmitSpec {
  bool csv = true;
  bool json = true;
  bool svg = false;
};

struct RunConfig {
  ModelParams params;
  CanmConfig canm;
  SweepSpec sweep;
  std::string out_dir = ".";
  EmitSpec emit;
  bool verify = false;

  /// Sets one key. A later value replaces an earlier one; when the sources
  /// differ the override is recorded in `provenance`. Throws ConfigError.
  void set(const std::string& key, const std::string& value, const std::string& source);

  /// Throws ConfigError naming the offending key and its accepted range.
  void validate() const;

  /// Effective settings as `key = value` lines, in the file format.
  std::string describe() const;

  std::vector<std::string> provenance;

private:
  std::map<std::string, std::pair<std::string, std::string>> seen_; // key -> (value, source)
};

/// Parses `key = value` lines into `cfg`. `origin` names the text in errors
/// (`origin:line: message`).
void parse_config_text(RunConfig& cfg, const std::string& text, const std::string& origin);
void parse_config_file(RunConfig& cfg, const std::string& path);

/// All configuration keys, in documentation order.
const std::vector<std::string>& config_keys();

struct VerifyReport {
  bool converged = false;
  std::string failure;
  SpectralTriple spectral;
  Observables observables;
  double rel_R_s = 0.0;
  double abs_Omega = 0.0;
  double rel_M = 0.0;
  double rel_M_RF = 0.0;
  double profile_max = 0.0; // max |difference| of lambda, nu, phi, sigma on the nodes
};

/// Oracle cross-check of a converged solution.
VerifyReport verify_with_oracle(const Solution& s, FarField farfield);

struct RunResult {
  Solution solution;
  std::optional<VerifyReport> verify;
};

/// Solves once and writes the requested files into cfg.out_dir; files are
/// written even when the solve fails. Throws only on configuration or I/O
/// errors.
RunResult run_single(const RunConfig& cfg);

struct SweepPoint {
  double value = 0.0;
  bool converged = false;
  int iterations = 0;
  SpectralTriple spectral;
  Observables observables;
  std::string failure;
};

/// Sweeps the configured parameter and writes sweep.csv (and plots).
/// Non-converged points are recorded and the sweep continues.
std::vector<SweepPoint> run_sweep(const RunConfig& cfg);

// --- file formats ---------------------------------------------------------

/// Profile tables at the mesh nodes: x, r, lambda, nu, phi, xi, sigma, eta[, mu].
std::string profiles_csv(const Solution& s, bool inner);
std::string summary_json(const Solution& s, const std::optional<VerifyReport>& verify);
std::string sweep_csv(const std::vector<SweepPoint>& points, SweepParam param);
std::string sweep_json(const std::vector<SweepPoint>& points, SweepParam param);

struct CsvTable {
  std::vector<std::string> header;
  Eigen::MatrixXd data;
};
CsvTable parse_csv(const std::string& text);

struct PlotSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

/// Minimal standalone SVG line chart.
std::string svg_plot(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                     const std::vector<PlotSeries>& series);

/// Writes `text` to `path`, creating parent directories. Throws Error on failure.
void write_file(const std::string& path, const std::string& text);

} // namespace bfstar

#endif
