#include "bfstar/driver.hpp"

#include "bfstar/errors.hpp"
#include "bfstar/oracle.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <limits>
#include <sstream>
#include <thread>

namespace bfstar {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

// Shortest round-trip representation, used for config echo.
std::string shortest(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

// Canonical 17-significant-digit form for data files.
std::string g17(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const char* b = v.data();
  const char* e = v.data() + v.size();
  const auto r = std::from_chars(b, e, out);
  if (r.ec != std::errc() || r.ptr != e || !std::isfinite(out))
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

long parse_int(const std::string& key, const std::string& v) {
  long out = 0;
  const char* e = v.data() + v.size();
  const auto r = std::from_chars(v.data(), e, out);
  if (r.ec != std::errc() || r.ptr != e) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  const std::string s = lower(v);
  if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
  if (s == "0" || s == "false" || s == "no" || s == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::string param_name(SweepParam p) { return p == SweepParam::MuC ? "mu_c" : "sigma_c"; }

std::string farfield_name(FarField f) { return f == FarField::Robin ? "robin" : "dirichlet"; }

std::string canonical_key(std::string k) {
  k = lower(trim(k));
  std::replace(k.begin(), k.end(), '_', '-');
  return k;
}

} // namespace

// ---------------------------------------------------------------------------
// Configuration

std::vector<double> SweepSpec::values() const {
  std::vector<double> v;
  if (count == 1) return {start};
  for (int i = 0; i < count; ++i) v.push_back(start + (stop - start) * i / (count - 1));
  return v;
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "gamma",       "lambda-self", "b",           "sigma-c",          "mu-c",
      "x-inf",       "r-max",       "cells-inner", "cells-outer",      "outer-ratio",
      "eps",         "max-iter",    "freeze-threshold", "tau-min",     "farfield",
      "r-s0",        "omega0",      "phi-s0",      "boson-width",      "sweep-param",
      "sweep-range", "sweep-count", "warm-start",  "verify",           "out-dir",
      "emit"};
  return keys;
}

void RunConfig::set(const std::string& raw_key, const std::string& raw_value, const std::string& source) {
  const std::string key = canonical_key(raw_key);
  const std::string v = trim(raw_value);
  auto& p = params;
  auto& c = canm;
  if (key == "gamma") p.gamma = parse_double(key, v);
  else if (key == "lambda-self") p.Lambda = parse_double(key, v);
  else if (key == "b") p.b = parse_double(key, v);
  else if (key == "sigma-c") p.sigma_c = parse_double(key, v);
  else if (key == "mu-c") p.mu_c = parse_double(key, v);
  else if (key == "x-inf") c.x_inf = parse_double(key, v);
  else if (key == "r-max") c.r_max = parse_double(key, v);
  else if (key == "cells-inner") {
    const long n = parse_int(key, v);
    if (n < 2) throw ConfigError("cells-inner: must be >= 2");
    c.mesh.inner_cells = static_cast<std::size_t>(n);
  } else if (key == "cells-outer") {
    const long n = parse_int(key, v);
    if (n < 2) throw ConfigError("cells-outer: must be >= 2");
    c.mesh.outer_cells = static_cast<std::size_t>(n);
  } else if (key == "outer-ratio") c.mesh.outer_ratio = parse_double(key, v);
  else if (key == "eps") c.epsilon = parse_double(key, v);
  else if (key == "max-iter") c.max_iter = static_cast<int>(parse_int(key, v));
  else if (key == "freeze-threshold") c.freeze_threshold = parse_double(key, v);
  else if (key == "tau-min") c.tau_min = parse_double(key, v);
  else if (key == "farfield") {
    const std::string s = lower(v);
    if (s == "dirichlet") c.farfield = FarField::Dirichlet;
    else if (s == "robin") c.farfield = FarField::Robin;
    else throw ConfigError("farfield: expected dirichlet or robin, got '" + v + "'");
  } else if (key == "r-s0") c.R_s0 = parse_double(key, v);
  else if (key == "omega0") c.Omega0 = parse_double(key, v);
  else if (key == "phi-s0") c.phi_s0 = parse_double(key, v);
  else if (key == "boson-width") c.boson_width = parse_double(key, v);
  else if (key == "sweep-param") {
    const std::string s = canonical_key(v);
    if (s == "mu-c") sweep.param = SweepParam::MuC;
    else if (s == "sigma-c") sweep.param = SweepParam::SigmaC;
    else throw ConfigError("sweep-param: expected mu_c or sigma_c, got '" + v + "'");
  } else if (key == "sweep-range") {
    const auto sep = v.find_first_of(":,");
    if (sep == std::string::npos) throw ConfigError("sweep-range: expected start:stop, got '" + v + "'");
    sweep.start = parse_double(key, trim(v.substr(0, sep)));
    sweep.stop = parse_double(key, trim(v.substr(sep + 1)));
  } else if (key == "sweep-count") sweep.count = static_cast<int>(parse_int(key, v));
  else if (key == "warm-start") sweep.warm_start = parse_bool(key, v);
  else if (key == "verify") verify = parse_bool(key, v);
  else if (key == "out-dir") {
    if (v.empty()) throw ConfigError("out-dir: must not be empty");
    out_dir = v;
  } else if (key == "emit") {
    EmitSpec e{false, false, false};
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = lower(trim(item));
      if (item == "csv") e.csv = true;
      else if (item == "json") e.json = true;
      else if (item == "svg") e.svg = true;
      else if (item == "none" || item.empty()) continue;
      else throw ConfigError("emit: unknown format '" + item + "' (accepted: csv, json, svg, none)");
    }
    emit = e;
  } else {
    throw ConfigError("unknown key '" + trim(raw_key) + "'");
  }

  const auto it = seen_.find(key);
  if (it != seen_.end() && it->second.second != source)
    provenance.push_back(key + ": " + source + " value '" + v + "' overrides " + it->second.second +
                         " value '" + it->second.first + "'");
  seen_[key] = {v, source};
}

void RunConfig::validate() const {
  try {
    params.validate(true);
    canm.validate();
  } catch (const DomainError& e) {
    // Name the configuration key that controls the offending field.
    static const std::pair<const char*, const char*> names[] = {
        {"epsilon", "eps"},         {"freeze_threshold", "freeze-threshold"}, {"max_iter", "max-iter"},
        {"tau_min", "tau-min"},     {"meshes", "cells-inner/cells-outer"},    {"outer_ratio", "outer-ratio"},
        {"x_inf", "x-inf"},         {"r_max", "r-max"},                       {"R_s0", "r-s0"},
        {"Omega0", "omega0"},       {"boson_width", "boson-width"},           {"gamma", "gamma"},
        {"Lambda", "lambda-self"},  {"b ", "b"},                              {"sigma_c", "sigma-c"},
        {"mu_c", "mu-c"}};
    const std::string msg = e.what();
    for (const auto& [field, key] : names)
      if (msg.rfind(field, 0) == 0) throw ConfigError(std::string(key) + ": " + msg);
    throw ConfigError(msg);
  }
  if (sweep.count < 1) throw ConfigError("sweep-count: must be >= 1");
  if (sweep.max_halvings < 0) throw ConfigError("sweep halvings must be >= 0");
  if (sweep.param == SweepParam::MuC && !(sweep.start > 0.0 && sweep.stop > 0.0))
    throw ConfigError("sweep-range: mu_c must stay > 0");
  if (sweep.param == SweepParam::SigmaC && !(sweep.start >= 0.0 && sweep.stop >= 0.0))
    throw ConfigError("sweep-range: sigma_c must stay >= 0");
  if (out_dir.empty()) throw ConfigError("out-dir: must not be empty");
}

std::string RunConfig::describe() const {
  std::ostringstream o;
  o << "gamma = " << shortest(params.gamma) << "\n";
  o << "lambda-self = " << shortest(params.Lambda) << "\n";
  o << "b = " << shortest(params.b) << "\n";
  o << "sigma-c = " << shortest(params.sigma_c) << "\n";
  o << "mu-c = " << shortest(params.mu_c) << "\n";
  if (canm.x_inf) o << "x-inf = " << shortest(*canm.x_inf) << "\n";
  o << "r-max = " << shortest(canm.r_max) << "\n";
  o << "cells-inner = " << canm.mesh.inner_cells << "\n";
  o << "cells-outer = " << canm.mesh.outer_cells << "\n";
  o << "outer-ratio = " << shortest(canm.mesh.outer_ratio) << "\n";
  o << "eps = " << shortest(canm.epsilon) << "\n";
  o << "max-iter = " << canm.max_iter << "\n";
  o << "freeze-threshold = " << shortest(canm.freeze_threshold) << "\n";
  o << "tau-min = " << shortest(canm.tau_min) << "\n";
  o << "farfield = " << farfield_name(canm.farfield) << "\n";
  if (canm.R_s0) o << "r-s0 = " << shortest(*canm.R_s0) << "\n";
  o << "omega0 = " << shortest(canm.Omega0) << "\n";
  o << "phi-s0 = " << shortest(canm.phi_s0) << "\n";
  if (canm.boson_width) o << "boson-width = " << shortest(*canm.boson_width) << "\n";
  o << "sweep-param = " << param_name(sweep.param) << "\n";
  o << "sweep-range = " << shortest(sweep.start) << ":" << shortest(sweep.stop) << "\n";
  o << "sweep-count = " << sweep.count << "\n";
  o << "warm-start = " << (sweep.warm_start ? "true" : "false") << "\n";
  o << "verify = " << (verify ? "true" : "false") << "\n";
  o << "out-dir = " << out_dir << "\n";
  std::string e;
  if (emit.csv) e += "csv,";
  if (emit.json) e += "json,";
  if (emit.svg) e += "svg,";
  o << "emit = " << (e.empty() ? "none" : e.substr(0, e.size() - 1)) << "\n";
  return o.str();
}

void parse_config_text(RunConfig& cfg, const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(n) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    try {
      cfg.set(line.substr(0, eq), line.substr(eq + 1), origin);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
}

void parse_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError(path + ": cannot open config file");
  std::stringstream ss;
  ss << f.rdbuf();
  parse_config_text(cfg, ss.str(), path);
}

// ---------------------------------------------------------------------------
// File formats

std::string profiles_csv(const Solution& s, bool inner) {
  const HermiteGridFunction& f = inner ? s.inner : s.outer;
  std::ostringstream o;
  o << "x,r,lambda,nu,phi,xi,sigma,eta" << (inner ? ",mu" : "") << "\n";
  const auto& x = f.mesh().nodes();
  for (std::size_t j = 0; j < x.size(); ++j) {
    o << g17(x[j]) << "," << g17(s.spectral.R_s * x[j]);
    for (Eigen::Index c = 0; c < f.values().cols(); ++c) o << "," << g17(f.values()(static_cast<Eigen::Index>(j), c));
    o << "\n";
  }
  return o.str();
}

namespace {

nlohmann::ordered_json number(double v) {
  return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr);
}

} // namespace

std::string summary_json(const Solution& s, const std::optional<VerifyReport>& verify) {
  nlohmann::ordered_json j;
  const auto& r = s.report;
  j["R_s"] = number(s.spectral.R_s);
  j["Omega"] = s.has_omega() ? number(s.spectral.Omega) : nlohmann::ordered_json(nullptr);
  j["phi_s"] = number(s.spectral.phi_s);
  j["nu_c"] = number(s.nu_c);
  j["M"] = number(s.observables.M);
  j["M_RB"] = number(s.observables.M_RB);
  j["M_RF"] = number(s.observables.M_RF);
  j["E_b"] = number(s.observables.E_b);
  j["iterations"] = r.iterations;
  j["residual"] = number(r.residual);
  j["converged"] = r.converged;
  j["mode_switches"] = r.mode_switches;
  j["quadratic_constant"] = number(r.quadratic_constant);
  j["tail_integrand"] = number(s.observables.tail_integrand);
  j["pure_fermion"] = s.pure_fermion;
  j["farfield"] = farfield_name(s.farfield);
  j["x_inf"] = number(s.x_inf());
  j["r_max"] = number(s.r_max());
  j["params"] = {{"gamma", s.params.gamma},
                 {"Lambda", s.params.Lambda},
                 {"b", s.params.b},
                 {"sigma_c", s.params.sigma_c},
                 {"mu_c", s.params.mu_c}};
  auto log = nlohmann::ordered_json::array();
  for (const auto& rec : r.log)
    log.push_back({{"k", rec.k},
                   {"delta", number(rec.delta)},
                   {"delta_f", number(rec.delta_f)},
                   {"tau", number(rec.tau)},
                   {"mode", rec.mode == IterationMode::Frozen ? "frozen" : "newton"},
                   {"matching_rcond", number(rec.matching_rcond)},
                   {"pass", rec.pass}});
  j["log"] = log;
  j["warnings"] = r.warnings;
  j["failure"] = r.failure;
  if (verify) {
    const auto& v = *verify;
    j["verify"] = {{"converged", v.converged},
                   {"failure", v.failure},
                   {"R_s", number(v.spectral.R_s)},
                   {"Omega", s.has_omega() ? number(v.spectral.Omega) : nlohmann::ordered_json(nullptr)},
                   {"phi_s", number(v.spectral.phi_s)},
                   {"M", number(v.observables.M)},
                   {"M_RF", number(v.observables.M_RF)},
                   {"rel_R_s", number(v.rel_R_s)},
                   {"abs_Omega", number(v.abs_Omega)},
                   {"rel_M", number(v.rel_M)},
                   {"rel_M_RF", number(v.rel_M_RF)},
                   {"profile_max", number(v.profile_max)}};
  }
  return j.dump(2) + "\n";
}

std::string sweep_csv(const std::vector<SweepPoint>& pts, SweepParam param) {
  std::ostringstream o;
  o << param_name(param) << ",R_s,Omega,phi_s,M,M_RB,M_RF,E_b,converged,iterations\n";
  for (const auto& p : pts) {
    o << g17(p.value) << "," << g17(p.spectral.R_s) << "," << g17(p.spectral.Omega) << ","
      << g17(p.spectral.phi_s) << "," << g17(p.observables.M) << "," << g17(p.observables.M_RB) << ","
      << g17(p.observables.M_RF) << "," << g17(p.observables.E_b) << "," << (p.converged ? 1 : 0) << ","
      << p.iterations << "\n";
  }
  return o.str();
}

std::string sweep_json(const std::vector<SweepPoint>& pts, SweepParam param) {
  nlohmann::ordered_json j;
  j["param"] = param_name(param);
  auto arr = nlohmann::ordered_json::array();
  for (const auto& p : pts)
    arr.push_back({{"value", p.value},
                   {"converged", p.converged},
                   {"iterations", p.iterations},
                   {"R_s", number(p.spectral.R_s)},
                   {"Omega", number(p.spectral.Omega)},
                   {"phi_s", number(p.spectral.phi_s)},
                   {"M", number(p.observables.M)},
                   {"M_RB", number(p.observables.M_RB)},
                   {"M_RF", number(p.observables.M_RF)},
                   {"E_b", number(p.observables.E_b)},
                   {"failure", p.failure}});
  j["points"] = arr;
  return j.dump(2) + "\n";
}

CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("empty CSV");
  {
    std::stringstream ss(line);
    std::string h;
    while (std::getline(ss, h, ',')) t.header.push_back(trim(h));
  }
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      cell = trim(cell);
      row.push_back(cell == "nan" ? kNaN : std::strtod(cell.c_str(), nullptr));
    }
    if (row.size() != t.header.size()) throw ConfigError("CSV row width does not match the header");
    rows.push_back(std::move(row));
  }
  t.data.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(t.header.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t c = 0; c < rows[i].size(); ++c)
      t.data(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = rows[i][c];
  return t;
}

namespace {

std::string xml_escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
    case '<': o += "&lt;"; break;
    case '>': o += "&gt;"; break;
    case '&': o += "&amp;"; break;
    case '"': o += "&quot;"; break;
    default: o += c;
    }
  }
  return o;
}

// 1-2-5 tick spacing covering [lo, hi] with about five ticks.
std::vector<double> ticks(double lo, double hi) {
  const double span = hi - lo;
  const double raw = span / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0})
    if (m * mag >= raw) {
      step = m * mag;
      break;
    }
  std::vector<double> t;
  for (double v = std::ceil(lo / step) * step; v <= hi + 1e-9 * span; v += step)
    t.push_back(std::abs(v) < 1e-12 * span ? 0.0 : v);
  return t;
}

std::string num_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

} // namespace

std::string svg_plot(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                     const std::vector<PlotSeries>& series) {
  const double W = 640, H = 420, ml = 70, mr = 20, mt = 40, mb = 55;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series)
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i)
      if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) {
        x0 = std::min(x0, s.x[i]);
        x1 = std::max(x1, s.x[i]);
        y0 = std::min(y0, s.y[i]);
        y1 = std::max(y1, s.y[i]);
      }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 - x0 <= 0.0) x0 -= 0.5, x1 += 0.5;
  if (y1 - y0 <= 0.0) y0 -= 0.5, y1 += 0.5;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto px = [&](double x) { return ml + (x - x0) / (x1 - x0) * (W - ml - mr); };
  auto py = [&](double y) { return H - mb - (y - y0) / (y1 - y0) * (H - mt - mb); };

  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  std::ostringstream o;
  o.setf(std::ios::fixed);
  o.precision(2);
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" viewBox=\"0 0 " << W << " " << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << xml_escape(title)
    << "</text>\n";
  o << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << W - ml - mr << "\" height=\"" << H - mt - mb
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (double t : ticks(x0, x1)) {
    o << "<line x1=\"" << px(t) << "\" y1=\"" << H - mb << "\" x2=\"" << px(t) << "\" y2=\"" << H - mb + 5
      << "\" stroke=\"black\"/>\n";
    o << "<text x=\"" << px(t) << "\" y=\"" << H - mb + 18 << "\" text-anchor=\"middle\">" << num_label(t)
      << "</text>\n";
  }
  for (double t : ticks(y0, y1)) {
    o << "<line x1=\"" << ml - 5 << "\" y1=\"" << py(t) << "\" x2=\"" << ml << "\" y2=\"" << py(t)
      << "\" stroke=\"black\"/>\n";
    o << "<text x=\"" << ml - 8 << "\" y=\"" << py(t) + 4 << "\" text-anchor=\"end\">" << num_label(t)
      << "</text>\n";
  }
  o << "<text x=\"" << (ml + W - mr) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">"
    << xml_escape(xlabel) << "</text>\n";
  o << "<text transform=\"translate(18," << (mt + H - mb) / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
    << xml_escape(ylabel) << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* col = colors[k % 6];
    o << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"1.6\" points=\"";
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i)
      if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) o << px(s.x[i]) << "," << py(s.y[i]) << " ";
    o << "\"/>\n";
    const double ly = mt + 16 + 16 * static_cast<double>(k);
    o << "<line x1=\"" << W - mr - 110 << "\" y1=\"" << ly - 4 << "\" x2=\"" << W - mr - 90 << "\" y2=\""
      << ly - 4 << "\" stroke=\"" << col << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << W - mr - 85 << "\" y=\"" << ly << "\">" << xml_escape(s.name) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

void write_file(const std::string& path, const std::string& text) {
  namespace fs = std::filesystem;
  std::error_code ec;
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path(), ec);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f << text;
  if (!f) throw IoError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// Runs

VerifyReport verify_with_oracle(const Solution& s, FarField farfield) {
  VerifyReport v;
  OracleOptions o;
  o.x_inf = s.x_inf();
  o.farfield = farfield;
  try {
    const OracleSolution os = shoot_solve(s.params, unknowns_from(s), o);
    v.converged = true;
    v.spectral = os.unknowns.spectral;
    v.observables = os.shot.observables;
    v.rel_R_s = std::abs(v.spectral.R_s - s.spectral.R_s) / s.spectral.R_s;
    v.abs_Omega = s.has_omega() ? std::abs(v.spectral.Omega - s.spectral.Omega) : 0.0;
    v.rel_M = std::abs(v.observables.M - s.observables.M) / std::abs(s.observables.M);
    v.rel_M_RF = std::abs(v.observables.M_RF - s.observables.M_RF) / std::abs(s.observables.M_RF);
    const Eigen::MatrixXd a = sample_inner(s.params, os.unknowns, o, s.inner.mesh().nodes());
    const Eigen::MatrixXd b = sample_outer(s.params, os.unknowns, o, s.outer.mesh().nodes());
    for (std::size_t c : {kLambda, kNu, kPhi, kSigma}) {
      const auto ci = static_cast<Eigen::Index>(c);
      v.profile_max = std::max(v.profile_max, (a.col(ci) - s.inner.values().col(ci)).cwiseAbs().maxCoeff());
      v.profile_max = std::max(v.profile_max, (b.col(ci) - s.outer.values().col(ci)).cwiseAbs().maxCoeff());
    }
  } catch (const Error& e) {
    v.converged = false;
    v.failure = e.what();
  }
  return v;
}

namespace {

Solution attempt(const ModelParams& p, const CanmConfig& cfg, const Solution* guess) {
  try {
    IterationState s = guess ? resample(*guess, p, cfg) : initial_guess(p, cfg);
    return try_solve_from(std::move(s), cfg);
  } catch (const Error& e) {
    Solution bad;
    bad.params = p;
    bad.report.failure = e.what();
    return bad;
  }
}

ModelParams with(const ModelParams& base, SweepParam param, double v) {
  ModelParams p = base;
  (param == SweepParam::MuC ? p.mu_c : p.sigma_c) = v;
  return p;
}

SweepPoint record(double v, const Solution& s) {
  SweepPoint pt;
  pt.value = v;
  pt.converged = s.report.converged;
  pt.iterations = s.report.iterations;
  pt.failure = s.report.failure;
  if (s.report.converged) {
    pt.spectral = s.spectral;
    pt.observables = s.observables;
  } else {
    pt.spectral = {kNaN, kNaN, kNaN};
    pt.observables = {kNaN, kNaN, kNaN, kNaN, kNaN};
  }
  return pt;
}

void emit_single(const RunConfig& cfg, const RunResult& r) {
  const std::string dir = cfg.out_dir + "/";
  const Solution& s = r.solution;
  const bool have_profiles = s.inner.dim() == kInnerDim;
  if (cfg.emit.csv && have_profiles) {
    write_file(dir + "profiles_inner.csv", profiles_csv(s, true));
    write_file(dir + "profiles_outer.csv", profiles_csv(s, false));
  }
  if (cfg.emit.json) write_file(dir + "summary.json", summary_json(s, r.verify));
  if (cfg.emit.svg && have_profiles) {
    std::vector<PlotSeries> series(4);
    const char* names[] = {"sigma", "phi", "nu", "mu"};
    const std::size_t comps[] = {kSigma, kPhi, kNu, kMu};
    for (std::size_t k = 0; k < 4; ++k) {
      series[k].name = names[k];
      const auto ck = static_cast<Eigen::Index>(comps[k]);
      for (std::size_t j = 0; j < s.inner.mesh().nodes().size(); ++j) {
        series[k].x.push_back(s.spectral.R_s * s.inner.mesh().nodes()[j]);
        series[k].y.push_back(s.inner.values()(static_cast<Eigen::Index>(j), ck));
      }
      if (comps[k] == kMu) continue;
      for (std::size_t j = 1; j < s.outer.mesh().nodes().size(); ++j) {
        series[k].x.push_back(s.spectral.R_s * s.outer.mesh().nodes()[j]);
        series[k].y.push_back(s.outer.values()(static_cast<Eigen::Index>(j), ck));
      }
    }
    write_file(dir + "profiles.svg", svg_plot("Profiles", "r", "value", series));
  }
}

} // namespace

RunResult run_single(const RunConfig& cfg) {
  cfg.validate();
  RunResult r;
  r.solution = attempt(cfg.params, cfg.canm, nullptr);
  if (cfg.verify && r.solution.report.converged)
    r.verify = verify_with_oracle(r.solution, cfg.canm.farfield);
  emit_single(cfg, r);
  return r;
}

std::vector<SweepPoint> run_sweep(const RunConfig& cfg) {
  cfg.validate();
  const std::vector<double> values = cfg.sweep.values();
  std::vector<SweepPoint> pts(values.size());

  if (!cfg.sweep.warm_start) {
    // Independent points: evaluate concurrently.
    const std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
    for (std::size_t base = 0; base < values.size(); base += workers) {
      std::vector<std::future<SweepPoint>> jobs;
      for (std::size_t i = base; i < std::min(values.size(), base + workers); ++i)
        jobs.push_back(std::async(std::launch::async, [&, i] {
          return record(values[i], attempt(with(cfg.params, cfg.sweep.param, values[i]), cfg.canm, nullptr));
        }));
      for (std::size_t i = 0; i < jobs.size(); ++i) pts[base + i] = jobs[i].get();
    }
  } else {
    std::optional<Solution> last;
    double last_value = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double v = values[i];
      Solution s = attempt(with(cfg.params, cfg.sweep.param, v), cfg.canm, last ? &*last : nullptr);
      // Step halving from the last converged point: 2, 4, 8 sub-steps.
      for (int h = 1; !s.report.converged && last && h <= cfg.sweep.max_halvings; ++h) {
        const int n = 1 << h;
        Solution cur = *last;
        bool ok = true;
        for (int k = 1; k <= n; ++k) {
          const double vk = k == n ? v : last_value + (v - last_value) * k / n;
          Solution next = attempt(with(cfg.params, cfg.sweep.param, vk), cfg.canm, &cur);
          if (!next.report.converged) {
            ok = false;
            if (k == n) s = std::move(next);
            break;
          }
          cur = std::move(next);
        }
        if (ok) s = std::move(cur);
      }
      pts[i] = record(v, s);
      if (s.report.converged) {
        last = std::move(s);
        last_value = v;
      }
    }
  }

  const std::string dir = cfg.out_dir + "/";
  if (cfg.emit.csv) write_file(dir + "sweep.csv", sweep_csv(pts, cfg.sweep.param));
  if (cfg.emit.json) write_file(dir + "sweep.json", sweep_json(pts, cfg.sweep.param));
  if (cfg.emit.svg) {
    PlotSeries m{"M", {}, {}}, mrf{"M_RF", {}, {}}, eb{"E_b", {}, {}};
    for (const auto& p : pts) {
      if (!p.converged) continue;
      m.x.push_back(p.value);
      m.y.push_back(p.observables.M);
      mrf.x.push_back(p.value);
      mrf.y.push_back(p.observables.M_RF);
      eb.x.push_back(p.observables.M_RF);
      eb.y.push_back(p.observables.E_b);
    }
    const std::string pn = param_name(cfg.sweep.param);
    write_file(dir + "mass_diagram.svg", svg_plot("Mass versus " + pn, pn, "mass", {m, mrf}));
    write_file(dir + "binding_diagram.svg", svg_plot("Binding energy versus fermion rest mass", "M_RF", "E_b", {eb}));
  }
  return pts;
}

} // namespace bfstar
