#include "treedlnm/io.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;

namespace treedlnm {

// ---------------------------------------------------------------------------
// Config

const std::vector<RunConfig::Key>& RunConfig::keys() {
  static const std::vector<Key> k = {
      {"data", "", "input CSV (fit; summarize resolves percentile endpoints from it)"},
      {"output_dir", "out", "directory for output files"},
      {"n_trees", "20", "number of trees"},
      {"alpha", "0.95", "tree prior alpha"},
      {"beta", "2", "tree prior beta"},
      {"c_scale", "10000", "covariate prior variance is c_scale * var(y)"},
      {"sigma_x_mode", "zero", "zero | half_sd | fixed:<value>"},
      {"n_exposure_splits", "30", "number of candidate exposure splits"},
      {"exposure_split_percentile_range", "0.01,99.9", "percentile range (in percent) spanned by the exposure splits"},
      {"split_spacing", "even", "even (evenly spaced values) | quantile (evenly spaced percentiles)"},
      {"split_at_x0", "auto", "add x0 as a candidate exposure split: true | false | auto (fit: false, simulate: true)"},
      {"max_depth", "none", "maximum tree depth or none"},
      {"move_probs", "0.3,0.3,0.4", "grow,prune,change proposal probabilities"},
      {"burn_in", "5000", "burn-in sweeps"},
      {"iterations", "15000", "post burn-in sweeps"},
      {"thin", "10", "keep every thin-th post burn-in sweep"},
      {"seed", "1", "random seed (simulate: base seed, replicate r uses seed + r)"},
      {"x0_mode", "median", "reference exposure: median | fixed:<value> (simulate always uses the scenario center)"},
      {"grid_size", "100", "evaluation grid points in the exposure dimension"},
      {"grid_percentile_range", "0.5,99.5", "percentile range (in percent) of the evaluation grid"},
      {"level", "0.95", "credible level for intervals and windows"},
      {"uncertainty_mode", "none", "none | se | ecdf"},
      {"scenario", "A", "simulation scenario A | B | C | D"},
      {"amplitude", "1", "simulation effect amplitude"},
      {"n", "1000", "simulation sample size"},
      {"T", "37", "simulation weeks"},
      {"replicates", "100", "simulation replicates"},
      {"snr", "0.001", "simulation Var[f] / sigma^2"},
      {"draws", "", "summarize: surface_draws.csv or the fit output directory"},
      {"contrast_from", "p50", "summarize: contrast start (median | p<percent> | <value>)"},
      {"contrast_to", "p25", "summarize: contrast end (median | p<percent> | <value>)"},
      {"record_wall_time", "false", "write wall time into run_meta.txt (breaks byte-identical reruns)"},
  };
  return k;
}

RunConfig::RunConfig() {
  for (const auto& k : keys()) values_[k.name] = k.default_value;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

bool parse_double(const std::string& text, double& out) {
  const std::string t = trim(text);
  if (t.empty()) return false;
  const char* first = t.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, t.data() + t.size(), out);
  return ec == std::errc() && ptr == t.data() + t.size() && std::isfinite(out);
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!values_.count(key)) throw ConfigError("unknown config key '" + key + "'");
  values_[key] = value;
  explicit_[key] = true;
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!cfg.values_.count(key)) {
      throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    if (!seen.insert(key).second) {
      throw ConfigError("config line " + std::to_string(lineno) + ": key '" + key + "' given twice");
    }
    cfg.set(key, value);
  }
  return cfg;
}

RunConfig RunConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

const std::string& RunConfig::str(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

double RunConfig::num(const std::string& key) const {
  double v = 0.0;
  if (!parse_double(str(key), v)) throw ConfigError("config key '" + key + "': expected a number, got '" + str(key) + "'");
  return v;
}

int RunConfig::integer(const std::string& key) const {
  const double v = num(key);
  if (v != std::floor(v) || std::abs(v) > 2e9) {
    throw ConfigError("config key '" + key + "': expected an integer, got '" + str(key) + "'");
  }
  return static_cast<int>(v);
}

std::uint64_t RunConfig::seed() const {
  const std::string s = trim(str("seed"));
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError("config key 'seed': expected a nonnegative integer, got '" + s + "'");
  }
  return v;
}

bool RunConfig::flag(const std::string& key) const {
  const std::string& v = str(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + v + "'");
}

std::pair<double, double> RunConfig::range(const std::string& key) const {
  const std::string& v = str(key);
  const auto comma = v.find(',');
  double a = 0.0, b = 0.0;
  if (comma == std::string::npos || !parse_double(v.substr(0, comma), a) || !parse_double(v.substr(comma + 1), b)) {
    throw ConfigError("config key '" + key + "': expected 'low,high', got '" + v + "'");
  }
  if (!(a < b)) throw ConfigError("config key '" + key + "': low must be below high");
  return {a, b};
}

std::string RunConfig::echo() const {
  std::string out;
  for (const auto& k : keys()) out += k.name + " = " + values_.at(k.name) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// CSV input

namespace {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<int> lines;  // file line of each row
};

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (char ch : line) {
    if (ch == '"') {
      quoted = !quoted;
    } else if (ch == ',' && !quoted) {
      out.push_back(trim(field));
      field.clear();
    } else {
      field += ch;
    }
  }
  out.push_back(trim(field));
  return out;
}

CsvTable read_csv(const fs::path& path, const std::string& what) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + what + " '" + path.string() + "'");
  CsvTable t;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty() || line[0] == '#') continue;
    auto fields = split_fields(line);
    if (t.header.empty()) {
      t.header = std::move(fields);
      continue;
    }
    if (fields.size() != t.header.size()) {
      throw DataError(what + " '" + path.string() + "' line " + std::to_string(lineno) + ": expected " +
                      std::to_string(t.header.size()) + " fields, found " + std::to_string(fields.size()));
    }
    t.rows.push_back(std::move(fields));
    t.lines.push_back(lineno);
  }
  if (t.header.empty()) throw DataError(what + " '" + path.string() + "' is empty");
  return t;
}

double cell(const CsvTable& t, size_t row, size_t col, const std::string& what) {
  double v = 0.0;
  if (!parse_double(t.rows[row][col], v)) {
    throw DataError(what + ": row " + std::to_string(row + 1) + " (line " + std::to_string(t.lines[row]) +
                    "), column '" + t.header[col] + "': non-numeric value '" + t.rows[row][col] + "'");
  }
  return v;
}

// Column positions of x_1..x_T in a header; throws on gaps or duplicates.
std::vector<size_t> exposure_columns(const std::vector<std::string>& header, const std::string& what) {
  static const std::regex pattern("^x_([0-9]+)$");
  std::map<int, size_t> found;
  for (size_t c = 0; c < header.size(); ++c) {
    std::smatch m;
    if (!std::regex_match(header[c], m, pattern)) continue;
    const int t = std::stoi(m[1]);
    if (t < 1) throw DataError(what + ": exposure column '" + header[c] + "' must be numbered from 1");
    if (!found.emplace(t, c).second) throw DataError(what + ": duplicate exposure column '" + header[c] + "'");
  }
  if (found.empty()) throw DataError(what + ": no exposure columns x_1..x_T");
  std::vector<size_t> cols;
  int expected = 1;
  for (const auto& [t, c] : found) {
    if (t != expected) {
      throw DataError(what + ": non-contiguous exposure columns (x_" + std::to_string(expected) + " missing, found x_" +
                      std::to_string(t) + ")");
    }
    cols.push_back(c);
    ++expected;
  }
  return cols;
}

MatrixXd read_exposure_block(const fs::path& path, int n, int T, const std::string& what) {
  const CsvTable t = read_csv(path, what);
  const auto cols = exposure_columns(t.header, what);
  if (static_cast<int>(cols.size()) != T || static_cast<int>(t.rows.size()) != n) {
    throw DataError(what + " '" + path.string() + "': shape " + std::to_string(t.rows.size()) + " x " +
                    std::to_string(cols.size()) + " does not match the exposure block " + std::to_string(n) + " x " +
                    std::to_string(T));
  }
  MatrixXd M(n, T);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < T; ++j) M(i, j) = cell(t, static_cast<size_t>(i), cols[static_cast<size_t>(j)], what);
  }
  return M;
}

}  // namespace

UncertaintyMode parse_uncertainty_mode(const std::string& text) {
  if (text == "none") return UncertaintyMode::None;
  if (text == "se") return UncertaintyMode::PerCellSE;
  if (text == "ecdf") return UncertaintyMode::EmpiricalCdf;
  throw ConfigError("uncertainty_mode must be none, se or ecdf (got '" + text + "')");
}

Dataset load_dataset(const fs::path& path, UncertaintyMode mode) {
  const std::string what = "data file";
  const CsvTable t = read_csv(path, what);
  const auto y_it = std::find(t.header.begin(), t.header.end(), "y");
  if (y_it == t.header.end()) throw DataError(what + " '" + path.string() + "': missing column 'y'");
  const auto y_col = static_cast<size_t>(y_it - t.header.begin());
  const auto x_cols = exposure_columns(t.header, what);
  std::vector<size_t> z_cols;
  for (size_t c = 0; c < t.header.size(); ++c) {
    if (c != y_col && std::find(x_cols.begin(), x_cols.end(), c) == x_cols.end()) z_cols.push_back(c);
  }
  const auto n = static_cast<Eigen::Index>(t.rows.size());
  if (n == 0) throw DataError(what + " '" + path.string() + "': no data rows");
  const auto T = static_cast<Eigen::Index>(x_cols.size());

  Dataset d;
  d.y.resize(n);
  d.X.resize(n, T);
  d.Z.resize(n, static_cast<Eigen::Index>(z_cols.size()) + 1);
  d.Z.col(0).setOnes();
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto r = static_cast<size_t>(i);
    d.y[i] = cell(t, r, y_col, what);
    for (Eigen::Index j = 0; j < T; ++j) d.X(i, j) = cell(t, r, x_cols[static_cast<size_t>(j)], what);
    for (size_t k = 0; k < z_cols.size(); ++k) d.Z(i, static_cast<Eigen::Index>(k) + 1) = cell(t, r, z_cols[k], what);
  }

  if (mode == UncertaintyMode::PerCellSE) {
    const fs::path se_path = path.string() + ".se.csv";
    d.se = read_exposure_block(se_path, d.n(), d.T(), "standard-error file");
    for (int i = 0; i < d.n(); ++i) {
      for (int j = 0; j < d.T(); ++j) {
        if (!((*d.se)(i, j) > 0.0)) {
          throw DataError("standard-error file '" + se_path.string() + "': row " + std::to_string(i + 1) +
                          ", column 'x_" + std::to_string(j + 1) + "': standard error must be positive (got " +
                          format_number((*d.se)(i, j)) + ")");
        }
      }
    }
  } else if (mode == UncertaintyMode::EmpiricalCdf) {
    const fs::path dir = path.string() + ".draws";
    if (!fs::is_directory(dir)) throw DataError("exposure draws directory '" + dir.string() + "' not found");
    std::map<int, fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.path().extension() != ".csv") continue;
      const std::string stem = entry.path().stem().string();
      int k = 0;
      const auto [ptr, ec] = std::from_chars(stem.data(), stem.data() + stem.size(), k);
      if (ec != std::errc() || ptr != stem.data() + stem.size()) {
        throw DataError("exposure draws directory: file '" + entry.path().filename().string() + "' is not named <k>.csv");
      }
      files[k] = entry.path();
    }
    for (const auto& [k, file] : files) {
      d.draws.push_back(read_exposure_block(file, d.n(), d.T(), "exposure draw file"));
    }
  }

  std::string problems;
  for (const auto& msg : validate(d, SplitGrid{{}, {}}, Hyperparameters{})) {
    if (msg.rfind("dataset:", 0) == 0) problems += "\n  " + msg;
  }
  if (!problems.empty()) throw DataError(what + " '" + path.string() + "':" + problems);
  return d;
}

// ---------------------------------------------------------------------------
// Settings

namespace {

// "fixed:<value>" -> value; nullopt when `text` has another form.
std::optional<double> fixed_value(const std::string& key, const std::string& text) {
  if (text.rfind("fixed:", 0) != 0) return std::nullopt;
  double v = 0.0;
  if (!parse_double(text.substr(6), v)) throw ConfigError("config key '" + key + "': bad value in '" + text + "'");
  return v;
}

std::vector<double> all_cells(const MatrixXd& X) { return {X.data(), X.data() + X.size()}; }

void apply_common(const RunConfig& cfg, Hyperparameters& h) {
  h.n_trees = cfg.integer("n_trees");
  h.alpha = cfg.num("alpha");
  h.beta = cfg.num("beta");
  const std::string& mp = cfg.str("move_probs");
  std::vector<double> probs;
  std::stringstream ss(mp);
  std::string part;
  while (std::getline(ss, part, ',')) {
    double v = 0.0;
    if (!parse_double(part, v)) throw ConfigError("config key 'move_probs': expected three numbers, got '" + mp + "'");
    probs.push_back(v);
  }
  if (probs.size() != 3) throw ConfigError("config key 'move_probs': expected three numbers, got '" + mp + "'");
  h.move_probs = MoveProbs{probs[0], probs[1], probs[2]};
  if (cfg.str("max_depth") != "none") h.max_depth = cfg.integer("max_depth");
  h.mcmc.burn_in = cfg.integer("burn_in");
  h.mcmc.iterations = cfg.integer("iterations");
  h.mcmc.thin = cfg.integer("thin");
  h.mcmc.seed = cfg.seed();
  if (h.mcmc.thin < 1) throw ConfigError("config key 'thin' must be at least 1");
  const double level = cfg.num("level");
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("config key 'level' must lie in (0, 1)");
  if (cfg.integer("grid_size") < 1) throw ConfigError("config key 'grid_size' must be at least 1");
  const auto& sx = cfg.str("sigma_x_mode");
  if (sx != "zero" && sx != "half_sd" && !fixed_value("sigma_x_mode", sx)) {
    throw ConfigError("sigma_x_mode must be zero, half_sd or fixed:<value> (got '" + sx + "')");
  }
  const auto& spacing = cfg.str("split_spacing");
  if (spacing != "even" && spacing != "quantile") throw ConfigError("split_spacing must be even or quantile");
  const auto& at_x0 = cfg.str("split_at_x0");
  if (at_x0 != "auto") cfg.flag("split_at_x0");
}

bool split_at_x0(const RunConfig& cfg, bool automatic) {
  return cfg.str("split_at_x0") == "auto" ? automatic : cfg.flag("split_at_x0");
}

}  // namespace

Hyperparameters hyperparameters_from(const RunConfig& cfg, const Dataset& data) {
  Hyperparameters h;
  apply_common(cfg, h);
  h.uncertainty = parse_uncertainty_mode(cfg.str("uncertainty_mode"));
  h.c = default_covariate_scale(data.y, cfg.num("c_scale"));
  const auto& sx = cfg.str("sigma_x_mode");
  if (sx == "half_sd") h.sigma_x = half_sd_bandwidth(data.X);
  else if (auto v = fixed_value("sigma_x_mode", sx)) h.sigma_x = *v;
  const auto& x0 = cfg.str("x0_mode");
  if (x0 == "median") h.x0 = percentile(all_cells(data.X), 50.0);
  else if (auto v = fixed_value("x0_mode", x0)) h.x0 = *v;
  else throw ConfigError("x0_mode must be median or fixed:<value> (got '" + x0 + "')");
  return h;
}

SplitGrid split_grid_from(const RunConfig& cfg, const MatrixXd& X, std::optional<double> x0) {
  const auto [lo, hi] = cfg.range("exposure_split_percentile_range");
  const int count = cfg.integer("n_exposure_splits");
  if (count < 0) throw ConfigError("n_exposure_splits must be nonnegative");
  SplitGrid grid = cfg.str("split_spacing") == "quantile" ? SplitGrid::quantile_spaced(X, count, lo, hi)
                                                          : SplitGrid::evenly_spaced(X, count, lo, hi);
  if (x0) grid.insert_exposure_split(*x0, X);
  return grid;
}

// ---------------------------------------------------------------------------
// Output

std::string format_number(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string file_header(const std::string& command, const RunConfig& cfg, std::uint64_t seed) {
  return "# treedlnm " + command + " seed=" + std::to_string(seed) + " config=" + fnv1a_hex(cfg.echo()) + "\n";
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  return out;
}

std::string level_tag(double level) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", 100.0 * level);
  std::string s = buf;
  std::replace(s.begin(), s.end(), '.', '_');
  return s;
}

}  // namespace

void write_surface_draws(const fs::path& path, const SurfaceDraws& draws, const std::string& header) {
  auto out = open_output(path);
  out << header << "draw,t,x_grid,value\n";
  for (int d = 0; d < draws.n_draws; ++d) {
    for (int t = 1; t <= draws.T; ++t) {
      for (int g = 0; g < draws.grid_size(); ++g) {
        out << d + 1 << ',' << t << ',' << format_number(draws.grid_x[static_cast<size_t>(g)]) << ','
            << format_number(draws.at(d, g, t)) << '\n';
      }
    }
  }
}

void write_surface_summary(const fs::path& path, const SurfaceSummary& summary, const std::string& header) {
  auto out = open_output(path);
  const std::string tag = level_tag(summary.level);
  out << header << "t,x_grid,mean,lo" << tag << ",hi" << tag << '\n';
  for (int t = 1; t <= summary.T; ++t) {
    for (size_t g = 0; g < summary.grid_x.size(); ++g) {
      const size_t c = summary.index(static_cast<int>(g), t);
      out << t << ',' << format_number(summary.grid_x[g]) << ',' << format_number(summary.mean[c]) << ','
          << format_number(summary.lo[c]) << ',' << format_number(summary.hi[c]) << '\n';
    }
  }
}

SurfaceDraws read_surface_draws(const fs::path& path) {
  const std::string what = "draws file";
  const CsvTable t = read_csv(path, what);
  const std::vector<std::string> expected{"draw", "t", "x_grid", "value"};
  if (t.header != expected) throw DataError(what + " '" + path.string() + "': header must be draw,t,x_grid,value");
  if (t.rows.empty()) throw DataError(what + " '" + path.string() + "': no draws");

  int n_draws = 0, T = 0;
  std::vector<double> grid;
  std::vector<double> value(t.rows.size());
  std::vector<std::array<int, 2>> key(t.rows.size());
  std::vector<double> xs(t.rows.size());
  for (size_t r = 0; r < t.rows.size(); ++r) {
    const double d = cell(t, r, 0, what), wk = cell(t, r, 1, what);
    if (d < 1 || wk < 1 || d != std::floor(d) || wk != std::floor(wk)) {
      throw DataError(what + ": line " + std::to_string(t.lines[r]) + ": draw and t must be positive integers");
    }
    key[r] = {static_cast<int>(d), static_cast<int>(wk)};
    xs[r] = cell(t, r, 2, what);
    value[r] = cell(t, r, 3, what);
    n_draws = std::max(n_draws, key[r][0]);
    T = std::max(T, key[r][1]);
    grid.push_back(xs[r]);
  }
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  const size_t G = grid.size();
  if (t.rows.size() != static_cast<size_t>(n_draws) * static_cast<size_t>(T) * G) {
    throw DataError(what + " '" + path.string() + "': expected " + std::to_string(n_draws) + " draws x " +
                    std::to_string(T) + " weeks x " + std::to_string(G) + " grid values, found " +
                    std::to_string(t.rows.size()) + " rows");
  }
  SurfaceDraws out;
  out.grid_x = grid;
  out.T = T;
  out.n_draws = n_draws;
  out.values.assign(t.rows.size(), std::numeric_limits<double>::quiet_NaN());
  std::vector<char> filled(t.rows.size(), 0);
  for (size_t r = 0; r < t.rows.size(); ++r) {
    const int g = static_cast<int>(std::lower_bound(grid.begin(), grid.end(), xs[r]) - grid.begin());
    const size_t idx = (static_cast<size_t>(key[r][0] - 1) * G + static_cast<size_t>(g)) * static_cast<size_t>(T) +
                       static_cast<size_t>(key[r][1] - 1);
    if (filled[idx]) throw DataError(what + ": line " + std::to_string(t.lines[r]) + ": duplicate (draw, t, x_grid)");
    filled[idx] = 1;
    out.values[idx] = value[r];
  }
  return out;
}

// ---------------------------------------------------------------------------
// fit

namespace {

void write_meta(const fs::path& path, const std::string& command, const RunConfig& cfg, std::uint64_t seed,
                const std::vector<std::pair<std::string, std::string>>& extra) {
  auto out = open_output(path);
  out << "command = " << command << "\n";
  out << "version = 0.1.0\n";
  out << "seed = " << seed << "\n";
  out << "config_hash = " << fnv1a_hex(cfg.echo()) << "\n";
  for (const auto& [k, v] : extra) out << k << " = " << v << "\n";
  out << "\n[config]\n" << cfg.echo();
}

}  // namespace

FitOutputs cmd_fit(const RunConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  if (cfg.str("data").empty()) throw ConfigError("fit: config key 'data' is required");
  const auto mode = parse_uncertainty_mode(cfg.str("uncertainty_mode"));
  Hyperparameters probe;
  apply_common(cfg, probe);  // config errors before touching data
  const auto [grid_lo, grid_hi] = cfg.range("grid_percentile_range");
  const double level = cfg.num("level");

  const Dataset data = load_dataset(cfg.str("data"), mode);
  const Hyperparameters hyper = hyperparameters_from(cfg, data);
  const SplitGrid grid =
      split_grid_from(cfg, data.X, split_at_x0(cfg, false) ? std::optional<double>(hyper.x0) : std::nullopt);

  const fs::path dir = cfg.str("output_dir");
  fs::create_directories(dir);
  const std::uint64_t seed = hyper.mcmc.seed;
  const std::string header = file_header("fit", cfg, seed);

  FitOutputs out;
  try {
    out.chain = run_chain(data, grid, hyper);
  } catch (const SamplerError& e) {
    auto diag = open_output(dir / "sampler_error.txt");
    diag << "sampler aborted: " << e.what() << "\nseed = " << seed << "\n\n[config]\n" << cfg.echo();
    throw;
  }
  const auto eval_grid = make_eval_grid(data.X, cfg.integer("grid_size"), grid_lo, grid_hi, hyper.x0);
  out.draws = evaluate_draws(out.chain.ensembles, eval_grid, data.T(), hyper.x0, out.chain.kernel);
  if (out.draws.n_draws == 0) {
    throw ConfigError("fit: no draws retained (iterations must be at least thin)");
  }
  out.summary = evaluate_surface(out.draws, level);
  out.windows = critical_windows(out.summary);

  write_surface_draws(dir / "surface_draws.csv", out.draws, header);
  write_surface_summary(dir / "surface_summary.csv", out.summary, header);
  {
    auto w = open_output(dir / "windows.csv");
    w << header << "week\n";
    for (int wk : out.windows) w << wk << '\n';
  }
  {
    auto p = open_output(dir / "params.csv");
    p << header << "draw,sigma2,omega2";
    for (int j = 1; j <= data.p(); ++j) p << ",gamma_" << j;
    p << '\n';
    for (size_t d = 0; d < out.chain.sigma2.size(); ++d) {
      p << d + 1 << ',' << format_number(out.chain.sigma2[d]) << ',' << format_number(out.chain.omega2[d]);
      for (int j = 0; j < data.p(); ++j) p << ',' << format_number(out.chain.gamma(static_cast<Eigen::Index>(d), j));
      p << '\n';
    }
  }
  const auto& st = out.chain.stats;
  std::vector<std::pair<std::string, std::string>> extra = {
      {"n", std::to_string(data.n())},
      {"T", std::to_string(data.T())},
      {"p", std::to_string(data.p())},
      {"x0", format_number(hyper.x0)},
      {"sigma_x", format_number(hyper.sigma_x)},
      {"c", format_number(hyper.c)},
      {"exposure_splits", std::to_string(grid.s_x())},
      {"retained_draws", std::to_string(out.draws.n_draws)},
      {"accept_grow", format_number(st.rate(MoveKind::Grow))},
      {"accept_prune", format_number(st.rate(MoveKind::Prune))},
      {"accept_change", format_number(st.rate(MoveKind::Change))},
  };
  if (cfg.flag("record_wall_time")) {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    extra.emplace_back("wall_time_seconds", format_number(secs));
  }
  write_meta(dir / "run_meta.txt", "fit", cfg, seed, extra);
  return out;
}

// ---------------------------------------------------------------------------
// simulate

ReplicateSettings replicate_settings_from(const RunConfig& cfg) {
  ReplicateSettings s;
  apply_common(cfg, s.hyper);
  if (parse_uncertainty_mode(cfg.str("uncertainty_mode")) != UncertaintyMode::None) {
    throw ConfigError("simulate: uncertainty_mode must be none (simulated exposures carry no uncertainty data)");
  }
  s.spec.kind = parse_scenario(cfg.str("scenario"));
  s.spec.amplitude = cfg.num("amplitude");
  s.outcome.snr = cfg.num("snr");
  if (!(s.outcome.snr > 0.0)) throw ConfigError("config key 'snr' must be positive");
  s.n = cfg.integer("n");
  s.T = cfg.integer("T");
  if (s.n < 2 || s.T < 2) throw ConfigError("simulate: n and T must be at least 2");
  s.c_scale = cfg.num("c_scale");
  const auto& sx = cfg.str("sigma_x_mode");
  s.smooth_half_sd = sx == "half_sd";
  if (auto v = fixed_value("sigma_x_mode", sx)) s.hyper.sigma_x = *v;
  s.n_exposure_splits = cfg.integer("n_exposure_splits");
  std::tie(s.split_lo_pct, s.split_hi_pct) = cfg.range("exposure_split_percentile_range");
  s.quantile_splits = cfg.str("split_spacing") == "quantile";
  s.split_at_center = split_at_x0(cfg, true);
  s.grid_size = cfg.integer("grid_size");
  std::tie(s.grid_lo_pct, s.grid_hi_pct) = cfg.range("grid_percentile_range");
  s.level = cfg.num("level");
  return s;
}

std::vector<ReplicateRecord> cmd_simulate(const RunConfig& cfg, int jobs) {
  const ReplicateSettings settings = replicate_settings_from(cfg);
  const int replicates = cfg.integer("replicates");
  if (replicates < 1) throw ConfigError("config key 'replicates' must be at least 1");
  const std::uint64_t base = cfg.seed();
  const fs::path dir = cfg.str("output_dir");
  fs::create_directories(dir);

  std::vector<ReplicateRecord> records(static_cast<size_t>(replicates));
  std::atomic<int> next{0};
  auto worker = [&]() {
    for (int r = next++; r < replicates; r = next++) {
      auto& rec = records[static_cast<size_t>(r)];
      rec.replicate = r + 1;
      rec.seed = base + static_cast<std::uint64_t>(r);
      try {
        rec.metrics = run_replicate(settings, rec.seed).metrics;
        rec.ok = true;
      } catch (const std::exception& e) {
        rec.error = e.what();
      }
    }
  };
  const int threads = std::max(1, std::min(jobs, replicates));
  std::vector<std::thread> pool;
  for (int k = 1; k < threads; ++k) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  std::vector<MetricsReport> ok;
  int failed = 0;
  for (const auto& rec : records) {
    if (rec.ok) ok.push_back(rec.metrics);
    else ++failed;
  }
  const MetricsAggregate agg = aggregate(ok);

  const std::string header = file_header("simulate", cfg, base);
  auto out = open_output(dir / "metrics.csv");
  static const char* names[] = {"rmse_overall", "rmse_no_effect", "rmse_effect", "coverage", "ci_width",
                                "tp",           "fp",             "precision",   "windows_within_truth"};
  out << header << "replicate,seed,status";
  for (const char* n : names) out << ',' << n;
  out << ",flagged_weeks";
  for (const char* n : names) out << ',' << n << "_se";
  out << '\n';
  for (const auto& rec : records) {
    out << rec.replicate << ',' << rec.seed << ',' << (rec.ok ? "ok" : "failed");
    const auto& m = rec.metrics;
    const double vals[] = {m.rmse_overall, m.rmse_no_effect, m.rmse_effect, m.coverage, m.ci_width,
                           m.tp,           m.fp,             m.precision,   m.windows_within_truth ? 1.0 : 0.0};
    for (double v : vals) out << ',' << (rec.ok ? format_number(v) : "");
    out << ',';
    for (size_t k = 0; k < m.flagged_weeks.size(); ++k) out << (k ? ";" : "") << m.flagged_weeks[k];
    for (size_t k = 0; k < std::size(names); ++k) out << ',';
    out << '\n';
  }
  const MetricSummary* cols[] = {&agg.rmse_overall, &agg.rmse_no_effect, &agg.rmse_effect,
                                 &agg.coverage,     &agg.ci_width,       &agg.tp,
                                 &agg.fp,           &agg.precision,      &agg.windows_within_truth};
  out << "aggregate,," << ok.size() << '/' << replicates;
  for (const auto* c : cols) out << ',' << format_number(c->mean);
  out << ',';
  for (const auto* c : cols) out << ',' << format_number(c->se);
  out << '\n';
  out.close();

  if (failed > 0) {
    auto f = open_output(dir / "failures.txt");
    for (const auto& rec : records) {
      if (!rec.ok) f << "replicate " << rec.replicate << " (seed " << rec.seed << "): " << rec.error << '\n';
    }
  }
  write_meta(dir / "run_meta.txt", "simulate", cfg, base,
             {{"replicates", std::to_string(replicates)}, {"failed", std::to_string(failed)}});
  if (failed * 100 > replicates) {
    throw SamplerError(std::to_string(failed) + " of " + std::to_string(replicates) +
                       " replicates failed (see failures.txt)");
  }
  return records;
}

// ---------------------------------------------------------------------------
// summarize

namespace {

std::map<std::string, std::string> read_meta_config(const fs::path& path) {
  std::map<std::string, std::string> out;
  std::ifstream in(path);
  std::string line;
  bool in_config = false;
  while (std::getline(in, line)) {
    if (line == "[config]") {
      in_config = true;
      continue;
    }
    const auto eq = line.find('=');
    if (!in_config || eq == std::string::npos) continue;
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

double resolve_endpoint(const std::string& key, const std::string& text, const std::optional<MatrixXd>& X) {
  double pct = -1.0;
  if (text == "median") pct = 50.0;
  else if (!text.empty() && text[0] == 'p' && parse_double(text.substr(1), pct)) {
    if (pct < 0.0 || pct > 100.0) throw ConfigError("config key '" + key + "': percentile must lie in [0, 100]");
  }
  if (pct >= 0.0) {
    if (!X) {
      throw ConfigError("config key '" + key + "': percentile endpoints need the exposures ('data' key or the fit's run_meta.txt)");
    }
    return percentile(all_cells(*X), pct);
  }
  double v = 0.0;
  if (!parse_double(text, v)) throw ConfigError("config key '" + key + "': expected median, p<percent> or a number");
  return v;
}

void write_plot_grid(const fs::path& path, const SurfaceSummary& s, const std::vector<double>& field,
                     const std::string& header) {
  auto out = open_output(path);
  out << header << "x_grid";
  for (int t = 1; t <= s.T; ++t) out << ",t_" << t;
  out << '\n';
  for (size_t g = 0; g < s.grid_x.size(); ++g) {
    out << format_number(s.grid_x[g]);
    for (int t = 1; t <= s.T; ++t) out << ',' << format_number(field[s.index(static_cast<int>(g), t)]);
    out << '\n';
  }
}

}  // namespace

SummarizeOutputs cmd_summarize(const RunConfig& cfg) {
  if (cfg.str("draws").empty()) throw ConfigError("summarize: config key 'draws' is required");
  fs::path draws_path = cfg.str("draws");
  if (fs::is_directory(draws_path)) draws_path /= "surface_draws.csv";
  const double level = cfg.num("level");
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("config key 'level' must lie in (0, 1)");

  std::string data_path = cfg.str("data");
  if (data_path.empty()) {
    const auto meta = read_meta_config(draws_path.parent_path() / "run_meta.txt");
    if (auto it = meta.find("data"); it != meta.end()) data_path = it->second;
  }
  const auto needs_data = [](const std::string& s) { return s == "median" || (!s.empty() && s[0] == 'p'); };
  std::optional<MatrixXd> X;
  if (!data_path.empty() && (needs_data(cfg.str("contrast_from")) || needs_data(cfg.str("contrast_to")))) {
    X = load_dataset(data_path).X;
  }

  const SurfaceDraws draws = read_surface_draws(draws_path);
  SummarizeOutputs out;
  out.contrast_from = resolve_endpoint("contrast_from", cfg.str("contrast_from"), X);
  out.contrast_to = resolve_endpoint("contrast_to", cfg.str("contrast_to"), X);
  try {
    out.contrast = cumulative_effect(draws, out.contrast_from, out.contrast_to, level);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("summarize: ") + e.what());
  }
  out.summary = evaluate_surface(draws, level);
  out.windows = critical_windows(out.summary);

  const fs::path dir = cfg.str("output_dir");
  fs::create_directories(dir);
  const std::string header = file_header("summarize", cfg, cfg.seed());
  {
    auto c = open_output(dir / "contrast.csv");
    c << header << "from,to,level,mean,lo,hi\n";
    c << format_number(out.contrast_from) << ',' << format_number(out.contrast_to) << ',' << format_number(level)
      << ',' << format_number(out.contrast.mean) << ',' << format_number(out.contrast.lo) << ','
      << format_number(out.contrast.hi) << '\n';
  }
  {
    auto w = open_output(dir / "summary_windows.csv");
    w << header << "week,level\n";
    for (int wk : out.windows) w << wk << ',' << format_number(level) << '\n';
  }
  write_plot_grid(dir / "plot_mean.csv", out.summary, out.summary.mean, header);
  write_plot_grid(dir / "plot_lo.csv", out.summary, out.summary.lo, header);
  write_plot_grid(dir / "plot_hi.csv", out.summary, out.summary.hi, header);
  write_meta(dir / "summarize_meta.txt", "summarize", cfg, cfg.seed(),
             {{"draws_file", draws_path.string()}, {"draws", std::to_string(draws.n_draws)}});
  return out;
}

}  // namespace treedlnm
