#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "treedlnm/io.hpp"

namespace py = pybind11;
using namespace treedlnm;

namespace {

RunConfig config_from(const std::map<std::string, std::string>& options) {
  RunConfig cfg;
  for (const auto& [k, v] : options) cfg.set(k, v);
  return cfg;
}

// (rows, T) array from a g * T + (t - 1) indexed vector.
py::array_t<double> grid_array(const std::vector<double>& values, size_t rows, int T) {
  py::array_t<double> out({rows, static_cast<size_t>(T)});
  std::copy(values.begin(), values.end(), out.mutable_data());
  return out;
}

py::dict fit(const VectorXd& y, const MatrixXd& X, const MatrixXd& covariates,
             const std::map<std::string, std::string>& options) {
  const RunConfig cfg = config_from(options);
  Dataset data;
  data.y = y;
  data.X = X;
  data.Z.resize(X.rows(), covariates.cols() + 1);
  data.Z.col(0).setOnes();
  if (covariates.cols() > 0) {
    if (covariates.rows() != X.rows()) throw DataError("covariates must have one row per observation");
    data.Z.rightCols(covariates.cols()) = covariates;
  }
  const Hyperparameters hyper = hyperparameters_from(cfg, data);
  const bool add_x0 = cfg.str("split_at_x0") == "true";
  const SplitGrid grid = split_grid_from(cfg, data.X, add_x0 ? std::optional<double>(hyper.x0) : std::nullopt);
  const auto [lo, hi] = cfg.range("grid_percentile_range");

  ChainResult chain;
  {
    py::gil_scoped_release release;
    chain = run_chain(data, grid, hyper);
  }
  const auto eval_grid = make_eval_grid(data.X, cfg.integer("grid_size"), lo, hi, hyper.x0);
  const SurfaceDraws draws = evaluate_draws(chain.ensembles, eval_grid, data.T(), hyper.x0, chain.kernel);
  const SurfaceSummary summary = evaluate_surface(draws, cfg.num("level"));

  py::array_t<double> values({static_cast<size_t>(draws.n_draws), eval_grid.size(), static_cast<size_t>(data.T())});
  std::copy(draws.values.begin(), draws.values.end(), values.mutable_data());
  py::dict out;
  out["draws"] = values;
  out["grid_x"] = eval_grid;
  out["x0"] = hyper.x0;
  out["mean"] = grid_array(summary.mean, eval_grid.size(), data.T());
  out["lo"] = grid_array(summary.lo, eval_grid.size(), data.T());
  out["hi"] = grid_array(summary.hi, eval_grid.size(), data.T());
  out["windows"] = critical_windows(summary);
  out["sigma2"] = chain.sigma2;
  out["omega2"] = chain.omega2;
  out["gamma"] = chain.gamma;
  return out;
}

py::dict simulate(const std::string& scenario, int n, int T, double amplitude, double snr, std::uint64_t seed) {
  ReplicateSettings s;
  s.spec = ScenarioSpec{parse_scenario(scenario), amplitude};
  s.n = n;
  s.T = T;
  s.outcome.snr = snr;
  Rng rng(seed);
  const SimulatedData sim = simulate_dataset(s, rng);
  py::dict out;
  out["y"] = sim.data.y;
  out["X"] = sim.data.X;
  out["covariates"] = MatrixXd(sim.data.Z.rightCols(sim.data.Z.cols() - 1));
  out["f"] = sim.f;
  out["sigma2"] = sim.sigma2;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Treed distributed lag nonlinear models";
  auto base = py::register_exception<std::runtime_error>(m, "TreedlnmError");
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<SamplerError>(m, "SamplerError", base.ptr());

  m.def("config_keys", [] {
    std::vector<std::tuple<std::string, std::string, std::string>> out;
    for (const auto& k : RunConfig::keys()) out.emplace_back(k.name, k.default_value, k.help);
    return out;
  });
  m.def("fit", &fit, py::arg("y"), py::arg("X"), py::arg("covariates"), py::arg("options"),
        "Fits the model; X holds n x T exposures, covariates n x q (an intercept is added).");
  m.def("simulate", &simulate, py::arg("scenario"), py::arg("n"), py::arg("T") = 37, py::arg("amplitude") = 1.0,
        py::arg("snr") = 1e-3, py::arg("seed") = 1);
  m.def("true_surface",
        [](const std::string& scenario, double x, int t, double amplitude) {
          return true_surface(ScenarioSpec{parse_scenario(scenario), amplitude}, x, t);
        },
        py::arg("scenario"), py::arg("x"), py::arg("t"), py::arg("amplitude") = 1.0);
  m.def("cmd_fit", [](const std::map<std::string, std::string>& options) { cmd_fit(config_from(options)); });
  m.def("cmd_simulate", [](const std::map<std::string, std::string>& options, int jobs) {
    const auto records = cmd_simulate(config_from(options), jobs);
    int ok = 0;
    for (const auto& r : records) ok += r.ok;
    return ok;
  }, py::arg("options"), py::arg("jobs") = 1);
  m.def("cmd_summarize", [](const std::map<std::string, std::string>& options) {
    const auto out = cmd_summarize(config_from(options));
    return py::make_tuple(out.contrast.mean, out.contrast.lo, out.contrast.hi);
  });
}
