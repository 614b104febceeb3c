#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "finpilot/config.h"
#include "finpilot/env.h"
#include "finpilot/errors.h"
#include "finpilot/forecast.h"
#include "finpilot/harness.h"
#include "finpilot/metrics.h"
#include "finpilot/pilot.h"
#include "finpilot/synthetic.h"

namespace py = pybind11;
using namespace finpilot;

namespace {

py::dict metrics_dict(const std::vector<double>& values) {
  const MetricsReport m = compute_metrics(values);
  py::dict d;
  d["total_return"] = m.total_return;
  d["sharpe"] = m.sharpe ? py::object(py::float_(*m.sharpe)) : py::object(py::none());
  d["sortino"] = m.sortino ? py::object(py::float_(*m.sortino)) : py::object(py::none());
  d["max_drawdown"] = m.max_drawdown;
  d["calmar"] = m.calmar ? py::object(py::float_(*m.calmar)) : py::object(py::none());
  return d;
}

}  // namespace

PYBIND11_MODULE(_finpilot, m) {
  m.doc() = "finpilot core bindings";

  static py::exception<Error> base_error(m, "FinpilotError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(base_error, (e.kind() + ": " + e.what()).c_str());
    }
  });

  m.def("softmax_weights", [](const Eigen::VectorXd& logits) { return softmax_weights(logits).values(); },
        py::arg("logits"));
  m.def("transaction_cost",
        [](const Eigen::VectorXd& prev, const Eigen::VectorXd& next, double value, double fee) {
          return transaction_cost(Weights(prev), Weights(next), value, fee);
        },
        py::arg("prev"), py::arg("next"), py::arg("value"), py::arg("fee_rate"));
  m.def("env_step",
        [](double value, const Eigen::VectorXd& prev, const Eigen::VectorXd& target,
           const Eigen::VectorXd& asset_relatives, double fee) {
          PortfolioState s;
          s.value = value;
          s.weights = Weights(prev);
          const StepOutcome o = step(s, Weights(target), asset_relatives, fee);
          return py::make_tuple(o.next.value, o.next.weights.values(), o.reward);
        },
        py::arg("value"), py::arg("prev"), py::arg("target"), py::arg("asset_relatives"), py::arg("fee_rate"));
  m.def("imagined_reward", &imagined_reward, py::arg("value"), py::arg("prev_weights"), py::arg("weights"),
        py::arg("relatives_with_cash"), py::arg("fee_rate"));
  m.def("risk_objective",
        [](const std::vector<double>& returns, double lambda, double eps) {
          const RiskTerms t = risk_objective(returns, lambda, eps);
          return py::make_tuple(t.objective, t.mean, t.downside);
        },
        py::arg("returns"), py::arg("lam"), py::arg("eps_num") = 1e-8);
  m.def("r_squared", &r_squared, py::arg("predictions"), py::arg("realized"), py::arg("baseline"));
  m.def("calibrate_cheat",
        [](const Eigen::VectorXd& base, const Eigen::VectorXd& realized, const Eigen::VectorXd& baseline,
           double target) {
          const CheatCalibration c = calibrate_cheat(base, realized, baseline, target);
          return py::make_tuple(c.c, c.achieved_r2, c.blended);
        },
        py::arg("base"), py::arg("realized"), py::arg("baseline"), py::arg("target_r2"));
  m.def("metrics", &metrics_dict, py::arg("values"));
  m.def("generate_synthetic_closes",
        [](std::size_t assets, std::size_t length, double signal, std::uint64_t seed) {
          SyntheticMarketSpec spec;
          spec.assets = assets;
          spec.length = length;
          spec.signal = signal;
          spec.seed = seed;
          const MarketSeries s = generate_synthetic(spec);
          Eigen::MatrixXd closes(static_cast<Eigen::Index>(length), static_cast<Eigen::Index>(assets));
          for (std::size_t i = 0; i < assets; ++i) {
            for (std::size_t t = 0; t < length; ++t) {
              closes(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(i)) = s.close(i, t);
            }
          }
          return py::make_tuple(s.dates(), closes);
        },
        py::arg("assets"), py::arg("length"), py::arg("signal") = 0.0, py::arg("seed") = 0);
  m.def("parse_toml", [](const std::string& text) { return parse_toml(text).dump(); }, py::arg("text"));
  m.def("run_experiment",
        [](const std::string& config_json, bool sweep) {
          const ExperimentConfig cfg = config_from_json(nlohmann::json::parse(config_json));
          nlohmann::json r;
          {
            py::gil_scoped_release release;
            r = run_experiment(cfg, sweep);
          }
          return r.dump();
        },
        py::arg("config_json"), py::arg("sweep") = false);
  m.def("render_table", [](const std::string& results) { return render_table(nlohmann::json::parse(results)); },
        py::arg("results_json"));
}
