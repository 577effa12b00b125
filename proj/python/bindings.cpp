#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>
#include <vector>

#include "levspec/error.hpp"
#include "levspec/inference.hpp"
#include "levspec/sde_sim.hpp"
#include "levspec/spectral.hpp"
#include "levspec/theory.hpp"

namespace py = pybind11;
using namespace levspec;

namespace {

py::array_t<double> to_array(const std::vector<double>& v) {
  py::array_t<double> a(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), a.mutable_data());
  return a;
}

std::vector<double> to_vector(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  return {a.data(), a.data() + a.size()};
}

// nlohmann::json -> Python objects via the json module.
py::object to_python(const nlohmann::json& j) {
  const py::object loads = py::module_::import("json").attr("loads");
  return loads(j.dump());
}

}  // namespace

PYBIND11_MODULE(_levspec, m) {
  m.doc() = "Simulation, spectral estimation and Whittle fitting for phase-modulated oscillators.";

  py::register_exception<Error>(m, "LevspecError", PyExc_ValueError);

  py::class_<OscillatorParams>(m, "OscillatorParams")
      .def(py::init([](double omega, double gamma, double temperature, double mass) {
             return OscillatorParams{omega, gamma, temperature, mass};
           }),
           py::arg("omega"), py::arg("gamma"), py::arg("temperature") = 300.0, py::arg("mass") = 1e-18)
      .def_readwrite("omega", &OscillatorParams::omega)
      .def_readwrite("gamma", &OscillatorParams::gamma)
      .def_readwrite("temperature", &OscillatorParams::temperature)
      .def_readwrite("mass", &OscillatorParams::mass)
      .def("position_variance", &OscillatorParams::position_variance);

  py::class_<SignalParams>(m, "SignalParams")
      .def(py::init([](double f0, std::optional<double> phi, std::optional<double> kappa, double amplitude,
                       double noise_floor) {
             SignalParams s;
             s.carrier_freq = f0;
             s.phi = phi;
             s.kappa = kappa;
             s.amplitude = amplitude;
             s.noise_floor = noise_floor;
             return s;
           }),
           py::arg("carrier_freq"), py::kw_only(), py::arg("phi") = py::none(), py::arg("kappa") = py::none(),
           py::arg("amplitude") = 1.0, py::arg("noise_floor") = 0.0)
      .def_readwrite("carrier_freq", &SignalParams::carrier_freq)
      .def_readwrite("phi", &SignalParams::phi)
      .def_readwrite("kappa", &SignalParams::kappa)
      .def_readwrite("amplitude", &SignalParams::amplitude)
      .def_readwrite("noise_floor", &SignalParams::noise_floor);

  py::class_<SimulationConfig>(m, "SimulationConfig")
      .def(py::init([](double duration, double sample_rate, double dt, std::uint64_t seed) {
             SimulationConfig c;
             c.duration = duration;
             c.sample_rate = sample_rate;
             c.dt = dt;
             c.seed = seed;
             return c;
           }),
           py::arg("duration") = 1.0, py::arg("sample_rate") = 10e6, py::arg("dt") = 1e-9, py::arg("seed") = 0)
      .def_readwrite("duration", &SimulationConfig::duration)
      .def_readwrite("sample_rate", &SimulationConfig::sample_rate)
      .def_readwrite("dt", &SimulationConfig::dt)
      .def_readwrite("seed", &SimulationConfig::seed);

  py::class_<ModelParams>(m, "ModelParams")
      .def(py::init([](double phi, double omega, double gamma) { return ModelParams{phi, omega, gamma}; }),
           py::arg("phi"), py::arg("omega"), py::arg("gamma"))
      .def_readwrite("phi", &ModelParams::phi)
      .def_readwrite("omega", &ModelParams::omega)
      .def_readwrite("gamma", &ModelParams::gamma)
      .def("__repr__", [](const ModelParams& p) {
        return "ModelParams(phi=" + std::to_string(p.phi) + ", omega=" + std::to_string(p.omega) +
               ", gamma=" + std::to_string(p.gamma) + ")";
      });

  m.def(
      "simulate_trajectory",
      [](const OscillatorParams& osc, const SimulationConfig& sim) {
        return to_array(simulate_trajectory(osc, sim).samples);
      },
      py::arg("oscillator"), py::arg("simulation"), "Position samples z(t) at the sample rate.");

  m.def(
      "simulate_signal",
      [](const OscillatorParams& osc, const SignalParams& sig, const SimulationConfig& sim) {
        TimeSeries v;
        {
          py::gil_scoped_release release;
          v = synthesize_signal(simulate_trajectory(osc, sim), sig, osc, sim);
        }
        return to_array(v.samples);
      },
      py::arg("oscillator"), py::arg("signal"), py::arg("simulation"), "Detector voltage samples.");

  py::class_<SpectrumEstimate>(m, "SpectrumEstimate")
      .def_readonly("f_start", &SpectrumEstimate::f_start)
      .def_readonly("df", &SpectrumEstimate::df)
      .def_readonly("dof", &SpectrumEstimate::dof)
      .def_readonly("one_sided", &SpectrumEstimate::one_sided)
      .def_readonly("segment_length", &SpectrumEstimate::segment_length)
      .def_readonly("n_segments", &SpectrumEstimate::n_segments)
      .def_readonly("sample_rate", &SpectrumEstimate::sample_rate)
      .def_property_readonly("power", [](const SpectrumEstimate& e) { return to_array(e.power); })
      .def_property_readonly("freq", [](const SpectrumEstimate& e) {
        std::vector<double> f(e.size());
        for (std::size_t i = 0; i < f.size(); ++i) f[i] = e.freq(i);
        return to_array(f);
      })
      .def("to_dict", [](const SpectrumEstimate& e) { return to_python(to_json(e)); });

  m.def(
      "bartlett",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x, double sample_rate,
         std::size_t segment_length, const std::string& window, bool remove_mean) {
        TimeSeries ts;
        ts.sample_rate = sample_rate;
        ts.samples = to_vector(x);
        WindowSpec w;
        w.kind = window_kind_from_string(window);
        w.remove_mean = remove_mean;
        return bartlett(ts, segment_length, w);
      },
      py::arg("x"), py::arg("sample_rate"), py::arg("segment_length") = 65536, py::arg("window") = "hann",
      py::arg("remove_mean") = true, "Averaged periodogram of non-overlapping segments.");

  m.def("fold_one_sided", &fold_one_sided, py::arg("estimate"));

  m.def(
      "theory_spectrum",
      [](const ModelParams& p, double f0, double df, double half_width, bool periodic,
         const std::string& engine, double tol) {
        const auto g = FrequencyGrid::centered(f0, df, half_width, periodic);
        const auto s = engine == "correlation" ? spectrum_from_correlation(p, 1.0, g)
                                               : middleton_series(p, 1.0, g, tol);
        py::dict d;
        std::vector<double> f(g.n);
        for (std::size_t i = 0; i < g.n; ++i) f[i] = g.freq(i);
        d["freq"] = to_array(f);
        d["density"] = to_array(s.density);
        d["carrier_weight"] = s.carrier_weight;
        d["truncation_order"] = s.truncation_order;
        return d;
      },
      py::arg("params"), py::arg("f0") = 0.0, py::arg("df"), py::arg("half_width"), py::arg("periodic") = true,
      py::arg("engine") = "series", py::arg("tol") = 1e-10,
      "Normalized spectrum: carrier weight plus continuous density (1/Hz).");

  m.def("narrowband_weights", &narrowband_weights, py::arg("phi"), py::arg("n_max"));
  m.def("phase_correlation", &phase_correlation, py::arg("omega"), py::arg("gamma"), py::arg("t"));

  py::class_<FitResult>(m, "FitResult")
      .def_readonly("params", &FitResult::model)
      .def_readonly("nll", &FitResult::nll)
      .def_readonly("converged", &FitResult::converged)
      .def_readonly("n_evals", &FitResult::n_evals)
      .def_property_readonly("gain", [](const FitResult& r) { return r.nuisance.gain; })
      .def_property_readonly("offset", [](const FitResult& r) { return r.nuisance.offset; })
      .def("to_dict", [](const FitResult& r) { return to_python(to_json(r)); });

  auto make_window = [](double f0, const std::vector<std::pair<double, double>>& intervals,
                        std::size_t exclude) {
    FitWindow w;
    w.carrier_freq = f0;
    w.intervals = intervals;
    w.carrier_exclusion_bins = exclude;
    return w;
  };

  m.def(
      "fit",
      [make_window](const SpectrumEstimate& est, const ModelParams& init, double f0,
                    const std::vector<std::pair<double, double>>& intervals, std::size_t exclude,
                    std::optional<double> rin, const std::string& engine) {
        FitOptions o;
        o.rin_width = rin;
        o.engine = model_engine_from_string(engine);
        py::gil_scoped_release release;
        return mle_fit(est, init, make_window(f0, intervals, exclude), o);
      },
      py::arg("estimate"), py::arg("init"), py::arg("carrier_freq"),
      py::arg("intervals") = std::vector<std::pair<double, double>>{}, py::arg("exclude_carrier") = 3,
      py::arg("rin") = py::none(), py::arg("engine") = "correlation",
      "Maximum-likelihood (Whittle) fit with gain and offset profiled out.");

  m.def(
      "profile",
      [make_window](const SpectrumEstimate& est, const FitResult& fit, const std::string& param,
                    double f0, std::vector<std::string> fixed, double level, int points, int threads) {
        ProfileOptions o;
        o.fixed = std::move(fixed);
        o.level = level;
        o.n_points = points;
        o.threads = threads;
        FitWindow w = fit.window;
        if (w.carrier_freq == 0.0) w = make_window(f0, {}, 3);
        ProfileScan s;
        {
          py::gil_scoped_release release;
          FitOptions fo;
          fo.rin_width = fit.rin_width;
          s = profile_scan(est, fit, param, w, o, fo);
        }
        return to_python(to_json(s));
      },
      py::arg("estimate"), py::arg("fit"), py::arg("param"), py::arg("carrier_freq") = 0.0,
      py::arg("fixed") = std::vector<std::string>{}, py::arg("level") = 0.68, py::arg("points") = 41,
      py::arg("threads") = 1, "Profile-likelihood scan; returns grid, density and interval.");

  m.def("binomial_band", &binomial_band, py::arg("n"), py::arg("p"));
}
