#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "avae/cli.hpp"
#include "avae/errors.hpp"
#include "avae/gaussian.hpp"
#include "avae/ppca.hpp"

namespace py = pybind11;
using namespace avae;
using nlohmann::json;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape s(a.shape(), a.shape() + a.ndim());
  return Tensor(s, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array a(shape);
  std::copy(t.data().begin(), t.data().end(), a.mutable_data());
  return a;
}

py::object to_py(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

json from_py(const py::object& o) {
  return json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

ExperimentConfig config_from(const py::dict& d) { return parse_config_json(from_py(d)); }

DiagGaussian diag(Graph& g, const Array& mu, const Array& var) {
  return DiagGaussian(g.constant(to_tensor(mu)), g.constant(to_tensor(var)));
}

TabularModel tabular_from(const py::dict& d) {
  TabularModel m = init_tabular(d["nx"].cast<std::size_t>(), d["nz"].cast<std::size_t>(), d["v"].cast<double>(),
                                d["nu"].cast<double>(), 0);
  m.g = to_tensor(d["g"].cast<Array>());
  m.mu = to_tensor(d["mu"].cast<Array>());
  m.log_sigma = to_tensor(d["log_sigma"].cast<Array>());
  m.validate();
  return m;
}

py::dict tabular_to(const TabularModel& m) {
  py::dict d;
  d["nx"] = m.xgrid.n;
  d["nz"] = m.zgrid.n;
  d["v"] = m.v;
  d["nu"] = m.nu_rho;
  d["g"] = to_array(m.g);
  d["mu"] = to_array(m.mu);
  d["log_sigma"] = to_array(m.log_sigma);
  return d;
}

py::dict dataset_to(const Dataset& d) {
  py::dict out;
  out["x"] = to_array(d.x);
  py::dict labels;
  for (const auto& [task, l] : d.labels) labels[py::str(task)] = py::array_t<int>(l.size(), l.data());
  out["labels"] = labels;
  out["classes"] = d.classes;
  out["shape"] = py::make_tuple(d.height, d.width, d.channels);
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Autoencoding VAE lab";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<ContractError>(m, "ContractError", PyExc_RuntimeError);

  // gaussian closed forms
  m.def("kl_to_standard", [](const Array& mu, const Array& var) {
    Graph g;
    return to_array(kl_to_standard(diag(g, mu, var)).value());
  });
  m.def("coupling_cross_expect", [](const Array& mu_z, const Array& var_z, const Array& mu_zp, const Array& var_zp,
                                    double rho) {
    Graph g;
    const DiagGaussian qz = diag(g, mu_z, var_z), qzp = diag(g, mu_zp, var_zp);
    return to_array(coupling_cross_expect(qz, qzp, CouplingPrior{rho, qz.dim()}).value());
  });
  m.def("w2_distance", [](const Eigen::VectorXd& ma, const Eigen::MatrixXd& ca, const Eigen::VectorXd& mb,
                          const Eigen::MatrixXd& cb) { return w2_distance({ma, ca}, {mb, cb}); });

  // linear-Gaussian model
  py::class_<PpcaModel>(m, "PpcaModel")
      .def(py::init([](const Eigen::MatrixXd& W, double v) {
             PpcaModel p{W, v};
             p.validate();
             return p;
           }),
           py::arg("W"), py::arg("v"))
      .def_readonly("W", &PpcaModel::W)
      .def_readonly("v", &PpcaModel::v)
      .def("projection", [](const PpcaModel& p) { return projection(p); })
      .def("posterior",
           [](const PpcaModel& p, const Eigen::VectorXd& x) {
             const auto g = exact_posterior(p, x);
             return py::make_tuple(g.mean, g.cov);
           })
      .def("z_kernel", [](const PpcaModel& p) {
        const auto k = z_kernel(p);
        return py::make_tuple(k.J, k.S);
      });
  m.def("ppca_identity_residuals", [](std::uint64_t seed, int trials) {
    return run_ppca_identity_suite(seed, trials).residuals;
  }, py::arg("seed") = 0, py::arg("trials") = 20);

  // tabular von Mises model, passed around as plain dicts
  m.def("tabular_init", [](std::size_t nx, std::size_t nz, double v, double nu, std::uint64_t seed) {
    return tabular_to(init_tabular(nx, nz, v, nu, seed));
  }, py::arg("nx") = 32, py::arg("nz") = 32, py::arg("v") = 0.1, py::arg("nu") = 1e-3, py::arg("seed") = 0);
  m.def("tabular_tables", [](const py::dict& d) {
    const Tables t = tables(tabular_from(d));
    return py::make_tuple(to_array(t.dec), to_array(t.enc));
  });
  m.def("tabular_exact_loss", [](const py::dict& d, const Array& pi, const std::string& objective) {
    const TabularModel tm = tabular_from(d);
    if (objective == "VAE") return exact_vae_loss(tm, to_tensor(pi));
    if (objective == "AVAE") return exact_avae_loss(tm, to_tensor(pi));
    throw ConfigError("objective must be VAE or AVAE");
  });
  m.def("tabular_train", [](const py::dict& d, const Array& pi, const std::string& objective, std::size_t steps,
                            double lr) {
    TabularModel tm = tabular_from(d);
    TabularTrainConfig c{objective == "AVAE" ? TabularObjective::AVAE : TabularObjective::VAE, steps, AdamConfig{lr}};
    if (objective != "VAE" && objective != "AVAE") throw ConfigError("objective must be VAE or AVAE");
    const auto losses = train_tabular(tm, to_tensor(pi), c);
    return py::make_tuple(tabular_to(tm), losses);
  }, py::arg("model"), py::arg("pi"), py::arg("objective"), py::arg("steps") = 10000, py::arg("lr") = 1e-2);
  m.def("tabular_heatmaps", [](const py::dict& d) {
    const Heatmaps h = transition_heatmaps(tabular_from(d));
    py::dict out;
    out["decoder"] = to_array(h.decoder);
    out["x_kernel"] = to_array(h.x_kernel);
    out["encoder"] = to_array(h.encoder);
    out["z_kernel"] = to_array(h.z_kernel);
    return out;
  });
  m.def("bimodal_histogram", [](std::size_t nx) { return to_array(bimodal_histogram(VmGrid{nx})); });
  m.def("diagonal_mass", [](const Array& a) { return diagonal_mass(to_tensor(a)); });

  // data
  m.def("load_idx", [](const std::string& images, const std::string& labels) {
    return dataset_to(load_idx(images, labels));
  });

  // experiment runners, configs as nested dicts
  m.def("default_config", [] { return to_py(config_to_json(ExperimentConfig{})); });
  m.def("load_config", [](const std::string& path) { return to_py(config_to_json(load_config_file(path))); });
  m.def("train", [](const py::dict& cfg, const std::string& out, bool overwrite) {
    ExperimentConfig c = config_from(cfg);
    c.out = out;
    c.overwrite = overwrite;
    TrainOutcome o;
    {
      py::gil_scoped_release release;
      o = run_train(c);
    }
    py::dict r;
    r["checkpoint"] = o.checkpoint;
    r["metrics"] = o.metrics;
    r["final_loss"] = o.rows.back().loss;
    return r;
  }, py::arg("config"), py::arg("out"), py::arg("overwrite") = false);
  m.def("evaluate", [](const std::string& checkpoint, const py::dict& overrides, const std::string& out,
                       bool overwrite) {
    json base = load_checkpoint(checkpoint).config;
    ExperimentConfig c = parse_config_json(from_py(overrides), parse_config_json(base));
    c.out = out;
    c.overwrite = overwrite;
    EvalOutcome o;
    {
      py::gil_scoped_release release;
      o = run_eval(checkpoint, c);
    }
    return to_py(json::parse(o.report_json));
  }, py::arg("checkpoint"), py::arg("overrides") = py::dict(), py::arg("out") = ".", py::arg("overwrite") = false);
  m.def("discrete_demo", [](const py::dict& cfg, const std::string& out, bool overwrite) {
    ExperimentConfig c = config_from(cfg);
    c.out = out;
    c.overwrite = overwrite;
    const DiscreteOutcome o = run_discrete_demo(c);
    py::dict r;
    r["diag_vae"] = o.diag_vae;
    r["diag_avae"] = o.diag_avae;
    r["files"] = o.files;
    return r;
  }, py::arg("config"), py::arg("out"), py::arg("overwrite") = false);

  m.def("load_checkpoint_config", [](const std::string& path) { return to_py(load_checkpoint(path).config); });
}
