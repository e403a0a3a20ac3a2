#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <string>
#include <vector>

#include "mfflow/errors.hpp"
#include "mfflow/experiment.hpp"
#include "mfflow/linear_flow.hpp"
#include "mfflow/mean_field_flow.hpp"
#include "mfflow/reduced_flow.hpp"
#include "mfflow/sphere_geometry.hpp"

namespace py = pybind11;
using namespace mfflow;

namespace {

SplitDims split(int d, int d_H) { return SplitDims::from_ambient(d, d_H); }

py::dict to_dict(const MeanAndError& e) {
  py::dict out;
  out["mean"] = e.mean;
  out["stderr"] = e.stderr_;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, mod) {
  mod.doc() = "Mean-field two-layer ReLU flows and their angle reduction";

  py::register_exception<ConfigError>(mod, "ConfigError", PyExc_ValueError);
  py::register_exception<InvalidArgument>(mod, "InvalidArgument", PyExc_ValueError);
  py::register_exception<IllPosed>(mod, "IllPosed", PyExc_ArithmeticError);
  py::register_exception<NumericalBlowup>(mod, "NumericalBlowup", PyExc_FloatingPointError);
  py::register_exception<DegenerateParticle>(mod, "DegenerateParticle", PyExc_ValueError);
  py::register_exception<IoError>(mod, "IoError", PyExc_OSError);

  mod.attr("__version__") = code_version();

  // sampling
  mod.def(
      "sample_uniform_sphere",
      [](int p, int n, std::uint64_t seed) {
        RandomSource rng(seed);
        return sample_uniform_sphere(p, n, rng);
      },
      py::arg("p"), py::arg("n"), py::arg("seed") = 0, "p x n matrix of uniform points on the unit sphere");
  mod.def(
      "sample_sphere_by_disintegration",
      [](int d, int d_H, int n, std::uint64_t seed) {
        RandomSource rng(seed);
        return sample_sphere_by_disintegration(split(d, d_H), n, rng);
      },
      py::arg("d"), py::arg("d_H"), py::arg("n"), py::arg("seed") = 0);
  mod.def(
      "phi_tilde",
      [](int d, int d_H, double theta, double phi, int nodes) {
        return phi_tilde(split(d, d_H), theta, phi, QuadratureSpec::gauss(nodes));
      },
      py::arg("d"), py::arg("d_H"), py::arg("theta"), py::arg("phi"), py::arg("nodes") = 64);
  mod.def("alpha_expected", &alpha_expected, py::arg("d_H"));

  // particle flow
  py::class_<ParticleCloud>(mod, "ParticleCloud")
      .def_readwrite("a", &ParticleCloud::a)
      .def_readwrite("b", &ParticleCloud::b)
      .def_property_readonly("width", &ParticleCloud::width)
      .def_property_readonly("d", [](const ParticleCloud& c) { return c.dims.d(); })
      .def_property_readonly("d_H", [](const ParticleCloud& c) { return c.dims.d_H(); });
  mod.def(
      "init_cloud",
      [](int d, int d_H, int m, std::uint64_t seed) {
        RandomSource rng(seed);
        return init_cloud(split(d, d_H), m, rng);
      },
      py::arg("d"), py::arg("d_H"), py::arg("m"), py::arg("seed") = 0);
  mod.def("predict_batch", &predict_batch, py::arg("cloud"), py::arg("points"));
  mod.def(
      "velocity",
      [](const ParticleCloud& cloud, const Eigen::MatrixXd& batch) {
        const Velocity v = velocity(cloud, TargetSpec::norm_on_subspace(cloud.dims), batch);
        return py::make_tuple(v.a, v.b);
      },
      py::arg("cloud"), py::arg("batch"), "(a-velocity, b-velocity) for the norm-on-subspace target");
  mod.def(
      "batch_loss",
      [](const ParticleCloud& cloud, const Eigen::MatrixXd& batch) {
        return to_dict(batch_loss(cloud, TargetSpec::norm_on_subspace(cloud.dims), batch));
      },
      py::arg("cloud"), py::arg("batch"));
  mod.def(
      "step",
      [](ParticleCloud cloud, double eta, const Eigen::MatrixXd& batch) {
        const TargetSpec target = TargetSpec::norm_on_subspace(cloud.dims);
        return step(std::move(cloud), target, eta, batch);
      },
      py::arg("cloud"), py::arg("eta"), py::arg("batch"));
  mod.def("project_to_angles", &project_to_angles, py::arg("cloud"));

  // angle flow
  py::class_<ReducedCloud>(mod, "ReducedCloud")
      .def_readwrite("c", &ReducedCloud::c)
      .def_readwrite("theta", &ReducedCloud::theta)
      .def_readwrite("eps", &ReducedCloud::eps)
      .def_readwrite("atom_weight", &ReducedCloud::atom_weight)
      .def_readonly("sign_flip_events", &ReducedCloud::sign_flip_events)
      .def_readonly("overshoot_events", &ReducedCloud::overshoot_events)
      .def_property_readonly("size", &ReducedCloud::size);
  mod.def(
      "init_reduced",
      [](int d, int d_H, int m, std::uint64_t seed) {
        RandomSource rng(seed);
        return init_reduced(split(d, d_H), m, rng);
      },
      py::arg("d"), py::arg("d_H"), py::arg("m"), py::arg("seed") = 0);
  mod.def(
      "make_reduced",
      [](int d, int d_H, Eigen::VectorXd c, Eigen::VectorXd theta, double atom_weight) {
        if (c.size() != theta.size()) throw InvalidArgument("c and theta must have equal length");
        ReducedCloud cloud{split(d, d_H), c, theta, std::vector<int>(static_cast<std::size_t>(c.size())),
                           atom_weight};
        for (Eigen::Index j = 0; j < c.size(); ++j) cloud.eps[static_cast<std::size_t>(j)] = c[j] >= 0 ? 1 : -1;
        return cloud;
      },
      py::arg("d"), py::arg("d_H"), py::arg("c"), py::arg("theta"), py::arg("atom_weight") = 1.0);
  mod.def(
      "estimate_g_v",
      [](const ReducedCloud& cloud, int n, std::uint64_t seed) {
        RandomSource rng(seed);
        const GVEstimate e = estimate_g_v(cloud, McBatch::sample(cloud.dims, n, rng), PrefactorMode::OneOverN, true);
        py::dict out;
        out["g"] = e.g;
        out["v"] = e.v;
        out["g_stderr"] = e.g_stderr;
        out["v_stderr"] = e.v_stderr;
        return out;
      },
      py::arg("cloud"), py::arg("n"), py::arg("seed") = 0);
  mod.def(
      "step_reduced",
      [](ReducedCloud cloud, double eta, int n, std::uint64_t seed, std::size_t iteration, bool lifted) {
        RandomSource rng(seed, iteration);
        ReducedStepOptions options;
        options.scheme = lifted ? ReducedScheme::Lifted : ReducedScheme::Euler;
        const McBatch batch = McBatch::sample(cloud.dims, n, rng);
        return step_reduced(std::move(cloud), batch, eta, options, iteration);
      },
      py::arg("cloud"), py::arg("eta"), py::arg("n"), py::arg("seed") = 0, py::arg("iteration") = 0,
      py::arg("lifted") = false);
  mod.def(
      "objective_a",
      [](const ReducedCloud& cloud, int nodes) {
        return objective_a_quadrature(cloud, *PhiTildeTable::cached(cloud.dims), nodes);
      },
      py::arg("cloud"), py::arg("nodes") = 256, "angle objective by quadrature over the angle law");
  mod.def(
      "masses",
      [](const ReducedCloud& cloud) {
        const SideMasses m = masses(cloud);
        return py::make_tuple(m.plus, m.minus);
      },
      py::arg("cloud"), "(plus-mass, minus-mass)");

  // linear flow
  mod.def(
      "ols_optimum",
      [](const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
        const OlsSolution s = ols_optimum(Dataset(x, y));
        py::dict out;
        out["w_star"] = s.w_star;
        out["q_min"] = s.q_min;
        out["lambda_min"] = s.lambda_min;
        out["lambda_max"] = s.lambda_max;
        return out;
      },
      py::arg("x"), py::arg("y"), "x is n x d, one sample per row");

  // experiments
  mod.def("experiment_names", &experiment_names);
  mod.def(
      "default_config", [](const std::string& name) { return config_to_json(default_config(name)); },
      py::arg("experiment"), "fully materialized default config as JSON text");
  mod.def(
      "run",
      [](const std::string& config_json, const std::filesystem::path& out_dir) {
        const RunSummary s = run(parse_config(config_json), out_dir);
        return s.files;
      },
      py::arg("config_json"), py::arg("out_dir"), "runs an experiment; returns the files written");
  mod.def(
      "compare_reduction",
      [](const std::string& config_json, const std::filesystem::path& out_dir) {
        const ExperimentConfig config = parse_config(config_json);
        validate(config);
        const ReductionReport r = compare_reduction(config, out_dir);
        py::dict out;
        out["widths"] = r.widths;
        out["median_discrepancy"] = r.median_discrepancy;
        py::list starts;
        for (const auto& s : r.starts) {
          py::dict item;
          item["m"] = s.m;
          item["full"] = to_dict(s.full);
          item["reduced"] = to_dict(s.reduced);
          starts.append(item);
        }
        out["starts"] = starts;
        return out;
      },
      py::arg("config_json"), py::arg("out_dir") = std::filesystem::path{});
  mod.def("emit_figure_data", &emit_figure_data, py::arg("run_dir"), py::arg("figure"));
}
