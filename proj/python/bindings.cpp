#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "cgi/appnp.hpp"
#include "cgi/cgi.hpp"
#include "cgi/error.hpp"
#include "cgi/harness.hpp"
#include "cgi/svm.hpp"
#include "cgi/synthetic.hpp"

namespace py = pybind11;
using namespace pybind11::literals;
using nlohmann::json;

namespace {

cgi::RunConfig config_from(const std::string& text) { return cgi::parse_run_config(json::parse(text)); }

py::dict bundle_dict(const cgi::PredictionBundle& b) {
  return py::dict("y_hat"_a = b.y_hat, "y_self"_a = b.y_self, "effect"_a = b.effect,
                  "z_hat"_a = b.z_hat, "z_self"_a = b.z_self);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Causal GCN inference: APPNP training, neighbor interventions and the choice model.";

  py::register_exception<cgi::Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<cgi::ValidationError>(m, "ValidationError", PyExc_ValueError);

  py::class_<cgi::Graph>(m, "Graph")
      .def(py::init([](int n, const std::vector<std::pair<int, int>>& edges, cgi::Matrix features,
                       std::vector<int> labels, int num_classes, std::vector<int> train,
                       std::vector<int> valid, std::vector<int> test) {
             std::vector<cgi::Edge> e(edges.begin(), edges.end());
             return cgi::Graph(n, e, std::move(features), std::move(labels), num_classes,
                               cgi::Splits{std::move(train), std::move(valid), std::move(test)});
           }),
           "num_nodes"_a, "edges"_a, "features"_a, "labels"_a, "num_classes"_a, "train"_a,
           "valid"_a, "test"_a)
      .def_property_readonly("num_nodes", &cgi::Graph::num_nodes)
      .def_property_readonly("num_classes", &cgi::Graph::num_classes)
      .def_property_readonly("num_edges", &cgi::Graph::num_edges)
      .def_property_readonly("features", &cgi::Graph::features)
      .def_property_readonly("labels", &cgi::Graph::labels)
      .def_property_readonly("train", [](const cgi::Graph& g) { return g.splits().train; })
      .def_property_readonly("valid", [](const cgi::Graph& g) { return g.splits().valid; })
      .def_property_readonly("test", [](const cgi::Graph& g) { return g.splits().test; })
      .def("edges", [](const cgi::Graph& g) {
        const auto e = g.edge_list();
        return std::vector<std::pair<int, int>>(e.begin(), e.end());
      });

  m.def("load_graph", &cgi::load_graph, "edges"_a, "features"_a, "labels"_a, "splits"_a,
        "num_classes"_a = 0);

  m.def(
      "planted_partition",
      [](int nodes, int classes, int feature_dim, double avg_degree, double homophily,
         double feature_signal, int train_per_class, int valid, int test, std::uint64_t seed) {
        cgi::PlantedPartitionConfig c{nodes,  classes,         feature_dim, avg_degree, homophily,
                                      feature_signal, train_per_class, valid,       test,       seed};
        return cgi::make_planted_partition(c);
      },
      "nodes"_a = 1500, "classes"_a = 6, "feature_dim"_a = 16, "avg_degree"_a = 2.0,
      "homophily"_a = 0.9, "feature_signal"_a = 0.7, "train_per_class"_a = 20, "valid"_a = 580,
      "test"_a = 800, "seed"_a = 0);

  m.def(
      "inject_cross_category_edges",
      [](const cgi::Graph& g, double ratio, double node_fraction, std::uint64_t seed) {
        cgi::InjectionOptions o;
        o.ratio = ratio;
        o.node_fraction = node_fraction;
        o.seed = seed;
        return cgi::inject_cross_category_edges(g, o);
      },
      "graph"_a, "ratio"_a, "node_fraction"_a = 0.5, "seed"_a = 0);

  py::class_<cgi::AppnpModel>(m, "AppnpModel")
      .def_readonly("alpha", &cgi::AppnpModel::alpha_teleport)
      .def_readonly("k_prop", &cgi::AppnpModel::k_prop)
      .def("mlp_logits", [](const cgi::AppnpModel& model, const cgi::Matrix& x) {
        return cgi::mlp_logits(model, x);
      })
      .def("save", [](const cgi::AppnpModel& model, const std::filesystem::path& path) {
        cgi::save_model(model, cgi::TrainConfig{}, path);
      });
  m.def("load_model", &cgi::load_model, "path"_a);

  m.def(
      "train",
      [](const cgi::Graph& g, const std::string& config) {
        const auto c = config_from(config);
        cgi::TrainResult r;
        {
          py::gil_scoped_release release;
          r = cgi::train(g, c.train);
        }
        py::list log;
        for (const auto& e : r.log) {
          log.append(py::dict("epoch"_a = e.epoch, "train_loss"_a = e.train_loss,
                              "valid_loss"_a = e.valid_loss, "train_acc"_a = e.train_acc,
                              "valid_acc"_a = e.valid_acc));
        }
        return py::make_tuple(r.model, log, r.best_epoch);
      },
      "graph"_a, "config_json"_a);

  m.def("predict", [](const cgi::AppnpModel& model, const cgi::Graph& g) {
    return bundle_dict(cgi::predict_bundle(model, g));
  });

  m.def(
      "causal_uncertainty",
      [](const cgi::AppnpModel& model, const cgi::Graph& g, int k_mc, double tau,
         std::uint64_t seed) {
        const auto b = cgi::predict_bundle(model, g);
        cgi::UncertaintyOptions o;
        o.k_mc = k_mc;
        o.tau = tau;
        o.master_seed = seed;
        const auto u = cgi::estimate_causal_uncertainty(model, g, b.z_hat, o);
        return py::make_tuple(u.variance, u.graph_var);
      },
      "model"_a, "graph"_a, "k_mc"_a = 50, "tau"_a = 0.15, "seed"_a = 0);

  m.def("rbf_kernel", &cgi::rbf_kernel, "a"_a, "b"_a, "gamma"_a);

  m.def(
      "solve_svm_dual",
      [](const cgi::Matrix& kernel, const std::vector<int>& y, double c, double tolerance) {
        cgi::SmoOptions o;
        o.tolerance = tolerance;
        const auto s = cgi::solve_svm_dual(kernel, y, c, o);
        return py::dict("alpha"_a = s.alpha, "bias"_a = s.bias, "objective"_a = s.objective,
                        "gap"_a = s.gap, "iterations"_a = s.iterations);
      },
      "kernel"_a, "y"_a, "c"_a, "tolerance"_a = 1e-3);

  py::class_<cgi::ChoiceModel>(m, "ChoiceModel")
      .def_readonly("c", &cgi::ChoiceModel::c_penalty)
      .def_readonly("gamma", &cgi::ChoiceModel::gamma)
      .def_readonly("cv_accuracy", &cgi::ChoiceModel::cv_accuracy)
      .def_readonly("feature_names", &cgi::ChoiceModel::feature_names)
      .def("decision", [](const cgi::ChoiceModel& model, const cgi::Matrix& x) {
        cgi::Vector out(x.rows());
        for (Eigen::Index i = 0; i < x.rows(); ++i) out(i) = model.decision(x.row(i));
        return out;
      });

  m.def(
      "train_choice_model",
      [](const cgi::Matrix& x, const std::vector<int>& y, std::vector<double> c_grid,
         std::vector<double> gamma_grid, int folds, std::uint64_t seed) {
        cgi::ChoiceTrainOptions o;
        o.c_grid = std::move(c_grid);
        o.gamma_grid = std::move(gamma_grid);
        o.folds = folds;
        o.seed = seed;
        std::vector<std::string> names;
        for (Eigen::Index i = 0; i < x.cols(); ++i) names.push_back("x" + std::to_string(i));
        return cgi::train_choice_model(x, y, names, o);
      },
      "x"_a, "y"_a, "c_grid"_a = std::vector<double>{0.1, 1.0, 10.0, 100.0},
      "gamma_grid"_a = std::vector<double>{0.01, 0.1, 1.0, 10.0}, "folds"_a = 5, "seed"_a = 0);

  m.def(
      "run_pipeline",
      [](const std::string& config, const std::optional<std::filesystem::path>& out_dir) {
        const auto c = config_from(config);
        const auto r = cgi::run_pipeline(c);
        if (out_dir) cgi::emit_report(r, *out_dir);
        return py::make_tuple(cgi::metrics_json(r.report, c).dump(), bundle_dict(r.bundle),
                              r.uncertainty.graph_var, r.z_cgi);
      },
      "config_json"_a, "out_dir"_a = py::none());
}
