#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "hpgmn/experiment.hpp"
#include "hpgmn/graph.hpp"
#include "hpgmn/local_stats.hpp"
#include "hpgmn/memory.hpp"
#include "hpgmn/model.hpp"

namespace py = pybind11;
using namespace hpgmn;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
  if (a.ndim() != 2) throw py::value_error("expected a 2-d array");
  Matrix m(a.shape(0), a.shape(1));
  std::copy(a.data(), a.data() + a.size(), m.raw());
  return m;
}

Array to_array(const Matrix& m) {
  Array a({m.rows(), m.cols()});
  std::copy(m.raw(), m.raw() + m.size(), a.mutable_data());
  return a;
}

py::object to_python(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

nlohmann::json from_python(const py::dict& d) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(d).cast<std::string>());
}

BlockMask mask_from(const std::vector<std::string>& names) {
  BlockMask mask;
  mask.enabled.fill(false);
  for (const auto& n : names) {
    bool found = false;
    for (std::size_t i = 0; i < kNumStatBlocks; ++i)
      if (n == stat_block_name(i)) mask.enabled[i] = found = true;
    if (!found) throw py::value_error("unknown statistic '" + n + "'");
  }
  return mask;
}

py::dict stats_dict(const LocalStatistics& s) {
  py::dict d;
  for (std::size_t i = 0; i < kNumStatBlocks; ++i)
    if (s.mask.enabled[i]) d[stat_block_name(i)] = to_array(s.blocks[i]);
  return d;
}

ExperimentConfig config_from(const py::object& config) {
  if (py::isinstance<py::dict>(config)) return ExperimentConfig::from_json(from_python(config));
  return ExperimentConfig::from_file(config.cast<std::filesystem::path>());
}

}  // namespace

PYBIND11_MODULE(_hpgmn, m) {
  m.doc() = "Graph memory network for node classification on heterophilous graphs";

  py::register_exception<Error>(m, "HpgmnError", PyExc_ValueError);

  py::class_<Graph>(m, "Graph")
      .def(py::init([](std::size_t n, std::vector<Edge> edges, const Array& features, std::vector<int> labels,
                       int num_classes) { return Graph(n, std::move(edges), to_matrix(features), std::move(labels), num_classes); }),
           py::arg("num_nodes"), py::arg("edges"), py::arg("features"), py::arg("labels"), py::arg("num_classes"))
      .def_property_readonly("num_nodes", &Graph::num_nodes)
      .def_property_readonly("num_edges", &Graph::num_edges)
      .def_property_readonly("num_features", &Graph::num_features)
      .def_property_readonly("num_classes", &Graph::num_classes)
      .def_property_readonly("edges", &Graph::edges)
      .def_property_readonly("labels", &Graph::labels)
      .def_property_readonly("features", [](const Graph& g) { return to_array(g.features()); })
      .def("neighbors", [](const Graph& g, std::size_t v) {
        if (v >= g.num_nodes()) throw py::index_error("node out of range");
        auto nb = g.neighbors(v);
        return std::vector<std::uint32_t>(nb.begin(), nb.end());
      })
      .def("content_hash", &Graph::content_hash);

  py::class_<SplitSet>(m, "SplitSet")
      .def(py::init<>())
      .def_readwrite("train", &SplitSet::train)
      .def_readwrite("val", &SplitSet::val)
      .def_readwrite("test", &SplitSet::test)
      .def_readwrite("split_id", &SplitSet::split_id);

  py::class_<Dataset>(m, "Dataset")
      .def_readonly("graph", &Dataset::graph)
      .def_readonly("splits", &Dataset::splits);

  m.def("load_dataset", &load_dataset, py::arg("path"));
  m.def("save_dataset", [](const Graph& g, const std::vector<SplitSet>& splits, const std::filesystem::path& dir) {
    save_dataset(Dataset{g, splits}, dir);
  }, py::arg("graph"), py::arg("splits"), py::arg("path"));
  m.def("node_homophily", &node_homophily);
  m.def("edge_homophily", &edge_homophily);
  m.def("random_splits", &random_splits, py::arg("graph"), py::arg("count") = 10, py::arg("base_seed") = 0,
        py::arg("train_ratio") = 0.48, py::arg("val_ratio") = 0.32);
  m.def("generate_heterophilous_sbm",
        [](std::size_t n_per_class, int num_classes, double p_intra, double p_inter, double feature_shift,
           std::uint64_t seed, std::size_t num_features) {
          return generate_heterophilous_sbm({n_per_class, num_classes, p_intra, p_inter, feature_shift, seed, num_features});
        },
        py::arg("n_per_class") = 50, py::arg("num_classes") = 2, py::arg("p_intra") = 0.01, py::arg("p_inter") = 0.2,
        py::arg("feature_shift") = 2.0, py::arg("seed") = 0, py::arg("num_features") = 16);

  m.def("ppr_diffusion", [](const Graph& g, double alpha, std::size_t k_max) {
    return to_array(ppr_diffusion(g, alpha, k_max));
  }, py::arg("graph"), py::arg("alpha_ppr") = 0.15, py::arg("k_max") = 32);
  m.def("label_wise_class_distribution", [](const Graph& g, const std::vector<int>& labels) {
    return to_array(label_wise_class_distribution(g, PseudoLabels{labels, {}}));
  });
  m.def("label_wise_feature_distribution", [](const Graph& g, const std::vector<int>& labels) {
    return to_array(label_wise_feature_distribution(g, PseudoLabels{labels, {}}));
  });
  m.def("local_statistics",
        [](const Graph& g, const std::vector<int>& pseudo_labels, double alpha, std::size_t k_max,
           const std::vector<std::string>& blocks) {
          const BlockMask mask = mask_from(blocks);
          const Matrix diff = mask[StatBlock::diffusion] ? ppr_diffusion(g, alpha, k_max) : Matrix(g.num_nodes(), 0);
          return stats_dict(assemble_local_statistics(g, PseudoLabels{pseudo_labels, {}}, diff, mask));
        },
        py::arg("graph"), py::arg("pseudo_labels"), py::arg("alpha_ppr") = 0.15, py::arg("k_max") = 32,
        py::arg("blocks") = std::vector<std::string>{"node_attributes", "label_wise_class", "label_wise_feature", "diffusion"});

  m.def("attend", [](const Array& units, const Array& queries) {
    return to_array(attend(MemoryBank(to_matrix(units)), to_matrix(queries)).weights);
  }, py::arg("units"), py::arg("queries"), "K x N attention of the queries over the memory units");
  m.def("kpattern_loss", [](const Array& units, const Array& queries) {
    auto r = kpattern_loss(MemoryBank(to_matrix(units)), to_matrix(queries));
    return py::make_tuple(r.loss, to_array(r.grad_units), to_array(r.grad_queries), r.nearest);
  }, py::arg("units"), py::arg("queries"));
  m.def("entropy_loss", [](const Array& attention) {
    auto r = entropy_loss(AttentionMatrix{to_matrix(attention)});
    return py::make_tuple(r.loss, to_array(r.grad));
  }, py::arg("attention"), "negative entropy of the normalised unit usage of K x N attention");

  m.def("load_config", [](const py::object& config) { return to_python(config_from(config).to_json()); });

  m.def("train_split",
        [](const py::object& config, std::size_t split_id) {
          ExperimentConfig c = config_from(config);
          c.validate();
          Pipeline p(c);
          for (const auto& s : p.selected_splits())
            if (s.split_id == split_id) {
              py::gil_scoped_release release;
              const auto stats = p.statistics(s);
              const RunMetrics metrics = p.run(s, stats, c.effective_model(), c.statistics);
              py::gil_scoped_acquire acquire;
              return to_python(metrics.to_json());
            }
          throw py::value_error("split not selected by the config");
        },
        py::arg("config"), py::arg("split_id") = 0, "train one split and return its metrics");

  auto command = [](int (*cmd)(const ExperimentConfig&, std::ostream&)) {
    return [cmd](const py::object& config) {
      const ExperimentConfig c = config_from(config);
      std::ostringstream log;
      int code;
      {
        py::gil_scoped_release release;
        code = cmd(c, log);
      }
      return py::make_tuple(code, log.str());
    };
  };
  m.def("run_train", command(&cmd_train), py::arg("config"));
  m.def("run_ablate", command(&cmd_ablate), py::arg("config"));
  m.def("run_sweep", command(&cmd_sweep), py::arg("config"));
  m.def("dataset_stats", [](const std::filesystem::path& dir) {
    std::ostringstream out;
    cmd_stats(dir, out);
    return out.str();
  });
}
