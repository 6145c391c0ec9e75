#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "icrl/checkpoint.hpp"
#include "icrl/commands.hpp"
#include "icrl/config.hpp"
#include "icrl/episodes.hpp"
#include "icrl/errors.hpp"

namespace py = pybind11;
using namespace icrl;

namespace {

using KeyValues = std::map<std::string, std::string>;

RunConfig run_config(const KeyValues& kv) {
  RunConfig config;
  for (const auto& [k, v] : kv) config.set(k, v);
  return config;
}

py::array_t<float> to_array(std::span<const float> values, const Shape& shape) {
  std::vector<py::ssize_t> dims(shape.begin(), shape.end());
  py::array_t<float> out(dims);
  std::copy(values.begin(), values.end(), out.mutable_data());
  return out;
}

py::dict report_dict(const EvalReport& r) {
  py::dict d;
  d["mean"] = r.mean;
  d["ci95"] = r.ci95;
  d["episodes"] = r.episodes;
  d["accuracies"] = r.accuracies;
  d["text"] = r.to_text();
  d["json"] = r.to_json();
  return d;
}

py::dict split_dict(const SplitSpec& s) {
  py::dict d;
  d["train"] = s.train;
  d["val"] = s.val;
  d["test"] = s.test;
  return d;
}

std::string run_command(const std::string& name, const KeyValues& kv) {
  using Command = void (*)(const RunConfig&, std::ostream&);
  static const std::map<std::string, Command> commands = {
      {"synth", cmd_synth}, {"pretrain", cmd_pretrain}, {"meta-train", cmd_meta_train},
      {"eval", cmd_eval},   {"inspect", cmd_inspect}};
  const auto it = commands.find(name);
  if (it == commands.end()) throw ConfigError("unknown command '" + name + "'");
  const RunConfig config = run_config(kv);
  std::ostringstream out;
  {
    py::gil_scoped_release release;
    it->second(config, out);
  }
  return out.str();
}

}  // namespace

PYBIND11_MODULE(_icrl, m) {
  m.doc() = "ICRL-Net few-shot classification core";

  auto base = py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  (void)base;

  py::class_<DatasetContainer>(m, "Dataset")
      .def(py::init<Shape, std::string>(), py::arg("instance_shape"), py::arg("provenance") = "")
      .def_static("load", &load_container, py::arg("path"))
      .def("save", [](const DatasetContainer& d, const std::filesystem::path& p) { save_container(d, p); })
      .def("add_class",
           [](DatasetContainer& d, std::string name, py::array_t<float, py::array::c_style | py::array::forcecast> values) {
             d.add_class(std::move(name), std::vector<float>(values.data(), values.data() + values.size()));
           },
           py::arg("name"), py::arg("values"))
      .def_property_readonly("class_count", &DatasetContainer::class_count)
      .def_property_readonly("instance_shape", &DatasetContainer::instance_shape)
      .def_property_readonly("provenance", &DatasetContainer::provenance)
      .def("instance_count", &DatasetContainer::instance_count)
      .def("class_name", [](const DatasetContainer& d, std::size_t c) { return d.cls(c).name; })
      .def("instance",
           [](const DatasetContainer& d, std::size_t c, std::size_t i) {
             return to_array(d.instance(c, i), d.instance_shape());
           })
      .def("__len__", &DatasetContainer::class_count);

  m.def(
      "gen_blobs",
      [](const KeyValues& kv) { return gen_blobs(run_config(kv).synth); }, py::arg("config") = KeyValues{},
      "Separable Gaussian blobs; config uses the synth.* keys.");
  m.def(
      "gen_outlier_blobs",
      [](const KeyValues& kv) {
        OutlierBlobs b = gen_outlier_blobs(run_config(kv).synth);
        return py::make_tuple(std::move(b.data), b.outlier);
      },
      py::arg("config") = KeyValues{}, "Blobs with mislabeled draws; returns (dataset, outlier flags).");
  m.def(
      "split_classes",
      [](const DatasetContainer& d, double train, double val, double test, std::uint64_t seed) {
        return split_dict(split_classes(d, SplitRatios{train, val, test}, seed));
      },
      py::arg("dataset"), py::arg("train") = 0.64, py::arg("val") = 0.16, py::arg("test") = 0.20,
      py::arg("seed") = 0);

  py::class_<Model<float>>(m, "Model")
      .def_property_readonly("config", [](const Model<float>& mdl) { return mdl.config.to_map(); })
      .def("parameter_names",
           [](const Model<float>& mdl) {
             std::vector<std::string> names;
             for (const auto& [name, t] : mdl.params) names.push_back(name);
             return names;
           })
      .def("parameter",
           [](const Model<float>& mdl, const std::string& name) {
             const Tensor& t = mdl.params.get(name);
             return to_array(t.data(), t.shape());
           })
      .def(
          "save",
          [](const Model<float>& mdl, const std::filesystem::path& p, const KeyValues& train) {
            save_checkpoint(Checkpoint{mdl.template cast<float>(), train}, p);
          },
          py::arg("path"), py::arg("train") = KeyValues{})
      .def_static("load", [](const std::filesystem::path& p) { return load_checkpoint(p).model; })
      .def("same_parameters", [](const Model<float>& a, const Model<float>& b) { return same_parameters(a, b); });

  m.def(
      "build_model",
      [](const DatasetContainer& d, const KeyValues& kv) {
        const RunConfig config = run_config(kv);
        return build_model(model_config_for(config, d), config.train.seed);
      },
      py::arg("dataset"), py::arg("config") = KeyValues{},
      "Fresh model for the dataset's instance shape; config uses the run config keys.");

  m.def(
      "meta_train",
      [](const DatasetContainer& d, const Model<float>& model, const std::vector<std::size_t>& classes,
         const KeyValues& kv) {
        const RunConfig config = run_config(kv);
        MetaTrainResult r;
        {
          py::gil_scoped_release release;
          r = meta_train(d, classes, model.template cast<float>(), config.train);
        }
        py::list rows;
        for (const auto& row : r.metrics) {
          py::dict x;
          x["epoch"] = row.epoch;
          x["episode"] = row.episode;
          x["l_cls"] = row.l_cls;
          x["l_intra"] = row.l_intra;
          x["l_inter"] = row.l_inter;
          x["l_joint"] = row.l_joint;
          x["query_acc"] = row.query_acc;
          rows.append(x);
        }
        return py::make_tuple(std::move(r.model), rows);
      },
      py::arg("dataset"), py::arg("model"), py::arg("classes"), py::arg("config") = KeyValues{},
      "Episodic training on a copy of the model; returns (trained model, metrics rows).");

  m.def(
      "evaluate",
      [](const Model<float>& model, const DatasetContainer& d, const std::vector<std::size_t>& classes,
         std::size_t episodes, std::size_t n, std::size_t k, std::size_t mq, std::uint64_t seed,
         std::size_t threads) {
        EvalReport r;
        {
          py::gil_scoped_release release;
          r = evaluate(model, d, classes, episodes, n, k, mq, seed, threads);
        }
        return report_dict(r);
      },
      py::arg("model"), py::arg("dataset"), py::arg("classes"), py::arg("episodes") = kDefaultEvalEpisodes,
      py::arg("n") = 5, py::arg("k") = 5, py::arg("m") = 15, py::arg("seed") = 0, py::arg("threads") = 1);

  m.def(
      "summarize_accuracies", [](std::vector<double> a) { return report_dict(summarize_accuracies(std::move(a))); },
      py::arg("accuracies"), "Mean and 1.96 * sample std / sqrt(E).");

  m.def(
      "infer_episode",
      [](const Model<float>& model, const DatasetContainer& d, const std::vector<std::size_t>& classes,
         std::size_t n, std::size_t k, std::size_t mq, std::uint64_t seed) {
        Rng rng = make_rng(seed, "python.episode");
        const Episode ep = sample_episode(d, classes, rng, n, k, mq);
        const InferenceResult r = infer_episode(model, d, ep);
        auto refs = [](const std::vector<InstanceRef>& v) {
          std::vector<std::pair<std::size_t, std::size_t>> out;
          for (const auto& x : v) out.emplace_back(x.class_id, x.index);
          return out;
        };
        py::dict out;
        out["classes"] = ep.classes;
        out["support"] = refs(ep.support);
        out["query"] = refs(ep.query);
        out["predictions"] = r.predictions;
        out["labels"] = ep.query_labels();
        out["significance"] = r.significance;
        out["logits"] = r.logits;
        out["accuracy"] = r.accuracy;
        return out;
      },
      py::arg("model"), py::arg("dataset"), py::arg("classes"), py::arg("n") = 5, py::arg("k") = 5,
      py::arg("m") = 15, py::arg("seed") = 0, "Samples one episode and classifies its queries.");

  m.def("run", &run_command, py::arg("command"), py::arg("config") = KeyValues{},
        "Runs a CLI command (synth, pretrain, meta-train, eval, inspect) and returns its output.");

  m.def("config_keys", [] {
    std::vector<std::tuple<std::string, std::string, std::string>> out;
    for (const auto& k : config_keys()) out.emplace_back(k.name, k.default_value, k.help);
    return out;
  });
}
