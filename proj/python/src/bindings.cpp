/* Copyright 2026 The EmbraceNet Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include <pybind11/complex.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "embrace/baselines.hpp"
#include "embrace/config.hpp"
#include "embrace/errors.hpp"
#include "embrace/fft.hpp"
#include "embrace/metrics.hpp"
#include "embrace/model.hpp"
#include "embrace/run.hpp"
#include "embrace/sketch.hpp"

namespace py = pybind11;
using namespace embrace;

namespace {

template <typename T>
using Array = py::array_t<T, py::array::c_style | py::array::forcecast>;

template <typename T>
Tensor<T> to_tensor(const Array<T>& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor<T>(std::move(shape), std::vector<T>(a.data(), a.data() + a.size()));
}

template <typename T>
py::array_t<T> to_array(const Tensor<T>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<T> out(shape);
  std::copy(t.storage().begin(), t.storage().end(), out.mutable_data());
  return out;
}

template <typename T>
std::vector<Tensor<T>> to_tensors(const std::vector<Array<T>>& arrays) {
  std::vector<Tensor<T>> out;
  for (const auto& a : arrays) out.push_back(to_tensor(a));
  return out;
}

py::array_t<int> to_array(const std::vector<int>& v) {
  return py::array_t<int>(static_cast<py::ssize_t>(v.size()), v.data());
}

ModalityBatch make_batch(const std::vector<Array<float>>& inputs, const std::vector<int>& labels,
                         const std::optional<Array<std::uint8_t>>& presence) {
  ModalityBatch batch = ModalityBatch::from_inputs(to_tensors(inputs), labels);
  if (presence) {
    const auto& u = *presence;
    if (u.ndim() != 2 || static_cast<std::size_t>(u.shape(0)) != batch.size() ||
        static_cast<std::size_t>(u.shape(1)) != batch.modalities()) {
      throw UsageError("presence must be an [n x m] array");
    }
    for (std::size_t i = 0; i < batch.size(); ++i) {
      batch.presence[i].assign(u.data() + i * batch.modalities(), u.data() + (i + 1) * batch.modalities());
    }
  }
  return batch;
}

py::array_t<std::uint8_t> presence_array(const ModalityBatch& batch) {
  py::array_t<std::uint8_t> out({static_cast<py::ssize_t>(batch.size()),
                                 static_cast<py::ssize_t>(batch.modalities())});
  auto* dst = out.mutable_data();
  for (const auto& u : batch.presence) dst = std::copy(u.begin(), u.end(), dst);
  return out;
}

// A loaded or freshly trained model together with the metadata it is saved with.
struct PyModel {
  FusionModel model;
  FusionModel::FileMeta meta;
};

py::dict result_dict(const TrainResult& r) {
  py::dict d;
  d["steps"] = r.steps;
  d["final_loss"] = r.final_loss;
  d["train_f1"] = r.train_f1;
  if (r.has_val) d["val_f1"] = r.val_f1;
  return d;
}

}  // namespace

PYBIND11_MODULE(_embracenet, m) {
  m.doc() = "EmbraceNet multimodal fusion core";

  // Registered base first so the more specific translators take precedence.
  auto& base = py::register_exception<Error>(m, "EmbraceError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<UsageError>(m, "UsageError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<UnrecoverableInputError>(m, "UnrecoverableInputError", base.ptr());

  py::class_<ModalityBatch>(m, "ModalityBatch")
      .def(py::init(&make_batch), py::arg("inputs"), py::arg("labels"), py::arg("presence") = py::none())
      .def_property_readonly("inputs",
                             [](const ModalityBatch& b) {
                               py::list out;
                               for (const auto& t : b.inputs) out.append(to_array(t));
                               return out;
                             })
      .def_property_readonly("labels", [](const ModalityBatch& b) { return to_array(b.labels); })
      .def_property_readonly("presence", &presence_array)
      .def_property_readonly("modalities", &ModalityBatch::modalities)
      .def("slice", &ModalityBatch::slice, py::arg("begin"), py::arg("end"))
      .def("__len__", &ModalityBatch::size);

  py::class_<SyntheticSpec>(m, "SyntheticSpec")
      .def(py::init<>())
      .def_readwrite("modalities", &SyntheticSpec::modalities)
      .def_readwrite("classes", &SyntheticSpec::classes)
      .def_readwrite("latent", &SyntheticSpec::latent)
      .def_readwrite("width", &SyntheticSpec::width)
      .def_readwrite("class_separation", &SyntheticSpec::class_separation)
      .def_readwrite("noise", &SyntheticSpec::noise)
      .def_readwrite("correlation", &SyntheticSpec::correlation)
      .def_readwrite("run_min", &SyntheticSpec::run_min)
      .def_readwrite("run_max", &SyntheticSpec::run_max)
      .def_readwrite("train", &SyntheticSpec::train)
      .def_readwrite("val", &SyntheticSpec::val)
      .def_readwrite("test", &SyntheticSpec::test)
      .def_readwrite("stream", &SyntheticSpec::stream)
      .def_readwrite("seed", &SyntheticSpec::seed);

  m.def(
      "generate_synthetic",
      [](const SyntheticSpec& spec) {
        SyntheticData d = generate_synthetic(spec);
        py::dict out;
        out["train"] = std::move(d.train);
        out["val"] = std::move(d.val);
        out["test"] = std::move(d.test);
        out["stream"] = std::move(d.stream);
        return out;
      },
      py::arg("spec"), "Train/val/test/stream splits of a synthetic m-modality dataset.");

  m.def("apply_missing_modalities", &apply_missing_modalities, py::arg("batch"), py::arg("mask"),
        "Keep the modalities whose bit is set; zero the rest and clear their presence.");
  m.def("enumerate_combinations", &enumerate_combinations, py::arg("m"), py::arg("cap") = 1000,
        py::arg("seed") = 0);

  m.def(
      "weighted_f1",
      [](const std::vector<int>& pred, const std::vector<int>& labels, std::size_t classes) {
        return weighted_f1(pred, labels, classes);
      },
      py::arg("predictions"), py::arg("labels"), py::arg("classes"));

  m.def(
      "adjust_probabilities",
      [](const std::vector<double>& p, const PresenceVector& u) { return adjust_probabilities(p, u); },
      py::arg("p"), py::arg("u"));
  m.def(
      "sample_selection",
      [](const std::vector<double>& p_hat, std::size_t c, std::uint64_t seed) {
        Rng rng(seed);
        const auto r = sample_selection(p_hat, c, rng);
        std::vector<int> picked(c);
        for (std::size_t i = 0; i < c; ++i) picked[i] = static_cast<int>(r.selected(i));
        return to_array(picked);
      },
      py::arg("p_hat"), py::arg("c"), py::arg("seed") = 0,
      "Modality index selected for each of the c embracement rows.");
  m.def(
      "embrace_expected",
      [](const std::vector<Array<double>>& docked, const std::vector<double>& p_hat) {
        const auto tensors = to_tensors(docked);
        return to_array(embrace_expected<double>(tensors, p_hat));
      },
      py::arg("docked"), py::arg("p_hat"));
  m.def(
      "calibrate_probabilities",
      [](const std::vector<double>& scores) { return calibrate_probabilities(scores); },
      py::arg("scores"));

  py::class_<CountSketchPlan>(m, "CountSketchPlan")
      .def_static("create", &CountSketchPlan::create, py::arg("n"), py::arg("d"), py::arg("seed"))
      .def_readonly("input_width", &CountSketchPlan::input_width)
      .def_readonly("sketch_width", &CountSketchPlan::sketch_width)
      .def_readonly("hash", &CountSketchPlan::hash)
      .def_readonly("sign", &CountSketchPlan::sign);
  m.def(
      "count_sketch",
      [](const Array<double>& v, const CountSketchPlan& plan) {
        return to_array(count_sketch(to_tensor(v), plan));
      },
      py::arg("v"), py::arg("plan"));
  m.def(
      "cmp_fuse",
      [](const std::vector<Array<double>>& features, const std::vector<CountSketchPlan>& plans) {
        const auto tensors = to_tensors(features);
        return to_array(cmp_fuse<double>(tensors, plans));
      },
      py::arg("features"), py::arg("plans"));
  m.def(
      "fft",
      [](const std::vector<Complex>& x, bool inverse) { return fft(x, inverse); }, py::arg("x"),
      py::arg("inverse") = false);

  py::class_<PyModel>(m, "FusionModel")
      .def_static(
          "load",
          [](const std::filesystem::path& path) {
            FusionModel::FileMeta meta;
            FusionModel model = FusionModel::load(path, &meta);
            return PyModel{std::move(model), std::move(meta)};
          },
          py::arg("path"))
      .def("save", [](const PyModel& m, const std::filesystem::path& path) { m.model.save(path, m.meta); },
           py::arg("path"))
      .def_property_readonly("strategy", [](const PyModel& m) { return strategy_name(m.model.strategy()); })
      .def_property_readonly("trained", [](const PyModel& m) { return m.model.trained(); })
      .def_property_readonly("param_digest", [](const PyModel& m) { return hex64(m.model.param_digest()); })
      .def_property_readonly("config_digest", [](const PyModel& m) { return m.meta.config_digest; })
      .def_property_readonly("data_digest", [](const PyModel& m) { return m.meta.data_digest; })
      .def_property(
          "selection_probabilities", [](const PyModel& m) { return m.model.selection_probabilities(); },
          [](PyModel& m, std::vector<double> p) { m.model.set_selection_probabilities(std::move(p)); })
      .def(
          "predict",
          [](const PyModel& m, const ModalityBatch& b, std::uint64_t seed) {
            std::vector<int> pred;
            {
              py::gil_scoped_release release;
              pred = m.model.predict(b, seed);
            }
            return to_array(pred);
          },
          py::arg("batch"), py::arg("eval_seed") = 0)
      .def(
          "probabilities",
          [](const PyModel& m, const ModalityBatch& b, std::uint64_t seed) {
            return to_array(m.model.probabilities(b, seed));
          },
          py::arg("batch"), py::arg("eval_seed") = 0)
      .def(
          "embraced",
          [](const PyModel& m, const ModalityBatch& b, std::uint64_t seed) {
            return to_array(m.model.embraced(b, seed));
          },
          py::arg("batch"), py::arg("eval_seed") = 0)
      .def(
          "score",
          [](const PyModel& m, const ModalityBatch& b, const std::string& metric) {
            return m.model.score(b, parse_metric(metric));
          },
          py::arg("batch"), py::arg("metric") = "f1")
      .def(
          "modality_scores",
          [](const PyModel& m, const ModalityBatch& b, const std::string& metric) {
            return m.model.modality_scores(b, parse_metric(metric));
          },
          py::arg("batch"), py::arg("metric") = "f1");

  m.def(
      "train_config",
      [](const std::filesystem::path& config) {
        const RunConfig cfg = RunConfig::load(config);
        const PreparedData data = prepare_data(cfg.data);
        TrainedRun run = train_run(cfg, data);
        py::dict splits;
        for (const char* name : {"train", "val", "test", "stream"}) splits[name] = data.split(name);
        return py::make_tuple(PyModel{std::move(run.model), std::move(run.meta)}, result_dict(run.result),
                              splits);
      },
      py::arg("config"),
      "Train the run described by a config file. Returns (model, metrics, prepared splits).");
}
