#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "wavemix/dwt.hpp"
#include "wavemix/run.hpp"

namespace py = pybind11;
using namespace wavemix;

namespace {

template <typename T>
using Array = py::array_t<T, py::array::c_style | py::array::forcecast>;

template <typename T>
Tensor<T> to_tensor(const Array<T>& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor<T>::from(std::move(shape), std::vector<T>(a.data(), a.data() + a.size()));
}

template <typename T>
py::array_t<T> to_array(const Tensor<T>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<T> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

ModelConfig model_config(const py::dict& d) { return nlohmann::json::parse(py::str(py::module_::import("json").attr("dumps")(d)).cast<std::string>()).get<ModelConfig>(); }

RunConfig run_config(const py::dict& d) { return nlohmann::json::parse(py::str(py::module_::import("json").attr("dumps")(d)).cast<std::string>()).get<RunConfig>(); }

py::dict row_dict(const EpochRow& r) {
  py::dict d;
  d["epoch"] = r.epoch;
  d["train_loss"] = r.train_loss ? py::object(py::float_(*r.train_loss)) : py::none();
  d["test_loss"] = r.test_loss;
  d["top1"] = r.top1;
  d["top5"] = r.top5;
  return d;
}

class PyModel {
 public:
  PyModel(const py::dict& config, std::uint64_t seed) : model_(model_config(config), seed) {}

  py::array_t<float> forward(const Array<float>& images, bool training) {
    NoGradGuard guard;
    return to_array(model_.forward(to_tensor(images), training));
  }

  std::string name() const { return model_.config().name(); }
  Index num_params() const { return model_.count_params().total; }

  py::dict state(bool buffers) const {
    py::dict d;
    const auto reg = model_.registry();
    for (const auto& p : reg.parameters) d[py::str(p.name)] = to_array(p.tensor);
    if (buffers)
      for (const auto& b : reg.buffers) d[py::str(b.name)] = to_array(b.tensor);
    return d;
  }

 private:
  Model<float> model_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "WaveMix: multi-level 2D Haar token mixing";
  m.attr("__version__") = library_version();

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  m.def("dwt2_level", [](const Array<double>& x) { return to_array(dwt2_level(to_tensor(x))); }, py::arg("x"),
        "One Haar level of (B, C, H, W) -> (B, 4C, ceil(H/2), ceil(W/2)), channels [A|Dh|Dv|Dd].");
  m.def("idwt2_level", [](const Array<double>& y) { return to_array(idwt2_level(to_tensor(y))); }, py::arg("y"));
  m.def(
      "dwt2_pyramid",
      [](const Array<double>& x, int levels) {
        const auto p = dwt2_pyramid(to_tensor(x), levels);
        std::vector<py::array_t<double>> out;
        for (const auto& l : p.levels) out.push_back(to_array(l));
        return out;
      },
      py::arg("x"), py::arg("levels"));
  m.def(
      "dwt_roundtrip", [](const Array<double>& x, int levels) { return to_array(reconstruct(dwt2_pyramid(to_tensor(x), levels))); },
      py::arg("x"), py::arg("levels"));
  m.def("compute_levels", &compute_levels, py::arg("height"), py::arg("width"));

  m.def(
      "count_params",
      [](const py::dict& config) {
        const auto rep = Model<float>(model_config(config), 0).count_params();
        return py::make_tuple(rep.total, rep.groups);
      },
      py::arg("config"), "Returns (total, [(group, count), ...]).");

  py::class_<PyModel>(m, "Model")
      .def(py::init<const py::dict&, std::uint64_t>(), py::arg("config"), py::arg("seed") = 0)
      .def("forward", &PyModel::forward, py::arg("images"), py::arg("training") = false)
      .def_property_readonly("name", &PyModel::name)
      .def_property_readonly("num_params", &PyModel::num_params)
      .def("state", &PyModel::state, py::arg("buffers") = true);

  m.def(
      "train",
      [](const py::dict& config) {
        RunConfig cfg = run_config(config);
        std::vector<EpochRow> rows;
        double best = 0;
        {
          py::gil_scoped_release release;
          const auto data = prepare_data(cfg);
          const auto r = train(cfg, data);
          rows = r.rows;
          best = r.best_top1;
        }
        py::list out;
        for (const auto& r : rows) out.append(row_dict(r));
        py::dict d;
        d["rows"] = out;
        d["best_top1"] = best;
        return d;
      },
      py::arg("config"), "Trains one seed from a flat run-config dict; returns the metrics rows.");
}
