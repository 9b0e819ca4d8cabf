#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "hxbcos/eval.hpp"
#include "hxbcos/explain.hpp"
#include "hxbcos/train.hpp"

namespace py = pybind11;
using namespace hxb;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Hypercomplex B-cos networks: models, explanations and data encoding.";

  py::enum_<Variant>(m, "Variant")
      .value("real", Variant::real)
      .value("ph", Variant::ph)
      .value("quaternion", Variant::quaternion);

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_static("desk", &ModelConfig::desk, py::arg("variant"), py::arg("n") = 3)
      .def_readwrite("variant", &ModelConfig::variant)
      .def_readwrite("n", &ModelConfig::n)
      .def_readwrite("b_exp", &ModelConfig::b_exp)
      .def_readwrite("maxout_units", &ModelConfig::maxout_units)
      .def_readwrite("stage_widths", &ModelConfig::stage_widths)
      .def_readwrite("stage_strides", &ModelConfig::stage_strides)
      .def_readwrite("dense_connectivity", &ModelConfig::dense_connectivity)
      .def_readwrite("input_channels", &ModelConfig::input_channels)
      .def_readwrite("num_classes", &ModelConfig::num_classes)
      .def_readwrite("image_size", &ModelConfig::image_size)
      .def_readwrite("seed", &ModelConfig::seed)
      .def_readwrite("logit_scale", &ModelConfig::logit_scale)
      .def("algebra_dim", &ModelConfig::algebra_dim)
      .def("validate", &ModelConfig::validate);

  py::class_<Model>(m, "Model")
      .def(py::init<ModelConfig>())
      .def_property_readonly("config", &Model::config)
      .def("num_layers", &Model::num_layers)
      .def("forward", [](const Model& self, const Array& x) {
        NoGradGuard g;
        return to_array(self.forward(to_tensor(x)));
      })
      .def("param_count", [](const Model& self) {
        const ParamCount c = self.param_count();
        return py::dict(py::arg("filters") = c.filters, py::arg("algebra") = c.algebra, py::arg("total") = c.total());
      })
      .def("save", [](const Model& self, const std::filesystem::path& path, const Metadata& metadata) {
        save_checkpoint(path, self, metadata);
      }, py::arg("path"), py::arg("metadata") = Metadata{});

  m.def("load_checkpoint", [](const std::filesystem::path& path) {
    Checkpoint ck = load_checkpoint(path);
    return py::make_tuple(std::move(ck.model), ck.metadata);
  }, "Returns (model, metadata).");

  m.def("explain", [](const Model& model, const Array& x, const std::vector<std::size_t>& classes) {
    const LinearMap lm = collapse_rows(model, to_tensor(x), classes);
    return py::make_tuple(to_array(lm.rows), lm.outputs);
  }, py::arg("model"), py::arg("x"), py::arg("classes"),
        "Collapsed linear rows [R,C,H,W] for one input [1,C,H,W] and the matching logits.");

  m.def("decode_color", [](const Array& row, double percentile) {
    const ExplanationImage img = decode_color(to_tensor(row), percentile);
    return py::make_tuple(to_array(img.rgb), to_array(img.alpha));
  }, py::arg("row"), py::arg("percentile") = 99.9, "Returns (rgb [3,H,W], alpha [H,W]).");

  m.def("hamilton_product", [](std::array<double, 4> p, std::array<double, 4> q) {
    const Quaternion r = hamilton_product({p[0], p[1], p[2], p[3]}, {q[0], q[1], q[2], q[3]});
    return std::array<double, 4>{r.q0, r.q1, r.q2, r.q3};
  });

  m.def("encode_input", [](const Array& rgb, std::size_t channels) {
    return to_array(encode_input(to_tensor(rgb), channels));
  }, py::arg("rgb"), py::arg("channels") = 6);

  m.def("synth_shapes", [](std::size_t num_per_class, std::size_t image_size, std::uint64_t seed) {
    const DatasetManifest d = synth_shapes(num_per_class, image_size, seed);
    std::vector<Tensor> images;
    std::vector<std::size_t> labels;
    for (const auto& s : d.samples) {
      images.push_back(s.image);
      labels.push_back(s.label);
    }
    return py::make_tuple(to_array(stack(images)), labels, d.class_names);
  }, py::arg("num_per_class"), py::arg("image_size") = 64, py::arg("seed") = 0,
        "Returns (images [N,3,H,W], labels, class names).");
}
