#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "bplab/cli.hpp"
#include "bplab/experiments.hpp"
#include "bplab/layers.hpp"
#include "bplab/metrics.hpp"
#include "bplab/network.hpp"

namespace py = pybind11;
using namespace bplab;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

PaddingMode pad_of(const std::string& name) { return padding_from_string(name); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Anti-aliased pooling, shift-equivariance metrics and a small CNN engine";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ArgumentError>(m, "ArgumentError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_RuntimeError);

  py::class_<BlurKernel>(m, "BlurKernel")
      .def_readonly("name", &BlurKernel::name)
      .def_readonly("id", &BlurKernel::id)
      .def_readonly("taps", &BlurKernel::taps)
      .def_readonly("norm_taps", &BlurKernel::norm_taps)
      .def("__len__", &BlurKernel::size)
      .def("__repr__", [](const BlurKernel& k) { return "<BlurKernel " + k.name + ">"; });

  m.def("make_kernel", &make_kernel, py::arg("name"));
  m.def("all_kernels", &all_kernels);
  m.def("kernel_2d", [](const BlurKernel& k) { return to_array(kernel_2d(k)); });
  m.def("filter_tv", [](const Array& w) { return filter_tv(to_tensor(w)); });

  m.def(
      "apply_blur", [](const Array& x, const BlurKernel& k, const std::string& pad) {
        return to_array(apply_blur(to_tensor(x), k, pad_of(pad)));
      },
      py::arg("x"), py::arg("kernel"), py::arg("pad") = "circular");
  m.def(
      "shift_circular",
      [](const Array& x, std::int64_t dh, std::int64_t dw) { return to_array(shift_circular(to_tensor(x), {dh, dw})); },
      py::arg("x"), py::arg("dh"), py::arg("dw"));
  m.def(
      "max_pool", [](const Array& x, std::size_t k, std::size_t s, const std::string& pad) {
        return to_array(max_pool(to_tensor(x), k, s, pad_of(pad)));
      },
      py::arg("x"), py::arg("kernel") = 2, py::arg("stride") = 2, py::arg("pad") = "circular");
  m.def(
      "avg_pool", [](const Array& x, std::size_t k, std::size_t s, const std::string& pad) {
        return to_array(avg_pool(to_tensor(x), k, s, pad_of(pad)));
      },
      py::arg("x"), py::arg("kernel") = 2, py::arg("stride") = 2, py::arg("pad") = "circular");
  m.def(
      "blur_pool", [](const Array& x, const BlurKernel& k, std::size_t s, const std::string& pad) {
        return to_array(blur_pool(to_tensor(x), k, s, pad_of(pad)));
      },
      py::arg("x"), py::arg("kernel"), py::arg("stride") = 2, py::arg("pad") = "circular");
  m.def(
      "max_blur_pool",
      [](const Array& x, std::size_t k, const BlurKernel& kernel, std::size_t s, const std::string& pad) {
        return to_array(max_blur_pool(to_tensor(x), k, kernel, s, pad_of(pad)));
      },
      py::arg("x"), py::arg("kernel_size"), py::arg("kernel"), py::arg("stride") = 2, py::arg("pad") = "circular");
  m.def(
      "blur_upsample", [](const Array& x, const BlurKernel& k, std::size_t factor, const std::string& pad) {
        return to_array(blur_upsample(to_tensor(x), k, factor, pad_of(pad)));
      },
      py::arg("x"), py::arg("kernel"), py::arg("factor") = 2, py::arg("pad") = "circular");

  m.def(
      "toy1d",
      [](const BlurKernel& k) {
        const Toy1dResult r = toy1d(k);
        py::dict d;
        d["signal"] = r.signal;
        d["shifted"] = r.shifted;
        d["maxpool"] = r.maxpool;
        d["maxpool_shifted"] = r.maxpool_shifted;
        d["maxblurpool"] = r.blurred;
        d["maxblurpool_shifted"] = r.blurred_shifted;
        return d;
      },
      py::arg("kernel"));

  py::class_<Network>(m, "Network")
      .def_static(
          "from_spec_file",
          [](const std::string& path, std::uint64_t seed) { return init_params(build(load_spec(path)), seed); },
          py::arg("path"), py::arg("seed") = 0)
      .def_static("load_checkpoint", [](const std::string& path) { return load_checkpoint(path); })
      .def_property_readonly("name", [](const Network& n) { return n.spec().name; })
      .def_property_readonly("num_feature_layers", &Network::num_feature_layers)
      .def_property_readonly("parameter_count", &Network::parameter_count)
      .def("checksum", &Network::checksum)
      .def("cumulative_stride", &Network::cumulative_stride)
      .def("infer", [](const Network& n, const Array& x) { return to_array(n.infer(to_tensor(x))); })
      .def("predict", [](const Network& n, const Array& x) { return predict(n, as_batch(to_tensor(x))); })
      .def(
          "heatmap",
          [](const Network& n, const Array& x, std::size_t layer) {
            const EquivarianceMap map = equivariance_heatmap(n, to_tensor(x), layer);
            py::dict d;
            d["grid"] = to_array(map.grid);
            d["layer"] = map.layer_name;
            d["cumulative_stride"] = map.cumulative_stride;
            d["period"] = map.period;
            return d;
          },
          py::arg("x"), py::arg("layer"));

  m.def("toy_images", [](std::uint64_t seed, std::size_t n, std::size_t num_classes) {
    const ToyDataset d = toy_dataset(seed, n, num_classes);
    return py::make_tuple(to_array(d.images), d.labels);
  });

  m.def("feature_distance", [](const Array& a, const Array& b) { return feature_distance(to_tensor(a), to_tensor(b)); });
  m.def("psnr", [](const Array& a, const Array& b) { return psnr(to_tensor(a), to_tensor(b)); });
  m.def("image_tv", [](const Array& x) { return image_tv(to_tensor(x)); });

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = run_cli(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs one bplab command; returns (exit_code, stdout, stderr).");
}
