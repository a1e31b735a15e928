/*
 * Copyright 2026 The Kanji Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "kanji/bench.hpp"
#include "kanji/deploy.hpp"
#include "kanji/manifest.hpp"
#include "kanji/plan.hpp"
#include "kanji/quant.hpp"
#include "kanji/train.hpp"

namespace py = pybind11;
using namespace kanji;

namespace {

template <typename T>
Tensor<T> tensor_from_array(const py::array_t<T, py::array::c_style | py::array::forcecast>& a) {
  Shape shape(a.ndim());
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[static_cast<size_t>(i)] = a.shape(i);
  std::vector<T> data(a.data(), a.data() + a.size());
  return Tensor<T>(std::move(shape), std::move(data));
}

template <typename T>
py::array_t<T> array_from_tensor(const Tensor<T>& t) {
  std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
  py::array_t<T> a(shape);
  std::copy(t.data.begin(), t.data.end(), a.mutable_data());
  return a;
}

QTensor qtensor_from(const py::array_t<int32_t, py::array::c_style | py::array::forcecast>& a,
                     int frac_bits) {
  Tensor<int32_t> t = tensor_from_array<int32_t>(a);
  return QTensor(t.shape, t.data, QFormat{8, frac_bits});
}

ModelManifest parse_or_throw(const std::string& text) {
  ManifestParseResult res = parse_manifest(text);
  if (!res.manifest) {
    std::string msg = "manifest errors:";
    for (const std::string& e : res.errors) msg += "\n  " + e;
    throw InvalidInputError(msg);
  }
  return *res.manifest;
}

} // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "int8 deploy-first quantization toolchain core";

  py::register_exception<Error>(m, "KanjiError", PyExc_ValueError);

  py::class_<QFormat>(m, "QFormat")
      .def(py::init([](int bits, int frac_bits) {
             return QFormat{bits, frac_bits};
           }),
           py::arg("bits") = 8, py::arg("frac_bits") = 0)
      .def_readwrite("bits", &QFormat::bits)
      .def_readwrite("frac_bits", &QFormat::frac_bits)
      .def_property_readonly("step", &QFormat::step)
      .def_property_readonly("min_fp", &QFormat::min_fp)
      .def_property_readonly("max_fp", &QFormat::max_fp)
      .def("__eq__", [](const QFormat& a, const QFormat& b) { return a == b; })
      .def("__repr__", [](const QFormat& f) {
        return "QFormat(bits=" + std::to_string(f.bits) +
               ", frac_bits=" + std::to_string(f.frac_bits) + ")";
      });

  py::class_<RangeTracker>(m, "RangeTracker")
      .def(py::init([](double decay) {
             RangeTracker t;
             t.decay = decay;
             return t;
           }),
           py::arg("decay") = 0.99)
      .def_readwrite("max_abs_ema", &RangeTracker::max_abs_ema)
      .def_readwrite("decay", &RangeTracker::decay)
      .def_readwrite("initialized", &RangeTracker::initialized);

  m.def("choose_qformat", &choose_qformat, py::arg("max_abs"), py::arg("bits") = 8);

  m.def(
      "quantize",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x,
         const QFormat& fmt) {
        QTensor q = quantize(tensor_from_array<double>(x), fmt);
        return array_from_tensor(Tensor<int32_t>(q.shape, q.data));
      },
      py::arg("x"), py::arg("fmt"));

  m.def(
      "dequantize",
      [](const py::array_t<int32_t, py::array::c_style | py::array::forcecast>& q, int frac_bits) {
        return array_from_tensor(dequantize(qtensor_from(q, frac_bits)));
      },
      py::arg("q"), py::arg("frac_bits"));

  m.def(
      "fake_quant",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x,
         const QFormat& fmt) { return array_from_tensor(fake_quant(tensor_from_array<double>(x), fmt)); },
      py::arg("x"), py::arg("fmt"));

  m.def(
      "ste_mask",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x,
         const QFormat& fmt) { return array_from_tensor(ste_mask(tensor_from_array<double>(x), fmt)); },
      py::arg("x"), py::arg("fmt"));

  m.def(
      "update_range",
      [](const RangeTracker& t,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& batch) {
        return update_range(t, tensor_from_array<double>(batch));
      },
      py::arg("tracker"), py::arg("batch"));

  m.def("round_shift", &round_shift, py::arg("acc"), py::arg("shift"));

  m.def(
      "derive_shifts",
      [](int frac_in, int frac_wt, int frac_bias, int frac_out) {
        Shifts s = derive_shifts(frac_in, frac_wt, frac_bias, frac_out);
        return py::make_tuple(s.bias_shift, s.out_shift);
      },
      py::arg("frac_in"), py::arg("frac_wt"), py::arg("frac_bias"), py::arg("frac_out"));

  m.def(
      "conv2d_q7",
      [](const py::array_t<int32_t, py::array::c_style | py::array::forcecast>& input, int in_frac,
         const py::array_t<int32_t, py::array::c_style | py::array::forcecast>& weights, int wt_frac,
         const py::array_t<int32_t, py::array::c_style | py::array::forcecast>& bias, int bias_frac,
         int out_frac, int stride, int padding, bool relu) {
        QTensor in = qtensor_from(input, in_frac);
        ConvParams p;
        p.weights = qtensor_from(weights, wt_frac);
        p.bias = qtensor_from(bias, bias_frac);
        p.out_channels = static_cast<int>(p.weights.shape[0]);
        p.in_channels = static_cast<int>(p.weights.shape[1]);
        p.kernel_h = static_cast<int>(p.weights.shape[2]);
        p.kernel_w = static_cast<int>(p.weights.shape[3]);
        p.stride = stride;
        p.padding = padding;
        p.relu = relu;
        Shifts s = derive_shifts(in_frac, wt_frac, bias_frac, out_frac);
        p.bias_shift = s.bias_shift;
        p.out_shift = s.out_shift;
        p.out_format = QFormat{8, out_frac};
        QTensor out = conv2d_q7(in, p);
        return array_from_tensor(Tensor<int32_t>(out.shape, out.data));
      },
      py::arg("input"), py::arg("in_frac"), py::arg("weights"), py::arg("wt_frac"), py::arg("bias"),
      py::arg("bias_frac"), py::arg("out_frac"), py::arg("stride") = 1, py::arg("padding") = 0,
      py::arg("relu") = false);

  m.def(
      "fully_connected_q7",
      [](const py::array_t<int32_t, py::array::c_style | py::array::forcecast>& input, int in_frac,
         const py::array_t<int32_t, py::array::c_style | py::array::forcecast>& weights, int wt_frac,
         const py::array_t<int32_t, py::array::c_style | py::array::forcecast>& bias, int bias_frac,
         int out_frac, bool relu) {
        QTensor in = qtensor_from(input, in_frac);
        FcParams p;
        p.weights = qtensor_from(weights, wt_frac);
        p.bias = qtensor_from(bias, bias_frac);
        p.out_features = static_cast<int>(p.weights.shape[0]);
        p.in_features = static_cast<int>(p.weights.shape[1]);
        p.relu = relu;
        Shifts s = derive_shifts(in_frac, wt_frac, bias_frac, out_frac);
        p.bias_shift = s.bias_shift;
        p.out_shift = s.out_shift;
        p.out_format = QFormat{8, out_frac};
        QTensor out = fully_connected_q7(in, p);
        return array_from_tensor(Tensor<int32_t>(out.shape, out.data));
      },
      py::arg("input"), py::arg("in_frac"), py::arg("weights"), py::arg("wt_frac"), py::arg("bias"),
      py::arg("bias_frac"), py::arg("out_frac"), py::arg("relu") = false);

  m.def(
      "maxpool_q7",
      [](const py::array_t<int32_t, py::array::c_style | py::array::forcecast>& input, int frac,
         int window, int stride) {
        QTensor out = maxpool_q7(qtensor_from(input, frac), window, stride);
        return array_from_tensor(Tensor<int32_t>(out.shape, out.data));
      },
      py::arg("input"), py::arg("frac"), py::arg("window"), py::arg("stride"));

  m.def(
      "relu_q7",
      [](const py::array_t<int32_t, py::array::c_style | py::array::forcecast>& input, int frac) {
        QTensor out = relu_q7(qtensor_from(input, frac));
        return array_from_tensor(Tensor<int32_t>(out.shape, out.data));
      },
      py::arg("input"), py::arg("frac") = 7);

  m.def(
      "preprocess_q7",
      [](const py::array_t<uint8_t, py::array::c_style | py::array::forcecast>& image,
         const std::vector<int>& mu, int sigma_shift) {
        PreprocParams p;
        p.mu = mu;
        p.sigma_shift = sigma_shift;
        QTensor out = preprocess_q7(tensor_from_array<uint8_t>(image), p);
        return array_from_tensor(Tensor<int32_t>(out.shape, out.data));
      },
      py::arg("image"), py::arg("mu"), py::arg("sigma_shift"));

  m.def(
      "matmul_sym",
      [](const py::array_t<int8_t, py::array::c_style | py::array::forcecast>& a,
         const py::array_t<int8_t, py::array::c_style | py::array::forcecast>& b) {
        return array_from_tensor(matmul_sym(tensor_from_array<int8_t>(a), tensor_from_array<int8_t>(b)));
      },
      py::arg("a"), py::arg("b"));

  m.def(
      "matmul_asym",
      [](const py::array_t<uint8_t, py::array::c_style | py::array::forcecast>& a,
         const py::array_t<uint8_t, py::array::c_style | py::array::forcecast>& b, int a0, int b0) {
        return array_from_tensor(
            matmul_asym(tensor_from_array<uint8_t>(a), tensor_from_array<uint8_t>(b), a0, b0));
      },
      py::arg("a"), py::arg("b"), py::arg("a_zero_point"), py::arg("b_zero_point"));

  m.def(
      "requantize_dynamic",
      [](const py::array_t<int32_t, py::array::c_style | py::array::forcecast>& acc) {
        Tensor<int32_t> t = tensor_from_array<int32_t>(acc);
        AccumulatorBuffer buf(t.shape, t.data);
        DynamicRequantResult r = requantize_dynamic(buf);
        py::dict d;
        d["values"] = array_from_tensor(r.values);
        d["scale"] = r.params.scale;
        d["zero_point"] = r.params.zero_point;
        d["staging_bytes"] = r.staging_bytes;
        d["output_bytes"] = r.output_bytes;
        return d;
      },
      py::arg("acc"));

  m.def(
      "quantize_asymmetric",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x, double scale,
         int zero_point) {
        AsymmetricQParams p;
        p.scale = scale;
        p.zero_point = zero_point;
        return array_from_tensor(quantize_asymmetric(tensor_from_array<double>(x), p));
      },
      py::arg("x"), py::arg("scale"), py::arg("zero_point"));

  m.def(
      "parse_manifest",
      [](const std::string& text) {
        ManifestParseResult res = parse_manifest(text);
        py::dict d;
        d["errors"] = res.errors;
        if (res.manifest) {
          const ModelManifest& mm = *res.manifest;
          d["name"] = mm.name;
          d["scheme"] = scheme_name(mm.scheme);
          d["preproc"] = preproc_kind_name(mm.preproc);
          d["input"] = py::make_tuple(mm.in_h, mm.in_w, mm.in_c);
          py::list layers;
          for (const LayerDesc& l : mm.layers) {
            py::dict ld;
            ld["kind"] = l.kind;
            ld["name"] = l.name;
            layers.append(ld);
          }
          d["layers"] = layers;
        }
        return d;
      },
      py::arg("text"));

  m.def(
      "plan_report",
      [](const std::string& manifest_text) {
        ModelManifest mm = parse_or_throw(manifest_text);
        ExecutionPlan plan = build_plan(mm);
        return plan_report_json(plan);
      },
      py::arg("manifest_text"),
      "Builds a default (untrained) plan and returns its JSON report.");

  m.def(
      "validate_generated",
      [](const std::string& manifest_text, int samples, uint64_t seed) {
        ModelManifest mm = parse_or_throw(manifest_text);
        ExecutionPlan plan0 = build_plan(mm);
        GeneratedModel model = gen_trainable(plan0);
        init_params(model.graph, seed);
        model.graph.freeze_ranges();
        ExecutionPlan plan = build_plan(mm, collect_ranges(model));
        ParameterBlob blob = export_params(model, plan);
        load_params(plan, blob);
        ValidationReport report = validate_bitexact(plan, model, samples, seed);
        return py::make_tuple(report.identical, report.to_string());
      },
      py::arg("manifest_text"), py::arg("samples") = 25, py::arg("seed") = 1,
      "Generates a trainable model from the manifest, exports its parameters "
      "and checks engine/model bit-exactness on random inputs.");

  m.attr("__version__") = "0.1.0";
}
