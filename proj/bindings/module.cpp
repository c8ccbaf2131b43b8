#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "fcn/data.hpp"
#include "fcn/field.hpp"
#include "fcn/layers.hpp"
#include "fcn/metrics.hpp"
#include "fcn/optim.hpp"
#include "fcn/resampling.hpp"
#include "fcn/skipnet.hpp"

namespace py = pybind11;
using namespace fcn;

namespace {

using DoubleArray =
    py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor tensor_from_array(const DoubleArray& a) {
  if (a.ndim() != 4)
    throw InvalidParamError("expected a 4-d (n, c, h, w) array");
  Tensor t({a.shape(0), a.shape(1), a.shape(2), a.shape(3)});
  std::memcpy(t.data.data(), a.data(),
              sizeof(double) * static_cast<std::size_t>(t.numel()));
  return t;
}

py::array_t<double> array_from_tensor(const Tensor& t) {
  py::array_t<double> a({t.dims.n, t.dims.c, t.dims.h, t.dims.w});
  std::memcpy(a.mutable_data(), t.data.data(),
              sizeof(double) * static_cast<std::size_t>(t.numel()));
  return a;
}

py::dict field_dict(const ComposedField& f) {
  py::dict d;
  d["rf"] = f.rf_size.to_double();
  d["stride"] = f.eff_stride.to_double();
  d["offset"] = f.offset.to_double();
  d["rf_exact"] = f.rf_size.str();
  d["stride_exact"] = f.eff_stride.str();
  d["offset_exact"] = f.offset.str();
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "fully convolutional segmentation core";

  py::register_exception<Error>(m, "FcnError");

  m.def(
      "chain_fields",
      [](const std::vector<std::tuple<std::int64_t, std::int64_t, std::int64_t,
                                      std::int64_t>>& layers) {
        std::vector<FieldDescriptor> d;
        for (const auto& [k, s, pad, dil] : layers)
          d.push_back({k, s, pad, dil});
        return field_dict(chain(std::span<const FieldDescriptor>(d)));
      },
      py::arg("layers"),
      "Composed receptive field of (kernel, stride, pad, dilation) layers.");

  m.def(
      "probe_net",
      [](const std::string& text) {
        py::list rows;
        for (const ProbeRow& r : probe_description(parse_net_text(text))) {
          py::dict d;
          d["name"] = r.name;
          d["rf"] = r.rf_size.to_double();
          d["stride"] = r.eff_stride.to_double();
          d["offset"] = r.offset.to_double();
          rows.append(d);
        }
        return rows;
      },
      py::arg("description"),
      "Field table for a net description (text form).");

  m.def("equivalent_momentum", &equivalent_momentum, py::arg("p"),
        py::arg("k"), py::arg("k_prime"), "p' with p^(1/k) = p'^(1/k').");

  m.def("effective_coefficients", &effective_coefficients, py::arg("p"),
        py::arg("k"), py::arg("horizon"),
        "Per-example update coefficients p^floor(j/k), most recent first.");

  m.def("bilinear_profile", &bilinear_profile, py::arg("factor"),
        "1-D bilinear upsampling kernel taps.");

  m.def(
      "bilinear_upsample",
      [](const DoubleArray& x, std::int64_t factor) {
        const Tensor t = tensor_from_array(x);
        return array_from_tensor(
            upsample_forward(t, bilinear_kernel(factor, t.dims.c)));
      },
      py::arg("x"), py::arg("factor"),
      "Bilinear transposed-convolution upsampling of an (n,c,h,w) array.");

  m.def(
      "conv2d",
      [](const DoubleArray& x, const DoubleArray& w,
         const std::vector<double>& bias, std::int64_t stride, std::int64_t pad,
         std::int64_t dilation) {
        ConvParams p;
        p.weights = tensor_from_array(w);
        p.bias = bias.empty()
                     ? std::vector<double>(
                           static_cast<std::size_t>(p.weights.dims.n), 0.0)
                     : bias;
        p.stride = stride;
        p.pad = pad;
        p.dilation = dilation;
        return array_from_tensor(conv2d_forward(tensor_from_array(x), p));
      },
      py::arg("x"), py::arg("weights"), py::arg("bias") = std::vector<double>{},
      py::arg("stride") = 1, py::arg("pad") = 0, py::arg("dilation") = 1,
      "2-d cross-correlation over an (n,c,h,w) array.");

  m.def(
      "dilate_filter",
      [](const DoubleArray& w, std::int64_t s) {
        return array_from_tensor(dilate_filter(tensor_from_array(w), s));
      },
      py::arg("weights"), py::arg("s"),
      "Rarefy a filter: taps at multiples of s, zeros elsewhere.");

  m.def(
      "compute_metrics",
      [](const py::array_t<std::int64_t, py::array::c_style |
                                             py::array::forcecast>& counts,
         bool exclude_background) {
        if (counts.ndim() != 2 || counts.shape(0) != counts.shape(1))
          throw InvalidParamError("confusion matrix must be square");
        ConfusionMatrix cm(counts.shape(0));
        for (std::int64_t i = 0; i < counts.shape(0); ++i)
          for (std::int64_t j = 0; j < counts.shape(1); ++j)
            cm.at(i, j) = counts.at(i, j);
        const Metrics r = compute_metrics(cm, exclude_background);
        py::dict d;
        d["pixel_acc"] = r.pixel_acc;
        d["mean_acc"] = r.mean_acc;
        d["mean_iu"] = r.mean_iu;
        d["fw_iu"] = r.fw_iu;
        return d;
      },
      py::arg("counts"), py::arg("exclude_background") = false,
      "Pixel accuracy, mean accuracy, mean IU and frequency-weighted IU.");

  m.def(
      "iu_upper_bound",
      [](const py::array_t<std::uint8_t, py::array::c_style |
                                             py::array::forcecast>& labels,
         std::int64_t factor, std::int64_t n_classes) {
        if (labels.ndim() != 3)
          throw InvalidParamError("labels must be (n, h, w)");
        std::vector<LabelMap> maps;
        for (std::int64_t n = 0; n < labels.shape(0); ++n) {
          LabelMap lm(1, labels.shape(1), labels.shape(2));
          for (std::int64_t i = 0; i < labels.shape(1); ++i)
            for (std::int64_t j = 0; j < labels.shape(2); ++j)
              lm.at(0, i, j) = labels.at(n, i, j);
          maps.push_back(std::move(lm));
        }
        return iu_upper_bound(maps, factor, n_classes);
      },
      py::arg("labels"), py::arg("factor"), py::arg("n_classes"),
      "Oracle mean IU at a downsampling factor (mode-reduce, nn-restore).");

  m.def(
      "generate_shapes",
      [](std::int64_t count, std::int64_t size, std::uint64_t seed,
         double noise_sigma) {
        ShapesConfig cfg;
        cfg.image_size = size;
        cfg.seed = seed;
        cfg.noise_sigma = noise_sigma;
        const auto set = generate(cfg, count);
        py::array_t<double> images({count, std::int64_t{1}, size, size});
        py::array_t<std::uint8_t> labels({count, size, size});
        for (std::int64_t n = 0; n < count; ++n) {
          const SegSample& s = set[static_cast<std::size_t>(n)];
          std::memcpy(images.mutable_data(n, 0, 0, 0), s.image.data.data(),
                      sizeof(double) * static_cast<std::size_t>(size * size));
          std::memcpy(labels.mutable_data(n, 0, 0), s.labels.data.data(),
                      static_cast<std::size_t>(size * size));
        }
        return py::make_tuple(images, labels);
      },
      py::arg("count"), py::arg("size") = 32, py::arg("seed") = 0,
      py::arg("noise_sigma") = 0.02,
      "Synthetic shapes dataset: (images, labels) arrays.");
}
