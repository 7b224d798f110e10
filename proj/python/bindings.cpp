#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <cstring>

#include "jdl/error.hpp"
#include "jdl/gradcheck.hpp"
#include "jdl/layer.hpp"
#include "jdl/pipeline.hpp"
#include "jdl/qtable.hpp"
#include "jdl/soft_quantizer.hpp"
#include "jdl/tensor.hpp"

namespace py = pybind11;
using namespace jdl;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Support support_of(bool masked) { return masked ? Support::Masked : Support::Full; }

SubsamplingMode parse_mode(const std::string& s) {
    if (s == "444") return SubsamplingMode::S444;
    if (s == "422") return SubsamplingMode::S422;
    if (s == "420") return SubsamplingMode::S420;
    throw ArgumentError("unknown subsampling mode '" + s + "' (expected 444, 422 or 420)");
}

// Applies f elementwise over z, keeping its shape.
template <typename F>
Array map(const Array& z, F&& f) {
    Array out(std::vector<py::ssize_t>(z.shape(), z.shape() + z.ndim()));
    const double* in = z.data();
    double* o = out.mutable_data();
    for (py::ssize_t i = 0; i < z.size(); ++i) {
        o[i] = f(in[i]);
    }
    return out;
}

ImageTensor to_image(const Array& a) {
    if (a.ndim() != 3) {
        throw ArgumentError("image must be a (channels, height, width) array");
    }
    ImageTensor t(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)));
    std::memcpy(t.data.data(), a.data(), t.size() * sizeof(double));
    return t;
}

Array from_image(const ImageTensor& t) {
    Array out({t.channels, t.height, t.width});
    std::copy(t.data.begin(), t.data.end(), out.mutable_data());
    return out;
}

Array from_table(const Table& t) {
    Array out(static_cast<py::ssize_t>(t.size()));
    std::copy(t.begin(), t.end(), out.mutable_data());
    return out;
}

Table to_table(const Array& a) {
    if (a.ndim() != 1 || a.shape(0) != kBlockArea) {
        throw ArgumentError("table must be a length-64 array");
    }
    Table t{};
    std::copy(a.data(), a.data() + kBlockArea, t.begin());
    return t;
}

LayerConfig layer_config(const std::string& mode, bool masked, const std::string& variant, bool training) {
    LayerConfig c;
    c.mode = parse_mode(mode);
    c.support = support_of(masked);
    c.variant = parse_variant(variant);
    c.training = training;
    return c;
}

py::dict partial(const PartialCheck& p) {
    py::dict d;
    d["max_rel"] = p.max_rel;
    d["checked"] = p.checked;
    d["failures"] = p.failures;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Differentiable JPEG layer with a soft quantizer";

    py::register_exception<ArgumentError>(m, "ArgumentError", PyExc_ValueError);
    py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
    py::register_exception<FormatError>(m, "FormatError", PyExc_IOError);

    m.def("levels_for_bits", &levels_for_bits, py::arg("bits"));

    m.def(
        "quantize_soft",
        [](const Array& z, double q, double alpha, int levels, bool masked) {
            const QuantizerParams p{q, alpha, levels};
            p.validate();
            return map(z, [&](double v) { return quantize_soft(v, p, support_of(masked)); });
        },
        py::arg("z"), py::arg("q"), py::arg("alpha"), py::arg("levels"), py::arg("masked") = false,
        "Soft-quantizer output Q_d(z) elementwise.");

    m.def(
        "quantize_uniform",
        [](const Array& z, double q, int levels) {
            const QuantizerParams p{q, 1.0, levels};
            p.validate();
            return map(z, [&](double v) { return quantize_uniform(v, p); });
        },
        py::arg("z"), py::arg("q"), py::arg("levels"));

    m.def(
        "quantize_grad",
        [](const Array& z, double q, double alpha, int levels, bool masked) {
            const QuantizerParams p{q, alpha, levels};
            p.validate();
            std::vector<QuantGrad> g(static_cast<std::size_t>(z.size()));
            for (py::ssize_t i = 0; i < z.size(); ++i) {
                g[i] = quantize_grad(z.data()[i], p, support_of(masked));
            }
            std::size_t k = 0;
            Array dz = map(z, [&](double) { return g[k++].d_z; });
            k = 0;
            Array dq = map(z, [&](double) { return g[k++].d_q; });
            k = 0;
            Array da = map(z, [&](double) { return g[k++].d_alpha; });
            return py::make_tuple(dz, dq, da);
        },
        py::arg("z"), py::arg("q"), py::arg("alpha"), py::arg("levels"), py::arg("masked") = false,
        "(dQ_d/dz, dQ_d/dq, dQ_d/dalpha) elementwise.");

    m.def(
        "cpmf",
        [](double z, double q, double alpha, int levels, bool masked) {
            const Cpmf c = cpmf(z, {q, alpha, levels}, support_of(masked));
            return py::make_tuple(c.first_index, c.probabilities);
        },
        py::arg("z"), py::arg("q"), py::arg("alpha"), py::arg("levels"), py::arg("masked") = false,
        "(first_index, probabilities) of the conditional PMF over reconstruction levels.");

    m.def(
        "dct_block",
        [](const Array& block) {
            if (block.size() != kBlockArea) {
                throw ArgumentError("block must hold 64 values");
            }
            std::array<double, kBlockArea> in{};
            std::copy(block.data(), block.data() + kBlockArea, in.begin());
            const auto out = dct_block(in);
            Array r({8, 8});
            std::copy(out.begin(), out.end(), r.mutable_data());
            return r;
        },
        py::arg("block"), "Orthonormal 8x8 DCT-II (raster order in and out).");

    py::class_<QuantTables>(m, "QuantTables")
        .def_property(
            "q_y", [](const QuantTables& t) { return from_table(t.q_y); },
            [](QuantTables& t, const Array& a) { t.q_y = to_table(a); })
        .def_property(
            "q_c", [](const QuantTables& t) { return from_table(t.q_c); },
            [](QuantTables& t, const Array& a) { t.q_c = to_table(a); })
        .def_property(
            "alpha_y", [](const QuantTables& t) { return from_table(t.alpha_y); },
            [](QuantTables& t, const Array& a) { t.alpha_y = to_table(a); })
        .def_property(
            "alpha_c", [](const QuantTables& t) { return from_table(t.alpha_c); },
            [](QuantTables& t, const Array& a) { t.alpha_c = to_table(a); })
        .def_readonly("bits", &QuantTables::bits)
        .def_readonly("levels", &QuantTables::levels)
        .def_readwrite("hbar", &QuantTables::hbar)
        .def("validate", &QuantTables::validate)
        .def("to_json", &tables_to_json)
        .def_static("from_json", &tables_from_json, py::arg("text"))
        .def("save", [](const QuantTables& t, const std::string& path) { save_tables(t, path); })
        .def_static("load", [](const std::string& path) { return load_tables(path); })
        .def("__eq__", [](const QuantTables& a, const QuantTables& b) { return a == b; });

    m.def("init_ones", &init_ones, py::arg("bits") = kDefaultBits, py::arg("alpha") = kDefaultAlpha);
    m.def(
        "init_magnitude",
        [](const Array& images, const std::vector<int>& labels, int bits, const std::string& mode, double alpha) {
            if (images.ndim() != 4) {
                throw ArgumentError("images must be an (N, C, H, W) array");
            }
            std::vector<ImageTensor> list;
            const py::ssize_t per = images.shape(1) * images.shape(2) * images.shape(3);
            for (py::ssize_t n = 0; n < images.shape(0); ++n) {
                ImageTensor t(static_cast<int>(images.shape(1)), static_cast<int>(images.shape(2)),
                              static_cast<int>(images.shape(3)));
                std::copy(images.data() + n * per, images.data() + (n + 1) * per, t.data.begin());
                list.push_back(std::move(t));
            }
            const int classes = labels.empty() ? 1 : *std::max_element(labels.begin(), labels.end()) + 1;
            const LabeledDataset ds(std::move(list), labels, std::max(classes, 1));
            return init_magnitude(ds, bits, parse_mode(mode), MagnitudeDenominator::HalfRange, alpha);
        },
        py::arg("images"), py::arg("labels"), py::arg("bits") = kDefaultBits, py::arg("mode") = "444",
        py::arg("alpha") = kDefaultAlpha);

    m.def(
        "synthetic_dataset",
        [](int n_per_class, int size, std::uint64_t seed) {
            const LabeledDataset ds = make_synthetic_frequency_dataset(n_per_class, size, seed);
            const ImageTensor& e = ds.shape_example();
            Array images({static_cast<py::ssize_t>(ds.size()), static_cast<py::ssize_t>(e.channels),
                          static_cast<py::ssize_t>(e.height), static_cast<py::ssize_t>(e.width)});
            double* o = images.mutable_data();
            for (const auto& img : ds.images) {
                o = std::copy(img.data.begin(), img.data.end(), o);
            }
            return py::make_tuple(images, ds.labels);
        },
        py::arg("n_per_class"), py::arg("size") = 16, py::arg("seed") = 0,
        "(images[N, 3, size, size], labels) of the two-class synthetic frequency dataset.");

    m.def(
        "jpeg_layer",
        [](const Array& image, const QuantTables& tables, const std::string& mode, bool masked,
           const std::string& variant, bool training) {
            return from_image(jpeg_layer_apply(to_image(image), tables, layer_config(mode, masked, variant, training)));
        },
        py::arg("image"), py::arg("tables"), py::arg("mode") = "444", py::arg("masked") = false,
        py::arg("variant") = "soft", py::arg("training") = true, "Forward pass of the JPEG layer on a (3, H, W) image.");

    m.def(
        "jpeg_layer_backward",
        [](const Array& image, const QuantTables& tables, const Array& upstream, const std::string& mode,
           bool masked, const std::string& variant) {
            const LayerOutput f =
                jpeg_layer_forward(to_image(image), tables, layer_config(mode, masked, variant, true));
            const JpegGrad g = jpeg_layer_backward(to_image(upstream), f.context);
            py::dict d;
            d["reconstruction"] = from_image(f.reconstruction);
            d["d_pixels"] = from_image(g.d_pixels);
            d["d_q_y"] = from_table(g.d_q_y);
            d["d_q_c"] = from_table(g.d_q_c);
            d["d_alpha_y"] = from_table(g.d_alpha_y);
            d["d_alpha_c"] = from_table(g.d_alpha_c);
            return d;
        },
        py::arg("image"), py::arg("tables"), py::arg("upstream"), py::arg("mode") = "444", py::arg("masked") = false,
        py::arg("variant") = "soft", "Forward and backward pass; gradients of <upstream, layer(image)>.");

    m.def(
        "check_quantizer_gradients",
        [](int samples, std::uint64_t seed, const std::vector<int>& levels, bool masked) {
            const QuantizerCheck c = check_quantizer_gradients(samples, seed, levels, support_of(masked));
            py::dict d;
            d["d_z"] = partial(c.d_z);
            d["d_q"] = partial(c.d_q);
            d["d_alpha"] = partial(c.d_alpha);
            d["passed"] = c.passed();
            return d;
        },
        py::arg("samples") = 1000, py::arg("seed") = 0, py::arg("levels") = std::vector<int>{3, 8, 128},
        py::arg("masked") = false);

    m.def(
        "check_layer_gradients",
        [](int configs, std::uint64_t seed) {
            const LayerCheck c = check_layer_gradients(configs, seed);
            py::dict d;
            d["d_q"] = partial(c.d_q);
            d["d_pixel"] = partial(c.d_pixel);
            d["passed"] = c.passed();
            return d;
        },
        py::arg("configs") = 5, py::arg("seed") = 0);
}
