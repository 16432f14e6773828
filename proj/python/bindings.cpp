#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cmath>
#include <limits>
#include <optional>

#include "redct/ct_sim.hpp"
#include "redct/errors.hpp"
#include "redct/image_io.hpp"
#include "redct/metrics.hpp"
#include "redct/red_model.hpp"
#include "redct/tensor_io.hpp"
#include "redct/training.hpp"

namespace py = pybind11;
using namespace redct;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a, bool as_image) {
    if (a.ndim() != 2) throw ShapeMismatch("expected a 2-D array, got " + std::to_string(a.ndim()) + " dimensions");
    const auto h = static_cast<std::size_t>(a.shape(0)), w = static_cast<std::size_t>(a.shape(1));
    std::vector<double> v(a.data(), a.data() + h * w);
    return as_image ? Tensor({1, h, w}, std::move(v)) : Tensor({h, w}, std::move(v));
}

Array to_array(const Tensor& t) {
    const std::size_t h = t.dim(t.rank() - 2), w = t.dim(t.rank() - 1);
    Array out({h, w});
    std::copy(t.values().begin(), t.values().end(), out.mutable_data());
    return out;
}

double psnr_db(const Array& a, const Array& b, double peak) {
    const Psnr p = psnr(to_tensor(a, true), to_tensor(b, true), peak);
    return p.identical ? std::numeric_limits<double>::infinity() : p.db;
}

py::dict record_dict(const QualityRecord& r) {
    py::dict d;
    d["id"] = r.id;
    d["ssim"] = r.ssim;
    d["rmse"] = r.rmse;
    d["psnr"] = r.psnr.identical ? std::numeric_limits<double>::infinity() : r.psnr.db;
    d["error"] = r.error;
    return d;
}

}  // namespace

PYBIND11_MODULE(_redct, m) {
    m.doc() = "Residual encoder-decoder CT denoising";

    auto base = py::register_exception<Error>(m, "RedctError", PyExc_RuntimeError);
    py::register_exception<DivergedError>(m, "DivergedError", base.ptr());
    py::register_exception<InvalidConfig>(m, "InvalidConfig", base.ptr());
    py::register_exception<ShapeMismatch>(m, "ShapeMismatch", base.ptr());

    m.def("make_phantom", [](std::uint64_t seed, std::size_t size) { return to_array(make_phantom(seed, size).image); },
          py::arg("seed"), py::arg("size") = 64);
    m.def(
        "make_pair",
        [](std::uint64_t seed, std::size_t size, std::size_t views, double photons, std::size_t detectors,
           double attenuation_scale) {
            PairConfig c;
            c.seed = seed;
            c.size = size;
            c.views = views;
            c.photons = photons;
            c.detectors = detectors;
            c.attenuation_scale = attenuation_scale;
            const ImagePair p = make_pair(c);
            return py::make_tuple(to_array(p.clean), to_array(p.noisy));
        },
        py::arg("seed"), py::arg("size") = 64, py::arg("views") = 180, py::arg("photons") = 1e4,
        py::arg("detectors") = 0, py::arg("attenuation_scale") = 16.0,
        "Returns (clean, noisy) images for one seeded phantom.");
    m.def("default_detectors", &default_detectors, py::arg("size"));
    m.def(
        "radon",
        [](const Array& image, std::size_t views, std::size_t detectors) {
            const Tensor t = to_tensor(image, true);
            return to_array(radon(t, views, detectors ? detectors : default_detectors(t.dim(1))).data);
        },
        py::arg("image"), py::arg("views") = 180, py::arg("detectors") = 0);
    m.def(
        "simulate_low_dose",
        [](const Array& sino, double photons, std::uint64_t seed) {
            return to_array(simulate_low_dose(Sinogram{to_tensor(sino, false)}, photons, seed).data);
        },
        py::arg("sinogram"), py::arg("photons"), py::arg("seed"));
    m.def(
        "fbp",
        [](const Array& sino, std::size_t size, bool clamp) {
            return to_array(fbp(Sinogram{to_tensor(sino, false)}, size, {clamp}));
        },
        py::arg("sinogram"), py::arg("size"), py::arg("clamp") = true);

    m.def("rmse", [](const Array& a, const Array& b) { return rmse(to_tensor(a, true), to_tensor(b, true)); });
    m.def("psnr", &psnr_db, py::arg("estimate"), py::arg("reference"), py::arg("peak") = 1.0,
          "PSNR in dB; inf for identical images.");
    m.def(
        "ssim",
        [](const Array& a, const Array& b, std::size_t block, double peak) {
            SsimOptions o;
            o.block = block;
            o.peak = peak;
            return ssim(to_tensor(a, true), to_tensor(b, true), o);
        },
        py::arg("a"), py::arg("b"), py::arg("block") = 8, py::arg("peak") = 1.0);

    m.def("read_image", [](const std::filesystem::path& p) { return to_array(read_image(p).image); });
    m.def("write_rtf", [](const std::filesystem::path& p, const Array& a) { write_rtf(p, to_tensor(a, true)); });

    py::class_<RedModel>(m, "RedModel")
        .def_static(
            "build",
            [](int layers, int channels, int kernel_size, std::uint64_t seed) {
                return RedModel::build({layers, channels, kernel_size, seed});
            },
            py::arg("layers") = 8, py::arg("channels") = 32, py::arg("kernel_size") = 3, py::arg("seed") = 1)
        .def_static("load", &load_checkpoint, py::arg("path"))
        .def("save", [](const RedModel& self, const std::filesystem::path& p) { save_checkpoint(self, p); })
        .def("denoise", [](const RedModel& self, const Array& a) { return to_array(self.denoise(to_tensor(a, true))); })
        .def_property_readonly("layers", [](const RedModel& self) { return self.config().num_layers; })
        .def_property_readonly("channels", [](const RedModel& self) { return self.config().channels; })
        .def_property_readonly("kernel_size", [](const RedModel& self) { return self.config().kernel_size; })
        .def_property_readonly("parameter_count", &RedModel::parameter_count);

    m.def(
        "train",
        [](const std::filesystem::path& config, const std::optional<std::filesystem::path>& out_dir,
           std::size_t threads) {
            TrainOptions opt;
            if (out_dir) opt.out_dir = *out_dir;
            opt.threads = threads ? threads : default_thread_count();
            TrainResult r = [&] {
                py::gil_scoped_release release;
                return train(load_train_config(config), opt);
            }();
            py::list history;
            for (const auto& h : r.history.records)
                history.append(py::make_tuple(h.iteration, h.total, h.mse, h.perceptual));
            return py::make_tuple(r.model, history);
        },
        py::arg("config"), py::arg("out_dir") = py::none(), py::arg("threads") = 0,
        "Trains from a key=value config file. Returns (model, [(iteration, total, mse, perceptual)]).");

    m.def(
        "evaluate",
        [](const RedModel& model, const std::filesystem::path& manifest, std::size_t threads) {
            QualityReport report;
            {
                py::gil_scoped_release release;
                report = evaluate(manifest, [&](const Tensor& x) { return model.denoise(x); }, threads);
            }
            py::list out;
            for (const auto& r : report.records) out.append(record_dict(r));
            return out;
        },
        py::arg("model"), py::arg("manifest"), py::arg("threads") = 1);
}
