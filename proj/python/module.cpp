#include "illuminorm/dataset.hpp"
#include "illuminorm/errors.hpp"
#include "illuminorm/eval.hpp"
#include "illuminorm/latent_index.hpp"
#include "illuminorm/model.hpp"
#include "illuminorm/ssim.hpp"
#include "illuminorm/synthgen.hpp"
#include "illuminorm/training.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace illuminorm;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

/// (H, W) or (C, H, W) float array -> Image.
Image to_image(const Array& a) {
    if (a.ndim() == 2) {
        const auto h = static_cast<int>(a.shape(0)), w = static_cast<int>(a.shape(1));
        return Image(h, w, 1, std::vector<double>(a.data(), a.data() + a.size()));
    }
    if (a.ndim() == 3) {
        const auto c = static_cast<int>(a.shape(0)), h = static_cast<int>(a.shape(1)), w = static_cast<int>(a.shape(2));
        return Image(h, w, c, std::vector<double>(a.data(), a.data() + a.size()));
    }
    throw ContractError("expected a 2-D (H, W) or 3-D (C, H, W) array");
}

Array from_image(const Image& img) {
    std::vector<py::ssize_t> shape;
    if (img.channels() == 1)
        shape = {img.height(), img.width()};
    else
        shape = {img.channels(), img.height(), img.width()};
    Array out(shape);
    std::copy(img.values().begin(), img.values().end(), out.mutable_data());
    return out;
}

SsimConfig ssim_config(int window_size, double sigma) {
    SsimConfig c;
    c.window_size = window_size;
    c.sigma = sigma;
    c.validate();
    return c;
}

py::dict loss_dict(const LossBreakdown& l) {
    py::dict d;
    d["recon"] = l.recon;
    d["triplet"] = l.triplet;
    d["kl"] = l.kl;
    d["total"] = l.total;
    return d;
}

py::dict history_dict(const TrainHistory& h) {
    py::list epochs, steps;
    for (const auto& e : h.epochs) {
        py::dict d = loss_dict(e.loss);
        d["epoch"] = e.epoch;
        epochs.append(d);
    }
    for (const auto& s : h.steps) {
        py::dict d = loss_dict(s.loss);
        d["epoch"] = s.epoch;
        d["step"] = s.step;
        steps.append(d);
    }
    py::dict out;
    out["epochs"] = epochs;
    out["steps"] = steps;
    return out;
}

/// Trained or loaded encoder-decoder together with its checkpoint.
struct PyModel {
    Checkpoint checkpoint;
    EncoderDecoder model;

    explicit PyModel(Checkpoint c) : checkpoint(std::move(c)), model(checkpoint.instantiate()) {}
};

}  // namespace

PYBIND11_MODULE(_illuminorm, m) {
    m.doc() = "Illumination-invariant autoencoders with nearest-neighbour retrieval.";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
    py::register_exception<DataError>(m, "DataError", PyExc_OSError);
    py::register_exception<SamplingError>(m, "SamplingError", PyExc_RuntimeError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

    m.def(
        "ssim",
        [](const Array& a, const Array& b, int window_size, double sigma) {
            return ssim(to_image(a), to_image(b), ssim_config(window_size, sigma));
        },
        py::arg("a"), py::arg("b"), py::arg("window_size") = 11, py::arg("sigma") = 1.5,
        "Mean SSIM over all valid windows.");

    m.def(
        "recon_distance_with_gradient",
        [](const Array& a, const Array& b, int window_size, double sigma) {
            const SsimMetric metric(ssim_config(window_size, sigma));
            Image grad;
            const double r = metric.distance_with_gradient(to_image(a), to_image(b), grad);
            return py::make_tuple(r, from_image(grad));
        },
        py::arg("a"), py::arg("b"), py::arg("window_size") = 11, py::arg("sigma") = 1.5,
        "1 - SSIM(a, b) and its gradient with respect to a.");

    m.def(
        "generate_dataset",
        [](const std::filesystem::path& out, int train_scenes, int test_scenes, int variants, std::uint64_t seed,
           int size, const std::string& balance) {
            GenConfig g;
            g.train_scenes = train_scenes;
            g.test_scenes = test_scenes;
            g.variants = variants;
            g.seed = seed;
            g.height = g.width = size;
            g.balance = balance;
            py::gil_scoped_release release;
            generate_dataset(g, out);
        },
        py::arg("out"), py::arg("train_scenes") = 200, py::arg("test_scenes") = 200, py::arg("variants") = 8,
        py::arg("seed") = 7, py::arg("size") = 64, py::arg("balance") = "balanced",
        "Renders a synthetic train/test dataset into out.");

    m.def(
        "load_split",
        [](const std::filesystem::path& root, const std::string& split) {
            const DatasetManifest manifest = load_manifest(root, parse_split(split));
            py::list scenes;
            for (const auto& s : manifest.scenes) {
                py::list variants;
                for (const auto& v : s.variants) variants.append(from_image(v));
                py::dict d;
                d["scene_id"] = s.scene_id;
                d["label"] = s.label.to_string();
                d["variants"] = variants;
                scenes.append(d);
            }
            return scenes;
        },
        py::arg("root"), py::arg("split") = "train", "Scenes of one split as dicts with numpy variants.");

    py::class_<PyModel>(m, "Model")
        .def_static(
            "load", [](const std::filesystem::path& path) { return PyModel(load_checkpoint(path)); }, py::arg("path"))
        .def_property_readonly("variant", [](const PyModel& p) { return std::string(to_string(p.model.variant())); })
        .def_property_readonly("latent_dim", [](const PyModel& p) { return p.model.latent_dim(); })
        .def_property_readonly("fingerprint", [](const PyModel& p) { return p.model.fingerprint(); })
        .def_property_readonly("training", [](const PyModel& p) { return p.checkpoint.training.dump(); },
                               "Training metadata as a JSON string.")
        .def("save", [](const PyModel& p, const std::filesystem::path& path) { save_checkpoint(p.checkpoint, path); })
        .def(
            "embed", [](const PyModel& p, const Array& x) { return p.model.embed(to_image(x)); }, py::arg("image"))
        .def(
            "reconstruct", [](const PyModel& p, const Array& x) { return from_image(p.model.reconstruct(to_image(x))); },
            py::arg("image"))
        .def(
            "decode", [](const PyModel& p, const std::vector<float>& z) { return from_image(p.model.decode(z)); },
            py::arg("z"));

    m.def(
        "train",
        [](const std::filesystem::path& data, const std::string& variant, const std::string& loss, int epochs,
           int batch_size, double learning_rate, double margin, double beta, std::uint64_t seed, int latent_dim,
           const std::vector<int>& widths) {
            const DatasetManifest manifest = load_manifest(data, Split::train);
            ArchConfig arch;
            arch.height = manifest.meta.height;
            arch.width = manifest.meta.width;
            arch.channels = manifest.meta.channels;
            arch.variant = parse_variant(variant);
            arch.latent_dim = latent_dim;
            arch.widths = widths;
            TrainConfig c;
            c.loss = parse_loss_mode(loss);
            c.epochs = epochs;
            c.batch_size = batch_size;
            c.learning_rate = learning_rate;
            c.margin = margin;
            c.kl_weight = beta;
            c.seed = seed;
            TrainResult result = [&] {
                py::gil_scoped_release release;
                return illuminorm::train(manifest, arch, c);
            }();
            return py::make_tuple(PyModel(std::move(result.checkpoint)), history_dict(result.history));
        },
        py::arg("data"), py::arg("variant") = "tae", py::arg("loss") = "impossible", py::arg("epochs") = 60,
        py::arg("batch_size") = 16, py::arg("learning_rate") = 1e-4, py::arg("margin") = 1.0, py::arg("beta") = 0.001,
        py::arg("seed") = 1, py::arg("latent_dim") = 16, py::arg("widths") = std::vector<int>{16, 32, 64, 128},
        "Trains on the dataset's train split; returns (model, history).");

    py::class_<LatentIndex>(m, "LatentIndex")
        .def_static(
            "build",
            [](const PyModel& p, const std::filesystem::path& data, const std::string& split) {
                return build_index(p.model, load_manifest(data, parse_split(split)));
            },
            py::arg("model"), py::arg("data"), py::arg("split") = "train")
        .def_static("load", &LatentIndex::load, py::arg("path"))
        .def("save", &LatentIndex::save, py::arg("path"))
        .def("__len__", &LatentIndex::size)
        .def_property_readonly("dim", &LatentIndex::dim)
        .def_property_readonly("fingerprint", &LatentIndex::fingerprint)
        .def(
            "knn",
            [](const LatentIndex& index, const std::vector<float>& query, std::size_t k) {
                py::list out;
                for (const Neighbour& n : index.knn(query, k)) {
                    const IndexEntry& e = index.entry(n.entry);
                    out.append(py::make_tuple(e.scene_id, e.variant_id, e.label.to_string(), n.distance));
                }
                return out;
            },
            py::arg("query"), py::arg("k") = 1, "(scene_id, variant_id, label, squared distance) per neighbour.")
        .def(
            "predict",
            [](const LatentIndex& index, const PyModel& p, const Array& x) {
                return predict_label(index, p.model, to_image(x)).to_string();
            },
            py::arg("model"), py::arg("image"))
        .def(
            "nn_reconstruct",
            [](const LatentIndex& index, const PyModel& p, const Array& x) {
                return from_image(nn_reconstruct(index, p.model, to_image(x)));
            },
            py::arg("model"), py::arg("image"));

    m.def(
        "evaluate",
        [](const PyModel& p, const std::filesystem::path& data) {
            const DatasetManifest train = load_manifest(data, Split::train);
            const DatasetManifest test = load_manifest(data, Split::test);
            AccuracyResult acc;
            InvarianceScore inv;
            {
                py::gil_scoped_release release;
                acc = classification_accuracy(build_index(p.model, train), p.model, test);
                inv = invariance_score(p.model, test);
            }
            py::dict d;
            d["accuracy"] = acc.accuracy;
            d["scene_accuracy"] = acc.scene_accuracy;
            d["recon_score"] = inv.recon_score;
            d["input_score"] = inv.input_score;
            return d;
        },
        py::arg("model"), py::arg("data"), "Test-split NN accuracy and invariance score of one model.");
}
