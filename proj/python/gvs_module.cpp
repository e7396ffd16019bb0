#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <optional>

#include "gvs/checkpoint.hpp"
#include "gvs/config.hpp"
#include "gvs/dataset.hpp"
#include "gvs/enhancement.hpp"
#include "gvs/errors.hpp"
#include "gvs/evaluation.hpp"
#include "gvs/losses.hpp"
#include "gvs/trainer.hpp"

namespace py = pybind11;
using namespace gvs;

namespace {

Tensor tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
    std::vector<std::int64_t> shape;
    for (py::ssize_t i = 0; i < arr.ndim(); ++i) shape.push_back(arr.shape(i));
    Tensor t(shape);
    std::memcpy(t.data(), arr.data(), sizeof(double) * static_cast<std::size_t>(t.numel()));
    return t;
}

py::array_t<double> array_from_tensor(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> arr(shape);
    std::memcpy(arr.mutable_data(), t.data(), sizeof(double) * static_cast<std::size_t>(t.numel()));
    return arr;
}

ImageGrid image_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
    if (arr.ndim() != 2) throw InvalidInputError("expected a 2-d image array");
    return ImageGrid{tensor_from_array(arr)};
}

LesionMask mask_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
    if (arr.ndim() != 2) throw InvalidInputError("expected a 2-d mask array");
    return LesionMask{tensor_from_array(arr)};
}

ProbMap prob_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
    if (arr.ndim() != 3 || arr.shape(0) != 2) throw InvalidInputError("expected a (2, H, W) probability array");
    return ProbMap{tensor_from_array(arr)};
}

SignMode sign_mode_from_string(const std::string& s) {
    if (s == "paper_literal") return SignMode::PaperLiteral;
    if (s == "pathological_residue") return SignMode::PathologicalResidue;
    throw InvalidConfigError("sign_mode must be paper_literal or pathological_residue");
}

}  // namespace

PYBIND11_MODULE(_gvs, m) {
    m.doc() = "pseudo-healthy synthesis core: losses, metrics, phantoms, training";

    py::register_exception<Error>(m, "GvsError");

    m.def(
        "make_phantom",
        [](std::uint64_t seed, std::int64_t height, std::int64_t width, std::int64_t count, double amp) {
            py::list out;
            for (const auto& s : make_phantom(seed, height, width, count, amp)) {
                py::dict d;
                d["id"] = s.id;
                d["image"] = array_from_tensor(s.image.pixels);
                d["mask"] = array_from_tensor(s.mask.pixels);
                d["healthy_truth"] = array_from_tensor(s.healthy_truth->pixels);
                out.append(std::move(d));
            }
            return out;
        },
        py::arg("seed"), py::arg("height"), py::arg("width"), py::arg("count"), py::arg("lesion_amp"),
        "Deterministic phantom dataset with known healthy ground truth.");

    m.def(
        "seg_ce_loss",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& pred,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& target) {
            return seg_ce_loss(prob_from_array(pred), mask_from_array(target)).value;
        },
        py::arg("pred"), py::arg("target"));

    m.def(
        "adv_fool_loss",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& pred) {
            return adv_fool_loss(prob_from_array(pred)).value;
        },
        py::arg("pred"));

    m.def(
        "residual_loss",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x_p,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& x_s) {
            return residual_loss(image_from_array(x_p), image_from_array(x_s)).value;
        },
        py::arg("x_p"), py::arg("x_s"));

    m.def(
        "generator_total",
        [](double ls2, double lr, double lambda_) {
            return generator_total(LossValue{ls2, false}, LossValue{lr, false}, lambda_).value;
        },
        py::arg("ls2"), py::arg("lr"), py::arg("lambda_"));

    m.def(
        "difference_weight_map",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x_p,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& x_s) {
            return array_from_tensor(difference_weight_map(image_from_array(x_p), image_from_array(x_s)).pixels);
        },
        py::arg("x_p"), py::arg("x_s"));

    m.def(
        "difference_aware_loss",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& pred,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& target,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& weights, bool formula_literal) {
            return difference_aware_loss(prob_from_array(pred), mask_from_array(target),
                                         WeightMap{tensor_from_array(weights)},
                                         formula_literal ? WceMode::FormulaLiteral : WceMode::TwoClass)
                .value;
        },
        py::arg("pred"), py::arg("target"), py::arg("weights"), py::arg("formula_literal") = false);

    m.def(
        "enhance",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x_p,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& x_s, double alpha,
           const std::string& sign_mode, bool clamp) {
            EnhanceConfig cfg;
            cfg.sign_mode = sign_mode_from_string(sign_mode);
            cfg.clamp_output = clamp;
            return array_from_tensor(enhance(image_from_array(x_p), image_from_array(x_s), alpha, cfg).pixels);
        },
        py::arg("x_p"), py::arg("x_s"), py::arg("alpha"), py::arg("sign_mode") = "pathological_residue",
        py::arg("clamp") = true);

    m.def(
        "dice_score",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& pred,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& gt) {
            return dice_score(mask_from_array(pred), mask_from_array(gt));
        },
        py::arg("pred_mask"), py::arg("gt"));

    m.def(
        "mpsnr",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x_p,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& x_s,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& y_t) {
            return mpsnr(image_from_array(x_p), image_from_array(x_s), mask_from_array(y_t));
        },
        py::arg("x_p"), py::arg("x_s"), py::arg("y_t"));

    m.def(
        "mssim",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x_p,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& x_s,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& y_t) {
            return mssim(image_from_array(x_p), image_from_array(x_s), mask_from_array(y_t));
        },
        py::arg("x_p"), py::arg("x_s"), py::arg("y_t"));

    m.def(
        "counterfeit_meanfill",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x_p,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& y_t) {
            return array_from_tensor(counterfeit_meanfill(image_from_array(x_p), mask_from_array(y_t)).pixels);
        },
        py::arg("x_p"), py::arg("y_t"));

    m.def(
        "counterfeit_noisefill",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x_p,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& y_t, std::uint64_t seed) {
            return array_from_tensor(counterfeit_noisefill(image_from_array(x_p), mask_from_array(y_t), seed).pixels);
        },
        py::arg("x_p"), py::arg("y_t"), py::arg("seed"));

    m.def(
        "adice",
        [](const std::vector<py::array_t<double, py::array::c_style | py::array::forcecast>>& images,
           const std::vector<py::array_t<double, py::array::c_style | py::array::forcecast>>& masks, double eval_lr,
           int epochs, int repeats, int batch_size, std::uint64_t seed, int levels, int base_channels,
           const std::string& norm) {
            std::vector<ImageGrid> imgs;
            std::vector<LesionMask> msks;
            for (const auto& a : images) imgs.push_back(image_from_array(a));
            for (const auto& a : masks) msks.push_back(mask_from_array(a));
            ADiceConfig cfg;
            cfg.eval_lr = eval_lr;
            cfg.epochs = epochs;
            cfg.repeats = repeats;
            cfg.batch_size = batch_size;
            cfg.base_seed = seed;
            cfg.spec.levels = levels;
            cfg.spec.base_channels = base_channels;
            cfg.spec.norm = norm_kind_from_string(norm);
            ADiceResult r = adice(imgs, msks, cfg);
            py::dict out;
            out["adice"] = r.adice;
            out["per_repeat"] = r.per_repeat;
            out["curves"] = r.curves;
            return out;
        },
        py::arg("images"), py::arg("masks"), py::arg("eval_lr") = 0.1, py::arg("epochs") = 20,
        py::arg("repeats") = 3, py::arg("batch_size") = 8, py::arg("seed") = 0, py::arg("levels") = 4,
        py::arg("base_channels") = 32, py::arg("norm") = "batch",
        "Convergence-speed healthiness metric (mean of the per-epoch dice curve).");

    m.def(
        "train_gvs",
        [](const std::string& manifest_path, const py::dict& config, const std::optional<std::string>& out_dir) {
            nlohmann::json j;
            for (const auto& item : config) {
                const std::string key = py::str(item.first);
                const py::handle v = item.second;
                if (py::isinstance<py::bool_>(v)) {
                    j[key] = v.cast<bool>();
                } else if (py::isinstance<py::int_>(v)) {
                    j[key] = v.cast<std::int64_t>();
                } else if (py::isinstance<py::float_>(v)) {
                    j[key] = v.cast<double>();
                } else if (py::isinstance<py::str>(v)) {
                    j[key] = v.cast<std::string>();
                } else if (py::isinstance<py::dict>(v)) {
                    j[key] = nlohmann::json::parse(py::str(py::module_::import("json").attr("dumps")(v)).cast<std::string>());
                } else {
                    throw InvalidConfigError("unsupported config value for key '" + key + "'");
                }
            }
            TrainConfig cfg = train_config_from_json(j);
            DatasetManifest manifest = load_manifest(manifest_path);
            auto samples = load_dataset(manifest, Split::Train);
            std::optional<std::filesystem::path> run_dir;
            if (out_dir) run_dir = *out_dir;
            TrainState state = train_gvs(samples, cfg, run_dir);
            py::dict out;
            out["epochs"] = state.epoch;
            out["steps"] = state.global_step;
            out["final_l_g"] = state.history.empty() ? 0.0 : state.history.back().l_g;
            out["final_l_seg"] = state.history.empty() ? 0.0 : state.history.back().l_seg;
            return out;
        },
        py::arg("manifest"), py::arg("config"), py::arg("out_dir") = std::nullopt,
        "Run alternating training on the train split of a dataset manifest.");

    m.def(
        "synthesize",
        [](const std::string& checkpoint_path,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& image) {
            LoadedCheckpoint ckpt = load_checkpoint(checkpoint_path);
            ImageGrid out =
                generator_forward(image_from_array(image), ckpt.state.generator, ckpt.config.generator, RunMode::Eval);
            return array_from_tensor(out.pixels);
        },
        py::arg("checkpoint"), py::arg("image"), "Pseudo-healthy synthesis for one image from a checkpoint.");
}
