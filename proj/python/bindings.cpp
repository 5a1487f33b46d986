// gfdnet._core: numpy in, numpy out. Images are float32 [3, H, W] in [-1, 1].

#include <cstring>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "gfd/analysis.hpp"
#include "gfd/error.hpp"
#include "gfd/image_io.hpp"
#include "gfd/inference.hpp"
#include "gfd/log.hpp"
#include "gfd/toy.hpp"
#include "gfd/training.hpp"

namespace py = pybind11;
using namespace gfd;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

torch::Tensor to_tensor(const FloatArray& a) {
  std::vector<int64_t> shape(a.shape(), a.shape() + a.ndim());
  return torch::from_blob(const_cast<float*>(a.data()), shape, torch::kFloat32).clone();
}

FloatArray to_numpy(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kCPU, torch::kFloat32).contiguous();
  std::vector<py::ssize_t> shape(c.sizes().begin(), c.sizes().end());
  FloatArray out(shape);
  std::memcpy(out.mutable_data(), c.data_ptr<float>(), static_cast<size_t>(c.numel()) * sizeof(float));
  return out;
}

ImageTensor image_from(const FloatArray& a) { return ImageTensor(to_tensor(a)); }

py::dict prediction_dict(const Prediction& p, const std::vector<SourceLabel>& labels) {
  py::dict d;
  d["label"] = p.label;
  d["name"] = labels.at(static_cast<size_t>(p.label)).name;
  d["confidence"] = p.confidence;
  d["probabilities"] = p.probabilities;
  d["logits"] = p.logits;
  return d;
}

py::list shapes_list(const std::vector<ParameterShape>& shapes) {
  py::list out;
  for (const auto& s : shapes) out.append(py::make_tuple(s.name, py::tuple(py::cast(s.shape))));
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "GAN fingerprint extraction, attribution and detection";

  py::exception<Error>(m, "GfdError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      // message keeps the CLI's "code: text" form
      py::set_error(py::module_::import("gfdnet._core").attr("GfdError"),
                    (e.code() + ": " + e.what()).c_str());
    }
  });

  m.def("set_log_level", &log::init, py::arg("level"));

  m.def("read_image", [](const std::filesystem::path& p) { return to_numpy(read_image(p).pixels()); },
        py::arg("path"), "Image file -> float32 [3, H, W] in [-1, 1].");
  m.def("write_image",
        [](const std::filesystem::path& p, const FloatArray& img) { write_image(p, image_from(img)); },
        py::arg("path"), py::arg("image"));
  m.def("composite",
        [](const FloatArray& fp, const FloatArray& carrier) {
          return to_numpy(composite(Fingerprint(to_tensor(fp)), image_from(carrier), {}).image.pixels());
        },
        py::arg("fingerprint"), py::arg("carrier"), "carrier + fingerprint, clamped to [-1, 1].");

  py::class_<LoadedModel>(m, "Model")
      .def(py::init(&load_model), py::arg("checkpoint_dir"))
      .def_property_readonly("labels",
                             [](const LoadedModel& mdl) {
                               std::vector<std::string> names;
                               for (const auto& l : mdl.meta.labels) names.push_back(l.name);
                               return names;
                             })
      .def_property_readonly("task", [](const LoadedModel& mdl) { return to_string(mdl.meta.task); })
      .def_property_readonly("crop", [](const LoadedModel& mdl) { return mdl.meta.crop; })
      .def("attribute",
           [](LoadedModel& mdl, const FloatArray& img) {
             return prediction_dict(attribute(mdl, image_from(img)), mdl.meta.labels);
           },
           py::arg("image"))
      .def("detect",
           [](LoadedModel& mdl, const FloatArray& img) {
             auto d = detect(mdl, image_from(img));
             return py::make_tuple(d.is_fake, d.score);
           },
           py::arg("image"), "(is_fake, score) where score is the probability off the real class.")
      .def("fingerprint",
           [](LoadedModel& mdl, const FloatArray& img) {
             return to_numpy(extract_fingerprint(mdl, image_from(img)).residual());
           },
           py::arg("image"))
      .def("evaluate",
           [](LoadedModel& mdl, const std::filesystem::path& manifest, const std::string& mode,
              const std::string& split) {
             auto r = evaluate(mdl, load_manifest(manifest),
                               eval_mode_from_string(mode), split_from_string(split));
             return py::module_::import("json").attr("loads")(r.to_json().dump());
           },
           py::arg("manifest"), py::arg("mode") = "closed", py::arg("split") = "test");

  m.def("glcm_correlation_vector",
        [](const FloatArray& fp) {
          return fingerprint_correlation_vector(Fingerprint(to_tensor(fp)), GlcmConfig{});
        },
        py::arg("fingerprint"), "16 GLCM correlations, d in {2,4,8,16} x theta in {0..3pi/4}.");
  m.def("glcm_labels", [] { return correlation_vector_labels(GlcmConfig{}); });

  m.def("learning_rate_at",
        [](int64_t iteration, double lr, double gamma, int64_t step_size) {
          TrainConfig t;
          t.lr = lr;
          t.gamma = gamma;
          t.step_size = step_size;
          return learning_rate_at(t, iteration);
        },
        py::arg("iteration"), py::arg("lr") = 1e-4, py::arg("gamma") = 0.9, py::arg("step_size") = 500);
  m.def("total_g",
        [](double latent, double adversarial, double aux_cls, double perceptual) {
          return total_G({latent, adversarial, aux_cls, perceptual}, LossWeights::attribution_defaults())
              .total;
        },
        py::arg("latent"), py::arg("adversarial"), py::arg("aux_cls"), py::arg("perceptual"),
        "Weighted generator objective with the attribution defaults (10, 0.1, 1, 1).");

  m.def("classifier_shapes",
        [](const std::string& arch, int64_t num_classes) {
          ClassifierConfig c;
          c.arch = arch;
          c.num_classes = num_classes;
          SourceClassifier net(c);
          return shapes_list(classifier_manifest(*net));
        },
        py::arg("arch"), py::arg("num_classes"), "(name, shape) in torchvision's layout.");
  m.def("inference_path_shapes",
        [](const std::string& backbone, int64_t num_classes) {
          GeneratorConfig g;
          g.backbone = backbone_from_string(backbone);
          g.num_classes = num_classes;
          Generator gen(g);
          ClassificationHead head(gen->latent_channels(), num_classes);
          return shapes_list(inference_path_manifest(*gen, *head));
        },
        py::arg("backbone"), py::arg("num_classes"));

  m.def("make_toy",
        [](const std::filesystem::path& dir, int64_t pool, int64_t size, int fakes, double amplitude) {
          ToyDatasetOptions o;
          o.pool_size = pool;
          o.native_resolution = size;
          o.num_fake_sources = fakes;
          o.amplitude = amplitude;
          return write_toy_dataset(dir, o);
        },
        py::arg("dir"), py::arg("pool") = 500, py::arg("size") = 32, py::arg("fakes") = 2,
        py::arg("amplitude") = 0.05, "Writes the planted-pattern set; returns the manifest path.");
  m.def("toy_pattern",
        [](int source, int64_t size, double amplitude) { return to_numpy(toy_pattern(source, size, amplitude)); },
        py::arg("source"), py::arg("size"), py::arg("amplitude") = 0.05);

  m.def("train",
        [](const std::filesystem::path& manifest, const std::filesystem::path& out,
           const std::vector<std::string>& overrides, bool toy) {
          RunConfig cfg = toy ? toy_run_config() : RunConfig{};
          for (const auto& o : overrides) cfg.apply_override(o);
          FitResult r;
          {
            py::gil_scoped_release release;
            r = fit(load_manifest(manifest), cfg, {out, std::nullopt, {}});
          }
          py::dict d;
          d["latest"] = r.final_checkpoint;
          d["best"] = r.best_checkpoint;
          d["best_val_accuracy"] = r.best_val_accuracy;
          d["iterations"] = r.iterations;
          return d;
        },
        py::arg("manifest"), py::arg("out"), py::arg("overrides") = std::vector<std::string>{},
        py::arg("toy") = true, "Runs fit(); overrides are 'section.key=value' strings.");
}
