#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "cll/baselines.hpp"
#include "cll/config.hpp"
#include "cll/gradcheck.hpp"
#include "cll/io.hpp"
#include "cll/metrics.hpp"
#include "cll/report.hpp"
#include "cll/runtime.hpp"
#include "cll/train.hpp"

namespace py = pybind11;
using namespace cll;

namespace {

using Array = py::array_t<float, py::array::c_style | py::array::forcecast>;

// Accepts 2-D (H, W), 3-D (C, H, W) or 4-D (N, C, H, W) arrays.
Tensor<Real> to_tensor(const Array& a) {
  Shape s;
  switch (a.ndim()) {
    case 2: s = Shape{1, 1, std::size_t(a.shape(0)), std::size_t(a.shape(1))}; break;
    case 3: s = Shape{1, std::size_t(a.shape(0)), std::size_t(a.shape(1)), std::size_t(a.shape(2))}; break;
    case 4:
      s = Shape{std::size_t(a.shape(0)), std::size_t(a.shape(1)), std::size_t(a.shape(2)), std::size_t(a.shape(3))};
      break;
    default: throw DimensionError("expected a 2-, 3- or 4-D array, got " + std::to_string(a.ndim()) + "-D");
  }
  Tensor<Real> t(s);
  std::copy(a.data(), a.data() + t.size(), t.raw());
  return t;
}

Array to_array(const Tensor<Real>& t) {
  const Shape& s = t.shape();
  Array a({s.n, s.c, s.h, s.w});
  std::copy(t.raw(), t.raw() + t.size(), a.mutable_data());
  return a;
}

py::dict sweep_dict(const SweepResult& r) {
  py::dict d;
  d["alphas"] = r.alphas;
  std::vector<double> sig;
  for (double s : r.sigmas) sig.push_back(s * 255.0);
  d["sigmas"] = sig;
  py::array_t<double> grid({r.sigmas.size(), r.alphas.size()});
  std::copy(r.psnr.begin(), r.psnr.end(), grid.mutable_data());
  d["psnr"] = grid;
  d["argmax_alpha"] = r.argmax_alpha;
  d["ideal_alpha"] = r.ideal_alpha;
  d["max_deviation"] = r.max_deviation;
  return d;
}

std::vector<double> to_unit(const std::vector<double>& sigmas_8bit) {
  std::vector<double> out;
  for (double s : sigmas_8bit) out.push_back(s / 255.0);
  return out;
}

// JSON values cross into Python through their text form.
py::object json_to_py(const Json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Filter transition networks for continuous-level denoising";
  tune_allocator();

  auto base = py::register_exception<Error>(m, "CllError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<RangeError>(m, "RangeError", base.ptr());
  py::register_exception<StoreMismatchError>(m, "StoreMismatchError", base.ptr());
  py::register_exception<TrainingError>(m, "TrainingError", base.ptr());
  py::register_exception<NonFiniteError>(m, "NonFiniteError", base.ptr());
  py::register_exception<CheckpointError>(m, "CheckpointError", base.ptr());
  py::register_exception<ImageError>(m, "ImageError", base.ptr());

  py::class_<NetworkSpec>(m, "NetworkSpec")
      .def(py::init([](std::size_t channels, std::size_t num_blocks, std::size_t kernel_size, std::size_t image_channels) {
             NetworkSpec s{channels, num_blocks, kernel_size, image_channels};
             s.validate();
             return s;
           }),
           py::arg("channels") = 16, py::arg("num_blocks") = 4, py::arg("kernel_size") = 3,
           py::arg("image_channels") = 1)
      .def_readonly("channels", &NetworkSpec::channels)
      .def_readonly("num_blocks", &NetworkSpec::num_blocks)
      .def_readonly("kernel_size", &NetworkSpec::kernel_size)
      .def_readonly("image_channels", &NetworkSpec::image_channels)
      .def("__repr__", [](const NetworkSpec& s) {
        return "NetworkSpec(channels=" + std::to_string(s.channels) + ", num_blocks=" + std::to_string(s.num_blocks) +
               ", kernel_size=" + std::to_string(s.kernel_size) + ")";
      });

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("patch_size", &TrainConfig::patch_size)
      .def_readwrite("steps_phase1", &TrainConfig::steps_phase1)
      .def_readwrite("steps_phase2", &TrainConfig::steps_phase2)
      .def_readwrite("lr_phase1", &TrainConfig::lr_phase1)
      .def_readwrite("lr_phase2", &TrainConfig::lr_phase2)
      .def_readwrite("validation_images", &TrainConfig::validation_images)
      .def_readwrite("validation_size", &TrainConfig::validation_size)
      .def_property(
          "sigma_low", [](const TrainConfig& c) { return c.sigma_low * 255.0; },
          [](TrainConfig& c, double v) { c.sigma_low = v / 255.0; }, "first level, 8-bit scale")
      .def_property(
          "sigma_high", [](const TrainConfig& c) { return c.sigma_high * 255.0; },
          [](TrainConfig& c, double v) { c.sigma_high = v / 255.0; }, "second level, 8-bit scale");

  py::class_<ValidationSet>(m, "ValidationSet")
      .def_static(
          "make",
          [](std::uint64_t seed, std::size_t count, std::size_t size) {
            return ValidationSet::make(SyntheticDataset(seed), count, size);
          },
          py::arg("seed"), py::arg("count"), py::arg("size"))
      .def_property_readonly("clean", [](const ValidationSet& v) { return to_array(v.clean); })
      .def("noisy", [](const ValidationSet& v, double sigma) { return to_array(v.noisy(sigma / 255.0)); },
           py::arg("sigma"), "noisy images at sigma on the 8-bit scale")
      .def("__len__", &ValidationSet::size);

  py::class_<Network>(m, "Network")
      .def_static("build", &Network::build, py::arg("spec") = NetworkSpec{}, py::arg("seed") = 1)
      .def_property_readonly("spec", &Network::spec)
      .def("attach_ftn",
           [](Network& n, std::size_t groups, std::size_t depth, bool exclude_last) {
             n.attach_ftn(FtnConfig{groups, depth}, exclude_last);
           },
           py::arg("groups") = 1, py::arg("depth") = 2, py::arg("exclude_last") = false)
      .def("attach_adafm", &Network::attach_adafm)
      .def("detach_providers", &Network::detach_providers)
      .def("copy", [](const Network& n) { return Network(n); })
      .def_property_readonly("provider_mode", [](const Network& n) { return to_string(n.providers().mode); })
      .def_property_readonly("provider_count", &Network::provider_count)
      .def_property_readonly("conv_count", &Network::conv_count)
      .def_property_readonly("parameter_count", [](const Network& n) { return n.store().parameter_count(); })
      .def("parameters",
           [](const Network& n, const std::string& phase) {
             if (phase != "main" && phase != "tuning") throw ConfigError("phase must be 'main' or 'tuning'");
             return n.collect_parameters(phase == "main" ? Phase::main : Phase::tuning);
           },
           py::arg("phase") = "main")
      .def("parameter", [](const Network& n, const std::string& name) { return to_array(n.store().at(name)); })
      .def("store_hash", [](const Network& n) { return n.store().hash(); })
      .def("main_hash",
           [](const Network& n) {
             ParameterStore s;
             for (const auto& name : n.collect_parameters(Phase::main)) s.add(name, n.store().at(name));
             return s.hash();
           })
      .def("effective_filters",
           [](const Network& n, std::size_t layer, double alpha) {
             const auto f = layer_effective_filters(n, layer, alpha);
             return py::make_tuple(to_array(f.weights), to_array(f.bias));
           },
           py::arg("layer"), py::arg("alpha"))
      .def("forward",
           [](const Network& n, const Array& images, double alpha) {
             const Tensor<Real> x = to_tensor(images);
             Tensor<Real> y;
             {
               py::gil_scoped_release release;
               y = forward(n, x, alpha);
             }
             return to_array(y);
           },
           py::arg("images"), py::arg("alpha") = 0.0, "denoise (N, C, H, W) images at a global level")
      .def("forward_map",
           [](const Network& n, const Array& images, const Array& level_map) {
             const Tensor<Real> x = to_tensor(images);
             const Tensor<Real> m = to_tensor(level_map);
             if (m.shape().n != 1 || m.shape().c != 1) throw DimensionError("level map must be a single (H, W) plane");
             const LevelMap map{m};
             Tensor<Real> y;
             {
               py::gil_scoped_release release;
               y = forward(n, x, BlendSpec{map});
             }
             return to_array(y);
           },
           py::arg("images"), py::arg("level_map"), "denoise with a per-pixel level map in [0, 1]")
      .def("materialize", &materialize, py::arg("alpha"), "plain network with the effective filters at alpha");

  auto phase_dict = [](const PhaseResult& r) { return json_to_py(to_json(r)); };

  m.def(
      "train_phase1",
      [phase_dict](Network& net, const TrainConfig& cfg) {
        const SyntheticDataset data(cfg.seed);
        const auto val = ValidationSet::make(data, cfg.validation_images, cfg.validation_size);
        PhaseResult r;
        {
          py::gil_scoped_release release;
          r = train_phase1(net, data, val, cfg);
        }
        py::dict d = phase_dict(r);
        d["losses"] = r.losses;
        return d;
      },
      py::arg("net"), py::arg("config"), "train the main filters at the first level, in place");
  m.def(
      "train_phase2",
      [phase_dict](Network& net, const TrainConfig& cfg) {
        const SyntheticDataset data(cfg.seed);
        const auto val = ValidationSet::make(data, cfg.validation_images, cfg.validation_size);
        PhaseResult r;
        {
          py::gil_scoped_release release;
          r = train_phase2(net, data, val, cfg);
        }
        py::dict d = phase_dict(r);
        d["losses"] = r.losses;
        return d;
      },
      py::arg("net"), py::arg("config"), "train the providers at the second level, in place");
  m.def(
      "finetune",
      [](const Network& net, const TrainConfig& cfg, std::size_t steps) {
        const SyntheticDataset data(cfg.seed);
        const auto val = ValidationSet::make(data, cfg.validation_images, cfg.validation_size);
        py::gil_scoped_release release;
        return finetune_unconstrained(net, data, val, cfg, steps);
      },
      py::arg("net"), py::arg("config"), py::arg("steps"), "unconstrained fine-tune copy at the second level");
  m.def(
      "train_from_scratch",
      [](const NetworkSpec& spec, const TrainConfig& cfg) {
        const SyntheticDataset data(cfg.seed);
        const auto val = ValidationSet::make(data, cfg.validation_images, cfg.validation_size);
        py::gil_scoped_release release;
        return train_from_scratch(spec, data, val, cfg);
      },
      py::arg("spec"), py::arg("config"));
  m.def(
      "dni",
      [](const Network& a, const Network& b, double alpha) {
        if (a.provider_count() || b.provider_count()) throw ConfigError("DNI interpolates plain networks");
        return Network::from_parts(a.spec(), ProviderConfig{}, dni_interpolate(DniPair{a.store(), b.store()}, alpha));
      },
      py::arg("a"), py::arg("b"), py::arg("alpha"), "network with every parameter blended at alpha");

  m.def(
      "psnr", [](const Array& pred, const Array& target) { return psnr(to_tensor(pred), to_tensor(target)); },
      py::arg("pred"), py::arg("target"), "PSNR in dB after clamping to [0, 1], capped at 99");
  m.def(
      "evaluate_psnr",
      [](const Network& net, const ValidationSet& val, double sigma, double alpha) {
        py::gil_scoped_release release;
        return evaluate_psnr(net, val, sigma / 255.0, alpha);
      },
      py::arg("net"), py::arg("val"), py::arg("sigma"), py::arg("alpha") = 0.0);
  m.def(
      "alpha_sweep",
      [](const Network& net, const ValidationSet& val, const std::vector<double>& sigmas, double step,
         double sigma_low, double sigma_high) {
        SweepResult r;
        {
          py::gil_scoped_release release;
          r = alpha_sweep(net, val, to_unit(sigmas), step, sigma_low / 255.0, sigma_high / 255.0);
        }
        return sweep_dict(r);
      },
      py::arg("net"), py::arg("val"), py::arg("sigmas") = std::vector<double>{20, 40, 60, 80},
      py::arg("step") = 0.01, py::arg("sigma_low") = 20.0, py::arg("sigma_high") = 80.0);
  m.def(
      "similarity",
      [](const Network& first, const Network& second) { return json_to_py(to_json(network_similarity(first, second))); },
      py::arg("first"), py::arg("second"), "base filters of first against second's filters at alpha = 1");
  m.def(
      "macs",
      [](const NetworkSpec& spec, std::size_t h, std::size_t w, const std::vector<std::size_t>& groups) {
        return json_to_py(to_json(macs_instrumented(spec, h, w, groups)));
      },
      py::arg("spec") = NetworkSpec{}, py::arg("height") = 32, py::arg("width") = 32,
      py::arg("groups") = std::vector<std::size_t>{1, 16});
  m.def("macs_paper_ftn", &macs_paper_ftn, py::arg("kh"), py::arg("kw"), py::arg("c_in"), py::arg("c_out"),
        py::arg("groups"), py::arg("depth"));
  m.def("macs_feature_tuning", &macs_feature_tuning, py::arg("h"), py::arg("w"), py::arg("kh"), py::arg("kw"),
        py::arg("c_in"), py::arg("c_out"));
  m.def(
      "gradient_suite",
      [](std::uint64_t seed, std::size_t instances) {
        std::vector<OpGradReport> reports;
        {
          py::gil_scoped_release release;
          reports = run_gradient_suite(seed, instances);
        }
        py::dict d;
        for (const auto& r : reports) d[py::str(r.op)] = r.worst_rel_error;
        return d;
      },
      py::arg("seed") = 1, py::arg("instances") = 20, "worst relative gradient error per operation");

  m.def("save_checkpoint", &save_checkpoint, py::arg("net"), py::arg("path"));
  m.def("load_checkpoint", &load_checkpoint, py::arg("path"));
  m.def(
      "read_image", [](const std::filesystem::path& p) { return to_array(read_image(p)); }, py::arg("path"));
  m.def(
      "write_image", [](const Array& img, const std::filesystem::path& p) { write_image(to_tensor(img), p); },
      py::arg("image"), py::arg("path"));
  m.def("set_worker_limit", &set_worker_limit, py::arg("limit"));
}
