#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <filesystem>
#include <optional>

#include "icssn/checkpoint.hpp"
#include "icssn/config.hpp"
#include "icssn/data.hpp"
#include "icssn/dataset_io.hpp"
#include "icssn/errors.hpp"
#include "icssn/log.hpp"
#include "icssn/metrics.hpp"
#include "icssn/orchestrator.hpp"
#include "icssn/segmentation.hpp"

namespace py = pybind11;
using namespace icssn;

namespace {

using U8 = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;
using F64 = py::array_t<double, py::array::c_style | py::array::forcecast>;

Mask to_mask(const U8& a) {
  if (a.ndim() != 2) throw ShapeError("mask must be a 2-D array");
  Mask m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  const auto* p = a.data();
  for (std::size_t i = 0; i < m.labels.size(); ++i) m.labels[i] = p[i] ? 1 : 0;
  return m;
}

U8 from_mask(const Mask& m) {
  U8 out({m.height, m.width});
  std::copy(m.labels.begin(), m.labels.end(), out.mutable_data());
  return out;
}

U8 from_tile(const Tile& t) {
  U8 out({t.height, t.width, 3});
  std::copy(t.pixels.begin(), t.pixels.end(), out.mutable_data());
  return out;
}

torch::Tensor to_tensor(const F64& a) {
  std::vector<std::int64_t> shape(a.shape(), a.shape() + a.ndim());
  return torch::from_blob(const_cast<double*>(a.data()), shape, torch::kFloat64).clone();
}

Config config_from(const std::string& path) { return path.empty() ? Config{} : load_config(path); }

std::string dump(const nlohmann::json& j) { return j.dump(); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Bindings for the icssn C++ library";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
  py::register_exception<SizeError>(m, "SizeError", PyExc_ValueError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_RuntimeError);
  py::register_exception<TrainingError>(m, "TrainingError", PyExc_RuntimeError);

  m.def("set_log_level", [](int level) { log::set_level(static_cast<log::Level>(level)); });

  m.def("default_config_ini", [] { return to_ini(Config{}); });
  m.def("load_config_ini", [](const std::string& path) { return to_ini(load_config(path)); });

  m.def(
      "synth",
      [](const std::string& config, std::uint64_t seed) {
        const auto cfg = config_from(config);
        py::list out;
        for (const auto& s : generate_synthetic_dataset(cfg.synth, seed))
          out.append(py::make_tuple(s.id, from_tile(s.tile), from_mask(s.mask), std::string(to_string(s.object_label))));
        return out;
      },
      py::arg("config") = "", py::arg("seed") = 0);

  m.def(
      "write_synthetic_dataset",
      [](const std::string& config, std::uint64_t seed, const std::string& out) {
        const auto cfg = config_from(config);
        const auto samples = generate_synthetic_dataset(cfg.synth, seed);
        write_dataset(out, samples, split_dataset(samples, cfg.data.split, seed));
        return samples.size();
      },
      py::arg("config"), py::arg("seed"), py::arg("out"));

  m.def(
      "socl_labels",
      [](const U8& mask, int block, int lo, int hi) {
        const auto g = derive_socl_labels(to_mask(mask), block, lo, hi);
        U8 out({g.rows, g.cols});
        std::transform(g.labels.begin(), g.labels.end(), out.mutable_data(),
                       [](SoclLabel l) { return static_cast<std::uint8_t>(l); });
        return out;
      },
      py::arg("mask"), py::arg("block") = 8, py::arg("lo") = 7, py::arg("hi") = 57);

  m.def(
      "pixel_metrics",
      [](const U8& pred, const U8& truth) {
        const auto c = confusion_counts(to_mask(pred), to_mask(truth));
        return dump({{"counts", to_json(c)}, {"metrics", to_json(pixel_metrics(c))}});
      },
      py::arg("pred"), py::arg("truth"));

  m.def(
      "contrastive_loss",
      [](const F64& anchors, const F64& positives, const F64& negatives, py::array_t<bool> positive_mask, double tau) {
        SoclPairBatch b;
        b.anchors = to_tensor(anchors);
        b.positives = to_tensor(positives);
        b.negatives = to_tensor(negatives);
        auto pm = positive_mask.unchecked<2>();
        b.positive_mask = torch::zeros({pm.shape(0), pm.shape(1)}, torch::kBool);
        for (py::ssize_t i = 0; i < pm.shape(0); ++i)
          for (py::ssize_t j = 0; j < pm.shape(1); ++j) b.positive_mask[i][j] = pm(i, j);
        b.tau = tau;
        return supervised_contrastive_loss(b).value.item<double>();
      },
      py::arg("anchors"), py::arg("positives"), py::arg("negatives"), py::arg("positive_mask"), py::arg("tau"));

  m.def(
      "complexity",
      [](const std::string& config, int input_size) { return dump(to_json(measure_complexity(config_from(config), input_size))); },
      py::arg("config") = "", py::arg("input_size") = 512);

  m.def(
      "train",
      [](const std::string& config, const std::string& data, const std::string& out, std::optional<int> rounds) {
        const auto cfg = config_from(config);
        py::gil_scoped_release release;
        const auto splits = load_splits(data, cfg.data.equalize, cfg.data.augmentations, cfg.training.workers);
        RunOptions ro;
        ro.out_dir = out;
        ro.max_rounds = rounds;
        auto res = run_iterative_training(splits, cfg, ro);
        save_checkpoint(res.classification, std::filesystem::path(out) / "classification.pt");
        save_checkpoint(res.segmentation, std::filesystem::path(out) / "segmentation.pt");
        return dump(res.round_log);
      },
      py::arg("config"), py::arg("data"), py::arg("out"), py::arg("rounds") = py::none());

  m.def(
      "evaluate",
      [](const std::string& checkpoint, const std::string& data, const std::string& split) {
        const auto ck = load_checkpoint(checkpoint);
        const auto cfg = parse_config(ck.meta.config_ini);
        const auto splits = load_splits(data, cfg.data.equalize, cfg.data.augmentations, cfg.training.workers);
        const auto& samples = split == "train" ? splits.train : split == "val" ? splits.val : splits.test;
        IcssnModel model(cfg);
        if (ck.meta.branch == "classification") {
          restore(*model.classification, ck);
          return dump(to_json(evaluate_classification(model.classification, samples)));
        }
        restore(*model.segmentation, ck);
        return dump(to_json(evaluate_segmentation(model.segmentation, samples, cfg.object_rule)));
      },
      py::arg("checkpoint"), py::arg("data"), py::arg("split") = "test");
}
