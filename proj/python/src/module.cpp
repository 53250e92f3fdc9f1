// Python bindings for the segmil engine.
#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "segmil/bagbuild.hpp"
#include "segmil/bagio.hpp"
#include "segmil/checkpoint.hpp"
#include "segmil/error.hpp"
#include "segmil/metrics.hpp"
#include "segmil/milmodel.hpp"
#include "segmil/synthbench.hpp"
#include "segmil/training.hpp"

namespace py = pybind11;
using namespace segmil;

namespace {

std::vector<const Bag*> pointers(const std::vector<Bag>& bags) {
  std::vector<const Bag*> out;
  out.reserve(bags.size());
  for (const auto& b : bags) out.push_back(&b);
  return out;
}

py::dict tensors_dict(const Tensors& t) {
  py::dict d;
  for (const auto& ref : t.refs()) {
    py::array_t<double> arr(ref.shape);
    std::copy(ref.data.begin(), ref.data.end(), arr.mutable_data());
    d[ref.name] = arr;
  }
  return d;
}

void set_tensor(Tensors& t, const std::string& name, const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  for (auto& ref : t.refs())
    if (name == ref.name) {
      if (static_cast<std::size_t>(a.size()) != ref.data.size()) throw SchemaError("tensor " + name + ": size mismatch");
      std::copy(a.data(), a.data() + a.size(), ref.data.begin());
      return;
    }
  throw SchemaError("no tensor named " + name);
}

py::dict report_dict(const EvalReport& r) {
  py::dict d;
  d["n_total"] = r.n_total;
  d["n_correct"] = r.n_correct;
  d["avg_acc"] = r.avg_acc;
  d["per_group_acc"] = r.per_group_acc;
  d["n_per_group"] = r.n_per_group;
  d["worst_group_acc"] = r.worst_group_acc;
  return d;
}

py::dict stats_dict(const FieldStats& s) {
  py::dict d;
  d["n"] = s.n;
  d["mean"] = s.mean;
  d["std"] = s.stddev;
  d["ci95"] = s.ci95;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Concept-guided multiple-instance concept bottleneck engine";

  auto base = py::register_exception<Error>(m, "Error");
  auto schema = py::register_exception<SchemaError>(m, "SchemaError", base.ptr());
  py::register_exception<ParseError>(m, "ParseError", schema.ptr());
  py::register_exception<FormatError>(m, "FormatError", schema.ptr());
  py::register_exception<ProtocolError>(m, "ProtocolError", schema.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<NumericalError>(m, "NumericalError", base.ptr());

  // Data model.
  py::class_<BBox>(m, "BBox")
      .def(py::init<double, double, double, double>(), py::arg("x_min"), py::arg("y_min"), py::arg("x_max"),
           py::arg("y_max"))
      .def_readwrite("x_min", &BBox::x_min)
      .def_readwrite("y_min", &BBox::y_min)
      .def_readwrite("x_max", &BBox::x_max)
      .def_readwrite("y_max", &BBox::y_max)
      .def(py::self == py::self);

  py::class_<Instance>(m, "Instance")
      .def(py::init([](std::vector<double> embedding, std::vector<double> clip_scores, std::vector<int> concept_ids,
                       std::optional<BBox> bbox, std::optional<std::int64_t> mask_area) {
             return Instance{std::move(embedding), std::move(clip_scores), std::move(concept_ids), bbox, mask_area};
           }),
           py::arg("embedding"), py::arg("clip_scores"), py::arg("concept_ids") = std::vector<int>{},
           py::arg("bbox") = py::none(), py::arg("mask_area") = py::none())
      .def_readwrite("embedding", &Instance::embedding)
      .def_readwrite("clip_scores", &Instance::clip_scores)
      .def_readwrite("concept_ids", &Instance::concept_ids)
      .def_readwrite("bbox", &Instance::bbox)
      .def_readwrite("mask_area", &Instance::mask_area)
      .def(py::self == py::self);

  py::class_<Bag>(m, "Bag")
      .def(py::init([](std::string image_id, int label, std::optional<int> group_id, std::vector<Instance> instances) {
             return Bag{std::move(image_id), label, group_id, std::move(instances)};
           }),
           py::arg("image_id"), py::arg("label"), py::arg("group_id") = py::none(),
           py::arg("instances") = std::vector<Instance>{})
      .def_readwrite("image_id", &Bag::image_id)
      .def_readwrite("label", &Bag::label)
      .def_readwrite("group_id", &Bag::group_id)
      .def_readwrite("instances", &Bag::instances)
      .def("embeddings", &Bag::embeddings)
      .def("clip_matrix", &Bag::clip_matrix)
      .def(py::self == py::self);

  py::class_<DatasetManifest>(m, "DatasetManifest")
      .def(py::init([](int num_classes, int D, int C, std::vector<std::string> names, const std::string& split) {
             return DatasetManifest{num_classes, D, C, std::move(names), split_from_string(split)};
           }),
           py::arg("num_classes"), py::arg("D"), py::arg("C"), py::arg("concept_names"), py::arg("split") = "train")
      .def_readwrite("num_classes", &DatasetManifest::num_classes)
      .def_readwrite("D", &DatasetManifest::D)
      .def_readwrite("C", &DatasetManifest::C)
      .def_readwrite("concept_names", &DatasetManifest::concept_names)
      .def_property(
          "split", [](const DatasetManifest& d) { return to_string(d.split); },
          [](DatasetManifest& d, const std::string& s) { d.split = split_from_string(s); })
      .def(py::self == py::self);

  py::class_<Dataset>(m, "Dataset")
      .def_readwrite("manifest", &Dataset::manifest)
      .def_readwrite("bags", &Dataset::bags);

  m.def("read_bagpack", &read_bagpack, py::arg("path"));
  m.def(
      "write_bagpack",
      [](const DatasetManifest& manifest, const std::vector<Bag>& bags, const std::filesystem::path& path) {
        write_bagpack(manifest, bags, path);
      },
      py::arg("manifest"), py::arg("bags"), py::arg("path"));

  // Bag construction.
  py::class_<BinaryMask>(m, "BinaryMask")
      .def(py::init<int, int>(), py::arg("height"), py::arg("width"))
      .def_static("from_rle", &BinaryMask::from_rle, py::arg("height"), py::arg("width"), py::arg("counts"))
      .def("to_rle", &BinaryMask::to_rle)
      .def("area", &BinaryMask::area)
      .def("at", &BinaryMask::at)
      .def("set", &BinaryMask::set, py::arg("row"), py::arg("col"), py::arg("on") = true)
      .def_property_readonly("height", &BinaryMask::height)
      .def_property_readonly("width", &BinaryMask::width)
      .def(py::self == py::self);

  m.def("softmax", [](const std::vector<double>& x) { return softmax(x); }, py::arg("logits"));
  m.def(
      "select_top_concepts", [](const std::vector<double>& sims, int k) { return select_top_concepts(sims, k); },
      py::arg("image_similarities"), py::arg("k_top"));
  m.def("mask_iou", &mask_iou, py::arg("a"), py::arg("b"));
  m.def(
      "merge_masks",
      [](const std::vector<BinaryMask>& masks, double tau_iou) {
        std::vector<RawDetection> dets(masks.size());
        for (std::size_t i = 0; i < masks.size(); ++i) dets[i].mask = masks[i];
        std::vector<std::pair<BinaryMask, std::vector<std::size_t>>> out;
        for (auto& md : merge_overlapping(dets, tau_iou)) out.emplace_back(md.mask, md.members);
        return out;
      },
      py::arg("masks"), py::arg("tau_iou") = 0.5,
      "Merges overlapping masks; returns (merged mask, member indices) pairs by descending area.");

  // Model.
  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init([](const std::string& attention, int attention_hidden, bool aggregate_normalized, double temperature) {
             return ModelConfig{attention_from_string(attention), attention_hidden, aggregate_normalized, temperature};
           }),
           py::arg("attention") = "mlp", py::arg("attention_hidden") = 128, py::arg("aggregate_normalized") = true,
           py::arg("temperature") = 1.0)
      .def_property(
          "attention", [](const ModelConfig& c) { return to_string(c.attention); },
          [](ModelConfig& c, const std::string& s) { c.attention = attention_from_string(s); })
      .def_readwrite("attention_hidden", &ModelConfig::attention_hidden)
      .def_readwrite("aggregate_normalized", &ModelConfig::aggregate_normalized)
      .def_readwrite("temperature", &ModelConfig::temperature);

  py::class_<ModelParams>(m, "ModelParams")
      .def_readwrite("config", &ModelParams::config)
      .def_property_readonly("D", &ModelParams::dim)
      .def_property_readonly("C", &ModelParams::num_concepts)
      .def_property_readonly("num_classes", &ModelParams::num_classes)
      .def("tensors", [](const ModelParams& p) { return tensors_dict(p.tensors); },
           "Copies of every parameter tensor keyed by name (W_c, V, v, w, W_cls, b_cls).")
      .def(
          "set_tensor", [](ModelParams& p, const std::string& name, py::array_t<double, py::array::c_style | py::array::forcecast> a) {
            set_tensor(p.tensors, name, a);
          },
          py::arg("name"), py::arg("value"));

  m.def("init_params", &init_params, py::arg("D"), py::arg("C"), py::arg("num_classes"),
        py::arg("config") = ModelConfig{}, py::arg("seed") = 0);
  m.def(
      "forward",
      [](const ModelParams& p, const Matrix& H) {
        const auto tr = forward(p, H);
        py::dict d;
        d["z"] = tr.z;
        d["z_hat"] = tr.z_hat;
        d["alpha"] = tr.alpha;
        d["c_agg"] = tr.c_agg;
        d["logits"] = tr.logits;
        return d;
      },
      py::arg("params"), py::arg("H"));
  m.def("attention_weights", &attention_weights, py::arg("params"), py::arg("H"));
  m.def("normalize_rows", &normalize_rows, py::arg("Z"));

  // Training.
  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init([](double lr, double lambda_concept, int epochs, int batch_bags, std::uint64_t seed,
                       const ModelConfig& model, bool easy_hard, int workers) {
             TrainConfig c;
             c.adam.lr = lr;
             c.lambda_concept = lambda_concept;
             c.epochs = epochs;
             c.batch_bags = batch_bags;
             c.seed = seed;
             c.model = model;
             c.easy_hard.enabled = easy_hard;
             c.workers = workers;
             return c;
           }),
           py::arg("lr") = 1e-4, py::arg("lambda_concept") = 0.1, py::arg("epochs") = 50, py::arg("batch_bags") = 32,
           py::arg("seed") = 0, py::arg("model") = ModelConfig{}, py::arg("easy_hard") = false, py::arg("workers") = 1)
      .def_property(
          "lr", [](const TrainConfig& c) { return c.adam.lr; }, [](TrainConfig& c, double v) { c.adam.lr = v; })
      .def_readwrite("lambda_concept", &TrainConfig::lambda_concept)
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("batch_bags", &TrainConfig::batch_bags)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("model", &TrainConfig::model)
      .def_readwrite("workers", &TrainConfig::workers);

  m.def(
      "backward",
      [](const ModelParams& p, const std::vector<Bag>& bags, double lambda_concept) {
        const auto r = backward(p, pointers(bags), lambda_concept);
        return py::make_tuple(r.loss_total, tensors_dict(r.grads));
      },
      py::arg("params"), py::arg("bags"), py::arg("lambda_concept") = 0.1,
      "Returns (loss_total, gradients keyed by tensor name).");
  m.def(
      "train",
      [](const DatasetManifest& manifest, const std::vector<Bag>& bags, const TrainConfig& cfg) {
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train(manifest, bags, cfg);
        }
        py::list log;
        for (const auto& e : r.log) {
          py::dict d;
          d["epoch"] = e.epoch;
          d["loss_cls"] = e.loss_cls;
          d["loss_concept"] = e.loss_concept;
          d["loss_total"] = e.loss_total;
          d["train_acc"] = e.train_acc;
          log.append(d);
        }
        return py::make_tuple(r.params, log);
      },
      py::arg("manifest"), py::arg("bags"), py::arg("config") = TrainConfig{},
      "Returns (params, per-epoch log).");

  // Evaluation.
  m.def("predict", &predict, py::arg("params"), py::arg("bag"));
  m.def(
      "evaluate", [](const ModelParams& p, const std::vector<Bag>& bags, int workers) {
        return report_dict(evaluate(p, bags, workers));
      },
      py::arg("params"), py::arg("bags"), py::arg("workers") = 1);
  m.def(
      "corruption_report",
      [](const std::map<std::string, std::map<int, double>>& acc) {
        const auto r = corruption_report(acc);
        py::dict d;
        d["ce"] = r.ce;
        d["mean_ce"] = r.mean_ce;
        return d;
      },
      py::arg("accuracy"), "CE per corruption and their mean from {kind: {severity: accuracy}}.");
  m.def(
      "seed_aggregate", [](const std::vector<double>& values) { return stats_dict(seed_aggregate(values)); },
      py::arg("values"));

  // Synthetic benchmark.
  py::class_<SynthSpec>(m, "SynthSpec")
      .def(py::init<>())
      .def_readwrite("n_train", &SynthSpec::n_train)
      .def_readwrite("n_test", &SynthSpec::n_test)
      .def_readwrite("D", &SynthSpec::D)
      .def_readwrite("C", &SynthSpec::C)
      .def_readwrite("spurious_corr", &SynthSpec::spurious_corr)
      .def_readwrite("n_core", &SynthSpec::n_core)
      .def_readwrite("n_spur", &SynthSpec::n_spur)
      .def_readwrite("noise_sigma", &SynthSpec::noise_sigma)
      .def_readwrite("seed", &SynthSpec::seed);
  m.def(
      "generate",
      [](const SynthSpec& spec) {
        auto d = generate(spec);
        return py::make_tuple(d.train, d.test);
      },
      py::arg("spec") = SynthSpec{}, "Returns (train, test) datasets.");
  m.def("is_core_instance", &is_core_instance, py::arg("instance"));
  m.def(
      "corrupt",
      [](const std::vector<Bag>& bags, const std::string& kind, int severity, std::uint64_t seed) {
        return corrupt(bags, corruption_from_string(kind), severity, seed);
      },
      py::arg("bags"), py::arg("kind"), py::arg("severity"), py::arg("seed") = 0);

  // Checkpoints.
  m.def(
      "save_checkpoint",
      [](const ModelParams& p, const std::vector<std::string>& names, const std::filesystem::path& path) {
        save_checkpoint({p, names}, path);
      },
      py::arg("params"), py::arg("concept_names"), py::arg("path"));
  m.def(
      "load_checkpoint",
      [](const std::filesystem::path& path) {
        auto c = load_checkpoint(path);
        return py::make_tuple(c.params, c.concept_names);
      },
      py::arg("path"), "Returns (params, concept_names).");
}
