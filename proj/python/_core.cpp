#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>
#include <string>
#include <vector>

#include "tipcache/cache.hpp"
#include "tipcache/datastore.hpp"
#include "tipcache/ensemble.hpp"
#include "tipcache/error.hpp"
#include "tipcache/finetune.hpp"
#include "tipcache/search.hpp"
#include "tipcache/types.hpp"

namespace py = pybind11;
using namespace tipcache;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using LabelArray = py::array_t<std::uint32_t, py::array::c_style | py::array::forcecast>;

FeatureMatrix to_matrix(const DoubleArray& a, const char* what) {
    if (a.ndim() == 1) {
        const auto n = static_cast<std::size_t>(a.shape(0));
        return FeatureMatrix(1, n, std::vector<double>(a.data(), a.data() + n));
    }
    if (a.ndim() != 2) throw py::value_error(std::string(what) + " must be 1-D or 2-D");
    const auto rows = static_cast<std::size_t>(a.shape(0));
    const auto cols = static_cast<std::size_t>(a.shape(1));
    return FeatureMatrix(rows, cols, std::vector<double>(a.data(), a.data() + rows * cols));
}

std::vector<double> to_vector(const DoubleArray& a, const char* what) {
    if (a.ndim() != 1) throw py::value_error(std::string(what) + " must be 1-D");
    return {a.data(), a.data() + a.shape(0)};
}

std::vector<std::uint32_t> to_labels(const LabelArray& a) {
    if (a.ndim() != 1) throw py::value_error("labels must be 1-D");
    return {a.data(), a.data() + a.shape(0)};
}

py::array_t<double> to_array(const FeatureMatrix& m) {
    py::array_t<double> out({m.rows(), m.cols()});
    if (!m.data().empty()) std::memcpy(out.mutable_data(), m.data().data(), m.data().size() * sizeof(double));
    return out;
}

py::array_t<double> to_array(const ScoreMatrix& m) {
    py::array_t<double> out({m.rows(), m.cols()});
    if (!m.data().empty()) std::memcpy(out.mutable_data(), m.data().data(), m.data().size() * sizeof(double));
    return out;
}

py::array_t<double> to_array(const std::vector<double>& v) {
    py::array_t<double> out(v.size());
    if (!v.empty()) std::memcpy(out.mutable_data(), v.data(), v.size() * sizeof(double));
    return out;
}

py::array_t<std::uint32_t> to_array(std::span<const std::uint32_t> v) {
    py::array_t<std::uint32_t> out(v.size());
    if (!v.empty()) std::memcpy(out.mutable_data(), v.data(), v.size() * sizeof(std::uint32_t));
    return out;
}

std::vector<double> query_vector(const DoubleArray& q) {
    if (q.ndim() == 2 && q.shape(0) == 1) return {q.data(), q.data() + q.shape(1)};
    return to_vector(q, "query");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Training-free key-value cache adapter for few-shot classification.";

    py::enum_<ErrorCode>(m, "ErrorCode")
        .value("DimensionMismatch", ErrorCode::DimensionMismatch)
        .value("LabelOutOfRange", ErrorCode::LabelOutOfRange)
        .value("NotNormalized", ErrorCode::NotNormalized)
        .value("EmptyCache", ErrorCode::EmptyCache)
        .value("EmptyInput", ErrorCode::EmptyInput)
        .value("InvalidArgument", ErrorCode::InvalidArgument)
        .value("BadMagic", ErrorCode::BadMagic)
        .value("UnsupportedVersion", ErrorCode::UnsupportedVersion)
        .value("Truncated", ErrorCode::Truncated)
        .value("TrailingData", ErrorCode::TrailingData)
        .value("RowMismatch", ErrorCode::RowMismatch)
        .value("Io", ErrorCode::Io)
        .value("ManifestParse", ErrorCode::ManifestParse);

    // tipcache::Error surfaces as TipcacheError(ValueError) with a `.code` attribute.
    py::object error_type = py::reinterpret_steal<py::object>(
        PyErr_NewException("tipcache._core.TipcacheError", PyExc_ValueError, nullptr));
    m.attr("TipcacheError") = error_type;
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            py::object type = py::module_::import("tipcache._core").attr("TipcacheError");
            py::object inst = type(e.what());
            inst.attr("code") = py::cast(e.code());
            PyErr_SetObject(type.ptr(), inst.ptr());
        }
    });

    py::class_<Hyperparams>(m, "Hyperparams")
        .def(py::init([](double alpha, double beta) { return Hyperparams{alpha, beta}; }),
             py::arg("alpha") = 1.0, py::arg("beta") = 5.5)
        .def_readwrite("alpha", &Hyperparams::alpha)
        .def_readwrite("beta", &Hyperparams::beta)
        .def("__repr__", [](const Hyperparams& h) {
            return "Hyperparams(alpha=" + py::repr(py::float_(h.alpha)).cast<std::string>() +
                   ", beta=" + py::repr(py::float_(h.beta)).cast<std::string>() + ")";
        });

    py::class_<CacheModel>(m, "Cache")
        .def_property_readonly("keys", [](const CacheModel& c) { return to_array(c.keys); })
        .def_property_readonly("labels", [](const CacheModel& c) { return to_array(c.values.indices()); })
        .def_property_readonly("num_classes", [](const CacheModel& c) { return c.num_classes; })
        .def_property_readonly("shots", [](const CacheModel& c) { return c.shots; })
        .def_property_readonly("keys_normalized", [](const CacheModel& c) { return c.keys.normalized(); })
        .def("__len__", &CacheModel::size)
        .def_property_readonly("dim", &CacheModel::dim)
        .def("__repr__", [](const CacheModel& c) {
            return "Cache(rows=" + std::to_string(c.size()) + ", dim=" + std::to_string(c.dim()) +
                   ", classes=" + std::to_string(c.num_classes) + ", shots=" + std::to_string(c.shots) + ")";
        });

    m.def(
        "build_cache",
        [](const DoubleArray& features, const LabelArray& labels, std::size_t num_classes) {
            return build_cache(to_matrix(features, "features"), to_labels(labels), num_classes);
        },
        py::arg("features"), py::arg("labels"), py::arg("num_classes"),
        "Cache whose keys are the unit-norm `features` and values the one-hot `labels`.");

    m.def("activation", &activation_phi, py::arg("x"), py::arg("beta"), "exp(-beta * (1 - x))");

    m.def(
        "predict",
        [](const DoubleArray& query, const CacheModel& cache, const DoubleArray& classifier,
           double alpha, double beta) {
            return to_array(predict(query_vector(query), cache, to_matrix(classifier, "classifier"),
                                    {alpha, beta}));
        },
        py::arg("query"), py::arg("cache"), py::arg("classifier"), py::arg("alpha") = 1.0,
        py::arg("beta") = 5.5, "Blended logits for one query.");

    m.def(
        "predict_batch",
        [](const DoubleArray& queries, const CacheModel& cache, const DoubleArray& classifier,
           double alpha, double beta) {
            const auto q = to_matrix(queries, "queries");
            const auto w = to_matrix(classifier, "classifier");
            ScoreMatrix s;
            {
                py::gil_scoped_release release;
                s = predict_batch(q, cache, w, {alpha, beta});
            }
            return to_array(s);
        },
        py::arg("queries"), py::arg("cache"), py::arg("classifier"), py::arg("alpha") = 1.0,
        py::arg("beta") = 5.5, "M x N logits; row m equals predict(queries[m], ...).");

    m.def(
        "predict_multimodal",
        [](const DoubleArray& query, const CacheModel& cache, const DoubleArray& textual_keys,
           double alpha, double beta) {
            return to_array(predict_multimodal(query_vector(query), cache,
                                               to_matrix(textual_keys, "textual_keys"), {alpha, beta}));
        },
        py::arg("query"), py::arg("cache"), py::arg("textual_keys"), py::arg("alpha") = 1.0,
        py::arg("beta") = 5.5, "Visual cache plus a linear textual cache with identity values.");

    m.def(
        "key_gradient",
        [](const DoubleArray& query, const CacheModel& cache, const DoubleArray& classifier,
           double alpha, double beta, std::size_t target) {
            return to_array(key_gradient(query_vector(query), cache, to_matrix(classifier, "classifier"),
                                         {alpha, beta}, target));
        },
        py::arg("query"), py::arg("cache"), py::arg("classifier"), py::arg("alpha"), py::arg("beta"),
        py::arg("target"), "Gradient of the cross-entropy loss with respect to the cache keys.");

    m.def(
        "softmax", [](const DoubleArray& logits) { return to_array(softmax(to_vector(logits, "logits"))); },
        py::arg("logits"));
    m.def(
        "ce_loss",
        [](const DoubleArray& logits, std::size_t target) { return ce_loss(to_vector(logits, "logits"), target); },
        py::arg("logits"), py::arg("target"));
    m.def("cosine_lr", &cosine_lr, py::arg("base"), py::arg("step"), py::arg("total"));

    py::class_<EpochStats>(m, "EpochStats")
        .def_readonly("epoch", &EpochStats::epoch)
        .def_readonly("loss", &EpochStats::loss)
        .def_readonly("accuracy", &EpochStats::accuracy)
        .def("__repr__", [](const EpochStats& e) {
            return "EpochStats(epoch=" + std::to_string(e.epoch) + ", loss=" + std::to_string(e.loss) +
                   ", accuracy=" + std::to_string(e.accuracy) + ")";
        });

    py::class_<TrainLog>(m, "TrainLog")
        .def_readonly("epochs", &TrainLog::epochs)
        .def_readonly("key_checksum", &TrainLog::key_checksum)
        .def("serialize", &TrainLog::serialize);

    m.def(
        "fine_tune",
        [](const CacheModel& cache, const DoubleArray& features, const LabelArray& labels,
           const DoubleArray& classifier, double alpha, double beta, std::size_t epochs,
           std::size_t batch_size, double lr, double weight_decay, double beta1, double beta2,
           double eps, std::uint64_t seed, bool shuffle, bool renormalize_keys,
           const std::string& optimizer) {
            FineTuneConfig cfg;
            cfg.epochs = epochs;
            cfg.batch_size = batch_size;
            cfg.learning_rate = lr;
            cfg.weight_decay = weight_decay;
            cfg.beta1 = beta1;
            cfg.beta2 = beta2;
            cfg.epsilon = eps;
            cfg.seed = seed;
            cfg.shuffle = shuffle;
            cfg.renormalize_keys = renormalize_keys;
            if (optimizer == "adamw") {
                cfg.optimizer = OptimizerKind::AdamW;
            } else if (optimizer == "sgd") {
                cfg.optimizer = OptimizerKind::Sgd;
            } else {
                throw py::value_error("optimizer must be 'adamw' or 'sgd'");
            }
            const auto x = to_matrix(features, "features");
            const auto y = to_labels(labels);
            const auto w = to_matrix(classifier, "classifier");
            FineTuneResult r;
            {
                py::gil_scoped_release release;
                r = fine_tune(cache, x, y, w, {alpha, beta}, cfg);
            }
            return py::make_tuple(std::move(r.cache), std::move(r.log));
        },
        py::arg("cache"), py::arg("features"), py::arg("labels"), py::arg("classifier"),
        py::arg("alpha") = 1.0, py::arg("beta") = 5.5, py::arg("epochs") = 20,
        py::arg("batch_size") = 256, py::arg("lr") = 1e-3, py::arg("weight_decay") = 0.01,
        py::arg("beta1") = 0.9, py::arg("beta2") = 0.999, py::arg("eps") = 1e-8, py::arg("seed") = 1,
        py::arg("shuffle") = true, py::arg("renormalize_keys") = false, py::arg("optimizer") = "adamw",
        "Fine-tunes the cache keys; returns (cache, TrainLog).");

    py::class_<SearchResult>(m, "SearchResult")
        .def_property_readonly("best", [](const SearchResult& r) { return r.best; })
        .def_readonly("best_accuracy", &SearchResult::best_accuracy)
        .def_property_readonly("accuracies",
                               [](const SearchResult& r) {
                                   py::array_t<double> out({r.alpha_count, r.beta_count});
                                   for (std::size_t i = 0; i < r.cells.size(); ++i)
                                       out.mutable_data()[i] = r.cells[i].accuracy;
                                   return out;
                               })
        .def("serialize", &SearchResult::serialize);

    m.def(
        "grid_search",
        [](const CacheModel& cache, const DoubleArray& classifier, const DoubleArray& features,
           const LabelArray& labels, std::vector<double> alphas, std::vector<double> betas) {
            const auto w = to_matrix(classifier, "classifier");
            const auto x = to_matrix(features, "features");
            const auto y = to_labels(labels);
            const SearchGrid grid{std::move(alphas), std::move(betas)};
            py::gil_scoped_release release;
            return grid_search(cache, w, x, y, grid);
        },
        py::arg("cache"), py::arg("classifier"), py::arg("features"), py::arg("labels"),
        py::arg("alphas") = SearchGrid::ablation_default().alphas,
        py::arg("betas") = SearchGrid::ablation_default().betas,
        "Validation accuracy over the alpha x beta grid (alpha-major).");

    m.def("reduce_cache", &reduce_cache, py::arg("cache"), py::arg("per_class"), py::arg("seed") = 1,
          "Replaces each class's keys with `per_class` renormalized group means.");

    m.def(
        "compress_shots",
        [](const DoubleArray& features, const LabelArray& labels, std::size_t num_classes,
           std::size_t shots, std::size_t limit, std::uint64_t seed) {
            return compress_shots(to_matrix(features, "features"), to_labels(labels), num_classes,
                                  shots, limit, seed);
        },
        py::arg("features"), py::arg("labels"), py::arg("num_classes"), py::arg("shots"),
        py::arg("limit"), py::arg("seed") = 1);

    m.def(
        "ensemble_classifier",
        [](const std::vector<DoubleArray>& templates) {
            std::vector<FeatureMatrix> ms;
            for (const auto& t : templates) ms.push_back(to_matrix(t, "template"));
            return to_array(ensemble_classifier(ms));
        },
        py::arg("templates"), "Per-class mean of several prompt embeddings, renormalized.");

    m.def(
        "write_features",
        [](const DoubleArray& features, const std::filesystem::path& path, bool normalized) {
            auto f = to_matrix(features, "features");
            if (normalized) f.mark_normalized();
            write_features(f, path);
        },
        py::arg("features"), py::arg("path"), py::arg("normalized") = false);
    m.def(
        "read_features", [](const std::filesystem::path& path) { return to_array(read_features(path)); },
        py::arg("path"));
    m.def(
        "read_feature_header",
        [](const std::filesystem::path& path) {
            const auto h = read_feature_header(path);
            py::dict d;
            d["rows"] = h.rows;
            d["cols"] = h.cols;
            d["normalized"] = h.normalized;
            return d;
        },
        py::arg("path"));
    m.def(
        "write_labels",
        [](const LabelArray& labels, std::size_t num_classes, const std::filesystem::path& path) {
            write_labels(to_labels(labels), num_classes, path);
        },
        py::arg("labels"), py::arg("num_classes"), py::arg("path"));
    m.def(
        "read_labels",
        [](const std::filesystem::path& path) {
            const auto l = read_labels(path);
            return py::make_tuple(to_array(std::span<const std::uint32_t>(l.labels)), l.num_classes);
        },
        py::arg("path"), "Returns (labels, num_classes).");
    m.def("write_cache", &write_cache, py::arg("cache"), py::arg("path"));
    m.def("read_cache", &read_cache, py::arg("path"));
    m.def(
        "load_manifest",
        [](const std::filesystem::path& path) {
            const auto man = read_manifest(path);
            auto ds = load_dataset(man);
            py::dict d;
            d["split"] = man.split;
            d["features"] = to_array(ds.features);
            d["labels"] = to_array(std::span<const std::uint32_t>(ds.labels.labels));
            d["num_classes"] = ds.labels.num_classes;
            d["classes"] = ds.class_names;
            d["shots"] = man.shots;
            return d;
        },
        py::arg("path"), "Reads a dataset manifest and the files it references.");
}
