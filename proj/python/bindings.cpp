#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "softcir/constraints.hpp"
#include "softcir/error.hpp"
#include "softcir/evalkit.hpp"
#include "softcir/mtpipeline.hpp"
#include "softcir/softfilter.hpp"
#include "softcir/vecstore.hpp"

namespace py = pybind11;
using namespace softcir;

namespace {

py::object* g_error_type = nullptr;

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

RankedList to_ranked(const std::vector<std::string>& ids) {
  RankedList r;
  double s = static_cast<double>(ids.size());
  for (const auto& id : ids) r.entries.push_back({id, s--});
  return r;
}

py::list ranked_to_py(const RankedList& r) {
  py::list out;
  for (const auto& e : r.entries) out.append(py::make_tuple(e.id, e.score));
  return out;
}

std::vector<float> as_vector(const FloatArray& a) {
  if (a.ndim() != 1) throw Error(ErrorKind::DimensionMismatch, "expected a 1-d array");
  return {a.data(), a.data() + a.size()};
}

EmbeddingMatrix matrix_from_numpy(std::vector<std::string> ids, const FloatArray& a, bool normalize) {
  if (a.ndim() != 2) throw Error(ErrorKind::DimensionMismatch, "expected a 2-d array");
  const auto n = static_cast<std::size_t>(a.shape(0));
  const auto d = static_cast<std::size_t>(a.shape(1));
  if (ids.size() != n) throw Error(ErrorKind::DimensionMismatch, "ids and rows differ in length");
  std::vector<EmbeddingRow> rows(n);
  for (std::size_t i = 0; i < n; ++i) {
    rows[i].id = std::move(ids[i]);
    rows[i].values.assign(a.data() + i * d, a.data() + (i + 1) * d);
  }
  return import_embeddings(rows, normalize);
}

py::array_t<float> matrix_data(const EmbeddingMatrix& m) {
  py::array_t<float> out({m.rows(), m.dim()});
  std::copy(m.data().begin(), m.data().end(), out.mutable_data());
  return out;
}

py::dict constraints_to_py(const DualConstraints& c) {
  return py::module_::import("json").attr("loads")(to_json(c).dump());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "softcir core bindings";

  py::enum_<ErrorKind> kind(m, "ErrorKind");
  for (int k = 0; k <= static_cast<int>(ErrorKind::IoError); ++k) {
    const auto e = static_cast<ErrorKind>(k);
    kind.value(std::string(to_string(e)).c_str(), e);
  }

  // leaked on purpose: must outlive interpreter teardown
  g_error_type = new py::object(py::exception<Error>(m, "SoftcirError"));
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object err = (*g_error_type)(e.what());
      err.attr("kind") = std::string(to_string(e.kind()));
      err.attr("exit_code") = exit_code_for(e.kind());
      PyErr_SetObject(g_error_type->ptr(), err.ptr());
    }
  });

  py::enum_<Variant>(m, "Variant")
      .value("BaseOnly", Variant::BaseOnly)
      .value("RewardOnly", Variant::RewardOnly)
      .value("PenaltyOnly", Variant::PenaltyOnly)
      .value("Full", Variant::Full);
  m.def("parse_variant", [](const std::string& s) { return parse_variant(s); });
  m.def("default_lambda", [](const std::string& style) { return default_lambda(parse_base_style(style)); },
        py::arg("style"));

  m.def("soft_score", [](double b, double r, double p) { return soft_score({b, r, p}); }, py::arg("base"),
        py::arg("reward"), py::arg("penalty"));
  m.def("fuse", &fuse, py::arg("base"), py::arg("soft"), py::arg("lam"));
  m.def("variant_score", [](double b, double r, double p, Variant v) { return variant_score({b, r, p}, v); },
        py::arg("base"), py::arg("reward"), py::arg("penalty"), py::arg("variant"));

  m.def(
      "rerank",
      [](const ScoreMap& base, const ScoreMap& reward, const ScoreMap& penalty, double lam, Variant variant,
         bool minmax_base) {
        RerankConfig cfg;
        cfg.lambda = lam;
        cfg.variant = variant;
        cfg.minmax_base = minmax_base;
        const auto out = rerank(base, reward, penalty, cfg);
        py::list rows;
        for (const auto& b : out.breakdown) {
          py::dict d;
          d["id"] = b.id;
          d["base"] = b.base;
          d["reward"] = b.reward;
          d["penalty"] = b.penalty;
          d["soft"] = b.soft;
          d["final"] = b.final_score;
          rows.append(d);
        }
        return rows;
      },
      py::arg("base"), py::arg("reward"), py::arg("penalty"), py::arg("lam") = 1.0,
      py::arg("variant") = Variant::Full, py::arg("minmax_base") = false,
      "Candidates ordered by fused score, ties by ascending id.");

  m.def(
      "top_k", [](const ScoreMap& scores, std::size_t k) { return ranked_to_py(top_k(scores, k)); },
      py::arg("scores"), py::arg("k"));

  py::class_<EmbeddingMatrix>(m, "EmbeddingMatrix")
      .def_property_readonly("ids", &EmbeddingMatrix::ids)
      .def_property_readonly("dim", &EmbeddingMatrix::dim)
      .def_property_readonly("normalized", &EmbeddingMatrix::normalized)
      .def("__len__", &EmbeddingMatrix::rows)
      .def("data", &matrix_data)
      .def("row", [](const EmbeddingMatrix& mat, const std::string& id) {
        const auto r = mat.row(id);
        return py::array_t<float>(static_cast<py::ssize_t>(r.size()), r.data());
      })
      .def("__contains__", &EmbeddingMatrix::contains)
      .def("__eq__", &EmbeddingMatrix::operator==);

  m.def("import_embeddings", &matrix_from_numpy, py::arg("ids"), py::arg("vectors"), py::arg("normalize") = true);
  m.def("read_store", &read_store, py::arg("path"));
  m.def("write_store", &write_store, py::arg("path"), py::arg("matrix"));
  m.def(
      "similarities",
      [](const EmbeddingMatrix& store, const FloatArray& q) {
        const auto v = as_vector(q);
        return similarities(store, v);
      },
      py::arg("store"), py::arg("query"));

  m.def(
      "recall_at_k", [](const std::vector<std::string>& ranked, const IdSet& gt, std::size_t k) {
        return recall_at_k(to_ranked(ranked), gt, k);
      },
      py::arg("ranked"), py::arg("gt"), py::arg("k"));
  m.def(
      "recall_subset_at_k",
      [](const std::vector<std::string>& ranked, const IdSet& subset, const IdSet& gt, std::size_t k) {
        return recall_subset_at_k(to_ranked(ranked), subset, gt, k);
      },
      py::arg("ranked"), py::arg("subset"), py::arg("gt"), py::arg("k"));
  m.def(
      "average_precision_at_k", [](const std::vector<std::string>& ranked, const IdSet& gt, std::size_t k) {
        return average_precision_at_k(to_ranked(ranked), gt, k);
      },
      py::arg("ranked"), py::arg("gt"), py::arg("k"));

  m.def(
      "build_dual_constraint_prompt",
      [](const std::string& mod_text, const std::string& ref_id, const std::string& caption) {
        const auto p = build_dual_constraint_prompt(mod_text, ImageRef{ref_id, {}, caption});
        return py::make_tuple(p.text, p.trailer);
      },
      py::arg("mod_text"), py::arg("reference_id"), py::arg("caption") = "");
  m.def(
      "parse_constraint_response", [](const std::string& raw) { return constraints_to_py(parse_constraint_response(raw)); },
      py::arg("raw"));

  m.def("fnv1a64", [](const std::string& s) { return fnv1a64(s); }, py::arg("text"));
  py::class_<SplitMix64>(m, "SplitMix64")
      .def(py::init<std::uint64_t>(), py::arg("seed"))
      .def("next", &SplitMix64::next);
  m.def(
      "sample_contrastive_triplet",
      [](const std::string& query_id, const std::vector<std::string>& pool, std::uint64_t seed) {
        MultiTargetRecord rec;
        rec.query.query_id = query_id;
        for (const auto& id : pool) rec.valid_targets.push_back({id, 1.0, Criterion::OriginalGroundTruth});
        const auto draw = sample_contrastive_triplet(rec, seed);
        return py::make_tuple(draw.target, py::make_tuple(draw.distractors[0], draw.distractors[1]));
      },
      py::arg("query_id"), py::arg("pool"), py::arg("seed"));
}
