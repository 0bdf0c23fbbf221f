#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "markovlab/harness.hpp"

namespace py = pybind11;
using namespace markovlab;

namespace {

// Reports cross the boundary as plain dicts.
py::object to_python(const nlohmann::json& j) {
  py::object loads = py::module_::import("json").attr("loads");
  return loads(j.dump());
}

nlohmann::json from_python(const py::object& o) {
  py::object dumps = py::module_::import("json").attr("dumps");
  return nlohmann::json::parse(dumps(o).cast<std::string>());
}

std::vector<Transformation> parse_all(const SyntheticLanguage& lang, const std::vector<std::string>& lines) {
  std::vector<Transformation> out;
  for (const auto& l : lines) out.push_back(parse_transformation(lang, l));
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Markov kernels, a synthetic implication language and invariance metrics";
  py::register_exception<Error>(m, "MarkovlabError", PyExc_ValueError);

  py::class_<Vocabulary>(m, "Vocabulary")
      .def(py::init(&make_vocabulary), py::arg("surfaces"))
      .def_static("read", &read_vocabulary)
      .def("write", [](const Vocabulary& v, const std::string& p) { write_vocabulary(v, p); })
      .def("__len__", &Vocabulary::size)
      .def_property_readonly("eos", &Vocabulary::eos)
      .def_property_readonly("pad", &Vocabulary::pad)
      .def_property_readonly("surfaces", &Vocabulary::surfaces)
      .def("id", [](const Vocabulary& v, const std::string& s) { return v.id(s); })
      .def("encode", [](const Vocabulary& v, const std::string& s) { return v.encode(s); })
      .def("decode", [](const Vocabulary& v, const TokenSeq& ids) { return v.decode(ids); })
      .def("__eq__", &Vocabulary::operator==);

  py::class_<Kernel>(m, "Kernel")
      .def_property_readonly("order", &Kernel::order)
      .def_property_readonly("type_name", &Kernel::type_name)
      .def_property_readonly("vocabulary", &Kernel::vocabulary, py::return_value_policy::reference_internal)
      .def("evaluate", [](const Kernel& k, const TokenSeq& x) {
        auto d = k.evaluate(x);
        return std::vector<double>(d.probs().begin(), d.probs().end());
      });

  py::class_<NGramKernel, Kernel>(m, "NGramKernel")
      .def_property_readonly("alpha", &NGramKernel::alpha)
      .def("count", &NGramKernel::count)
      .def("total", &NGramKernel::total)
      .def("write", [](const NGramKernel& k, const std::string& p) { write_kernel_file(k, p); });
  py::class_<TabularKernel, Kernel>(m, "TabularKernel");
  py::class_<neural::NeuralKernel, Kernel>(m, "NeuralKernel")
      .def("parameters", [](const neural::NeuralKernel& k) { return k.parameters().values; })
      .def("write", [](const neural::NeuralKernel& k, const std::string& p) {
        neural::write_model_file(k.parameters(), k.vocabulary(), p);
      });

  m.def(
      "estimate_ngram",
      [](const Vocabulary& v, const std::vector<TokenSeq>& corpus, std::size_t n, double alpha, bool uniform) {
        return estimate_ngram(v, corpus, n, alpha, uniform ? Fallback::uniform : Fallback::strict);
      },
      py::arg("vocab"), py::arg("corpus"), py::arg("n"), py::arg("alpha") = 0.0, py::arg("uniform_fallback") = false);
  m.def("load_kernel", [](const std::string& p) { return harness::load_kernel(p); });
  m.def(
      "greedy_rollout", [](const Kernel& k, const TokenSeq& prompt, std::size_t max_new) {
        return greedy_rollout(k, prompt, max_new);
      },
      py::arg("kernel"), py::arg("prompt"), py::arg("max_new"));
  m.def(
      "sample_rollout",
      [](const Kernel& k, const TokenSeq& prompt, std::size_t max_new, std::uint64_t seed, double temperature) {
        return sample_rollout(k, prompt, max_new, seed, temperature);
      },
      py::arg("kernel"), py::arg("prompt"), py::arg("max_new"), py::arg("seed"), py::arg("temperature") = 1.0);
  m.def(
      "log_likelihood",
      [](const Kernel& k, const TokenSeq& s, std::size_t start) { return log_likelihood(k, s, start).nats; },
      py::arg("kernel"), py::arg("sequence"), py::arg("start") = 0);

  py::class_<SyntheticLanguage>(m, "SyntheticLanguage")
      .def(py::init<int>(), py::arg("num_entities"))
      .def_property_readonly("vocabulary", &SyntheticLanguage::vocabulary, py::return_value_policy::reference_internal)
      .def_property_readonly("num_entities", &SyntheticLanguage::num_entities)
      .def("entity_token", &SyntheticLanguage::entity_token);

  py::class_<InferenceInstance>(m, "InferenceInstance")
      .def_readonly("context", &InferenceInstance::context)
      .def_readonly("required_token", &InferenceInstance::required_token)
      .def_readonly("rule_id", &InferenceInstance::rule_id);

  m.def(
      "generate_corpus",
      [](int entities, int statements, int depth, int distractors, std::uint64_t seed, std::size_t count) {
        LanguageSpec spec{entities, statements, depth, distractors, seed};
        auto g = generate_corpus(spec, count);
        std::vector<TokenSeq> seqs;
        for (const auto& s : g.sequences) seqs.push_back(s.tokens);
        return py::make_tuple(seqs, g.instances);
      },
      py::arg("num_entities"), py::arg("statements"), py::arg("depth"), py::arg("distractors") = 0,
      py::arg("seed") = 0, py::arg("count") = 100,
      "Returns (token sequences, inference instances).");
  m.def(
      "validate_sequence",
      [](const SyntheticLanguage& lang, const TokenSeq& tokens) {
        return validate_sequence(lang, sequence_from_tokens(lang, tokens)).ok;
      });

  m.def("apply_transformation", [](const SyntheticLanguage& lang, const std::string& t, const TokenSeq& x) {
    return apply(lang, parse_transformation(lang, t), x);
  });
  m.def("compose", [](const SyntheticLanguage& lang, const std::string& outer, const std::string& inner) {
    return format_transformation(compose(parse_transformation(lang, outer), parse_transformation(lang, inner)));
  });

  m.def("tv_distance", [](const std::vector<double>& p, const std::vector<double>& q) {
    return tv_distance(Distribution::from_probs(p), Distribution::from_probs(q));
  });
  m.def(
      "combined_report",
      [](const Kernel& k, const SyntheticLanguage& lang, const std::vector<InferenceInstance>& instances,
         const std::vector<std::string>& transforms) {
        return to_python(report_to_json(combined_report(k, lang, instances, parse_all(lang, transforms))));
      },
      py::arg("kernel"), py::arg("language"), py::arg("instances"), py::arg("transforms"),
      "Transformations use the text format, e.g. 'perm E0:E1,E1:E0' or 'reorder 1,0'.");
  m.def("validate_report", [](const py::object& report) { validate_report_json(from_python(report)); });

  m.def(
      "train_transformer",
      [](const Vocabulary& v, const std::vector<TokenSeq>& corpus, std::size_t d_model, std::size_t layers,
         std::size_t context_len, double lr, std::size_t steps, std::size_t batch_size, std::uint64_t seed) {
        neural::ModelConfig mc;
        mc.d_model = d_model;
        mc.n_layers = layers;
        mc.context_len = context_len;
        mc.vocab_size = v.size();
        mc.init_seed = seed;
        neural::TrainConfig tc;
        tc.lr = lr;
        tc.steps = steps;
        tc.batch_size = batch_size;
        tc.shuffle_seed = seed;
        neural::TrainResult r;
        {
          py::gil_scoped_release release;
          r = neural::train(mc, tc, v, corpus);
        }
        return py::make_tuple(neural::as_kernel(r.params, v), r.loss_curve);
      },
      py::arg("vocab"), py::arg("corpus"), py::arg("d_model") = 32, py::arg("layers") = 1,
      py::arg("context_len") = 32, py::arg("lr") = 1e-3, py::arg("steps") = 1000, py::arg("batch_size") = 32,
      py::arg("seed") = 0, "Returns (kernel, loss curve).");
  m.def(
      "gradcheck",
      [](const neural::NeuralKernel& k, const std::vector<TokenSeq>& batch, double eps, std::uint64_t seed) {
        auto r = neural::finite_diff_check(k.parameters(), k.vocabulary(), batch, eps, seed);
        return py::make_tuple(r.max_relative_error, r.coordinates, r.worst_tensor);
      },
      py::arg("kernel"), py::arg("batch"), py::arg("eps") = 1e-5, py::arg("seed") = 0);

  m.def("run_experiment", [](const py::object& config) {
    auto cfg = harness::config_from_json(from_python(config));
    harness::ExperimentResult r;
    {
      py::gil_scoped_release release;
      r = harness::run_experiment(cfg);
    }
    py::dict reports;
    for (const auto& run : r.runs) reports[py::str(run.name)] = to_python(report_to_json(run.report));
    return py::make_tuple(reports, r.files);
  });
  m.def("sha256_hex", &harness::sha256_hex);
}
