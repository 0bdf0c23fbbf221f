// markovlab command-line tool. Each subcommand wraps one library operation.
//
// Failures print a single line to stderr:
//   error: <category>: <message>
// with category one of usage, missing-file, format, runtime, and exit codes
// 2, 3, 4, 1 respectively.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "markovlab/harness.hpp"

namespace {

using namespace markovlab;

struct CliFailure {
  std::string category;
  std::string message;
  int code;
};

void require_file(const std::string& path) {
  if (!std::filesystem::is_regular_file(path)) throw CliFailure{"missing-file", path, 3};
}

// Parsing errors in input files are reported as format violations.
template <class F>
auto load(const std::string& path, F&& reader) {
  require_file(path);
  try {
    return reader(path);
  } catch (const Error& e) {
    throw CliFailure{"format", path + ": " + e.what(), 4};
  }
}

std::set<TransformKind> parse_kinds(const std::string& csv) {
  std::set<TransformKind> kinds;
  std::size_t start = 0;
  while (start <= csv.size()) {
    auto comma = csv.find(',', start);
    auto word = csv.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (!word.empty()) kinds.insert(parse_kind(word));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return kinds;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"markovlab: Markov-kernel invariance laboratory"};
  app.require_subcommand(1);

  // gen-corpus
  LanguageSpec spec;
  std::size_t count = 1000;
  std::string out_prefix = "corpus";
  auto* gen = app.add_subcommand("gen-corpus", "Generate a synthetic entailment corpus and its instances");
  gen->add_option("--entities", spec.num_entities, "Number of entities")->default_val(8);
  gen->add_option("--statements", spec.statements_per_sequence, "Implications per sequence")->default_val(3);
  gen->add_option("--depth", spec.chain_depth, "Modus-ponens steps from fact to answer")->default_val(1);
  gen->add_option("--distractors", spec.num_distractors, "Anchored distractors per sequence")->default_val(0);
  gen->add_option("--count", count, "Number of sequences")->default_val(1000);
  gen->add_option("--seed", spec.seed, "Generator seed")->default_val(0);
  gen->add_option("--out", out_prefix, "Output prefix (<prefix>.corpus, .inst, .vocab)")->default_val("corpus");

  // estimate
  std::string corpus_path, vocab_path, kernel_out;
  std::size_t order = 2;
  double alpha = 0.0;
  std::string fallback = "strict";
  auto* est = app.add_subcommand("estimate", "Estimate an n-gram kernel from a corpus");
  est->add_option("--corpus", corpus_path, "Corpus file")->required();
  est->add_option("--vocab", vocab_path, "Vocabulary file")->required();
  est->add_option("--n", order, "Conditioning tokens")->default_val(2);
  est->add_option("--alpha", alpha, "Additive smoothing")->default_val(0.0);
  est->add_option("--fallback", fallback, "strict|uniform")->default_val("strict");
  est->add_option("--out", kernel_out, "Kernel file to write")->required();

  // train
  neural::ModelConfig mc;
  neural::TrainConfig tc;
  std::string optimizer = "adam", loss_csv;
  auto* tr = app.add_subcommand("train", "Train the toy transformer on a corpus");
  tr->add_option("--corpus", corpus_path, "Corpus file")->required();
  tr->add_option("--vocab", vocab_path, "Vocabulary file")->required();
  tr->add_option("--d-model", mc.d_model)->default_val(32);
  tr->add_option("--layers", mc.n_layers)->default_val(1);
  tr->add_option("--context-len", mc.context_len)->default_val(32);
  tr->add_option("--init-seed", mc.init_seed)->default_val(0);
  tr->add_option("--init-scale", mc.init_scale)->default_val(0.02);
  tr->add_option("--optimizer", optimizer, "adam|sgd")->default_val("adam");
  tr->add_option("--lr", tc.lr)->default_val(3e-3);
  tr->add_option("--steps", tc.steps)->default_val(1000);
  tr->add_option("--batch-size", tc.batch_size)->default_val(32);
  tr->add_option("--shuffle-seed", tc.shuffle_seed)->default_val(0);
  tr->add_option("--loss-csv", loss_csv, "Write the loss curve here");
  tr->add_option("--out", kernel_out, "Model file to write")->required();

  // eval
  std::string kernel_path, instances_path, transforms_path, json_out;
  auto* ev = app.add_subcommand("eval", "Compute the invariance report for a kernel");
  ev->add_option("--kernel", kernel_path, "Kernel or model file")->required();
  ev->add_option("--instances", instances_path, "Instance file")->required();
  ev->add_option("--transforms", transforms_path, "Transformation file (applied to every instance)")->required();

  // rollout
  std::string prompt;
  std::size_t max_len = 16;
  bool greedy = false;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  auto* ro = app.add_subcommand("rollout", "Decode from a kernel");
  ro->add_option("--kernel", kernel_path, "Kernel or model file")->required();
  ro->add_option("--prompt", prompt, "Space-separated prompt surfaces")->required();
  ro->add_option("--max-len", max_len, "Maximum new tokens")->default_val(16);
  ro->add_flag("--greedy", greedy, "Greedy decoding (default: sampling)");
  ro->add_option("--temperature", temperature)->default_val(1.0);
  ro->add_option("--seed", seed)->default_val(0);

  // gradcheck
  double eps = 1e-5;
  std::size_t coords = 200, batch_size = 4;
  auto* gc = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
  gc->add_option("--model", kernel_path, "Model file (default: fresh initialization)");
  gc->add_option("--corpus", corpus_path, "Corpus file")->required();
  gc->add_option("--vocab", vocab_path, "Vocabulary file (when no --model)");
  gc->add_option("--d-model", mc.d_model)->default_val(32);
  gc->add_option("--layers", mc.n_layers)->default_val(1);
  gc->add_option("--context-len", mc.context_len)->default_val(32);
  gc->add_option("--init-seed", mc.init_seed)->default_val(0);
  gc->add_option("--init-scale", mc.init_scale)->default_val(0.1);
  gc->add_option("--batch-size", batch_size)->default_val(4);
  gc->add_option("--eps", eps)->default_val(1e-5);
  gc->add_option("--coords", coords)->default_val(200);
  gc->add_option("--seed", seed)->default_val(0);

  // gen-transforms
  std::string kinds_csv = "perm,reorder";
  auto* gt = app.add_subcommand("gen-transforms", "Sample transformations that preserve every corpus sequence");
  gt->add_option("--corpus", corpus_path, "Target corpus")->required();
  gt->add_option("--vocab", vocab_path, "Vocabulary file")->required();
  gt->add_option("--kinds", kinds_csv, "Comma-separated: perm,reorder,insert")->default_val("perm,reorder");
  gt->add_option("--count", count)->default_val(8);
  gt->add_option("--seed", seed)->default_val(0);
  gt->add_option("--out", kernel_out, "Transformation file to write")->required();

  // run
  std::string config_path;
  auto* run = app.add_subcommand("run", "Run a full experiment from a JSON config");
  run->add_option("--config", config_path, "Experiment config")->required();

  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
      std::cout << app.help();
      return 0;
    } catch (const CLI::CallForAllHelp&) {
      std::cout << app.help("", CLI::AppFormatMode::All);
      return 0;
    } catch (const CLI::ExtrasError& e) {
      throw CliFailure{"unknown-flag", e.what(), 2};
    } catch (const CLI::ParseError& e) {
      throw CliFailure{"usage", e.what(), 2};
    }

    if (gen->parsed()) {
      auto corpus = generate_corpus(spec, count);
      const SyntheticLanguage lang(spec.num_entities);
      std::vector<TokenSeq> seqs;
      for (const auto& s : corpus.sequences) seqs.push_back(s.tokens);
      write_corpus(lang.vocabulary(), seqs, out_prefix + ".corpus");
      write_instances(lang.vocabulary(), corpus.instances, out_prefix + ".inst");
      write_vocabulary(lang.vocabulary(), out_prefix + ".vocab");
    } else if (est->parsed()) {
      auto vocab = load(vocab_path, read_vocabulary);
      auto corpus = load(corpus_path, [&](const std::string& p) { return read_corpus(vocab, p); });
      if (fallback != "strict" && fallback != "uniform") throw CliFailure{"usage", "--fallback must be strict or uniform", 2};
      auto kernel = estimate_ngram(vocab, corpus, order, alpha, fallback == "strict" ? Fallback::strict : Fallback::uniform);
      write_kernel_file(kernel, kernel_out);
    } else if (tr->parsed()) {
      auto vocab = load(vocab_path, read_vocabulary);
      auto corpus = load(corpus_path, [&](const std::string& p) { return read_corpus(vocab, p); });
      mc.vocab_size = vocab.size();
      tc.optimizer = optimizer == "sgd" ? neural::Optimizer::sgd : neural::Optimizer::adam;
      auto result = neural::train(mc, tc, vocab, corpus);
      neural::write_model_file(result.params, vocab, kernel_out, {{"train", neural::train_config_to_json(tc)}});
      if (!loss_csv.empty()) {
        std::ofstream csv(loss_csv);
        csv << "step,loss\n";
        csv.precision(17);
        for (std::size_t i = 0; i < result.loss_curve.size(); ++i) csv << i << ',' << result.loss_curve[i] << '\n';
      }
      std::cout << "final_loss " << result.loss_curve.back() << '\n';
    } else if (ev->parsed()) {
      auto kernel = load(kernel_path, harness::load_kernel);
      const auto lang = SyntheticLanguage::from_vocabulary(kernel->vocabulary());
      auto instances = load(instances_path, [&](const std::string& p) { return read_instances(kernel->vocabulary(), p); });
      auto transforms = load(transforms_path, [&](const std::string& p) { return read_transformations(lang, p); });
      auto report = combined_report(*kernel, lang, instances, transforms);
      std::cout << report_to_json(report).dump(2) << '\n';
    } else if (ro->parsed()) {
      auto kernel = load(kernel_path, harness::load_kernel);
      const auto& vocab = kernel->vocabulary();
      TokenSeq ids;
      try {
        ids = vocab.encode(prompt);
      } catch (const Error& e) {
        throw CliFailure{"format", std::string("--prompt: ") + e.what(), 4};
      }
      TokenSeq out = greedy ? greedy_rollout(*kernel, ids, max_len)
                            : sample_rollout(*kernel, ids, max_len, seed, temperature);
      std::cout << vocab.decode(out) << '\n';
    } else if (gc->parsed()) {
      std::optional<neural::NeuralKernel> model;
      Vocabulary vocab;
      if (!kernel_path.empty()) {
        model.emplace(load(kernel_path, neural::read_model_file));
        vocab = model->vocabulary();
      } else {
        if (vocab_path.empty()) throw CliFailure{"usage", "gradcheck needs --model or --vocab", 2};
        vocab = load(vocab_path, read_vocabulary);
      }
      auto corpus = load(corpus_path, [&](const std::string& p) { return read_corpus(vocab, p); });
      corpus.resize(std::min(corpus.size(), batch_size));
      neural::Parameters params;
      if (model) {
        params = model->parameters();
      } else {
        mc.vocab_size = vocab.size();
        params = neural::init_parameters(mc);
      }
      auto r = neural::finite_diff_check(params, vocab, corpus, eps, seed, coords);
      std::cout << "max_relative_error " << r.max_relative_error << "\ncoordinates " << r.coordinates
                << "\nworst_tensor " << r.worst_tensor << '\n';
    } else if (gt->parsed()) {
      auto vocab = load(vocab_path, read_vocabulary);
      const auto lang = SyntheticLanguage::from_vocabulary(vocab);
      auto corpus = load(corpus_path, [&](const std::string& p) { return read_corpus(vocab, p); });
      std::vector<GeneratedSequence> targets;
      for (const auto& s : corpus) targets.push_back(sequence_from_tokens(lang, s));
      LanguageSpec target_spec;
      target_spec.num_entities = lang.num_entities();
      auto ts = sample_transformations(lang, target_spec, parse_kinds(kinds_csv), count, seed, targets);
      write_transformations(ts, kernel_out);
    } else if (run->parsed()) {
      auto config = load(config_path, harness::read_config_file);
      auto result = harness::run_experiment(config);
      for (const auto& r : result.runs) {
        std::cout << r.name << " greedy_accuracy " << r.report.delta.greedy_accuracy << " delta_mean "
                  << r.report.delta.delta_mean << " epsilon_max " << r.report.epsilon.epsilon_max << '\n';
      }
    }
  } catch (const CliFailure& f) {
    std::cerr << "error: " << f.category << ": " << f.message << '\n';
    return f.code;
  } catch (const std::exception& e) {
    std::cerr << "error: runtime: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
