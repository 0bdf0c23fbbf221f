#include "markovlab/harness.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>

#include "markovlab/random.hpp"
#include "text.hpp"

namespace markovlab::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* type_name(KernelType t) {
  switch (t) {
    case KernelType::ngram: return "ngram";
    case KernelType::neural: return "neural";
    case KernelType::tabular: return "tabular";
  }
  return "unknown";
}

KernelType parse_type(const std::string& s) {
  if (s == "ngram") return KernelType::ngram;
  if (s == "neural") return KernelType::neural;
  if (s == "tabular") return KernelType::tabular;
  throw Error("unknown kernel type: \"" + s + "\"");
}

}  // namespace

void ExperimentConfig::validate() const {
  language.validate();
  if (corpus_size < 2) throw Error("corpus_size must be at least 2");
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) throw Error("holdout_fraction must lie in (0, 1)");
  if (kernels.empty()) throw Error("at least one kernel entry is required");
  if (transform_kinds.empty()) throw Error("at least one transformation kind is required");
  if (transforms_per_context == 0) throw Error("transforms_per_context must be positive");
  std::set<std::string> names;
  for (const auto& k : kernels) {
    if (!names.insert(k.name).second) throw Error("duplicate kernel name: \"" + k.name + "\"");
    if (k.type == KernelType::tabular && k.file.empty()) throw Error("tabular kernel \"" + k.name + "\" lacks a file");
  }
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  if (j.contains("language")) {
    const auto& l = j.at("language");
    c.language.num_entities = l.value("num_entities", c.language.num_entities);
    c.language.statements_per_sequence = l.value("statements_per_sequence", c.language.statements_per_sequence);
    c.language.chain_depth = l.value("chain_depth", c.language.chain_depth);
    c.language.num_distractors = l.value("num_distractors", c.language.num_distractors);
  }
  c.corpus_size = j.value("corpus_size", c.corpus_size);
  c.holdout_fraction = j.value("holdout_fraction", c.holdout_fraction);
  c.master_seed = j.value("master_seed", c.master_seed);
  c.output_dir = j.value("output_dir", c.output_dir);
  if (j.contains("transforms")) {
    const auto& t = j.at("transforms");
    if (t.contains("kinds")) {
      c.transform_kinds.clear();
      for (const auto& k : t.at("kinds")) c.transform_kinds.insert(parse_kind(k.get<std::string>()));
    }
    c.transforms_per_context = t.value("per_context", c.transforms_per_context);
  }
  if (j.contains("kernels")) {
    for (const auto& k : j.at("kernels")) {
      KernelEntry e;
      e.type = parse_type(k.at("type").get<std::string>());
      e.name = k.value("name", std::string(type_name(e.type)) + std::to_string(c.kernels.size()));
      e.n = k.value("n", e.n);
      e.alpha = k.value("alpha", e.alpha);
      e.fallback = k.value("fallback", std::string("strict")) == "uniform" ? Fallback::uniform : Fallback::strict;
      if (k.contains("model")) e.model = neural::config_from_json(k.at("model"));
      if (k.contains("train")) e.train = neural::train_config_from_json(k.at("train"));
      e.file = k.value("file", std::string());
      c.kernels.push_back(std::move(e));
    }
  }
  c.validate();
  return c;
}

json config_to_json(const ExperimentConfig& c) {
  json kernels = json::array();
  for (const auto& k : c.kernels) {
    json e = {{"type", type_name(k.type)}, {"name", k.name}};
    switch (k.type) {
      case KernelType::ngram:
        e["n"] = k.n;
        e["alpha"] = k.alpha;
        e["fallback"] = k.fallback == Fallback::strict ? "strict" : "uniform";
        break;
      case KernelType::neural:
        e["model"] = neural::config_to_json(k.model);
        e["train"] = neural::train_config_to_json(k.train);
        break;
      case KernelType::tabular:
        e["file"] = k.file;
        break;
    }
    kernels.push_back(e);
  }
  json kinds = json::array();
  for (auto k : c.transform_kinds) kinds.push_back(kind_name(k));
  return {{"language",
           {{"num_entities", c.language.num_entities},
            {"statements_per_sequence", c.language.statements_per_sequence},
            {"chain_depth", c.language.chain_depth},
            {"num_distractors", c.language.num_distractors}}},
          {"corpus_size", c.corpus_size},
          {"holdout_fraction", c.holdout_fraction},
          {"kernels", kernels},
          {"transforms", {{"kinds", kinds}, {"per_context", c.transforms_per_context}}},
          {"master_seed", c.master_seed},
          {"output_dir", c.output_dir}};
}

ExperimentConfig read_config_file(const std::string& path) {
  json j;
  try {
    j = json::parse(text::read_file(path));
  } catch (const json::exception& e) {
    throw Error("config is not valid JSON: " + std::string(e.what()));
  }
  return config_from_json(j);
}

std::uint64_t StageSeeds::kernel_init(const std::string& name) const { return derive_seed(master, "init/" + name); }
std::uint64_t StageSeeds::kernel_shuffle(const std::string& name) const {
  return derive_seed(master, "shuffle/" + name);
}

StageSeeds stage_seeds(std::uint64_t master) {
  StageSeeds s;
  s.master = master;
  s.corpus = derive_seed(master, "corpus");
  s.split = derive_seed(master, "split");
  s.transforms = derive_seed(master, "transforms");
  return s;
}

Split split_corpus(const std::vector<GeneratedSequence>& corpus, double holdout_fraction, std::uint64_t seed) {
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) throw Error("holdout_fraction must lie in (0, 1)");
  std::vector<const GeneratedSequence*> unique;
  std::set<TokenSeq> seen;
  for (const auto& s : corpus) {
    if (seen.insert(s.tokens).second) unique.push_back(&s);
  }
  if (unique.size() < 2) throw Error("corpus has fewer than two distinct sequences to split");
  RandomStream rng(seed);
  rng.shuffle(unique);
  auto held = static_cast<std::size_t>(std::llround(holdout_fraction * static_cast<double>(unique.size())));
  held = std::clamp<std::size_t>(held, 1, unique.size() - 1);
  Split split;
  for (std::size_t i = 0; i < unique.size(); ++i) (i < held ? split.heldout : split.train).push_back(*unique[i]);
  return split;
}

std::vector<std::vector<Transformation>> sample_eval_transforms(const SyntheticLanguage& lang,
                                                                const LanguageSpec& spec,
                                                                const std::set<TransformKind>& kinds,
                                                                std::size_t per_context, std::uint64_t seed,
                                                                const std::vector<GeneratedSequence>& heldout) {
  std::vector<std::vector<Transformation>> out;
  out.reserve(heldout.size());
  for (std::size_t i = 0; i < heldout.size(); ++i) {
    out.push_back(sample_transformations(lang, spec, kinds, per_context, derive_seed(seed, std::to_string(i)),
                                         std::span(&heldout[i], 1)));
  }
  return out;
}

std::unique_ptr<Kernel> load_kernel(const std::string& path) {
  const std::string content = text::read_file(path);
  if (!content.empty() && content.front() == '{') {
    return std::make_unique<neural::NeuralKernel>(neural::parse_model_text(content));
  }
  return parse_kernel_text(content);
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 computation failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xf];
  }
  return out;
}

namespace {

// Tracks written files so a failed run leaves nothing behind.
class OutputDir {
 public:
  explicit OutputDir(fs::path root) : root_(std::move(root)) {
    created_root_ = !fs::exists(root_);
    fs::create_directories(root_);
  }

  void write(const std::string& name, const std::string& content) {
    text::write_file((root_ / name).string(), content);
    files_.emplace_back(name, content);
  }

  const std::vector<std::pair<std::string, std::string>>& files() const { return files_; }

  void discard() noexcept {
    std::error_code ec;
    for (const auto& [name, _] : files_) fs::remove(root_ / name, ec);
    if (created_root_) fs::remove(root_, ec);
    files_.clear();
  }

 private:
  fs::path root_;
  bool created_root_ = false;
  std::vector<std::pair<std::string, std::string>> files_;
};

template <class F>
auto stage(const std::string& name, F&& body) {
  try {
    return body();
  } catch (const std::exception& e) {
    throw Error("stage " + name + " failed: " + e.what());
  }
}

std::string corpus_text(const Vocabulary& vocab, const std::vector<GeneratedSequence>& seqs) {
  std::string out;
  for (const auto& s : seqs) out += vocab.decode(s.tokens) + '\n';
  return out;
}

std::string instances_text(const Vocabulary& vocab, const std::vector<InferenceInstance>& instances) {
  std::string out;
  for (const auto& inst : instances) {
    out += vocab.decode(inst.context) + '\t' + vocab.surface(inst.required_token) + '\t' + inst.rule_id + '\n';
  }
  return out;
}

std::string metrics_row(const std::string& name, const InvarianceReport& r) {
  auto f = [](double v) { return text::format_double(v); };
  return name + ',' + r.kernel_type + ',' + std::to_string(r.kernel_order) + ',' + f(r.epsilon.epsilon_max) + ',' +
         f(r.epsilon.epsilon_mean) + ',' + f(r.delta.delta_worst) + ',' + f(r.delta.delta_mean) + ',' +
         f(r.delta.greedy_accuracy) + ',' + f(r.delta_transformed.delta_mean) + ',' +
         f(r.delta_transformed.greedy_accuracy) + '\n';
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config_in) {
  ExperimentConfig config = config_in;
  config.validate();
  const StageSeeds seeds = stage_seeds(config.master_seed);
  config.language.seed = seeds.corpus;
  const SyntheticLanguage lang(config.language.num_entities);
  const Vocabulary& vocab = lang.vocabulary();

  OutputDir out(config.output_dir);
  ExperimentResult result;
  try {
    const auto corpus = stage("generate", [&] { return generate_corpus(config.language, config.corpus_size); });
    const Split split = stage("split", [&] {
      Split s = split_corpus(corpus.sequences, config.holdout_fraction, seeds.split);
      std::set<TokenSeq> train_contexts;
      for (const auto& seq : s.train) train_contexts.insert(instance_of(lang, seq).context);
      for (const auto& seq : s.heldout) {
        if (train_contexts.contains(instance_of(lang, seq).context)) throw Error("held-out context appears in training split");
      }
      return s;
    });
    std::vector<TokenSeq> train_tokens;
    for (const auto& s : split.train) train_tokens.push_back(s.tokens);
    std::vector<InferenceInstance> heldout_instances;
    for (const auto& s : split.heldout) heldout_instances.push_back(instance_of(lang, s));

    const auto eval_transforms = stage("sample-transforms", [&] {
      return sample_eval_transforms(lang, config.language, config.transform_kinds, config.transforms_per_context,
                                    seeds.transforms, split.heldout);
    });

    out.write("vocab.txt", [&] {
      std::string s;
      for (const auto& w : vocab.surfaces()) s += w + '\n';
      return s;
    }());
    out.write("train.corpus", corpus_text(vocab, split.train));
    out.write("heldout.corpus", corpus_text(vocab, split.heldout));
    out.write("heldout.inst", instances_text(vocab, heldout_instances));
    {
      std::string t;
      for (std::size_t i = 0; i < eval_transforms.size(); ++i) {
        for (const auto& tr : eval_transforms[i]) t += std::to_string(i) + '\t' + format_transformation(tr) + '\n';
      }
      out.write("heldout.transforms", t);
    }

    json kernel_seeds = json::object();
    std::string table =
        "kernel,type,order,epsilon_max,epsilon_mean,delta_worst,delta_mean,greedy_accuracy,"
        "delta_mean_transformed,greedy_accuracy_transformed\n";
    for (const auto& entry : config.kernels) {
      KernelRun run;
      run.name = entry.name;
      std::unique_ptr<Kernel> kernel;
      switch (entry.type) {
        case KernelType::ngram: {
          auto k = stage("estimate/" + entry.name,
                         [&] { return estimate_ngram(vocab, train_tokens, entry.n, entry.alpha, entry.fallback); });
          out.write(entry.name + ".ngram", kernel_file_text(k));
          kernel = std::make_unique<NGramKernel>(std::move(k));
          break;
        }
        case KernelType::neural: {
          neural::ModelConfig mc = entry.model;
          mc.vocab_size = vocab.size();
          mc.init_seed = seeds.kernel_init(entry.name);
          neural::TrainConfig tc = entry.train;
          tc.shuffle_seed = seeds.kernel_shuffle(entry.name);
          kernel_seeds[entry.name] = {{"init_seed", mc.init_seed}, {"shuffle_seed", tc.shuffle_seed}};
          auto trained = stage("train/" + entry.name, [&] { return neural::train(mc, tc, vocab, train_tokens); });
          run.loss_curve = trained.loss_curve;
          std::string csv = "step,loss\n";
          for (std::size_t i = 0; i < trained.loss_curve.size(); ++i) {
            csv += std::to_string(i) + ',' + text::format_double(trained.loss_curve[i]) + '\n';
          }
          out.write("loss_" + entry.name + ".csv", csv);
          out.write(entry.name + ".model",
                    neural::model_file_text(trained.params, vocab, {{"train", neural::train_config_to_json(tc)}}));
          kernel = std::make_unique<neural::NeuralKernel>(vocab, std::move(trained.params));
          break;
        }
        case KernelType::tabular: {
          kernel = stage("load/" + entry.name, [&] {
            auto k = load_kernel(entry.file);
            if (!(k->vocabulary() == vocab)) throw Error("tabular kernel vocabulary differs from the language");
            return k;
          });
          break;
        }
      }
      run.report = stage("eval/" + entry.name,
                         [&] { return combined_report(*kernel, lang, heldout_instances, eval_transforms); });
      json report = report_to_json(run.report);
      validate_report_json(report);
      out.write("report_" + entry.name + ".json", report.dump(2) + '\n');
      table += metrics_row(entry.name, run.report);
      result.runs.push_back(std::move(run));
    }
    out.write("metrics.csv", table);

    json files = json::object();
    for (const auto& [name, content] : out.files()) files[name] = sha256_hex(content);
    json manifest = {{"config", config_to_json(config)},
                     {"seeds",
                      {{"master", seeds.master},
                       {"corpus", seeds.corpus},
                       {"split", seeds.split},
                       {"transforms", seeds.transforms},
                       {"kernels", kernel_seeds},
                       {"scheme", "splitmix64(master ^ fnv1a64(stage))"}}},
                     {"counts",
                      {{"generated", corpus.sequences.size()},
                       {"train", split.train.size()},
                       {"heldout", split.heldout.size()}}},
                     {"files", files}};
    out.write("manifest.json", manifest.dump(2) + '\n');
  } catch (...) {
    out.discard();
    throw;
  }
  for (const auto& [name, _] : out.files()) result.files.push_back(name);
  return result;
}

}  // namespace markovlab::harness
