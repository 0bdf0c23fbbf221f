#pragma once

#include <cstdint>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "markovlab/metrics.hpp"
#include "markovlab/neural.hpp"

namespace markovlab::harness {

enum class KernelType { ngram, neural, tabular };

struct KernelEntry {
  KernelType type = KernelType::ngram;
  std::string name;  // defaults to "<type><index>"
  std::size_t n = 2;
  double alpha = 0.0;
  Fallback fallback = Fallback::strict;
  neural::ModelConfig model;
  neural::TrainConfig train;
  std::string file;  // tabular kernels
};

struct ExperimentConfig {
  LanguageSpec language;
  std::size_t corpus_size = 1000;
  double holdout_fraction = 0.2;
  std::vector<KernelEntry> kernels;
  std::set<TransformKind> transform_kinds = {TransformKind::entity_permutation, TransformKind::statement_reorder,
                                             TransformKind::distractor_insert};
  std::size_t transforms_per_context = 2;
  std::uint64_t master_seed = 0;
  std::string output_dir = "markovlab_out";

  void validate() const;
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& c);
ExperimentConfig read_config_file(const std::string& path);

/// Seeds derived from the master seed by stage name (see derive_seed).
struct StageSeeds {
  std::uint64_t corpus = 0;
  std::uint64_t split = 0;
  std::uint64_t transforms = 0;
  std::uint64_t kernel_init(const std::string& name) const;
  std::uint64_t kernel_shuffle(const std::string& name) const;
  std::uint64_t master = 0;
};
StageSeeds stage_seeds(std::uint64_t master);

struct Split {
  std::vector<GeneratedSequence> train;
  std::vector<GeneratedSequence> heldout;
};

/// Drops repeated sequences (first occurrence wins), then a seeded shuffle
/// sends round(fraction * size) whole sequences to the held-out side.
Split split_corpus(const std::vector<GeneratedSequence>& corpus, double holdout_fraction, std::uint64_t seed);

/// Per held-out sequence i, `per_context` transformations sampled with seed
/// derive_seed(seed, std::to_string(i)) against that sequence alone.
std::vector<std::vector<Transformation>> sample_eval_transforms(const SyntheticLanguage& lang,
                                                                const LanguageSpec& spec,
                                                                const std::set<TransformKind>& kinds,
                                                                std::size_t per_context, std::uint64_t seed,
                                                                const std::vector<GeneratedSequence>& heldout);

struct KernelRun {
  std::string name;
  InvarianceReport report;
  std::vector<double> loss_curve;  // neural kernels only
};

struct ExperimentResult {
  std::vector<KernelRun> runs;
  std::vector<std::string> files;  // relative to output_dir
};

/// generate -> split -> estimate/train -> evaluate -> write reports and a
/// manifest with every seed and a SHA-256 of every file. On failure the
/// files written so far are removed and the error names the failing stage.
ExperimentResult run_experiment(const ExperimentConfig& config);

/// Loads an n-gram, tabular, or neural kernel file.
std::unique_ptr<Kernel> load_kernel(const std::string& path);

std::string sha256_hex(const std::string& bytes);

}  // namespace markovlab::harness
