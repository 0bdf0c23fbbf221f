#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "markovlab/core.hpp"

namespace markovlab {

/// Parameters of the synthetic implication language.
///
/// A sequence has the shape
///   [Ea => Eb ;]*  Ef ;  ? Ey <eos>
/// with statements_per_sequence implications in random order: chain_depth of
/// them form a chain from the fact Ef to the answer Ey, num_distractors are
/// anchored distractors whose conclusion lies on the chain, and the remainder
/// are free distractors. No distractor may extend what the fact derives.
struct LanguageSpec {
  int num_entities = 8;
  int statements_per_sequence = 3;
  int chain_depth = 1;
  int num_distractors = 0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Implication {
  int premise = 0;
  int conclusion = 0;
  auto operator<=>(const Implication&) const = default;
};

struct Provenance {
  int fact = 0;
  std::vector<Implication> chain;  // fact -> ... -> answer, in logical order
  int answer = 0;
  std::vector<Implication> distractors;  // in surface order
  bool operator==(const Provenance&) const = default;
};

struct GeneratedSequence {
  TokenSeq tokens;
  Provenance provenance;
  std::size_t depth() const { return provenance.chain.size(); }
  bool operator==(const GeneratedSequence&) const = default;
};

/// One element (x, y) of the rule's relation: x runs up to and including "?".
struct InferenceInstance {
  TokenSeq context;
  TokenId required_token = 0;
  std::string rule_id;
  bool operator==(const InferenceInstance&) const = default;
};

/// Vocabulary and token roles of the synthetic language:
/// "<pad>", "<eos>", "=>", ";", "?", then entities "E0".."E{k-1}".
class SyntheticLanguage {
 public:
  explicit SyntheticLanguage(int num_entities);
  /// Recovers the roles from an existing vocabulary (e.g. read from a kernel file).
  static SyntheticLanguage from_vocabulary(const Vocabulary& vocab);

  const Vocabulary& vocabulary() const { return vocab_; }
  int num_entities() const { return static_cast<int>(entity_tokens_.size()); }
  TokenId entity_token(int entity) const;
  std::optional<int> entity_of(TokenId token) const;
  TokenId implies() const { return implies_; }
  TokenId separator() const { return separator_; }
  TokenId query() const { return query_; }
  TokenId eos() const { return vocab_.eos(); }

 private:
  SyntheticLanguage() = default;
  Vocabulary vocab_;
  std::vector<TokenId> entity_tokens_;
  std::vector<int> entity_index_;  // by token id, -1 for non-entities
  TokenId implies_ = 0, separator_ = 0, query_ = 0;
};

/// Surface structure of a context or full sequence.
struct Problem {
  std::vector<Implication> statements;
  int fact = 0;
  std::optional<int> answer;  // present for full sequences
};

/// Accepts either a context ("... Ef ; ?") or a full sequence ("... ? Ey <eos>").
Problem parse_problem(const SyntheticLanguage& lang, std::span<const TokenId> tokens);
TokenSeq render_context(const SyntheticLanguage& lang, const std::vector<Implication>& statements, int fact);
TokenSeq render_sequence(const SyntheticLanguage& lang, const std::vector<Implication>& statements, int fact,
                         int answer);

/// Forward-chaining closure of {fact} under the implications.
std::set<int> solve_entailment(const std::vector<Implication>& statements, int fact);

/// Breadth-first derivation levels: levels[k] holds the entities first
/// derived after k modus-ponens steps.
std::vector<std::set<int>> derivation_levels(const std::vector<Implication>& statements, int fact);

struct Validation {
  bool ok = true;
  std::string diagnostic;
  explicit operator bool() const { return ok; }
};

Validation validate_sequence(const SyntheticLanguage& lang, const GeneratedSequence& seq);

/// Rebuilds provenance from tokens with the oracle. Throws if the tokens do not
/// parse or do not derive their stated answer along a unique chain.
GeneratedSequence sequence_from_tokens(const SyntheticLanguage& lang, std::span<const TokenId> tokens);

std::string rule_id_for_depth(std::size_t depth);
InferenceInstance instance_of(const SyntheticLanguage& lang, const GeneratedSequence& seq);
GeneratedSequence sequence_of(const SyntheticLanguage& lang, const InferenceInstance& inst);

struct GeneratedCorpus {
  std::vector<GeneratedSequence> sequences;
  std::vector<InferenceInstance> instances;
};

inline constexpr int kMaxPlacementRetries = 1000;

GeneratedCorpus generate_corpus(const LanguageSpec& spec, std::size_t count);

// Corpus file: one sequence per line. Instance file: "context\trequired\trule".
void write_corpus(const Vocabulary& vocab, const std::vector<TokenSeq>& corpus, const std::string& path);
std::vector<TokenSeq> read_corpus(const Vocabulary& vocab, const std::string& path);
void write_instances(const Vocabulary& vocab, const std::vector<InferenceInstance>& instances,
                     const std::string& path);
std::vector<InferenceInstance> read_instances(const Vocabulary& vocab, const std::string& path);

}  // namespace markovlab
