#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "markovlab/synthlang.hpp"

namespace markovlab {

/// Renames entities: entity e becomes mapping[e]. The output side is
/// renamed by the same bijection.
struct EntityPermutation {
  std::vector<int> mapping;
  bool operator==(const EntityPermutation&) const = default;
};

/// Reorders statements: new statement i is old statement order[i].
struct StatementReorder {
  std::vector<std::size_t> order;
  bool operator==(const StatementReorder&) const = default;
};

/// Inserts one implication before statement `position` (0..count).
struct DistractorInsert {
  Implication statement;
  std::size_t position = 0;
  bool operator==(const DistractorInsert&) const = default;
};

using TransformStep = std::variant<EntityPermutation, StatementReorder, DistractorInsert>;

enum class TransformKind { entity_permutation, statement_reorder, distractor_insert };

std::string kind_name(TransformKind kind);
TransformKind parse_kind(const std::string& name);

/// A finite composition of primitive steps. The empty composition is the
/// identity. Only the permutation kinds are invertible, so the set of these
/// values is a monoid rather than a group.
class Transformation {
 public:
  Transformation() = default;
  explicit Transformation(TransformStep step) : steps_{std::move(step)} {}

  /// Steps in application order (first step applied first).
  const std::vector<TransformStep>& steps() const { return steps_; }
  bool is_identity() const { return steps_.empty(); }

  /// "identity", the primitive kind name, or "composite".
  std::string kind() const;

  /// Composite action on entities: the product of every permutation step.
  std::vector<int> output_action(int num_entities) const;

  bool operator==(const Transformation&) const = default;

 private:
  friend Transformation compose(const Transformation& outer, const Transformation& inner);
  std::vector<TransformStep> steps_;
};

/// apply(compose(outer, inner), x) == apply(outer, apply(inner, x)).
Transformation compose(const Transformation& outer, const Transformation& inner);

/// Rewrites a context or a full sequence. Entity permutations act on any
/// token sequence; the structural kinds need a parseable input.
TokenSeq apply(const SyntheticLanguage& lang, const Transformation& t, std::span<const TokenId> tokens);

/// Rewrites tokens and provenance; the answer is mapped through output_action.
GeneratedSequence apply(const SyntheticLanguage& lang, const Transformation& t, const GeneratedSequence& seq);

/// True iff the rewritten sequence validates and its oracle answer is the
/// output action applied to the original answer.
bool verify_preservation(const SyntheticLanguage& lang, const Transformation& t, const GeneratedSequence& seq);

/// Draws `count` transformations of the requested kinds. Every result
/// preserves every sequence in `targets`; candidates that do not are redrawn,
/// up to kMaxPlacementRetries times each.
std::vector<Transformation> sample_transformations(const SyntheticLanguage& lang, const LanguageSpec& spec,
                                                   const std::set<TransformKind>& kinds, std::size_t count,
                                                   std::uint64_t seed,
                                                   std::span<const GeneratedSequence> targets);

/// Lines: "perm E0:E1,E1:E0" | "reorder 2,0,1" | "insert E5=>E6@3" | "identity".
/// Composite transformations join steps with " + " in application order.
std::string format_transformation(const Transformation& t);
Transformation parse_transformation(const SyntheticLanguage& lang, const std::string& line);
void write_transformations(const std::vector<Transformation>& ts, const std::string& path);
std::vector<Transformation> read_transformations(const SyntheticLanguage& lang, const std::string& path);

}  // namespace markovlab
