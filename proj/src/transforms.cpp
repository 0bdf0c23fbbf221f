#include "markovlab/transforms.hpp"

#include <algorithm>
#include <numeric>

#include "markovlab/random.hpp"
#include "text.hpp"

namespace markovlab {

std::string kind_name(TransformKind kind) {
  switch (kind) {
    case TransformKind::entity_permutation: return "perm";
    case TransformKind::statement_reorder: return "reorder";
    case TransformKind::distractor_insert: return "insert";
  }
  return "unknown";
}

TransformKind parse_kind(const std::string& name) {
  if (name == "perm" || name == "entity_permutation") return TransformKind::entity_permutation;
  if (name == "reorder" || name == "statement_reorder") return TransformKind::statement_reorder;
  if (name == "insert" || name == "distractor_insert") return TransformKind::distractor_insert;
  throw Error("unknown transformation kind: \"" + name + "\"");
}

namespace {

TransformKind step_kind(const TransformStep& step) {
  return static_cast<TransformKind>(step.index());
}

void check_bijection(const std::vector<int>& mapping, int num_entities) {
  if (static_cast<int>(mapping.size()) != num_entities) {
    throw Error("entity permutation has " + std::to_string(mapping.size()) + " entries, language has " +
                std::to_string(num_entities) + " entities");
  }
  std::vector<bool> hit(mapping.size(), false);
  for (int m : mapping) {
    if (m < 0 || m >= num_entities || hit[static_cast<std::size_t>(m)]) throw Error("entity mapping is not a bijection");
    hit[static_cast<std::size_t>(m)] = true;
  }
}

void check_order(const std::vector<std::size_t>& order) {
  std::vector<bool> hit(order.size(), false);
  for (auto i : order) {
    if (i >= order.size() || hit[i]) throw Error("statement reorder is not a permutation");
    hit[i] = true;
  }
}

TokenSeq apply_step(const SyntheticLanguage& lang, const TransformStep& step, std::span<const TokenId> tokens) {
  if (const auto* perm = std::get_if<EntityPermutation>(&step)) {
    check_bijection(perm->mapping, lang.num_entities());
    TokenSeq out(tokens.begin(), tokens.end());
    for (auto& t : out) {
      if (auto e = lang.entity_of(t)) t = lang.entity_token(perm->mapping[static_cast<std::size_t>(*e)]);
    }
    return out;
  }
  Problem p = parse_problem(lang, tokens);
  if (const auto* reorder = std::get_if<StatementReorder>(&step)) {
    check_order(reorder->order);
    if (reorder->order.size() != p.statements.size()) {
      throw Error("reorder of " + std::to_string(reorder->order.size()) + " statements applied to " +
                  std::to_string(p.statements.size()) + " statements");
    }
    std::vector<Implication> moved;
    for (auto i : reorder->order) moved.push_back(p.statements[i]);
    p.statements = std::move(moved);
  } else {
    const auto& ins = std::get<DistractorInsert>(step);
    if (ins.position > p.statements.size()) throw Error("insert position past the statement list");
    lang.entity_token(ins.statement.premise);
    lang.entity_token(ins.statement.conclusion);
    p.statements.insert(p.statements.begin() + static_cast<std::ptrdiff_t>(ins.position), ins.statement);
  }
  return p.answer ? render_sequence(lang, p.statements, p.fact, *p.answer) : render_context(lang, p.statements, p.fact);
}

}  // namespace

std::string Transformation::kind() const {
  if (steps_.empty()) return "identity";
  if (steps_.size() == 1) return kind_name(step_kind(steps_.front()));
  return "composite";
}

std::vector<int> Transformation::output_action(int num_entities) const {
  std::vector<int> action(static_cast<std::size_t>(num_entities));
  std::iota(action.begin(), action.end(), 0);
  for (const auto& step : steps_) {
    if (const auto* perm = std::get_if<EntityPermutation>(&step)) {
      check_bijection(perm->mapping, num_entities);
      for (auto& a : action) a = perm->mapping[static_cast<std::size_t>(a)];
    }
  }
  return action;
}

Transformation compose(const Transformation& outer, const Transformation& inner) {
  Transformation out = inner;
  out.steps_.insert(out.steps_.end(), outer.steps_.begin(), outer.steps_.end());
  return out;
}

TokenSeq apply(const SyntheticLanguage& lang, const Transformation& t, std::span<const TokenId> tokens) {
  TokenSeq current(tokens.begin(), tokens.end());
  for (const auto& step : t.steps()) current = apply_step(lang, step, current);
  return current;
}

GeneratedSequence apply(const SyntheticLanguage& lang, const Transformation& t, const GeneratedSequence& seq) {
  GeneratedSequence out;
  out.tokens = apply(lang, t, seq.tokens);
  const auto action = t.output_action(lang.num_entities());
  auto map = [&](int e) { return action.at(static_cast<std::size_t>(e)); };
  out.provenance.fact = map(seq.provenance.fact);
  out.provenance.answer = map(seq.provenance.answer);
  for (const auto& s : seq.provenance.chain) out.provenance.chain.push_back({map(s.premise), map(s.conclusion)});
  // Distractors: every surface statement not consumed by the chain, in surface order.
  auto remaining = out.provenance.chain;
  for (const auto& s : parse_problem(lang, out.tokens).statements) {
    auto it = std::find(remaining.begin(), remaining.end(), s);
    if (it != remaining.end()) {
      remaining.erase(it);
    } else {
      out.provenance.distractors.push_back(s);
    }
  }
  return out;
}

bool verify_preservation(const SyntheticLanguage& lang, const Transformation& t, const GeneratedSequence& seq) {
  try {
    const auto action = t.output_action(lang.num_entities());
    GeneratedSequence moved = apply(lang, t, seq);
    if (!validate_sequence(lang, moved)) return false;
    auto levels = derivation_levels(parse_problem(lang, moved.tokens).statements, moved.provenance.fact);
    return *levels.back().begin() == action[static_cast<std::size_t>(seq.provenance.answer)];
  } catch (const Error&) {
    return false;
  }
}

std::vector<Transformation> sample_transformations(const SyntheticLanguage& lang, const LanguageSpec& spec,
                                                   const std::set<TransformKind>& kinds, std::size_t count,
                                                   std::uint64_t seed,
                                                   std::span<const GeneratedSequence> targets) {
  if (kinds.empty()) throw Error("no transformation kinds requested");
  const std::vector<TransformKind> pool(kinds.begin(), kinds.end());
  const int k = lang.num_entities();
  std::size_t num_statements = static_cast<std::size_t>(spec.statements_per_sequence);
  if (!targets.empty()) num_statements = parse_problem(lang, targets.front().tokens).statements.size();
  RandomStream rng(seed);

  auto draw = [&](TransformKind kind) -> Transformation {
    switch (kind) {
      case TransformKind::entity_permutation: {
        EntityPermutation perm{std::vector<int>(static_cast<std::size_t>(k))};
        std::iota(perm.mapping.begin(), perm.mapping.end(), 0);
        rng.shuffle(perm.mapping);
        return Transformation(perm);
      }
      case TransformKind::statement_reorder: {
        StatementReorder reorder{std::vector<std::size_t>(num_statements)};
        std::iota(reorder.order.begin(), reorder.order.end(), std::size_t{0});
        rng.shuffle(reorder.order);
        return Transformation(reorder);
      }
      case TransformKind::distractor_insert: {
        DistractorInsert ins;
        ins.statement.premise = static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
        ins.statement.conclusion = static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
        ins.position = static_cast<std::size_t>(rng.below(num_statements + 1));
        return Transformation(ins);
      }
    }
    throw Error("unknown transformation kind");
  };

  std::vector<Transformation> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const TransformKind kind = pool[rng.below(pool.size())];
    for (int attempt = 0;; ++attempt) {
      if (attempt > kMaxPlacementRetries) {
        throw Error("cannot sample a preserving " + kind_name(kind) + " transformation after " +
                    std::to_string(kMaxPlacementRetries) + " retries");
      }
      Transformation t = draw(kind);
      bool ok = std::all_of(targets.begin(), targets.end(),
                            [&](const GeneratedSequence& s) { return verify_preservation(lang, t, s); });
      if (ok) {
        out.push_back(std::move(t));
        break;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Transformation files

namespace {

std::string format_step(const TransformStep& step) {
  if (const auto* perm = std::get_if<EntityPermutation>(&step)) {
    std::string out;
    for (std::size_t e = 0; e < perm->mapping.size(); ++e) {
      if (perm->mapping[e] == static_cast<int>(e)) continue;
      if (!out.empty()) out += ',';
      out += "E" + std::to_string(e) + ":E" + std::to_string(perm->mapping[e]);
    }
    return "perm " + out;
  }
  if (const auto* reorder = std::get_if<StatementReorder>(&step)) {
    std::string out;
    for (std::size_t i = 0; i < reorder->order.size(); ++i) {
      if (i) out += ',';
      out += std::to_string(reorder->order[i]);
    }
    return "reorder " + out;
  }
  const auto& ins = std::get<DistractorInsert>(step);
  return "insert E" + std::to_string(ins.statement.premise) + "=>E" + std::to_string(ins.statement.conclusion) +
         "@" + std::to_string(ins.position);
}

int parse_entity(const SyntheticLanguage& lang, const std::string& s) {
  auto token = lang.vocabulary().find(s);
  auto e = token ? lang.entity_of(*token) : std::nullopt;
  if (!e) throw Error("unknown entity in transformation: \"" + s + "\"");
  return *e;
}

TransformStep parse_step(const SyntheticLanguage& lang, const std::string& text_in) {
  auto words = text::split_ws(text_in);
  if (words.empty() || words.size() > 2) throw Error("malformed transformation: \"" + text_in + "\"");
  const std::string& kind = words[0];
  const std::string arg = words.size() > 1 ? words[1] : "";
  if (kind == "perm") {
    EntityPermutation perm{std::vector<int>(static_cast<std::size_t>(lang.num_entities()))};
    std::iota(perm.mapping.begin(), perm.mapping.end(), 0);
    if (!arg.empty()) {
      for (const auto& pair : text::split(arg, ',')) {
        auto parts = text::split(pair, ':');
        if (parts.size() != 2) throw Error("malformed perm entry: \"" + pair + "\"");
        perm.mapping[static_cast<std::size_t>(parse_entity(lang, parts[0]))] = parse_entity(lang, parts[1]);
      }
    }
    check_bijection(perm.mapping, lang.num_entities());
    return perm;
  }
  if (kind == "reorder") {
    StatementReorder reorder;
    if (!arg.empty()) {
      for (const auto& i : text::split(arg, ',')) reorder.order.push_back(text::parse_uint(i));
    }
    check_order(reorder.order);
    return reorder;
  }
  if (kind == "insert") {
    auto at = arg.find('@');
    auto arrow = arg.find("=>");
    if (at == std::string::npos || arrow == std::string::npos || arrow > at) {
      throw Error("malformed insert: \"" + text_in + "\"");
    }
    DistractorInsert ins;
    ins.statement.premise = parse_entity(lang, arg.substr(0, arrow));
    ins.statement.conclusion = parse_entity(lang, arg.substr(arrow + 2, at - arrow - 2));
    ins.position = text::parse_uint(arg.substr(at + 1));
    return ins;
  }
  throw Error("unknown transformation kind: \"" + kind + "\"");
}

}  // namespace

std::string format_transformation(const Transformation& t) {
  if (t.is_identity()) return "identity";
  std::string out;
  for (std::size_t i = 0; i < t.steps().size(); ++i) {
    if (i) out += " + ";
    out += format_step(t.steps()[i]);
  }
  return out;
}

Transformation parse_transformation(const SyntheticLanguage& lang, const std::string& line) {
  if (text::split_ws(line) == std::vector<std::string>{"identity"}) return {};
  Transformation out;
  for (const auto& part : text::split(line, '+')) {
    out = compose(Transformation(parse_step(lang, part)), out);
  }
  return out;
}

void write_transformations(const std::vector<Transformation>& ts, const std::string& path) {
  std::string out;
  for (const auto& t : ts) out += format_transformation(t) + '\n';
  text::write_file(path, out);
}

std::vector<Transformation> read_transformations(const SyntheticLanguage& lang, const std::string& path) {
  std::vector<Transformation> out;
  for (const auto& line : text::read_lines(path)) {
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    out.push_back(parse_transformation(lang, line));
  }
  return out;
}

}  // namespace markovlab
