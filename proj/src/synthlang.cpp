#include "markovlab/synthlang.hpp"

#include <algorithm>
#include <map>

#include "markovlab/random.hpp"
#include "text.hpp"

namespace markovlab {

void LanguageSpec::validate() const {
  if (num_entities < 2) throw Error("num_entities must be at least 2");
  if (chain_depth < 1) throw Error("chain_depth must be at least 1");
  if (statements_per_sequence < 1) throw Error("statements_per_sequence must be at least 1");
  if (num_distractors < 0) throw Error("num_distractors must be non-negative");
  if (num_entities < chain_depth + 1) {
    throw Error("num_entities must be at least chain_depth + 1");
  }
  if (statements_per_sequence < chain_depth + num_distractors) {
    throw Error("statements_per_sequence must be at least chain_depth + num_distractors");
  }
}

SyntheticLanguage::SyntheticLanguage(int num_entities) {
  if (num_entities < 2) throw Error("num_entities must be at least 2");
  std::vector<std::string> surfaces = {std::string(kPadSurface), std::string(kEosSurface), "=>", ";", "?"};
  for (int e = 0; e < num_entities; ++e) surfaces.push_back("E" + std::to_string(e));
  *this = from_vocabulary(make_vocabulary(surfaces));
}

SyntheticLanguage SyntheticLanguage::from_vocabulary(const Vocabulary& vocab) {
  SyntheticLanguage lang;
  lang.vocab_ = vocab;
  lang.implies_ = vocab.id("=>");
  lang.separator_ = vocab.id(";");
  lang.query_ = vocab.id("?");
  for (int e = 0;; ++e) {
    auto t = vocab.find("E" + std::to_string(e));
    if (!t) break;
    lang.entity_tokens_.push_back(*t);
  }
  if (lang.entity_tokens_.size() < 2) throw Error("vocabulary defines fewer than two entities E0, E1");
  lang.entity_index_.assign(vocab.size(), -1);
  for (std::size_t e = 0; e < lang.entity_tokens_.size(); ++e) {
    lang.entity_index_[static_cast<std::size_t>(lang.entity_tokens_[e])] = static_cast<int>(e);
  }
  return lang;
}

TokenId SyntheticLanguage::entity_token(int entity) const {
  if (entity < 0 || entity >= num_entities()) throw Error("entity out of range: " + std::to_string(entity));
  return entity_tokens_[static_cast<std::size_t>(entity)];
}

std::optional<int> SyntheticLanguage::entity_of(TokenId token) const {
  if (!vocab_.contains(token)) return std::nullopt;
  int e = entity_index_[static_cast<std::size_t>(token)];
  if (e < 0) return std::nullopt;
  return e;
}

Problem parse_problem(const SyntheticLanguage& lang, std::span<const TokenId> tokens) {
  auto fail = [&](const std::string& why) -> Error {
    std::string shown;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (i) shown += ' ';
      shown += lang.vocabulary().contains(tokens[i]) ? lang.vocabulary().surface(tokens[i]) : "?id";
    }
    return Error("unparseable sequence (" + why + "): \"" + shown + "\"");
  };
  auto entity_at = [&](std::size_t i) {
    if (i >= tokens.size()) throw fail("truncated");
    auto e = lang.entity_of(tokens[i]);
    if (!e) throw fail("expected an entity at position " + std::to_string(i));
    return *e;
  };
  auto expect = [&](std::size_t i, TokenId tok, const char* what) {
    if (i >= tokens.size() || tokens[i] != tok) throw fail(std::string("expected ") + what + " at position " + std::to_string(i));
  };

  Problem p;
  std::size_t i = 0;
  // Statements are "E => E ;"; the fact is "E ;" followed by "?".
  for (;;) {
    int first = entity_at(i);
    if (i + 1 < tokens.size() && tokens[i + 1] == lang.implies()) {
      int second = entity_at(i + 2);
      expect(i + 3, lang.separator(), "\";\"");
      p.statements.push_back({first, second});
      i += 4;
      continue;
    }
    p.fact = first;
    expect(i + 1, lang.separator(), "\";\"");
    expect(i + 2, lang.query(), "\"?\"");
    i += 3;
    break;
  }
  if (i == tokens.size()) return p;
  p.answer = entity_at(i);
  expect(i + 1, lang.eos(), "\"<eos>\"");
  if (i + 2 != tokens.size()) throw fail("trailing tokens after <eos>");
  return p;
}

TokenSeq render_context(const SyntheticLanguage& lang, const std::vector<Implication>& statements, int fact) {
  TokenSeq out;
  out.reserve(statements.size() * 4 + 3);
  for (const auto& s : statements) {
    out.push_back(lang.entity_token(s.premise));
    out.push_back(lang.implies());
    out.push_back(lang.entity_token(s.conclusion));
    out.push_back(lang.separator());
  }
  out.push_back(lang.entity_token(fact));
  out.push_back(lang.separator());
  out.push_back(lang.query());
  return out;
}

TokenSeq render_sequence(const SyntheticLanguage& lang, const std::vector<Implication>& statements, int fact,
                         int answer) {
  TokenSeq out = render_context(lang, statements, fact);
  out.push_back(lang.entity_token(answer));
  out.push_back(lang.eos());
  return out;
}

std::vector<std::set<int>> derivation_levels(const std::vector<Implication>& statements, int fact) {
  std::vector<std::set<int>> levels{{fact}};
  std::set<int> seen{fact};
  for (;;) {
    std::set<int> next;
    for (const auto& s : statements) {
      if (levels.back().contains(s.premise) && !seen.contains(s.conclusion)) next.insert(s.conclusion);
    }
    if (next.empty()) return levels;
    seen.insert(next.begin(), next.end());
    levels.push_back(std::move(next));
  }
}

std::set<int> solve_entailment(const std::vector<Implication>& statements, int fact) {
  std::set<int> derived{fact};
  bool changed = true;
  while (changed) {
    changed = false;
    for (const auto& s : statements) {
      if (derived.contains(s.premise) && derived.insert(s.conclusion).second) changed = true;
    }
  }
  return derived;
}

namespace {

// The closure of the fact must be exactly a chain: one new entity per step,
// ending at the answer after `depth` steps.
Validation check_unique_chain(const std::vector<Implication>& statements, int fact, int answer, std::size_t depth) {
  auto levels = derivation_levels(statements, fact);
  for (std::size_t k = 0; k < levels.size(); ++k) {
    if (levels[k].size() != 1) {
      return {false, "ambiguous derivation: " + std::to_string(levels[k].size()) + " entities derived at step " +
                         std::to_string(k)};
    }
  }
  if (levels.size() != depth + 1) {
    return {false, "fact derives " + std::to_string(levels.size() - 1) + " steps, expected " + std::to_string(depth)};
  }
  if (*levels.back().begin() != answer) {
    return {false, "answer E" + std::to_string(answer) + " is not the derived entity E" +
                       std::to_string(*levels.back().begin())};
  }
  return {};
}

}  // namespace

Validation validate_sequence(const SyntheticLanguage& lang, const GeneratedSequence& seq) {
  Problem p;
  try {
    p = parse_problem(lang, seq.tokens);
  } catch (const Error& e) {
    return {false, e.what()};
  }
  if (!p.answer) return {false, "sequence lacks an answer"};
  const auto& prov = seq.provenance;
  if (prov.chain.empty()) return {false, "provenance has an empty chain"};
  if (p.fact != prov.fact) return {false, "stated fact differs from provenance"};
  if (*p.answer != prov.answer) return {false, "answer token differs from provenance"};
  auto stated = p.statements;
  auto recorded = prov.chain;
  recorded.insert(recorded.end(), prov.distractors.begin(), prov.distractors.end());
  std::sort(stated.begin(), stated.end());
  std::sort(recorded.begin(), recorded.end());
  if (stated != recorded) return {false, "statements differ from provenance chain and distractors"};
  if (prov.chain.front().premise != prov.fact || prov.chain.back().conclusion != prov.answer) {
    return {false, "provenance chain does not run from fact to answer"};
  }
  for (std::size_t k = 1; k < prov.chain.size(); ++k) {
    if (prov.chain[k].premise != prov.chain[k - 1].conclusion) return {false, "provenance chain is broken"};
  }
  return check_unique_chain(p.statements, p.fact, *p.answer, prov.chain.size());
}

GeneratedSequence sequence_from_tokens(const SyntheticLanguage& lang, std::span<const TokenId> tokens) {
  Problem p = parse_problem(lang, tokens);
  if (!p.answer) throw Error("sequence lacks an answer");
  auto levels = derivation_levels(p.statements, p.fact);
  auto check = check_unique_chain(p.statements, p.fact, *p.answer, levels.size() - 1);
  if (!check) throw Error("sequence does not derive its answer: " + check.diagnostic);

  GeneratedSequence seq;
  seq.tokens.assign(tokens.begin(), tokens.end());
  seq.provenance.fact = p.fact;
  seq.provenance.answer = *p.answer;
  std::vector<bool> used(p.statements.size(), false);
  for (std::size_t k = 1; k < levels.size(); ++k) {
    const int from = *levels[k - 1].begin(), to = *levels[k].begin();
    for (std::size_t i = 0; i < p.statements.size(); ++i) {
      if (!used[i] && p.statements[i].premise == from && p.statements[i].conclusion == to) {
        used[i] = true;
        seq.provenance.chain.push_back(p.statements[i]);
        break;
      }
    }
  }
  for (std::size_t i = 0; i < p.statements.size(); ++i) {
    if (!used[i]) seq.provenance.distractors.push_back(p.statements[i]);
  }
  return seq;
}

std::string rule_id_for_depth(std::size_t depth) { return "modus_ponens_depth" + std::to_string(depth); }

InferenceInstance instance_of(const SyntheticLanguage& lang, const GeneratedSequence& seq) {
  if (seq.tokens.size() < 2) throw Error("sequence too short for an instance");
  InferenceInstance inst;
  inst.context.assign(seq.tokens.begin(), seq.tokens.end() - 2);
  inst.required_token = lang.entity_token(seq.provenance.answer);
  inst.rule_id = rule_id_for_depth(seq.depth());
  return inst;
}

GeneratedSequence sequence_of(const SyntheticLanguage& lang, const InferenceInstance& inst) {
  TokenSeq tokens = inst.context;
  tokens.push_back(inst.required_token);
  tokens.push_back(lang.eos());
  return sequence_from_tokens(lang, tokens);
}

GeneratedCorpus generate_corpus(const LanguageSpec& spec, std::size_t count) {
  spec.validate();
  if (count == 0) throw Error("corpus count must be positive");
  const SyntheticLanguage lang(spec.num_entities);
  RandomStream rng(spec.seed);
  const auto k = static_cast<std::uint64_t>(spec.num_entities);
  const std::size_t depth = static_cast<std::size_t>(spec.chain_depth);
  const int free_distractors = spec.statements_per_sequence - spec.chain_depth - spec.num_distractors;

  GeneratedCorpus corpus;
  corpus.sequences.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    std::vector<int> entities(static_cast<std::size_t>(spec.num_entities));
    for (int e = 0; e < spec.num_entities; ++e) entities[static_cast<std::size_t>(e)] = e;
    rng.shuffle(entities);

    Provenance prov;
    prov.fact = entities[0];
    prov.answer = entities[depth];
    for (std::size_t i = 0; i < depth; ++i) prov.chain.push_back({entities[i], entities[i + 1]});
    std::vector<Implication> statements = prov.chain;

    // Rejection sampling: draw a distractor, keep it only if the fact still
    // derives exactly the chain.
    int retries = 0;
    auto place = [&](bool anchored) {
      for (;;) {
        if (retries > kMaxPlacementRetries) {
          throw Error("infeasible language spec: cannot place distractors without ambiguity after " +
                      std::to_string(kMaxPlacementRetries) + " retries");
        }
        Implication cand;
        cand.premise = static_cast<int>(rng.below(k));
        cand.conclusion = anchored ? entities[rng.below(depth + 1)] : static_cast<int>(rng.below(k));
        bool ok = cand.premise != cand.conclusion &&
                  std::find(statements.begin(), statements.end(), cand) == statements.end();
        if (ok) {
          statements.push_back(cand);
          ok = check_unique_chain(statements, prov.fact, prov.answer, depth).ok;
          if (!ok) statements.pop_back();
        }
        if (ok) {
          prov.distractors.push_back(cand);
          return;
        }
        ++retries;
      }
    };
    for (int d = 0; d < spec.num_distractors; ++d) place(true);
    for (int d = 0; d < free_distractors; ++d) place(false);

    rng.shuffle(statements);
    // Distractors are recorded in surface order.
    std::vector<Implication> ordered;
    for (const auto& s : statements) {
      if (std::find(prov.chain.begin(), prov.chain.end(), s) == prov.chain.end()) ordered.push_back(s);
    }
    prov.distractors = std::move(ordered);

    GeneratedSequence seq{render_sequence(lang, statements, prov.fact, prov.answer), std::move(prov)};
    if (auto v = validate_sequence(lang, seq); !v) throw Error("generator produced an invalid sequence: " + v.diagnostic);
    corpus.instances.push_back(instance_of(lang, seq));
    corpus.sequences.push_back(std::move(seq));
  }
  return corpus;
}

void write_corpus(const Vocabulary& vocab, const std::vector<TokenSeq>& corpus, const std::string& path) {
  std::string out;
  for (const auto& seq : corpus) out += vocab.decode(seq) + '\n';
  text::write_file(path, out);
}

std::vector<TokenSeq> read_corpus(const Vocabulary& vocab, const std::string& path) {
  std::vector<TokenSeq> corpus;
  std::size_t line_no = 0;
  for (const auto& line : text::read_lines(path)) {
    ++line_no;
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    TokenSeq seq = vocab.encode(line);
    if (seq.back() != vocab.eos()) {
      throw Error("corpus line " + std::to_string(line_no) + " does not end with <eos>: " + path);
    }
    corpus.push_back(std::move(seq));
  }
  return corpus;
}

void write_instances(const Vocabulary& vocab, const std::vector<InferenceInstance>& instances,
                     const std::string& path) {
  std::string out;
  for (const auto& inst : instances) {
    out += vocab.decode(inst.context) + '\t' + vocab.surface(inst.required_token) + '\t' + inst.rule_id + '\n';
  }
  text::write_file(path, out);
}

std::vector<InferenceInstance> read_instances(const Vocabulary& vocab, const std::string& path) {
  std::vector<InferenceInstance> out;
  std::size_t line_no = 0;
  for (const auto& line : text::read_lines(path)) {
    ++line_no;
    if (line.empty()) continue;
    auto fields = text::split(line, '\t');
    if (fields.size() != 3) {
      throw Error("instance line " + std::to_string(line_no) + " must have 3 tab-separated fields: " + path);
    }
    out.push_back({vocab.encode(fields[0]), vocab.id(fields[1]), fields[2]});
  }
  return out;
}

}  // namespace markovlab
