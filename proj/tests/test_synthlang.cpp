#include <doctest.h>

#include <filesystem>
#include <functional>

#include "markovlab/synthlang.hpp"

using namespace markovlab;

namespace {

// Entities reachable from `fact` in exactly `steps` hops of a walk that
// never revisits, found by exhaustive path search.
std::set<int> hop_targets(const std::vector<Implication>& st, int fact, std::size_t steps) {
  std::set<int> out;
  std::function<void(int, std::size_t, std::set<int>&)> walk = [&](int at, std::size_t left, std::set<int>& seen) {
    if (left == 0) {
      out.insert(at);
      return;
    }
    for (const auto& s : st) {
      if (s.premise == at && !seen.contains(s.conclusion)) {
        seen.insert(s.conclusion);
        walk(s.conclusion, left - 1, seen);
        seen.erase(s.conclusion);
      }
    }
  };
  std::set<int> seen{fact};
  walk(fact, steps, seen);
  return out;
}

}  // namespace

TEST_CASE("vocabulary layout of the synthetic language") {
  SyntheticLanguage lang(4);
  const auto& v = lang.vocabulary();
  CHECK(v.surface(0) == "<pad>");
  CHECK(v.surface(1) == "<eos>");
  CHECK(v.surface(lang.implies()) == "=>");
  CHECK(v.surface(lang.separator()) == ";");
  CHECK(v.surface(lang.query()) == "?");
  CHECK(v.surface(lang.entity_token(3)) == "E3");
  CHECK(lang.entity_of(lang.entity_token(2)) == 2);
  CHECK_FALSE(lang.entity_of(lang.query()).has_value());
  auto again = SyntheticLanguage::from_vocabulary(v);
  CHECK(again.entity_token(3) == lang.entity_token(3));
}

TEST_CASE("solve_entailment closures") {
  CHECK(solve_entailment({{0, 1}}, 0) == std::set<int>{0, 1});
  CHECK(solve_entailment({{0, 1}, {1, 2}}, 0) == std::set<int>{0, 1, 2});
  CHECK(solve_entailment({{1, 2}}, 0) == std::set<int>{0});
  CHECK(solve_entailment({{0, 1}, {1, 0}}, 0) == std::set<int>{0, 1});
  auto levels = derivation_levels({{0, 1}, {1, 2}, {0, 3}}, 0);
  REQUIRE(levels.size() == 3);
  CHECK(levels[1] == std::set<int>{1, 3});
  CHECK(levels[2] == std::set<int>{2});
}

TEST_CASE("validate_sequence on hand-built sequences") {
  SyntheticLanguage lang(4);
  const auto& v = lang.vocabulary();
  auto ok = sequence_from_tokens(lang, v.encode("E0 => E1 ; E0 ; ? E1 <eos>"));
  CHECK(validate_sequence(lang, ok).ok);
  CHECK(ok.provenance.answer == 1);
  CHECK(ok.depth() == 1);

  auto wrong = ok;
  wrong.tokens = v.encode("E0 => E1 ; E0 ; ? E2 <eos>");
  wrong.provenance.answer = 2;
  auto r = validate_sequence(lang, wrong);
  CHECK_FALSE(r.ok);
  CHECK_FALSE(r.diagnostic.empty());

  CHECK_THROWS_AS(sequence_from_tokens(lang, v.encode("E0 => E1 ; E0 => E2 ; E0 ; ? E1 <eos>")), Error);
  CHECK_THROWS_AS(sequence_from_tokens(lang, v.encode("E0 => ; E0 ; ? E1 <eos>")), Error);
  CHECK_THROWS_AS(parse_problem(lang, v.encode("E0 => E1 ; E0 ?")), Error);

  auto p = parse_problem(lang, v.encode("E2 => E3 ; E0 => E1 ; E0 ; ?"));
  CHECK(p.statements.size() == 2);
  CHECK(p.fact == 0);
  CHECK_FALSE(p.answer.has_value());
}

TEST_CASE("two entities and one statement allow a single shape") {
  LanguageSpec spec{.num_entities = 2, .statements_per_sequence = 1, .chain_depth = 1, .num_distractors = 0, .seed = 5};
  auto corpus = generate_corpus(spec, 50);
  SyntheticLanguage lang(2);
  const auto& v = lang.vocabulary();
  for (const auto& s : corpus.sequences) {
    const auto text = v.decode(s.tokens);
    CHECK((text == "E0 => E1 ; E0 ; ? E1 <eos>" || text == "E1 => E0 ; E1 ; ? E0 <eos>"));
  }
}

TEST_CASE("generation is deterministic and passes the oracle") {
  for (int depth = 1; depth <= 3; ++depth) {
    LanguageSpec spec{.num_entities = 8, .statements_per_sequence = depth + 3, .chain_depth = depth,
                      .num_distractors = 1, .seed = static_cast<std::uint64_t>(depth)};
    auto a = generate_corpus(spec, 200);
    auto b = generate_corpus(spec, 200);
    CHECK(a.sequences == b.sequences);
    CHECK(a.instances == b.instances);
    REQUIRE(a.sequences.size() == 200);
    SyntheticLanguage lang(8);
    for (std::size_t i = 0; i < a.sequences.size(); ++i) {
      const auto& s = a.sequences[i];
      CHECK(validate_sequence(lang, s).ok);
      CHECK(s.depth() == static_cast<std::size_t>(depth));
      auto prob = parse_problem(lang, s.tokens);
      CHECK(prob.statements.size() == static_cast<std::size_t>(spec.statements_per_sequence));
      CHECK(solve_entailment(prob.statements, prob.fact).contains(s.provenance.answer));
      CHECK(hop_targets(prob.statements, prob.fact, static_cast<std::size_t>(depth)) ==
            std::set<int>{s.provenance.answer});
      const auto& inst = a.instances[i];
      CHECK(inst.required_token == lang.entity_token(s.provenance.answer));
      CHECK(inst.rule_id == "modus_ponens_depth" + std::to_string(depth));
      CHECK(inst.context.back() == lang.query());
      CHECK(sequence_of(lang, inst) == s);
    }
  }
}

TEST_CASE("anchored distractors conclude on the chain") {
  LanguageSpec spec{.num_entities = 10, .statements_per_sequence = 4, .chain_depth = 2, .num_distractors = 2, .seed = 3};
  auto corpus = generate_corpus(spec, 100);
  for (const auto& s : corpus.sequences) {
    std::set<int> chain_entities{s.provenance.fact};
    for (const auto& c : s.provenance.chain) chain_entities.insert(c.conclusion);
    int anchored = 0;
    for (const auto& d : s.provenance.distractors) anchored += chain_entities.contains(d.conclusion) ? 1 : 0;
    CHECK(anchored >= 2);
    CHECK(s.provenance.distractors.size() == 2);
  }
}

TEST_CASE("invalid and infeasible specs are rejected") {
  CHECK_THROWS_AS(generate_corpus({.num_entities = 2, .statements_per_sequence = 1, .chain_depth = 2}, 1), Error);
  CHECK_THROWS_AS(generate_corpus({.num_entities = 1}, 1), Error);
  CHECK_THROWS_AS(generate_corpus({.num_entities = 4, .statements_per_sequence = 1, .chain_depth = 1, .num_distractors = 1}, 1),
                  Error);
  // With two entities the only distinct extra statement is the back edge.
  CHECK(generate_corpus({.num_entities = 2, .statements_per_sequence = 2, .chain_depth = 1, .num_distractors = 1}, 5)
            .sequences.size() == 5);
  CHECK_THROWS_WITH_AS(
      generate_corpus({.num_entities = 2, .statements_per_sequence = 3, .chain_depth = 1, .num_distractors = 2}, 1),
      doctest::Contains("infeasible"), Error);
}

TEST_CASE("corpus and instance files round trip") {
  LanguageSpec spec{.num_entities = 6, .statements_per_sequence = 3, .chain_depth = 1, .seed = 9};
  auto g = generate_corpus(spec, 30);
  SyntheticLanguage lang(6);
  auto dir = std::filesystem::temp_directory_path();
  auto cpath = (dir / "markovlab_synth.corpus").string();
  auto ipath = (dir / "markovlab_synth.inst").string();
  std::vector<TokenSeq> seqs;
  for (const auto& s : g.sequences) seqs.push_back(s.tokens);
  write_corpus(lang.vocabulary(), seqs, cpath);
  write_instances(lang.vocabulary(), g.instances, ipath);
  CHECK(read_corpus(lang.vocabulary(), cpath) == seqs);
  CHECK(read_instances(lang.vocabulary(), ipath) == g.instances);
  std::filesystem::remove(cpath);
  std::filesystem::remove(ipath);
}
