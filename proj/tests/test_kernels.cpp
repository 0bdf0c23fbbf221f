#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "markovlab/kernels.hpp"
#include "markovlab/metrics.hpp"
#include "oracles.hpp"

using namespace markovlab;

namespace {

Vocabulary ab_vocab() { return make_vocabulary({"a", "b"}); }

TabularKernel::Table point_table(std::initializer_list<std::pair<TokenSeq, TokenId>> rows, std::size_t vsize) {
  TabularKernel::Table t;
  for (auto& [key, y] : rows) {
    std::vector<double> p(vsize, 0.0);
    p[static_cast<std::size_t>(y)] = 1.0;
    t.emplace(key, Distribution::from_probs(p));
  }
  return t;
}

// Tabular kernel with the ngram's distributions, keyed by unpadded suffix.
TabularKernel as_tabular(const NGramKernel& k) {
  TabularKernel::Table t;
  for (const auto& [state, row] : k.counts()) {
    TokenSeq key;
    for (TokenId s : state) {
      if (s != kPadKey) key.push_back(s);
    }
    t.emplace(key, k.evaluate(key));
  }
  return TabularKernel(k.vocabulary(), k.order(), t);
}

}  // namespace

TEST_CASE("tabular lookup and fallback") {
  auto v = ab_vocab();
  TabularKernel k(v, 1, point_table({{{0}, 1}}, v.size()));
  auto d = k.evaluate(TokenSeq{0});
  CHECK(d[1] == 1.0);
  CHECK_THROWS_WITH_AS(k.evaluate(TokenSeq{1}), doctest::Contains("unseen context: \"b\""), Error);

  TabularKernel u(v, 1, point_table({{{0}, 1}}, v.size()), Fallback::uniform);
  auto du = u.evaluate(TokenSeq{1});
  for (double p : du.probs()) CHECK(p == doctest::Approx(1.0 / 3));
}

TEST_CASE("bigram counts on a b a b a include the EOS transition") {
  auto v = ab_vocab();
  auto corpus = std::vector<TokenSeq>{v.encode("a b a b a <eos>")};
  auto k = estimate_ngram(v, corpus, 1, 0.0);
  CHECK(k.evaluate(TokenSeq{0})[1] == doctest::Approx(2.0 / 3).epsilon(1e-15));
  CHECK(k.evaluate(TokenSeq{0})[v.eos()] == doctest::Approx(1.0 / 3).epsilon(1e-15));
  CHECK(k.evaluate(TokenSeq{1})[0] == 1.0);
  CHECK(k.count({0}, 1) == 2);
  CHECK(k.total({0}) == 3);

  auto smoothed = estimate_ngram(v, corpus, 1, 1.0);
  CHECK(smoothed.evaluate(TokenSeq{0})[1] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("large alpha approaches uniform") {
  auto v = ab_vocab();
  auto k = estimate_ngram(v, {v.encode("a b a b a <eos>")}, 1, 1e9);
  auto d = k.evaluate(TokenSeq{0});
  for (double p : d.probs()) CHECK(p == doctest::Approx(1.0 / 3).epsilon(1e-6));
}

TEST_CASE("estimate_ngram errors") {
  auto v = make_vocabulary({"<pad>", "a", "<eos>"});
  CHECK_THROWS_WITH_AS(estimate_ngram(v, {}, 1, 0.0), "empty corpus", Error);
  CHECK_THROWS_WITH_AS(estimate_ngram(v, {{1, 1}}, 1, 0.0), doctest::Contains("<eos>"), Error);
  CHECK_THROWS_WITH_AS(estimate_ngram(v, {{0, 1, 2}}, 1, 0.0), doctest::Contains("<pad>"), Error);
  auto k = estimate_ngram(v, {{1, 2}}, 2, 0.0);
  CHECK_THROWS_WITH_AS(k.evaluate(TokenSeq{2, 2}), doctest::Contains("unseen context"), Error);
}

TEST_CASE("short contexts are left padded") {
  auto v = ab_vocab();
  auto k = estimate_ngram(v, {v.encode("a b <eos>"), v.encode("b b <eos>")}, 2, 0.0);
  CHECK(k.state_of(TokenSeq{}) == TokenSeq{kPadKey, kPadKey});
  CHECK(k.state_of(TokenSeq{1}) == TokenSeq{kPadKey, 1});
  CHECK(k.evaluate(TokenSeq{})[0] == doctest::Approx(0.5));
  CHECK(k.evaluate(TokenSeq{1})[1] == 1.0);
  CHECK(k.evaluate(TokenSeq{0})[1] == 1.0);
}

TEST_CASE("alpha = 0 estimate agrees with the brute-force frequency counter") {
  RandomStream rng(7);
  auto v = make_vocabulary({"a", "b", "c"});
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 1 + rng.below(3);
    auto corpus = oracle::random_corpus(rng, 1 + rng.below(20), 15, 3, v.eos());
    auto k = estimate_ngram(v, corpus, n, 0.0);
    auto freq = oracle::conditional_frequencies(corpus, n);
    REQUIRE(freq.size() == k.counts().size());
    for (const auto& [state, row] : freq) {
      auto d = k.evaluate(std::span<const TokenId>(state).subspan(
          static_cast<std::size_t>(std::count(state.begin(), state.end(), kPadKey))));
      for (TokenId y = 0; y < static_cast<TokenId>(v.size()); ++y) {
        const double expect = row.contains(y) ? row.at(y) : 0.0;
        CHECK(std::abs(d[y] - expect) <= 1e-12);
      }
    }
  }
}

TEST_CASE("estimation is equivariant under vocabulary relabelling") {
  RandomStream rng(8);
  auto v = make_vocabulary({"a", "b", "c", "d"});
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.below(2);
    auto corpus = oracle::random_corpus(rng, 10, 12, 4, v.eos());
    std::vector<TokenId> pi(v.size());
    std::iota(pi.begin(), pi.end(), 0);
    rng.shuffle(pi);
    std::vector<std::string> surfaces(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) surfaces[static_cast<std::size_t>(pi[i])] = v.surface(static_cast<TokenId>(i));
    auto pv = make_vocabulary(surfaces);
    std::vector<TokenSeq> pc;
    for (const auto& s : corpus) {
      TokenSeq t;
      for (TokenId x : s) t.push_back(pi[static_cast<std::size_t>(x)]);
      pc.push_back(t);
    }
    auto k = estimate_ngram(v, corpus, n, 0.0);
    auto pk = estimate_ngram(pv, pc, n, 0.0);
    REQUIRE(k.counts().size() == pk.counts().size());
    for (const auto& [state, row] : k.counts()) {
      TokenSeq ps;
      for (TokenId s : state) ps.push_back(s == kPadKey ? kPadKey : pi[static_cast<std::size_t>(s)]);
      for (TokenId y = 0; y < static_cast<TokenId>(v.size()); ++y) CHECK(pk.count(ps, pi[static_cast<std::size_t>(y)]) == row[static_cast<std::size_t>(y)]);
    }
    for (const auto& s : corpus) {
      TokenSeq prefix(s.begin(), s.end() - 1);
      TokenSeq pprefix;
      for (TokenId x : prefix) pprefix.push_back(pi[static_cast<std::size_t>(x)]);
      CHECK(pk.evaluate(pprefix) == pushforward(k.evaluate(prefix), pi));
    }
  }
}

TEST_CASE("evaluate depends only on the last n tokens") {
  RandomStream rng(9);
  auto v = make_vocabulary({"a", "b", "c"});
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.below(3);
    auto k = estimate_ngram(v, oracle::random_corpus(rng, 5, 10, 3, v.eos()), n, 0.5);
    auto t = oracle::random_tabular(rng, v, n);
    TokenSeq suffix(n), x, y;
    for (auto& s : suffix) s = static_cast<TokenId>(rng.below(v.size()));
    for (std::size_t i = rng.below(5); i > 0; --i) x.push_back(static_cast<TokenId>(rng.below(v.size())));
    for (std::size_t i = rng.below(5); i > 0; --i) y.push_back(static_cast<TokenId>(rng.below(v.size())));
    x.insert(x.end(), suffix.begin(), suffix.end());
    y.insert(y.end(), suffix.begin(), suffix.end());
    CHECK(k.evaluate(x) == k.evaluate(y));
    CHECK(t.evaluate(x) == t.evaluate(y));
  }
}

TEST_CASE("greedy rollout on an alternating kernel") {
  auto v = ab_vocab();
  TabularKernel k(v, 1, point_table({{{0}, 1}, {{1}, 0}}, v.size()));
  CHECK(greedy_rollout(k, TokenSeq{0}, 3) == v.encode("a b a b"));

  TabularKernel stop(v, 1, point_table({{{0}, v.eos()}}, v.size()));
  CHECK(greedy_rollout(stop, TokenSeq{0}, 5) == v.encode("a <eos>"));
}

TEST_CASE("greedy prefix absorption on random tabular kernels") {
  RandomStream rng(10);
  auto v = make_vocabulary({"a", "b", "c"});
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(3);
    auto k = oracle::random_tabular(rng, v, n);
    TokenSeq x(1 + rng.below(4));
    for (auto& t : x) t = static_cast<TokenId>(rng.below(v.size() - 1));
    const std::size_t m = 2 + rng.below(8);
    auto full = greedy_rollout(k, x, m);
    if (full.size() == x.size() || full[x.size()] == v.eos()) continue;
    TokenSeq extended = x;
    extended.push_back(full[x.size()]);
    CHECK(greedy_rollout(k, extended, m - 1) == full);
  }
}

TEST_CASE("sampling is deterministic and tends to greedy as temperature falls") {
  RandomStream rng(12);
  auto v = make_vocabulary({"a", "b", "c"});
  for (int trial = 0; trial < 50; ++trial) {
    auto k = oracle::random_tabular(rng, v, 2);
    TokenSeq x{static_cast<TokenId>(rng.below(3))};
    CHECK(sample_rollout(k, x, 10, 42, 1.0) == sample_rollout(k, x, 10, 42, 1.0));
    CHECK(sample_rollout(k, x, 10, trial, 1e-6) == greedy_rollout(k, x, 10));
  }
  TabularKernel det(make_vocabulary({"a", "b"}), 1, point_table({{{0}, 1}, {{1}, 0}}, 3));
  for (std::uint64_t seed = 0; seed < 20; ++seed) CHECK(sample_rollout(det, TokenSeq{0}, 6, seed, 2.5) == greedy_rollout(det, TokenSeq{0}, 6));
  CHECK_THROWS_AS(sample_rollout(det, TokenSeq{0}, 6, 1, 0.0), Error);
  CHECK_THROWS_AS(sample_rollout(det, TokenSeq{0}, 6, 1, -1.0), Error);
}

TEST_CASE("sampling frequencies follow the kernel") {
  auto v = ab_vocab();
  TabularKernel::Table t;
  t.emplace(TokenSeq{}, Distribution::from_probs({0.2, 0.3, 0.5}));
  TabularKernel k(v, 1, t);
  std::vector<int> hist(3);
  for (std::uint64_t seed = 0; seed < 20000; ++seed) ++hist[static_cast<std::size_t>(sample_rollout(k, TokenSeq{}, 1, seed, 1.0)[0])];
  CHECK(hist[0] == doctest::Approx(4000).epsilon(0.05));
  CHECK(hist[1] == doctest::Approx(6000).epsilon(0.05));
  CHECK(hist[2] == doctest::Approx(10000).epsilon(0.05));
}

TEST_CASE("log likelihood closed forms") {
  auto v = ab_vocab();
  TabularKernel k(v, 1, point_table({{{}, 0}, {{0}, 1}, {{1}, v.eos()}}, v.size()));
  auto seq = greedy_rollout(k, TokenSeq{}, 10);
  CHECK(seq == v.encode("a b <eos>"));
  auto ll = log_likelihood(k, seq);
  CHECK_FALSE(ll.impossible);
  CHECK(ll.nats == 0.0);

  TabularKernel u(v, 1, {}, Fallback::uniform);
  auto s = v.encode("a a b a <eos>");
  CHECK(log_likelihood(u, s).nats == doctest::Approx(5 * std::log(1.0 / 3)).epsilon(1e-14));
  CHECK(log_likelihood(u, s, 2).nats == doctest::Approx(3 * std::log(1.0 / 3)).epsilon(1e-14));

  auto bad = log_likelihood(k, v.encode("b <eos>"));
  CHECK(bad.impossible);
  CHECK(bad.nats == -std::numeric_limits<double>::infinity());
  CHECK_THROWS_AS(log_likelihood(k, v.encode("a b")), Error);
}

TEST_CASE("the alpha = 0 estimate maximizes corpus likelihood") {
  RandomStream rng(13);
  auto v = make_vocabulary({"a", "b", "c"});
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.below(2);
    auto corpus = oracle::random_corpus(rng, 8, 10, 3, v.eos());
    auto mle = estimate_ngram(v, corpus, n, 0.0);
    auto score = [&](const Kernel& k) {
      double s = 0;
      for (const auto& seq : corpus) s += log_likelihood(k, seq).nats;
      return s;
    };
    const double best = score(mle);
    auto tab = as_tabular(mle);
    CHECK(score(tab) == doctest::Approx(best).epsilon(1e-12));
    for (int p = 0; p < 10; ++p) {
      const double lambda = 0.01 + 0.5 * rng.uniform();
      TabularKernel::Table t;
      for (const auto& [key, d] : tab.table()) {
        std::vector<double> w(d.size());
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = (1 - lambda) * d.probs()[i] + lambda * rng.uniform();
        t.emplace(key, distribution_from_weights(w));
      }
      CHECK(score(TabularKernel(v, n, t)) < best);
    }
  }
}

TEST_CASE("kernel files round trip exactly") {
  RandomStream rng(14);
  auto v = make_vocabulary({"<pad>", "<eos>", "x", "=>"});
  auto corpus = std::vector<TokenSeq>{{2, 3, 2, 1}, {3, 3, 1}, {2, 1}};
  auto path = (std::filesystem::temp_directory_path() / "markovlab_kernel_test.ngram").string();
  for (double alpha : {0.0, 0.1, 1.0 / 3}) {
    auto k = estimate_ngram(v, corpus, 2, alpha, Fallback::uniform);
    write_kernel_file(k, path);
    auto back = read_kernel_file(path);
    auto* ng = dynamic_cast<NGramKernel*>(back.get());
    REQUIRE(ng != nullptr);
    CHECK(ng->counts() == k.counts());
    CHECK(ng->alpha() == k.alpha());
    CHECK(ng->fallback() == Fallback::uniform);
    CHECK(ng->vocabulary() == v);
    CHECK(kernel_file_text(*ng) == kernel_file_text(k));
  }
  auto t = oracle::random_tabular(rng, make_vocabulary({"a", "b"}), 2);
  write_kernel_file(t, path);
  auto back = read_kernel_file(path);
  auto* tb = dynamic_cast<TabularKernel*>(back.get());
  REQUIRE(tb != nullptr);
  CHECK(tb->table() == t.table());
  std::filesystem::remove(path);

  CHECK_THROWS_AS(parse_kernel_text("bogus n=1\n"), Error);
  CHECK_THROWS_AS(parse_kernel_text("ngram alpha=0\nvocab a <eos>\n"), Error);
  CHECK_THROWS_AS(parse_kernel_text(""), Error);
}
