#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "markovlab/core.hpp"

namespace markovlab {

/// A Markov kernel kappa: V^{<=L} -> Delta(V) of finite order.
///
/// Implementations must make evaluate() a function of the last
/// min(|x|, order()) tokens only, and must always return a valid
/// Distribution with zero PAD mass.
class Kernel {
 public:
  virtual ~Kernel() = default;

  virtual std::size_t order() const = 0;
  virtual const Vocabulary& vocabulary() const = 0;
  virtual std::string type_name() const = 0;

  Distribution evaluate(std::span<const TokenId> x) const { return do_evaluate(x); }
  Distribution evaluate(const Context& x) const { return do_evaluate(x.ids()); }

 protected:
  virtual Distribution do_evaluate(std::span<const TokenId> x) const = 0;
};

enum class Fallback { strict, uniform };

/// Explicit transition table keyed by context suffixes of length <= order.
/// Lookup uses exactly the last min(|x|, order) tokens.
class TabularKernel final : public Kernel {
 public:
  using Table = std::map<TokenSeq, Distribution>;

  TabularKernel(Vocabulary vocab, std::size_t order, Table table, Fallback fallback = Fallback::strict);

  std::size_t order() const override { return order_; }
  const Vocabulary& vocabulary() const override { return vocab_; }
  std::string type_name() const override { return "tabular"; }
  const Table& table() const { return table_; }
  Fallback fallback() const { return fallback_; }

 protected:
  Distribution do_evaluate(std::span<const TokenId> x) const override;

 private:
  Vocabulary vocab_;
  std::size_t order_;
  Table table_;
  Fallback fallback_;
};

/// Suffix-key slot used for left padding. Written as "<pad>" in kernel files.
inline constexpr TokenId kPadKey = -1;

/// Additively smoothed n-gram estimate:
///   P(y | s) = (count(y|s) + alpha) / (total(s) + alpha * |V minus PAD|)
/// where s is the last n tokens, left-padded with kPadKey.
class NGramKernel final : public Kernel {
 public:
  using Counts = std::map<TokenSeq, std::vector<std::uint64_t>>;

  NGramKernel(Vocabulary vocab, std::size_t n, double alpha, Counts counts,
              Fallback fallback = Fallback::strict);

  std::size_t order() const override { return n_; }
  const Vocabulary& vocabulary() const override { return vocab_; }
  std::string type_name() const override { return "ngram"; }

  double alpha() const { return alpha_; }
  Fallback fallback() const { return fallback_; }
  const Counts& counts() const { return counts_; }
  std::uint64_t count(const TokenSeq& state, TokenId next) const;
  std::uint64_t total(const TokenSeq& state) const;

  /// The padded length-n state for a context.
  TokenSeq state_of(std::span<const TokenId> x) const;

 protected:
  Distribution do_evaluate(std::span<const TokenId> x) const override;

 private:
  Vocabulary vocab_;
  std::size_t n_;
  double alpha_;
  Counts counts_;
  std::map<TokenSeq, std::uint64_t> totals_;
  Fallback fallback_;
};

/// Exact n-gram counts over every corpus position, EOS transitions included.
NGramKernel estimate_ngram(const Vocabulary& vocab, const std::vector<TokenSeq>& corpus, std::size_t n,
                           double alpha, Fallback fallback = Fallback::strict);

/// Appends argmax tokens until EOS is emitted or max_new tokens were added.
/// Returns prompt followed by the generated tokens.
TokenSeq greedy_rollout(const Kernel& kernel, std::span<const TokenId> prompt, std::size_t max_new);

/// Ancestral sampling from p_i^(1/temperature), driven by a counter-based
/// stream so equal inputs give equal outputs on every platform.
TokenSeq sample_rollout(const Kernel& kernel, std::span<const TokenId> prompt, std::size_t max_new,
                        std::uint64_t seed, double temperature);

struct LogLikelihood {
  double nats = 0.0;
  bool impossible = false;  // some step had probability zero; nats is then -inf
};

/// Sum over positions t >= start of ln kappa(x_t | x_{<t}). The sequence must
/// end with EOS.
LogLikelihood log_likelihood(const Kernel& kernel, std::span<const TokenId> sequence, std::size_t start = 0);

/// Kernel files: "ngram n=<n> alpha=<alpha>" or "tabular n=<n> fallback=<mode>",
/// then a "vocab" line, then one "suffix... token value" line per entry.
void write_kernel_file(const NGramKernel& kernel, const std::string& path);
void write_kernel_file(const TabularKernel& kernel, const std::string& path);
std::unique_ptr<Kernel> read_kernel_file(const std::string& path);
std::string kernel_file_text(const NGramKernel& kernel);
std::string kernel_file_text(const TabularKernel& kernel);
std::unique_ptr<Kernel> parse_kernel_text(const std::string& text);

}  // namespace markovlab
