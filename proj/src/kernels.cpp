#include "markovlab/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "markovlab/random.hpp"
#include "text.hpp"

namespace markovlab {

namespace {

std::string describe_key(const Vocabulary& vocab, const TokenSeq& key) {
  std::string out = "\"";
  for (std::size_t i = 0; i < key.size(); ++i) {
    if (i) out += ' ';
    out += key[i] == kPadKey ? std::string(kPadSurface) : vocab.surface(key[i]);
  }
  return out + "\"";
}

void check_tokens(const Vocabulary& vocab, std::span<const TokenId> x) {
  for (TokenId t : x) {
    if (!vocab.contains(t)) throw Error("token id out of range: " + std::to_string(t));
  }
}

}  // namespace

TabularKernel::TabularKernel(Vocabulary vocab, std::size_t order, Table table, Fallback fallback)
    : vocab_(std::move(vocab)), order_(order), table_(std::move(table)), fallback_(fallback) {
  if (order_ == 0) throw Error("kernel order must be positive");
  for (const auto& [key, dist] : table_) {
    if (key.size() > order_) throw Error("table key longer than kernel order: " + describe_key(vocab_, key));
    check_tokens(vocab_, key);
    if (dist.size() != vocab_.size()) throw Error("table distribution size does not match vocabulary");
    if (auto pad = vocab_.pad(); pad && dist[*pad] != 0.0) {
      throw Error("table assigns PAD nonzero mass at " + describe_key(vocab_, key));
    }
  }
}

Distribution TabularKernel::do_evaluate(std::span<const TokenId> x) const {
  check_tokens(vocab_, x);
  auto suffix = x.last(std::min(order_, x.size()));
  TokenSeq key(suffix.begin(), suffix.end());
  if (auto it = table_.find(key); it != table_.end()) return it->second;
  if (fallback_ == Fallback::uniform) return uniform_distribution(vocab_);
  throw Error("unseen context: " + describe_key(vocab_, key));
}

NGramKernel::NGramKernel(Vocabulary vocab, std::size_t n, double alpha, Counts counts, Fallback fallback)
    : vocab_(std::move(vocab)), n_(n), alpha_(alpha), counts_(std::move(counts)), fallback_(fallback) {
  if (n_ == 0) throw Error("n-gram order must be positive");
  if (!(alpha_ >= 0.0) || !std::isfinite(alpha_)) throw Error("alpha must be a finite non-negative number");
  for (const auto& [state, row] : counts_) {
    if (state.size() != n_) throw Error("n-gram state of wrong length: " + describe_key(vocab_, state));
    for (TokenId t : state) {
      if (t != kPadKey && !vocab_.contains(t)) throw Error("n-gram state token out of range");
    }
    if (row.size() != vocab_.size()) throw Error("n-gram count row does not match vocabulary size");
    if (auto pad = vocab_.pad(); pad && row[static_cast<std::size_t>(*pad)] != 0) {
      throw Error("n-gram counts include PAD as a next token");
    }
    std::uint64_t sum = 0;
    for (auto c : row) sum += c;
    totals_[state] = sum;
  }
}

TokenSeq NGramKernel::state_of(std::span<const TokenId> x) const {
  TokenSeq state(n_, kPadKey);
  const std::size_t take = std::min(n_, x.size());
  for (std::size_t i = 0; i < take; ++i) {
    TokenId t = x[x.size() - take + i];
    state[n_ - take + i] = vocab_.is_pad(t) ? kPadKey : t;
  }
  return state;
}

std::uint64_t NGramKernel::count(const TokenSeq& state, TokenId next) const {
  auto it = counts_.find(state);
  return it == counts_.end() ? 0 : it->second.at(static_cast<std::size_t>(next));
}

std::uint64_t NGramKernel::total(const TokenSeq& state) const {
  auto it = totals_.find(state);
  return it == totals_.end() ? 0 : it->second;
}

Distribution NGramKernel::do_evaluate(std::span<const TokenId> x) const {
  check_tokens(vocab_, x);
  TokenSeq state = state_of(x);
  auto it = counts_.find(state);
  const double support = static_cast<double>(vocab_.support_size());
  const double tot = it == counts_.end() ? 0.0 : static_cast<double>(totals_.at(state));
  const double denom = tot + alpha_ * support;
  if (denom == 0.0) {
    if (fallback_ == Fallback::uniform) return uniform_distribution(vocab_);
    throw Error("unseen context: " + describe_key(vocab_, state));
  }
  std::vector<double> probs(vocab_.size());
  for (std::size_t y = 0; y < probs.size(); ++y) {
    if (vocab_.is_pad(static_cast<TokenId>(y))) continue;
    const double c = it == counts_.end() ? 0.0 : static_cast<double>(it->second[y]);
    probs[y] = (c + alpha_) / denom;
  }
  return Distribution::from_probs(std::move(probs));
}

NGramKernel estimate_ngram(const Vocabulary& vocab, const std::vector<TokenSeq>& corpus, std::size_t n,
                           double alpha, Fallback fallback) {
  if (corpus.empty()) throw Error("empty corpus");
  if (n == 0) throw Error("n-gram order must be positive");
  NGramKernel::Counts counts;
  for (std::size_t s = 0; s < corpus.size(); ++s) {
    const auto& seq = corpus[s];
    if (seq.empty() || seq.back() != vocab.eos()) {
      throw Error("corpus sequence " + std::to_string(s) + " does not end with <eos>");
    }
    check_tokens(vocab, seq);
    TokenSeq state(n, kPadKey);
    for (TokenId t : seq) {
      if (vocab.is_pad(t)) throw Error("corpus sequence " + std::to_string(s) + " contains <pad>");
      auto& row = counts[state];
      if (row.empty()) row.assign(vocab.size(), 0);
      ++row[static_cast<std::size_t>(t)];
      state.erase(state.begin());
      state.push_back(t);
    }
  }
  return NGramKernel(vocab, n, alpha, std::move(counts), fallback);
}

TokenSeq greedy_rollout(const Kernel& kernel, std::span<const TokenId> prompt, std::size_t max_new) {
  TokenSeq out(prompt.begin(), prompt.end());
  const TokenId eos = kernel.vocabulary().eos();
  for (std::size_t i = 0; i < max_new; ++i) {
    TokenId next = argmax_token(kernel.evaluate(out));
    out.push_back(next);
    if (next == eos) break;
  }
  return out;
}

TokenSeq sample_rollout(const Kernel& kernel, std::span<const TokenId> prompt, std::size_t max_new,
                        std::uint64_t seed, double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw Error("temperature must be positive");
  RandomStream rng(seed);
  TokenSeq out(prompt.begin(), prompt.end());
  const TokenId eos = kernel.vocabulary().eos();
  std::vector<double> weights;
  for (std::size_t i = 0; i < max_new; ++i) {
    Distribution d = kernel.evaluate(out);
    auto probs = d.probs();
    // p^(1/T) in log space, shifted by the max so small temperatures do not
    // overflow; zero-probability tokens stay at zero.
    double max_log = -std::numeric_limits<double>::infinity();
    for (double p : probs) {
      if (p > 0.0) max_log = std::max(max_log, std::log(p) / temperature);
    }
    weights.assign(probs.size(), 0.0);
    double total = 0.0;
    for (std::size_t y = 0; y < probs.size(); ++y) {
      if (probs[y] > 0.0) weights[y] = std::exp(std::log(probs[y]) / temperature - max_log);
      total += weights[y];
    }
    const double u = rng.uniform() * total;
    double acc = 0.0;
    TokenId next = argmax_token(d);
    for (std::size_t y = 0; y < weights.size(); ++y) {
      if (weights[y] == 0.0) continue;
      acc += weights[y];
      if (u < acc) {
        next = static_cast<TokenId>(y);
        break;
      }
    }
    out.push_back(next);
    if (next == eos) break;
  }
  return out;
}

LogLikelihood log_likelihood(const Kernel& kernel, std::span<const TokenId> sequence, std::size_t start) {
  if (sequence.empty()) throw Error("cannot score an empty sequence");
  if (sequence.back() != kernel.vocabulary().eos()) throw Error("scored sequence must end with <eos>");
  if (start >= sequence.size()) throw Error("scoring start is past the end of the sequence");
  LogLikelihood ll;
  for (std::size_t t = start; t < sequence.size(); ++t) {
    double p = kernel.evaluate(sequence.first(t))[sequence[t]];
    if (p == 0.0) {
      ll.impossible = true;
      ll.nats = -std::numeric_limits<double>::infinity();
      return ll;
    }
    ll.nats += std::log(p);
  }
  return ll;
}

// ---------------------------------------------------------------------------
// Kernel files

namespace {

std::string key_surfaces(const Vocabulary& vocab, const TokenSeq& key) {
  std::string out;
  for (TokenId t : key) {
    out += t == kPadKey ? std::string(kPadSurface) : vocab.surface(t);
    out += ' ';
  }
  return out;
}

std::string vocab_line(const Vocabulary& vocab) {
  std::string out = "vocab";
  for (const auto& s : vocab.surfaces()) out += ' ' + s;
  return out + '\n';
}

std::map<std::string, std::string> header_fields(const std::vector<std::string>& words, std::size_t from) {
  std::map<std::string, std::string> out;
  for (std::size_t i = from; i < words.size(); ++i) {
    auto eq = words[i].find('=');
    if (eq == std::string::npos) throw Error("malformed kernel header field: \"" + words[i] + "\"");
    out[words[i].substr(0, eq)] = words[i].substr(eq + 1);
  }
  return out;
}

Fallback parse_fallback(const std::string& s) {
  if (s == "strict") return Fallback::strict;
  if (s == "uniform") return Fallback::uniform;
  throw Error("unknown fallback mode: \"" + s + "\"");
}

const char* fallback_name(Fallback f) { return f == Fallback::strict ? "strict" : "uniform"; }

}  // namespace

std::string kernel_file_text(const NGramKernel& kernel) {
  const auto& vocab = kernel.vocabulary();
  std::string out = "ngram n=" + std::to_string(kernel.order()) + " alpha=" + text::format_double(kernel.alpha());
  if (kernel.fallback() != Fallback::strict) out += std::string(" fallback=") + fallback_name(kernel.fallback());
  out += '\n' + vocab_line(vocab);
  for (const auto& [state, row] : kernel.counts()) {
    const std::string prefix = key_surfaces(vocab, state);
    for (std::size_t y = 0; y < row.size(); ++y) {
      if (row[y] == 0) continue;
      out += prefix + vocab.surface(static_cast<TokenId>(y)) + ' ' + std::to_string(row[y]) + '\n';
    }
  }
  return out;
}

std::string kernel_file_text(const TabularKernel& kernel) {
  const auto& vocab = kernel.vocabulary();
  std::string out = "tabular n=" + std::to_string(kernel.order()) + " fallback=" + fallback_name(kernel.fallback()) + '\n';
  out += vocab_line(vocab);
  for (const auto& [key, dist] : kernel.table()) {
    const std::string prefix = key_surfaces(vocab, key);
    for (std::size_t y = 0; y < dist.size(); ++y) {
      double p = dist[static_cast<TokenId>(y)];
      if (p == 0.0) continue;
      out += prefix + vocab.surface(static_cast<TokenId>(y)) + ' ' + text::format_double(p) + '\n';
    }
  }
  return out;
}

void write_kernel_file(const NGramKernel& kernel, const std::string& path) {
  text::write_file(path, kernel_file_text(kernel));
}

void write_kernel_file(const TabularKernel& kernel, const std::string& path) {
  text::write_file(path, kernel_file_text(kernel));
}

std::unique_ptr<Kernel> parse_kernel_text(const std::string& content) {
  std::istringstream in(content);
  std::string line;
  if (!std::getline(in, line)) throw Error("kernel file is empty");
  const auto header = text::split_ws(line);
  if (header.empty() || (header[0] != "ngram" && header[0] != "tabular")) {
    throw Error("kernel file header must start with \"ngram\" or \"tabular\"");
  }
  const bool is_ngram = header[0] == "ngram";
  auto fields = header_fields(header, 1);
  if (!fields.contains("n")) throw Error("kernel header lacks n=");
  const std::size_t n = text::parse_uint(fields["n"]);
  const double alpha = is_ngram ? text::parse_double(fields.count("alpha") ? fields["alpha"] : "") : 0.0;
  const Fallback fallback = fields.count("fallback") ? parse_fallback(fields["fallback"]) : Fallback::strict;

  if (!std::getline(in, line)) throw Error("kernel file lacks a vocab line");
  auto vocab_words = text::split_ws(line);
  if (vocab_words.empty() || vocab_words[0] != "vocab") throw Error("kernel file lacks a vocab line");
  vocab_words.erase(vocab_words.begin());
  const Vocabulary vocab = make_vocabulary(vocab_words);

  NGramKernel::Counts counts;
  std::map<TokenSeq, std::vector<double>> rows;
  std::size_t line_no = 2;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto words = text::split_ws(line);
    if (words.empty()) continue;
    if (words.size() < 2) throw Error("kernel file line " + std::to_string(line_no) + " is malformed");
    const std::size_t key_len = words.size() - 2;
    if (is_ngram && key_len != n) {
      throw Error("kernel file line " + std::to_string(line_no) + " has a suffix of wrong length");
    }
    TokenSeq key;
    for (std::size_t i = 0; i < key_len; ++i) {
      key.push_back(words[i] == kPadSurface && is_ngram ? kPadKey : vocab.id(words[i]));
    }
    const auto y = static_cast<std::size_t>(vocab.id(words[key_len]));
    if (is_ngram) {
      auto& row = counts[key];
      if (row.empty()) row.assign(vocab.size(), 0);
      row[y] += text::parse_uint(words[key_len + 1]);
    } else {
      auto& row = rows[key];
      if (row.empty()) row.assign(vocab.size(), 0.0);
      row[y] = text::parse_double(words[key_len + 1]);
    }
  }
  if (is_ngram) return std::make_unique<NGramKernel>(vocab, n, alpha, std::move(counts), fallback);
  TabularKernel::Table table;
  for (auto& [key, row] : rows) table.emplace(key, Distribution::from_probs(std::move(row)));
  return std::make_unique<TabularKernel>(vocab, n, std::move(table), fallback);
}

std::unique_ptr<Kernel> read_kernel_file(const std::string& path) {
  return parse_kernel_text(text::read_file(path));
}

}  // namespace markovlab
