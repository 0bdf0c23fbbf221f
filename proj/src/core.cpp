#include "markovlab/core.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace markovlab {

namespace {

bool has_whitespace(std::string_view s) {
  return std::any_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

}  // namespace

const std::string& Vocabulary::surface(TokenId id) const {
  if (!contains(id)) throw Error("token id out of range: " + std::to_string(id));
  return surfaces_[static_cast<std::size_t>(id)];
}

std::optional<TokenId> Vocabulary::find(std::string_view surface) const {
  auto it = index_.find(std::string(surface));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::id(std::string_view surface) const {
  if (auto found = find(surface)) return *found;
  throw Error("unknown surface: \"" + std::string(surface) + "\"");
}

TokenSeq Vocabulary::encode(std::string_view text) const {
  TokenSeq out;
  std::istringstream in{std::string(text)};
  std::string word;
  while (in >> word) out.push_back(id(word));
  return out;
}

std::string Vocabulary::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += surface(ids[i]);
  }
  return out;
}

Vocabulary make_vocabulary(const std::vector<std::string>& surfaces) {
  if (surfaces.empty()) throw Error("empty vocabulary");
  Vocabulary v;
  auto add = [&v](const std::string& s) {
    if (s.empty()) throw Error("empty surface");
    if (has_whitespace(s)) throw Error("surface contains whitespace: \"" + s + "\"");
    auto id = static_cast<TokenId>(v.surfaces_.size());
    if (!v.index_.emplace(s, id).second) throw Error("duplicate surface: \"" + s + "\"");
    v.surfaces_.push_back(s);
  };
  for (const auto& s : surfaces) add(s);
  if (!v.index_.contains(std::string(kEosSurface))) add(std::string(kEosSurface));
  v.eos_ = v.index_.at(std::string(kEosSurface));
  if (auto it = v.index_.find(std::string(kPadSurface)); it != v.index_.end()) v.pad_ = it->second;
  return v;
}

Vocabulary read_vocabulary(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open vocabulary file: " + path);
  std::vector<std::string> lines;
  std::string line;
  bool saw_eos = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    saw_eos = saw_eos || line == kEosSurface;
    lines.push_back(line);
  }
  if (!saw_eos) throw Error("vocabulary file lacks the \"<eos>\" line: " + path);
  return make_vocabulary(lines);
}

void write_vocabulary(const Vocabulary& vocab, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write vocabulary file: " + path);
  for (const auto& s : vocab.surfaces()) out << s << '\n';
}

Context::Context(const Vocabulary& vocab, TokenSeq ids, std::size_t max_len)
    : ids_(std::move(ids)), max_len_(max_len) {
  if (max_len_ == 0) throw Error("context window must be positive");
  if (ids_.size() > max_len_) {
    throw Error("context length " + std::to_string(ids_.size()) + " exceeds window " +
                std::to_string(max_len_));
  }
  for (TokenId t : ids_) {
    if (!vocab.contains(t)) throw Error("context token id out of range: " + std::to_string(t));
  }
}

std::span<const TokenId> Context::suffix(std::size_t n) const {
  std::span<const TokenId> all(ids_);
  return all.last(std::min(n, all.size()));
}

Distribution Distribution::from_probs(std::vector<double> probs, double tolerance) {
  if (probs.empty()) throw Error("distribution over an empty vocabulary");
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw Error("distribution has a negative or non-finite entry");
    sum += p;
  }
  if (std::abs(sum - 1.0) > tolerance) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "distribution sums to " << sum << ", not 1";
    throw Error(msg.str());
  }
  return Distribution(std::move(probs));
}

Distribution distribution_from_weights(std::span<const double> weights) {
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw Error("negative or non-finite weight");
    total += w;
  }
  if (!(total > 0.0)) throw Error("all-zero weights");
  std::vector<double> probs(weights.begin(), weights.end());
  for (double& p : probs) p /= total;
  return Distribution::from_probs(std::move(probs));
}

Distribution uniform_distribution(const Vocabulary& vocab) {
  std::vector<double> w(vocab.size(), 1.0);
  if (auto pad = vocab.pad()) w[static_cast<std::size_t>(*pad)] = 0.0;
  return distribution_from_weights(w);
}

TokenId argmax_token(const Distribution& d) {
  auto probs = d.probs();
  // max_element returns the first maximum, which is the lowest id.
  return static_cast<TokenId>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

}  // namespace markovlab
