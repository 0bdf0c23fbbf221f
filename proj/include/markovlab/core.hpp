#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace markovlab {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

inline constexpr std::string_view kEosSurface = "<eos>";
inline constexpr std::string_view kPadSurface = "<pad>";

/// Raised for every contract violation in the library. The message always
/// names the offending value so CLI callers can surface it directly.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Finite token alphabet. Ids are positional (0..size-1). "<eos>" is always
/// present; "<pad>" is optional and, when present, carries no probability
/// mass in any kernel.
class Vocabulary {
 public:
  Vocabulary() = default;

  std::size_t size() const { return surfaces_.size(); }
  TokenId eos() const { return eos_; }
  std::optional<TokenId> pad() const { return pad_; }
  bool is_pad(TokenId id) const { return pad_ && *pad_ == id; }
  bool contains(TokenId id) const { return id >= 0 && static_cast<std::size_t>(id) < size(); }

  /// Number of tokens that may carry probability mass (V minus PAD).
  std::size_t support_size() const { return size() - (pad_ ? 1 : 0); }

  const std::string& surface(TokenId id) const;
  TokenId id(std::string_view surface) const;
  std::optional<TokenId> find(std::string_view surface) const;
  const std::vector<std::string>& surfaces() const { return surfaces_; }

  TokenSeq encode(std::string_view text) const;
  std::string decode(std::span<const TokenId> ids) const;

  bool operator==(const Vocabulary& other) const { return surfaces_ == other.surfaces_; }

 private:
  friend Vocabulary make_vocabulary(const std::vector<std::string>& surfaces);

  std::vector<std::string> surfaces_;
  std::unordered_map<std::string, TokenId> index_;
  TokenId eos_ = 0;
  std::optional<TokenId> pad_;
};

/// Ids are assigned by list position; "<eos>" is appended when absent.
Vocabulary make_vocabulary(const std::vector<std::string>& surfaces);

/// One surface per line, line number = id. The literal line "<eos>" is required.
Vocabulary read_vocabulary(const std::string& path);
void write_vocabulary(const Vocabulary& vocab, const std::string& path);

/// Bounded token sequence x in V^{<=L}.
class Context {
 public:
  Context(const Vocabulary& vocab, TokenSeq ids, std::size_t max_len);

  std::span<const TokenId> ids() const { return ids_; }
  std::size_t size() const { return ids_.size(); }
  std::size_t max_len() const { return max_len_; }

  /// The order-n state: the last min(size, n) tokens.
  std::span<const TokenId> suffix(std::size_t n) const;

 private:
  TokenSeq ids_;
  std::size_t max_len_;
};

inline constexpr double kExactTolerance = 1e-9;
inline constexpr double kNeuralTolerance = 1e-6;

/// Probability vector over vocabulary ids. Immutable once validated.
class Distribution {
 public:
  /// Validates non-negativity and normalization within `tolerance`.
  static Distribution from_probs(std::vector<double> probs, double tolerance = kExactTolerance);

  std::size_t size() const { return probs_.size(); }
  double operator[](TokenId id) const { return probs_[static_cast<std::size_t>(id)]; }
  std::span<const double> probs() const { return probs_; }

  bool operator==(const Distribution&) const = default;

 private:
  explicit Distribution(std::vector<double> probs) : probs_(std::move(probs)) {}
  std::vector<double> probs_;
};

Distribution distribution_from_weights(std::span<const double> weights);

/// Uniform over V minus PAD.
Distribution uniform_distribution(const Vocabulary& vocab);

/// Greedy selection; ties go to the lowest id.
TokenId argmax_token(const Distribution& d);

}  // namespace markovlab
