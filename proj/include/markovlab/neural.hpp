#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "markovlab/kernels.hpp"

namespace markovlab::neural {

struct ModelConfig {
  std::size_t d_model = 32;
  std::size_t n_layers = 1;
  std::size_t n_heads = 1;
  std::size_t context_len = 32;
  std::size_t vocab_size = 0;
  std::uint64_t init_seed = 0;
  double init_scale = 0.02;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

enum class Optimizer { adam, sgd };

struct TrainConfig {
  Optimizer optimizer = Optimizer::adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t steps = 1000;
  std::size_t batch_size = 32;
  std::uint64_t shuffle_seed = 0;
};

/// Named block of the flat parameter vector, stored row-major.
struct Tensor {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t offset = 0;
  std::size_t size() const { return rows * cols; }
};

/// Where every tensor lives in the flat parameter vector.
///
/// Pre-norm blocks: x += Attn(LN1(x)); x += MLP(LN2(x)); then a final LN and
/// an untied output projection. Attention is single-head and causal; the MLP
/// is d -> 4d -> d with tanh-approximated GELU.
struct Layout {
  struct Block {
    std::size_t ln1_gain, ln1_bias, wq, wk, wv, wo, ln2_gain, ln2_bias, w1, b1, w2, b2;
  };

  explicit Layout(const ModelConfig& config);

  std::vector<Tensor> tensors;
  std::size_t total = 0;
  std::size_t token_embedding = 0, position_embedding = 0;
  std::vector<Block> blocks;
  std::size_t lnf_gain = 0, lnf_bias = 0, w_out = 0;
};

/// theta: every trainable value in one flat vector. Gradients share the type.
struct Parameters {
  ModelConfig config;
  std::vector<double> values;

  const Tensor& tensor(std::size_t index) const { return layout().tensors.at(index); }
  Layout layout() const { return Layout(config); }
  bool all_finite() const;
};

using Gradient = Parameters;

/// Embeddings and matrices ~ N(0, init_scale^2); LayerNorm gains 1, biases 0;
/// MLP biases 0.
Parameters init_parameters(const ModelConfig& config);

/// Next-token distribution after the last min(|x|, L) tokens. PAD, when the
/// vocabulary has one, gets probability exactly 0.
Distribution forward(const Parameters& params, const Vocabulary& vocab, std::span<const TokenId> x);

/// Mean next-token cross-entropy (nats) over every position t >= 1 of every
/// sequence; position t is predicted from the most recent L tokens before it.
double loss(const Parameters& params, const Vocabulary& vocab, const std::vector<TokenSeq>& batch);

struct LossAndGradient {
  double loss = 0.0;
  Gradient gradient;
};

/// Exact reverse-mode gradient of loss().
LossAndGradient loss_and_gradient(const Parameters& params, const Vocabulary& vocab,
                                  const std::vector<TokenSeq>& batch);
Gradient grad(const Parameters& params, const Vocabulary& vocab, const std::vector<TokenSeq>& batch);

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
  std::string worst_tensor;
};

/// Central differences on a seeded, tensor-stratified sample of at least
/// `min_coords` coordinates, compared with `analytic`:
///   |a - n| / max(|a|, |n|, 1e-8).
GradCheckResult finite_diff_check_against(const Parameters& params, const Vocabulary& vocab,
                                          const std::vector<TokenSeq>& batch, const Gradient& analytic,
                                          double eps, std::uint64_t seed, std::size_t min_coords = 200);
GradCheckResult finite_diff_check(const Parameters& params, const Vocabulary& vocab,
                                  const std::vector<TokenSeq>& batch, double eps, std::uint64_t seed = 0,
                                  std::size_t min_coords = 200);

struct TrainResult {
  Parameters params;
  std::vector<double> loss_curve;  // batch loss before each update
};

/// Deterministic for fixed (init_seed, shuffle_seed). Aborts with the step
/// number if the loss or any parameter stops being finite.
TrainResult train(const ModelConfig& config, const TrainConfig& train_config, const Vocabulary& vocab,
                  const std::vector<TokenSeq>& corpus,
                  const std::function<void(std::size_t step, double loss)>& on_step = {});

/// A trained or initialized model viewed as an order-L Markov kernel.
class NeuralKernel final : public Kernel {
 public:
  NeuralKernel(Vocabulary vocab, Parameters params);

  std::size_t order() const override { return params_.config.context_len; }
  const Vocabulary& vocabulary() const override { return vocab_; }
  std::string type_name() const override { return "neural"; }
  const Parameters& parameters() const { return params_; }

 protected:
  Distribution do_evaluate(std::span<const TokenId> x) const override;

 private:
  Vocabulary vocab_;
  Parameters params_;
};

NeuralKernel as_kernel(const Parameters& params, const Vocabulary& vocab);

nlohmann::json config_to_json(const ModelConfig& c);
ModelConfig config_from_json(const nlohmann::json& j);
nlohmann::json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Model file: a one-line JSON manifest (config, vocabulary, tensor shapes,
/// seeds) followed by one parameter value per line at 17 significant digits.
std::string model_file_text(const Parameters& params, const Vocabulary& vocab, const nlohmann::json& extra = {});
void write_model_file(const Parameters& params, const Vocabulary& vocab, const std::string& path,
                      const nlohmann::json& extra = {});
NeuralKernel read_model_file(const std::string& path);
NeuralKernel parse_model_text(const std::string& text);

}  // namespace markovlab::neural
