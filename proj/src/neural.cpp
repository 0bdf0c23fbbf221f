#include "markovlab/neural.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "markovlab/random.hpp"
#include "text.hpp"

namespace markovlab::neural {

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Row = Eigen::RowVectorXd;
using ConstMap = Eigen::Map<const Mat>;
using MutMap = Eigen::Map<Mat>;
using ConstRowMap = Eigen::Map<const Row>;
using MutRowMap = Eigen::Map<Row>;

constexpr double kLayerNormEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

}  // namespace

void ModelConfig::validate() const {
  if (d_model == 0) throw Error("d_model must be positive");
  if (n_layers == 0) throw Error("n_layers must be positive");
  if (n_heads != 1) throw Error("only single-head attention is supported (n_heads = 1)");
  if (d_model % n_heads != 0) throw Error("d_model must be divisible by n_heads");
  if (context_len == 0) throw Error("context_len must be positive");
  if (vocab_size < 2) throw Error("vocab_size must be at least 2");
  if (!(init_scale >= 0.0) || !std::isfinite(init_scale)) throw Error("init_scale must be finite and non-negative");
}

Layout::Layout(const ModelConfig& c) {
  const std::size_t d = c.d_model, h = 4 * c.d_model;
  auto add = [this](std::string name, std::size_t rows, std::size_t cols) {
    tensors.push_back({std::move(name), rows, cols, total});
    total += rows * cols;
    return tensors.size() - 1;
  };
  token_embedding = add("token_embedding", c.vocab_size, d);
  position_embedding = add("position_embedding", c.context_len, d);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string p = "block" + std::to_string(l) + ".";
    Block b{};
    b.ln1_gain = add(p + "ln1_gain", 1, d);
    b.ln1_bias = add(p + "ln1_bias", 1, d);
    b.wq = add(p + "wq", d, d);
    b.wk = add(p + "wk", d, d);
    b.wv = add(p + "wv", d, d);
    b.wo = add(p + "wo", d, d);
    b.ln2_gain = add(p + "ln2_gain", 1, d);
    b.ln2_bias = add(p + "ln2_bias", 1, d);
    b.w1 = add(p + "mlp_w1", d, h);
    b.b1 = add(p + "mlp_b1", 1, h);
    b.w2 = add(p + "mlp_w2", h, d);
    b.b2 = add(p + "mlp_b2", 1, d);
    blocks.push_back(b);
  }
  lnf_gain = add("lnf_gain", 1, d);
  lnf_bias = add("lnf_bias", 1, d);
  w_out = add("w_out", d, c.vocab_size);
}

bool Parameters::all_finite() const {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

Parameters init_parameters(const ModelConfig& config) {
  config.validate();
  const Layout layout(config);
  Parameters p{config, std::vector<double>(layout.total, 0.0)};
  RandomStream rng(config.init_seed);
  for (const auto& t : layout.tensors) {
    const bool is_gain = t.name.ends_with("_gain");
    const bool is_bias = t.name.ends_with("_bias") || t.name.ends_with("_b1") || t.name.ends_with("_b2");
    for (std::size_t i = 0; i < t.size(); ++i) {
      double& v = p.values[t.offset + i];
      if (is_gain) {
        v = 1.0;
      } else if (!is_bias) {
        v = config.init_scale * rng.normal();
      }
    }
  }
  return p;
}

namespace {

// Read-only and mutable views of the flat vector.
struct View {
  const Layout& layout;
  const double* data;
  ConstMap mat(std::size_t i) const {
    const auto& t = layout.tensors[i];
    return ConstMap(data + t.offset, static_cast<Eigen::Index>(t.rows), static_cast<Eigen::Index>(t.cols));
  }
  ConstRowMap row(std::size_t i) const {
    const auto& t = layout.tensors[i];
    return ConstRowMap(data + t.offset, static_cast<Eigen::Index>(t.size()));
  }
};

struct MutView {
  const Layout& layout;
  double* data;
  MutMap mat(std::size_t i) const {
    const auto& t = layout.tensors[i];
    return MutMap(data + t.offset, static_cast<Eigen::Index>(t.rows), static_cast<Eigen::Index>(t.cols));
  }
  MutRowMap row(std::size_t i) const {
    const auto& t = layout.tensors[i];
    return MutRowMap(data + t.offset, static_cast<Eigen::Index>(t.size()));
  }
};

struct NormCache {
  Mat xhat;
  Eigen::VectorXd rstd;
};

Mat layer_norm(const Mat& x, const ConstRowMap& gain, const ConstRowMap& bias, NormCache& cache) {
  const auto n = x.rows();
  cache.xhat.resize(n, x.cols());
  cache.rstd.resize(n);
  Mat y(n, x.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().mean();
    const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
    cache.rstd(i) = rstd;
    cache.xhat.row(i) = (x.row(i).array() - mean) * rstd;
    y.row(i) = cache.xhat.row(i).cwiseProduct(gain) + bias;
  }
  return y;
}

Mat layer_norm_backward(const Mat& dy, const NormCache& cache, const ConstRowMap& gain, MutRowMap dgain,
                        MutRowMap dbias) {
  const auto n = dy.rows();
  const double width = static_cast<double>(dy.cols());
  Mat dx(n, dy.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    dgain += dy.row(i).cwiseProduct(cache.xhat.row(i));
    dbias += dy.row(i);
    const Row dxhat = dy.row(i).cwiseProduct(gain);
    const double mean_d = dxhat.sum() / width;
    const double mean_dx = dxhat.dot(cache.xhat.row(i)) / width;
    dx.row(i) = cache.rstd(i) * (dxhat.array() - mean_d - cache.xhat.row(i).array() * mean_dx).matrix();
  }
  return dx;
}

double gelu(double u) { return 0.5 * u * (1.0 + std::tanh(kGeluC * (u + kGeluA * u * u * u))); }

double gelu_grad(double u) {
  const double th = std::tanh(kGeluC * (u + kGeluA * u * u * u));
  return 0.5 * (1.0 + th) + 0.5 * u * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * u * u);
}

struct BlockCache {
  Mat x_in;
  NormCache ln1;
  Mat h1, q, k, v, attn, z, x_mid;
  NormCache ln2;
  Mat h2, u, g;
};

struct WindowCache {
  std::vector<TokenId> tokens;
  std::vector<BlockCache> blocks;
  NormCache lnf;
  Mat hf;
  Mat probs;  // [T x |V|], PAD column exactly 0
};

// Forward pass over one window of at most L tokens.
void forward_window(const View& p, const ModelConfig& c, const Vocabulary& vocab, std::span<const TokenId> tokens,
                    WindowCache& cache) {
  const auto T = static_cast<Eigen::Index>(tokens.size());
  const auto d = static_cast<Eigen::Index>(c.d_model);
  const Layout& L = p.layout;
  cache.tokens.assign(tokens.begin(), tokens.end());

  Mat x(T, d);
  const ConstMap tok = p.mat(L.token_embedding);
  const ConstMap pos = p.mat(L.position_embedding);
  for (Eigen::Index t = 0; t < T; ++t) {
    x.row(t) = tok.row(tokens[static_cast<std::size_t>(t)]) + pos.row(t);
  }

  const double scale = 1.0 / std::sqrt(static_cast<double>(c.d_model));
  cache.blocks.resize(L.blocks.size());
  for (std::size_t l = 0; l < L.blocks.size(); ++l) {
    const auto& B = L.blocks[l];
    BlockCache& bc = cache.blocks[l];
    bc.x_in = x;
    bc.h1 = layer_norm(x, p.row(B.ln1_gain), p.row(B.ln1_bias), bc.ln1);
    bc.q = bc.h1 * p.mat(B.wq);
    bc.k = bc.h1 * p.mat(B.wk);
    bc.v = bc.h1 * p.mat(B.wv);
    bc.attn = Mat::Zero(T, T);
    for (Eigen::Index i = 0; i < T; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j <= i; ++j) {
        bc.attn(i, j) = scale * bc.q.row(i).dot(bc.k.row(j));
        mx = std::max(mx, bc.attn(i, j));
      }
      double sum = 0.0;
      for (Eigen::Index j = 0; j <= i; ++j) {
        bc.attn(i, j) = std::exp(bc.attn(i, j) - mx);
        sum += bc.attn(i, j);
      }
      for (Eigen::Index j = 0; j <= i; ++j) bc.attn(i, j) /= sum;
    }
    bc.z = bc.attn * bc.v;
    bc.x_mid = x + bc.z * p.mat(B.wo);
    bc.h2 = layer_norm(bc.x_mid, p.row(B.ln2_gain), p.row(B.ln2_bias), bc.ln2);
    bc.u = (bc.h2 * p.mat(B.w1)).rowwise() + p.row(B.b1);
    bc.g = bc.u.unaryExpr([](double u) { return gelu(u); });
    x = (bc.x_mid + bc.g * p.mat(B.w2)).rowwise() + p.row(B.b2);
  }

  cache.hf = layer_norm(x, p.row(L.lnf_gain), p.row(L.lnf_bias), cache.lnf);
  Mat logits = cache.hf * p.mat(L.w_out);
  cache.probs.resize(T, logits.cols());
  const auto pad = vocab.pad();
  for (Eigen::Index t = 0; t < T; ++t) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index y = 0; y < logits.cols(); ++y) {
      if (pad && y == *pad) continue;
      mx = std::max(mx, logits(t, y));
    }
    double sum = 0.0;
    for (Eigen::Index y = 0; y < logits.cols(); ++y) {
      const double e = (pad && y == *pad) ? 0.0 : std::exp(logits(t, y) - mx);
      cache.probs(t, y) = e;
      sum += e;
    }
    cache.probs.row(t) /= sum;
  }
}

// Backpropagates dlogits through a cached window, accumulating into grad.
void backward_window(const View& p, const MutView& g, const ModelConfig& c, const WindowCache& cache,
                     const Mat& dlogits) {
  const Layout& L = p.layout;
  const auto T = dlogits.rows();
  g.mat(L.w_out) += cache.hf.transpose() * dlogits;
  Mat dhf = dlogits * p.mat(L.w_out).transpose();
  Mat dx = layer_norm_backward(dhf, cache.lnf, p.row(L.lnf_gain), g.row(L.lnf_gain), g.row(L.lnf_bias));

  const double scale = 1.0 / std::sqrt(static_cast<double>(c.d_model));
  for (std::size_t l = L.blocks.size(); l-- > 0;) {
    const auto& B = L.blocks[l];
    const BlockCache& bc = cache.blocks[l];

    // MLP: x_out = x_mid + gelu(h2 W1 + b1) W2 + b2
    g.mat(B.w2) += bc.g.transpose() * dx;
    g.row(B.b2) += dx.colwise().sum();
    Mat dgl = dx * p.mat(B.w2).transpose();
    Mat du = dgl.cwiseProduct(bc.u.unaryExpr([](double u) { return gelu_grad(u); }));
    g.mat(B.w1) += bc.h2.transpose() * du;
    g.row(B.b1) += du.colwise().sum();
    Mat dh2 = du * p.mat(B.w1).transpose();
    Mat dx_mid = dx + layer_norm_backward(dh2, bc.ln2, p.row(B.ln2_gain), g.row(B.ln2_gain), g.row(B.ln2_bias));

    // Attention: x_mid = x_in + softmax(q k^T * scale) v Wo
    g.mat(B.wo) += bc.z.transpose() * dx_mid;
    Mat dz = dx_mid * p.mat(B.wo).transpose();
    Mat dattn = dz * bc.v.transpose();
    Mat dv = bc.attn.transpose() * dz;
    Mat dscore = Mat::Zero(T, T);
    for (Eigen::Index i = 0; i < T; ++i) {
      double dot = 0.0;
      for (Eigen::Index j = 0; j <= i; ++j) dot += dattn(i, j) * bc.attn(i, j);
      for (Eigen::Index j = 0; j <= i; ++j) dscore(i, j) = bc.attn(i, j) * (dattn(i, j) - dot) * scale;
    }
    Mat dq = dscore * bc.k;
    Mat dk = dscore.transpose() * bc.q;
    g.mat(B.wq) += bc.h1.transpose() * dq;
    g.mat(B.wk) += bc.h1.transpose() * dk;
    g.mat(B.wv) += bc.h1.transpose() * dv;
    Mat dh1 = dq * p.mat(B.wq).transpose() + dk * p.mat(B.wk).transpose() + dv * p.mat(B.wv).transpose();
    dx = dx_mid + layer_norm_backward(dh1, bc.ln1, p.row(B.ln1_gain), g.row(B.ln1_gain), g.row(B.ln1_bias));
  }

  MutMap dtok = g.mat(L.token_embedding);
  MutMap dpos = g.mat(L.position_embedding);
  for (Eigen::Index t = 0; t < T; ++t) {
    dtok.row(cache.tokens[static_cast<std::size_t>(t)]) += dx.row(t);
    dpos.row(t) += dx.row(t);
  }
}

void check_sequence(const Vocabulary& vocab, const ModelConfig& c, std::span<const TokenId> seq) {
  for (TokenId t : seq) {
    if (t < 0 || static_cast<std::size_t>(t) >= c.vocab_size || !vocab.contains(t)) {
      throw Error("token id out of range for model: " + std::to_string(t));
    }
  }
}

void check_model(const Parameters& params, const Vocabulary& vocab) {
  params.config.validate();
  if (params.config.vocab_size != vocab.size()) throw Error("model vocab_size does not match the vocabulary");
  if (params.values.size() != Layout(params.config).total) throw Error("parameter vector has the wrong size");
}

// Shared driver for loss() and loss_and_gradient(). Targets at positions
// 1..L come from one window over the sequence prefix; later targets each
// use their own length-L window.
double run_batch(const Parameters& params, const Vocabulary& vocab, const std::vector<TokenSeq>& batch,
                 Gradient* gradient) {
  check_model(params, vocab);
  if (batch.empty()) throw Error("empty batch");
  const ModelConfig& c = params.config;
  const Layout layout(c);
  const View view{layout, params.values.data()};

  std::size_t positions = 0;
  for (const auto& seq : batch) {
    check_sequence(vocab, c, seq);
    for (TokenId t : seq) {
      if (vocab.is_pad(t)) throw Error("training sequence contains <pad>");
    }
    if (seq.size() > 1) positions += seq.size() - 1;
  }
  if (positions == 0) throw Error("batch has no next-token positions");
  const double inv_n = 1.0 / static_cast<double>(positions);

  if (gradient) *gradient = Parameters{c, std::vector<double>(layout.total, 0.0)};
  const MutView gview{layout, gradient ? gradient->values.data() : nullptr};

  std::vector<double> nll;
  nll.reserve(positions);
  WindowCache cache;
  auto run_window = [&](std::span<const TokenId> window, std::span<const TokenId> targets, std::size_t first_row) {
    forward_window(view, c, vocab, window, cache);
    Mat dlogits;
    if (gradient) dlogits = Mat::Zero(cache.probs.rows(), cache.probs.cols());
    for (std::size_t i = 0; i < targets.size(); ++i) {
      const auto row = static_cast<Eigen::Index>(first_row + i);
      const double p = cache.probs(row, targets[i]);
      nll.push_back(-std::log(p));
      if (gradient) {
        dlogits.row(row) = cache.probs.row(row) * inv_n;
        dlogits(row, targets[i]) -= inv_n;
      }
    }
    if (gradient) backward_window(view, gview, c, cache, dlogits);
  };

  const std::size_t L = c.context_len;
  for (const auto& seq : batch) {
    if (seq.size() < 2) continue;
    const std::span<const TokenId> s(seq);
    const std::size_t prefix = std::min(seq.size() - 1, L);
    run_window(s.first(prefix), s.subspan(1, prefix), 0);
    for (std::size_t t = L + 1; t < seq.size(); ++t) run_window(s.subspan(t - L, L), s.subspan(t, 1), L - 1);
  }
  double total = 0.0;
  for (double v : nll) total += v;
  return total * inv_n;
}

}  // namespace

Distribution forward(const Parameters& params, const Vocabulary& vocab, std::span<const TokenId> x) {
  check_model(params, vocab);
  if (x.empty()) throw Error("forward: empty context");
  check_sequence(vocab, params.config, x);
  const Layout layout(params.config);
  WindowCache cache;
  auto window = x.last(std::min(x.size(), params.config.context_len));
  forward_window(View{layout, params.values.data()}, params.config, vocab, window, cache);
  const Row last = cache.probs.row(cache.probs.rows() - 1);
  std::vector<double> probs(last.data(), last.data() + last.size());
  return Distribution::from_probs(std::move(probs), kNeuralTolerance);
}

double loss(const Parameters& params, const Vocabulary& vocab, const std::vector<TokenSeq>& batch) {
  return run_batch(params, vocab, batch, nullptr);
}

LossAndGradient loss_and_gradient(const Parameters& params, const Vocabulary& vocab,
                                  const std::vector<TokenSeq>& batch) {
  LossAndGradient out;
  out.loss = run_batch(params, vocab, batch, &out.gradient);
  return out;
}

Gradient grad(const Parameters& params, const Vocabulary& vocab, const std::vector<TokenSeq>& batch) {
  return loss_and_gradient(params, vocab, batch).gradient;
}

GradCheckResult finite_diff_check_against(const Parameters& params, const Vocabulary& vocab,
                                          const std::vector<TokenSeq>& batch, const Gradient& analytic,
                                          double eps, std::uint64_t seed, std::size_t min_coords) {
  if (!(eps > 0.0)) throw Error("finite-difference step must be positive");
  if (analytic.values.size() != params.values.size()) throw Error("gradient does not match parameters");
  const Layout layout(params.config);
  RandomStream rng(seed);

  // Every tensor contributes an equal share, then the rest is filled at random.
  const std::size_t share = (min_coords + layout.tensors.size() - 1) / layout.tensors.size();
  std::vector<std::size_t> coords;
  for (const auto& t : layout.tensors) {
    std::vector<std::size_t> idx(t.size());
    std::iota(idx.begin(), idx.end(), t.offset);
    rng.shuffle(idx);
    idx.resize(std::min(share, idx.size()));
    coords.insert(coords.end(), idx.begin(), idx.end());
  }
  while (coords.size() < std::min(min_coords, layout.total)) {
    std::size_t i = static_cast<std::size_t>(rng.below(layout.total));
    if (std::find(coords.begin(), coords.end(), i) == coords.end()) coords.push_back(i);
  }
  std::sort(coords.begin(), coords.end());

  GradCheckResult result;
  result.coordinates = coords.size();
  Parameters probe = params;
  for (std::size_t i : coords) {
    const double saved = probe.values[i];
    probe.values[i] = saved + eps;
    const double up = loss(probe, vocab, batch);
    probe.values[i] = saved - eps;
    const double down = loss(probe, vocab, batch);
    probe.values[i] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double a = analytic.values[i];
    const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
    if (err > result.max_relative_error || result.worst_tensor.empty()) {
      result.max_relative_error = std::max(err, result.max_relative_error);
      for (const auto& t : layout.tensors) {
        if (i >= t.offset && i < t.offset + t.size()) result.worst_tensor = t.name;
      }
    }
  }
  return result;
}

GradCheckResult finite_diff_check(const Parameters& params, const Vocabulary& vocab,
                                  const std::vector<TokenSeq>& batch, double eps, std::uint64_t seed,
                                  std::size_t min_coords) {
  return finite_diff_check_against(params, vocab, batch, grad(params, vocab, batch), eps, seed, min_coords);
}

TrainResult train(const ModelConfig& config, const TrainConfig& tc, const Vocabulary& vocab,
                  const std::vector<TokenSeq>& corpus, const std::function<void(std::size_t, double)>& on_step) {
  if (corpus.empty()) throw Error("empty training corpus");
  if (tc.batch_size == 0) throw Error("batch_size must be positive");
  if (!(tc.lr >= 0.0) || !std::isfinite(tc.lr)) throw Error("learning rate must be finite and non-negative");
  TrainResult result{init_parameters(config), {}};
  Parameters& p = result.params;
  check_model(p, vocab);

  std::vector<double> m(p.values.size(), 0.0), v(p.values.size(), 0.0);
  RandomStream rng(tc.shuffle_seed);
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  std::size_t cursor = 0;

  std::vector<TokenSeq> batch;
  for (std::size_t step = 0; step < tc.steps; ++step) {
    batch.clear();
    while (batch.size() < tc.batch_size) {
      if (cursor == order.size()) {
        rng.shuffle(order);
        cursor = 0;
      }
      batch.push_back(corpus[order[cursor++]]);
    }
    auto [step_loss, g] = loss_and_gradient(p, vocab, batch);
    if (!std::isfinite(step_loss)) throw Error("training diverged at step " + std::to_string(step));
    result.loss_curve.push_back(step_loss);
    if (on_step) on_step(step, step_loss);

    if (tc.optimizer == Optimizer::sgd) {
      for (std::size_t i = 0; i < p.values.size(); ++i) p.values[i] -= tc.lr * g.values[i];
    } else {
      const double t = static_cast<double>(step + 1);
      const double c1 = 1.0 - std::pow(tc.beta1, t);
      const double c2 = 1.0 - std::pow(tc.beta2, t);
      for (std::size_t i = 0; i < p.values.size(); ++i) {
        m[i] = tc.beta1 * m[i] + (1.0 - tc.beta1) * g.values[i];
        v[i] = tc.beta2 * v[i] + (1.0 - tc.beta2) * g.values[i] * g.values[i];
        p.values[i] -= tc.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + tc.adam_eps);
      }
    }
    if (!p.all_finite()) throw Error("training diverged at step " + std::to_string(step) + ": non-finite parameters");
  }
  return result;
}

NeuralKernel::NeuralKernel(Vocabulary vocab, Parameters params) : vocab_(std::move(vocab)), params_(std::move(params)) {
  check_model(params_, vocab_);
}

Distribution NeuralKernel::do_evaluate(std::span<const TokenId> x) const { return forward(params_, vocab_, x); }

NeuralKernel as_kernel(const Parameters& params, const Vocabulary& vocab) { return NeuralKernel(vocab, params); }

// ---------------------------------------------------------------------------
// Serialization

nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"d_model", c.d_model},         {"n_layers", c.n_layers},   {"n_heads", c.n_heads},
          {"context_len", c.context_len}, {"vocab_size", c.vocab_size}, {"init_seed", c.init_seed},
          {"init_scale", c.init_scale}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.d_model = j.value("d_model", c.d_model);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.context_len = j.value("context_len", c.context_len);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.init_seed = j.value("init_seed", c.init_seed);
  c.init_scale = j.value("init_scale", c.init_scale);
  return c;
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"optimizer", c.optimizer == Optimizer::adam ? "adam" : "sgd"},
          {"lr", c.lr},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_eps", c.adam_eps},
          {"steps", c.steps},
          {"batch_size", c.batch_size},
          {"shuffle_seed", c.shuffle_seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  const std::string opt = j.value("optimizer", std::string("adam"));
  if (opt == "adam") {
    c.optimizer = Optimizer::adam;
  } else if (opt == "sgd") {
    c.optimizer = Optimizer::sgd;
  } else {
    throw Error("unknown optimizer: \"" + opt + "\"");
  }
  c.lr = j.value("lr", c.lr);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.steps = j.value("steps", c.steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.shuffle_seed = j.value("shuffle_seed", c.shuffle_seed);
  return c;
}

std::string model_file_text(const Parameters& params, const Vocabulary& vocab, const nlohmann::json& extra) {
  check_model(params, vocab);
  const Layout layout(params.config);
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& t : layout.tensors) tensors.push_back({{"name", t.name}, {"shape", {t.rows, t.cols}}});
  nlohmann::json manifest = {{"format", "markovlab-neural-v1"},
                             {"config", config_to_json(params.config)},
                             {"vocab", vocab.surfaces()},
                             {"tensors", tensors},
                             {"num_values", params.values.size()}};
  if (!extra.is_null()) manifest["extra"] = extra;
  std::string out = manifest.dump() + '\n';
  for (double v : params.values) out += text::format_double(v) + '\n';
  return out;
}

void write_model_file(const Parameters& params, const Vocabulary& vocab, const std::string& path,
                      const nlohmann::json& extra) {
  text::write_file(path, model_file_text(params, vocab, extra));
}

NeuralKernel parse_model_text(const std::string& content) {
  std::istringstream in(content);
  std::string line;
  if (!std::getline(in, line)) throw Error("model file is empty");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("model manifest is not valid JSON: ") + e.what());
  }
  if (manifest.value("format", std::string()) != "markovlab-neural-v1") throw Error("not a markovlab model file");
  const Vocabulary vocab = make_vocabulary(manifest.at("vocab").get<std::vector<std::string>>());
  Parameters params{config_from_json(manifest.at("config")), {}};
  const auto expected = manifest.at("num_values").get<std::size_t>();
  params.values.reserve(expected);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    params.values.push_back(text::parse_double(line));
  }
  if (params.values.size() != expected) {
    throw Error("model file has " + std::to_string(params.values.size()) + " values, manifest says " +
                std::to_string(expected));
  }
  return NeuralKernel(vocab, std::move(params));
}

NeuralKernel read_model_file(const std::string& path) { return parse_model_text(text::read_file(path)); }

}  // namespace markovlab::neural
