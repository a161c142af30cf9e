#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "bytelm/tensor.hpp"

namespace bytelm {

enum class PositionalMode { per_layer_learned, sinusoidal_input_only };
enum class RunMode { train, eval };

struct ModelConfig {
  Index n_layers = 64;
  Index d_model = 512;
  Index n_heads = 2;
  Index d_ff = 2048;
  Index seq_len = 512;
  Index vocab = 256;
  Index n_targets = 2;
  double dropout_attn = 0.55;  // drop probability on attention weights
  double dropout_relu = 0.55;  // drop probability on post-relu activations
  PositionalMode positional_mode = PositionalMode::per_layer_learned;
  bool pre_norm = false;     // default is the post-norm residual block
  int final_norm = -1;       // -1 auto (on iff pre_norm), 0 off, 1 on
  double ln_eps = 1e-5;

  bool use_final_norm() const { return final_norm < 0 ? pre_norm : final_norm > 0; }
  Index head_dim() const { return d_model / n_heads; }

  void validate() const {
    auto bad = [](const std::string& m) { throw std::invalid_argument("model config: " + m); };
    if (n_layers < 1) bad("n_layers must be >= 1");
    if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0)
      bad("d_model must be a positive multiple of n_heads");
    if (d_ff < 1) bad("d_ff must be >= 1");
    if (seq_len < 1) bad("seq_len must be >= 1");
    if (vocab < 2) bad("vocab must be >= 2");
    if (n_targets < 1) bad("n_targets must be >= 1");
    if (dropout_attn < 0 || dropout_attn >= 1 || dropout_relu < 0 || dropout_relu >= 1)
      bad("dropout rates must be in [0,1)");
    if (!(ln_eps > 0)) bad("ln_eps must be > 0");
  }

  bool operator==(const ModelConfig&) const = default;
};

// Parameter accounting, computed from the config alone. Heads other than
// (final layer, offset 1) exist only during training, which is what splits
// the train and inference totals.
struct ParamCounts {
  int64_t embedding = 0;
  int64_t positional = 0;
  int64_t blocks = 0;
  int64_t final_norm = 0;
  int64_t heads = 0;      // all (layer, offset) classifiers
  int64_t head_size = 0;  // one classifier

  int64_t train() const { return embedding + positional + blocks + final_norm + heads; }
  int64_t inference() const { return train() - (heads - head_size); }
};

inline ParamCounts param_counts(const ModelConfig& cfg) {
  cfg.validate();
  ParamCounts c;
  const int64_t d = cfg.d_model, ff = cfg.d_ff, v = cfg.vocab;
  c.embedding = v * d;
  if (cfg.positional_mode == PositionalMode::per_layer_learned)
    c.positional = static_cast<int64_t>(cfg.n_layers) * cfg.seq_len * d;
  const int64_t attn = 4 * (d * d + d);
  const int64_t ffn = d * ff + ff + ff * d + d;
  const int64_t norms = 4 * d;
  c.blocks = cfg.n_layers * (attn + ffn + norms);
  if (cfg.use_final_norm()) c.final_norm = 2 * d;
  c.head_size = d * v + v;
  c.heads = static_cast<int64_t>(cfg.n_layers) * cfg.n_targets * c.head_size;
  return c;
}

template <typename S>
struct LayerParams {
  Tensor<S> pos;  // [L, d]; undefined in sinusoidal mode
  Tensor<S> wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor<S> ln1_g, ln1_b;
  Tensor<S> w1, b1, w2, b2;
  Tensor<S> ln2_g, ln2_b;
};

template <typename S>
struct OutputHead {
  Tensor<S> w, b;  // [d, V], [V]
};

using HeadKey = std::pair<Index, Index>;  // (layer 1..N, target offset 1..K)

template <typename S>
struct TransformerLM {
  ModelConfig cfg;
  Tensor<S> byte_embedding;                 // [V, d]
  std::vector<LayerParams<S>> layers;       // index 0 is layer 1
  Tensor<S> final_g, final_b;               // defined iff use_final_norm()
  std::map<HeadKey, OutputHead<S>> heads;   // every (layer, offset) pair
  Tensor<S> sinusoid;                       // constant [L, d]; sinusoidal mode only

  HeadKey inference_head() const { return {cfg.n_layers, 1}; }

  // Fixed parameter order shared by init, optimizers, checkpoints and counts:
  // byte_embedding; per layer 1..N: pos?, wq,bq,wk,bk,wv,bv,wo,bo, ln1_g,ln1_b,
  // w1,b1,w2,b2, ln2_g,ln2_b; final norm pair; heads in (layer, offset) order.
  template <typename Fn>
  void visit_parameters(Fn&& fn) {
    fn("byte_embedding", byte_embedding);
    for (Index l = 1; l <= cfg.n_layers; ++l) {
      auto& p = layers[static_cast<size_t>(l - 1)];
      const std::string base = "layers." + std::to_string(l) + ".";
      if (cfg.positional_mode == PositionalMode::per_layer_learned) fn(base + "pos", p.pos);
      fn(base + "wq", p.wq); fn(base + "bq", p.bq);
      fn(base + "wk", p.wk); fn(base + "bk", p.bk);
      fn(base + "wv", p.wv); fn(base + "bv", p.bv);
      fn(base + "wo", p.wo); fn(base + "bo", p.bo);
      fn(base + "ln1_g", p.ln1_g); fn(base + "ln1_b", p.ln1_b);
      fn(base + "w1", p.w1); fn(base + "b1", p.b1);
      fn(base + "w2", p.w2); fn(base + "b2", p.b2);
      fn(base + "ln2_g", p.ln2_g); fn(base + "ln2_b", p.ln2_b);
    }
    if (cfg.use_final_norm()) {
      fn("final_g", final_g);
      fn("final_b", final_b);
    }
    for (auto& [key, head] : heads) {
      const std::string base =
          "heads." + std::to_string(key.first) + "." + std::to_string(key.second) + ".";
      fn(base + "w", head.w);
      fn(base + "b", head.b);
    }
  }

  void zero_grads() {
    visit_parameters([](const std::string&, Tensor<S>& t) { t.zero_grad(); });
  }

  int64_t parameter_count() {
    int64_t n = 0;
    visit_parameters([&](const std::string&, Tensor<S>& t) { n += t.size(); });
    return n;
  }
};

template <typename S>
Tensor<S> sinusoid_table(Index seq_len, Index d_model) {
  auto t = Tensor<S>::zeros({seq_len, d_model});
  auto& v = t.values_mut();
  for (Index pos = 0; pos < seq_len; ++pos) {
    for (Index i = 0; i < d_model; ++i) {
      const double exponent = static_cast<double>(2 * (i / 2)) / static_cast<double>(d_model);
      const double angle = static_cast<double>(pos) / std::pow(10000.0, exponent);
      v[pos * d_model + i] = static_cast<S>((i % 2 == 0) ? std::sin(angle) : std::cos(angle));
    }
  }
  return t;
}

// Deterministic given seed: parameters are drawn in visit order. Projections
// get fan-in-scaled uniform, embeddings N(0, d^-1/2), norms 1/0, biases 0.
// Output heads are drawn at a tenth of the projection scale so an untrained
// model's logits stay near zero and its predictions near uniform.
template <typename S>
TransformerLM<S> init_model(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  TransformerLM<S> m;
  m.cfg = cfg;
  const Index d = cfg.d_model, ff = cfg.d_ff, v = cfg.vocab, ln = cfg.seq_len;

  m.byte_embedding = Tensor<S>::param({v, d}, "byte_embedding");
  m.layers.resize(static_cast<size_t>(cfg.n_layers));
  for (auto& p : m.layers) {
    if (cfg.positional_mode == PositionalMode::per_layer_learned)
      p.pos = Tensor<S>::param({ln, d}, "pos");
    p.wq = Tensor<S>::param({d, d}, "wq"); p.bq = Tensor<S>::param({d}, "bq");
    p.wk = Tensor<S>::param({d, d}, "wk"); p.bk = Tensor<S>::param({d}, "bk");
    p.wv = Tensor<S>::param({d, d}, "wv"); p.bv = Tensor<S>::param({d}, "bv");
    p.wo = Tensor<S>::param({d, d}, "wo"); p.bo = Tensor<S>::param({d}, "bo");
    p.ln1_g = Tensor<S>::param({d}, "ln1_g"); p.ln1_b = Tensor<S>::param({d}, "ln1_b");
    p.w1 = Tensor<S>::param({d, ff}, "w1"); p.b1 = Tensor<S>::param({ff}, "b1");
    p.w2 = Tensor<S>::param({ff, d}, "w2"); p.b2 = Tensor<S>::param({d}, "b2");
    p.ln2_g = Tensor<S>::param({d}, "ln2_g"); p.ln2_b = Tensor<S>::param({d}, "ln2_b");
  }
  if (cfg.use_final_norm()) {
    m.final_g = Tensor<S>::param({d}, "final_g");
    m.final_b = Tensor<S>::param({d}, "final_b");
  }
  for (Index l = 1; l <= cfg.n_layers; ++l)
    for (Index k = 1; k <= cfg.n_targets; ++k)
      m.heads[{l, k}] = OutputHead<S>{Tensor<S>::param({d, v}, "head_w"),
                                      Tensor<S>::param({v}, "head_b")};
  if (cfg.positional_mode == PositionalMode::sinusoidal_input_only)
    m.sinusoid = sinusoid_table<S>(ln, d);

  Rng rng(seed);
  const double emb_std = 1.0 / std::sqrt(static_cast<double>(d));
  m.visit_parameters([&](const std::string& name, Tensor<S>& t) {
    auto& vals = t.values_mut();
    const bool is_embedding = name == "byte_embedding" || name.ends_with(".pos");
    const bool is_gain = name.ends_with("_g");
    if (is_embedding) {
      for (Index i = 0; i < vals.size(); ++i) vals[i] = static_cast<S>(rng.normal(0.0, emb_std));
    } else if (is_gain) {
      vals.setOnes();
    } else if (t.rank() == 2) {
      double bound = std::sqrt(3.0 / static_cast<double>(t.dim(0)));
      if (name.starts_with("heads.")) bound *= 0.1;
      for (Index i = 0; i < vals.size(); ++i) vals[i] = static_cast<S>(rng.uniform_range(-bound, bound));
    } else {
      vals.setZero();  // every remaining rank-1 tensor is a bias
    }
  });
  return m;
}

// Which (layer, offset) logits to materialize, and over which positions.
struct HeadSelection {
  std::set<HeadKey> heads;
  bool final_position_only = false;
};

template <typename S>
struct ForwardOutput {
  Index batch = 1;
  Index positions = 0;  // per-window prediction rows: T, or 1 when final-only
  bool final_position_only = false;
  std::map<HeadKey, Tensor<S>> logits;  // each [batch*positions, V]
};

namespace detail {

template <typename S>
Tensor<S> split_heads(const Tensor<S>& x, Index batch, Index t, Index n_heads, Index head_dim) {
  // [B*T, d] -> [B*H, T, dh]
  auto r = reshape(x, {batch, t, n_heads, head_dim});
  auto p = transpose(r, 1, 2);
  return reshape(p, {batch * n_heads, t, head_dim});
}

template <typename S>
Tensor<S> merge_heads(const Tensor<S>& x, Index batch, Index t, Index n_heads, Index head_dim) {
  // [B*H, T, dh] -> [B*T, d]
  auto r = reshape(x, {batch, n_heads, t, head_dim});
  auto p = transpose(r, 1, 2);
  return reshape(p, {batch * t, n_heads * head_dim});
}

}  // namespace detail

// Batched causal forward. tokens holds `batch` windows of equal length T
// (T <= seq_len), row-major. Logits at position i of any layer depend only on
// tokens 0..i. In train mode rng drives the two dropout sites.
template <typename S>
ForwardOutput<S> forward(const TransformerLM<S>& model, std::span<const int32_t> tokens,
                         Index batch, RunMode mode, Rng* rng, const HeadSelection& sel) {
  const ModelConfig& cfg = model.cfg;
  if (batch < 1 || tokens.empty() || tokens.size() % static_cast<size_t>(batch) != 0)
    throw std::invalid_argument("forward: token count " + std::to_string(tokens.size()) +
                                " does not divide into batch " + std::to_string(batch));
  const Index t = static_cast<Index>(tokens.size()) / batch;
  if (t > cfg.seq_len)
    throw std::invalid_argument("forward: sequence length " + std::to_string(t) +
                                " exceeds model seq_len " + std::to_string(cfg.seq_len));
  for (size_t i = 0; i < tokens.size(); ++i)
    if (tokens[i] < 0 || tokens[i] >= cfg.vocab)
      throw std::out_of_range("forward: token id " + std::to_string(tokens[i]) +
                              " outside vocab [0," + std::to_string(cfg.vocab) + ")");
  const bool train = mode == RunMode::train;
  if (train && rng == nullptr)
    throw std::invalid_argument("forward: train mode requires an rng for dropout");
  for (const auto& key : sel.heads) {
    if (!model.heads.count(key))
      throw std::invalid_argument("forward: no head for (layer " + std::to_string(key.first) +
                                  ", offset " + std::to_string(key.second) + ")");
  }

  const Index d = cfg.d_model, h = cfg.n_heads, dh = cfg.head_dim();
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  ForwardOutput<S> out;
  out.batch = batch;
  out.positions = sel.final_position_only ? 1 : t;
  out.final_position_only = sel.final_position_only;

  std::vector<int32_t> last_rows;
  if (sel.final_position_only) {
    last_rows.resize(static_cast<size_t>(batch));
    for (Index b = 0; b < batch; ++b) last_rows[static_cast<size_t>(b)] = static_cast<int32_t>(b * t + t - 1);
  }

  Tensor<S> x = embedding_lookup(model.byte_embedding, tokens);  // [B*T, d]
  if (cfg.positional_mode == PositionalMode::sinusoidal_input_only)
    x = add_positional(x, model.sinusoid, t);

  for (Index l = 1; l <= cfg.n_layers; ++l) {
    const auto& p = model.layers[static_cast<size_t>(l - 1)];
    if (cfg.positional_mode == PositionalMode::per_layer_learned)
      x = add_positional(x, p.pos, t);

    Tensor<S> a_in = cfg.pre_norm ? layer_norm(x, p.ln1_g, p.ln1_b, cfg.ln_eps) : x;
    Tensor<S> q = add_bias(matmul(a_in, p.wq), p.bq);
    Tensor<S> k = add_bias(matmul(a_in, p.wk), p.bk);
    Tensor<S> v = add_bias(matmul(a_in, p.wv), p.bv);
    Tensor<S> qh = detail::split_heads(q, batch, t, h, dh);
    Tensor<S> kh = detail::split_heads(k, batch, t, h, dh);
    Tensor<S> vh = detail::split_heads(v, batch, t, h, dh);
    Tensor<S> scores = scale(matmul(qh, transpose(kh, 1, 2)), inv_sqrt_dh);  // [B*H, T, T]
    Tensor<S> weights = softmax(mask_causal(scores), 2);
    if (train && cfg.dropout_attn > 0)
      weights = dropout(weights, 1.0 - cfg.dropout_attn, rng, true);
    Tensor<S> ctx = detail::merge_heads(matmul(weights, vh), batch, t, h, dh);
    Tensor<S> attn_out = add_bias(matmul(ctx, p.wo), p.bo);
    x = cfg.pre_norm ? add(x, attn_out)
                     : layer_norm(add(x, attn_out), p.ln1_g, p.ln1_b, cfg.ln_eps);

    Tensor<S> f_in = cfg.pre_norm ? layer_norm(x, p.ln2_g, p.ln2_b, cfg.ln_eps) : x;
    Tensor<S> hidden = relu(add_bias(matmul(f_in, p.w1), p.b1));
    if (train && cfg.dropout_relu > 0)
      hidden = dropout(hidden, 1.0 - cfg.dropout_relu, rng, true);
    Tensor<S> f_out = add_bias(matmul(hidden, p.w2), p.b2);
    x = cfg.pre_norm ? add(x, f_out)
                     : layer_norm(add(x, f_out), p.ln2_g, p.ln2_b, cfg.ln_eps);

    // classifiers read this layer's block output; the final layer's goes
    // through the final norm when one is configured
    Tensor<S> rep = x;
    if (l == cfg.n_layers && cfg.use_final_norm())
      rep = layer_norm(x, model.final_g, model.final_b, cfg.ln_eps);
    for (Index kk = 1; kk <= cfg.n_targets; ++kk) {
      const HeadKey key{l, kk};
      if (!sel.heads.count(key)) continue;
      Tensor<S> hin = sel.final_position_only ? embedding_lookup(rep, last_rows) : rep;
      const auto& head = model.heads.at(key);
      out.logits.emplace(key, add_bias(matmul(hin, head.w), head.b));
    }
  }
  return out;
}

template <typename S>
ForwardOutput<S> forward(const TransformerLM<S>& model, std::span<const int32_t> tokens,
                         RunMode mode, Rng* rng, const HeadSelection& sel) {
  return forward(model, tokens, 1, mode, rng, sel);
}

// Next-character distribution after `context`: softmax of the inference head
// (final layer, final position, offset 1), dropout-free.
template <typename S>
ArrayX<S> predict_next(const TransformerLM<S>& model, std::span<const int32_t> context) {
  if (context.empty()) throw std::invalid_argument("predict_next: context must be non-empty");
  HeadSelection sel;
  sel.heads.insert(model.inference_head());
  sel.final_position_only = true;
  auto out = forward(model, context, 1, RunMode::eval, nullptr, sel);
  return softmax(out.logits.at(model.inference_head()), 1).values();
}

}  // namespace bytelm
