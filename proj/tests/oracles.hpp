// Test-only oracles: finite-difference gradient checking, a straight-line
// 64-bit reimplementation of the forward pass, a hand-rolled loss summation,
// chi-square helpers and synthetic corpora. Everything here is independent of
// the library's graph/op code paths on purpose.
#pragma once

#include <Eigen/Core>

#include <cmath>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "bytelm/loss.hpp"
#include "bytelm/model.hpp"
#include "bytelm/optim.hpp"
#include "bytelm/rng.hpp"
#include "bytelm/tensor.hpp"

namespace oracles {

using bytelm::HeadKey;
using bytelm::Index;

// ---------------------------------------------------------------------------
// finite differences
// ---------------------------------------------------------------------------

struct FDReport {
  size_t checked = 0;
  size_t failures = 0;
  double worst_abs_diff = 0;
  std::string worst;  // "name[i]: analytic=..., fd=..."

  bool ok() const { return failures == 0 && checked > 0; }
};

// Central finite differences over every element of every parameter against
// the analytic gradients of build_loss(). build_loss must rebuild the graph
// from the parameters' current values each call.
template <typename BuildLoss>
FDReport finite_difference_check(std::span<bytelm::NamedParam<double>> params, BuildLoss&& build_loss,
                                 double h = 1e-3, double rel_tol = 1e-3, double abs_tol = 1e-6) {
  for (auto& p : params) p.tensor.zero_grad();
  {
    bytelm::Tensor<double> loss = build_loss();
    bytelm::backward(loss);
  }
  std::vector<Eigen::ArrayXd> analytic;
  analytic.reserve(params.size());
  for (auto& p : params)
    analytic.push_back(p.tensor.has_grad() ? Eigen::ArrayXd(p.tensor.grad())
                                           : Eigen::ArrayXd(Eigen::ArrayXd::Zero(p.tensor.size())));

  FDReport rep;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& vals = params[pi].tensor.values_mut();
    for (Index i = 0; i < vals.size(); ++i) {
      const double orig = vals[i];
      vals[i] = orig + h;
      const double lp = build_loss().item();
      vals[i] = orig - h;
      const double lm = build_loss().item();
      vals[i] = orig;
      const double fd = (lp - lm) / (2 * h);
      const double g = analytic[pi][i];
      const double diff = std::abs(fd - g);
      const double tol = abs_tol + rel_tol * std::max(std::abs(fd), std::abs(g));
      ++rep.checked;
      if (diff > tol) {
        ++rep.failures;
        if (diff > rep.worst_abs_diff) {
          rep.worst_abs_diff = diff;
          std::ostringstream os;
          os << params[pi].name << "[" << i << "]: analytic=" << g << ", fd=" << fd;
          rep.worst = os.str();
        }
      }
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// straight-line transformer forward (no graph, plain double loops)
// ---------------------------------------------------------------------------

using Mat = Eigen::MatrixXd;  // [rows, cols], row = position

inline Mat naive_layer_norm(const Mat& x, const Eigen::VectorXd& g, const Eigen::VectorXd& b,
                            double eps) {
  Mat out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mu = x.row(r).mean();
    double var = 0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) var += (x(r, c) - mu) * (x(r, c) - mu);
    var /= static_cast<double>(x.cols());
    const double inv = 1.0 / std::sqrt(var + eps);
    for (Eigen::Index c = 0; c < x.cols(); ++c) out(r, c) = (x(r, c) - mu) * inv * g[c] + b[c];
  }
  return out;
}

struct NaiveParams {
  std::map<std::string, Eigen::VectorXd> flat;

  Mat mat(const std::string& name, Eigen::Index rows, Eigen::Index cols) const {
    const auto& v = flat.at(name);
    Mat m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = v[r * cols + c];
    return m;
  }
  Eigen::VectorXd vec(const std::string& name) const { return flat.at(name); }
};

template <typename S>
NaiveParams extract_params(bytelm::TransformerLM<S>& model) {
  NaiveParams p;
  model.visit_parameters([&](const std::string& name, bytelm::Tensor<S>& t) {
    Eigen::VectorXd v(t.size());
    for (Index i = 0; i < t.size(); ++i) v[i] = static_cast<double>(t.values()[i]);
    p.flat[name] = std::move(v);
  });
  return p;
}

// Mirrors the documented architecture with independent code: per-layer
// positions added to each layer input, causal scores at 1/sqrt(dh), two
// dropout-free sublayers with post- or pre-norm wiring, per-(layer, offset)
// classifiers off each layer's block output. min_relu_clearance, when given,
// receives the smallest |pre-activation| seen at any relu input; finite
// differences are only trustworthy when that clearance exceeds the
// perturbation envelope (relu's kink breaks the central-difference estimate).
inline std::map<HeadKey, Mat> naive_forward(const bytelm::ModelConfig& cfg, const NaiveParams& p,
                                            std::span<const int32_t> tokens,
                                            const std::set<HeadKey>& want,
                                            double* min_relu_clearance = nullptr) {
  const Eigen::Index t = static_cast<Eigen::Index>(tokens.size());
  const Eigen::Index d = cfg.d_model, dh = cfg.d_model / cfg.n_heads, nh = cfg.n_heads;

  Mat emb = p.mat("byte_embedding", cfg.vocab, d);
  Mat x(t, d);
  for (Eigen::Index i = 0; i < t; ++i) x.row(i) = emb.row(tokens[static_cast<size_t>(i)]);

  if (cfg.positional_mode == bytelm::PositionalMode::sinusoidal_input_only) {
    for (Eigen::Index pos = 0; pos < t; ++pos)
      for (Eigen::Index i = 0; i < d; ++i) {
        const double angle =
            static_cast<double>(pos) /
            std::pow(10000.0, static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
        x(pos, i) += (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
      }
  }

  std::map<HeadKey, Mat> out;
  for (Index l = 1; l <= cfg.n_layers; ++l) {
    const std::string base = "layers." + std::to_string(l) + ".";
    if (cfg.positional_mode == bytelm::PositionalMode::per_layer_learned) {
      Mat pos = p.mat(base + "pos", cfg.seq_len, d);
      for (Eigen::Index i = 0; i < t; ++i) x.row(i) += pos.row(i);
    }

    const Eigen::VectorXd g1 = p.vec(base + "ln1_g"), b1n = p.vec(base + "ln1_b");
    const Eigen::VectorXd g2 = p.vec(base + "ln2_g"), b2n = p.vec(base + "ln2_b");
    Mat a_in = cfg.pre_norm ? naive_layer_norm(x, g1, b1n, cfg.ln_eps) : x;

    Mat q = (a_in * p.mat(base + "wq", d, d)).rowwise() + p.vec(base + "bq").transpose();
    Mat k = (a_in * p.mat(base + "wk", d, d)).rowwise() + p.vec(base + "bk").transpose();
    Mat v = (a_in * p.mat(base + "wv", d, d)).rowwise() + p.vec(base + "bv").transpose();

    Mat ctx(t, d);
    for (Eigen::Index head = 0; head < nh; ++head) {
      const Eigen::Index off = head * dh;
      for (Eigen::Index i = 0; i < t; ++i) {
        // causal scores for query i over keys 0..i
        std::vector<double> w(static_cast<size_t>(i) + 1);
        double m = -1e300;
        for (Eigen::Index j = 0; j <= i; ++j) {
          double s = 0;
          for (Eigen::Index c = 0; c < dh; ++c) s += q(i, off + c) * k(j, off + c);
          s /= std::sqrt(static_cast<double>(dh));
          w[static_cast<size_t>(j)] = s;
          m = std::max(m, s);
        }
        double sum = 0;
        for (auto& wv : w) {
          wv = std::exp(wv - m);
          sum += wv;
        }
        for (Eigen::Index c = 0; c < dh; ++c) {
          double acc = 0;
          for (Eigen::Index j = 0; j <= i; ++j) acc += (w[static_cast<size_t>(j)] / sum) * v(j, off + c);
          ctx(i, off + c) = acc;
        }
      }
    }
    Mat attn_out = (ctx * p.mat(base + "wo", d, d)).rowwise() + p.vec(base + "bo").transpose();
    x = cfg.pre_norm ? Mat(x + attn_out) : naive_layer_norm(x + attn_out, g1, b1n, cfg.ln_eps);

    Mat f_in = cfg.pre_norm ? naive_layer_norm(x, g2, b2n, cfg.ln_eps) : x;
    Mat hid = (f_in * p.mat(base + "w1", d, cfg.d_ff)).rowwise() + p.vec(base + "b1").transpose();
    if (min_relu_clearance != nullptr)
      *min_relu_clearance = std::min(*min_relu_clearance, hid.cwiseAbs().minCoeff());
    hid = hid.cwiseMax(0.0);
    Mat f_out = (hid * p.mat(base + "w2", cfg.d_ff, d)).rowwise() + p.vec(base + "b2").transpose();
    x = cfg.pre_norm ? Mat(x + f_out) : naive_layer_norm(x + f_out, g2, b2n, cfg.ln_eps);

    Mat rep = x;
    if (l == cfg.n_layers && cfg.use_final_norm())
      rep = naive_layer_norm(x, p.vec("final_g"), p.vec("final_b"), cfg.ln_eps);
    for (Index kk = 1; kk <= cfg.n_targets; ++kk) {
      if (!want.count({l, kk})) continue;
      const std::string hb = "heads." + std::to_string(l) + "." + std::to_string(kk) + ".";
      out[{l, kk}] =
          (rep * p.mat(hb + "w", d, cfg.vocab)).rowwise() + p.vec(hb + "b").transpose();
    }
  }
  return out;
}

inline double naive_ce_bits(const Eigen::VectorXd& logits, int target) {
  const double m = logits.maxCoeff();
  double sum = 0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) sum += std::exp(logits[i] - m);
  return (std::log(sum) + m - logits[target]) / std::log(2.0);
}

// Hand-rolled total over all (layer, position, offset, batch element) with
// w(1)=1, w(k>1)=extra weight, normalized by the term count; the active set
// is recomputed from first principles.
inline double naive_total_loss(const std::map<HeadKey, Mat>& logits_all_positions,
                               std::span<const int32_t> window, Index window_len, Index n_targets,
                               double extra_weight, bool multiple_positions, bool intermediate,
                               Index n_layers, int64_t step, int64_t total_steps) {
  const Index t = window_len - n_targets;
  double acc = 0;
  int64_t terms = 0;
  for (Index l = 1; l <= n_layers; ++l) {
    const bool active =
        l == n_layers || (intermediate && step < l * total_steps / (2 * n_layers));
    if (!active) continue;
    for (Index k = 1; k <= n_targets; ++k) {
      const double w = k == 1 ? 1.0 : extra_weight;
      if (w == 0) continue;
      const Mat& lg = logits_all_positions.at({l, k});
      if (multiple_positions) {
        for (Index i = 0; i < t; ++i) {
          acc += w * naive_ce_bits(lg.row(i).transpose(), window[static_cast<size_t>(i + k)]);
          ++terms;
        }
      } else {
        acc += w * naive_ce_bits(lg.row(t - 1).transpose(), window[static_cast<size_t>(t - 1 + k)]);
        ++terms;
      }
    }
  }
  return acc / static_cast<double>(terms);
}

// ---------------------------------------------------------------------------
// chi-square
// ---------------------------------------------------------------------------

inline double chi_square_stat(std::span<const int64_t> observed, std::span<const double> expected) {
  double stat = 0;
  for (size_t i = 0; i < observed.size(); ++i) {
    const double diff = static_cast<double>(observed[i]) - expected[i];
    stat += diff * diff / expected[i];
  }
  return stat;
}

// Wilson-Hilferty upper-tail critical value; alpha fixed at 0.001.
inline double chi2_critical_999(double dof) {
  const double z = 3.090232306167814;
  const double a = 2.0 / (9.0 * dof);
  const double c = 1.0 - a + z * std::sqrt(a);
  return dof * c * c * c;
}

// ---------------------------------------------------------------------------
// synthetic corpora
// ---------------------------------------------------------------------------

// Zipf-weighted vocabulary of random letter words joined by spaces; a cheap
// stand-in with word structure and an order-0 entropy near natural text.
inline std::vector<uint8_t> synthetic_word_corpus(size_t n_bytes, uint64_t seed,
                                                  int vocab_words = 2000) {
  // rough English letter weights a..z
  static const double letter_w[26] = {8.2, 1.5, 2.8, 4.3, 12.7, 2.2, 2.0, 6.1, 7.0,
                                      0.2, 0.8, 4.0, 2.4,  6.7,  7.5, 1.9, 0.1, 6.0,
                                      6.3, 9.1, 2.8, 1.0,  2.4,  0.2, 2.0, 0.1};
  bytelm::Rng rng(seed);
  double total_w = 0;
  for (double w : letter_w) total_w += w;

  auto draw_letter = [&]() {
    double r = rng.uniform() * total_w;
    for (int i = 0; i < 26; ++i) {
      r -= letter_w[i];
      if (r < 0) return static_cast<char>('a' + i);
    }
    return 'z';
  };

  std::vector<std::string> words(static_cast<size_t>(vocab_words));
  for (auto& w : words) {
    size_t len = 2;
    while (len < 12 && rng.uniform() < 0.72) ++len;
    w.resize(len);
    for (auto& c : w) c = draw_letter();
  }
  std::vector<double> cum(words.size());
  double z = 0;
  for (size_t r = 0; r < words.size(); ++r) {
    z += 1.0 / std::pow(static_cast<double>(r + 1), 1.07);
    cum[r] = z;
  }

  std::vector<uint8_t> out;
  out.reserve(n_bytes);
  while (out.size() < n_bytes) {
    const double r = rng.uniform() * z;
    size_t lo = 0, hi = cum.size() - 1;
    while (lo < hi) {
      const size_t mid = (lo + hi) / 2;
      if (cum[mid] < r) lo = mid + 1;
      else hi = mid;
    }
    for (char c : words[lo]) out.push_back(static_cast<uint8_t>(c));
    out.push_back(' ');
  }
  out.resize(n_bytes);
  return out;
}

// exactly 64 bytes, repeated
inline std::vector<uint8_t> repeated_string_corpus(size_t repeats) {
  const std::string base = "the quick brown fox jumps over the lazy dog while owls watch on ";
  std::string s = base.substr(0, 64);
  std::vector<uint8_t> out;
  out.reserve(repeats * 64);
  for (size_t i = 0; i < repeats; ++i) out.insert(out.end(), s.begin(), s.end());
  return out;
}

}  // namespace oracles
