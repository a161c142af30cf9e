#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "bytelm/data.hpp"
#include "bytelm/model.hpp"

namespace bytelm {

// Evaluation walks a split left to right: the first `context` characters are
// seed context only, every later character gets exactly one prediction.
// stride=1 re-encodes the full context for every character (the faithful
// setting); stride=S>1 advances windows by S and reads the last S positions
// of each, trading context for throughput.
struct EvalConfig {
  Index context = 512;
  Index stride = 1;
  Split split = Split::dev;
  int64_t max_chars = 0;     // cap on predicted characters; 0 = whole split
  Index batch_windows = 32;  // windows per predictor call

  bool operator==(const EvalConfig&) const = default;
};

struct EvalResult {
  double bpc = 0;       // mean -log2 P(target)
  double accuracy = 0;  // argmax == target, ties broken toward the lowest byte
  int64_t chars = 0;    // predicted characters (split size minus the seed context)
};

// A batch of equal-length windows into the split. The predictor returns
// next-byte probability rows for positions first_pred..window_len-1 of each
// window, window-major: row w*(window_len-first_pred) + (j-first_pred) is
// P(byte | window w tokens 0..j).
struct EvalWindows {
  std::span<const uint8_t> data;  // the whole split
  std::vector<size_t> starts;     // window start offsets within data
  Index window_len = 0;
  Index first_pred = 0;
};

using WindowPredictor = std::function<Eigen::MatrixXd(const EvalWindows&)>;

EvalResult evaluate_split(const WindowPredictor& predictor, std::span<const uint8_t> split_bytes,
                          const EvalConfig& cfg);

// ppl = 2^(bpb * n_bytes / n_tokens)
double bpb_to_ppl(double bpb, int64_t n_bytes, int64_t n_tokens);

// Runs the model's inference head over a window batch; probability rows are
// computed in double from the float logits.
template <typename S>
WindowPredictor make_window_predictor(const TransformerLM<S>& model) {
  return [&model](const EvalWindows& w) -> Eigen::MatrixXd {
    const Index count = static_cast<Index>(w.starts.size());
    const Index t = w.window_len;
    const Index n_pred = t - w.first_pred;
    std::vector<int32_t> tokens(static_cast<size_t>(count * t));
    for (Index b = 0; b < count; ++b)
      for (Index j = 0; j < t; ++j)
        tokens[static_cast<size_t>(b * t + j)] = w.data[w.starts[static_cast<size_t>(b)] + static_cast<size_t>(j)];

    HeadSelection sel;
    sel.heads.insert(model.inference_head());
    auto out = forward(model, tokens, count, RunMode::eval, nullptr, sel);
    const auto& logits = out.logits.at(model.inference_head());  // [count*t, V]
    const Index v = model.cfg.vocab;

    Eigen::MatrixXd probs(count * n_pred, v);
    for (Index b = 0; b < count; ++b) {
      for (Index j = w.first_pred; j < t; ++j) {
        const S* row = logits.values().data() + (b * t + j) * v;
        double m = row[0];
        for (Index c = 1; c < v; ++c) m = std::max(m, static_cast<double>(row[c]));
        double sum = 0;
        const Index out_row = b * n_pred + (j - w.first_pred);
        for (Index c = 0; c < v; ++c) {
          const double e = std::exp(static_cast<double>(row[c]) - m);
          probs(out_row, c) = e;
          sum += e;
        }
        probs.row(out_row) /= sum;
      }
    }
    return probs;
  };
}

template <typename S>
EvalResult evaluate(const TransformerLM<S>& model, const Corpus& corpus, const EvalConfig& cfg) {
  return evaluate_split(make_window_predictor(model), corpus.split(cfg.split), cfg);
}

}  // namespace bytelm
