#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "bytelm/model.hpp"
#include "bytelm/tensor.hpp"

namespace bytelm {

struct LossConfig {
  bool multiple_positions = true;    // loss at every sequence position
  bool intermediate_losses = true;   // loss from every layer, on the drop schedule
  Index n_targets = 2;               // offsets 1..K, one classifier each
  double extra_target_weight = 0.5;  // weight on offsets k > 1
  int64_t total_steps = 0;

  void validate() const {
    if (n_targets < 1) throw std::invalid_argument("loss config: n_targets must be >= 1");
    if (extra_target_weight < 0 || extra_target_weight > 1)
      throw std::invalid_argument("loss config: extra_target_weight must be in [0,1]");
    if (total_steps < 0) throw std::invalid_argument("loss config: total_steps must be >= 0");
  }

  bool operator==(const LossConfig&) const = default;
};

// Step at which layer l (1-based, of n_layers) stops contributing loss:
// floor((l / (2*n_layers)) * total_steps). The final layer is exempt and
// contributes for the whole run; every intermediate layer is gone once half
// the training is done.
inline int64_t layer_drop_step(Index layer, Index n_layers, int64_t total_steps) {
  if (layer < 1 || layer > n_layers)
    throw std::invalid_argument("layer_drop_step: layer " + std::to_string(layer) +
                                " out of range [1," + std::to_string(n_layers) + "]");
  if (total_steps < 0) throw std::invalid_argument("layer_drop_step: total_steps must be >= 0");
  return static_cast<int64_t>(layer) * total_steps / (2 * static_cast<int64_t>(n_layers));
}

struct LossSchedule {
  Index n_layers = 1;
  int64_t total_steps = 0;

  int64_t drop_step(Index layer) const { return layer_drop_step(layer, n_layers, total_steps); }

  // layers contributing loss at `step`, ascending; {N} alone once intermediate
  // losses are off or dropped
  std::vector<Index> active_layers(int64_t step, bool intermediate_losses) const {
    std::vector<Index> out;
    if (intermediate_losses) {
      for (Index l = 1; l < n_layers; ++l)
        if (step < drop_step(l)) out.push_back(l);
    }
    out.push_back(n_layers);
    return out;
  }
};

struct LossReport {
  double total_bits = 0;
  std::vector<Index> active;                         // layers, ascending
  std::map<HeadKey, double> component_bits;          // mean CE bits per (layer, offset)
  std::map<HeadKey, int64_t> component_terms;        // CE terms contributing per component
  int64_t term_count = 0;
};

// one JSON metrics line: step, total, per-component bits keyed "layer:offset",
// active layers
std::string to_metrics_line(const LossReport& report, int64_t step);

template <typename S>
struct LossResult {
  Tensor<S> total;  // scalar; backward() trains on it
  LossReport report;
};

// Training loss at `step`: over active layers l, in-scope positions i and
// offsets k, the mean of w(k) * CE_bits(logits[l,i,k], window[i+k]) with
// w(1)=1 and w(k>1)=extra_target_weight, normalized by the number of CE
// terms. Multiple-positions off restricts i to the final position; position
// losses are never decayed. windows is batch x window_len with window_len =
// T + n_targets so every position has all its targets.
template <typename S>
LossResult<S> total_loss(const ForwardOutput<S>& out, std::span<const int32_t> windows,
                         Index window_len, int64_t step, const LossConfig& cfg,
                         const LossSchedule& sched) {
  cfg.validate();
  const Index batch = out.batch;
  if (window_len <= cfg.n_targets)
    throw std::invalid_argument("total_loss: window_len " + std::to_string(window_len) +
                                " leaves no positions for n_targets " + std::to_string(cfg.n_targets));
  if (static_cast<Index>(windows.size()) != batch * window_len)
    throw std::invalid_argument("total_loss: expected " + std::to_string(batch * window_len) +
                                " window tokens, got " + std::to_string(windows.size()));
  const Index t = window_len - cfg.n_targets;
  const Index expect_positions = out.final_position_only ? 1 : t;
  if (out.positions != expect_positions)
    throw std::invalid_argument("total_loss: forward output has " + std::to_string(out.positions) +
                                " positions per window, expected " + std::to_string(expect_positions));

  LossResult<S> res;
  res.report.active = sched.active_layers(step, cfg.intermediate_losses);

  Tensor<S> acc;
  std::vector<int32_t> targets;
  for (Index l : res.report.active) {
    for (Index k = 1; k <= cfg.n_targets; ++k) {
      const double w = (k == 1) ? 1.0 : cfg.extra_target_weight;
      if (w == 0.0) continue;  // zero-weight components are skipped outright
      auto it = out.logits.find({l, k});
      if (it == out.logits.end())
        throw std::invalid_argument("total_loss: forward output is missing logits for (layer " +
                                    std::to_string(l) + ", offset " + std::to_string(k) + ")");

      targets.clear();
      if (out.final_position_only) {
        for (Index b = 0; b < batch; ++b)
          targets.push_back(windows[b * window_len + (t - 1) + k]);
      } else {
        for (Index b = 0; b < batch; ++b)
          for (Index i = 0; i < t; ++i) targets.push_back(windows[b * window_len + i + k]);
      }

      Tensor<S> ce = cross_entropy_bits(it->second, targets);
      Tensor<S> s = sum(ce);
      const auto n_terms = static_cast<int64_t>(targets.size());
      res.report.component_bits[{l, k}] = static_cast<double>(s.item()) / static_cast<double>(n_terms);
      res.report.component_terms[{l, k}] = n_terms;
      res.report.term_count += n_terms;

      Tensor<S> weighted = (w == 1.0) ? s : scale(s, w);
      acc = acc.defined() ? add(acc, weighted) : weighted;
    }
  }
  res.total = scale(acc, 1.0 / static_cast<double>(res.report.term_count));
  res.report.total_bits = static_cast<double>(res.total.item());
  return res;
}

// The (layer, offset) logits a forward pass must materialize for this step.
inline HeadSelection heads_for_step(int64_t step, const LossConfig& cfg, const LossSchedule& sched) {
  HeadSelection sel;
  sel.final_position_only = !cfg.multiple_positions;
  for (Index l : sched.active_layers(step, cfg.intermediate_losses))
    for (Index k = 1; k <= cfg.n_targets; ++k)
      if (k == 1 || cfg.extra_target_weight > 0) sel.heads.insert({l, k});
  return sel;
}

}  // namespace bytelm
