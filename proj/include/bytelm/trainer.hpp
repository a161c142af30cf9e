#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "bytelm/data.hpp"
#include "bytelm/evaluator.hpp"
#include "bytelm/loss.hpp"
#include "bytelm/model.hpp"
#include "bytelm/optim.hpp"
#include "bytelm/rng.hpp"

namespace bytelm {

enum class OptimizerKind { momentum, sgd };

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::momentum;
  double lr = 0.003;
  double momentum = 0.99;
  bool nesterov = false;
  Index batch_size = 16;
  int64_t total_steps = 0;
  int64_t eval_interval = 10000;
  Index eval_context = 0;        // 0: use the model's seq_len
  Index eval_stride = 0;         // 0: use eval_context (strided, cheap)
  int64_t eval_max_chars = 1 << 20;  // dev characters per in-training eval; 0 = all
  double grad_clip = 0;          // global-norm clip; 0 = off
  uint64_t seed = 1;

  void validate() const {
    if (!(lr > 0)) throw std::invalid_argument("train config: lr must be > 0");
    if (momentum < 0 || momentum >= 1)
      throw std::invalid_argument("train config: momentum must be in [0,1)");
    if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
    if (total_steps < 0) throw std::invalid_argument("train config: total_steps must be >= 0");
    if (eval_interval < 0) throw std::invalid_argument("train config: eval_interval must be >= 0");
    if (grad_clip < 0) throw std::invalid_argument("train config: grad_clip must be >= 0");
  }

  bool operator==(const TrainConfig&) const = default;
};

// Everything needed to continue a run bit-exactly: step counter, optimizer
// velocity, both rng streams, and the best-checkpoint bookkeeping.
struct TrainState {
  int64_t step = 0;
  double best_bpc = std::numeric_limits<double>::infinity();
  int64_t best_step = -1;
  Rng data_rng;
  Rng dropout_rng;
  std::vector<ArrayX<float>> velocity;
};

// One master seed fans out into decorrelated streams for parameter init,
// batch sampling and dropout.
struct SeedBundle {
  uint64_t init;
  uint64_t data;
  uint64_t dropout;
};

inline SeedBundle derive_seeds(uint64_t seed) {
  Rng r(seed);
  return {r.next_u64(), r.next_u64(), r.next_u64()};
}

struct TrainHooks {
  std::ostream* metrics = nullptr;  // JSON lines, one per step and per eval
  std::ostream* human = nullptr;
  std::function<bool(int64_t step, const LossReport&)> on_step;      // false stops the run
  std::function<bool(int64_t step, const EvalResult&)> on_eval;      // false stops the run
};

// Runs total_steps of sample -> forward -> total_loss -> backward -> step,
// evaluating dev bpc every eval_interval steps and retaining the best
// parameters as best.ckpt under out_dir (when non-empty). Three consecutive
// non-finite losses abort the run; checkpoints already on disk are left
// intact. Resume from a loaded TrainState continues the exact step sequence.
TrainState train(TransformerLM<float>& model, const Corpus& corpus, const TrainConfig& tcfg,
                 const LossConfig& lcfg, const std::string& out_dir, const TrainHooks& hooks = {},
                 const TrainState* resume = nullptr);

}  // namespace bytelm
