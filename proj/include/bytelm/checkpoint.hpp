#pragma once

#include <cstdint>
#include <string>

#include "bytelm/model.hpp"
#include "bytelm/trainer.hpp"

namespace bytelm {

// Versioned binary checkpoint:
//   magic "BYTELMCK", u32 version,
//   u32 config text length, the ModelConfig as canonical key=value text,
//   i64 step,
//   u8 has_train_state, then (when set) data rng 4xu64, dropout rng 4xu64,
//     f64 best_bpc, i64 best_step,
//   i64 total parameter element count,
//   parameters as little-endian float32 in visit_parameters order,
//   u8 has_velocity, then (when set) velocity buffers in the same order.
struct CheckpointData {
  TransformerLM<float> model;
  int64_t step = 0;
  bool has_train_state = false;
  TrainState state;  // meaningful when has_train_state
};

void save_checkpoint(const std::string& path, TransformerLM<float>& model, int64_t step,
                     const TrainState* state = nullptr);

CheckpointData load_checkpoint(const std::string& path);

}  // namespace bytelm
