#pragma once

#include <string>
#include <string_view>

#include "bytelm/evaluator.hpp"
#include "bytelm/loss.hpp"
#include "bytelm/model.hpp"
#include "bytelm/trainer.hpp"

namespace bytelm {

// One flat canonical key=value text covers model, loss, training and eval
// settings; '#' starts a comment, unknown keys are rejected, and every key
// has a default so a partial file is a valid override set.
struct RunConfig {
  ModelConfig model;
  LossConfig loss;
  TrainConfig train;
  EvalConfig eval;

  // loss.n_targets mirrors model.n_targets and loss.total_steps mirrors
  // train.total_steps; parsing keeps them in sync.
  void sync_derived() {
    loss.n_targets = model.n_targets;
    loss.total_steps = train.total_steps;
  }

  void validate() const {
    model.validate();
    loss.validate();
    train.validate();
  }

  bool operator==(const RunConfig&) const = default;
};

RunConfig parse_run_config(std::string_view text);
std::string serialize_run_config(const RunConfig& cfg);

RunConfig load_run_config(const std::string& path);

// the model subset, used for checkpoint headers
std::string serialize_model_config(const ModelConfig& cfg);
ModelConfig parse_model_config(std::string_view text);

}  // namespace bytelm
