#include "bytelm/trainer.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <ostream>

#include "bytelm/checkpoint.hpp"

namespace bytelm {

namespace {

using nlohmann::json;

}  // namespace

TrainState train(TransformerLM<float>& model, const Corpus& corpus, const TrainConfig& tcfg,
                 const LossConfig& loss_cfg, const std::string& out_dir, const TrainHooks& hooks,
                 const TrainState* resume) {
  tcfg.validate();
  LossConfig lcfg = loss_cfg;
  lcfg.total_steps = tcfg.total_steps;
  lcfg.n_targets = model.cfg.n_targets;
  lcfg.validate();

  const LossSchedule sched{model.cfg.n_layers, tcfg.total_steps};

  TrainState state;
  if (resume != nullptr) {
    state = *resume;
  } else {
    const SeedBundle seeds = derive_seeds(tcfg.seed);
    state.data_rng = Rng(seeds.data);
    state.dropout_rng = Rng(seeds.dropout);
  }

  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
  auto ckpt_path = [&](const std::string& name) { return out_dir + "/" + name; };

  EvalConfig ecfg;
  ecfg.split = Split::dev;
  ecfg.context = tcfg.eval_context > 0 ? tcfg.eval_context : model.cfg.seq_len;
  ecfg.stride = tcfg.eval_stride > 0 ? std::min(tcfg.eval_stride, ecfg.context) : ecfg.context;
  ecfg.max_chars = tcfg.eval_max_chars;

  auto params = collect_parameters(model);
  int consecutive_nan = 0;
  bool stop = false;
  int64_t last_eval_step = -1;

  auto run_eval = [&](int64_t step) {
    last_eval_step = step;
    const EvalResult r = evaluate(model, corpus, ecfg);
    if (hooks.metrics)
      *hooks.metrics << json{{"step", step},        {"event", "eval"},
                             {"bpc", r.bpc},        {"accuracy", r.accuracy},
                             {"context", ecfg.context}, {"stride", ecfg.stride},
                             {"chars", r.chars}}
                            .dump()
                     << "\n";
    if (hooks.human)
      *hooks.human << "step " << step << "  dev bpc " << r.bpc << "  acc " << r.accuracy << "\n";
    if (r.bpc < state.best_bpc) {
      state.best_bpc = r.bpc;
      state.best_step = step;
      if (!out_dir.empty()) save_checkpoint(ckpt_path("best.ckpt"), model, step, &state);
    }
    if (!out_dir.empty()) save_checkpoint(ckpt_path("step_" + std::to_string(step) + ".ckpt"), model, step, &state);
    if (hooks.on_eval && !hooks.on_eval(step, r)) stop = true;
  };

  const Index t = model.cfg.seq_len;
  std::vector<int32_t> inputs(static_cast<size_t>(tcfg.batch_size * t));

  while (state.step < tcfg.total_steps && !stop) {
    const int64_t step = state.step;
    Batch batch = sample_batch(corpus, Split::train, tcfg.batch_size, model.cfg.seq_len,
                               model.cfg.n_targets, state.data_rng);
    // model input is the first seq_len of each window; the tail supplies targets
    for (Index b = 0; b < batch.batch; ++b)
      std::copy_n(batch.tokens.begin() + b * batch.window_len, t, inputs.begin() + b * t);
    const HeadSelection sel = heads_for_step(step, lcfg, sched);
    ForwardOutput<float> out =
        forward(model, inputs, batch.batch, RunMode::train, &state.dropout_rng, sel);
    LossResult<float> loss = total_loss(out, batch.tokens, batch.window_len, step, lcfg, sched);

    if (!std::isfinite(loss.report.total_bits)) {
      // skip the update; parameters and the last checkpoints stay intact
      ++consecutive_nan;
      if (hooks.metrics) {
        json j = json::parse(to_metrics_line(loss.report, step));
        j["non_finite"] = true;
        *hooks.metrics << j.dump() << "\n";
      }
      if (consecutive_nan >= 3)
        throw std::runtime_error("training diverged: 3 consecutive non-finite losses at step " +
                                 std::to_string(step));
      ++state.step;
      continue;
    }
    consecutive_nan = 0;

    model.zero_grads();
    backward(loss.total);
    if (tcfg.grad_clip > 0) clip_gradients<float>(params, tcfg.grad_clip);
    if (tcfg.optimizer == OptimizerKind::sgd)
      sgd_step<float>(params, tcfg.lr);
    else
      momentum_step<float>(params, state.velocity, tcfg.lr, tcfg.momentum, tcfg.nesterov);

    if (hooks.metrics) *hooks.metrics << to_metrics_line(loss.report, step) << "\n";
    if (hooks.on_step && !hooks.on_step(step, loss.report)) stop = true;

    ++state.step;
    if (!stop && tcfg.eval_interval > 0 && state.step % tcfg.eval_interval == 0 &&
        state.step < tcfg.total_steps)
      run_eval(state.step);
  }

  if (tcfg.total_steps > 0 && state.step > 0 && last_eval_step != state.step) run_eval(state.step);
  return state;
}

}  // namespace bytelm
