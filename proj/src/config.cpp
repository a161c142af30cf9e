#include "bytelm/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace bytelm {

namespace {

std::string trim(std::string_view s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config key '" + key + "': expected true/false, got '" + v + "'");
}

int64_t parse_int(const std::string& key, const std::string& v) {
  int64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw std::invalid_argument("config key '" + key + "': expected integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return out;
  } catch (...) {
    throw std::invalid_argument("config key '" + key + "': expected number, got '" + v + "'");
  }
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

// key registry: setter + getter per field, shared by parse and serialize
struct Field {
  std::string key;
  std::string comment;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

std::vector<Field> run_config_fields() {
  std::vector<Field> f;
  auto add = [&](std::string key, std::string comment, auto set, auto get) {
    f.push_back({std::move(key), std::move(comment), set, get});
  };

  // model
  add("n_layers", "transformer layers N",
      [](RunConfig& c, const std::string& v) { c.model.n_layers = parse_int("n_layers", v); },
      [](const RunConfig& c) { return std::to_string(c.model.n_layers); });
  add("d_model", "hidden size",
      [](RunConfig& c, const std::string& v) { c.model.d_model = parse_int("d_model", v); },
      [](const RunConfig& c) { return std::to_string(c.model.d_model); });
  add("n_heads", "attention heads per layer",
      [](RunConfig& c, const std::string& v) { c.model.n_heads = parse_int("n_heads", v); },
      [](const RunConfig& c) { return std::to_string(c.model.n_heads); });
  add("d_ff", "feed-forward filter size",
      [](RunConfig& c, const std::string& v) { c.model.d_ff = parse_int("d_ff", v); },
      [](const RunConfig& c) { return std::to_string(c.model.d_ff); });
  add("seq_len", "training context length L",
      [](RunConfig& c, const std::string& v) { c.model.seq_len = parse_int("seq_len", v); },
      [](const RunConfig& c) { return std::to_string(c.model.seq_len); });
  add("vocab", "output classes; byte models always use 256",
      [](RunConfig& c, const std::string& v) { c.model.vocab = parse_int("vocab", v); },
      [](const RunConfig& c) { return std::to_string(c.model.vocab); });
  add("n_targets", "predictions per position (offsets 1..K)",
      [](RunConfig& c, const std::string& v) { c.model.n_targets = parse_int("n_targets", v); },
      [](const RunConfig& c) { return std::to_string(c.model.n_targets); });
  add("dropout_attn", "drop rate on attention weights",
      [](RunConfig& c, const std::string& v) { c.model.dropout_attn = parse_double("dropout_attn", v); },
      [](const RunConfig& c) { return fmt_double(c.model.dropout_attn); });
  add("dropout_relu", "drop rate on post-relu activations",
      [](RunConfig& c, const std::string& v) { c.model.dropout_relu = parse_double("dropout_relu", v); },
      [](const RunConfig& c) { return fmt_double(c.model.dropout_relu); });
  add("positional_mode", "per_layer_learned | sinusoidal_input_only",
      [](RunConfig& c, const std::string& v) {
        if (v == "per_layer_learned") c.model.positional_mode = PositionalMode::per_layer_learned;
        else if (v == "sinusoidal_input_only") c.model.positional_mode = PositionalMode::sinusoidal_input_only;
        else throw std::invalid_argument("config key 'positional_mode': unknown value '" + v + "'");
      },
      [](const RunConfig& c) {
        return std::string(c.model.positional_mode == PositionalMode::per_layer_learned
                               ? "per_layer_learned"
                               : "sinusoidal_input_only");
      });
  add("pre_norm", "pre-norm residual blocks instead of post-norm",
      [](RunConfig& c, const std::string& v) { c.model.pre_norm = parse_bool("pre_norm", v); },
      [](const RunConfig& c) { return std::string(c.model.pre_norm ? "true" : "false"); });
  add("final_norm", "auto | on | off (auto: on iff pre_norm)",
      [](RunConfig& c, const std::string& v) {
        if (v == "auto") c.model.final_norm = -1;
        else if (v == "on") c.model.final_norm = 1;
        else if (v == "off") c.model.final_norm = 0;
        else throw std::invalid_argument("config key 'final_norm': unknown value '" + v + "'");
      },
      [](const RunConfig& c) {
        return std::string(c.model.final_norm < 0 ? "auto" : (c.model.final_norm ? "on" : "off"));
      });
  add("ln_eps", "layer norm epsilon",
      [](RunConfig& c, const std::string& v) { c.model.ln_eps = parse_double("ln_eps", v); },
      [](const RunConfig& c) { return fmt_double(c.model.ln_eps); });

  // loss
  add("multiple_positions", "predict at every sequence position",
      [](RunConfig& c, const std::string& v) { c.loss.multiple_positions = parse_bool("multiple_positions", v); },
      [](const RunConfig& c) { return std::string(c.loss.multiple_positions ? "true" : "false"); });
  add("intermediate_losses", "per-layer losses on the drop schedule",
      [](RunConfig& c, const std::string& v) { c.loss.intermediate_losses = parse_bool("intermediate_losses", v); },
      [](const RunConfig& c) { return std::string(c.loss.intermediate_losses ? "true" : "false"); });
  add("extra_target_weight", "loss weight on offsets beyond 1",
      [](RunConfig& c, const std::string& v) { c.loss.extra_target_weight = parse_double("extra_target_weight", v); },
      [](const RunConfig& c) { return fmt_double(c.loss.extra_target_weight); });

  // training
  add("optimizer", "momentum | sgd",
      [](RunConfig& c, const std::string& v) {
        if (v == "momentum") c.train.optimizer = OptimizerKind::momentum;
        else if (v == "sgd") c.train.optimizer = OptimizerKind::sgd;
        else throw std::invalid_argument("config key 'optimizer': unknown value '" + v + "'");
      },
      [](const RunConfig& c) {
        return std::string(c.train.optimizer == OptimizerKind::momentum ? "momentum" : "sgd");
      });
  add("lr", "learning rate, fixed for the whole run",
      [](RunConfig& c, const std::string& v) { c.train.lr = parse_double("lr", v); },
      [](const RunConfig& c) { return fmt_double(c.train.lr); });
  add("momentum", "momentum coefficient",
      [](RunConfig& c, const std::string& v) { c.train.momentum = parse_double("momentum", v); },
      [](const RunConfig& c) { return fmt_double(c.train.momentum); });
  add("nesterov", "nesterov momentum variant",
      [](RunConfig& c, const std::string& v) { c.train.nesterov = parse_bool("nesterov", v); },
      [](const RunConfig& c) { return std::string(c.train.nesterov ? "true" : "false"); });
  add("batch_size", "sequences per step",
      [](RunConfig& c, const std::string& v) { c.train.batch_size = parse_int("batch_size", v); },
      [](const RunConfig& c) { return std::to_string(c.train.batch_size); });
  add("total_steps", "training steps T",
      [](RunConfig& c, const std::string& v) { c.train.total_steps = parse_int("total_steps", v); },
      [](const RunConfig& c) { return std::to_string(c.train.total_steps); });
  add("eval_interval", "steps between dev evaluations",
      [](RunConfig& c, const std::string& v) { c.train.eval_interval = parse_int("eval_interval", v); },
      [](const RunConfig& c) { return std::to_string(c.train.eval_interval); });
  add("eval_context", "dev-eval context; 0 uses seq_len",
      [](RunConfig& c, const std::string& v) { c.train.eval_context = parse_int("eval_context", v); },
      [](const RunConfig& c) { return std::to_string(c.train.eval_context); });
  add("eval_stride", "dev-eval stride; 0 uses eval_context",
      [](RunConfig& c, const std::string& v) { c.train.eval_stride = parse_int("eval_stride", v); },
      [](const RunConfig& c) { return std::to_string(c.train.eval_stride); });
  add("eval_max_chars", "dev characters per in-training eval; 0 = all",
      [](RunConfig& c, const std::string& v) { c.train.eval_max_chars = parse_int("eval_max_chars", v); },
      [](const RunConfig& c) { return std::to_string(c.train.eval_max_chars); });
  add("grad_clip", "global-norm gradient clip; 0 = off",
      [](RunConfig& c, const std::string& v) { c.train.grad_clip = parse_double("grad_clip", v); },
      [](const RunConfig& c) { return fmt_double(c.train.grad_clip); });
  add("seed", "master seed for init, sampling and dropout",
      [](RunConfig& c, const std::string& v) { c.train.seed = static_cast<uint64_t>(parse_int("seed", v)); },
      [](const RunConfig& c) { return std::to_string(c.train.seed); });

  // eval defaults for the eval subcommand
  add("context", "eval context length",
      [](RunConfig& c, const std::string& v) { c.eval.context = parse_int("context", v); },
      [](const RunConfig& c) { return std::to_string(c.eval.context); });
  add("stride", "eval stride (1 = per-character re-encoding)",
      [](RunConfig& c, const std::string& v) { c.eval.stride = parse_int("stride", v); },
      [](const RunConfig& c) { return std::to_string(c.eval.stride); });
  add("split", "dev | test",
      [](RunConfig& c, const std::string& v) { c.eval.split = parse_split(v); },
      [](const RunConfig& c) { return std::string(split_name(c.eval.split)); });

  return f;
}

void apply_lines(std::string_view text, const std::vector<Field>& fields,
                 std::function<Field const*(const std::string&)> lookup,
                 RunConfig& cfg) {
  (void)fields;
  size_t line_no = 0;
  size_t pos = 0;
  while (pos <= text.size()) {
    size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string line(text.substr(pos, eol - pos));
    pos = eol + 1;
    ++line_no;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    const Field* f = lookup(key);
    if (f == nullptr)
      throw std::invalid_argument("unknown config key '" + key + "' on line " + std::to_string(line_no));
    f->set(cfg, value);
  }
}

}  // namespace

RunConfig parse_run_config(std::string_view text) {
  const auto fields = run_config_fields();
  std::map<std::string, const Field*> by_key;
  for (const auto& f : fields) by_key[f.key] = &f;
  RunConfig cfg;
  apply_lines(text, fields, [&](const std::string& k) -> const Field* {
    auto it = by_key.find(k);
    return it == by_key.end() ? nullptr : it->second;
  }, cfg);
  cfg.sync_derived();
  return cfg;
}

std::string serialize_run_config(const RunConfig& cfg) {
  const auto fields = run_config_fields();
  std::ostringstream os;
  os << "# bytelm run configuration\n";
  for (const auto& f : fields)
    os << f.key << " = " << f.get(cfg) << "  # " << f.comment << "\n";
  return os.str();
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string serialize_model_config(const ModelConfig& cfg) {
  static const char* model_keys[] = {"n_layers", "d_model", "n_heads", "d_ff", "seq_len",
                                     "vocab", "n_targets", "dropout_attn", "dropout_relu",
                                     "positional_mode", "pre_norm", "final_norm", "ln_eps"};
  RunConfig rc;
  rc.model = cfg;
  const auto fields = run_config_fields();
  std::ostringstream os;
  for (const auto& f : fields)
    for (const char* k : model_keys)
      if (f.key == k) os << f.key << " = " << f.get(rc) << "\n";
  return os.str();
}

ModelConfig parse_model_config(std::string_view text) {
  RunConfig rc = parse_run_config(text);
  return rc.model;
}

}  // namespace bytelm
