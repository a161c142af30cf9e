#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "bytelm/analysis.hpp"
#include "bytelm/checkpoint.hpp"
#include "bytelm/config.hpp"
#include "bytelm/data.hpp"
#include "bytelm/evaluator.hpp"
#include "bytelm/trainer.hpp"

using nlohmann::json;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string resolve_data_path(const std::string& path) {
  namespace fs = std::filesystem;
  if (fs::exists(path)) return path;
  if (const char* dir = std::getenv("BYTELM_DATA_DIR"); dir != nullptr && fs::path(path).is_relative()) {
    const auto joined = (fs::path(dir) / path).string();
    if (fs::exists(joined)) return joined;
  }
  return path;  // let the loader report the error
}

std::array<double, 3> parse_fractions(const std::string& s) {
  std::array<double, 3> out{};
  std::string norm = s;
  for (char& c : norm)
    if (c == '/') c = ',';
  std::stringstream ss(norm);
  std::string part;
  int i = 0;
  while (std::getline(ss, part, ',') && i < 3) out[static_cast<size_t>(i++)] = std::stod(part);
  if (i != 3) throw std::invalid_argument("--split-fractions wants three numbers, e.g. 0.9,0.05,0.05");
  return out;
}

std::string csv_escape_byte(uint8_t b) {
  if (b == '"') return "\"\"\"\"";
  if (b == ',') return "\",\"";
  if (b >= 0x20 && b < 0x7f) return std::string(1, static_cast<char>(b));
  char buf[8];
  std::snprintf(buf, sizeof(buf), "\\x%02x", b);
  return buf;
}

void write_trace_csv(std::ostream& os, const bytelm::CharTrace& t, const std::string& label = "") {
  for (const auto& e : t.entries) {
    if (!label.empty()) os << label << ",";
    os << e.position << "," << csv_escape_byte(e.byte) << "," << e.entropy_bits << "," << e.loss_bits
       << "," << e.rank << "\n";
  }
}

json trace_json(const bytelm::CharTrace& t) {
  json rows = json::array();
  for (const auto& e : t.entries)
    rows.push_back({{"position", e.position},
                    {"byte", e.byte},
                    {"entropy_bits", e.entropy_bits},
                    {"loss_bits", e.loss_bits},
                    {"rank", e.rank}});
  return rows;
}

std::ostream& open_csv(std::optional<std::ofstream>& file, const std::string& path) {
  if (path == "-") return std::cout;
  file.emplace(path);
  if (!*file) throw std::runtime_error("cannot write csv file: " + path);
  return *file;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"byte-level character language modeling toolkit"};
  app.require_subcommand(1);

  // prepare-data
  std::string prep_in, prep_out;
  auto* prep = app.add_subcommand("prepare-data", "clean raw text into the 27-symbol text8 alphabet");
  prep->add_option("--in", prep_in, "input text file")->required();
  prep->add_option("--out", prep_out, "output file")->required();

  // shared data flags
  std::string data_path, data_format = "raw", fractions_str = "0.9,0.05,0.05";

  // train
  std::string train_config, train_out, train_resume;
  std::optional<uint64_t> train_seed;
  auto* tr = app.add_subcommand("train", "train a model");
  tr->add_option("--config", train_config, "run config file")->required();
  tr->add_option("--data", data_path, "corpus file")->required();
  tr->add_option("--format", data_format, "text8|enwik8|raw");
  tr->add_option("--split-fractions", fractions_str, "train,dev,test fractions");
  tr->add_option("--out", train_out, "output directory for checkpoints");
  tr->add_option("--resume", train_resume, "checkpoint to resume from");
  tr->add_option("--seed", train_seed, "override the config seed");

  // eval
  std::string eval_ckpt, eval_split = "dev";
  int64_t eval_context = 512, eval_stride = 1, eval_max_chars = 0, eval_batch_windows = 32;
  auto* ev = app.add_subcommand("eval", "bits per character over a split");
  ev->add_option("--ckpt", eval_ckpt, "checkpoint file")->required();
  ev->add_option("--data", data_path, "corpus file")->required();
  ev->add_option("--format", data_format, "text8|enwik8|raw");
  ev->add_option("--split-fractions", fractions_str, "train,dev,test fractions");
  ev->add_option("--split", eval_split, "dev|test");
  ev->add_option("--context", eval_context, "context length");
  ev->add_option("--stride", eval_stride, "stride (1 = per-character re-encoding)");
  ev->add_option("--max-chars", eval_max_chars, "cap predicted characters; 0 = all");
  ev->add_option("--batch-windows", eval_batch_windows, "windows per forward");

  // analyze
  auto* an = app.add_subcommand("analyze", "prediction probes");
  an->require_subcommand(1);
  std::string an_ckpt, an_seed_file, an_cont_file, an_csv, an_name = "elizabeth",
              an_fake = "zjakdmu bmijwxn", an_second = "she";
  double an_cutoff = 0.001;
  int64_t an_max_len = 64;
  auto* an_trace = an->add_subcommand("trace", "per-character entropy/loss/rank over a continuation");
  an_trace->add_option("--ckpt", an_ckpt, "checkpoint file")->required();
  an_trace->add_option("--seed-file", an_seed_file, "seed text file")->required();
  an_trace->add_option("--continuation-file", an_cont_file, "continuation text file")->required();
  an_trace->add_option("--csv", an_csv, "write csv here ('-' for stdout)");
  auto* an_comp = an->add_subcommand("completions", "word completions above a probability cutoff");
  an_comp->add_option("--ckpt", an_ckpt, "checkpoint file")->required();
  an_comp->add_option("--seed-file", an_seed_file, "seed text file")->required();
  an_comp->add_option("--cutoff", an_cutoff, "cumulative probability cutoff");
  an_comp->add_option("--max-len", an_max_len, "max completion length");
  auto* an_copy = an->add_subcommand("copy-probe", "long-range copying probe with a fake name");
  an_copy->add_option("--ckpt", an_ckpt, "checkpoint file")->required();
  an_copy->add_option("--seed-file", an_seed_file, "seed text file")->required();
  an_copy->add_option("--continuation-file", an_cont_file, "continuation text file")->required();
  an_copy->add_option("--name", an_name, "name to replace (must occur twice in the seed)");
  an_copy->add_option("--fake", an_fake, "fake name substituted for the first occurrence");
  an_copy->add_option("--second", an_second, "replacement for the second occurrence");
  an_copy->add_option("--csv", an_csv, "write csv here ('-' for stdout)");

  // generate
  std::string gen_ckpt, gen_seed_text, gen_seed_file, gen_out;
  int64_t gen_n = 512;
  double gen_temp = 1.0;
  uint64_t gen_rng_seed = 0;
  auto* ge = app.add_subcommand("generate", "sample text from a model");
  ge->add_option("--ckpt", gen_ckpt, "checkpoint file")->required();
  ge->add_option("--seed-text", gen_seed_text, "seed text");
  ge->add_option("--seed-file", gen_seed_file, "seed text file");
  ge->add_option("--n-chars", gen_n, "characters to generate");
  ge->add_option("--temperature", gen_temp, "sampling temperature; 0 = greedy");
  ge->add_option("--rng-seed", gen_rng_seed, "sampler seed");
  ge->add_option("--out", gen_out, "write the sample here instead of stdout");

  // inspect-checkpoint
  std::string insp_ckpt;
  auto* insp = app.add_subcommand("inspect-checkpoint", "print config, step and parameter counts");
  insp->add_option("--ckpt", insp_ckpt, "checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << std::flush;
    return 2;
  }

  try {
    if (*prep) {
      const std::string raw = read_file(prep_in);
      const std::string clean = bytelm::preprocess_text8(raw);
      std::ofstream out(prep_out, std::ios::binary | std::ios::trunc);
      if (!out) throw std::runtime_error("cannot write output file: " + prep_out);
      out.write(clean.data(), static_cast<std::streamsize>(clean.size()));
      size_t distinct = 0;
      {
        std::array<bool, 256> seen{};
        for (char c : clean) seen[static_cast<uint8_t>(c)] = true;
        for (bool s : seen) distinct += s;
      }
      std::cout << json{{"in_bytes", raw.size()}, {"out_bytes", clean.size()}, {"distinct_symbols", distinct}}
                       .dump()
                << "\n";
      return 0;
    }

    if (*tr) {
      bytelm::RunConfig cfg = bytelm::load_run_config(train_config);
      if (train_seed) cfg.train.seed = *train_seed;
      cfg.sync_derived();
      cfg.validate();
      const auto corpus = bytelm::load_corpus(resolve_data_path(data_path),
                                              bytelm::parse_format(data_format),
                                              parse_fractions(fractions_str));
      std::cerr << "corpus '" << corpus.name << "': " << corpus.bytes.size() << " bytes, "
                << corpus.distinct_symbols() << " distinct; train/dev/test = " << corpus.train_end
                << "/" << corpus.dev_end - corpus.train_end << "/"
                << corpus.bytes.size() - corpus.dev_end << "\n";

      bytelm::TransformerLM<float> model;
      bytelm::TrainState resume_state;
      const bytelm::TrainState* resume = nullptr;
      if (!train_resume.empty()) {
        auto ck = bytelm::load_checkpoint(train_resume);
        if (!ck.has_train_state)
          throw std::runtime_error("checkpoint has no training state to resume from");
        if (!(ck.model.cfg == cfg.model))
          throw std::runtime_error("checkpoint model config does not match --config");
        model = std::move(ck.model);
        resume_state = std::move(ck.state);
        resume = &resume_state;
        std::cerr << "resuming from step " << resume_state.step << "\n";
      } else {
        model = bytelm::init_model<float>(cfg.model, bytelm::derive_seeds(cfg.train.seed).init);
      }

      bytelm::TrainHooks hooks;
      hooks.metrics = &std::cout;
      hooks.human = &std::cerr;
      const auto state = bytelm::train(model, corpus, cfg.train, cfg.loss, train_out, hooks, resume);
      std::cerr << "done: " << state.step << " steps, best dev bpc " << state.best_bpc << " at step "
                << state.best_step << "\n";
      return 0;
    }

    if (*ev) {
      auto ck = bytelm::load_checkpoint(eval_ckpt);
      const auto corpus = bytelm::load_corpus(resolve_data_path(data_path),
                                              bytelm::parse_format(data_format),
                                              parse_fractions(fractions_str));
      bytelm::EvalConfig ecfg;
      ecfg.context = eval_context;
      ecfg.stride = eval_stride;
      ecfg.split = bytelm::parse_split(eval_split);
      ecfg.max_chars = eval_max_chars;
      ecfg.batch_windows = eval_batch_windows;
      const auto res = bytelm::evaluate(ck.model, corpus, ecfg);
      std::cout << json{{"bpc", res.bpc},         {"accuracy", res.accuracy},
                        {"chars", res.chars},     {"context", ecfg.context},
                        {"stride", ecfg.stride},  {"split", bytelm::split_name(ecfg.split)}}
                       .dump()
                << "\n";
      char line[160];
      std::snprintf(line, sizeof(line), "%lld | %.3f | %.1f  (context | bpc | accuracy%%, %s, %lld chars)",
                    static_cast<long long>(ecfg.context), res.bpc, 100.0 * res.accuracy,
                    bytelm::split_name(ecfg.split), static_cast<long long>(res.chars));
      std::cerr << line << "\n";
      return 0;
    }

    if (*an) {
      auto ck = bytelm::load_checkpoint(an_ckpt);
      const auto predictor = bytelm::make_predictor(ck.model);
      const std::string seed = read_file(an_seed_file);

      if (*an_trace) {
        const std::string continuation = read_file(an_cont_file);
        const auto t = bytelm::trace(predictor, seed, continuation);
        std::cout << json{{"mean_loss_bits", t.mean_loss_bits()},
                          {"mean_rank", t.mean_rank()},
                          {"entries", trace_json(t)}}
                         .dump()
                  << "\n";
        if (!an_csv.empty()) {
          std::optional<std::ofstream> file;
          auto& os = open_csv(file, an_csv);
          os << "position,char,entropy,loss,rank\n";
          write_trace_csv(os, t);
        }
      } else if (*an_comp) {
        const auto comps = bytelm::enumerate_completions(predictor, seed, an_cutoff,
                                                         static_cast<size_t>(an_max_len));
        json arr = json::array();
        for (const auto& c : comps) arr.push_back({{"text", c.text}, {"probability", c.probability}});
        std::cout << json{{"cutoff", an_cutoff}, {"completions", arr}}.dump() << "\n";
      } else if (*an_copy) {
        const std::string continuation = read_file(an_cont_file);
        const auto res = bytelm::copy_probe(predictor, seed, an_name, an_fake, an_second, continuation);
        std::cout << json{{"fake_name_distance", res.fake_name_distance},
                          {"fake_seed_mean_rank", res.fake_seed_trace.mean_rank()},
                          {"original_seed_mean_rank", res.original_seed_trace.mean_rank()},
                          {"fake_seed_trace", trace_json(res.fake_seed_trace)},
                          {"original_seed_trace", trace_json(res.original_seed_trace)}}
                         .dump()
                  << "\n";
        if (!an_csv.empty()) {
          std::optional<std::ofstream> file;
          auto& os = open_csv(file, an_csv);
          os << "trace,position,char,entropy,loss,rank\n";
          write_trace_csv(os, res.fake_seed_trace, "fake_seed");
          write_trace_csv(os, res.original_seed_trace, "original_seed");
        }
      }
      return 0;
    }

    if (*ge) {
      auto ck = bytelm::load_checkpoint(gen_ckpt);
      const auto predictor = bytelm::make_predictor(ck.model);
      std::string seed = gen_seed_text;
      if (!gen_seed_file.empty()) seed = read_file(gen_seed_file);
      if (seed.empty()) throw std::runtime_error("generate needs --seed-text or --seed-file");
      bytelm::Rng rng(gen_rng_seed);
      const std::string sample =
          bytelm::generate(predictor, seed, static_cast<size_t>(gen_n), gen_temp, rng);
      if (gen_out.empty()) {
        std::cout << sample << "\n";
      } else {
        std::ofstream out(gen_out, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write output file: " + gen_out);
        out.write(sample.data(), static_cast<std::streamsize>(sample.size()));
      }
      return 0;
    }

    if (*insp) {
      auto ck = bytelm::load_checkpoint(insp_ckpt);
      const auto counts = bytelm::param_counts(ck.model.cfg);
      std::cout << json{{"step", ck.step},
                        {"train_params", counts.train()},
                        {"inference_params", counts.inference()},
                        {"positional_params", counts.positional},
                        {"config", bytelm::serialize_model_config(ck.model.cfg)}}
                       .dump()
                << "\n";
      std::cerr << "step                 " << ck.step << "\n"
                << "train parameters     " << counts.train() / 1e6 << "M\n"
                << "inference parameters " << counts.inference() / 1e6 << "M\n"
                << "positional           " << counts.positional / 1e6 << "M\n"
                << bytelm::serialize_model_config(ck.model.cfg);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
