#include "bytelm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "bytelm/config.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace bytelm {

namespace {

constexpr char kMagic[8] = {'B', 'Y', 'T', 'E', 'L', 'M', 'C', 'K'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

void write_rng(std::ostream& os, const Rng& rng) {
  for (uint64_t w : rng.state()) write_pod(os, w);
}

Rng read_rng(std::istream& is) {
  std::array<uint64_t, 4> st{};
  for (auto& w : st) w = read_pod<uint64_t>(is);
  Rng r;
  r.set_state(st);
  return r;
}

}  // namespace

void save_checkpoint(const std::string& path, TransformerLM<float>& model, int64_t step,
                     const TrainState* state) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write checkpoint: " + path);

  os.write(kMagic, sizeof(kMagic));
  write_pod(os, kVersion);

  const std::string cfg_text = serialize_model_config(model.cfg);
  write_pod(os, static_cast<uint32_t>(cfg_text.size()));
  os.write(cfg_text.data(), static_cast<std::streamsize>(cfg_text.size()));

  write_pod(os, step);
  write_pod(os, static_cast<uint8_t>(state != nullptr));
  if (state != nullptr) {
    write_rng(os, state->data_rng);
    write_rng(os, state->dropout_rng);
    write_pod(os, state->best_bpc);
    write_pod(os, state->best_step);
  }

  const int64_t total = model.parameter_count();
  write_pod(os, total);
  model.visit_parameters([&](const std::string&, Tensor<float>& t) {
    os.write(reinterpret_cast<const char*>(t.values().data()),
             static_cast<std::streamsize>(t.size() * sizeof(float)));
  });

  const bool has_velocity = state != nullptr && !state->velocity.empty();
  write_pod(os, static_cast<uint8_t>(has_velocity));
  if (has_velocity) {
    for (const auto& v : state->velocity)
      os.write(reinterpret_cast<const char*>(v.data()),
               static_cast<std::streamsize>(v.size() * sizeof(float)));
  }
  if (!os) throw std::runtime_error("write error on checkpoint: " + path);
}

CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);

  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("not a bytelm checkpoint: " + path);
  const auto version = read_pod<uint32_t>(is);
  if (version != kVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));

  const auto cfg_len = read_pod<uint32_t>(is);
  std::string cfg_text(cfg_len, '\0');
  is.read(cfg_text.data(), cfg_len);
  if (!is) throw std::runtime_error("checkpoint: truncated config header");
  const ModelConfig cfg = parse_model_config(cfg_text);

  CheckpointData data;
  data.step = read_pod<int64_t>(is);
  data.has_train_state = read_pod<uint8_t>(is) != 0;
  if (data.has_train_state) {
    data.state.data_rng = read_rng(is);
    data.state.dropout_rng = read_rng(is);
    data.state.best_bpc = read_pod<double>(is);
    data.state.best_step = read_pod<int64_t>(is);
    data.state.step = data.step;
  }

  // parameter layout comes from the config; file contents overwrite the init
  data.model = init_model<float>(cfg, 0);
  const auto total = read_pod<int64_t>(is);
  if (total != data.model.parameter_count())
    throw std::runtime_error("checkpoint: parameter count " + std::to_string(total) +
                             " does not match config (" +
                             std::to_string(data.model.parameter_count()) + ")");
  data.model.visit_parameters([&](const std::string& name, Tensor<float>& t) {
    is.read(reinterpret_cast<char*>(t.values_mut().data()),
            static_cast<std::streamsize>(t.size() * sizeof(float)));
    if (!is) throw std::runtime_error("checkpoint: truncated while reading " + name);
  });

  const bool has_velocity = read_pod<uint8_t>(is) != 0;
  if (has_velocity) {
    data.model.visit_parameters([&](const std::string& name, Tensor<float>& t) {
      ArrayX<float> v(t.size());
      is.read(reinterpret_cast<char*>(v.data()),
              static_cast<std::streamsize>(t.size() * sizeof(float)));
      if (!is) throw std::runtime_error("checkpoint: truncated velocity for " + name);
      data.state.velocity.push_back(std::move(v));
    });
  }
  return data;
}

}  // namespace bytelm
