#include "bytelm/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <unordered_set>

namespace bytelm {

const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "dev") return Split::dev;
  if (s == "test") return Split::test;
  throw std::invalid_argument("unknown split '" + std::string(s) + "' (train|dev|test)");
}

CorpusFormat parse_format(std::string_view s) {
  if (s == "text8") return CorpusFormat::text8;
  if (s == "enwik8") return CorpusFormat::enwik8;
  if (s == "raw") return CorpusFormat::raw;
  throw std::invalid_argument("unknown corpus format '" + std::string(s) + "' (text8|enwik8|raw)");
}

Corpus Corpus::from_bytes(std::vector<uint8_t> bytes, std::string name,
                          std::array<double, 3> fractions) {
  if (bytes.empty()) throw std::runtime_error("corpus '" + name + "' is empty");
  for (double f : fractions)
    if (f < 0) throw std::invalid_argument("split fractions must be non-negative");
  if (fractions[0] + fractions[1] + fractions[2] > 1.0 + 1e-9)
    throw std::invalid_argument("split fractions sum to more than 1");
  Corpus c;
  c.name = std::move(name);
  const auto n = static_cast<double>(bytes.size());
  c.bytes = std::move(bytes);
  c.train_end = static_cast<size_t>(std::floor(n * fractions[0]));
  c.dev_end = c.train_end + static_cast<size_t>(std::floor(n * fractions[1]));
  c.dev_end = std::min(c.dev_end, c.bytes.size());
  return c;
}

std::span<const uint8_t> Corpus::split(Split s) const {
  switch (s) {
    case Split::train: return {bytes.data(), train_end};
    case Split::dev: return {bytes.data() + train_end, dev_end - train_end};
    case Split::test: return {bytes.data() + dev_end, bytes.size() - dev_end};
  }
  return {};
}

size_t Corpus::distinct_symbols() const {
  std::array<bool, 256> seen{};
  for (uint8_t b : bytes) seen[b] = true;
  size_t n = 0;
  for (bool s : seen) n += s;
  return n;
}

double Corpus::order0_entropy_bits(Split s) const {
  auto sp = split(s);
  if (sp.empty()) throw std::runtime_error("order0_entropy_bits: empty split");
  std::array<int64_t, 256> counts{};
  for (uint8_t b : sp) counts[b]++;
  double h = 0;
  const auto total = static_cast<double>(sp.size());
  for (int64_t c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / total;
    h -= p * std::log2(p);
  }
  return h;
}

std::string preprocess_text8(std::string_view raw) {
  static const char* const digit_words[10] = {"zero", "one", "two",   "three", "four",
                                              "five", "six", "seven", "eight", "nine"};
  std::string out;
  out.reserve(raw.size() + raw.size() / 4);
  bool pending_space = false;  // collapse runs; drop leading spaces
  auto emit = [&](char ch) {
    if (ch == ' ') {
      if (!out.empty()) pending_space = true;
      return;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(ch);
  };
  for (char c : raw) {
    auto u = static_cast<unsigned char>(c);
    if (u >= 'A' && u <= 'Z') u = static_cast<unsigned char>(u - 'A' + 'a');
    if (u >= '0' && u <= '9') {
      emit(' ');
      for (const char* w = digit_words[u - '0']; *w; ++w) emit(*w);
      emit(' ');
    } else if (u >= 'a' && u <= 'z') {
      emit(static_cast<char>(u));
    } else {
      emit(' ');
    }
  }
  return out;  // pending trailing space intentionally dropped
}

Corpus load_corpus(const std::string& path, CorpusFormat format, std::array<double, 3> fractions) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open corpus file: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw std::runtime_error("read error on corpus file: " + path);
  if (format == CorpusFormat::text8) {
    for (size_t i = 0; i < bytes.size(); ++i) {
      const uint8_t b = bytes[i];
      if (b != ' ' && (b < 'a' || b > 'z'))
        throw std::runtime_error("text8 corpus contains byte " + std::to_string(int(b)) +
                                 " at offset " + std::to_string(i) +
                                 "; run prepare-data to clean raw text first");
    }
  }
  return Corpus::from_bytes(std::move(bytes), path, fractions);
}

Batch sample_batch(const Corpus& corpus, Split split, Index batch, Index seq_len, Index n_targets,
                   Rng& rng) {
  if (batch < 1 || seq_len < 1 || n_targets < 0)
    throw std::invalid_argument("sample_batch: batch/seq_len/n_targets out of range");
  const Index window = seq_len + n_targets;
  auto sp = corpus.split(split);
  if (static_cast<Index>(sp.size()) < window)
    throw std::runtime_error("sample_batch: split '" + std::string(split_name(split)) + "' has " +
                             std::to_string(sp.size()) + " bytes, need at least " +
                             std::to_string(window));
  size_t split_start = 0;
  if (split == Split::dev) split_start = corpus.train_end;
  if (split == Split::test) split_start = corpus.dev_end;

  const uint64_t n_starts = sp.size() - static_cast<size_t>(window) + 1;
  Batch b;
  b.batch = batch;
  b.window_len = window;
  b.tokens.resize(static_cast<size_t>(batch * window));
  b.offsets.resize(static_cast<size_t>(batch));
  for (Index i = 0; i < batch; ++i) {
    const auto start = static_cast<size_t>(rng.next_below(n_starts));
    b.offsets[static_cast<size_t>(i)] = split_start + start;
    for (Index j = 0; j < window; ++j)
      b.tokens[static_cast<size_t>(i * window + j)] = sp[start + static_cast<size_t>(j)];
  }
  return b;
}

}  // namespace bytelm
