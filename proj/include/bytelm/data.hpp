#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bytelm/rng.hpp"
#include "bytelm/tensor.hpp"

namespace bytelm {

enum class Split { train, dev, test };
enum class CorpusFormat { text8, enwik8, raw };

const char* split_name(Split s);
Split parse_split(std::string_view s);
CorpusFormat parse_format(std::string_view s);

// Byte corpus with contiguous, ordered train/dev/test boundaries. Token ids
// are always raw byte values; the vocabulary is the full 0..255 range no
// matter which symbols the corpus uses.
struct Corpus {
  std::string name;
  std::vector<uint8_t> bytes;
  size_t train_end = 0;  // [0, train_end) is train
  size_t dev_end = 0;    // [train_end, dev_end) is dev, the rest is test

  static Corpus from_bytes(std::vector<uint8_t> bytes, std::string name,
                           std::array<double, 3> fractions = {0.9, 0.05, 0.05});

  std::span<const uint8_t> split(Split s) const;
  size_t distinct_symbols() const;

  // entropy of the byte unigram distribution over a split, in bits; the
  // order-0 compression baseline
  double order0_entropy_bits(Split s) const;
};

// The text8 cleanup pipeline: lowercase, spell out digits as words, map every
// byte outside a-z to a space, collapse space runs, trim. Output alphabet is
// the 27 symbols {a..z, space}. Total and idempotent.
std::string preprocess_text8(std::string_view raw);

// text8 files are validated against the 27-symbol alphabet; enwik8/raw load
// byte-for-byte with no transformation.
Corpus load_corpus(const std::string& path, CorpusFormat format,
                   std::array<double, 3> fractions = {0.9, 0.05, 0.05});

// B windows of seq_len + n_targets token ids drawn from uniformly random
// start offsets within one split (with replacement across calls).
struct Batch {
  Index batch = 0;
  Index window_len = 0;
  std::vector<int32_t> tokens;   // batch * window_len
  std::vector<size_t> offsets;   // absolute start offset of each window
};

Batch sample_batch(const Corpus& corpus, Split split, Index batch, Index seq_len, Index n_targets,
                   Rng& rng);

}  // namespace bytelm
