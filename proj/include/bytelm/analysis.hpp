#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bytelm/model.hpp"
#include "bytelm/rng.hpp"

namespace bytelm {

// Next-byte distribution given a context; the adapter owns any context-length
// clamping. Probabilities are double so toy models and oracles compare
// exactly.
using CharPredictor = std::function<Eigen::VectorXd(std::span<const uint8_t> context)>;

// Per-position prediction metrics over a forced continuation.
struct CharTrace {
  struct Entry {
    size_t position;      // index within the continuation
    uint8_t byte;         // the true byte at this position
    double entropy_bits;  // -sum p log2 p over all classes
    double loss_bits;     // -log2 P(target)
    int rank;             // 1-based rank of the target, ties to the lowest byte
  };
  std::vector<Entry> entries;

  double mean_rank() const;
  double mean_loss_bits() const;
};

CharTrace trace(const CharPredictor& predictor, std::string_view seed, std::string_view continuation);

// A word continuation: the characters up to (but excluding) the terminator,
// with the cumulative probability including the terminator itself.
struct Completion {
  std::string text;
  double probability;
};

// Best-first enumeration of continuations. A branch ends successfully on a
// terminator byte (space, or anything outside a-z) and is pruned once its
// cumulative probability drops below cutoff, so the returned set is exactly
// every completion whose probability (terminator included) clears the cutoff,
// up to max_len characters. Sorted by probability descending.
std::vector<Completion> enumerate_completions(const CharPredictor& predictor, std::string_view seed,
                                              double cutoff = 0.001, size_t max_len = 64);

struct CopyProbeResult {
  CharTrace fake_seed_trace;      // substituted seed, substituted continuation
  CharTrace original_seed_trace;  // original seed, substituted continuation
  std::string modified_seed;
  std::string modified_continuation;
  // start-to-start distance between the fake name in the seed and in the
  // continuation, measured over modified_seed + modified_continuation;
  // -1 when the fake name is absent from either part
  ptrdiff_t fake_name_distance = -1;
};

// The long-range copy probe: the first occurrence of `original_name` in the
// seed becomes `fake_name`, the second becomes `second_replacement`, and the
// first occurrence in the continuation becomes `fake_name`. Both traces score
// the same substituted continuation, seeded with and without the fake name.
CopyProbeResult copy_probe(const CharPredictor& predictor, std::string_view seed,
                           std::string_view original_name, std::string_view fake_name,
                           std::string_view second_replacement, std::string_view continuation);

// Sample an index from probs at the given temperature (logit division, done
// as p^(1/T)); temperature 0 selects the argmax, ties to the lowest byte.
int sample_index(const Eigen::VectorXd& probs, double temperature, Rng& rng);

std::string generate(const CharPredictor& predictor, std::string_view seed, size_t n_chars,
                     double temperature, Rng& rng);

// Adapter over a trained model; clamps context to the trailing seq_len bytes.
// The returned closure borrows the model.
template <typename S>
CharPredictor make_predictor(const TransformerLM<S>& model) {
  return [&model](std::span<const uint8_t> context) -> Eigen::VectorXd {
    const size_t limit = static_cast<size_t>(model.cfg.seq_len);
    if (context.size() > limit) context = context.subspan(context.size() - limit);
    std::vector<int32_t> ids(context.begin(), context.end());
    const auto probs = predict_next(model, ids);
    Eigen::VectorXd out(probs.size());
    for (Index i = 0; i < probs.size(); ++i) out[i] = static_cast<double>(probs[i]);
    return out;
  };
}

}  // namespace bytelm
