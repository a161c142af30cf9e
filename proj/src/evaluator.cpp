#include "bytelm/evaluator.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace bytelm {

EvalResult evaluate_split(const WindowPredictor& predictor, std::span<const uint8_t> split_bytes,
                          const EvalConfig& cfg) {
  const Index c = cfg.context;
  const Index s = cfg.stride;
  if (c < 1) throw std::invalid_argument("evaluate: context must be >= 1");
  if (s < 1 || s > c) throw std::invalid_argument("evaluate: stride must be in [1, context]");
  const auto n_total = static_cast<int64_t>(split_bytes.size());
  if (n_total <= c)
    throw std::runtime_error("evaluate: split has " + std::to_string(n_total) +
                             " bytes, need more than context " + std::to_string(c));
  const int64_t n = (cfg.max_chars > 0) ? std::min<int64_t>(n_total, c + cfg.max_chars) : n_total;

  // one group per window: start offset a and its target count r; targets of a
  // group are the last r positions' next bytes, i.e. [t0, t0 + r)
  struct Group {
    size_t start;
    Index r;
    int64_t t0;
  };
  std::vector<Group> groups;
  for (int64_t t0 = c; t0 < n;) {
    const Index r = static_cast<Index>(std::min<int64_t>(s, n - t0));
    groups.push_back({static_cast<size_t>(t0 + r - c - 1), r, t0});
    t0 += r;
  }

  double bits = 0;
  int64_t correct = 0;
  int64_t chars = 0;
  const Index max_batch = cfg.batch_windows > 0 ? cfg.batch_windows : 1;

  for (size_t g0 = 0; g0 < groups.size(); g0 += static_cast<size_t>(max_batch)) {
    const size_t g1 = std::min(groups.size(), g0 + static_cast<size_t>(max_batch));
    EvalWindows w;
    w.data = split_bytes;
    w.window_len = c;
    w.first_pred = c - s;
    for (size_t g = g0; g < g1; ++g) w.starts.push_back(groups[g].start);

    const Eigen::MatrixXd probs = predictor(w);
    const Index rows_per_window = s;
    if (probs.rows() != static_cast<Index>(w.starts.size()) * rows_per_window)
      throw std::runtime_error("evaluate: predictor returned " + std::to_string(probs.rows()) +
                               " rows, expected " +
                               std::to_string(w.starts.size() * static_cast<size_t>(rows_per_window)));
    const Index v = probs.cols();

    for (size_t g = g0; g < g1; ++g) {
      const auto& grp = groups[g];
      const Index base = static_cast<Index>(g - g0) * rows_per_window + (s - grp.r);
      for (Index m = 0; m < grp.r; ++m) {
        const uint8_t target = split_bytes[static_cast<size_t>(grp.t0 + m)];
        if (target >= v)
          throw std::runtime_error("evaluate: target byte " + std::to_string(int(target)) +
                                   " outside predictor vocab " + std::to_string(v));
        const Index row = base + m;
        bits += -std::log2(probs(row, target));
        Index best = 0;
        for (Index cls = 1; cls < v; ++cls)
          if (probs(row, cls) > probs(row, best)) best = cls;
        correct += (best == target);
        ++chars;
      }
    }
  }

  EvalResult res;
  res.chars = chars;
  res.bpc = bits / static_cast<double>(chars);
  res.accuracy = static_cast<double>(correct) / static_cast<double>(chars);
  return res;
}

double bpb_to_ppl(double bpb, int64_t n_bytes, int64_t n_tokens) {
  if (n_bytes <= 0 || n_tokens <= 0)
    throw std::invalid_argument("bpb_to_ppl: byte and token counts must be positive");
  if (bpb < 0) throw std::invalid_argument("bpb_to_ppl: bpb must be non-negative");
  return std::pow(2.0, bpb * static_cast<double>(n_bytes) / static_cast<double>(n_tokens));
}

}  // namespace bytelm
