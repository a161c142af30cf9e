#include "bytelm/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <stdexcept>

namespace bytelm {

namespace {

int rank_of(const Eigen::VectorXd& probs, int target) {
  const double pt = probs[target];
  int rank = 1;
  for (int v = 0; v < probs.size(); ++v) {
    if (probs[v] > pt || (probs[v] == pt && v < target)) ++rank;
  }
  return rank;
}

double entropy_bits(const Eigen::VectorXd& probs) {
  double h = 0;
  for (int v = 0; v < probs.size(); ++v) {
    const double p = probs[v];
    if (p > 0) h -= p * std::log2(p);
  }
  return h;
}

bool is_terminator(uint8_t b) { return b < 'a' || b > 'z'; }

std::string replace_first(std::string_view text, std::string_view what, std::string_view with,
                          size_t from = 0) {
  const size_t at = text.find(what, from);
  if (at == std::string_view::npos) return std::string(text);
  std::string out(text.substr(0, at));
  out += with;
  out += text.substr(at + what.size());
  return out;
}

}  // namespace

double CharTrace::mean_rank() const {
  double s = 0;
  for (const auto& e : entries) s += e.rank;
  return entries.empty() ? 0 : s / static_cast<double>(entries.size());
}

double CharTrace::mean_loss_bits() const {
  double s = 0;
  for (const auto& e : entries) s += e.loss_bits;
  return entries.empty() ? 0 : s / static_cast<double>(entries.size());
}

CharTrace trace(const CharPredictor& predictor, std::string_view seed, std::string_view continuation) {
  if (continuation.empty()) throw std::invalid_argument("trace: continuation must be non-empty");
  std::vector<uint8_t> context(seed.begin(), seed.end());
  CharTrace out;
  out.entries.reserve(continuation.size());
  for (size_t i = 0; i < continuation.size(); ++i) {
    const auto target = static_cast<uint8_t>(continuation[i]);
    const Eigen::VectorXd probs = predictor(context);
    CharTrace::Entry e;
    e.position = i;
    e.byte = target;
    e.entropy_bits = entropy_bits(probs);
    const double pt = probs[target];
    e.loss_bits = -std::log2(pt);
    e.rank = rank_of(probs, target);
    out.entries.push_back(e);
    context.push_back(target);
  }
  return out;
}

std::vector<Completion> enumerate_completions(const CharPredictor& predictor, std::string_view seed,
                                              double cutoff, size_t max_len) {
  if (!(cutoff > 0.0) || cutoff >= 1.0)
    throw std::invalid_argument("enumerate_completions: cutoff must be in (0,1)");

  struct Partial {
    double prob;
    std::string text;
    bool operator<(const Partial& o) const {
      // max-heap on probability; ties resolved lexicographically for
      // deterministic expansion order
      if (prob != o.prob) return prob < o.prob;
      return text > o.text;
    }
  };

  std::priority_queue<Partial> frontier;
  frontier.push({1.0, ""});
  std::vector<Completion> out;
  std::vector<uint8_t> context(seed.begin(), seed.end());

  while (!frontier.empty()) {
    const Partial cur = frontier.top();
    frontier.pop();

    context.resize(seed.size());
    context.insert(context.end(), cur.text.begin(), cur.text.end());
    const Eigen::VectorXd probs = predictor(context);

    double p_end = 0;  // total mass on terminator bytes
    for (int v = 0; v < probs.size(); ++v)
      if (is_terminator(static_cast<uint8_t>(v))) p_end += probs[v];
    if (cur.prob * p_end >= cutoff) out.push_back({cur.text, cur.prob * p_end});

    if (cur.text.size() >= max_len) continue;
    for (int v = 'a'; v <= 'z' && v < probs.size(); ++v) {
      const double p = cur.prob * probs[v];
      if (p >= cutoff) frontier.push({p, cur.text + static_cast<char>(v)});
    }
  }

  std::sort(out.begin(), out.end(), [](const Completion& a, const Completion& b) {
    if (a.probability != b.probability) return a.probability > b.probability;
    return a.text < b.text;
  });
  return out;
}

CopyProbeResult copy_probe(const CharPredictor& predictor, std::string_view seed,
                           std::string_view original_name, std::string_view fake_name,
                           std::string_view second_replacement, std::string_view continuation) {
  if (original_name.empty()) throw std::invalid_argument("copy_probe: original name is empty");
  const size_t first = seed.find(original_name);
  const size_t second =
      first == std::string_view::npos ? std::string_view::npos : seed.find(original_name, first + 1);
  if (first == std::string_view::npos || second == std::string_view::npos)
    throw std::invalid_argument("copy_probe: '" + std::string(original_name) +
                                "' must occur at least twice in the seed");

  CopyProbeResult res;
  res.modified_seed = replace_first(seed, original_name, fake_name);
  // second occurrence, located after the (possibly longer) fake name
  res.modified_seed = replace_first(res.modified_seed, original_name, second_replacement,
                                    first + fake_name.size());
  res.modified_continuation = replace_first(continuation, original_name, fake_name);

  res.fake_seed_trace = trace(predictor, res.modified_seed, res.modified_continuation);
  res.original_seed_trace = trace(predictor, seed, res.modified_continuation);

  const size_t in_seed = res.modified_seed.find(fake_name);
  const size_t in_cont = res.modified_continuation.find(fake_name);
  if (in_seed != std::string::npos && in_cont != std::string::npos)
    res.fake_name_distance = static_cast<ptrdiff_t>(res.modified_seed.size() - in_seed + in_cont);
  return res;
}

int sample_index(const Eigen::VectorXd& probs, double temperature, Rng& rng) {
  if (temperature < 0) throw std::invalid_argument("sample_index: temperature must be >= 0");
  const auto v = static_cast<int>(probs.size());
  if (temperature == 0) {
    int best = 0;
    for (int i = 1; i < v; ++i)
      if (probs[i] > probs[best]) best = i;
    return best;
  }
  // p^(1/T) via logs, stabilized by the max
  Eigen::VectorXd logp(v);
  double m = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < v; ++i) {
    logp[i] = probs[i] > 0 ? std::log(probs[i]) / temperature : -std::numeric_limits<double>::infinity();
    m = std::max(m, logp[i]);
  }
  double total = 0;
  Eigen::VectorXd w(v);
  for (int i = 0; i < v; ++i) {
    w[i] = std::isfinite(logp[i]) ? std::exp(logp[i] - m) : 0.0;
    total += w[i];
  }
  const double r = rng.uniform() * total;
  double cum = 0;
  for (int i = 0; i < v; ++i) {
    cum += w[i];
    if (r < cum) return i;
  }
  return v - 1;  // guard against accumulated rounding
}

std::string generate(const CharPredictor& predictor, std::string_view seed, size_t n_chars,
                     double temperature, Rng& rng) {
  std::vector<uint8_t> context(seed.begin(), seed.end());
  std::string out;
  out.reserve(n_chars);
  for (size_t i = 0; i < n_chars; ++i) {
    const Eigen::VectorXd probs = predictor(context);
    const int idx = sample_index(probs, temperature, rng);
    out.push_back(static_cast<char>(idx));
    context.push_back(static_cast<uint8_t>(idx));
  }
  return out;
}

}  // namespace bytelm
