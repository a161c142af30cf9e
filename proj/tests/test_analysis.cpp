#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>

#include "bytelm/analysis.hpp"
#include "bytelm/trainer.hpp"
#include "oracles.hpp"

using namespace bytelm;

namespace {

Eigen::VectorXd uniform256() { return Eigen::VectorXd::Constant(256, 1.0 / 256.0); }

CharPredictor uniform_predictor() {
  return [](std::span<const uint8_t>) { return uniform256(); };
}

// puts all mass on the byte that actually follows; needs the continuation
CharPredictor oracle_predictor(std::string seed, std::string continuation) {
  const std::string full = seed + continuation;
  return [full, seed](std::span<const uint8_t> ctx) {
    Eigen::VectorXd p = Eigen::VectorXd::Zero(256);
    p[static_cast<uint8_t>(full[ctx.size()])] = 1.0;
    return p;
  };
}

// three-symbol toy language over {a, b, ' '}, conditioned on the last byte
CharPredictor toy3_predictor() {
  return [](std::span<const uint8_t> ctx) {
    Eigen::VectorXd p = Eigen::VectorXd::Zero(256);
    const uint8_t last = ctx.empty() ? ' ' : ctx.back();
    if (last == 'a') {
      p['a'] = 0.10; p['b'] = 0.50; p[' '] = 0.40;
    } else if (last == 'b') {
      p['a'] = 0.45; p['b'] = 0.15; p[' '] = 0.40;
    } else {
      p['a'] = 0.40; p['b'] = 0.30; p[' '] = 0.30;
    }
    return p;
  };
}

}  // namespace

TEST_CASE("trace on a uniform model: entropy 8 everywhere, loss 8, uniform rank tie-break") {
  auto t = trace(uniform_predictor(), "seed text", "abc");
  CHECK(t.entries.size() == 3);
  for (const auto& e : t.entries) {
    CHECK(e.entropy_bits == doctest::Approx(8.0).epsilon(1e-12));
    CHECK(e.loss_bits == doctest::Approx(8.0).epsilon(1e-12));
    CHECK(e.rank == int(e.byte) + 1);  // all tied: rank is byte order
  }
}

TEST_CASE("trace on a one-hot oracle: loss 0, rank 1, entropy 0") {
  const std::string seed = "once upon ";
  const std::string cont = "a time";
  auto t = trace(oracle_predictor(seed, cont), seed, cont);
  for (const auto& e : t.entries) {
    CHECK(e.loss_bits == doctest::Approx(0.0));
    CHECK(e.rank == 1);
    CHECK(e.entropy_bits == doctest::Approx(0.0));
  }
  CHECK_THROWS_AS(trace(uniform_predictor(), "seed", ""), std::invalid_argument);
}

TEST_CASE("trace entropy matches the direct 64-bit sum") {
  Rng rng(3);
  Eigen::VectorXd p(256);
  double s = 0;
  for (int i = 0; i < 256; ++i) {
    p[i] = rng.uniform() + 1e-6;
    s += p[i];
  }
  p /= s;
  auto pred = [p](std::span<const uint8_t>) { return p; };
  auto t = trace(pred, "x", "yz");
  double href = 0;
  for (int i = 0; i < 256; ++i) href -= p[i] * std::log2(p[i]);
  for (const auto& e : t.entries) CHECK(e.entropy_bits == doctest::Approx(href).epsilon(1e-5));
}

TEST_CASE("rank 1 iff the target is the argmax, and rank-1 loss is minimal") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    Eigen::VectorXd p(256);
    double s = 0;
    for (int i = 0; i < 256; ++i) {
      p[i] = rng.uniform();
      s += p[i];
    }
    p /= s;
    auto pred = [p](std::span<const uint8_t>) { return p; };
    const auto target = static_cast<uint8_t>(rng.next_below(256));
    auto t = trace(pred, "s", std::string(1, static_cast<char>(target)));
    const auto& e = t.entries[0];
    int argmax = 0;
    for (int i = 1; i < 256; ++i)
      if (p[i] > p[argmax]) argmax = i;
    CHECK((e.rank == 1) == (target == argmax));
    if (e.rank == 1)
      for (int i = 0; i < 256; ++i) CHECK(e.loss_bits <= -std::log2(p[i]) + 1e-12);
  }
}

TEST_CASE("completions: deterministic 'a then space' model yields [('a', 1.0)]") {
  CharPredictor pred = [](std::span<const uint8_t> ctx) {
    Eigen::VectorXd p = Eigen::VectorXd::Zero(256);
    if (!ctx.empty() && ctx.back() == 'a') p[' '] = 1.0;
    else p['a'] = 1.0;
    return p;
  };
  auto out = enumerate_completions(pred, "seed", 0.001);
  REQUIRE(out.size() == 1);
  CHECK(out[0].text == "a");
  CHECK(out[0].probability == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("completions match exhaustive brute force on the toy language") {
  auto pred = toy3_predictor();
  const double cutoff = 0.001;
  auto ours = enumerate_completions(pred, "toy seed ", cutoff, 8);

  // brute force: every a/b string up to length 8, ended by the space
  std::map<std::string, double> expect;
  std::function<void(std::string, double)> walk = [&](std::string prefix, double prob) {
    const uint8_t last = prefix.empty() ? ' ' : static_cast<uint8_t>(prefix.back());
    Eigen::VectorXd p = pred(std::span(reinterpret_cast<const uint8_t*>(prefix.data()), prefix.size()));
    (void)last;
    const double p_end = p[' '];
    if (prob * p_end >= cutoff) expect[prefix] = prob * p_end;
    if (prefix.size() >= 8) return;
    for (char c : {'a', 'b'})
      if (prob * p[static_cast<uint8_t>(c)] > 0) walk(prefix + c, prob * p[static_cast<uint8_t>(c)]);
  };
  walk("", 1.0);

  REQUIRE(ours.size() == expect.size());
  double total = 0;
  for (const auto& c : ours) {
    REQUIRE(expect.count(c.text) == 1);
    CHECK(c.probability == doctest::Approx(expect[c.text]).epsilon(1e-9));
    CHECK(c.probability >= cutoff);
    total += c.probability;
  }
  CHECK(total <= 1.0 + 1e-12);
  // sorted descending
  for (size_t i = 1; i < ours.size(); ++i) CHECK(ours[i - 1].probability >= ours[i].probability);
}

TEST_CASE("a 0.5 cutoff on a near-uniform model leaves at most one completion") {
  Rng rng(7);
  CharPredictor pred = [&](std::span<const uint8_t>) {
    Eigen::VectorXd p = Eigen::VectorXd::Zero(256);
    for (char c = 'a'; c <= 'z'; ++c) p[static_cast<uint8_t>(c)] = 1.0 / 27.0;
    p[' '] = 1.0 / 27.0;
    return p;
  };
  auto out = enumerate_completions(pred, "s", 0.5);
  CHECK(out.size() <= 1);
  CHECK_THROWS_AS(enumerate_completions(pred, "s", 0.0), std::invalid_argument);
  CHECK_THROWS_AS(enumerate_completions(pred, "s", 1.0), std::invalid_argument);
}

TEST_CASE("copy_probe geometry on a synthetic seed") {
  // name at offsets 10 and 40 of the seed; again at offset 5 of the continuation
  const std::string name = "elizabeth";
  const std::string fake = "zjakdmu bmijwxn";
  std::string seed = "0123456789" + name + std::string(21, 'x') + name + std::string(10, 'y');
  std::string continuation = "abcde" + name + std::string(8, 'z');

  auto res = copy_probe(uniform_predictor(), seed, name, fake, "she", continuation);
  // first occurrence became the fake name, second became 'she'
  CHECK(res.modified_seed.find(fake) == 10);
  CHECK(res.modified_seed.find(name) == std::string::npos);
  CHECK(res.modified_seed.find("she") != std::string::npos);
  CHECK(res.modified_continuation.find(fake) == 5);
  // start-to-start distance across the seam
  const auto expected = static_cast<ptrdiff_t>(res.modified_seed.size() - 10 + 5);
  CHECK(res.fake_name_distance == expected);
  CHECK(res.fake_seed_trace.entries.size() == res.modified_continuation.size());
  CHECK(res.original_seed_trace.entries.size() == res.modified_continuation.size());

  // substituting the name with itself is the identity probe
  auto same = copy_probe(uniform_predictor(), seed, name, name, name, continuation);
  CHECK(same.modified_seed == seed);
  CHECK(same.modified_continuation == continuation);
  for (size_t i = 0; i < same.fake_seed_trace.entries.size(); ++i) {
    CHECK(same.fake_seed_trace.entries[i].loss_bits ==
          same.original_seed_trace.entries[i].loss_bits);
    CHECK(same.fake_seed_trace.entries[i].rank == same.original_seed_trace.entries[i].rank);
  }

  CHECK_THROWS_AS(copy_probe(uniform_predictor(), "only one elizabeth here", name, fake, "she", "c"),
                  std::invalid_argument);
}

TEST_CASE("generate: greedy is the temperature-0 mode and sampling is reproducible") {
  auto pred = toy3_predictor();
  Rng r1(11), r2(11), r3(12);
  const auto a = generate(pred, "q", 50, 1.0, r1);
  const auto b = generate(pred, "q", 50, 1.0, r2);
  const auto c = generate(pred, "q", 50, 1.0, r3);
  CHECK(a == b);
  CHECK(a != c);

  // greedy: after space -> 'a' (0.40), after 'a' -> 'b' (0.50), after 'b' -> 'a' (0.45)
  Rng rg(1);
  const auto g = generate(pred, " ", 5, 0.0, rg);
  CHECK(g == "ababa");

  // a one-hot model ignores the rng entirely
  CharPredictor onehot = [](std::span<const uint8_t>) {
    Eigen::VectorXd p = Eigen::VectorXd::Zero(256);
    p['x'] = 1.0;
    return p;
  };
  Rng r4(1), r5(999);
  CHECK(generate(onehot, "s", 8, 1.0, r4) == generate(onehot, "s", 8, 1.0, r5));

  // tiny temperature converges to greedy
  Rng r6(5);
  CHECK(generate(pred, " ", 5, 1e-6, r6) == "ababa");
  CHECK_THROWS_AS(sample_index(uniform256(), -1.0, r6), std::invalid_argument);
}

namespace {

// every word appears twice in a row, so within-context copying is the
// optimal prediction strategy
std::vector<uint8_t> doubled_word_corpus(size_t n_bytes, uint64_t seed) {
  Rng rng(seed);
  std::vector<uint8_t> out;
  out.reserve(n_bytes);
  while (out.size() < n_bytes) {
    size_t len = 3 + rng.next_below(6);
    std::string w(len, 'a');
    for (auto& c : w) c = static_cast<char>('a' + rng.next_below(26));
    for (int rep = 0; rep < 2; ++rep) {
      out.insert(out.end(), w.begin(), w.end());
      out.push_back(' ');
    }
  }
  out.resize(n_bytes);
  return out;
}

}  // namespace

// The slowest test here (a few minutes of training): once a model has learned
// to exploit in-context repetition, a fake name it has never seen ranks
// better when the seed already contains it than when it does not.
TEST_CASE("copy probe direction on a model trained to copy") {
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.d_model = 64;
  cfg.n_heads = 2;
  cfg.d_ff = 256;
  cfg.seq_len = 64;
  cfg.vocab = 256;
  cfg.n_targets = 2;
  cfg.dropout_attn = cfg.dropout_relu = 0;

  auto corpus = Corpus::from_bytes(doubled_word_corpus(2000000, 3), "doubled");
  auto model = init_model<float>(cfg, derive_seeds(11).init);
  TrainConfig tcfg;
  tcfg.total_steps = 6000;
  tcfg.eval_interval = 0;
  tcfg.seed = 11;
  train(model, corpus, tcfg, LossConfig{}, "");

  auto pred = make_predictor(model);
  Rng rng(55);
  int better = 0;
  const int trials = 20;
  for (int trial = 0; trial < trials; ++trial) {
    std::string fake(6, 'a');
    for (auto& c : fake) c = static_cast<char>('a' + rng.next_below(26));
    const std::string name = "qeqvex";
    const std::string seed = "tima tima bol bol " + name + " rada rada " + name + " nu nu";
    const std::string continuation = " " + name + " hom hom";
    auto res = copy_probe(pred, seed, name, fake, "she", continuation);
    better += res.fake_seed_trace.mean_rank() < res.original_seed_trace.mean_rank();
  }
  CHECK(better >= 15);  // piloted at 20/20; slack for seed drift
}

TEST_CASE("sampled frequencies match the distribution by chi-square") {
  Eigen::VectorXd p = Eigen::VectorXd::Zero(256);
  // 16 active classes with uneven mass
  double total = 0;
  for (int i = 0; i < 16; ++i) {
    p[i] = 1.0 + i;
    total += p[i];
  }
  p /= total;
  Rng rng(17);
  std::vector<int64_t> counts(16, 0);
  const int64_t n = 100000;
  for (int64_t i = 0; i < n; ++i) {
    const int idx = sample_index(p, 1.0, rng);
    REQUIRE(idx < 16);
    counts[static_cast<size_t>(idx)]++;
  }
  std::vector<double> expected(16);
  for (int i = 0; i < 16; ++i) expected[static_cast<size_t>(i)] = p[i] * static_cast<double>(n);
  const double stat = oracles::chi_square_stat(counts, expected);
  CHECK(stat < oracles::chi2_critical_999(15));
}
