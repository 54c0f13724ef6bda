#ifndef CRLAB_EVALSTATS_HPP_
#define CRLAB_EVALSTATS_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <cstdio>
#include <string>
#include <string_view>
#include <vector>

#include "crlab/corpus.hpp"
#include "crlab/error.hpp"
#include "crlab/model.hpp"
#include "crlab/objectives.hpp"
#include "crlab/tokenizer.hpp"

namespace crlab {

// ---------------------------------------------------------------------------
// Minimal pairs

enum class LabelVariant { none, mot, child };

inline std::string_view to_string(LabelVariant v) {
  switch (v) {
    case LabelVariant::none: return "none";
    case LabelVariant::mot: return "mot";
    case LabelVariant::child: return "child";
  }
  return "none";
}

inline LabelVariant parse_label_variant(std::string_view s) {
  if (s == "none") return LabelVariant::none;
  if (s == "mot" || s == "MOT") return LabelVariant::mot;
  if (s == "child" || s == "Child") return LabelVariant::child;
  throw ValidationError("unknown label variant '" + std::string(s) + "'");
}

inline std::string_view label_prefix(LabelVariant v) {
  switch (v) {
    case LabelVariant::mot: return "**MOT**: ";
    case LabelVariant::child: return "**Child**: ";
    default: return "";
  }
}

// "\n\n **MOT**: s \n\n" with the literal backslash-n token.
inline std::string apply_label_variant(std::string_view sentence, LabelVariant v) {
  if (v == LabelVariant::none) return std::string(sentence);
  std::string out(kNewlineToken);
  out += ' ';
  out += label_prefix(v);
  out += sentence;
  out += ' ';
  out += kNewlineToken;
  return out;
}

struct MinimalPair {
  std::string task;
  std::string good;
  std::string bad;
  bool operator==(const MinimalPair&) const = default;
};

inline void validate_pair(const MinimalPair& p) {
  if (p.task.empty()) throw ValidationError("minimal pair has an empty task name");
  if (p.good.empty() || p.bad.empty())
    throw ValidationError("minimal pair sentences must be non-empty");
  if (p.good == p.bad)
    throw ValidationError("minimal pair has identical sentences: '" + p.good + "'");
}

// task \t good \t bad, one pair per line. Blank lines and '#' comments are
// ignored.
inline std::vector<MinimalPair> load_pairs(std::string_view file) {
  std::vector<MinimalPair> pairs;
  const auto lines = text::split_lines(file);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto line = text::trim(lines[i]);
    if (line.empty() || line[0] == '#') continue;
    const auto f = text::split_on(line, "\t");
    if (f.size() != 3) throw ParseError("expected task<TAB>good<TAB>bad", i + 1);
    MinimalPair p{std::string(text::trim(f[0])), std::string(text::trim(f[1])),
                  std::string(text::trim(f[2]))};
    try {
      validate_pair(p);
    } catch (const ValidationError& e) {
      throw ParseError(e.what(), i + 1);
    }
    pairs.push_back(std::move(p));
  }
  return pairs;
}

inline std::string serialize_pairs(const std::vector<MinimalPair>& pairs) {
  std::string out;
  for (const auto& p : pairs) out += p.task + '\t' + p.good + '\t' + p.bad + '\n';
  return out;
}

// Returns the sentence score, or nullopt when the sentence cannot be scored
// (too long for the model).
using SentenceScorer = std::function<std::optional<double>(std::string_view)>;

template <typename T>
SentenceScorer model_scorer(const Transformer<T>& model, const Tokenizer& tok) {
  return [&model, &tok](std::string_view s) -> std::optional<double> {
    const auto ids = tok.encode(s);
    if (ids.size() > model.config().context_length || ids.size() < 2) return std::nullopt;
    return sequence_logprob(model, std::span<const TokenId>(ids));
  };
}

enum class PairOutcome : std::int8_t { incorrect = 0, correct = 1, skipped = -1 };

struct TaskAccuracy {
  std::string task;
  std::size_t correct = 0;
  std::size_t total = 0;  // scored pairs
  double accuracy = 0.0;
  bool operator==(const TaskAccuracy&) const = default;
};

struct MinimalPairResult {
  std::vector<TaskAccuracy> tasks;  // first-appearance order
  double macro_average = 0.0;
  std::size_t skipped = 0;
  std::size_t ties = 0;
  std::vector<PairOutcome> outcomes;  // one per input pair
  bool operator==(const MinimalPairResult&) const = default;
};

// Correct iff score(good) > score(bad); ties are incorrect.
inline MinimalPairResult minimal_pair_accuracy(const SentenceScorer& score,
                                               const std::vector<MinimalPair>& pairs,
                                               LabelVariant variant = LabelVariant::none) {
  MinimalPairResult r;
  std::map<std::string, std::size_t> index;
  for (const auto& p : pairs) {
    validate_pair(p);
    auto [it, inserted] = index.emplace(p.task, r.tasks.size());
    if (inserted) r.tasks.push_back({p.task, 0, 0, 0.0});
    auto& t = r.tasks[it->second];
    const auto g = score(apply_label_variant(p.good, variant));
    const auto b = score(apply_label_variant(p.bad, variant));
    if (!g || !b) {
      ++r.skipped;
      r.outcomes.push_back(PairOutcome::skipped);
      continue;
    }
    ++t.total;
    if (*g == *b) ++r.ties;
    if (*g > *b) {
      ++t.correct;
      r.outcomes.push_back(PairOutcome::correct);
    } else {
      r.outcomes.push_back(PairOutcome::incorrect);
    }
  }
  std::size_t scored_tasks = 0;
  double sum = 0.0;
  for (auto& t : r.tasks) {
    if (t.total == 0) continue;
    t.accuracy = static_cast<double>(t.correct) / static_cast<double>(t.total);
    sum += t.accuracy;
    ++scored_tasks;
  }
  r.macro_average = scored_tasks ? sum / static_cast<double>(scored_tasks) : 0.0;
  return r;
}

template <typename T>
MinimalPairResult minimal_pair_accuracy(const Transformer<T>& model, const Tokenizer& tok,
                                        const std::vector<MinimalPair>& pairs,
                                        LabelVariant variant = LabelVariant::none) {
  if (model.config().objective != Objective::causal)
    throw ValidationError("minimal-pair scoring requires a causal model");
  return minimal_pair_accuracy(model_scorer(model, tok), pairs, variant);
}

// ---------------------------------------------------------------------------
// Similarity statistics

inline double cosine(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw ValidationError("cosine needs equal dimensions");
  double uv = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    uv += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  if (uu == 0.0 || vv == 0.0) throw ValidationError("cosine of a zero vector");
  return uv / (std::sqrt(uu) * std::sqrt(vv));
}

// 1-based ranks; tied values share the average of their positions.
inline std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  const auto n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

inline double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ValidationError("spearman needs equal lengths");
  if (x.size() < 2) throw ValidationError("spearman needs at least 2 points");
  auto constant = [](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [&](double a) { return a == v[0]; });
  };
  if (constant(x) || constant(y))
    throw ValidationError("spearman is undefined for a constant input");
  const auto rx = average_ranks(x), ry = average_ranks(y);
  return std::clamp(pearson(rx, ry), -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// Word similarity

struct WordPair {
  std::string w1;
  std::string w2;
  double score = 0.0;
  bool operator==(const WordPair&) const = default;
};

struct WordSimBenchmark {
  std::string name;
  std::vector<WordPair> pairs;
};

inline void validate_benchmark(const WordSimBenchmark& b) {
  if (b.pairs.size() < 2)
    throw ValidationError("benchmark '" + b.name + "' needs at least 2 pairs");
  if (std::all_of(b.pairs.begin(), b.pairs.end(),
                  [&](const WordPair& p) { return p.score == b.pairs[0].score; }))
    throw ValidationError("benchmark '" + b.name + "' has all-equal human scores");
}

// First non-blank line is the benchmark name; then "word1 word2 score" per
// line (tabs or spaces).
inline WordSimBenchmark load_wordsim(std::string_view file) {
  WordSimBenchmark b;
  const auto lines = text::split_lines(file);
  bool have_name = false;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto line = text::trim(lines[i]);
    if (line.empty() || line[0] == '#') continue;
    if (!have_name) {
      b.name = std::string(line);
      have_name = true;
      continue;
    }
    std::vector<std::string_view> f;
    for (auto piece : text::split_words(line)) f.push_back(piece);
    if (f.size() != 3) throw ParseError("expected word1 word2 score", i + 1);
    double score = 0.0;
    try {
      score = text::parse_number(f[2]);
    } catch (const ValidationError&) {
      throw ParseError("score is not a number: '" + std::string(f[2]) + "'", i + 1);
    }
    b.pairs.push_back({std::string(f[0]), std::string(f[1]), score});
  }
  if (!have_name) throw ParseError("missing benchmark name header", 1);
  validate_benchmark(b);
  return b;
}

// Embedding of `word` at `layer`; nullopt when the word cannot be embedded.
using EmbeddingFn =
    std::function<std::optional<std::vector<double>>(std::string_view, std::size_t)>;

template <typename T>
EmbeddingFn model_embedder(const Transformer<T>& model, const Tokenizer& tok,
                           std::string prefix = {}) {
  return [&model, &tok, prefix](std::string_view word,
                                std::size_t layer) -> std::optional<std::vector<double>> {
    if (tok.encode(word).empty()) return std::nullopt;
    if (tok.encode(prefix).size() + tok.encode(word).size() > model.config().context_length)
      return std::nullopt;
    return word_embedding(model, tok, word, layer, prefix);
  };
}

struct BenchmarkCoverage {
  std::string name;
  std::size_t scored = 0;
  std::size_t skipped = 0;
  bool operator==(const BenchmarkCoverage&) const = default;
};

struct WordSimResult {
  std::vector<std::string> benchmarks;
  std::vector<std::vector<double>> rho;  // [layer][benchmark]
  std::vector<double> layer_mean;        // unweighted mean over benchmarks
  std::size_t best_layer = 0;
  std::vector<BenchmarkCoverage> coverage;

  double best_mean() const { return layer_mean.at(best_layer); }
  bool operator==(const WordSimResult&) const = default;
};

// Argmax of the per-layer mean; ties go to the lowest layer.
inline std::size_t select_best_layer(std::span<const double> layer_mean) {
  if (layer_mean.empty()) throw ValidationError("no layers to select from");
  std::size_t best = 0;
  for (std::size_t l = 1; l < layer_mean.size(); ++l)
    if (layer_mean[l] > layer_mean[best]) best = l;
  return best;
}

// Model similarity is the cosine of the two word embeddings. A model whose
// similarities are all equal carries no ranking and gets rho = 0.
inline WordSimResult word_similarity_eval(const EmbeddingFn& embed, std::size_t n_layers,
                                          const std::vector<WordSimBenchmark>& benchmarks) {
  if (benchmarks.empty()) throw ValidationError("no word-similarity benchmarks given");
  WordSimResult r;
  r.rho.assign(n_layers + 1, std::vector<double>(benchmarks.size(), 0.0));
  for (std::size_t bi = 0; bi < benchmarks.size(); ++bi) {
    const auto& b = benchmarks[bi];
    validate_benchmark(b);
    r.benchmarks.push_back(b.name);
    BenchmarkCoverage cov{b.name, 0, 0};
    std::vector<std::vector<double>> sims(n_layers + 1);
    std::vector<double> human;
    for (const auto& p : b.pairs) {
      std::vector<double> per_layer;
      bool ok = true;
      for (std::size_t l = 0; l <= n_layers && ok; ++l) {
        const auto e1 = embed(p.w1, l);
        const auto e2 = embed(p.w2, l);
        if (!e1 || !e2) {
          ok = false;
          break;
        }
        per_layer.push_back(cosine(*e1, *e2));
      }
      if (!ok) {
        ++cov.skipped;
        continue;
      }
      ++cov.scored;
      human.push_back(p.score);
      for (std::size_t l = 0; l <= n_layers; ++l) sims[l].push_back(per_layer[l]);
    }
    if (cov.scored < 2)
      throw ValidationError("benchmark '" + b.name + "' has fewer than 2 scorable pairs");
    const bool human_constant = std::all_of(
        human.begin(), human.end(), [&](double h) { return h == human[0]; });
    for (std::size_t l = 0; l <= n_layers; ++l) {
      const auto& s = sims[l];
      const bool flat = std::all_of(s.begin(), s.end(), [&](double v) { return v == s[0]; });
      r.rho[l][bi] = (flat || human_constant) ? 0.0 : spearman(human, s);
    }
    r.coverage.push_back(cov);
  }
  for (const auto& row : r.rho)
    r.layer_mean.push_back(std::accumulate(row.begin(), row.end(), 0.0) /
                           static_cast<double>(row.size()));
  r.best_layer = select_best_layer(r.layer_mean);
  return r;
}

template <typename T>
WordSimResult word_similarity_eval(const Transformer<T>& model, const Tokenizer& tok,
                                   const std::vector<WordSimBenchmark>& benchmarks,
                                   LabelVariant variant = LabelVariant::none) {
  std::string prefix;
  if (variant != LabelVariant::none) {
    prefix = std::string(label_prefix(variant));
  }
  return word_similarity_eval(model_embedder(model, tok, prefix), model.config().n_layers,
                              benchmarks);
}

// ---------------------------------------------------------------------------
// Paired t-test

namespace detail {

// Continued fraction for the incomplete beta function (modified Lentz).
inline double beta_cf(double a, double b, double x) {
  constexpr int kMaxIter = 10000;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) return h;
  }
  throw RuntimeError("incomplete beta continued fraction did not converge");
}

}  // namespace detail

// Regularized incomplete beta I_x(a, b).
inline double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw ValidationError("incomplete beta needs a, b > 0");
  if (!(x >= 0.0 && x <= 1.0)) throw ValidationError("incomplete beta needs x in [0, 1]");
  if (x == 0.0 || x == 1.0) return x;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                           a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::beta_cf(a, b, x) / a;
  return 1.0 - front * detail::beta_cf(b, a, 1.0 - x) / b;
}

// Two-tailed p for Student's t with df degrees of freedom.
inline double student_t_two_tailed_p(double t, double df) {
  if (std::isinf(t)) return 0.0;
  const double x = df / (df + t * t);
  return std::clamp(incomplete_beta(0.5 * df, 0.5, x), 0.0, 1.0);
}

struct TTestResult {
  double t = 0.0;
  std::size_t df = 0;
  double p = 1.0;
  bool significant = false;
  bool degenerate = false;  // zero-variance nonzero differences
  double mean_difference = 0.0;
};

inline TTestResult paired_ttest(std::span<const double> a, std::span<const double> b,
                                double alpha = 0.05) {
  if (a.size() != b.size()) throw ValidationError("paired t-test needs equal lengths");
  if (a.size() < 2) throw ValidationError("paired t-test needs at least 2 pairs");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("alpha must lie in (0, 1)");
  const std::size_t n = a.size();
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
  TTestResult r;
  r.df = n - 1;
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(n);
  r.mean_difference = mean;
  double ss = 0.0;
  for (double v : d) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (std::all_of(d.begin(), d.end(), [](double v) { return v == 0.0; })) {
    r.t = 0.0;
    r.p = 1.0;
  } else if (sd == 0.0) {
    r.degenerate = true;
    r.t = mean > 0 ? std::numeric_limits<double>::infinity()
                   : -std::numeric_limits<double>::infinity();
    r.p = 0.0;
  } else {
    r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
    r.p = student_t_two_tailed_p(r.t, static_cast<double>(r.df));
  }
  r.significant = r.p < alpha;
  return r;
}

// ---------------------------------------------------------------------------
// Reports

struct EvalReport {
  std::vector<std::pair<std::string, std::string>> meta;  // seed, schedule, ...
  std::optional<MinimalPairResult> minimal_pairs;
  std::optional<WordSimResult> word_similarity;

  std::optional<std::string> meta_value(std::string_view key) const {
    for (const auto& [k, v] : meta)
      if (k == key) return v;
    return std::nullopt;
  }
  bool operator==(const EvalReport&) const = default;
};

// Named scalar metrics in a fixed order: mp.<task>, mp.macro, ws.<bench>
// (rho at the best layer), ws.best_layer_mean.
inline std::vector<std::pair<std::string, double>> report_metrics(const EvalReport& r) {
  std::vector<std::pair<std::string, double>> out;
  if (r.minimal_pairs) {
    for (const auto& t : r.minimal_pairs->tasks) out.emplace_back("mp." + t.task, t.accuracy);
    out.emplace_back("mp.macro", r.minimal_pairs->macro_average);
  }
  if (r.word_similarity) {
    const auto& ws = *r.word_similarity;
    for (std::size_t b = 0; b < ws.benchmarks.size(); ++b)
      out.emplace_back("ws." + ws.benchmarks[b], ws.rho[ws.best_layer][b]);
    out.emplace_back("ws.best_layer_mean", ws.best_mean());
  }
  return out;
}

inline constexpr std::string_view kEvalReportHeader = "crlab-eval-report 1";

// Line-oriented, tab-separated:
//   meta <key> <value>
//   mp_task <task> <correct> <total> <accuracy>
//   mp_summary <macro> <skipped> <ties>
//   mp_outcomes <one char per pair: 1 correct, 0 incorrect, - skipped>
//   ws_rho <benchmark> <layer> <rho>
//   ws_coverage <benchmark> <scored> <skipped>
//   ws_best <layer> <mean>
inline std::string serialize_eval_report(const EvalReport& r) {
  std::string out(kEvalReportHeader);
  out += '\n';
  const auto num = [](double v) { return text::format_number(v); };
  for (const auto& [k, v] : r.meta) out += "meta\t" + k + '\t' + v + '\n';
  if (r.minimal_pairs) {
    const auto& mp = *r.minimal_pairs;
    for (const auto& t : mp.tasks)
      out += "mp_task\t" + t.task + '\t' + std::to_string(t.correct) + '\t' +
             std::to_string(t.total) + '\t' + num(t.accuracy) + '\n';
    out += "mp_summary\t" + num(mp.macro_average) + '\t' + std::to_string(mp.skipped) +
           '\t' + std::to_string(mp.ties) + '\n';
    std::string o;
    for (auto v : mp.outcomes)
      o += v == PairOutcome::correct ? '1' : v == PairOutcome::incorrect ? '0' : '-';
    out += "mp_outcomes\t" + o + '\n';
  }
  if (r.word_similarity) {
    const auto& ws = *r.word_similarity;
    for (std::size_t l = 0; l < ws.rho.size(); ++l)
      for (std::size_t b = 0; b < ws.benchmarks.size(); ++b)
        out += "ws_rho\t" + ws.benchmarks[b] + '\t' + std::to_string(l) + '\t' +
               num(ws.rho[l][b]) + '\n';
    for (const auto& c : ws.coverage)
      out += "ws_coverage\t" + c.name + '\t' + std::to_string(c.scored) + '\t' +
             std::to_string(c.skipped) + '\n';
    out += "ws_best\t" + std::to_string(ws.best_layer) + '\t' + num(ws.best_mean()) + '\n';
  }
  return out;
}

inline EvalReport parse_eval_report(std::string_view file) {
  const auto lines = text::split_lines(file);
  if (lines.empty() || lines[0] != kEvalReportHeader)
    throw ParseError("expected '" + std::string(kEvalReportHeader) + "' header", 1);
  EvalReport r;
  std::map<std::string, std::size_t> bench_index;
  auto count = [](std::string_view s, std::size_t line) {
    try {
      return static_cast<std::size_t>(std::stoull(std::string(s)));
    } catch (const std::exception&) {
      throw ParseError("expected a count, got '" + std::string(s) + "'", line);
    }
  };
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::size_t ln = i + 1;
    if (lines[i].empty()) continue;
    const auto f = text::split_on(lines[i], "\t");
    const auto kind = f[0];
    auto need = [&](std::size_t n) {
      if (f.size() != n)
        throw ParseError("'" + std::string(kind) + "' rows have " + std::to_string(n) +
                         " fields", ln);
    };
    if (kind == "meta") {
      need(3);
      r.meta.emplace_back(std::string(f[1]), std::string(f[2]));
    } else if (kind == "mp_task") {
      need(5);
      if (!r.minimal_pairs) r.minimal_pairs.emplace();
      r.minimal_pairs->tasks.push_back({std::string(f[1]), count(f[2], ln), count(f[3], ln),
                                        text::parse_number(f[4])});
    } else if (kind == "mp_summary") {
      need(4);
      if (!r.minimal_pairs) r.minimal_pairs.emplace();
      r.minimal_pairs->macro_average = text::parse_number(f[1]);
      r.minimal_pairs->skipped = count(f[2], ln);
      r.minimal_pairs->ties = count(f[3], ln);
    } else if (kind == "mp_outcomes") {
      need(2);
      if (!r.minimal_pairs) r.minimal_pairs.emplace();
      for (char c : f[1]) {
        if (c == '1') r.minimal_pairs->outcomes.push_back(PairOutcome::correct);
        else if (c == '0') r.minimal_pairs->outcomes.push_back(PairOutcome::incorrect);
        else if (c == '-') r.minimal_pairs->outcomes.push_back(PairOutcome::skipped);
        else throw ParseError("bad outcome character", ln);
      }
    } else if (kind == "ws_rho") {
      need(4);
      if (!r.word_similarity) r.word_similarity.emplace();
      auto& ws = *r.word_similarity;
      const std::string name(f[1]);
      auto [it, inserted] = bench_index.emplace(name, ws.benchmarks.size());
      if (inserted) ws.benchmarks.push_back(name);
      const auto layer = count(f[2], ln);
      if (ws.rho.size() <= layer) ws.rho.resize(layer + 1);
      auto& row = ws.rho[layer];
      if (row.size() <= it->second) row.resize(it->second + 1, 0.0);
      row[it->second] = text::parse_number(f[3]);
    } else if (kind == "ws_coverage") {
      need(4);
      if (!r.word_similarity) r.word_similarity.emplace();
      r.word_similarity->coverage.push_back(
          {std::string(f[1]), count(f[2], ln), count(f[3], ln)});
    } else if (kind == "ws_best") {
      need(3);
      if (!r.word_similarity) r.word_similarity.emplace();
      r.word_similarity->best_layer = count(f[1], ln);
    } else {
      throw ParseError("unknown row kind '" + std::string(kind) + "'", ln);
    }
  }
  if (r.word_similarity) {
    auto& ws = *r.word_similarity;
    for (auto& row : ws.rho) {
      if (row.size() != ws.benchmarks.size())
        throw ValidationError("word-similarity table is not rectangular");
      ws.layer_mean.push_back(std::accumulate(row.begin(), row.end(), 0.0) /
                              static_cast<double>(row.size()));
    }
    if (ws.best_layer >= ws.rho.size())
      throw ValidationError("best layer is outside the rho table");
  }
  return r;
}

// Schema checks: accuracies in [0, 1], rho in [-1, 1], best layer maximizes
// the mean.
inline void validate_eval_report(const EvalReport& r) {
  if (r.minimal_pairs) {
    for (const auto& t : r.minimal_pairs->tasks)
      if (!(t.accuracy >= 0.0 && t.accuracy <= 1.0) || t.correct > t.total)
        throw ValidationError("task '" + t.task + "' has an invalid accuracy");
    const auto& mp = *r.minimal_pairs;
    if (!(mp.macro_average >= 0.0 && mp.macro_average <= 1.0))
      throw ValidationError("macro average outside [0, 1]");
  }
  if (r.word_similarity) {
    const auto& ws = *r.word_similarity;
    for (const auto& row : ws.rho)
      for (double v : row)
        if (!(v >= -1.0 && v <= 1.0)) throw ValidationError("rho outside [-1, 1]");
    if (ws.best_layer != select_best_layer(ws.layer_mean))
      throw ValidationError("best layer does not maximize the mean rho");
  }
}

struct MetricSummary {
  std::string name;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single run
  std::size_t runs = 0;
};

inline std::vector<MetricSummary> aggregate_runs(const std::vector<EvalReport>& reports) {
  if (reports.empty()) throw ValidationError("nothing to aggregate");
  const auto first = report_metrics(reports[0]);
  std::vector<MetricSummary> out;
  for (const auto& [name, value] : first) out.push_back({name, 0.0, 0.0, reports.size()});
  std::vector<std::vector<double>> values(first.size());
  for (const auto& r : reports) {
    const auto m = report_metrics(r);
    if (m.size() != first.size())
      throw ValidationError("reports have different metric sets");
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (m[i].first != first[i].first)
        throw ValidationError("reports have different metric sets ('" + m[i].first +
                              "' vs '" + first[i].first + "')");
      values[i].push_back(m[i].second);
    }
  }
  const auto n = static_cast<double>(reports.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double mean = std::accumulate(values[i].begin(), values[i].end(), 0.0) / n;
    double ss = 0.0;
    for (double v : values[i]) ss += (v - mean) * (v - mean);
    out[i].mean = mean;
    out[i].std = reports.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  }
  return out;
}

// Per-example minimal-pair outcomes (1/0) concatenated across runs in the
// given order. Pairs skipped in either condition are dropped from both.
inline std::pair<std::vector<double>, std::vector<double>> paired_pair_outcomes(
    const std::vector<EvalReport>& a, const std::vector<EvalReport>& b) {
  if (a.size() != b.size()) throw ValidationError("comparison needs equal run counts");
  std::pair<std::vector<double>, std::vector<double>> out;
  for (std::size_t r = 0; r < a.size(); ++r) {
    if (!a[r].minimal_pairs || !b[r].minimal_pairs)
      throw ValidationError("comparison needs minimal-pair results in every report");
    const auto& oa = a[r].minimal_pairs->outcomes;
    const auto& ob = b[r].minimal_pairs->outcomes;
    if (oa.size() != ob.size())
      throw ValidationError("reports scored different pair suites");
    for (std::size_t i = 0; i < oa.size(); ++i) {
      if (oa[i] == PairOutcome::skipped || ob[i] == PairOutcome::skipped) continue;
      out.first.push_back(oa[i] == PairOutcome::correct ? 1.0 : 0.0);
      out.second.push_back(ob[i] == PairOutcome::correct ? 1.0 : 0.0);
    }
  }
  return out;
}

// Best-layer rho per benchmark, seed-major then benchmark-minor.
inline std::vector<double> wordsim_vector(const std::vector<EvalReport>& runs) {
  std::vector<double> out;
  std::optional<std::vector<std::string>> names;
  for (const auto& r : runs) {
    if (!r.word_similarity)
      throw ValidationError("comparison needs word-similarity results in every report");
    const auto& ws = *r.word_similarity;
    if (names && *names != ws.benchmarks)
      throw ValidationError("reports used different benchmarks");
    names = ws.benchmarks;
    for (std::size_t b = 0; b < ws.benchmarks.size(); ++b)
      out.push_back(ws.rho[ws.best_layer][b]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Condition comparisons (ordering experiments across seeds)

struct ConditionRuns {
  std::string group;      // e.g. "global" or "local"
  std::string condition;  // e.g. "age", "reverse", "random"
  std::vector<EvalReport> runs;  // one per seed, same seed order in every condition
};

struct ConditionRow {
  std::string group;
  std::string condition;
  std::size_t runs = 0;
  std::optional<MetricSummary> mp;  // mp.macro
  std::optional<MetricSummary> ws;  // ws.best_layer_mean
};

struct ComparisonTest {
  std::string group;
  std::string a;
  std::string b;
  std::string metric;  // "minimal_pairs" (per example) or "word_similarity" (per benchmark)
  std::size_t n = 0;
  TTestResult result;
};

struct ComparisonReport {
  double alpha = 0.05;
  std::vector<ConditionRow> rows;
  std::vector<ComparisonTest> tests;
};

namespace detail {

inline std::optional<MetricSummary> find_metric(const std::vector<MetricSummary>& m,
                                                std::string_view name) {
  for (const auto& s : m)
    if (s.name == name) return s;
  return std::nullopt;
}

}  // namespace detail

// Mean and spread per condition, then every pair of conditions within a
// group is compared with paired t-tests on per-example minimal-pair outcomes
// and on per-benchmark best-layer rho.
inline ComparisonReport compare_conditions(const std::vector<ConditionRuns>& conditions,
                                           double alpha = 0.05) {
  if (conditions.empty()) throw ValidationError("nothing to compare");
  ComparisonReport rep;
  rep.alpha = alpha;
  for (const auto& c : conditions) {
    if (c.runs.empty())
      throw ValidationError("condition '" + c.condition + "' has no runs");
    for (const auto& r : c.runs) validate_eval_report(r);
    const auto summary = aggregate_runs(c.runs);
    rep.rows.push_back({c.group, c.condition, c.runs.size(),
                        detail::find_metric(summary, "mp.macro"),
                        detail::find_metric(summary, "ws.best_layer_mean")});
  }
  for (std::size_t i = 0; i < conditions.size(); ++i) {
    for (std::size_t j = i + 1; j < conditions.size(); ++j) {
      const auto& a = conditions[i];
      const auto& b = conditions[j];
      if (a.group != b.group) continue;
      if (a.runs.size() != b.runs.size())
        throw ValidationError("conditions '" + a.condition + "' and '" + b.condition +
                              "' have different run counts");
      if (a.runs[0].minimal_pairs) {
        const auto [x, y] = paired_pair_outcomes(a.runs, b.runs);
        if (x.size() >= 2)
          rep.tests.push_back({a.group, a.condition, b.condition, "minimal_pairs", x.size(),
                               paired_ttest(x, y, alpha)});
      }
      if (a.runs[0].word_similarity) {
        const auto x = wordsim_vector(a.runs);
        const auto y = wordsim_vector(b.runs);
        if (x.size() >= 2)
          rep.tests.push_back({a.group, a.condition, b.condition, "word_similarity",
                               x.size(), paired_ttest(x, y, alpha)});
      }
    }
  }
  return rep;
}

inline constexpr std::string_view kComparisonHeader = "crlab-comparison 1";

// Tab-separated:
//   alpha <alpha>
//   row <group> <condition> <runs> <mp_mean> <mp_std> <ws_mean> <ws_std>
//   ttest <group> <a> <b> <metric> <n> <t> <df> <p> <significant> <degenerate>
// A metric that was not evaluated is written as "-".
inline std::string serialize_comparison(const ComparisonReport& r) {
  const auto num = [](double v) { return text::format_number(v); };
  const auto opt = [&](const std::optional<MetricSummary>& m, bool spread) {
    return m ? num(spread ? m->std : m->mean) : std::string("-");
  };
  std::string out(kComparisonHeader);
  out += "\nalpha\t" + num(r.alpha) + '\n';
  for (const auto& row : r.rows)
    out += "row\t" + row.group + '\t' + row.condition + '\t' + std::to_string(row.runs) +
           '\t' + opt(row.mp, false) + '\t' + opt(row.mp, true) + '\t' +
           opt(row.ws, false) + '\t' + opt(row.ws, true) + '\n';
  for (const auto& t : r.tests)
    out += "ttest\t" + t.group + '\t' + t.a + '\t' + t.b + '\t' + t.metric + '\t' +
           std::to_string(t.n) + '\t' + num(t.result.t) + '\t' +
           std::to_string(t.result.df) + '\t' + num(t.result.p) + '\t' +
           (t.result.significant ? "1" : "0") + '\t' + (t.result.degenerate ? "1" : "0") +
           '\n';
  return out;
}

inline ComparisonReport parse_comparison(std::string_view file) {
  const auto lines = text::split_lines(file);
  if (lines.empty() || lines[0] != kComparisonHeader)
    throw ParseError("expected '" + std::string(kComparisonHeader) + "' header", 1);
  ComparisonReport r;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::size_t ln = i + 1;
    if (lines[i].empty()) continue;
    const auto f = text::split_on(lines[i], "\t");
    auto need = [&](std::size_t n) {
      if (f.size() != n)
        throw ParseError("'" + std::string(f[0]) + "' rows have " + std::to_string(n) +
                         " fields", ln);
    };
    auto count = [&](std::string_view s) {
      const double v = text::parse_number(s);
      if (!(v >= 0) || v != std::floor(v)) throw ParseError("expected a count", ln);
      return static_cast<std::size_t>(v);
    };
    auto flag = [&](std::string_view s) {
      if (s != "0" && s != "1") throw ParseError("expected 0 or 1", ln);
      return s == "1";
    };
    if (f[0] == "alpha") {
      need(2);
      r.alpha = text::parse_number(f[1]);
    } else if (f[0] == "row") {
      need(8);
      ConditionRow row{std::string(f[1]), std::string(f[2]), count(f[3]), {}, {}};
      auto metric = [&](std::string_view name, std::string_view mean, std::string_view sd)
          -> std::optional<MetricSummary> {
        if (mean == "-" && sd == "-") return std::nullopt;
        return MetricSummary{std::string(name), text::parse_number(mean),
                             text::parse_number(sd), row.runs};
      };
      row.mp = metric("mp.macro", f[4], f[5]);
      row.ws = metric("ws.best_layer_mean", f[6], f[7]);
      r.rows.push_back(std::move(row));
    } else if (f[0] == "ttest") {
      need(11);
      ComparisonTest t{std::string(f[1]), std::string(f[2]), std::string(f[3]),
                       std::string(f[4]), count(f[5]), {}};
      t.result.t = text::parse_number(f[6]);
      t.result.df = count(f[7]);
      t.result.p = text::parse_number(f[8]);
      t.result.significant = flag(f[9]);
      t.result.degenerate = flag(f[10]);
      r.tests.push_back(std::move(t));
    } else {
      throw ParseError("unknown row kind '" + std::string(f[0]) + "'", ln);
    }
  }
  return r;
}

inline void validate_comparison(const ComparisonReport& r) {
  if (!(r.alpha > 0.0 && r.alpha < 1.0)) throw ValidationError("alpha outside (0, 1)");
  if (r.rows.empty()) throw ValidationError("comparison has no condition rows");
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& row : r.rows) {
    if (!seen.emplace(row.group, row.condition).second)
      throw ValidationError("duplicate condition '" + row.group + "/" + row.condition + "'");
    if (row.runs == 0) throw ValidationError("condition with zero runs");
    if (row.mp && !(row.mp->mean >= 0.0 && row.mp->mean <= 1.0))
      throw ValidationError("minimal-pair mean outside [0, 1]");
    if (row.ws && !(row.ws->mean >= -1.0 && row.ws->mean <= 1.0))
      throw ValidationError("word-similarity mean outside [-1, 1]");
    for (const auto* m : {&row.mp, &row.ws})
      if (*m && !((*m)->std >= 0.0)) throw ValidationError("negative standard deviation");
  }
  for (const auto& t : r.tests) {
    if (!seen.count({t.group, t.a}) || !seen.count({t.group, t.b}))
      throw ValidationError("t-test refers to an unknown condition");
    if (t.metric != "minimal_pairs" && t.metric != "word_similarity")
      throw ValidationError("unknown t-test metric '" + t.metric + "'");
    if (!(t.result.p >= 0.0 && t.result.p <= 1.0)) throw ValidationError("p outside [0, 1]");
    if (t.n < 2 || t.result.df + 1 != t.n) throw ValidationError("t-test df does not match n");
    if (t.result.significant != (t.result.p < r.alpha))
      throw ValidationError("significance flag disagrees with p and alpha");
  }
}

// Human-readable per-group tables followed by the t-tests.
inline std::string format_comparison_table(const ComparisonReport& r) {
  std::ostringstream os;
  char buf[160];
  std::string group;
  const auto cell = [&](const std::optional<MetricSummary>& m, bool percent) {
    if (!m) return std::string("-");
    char b[64];
    if (percent)
      std::snprintf(b, sizeof(b), "%.2f%% +/- %.2f", 100.0 * m->mean, 100.0 * m->std);
    else
      std::snprintf(b, sizeof(b), "%.3f +/- %.3f", m->mean, m->std);
    return std::string(b);
  };
  for (const auto& row : r.rows) {
    if (row.group != group) {
      group = row.group;
      os << "\n[" << group << "]\n";
      std::snprintf(buf, sizeof(buf), "%-14s %-24s %-20s %s\n", "Order", "Minimal pairs",
                    "WS", "Runs");
      os << buf;
    }
    std::snprintf(buf, sizeof(buf), "%-14s %-24s %-20s %zu\n", row.condition.c_str(),
                  cell(row.mp, true).c_str(), cell(row.ws, false).c_str(), row.runs);
    os << buf;
  }
  if (!r.tests.empty()) {
    os << "\nPaired two-tailed t-tests (alpha " << text::format_number(r.alpha) << ")\n";
    for (const auto& t : r.tests) {
      std::snprintf(buf, sizeof(buf), "%-8s %-10s vs %-10s %-16s n=%-6zu t=%-10.4f p=%-10.4g %s\n",
                    t.group.c_str(), t.a.c_str(), t.b.c_str(), t.metric.c_str(), t.n,
                    t.result.t, t.result.p, t.result.significant ? "significant" : "");
      os << buf;
    }
  }
  return os.str();
}

}  // namespace crlab

#endif  // CRLAB_EVALSTATS_HPP_
