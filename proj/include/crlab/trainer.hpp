#ifndef CRLAB_TRAINER_HPP_
#define CRLAB_TRAINER_HPP_

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "crlab/checkpoint.hpp"
#include "crlab/corpus.hpp"
#include "crlab/error.hpp"
#include "crlab/model.hpp"
#include "crlab/objectives.hpp"
#include "crlab/optim.hpp"
#include "crlab/rng.hpp"
#include "crlab/tokenizer.hpp"

namespace crlab {

enum class ScheduleKind { iterative, repeated_buckets };

inline std::string_view to_string(ScheduleKind s) {
  return s == ScheduleKind::iterative ? "iterative" : "repeated_buckets";
}
inline ScheduleKind parse_schedule(std::string_view s) {
  if (s == "iterative") return ScheduleKind::iterative;
  if (s == "repeated_buckets" || s == "buckets") return ScheduleKind::repeated_buckets;
  throw ValidationError("unknown schedule '" + std::string(s) + "'");
}

inline double default_base_lr(Objective o) {
  return o == Objective::causal ? 1e-4 : 5e-5;
}

struct TrainConfig {
  double base_lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t batch_size = 8;
  std::vector<std::uint64_t> seeds{42, 0, 123};
  ScheduleKind schedule = ScheduleKind::iterative;
  std::size_t epochs = 20;      // iterative
  std::size_t repeats = 1;      // repeated_buckets: passes per bucket (n)
  std::size_t eval_every = 0;   // extra validation every k steps; 0 = off
  double mask_rate = 0.15;      // masked objective only

  void validate() const {
    if (!(base_lr > 0.0) || !std::isfinite(base_lr))
      throw ValidationError("base_lr must be a positive number");
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (schedule == ScheduleKind::iterative && epochs < 1)
      throw ValidationError("epochs must be >= 1");
    if (schedule == ScheduleKind::repeated_buckets && repeats < 1)
      throw ValidationError("repeats (n) must be >= 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw ValidationError("Adam betas must lie in [0, 1)");
    if (!(eps > 0.0)) throw ValidationError("eps must be positive");
    if (!(mask_rate > 0.0 && mask_rate <= 1.0))
      throw ValidationError("mask_rate must lie in (0, 1]");
    if (seeds.empty()) throw ValidationError("at least one training seed is required");
  }
};

// ---------------------------------------------------------------------------
// Data preparation

struct ChunkSet {
  std::vector<TokenChunk> chunks;
  std::size_t tokens = 0;

  std::size_t size() const { return chunks.size(); }
  bool empty() const { return chunks.empty(); }
};

// Causal: the whole corpus as one stream cut into context-sized chunks (a
// trailing single token has nothing to predict and is dropped). Masked: one
// padded or truncated chunk per conversation; raw records longer than the
// context are cut into several chunks instead of being truncated.
inline ChunkSet prepare_chunks(const Tokenizer& tok, const Corpus& corpus,
                               const ModelConfig& model) {
  if (tok.vocab_size() > model.vocab_size)
    throw ValidationError("tokenizer vocabulary (" + std::to_string(tok.vocab_size()) +
                          ") exceeds the model's vocab_size (" +
                          std::to_string(model.vocab_size) + ")");
  ChunkSet out;
  const std::size_t ctx = model.context_length;
  if (model.objective == Objective::causal) {
    const auto stream = tok.encode(corpus_text(corpus));
    for (auto& c : chunk_causal(stream, ctx)) {
      if (c.ids.size() < 2) continue;
      out.tokens += c.ids.size();
      out.chunks.push_back(std::move(c));
    }
    return out;
  }
  for (const auto& conv : corpus.conversations) {
    const auto ids = tok.encode(training_text(conv));
    if (ids.empty()) continue;
    if (conv.source == Source::raw && ids.size() > ctx) {
      for (const auto& piece : chunk_causal(ids, ctx)) {
        out.tokens += piece.ids.size();
        out.chunks.push_back(chunk_per_conversation(piece.ids, ctx, tok.pad_id()));
      }
    } else {
      out.tokens += std::min(ids.size(), ctx);
      out.chunks.push_back(chunk_per_conversation(ids, ctx, tok.pad_id()));
    }
  }
  return out;
}

namespace detail {

inline constexpr std::uint64_t kShuffleKey = 0x5348554646ULL;   // "SHUFF"
inline constexpr std::uint64_t kMaskKey = 0x4D41534BULL;        // "MASK"
inline constexpr std::uint64_t kValMaskSeed = 0x56414C4D41534BULL;

struct Example {
  std::vector<TokenId> ids;
  std::vector<std::int64_t> targets;
  std::span<const std::uint8_t> key_valid;
};

// Inputs and targets for one chunk; nullopt when nothing can be predicted.
inline std::optional<Example> make_example(const TokenChunk& chunk, Objective objective,
                                           double mask_rate, std::uint64_t mask_seed,
                                           std::size_t vocab_size) {
  Example ex;
  if (objective == Objective::causal) {
    ex.ids = chunk.ids;
    ex.targets = causal_targets(chunk.ids, chunk.loss_mask);
    ex.key_valid = chunk.loss_mask;
  } else {
    auto masked = mask_for_mlm(chunk.ids, mask_rate, mask_seed, kMaskId, vocab_size);
    ex.targets = mlm_targets(chunk.ids, masked.labels);
    ex.ids = std::move(masked.ids);
    ex.key_valid = chunk.loss_mask;
  }
  if (std::all_of(ex.targets.begin(), ex.targets.end(),
                  [](std::int64_t t) { return t == kIgnore; }))
    return std::nullopt;
  return ex;
}

}  // namespace detail

// Token-weighted mean loss over every chunk. Masked validation uses a fixed
// masking seed so repeated calls agree.
template <typename T>
double evaluate_val_loss(const Transformer<T>& model, const ChunkSet& val,
                         double mask_rate = 0.15) {
  if (val.empty()) throw ValidationError("validation set is empty");
  const auto& cfg = model.config();
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < val.size(); ++i) {
    const auto ex = detail::make_example(
        val.chunks[i], cfg.objective, mask_rate,
        derive_seed(detail::kValMaskSeed, i), cfg.vocab_size);
    if (!ex) continue;
    const auto fwd = model.forward(ex->ids, ex->key_valid);
    const auto n = static_cast<std::size_t>(std::count_if(
        ex->targets.begin(), ex->targets.end(),
        [](std::int64_t t) { return t != kIgnore; }));
    total += cross_entropy(fwd.logits, std::span<const std::int64_t>(ex->targets)) *
             static_cast<double>(n);
    count += n;
  }
  if (count == 0) throw ValidationError("validation set has no predictable tokens");
  return total / static_cast<double>(count);
}

template <typename T>
double evaluate_val_loss(const Transformer<T>& model, const Tokenizer& tok,
                         const Corpus& val, double mask_rate = 0.15) {
  return evaluate_val_loss(model, prepare_chunks(tok, val, model.config()), mask_rate);
}

// ---------------------------------------------------------------------------
// Logs

struct StepRecord {
  std::uint64_t step = 0;  // 1-based count of updates applied
  double lr = 0.0;
  double loss = 0.0;
  bool operator==(const StepRecord&) const = default;
};

struct ValRecord {
  std::uint64_t index = 0;  // 1-based epoch / pass, or periodic eval number
  std::uint64_t step = 0;
  double loss = 0.0;
  bool operator==(const ValRecord&) const = default;
};

inline std::string bucket_label(std::size_t i) {
  if (i < 26) return std::string(1, static_cast<char>('A' + i));
  return "B" + std::to_string(i + 1);
}

struct TrainLog {
  std::vector<StepRecord> steps;
  std::vector<ValRecord> boundaries;
  std::vector<ValRecord> periodic;
  std::vector<std::size_t> visit_trace;  // bucket visited by each pass
  std::vector<double> segment_seconds;   // wall clock; kept out of the TSV

  std::string trace_string() const {
    std::string s;
    for (std::size_t i = 0; i < visit_trace.size(); ++i) {
      if (i) s += ' ';
      s += bucket_label(visit_trace[i]);
    }
    return s;
  }

  bool operator==(const TrainLog& o) const {
    return steps == o.steps && boundaries == o.boundaries &&
           periodic == o.periodic && visit_trace == o.visit_trace;
  }
};

inline constexpr std::string_view kTrainLogHeader = "kind\tindex\tstep\tvalue";

// Rows: train (loss per step), lr, val (per boundary), val_step (eval_every),
// visit (bucket index per pass).
inline std::string serialize_train_log(const TrainLog& log) {
  std::string out(kTrainLogHeader);
  out += '\n';
  auto row = [&](std::string_view kind, std::uint64_t index, std::uint64_t step,
                 const std::string& value) {
    out += kind;
    out += '\t' + std::to_string(index) + '\t' + std::to_string(step) + '\t' + value + '\n';
  };
  for (const auto& s : log.steps) {
    row("train", s.step, s.step, text::format_number(s.loss));
    row("lr", s.step, s.step, text::format_number(s.lr));
  }
  for (const auto& v : log.boundaries) row("val", v.index, v.step, text::format_number(v.loss));
  for (const auto& v : log.periodic) row("val_step", v.index, v.step, text::format_number(v.loss));
  for (std::size_t i = 0; i < log.visit_trace.size(); ++i) {
    const std::uint64_t step = i < log.boundaries.size() ? log.boundaries[i].step : 0;
    row("visit", i + 1, step, std::to_string(log.visit_trace[i]));
  }
  return out;
}

inline TrainLog parse_train_log(std::string_view file) {
  TrainLog log;
  const auto lines = text::split_lines(file);
  if (lines.empty() || lines[0] != kTrainLogHeader)
    throw ParseError("expected train log header '" + std::string(kTrainLogHeader) + "'", 1);
  std::vector<std::pair<std::uint64_t, double>> lrs;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto f = text::split_on(lines[i], "\t");
    if (f.size() != 4) throw ParseError("expected 4 tab-separated fields", i + 1);
    const auto index = static_cast<std::uint64_t>(text::parse_number(f[1]));
    const auto step = static_cast<std::uint64_t>(text::parse_number(f[2]));
    const double value = text::parse_number(f[3]);
    if (f[0] == "train") log.steps.push_back({step, 0.0, value});
    else if (f[0] == "lr") lrs.emplace_back(step, value);
    else if (f[0] == "val") log.boundaries.push_back({index, step, value});
    else if (f[0] == "val_step") log.periodic.push_back({index, step, value});
    else if (f[0] == "visit") log.visit_trace.push_back(static_cast<std::size_t>(value));
    else throw ParseError("unknown row kind '" + std::string(f[0]) + "'", i + 1);
  }
  for (const auto& [step, lr] : lrs)
    for (auto& s : log.steps)
      if (s.step == step) s.lr = lr;
  return log;
}

inline std::string serialize_timing(const TrainLog& log) {
  std::string out = "segment\tseconds\n";
  for (std::size_t i = 0; i < log.segment_seconds.size(); ++i)
    out += std::to_string(i + 1) + '\t' + text::format_number(log.segment_seconds[i]) + '\n';
  return out;
}

struct PlotSeries {
  std::string train;  // step \t train_loss
  std::string val;    // boundary \t step \t val_loss
};

inline PlotSeries plot_series(const TrainLog& log) {
  PlotSeries p;
  p.train = "step\ttrain_loss\n";
  for (const auto& s : log.steps)
    p.train += std::to_string(s.step) + '\t' + text::format_number(s.loss) + '\n';
  p.val = "boundary\tstep\tval_loss\n";
  for (const auto& v : log.boundaries)
    p.val += std::to_string(v.index) + '\t' + std::to_string(v.step) + '\t' +
             text::format_number(v.loss) + '\n';
  return p;
}

// ---------------------------------------------------------------------------
// Training loops

template <typename T>
using Validator = std::function<double(const Transformer<T>&)>;

template <typename T>
struct TrainResult {
  TrainLog log;
  Checkpoint<T> selected;  // best_val for iterative, final for buckets
  Checkpoint<T> final;
};

namespace detail {

inline std::size_t batches_in(std::size_t chunks, std::size_t batch) {
  return (chunks + batch - 1) / batch;
}

template <typename T>
class Runner {
 public:
  Runner(Transformer<T>& model, const TrainConfig& cfg, std::uint64_t seed,
         std::uint64_t total_steps, Validator<T> validator)
      : model_(model), cfg_(cfg), seed_(seed), validator_(std::move(validator)),
        opt_(model.num_params(), cfg.base_lr, total_steps),
        grad_(model.num_params()) {
    opt_.beta1 = cfg.beta1;
    opt_.beta2 = cfg.beta2;
    opt_.eps = cfg.eps;
  }

  // One shuffled pass over `data`. `pass_key` distinguishes the shuffle
  // stream of each pass.
  void pass(const ChunkSet& data, std::uint64_t pass_key) {
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Xoshiro256 rng(derive_seed(seed_, kShuffleKey, pass_key));
    fisher_yates(std::span<std::size_t>(order), rng);
    for (std::size_t b = 0; b < order.size(); b += cfg_.batch_size) {
      const std::size_t e = std::min(order.size(), b + cfg_.batch_size);
      batch(data, std::span<const std::size_t>(order).subspan(b, e - b));
    }
  }

  double validate() const { return validator_(model_); }

  AdamState<T>& optimizer() { return opt_; }
  TrainLog& log() { return log_; }

 private:
  void batch(const ChunkSet& data, std::span<const std::size_t> idx) {
    const auto& mc = model_.config();
    const std::uint64_t step = opt_.step;
    std::vector<Example> examples;
    for (std::size_t i : idx) {
      auto ex = make_example(data.chunks[i], mc.objective, cfg_.mask_rate,
                             derive_seed(seed_, kMaskKey, step, i), mc.vocab_size);
      if (ex) examples.push_back(std::move(*ex));
    }
    if (examples.empty()) return;
    std::fill(grad_.begin(), grad_.end(), T(0));
    const T scale = T(1) / static_cast<T>(examples.size());
    double loss = 0.0;
    typename Transformer<T>::Cache cache;
    RowMatrix<T> dlogits;
    for (const auto& ex : examples) {
      model_.forward(ex.ids, cache, ex.key_valid);
      loss += cross_entropy(cache.logits, std::span<const std::int64_t>(ex.targets), &dlogits);
      model_.backward(cache, dlogits, std::span<T>(grad_), scale);
    }
    loss /= static_cast<double>(examples.size());
    const double lr = adam_step(model_.params(), opt_, std::span<const T>(grad_),
                                &model_.layout());
    log_.steps.push_back({opt_.step, lr, loss});
    if (cfg_.eval_every > 0 && opt_.step % cfg_.eval_every == 0)
      log_.periodic.push_back({log_.periodic.size() + 1, opt_.step, validate()});
  }

  Transformer<T>& model_;
  const TrainConfig& cfg_;
  std::uint64_t seed_;
  Validator<T> validator_;
  AdamState<T> opt_;
  std::vector<T> grad_;
  TrainLog log_;
};

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace detail

// Standard curriculum: `cfg.epochs` reshuffled passes, validation after each,
// returning the lowest-validation-loss snapshot (earliest epoch on ties).
template <typename T>
TrainResult<T> train_iterative(Transformer<T>& model, const ChunkSet& train,
                               Validator<T> validator, const TrainConfig& cfg,
                               std::uint64_t seed) {
  cfg.validate();
  if (train.empty()) throw ValidationError("training set produced no chunks");
  const std::uint64_t total =
      cfg.epochs * detail::batches_in(train.size(), cfg.batch_size);
  detail::Runner<T> run(model, cfg, seed, total, std::move(validator));
  TrainResult<T> result;
  double best = std::numeric_limits<double>::infinity();
  bool have_best = false;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = detail::Clock::now();
    run.pass(train, epoch);
    const double val = run.validate();
    run.log().boundaries.push_back({epoch, run.optimizer().step, val});
    run.log().visit_trace.push_back(0);
    run.log().segment_seconds.push_back(detail::seconds_since(t0));
    if (!have_best || val < best) {
      best = val;
      have_best = true;
      result.selected = Checkpoint<T>::capture(model, run.optimizer(),
                                               SelectionTag::best_val, epoch, val);
    }
  }
  result.final = Checkpoint<T>::capture(model, run.optimizer(), SelectionTag::final,
                                        cfg.epochs, run.log().boundaries.back().loss);
  result.log = std::move(run.log());
  return result;
}

// Repeated buckets (A^n B^n C^n ...): n reshuffled passes over each bucket in
// order, validation after every pass, final model returned.
template <typename T>
TrainResult<T> train_repeated_buckets(Transformer<T>& model,
                                      const std::vector<ChunkSet>& buckets,
                                      Validator<T> validator, const TrainConfig& cfg,
                                      std::uint64_t seed) {
  cfg.validate();
  if (buckets.empty()) throw ValidationError("no buckets to train on");
  std::uint64_t total = 0;
  for (std::size_t b = 0; b < buckets.size(); ++b) {
    if (buckets[b].empty())
      throw ValidationError("bucket " + bucket_label(b) + " produced no chunks");
    total += cfg.repeats * detail::batches_in(buckets[b].size(), cfg.batch_size);
  }
  detail::Runner<T> run(model, cfg, seed, total, std::move(validator));
  std::uint64_t pass_no = 0;
  for (std::size_t b = 0; b < buckets.size(); ++b) {
    for (std::size_t r = 0; r < cfg.repeats; ++r) {
      const auto t0 = detail::Clock::now();
      ++pass_no;
      run.pass(buckets[b], pass_no);
      const double val = run.validate();
      run.log().boundaries.push_back({pass_no, run.optimizer().step, val});
      run.log().visit_trace.push_back(b);
      run.log().segment_seconds.push_back(detail::seconds_since(t0));
    }
  }
  TrainResult<T> result;
  result.final = Checkpoint<T>::capture(model, run.optimizer(), SelectionTag::final,
                                        pass_no, run.log().boundaries.back().loss);
  result.selected = result.final;
  result.log = std::move(run.log());
  return result;
}

// Corpus-level conveniences using the standard validation loss.
template <typename T>
Validator<T> val_loss_validator(ChunkSet val, double mask_rate) {
  if (val.empty()) throw ValidationError("validation set is empty");
  auto shared = std::make_shared<const ChunkSet>(std::move(val));
  return [shared, mask_rate](const Transformer<T>& m) {
    return evaluate_val_loss(m, *shared, mask_rate);
  };
}

template <typename T>
TrainResult<T> train_iterative(Transformer<T>& model, const Tokenizer& tok,
                               const Corpus& train, const Corpus& val,
                               const TrainConfig& cfg, std::uint64_t seed) {
  return train_iterative(
      model, prepare_chunks(tok, train, model.config()),
      val_loss_validator<T>(prepare_chunks(tok, val, model.config()), cfg.mask_rate),
      cfg, seed);
}

template <typename T>
TrainResult<T> train_repeated_buckets(Transformer<T>& model, const Tokenizer& tok,
                                      const std::vector<Corpus>& buckets,
                                      const Corpus& val, const TrainConfig& cfg,
                                      std::uint64_t seed) {
  std::vector<ChunkSet> sets;
  for (const auto& b : buckets) sets.push_back(prepare_chunks(tok, b, model.config()));
  return train_repeated_buckets(
      model, sets,
      val_loss_validator<T>(prepare_chunks(tok, val, model.config()), cfg.mask_rate),
      cfg, seed);
}

// ---------------------------------------------------------------------------
// Sweeps

struct SweepCell {
  std::string name;
  std::shared_ptr<const Tokenizer> tokenizer;
  Corpus train;
  Corpus val;
  std::vector<Corpus> buckets;  // repeated_buckets schedule only
  TrainConfig train_config;
  ModelConfig model_config;
  std::uint64_t seed = 42;
};

struct SweepRow {
  std::string name;
  double base_lr = 0.0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double final_val = 0.0;
  double best_val = 0.0;
  std::uint64_t best_boundary = 0;
  std::uint64_t steps = 0;
  bool operator==(const SweepRow&) const = default;
};

namespace detail {

template <typename T>
SweepRow run_cell_typed(const SweepCell& cell) {
  SweepRow row;
  row.name = cell.name;
  row.base_lr = cell.train_config.base_lr;
  row.seed = cell.seed;
  auto mc = cell.model_config;
  mc.init_seed = cell.seed;
  Transformer<T> model(mc);
  const auto& tok = *cell.tokenizer;
  TrainResult<T> r = cell.train_config.schedule == ScheduleKind::iterative
      ? train_iterative(model, tok, cell.train, cell.val, cell.train_config, cell.seed)
      : train_repeated_buckets(model, tok, cell.buckets, cell.val, cell.train_config,
                               cell.seed);
  row.ok = true;
  row.final_val = r.log.boundaries.back().loss;
  const auto best = std::min_element(
      r.log.boundaries.begin(), r.log.boundaries.end(),
      [](const ValRecord& a, const ValRecord& b) { return a.loss < b.loss; });
  row.best_val = best->loss;
  row.best_boundary = best->index;
  row.steps = r.log.steps.empty() ? 0 : r.log.steps.back().step;
  return row;
}

inline SweepRow failed_row(const SweepCell& cell, std::string error) {
  SweepRow r;
  r.name = cell.name;
  r.base_lr = cell.train_config.base_lr;
  r.seed = cell.seed;
  r.error = std::move(error);
  return r;
}

inline SweepRow run_cell(const SweepCell& cell) {
  try {
    if (!cell.tokenizer) throw ValidationError("sweep cell has no tokenizer");
    return cell.model_config.dtype == DType::f32 ? run_cell_typed<float>(cell)
                                                 : run_cell_typed<double>(cell);
  } catch (const std::exception& e) {
    return failed_row(cell, e.what());
  }
}

inline std::string encode_row(const SweepRow& r) {
  std::string err = r.error;
  std::replace(err.begin(), err.end(), '\t', ' ');
  std::replace(err.begin(), err.end(), '\n', ' ');
  return r.name + '\t' + text::format_number(r.base_lr) + '\t' + std::to_string(r.seed) +
         '\t' + (r.ok ? "ok" : "failed") + '\t' + text::format_number(r.final_val) + '\t' +
         text::format_number(r.best_val) + '\t' + std::to_string(r.best_boundary) + '\t' +
         std::to_string(r.steps) + '\t' + err;
}

inline SweepRow decode_row(std::string_view line) {
  const auto f = text::split_on(line, "\t");
  if (f.size() != 9) throw RuntimeError("malformed sweep worker result");
  SweepRow r;
  r.name = std::string(f[0]);
  r.base_lr = text::parse_number(f[1]);
  r.seed = std::stoull(std::string(f[2]));
  r.ok = f[3] == "ok";
  r.final_val = text::parse_number(f[4]);
  r.best_val = text::parse_number(f[5]);
  r.best_boundary = std::stoull(std::string(f[6]));
  r.steps = std::stoull(std::string(f[7]));
  r.error = std::string(f[8]);
  return r;
}

struct Worker {
  pid_t pid;
  int fd;
};

inline Worker spawn_cell(const SweepCell& cell) {
  int fds[2];
  if (pipe(fds) != 0) throw RuntimeError("pipe() failed");
  const pid_t pid = fork();
  if (pid < 0) throw RuntimeError("fork() failed");
  if (pid == 0) {
    close(fds[0]);
    const std::string line = encode_row(run_cell(cell));
    std::size_t off = 0;
    while (off < line.size()) {
      const auto n = write(fds[1], line.data() + off, line.size() - off);
      if (n <= 0) break;
      off += static_cast<std::size_t>(n);
    }
    _exit(0);
  }
  close(fds[1]);
  return {pid, fds[0]};
}

inline SweepRow collect(const Worker& w, const SweepCell& cell) {
  std::string line;
  char buf[4096];
  for (;;) {
    const auto n = read(w.fd, buf, sizeof buf);
    if (n <= 0) break;
    line.append(buf, static_cast<std::size_t>(n));
  }
  close(w.fd);
  int status = 0;
  waitpid(w.pid, &status, 0);
  if (line.empty()) return failed_row(cell, "worker process exited without a result");
  return decode_row(line);
}

}  // namespace detail

// Runs every cell; failures are recorded in their row and do not stop the
// sweep. With workers > 1, cells run in forked worker processes; results are
// reported in cell order either way.
inline std::vector<SweepRow> run_sweep(const std::vector<SweepCell>& cells,
                                       std::size_t workers = 1) {
  std::vector<SweepRow> rows(cells.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < cells.size(); ++i) rows[i] = detail::run_cell(cells[i]);
    return rows;
  }
  for (std::size_t start = 0; start < cells.size(); start += workers) {
    const std::size_t end = std::min(cells.size(), start + workers);
    std::vector<detail::Worker> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(detail::spawn_cell(cells[i]));
    for (std::size_t i = start; i < end; ++i)
      rows[i] = detail::collect(batch[i - start], cells[i]);
  }
  return rows;
}

inline std::string format_sweep_table(const std::vector<SweepRow>& rows) {
  std::string out =
      "name\tbase_lr\tseed\tstatus\tfinal_val\tbest_val\tbest_boundary\tsteps\terror\n";
  for (const auto& r : rows) out += detail::encode_row(r) + '\n';
  return out;
}

inline bool sweep_all_ok(const std::vector<SweepRow>& rows) {
  return std::all_of(rows.begin(), rows.end(), [](const SweepRow& r) { return r.ok; });
}

}  // namespace crlab

#endif  // CRLAB_TRAINER_HPP_
