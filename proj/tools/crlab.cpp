// crlab: command-line driver for the controlled-rearing pipeline.
//
//   gen | preprocess | transform | train-tokenizer | train | eval | stats |
//   sweep | plot-data
//
// Every artifact is written together with <artifact>.prov (resolved options
// and input digests) and, for the main output, <artifact>.timing. Only the
// .timing files change between identical reruns.
//
// Exit codes: 0 ok, 1 invalid input or options, 2 runtime failure,
// 3 sweep finished with failed cells.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "crlab/checkpoint.hpp"
#include "crlab/corpus.hpp"
#include "crlab/error.hpp"
#include "crlab/evalstats.hpp"
#include "crlab/http_transport.hpp"
#include "crlab/model.hpp"
#include "crlab/rng.hpp"
#include "crlab/synthgen.hpp"
#include "crlab/tokenizer.hpp"
#include "crlab/trainer.hpp"
#include "crlab/transforms.hpp"

#ifndef CRLAB_DATA_DIR
#define CRLAB_DATA_DIR "data"
#endif

namespace fs = std::filesystem;
using namespace crlab;

namespace {

class PartialSweepFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Files and provenance

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, std::string_view data) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeError("cannot write '" + path + "'");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw RuntimeError("write to '" + path + "' failed");
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string digest(std::string_view bytes) { return "fnv1a64:" + hex64(fnv1a64(bytes)); }

class Provenance {
 public:
  Provenance(const CLI::App& sub) : command_(sub.get_name()) {
    config_ = sub.config_to_str(true, false);
  }

  // Reads an input file and records its digest.
  std::string input(const std::string& path) {
    std::string bytes = read_file(path);
    inputs_.emplace_back(path, digest(bytes));
    return bytes;
  }

  void note(const std::string& key, const std::string& value) { notes_.emplace_back(key, value); }

  const std::vector<std::pair<std::string, std::string>>& inputs() const { return inputs_; }
  std::string config_digest() const { return digest(config_); }

  std::string render(const std::string& artifact, std::string_view bytes,
                     const std::vector<std::pair<std::string, std::string>>& extra = {}) const {
    std::string out = "crlab-provenance 1\n";
    out += "command\t" + command_ + '\n';
    out += "artifact\t" + artifact + '\t' + digest(bytes) + '\n';
    for (const auto& [p, d] : inputs_) out += "input\t" + p + '\t' + d + '\n';
    for (const auto& [k, v] : notes_) out += "note\t" + k + '\t' + v + '\n';
    for (const auto& [k, v] : extra) out += "meta\t" + k + '\t' + v + '\n';
    out += "config\t" + config_digest() + "\n[config]\n" + config_;
    if (!config_.empty() && config_.back() != '\n') out += '\n';
    return out;
  }

  void write(const std::string& path, std::string_view bytes,
             const std::vector<std::pair<std::string, std::string>>& extra = {}) const {
    write_file(path, bytes);
    write_file(path + ".prov", render(path, bytes, extra));
  }

 private:
  std::string command_;
  std::string config_;
  std::vector<std::pair<std::string, std::string>> inputs_;
  std::vector<std::pair<std::string, std::string>> notes_;
};

class Timer {
 public:
  Timer() : t0_(std::chrono::steady_clock::now()) {}
  void write(const std::string& artifact, const std::string& extra = {}) const {
    const double s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    char when[32];
    const std::time_t now = std::time(nullptr);
    std::strftime(when, sizeof when, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    write_file(artifact + ".timing", std::string("finished_utc\t") + when +
                                         "\nelapsed_seconds\t" + text::format_number(s) +
                                         '\n' + extra);
  }

 private:
  std::chrono::steady_clock::time_point t0_;
};

// Corpus file plus its metadata sidecar (<path>.meta unless given).
Corpus load_corpus(Provenance& prov, const std::string& path, const std::string& meta_path,
                   bool raw = false) {
  Corpus c = load_corpus_text(prov.input(path), raw, fs::path(path).stem().string());
  const std::string side = meta_path.empty() ? path + ".meta" : meta_path;
  if (!meta_path.empty() || fs::exists(side)) apply_sidecar(c, prov.input(side));
  validate_corpus(c);
  return c;
}

void write_corpus(const Provenance& prov, const std::string& path, const Corpus& c) {
  const auto meta = c.metadata;
  prov.write(path, serialize_corpus(c), meta);
  prov.write(path + ".meta", serialize_sidecar(c), meta);
}

// ---------------------------------------------------------------------------
// gen

struct GenOpts {
  std::string kind = "toy";
  std::string lexicon = std::string(CRLAB_DATA_DIR) + "/lexicon.tsv";
  std::optional<std::uint64_t> seed;
  std::string out;
  std::size_t words = 200000;
  std::vector<int> ages{2, 5, 10, 15};
  int age = 5;
  int turns = 5;
  std::string type;
  std::string noun, verb, adjective;
  std::vector<std::string> participants;
  std::size_t count = 1;
  std::string url;
  std::string model;
  double timeout = 120.0;
  std::size_t concurrency = 4;
  std::size_t attempts = 3;
  double backoff = 1.0;
  std::size_t agreement = 200;
  std::size_t determiner = 0;
  std::size_t irregular = 0;
  int max_age = 15;
};

DialogueSpec resolve_spec(const GenOpts& o, const AgeLexicon& lex, std::uint64_t seed) {
  DialogueSpec s = random_spec(o.age, lex, seed);
  s.turns = o.turns;
  if (!o.type.empty()) s.type = parse_conversation_type(o.type);
  if (!o.noun.empty()) s.words.noun = o.noun;
  if (!o.verb.empty()) s.words.verb = o.verb;
  if (!o.adjective.empty()) s.words.adjective = o.adjective;
  if (!o.participants.empty()) {
    s.participants = o.participants;
  } else {
    const std::size_t want = o.turns == 10 ? 2 : 1;
    const auto& table = allowed_participants(o.age);
    s.participants.clear();
    Xoshiro256 rng(derive_seed_str(seed, "participants"));
    while (s.participants.size() < want)
      s.participants.emplace_back(table[rng.below(table.size())]);
  }
  s.validate();
  return s;
}

int cmd_gen(const CLI::App& sub, const GenOpts& o) {
  Timer timer;
  Provenance prov(sub);
  if (o.kind != "toy" && o.kind != "dialogue" && o.kind != "prompt" && o.kind != "api" &&
      o.kind != "pairs")
    throw ValidationError("unknown gen kind '" + o.kind + "'");
  if (o.count < 1) throw ValidationError("--count must be >= 1");
  const auto lex = AgeLexicon::parse(prov.input(o.lexicon));

  if (o.kind == "toy") {
    ToyCorpusOptions t;
    t.target_words = o.words;
    t.seed = o.seed.value_or(7);
    t.ages = o.ages;
    for (int a : t.ages)
      if (!is_seed_age(a)) throw ValidationError("toy ages must be 2, 5, 10 or 15");
    const Corpus c = make_toy_corpus(lex, t);
    write_corpus(prov, o.out, c);
  } else if (o.kind == "pairs") {
    PairSuiteOptions p;
    p.agreement = o.agreement;
    p.determiner_noun = o.determiner;
    p.irregular = o.irregular;
    p.max_age = o.max_age;
    p.seed = o.seed.value_or(11);
    prov.write(o.out, serialize_pairs(make_pair_suite(lex, p)));
  } else {
    const std::uint64_t base = o.seed.value_or(0);
    std::vector<DialogueSpec> specs;
    for (std::size_t i = 0; i < o.count; ++i)
      specs.push_back(resolve_spec(o, lex, o.count == 1 ? base : derive_seed(base, i)));
    if (o.kind == "prompt") {
      std::string out;
      for (std::size_t i = 0; i < specs.size(); ++i) {
        if (i) out += "\n%%\n";
        out += build_prompt(specs[i]);
      }
      prov.write(o.out, out);
    } else if (o.kind == "dialogue") {
      Corpus c;
      c.name = "dialogue";
      for (std::size_t i = 0; i < specs.size(); ++i) {
        Conversation conv = generate_offline(specs[i], lex);
        conv.id = "dialogue-" + std::to_string(i);
        c.conversations.push_back(std::move(conv));
      }
      write_corpus(prov, o.out, c);
    } else {
      ChatEndpoint ep;
      ep.url = o.url;
      ep.model = o.model;
      ep.timeout_seconds = o.timeout;
      ep.token = ChatEndpoint::token_from_env();
      ep.validate();
      prov.note("token", std::string("from $") + ChatEndpoint::kTokenEnv);
      const auto outcomes = request_dialogues(specs, ep, http_transport(), o.concurrency,
                                              {o.attempts, o.backoff});
      Corpus c;
      c.name = "api";
      std::string raw, actual;
      std::size_t failed = 0;
      for (std::size_t i = 0; i < outcomes.size(); ++i) {
        const auto& oc = outcomes[i];
        if (!oc.completion) {
          ++failed;
          std::cerr << "request " << i << " failed after " << oc.attempts
                    << " attempt(s): " << oc.error.value_or("unknown error") << '\n';
          continue;
        }
        raw += "%% request " + std::to_string(i) + '\n' + *oc.completion + '\n';
        try {
          auto g = parse_generated(*oc.completion);
          g.conversation.id = "api-" + std::to_string(i);
          g.conversation.age_months = specs[i].age * 12.0;
          g.conversation.source = Source::synthetic;
          validate_conversation(g.conversation);
          // Longer-than-requested dialogues are kept as generated.
          actual += (actual.empty() ? "" : ",") + std::to_string(g.conversation.utterances.size());
          c.conversations.push_back(std::move(g.conversation));
        } catch (const ValidationError& e) {
          ++failed;
          std::cerr << "request " << i << " returned an unusable dialogue: " << e.what()
                    << '\n';
        }
      }
      prov.note("turns.requested", std::to_string(o.turns));
      prov.note("turns.actual", actual);
      prov.write(o.out + ".raw", raw);
      write_corpus(prov, o.out, c);
      if (failed) {
        timer.write(o.out);
        throw RuntimeError(std::to_string(failed) + " of " + std::to_string(specs.size()) +
                           " requests failed");
      }
    }
  }
  timer.write(o.out);
  return 0;
}

// ---------------------------------------------------------------------------
// preprocess

struct PreprocessOpts {
  std::string in;
  std::string meta;
  bool raw = false;
  std::string name;
  bool normalize_labels = false;
  std::optional<std::size_t> budget;
  std::optional<double> split;
  std::uint64_t split_seed = 42;
  std::string out;
  std::string val_out;
};

int cmd_preprocess(const CLI::App& sub, const PreprocessOpts& o) {
  Timer timer;
  Provenance prov(sub);
  if (o.split && o.val_out.empty()) throw ValidationError("--split needs --val-out");
  if (!o.split && !o.val_out.empty()) throw ValidationError("--val-out needs --split");
  if (o.split && !(*o.split > 0.0 && *o.split < 1.0))
    throw ValidationError("--split must lie strictly in (0, 1)");
  Corpus c = load_corpus(prov, o.in, o.meta, o.raw);
  if (!o.name.empty()) c.name = o.name;
  if (o.normalize_labels) c = normalize_target_child_labels(c);
  if (o.budget) c = subsample_in_order(c, *o.budget);
  if (c.empty()) throw ValidationError("corpus is empty after preprocessing");
  if (o.split) {
    auto s = split_train_val(c, *o.split, o.split_seed);
    write_corpus(prov, o.out, s.train);
    write_corpus(prov, o.val_out, s.val);
  } else {
    write_corpus(prov, o.out, c);
  }
  timer.write(o.out);
  return 0;
}

// ---------------------------------------------------------------------------
// transform

struct TransformOpts {
  std::string in;
  std::string meta;
  std::string out;
  std::string order = "none";
  std::optional<std::uint64_t> order_seed;
  bool shuffle = false;
  std::optional<std::uint64_t> shuffle_seed;
  bool strip_labels = false;
};

int cmd_transform(const CLI::App& sub, const TransformOpts& o) {
  Timer timer;
  Provenance prov(sub);
  std::optional<GlobalOrder> order;
  if (o.order != "none") {
    order = GlobalOrder{parse_order_mode(o.order), o.order_seed};
    order->validate();
  } else if (o.order_seed) {
    throw ValidationError("--order-seed given without --order");
  }
  if (o.shuffle != o.shuffle_seed.has_value())
    throw ValidationError("--shuffle-utterances and --shuffle-seed go together");
  Corpus c = load_corpus(prov, o.in, o.meta);
  if (order && order->mode == OrderMode::random)
    prov.note("order.scope", "this file only; apply to the train split after splitting");
  if (order) c = order_global(c, *order);
  if (o.shuffle) c = shuffle_utterances(c, *o.shuffle_seed);
  if (o.strip_labels) c = strip_speaker_labels(c);
  write_corpus(prov, o.out, c);
  timer.write(o.out);
  return 0;
}

// ---------------------------------------------------------------------------
// train-tokenizer

struct TokenizerOpts {
  std::vector<std::string> in;
  std::size_t vocab_size = kDefaultVocabSize;
  std::string out;
};

int cmd_train_tokenizer(const CLI::App& sub, const TokenizerOpts& o) {
  Timer timer;
  Provenance prov(sub);
  std::string text;
  for (const auto& path : o.in) text += corpus_text(load_corpus(prov, path, ""));
  const auto tok = Tokenizer::train(text, o.vocab_size);
  prov.write(o.out, tok.save());
  timer.write(o.out);
  return 0;
}

// ---------------------------------------------------------------------------
// train / sweep

struct TrainOpts {
  std::string train;
  std::string val;
  std::string tokenizer;
  std::string schedule = "iterative";
  std::size_t epochs = 20;
  std::size_t repeats = 1;
  std::size_t buckets = 0;
  bool bucket_by_age = false;
  std::optional<double> lr;
  std::size_t batch_size = 8;
  std::vector<std::uint64_t> seeds{42, 0, 123};
  std::size_t eval_every = 0;
  double mask_rate = 0.15;
  std::size_t layers = 4, heads = 4, d_model = 128, d_ff = 512, context = 128;
  std::string objective = "causal";
  std::string dtype = "f32";
};

void add_train_flags(CLI::App* s, TrainOpts& o) {
  s->add_option("--train", o.train, "Training corpus")->required()->check(CLI::ExistingFile);
  s->add_option("--val", o.val, "Validation corpus")->required()->check(CLI::ExistingFile);
  s->add_option("--tokenizer", o.tokenizer, "Tokenizer file")
      ->required()
      ->check(CLI::ExistingFile);
  s->add_option("--schedule", o.schedule, "iterative | buckets")->capture_default_str();
  s->add_option("--epochs", o.epochs, "Iterative epochs")->capture_default_str();
  s->add_option("--repeats", o.repeats, "Passes per bucket (n)")->capture_default_str();
  s->add_option("--buckets", o.buckets, "Equal-word bucket count (b)");
  s->add_flag("--bucket-by-age", o.bucket_by_age, "One bucket per seed age");
  s->add_option("--lr", o.lr, "Base learning rate (default by objective)");
  s->add_option("--batch-size", o.batch_size)->capture_default_str();
  s->add_option("--seed", o.seeds, "Training seeds")->capture_default_str();
  s->add_option("--eval-every", o.eval_every, "Extra validation every k steps")
      ->capture_default_str();
  s->add_option("--mask-rate", o.mask_rate)->capture_default_str();
  s->add_option("--layers", o.layers)->capture_default_str();
  s->add_option("--heads", o.heads)->capture_default_str();
  s->add_option("--d-model", o.d_model)->capture_default_str();
  s->add_option("--d-ff", o.d_ff)->capture_default_str();
  s->add_option("--context", o.context, "Context length")->capture_default_str();
  s->add_option("--objective", o.objective, "causal | masked")->capture_default_str();
  s->add_option("--dtype", o.dtype, "f32 | f64")->capture_default_str();
}

struct TrainSetup {
  std::shared_ptr<const Tokenizer> tok;
  Corpus train;
  Corpus val;
  std::optional<Bucketing> bucketing;
  TrainConfig tc;
  ModelConfig mc;
};

TrainSetup setup_training(Provenance& prov, const TrainOpts& o) {
  TrainSetup s;
  s.tc.schedule = parse_schedule(o.schedule);
  s.mc.objective = parse_objective(o.objective);
  s.mc.dtype = parse_dtype(o.dtype);
  s.tc.base_lr = o.lr.value_or(default_base_lr(s.mc.objective));
  s.tc.batch_size = o.batch_size;
  s.tc.seeds = o.seeds;
  s.tc.epochs = o.epochs;
  s.tc.repeats = o.repeats;
  s.tc.eval_every = o.eval_every;
  s.tc.mask_rate = o.mask_rate;
  s.tc.validate();
  s.mc.n_layers = o.layers;
  s.mc.n_heads = o.heads;
  s.mc.d_model = o.d_model;
  s.mc.d_ff = o.d_ff;
  s.mc.context_length = o.context;
  const bool buckets = s.tc.schedule == ScheduleKind::repeated_buckets;
  if (buckets && (o.buckets > 0) == o.bucket_by_age)
    throw ValidationError("the buckets schedule needs exactly one of --buckets or --bucket-by-age");
  if (!buckets && (o.buckets > 0 || o.bucket_by_age))
    throw ValidationError("bucket options only apply to the buckets schedule");

  s.tok = std::make_shared<const Tokenizer>(Tokenizer::load(prov.input(o.tokenizer)));
  s.mc.vocab_size = s.tok->vocab_size();
  s.mc.validate();
  s.train = load_corpus(prov, o.train, "");
  s.val = load_corpus(prov, o.val, "");
  if (buckets) {
    BucketRequest req;
    req.strategy = o.bucket_by_age ? BucketStrategy::by_seed_age : BucketStrategy::equal_words;
    req.buckets = o.buckets;
    s.bucketing = bucketize(s.train, req);
    prov.note("buckets", s.bucketing->plan.describe());
  }
  prov.note("shuffle", "training chunks reshuffled every epoch/pass");
  prov.note("model.init_seed", "equals the training seed");
  return s;
}

std::string bucket_table(const BucketPlan& plan) {
  std::string out = "bucket\tfirst\tend\twords\tage_months\n";
  for (std::size_t i = 0; i < plan.ranges.size(); ++i) {
    out += bucket_label(i) + '\t' + std::to_string(plan.ranges[i].first) + '\t' +
           std::to_string(plan.ranges[i].second) + '\t' + std::to_string(plan.word_counts[i]) +
           '\t';
    if (i < plan.ages.size() && plan.ages[i]) out += text::format_number(*plan.ages[i]);
    out += '\n';
  }
  return out;
}

template <typename T>
void train_one(const Provenance& prov, const TrainSetup& s, std::uint64_t seed,
               const std::string& dir) {
  auto mc = s.mc;
  mc.init_seed = seed;
  Transformer<T> model(mc);
  TrainResult<T> r = s.bucketing
      ? train_repeated_buckets(model, *s.tok, s.bucketing->buckets, s.val, s.tc, seed)
      : train_iterative(model, *s.tok, s.train, s.val, s.tc, seed);
  const std::vector<std::pair<std::string, std::string>> meta{
      {"seed", std::to_string(seed)},
      {"schedule", std::string(to_string(s.tc.schedule))},
      {"selected.tag", std::string(to_string(r.selected.tag))},
      {"selected.boundary", std::to_string(r.selected.boundary)},
      {"selected.val_loss", text::format_number(r.selected.val_loss)},
      {"visit_trace", r.log.trace_string()}};
  prov.write(dir + "/selected.ckpt", serialize_checkpoint(r.selected), meta);
  prov.write(dir + "/final.ckpt", serialize_checkpoint(r.final), meta);
  prov.write(dir + "/trainlog.tsv", serialize_train_log(r.log), meta);
  write_file(dir + "/trainlog.tsv.timing", serialize_timing(r.log));
}

int cmd_train(const CLI::App& sub, const TrainOpts& o, const std::string& out_dir) {
  Timer timer;
  Provenance prov(sub);
  const auto s = setup_training(prov, o);
  fs::create_directories(out_dir);
  if (s.bucketing) prov.write(out_dir + "/buckets.tsv", bucket_table(s.bucketing->plan));
  for (const auto seed : s.tc.seeds) {
    const std::string dir = out_dir + "/seed-" + std::to_string(seed);
    if (s.mc.dtype == DType::f32) train_one<float>(prov, s, seed, dir);
    else train_one<double>(prov, s, seed, dir);
    std::cerr << "seed " << seed << " done\n";
  }
  timer.write(out_dir + "/train");
  return 0;
}

int cmd_sweep(const CLI::App& sub, const TrainOpts& o, const std::vector<double>& lrs,
              std::size_t workers, const std::string& out) {
  Timer timer;
  Provenance prov(sub);
  if (o.lr) throw ValidationError("sweep takes learning rates through --lrs");
  if (lrs.empty()) throw ValidationError("sweep needs at least one --lrs value");
  if (workers < 1) throw ValidationError("--workers must be >= 1");
  for (double lr : lrs)
    if (!(lr > 0.0)) throw ValidationError("learning rates must be positive");
  const auto s = setup_training(prov, o);
  std::vector<SweepCell> cells;
  for (double lr : lrs) {
    for (const auto seed : s.tc.seeds) {
      SweepCell c;
      c.name = "lr=" + text::format_number(lr) + ",seed=" + std::to_string(seed);
      c.tokenizer = s.tok;
      c.train = s.train;
      c.val = s.val;
      if (s.bucketing) c.buckets = s.bucketing->buckets;
      c.train_config = s.tc;
      c.train_config.base_lr = lr;
      c.train_config.seeds = {seed};
      c.model_config = s.mc;
      c.seed = seed;
      cells.push_back(std::move(c));
    }
  }
  const auto rows = run_sweep(cells, workers);
  const auto table = format_sweep_table(rows);
  prov.write(out, table);
  timer.write(out);
  std::cout << table;
  if (!sweep_all_ok(rows)) throw PartialSweepFailure("some sweep cells failed; see " + out);
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOpts {
  std::string checkpoint;
  std::string tokenizer;
  std::string pairs;
  std::vector<std::string> wordsim;
  std::string variant = "none";
  std::string ws_variant = "none";
  std::vector<std::string> meta;
  std::string out;
};

template <typename T>
EvalReport evaluate(const Checkpoint<T>& ck, const Tokenizer& tok,
                    const std::vector<MinimalPair>& pairs,
                    const std::vector<WordSimBenchmark>& benches, LabelVariant v,
                    LabelVariant wv) {
  const auto model = ck.restore_model();
  EvalReport r;
  if (!pairs.empty()) r.minimal_pairs = minimal_pair_accuracy(model, tok, pairs, v);
  if (!benches.empty()) r.word_similarity = word_similarity_eval(model, tok, benches, wv);
  return r;
}

int cmd_eval(const CLI::App& sub, const EvalOpts& o) {
  Timer timer;
  Provenance prov(sub);
  if (o.pairs.empty() && o.wordsim.empty())
    throw ValidationError("eval needs --pairs and/or --wordsim");
  const auto v = parse_label_variant(o.variant);
  const auto wv = parse_label_variant(o.ws_variant);
  std::vector<std::pair<std::string, std::string>> user_meta;
  for (const auto& kv : o.meta) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ValidationError("--meta expects key=value, got '" + kv + "'");
    const auto k = kv.substr(0, eq), val = kv.substr(eq + 1);
    if (k.find_first_of("\t\n") != std::string::npos ||
        val.find_first_of("\t\n") != std::string::npos)
      throw ValidationError("--meta keys and values cannot contain tabs or newlines");
    user_meta.emplace_back(k, val);
  }
  const std::string ck_bytes = prov.input(o.checkpoint);
  const auto tok = Tokenizer::load(prov.input(o.tokenizer));
  std::vector<MinimalPair> pairs;
  if (!o.pairs.empty()) pairs = load_pairs(prov.input(o.pairs));
  std::vector<WordSimBenchmark> benches;
  for (const auto& w : o.wordsim) benches.push_back(load_wordsim(prov.input(w)));

  EvalReport r;
  const auto scalar = checkpoint_scalar_size(ck_bytes);
  if (scalar == sizeof(float)) {
    const auto ck = deserialize_checkpoint<float>(ck_bytes);
    if (ck.config.vocab_size != tok.vocab_size())
      throw ValidationError("checkpoint and tokenizer vocabulary sizes differ");
    r = evaluate(ck, tok, pairs, benches, v, wv);
  } else {
    const auto ck = deserialize_checkpoint<double>(ck_bytes);
    if (ck.config.vocab_size != tok.vocab_size())
      throw ValidationError("checkpoint and tokenizer vocabulary sizes differ");
    r = evaluate(ck, tok, pairs, benches, v, wv);
  }
  r.meta = user_meta;
  r.meta.emplace_back("mp.variant", std::string(to_string(v)));
  r.meta.emplace_back("ws.variant", std::string(to_string(wv)));
  for (const auto& [p, d] : prov.inputs()) r.meta.emplace_back("input." + p, d);
  r.meta.emplace_back("config", prov.config_digest());
  validate_eval_report(r);
  const auto text = serialize_eval_report(r);
  prov.write(o.out, text);
  timer.write(o.out);
  for (const auto& [name, value] : report_metrics(r))
    std::cout << name << '\t' << text::format_number(value) << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// stats

struct StatsOpts {
  std::string corpus;
  std::string meta;
  std::vector<std::string> compare;
  std::vector<std::string> aggregate;
  double alpha = 0.05;
  std::string out;
  std::string table;
};

// "group/condition=a.report,b.report,c.report"
ConditionRuns parse_compare_arg(Provenance& prov, const std::string& arg) {
  const auto eq = arg.find('=');
  const auto slash = arg.find('/');
  if (eq == std::string::npos || slash == std::string::npos || slash > eq || slash == 0 ||
      slash + 1 == eq)
    throw ValidationError("--compare expects group/condition=report[,report...], got '" +
                          arg + "'");
  ConditionRuns c;
  c.group = arg.substr(0, slash);
  c.condition = arg.substr(slash + 1, eq - slash - 1);
  for (auto path : text::split_on(std::string_view(arg).substr(eq + 1), ",")) {
    if (path.empty()) throw ValidationError("empty report path in '" + arg + "'");
    c.runs.push_back(parse_eval_report(prov.input(std::string(path))));
  }
  return c;
}

int cmd_stats(const CLI::App& sub, const StatsOpts& o) {
  Timer timer;
  Provenance prov(sub);
  const int modes = !o.corpus.empty() + !o.compare.empty() + !o.aggregate.empty();
  if (modes != 1)
    throw ValidationError("stats takes exactly one of --corpus, --compare or --aggregate");
  std::string out;
  if (!o.corpus.empty()) {
    out = format_stats(corpus_stats(load_corpus(prov, o.corpus, o.meta)));
  } else if (!o.aggregate.empty()) {
    std::vector<EvalReport> reports;
    for (const auto& p : o.aggregate) reports.push_back(parse_eval_report(prov.input(p)));
    out = "metric\tmean\tstd\truns\n";
    for (const auto& m : aggregate_runs(reports))
      out += m.name + '\t' + text::format_number(m.mean) + '\t' + text::format_number(m.std) +
             '\t' + std::to_string(m.runs) + '\n';
  } else {
    std::vector<ConditionRuns> conds;
    for (const auto& a : o.compare) conds.push_back(parse_compare_arg(prov, a));
    const auto rep = compare_conditions(conds, o.alpha);
    validate_comparison(rep);
    out = serialize_comparison(rep);
    const auto table = format_comparison_table(rep);
    if (!o.table.empty()) prov.write(o.table, table);
    std::cout << table;
  }
  if (o.out.empty()) {
    if (o.compare.empty()) std::cout << out;
  } else {
    prov.write(o.out, out);
    timer.write(o.out);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// plot-data

int cmd_plot_data(const CLI::App& sub, const std::string& log, const std::string& prefix) {
  Timer timer;
  Provenance prov(sub);
  const auto series = plot_series(parse_train_log(prov.input(log)));
  prov.write(prefix + ".train.tsv", series.train);
  prov.write(prefix + ".val.tsv", series.val);
  timer.write(prefix + ".train.tsv");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"crlab: controlled-rearing experiments on conversational corpora"};
  app.set_config("--config", "", "INI run configuration; command-line flags override it");
  app.require_subcommand(1);

  GenOpts gen;
  auto* g = app.add_subcommand("gen", "Generate a toy corpus, dialogues, prompts or pair suites");
  g->add_option("--kind", gen.kind, "toy | dialogue | prompt | api | pairs")
      ->capture_default_str();
  g->add_option("--lexicon", gen.lexicon, "Age-graded lexicon TSV")
      ->capture_default_str()
      ->check(CLI::ExistingFile);
  g->add_option("--seed", gen.seed, "Seed (toy default 7, pairs default 11, otherwise 0)");
  g->add_option("--out", gen.out, "Output path")->required();
  g->add_option("--words", gen.words, "toy: target word count")->capture_default_str();
  g->add_option("--ages", gen.ages, "toy: ages to cycle through")->capture_default_str();
  g->add_option("--age", gen.age, "Child age (2, 5, 10 or 15)")->capture_default_str();
  g->add_option("--turns", gen.turns, "5 or 10")->capture_default_str();
  g->add_option("--type", gen.type, "explanatory | functional | narrative | argumentative");
  g->add_option("--noun", gen.noun);
  g->add_option("--verb", gen.verb);
  g->add_option("--adjective", gen.adjective);
  g->add_option("--participant", gen.participants, "Participant role (repeatable)");
  g->add_option("--count", gen.count, "Number of dialogues")->capture_default_str();
  g->add_option("--url", gen.url, "api: chat-completions URL");
  g->add_option("--model", gen.model, "api: model name");
  g->add_option("--timeout", gen.timeout, "api: request timeout in seconds")
      ->capture_default_str();
  g->add_option("--concurrency", gen.concurrency)->capture_default_str();
  g->add_option("--attempts", gen.attempts, "api: attempts per request")->capture_default_str();
  g->add_option("--backoff", gen.backoff, "api: first retry delay in seconds")
      ->capture_default_str();
  g->add_option("--agreement", gen.agreement, "pairs: agreement pairs")->capture_default_str();
  g->add_option("--determiner", gen.determiner, "pairs: determiner-noun pairs")
      ->capture_default_str();
  g->add_option("--irregular", gen.irregular, "pairs: irregular plural pairs")
      ->capture_default_str();
  g->add_option("--max-age", gen.max_age, "pairs: lexicon age limit")->capture_default_str();

  PreprocessOpts pre;
  auto* p = app.add_subcommand("preprocess", "Ingest, normalize, subsample and split a corpus");
  p->add_option("--in", pre.in, "Input corpus")->required()->check(CLI::ExistingFile);
  p->add_option("--meta", pre.meta, "Metadata sidecar (default <in>.meta if present)")
      ->check(CLI::ExistingFile);
  p->add_flag("--raw", pre.raw, "Input is blank-line-delimited raw text");
  p->add_option("--name", pre.name, "Corpus name");
  p->add_flag("--normalize-labels", pre.normalize_labels,
              "Map target-child label variants to Child");
  p->add_option("--budget", pre.budget, "In-order subsample to this many words");
  p->add_option("--split", pre.split, "Train fraction for a train/val split");
  p->add_option("--split-seed", pre.split_seed)->capture_default_str();
  p->add_option("--out", pre.out, "Output corpus (train split with --split)")->required();
  p->add_option("--val-out", pre.val_out, "Validation split output");

  TransformOpts tr;
  auto* t = app.add_subcommand("transform", "Reorder, shuffle or strip labels");
  t->add_option("--in", tr.in, "Input corpus")->required()->check(CLI::ExistingFile);
  t->add_option("--meta", tr.meta, "Metadata sidecar (default <in>.meta if present)")
      ->check(CLI::ExistingFile);
  t->add_option("--out", tr.out, "Output corpus")->required();
  t->add_option("--order", tr.order, "none | age | reverse | random")->capture_default_str();
  t->add_option("--order-seed", tr.order_seed, "Seed for random order");
  t->add_flag("--shuffle-utterances", tr.shuffle, "Shuffle utterances within conversations");
  t->add_option("--shuffle-seed", tr.shuffle_seed);
  t->add_flag("--strip-labels", tr.strip_labels, "Remove speaker labels");

  TokenizerOpts tk;
  auto* k = app.add_subcommand("train-tokenizer", "Train a byte-level BPE tokenizer");
  k->add_option("--in", tk.in, "Corpus file(s)")->required()->check(CLI::ExistingFile);
  k->add_option("--vocab-size", tk.vocab_size)->capture_default_str();
  k->add_option("--out", tk.out, "Tokenizer output")->required();

  TrainOpts trn;
  std::string train_out;
  auto* n = app.add_subcommand("train", "Train models, one per seed");
  add_train_flags(n, trn);
  n->add_option("--out-dir", train_out, "Output directory")->required();

  TrainOpts sw;
  std::vector<double> sweep_lrs;
  std::size_t workers = 1;
  std::string sweep_out;
  auto* s = app.add_subcommand("sweep", "Learning-rate sweep");
  add_train_flags(s, sw);
  s->add_option("--lrs", sweep_lrs, "Learning rates to try")->required();
  s->add_option("--workers", workers, "Parallel worker processes")->capture_default_str();
  s->add_option("--out", sweep_out, "Sweep table output")->required();

  EvalOpts ev;
  auto* e = app.add_subcommand("eval", "Minimal-pair and word-similarity evaluation");
  e->add_option("--checkpoint", ev.checkpoint)->required()->check(CLI::ExistingFile);
  e->add_option("--tokenizer", ev.tokenizer)->required()->check(CLI::ExistingFile);
  e->add_option("--pairs", ev.pairs, "Minimal-pair TSV")->check(CLI::ExistingFile);
  e->add_option("--wordsim", ev.wordsim, "Word-similarity benchmark file(s)")
      ->check(CLI::ExistingFile);
  e->add_option("--variant", ev.variant, "Minimal-pair label variant: none | mot | child")
      ->capture_default_str();
  e->add_option("--ws-variant", ev.ws_variant, "Word-similarity label prefix: none | mot | child")
      ->capture_default_str();
  e->add_option("--meta", ev.meta, "key=value recorded in the report (repeatable)");
  e->add_option("--out", ev.out, "Report output")->required();

  StatsOpts st;
  auto* a = app.add_subcommand("stats", "Corpus statistics, run aggregation, condition comparisons");
  a->add_option("--corpus", st.corpus, "Corpus for descriptive statistics")
      ->check(CLI::ExistingFile);
  a->add_option("--meta", st.meta)->check(CLI::ExistingFile);
  a->add_option("--compare", st.compare, "group/condition=report,report,... (repeatable)");
  a->add_option("--aggregate", st.aggregate, "Reports to average")->check(CLI::ExistingFile);
  a->add_option("--alpha", st.alpha)->capture_default_str();
  a->add_option("--out", st.out, "Output file (stdout otherwise)");
  a->add_option("--table", st.table, "comparison: human-readable table output");

  std::string log_path, prefix;
  auto* d = app.add_subcommand("plot-data", "Emit loss series from a train log");
  d->add_option("--log", log_path)->required()->check(CLI::ExistingFile);
  d->add_option("--out-prefix", prefix, "Writes <prefix>.train.tsv and <prefix>.val.tsv")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (g->parsed()) return cmd_gen(*g, gen);
    if (p->parsed()) return cmd_preprocess(*p, pre);
    if (t->parsed()) return cmd_transform(*t, tr);
    if (k->parsed()) return cmd_train_tokenizer(*k, tk);
    if (n->parsed()) return cmd_train(*n, trn, train_out);
    if (s->parsed()) return cmd_sweep(*s, sw, sweep_lrs, workers, sweep_out);
    if (e->parsed()) return cmd_eval(*e, ev);
    if (a->parsed()) return cmd_stats(*a, st);
    if (d->parsed()) return cmd_plot_data(*d, log_path, prefix);
  } catch (const ValidationError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  } catch (const PartialSweepFailure& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 3;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 2;
  }
  return 1;
}
