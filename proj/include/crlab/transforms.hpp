#ifndef CRLAB_TRANSFORMS_HPP_
#define CRLAB_TRANSFORMS_HPP_

// Ordering interventions on corpora: global conversation order, local
// utterance shuffling, speaker-label removal, and contiguous bucketing for
// the repeated-bucket curriculum. All randomized transforms are pure
// functions of (input, seed).

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "crlab/corpus.hpp"
#include "crlab/error.hpp"
#include "crlab/rng.hpp"

namespace crlab {

enum class OrderMode { age, reverse, random };

inline std::string_view to_string(OrderMode m) {
  switch (m) {
    case OrderMode::age: return "age";
    case OrderMode::reverse: return "reverse";
    case OrderMode::random: return "random";
  }
  return "age";
}

inline OrderMode parse_order_mode(std::string_view s) {
  if (s == "age") return OrderMode::age;
  if (s == "reverse") return OrderMode::reverse;
  if (s == "random") return OrderMode::random;
  throw ValidationError("unknown order mode '" + std::string(s) +
                        "' (expected age, reverse or random)");
}

struct GlobalOrder {
  OrderMode mode = OrderMode::age;
  std::optional<std::uint64_t> seed;  // required iff mode == random

  void validate() const {
    if (mode == OrderMode::random && !seed)
      throw ValidationError("random global order requires a seed");
    if (mode != OrderMode::random && seed)
      throw ValidationError("a seed is only meaningful for random order");
  }
};

inline Corpus order_global(const Corpus& corpus, const GlobalOrder& order) {
  order.validate();
  Corpus out = corpus;
  auto& convs = out.conversations;
  if (order.mode == OrderMode::random) {
    Xoshiro256 rng(derive_seed_str(*order.seed, "order_global"));
    fisher_yates(std::span<Conversation>(convs), rng);
    out.set_meta("order.mode", "random");
    out.set_meta("order.seed", std::to_string(*order.seed));
    return out;
  }
  for (const auto& c : convs)
    if (!c.age_months)
      throw ValidationError("conversation '" + c.id +
                            "' has no age_months; " +
                            std::string(to_string(order.mode)) +
                            " order needs ages on every conversation");
  if (order.mode == OrderMode::age) {
    std::stable_sort(convs.begin(), convs.end(),
                     [](const Conversation& a, const Conversation& b) {
                       return *a.age_months < *b.age_months;
                     });
  } else {
    std::stable_sort(convs.begin(), convs.end(),
                     [](const Conversation& a, const Conversation& b) {
                       return *a.age_months > *b.age_months;
                     });
  }
  out.set_meta("order.mode", std::string(to_string(order.mode)));
  return out;
}

// The permutation is keyed by (seed, conversation id), so it does not depend
// on where the conversation sits in the corpus.
inline Conversation shuffle_utterances(const Conversation& c,
                                       std::uint64_t seed) {
  Conversation out = c;
  Xoshiro256 rng(derive_seed_str(seed, c.id));
  fisher_yates(std::span<Utterance>(out.utterances), rng);
  return out;
}

inline Corpus shuffle_utterances(const Corpus& corpus, std::uint64_t seed) {
  Corpus out = corpus;
  for (auto& c : out.conversations) c = shuffle_utterances(c, seed);
  out.set_meta("local.shuffle_seed", std::to_string(seed));
  return out;
}

inline Corpus strip_speaker_labels(const Corpus& corpus) {
  Corpus out = corpus;
  for (auto& c : out.conversations)
    for (auto& u : c.utterances) u.speaker.clear();
  out.set_meta("local.strip_labels", "true");
  return out;
}

// ---------------------------------------------------------------------------
// Bucketing.

enum class BucketStrategy { equal_words, by_seed_age };

struct BucketRequest {
  BucketStrategy strategy = BucketStrategy::equal_words;
  std::size_t buckets = 1;  // used by equal_words
};

struct BucketPlan {
  BucketStrategy strategy = BucketStrategy::equal_words;
  // Half-open conversation index ranges, contiguous and covering the corpus.
  std::vector<std::pair<std::size_t, std::size_t>> ranges;
  std::vector<std::size_t> word_counts;
  std::vector<std::optional<double>> ages;  // by_seed_age only

  std::string describe() const {
    std::string s = strategy == BucketStrategy::equal_words ? "equal_words"
                                                            : "by_seed_age";
    s += ":";
    for (std::size_t i = 0; i < ranges.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(ranges[i].first) + "-" +
           std::to_string(ranges[i].second);
    }
    return s;
  }
};

struct Bucketing {
  BucketPlan plan;
  std::vector<Corpus> buckets;
};

namespace detail {

// Closes bucket k once the running total reaches (k + 1) / b of the corpus,
// never splitting a conversation and leaving at least one conversation for
// each remaining bucket.
inline std::vector<std::pair<std::size_t, std::size_t>> equal_word_ranges(
    const std::vector<std::size_t>& words, std::size_t b) {
  const std::size_t n = words.size();
  std::size_t total = 0;
  for (auto w : words) total += w;
  std::vector<std::pair<std::size_t, std::size_t>> ranges;
  std::size_t begin = 0;
  std::size_t cum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    cum += words[i];
    const std::size_t k = ranges.size();
    if (k + 1 == b) break;
    const std::size_t remaining_after = n - (i + 1);
    const std::size_t buckets_left = b - 1 - k;
    const bool reached = static_cast<unsigned __int128>(cum) * b >=
                         static_cast<unsigned __int128>(k + 1) * total;
    if (reached || remaining_after == buckets_left) {
      ranges.emplace_back(begin, i + 1);
      begin = i + 1;
    }
  }
  ranges.emplace_back(begin, n);
  return ranges;
}

}  // namespace detail

inline Bucketing bucketize(const Corpus& corpus, const BucketRequest& request) {
  Bucketing result;
  result.plan.strategy = request.strategy;
  const std::size_t n = corpus.size();
  if (n == 0) throw ValidationError("cannot bucketize an empty corpus");

  std::vector<std::size_t> words(n);
  for (std::size_t i = 0; i < n; ++i)
    words[i] = conversation_words(corpus.conversations[i]);

  if (request.strategy == BucketStrategy::equal_words) {
    if (request.buckets < 1)
      throw ValidationError("number of buckets must be >= 1");
    if (request.buckets > n)
      throw ValidationError("number of buckets (" +
                            std::to_string(request.buckets) +
                            ") exceeds conversation count (" +
                            std::to_string(n) + ")");
    result.plan.ranges = detail::equal_word_ranges(words, request.buckets);
    result.plan.ages.assign(result.plan.ranges.size(), std::nullopt);
  } else {
    // One bucket per contiguous run of equal age. Each age must form a
    // single run; bucketize never reorders.
    std::vector<double> seen;
    std::size_t begin = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& age = corpus.conversations[i].age_months;
      if (!age)
        throw ValidationError("conversation '" + corpus.conversations[i].id +
                              "' has no age_months; by_seed_age needs ages");
      const bool last = i + 1 == n;
      const bool boundary =
          last || !corpus.conversations[i + 1].age_months ||
          *corpus.conversations[i + 1].age_months != *age;
      if (!boundary) continue;
      if (std::find(seen.begin(), seen.end(), *age) != seen.end())
        throw ValidationError(
            "age " + text::format_number(*age) +
            " occurs in more than one contiguous run; order the corpus by "
            "age (or reverse) before bucketing by seed age");
      seen.push_back(*age);
      result.plan.ranges.emplace_back(begin, i + 1);
      result.plan.ages.emplace_back(*age);
      begin = i + 1;
    }
  }

  for (std::size_t k = 0; k < result.plan.ranges.size(); ++k) {
    const auto [lo, hi] = result.plan.ranges[k];
    Corpus bucket;
    bucket.name = corpus.name + ".bucket" + std::to_string(k);
    bucket.metadata = corpus.metadata;
    bucket.conversations.assign(corpus.conversations.begin() + lo,
                                corpus.conversations.begin() + hi);
    std::size_t w = 0;
    for (std::size_t i = lo; i < hi; ++i) w += words[i];
    result.plan.word_counts.push_back(w);
    result.buckets.push_back(std::move(bucket));
  }
  for (auto& bucket : result.buckets)
    bucket.set_meta("bucket.plan", result.plan.describe());
  return result;
}

}  // namespace crlab

#endif  // CRLAB_TRANSFORMS_HPP_
