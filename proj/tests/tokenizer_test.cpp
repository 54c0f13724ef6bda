#include <gtest/gtest.h>

#include <map>
#include <string>
#include <vector>

#include "crlab/rng.hpp"
#include "crlab/tokenizer.hpp"

using namespace crlab;

namespace {

// Naive reference BPE: recount every pair each round, take the most frequent
// (ties: smallest left bytes, then smallest right bytes), merge left to right.
struct NaiveBpe {
  std::vector<std::pair<std::string, std::string>> merges;

  static std::vector<std::vector<std::string>> segments(std::string_view text) {
    std::vector<std::vector<std::string>> out;
    std::size_t start = 0;
    while (start <= text.size()) {
      const auto hit = text.find(kEndOfText, start);
      const auto end = hit == std::string_view::npos ? text.size() : hit;
      std::vector<std::string> seg;
      for (std::size_t i = start; i < end; ++i) seg.emplace_back(1, text[i]);
      if (!seg.empty()) out.push_back(seg);
      if (hit == std::string_view::npos) break;
      start = hit + kEndOfText.size();
    }
    return out;
  }

  static void apply(std::vector<std::string>& s, const std::string& l, const std::string& r) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i + 1 < s.size() && s[i] == l && s[i + 1] == r) {
        out.push_back(l + r);
        ++i;
      } else {
        out.push_back(s[i]);
      }
    }
    s = std::move(out);
  }

  NaiveBpe(std::string_view text, std::size_t merges_wanted) {
    auto segs = segments(text);
    while (merges.size() < merges_wanted) {
      std::map<std::pair<std::string, std::string>, int> counts;
      for (const auto& s : segs)
        for (std::size_t i = 0; i + 1 < s.size(); ++i) ++counts[{s[i], s[i + 1]}];
      const std::pair<std::string, std::string>* best = nullptr;
      int best_count = 0;
      for (const auto& [pair, c] : counts)
        if (c > best_count) best_count = c, best = &pair;  // map order breaks ties
      if (!best || best_count < 2) break;
      const auto chosen = *best;
      merges.push_back(chosen);
      for (auto& s : segs) apply(s, chosen.first, chosen.second);
    }
  }

  std::vector<std::string> encode(std::string_view text) const {
    std::vector<std::string> out;
    for (auto s : segments(text)) {
      for (const auto& [l, r] : merges) apply(s, l, r);
      out.insert(out.end(), s.begin(), s.end());
    }
    return out;
  }
};

std::string random_utf8(Xoshiro256& rng, std::size_t n) {
  static const char* pieces[] = {"a", "b", " ", "**", "MOT", ":", "\\n\\n", "é", "日",
                                 "😀", "<|", "|>", "<|endoftext|>", "\t", "\n"};
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s += pieces[rng.below(std::size(pieces))];
  return s;
}

}  // namespace

TEST(Bpe, FirstMergeIsMostFrequentPair) {
  const auto tok = Tokenizer::train("aaab aaab", kMinVocabSize + 1);
  ASSERT_EQ(tok.merges().size(), 1u);
  EXPECT_EQ(tok.token_bytes(tok.merges()[0].left), "a");
  EXPECT_EQ(tok.token_bytes(tok.merges()[0].right), "a");
}

TEST(Bpe, MinimumVocabMeansNoMerges) {
  const auto tok = Tokenizer::train("aaaa bbbb aaaa", kMinVocabSize);
  EXPECT_TRUE(tok.merges().empty());
  EXPECT_EQ(tok.vocab_size(), kMinVocabSize);
  EXPECT_THROW(Tokenizer::train("abc", kMinVocabSize - 1), ValidationError);
}

TEST(Bpe, StopsWhenNoPairRepeats) {
  const auto tok = Tokenizer::train("abcdef", 400);
  EXPECT_TRUE(tok.merges().empty());
}

TEST(Bpe, MatchesNaiveReferenceOnRandomTexts) {
  Xoshiro256 rng(12);
  for (int trial = 0; trial < 40; ++trial) {
    std::string text;
    const std::size_t n = 50 + rng.below(400);
    for (std::size_t i = 0; i < n; ++i) text += "abc d"[rng.below(5)];
    if (trial % 3 == 0) text += " <|endoftext|> " + text.substr(0, n / 2);
    const std::size_t merges = 1 + rng.below(40);
    const auto tok = Tokenizer::train(text, kMinVocabSize + merges);
    const NaiveBpe ref(text, merges);
    ASSERT_EQ(tok.merges().size(), ref.merges.size()) << text;
    for (std::size_t m = 0; m < ref.merges.size(); ++m) {
      ASSERT_EQ(tok.token_bytes(tok.merges()[m].left), ref.merges[m].first) << "merge " << m;
      ASSERT_EQ(tok.token_bytes(tok.merges()[m].right), ref.merges[m].second) << "merge " << m;
    }
    const std::string probe = text.substr(0, n / 3) + "dd cab";
    std::vector<std::string> got;
    for (auto id : tok.encode(probe)) got.push_back(tok.token_bytes(id));
    const auto want = ref.encode(probe);
    // The reference drops special ids; the probe contains none.
    ASSERT_EQ(got, want);
  }
}

TEST(Bpe, SpecialsAreAtomicAndNeverMerged) {
  const std::string text =
      "**MOT**: hi \\n\\n **CHI**: hi <|endoftext|>**MOT**: hi <|endoftext|><|pad|><|mask|>";
  const auto tok = Tokenizer::train(text + text + text, 400);
  for (const auto& m : tok.merges()) {
    EXPECT_FALSE(Tokenizer::is_special(m.left));
    EXPECT_FALSE(Tokenizer::is_special(m.right));
    EXPECT_EQ(tok.token_bytes(m.result).find("<|endoftext|>"), std::string::npos);
  }
  EXPECT_EQ(tok.encode("<|endoftext|>"), std::vector<TokenId>{kEndOfTextId});
  EXPECT_EQ(tok.encode("<|pad|><|mask|>"), (std::vector<TokenId>{kPadId, kMaskId}));
  const auto ids = tok.encode("hi <|endoftext|>");
  EXPECT_EQ(ids.back(), kEndOfTextId);
}

TEST(Bpe, EncodeDecodeRoundTripOnFuzzedUtf8) {
  Xoshiro256 rng(31);
  std::string training;
  for (int i = 0; i < 50; ++i) training += random_utf8(rng, 40);
  const auto tok = Tokenizer::train(training, 600);
  EXPECT_TRUE(tok.encode("").empty());
  for (int i = 0; i < 1000; ++i) {
    const auto s = random_utf8(rng, rng.below(60));
    ASSERT_EQ(tok.decode(tok.encode(s)), s);
  }
  EXPECT_EQ(tok.decode(tok.encode("hello **MOT**:")), "hello **MOT**:");
}

TEST(Bpe, DecodeErrors) {
  const Tokenizer tok;
  EXPECT_THROW(tok.decode(std::vector<TokenId>{5000}), ValidationError);
  const std::vector<TokenId> broken{0xE6, 0x97};  // truncated 3-byte sequence
  EXPECT_THROW(tok.decode(broken), RuntimeError);
  EXPECT_EQ(tok.decode(broken, true), "\xEF\xBF\xBD\xEF\xBF\xBD");
}

TEST(Bpe, SaveLoadRoundTrip) {
  const auto tok = Tokenizer::train("the dog sees the dog <|endoftext|> the cat", 300);
  const auto saved = tok.save();
  const auto back = Tokenizer::load(saved);
  EXPECT_EQ(back, tok);
  EXPECT_EQ(back.save(), saved);
  EXPECT_THROW(Tokenizer::load("crlab-bpe 2\n"), ValidationError);
  EXPECT_THROW(Tokenizer::load(saved.substr(0, saved.size() / 2)), ValidationError);
}

TEST(Chunking, CausalSizes) {
  auto sizes = [](std::size_t n, std::size_t ctx) {
    std::vector<TokenId> s(n, 1);
    std::vector<std::size_t> out;
    for (const auto& c : chunk_causal(s, ctx)) {
      EXPECT_EQ(c.loss_mask, std::vector<std::uint8_t>(c.ids.size(), 1));
      out.push_back(c.ids.size());
    }
    return out;
  };
  EXPECT_EQ(sizes(2500, 1024), (std::vector<std::size_t>{1024, 1024, 452}));
  EXPECT_EQ(sizes(1024, 1024), (std::vector<std::size_t>{1024}));
  EXPECT_EQ(sizes(10, 1024), (std::vector<std::size_t>{10}));
  EXPECT_TRUE(sizes(0, 8).empty());
  EXPECT_THROW(chunk_causal(std::vector<TokenId>{1, 2}, 1), ValidationError);
}

TEST(Chunking, PerConversationPadsAndTruncates) {
  const std::vector<TokenId> t{5, 6, 7};
  const auto padded = chunk_per_conversation(t, 5, kPadId);
  EXPECT_EQ(padded.ids, (std::vector<TokenId>{5, 6, 7, kPadId, kPadId}));
  EXPECT_EQ(padded.loss_mask, (std::vector<std::uint8_t>{1, 1, 1, 0, 0}));
  const auto cut = chunk_per_conversation(t, 2, kPadId);
  EXPECT_EQ(cut.ids, (std::vector<TokenId>{5, 6}));
  EXPECT_EQ(cut.loss_mask, (std::vector<std::uint8_t>{1, 1}));
  EXPECT_THROW(chunk_per_conversation(std::vector<TokenId>{}, 4, kPadId), ValidationError);
}
