#ifndef CRLAB_TOKENIZER_HPP_
#define CRLAB_TOKENIZER_HPP_

// Byte-level BPE without pre-tokenization.
//
// Ids 0..255 are the single bytes, 256..258 the special tokens
// (<|endoftext|>, <|pad|>, <|mask|>), and learned tokens follow in order of
// first appearance. A token is identified by its byte string: a merge whose
// concatenation already exists reuses that id. Special literals are cut out
// of the text before training and encoding, so merges never span or produce
// them.
//
// Training picks the most frequent adjacent pair (overlapping occurrences
// counted), breaking frequency ties by the lexicographically smallest
// (left bytes, right bytes). It stops at the requested vocabulary size or
// when no pair occurs at least twice.

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <queue>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "crlab/corpus.hpp"
#include "crlab/error.hpp"

namespace crlab {

using TokenId = std::uint32_t;

inline constexpr std::string_view kPadLiteral = "<|pad|>";
inline constexpr std::string_view kMaskLiteral = "<|mask|>";
inline constexpr TokenId kEndOfTextId = 256;
inline constexpr TokenId kPadId = 257;
inline constexpr TokenId kMaskId = 258;
inline constexpr std::size_t kNumSpecials = 3;
inline constexpr std::size_t kMinVocabSize = 256 + kNumSpecials;
inline constexpr std::size_t kDefaultVocabSize = 8192;

struct TokenChunk {
  std::vector<TokenId> ids;
  std::vector<std::uint8_t> loss_mask;  // 0 exactly on padding

  std::size_t size() const { return ids.size(); }
};

class Tokenizer {
 public:
  struct Merge {
    TokenId left;
    TokenId right;
    TokenId result;
  };

  Tokenizer() {
    tokens_.reserve(kMinVocabSize);
    for (int b = 0; b < 256; ++b) tokens_.emplace_back(1, static_cast<char>(b));
    tokens_.emplace_back(kEndOfText);
    tokens_.emplace_back(kPadLiteral);
    tokens_.emplace_back(kMaskLiteral);
    for (TokenId id = 0; id < 256; ++id) by_bytes_.emplace(tokens_[id], id);
  }

  std::size_t vocab_size() const { return tokens_.size(); }
  const std::vector<Merge>& merges() const { return merges_; }
  const std::string& token_bytes(TokenId id) const { return tokens_.at(id); }

  TokenId eot_id() const { return kEndOfTextId; }
  TokenId pad_id() const { return kPadId; }
  TokenId mask_id() const { return kMaskId; }
  static bool is_special(TokenId id) {
    return id >= 256 && id < 256 + kNumSpecials;
  }

  static Tokenizer train(std::string_view training_text,
                         std::size_t vocab_size);

  static Tokenizer train(const Corpus& corpus, std::size_t vocab_size) {
    return train(corpus_text(corpus), vocab_size);
  }

  std::vector<TokenId> encode(std::string_view text) const {
    std::vector<TokenId> out;
    for_each_segment(text, [&](std::string_view seg, std::optional<TokenId> s) {
      if (s) {
        out.push_back(*s);
      } else {
        encode_segment(seg, out);
      }
    });
    return out;
  }

  // With `lossy`, invalid UTF-8 is replaced by U+FFFD instead of throwing.
  std::string decode(std::span<const TokenId> ids, bool lossy = false) const {
    std::string bytes;
    for (TokenId id : ids) {
      if (id >= tokens_.size())
        throw ValidationError("token id " + std::to_string(id) +
                              " is outside the vocabulary (size " +
                              std::to_string(tokens_.size()) + ")");
      bytes += tokens_[id];
    }
    if (text::is_valid_utf8(bytes)) return bytes;
    if (!lossy) throw RuntimeError("decoded bytes are not valid UTF-8");
    std::string out;
    for (std::size_t i = 0; i < bytes.size();) {
      const auto cp = text::decode_utf8(bytes, i);
      text::append_utf8(out, cp.value);
      i += cp.length;
    }
    return out;
  }

  std::string save() const;
  static Tokenizer load(std::string_view file);

  bool operator==(const Tokenizer& o) const {
    return tokens_ == o.tokens_ && merges_.size() == o.merges_.size() &&
           std::equal(merges_.begin(), merges_.end(), o.merges_.begin(),
                      [](const Merge& a, const Merge& b) {
                        return a.left == b.left && a.right == b.right &&
                               a.result == b.result;
                      });
  }

 private:
  static std::uint64_t pair_key(TokenId a, TokenId b) {
    return (static_cast<std::uint64_t>(a) << 32) | b;
  }

  // Splits text into ordinary segments and special-token literals.
  template <typename F>
  static void for_each_segment(std::string_view text, F&& f) {
    static constexpr std::array<std::pair<std::string_view, TokenId>, 3>
        kSpecials{{{kEndOfText, kEndOfTextId},
                   {kPadLiteral, kPadId},
                   {kMaskLiteral, kMaskId}}};
    std::size_t start = 0;
    std::size_t pos = 0;
    while ((pos = text.find("<|", pos)) != std::string_view::npos) {
      bool matched = false;
      for (const auto& [lit, id] : kSpecials) {
        if (text.substr(pos, lit.size()) == lit) {
          if (pos > start) f(text.substr(start, pos - start), std::nullopt);
          f(lit, id);
          pos += lit.size();
          start = pos;
          matched = true;
          break;
        }
      }
      if (!matched) ++pos;
    }
    if (start < text.size()) f(text.substr(start), std::nullopt);
  }

  TokenId add_token(std::string bytes) {
    auto it = by_bytes_.find(bytes);
    if (it != by_bytes_.end()) return it->second;
    const auto id = static_cast<TokenId>(tokens_.size());
    by_bytes_.emplace(bytes, id);
    tokens_.push_back(std::move(bytes));
    return id;
  }

  void add_merge(TokenId left, TokenId right) {
    const TokenId result = add_token(tokens_[left] + tokens_[right]);
    rank_.emplace(pair_key(left, right), static_cast<std::uint32_t>(merges_.size()));
    merges_.push_back({left, right, result});
  }

  void encode_segment(std::string_view seg, std::vector<TokenId>& out) const;

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> by_bytes_;  // non-special tokens
  std::vector<Merge> merges_;
  std::unordered_map<std::uint64_t, std::uint32_t> rank_;
};

// ---------------------------------------------------------------------------

inline void Tokenizer::encode_segment(std::string_view seg,
                                      std::vector<TokenId>& out) const {
  const std::size_t n = seg.size();
  if (n == 0) return;
  std::vector<TokenId> sym(n);
  std::vector<std::int64_t> prev(n), next(n);
  std::vector<bool> alive(n, true);
  for (std::size_t i = 0; i < n; ++i) {
    sym[i] = static_cast<unsigned char>(seg[i]);
    prev[i] = static_cast<std::int64_t>(i) - 1;
    next[i] = i + 1 < n ? static_cast<std::int64_t>(i + 1) : -1;
  }
  // (rank, left position); the smallest rank wins, then the leftmost.
  using Entry = std::pair<std::uint32_t, std::int64_t>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap;
  auto push = [&](std::int64_t i) {
    if (i < 0 || next[i] < 0) return;
    auto it = rank_.find(pair_key(sym[i], sym[next[i]]));
    if (it != rank_.end()) heap.emplace(it->second, i);
  };
  for (std::size_t i = 0; i + 1 < n; ++i) push(static_cast<std::int64_t>(i));
  while (!heap.empty()) {
    const auto [rank, i] = heap.top();
    heap.pop();
    if (!alive[i] || next[i] < 0) continue;
    const Merge& m = merges_[rank];
    const std::int64_t j = next[i];
    if (sym[i] != m.left || sym[j] != m.right) continue;
    sym[i] = m.result;
    alive[j] = false;
    next[i] = next[j];
    if (next[j] >= 0) prev[next[j]] = i;
    push(prev[i]);
    push(i);
  }
  for (std::int64_t i = 0; i >= 0; i = next[i]) out.push_back(sym[i]);
}

inline Tokenizer Tokenizer::train(std::string_view training_text,
                                  std::size_t vocab_size) {
  if (vocab_size < kMinVocabSize)
    throw ValidationError("vocab_size " + std::to_string(vocab_size) +
                          " is below the minimum of " +
                          std::to_string(kMinVocabSize) +
                          " (256 bytes + 3 specials)");
  Tokenizer tok;

  // One flat symbol array; -1 links mark segment boundaries.
  std::vector<TokenId> sym;
  std::vector<std::int64_t> prev, next;
  for_each_segment(training_text,
                   [&](std::string_view seg, std::optional<TokenId> special) {
                     if (special || seg.empty()) return;
                     const auto base = static_cast<std::int64_t>(sym.size());
                     for (std::size_t i = 0; i < seg.size(); ++i) {
                       sym.push_back(static_cast<unsigned char>(seg[i]));
                       prev.push_back(i == 0 ? -1 : base + i - 1);
                       next.push_back(i + 1 < seg.size() ? base + i + 1 : -1);
                     }
                   });
  constexpr TokenId kDead = ~TokenId{0};

  std::unordered_map<std::uint64_t, std::int64_t> counts;
  std::unordered_map<std::uint64_t, std::vector<std::int64_t>> where;
  for (std::size_t i = 0; i < sym.size(); ++i) {
    if (next[i] < 0) continue;
    const auto key = pair_key(sym[i], sym[next[i]]);
    ++counts[key];
    where[key].push_back(static_cast<std::int64_t>(i));
  }

  struct Candidate {
    std::int64_t count;
    TokenId left;
    TokenId right;
  };
  const auto& tokens = tok.tokens_;
  // "Less" means lower priority: fewer occurrences, then larger bytes.
  auto lower_priority = [&tokens](const Candidate& a, const Candidate& b) {
    if (a.count != b.count) return a.count < b.count;
    const int l = tokens[a.left].compare(tokens[b.left]);
    if (l != 0) return l > 0;
    return tokens[a.right].compare(tokens[b.right]) > 0;
  };
  std::priority_queue<Candidate, std::vector<Candidate>,
                      decltype(lower_priority)>
      heap(lower_priority);
  for (const auto& [key, c] : counts)
    heap.push({c, static_cast<TokenId>(key >> 32),
               static_cast<TokenId>(key & 0xFFFFFFFFu)});

  std::vector<std::uint64_t> touched;
  auto bump = [&](TokenId a, TokenId b, std::int64_t delta, std::int64_t pos) {
    const auto key = pair_key(a, b);
    counts[key] += delta;
    if (delta > 0) where[key].push_back(pos);
    touched.push_back(key);
  };

  while (tok.vocab_size() < vocab_size && !heap.empty()) {
    const Candidate best = heap.top();
    heap.pop();
    const auto key = pair_key(best.left, best.right);
    auto cit = counts.find(key);
    if (cit == counts.end() || cit->second != best.count) continue;  // stale
    if (best.count < 2) break;

    tok.add_merge(best.left, best.right);
    const TokenId merged = tok.merges_.back().result;

    std::vector<std::int64_t> positions = std::move(where[key]);
    where.erase(key);
    std::sort(positions.begin(), positions.end());
    positions.erase(std::unique(positions.begin(), positions.end()),
                    positions.end());
    touched.clear();
    for (std::int64_t i : positions) {
      if (sym[i] != best.left) continue;
      const std::int64_t j = next[i];
      if (j < 0 || sym[j] != best.right) continue;
      const std::int64_t p = prev[i];
      const std::int64_t q = next[j];
      if (p >= 0) bump(sym[p], sym[i], -1, p);
      if (q >= 0) bump(sym[j], sym[q], -1, j);
      bump(sym[i], sym[j], -1, i);
      sym[i] = merged;
      sym[j] = kDead;
      next[i] = q;
      if (q >= 0) prev[q] = i;
      if (p >= 0) bump(sym[p], sym[i], +1, p);
      if (q >= 0) bump(sym[i], sym[q], +1, i);
    }
    std::sort(touched.begin(), touched.end());
    touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
    for (auto t : touched) {
      auto it = counts.find(t);
      if (it == counts.end()) continue;
      if (it->second <= 0) {
        counts.erase(it);
        where.erase(t);
        continue;
      }
      heap.push({it->second, static_cast<TokenId>(t >> 32),
                 static_cast<TokenId>(t & 0xFFFFFFFFu)});
    }
  }
  return tok;
}

// ---------------------------------------------------------------------------
// File format (text, versioned):
//   crlab-bpe 1
//   vocab_size <n>
//   special endoftext 256
//   special pad 257
//   special mask 258
//   merges <m>
//   <left bytes hex> <right bytes hex>      (m lines, in learned order)
// Lines starting with '#' are comments.

namespace detail {

inline std::string to_hex(std::string_view bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (unsigned char c : bytes) {
    out.push_back(kDigits[c >> 4]);
    out.push_back(kDigits[c & 15]);
  }
  return out;
}

inline std::string from_hex(std::string_view hex, std::size_t line) {
  auto nibble = [&](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    throw ParseError("invalid hex digit", line);
  };
  if (hex.empty() || hex.size() % 2)
    throw ParseError("hex byte sequence has odd or zero length", line);
  std::string out;
  for (std::size_t i = 0; i < hex.size(); i += 2)
    out.push_back(static_cast<char>(nibble(hex[i]) * 16 + nibble(hex[i + 1])));
  return out;
}

}  // namespace detail

inline std::string Tokenizer::save() const {
  std::ostringstream os;
  os << "crlab-bpe 1\n"
     << "vocab_size " << vocab_size() << "\n"
     << "special endoftext " << kEndOfTextId << "\n"
     << "special pad " << kPadId << "\n"
     << "special mask " << kMaskId << "\n"
     << "merges " << merges_.size() << "\n";
  for (const auto& m : merges_)
    os << detail::to_hex(tokens_[m.left]) << ' '
       << detail::to_hex(tokens_[m.right]) << '\n';
  return os.str();
}

inline Tokenizer Tokenizer::load(std::string_view file) {
  const auto all = text::split_lines(file);
  std::vector<std::pair<std::size_t, std::string_view>> lines;
  for (std::size_t i = 0; i < all.size(); ++i)
    if (!all[i].empty() && all[i].front() != '#') lines.emplace_back(i + 1, all[i]);

  std::size_t cur = 0;
  auto expect = [&](std::string_view key) -> std::string_view {
    if (cur >= lines.size())
      throw ParseError("unexpected end of tokenizer file", all.size());
    auto [no, line] = lines[cur++];
    if (!line.starts_with(key))
      throw ParseError("expected '" + std::string(key) + "'", no);
    return text::trim(line.substr(key.size()));
  };
  if (expect("crlab-bpe") != "1")
    throw ParseError("unsupported tokenizer format version", lines[0].first);
  const auto vocab =
      static_cast<std::size_t>(text::parse_number(expect("vocab_size")));
  if (expect("special endoftext") != "256" || expect("special pad") != "257" ||
      expect("special mask") != "258")
    throw ParseError("unexpected special token ids", lines[cur - 1].first);
  const auto n_merges =
      static_cast<std::size_t>(text::parse_number(expect("merges")));
  if (lines.size() - cur != n_merges)
    throw ParseError("merge count does not match header", lines.back().first);

  Tokenizer tok;
  for (; cur < lines.size(); ++cur) {
    auto [no, line] = lines[cur];
    const auto fields = text::split_words(line);
    if (fields.size() != 2) throw ParseError("merge needs two fields", no);
    auto left = tok.by_bytes_.find(detail::from_hex(fields[0], no));
    auto right = tok.by_bytes_.find(detail::from_hex(fields[1], no));
    if (left == tok.by_bytes_.end() || right == tok.by_bytes_.end())
      throw ParseError("merge refers to an unknown token", no);
    tok.add_merge(left->second, right->second);
  }
  if (tok.vocab_size() != vocab)
    throw ParseError("vocab_size does not match the merges", lines[0].first);
  return tok;
}

// ---------------------------------------------------------------------------
// Chunking.

// Consecutive, non-overlapping chunks; the final short remainder is kept.
inline std::vector<TokenChunk> chunk_causal(std::span<const TokenId> stream,
                                            std::size_t context_length) {
  if (context_length < 2)
    throw ValidationError("context_length must be >= 2");
  std::vector<TokenChunk> chunks;
  for (std::size_t start = 0; start < stream.size(); start += context_length) {
    const std::size_t len = std::min(context_length, stream.size() - start);
    TokenChunk c;
    c.ids.assign(stream.begin() + start, stream.begin() + start + len);
    c.loss_mask.assign(len, 1);
    chunks.push_back(std::move(c));
  }
  return chunks;
}

// One conversation per example: truncate, or right-pad with `pad_id`.
inline TokenChunk chunk_per_conversation(std::span<const TokenId> tokens,
                                         std::size_t context_length,
                                         TokenId pad_id) {
  if (context_length < 2)
    throw ValidationError("context_length must be >= 2");
  if (tokens.empty())
    throw ValidationError("cannot build a chunk from an empty conversation");
  TokenChunk c;
  const std::size_t keep = std::min(context_length, tokens.size());
  c.ids.assign(tokens.begin(), tokens.begin() + keep);
  c.loss_mask.assign(keep, 1);
  c.ids.resize(context_length, pad_id);
  c.loss_mask.resize(context_length, 0);
  return c;
}

}  // namespace crlab

#endif  // CRLAB_TOKENIZER_HPP_
