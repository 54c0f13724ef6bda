#ifndef CRLAB_CORPUS_HPP_
#define CRLAB_CORPUS_HPP_

// Conversation corpora: the in-memory model, the one-line-per-conversation
// file format, raw-document ingestion, subsampling, splitting, and word
// statistics.
//
// On-disk conversation line:
//   **<speaker>**: <text> \n\n **<speaker>**: <text> <|endoftext|>
// where " \n\n " is the literal six-byte sequence space, backslash, 'n',
// backslash, 'n', space. A conversation therefore always fits on one line.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <unordered_set>
#include <utility>
#include <vector>

#include "crlab/error.hpp"
#include "crlab/rng.hpp"

namespace crlab {

inline constexpr std::string_view kNewlineToken = "\\n\\n";
inline constexpr std::string_view kUtteranceSeparator = " \\n\\n ";
inline constexpr std::string_view kEndOfText = "<|endoftext|>";
inline constexpr std::string_view kEndOfTextSuffix = " <|endoftext|>";

enum class Source { natural, synthetic, raw };

inline std::string_view to_string(Source s) {
  switch (s) {
    case Source::natural: return "natural";
    case Source::synthetic: return "synthetic";
    case Source::raw: return "raw";
  }
  return "natural";
}

inline Source parse_source(std::string_view s) {
  if (s == "natural") return Source::natural;
  if (s == "synthetic") return Source::synthetic;
  if (s == "raw") return Source::raw;
  throw ValidationError("unknown source '" + std::string(s) + "'");
}

// An empty speaker marks an unlabeled utterance (raw text, or the result of
// stripping speaker labels).
struct Utterance {
  std::string speaker;
  std::string text;

  bool operator==(const Utterance&) const = default;
  auto operator<=>(const Utterance&) const = default;
};

struct Conversation {
  std::string id;
  std::optional<double> age_months;
  std::vector<Utterance> utterances;
  Source source = Source::natural;

  bool operator==(const Conversation&) const = default;
};

struct Corpus {
  std::string name;
  // Ordered provenance entries, e.g. {"order.mode", "random"}.
  std::vector<std::pair<std::string, std::string>> metadata;
  std::vector<Conversation> conversations;

  std::size_t size() const { return conversations.size(); }
  bool empty() const { return conversations.empty(); }

  void set_meta(const std::string& key, const std::string& value) {
    for (auto& kv : metadata) {
      if (kv.first == key) {
        kv.second = value;
        return;
      }
    }
    metadata.emplace_back(key, value);
  }

  std::optional<std::string> meta(std::string_view key) const {
    for (const auto& kv : metadata)
      if (kv.first == key) return kv.second;
    return std::nullopt;
  }
};

struct CorpusStats {
  std::size_t n_conversations = 0;
  std::size_t total_words = 0;
  std::size_t unique_words = 0;
  double avg_utterances_per_conversation = 0.0;
  double avg_words_per_utterance_excluding_label = 0.0;
};

// ---------------------------------------------------------------------------
// Small text helpers shared by several modules.

namespace text {

inline bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' ||
         c == '\f';
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

// Whitespace word splitting (runs of ASCII whitespace, no empty words).
inline std::vector<std::string_view> split_words(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && is_space(s[i])) ++i;
    const std::size_t start = i;
    while (i < s.size() && !is_space(s[i])) ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

inline std::size_t count_words(std::string_view s) {
  std::size_t n = 0;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && is_space(s[i])) ++i;
    if (i < s.size()) ++n;
    while (i < s.size() && !is_space(s[i])) ++i;
  }
  return n;
}

inline std::vector<std::string_view> split_on(std::string_view s,
                                              std::string_view sep) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t hit = s.find(sep, pos);
    if (hit == std::string_view::npos) {
      out.push_back(s.substr(pos));
      return out;
    }
    out.push_back(s.substr(pos, hit - pos));
    pos = hit + sep.size();
  }
}

inline std::vector<std::string_view> split_lines(std::string_view s) {
  std::vector<std::string_view> lines = split_on(s, "\n");
  if (!lines.empty() && lines.back().empty()) lines.pop_back();
  for (auto& l : lines)
    if (!l.empty() && l.back() == '\r') l.remove_suffix(1);
  return lines;
}

inline std::string to_lower_ascii(std::string_view s) {
  std::string out(s);
  for (auto& c : out)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return out;
}

// Shortest decimal form that round-trips.
inline std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_number(std::string_view s) {
  s = trim(s);
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ValidationError("not a number: '" + std::string(s) + "'");
  return v;
}

// --- UTF-8 / Unicode helpers for the unique-word normalization. ---

struct CodePoint {
  char32_t value;
  std::size_t length;  // bytes consumed; invalid bytes yield length 1
};

inline CodePoint decode_utf8(std::string_view s, std::size_t i) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  auto cont = [&](std::size_t k) -> int {
    if (i + k >= s.size()) return -1;
    const auto b = static_cast<unsigned char>(s[i + k]);
    return (b & 0xC0) == 0x80 ? (b & 0x3F) : -1;
  };
  if (b0 < 0x80) return {b0, 1};
  if ((b0 & 0xE0) == 0xC0) {
    const int c1 = cont(1);
    if (c1 < 0 || b0 < 0xC2) return {0xFFFD, 1};
    return {static_cast<char32_t>(((b0 & 0x1F) << 6) | c1), 2};
  }
  if ((b0 & 0xF0) == 0xE0) {
    const int c1 = cont(1), c2 = cont(2);
    if (c1 < 0 || c2 < 0) return {0xFFFD, 1};
    const char32_t cp = ((b0 & 0x0F) << 12) | (c1 << 6) | c2;
    if (cp < 0x800 || (cp >= 0xD800 && cp <= 0xDFFF)) return {0xFFFD, 1};
    return {cp, 3};
  }
  if ((b0 & 0xF8) == 0xF0) {
    const int c1 = cont(1), c2 = cont(2), c3 = cont(3);
    if (c1 < 0 || c2 < 0 || c3 < 0) return {0xFFFD, 1};
    const char32_t cp = ((b0 & 0x07) << 18) | (c1 << 12) | (c2 << 6) | c3;
    if (cp < 0x10000 || cp > 0x10FFFF) return {0xFFFD, 1};
    return {cp, 4};
  }
  return {0xFFFD, 1};
}

inline void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

inline bool is_valid_utf8(std::string_view s) {
  for (std::size_t i = 0; i < s.size();) {
    const auto cp = decode_utf8(s, i);
    if (cp.value == 0xFFFD && cp.length == 1 &&
        static_cast<unsigned char>(s[i]) >= 0x80)
      return false;
    i += cp.length;
  }
  return true;
}

// Unicode general category P (Pc Pd Ps Pe Pi Pf Po) for the Latin, General
// Punctuation, CJK and fullwidth blocks. Symbols ($ + < = > ^ ` | ~) are S*,
// not P, and are kept.
inline bool is_punctuation(char32_t c) {
  if (c < 0x80) {
    switch (c) {
      case '!': case '"': case '#': case '%': case '&': case '\'':
      case '(': case ')': case '*': case ',': case '-': case '.':
      case '/': case ':': case ';': case '?': case '@': case '[':
      case '\\': case ']': case '_': case '{': case '}':
        return true;
      default:
        return false;
    }
  }
  switch (c) {
    case 0xA1: case 0xA7: case 0xAB: case 0xB6: case 0xB7: case 0xBB:
    case 0xBF: case 0x37E: case 0x387: case 0x55A: case 0x55B: case 0x55C:
    case 0x55D: case 0x55E: case 0x55F: case 0x589: case 0x58A:
    case 0x5BE: case 0x5C0: case 0x5C3: case 0x5C6: case 0x5F3: case 0x5F4:
    case 0x60C: case 0x60D: case 0x61B: case 0x61F: case 0x6D4:
      return true;
    default:
      break;
  }
  if (c >= 0x2010 && c <= 0x2027) return true;
  if (c >= 0x2030 && c <= 0x205E) return c != 0x2044 && c != 0x2052;
  if (c == 0x207D || c == 0x207E || c == 0x208D || c == 0x208E) return true;
  if (c >= 0x2E00 && c <= 0x2E4F) return true;
  if (c >= 0x3001 && c <= 0x3003) return true;
  if (c >= 0x3008 && c <= 0x3011) return true;
  if (c >= 0x3014 && c <= 0x301F) return true;
  if (c == 0x3030 || c == 0x303D || c == 0x30A0 || c == 0x30FB) return true;
  if (c >= 0xFE10 && c <= 0xFE19) return true;
  if (c >= 0xFE30 && c <= 0xFE4F) return true;
  if (c >= 0xFE50 && c <= 0xFE6B)
    return c != 0xFE62 && c != 0xFE64 && c != 0xFE65 && c != 0xFE66 &&
           c != 0xFE69;
  if (c >= 0xFF01 && c <= 0xFF65) {
    switch (c) {
      case 0xFF04: case 0xFF0B: case 0xFF1C: case 0xFF1D: case 0xFF1E:
      case 0xFF3E: case 0xFF40: case 0xFF5C: case 0xFF5E:
        return false;
      default:
        break;
    }
    return (c <= 0xFF0F) || (c >= 0xFF1A && c <= 0xFF20) ||
           (c >= 0xFF3B && c <= 0xFF3F) || (c >= 0xFF5B);
  }
  return false;
}

// Simple case folding for Latin-1, Latin Extended-A, Greek and Cyrillic.
inline char32_t to_lower(char32_t c) {
  if (c >= 'A' && c <= 'Z') return c + 32;
  if ((c >= 0xC0 && c <= 0xDE) && c != 0xD7) return c + 32;
  if (c == 0x178) return 0xFF;
  if (c >= 0x100 && c <= 0x17F && c != 0x130 && c != 0x138 && c != 0x149 &&
      c != 0x17F) {
    const bool odd_upper = (c >= 0x139 && c <= 0x148) || (c >= 0x179);
    if (odd_upper) return (c % 2 == 1) ? c + 1 : c;
    return (c % 2 == 0) ? c + 1 : c;
  }
  if (c >= 0x391 && c <= 0x3AB && c != 0x3A2) return c + 32;
  if (c >= 0x410 && c <= 0x42F) return c + 32;
  if (c >= 0x400 && c <= 0x40F) return c + 80;
  return c;
}

// Lowercase, then strip leading/trailing punctuation; may return "".
inline std::string normalize_word(std::string_view word) {
  std::vector<char32_t> cps;
  for (std::size_t i = 0; i < word.size();) {
    const auto cp = decode_utf8(word, i);
    cps.push_back(to_lower(cp.value));
    i += cp.length;
  }
  std::size_t lo = 0, hi = cps.size();
  while (lo < hi && is_punctuation(cps[lo])) ++lo;
  while (hi > lo && is_punctuation(cps[hi - 1])) --hi;
  std::string out;
  for (std::size_t i = lo; i < hi; ++i) append_utf8(out, cps[i]);
  return out;
}

}  // namespace text

// ---------------------------------------------------------------------------
// Single conversation <-> line.

inline void validate_utterance(const Utterance& u, std::size_t index,
                               bool raw) {
  auto fail = [&](const std::string& why) {
    throw ValidationError("utterance " + std::to_string(index) + ": " + why);
  };
  if (u.speaker.find('*') != std::string::npos) fail("speaker contains '*'");
  if (u.speaker.find('\n') != std::string::npos ||
      u.speaker.find('\r') != std::string::npos)
    fail("speaker contains a newline");
  if (text::trim(u.speaker) != u.speaker)
    fail("speaker has surrounding whitespace");
  if (text::trim(u.text) != u.text)
    fail("text has leading or trailing whitespace");
  if (raw) return;
  if (u.text.find(kNewlineToken) != std::string::npos)
    fail("text contains the utterance separator");
  if (u.text.find(kEndOfText) != std::string::npos)
    fail("text contains the end-of-text literal");
  if (u.text.find('\n') != std::string::npos ||
      u.text.find('\r') != std::string::npos)
    fail("text contains a newline");
}

inline void validate_conversation(const Conversation& c) {
  if (c.age_months && (!std::isfinite(*c.age_months) || *c.age_months < 0.0))
    throw ValidationError("conversation '" + c.id +
                          "': age_months must be finite and >= 0");
  if (c.source != Source::raw && c.utterances.empty())
    throw ValidationError("conversation '" + c.id + "' has no utterances");
  for (std::size_t i = 0; i < c.utterances.size(); ++i)
    validate_utterance(c.utterances[i], i, c.source == Source::raw);
}

inline std::string serialize_utterance(const Utterance& u) {
  if (u.speaker.empty()) return u.text;
  std::string out;
  out.reserve(u.speaker.size() + u.text.size() + 6);
  out += "**";
  out += u.speaker;
  out += "**: ";
  out += u.text;
  return out;
}

// Raw records serialize to their bare text (possibly multi-line) with no
// end-of-text marker; everything else to one conversation line.
inline std::string serialize_conversation(const Conversation& c) {
  validate_conversation(c);
  std::string out;
  if (c.source == Source::raw) {
    for (std::size_t i = 0; i < c.utterances.size(); ++i) {
      if (i) out += "\n";
      out += c.utterances[i].text;
    }
    return out;
  }
  for (std::size_t i = 0; i < c.utterances.size(); ++i) {
    if (i) out += kUtteranceSeparator;
    out += serialize_utterance(c.utterances[i]);
  }
  out += kEndOfTextSuffix;
  return out;
}

struct ParseResult {
  std::vector<Conversation> conversations;
  std::size_t skipped_empty_lines = 0;
};

namespace detail {

inline Utterance parse_utterance(std::string_view piece, std::size_t line_no) {
  Utterance u;
  if (piece.substr(0, 2) != "**") {
    u.text = std::string(text::trim(piece));
    return u;
  }
  const std::size_t close = piece.find("**", 2);
  if (close == std::string_view::npos)
    throw ParseError("unbalanced '**' in speaker label", line_no);
  if (close + 2 >= piece.size() || piece[close + 2] != ':')
    throw ParseError("speaker label not followed by ':'", line_no);
  u.speaker = std::string(piece.substr(2, close - 2));
  if (u.speaker.empty()) throw ParseError("empty speaker label", line_no);
  std::string_view rest = piece.substr(close + 3);
  if (!rest.empty() && rest.front() == ' ') rest.remove_prefix(1);
  u.text = std::string(text::trim(rest));
  return u;
}

}  // namespace detail

inline Conversation parse_conversation_line(std::string_view line,
                                            std::size_t line_no,
                                            Source source = Source::natural) {
  std::string_view body = line;
  if (body.ends_with(kEndOfTextSuffix))
    body.remove_suffix(kEndOfTextSuffix.size());
  else if (body.ends_with(kEndOfText))
    body.remove_suffix(kEndOfText.size());
  Conversation c;
  c.source = source;
  c.id = "line-" + std::to_string(line_no);
  for (std::string_view piece : text::split_on(body, kUtteranceSeparator))
    c.utterances.push_back(detail::parse_utterance(piece, line_no));
  return c;
}

inline ParseResult parse_conversations(std::string_view document,
                                       Source source = Source::natural) {
  ParseResult result;
  const auto lines = text::split_lines(document);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (text::trim(lines[i]).empty()) {
      ++result.skipped_empty_lines;
      continue;
    }
    result.conversations.push_back(
        parse_conversation_line(lines[i], i + 1, source));
  }
  return result;
}

// Blank-line-delimited blocks become raw records with a single unlabeled
// pseudo-utterance. No end-of-text marker is added.
inline Corpus ingest_documents(std::string_view document,
                               std::string name = "raw") {
  Corpus corpus;
  corpus.name = std::move(name);
  std::string block;
  std::size_t index = 0;
  auto flush = [&] {
    const std::string_view trimmed = text::trim(block);
    if (!trimmed.empty()) {
      Conversation c;
      c.source = Source::raw;
      c.id = "doc-" + std::to_string(++index);
      c.utterances.push_back({"", std::string(trimmed)});
      corpus.conversations.push_back(std::move(c));
    }
    block.clear();
  };
  for (std::string_view line : text::split_lines(document)) {
    if (text::trim(line).empty()) {
      flush();
      continue;
    }
    if (!block.empty()) block += '\n';
    block += line;
  }
  flush();
  return corpus;
}

// The exact text a tokenizer sees for one record.
inline std::string training_text(const Conversation& c) {
  std::string out = serialize_conversation(c);
  out += c.source == Source::raw ? "\n\n" : "\n";
  return out;
}

inline std::string corpus_text(const Corpus& corpus) {
  std::string out;
  for (const auto& c : corpus.conversations) out += training_text(c);
  return out;
}

// ---------------------------------------------------------------------------
// Corpus files and the metadata sidecar (id \t age_months \t source).

inline std::string serialize_corpus(const Corpus& corpus) {
  return corpus_text(corpus);
}

inline std::string serialize_sidecar(const Corpus& corpus) {
  std::string out;
  for (const auto& c : corpus.conversations) {
    out += c.id;
    out += '\t';
    if (c.age_months) out += text::format_number(*c.age_months);
    out += '\t';
    out += to_string(c.source);
    out += '\n';
  }
  return out;
}

inline void apply_sidecar(Corpus& corpus, std::string_view sidecar) {
  const auto lines = text::split_lines(sidecar);
  std::vector<std::string_view> records;
  for (auto l : lines)
    if (!text::trim(l).empty()) records.push_back(l);
  if (records.size() != corpus.size())
    throw ValidationError("sidecar has " + std::to_string(records.size()) +
                          " records for " + std::to_string(corpus.size()) +
                          " conversations");
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto fields = text::split_on(records[i], "\t");
    if (fields.size() != 3)
      throw ParseError("sidecar record needs 3 tab-separated fields", i + 1);
    auto& c = corpus.conversations[i];
    c.id = std::string(fields[0]);
    if (!seen.insert(c.id).second)
      throw ParseError("duplicate conversation id '" + c.id + "'", i + 1);
    if (text::trim(fields[1]).empty()) {
      c.age_months.reset();
    } else {
      const double age = text::parse_number(fields[1]);
      if (!std::isfinite(age) || age < 0)
        throw ParseError("age_months must be finite and >= 0", i + 1);
      c.age_months = age;
    }
    c.source = parse_source(text::trim(fields[2]));
  }
}

// Loads a conversation file, or a blank-line-delimited raw file when
// `raw` is set.
inline Corpus load_corpus_text(std::string_view document, bool raw,
                               std::string name = "corpus") {
  if (raw) return ingest_documents(document, std::move(name));
  Corpus corpus;
  corpus.name = std::move(name);
  corpus.conversations = parse_conversations(document).conversations;
  return corpus;
}

inline void validate_corpus(const Corpus& corpus) {
  std::unordered_set<std::string_view> ids;
  for (const auto& c : corpus.conversations) {
    if (!ids.insert(c.id).second)
      throw ValidationError("duplicate conversation id '" + c.id + "'");
    validate_conversation(c);
  }
}

// ---------------------------------------------------------------------------
// Word counting, subsampling, splitting, statistics.

// Space-split words of the serialized utterances: labels count ("**MOT**:"
// is one word), separators and the end-of-text marker do not.
inline std::size_t conversation_words(const Conversation& c) {
  std::size_t n = 0;
  for (const auto& u : c.utterances) {
    if (!u.speaker.empty()) n += text::count_words("**" + u.speaker + "**:");
    n += text::count_words(u.text);
  }
  return n;
}

inline std::size_t corpus_words(const Corpus& corpus) {
  std::size_t n = 0;
  for (const auto& c : corpus.conversations) n += conversation_words(c);
  return n;
}

// Shortest prefix whose cumulative word count reaches the budget.
inline Corpus subsample_in_order(const Corpus& corpus,
                                 std::size_t word_budget) {
  Corpus out;
  out.name = corpus.name;
  out.metadata = corpus.metadata;
  out.set_meta("subsample.word_budget", std::to_string(word_budget));
  std::size_t words = 0;
  for (const auto& c : corpus.conversations) {
    if (words >= word_budget) break;
    out.conversations.push_back(c);
    words += conversation_words(c);
  }
  return out;
}

struct TrainValSplit {
  Corpus train;
  Corpus val;
};

inline std::size_t validation_count(std::size_t n, double train_fraction) {
  const double raw = (1.0 - train_fraction) * static_cast<double>(n);
  auto k = static_cast<std::size_t>(std::ceil(raw - 1e-9));
  return std::clamp<std::size_t>(k, 1, n - 1);
}

inline TrainValSplit split_train_val(const Corpus& corpus,
                                     double train_fraction,
                                     std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ValidationError("train_fraction must lie strictly in (0, 1)");
  const std::size_t n = corpus.size();
  if (n < 2)
    throw ValidationError("split_train_val needs at least 2 conversations");
  const std::size_t k = validation_count(n, train_fraction);

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Xoshiro256 rng(derive_seed_str(seed, "split_train_val"));
  fisher_yates(std::span<std::size_t>(order), rng);
  std::vector<bool> in_val(n, false);
  for (std::size_t i = 0; i < k; ++i) in_val[order[i]] = true;

  TrainValSplit split;
  split.train.name = corpus.name + ".train";
  split.val.name = corpus.name + ".val";
  split.train.metadata = corpus.metadata;
  split.val.metadata = corpus.metadata;
  for (auto* part : {&split.train, &split.val}) {
    part->set_meta("split.train_fraction", text::format_number(train_fraction));
    part->set_meta("split.seed", std::to_string(seed));
  }
  for (std::size_t i = 0; i < n; ++i)
    (in_val[i] ? split.val : split.train)
        .conversations.push_back(corpus.conversations[i]);
  return split;
}

inline CorpusStats corpus_stats(const Corpus& corpus) {
  CorpusStats s;
  s.n_conversations = corpus.size();
  std::size_t utterances = 0;
  std::size_t text_words = 0;
  std::set<std::string> vocab;
  for (const auto& c : corpus.conversations) {
    s.total_words += conversation_words(c);
    utterances += c.utterances.size();
    for (const auto& u : c.utterances) {
      for (auto w : text::split_words(u.text)) {
        ++text_words;
        std::string norm = text::normalize_word(w);
        if (!norm.empty()) vocab.insert(std::move(norm));
      }
    }
  }
  s.unique_words = vocab.size();
  if (s.n_conversations > 0)
    s.avg_utterances_per_conversation =
        static_cast<double>(utterances) / static_cast<double>(s.n_conversations);
  if (utterances > 0)
    s.avg_words_per_utterance_excluding_label =
        static_cast<double>(text_words) / static_cast<double>(utterances);
  return s;
}

// Flat key/value rendering used by the `stats` subcommand.
inline std::string format_stats(const CorpusStats& s) {
  std::ostringstream os;
  os << "n_conversations\t" << s.n_conversations << "\n"
     << "total_words\t" << s.total_words << "\n"
     << "unique_words\t" << s.unique_words << "\n"
     << "avg_utterances_per_conversation\t"
     << text::format_number(s.avg_utterances_per_conversation) << "\n"
     << "avg_words_per_utterance_excluding_label\t"
     << text::format_number(s.avg_words_per_utterance_excluding_label) << "\n";
  return os.str();
}

}  // namespace crlab

#endif  // CRLAB_CORPUS_HPP_
