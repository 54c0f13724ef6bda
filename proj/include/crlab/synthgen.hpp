#ifndef CRLAB_SYNTHGEN_HPP_
#define CRLAB_SYNTHGEN_HPP_

// Synthetic dialogues in the shape of the TinyDialogues collection: the
// generation prompt, an offline template grammar that needs no network, a
// chat-completion client behind a swappable transport, and parsing of the
// completion's PARTICIPANTS / SETTING / DIALOGUE sections.

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "crlab/corpus.hpp"
#include "crlab/error.hpp"
#include "crlab/evalstats.hpp"
#include "crlab/rng.hpp"

namespace crlab {

inline constexpr std::array<int, 4> kSeedAges{2, 5, 10, 15};

inline bool is_seed_age(int age) {
  return std::find(kSeedAges.begin(), kSeedAges.end(), age) != kSeedAges.end();
}

inline std::string_view age_noun(int age) {
  if (age == 2) return "toddler";
  if (age == 15) return "teenager";
  return "child";
}

enum class ConversationType { explanatory, functional, narrative, argumentative };

inline constexpr std::array<ConversationType, 4> kConversationTypes{
    ConversationType::explanatory, ConversationType::functional,
    ConversationType::narrative, ConversationType::argumentative};

inline std::string_view to_string(ConversationType t) {
  switch (t) {
    case ConversationType::explanatory: return "explanatory";
    case ConversationType::functional: return "functional";
    case ConversationType::narrative: return "narrative";
    case ConversationType::argumentative: return "argumentative";
  }
  return "explanatory";
}

inline ConversationType parse_conversation_type(std::string_view s) {
  for (auto t : kConversationTypes)
    if (to_string(t) == s) return t;
  throw ValidationError("unknown conversation type '" + std::string(s) + "'");
}

inline std::string type_explanation(ConversationType t, int age) {
  switch (t) {
    case ConversationType::explanatory:
      return "It should involve explaining something(s) and potentially "
             "answering question(s).";
    case ConversationType::functional:
      return "It should involve attempting to get something(s) done or "
             "accomplishing particular goal(s).";
    case ConversationType::narrative:
      return "It should involve telling a story (real or fictional) or "
             "sharing/recounting an experience.";
    case ConversationType::argumentative:
      return "It should involve conflict(s) or disagreement(s) that lead to an "
             "argument. In most cases, the argument should be resolved, "
             "resulting in the " + std::string(age_noun(age)) + " learning.";
  }
  return {};
}

// Other participants a conversation at each seed age may include.
inline const std::vector<std::string_view>& allowed_participants(int age) {
  static const std::vector<std::string_view> two{"mom", "dad", "older sibling",
                                                 "babysitter"};
  static const std::vector<std::string_view> mid{
      "mom",    "dad",       "older sibling", "younger sibling", "teacher",
      "friend", "classmate", "grandparent",   "babysitter",      "neighbor"};
  static const std::vector<std::string_view> teen{
      "mom",       "dad",         "older sibling", "younger sibling", "teacher",
      "friend",    "classmate",   "grandparent",   "neighbor",        "coach",
      "tutor",     "boyfriend",   "girlfriend"};
  if (age == 2) return two;
  if (age == 15) return teen;
  if (age == 5 || age == 10) return mid;
  throw ValidationError("age must be one of 2, 5, 10, 15 (got " +
                        std::to_string(age) + ")");
}

struct RequiredWords {
  std::string noun;
  std::string verb;
  std::string adjective;

  bool operator==(const RequiredWords&) const = default;
};

struct DialogueSpec {
  int age = 5;
  int turns = 5;
  ConversationType type = ConversationType::explanatory;
  RequiredWords words;
  std::vector<std::string> participants;  // entries of allowed_participants
  std::uint64_t seed = 0;

  void validate() const {
    if (!is_seed_age(age))
      throw ValidationError("age must be one of 2, 5, 10, 15 (got " +
                            std::to_string(age) + ")");
    if (turns != 5 && turns != 10)
      throw ValidationError("turns must be 5 or 10 (got " +
                            std::to_string(turns) + ")");
    const std::size_t want = turns == 5 ? 1 : 2;
    if (participants.size() != want)
      throw ValidationError(std::to_string(turns) + "-turn dialogues need " +
                            std::to_string(want) + " participant(s), got " +
                            std::to_string(participants.size()));
    const auto& table = allowed_participants(age);
    for (const auto& p : participants)
      if (std::find(table.begin(), table.end(), p) == table.end())
        throw ValidationError("participant '" + p + "' is not allowed at age " +
                              std::to_string(age));
    const std::pair<const char*, const std::string*> words_by_pos[] = {
        {"noun", &words.noun}, {"verb", &words.verb}, {"adjective", &words.adjective}};
    for (const auto& [pos, w] : words_by_pos) {
      if (w->empty()) throw ValidationError(std::string("required ") + pos + " is empty");
      if (text::to_lower_ascii(*w) != *w)
        throw ValidationError(std::string("required ") + pos + " '" + *w +
                              "' must be lowercase");
    }
  }

  bool operator==(const DialogueSpec&) const = default;
};

namespace detail {

inline std::string title_case(std::string_view s) {
  std::string out(s);
  bool start = true;
  for (auto& c : out) {
    if (start && c >= 'a' && c <= 'z') c = static_cast<char>(c - 32);
    start = c == ' ';
  }
  return out;
}

inline std::string join_list(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += i + 1 == items.size() ? " and " : ", ";
    out += items[i];
  }
  return out;
}

}  // namespace detail

// Speaker labels for the non-child participants; repeated roles are numbered.
inline std::vector<std::string> participant_labels(const DialogueSpec& spec) {
  std::map<std::string, int> total, seen;
  for (const auto& p : spec.participants) ++total[p];
  std::vector<std::string> out;
  for (const auto& p : spec.participants) {
    std::string label = detail::title_case(p);
    if (total[p] > 1) label += " " + std::to_string(++seen[p]);
    out.push_back(std::move(label));
  }
  return out;
}

inline std::string child_label(int age) {
  return detail::title_case(age_noun(age));
}

inline std::string build_prompt(const DialogueSpec& spec) {
  spec.validate();
  const std::string age = std::to_string(spec.age);
  const std::string noun(age_noun(spec.age));
  const std::string who = age + "-year-old " + noun;
  std::string p;
  p += "Please construct a realistic, approximately " + std::to_string(spec.turns) +
       "-turn dialogue directly involving a " + who + " as a participant. ";
  p += "The " + noun +
       " is the central participant in the dialogue, with most/all speech "
       "directed towards them. ";
  p += "Hence, for this dialogue, please limit the vocabulary to that of which a "
       "typical " + who + " would understand. ";
  p += "The dialogue should be " + std::string(to_string(spec.type)) + ". " +
       type_explanation(spec.type, spec.age) + " ";
  p += "The dialogue should use the verb `" + spec.words.verb + "', the noun `" +
       spec.words.noun + "', and the adjective `" + spec.words.adjective + "'. ";
  p += "Please include the following participants along with the child: " +
       detail::join_list(spec.participants) + ". ";
  p += "Participant labels should be surrounded by double asterisks, i.e. "
       "`**participant**'. ";
  p += "If there are several of the same type of participant (e.g. multiple "
       "friends or classmates), please label them distinctly, e.g. `**Friend 1**' "
       "and `**Friend 2**'. ";
  p += "Please list and describe the participants after `PARTICIPANTS:', briefly "
       "describe the context/setting of the dialogue after `SETTING:', and present "
       "the dialogue itself after `DIALOGUE:'. ";
  p += "The turns of the dialogue should be separated by `\\n\\n'. ";
  p += "Remember, please ensure the dialogue is realistic, and one that would "
       "likely occur in the real world directly involving a " + who + ".";
  return p;
}

// ---------------------------------------------------------------------------
// Age lexicon and English number morphology.

enum class PartOfSpeech { noun, verb, adjective };

inline std::string_view to_string(PartOfSpeech p) {
  switch (p) {
    case PartOfSpeech::noun: return "noun";
    case PartOfSpeech::verb: return "verb";
    case PartOfSpeech::adjective: return "adjective";
  }
  return "noun";
}

inline PartOfSpeech parse_pos(std::string_view s) {
  if (s == "noun") return PartOfSpeech::noun;
  if (s == "verb") return PartOfSpeech::verb;
  if (s == "adjective" || s == "adj") return PartOfSpeech::adjective;
  throw ValidationError("unknown part of speech '" + std::string(s) + "'");
}

struct LexiconEntry {
  std::string word;
  PartOfSpeech pos = PartOfSpeech::noun;
  int min_age = 2;
};

// Words are available from their min_age on, so lexicon(a) is a subset of
// lexicon(b) whenever a <= b.
class AgeLexicon {
 public:
  void add(LexiconEntry e) {
    if (e.word.empty()) throw ValidationError("lexicon word is empty");
    if (text::to_lower_ascii(e.word) != e.word || e.word.find(' ') != std::string::npos)
      throw ValidationError("lexicon word '" + e.word +
                            "' must be a single lowercase token");
    if (!is_seed_age(e.min_age))
      throw ValidationError("lexicon word '" + e.word + "' has min_age " +
                            std::to_string(e.min_age) + " (expected 2, 5, 10 or 15)");
    for (const auto& x : entries_)
      if (x.word == e.word && x.pos == e.pos)
        throw ValidationError("duplicate lexicon entry '" + e.word + "'");
    entries_.push_back(std::move(e));
  }

  static AgeLexicon parse(std::string_view file) {
    AgeLexicon lex;
    const auto lines = text::split_lines(file);
    for (std::size_t i = 0; i < lines.size(); ++i) {
      const auto line = text::trim(lines[i]);
      if (line.empty() || line.front() == '#') continue;
      const auto f = text::split_on(line, "\t");
      if (f.size() != 3) throw ParseError("expected word, pos, min_age", i + 1);
      LexiconEntry e;
      e.word = std::string(text::trim(f[0]));
      try {
        e.pos = parse_pos(text::trim(f[1]));
        e.min_age = static_cast<int>(text::parse_number(f[2]));
        lex.add(std::move(e));
      } catch (const ParseError&) {
        throw;
      } catch (const ValidationError& err) {
        throw ParseError(err.what(), i + 1);
      }
    }
    return lex;
  }

  std::vector<std::string> words(int age, PartOfSpeech pos) const {
    std::vector<std::string> out;
    for (const auto& e : entries_)
      if (e.pos == pos && e.min_age <= age) out.push_back(e.word);
    return out;
  }

  std::vector<LexiconEntry> at_age(int age) const {
    std::vector<LexiconEntry> out;
    for (const auto& e : entries_)
      if (e.min_age <= age) out.push_back(e);
    return out;
  }

  const std::vector<LexiconEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

 private:
  std::vector<LexiconEntry> entries_;
};

namespace detail {

inline bool is_vowel(char c) {
  return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u';
}

inline bool sibilant_end(std::string_view w) {
  return w.ends_with("s") || w.ends_with("x") || w.ends_with("z") ||
         w.ends_with("ch") || w.ends_with("sh");
}

inline const std::map<std::string, std::string, std::less<>>& irregular_plurals() {
  static const std::map<std::string, std::string, std::less<>> m{
      {"foot", "feet"},   {"tooth", "teeth"}, {"mouse", "mice"},
      {"goose", "geese"}, {"leaf", "leaves"}, {"knife", "knives"},
      {"wolf", "wolves"}, {"man", "men"},     {"woman", "women"},
      {"person", "people"}, {"sheep", "sheep"}, {"fish", "fish"}};
  return m;
}

}  // namespace detail

inline std::string regular_plural(std::string_view noun) {
  std::string w(noun);
  if (detail::sibilant_end(w)) return w + "es";
  if (w.size() > 1 && w.back() == 'y' && !detail::is_vowel(w[w.size() - 2]))
    return w.substr(0, w.size() - 1) + "ies";
  return w + "s";
}

inline std::string plural(std::string_view noun) {
  const auto& irr = detail::irregular_plurals();
  if (auto it = irr.find(noun); it != irr.end()) return it->second;
  return regular_plural(noun);
}

inline bool has_irregular_plural(std::string_view noun) {
  const auto& irr = detail::irregular_plurals();
  auto it = irr.find(noun);
  return it != irr.end() && it->second != regular_plural(noun);
}

inline std::string third_person(std::string_view verb) {
  std::string w(verb);
  if (w == "have") return "has";
  if (w == "be") return "is";
  if (detail::sibilant_end(w) || w == "go" || w == "do") return w + "es";
  if (w.size() > 1 && w.back() == 'y' && !detail::is_vowel(w[w.size() - 2]))
    return w.substr(0, w.size() - 1) + "ies";
  return w + "s";
}

// ---------------------------------------------------------------------------
// Offline template grammar.

namespace detail {

class Picker {
 public:
  explicit Picker(std::uint64_t seed) : rng_(seed) {}

  template <typename C>
  const auto& one(const C& items) {
    return items[rng_.below(items.size())];
  }
  std::size_t below(std::size_t n) { return rng_.below(n); }

 private:
  Xoshiro256 rng_;
};

struct Vocab {
  std::vector<std::string> nouns, verbs, adjectives;
};

inline Vocab vocab_for(const AgeLexicon& lex, int age) {
  Vocab v{lex.words(age, PartOfSpeech::noun), lex.words(age, PartOfSpeech::verb),
          lex.words(age, PartOfSpeech::adjective)};
  if (v.nouns.size() < 2 || v.verbs.empty() || v.adjectives.empty())
    throw ValidationError("lexicon needs at least 2 nouns, 1 verb and 1 adjective "
                          "available at age " + std::to_string(age));
  return v;
}

// Sentences in which number agreement is always grammatical. These are the
// frames the bundled minimal-pair suite is built from.
inline std::string agreement_sentence(Picker& pk, const Vocab& v) {
  const auto& n = pk.one(v.nouns);
  const auto& verb = pk.one(v.verbs);
  const auto& a = pk.one(v.adjectives);
  const auto& n2 = pk.one(v.nouns);
  const bool pl = pk.below(2) == 1;
  const std::string subj = pl ? plural(n) : n;
  const std::string vf = pl ? verb : third_person(verb);
  switch (pk.below(8)) {
    case 0: return "the " + subj + " " + vf + " .";
    case 1: return "the " + subj + " " + vf + " with the " + n2 + " .";
    case 2: return "the " + a + " " + subj + " " + vf + " .";
    case 3: return (pl ? "these " : "this ") + subj + " " + vf + " .";
    case 4: return (pl ? "these " : "this ") + subj + (pl ? " are " : " is ") + a + " .";
    case 5: return std::string("look at ") + (pl ? "these " : "this ") + subj + " .";
    case 6: return "my " + subj + " " + vf + " every day .";
    default: return pl ? "i see two " + subj + " ." : "where is the " + subj + " ?";
  }
}

inline std::string type_sentence(Picker& pk, const Vocab& v, ConversationType t) {
  const auto& n = pk.one(v.nouns);
  const auto& verb = pk.one(v.verbs);
  const auto& a = pk.one(v.adjectives);
  switch (t) {
    case ConversationType::explanatory:
      switch (pk.below(4)) {
        case 0: return "why is the " + n + " " + a + " ?";
        case 1: return "that is how we " + verb + " .";
        case 2: return "because the " + n + " is " + a + " .";
        default: return "let me show you how to " + verb + " .";
      }
    case ConversationType::functional:
      switch (pk.below(4)) {
        case 0: return "can you help me " + verb + " ?";
        case 1: return "first we " + verb + " , then we clean up .";
        case 2: return "please give me the " + n + " .";
        default: return "we need a " + a + " " + n + " .";
      }
    case ConversationType::narrative:
      switch (pk.below(4)) {
        case 0: return "once upon a time there was a " + a + " " + n + " .";
        case 1: return "every day the " + n + " " + third_person(verb) + " .";
        case 2: return "and then the " + plural(n) + " " + verb + " .";
        default: return "it was a " + a + " day .";
      }
    case ConversationType::argumentative:
      switch (pk.below(4)) {
        case 0: return "no , i want the " + n + " !";
        case 1: return "but the " + n + " is mine !";
        case 2: return "okay , we can share the " + plural(n) + " .";
        default: return "you are right , i am sorry .";
      }
  }
  return "okay .";
}

inline std::string required_sentence(Picker& pk, PartOfSpeech pos,
                                     const std::string& w) {
  switch (pos) {
    case PartOfSpeech::noun: {
      static const std::array<std::string_view, 3> f{"do you see the ", "i like the ",
                                                     "where is the "};
      const auto lead = pk.one(f);
      return std::string(lead) + w + (lead == f[1] ? " ." : " ?");
    }
    case PartOfSpeech::verb: {
      static const std::array<std::string_view, 3> f{"can we ", "i want to ",
                                                     "let us "};
      const auto lead = pk.one(f);
      return std::string(lead) + w + (lead == f[0] ? " now ?" : " .");
    }
    case PartOfSpeech::adjective: {
      static const std::array<std::string_view, 3> f{"it is so ", "that looks ",
                                                     "wow , so "};
      const auto lead = pk.one(f);
      return std::string(lead) + w + (lead == f[1] ? " ." : " !");
    }
  }
  return w;
}

inline constexpr std::array<std::string_view, 5> kGreetings{
    "hi , sweetie .", "good morning !", "hey , look at this .", "hello there !",
    "come here , please ."};
inline constexpr std::array<std::string_view, 5> kClosings{
    "okay , bye !", "thank you !", "that was fun .", "good job !", "see you soon ."};
inline constexpr std::array<std::string_view, 5> kReplies{
    "okay !", "yes !", "why ?", "really ?", "i know ."};

}  // namespace detail

// A seeded, format-valid dialogue with the spec's participants plus the
// target child. Between turns and 2 * turns utterances; the first utterance
// greets, the last closes, and three distinct body utterances carry the
// required noun, verb and adjective.
inline Conversation generate_offline(const DialogueSpec& spec, const AgeLexicon& lex) {
  spec.validate();
  const std::pair<PartOfSpeech, const std::string*> required[] = {
      {PartOfSpeech::noun, &spec.words.noun},
      {PartOfSpeech::verb, &spec.words.verb},
      {PartOfSpeech::adjective, &spec.words.adjective}};
  for (const auto& [pos, w] : required) {
    if (w->find_first_of(" \t\r\n*") != std::string::npos ||
        w->find(kNewlineToken) != std::string::npos ||
        w->find(kEndOfText) != std::string::npos)
      throw RuntimeError("required " + std::string(to_string(pos)) + " '" + *w +
                         "' does not fit any template slot");
  }
  const auto vocab = detail::vocab_for(lex, spec.age);
  detail::Picker pk(derive_seed_str(spec.seed, "generate_offline"));

  const auto others = participant_labels(spec);
  const std::string child = child_label(spec.age);
  const std::size_t turns = static_cast<std::size_t>(spec.turns);
  const std::size_t count = turns + pk.below(turns + 1);

  // Body positions 1..count-2 hold the required words, one each.
  std::vector<std::size_t> body(count - 2);
  for (std::size_t i = 0; i < body.size(); ++i) body[i] = i + 1;
  Xoshiro256 slot_rng(derive_seed_str(spec.seed, "required_slots"));
  fisher_yates(std::span<std::size_t>(body), slot_rng);

  Conversation c;
  c.source = Source::synthetic;
  c.age_months = spec.age * 12.0;
  c.id = "offline-" + std::to_string(spec.age) + "-" + std::to_string(spec.seed);
  std::size_t next_other = 0;
  for (std::size_t i = 0; i < count; ++i) {
    Utterance u;
    const bool child_turn = i % 2 == 1;
    u.speaker = child_turn ? child : others[next_other++ % others.size()];
    std::string s;
    if (i == 0) {
      s = std::string(pk.one(detail::kGreetings));
    } else if (i + 1 == count) {
      s = std::string(pk.one(detail::kClosings));
    } else if (child_turn && spec.age == 2 && pk.below(2) == 0) {
      s = std::string(pk.one(detail::kReplies));
    } else {
      s = pk.below(2) ? detail::agreement_sentence(pk, vocab)
                      : detail::type_sentence(pk, vocab, spec.type);
      if (!child_turn || spec.age > 2)
        s += " " + detail::agreement_sentence(pk, vocab);
    }
    for (std::size_t k = 0; k < 3; ++k)
      if (body[k] == i)
        s += " " + detail::required_sentence(pk, required[k].first, *required[k].second);
    u.text = std::move(s);
    c.utterances.push_back(std::move(u));
  }
  return c;
}

// Draws a valid spec for `age` whose required words come from the lexicon.
inline DialogueSpec random_spec(int age, const AgeLexicon& lex, std::uint64_t seed) {
  detail::Picker pk(derive_seed_str(seed, "random_spec"));
  const auto vocab = detail::vocab_for(lex, age);
  DialogueSpec s;
  s.age = age;
  s.turns = pk.below(2) ? 10 : 5;
  s.type = pk.one(kConversationTypes);
  s.words = {pk.one(vocab.nouns), pk.one(vocab.verbs), pk.one(vocab.adjectives)};
  const auto& table = allowed_participants(age);
  for (int i = 0; i < (s.turns == 5 ? 1 : 2); ++i)
    s.participants.emplace_back(pk.one(table));
  s.seed = seed;
  return s;
}

// ---------------------------------------------------------------------------
// Target-child label normalization.

inline bool is_target_child_alias(std::string_view label) {
  std::string l = text::to_lower_ascii(text::trim(label));
  static const std::array<std::string_view, 5> nouns{"child", "toddler", "teenager",
                                                     "teen", "kid"};
  auto is_noun = [&](std::string_view w) {
    return std::find(nouns.begin(), nouns.end(), w) != nouns.end();
  };
  if (is_noun(l)) return true;
  std::size_t i = 0;
  while (i < l.size() && l[i] >= '0' && l[i] <= '9') ++i;
  if (i == 0) return false;
  std::string_view rest = std::string_view(l).substr(i);
  for (std::string_view form : {"-year-old", " year old", "-year old", " year-old"}) {
    if (rest.starts_with(form)) {
      rest.remove_prefix(form.size());
      if (rest.empty()) return true;
      if (rest.front() != ' ') return false;
      return is_noun(text::trim(rest));
    }
  }
  return false;
}

inline Corpus normalize_target_child_labels(const Corpus& corpus) {
  Corpus out = corpus;
  for (auto& c : out.conversations)
    for (auto& u : c.utterances)
      if (is_target_child_alias(u.speaker)) u.speaker = "Child";
  return out;
}

// ---------------------------------------------------------------------------
// Parsing chat completions.

struct GeneratedDialogue {
  std::string participants;
  std::string setting;
  Conversation conversation;
};

inline GeneratedDialogue parse_generated(std::string_view raw) {
  const auto dialogue_at = raw.find("DIALOGUE:");
  if (dialogue_at == std::string_view::npos)
    throw ParseError("completion has no DIALOGUE: marker",
                     text::split_lines(raw).size());
  auto line_of = [&](std::size_t offset) {
    return static_cast<std::size_t>(std::count(raw.begin(), raw.begin() + offset, '\n')) + 1;
  };
  auto section = [&](std::string_view marker) -> std::string {
    const auto at = raw.find(marker);
    if (at == std::string_view::npos || at > dialogue_at) return {};
    auto end = dialogue_at;
    for (std::string_view other : {"PARTICIPANTS:", "SETTING:"}) {
      const auto o = raw.find(other);
      if (o != std::string_view::npos && o > at && o < end) end = o;
    }
    const auto start = at + marker.size();
    return std::string(text::trim(raw.substr(start, end - start)));
  };

  GeneratedDialogue g;
  g.participants = section("PARTICIPANTS:");
  g.setting = section("SETTING:");
  g.conversation.source = Source::synthetic;
  g.conversation.id = "generated";

  // Turns are separated by blank lines or by the literal separator; lines
  // inside one turn are joined with a space.
  const std::size_t body_start = dialogue_at + std::string_view("DIALOGUE:").size();
  std::string turn;
  std::size_t turn_line = 0;
  auto flush = [&] {
    const auto t = text::trim(turn);
    if (!t.empty()) {
      auto u = detail::parse_utterance(t, turn_line);
      if (u.speaker.empty())
        throw ParseError("dialogue turn has no **speaker** label", turn_line);
      g.conversation.utterances.push_back(std::move(u));
    }
    turn.clear();
  };
  std::size_t pos = body_start;
  while (pos <= raw.size()) {
    auto nl = raw.find('\n', pos);
    if (nl == std::string_view::npos) nl = raw.size();
    const auto line = raw.substr(pos, nl - pos);
    if (text::trim(line).empty()) {
      flush();
    } else {
      const auto pieces = text::split_on(line, kNewlineToken);
      for (std::size_t k = 0; k < pieces.size(); ++k) {
        if (k) flush();
        if (text::trim(pieces[k]).empty()) continue;
        if (text::trim(turn).empty()) turn_line = line_of(pos);
        if (!turn.empty()) turn += ' ';
        turn += text::trim(pieces[k]);
      }
    }
    pos = nl + 1;
  }
  flush();
  if (g.conversation.utterances.empty())
    throw ParseError("DIALOGUE: section is empty", line_of(dialogue_at));
  validate_conversation(g.conversation);
  return g;
}

// ---------------------------------------------------------------------------
// Chat-completion client.

struct ChatEndpoint {
  std::string url;    // full URL of the chat-completions route
  std::string model;
  std::string token;  // bearer token; read from the environment by the CLI
  double timeout_seconds = 120.0;

  static constexpr const char* kTokenEnv = "CRLAB_CHAT_TOKEN";

  void validate() const {
    if (url.empty()) throw ValidationError("chat endpoint URL is not configured");
    if (model.empty()) throw ValidationError("chat model name is not configured");
    if (!(timeout_seconds > 0)) throw ValidationError("chat timeout must be positive");
  }

  static std::string token_from_env() {
    const char* t = std::getenv(kTokenEnv);
    return t ? std::string(t) : std::string();
  }
};

struct HttpRequest {
  std::string url;
  std::vector<std::pair<std::string, std::string>> headers;
  std::string body;
  double timeout_seconds = 120.0;
};

struct HttpResponse {
  int status = 0;
  std::string body;
};

enum class TransportFailure { timeout, connection };

// Thrown by transports when no HTTP response was obtained.
class TransportError : public RuntimeError {
 public:
  TransportError(TransportFailure kind, const std::string& what)
      : RuntimeError(what), kind_(kind) {}
  TransportFailure kind() const { return kind_; }

 private:
  TransportFailure kind_;
};

using ChatTransport = std::function<HttpResponse(const HttpRequest&)>;

enum class ChatErrorKind { timeout, connection, rate_limited, http_status,
                           empty_completion, malformed_response };

inline std::string_view to_string(ChatErrorKind k) {
  switch (k) {
    case ChatErrorKind::timeout: return "timeout";
    case ChatErrorKind::connection: return "connection";
    case ChatErrorKind::rate_limited: return "rate_limited";
    case ChatErrorKind::http_status: return "http_status";
    case ChatErrorKind::empty_completion: return "empty_completion";
    case ChatErrorKind::malformed_response: return "malformed_response";
  }
  return "connection";
}

class ChatError : public RuntimeError {
 public:
  ChatError(ChatErrorKind kind, bool retryable, int status, double elapsed,
            const std::string& what)
      : RuntimeError(what), kind_(kind), retryable_(retryable), status_(status),
        elapsed_(elapsed) {}
  ChatErrorKind kind() const { return kind_; }
  bool retryable() const { return retryable_; }
  int status() const { return status_; }
  double elapsed_seconds() const { return elapsed_; }

 private:
  ChatErrorKind kind_;
  bool retryable_;
  int status_;
  double elapsed_;
};

inline std::string chat_request_body(const std::string& model, const std::string& prompt) {
  nlohmann::json j;
  j["model"] = model;
  j["messages"] = nlohmann::json::array({{{"role", "user"}, {"content", prompt}}});
  return j.dump();
}

inline std::string request_dialogue(const DialogueSpec& spec, const ChatEndpoint& endpoint,
                                    const ChatTransport& transport) {
  endpoint.validate();
  HttpRequest req;
  req.url = endpoint.url;
  req.timeout_seconds = endpoint.timeout_seconds;
  req.headers.emplace_back("Content-Type", "application/json");
  if (!endpoint.token.empty())
    req.headers.emplace_back("Authorization", "Bearer " + endpoint.token);
  req.body = chat_request_body(endpoint.model, build_prompt(spec));

  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };
  HttpResponse res;
  try {
    res = transport(req);
  } catch (const TransportError& e) {
    const double dt = elapsed();
    if (e.kind() == TransportFailure::timeout)
      throw ChatError(ChatErrorKind::timeout, true, 0, dt,
                      "chat request timed out after " + text::format_number(dt) +
                          " s: " + e.what());
    throw ChatError(ChatErrorKind::connection, true, 0, dt,
                    std::string("chat transport failed: ") + e.what());
  }
  const double dt = elapsed();
  if (res.status == 429)
    throw ChatError(ChatErrorKind::rate_limited, true, 429, dt, "chat endpoint rate limited (429)");
  if (res.status < 200 || res.status >= 300)
    throw ChatError(ChatErrorKind::http_status, res.status >= 500, res.status, dt,
                    "chat endpoint returned HTTP " + std::to_string(res.status));
  std::string content;
  try {
    const auto j = nlohmann::json::parse(res.body);
    const auto& msg = j.at("choices").at(0).at("message").at("content");
    if (!msg.is_null()) content = msg.get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ChatError(ChatErrorKind::malformed_response, false, res.status, dt,
                    std::string("chat response is not a chat completion: ") + e.what());
  }
  if (text::trim(content).empty())
    throw ChatError(ChatErrorKind::empty_completion, true, res.status, dt,
                    "chat completion is empty");
  return content;
}

struct RetryPolicy {
  std::size_t max_attempts = 3;
  double backoff_seconds = 1.0;  // doubled after every retry
};

struct DialogueOutcome {
  std::optional<std::string> completion;
  std::optional<std::string> error;
  std::size_t attempts = 0;
};

// Issues one request per spec with at most `concurrency` in flight. Each
// request retries on its own schedule.
inline std::vector<DialogueOutcome> request_dialogues(
    const std::vector<DialogueSpec>& specs, const ChatEndpoint& endpoint,
    const ChatTransport& transport, std::size_t concurrency = 4,
    RetryPolicy retry = {}) {
  endpoint.validate();
  if (concurrency < 1) throw ValidationError("concurrency must be >= 1");
  if (retry.max_attempts < 1) throw ValidationError("max_attempts must be >= 1");
  std::vector<DialogueOutcome> out(specs.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < specs.size();) {
      double wait = retry.backoff_seconds;
      auto& o = out[i];
      while (o.attempts < retry.max_attempts) {
        ++o.attempts;
        try {
          o.completion = request_dialogue(specs[i], endpoint, transport);
          o.error.reset();
          break;
        } catch (const ChatError& e) {
          o.error = e.what();
          if (!e.retryable() || o.attempts == retry.max_attempts) break;
          std::this_thread::sleep_for(std::chrono::duration<double>(wait));
          wait *= 2;
        } catch (const std::exception& e) {
          o.error = e.what();
          break;
        }
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::min(concurrency, specs.size()); ++t)
    pool.emplace_back(work);
  for (auto& t : pool) t.join();
  return out;
}

// ---------------------------------------------------------------------------
// Bundled desk-scale fixtures: a toy TinyDialogues-like corpus and a
// minimal-pair suite over the same frames and lexicon.

struct ToyCorpusOptions {
  std::size_t target_words = 200000;
  std::uint64_t seed = 7;
  std::vector<int> ages{2, 5, 10, 15};
};

inline Corpus make_toy_corpus(const AgeLexicon& lex, const ToyCorpusOptions& opt) {
  if (opt.ages.empty()) throw ValidationError("toy corpus needs at least one age");
  Corpus corpus;
  corpus.name = "toy";
  corpus.set_meta("gen.kind", "offline");
  corpus.set_meta("gen.seed", std::to_string(opt.seed));
  corpus.set_meta("gen.target_words", std::to_string(opt.target_words));
  std::size_t words = 0;
  for (std::uint64_t n = 0; words < opt.target_words; ++n) {
    const int age = opt.ages[n % opt.ages.size()];
    const auto spec = random_spec(age, lex, derive_seed(opt.seed, n));
    Conversation c = generate_offline(spec, lex);
    c.id = "toy-" + std::to_string(n);
    words += conversation_words(c);
    corpus.conversations.push_back(std::move(c));
  }
  return normalize_target_child_labels(corpus);
}

struct PairSuiteOptions {
  std::size_t agreement = 200;
  std::size_t determiner_noun = 0;
  std::size_t irregular = 0;
  int max_age = 15;
  std::uint64_t seed = 11;
};

// Agreement and determiner pairs come in singular/plural halves so a model
// with a context-free preference for one verb or determiner form scores 50%.
inline std::vector<MinimalPair> make_pair_suite(const AgeLexicon& lex,
                                                const PairSuiteOptions& opt) {
  const auto v = detail::vocab_for(lex, opt.max_age);
  detail::Picker pk(derive_seed_str(opt.seed, "pair_suite"));
  std::vector<MinimalPair> out;
  for (std::size_t i = 0; i < opt.agreement; ++i) {
    const auto& n = pk.one(v.nouns);
    std::string verb = pk.one(v.verbs);
    while (third_person(verb) == verb) verb = pk.one(v.verbs);
    if (i % 2 == 0)
      out.push_back({"agreement", "the " + n + " " + third_person(verb) + " .",
                     "the " + n + " " + verb + " ."});
    else
      out.push_back({"agreement", "the " + plural(n) + " " + verb + " .",
                     "the " + plural(n) + " " + third_person(verb) + " ."});
  }
  for (std::size_t i = 0; i < opt.determiner_noun; ++i) {
    std::string n = pk.one(v.nouns);
    while (plural(n) == n) n = pk.one(v.nouns);
    if (i % 2 == 0)
      out.push_back({"determiner_noun", "look at this " + n + " .",
                     "look at these " + n + " ."});
    else
      out.push_back({"determiner_noun", "look at these " + plural(n) + " .",
                     "look at this " + plural(n) + " ."});
  }
  std::vector<std::string> irregular;
  for (const auto& n : v.nouns)
    if (has_irregular_plural(n)) irregular.push_back(n);
  if (opt.irregular > 0 && irregular.empty())
    throw ValidationError("lexicon has no nouns with irregular plurals");
  for (std::size_t i = 0; i < opt.irregular; ++i) {
    const auto& n = pk.one(irregular);
    const auto& a = pk.one(v.adjectives);
    switch (i % 3) {
      case 0:
        out.push_back({"irregular", "i see two " + plural(n) + " .",
                       "i see two " + regular_plural(n) + " ."});
        break;
      case 1:
        out.push_back({"irregular", "these " + plural(n) + " are " + a + " .",
                       "these " + regular_plural(n) + " are " + a + " ."});
        break;
      default:
        out.push_back({"irregular", "where are the " + plural(n) + " ?",
                       "where are the " + regular_plural(n) + " ?"});
    }
  }
  return out;
}

}  // namespace crlab

#endif  // CRLAB_SYNTHGEN_HPP_
