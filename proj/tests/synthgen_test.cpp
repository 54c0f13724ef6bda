#include <gtest/gtest.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <set>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "crlab/synthgen.hpp"
#include "test_support.hpp"

using namespace crlab;

namespace {

const AgeLexicon& lexicon() {
  static const AgeLexicon lex =
      AgeLexicon::parse(oracle::read_file(oracle::data_path("lexicon.tsv")));
  return lex;
}

DialogueSpec narrative_spec() {
  DialogueSpec s;
  s.age = 5;
  s.turns = 10;
  s.type = ConversationType::narrative;
  s.words = {"dog", "run", "happy"};
  s.participants = {"mom", "friend"};
  s.seed = 3;
  return s;
}

std::string chat_json(const std::string& content) {
  return nlohmann::json{{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}}}
      .dump();
}

ChatEndpoint endpoint() {
  return {"http://localhost:1/v1/chat/completions", "m", "sekrit", 5.0};
}

bool contains(const std::string& hay, const std::string& needle) {
  return hay.find(needle) != std::string::npos;
}

}  // namespace

TEST(Prompt, MatchesTemplateText) {
  const std::string want =
      "Please construct a realistic, approximately 10-turn dialogue directly involving a "
      "5-year-old child as a participant. The child is the central participant in the "
      "dialogue, with most/all speech directed towards them. Hence, for this dialogue, "
      "please limit the vocabulary to that of which a typical 5-year-old child would "
      "understand. The dialogue should be narrative. It should involve telling a story "
      "(real or fictional) or sharing/recounting an experience. The dialogue should use "
      "the verb `run', the noun `dog', and the adjective `happy'. Please include the "
      "following participants along with the child: mom and friend. Participant labels "
      "should be surrounded by double asterisks, i.e. `**participant**'. If there are "
      "several of the same type of participant (e.g. multiple friends or classmates), "
      "please label them distinctly, e.g. `**Friend 1**' and `**Friend 2**'. Please list "
      "and describe the participants after `PARTICIPANTS:', briefly describe the "
      "context/setting of the dialogue after `SETTING:', and present the dialogue itself "
      "after `DIALOGUE:'. The turns of the dialogue should be separated by `\\n\\n'. "
      "Remember, please ensure the dialogue is realistic, and one that would likely occur "
      "in the real world directly involving a 5-year-old child.";
  EXPECT_EQ(build_prompt(narrative_spec()), want);
  EXPECT_EQ(build_prompt(narrative_spec()), build_prompt(narrative_spec()));
}

TEST(Prompt, AgeNounsAndArgumentativeType) {
  auto s = narrative_spec();
  s.age = 2;
  s.participants = {"babysitter", "dad"};
  s.type = ConversationType::argumentative;
  const auto p = build_prompt(s);
  EXPECT_TRUE(contains(p, "2-year-old toddler as a participant"));
  EXPECT_TRUE(contains(p, "The toddler is the central participant"));
  EXPECT_TRUE(contains(p, "resulting in the toddler learning."));
  s.age = 15;
  s.participants = {"coach", "tutor"};
  EXPECT_TRUE(contains(build_prompt(s), "15-year-old teenager"));
  s.turns = 5;
  s.participants = {"coach"};
  EXPECT_TRUE(contains(build_prompt(s), "approximately 5-turn dialogue"));
}

TEST(Prompt, SpecValidation) {
  auto s = narrative_spec();
  s.age = 7;
  EXPECT_THROW(build_prompt(s), ValidationError);
  s = narrative_spec();
  s.turns = 7;
  EXPECT_THROW(s.validate(), ValidationError);
  s = narrative_spec();
  s.participants = {"mom"};
  EXPECT_THROW(s.validate(), ValidationError);
  s = narrative_spec();
  s.age = 2;
  s.participants = {"mom", "coach"};
  EXPECT_THROW(s.validate(), ValidationError);
  s = narrative_spec();
  s.words.noun = "Dog";
  EXPECT_THROW(s.validate(), ValidationError);
  EXPECT_THROW(parse_conversation_type("sarcastic"), ValidationError);
}

TEST(Prompt, ParticipantLabels) {
  auto s = narrative_spec();
  s.participants = {"friend", "friend"};
  EXPECT_EQ(participant_labels(s), (std::vector<std::string>{"Friend 1", "Friend 2"}));
  s.participants = {"older sibling", "mom"};
  EXPECT_EQ(participant_labels(s), (std::vector<std::string>{"Older Sibling", "Mom"}));
  EXPECT_EQ(child_label(2), "Toddler");
  EXPECT_EQ(child_label(10), "Child");
  EXPECT_EQ(child_label(15), "Teenager");
}

TEST(Lexicon, NestedByAge) {
  const auto& lex = lexicon();
  for (auto pos : {PartOfSpeech::noun, PartOfSpeech::verb, PartOfSpeech::adjective}) {
    std::set<std::string> prev;
    for (int age : kSeedAges) {
      const auto w = lex.words(age, pos);
      std::set<std::string> cur(w.begin(), w.end());
      EXPECT_FALSE(cur.empty());
      for (const auto& x : prev) EXPECT_TRUE(cur.count(x)) << x;
      EXPECT_GE(cur.size(), prev.size());
      prev = std::move(cur);
    }
  }
  EXPECT_EQ(lex.at_age(15).size(), lex.size());
}

TEST(Lexicon, ParseErrors) {
  try {
    AgeLexicon::parse("dog\tnoun\t2\ncat\tnoun\n");
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  EXPECT_THROW(AgeLexicon::parse("dog\tnoun\t3\n"), ParseError);
  EXPECT_THROW(AgeLexicon::parse("dog\tthing\t2\n"), ParseError);
  EXPECT_THROW(AgeLexicon::parse("Dog\tnoun\t2\n"), ParseError);
  EXPECT_THROW(AgeLexicon::parse("dog\tnoun\t2\ndog\tnoun\t5\n"), ParseError);
  EXPECT_EQ(AgeLexicon::parse("# c\n\ndog\tnoun\t2\ndog\tverb\t2\n").size(), 2u);
}

TEST(Offline, DeterministicAndUsesRequiredWords) {
  const auto s = narrative_spec();
  const auto a = generate_offline(s, lexicon());
  const auto b = generate_offline(s, lexicon());
  EXPECT_EQ(a.utterances, b.utterances);
  const auto text = serialize_conversation(a);
  for (const auto& w : {s.words.noun, s.words.verb, s.words.adjective})
    EXPECT_TRUE(contains(text, " " + w + " ")) << w;
  EXPECT_EQ(a.age_months, 60.0);
  EXPECT_EQ(a.source, Source::synthetic);
  auto other = s;
  other.seed = 4;
  EXPECT_NE(serialize_conversation(generate_offline(other, lexicon())), text);
}

TEST(Offline, TurnCountsAndSpeakers) {
  const auto& lex = lexicon();
  std::set<std::size_t> seen;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const int age = kSeedAges[seed % 4];
    auto s = random_spec(age, lex, seed);
    s.turns = 5;
    s.participants.resize(1);
    const auto c = generate_offline(s, lex);
    ASSERT_GE(c.utterances.size(), 5u);
    ASSERT_LE(c.utterances.size(), 10u);
    seen.insert(c.utterances.size());
    const auto others = participant_labels(s);
    for (std::size_t i = 0; i < c.utterances.size(); ++i) {
      if (i % 2 == 1)
        ASSERT_EQ(c.utterances[i].speaker, child_label(age));
      else
        ASSERT_EQ(c.utterances[i].speaker, others[0]);
    }
    ASSERT_NO_THROW(serialize_conversation(c));
  }
  EXPECT_EQ(seen.size(), 6u);
}

TEST(Offline, RandomSpecIsValid) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto s = random_spec(kSeedAges[seed % 4], lexicon(), seed);
    EXPECT_NO_THROW(s.validate());
    const auto nouns = lexicon().words(s.age, PartOfSpeech::noun);
    EXPECT_NE(std::find(nouns.begin(), nouns.end(), s.words.noun), nouns.end())
        << "noun above the age cutoff: " << s.words.noun;
  }
}

TEST(Parse, FullCompletion) {
  const std::string raw =
      "PARTICIPANTS: Mom, a parent.\nChild, age 5.\n\nSETTING: A kitchen.\n\n"
      "DIALOGUE:\n**Mom**: Hi there.\n\n**Child**: Hello\nmom!\n\n**Mom**: Eat up.";
  const auto g = parse_generated(raw);
  EXPECT_EQ(g.participants, "Mom, a parent.\nChild, age 5.");
  EXPECT_EQ(g.setting, "A kitchen.");
  ASSERT_EQ(g.conversation.utterances.size(), 3u);
  EXPECT_EQ(g.conversation.utterances[1], (Utterance{"Child", "Hello mom!"}));
}

TEST(Parse, LiteralSeparatorAndMissingSections) {
  const auto g = parse_generated("DIALOGUE: **A**: one \\n\\n **B**: two");
  EXPECT_TRUE(g.participants.empty());
  EXPECT_TRUE(g.setting.empty());
  ASSERT_EQ(g.conversation.utterances.size(), 2u);
  EXPECT_EQ(g.conversation.utterances[1], (Utterance{"B", "two"}));
}

TEST(Parse, Errors) {
  try {
    parse_generated("PARTICIPANTS: x\nSETTING: y\n**A**: hi\n");
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_TRUE(contains(e.what(), "DIALOGUE:"));
  }
  EXPECT_THROW(parse_generated("DIALOGUE:\n\n"), ParseError);
  try {
    parse_generated("DIALOGUE:\n**A**: ok\n\nno label here\n");
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 4u);
  }
}

TEST(Labels, TargetChildAliases) {
  for (const char* yes : {"Toddler", "child", "5-year-old", "10 year old", "15-year-old teenager",
                          "Teen", "2-year-old toddler", " Kid "})
    EXPECT_TRUE(is_target_child_alias(yes)) << yes;
  for (const char* no : {"Mom", "Friend 1", "Child's Mom", "5", "year-old", "5-year-older",
                         "Older Sibling"})
    EXPECT_FALSE(is_target_child_alias(no)) << no;

  Corpus c;
  Conversation conv;
  conv.id = "x";
  conv.utterances = {{"Toddler", "a"}, {"Mom", "b"}, {"5-year-old", "c"}, {"Child", "d"}};
  c.conversations.push_back(conv);
  const auto once = normalize_target_child_labels(c);
  std::vector<std::string> speakers;
  for (const auto& u : once.conversations[0].utterances) speakers.push_back(u.speaker);
  EXPECT_EQ(speakers, (std::vector<std::string>{"Child", "Mom", "Child", "Child"}));
  const auto twice = normalize_target_child_labels(once);
  EXPECT_EQ(twice.conversations[0].utterances, once.conversations[0].utterances);
}

TEST(Client, RequestShapeAndCompletion) {
  HttpRequest seen;
  ChatTransport t = [&](const HttpRequest& r) {
    seen = r;
    return HttpResponse{200, chat_json("DIALOGUE: **A**: hi")};
  };
  const auto out = request_dialogue(narrative_spec(), endpoint(), t);
  EXPECT_EQ(out, "DIALOGUE: **A**: hi");
  EXPECT_EQ(seen.url, endpoint().url);
  EXPECT_EQ(seen.timeout_seconds, 5.0);
  const auto body = nlohmann::json::parse(seen.body);
  EXPECT_EQ(body["model"], "m");
  EXPECT_EQ(body["messages"][0]["role"], "user");
  EXPECT_EQ(body["messages"][0]["content"], build_prompt(narrative_spec()));
  bool auth = false;
  for (const auto& [k, v] : seen.headers)
    if (k == "Authorization") auth = v == "Bearer sekrit";
  EXPECT_TRUE(auth);
}

TEST(Client, ErrorClassification) {
  auto classify = [](ChatTransport t) -> ChatError {
    try {
      request_dialogue(narrative_spec(), endpoint(), t);
    } catch (const ChatError& e) {
      return e;
    }
    ADD_FAILURE() << "expected a chat error";
    return ChatError(ChatErrorKind::connection, false, 0, 0, "");
  };
  auto e = classify([](const HttpRequest&) { return HttpResponse{429, "{}"}; });
  EXPECT_EQ(e.kind(), ChatErrorKind::rate_limited);
  EXPECT_TRUE(e.retryable());
  EXPECT_EQ(e.status(), 429);

  e = classify([](const HttpRequest&) { return HttpResponse{503, ""}; });
  EXPECT_EQ(e.kind(), ChatErrorKind::http_status);
  EXPECT_TRUE(e.retryable());
  e = classify([](const HttpRequest&) { return HttpResponse{401, ""}; });
  EXPECT_FALSE(e.retryable());
  EXPECT_EQ(e.status(), 401);

  e = classify([](const HttpRequest&) -> HttpResponse {
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    throw TransportError(TransportFailure::timeout, "read timeout");
  });
  EXPECT_EQ(e.kind(), ChatErrorKind::timeout);
  EXPECT_TRUE(e.retryable());
  EXPECT_GE(e.elapsed_seconds(), 0.045);
  EXPECT_TRUE(contains(e.what(), "timed out"));

  e = classify([](const HttpRequest&) -> HttpResponse {
    throw TransportError(TransportFailure::connection, "refused");
  });
  EXPECT_EQ(e.kind(), ChatErrorKind::connection);
  EXPECT_TRUE(e.retryable());

  e = classify([](const HttpRequest&) { return HttpResponse{200, "not json"}; });
  EXPECT_EQ(e.kind(), ChatErrorKind::malformed_response);
  EXPECT_FALSE(e.retryable());
  e = classify([](const HttpRequest&) { return HttpResponse{200, R"({"choices":[]})"}; });
  EXPECT_EQ(e.kind(), ChatErrorKind::malformed_response);
  e = classify([](const HttpRequest&) { return HttpResponse{200, chat_json("  ")}; });
  EXPECT_EQ(e.kind(), ChatErrorKind::empty_completion);

  ChatEndpoint bad = endpoint();
  bad.url.clear();
  EXPECT_THROW(request_dialogue(narrative_spec(), bad,
                                [](const HttpRequest&) { return HttpResponse{}; }),
               ValidationError);
}

TEST(Client, RetriesThenSucceeds) {
  std::atomic<int> calls{0};
  ChatTransport t = [&](const HttpRequest&) {
    if (++calls < 3) return HttpResponse{429, ""};
    return HttpResponse{200, chat_json("ok")};
  };
  const auto out = request_dialogues({narrative_spec()}, endpoint(), t, 1, {3, 0.001});
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].completion, "ok");
  EXPECT_FALSE(out[0].error);
  EXPECT_EQ(out[0].attempts, 3u);

  calls = 0;
  const auto fail = request_dialogues({narrative_spec()}, endpoint(), t, 1, {2, 0.001});
  EXPECT_FALSE(fail[0].completion);
  EXPECT_TRUE(fail[0].error);
  EXPECT_EQ(fail[0].attempts, 2u);

  ChatTransport bad = [](const HttpRequest&) { return HttpResponse{400, ""}; };
  const auto once = request_dialogues({narrative_spec()}, endpoint(), bad, 1, {5, 0.001});
  EXPECT_EQ(once[0].attempts, 1u);
}

TEST(Client, ConcurrencyBoundAndOrder) {
  std::atomic<int> in_flight{0}, peak{0};
  ChatTransport t = [&](const HttpRequest& r) {
    const int now = ++in_flight;
    int p = peak.load();
    while (now > p && !peak.compare_exchange_weak(p, now)) {}
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    --in_flight;
    const auto prompt = nlohmann::json::parse(r.body)["messages"][0]["content"].get<std::string>();
    return HttpResponse{200, chat_json(prompt)};
  };
  std::vector<DialogueSpec> specs;
  for (std::uint64_t i = 0; i < 8; ++i) specs.push_back(random_spec(5, lexicon(), i));
  const auto out = request_dialogues(specs, endpoint(), t, 3, {1, 0.0});
  ASSERT_EQ(out.size(), specs.size());
  for (std::size_t i = 0; i < specs.size(); ++i)
    EXPECT_EQ(out[i].completion, build_prompt(specs[i]));
  EXPECT_LE(peak.load(), 3);
  EXPECT_GE(peak.load(), 2);
  EXPECT_THROW(request_dialogues(specs, endpoint(), t, 0), ValidationError);
}

TEST(Fixtures, ToyCorpus) {
  ToyCorpusOptions opt;
  opt.target_words = 5000;
  const auto a = make_toy_corpus(lexicon(), opt);
  const auto b = make_toy_corpus(lexicon(), opt);
  EXPECT_EQ(serialize_corpus(a), serialize_corpus(b));
  EXPECT_GE(corpus_words(a), 5000u);
  EXPECT_LT(corpus_words(a) - conversation_words(a.conversations.back()), 5000u);
  std::set<double> ages;
  for (const auto& c : a.conversations) {
    ages.insert(*c.age_months);
    for (const auto& u : c.utterances)
      EXPECT_FALSE(u.speaker == "Toddler" || u.speaker == "Teenager");
  }
  EXPECT_EQ(ages, (std::set<double>{24, 60, 120, 180}));
  opt.ages.clear();
  EXPECT_THROW(make_toy_corpus(lexicon(), opt), ValidationError);
}

TEST(Fixtures, PairSuite) {
  PairSuiteOptions opt;
  opt.determiner_noun = 10;
  opt.irregular = 9;
  const auto pairs = make_pair_suite(lexicon(), opt);
  ASSERT_EQ(pairs.size(), 219u);
  EXPECT_EQ(pairs, make_pair_suite(lexicon(), opt));
  std::size_t agreement = 0;
  for (const auto& p : pairs) {
    EXPECT_NO_THROW(validate_pair(p));
    EXPECT_NE(p.good, p.bad);
    // Each pair differs in exactly one whitespace token.
    std::istringstream g(p.good), b(p.bad);
    std::vector<std::string> gw, bw;
    for (std::string w; g >> w;) gw.push_back(w);
    for (std::string w; b >> w;) bw.push_back(w);
    ASSERT_EQ(gw.size(), bw.size()) << p.good;
    std::size_t diff = 0;
    for (std::size_t i = 0; i < gw.size(); ++i) diff += gw[i] != bw[i];
    EXPECT_EQ(diff, 1u) << p.good << " / " << p.bad;
    agreement += p.task == "agreement";
  }
  EXPECT_EQ(agreement, 200u);
  EXPECT_EQ(pairs[0].good.substr(0, 4), "the ");
}
