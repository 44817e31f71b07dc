#include <gtest/gtest.h>

#include <thread>

#include "wm/meaning.hpp"
#include "wm/session.hpp"
#include "wm/worlds.hpp"

using namespace wm;

namespace {

// Returns fixed completions in order, regardless of the prompt.
class ScriptedBackend : public TranslatorBackend {
 public:
  explicit ScriptedBackend(std::vector<Completion> replies) : replies_(std::move(replies)) {}

  std::vector<Completion> complete(const std::string& prompt, std::size_t n, double temperature,
                                   const std::vector<std::string>&) override {
    prompts.push_back(prompt);
    std::vector<Completion> out;
    for (std::size_t i = 0; i < n && next_ < replies_.size(); ++i) {
      auto c = replies_[next_++];
      c.temperature = temperature;
      c.index = i;
      out.push_back(c);
    }
    return out;
  }
  std::string name() const override { return "scripted"; }

  std::vector<std::string> prompts;

 private:
  std::vector<Completion> replies_;
  std::size_t next_ = 0;
};

Completion reply(std::string text, std::optional<double> score = std::nullopt) {
  Completion c;
  c.text = std::move(text);
  c.score = score;
  return c;
}

InferenceSession tug_session() { return InferenceSession(load_world("tug-of-war")->forms(), 1); }

// A local stand-in for a completions endpoint.
class FakeCompletionServer {
 public:
  explicit FakeCompletionServer(std::function<void(const httplib::Request&, httplib::Response&)> handler) {
    server_.Post("/v1/completions", [this, handler](const httplib::Request& req, httplib::Response& res) {
      {
        std::lock_guard<std::mutex> lock(mu_);
        bodies_.push_back(req.body);
        auth_.push_back(req.get_header_value("Authorization"));
      }
      handler(req, res);
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeCompletionServer() {
    server_.stop();
    thread_.join();
  }

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
  std::vector<std::string> bodies() {
    std::lock_guard<std::mutex> lock(mu_);
    return bodies_;
  }
  std::vector<std::string> auth() {
    std::lock_guard<std::mutex> lock(mu_);
    return auth_;
  }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
  std::mutex mu_;
  std::vector<std::string> bodies_;
  std::vector<std::string> auth_;
};

}  // namespace

TEST(Prompt, GoldenLayout) {
  const std::vector<HistoryPair> history{{Tag::Condition, "Josh won against Lio.", "(condition (w 'josh 'lio))"},
                                         {Tag::Define, "x  is\n one.", "(define x 1)\n"}};
  const auto p = build_prompt("(define w 1)\n", ";; Query: q?\n(query w)\n", history, {Tag::Query, "How strong is Josh?"});
  EXPECT_EQ(p.render(),
            "(define w 1)\n\n"
            ";; Query: q?\n(query w)\n\n"
            ";; Condition: Josh won against Lio.\n(condition (w 'josh 'lio))\n\n"
            ";; Define: x is one.\n(define x 1)\n\n"
            ";; Query: How strong is Josh?\n");
}

TEST(Prompt, EmptySectionsAreSkipped) {
  const auto p = build_prompt("(define w 1)", "", {}, {Tag::Condition, "a"});
  EXPECT_EQ(p.render(), "(define w 1)\n\n;; Condition: a\n");
}

TEST(Prompt, ConstructFragmentIsPhrasedAsDefine) {
  const auto p = build_prompt("", "", {}, {Tag::ConstructFragment, "Strength varies."});
  EXPECT_EQ(p.final_line, ";; Define: Strength varies.");
}

TEST(Prompt, ByteStableForBundledWorlds) {
  for (const auto& id : list_worlds()) {
    const auto w = load_world(id);
    const std::vector<HistoryPair> h{{Tag::Condition, "c", "(condition true)"}};
    const Utterance u{Tag::Query, "q"};
    const auto a = build_prompt(world_model_text(*w), world_examples_text(*w), h, u).render();
    const auto b = build_prompt(world_model_text(*w), world_examples_text(*w), h, u).render();
    EXPECT_EQ(a, b) << id;
    EXPECT_TRUE(a.ends_with(";; Query: q\n")) << id;
    EXPECT_NE(a.find(std::string(w->model.text.substr(0, 40))), std::string::npos) << id;
  }
}

TEST(Prompt, HistoryKeepsLastThirtyPairs) {
  std::vector<HistoryPair> h;
  for (int i = 0; i < 31; ++i) h.push_back({Tag::Condition, "u" + std::to_string(i), "(condition true)"});
  const auto text = render_history(h);
  EXPECT_EQ(text.find(";; Condition: u0\n"), std::string::npos);
  EXPECT_NE(text.find(";; Condition: u1\n"), std::string::npos);
  EXPECT_NE(text.find(";; Condition: u30\n"), std::string::npos);
  std::size_t n = 0;
  for (std::size_t p = text.find(";; Condition:"); p != std::string::npos; p = text.find(";; Condition:", p + 1)) ++n;
  EXPECT_EQ(n, kHistoryLimit);
}

TEST(Prompt, FinalTaggedLineIsFound) {
  const auto last = final_tagged_line("(define x 1)\n\n;; Condition: a\n(c)\n\n;; Query: How strong?  \n\n");
  ASSERT_TRUE(last);
  EXPECT_EQ(last->first, Tag::Query);
  EXPECT_EQ(last->second, "How strong?");
}

TEST(MockBackend, AnswersFromExamplesAndIsPure) {
  auto backend = make_mock_backend(*load_world("tug-of-war"));
  const auto prompt = build_prompt("", "", {}, {Tag::Condition, "Alice won against Bob."}).render();
  const auto a = backend->complete(prompt, 3, 0.7, {});
  const auto b = backend->complete(prompt, 3, 0.7, {});
  ASSERT_EQ(a.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(a[i].text, "(condition (won-against '(alice) '(bob)))");
    EXPECT_EQ(a[i].text, b[i].text);
  }
}

TEST(MockBackend, KeyIgnoresCaseSpacingAndFinalPunctuation) {
  EXPECT_EQ(fixture_key("Query", "How strong  is JOSH?"), fixture_key("Query", "how strong is josh"));
  EXPECT_NE(fixture_key("Query", "a"), fixture_key("Condition", "a"));
}

TEST(MockBackend, AlternativesCycleAtNonzeroTemperature) {
  MockBackend m;
  m.add(Tag::Query, "q", "(query 1)");
  m.add(Tag::Query, "q", "(query 2)");
  const auto prompt = build_prompt("", "", {}, {Tag::Query, "q"}).render();
  const auto hot = m.complete(prompt, 3, 0.7, {});
  EXPECT_EQ(hot[0].text, "(query 1)");
  EXPECT_EQ(hot[1].text, "(query 2)");
  EXPECT_EQ(hot[2].text, "(query 1)");
  EXPECT_EQ(m.complete(prompt, 1, 0.0, {})[0].text, "(query 1)");
}

TEST(MockBackend, UnknownUtteranceYieldsNoValidCandidate) {
  auto backend = make_mock_backend(*load_world("tug-of-war"));
  const auto s = tug_session();
  const Utterance u{Tag::Condition, "Something nobody wrote a fixture for."};
  try {
    translate(u, build_prompt("", "", {}, u), s, *backend);
    FAIL() << "expected NoValidCandidate";
  } catch (const NoValidCandidate& e) {
    ASSERT_FALSE(e.rejected().empty());
    EXPECT_FALSE(e.rejected().front().valid);
  }
}

TEST(Validate, TagRules) {
  const auto s = tug_session();
  auto ok = [&](std::string_view code, Tag t) { return validate_candidate(code, t, s).valid; };
  EXPECT_TRUE(ok("(condition (won-against '(a) '(b)))", Tag::Condition));
  EXPECT_TRUE(ok("(condition (> (strength 'a) 1)) (condition (> (strength 'b) 1))", Tag::Condition));
  EXPECT_FALSE(ok("(query (strength 'a))", Tag::Condition));
  EXPECT_FALSE(ok("(define (f x) x) (condition (f true))", Tag::Condition));
  EXPECT_TRUE(ok("(query (strength 'a))", Tag::Query));
  EXPECT_FALSE(ok("(query (strength 'a)) (query (strength 'b))", Tag::Query));
  EXPECT_FALSE(ok("(condition true)", Tag::Query));
  EXPECT_TRUE(ok("(define (f x) x)", Tag::Define));
  EXPECT_TRUE(ok("(define (f x) x) (condition (f true))", Tag::Define));
  EXPECT_FALSE(ok("(define (f x) x) (query (f 1))", Tag::Define));
  EXPECT_FALSE(ok("(condition true) (define (f x) x)", Tag::Define));
  EXPECT_TRUE(ok("(define g 2)", Tag::ConstructFragment));
  EXPECT_FALSE(ok("(define g 2) (condition true)", Tag::ConstructFragment));
}

TEST(Validate, Reasons) {
  const auto s = tug_session();
  EXPECT_NE(validate_candidate("(condition (foo 'a)", Tag::Condition, s).reason.find("unbalanced"), std::string::npos);
  EXPECT_NE(validate_candidate("(condition (foo 'a))", Tag::Condition, s).reason.find("unbound symbol 'foo'"),
            std::string::npos);
  EXPECT_NE(validate_candidate("(+ 1 2)", Tag::Condition, s).reason.find("not define, condition or query"),
            std::string::npos);
  EXPECT_NE(validate_candidate("(query)", Tag::Query, s).reason.find("malformed query"), std::string::npos);
  EXPECT_FALSE(validate_candidate("", Tag::Query, s).valid);
  EXPECT_FALSE(validate_candidate("(condition (strength))", Tag::Condition, s).valid);
}

TEST(Validate, ParenProblemIgnoresStringsAndComments) {
  EXPECT_FALSE(paren_problem("(a \"(\" ; )\n)"));
  EXPECT_TRUE(paren_problem("(a))"));
  EXPECT_TRUE(paren_problem("(a \"b)"));
}

TEST(Normalize, CutsAtStopSequence) {
  EXPECT_EQ(normalize_completion("  (query 1)\n\n;; Condition: more\n(condition x)"), "(query 1)");
  EXPECT_EQ(normalize_completion("(query 1)\n"), "(query 1)");
}

TEST(Translate, DedupesByTreeAndCountsFrequency) {
  const auto s = tug_session();
  ScriptedBackend b({reply("(query (strength 'josh))"), reply("(query   (strength\n 'josh))"),
                     reply("(query (strength 'gabe))"), reply("(query (strength 'josh))"), reply("(query (oops"),
                     reply("(query (strength 'gabe))\n\n;; Query: next")});
  const Utterance u{Tag::Query, "How strong is Josh?"};
  TranslateOptions o;
  o.k = 5;
  const auto ranked = translate(u, build_prompt("", "", {}, u), s, b, o);
  ASSERT_EQ(ranked.size(), 3u);
  EXPECT_EQ(ranked[0].code, "(query (strength 'josh))");
  EXPECT_EQ(ranked[0].frequency, 3u);
  EXPECT_EQ(ranked[1].code, "(query (strength 'gabe))");
  EXPECT_EQ(ranked[1].frequency, 2u);
  EXPECT_FALSE(ranked[2].valid);
  EXPECT_EQ(b.prompts.size(), 2u);
  EXPECT_EQ(b.prompts[0], b.prompts[1]);
}

TEST(Translate, GreedySampleComesFirstWithZeroTemperature) {
  const auto s = tug_session();
  ScriptedBackend b({reply("(query (strength 'a))"), reply("(query (strength 'b))")});
  const Utterance u{Tag::Query, "q"};
  TranslateOptions o;
  o.k = 1;
  const auto ranked = translate(u, build_prompt("", "", {}, u), s, b, o);
  ASSERT_EQ(ranked.size(), 2u);
  EXPECT_EQ(ranked[0].temperature, 0.0);
  EXPECT_EQ(ranked[0].sample_index, 0u);
  EXPECT_EQ(ranked[1].temperature, 0.7);
  EXPECT_EQ(ranked[1].sample_index, 1u);
}

TEST(Translate, ScoreOutranksFrequency) {
  const auto s = tug_session();
  ScriptedBackend b({reply("(query (strength 'a))", -5.0), reply("(query (strength 'a))", -6.0),
                     reply("(query (strength 'b))", -1.0)});
  const Utterance u{Tag::Query, "q"};
  TranslateOptions o;
  o.k = 2;
  const auto ranked = translate(u, build_prompt("", "", {}, u), s, b, o);
  ASSERT_EQ(ranked.size(), 2u);
  EXPECT_EQ(ranked[0].code, "(query (strength 'b))");
  EXPECT_EQ(ranked[1].frequency, 2u);
  EXPECT_EQ(*ranked[1].score, -5.0);
}

TEST(Translate, ValidOutranksInvalid) {
  const auto s = tug_session();
  ScriptedBackend b({reply("(query (nonsense 'a))", 0.0), reply("(query (strength 'a))", -9.0)});
  const Utterance u{Tag::Query, "q"};
  TranslateOptions o;
  o.k = 1;
  const auto ranked = translate(u, build_prompt("", "", {}, u), s, b, o);
  EXPECT_TRUE(ranked[0].valid);
  EXPECT_FALSE(ranked[1].valid);
}

TEST(Translate, EmptyUtteranceIsRejectedWithoutBackendCall) {
  const auto s = tug_session();
  ScriptedBackend b({reply("(query 1)")});
  const Utterance u{Tag::Query, "   "};
  EXPECT_THROW(translate(u, build_prompt("", "", {}, u), s, b), NoValidCandidate);
  EXPECT_TRUE(b.prompts.empty());
}

TEST(Translate, ModelFragmentUsesExampleWorldAndHistory) {
  const auto w = load_world("scratch");
  InferenceSession s(w->forms(), 3);
  auto backend = make_mock_backend(*w);
  const std::string sentence = "First, strength levels vary widely from person to person.";
  const auto ranked = translate_model_fragment(sentence, world_model_text(*w), {}, s, *backend);
  ASSERT_TRUE(ranked.front().valid);
  EXPECT_EQ(ranked.front().forms.front().head(), "define");
  s.add_definition(ranked.front().forms);
  const std::vector<HistoryPair> built{{Tag::ConstructFragment, sentence, ranked.front().code}};
  const auto next = translate_model_fragment(
      "Furthermore, each person has a percentage of the time that they are lazy.", world_model_text(*w), built, s,
      *backend);
  EXPECT_TRUE(next.front().valid);
  // A fragment that refers to a function nobody defined yet does not validate.
  EXPECT_FALSE(validate_candidate("(define (beats a b) (> (team-strength a) (team-strength b)))",
                                  Tag::ConstructFragment, s)
                   .valid);
}

TEST(HttpBackend, SendsRequestAndParsesChoices) {
  FakeCompletionServer fake([](const httplib::Request&, httplib::Response& res) {
    nlohmann::json body = {
        {"choices",
         {{{"text", "(query (strength 'josh))\n\n;; Q"}, {"index", 0}, {"logprobs", {{"token_logprobs", {-0.5, -0.25}}}}},
          {{"text", "(query x)"}, {"index", 1}}}}};
    res.set_content(body.dump(), "application/json");
  });
  HttpBackendConfig cfg;
  cfg.base_url = fake.url();
  cfg.model = "m1";
  cfg.api_key = "secret";
  HttpBackend b(cfg);
  const auto before = outbound_request_count().load();
  const auto out = b.complete("PROMPT", 2, 0.7, {"\n\n;;"});
  EXPECT_EQ(outbound_request_count().load(), before + 1);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].text, "(query (strength 'josh))\n\n;; Q");
  EXPECT_DOUBLE_EQ(*out[0].score, -0.75);
  EXPECT_FALSE(out[1].score);
  EXPECT_EQ(out[1].index, 1u);
  const auto req = nlohmann::json::parse(fake.bodies().at(0));
  EXPECT_EQ(req["prompt"], "PROMPT");
  EXPECT_EQ(req["n"], 2);
  EXPECT_DOUBLE_EQ(req["temperature"].get<double>(), 0.7);
  EXPECT_EQ(req["stop"][0], "\n\n;;");
  EXPECT_EQ(req["model"], "m1");
  EXPECT_EQ(fake.auth().at(0), "Bearer secret");
}

TEST(HttpBackend, TransportAndProtocolFailuresAreBackendErrors) {
  int status = 401;
  std::string body = "{}";
  FakeCompletionServer fake([&](const httplib::Request&, httplib::Response& res) {
    res.status = status;
    res.set_content(body, "application/json");
  });
  HttpBackendConfig cfg;
  cfg.base_url = fake.url();
  cfg.timeout_seconds = 5;
  HttpBackend b(cfg);
  try {
    b.complete("p", 1, 0, {});
    FAIL();
  } catch (const BackendError& e) {
    EXPECT_NE(std::string(e.what()).find("credentials"), std::string::npos);
  }
  status = 500;
  EXPECT_THROW(b.complete("p", 1, 0, {}), BackendError);
  status = 200;
  body = "not json";
  EXPECT_THROW(b.complete("p", 1, 0, {}), BackendError);
  body = "{\"choices\": 3}";
  EXPECT_THROW(b.complete("p", 1, 0, {}), BackendError);

  HttpBackendConfig dead;
  dead.base_url = "http://127.0.0.1:1";
  dead.timeout_seconds = 2;
  EXPECT_THROW(HttpBackend(dead).complete("p", 1, 0, {}), BackendError);
}

TEST(HttpBackend, DrivesTranslation) {
  FakeCompletionServer fake([](const httplib::Request& req, httplib::Response& res) {
    const auto n = nlohmann::json::parse(req.body)["n"].get<int>();
    nlohmann::json choices = nlohmann::json::array();
    for (int i = 0; i < n; ++i) choices.push_back({{"text", " (condition (won-against '(josh) '(lio)))\n"}});
    res.set_content(nlohmann::json{{"choices", choices}}.dump(), "application/json");
  });
  HttpBackendConfig cfg;
  cfg.base_url = fake.url();
  HttpBackend b(cfg);
  const auto s = tug_session();
  const Utterance u{Tag::Condition, "Josh won against Lio."};
  const auto ranked = translate(u, build_prompt("", "", {}, u), s, b);
  ASSERT_EQ(ranked.size(), 1u);
  EXPECT_EQ(ranked[0].frequency, 6u);
  EXPECT_EQ(fake.bodies().size(), 2u);
}

TEST(NetworkGuard, MockTranslationMakesNoRequests) {
  const auto before = outbound_request_count().load();
  auto backend = make_mock_backend(*load_world("tug-of-war"));
  const auto s = tug_session();
  const Utterance u{Tag::Query, "Would Gabe beat Josh?"};
  translate(u, build_prompt("", "", {}, u), s, *backend);
  EXPECT_EQ(outbound_request_count().load(), before);
}

TEST(Backend, FactoryRejectsUnknownKind) {
  EXPECT_THROW(make_backend("telepathy", *load_world("tug-of-war")), std::invalid_argument);
  EXPECT_EQ(make_backend("mock", *load_world("tug-of-war"))->name(), "mock");
}
