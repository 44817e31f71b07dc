#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "wm/session.hpp"

using namespace wm;

namespace {

ServiceConfig small_config() {
  ServiceConfig c;
  c.budget.target_accepted = 200;
  c.budget.max_attempts = 200'000;
  return c;
}

DialogueSession mock_session(const std::string& world, std::uint64_t seed = 3, ServiceConfig config = small_config()) {
  SessionRecord rec;
  rec.id = "s-" + world;
  rec.world = world;
  rec.created_at = "2024-01-01T00:00:00Z";
  rec.seed = seed;
  rec.budget = config.budget;
  const auto w = load_world(world);
  return DialogueSession(rec, w, make_mock_backend(*w), config);
}

UtteranceRequest said(Tag tag, std::string text) {
  UtteranceRequest r;
  r.tag = tag;
  r.text = std::move(text);
  return r;
}

UtteranceRequest typed(std::string code) {
  UtteranceRequest r;
  r.code = std::move(code);
  return r;
}

class TempDir {
 public:
  TempDir() {
    path_ = std::filesystem::temp_directory_path() / ("wm-session-test-" + random_session_id());
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

ojson tug_script(std::uint64_t seed) {
  return {{"world", "tug-of-war"},
          {"seed", seed},
          {"budget", {{"target_accepted", 300}, {"max_attempts", 300000}}},
          {"utterances",
           {{{"tag", "Condition"}, {"text", "Josh won against Lio."}},
            {{"tag", "Condition"}, {"text", "He then proceeded to claim victory against Alex."}},
            {{"tag", "Query"}, {"text", "How strong is Josh?"}},
            {{"code", "(query (won-against '(gabe) '(josh)))"}}}}};
}

}  // namespace

TEST(Session, TranslatedUtteranceIsCommitted) {
  auto s = mock_session("tug-of-war");
  const auto& e = s.post(said(Tag::Condition, "Josh won against Lio."));
  EXPECT_EQ(e.index, 0u);
  EXPECT_FALSE(e.direct);
  EXPECT_EQ(e.code, "(condition (won-against '(josh) '(lio)))");
  ASSERT_EQ(e.candidates.size(), 1u);
  EXPECT_EQ(e.candidates[0].frequency, 6u);
  EXPECT_EQ(e.result.kind, EntryResult::Kind::None);
  EXPECT_EQ(s.inference().conditions().size(), 1u);
  ASSERT_EQ(s.history().size(), 1u);
  EXPECT_NE(s.prompt_for({Tag::Query, "q"}).render().find(";; Condition: Josh won against Lio.\n(condition"),
            std::string::npos);
}

TEST(Session, QueryProducesPosterior) {
  auto s = mock_session("tug-of-war");
  s.post(said(Tag::Condition, "Josh won against Lio."));
  const auto& e = s.post(said(Tag::Query, "How strong is Josh?"));
  ASSERT_EQ(e.result.kind, EntryResult::Kind::Posterior);
  EXPECT_EQ(e.result.posterior["kind"], "numeric");
  EXPECT_EQ(e.result.posterior["n"], 200);
  EXPECT_GT(e.result.posterior["mean"].get<double>(), 50.0);
  EXPECT_GT(e.result.posterior["attempts"].get<std::size_t>(), 200u);
  EXPECT_FALSE(e.result.posterior["budget_exhausted"].get<bool>());
}

TEST(Session, DefinitionsAreInstalledAndRecorded) {
  auto s = mock_session("tug-of-war");
  const auto& e = s.post(typed("(define (stronger-than? a b) (> (strength a) (strength b))) "
                               "(condition (stronger-than? 'bob 'john))"));
  EXPECT_EQ(e.tag, Tag::Define);
  EXPECT_TRUE(e.direct);
  EXPECT_EQ(e.result.kind, EntryResult::Kind::DefinitionInstalled);
  EXPECT_EQ(e.result.defined, (std::vector<std::string>{"stronger-than?"}));
  EXPECT_EQ(s.inference().conditions().size(), 1u);
  EXPECT_NO_THROW(s.post(typed("(query (stronger-than? 'bob 'john))")));
  EXPECT_EQ(s.record().entries.back().result.posterior["p"], 1.0);
}

TEST(Session, InvalidDirectCodeIsRejectedWithoutRecording) {
  auto s = mock_session("tug-of-war");
  EXPECT_THROW(s.post(typed("(condition (strength 'a)")), InvalidCode);
  EXPECT_THROW(s.post(typed("(condition (nonsense 'a))")), InvalidCode);
  UtteranceRequest mismatch = typed("(query (strength 'a))");
  mismatch.tag = Tag::Condition;
  EXPECT_THROW(s.post(mismatch), InvalidCode);
  EXPECT_TRUE(s.record().entries.empty());
}

TEST(Session, UntranslatableUtteranceIsRejectedWithoutRecording) {
  auto s = mock_session("tug-of-war");
  EXPECT_THROW(s.post(said(Tag::Condition, "The moon is made of cheese.")), NoValidCandidate);
  UtteranceRequest untagged;
  untagged.text = "Josh won against Lio.";
  EXPECT_THROW(s.post(untagged), BadRequest);
  EXPECT_TRUE(s.record().entries.empty());
}

TEST(Session, OverrideCandidate) {
  auto s = mock_session("tug-of-war");
  auto req = said(Tag::Condition, "Josh won against Lio.");
  req.override_candidate = 1;
  EXPECT_THROW(s.post(req), BadRequest);
  EXPECT_TRUE(s.record().entries.empty());
  req.override_candidate = 0;
  EXPECT_EQ(s.post(req).chosen, 0u);
}

TEST(Session, ZeroAcceptanceIsRecordedAndSessionContinues) {
  auto config = small_config();
  config.budget.max_attempts = 5'000;
  auto s = mock_session("tug-of-war", 3, config);
  s.post(typed("(condition (> (strength 'josh) 1000))"));
  try {
    s.post(typed("(query (strength 'josh))"));
    FAIL() << "expected QueryFailed";
  } catch (const QueryFailed& e) {
    EXPECT_EQ(e.entry().result.kind, EntryResult::Kind::Error);
    EXPECT_EQ(e.entry().result.error["kind"], "ZeroAcceptance");
    EXPECT_EQ(e.entry().result.error["attempts"], 5000);
    EXPECT_EQ(e.entry().result.error["conditions"][0]["first_failures"], 5000);
  }
  ASSERT_EQ(s.record().entries.size(), 2u);
  EXPECT_EQ(s.record().entries[1].result.kind, EntryResult::Kind::Error);
  // The failed query leaves the session usable and is skipped on replay.
  const DialogueSession replayed(s.record(), load_world("tug-of-war"), nullptr, config);
  EXPECT_EQ(replayed.record(), s.record());
  EXPECT_EQ(replayed.history().size(), 1u);
}

TEST(Session, ConstructWorldTreatsDefinesAsFragments) {
  auto s = mock_session("scratch");
  const auto& e = s.post(said(Tag::Define, "First, strength levels vary widely from person to person."));
  EXPECT_EQ(e.tag, Tag::ConstructFragment);
  EXPECT_EQ(e.result.defined, (std::vector<std::string>{"strength"}));
  const auto prompt = s.prompt_for({Tag::Define, "x"}).render();
  EXPECT_NE(prompt.find("medical diagnosis"), std::string::npos);
  EXPECT_NE(prompt.find(";; Define: First, strength levels"), std::string::npos);
  EXPECT_TRUE(prompt.ends_with(";; Define: x\n"));
}

TEST(Session, ReplayRebuildsState) {
  auto s = mock_session("tug-of-war");
  s.post(said(Tag::Condition, "Josh won against Lio."));
  s.post(typed("(define (champion? p) (> (strength p) 70))"));
  s.post(typed("(query (champion? 'josh))"));
  const auto first = s.record().entries.back().result.posterior;
  DialogueSession again(s.record(), load_world("tug-of-war"), make_mock_backend(*load_world("tug-of-war")),
                        small_config());
  EXPECT_EQ(again.record(), s.record());
  EXPECT_EQ(again.history().size(), 3u);
  EXPECT_EQ(again.inference().conditions().size(), 1u);
  EXPECT_EQ(again.post(typed("(query (champion? 'josh))")).result.posterior, first);
}

TEST(Transcript, RoundTrip) {
  auto s = mock_session("tug-of-war");
  s.post(said(Tag::Condition, "Josh won against Lio."));
  s.post(said(Tag::Query, "Would Gabe beat Josh?"));
  s.post(typed("(define (f x) (* 2 x))"));
  const auto text = transcript_text(s.record());
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 4);
  const auto back = parse_transcript(text);
  EXPECT_EQ(back, s.record());
  EXPECT_EQ(transcript_text(back), text);
}

TEST(Transcript, PersistAndLoad) {
  TempDir dir;
  auto s = mock_session("kinship");
  s.post(said(Tag::Condition, "Avery has a sister named Blake."));
  const auto path = dir.path() / "a.jsonl";
  persist_transcript(s.record(), path);
  EXPECT_FALSE(std::filesystem::exists(path.string() + ".tmp"));
  EXPECT_EQ(load_transcript(path), s.record());
  EXPECT_THROW(load_transcript(dir.path() / "missing.jsonl"), TranscriptError);
}

TEST(Transcript, TruncatedFileNamesTheLine) {
  auto s = mock_session("tug-of-war");
  s.post(said(Tag::Condition, "Josh won against Lio."));
  s.post(said(Tag::Condition, "He then proceeded to claim victory against Alex."));
  auto text = transcript_text(s.record());
  text.resize(text.size() - 40);
  try {
    parse_transcript(text);
    FAIL() << "expected TranscriptError";
  } catch (const TranscriptError& e) {
    EXPECT_EQ(e.line(), 3u);
    EXPECT_TRUE(std::string(e.what()).starts_with("line 3: "));
  }
}

TEST(Transcript, RejectsOtherSchemaVersions) {
  auto s = mock_session("tug-of-war");
  auto text = transcript_text(s.record());
  const auto at = text.find("\"schema_version\":1");
  ASSERT_NE(at, std::string::npos);
  text.replace(at, 18, "\"schema_version\":2");
  EXPECT_THROW(parse_transcript(text), UnsupportedTranscriptVersion);
}

TEST(Transcript, RejectsBrokenStructure) {
  EXPECT_THROW(parse_transcript(""), TranscriptError);
  auto s = mock_session("tug-of-war");
  s.post(said(Tag::Condition, "Josh won against Lio."));
  const auto text = transcript_text(s.record());
  const auto header = text.substr(0, text.find('\n') + 1);
  const auto entry = text.substr(header.size());
  try {
    parse_transcript(header + entry + entry);
    FAIL();
  } catch (const TranscriptError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  auto bad_tag = text;
  bad_tag.replace(bad_tag.find("\"tag\":\"Condition\""), 17, "\"tag\":\"Observe\"");
  EXPECT_THROW(parse_transcript(bad_tag), TranscriptError);
}

TEST(Script, RerunIsByteIdentical) {
  const auto a = run_script(tug_script(9), ServiceConfig{});
  const auto b = run_script(tug_script(9), ServiceConfig{});
  ASSERT_EQ(a.exit_code, 0) << a.error;
  EXPECT_EQ(a.record.entries.size(), 4u);
  EXPECT_EQ(transcript_text(a.record), transcript_text(b.record));
  EXPECT_EQ(to_json(a.record).dump(2), to_json(b.record).dump(2));
  const auto c = run_script(tug_script(10), ServiceConfig{});
  EXPECT_NE(a.record.entries[2].result.posterior, c.record.entries[2].result.posterior);
}

TEST(Script, ExitCodes) {
  auto unknown = tug_script(1);
  unknown["world"] = "chess";
  EXPECT_EQ(run_script(unknown, ServiceConfig{}).exit_code, 2);
  auto no_seed = tug_script(1);
  no_seed.erase("seed");
  EXPECT_EQ(run_script(no_seed, ServiceConfig{}).exit_code, 2);
  auto bad_budget = tug_script(1);
  bad_budget["budget"]["target_accepted"] = 0;
  EXPECT_EQ(run_script(bad_budget, ServiceConfig{}).exit_code, 2);
  auto failing = tug_script(1);
  failing["utterances"].push_back({{"tag", "Query"}, {"text", "What is the meaning of life?"}});
  const auto r = run_script(failing, ServiceConfig{});
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_EQ(r.record.entries.size(), 4u);
  EXPECT_TRUE(r.error.starts_with("utterance 4: ")) << r.error;
}

TEST(Script, BundledDialoguesParse) {
  for (const auto& f : std::filesystem::directory_iterator(std::string(WM_SOURCE_DIR) + "/dialogues")) {
    std::ifstream in(f.path());
    const auto j = ojson::parse(in);
    EXPECT_NO_THROW(load_world(j.at("world").get<std::string>())) << f.path();
    EXPECT_TRUE(j.at("utterances").is_array()) << f.path();
    EXPECT_NO_THROW(budget_from_json(j.value("budget", ojson::object()))) << f.path();
  }
}

TEST(Budget, JsonValidation) {
  const auto b = budget_from_json({{"target_accepted", 10}, {"max_attempts", 100}, {"parallel_chains", 2}});
  EXPECT_EQ(b.target_accepted, 10u);
  EXPECT_EQ(b.max_attempts, 100u);
  EXPECT_EQ(b.parallel_chains, 2u);
  EXPECT_THROW(budget_from_json({{"target_accepted", -1}}), std::invalid_argument);
  EXPECT_THROW(budget_from_json({{"target_accepted", "many"}}), std::invalid_argument);
  EXPECT_THROW(budget_from_json({{"target_accepted", 10}, {"max_attempts", 5}}), std::invalid_argument);
  EXPECT_EQ(budget_from_json(to_json(b)).max_attempts, 100u);
}

TEST(Manager, PersistsAndRestoresSessions) {
  TempDir dir;
  auto config = small_config();
  config.data_dir = dir.path().string();
  std::string id;
  SessionRecord before;
  {
    SessionManager m(config);
    const auto rec = m.create("tug-of-war", 5, std::nullopt);
    id = rec.id;
    EXPECT_EQ(rec.seed, 5u);
    EXPECT_EQ(rec.budget.target_accepted, 200u);
    m.post(id, said(Tag::Condition, "Josh won against Lio."));
    m.post(id, said(Tag::Query, "How strong is Josh?"));
    before = *m.get(id);
    EXPECT_EQ(before.entries.size(), 2u);
  }
  EXPECT_TRUE(std::filesystem::exists(dir.path() / (id + ".jsonl")));
  SessionManager restored(config);
  ASSERT_TRUE(restored.get(id));
  EXPECT_EQ(*restored.get(id), before);
  EXPECT_EQ(restored.post(id, said(Tag::Query, "How strong is Josh?")).result.posterior,
            before.entries[1].result.posterior);
}

TEST(Manager, UnknownIdsAndWorlds) {
  SessionManager m(small_config());
  EXPECT_FALSE(m.get("nope"));
  EXPECT_THROW(m.post("nope", said(Tag::Query, "q")), std::out_of_range);
  EXPECT_THROW(m.create("chess", 1, std::nullopt), UnknownWorld);
  const auto a = m.create("kinship", std::nullopt, std::nullopt);
  const auto b = m.create("kinship", std::nullopt, std::nullopt);
  EXPECT_NE(a.id, b.id);
  EXPECT_EQ(a.world, "kinship");
  EXPECT_EQ(a.created_at.size(), 20u);
}

TEST(Manager, FailedQueriesArePublished) {
  auto config = small_config();
  config.budget.max_attempts = 2'000;
  SessionManager m(config);
  const auto id = m.create("tug-of-war", 1, std::nullopt).id;
  m.post(id, typed("(condition (> (strength 'josh) 1000))"));
  EXPECT_THROW(m.post(id, typed("(query (strength 'josh))")), QueryFailed);
  EXPECT_EQ(m.get(id)->entries.size(), 2u);
  EXPECT_EQ(m.get(id)->entries[1].result.kind, EntryResult::Kind::Error);
}

TEST(Manager, RenderUsesSnapshot) {
  SessionManager m(small_config());
  const auto id = m.create("scenes-static", 2, std::nullopt).id;
  m.post(id, typed("(condition (> (length ((filter-shape 'bowl) (objects-in-scene 'scene))) 1))"));
  const auto r = m.render(id, 0, 2);
  std::size_t bowls = 0;
  for (const auto& e : r.scene.entities) bowls += e.glyph == "bowl";
  EXPECT_GE(bowls, 2u);
  EXPECT_THROW(m.render(id, 1, 0), std::out_of_range);
  EXPECT_THROW(m.render("nope", 0, 0), std::out_of_range);
}

TEST(FormatSummary, Boolean) {
  const ojson s = {{"kind", "boolean-probability"}, {"n", 4}, {"acceptance_rate", 0.5}, {"p", 0.25}, {"stderr", 0.2166}};
  const auto text = format_summary(s);
  EXPECT_NE(text.find("n = 4, acceptance rate 0.50000"), std::string::npos);
  EXPECT_NE(text.find("P(true) = 0.250 +/- 0.217"), std::string::npos);
  EXPECT_NE(text.find("  true  |" + std::string(10, '#') + "\n"), std::string::npos);
  EXPECT_NE(text.find("  false |" + std::string(30, '#') + "\n"), std::string::npos);
}

TEST(FormatSummary, NumericAndConstant) {
  auto s = mock_session("tug-of-war");
  s.post(typed("(query (strength 'josh))"));
  const auto text = format_summary(s.record().entries.back().result.posterior);
  EXPECT_NE(text.find("mean "), std::string::npos);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2 + 15);  // ceil(sqrt(200)) bins
  s.post(typed("(query 3)"));
  const auto flat = format_summary(s.record().entries.back().result.posterior);
  EXPECT_NE(flat.find("mean 3.000, sd 0.000, range [3.000, 3.000]"), std::string::npos);
  EXPECT_EQ(std::count(flat.begin(), flat.end(), '\n'), 2);
}

TEST(FormatSummary, CategoricalAndGeneric) {
  auto s = mock_session("tug-of-war");
  s.post(typed("(query (if (> (strength 'josh) 50) 'strong 'weak))"));
  const auto cat = format_summary(s.record().entries.back().result.posterior);
  EXPECT_NE(cat.find("  strong |"), std::string::npos);
  EXPECT_NE(cat.find("  weak |"), std::string::npos);
  s.post(typed("(query (list 1 2))"));
  const auto gen = format_summary(s.record().entries.back().result.posterior);
  EXPECT_NE(gen.find("  (1 2) |" + std::string(40, '#') + " 200"), std::string::npos);
}

TEST(Tags, InferredFromDirectCode) {
  EXPECT_EQ(infer_tag(parse("(define x 1)").forms), Tag::Define);
  EXPECT_EQ(infer_tag(parse("(query x)").forms), Tag::Query);
  EXPECT_EQ(infer_tag(parse("(condition x)").forms), Tag::Condition);
  EXPECT_THROW(infer_tag({}), InvalidCode);
}
