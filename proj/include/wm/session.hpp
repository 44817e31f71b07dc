#pragma once

// Dialogue sessions: tagged utterances go through the meaning function, the
// chosen translation is committed to an inference session, and every entry is
// recorded in an append-only transcript.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <shared_mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "wm/inference.hpp"
#include "wm/meaning.hpp"
#include "wm/render.hpp"
#include "wm/worlds.hpp"

namespace wm {

using ojson = nlohmann::ordered_json;

inline constexpr int kTranscriptSchemaVersion = 1;
// Chain index used to seed the sample worlds drawn for renders.
inline constexpr std::uint64_t kRenderChain = kDryRunChain - 2;

// ---------------------------------------------------------------------------
// Records

struct CandidateSummary {
  std::string code;
  bool valid = false;
  std::string reason;
  double temperature = 0;
  std::size_t sample_index = 0;
  std::optional<double> score;
  std::size_t frequency = 1;

  bool operator==(const CandidateSummary&) const = default;
};

struct EntryResult {
  enum class Kind { None, Posterior, DefinitionInstalled, Error };
  Kind kind = Kind::None;
  ojson posterior;     // PosteriorSummary JSON, for Posterior
  ojson error;         // {"kind", "message", ...}, for Error
  std::vector<std::string> defined;  // names, for DefinitionInstalled

  bool operator==(const EntryResult&) const = default;
};

struct UtteranceEntry {
  std::size_t index = 0;
  Tag tag = Tag::Condition;
  std::string text;
  bool direct = false;  // code typed by the user rather than translated
  std::vector<CandidateSummary> candidates;
  std::size_t chosen = 0;
  std::string code;  // the committed code
  EntryResult result;
  std::size_t render_count = 0;
  std::string render_ref;

  bool operator==(const UtteranceEntry&) const = default;
};

struct SessionRecord {
  std::string id;
  std::string world;
  std::string created_at;
  std::uint64_t seed = 0;
  SamplingBudget budget;
  std::vector<UtteranceEntry> entries;
  std::string status = "active";

  bool operator==(const SessionRecord& o) const {
    return id == o.id && world == o.world && created_at == o.created_at && seed == o.seed &&
           budget.target_accepted == o.budget.target_accepted && budget.max_attempts == o.budget.max_attempts &&
           budget.parallel_chains == o.budget.parallel_chains && entries == o.entries && status == o.status;
  }
};

// ---------------------------------------------------------------------------
// JSON

inline std::string_view result_kind_name(EntryResult::Kind k) {
  switch (k) {
    case EntryResult::Kind::None: return "none";
    case EntryResult::Kind::Posterior: return "posterior";
    case EntryResult::Kind::DefinitionInstalled: return "definition-installed";
    case EntryResult::Kind::Error: return "error";
  }
  return "none";
}

inline EntryResult::Kind parse_result_kind(const std::string& s) {
  if (s == "none") return EntryResult::Kind::None;
  if (s == "posterior") return EntryResult::Kind::Posterior;
  if (s == "definition-installed") return EntryResult::Kind::DefinitionInstalled;
  if (s == "error") return EntryResult::Kind::Error;
  throw std::invalid_argument("unknown result kind '" + s + "'");
}

inline Tag require_tag(const std::string& s) {
  auto t = parse_tag(s);
  if (!t) throw std::invalid_argument("unknown tag '" + s + "'");
  return *t;
}

inline ojson to_json(const SamplingBudget& b) {
  return {{"target_accepted", b.target_accepted}, {"max_attempts", b.max_attempts},
          {"parallel_chains", b.parallel_chains}};
}

/// Missing keys keep their defaults. Throws std::invalid_argument on bad values.
inline SamplingBudget budget_from_json(const ojson& j, SamplingBudget b = {}) {
  if (!j.is_object()) throw std::invalid_argument("budget must be an object");
  auto count = [&](const char* key, std::size_t& out) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) {
      throw std::invalid_argument(std::string("budget.") + key + " must be a non-negative integer");
    }
    out = v.get<std::size_t>();
  };
  count("target_accepted", b.target_accepted);
  count("max_attempts", b.max_attempts);
  count("parallel_chains", b.parallel_chains);
  b.validate();
  return b;
}

inline ojson to_json(const PosteriorSummary& s) {
  ojson j;
  j["kind"] = summary_kind_name(s.kind);
  j["n"] = s.n;
  j["acceptance_rate"] = s.acceptance_rate;
  switch (s.kind) {
    case PosteriorSummary::Kind::BooleanProbability:
      j["p"] = s.p;
      j["stderr"] = s.stderr_;
      break;
    case PosteriorSummary::Kind::Numeric:
      j["mean"] = s.mean;
      j["stdev"] = s.stdev;
      j["min"] = s.min;
      j["max"] = s.max;
      j["histogram"] = {{"edges", s.histogram.edges}, {"counts", s.histogram.counts}};
      break;
    case PosteriorSummary::Kind::Categorical:
      j["frequencies"] = ojson::array();
      for (const auto& [k, v] : s.frequencies) j["frequencies"].push_back({{"value", k}, {"proportion", v}});
      break;
    case PosteriorSummary::Kind::Generic:
      j["counts"] = ojson::array();
      for (const auto& [k, v] : s.counts) j["counts"].push_back({{"value", k}, {"count", v}});
      break;
  }
  return j;
}

inline ojson to_json(const CandidateSummary& c) {
  ojson j = {{"code", c.code},         {"valid", c.valid},   {"reason", c.reason},
             {"temperature", c.temperature}, {"sample_index", c.sample_index}};
  j["score"] = c.score ? ojson(*c.score) : ojson(nullptr);
  j["frequency"] = c.frequency;
  return j;
}

inline ojson to_json(const EntryResult& r) {
  ojson j;
  j["kind"] = result_kind_name(r.kind);
  if (r.kind == EntryResult::Kind::Posterior) j["posterior"] = r.posterior;
  if (r.kind == EntryResult::Kind::Error) j["error"] = r.error;
  if (r.kind == EntryResult::Kind::DefinitionInstalled) j["defined"] = r.defined;
  return j;
}

inline ojson to_json(const UtteranceEntry& e) {
  ojson j;
  j["index"] = e.index;
  j["tag"] = tag_name(e.tag);
  j["text"] = e.text;
  j["direct"] = e.direct;
  j["candidates"] = ojson::array();
  for (const auto& c : e.candidates) j["candidates"].push_back(to_json(c));
  j["chosen"] = e.chosen;
  j["code"] = e.code;
  j["result"] = to_json(e.result);
  j["render_count"] = e.render_count;
  j["render_ref"] = e.render_ref;
  return j;
}

inline ojson header_json(const SessionRecord& r) {
  return {{"schema_version", kTranscriptSchemaVersion},
          {"session_id", r.id},
          {"world", r.world},
          {"created_at", r.created_at},
          {"seed", r.seed},
          {"budget", to_json(r.budget)},
          {"status", r.status}};
}

inline ojson to_json(const SessionRecord& r) {
  ojson j = header_json(r);
  j.erase("schema_version");
  j["entries"] = ojson::array();
  for (const auto& e : r.entries) j["entries"].push_back(to_json(e));
  return j;
}

inline CandidateSummary candidate_from_json(const ojson& j) {
  CandidateSummary c;
  c.code = j.at("code").get<std::string>();
  c.valid = j.at("valid").get<bool>();
  c.reason = j.at("reason").get<std::string>();
  c.temperature = j.at("temperature").get<double>();
  c.sample_index = j.at("sample_index").get<std::size_t>();
  if (!j.at("score").is_null()) c.score = j.at("score").get<double>();
  c.frequency = j.at("frequency").get<std::size_t>();
  return c;
}

inline UtteranceEntry entry_from_json(const ojson& j) {
  UtteranceEntry e;
  e.index = j.at("index").get<std::size_t>();
  e.tag = require_tag(j.at("tag").get<std::string>());
  e.text = j.at("text").get<std::string>();
  e.direct = j.at("direct").get<bool>();
  for (const auto& c : j.at("candidates")) e.candidates.push_back(candidate_from_json(c));
  e.chosen = j.at("chosen").get<std::size_t>();
  e.code = j.at("code").get<std::string>();
  const auto& r = j.at("result");
  e.result.kind = parse_result_kind(r.at("kind").get<std::string>());
  if (r.contains("posterior")) e.result.posterior = r.at("posterior");
  if (r.contains("error")) e.result.error = r.at("error");
  if (r.contains("defined")) e.result.defined = r.at("defined").get<std::vector<std::string>>();
  e.render_count = j.at("render_count").get<std::size_t>();
  e.render_ref = j.at("render_ref").get<std::string>();
  return e;
}

// ---------------------------------------------------------------------------
// Transcripts: one JSON object per line, header first

class TranscriptError : public std::runtime_error {
 public:
  TranscriptError(const std::string& what, std::size_t line)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class UnsupportedTranscriptVersion : public TranscriptError {
 public:
  explicit UnsupportedTranscriptVersion(long long version)
      : TranscriptError("unsupported transcript schema version " + std::to_string(version) + " (expected " +
                            std::to_string(kTranscriptSchemaVersion) + ")",
                        1) {}
};

inline std::string transcript_text(const SessionRecord& r) {
  std::string out = header_json(r).dump() + "\n";
  for (const auto& e : r.entries) out += to_json(e).dump() + "\n";
  return out;
}

/// Writes the transcript to a temporary file and renames it into place.
inline void persist_transcript(const SessionRecord& r, const std::filesystem::path& path) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + tmp);
    f << transcript_text(r);
    f.flush();
    if (!f) throw std::runtime_error("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline SessionRecord parse_transcript(std::string_view text) {
  SessionRecord r;
  std::size_t line_no = 0, pos = 0;
  bool have_header = false;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    const auto line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    ++line_no;
    if (trim(line).empty()) continue;
    ojson j;
    try {
      j = ojson::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw TranscriptError(std::string("corrupt JSON: ") + e.what(), line_no);
    }
    try {
      if (!have_header) {
        const auto version = j.at("schema_version").get<long long>();
        if (version != kTranscriptSchemaVersion) throw UnsupportedTranscriptVersion(version);
        r.id = j.at("session_id").get<std::string>();
        r.world = j.at("world").get<std::string>();
        r.created_at = j.at("created_at").get<std::string>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.budget = budget_from_json(j.at("budget"));
        r.status = j.at("status").get<std::string>();
        have_header = true;
      } else {
        auto e = entry_from_json(j);
        if (e.index != r.entries.size()) throw std::invalid_argument("entry index out of sequence");
        r.entries.push_back(std::move(e));
      }
    } catch (const TranscriptError&) {
      throw;
    } catch (const std::exception& e) {
      throw TranscriptError(e.what(), line_no);
    }
  }
  if (!have_header) throw TranscriptError("missing session header", line_no);
  return r;
}

inline SessionRecord load_transcript(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw TranscriptError("cannot open " + path.string(), 0);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_transcript(ss.str());
}

// ---------------------------------------------------------------------------
// Utterance processing

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string data_dir;  // empty: nothing is written to disk
  std::string backend = "mock";
  SamplingBudget budget;
  std::size_t render_samples = 4;
  TranslateOptions translate;
};

/// Client-side mistakes in a request (HTTP 400).
class BadRequest : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The committed code failed validation (HTTP 422).
class InvalidCode : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inference found no accepted world; the failed entry is still recorded.
class QueryFailed : public std::runtime_error {
 public:
  QueryFailed(const ZeroAcceptance& z, UtteranceEntry entry) : std::runtime_error(z.what()), entry_(std::move(entry)) {}
  const UtteranceEntry& entry() const { return entry_; }

 private:
  UtteranceEntry entry_;
};

struct UtteranceRequest {
  std::optional<Tag> tag;
  std::string text;
  std::optional<std::string> code;  // direct code bypasses translation
  std::optional<std::size_t> override_candidate;
};

inline ojson zero_acceptance_json(const ZeroAcceptance& z) {
  ojson j = {{"kind", "ZeroAcceptance"}, {"message", z.what()}, {"attempts", z.attempts()}};
  j["conditions"] = ojson::array();
  for (const auto& c : z.conditions())
    j["conditions"].push_back(
        {{"source", c.source}, {"evaluations", c.evaluations}, {"first_failures", c.first_failures}});
  j["continuous_equalities"] = z.continuous_equalities();
  return j;
}

/// Tag implied by directly entered code.
inline Tag infer_tag(const std::vector<SExpr>& forms) {
  if (forms.empty()) throw InvalidCode("no code");
  if (forms.front().head() == "define") return Tag::Define;
  if (forms.front().head() == "query") return Tag::Query;
  return Tag::Condition;
}

inline std::string world_model_text(const WorldModel& world) {
  return world.construct ? std::string(world.examples.text) : world.prompt_model_text();
}

inline std::string world_examples_text(const WorldModel& world) {
  return world.construct ? std::string() : std::string(world.examples.text);
}

/// Mock backend answering from the world's example translations and fixtures.
inline std::unique_ptr<MockBackend> make_mock_backend(const WorldModel& world) {
  auto b = std::make_unique<MockBackend>();
  b->add_fixture_text(world.examples.text);
  if (!world.fixtures_text.empty()) b->add_fixture_text(world.fixtures_text);
  return b;
}

/// Backend named by `kind` ("mock" or "http"; http reads its settings from the
/// environment).
inline std::unique_ptr<TranslatorBackend> make_backend(const std::string& kind, const WorldModel& world) {
  if (kind == "mock") return make_mock_backend(world);
  if (kind == "http") return std::make_unique<HttpBackend>(http_config_from_env());
  throw std::invalid_argument("unknown backend '" + kind + "' (expected mock or http)");
}

/// Live state of one dialogue.
class DialogueSession {
 public:
  DialogueSession(SessionRecord record, WorldPtr world, std::unique_ptr<TranslatorBackend> backend,
                  ServiceConfig config)
      : record_(std::move(record)),
        world_(std::move(world)),
        backend_(std::move(backend)),
        config_(std::move(config)),
        inference_(world_->forms(), record_.seed, record_.budget) {
    auto entries = std::move(record_.entries);
    record_.entries.clear();
    for (auto& e : entries) replay(std::move(e));
  }

  const SessionRecord& record() const { return record_; }
  const WorldModel& world() const { return *world_; }
  const InferenceSession& inference() const { return inference_; }
  const std::vector<HistoryPair>& history() const { return history_; }
  TranslatorBackend& backend() { return *backend_; }

  PromptBundle prompt_for(const Utterance& u) const {
    return build_prompt(world_model_text(*world_), world_examples_text(*world_), history_, u);
  }

  /// Translates (unless code is given), commits and records one utterance.
  /// Throws NoValidCandidate, BackendError, BadRequest, InvalidCode, or
  /// QueryFailed (after recording the failed entry).
  const UtteranceEntry& post(const UtteranceRequest& req) {
    UtteranceEntry e;
    e.index = record_.entries.size();
    if (req.code) {
      e.direct = true;
      std::vector<SExpr> forms;
      try {
        forms = parse(*req.code).forms;
      } catch (const ParseError& err) {
        throw InvalidCode(std::string("parse error: ") + err.what());
      }
      e.tag = req.tag ? *req.tag : infer_tag(forms);
      if (world_->construct && e.tag == Tag::Define) e.tag = Tag::ConstructFragment;
      e.code = normalize_completion(*req.code);
      e.text = req.text.empty() ? one_line(e.code) : req.text;
      const auto v = validate_candidate(e.code, e.tag, inference_);
      if (!v.valid) throw InvalidCode(v.reason);
      e.candidates.push_back({e.code, true, "", 0.0, 0, std::nullopt, 1});
    } else {
      if (!req.tag) throw BadRequest("utterance needs a tag");
      e.tag = *req.tag;
      if (world_->construct && e.tag == Tag::Define) e.tag = Tag::ConstructFragment;
      e.text = req.text;
      const Utterance u{e.tag, e.text};
      auto ranked = translate(u, prompt_for(u), inference_, *backend_, config_.translate);
      for (const auto& c : ranked)
        e.candidates.push_back({c.code, c.valid, c.reason, c.temperature, c.sample_index, c.score, c.frequency});
      std::size_t chosen = 0;
      if (req.override_candidate) {
        chosen = *req.override_candidate;
        if (chosen >= e.candidates.size()) {
          throw BadRequest("override_candidate " + std::to_string(chosen) + " is out of range (" +
                           std::to_string(e.candidates.size()) + " candidates)");
        }
        if (!e.candidates[chosen].valid) throw BadRequest("override_candidate refers to an invalid candidate");
      }
      e.chosen = chosen;
      e.code = e.candidates[chosen].code;
    }
    commit(e);
    return record_.entries.back();
  }

  /// Renders the k-th conditioned sample world as of entry `index`.
  Rendered render(std::size_t index, std::size_t k) const {
    if (world_->render_kind == RenderKind::None) throw BadRequest("world '" + world_->id + "' has nothing to render");
    if (index >= record_.entries.size()) throw std::out_of_range("no entry " + std::to_string(index));
    SessionRecord upto = record_;
    upto.entries.resize(index + 1);
    DialogueSession replayed(std::move(upto), world_, nullptr, config_);
    return replayed.render_latest(k);
  }

 private:
  /// Commits an entry taken from a stored record, without re-translating.
  void replay(UtteranceEntry e) {
    if (e.result.kind == EntryResult::Kind::Error) {
      record_.entries.push_back(std::move(e));
      return;
    }
    const auto forms = parse(e.code).forms;
    apply(forms);
    history_.push_back({e.tag, e.text, e.code});
    record_.entries.push_back(std::move(e));
  }

  std::vector<std::string> apply(const std::vector<SExpr>& forms) {
    std::vector<SExpr> defines;
    std::vector<std::string> names;
    for (const auto& f : forms) {
      if (f.head() != "define") continue;
      defines.push_back(f);
      const auto& target = f.as_list().at(1);
      names.push_back(target.is_list() ? target.as_list().at(0).as_symbol() : target.as_symbol());
    }
    if (!defines.empty()) inference_.add_definition(defines);
    for (const auto& f : forms)
      if (f.head() == "condition") inference_.add_condition(f.as_list()[1]);
    return names;
  }

  void commit(UtteranceEntry& e) {
    const auto forms = parse(e.code).forms;
    if (e.tag == Tag::Query) {
      try {
        auto q = inference_.run_query(forms.front().as_list()[1]);
        e.result.kind = EntryResult::Kind::Posterior;
        e.result.posterior = to_json(q.summary);
        e.result.posterior["attempts"] = q.samples.attempts;
        e.result.posterior["budget_exhausted"] = q.samples.budget_exhausted;
      } catch (const ZeroAcceptance& z) {
        e.result.kind = EntryResult::Kind::Error;
        e.result.error = zero_acceptance_json(z);
        record_.entries.push_back(e);
        throw QueryFailed(z, e);
      }
    } else {
      e.result.defined = apply(forms);
      e.result.kind = e.result.defined.empty() ? EntryResult::Kind::None : EntryResult::Kind::DefinitionInstalled;
      if (e.tag == Tag::Condition && world_->render_kind != RenderKind::None) {
        e.render_count = config_.render_samples;
        e.render_ref = "/sessions/" + record_.id + "/entries/" + std::to_string(e.index) + "/render";
      }
    }
    history_.push_back({e.tag, e.text, e.code});
    record_.entries.push_back(e);
  }

  Rendered render_latest(std::size_t k) const {
    const auto seed = derive_chain_seed(record_.seed, kRenderChain, record_.entries.size() - 1);
    PosteriorSamples samples;
    try {
      samples = inference_.sample_conditioned(parse_one(world_->root_expr), k + 1, record_.budget.max_attempts, seed);
    } catch (const ZeroAcceptance& z) {
      throw BadRequest(std::string("nothing to render: ") + z.what());
    }
    if (samples.values.size() <= k) {
      throw BadRequest("only " + std::to_string(samples.values.size()) + " conditioned worlds found in " +
                       std::to_string(samples.attempts) + " attempts");
    }
    return render_scene(samples.values[k], *world_);
  }

  SessionRecord record_;
  WorldPtr world_;
  std::unique_ptr<TranslatorBackend> backend_;
  ServiceConfig config_;
  InferenceSession inference_;
  std::vector<HistoryPair> history_;
};

// ---------------------------------------------------------------------------
// Text output for the REPL and CLI

inline std::string bar(double fraction, std::size_t width = 40) {
  const auto n = static_cast<std::size_t>(fraction * static_cast<double>(width) + 0.5);
  return std::string(std::min(n, width), '#');
}

inline std::string fixed(double v, int digits = 3) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

inline std::string format_summary(const ojson& s) {
  std::ostringstream os;
  const auto kind = s.at("kind").get<std::string>();
  const auto n = s.at("n").get<std::size_t>();
  os << "n = " << n << ", acceptance rate " << fixed(s.at("acceptance_rate").get<double>(), 5) << "\n";
  if (kind == "boolean-probability") {
    const double p = s.at("p").get<double>();
    os << "P(true) = " << fixed(p) << " +/- " << fixed(s.at("stderr").get<double>()) << "\n";
    os << "  true  |" << bar(p) << "\n  false |" << bar(1 - p) << "\n";
  } else if (kind == "numeric") {
    os << "mean " << fixed(s.at("mean").get<double>()) << ", sd " << fixed(s.at("stdev").get<double>()) << ", range ["
       << fixed(s.at("min").get<double>()) << ", " << fixed(s.at("max").get<double>()) << "]\n";
    if (s.at("min").get<double>() == s.at("max").get<double>()) return os.str();
    const auto& h = s.at("histogram");
    const auto edges = h.at("edges").get<std::vector<double>>();
    const auto counts = h.at("counts").get<std::vector<std::size_t>>();
    std::size_t peak = 1;
    for (auto c : counts) peak = std::max(peak, c);
    for (std::size_t i = 0; i < counts.size(); ++i) {
      os << "  " << std::setw(9) << fixed(edges[i], 2) << " |" << bar(static_cast<double>(counts[i]) / peak) << " "
         << counts[i] << "\n";
    }
  } else if (kind == "categorical") {
    for (const auto& f : s.at("frequencies")) {
      os << "  " << f.at("value").get<std::string>() << " |" << bar(f.at("proportion").get<double>()) << " "
         << fixed(f.at("proportion").get<double>()) << "\n";
    }
  } else {
    for (const auto& c : s.at("counts")) {
      const auto count = c.at("count").get<std::size_t>();
      os << "  " << c.at("value").get<std::string>() << " |" << bar(static_cast<double>(count) / n) << " " << count
         << "\n";
    }
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Scripts

struct ScriptResult {
  SessionRecord record;
  int exit_code = 0;  // 0 ok, 1 an utterance failed, 2 unknown world or bad script
  std::string error;
};

/// Runs a dialogue script `{world, seed, budget?, utterances: [{tag, text} | {code}]}`.
/// The record id and timestamp are fixed so reruns are byte-identical.
inline ScriptResult run_script(const ojson& script, const ServiceConfig& config) {
  ScriptResult out;
  WorldPtr world;
  SamplingBudget budget = config.budget;
  std::uint64_t seed = 0;
  try {
    world = load_world(script.at("world").get<std::string>());
    seed = script.at("seed").get<std::uint64_t>();
    if (script.contains("budget")) budget = budget_from_json(script.at("budget"), budget);
    if (!script.at("utterances").is_array()) throw std::invalid_argument("utterances must be an array");
  } catch (const std::exception& e) {
    out.exit_code = 2;
    out.error = e.what();
    return out;
  }
  SessionRecord rec;
  rec.id = "script-" + std::to_string(seed);
  rec.world = world->id;
  rec.created_at = "1970-01-01T00:00:00Z";
  rec.seed = seed;
  rec.budget = budget;
  DialogueSession session(rec, world, make_backend(config.backend, *world), config);
  std::size_t i = 0;
  for (const auto& u : script.at("utterances")) {
    UtteranceRequest req;
    try {
      if (u.contains("code")) {
        req.code = u.at("code").get<std::string>();
        if (u.contains("tag")) req.tag = require_tag(u.at("tag").get<std::string>());
      } else {
        req.tag = require_tag(u.at("tag").get<std::string>());
        req.text = u.at("text").get<std::string>();
      }
      if (u.contains("override_candidate")) req.override_candidate = u.at("override_candidate").get<std::size_t>();
      session.post(req);
    } catch (const std::exception& e) {
      out.exit_code = 1;
      out.error = "utterance " + std::to_string(i) + ": " + e.what();
      break;
    }
    ++i;
  }
  out.record = session.record();
  return out;
}

// ---------------------------------------------------------------------------
// Session manager

inline std::string random_session_id() {
  static std::mutex mu;
  static std::random_device rd;
  std::lock_guard<std::mutex> lock(mu);
  std::ostringstream os;
  for (int i = 0; i < 4; ++i) os << std::hex << std::setw(8) << std::setfill('0') << rd();
  return os.str();
}

inline std::uint64_t random_seed() {
  static std::mutex mu;
  static std::random_device rd;
  std::lock_guard<std::mutex> lock(mu);
  return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

inline std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Sessions by id. Writes to one session are serialized; reads of the
/// recorded entries take a snapshot and never wait for a running query.
class SessionManager {
 public:
  explicit SessionManager(ServiceConfig config) : config_(std::move(config)) {
    if (!config_.data_dir.empty()) {
      std::filesystem::create_directories(config_.data_dir);
      for (const auto& f : std::filesystem::directory_iterator(config_.data_dir)) {
        if (f.path().extension() != ".jsonl") continue;
        auto rec = load_transcript(f.path());
        auto world = load_world(rec.world);
        install(std::move(rec), std::move(world));
      }
    }
  }

  const ServiceConfig& config() const { return config_; }

  SessionRecord create(const std::string& world_id, std::optional<std::uint64_t> seed,
                       std::optional<SamplingBudget> budget) {
    auto world = load_world(world_id);
    SessionRecord rec;
    rec.id = random_session_id();
    rec.world = world->id;
    rec.created_at = utc_now();
    rec.seed = seed ? *seed : random_seed();
    rec.budget = budget ? *budget : config_.budget;
    auto& slot = install(rec, std::move(world));
    persist(slot);
    return rec;
  }

  std::optional<SessionRecord> get(const std::string& id) const {
    auto s = find(id);
    if (!s) return std::nullopt;
    std::lock_guard<std::mutex> lock(s->read_mu);
    return s->snapshot;
  }

  /// Returns the new entry. Throws std::out_of_range for unknown sessions and
  /// whatever DialogueSession::post throws.
  UtteranceEntry post(const std::string& id, const UtteranceRequest& req) {
    auto s = find(id);
    if (!s) throw std::out_of_range("unknown session '" + id + "'");
    std::lock_guard<std::mutex> write(s->write_mu);
    try {
      auto entry = s->live->post(req);
      publish(*s);
      return entry;
    } catch (const QueryFailed&) {
      publish(*s);
      throw;
    }
  }

  Rendered render(const std::string& id, std::size_t entry, std::size_t k) const {
    auto s = find(id);
    if (!s) throw std::out_of_range("unknown session '" + id + "'");
    SessionRecord snap;
    {
      std::lock_guard<std::mutex> lock(s->read_mu);
      snap = s->snapshot;
    }
    if (entry >= snap.entries.size()) throw std::out_of_range("no entry " + std::to_string(entry));
    const auto upto = entry + 1;
    snap.entries.resize(upto);
    DialogueSession replay(std::move(snap), s->world, nullptr, config_);
    return replay.render(entry, k);
  }

 private:
  struct Slot {
    WorldPtr world;
    std::unique_ptr<DialogueSession> live;
    std::mutex write_mu;
    mutable std::mutex read_mu;
    SessionRecord snapshot;
  };

  Slot& install(SessionRecord rec, WorldPtr world) {
    auto slot = std::make_shared<Slot>();
    slot->world = world;
    slot->live = std::make_unique<DialogueSession>(rec, world, make_backend(config_.backend, *world), config_);
    slot->snapshot = slot->live->record();
    std::lock_guard<std::mutex> lock(mu_);
    auto& ref = *slot;
    sessions_[rec.id] = std::move(slot);
    return ref;
  }

  std::shared_ptr<Slot> find(const std::string& id) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : it->second;
  }

  void persist(Slot& s) const {
    if (config_.data_dir.empty()) return;
    persist_transcript(s.live->record(), std::filesystem::path(config_.data_dir) / (s.live->record().id + ".jsonl"));
  }

  void publish(Slot& s) const {
    persist(s);
    std::lock_guard<std::mutex> lock(s.read_mu);
    s.snapshot = s.live->record();
  }

  ServiceConfig config_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<Slot>> sessions_;
};

}  // namespace wm
