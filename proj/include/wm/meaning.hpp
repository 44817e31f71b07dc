#pragma once

// Meaning function: tagged utterances to candidate program expressions.
//
// A prompt is the world-model source, the example translations, the accepted
// history and a final `;; <Tag>: <text>` line. A backend completes it; each
// completion is parsed, checked against the tag, resolved and dry-run against
// the current session, then de-duplicated and ranked.

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdlib>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "wm/inference.hpp"
#include "wm/sexpr.hpp"

namespace wm {

struct Utterance {
  Tag tag = Tag::Condition;
  std::string text;
};

/// An accepted utterance and the code committed for it.
struct HistoryPair {
  Tag tag = Tag::Condition;
  std::string text;
  std::string code;
};

inline constexpr std::size_t kHistoryLimit = 30;
inline constexpr std::string_view kStopSequence = "\n\n;;";

/// Tag word used on prompt lines. Construct fragments are phrased as defines.
inline std::string_view prompt_tag(Tag tag) { return tag == Tag::ConstructFragment ? "Define" : tag_name(tag); }

inline std::string rtrim(std::string_view s) {
  std::size_t e = s.size();
  while (e > 0 && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(0, e));
}

inline std::string trim(std::string_view s) {
  std::size_t b = 0;
  while (b < s.size() && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  return rtrim(s.substr(b));
}

/// Collapses whitespace onto one line.
inline std::string one_line(std::string_view s) {
  std::string out;
  bool space = false;
  for (char c : trim(s)) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      space = true;
      continue;
    }
    if (space && !out.empty()) out += ' ';
    space = false;
    out += c;
  }
  return out;
}

struct PromptBundle {
  std::string model_text;
  std::string examples_text;
  std::string history_text;
  std::string final_line;

  /// Sections joined by blank lines, ending with the final line and a newline.
  std::string render() const {
    std::string out;
    for (const auto* part : {&model_text, &examples_text, &history_text}) {
      const auto t = rtrim(*part);
      if (t.empty()) continue;
      out += t;
      out += "\n\n";
    }
    out += final_line;
    out += '\n';
    return out;
  }
};

inline std::string render_history(std::span<const HistoryPair> history) {
  const std::size_t start = history.size() > kHistoryLimit ? history.size() - kHistoryLimit : 0;
  std::string out;
  for (std::size_t i = start; i < history.size(); ++i) {
    if (!out.empty()) out += "\n\n";
    out += ";; ";
    out += prompt_tag(history[i].tag);
    out += ": ";
    out += one_line(history[i].text);
    out += '\n';
    out += rtrim(history[i].code);
  }
  return out;
}

inline PromptBundle build_prompt(std::string model_text, std::string examples_text,
                                 std::span<const HistoryPair> history, const Utterance& utterance) {
  PromptBundle p;
  p.model_text = std::move(model_text);
  p.examples_text = std::move(examples_text);
  p.history_text = render_history(history);
  p.final_line = ";; " + std::string(prompt_tag(utterance.tag)) + ": " + one_line(utterance.text);
  return p;
}

// ---------------------------------------------------------------------------
// Backends

struct Completion {
  std::string text;
  double temperature = 0.0;
  std::size_t index = 0;
  std::optional<double> score;
};

/// Transport or authentication failure, as opposed to a bad translation.
class BackendError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TranslatorBackend {
 public:
  virtual ~TranslatorBackend() = default;
  virtual std::vector<Completion> complete(const std::string& prompt, std::size_t n, double temperature,
                                           const std::vector<std::string>& stop) = 0;
  virtual std::string name() const = 0;
};

/// Lower-cased, whitespace-collapsed utterance text used for fixture lookup.
inline std::string fixture_key(std::string_view tag, std::string_view text) {
  std::string key(tag);
  key += '|';
  for (char c : one_line(text)) key += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  while (!key.empty() && (key.back() == '.' || key.back() == '!' || key.back() == '?')) key.pop_back();
  return key;
}

/// Finds the last `;; <Tag>: text` line of a prompt.
inline std::optional<std::pair<Tag, std::string>> final_tagged_line(std::string_view prompt) {
  std::string_view rest = prompt;
  while (!rest.empty()) {
    auto body = std::string_view(rest);
    while (!body.empty() && (body.back() == '\n' || body.back() == '\r' || body.back() == ' ')) body.remove_suffix(1);
    const auto nl = body.rfind('\n');
    const auto line = nl == std::string_view::npos ? body : body.substr(nl + 1);
    if (!trim(line).empty()) return parse_tagged_comment(line);
    if (nl == std::string_view::npos) break;
    rest = body.substr(0, nl);
  }
  return std::nullopt;
}

/// Offline backend answering from `;; Tag: text` + code fixture files. A key
/// that appears more than once has several alternative completions; sample i
/// at nonzero temperature gets alternative i mod count, temperature 0 gets the
/// first.
class MockBackend : public TranslatorBackend {
 public:
  MockBackend() = default;

  void add_fixture_text(std::string_view source) {
    const auto unit = parse(source);
    for (const auto& tf : strip_prompt_forms(unit)) {
      const auto code = unit.text.substr(tf.code_span.begin, tf.code_span.end - tf.code_span.begin);
      table_[fixture_key(prompt_tag(tf.tag), tf.text)].push_back(code);
    }
  }

  void add(Tag tag, std::string_view text, std::string code) {
    table_[fixture_key(prompt_tag(tag), text)].push_back(std::move(code));
  }

  std::size_t size() const { return table_.size(); }

  std::vector<Completion> complete(const std::string& prompt, std::size_t n, double temperature,
                                   const std::vector<std::string>&) override {
    std::vector<Completion> out;
    const auto last = final_tagged_line(prompt);
    const std::vector<std::string>* alts = nullptr;
    if (last) {
      auto it = table_.find(fixture_key(prompt_tag(last->first), last->second));
      if (it != table_.end()) alts = &it->second;
    }
    for (std::size_t i = 0; i < n; ++i) {
      Completion c;
      c.temperature = temperature;
      c.index = i;
      if (alts) {
        c.text = (*alts)[temperature == 0.0 ? 0 : i % alts->size()];
      } else {
        c.text = ";; no fixture for: " + (last ? last->second : std::string("<untagged prompt>"));
      }
      out.push_back(std::move(c));
    }
    return out;
  }

  std::string name() const override { return "mock"; }

 private:
  std::map<std::string, std::vector<std::string>> table_;
};

/// Counts outbound completion requests; tests use it as a network guard.
inline std::atomic<std::size_t>& outbound_request_count() {
  static std::atomic<std::size_t> n{0};
  return n;
}

struct HttpBackendConfig {
  std::string base_url = "http://127.0.0.1:8000";
  std::string completions_path = "/v1/completions";
  std::string model;
  std::string api_key;
  int timeout_seconds = 60;
  int max_tokens = 512;
};

/// Client for an OpenAI-style text completions endpoint.
///
/// Request:  {"model", "prompt", "n", "temperature", "stop", "max_tokens"}
/// Response: {"choices": [{"text", "index", "logprobs": {"token_logprobs": [...]}}]}
/// The score of a choice is the sum of its token log-probabilities when present.
class HttpBackend : public TranslatorBackend {
 public:
  explicit HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {}

  std::vector<Completion> complete(const std::string& prompt, std::size_t n, double temperature,
                                   const std::vector<std::string>& stop) override {
    nlohmann::json req = {{"prompt", prompt},
                          {"n", n},
                          {"temperature", temperature},
                          {"stop", stop},
                          {"max_tokens", config_.max_tokens}};
    if (!config_.model.empty()) req["model"] = config_.model;
    ++outbound_request_count();
    httplib::Client client(config_.base_url);
    client.set_connection_timeout(config_.timeout_seconds);
    client.set_read_timeout(config_.timeout_seconds);
    client.set_write_timeout(config_.timeout_seconds);
    httplib::Headers headers;
    if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);
    auto res = client.Post(config_.completions_path, headers, req.dump(), "application/json");
    if (!res) throw BackendError("completion request failed: " + httplib::to_string(res.error()));
    if (res->status == 401 || res->status == 403) {
      throw BackendError("completion endpoint rejected credentials (HTTP " + std::to_string(res->status) + ")");
    }
    if (res->status != 200) {
      throw BackendError("completion endpoint returned HTTP " + std::to_string(res->status) + ": " +
                         res->body.substr(0, 200));
    }
    nlohmann::json body;
    try {
      body = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
      throw BackendError(std::string("malformed completion response: ") + e.what());
    }
    if (!body.contains("choices") || !body["choices"].is_array()) {
      throw BackendError("completion response has no choices array");
    }
    std::vector<Completion> out;
    std::size_t i = 0;
    for (const auto& ch : body["choices"]) {
      Completion c;
      c.text = ch.value("text", std::string());
      c.index = ch.contains("index") && ch["index"].is_number_unsigned() ? ch["index"].get<std::size_t>() : i;
      c.temperature = temperature;
      if (ch.contains("logprobs") && ch["logprobs"].is_object() && ch["logprobs"].contains("token_logprobs")) {
        double s = 0;
        for (const auto& lp : ch["logprobs"]["token_logprobs"])
          if (lp.is_number()) s += lp.get<double>();
        c.score = s;
      }
      out.push_back(std::move(c));
      ++i;
    }
    return out;
  }

  std::string name() const override { return "http"; }
  const HttpBackendConfig& config() const { return config_; }

 private:
  HttpBackendConfig config_;
};

/// Reads WM_BASE_URL, WM_COMPLETIONS_PATH, WM_MODEL, WM_API_KEY and
/// WM_TIMEOUT_SECONDS.
inline HttpBackendConfig http_config_from_env() {
  HttpBackendConfig c;
  auto get = [](const char* name) -> std::optional<std::string> {
    const char* v = std::getenv(name);
    if (!v || !*v) return std::nullopt;
    return std::string(v);
  };
  if (auto v = get("WM_BASE_URL")) c.base_url = *v;
  if (auto v = get("WM_COMPLETIONS_PATH")) c.completions_path = *v;
  if (auto v = get("WM_MODEL")) c.model = *v;
  if (auto v = get("WM_API_KEY")) c.api_key = *v;
  if (auto v = get("WM_TIMEOUT_SECONDS")) {
    try {
      c.timeout_seconds = std::stoi(*v);
    } catch (const std::exception&) {
      throw std::invalid_argument("WM_TIMEOUT_SECONDS must be an integer");
    }
  }
  return c;
}

/// WM_BACKEND selects "mock" (default) or "http".
inline std::string backend_kind_from_env() {
  const char* v = std::getenv("WM_BACKEND");
  return v && *v ? std::string(v) : std::string("mock");
}

// ---------------------------------------------------------------------------
// Validation

struct Validation {
  bool valid = false;
  std::string reason;
};

/// Cuts a completion at the stop sequence and strips surrounding whitespace.
inline std::string normalize_completion(std::string_view raw) {
  const auto stop = raw.find(kStopSequence);
  return trim(stop == std::string_view::npos ? raw : raw.substr(0, stop));
}

/// Paren balance ignoring strings and comments.
inline std::optional<std::string> paren_problem(std::string_view code) {
  long depth = 0;
  bool in_string = false;
  for (std::size_t i = 0; i < code.size(); ++i) {
    const char c = code[i];
    if (in_string) {
      if (c == '\\') ++i;
      else if (c == '"') in_string = false;
      continue;
    }
    if (c == '"') in_string = true;
    else if (c == ';') {
      while (i < code.size() && code[i] != '\n') ++i;
    } else if (c == '(' || c == '[') ++depth;
    else if (c == ')' || c == ']') {
      if (--depth < 0) return "unbalanced parentheses: unexpected ')' at offset " + std::to_string(i);
    }
  }
  if (in_string) return "unterminated string";
  if (depth > 0) return "unbalanced parentheses: " + std::to_string(depth) + " unclosed";
  return std::nullopt;
}

inline bool is_unary_form(const SExpr& f, std::string_view head) { return f.head() == head && f.as_list().size() == 2; }

/// Splits validated top-level forms into session statements.
inline std::vector<Statement> to_statements(const std::vector<SExpr>& forms) {
  std::vector<Statement> out;
  for (const auto& f : forms) {
    if (f.head() == "define") out.push_back({Statement::Kind::Define, f});
    else if (f.head() == "condition") out.push_back({Statement::Kind::Condition, f.as_list()[1]});
    else out.push_back({Statement::Kind::Query, f.as_list()[1]});
  }
  return out;
}

/// Tag/form agreement only. Returns a reason on mismatch.
inline std::optional<std::string> form_mismatch(const std::vector<SExpr>& forms, Tag tag) {
  if (forms.empty()) return "no code";
  auto count = [&](std::string_view head) {
    return std::count_if(forms.begin(), forms.end(), [&](const SExpr& f) { return f.head() == head; });
  };
  for (const auto& f : forms) {
    const auto h = f.head();
    if ((h == "condition" || h == "query") && !is_unary_form(f, h)) {
      return "malformed " + std::string(h) + " form: " + print(f);
    }
    if (h != "condition" && h != "query" && h != "define") {
      return "top-level form is not define, condition or query: " + print(f);
    }
  }
  switch (tag) {
    case Tag::Condition:
      if (count("condition") != static_cast<long>(forms.size())) return "tag mismatch: Condition expects only condition forms";
      return std::nullopt;
    case Tag::Query:
      if (forms.size() != 1 || count("query") != 1) return "tag mismatch: Query expects exactly one query form";
      return std::nullopt;
    case Tag::Define: {
      std::size_t i = 0;
      while (i < forms.size() && forms[i].head() == "define") ++i;
      if (i == 0) return "tag mismatch: Define expects at least one define form";
      for (; i < forms.size(); ++i)
        if (forms[i].head() != "condition") return "tag mismatch: Define allows only trailing condition forms";
      return std::nullopt;
    }
    case Tag::ConstructFragment:
      if (count("define") != static_cast<long>(forms.size())) return "tag mismatch: model fragments must be define forms";
      return std::nullopt;
  }
  return std::nullopt;
}

inline Validation validate_candidate(std::string_view code, Tag tag, const InferenceSession& session) {
  if (auto p = paren_problem(code)) return {false, *p};
  std::vector<SExpr> forms;
  try {
    forms = parse(code).forms;
  } catch (const ParseError& e) {
    return {false, std::string("parse error: ") + e.what()};
  }
  if (auto m = form_mismatch(forms, tag)) return {false, *m};
  try {
    session.check(to_statements(forms));
  } catch (const EvalError& e) {
    return {false, e.what()};
  } catch (const SessionError& e) {
    return {false, e.what()};
  }
  return {true, {}};
}

// ---------------------------------------------------------------------------
// Translation

struct TranslationCandidate {
  std::string raw;
  std::string code;
  std::vector<SExpr> forms;
  bool valid = false;
  std::string reason;
  double temperature = 0.0;
  std::size_t sample_index = 0;
  std::optional<double> score;
  std::size_t frequency = 1;
};

class NoValidCandidate : public std::runtime_error {
 public:
  explicit NoValidCandidate(std::vector<TranslationCandidate> rejected)
      : std::runtime_error(describe(rejected)), rejected_(std::move(rejected)) {}

  const std::vector<TranslationCandidate>& rejected() const { return rejected_; }

 private:
  static std::string describe(const std::vector<TranslationCandidate>& r) {
    std::string msg = "no valid translation among " + std::to_string(r.size()) + " candidate(s)";
    for (const auto& c : r) msg += "; " + c.reason;
    return msg;
  }
  std::vector<TranslationCandidate> rejected_;
};

struct TranslateOptions {
  std::size_t k = 5;
  double temperature = 0.7;
  bool add_greedy = true;  // one extra sample at temperature 0
};

/// Candidates ranked by validity, backend score, frequency, then first
/// appearance. The first entry is the one to commit.
inline std::vector<TranslationCandidate> rank_candidates(std::vector<TranslationCandidate> cands) {
  std::vector<TranslationCandidate> unique;
  std::unordered_map<std::string, std::size_t> seen;
  for (auto& c : cands) {
    const std::string key = c.forms.empty() ? "raw:" + c.code : "ast:" + print(c.forms);
    auto [it, inserted] = seen.try_emplace(key, unique.size());
    if (inserted) {
      unique.push_back(std::move(c));
    } else {
      auto& u = unique[it->second];
      ++u.frequency;
      if (c.score && (!u.score || *c.score > *u.score)) u.score = c.score;
    }
  }
  std::stable_sort(unique.begin(), unique.end(), [](const TranslationCandidate& a, const TranslationCandidate& b) {
    if (a.valid != b.valid) return a.valid;
    const double sa = a.score.value_or(-std::numeric_limits<double>::infinity());
    const double sb = b.score.value_or(-std::numeric_limits<double>::infinity());
    if (sa != sb) return sa > sb;
    return a.frequency > b.frequency;
  });
  return unique;
}

/// Requests completions for `prompt`, validates them against `session` and
/// returns the ranked candidates. Throws NoValidCandidate if none is valid and
/// BackendError on transport failures.
inline std::vector<TranslationCandidate> translate(const Utterance& utterance, const PromptBundle& prompt,
                                                   const InferenceSession& session, TranslatorBackend& backend,
                                                   const TranslateOptions& options = {}) {
  if (trim(utterance.text).empty()) {
    TranslationCandidate c;
    c.reason = "empty utterance";
    throw NoValidCandidate({c});
  }
  const std::string text = prompt.render();
  const std::vector<std::string> stop{std::string(kStopSequence)};
  std::vector<Completion> completions;
  if (options.add_greedy) completions = backend.complete(text, 1, 0.0, stop);
  if (options.k > 0) {
    auto more = backend.complete(text, options.k, options.temperature, stop);
    for (auto& c : more) {
      c.index += completions.size();
    }
    completions.insert(completions.end(), std::make_move_iterator(more.begin()), std::make_move_iterator(more.end()));
  }
  std::vector<TranslationCandidate> cands;
  for (const auto& comp : completions) {
    TranslationCandidate c;
    c.raw = comp.text;
    c.code = normalize_completion(comp.text);
    c.temperature = comp.temperature;
    c.sample_index = comp.index;
    c.score = comp.score;
    const auto v = validate_candidate(c.code, utterance.tag, session);
    c.valid = v.valid;
    c.reason = v.reason;
    if (!paren_problem(c.code)) {
      try {
        c.forms = parse(c.code).forms;
      } catch (const ParseError&) {
      }
    }
    cands.push_back(std::move(c));
  }
  auto ranked = rank_candidates(std::move(cands));
  if (ranked.empty() || !ranked.front().valid) throw NoValidCandidate(std::move(ranked));
  return ranked;
}

/// Construct mode: the prompt holds an unrelated example world, the fragments
/// accepted so far form the history, and `session` holds those fragments.
inline std::vector<TranslationCandidate> translate_model_fragment(const std::string& sentence,
                                                                  const std::string& example_world_text,
                                                                  std::span<const HistoryPair> constructed,
                                                                  const InferenceSession& session,
                                                                  TranslatorBackend& backend,
                                                                  const TranslateOptions& options = {}) {
  const Utterance u{Tag::ConstructFragment, sentence};
  return translate(u, build_prompt(example_world_text, "", constructed, u), session, backend, options);
}

}  // namespace wm
