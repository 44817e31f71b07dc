#pragma once

// Surface syntax shared by world models, translations and the REPL.

#include <charconv>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace wm {

struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;

  bool contains(const Span& other) const { return begin <= other.begin && other.end <= end; }
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line, std::size_t column, std::size_t offset)
      : std::runtime_error(what + " at line " + std::to_string(line) + ", column " + std::to_string(column)),
        line_(line), column_(column), offset_(offset) {}

  std::size_t line() const { return line_; }
  std::size_t column() const { return column_; }
  std::size_t offset() const { return offset_; }

 private:
  std::size_t line_, column_, offset_;
};

class SExpr {
 public:
  struct Symbol {
    std::string name;
    bool operator==(const Symbol&) const = default;
  };
  struct String {
    std::string text;
    bool operator==(const String&) const = default;
  };
  using List = std::vector<SExpr>;
  using Data = std::variant<Symbol, double, bool, String, List>;

  SExpr() : data_(List{}) {}
  SExpr(Data data, Span span = {}) : data_(std::move(data)), span_(span) {}

  static SExpr symbol(std::string name, Span span = {}) { return SExpr(Symbol{std::move(name)}, span); }
  static SExpr number(double value, Span span = {}) { return SExpr(value, span); }
  static SExpr boolean(bool value, Span span = {}) { return SExpr(value, span); }
  static SExpr string(std::string text, Span span = {}) { return SExpr(String{std::move(text)}, span); }
  static SExpr list(List items, Span span = {}) { return SExpr(std::move(items), span); }

  bool is_symbol() const { return std::holds_alternative<Symbol>(data_); }
  bool is_number() const { return std::holds_alternative<double>(data_); }
  bool is_boolean() const { return std::holds_alternative<bool>(data_); }
  bool is_string() const { return std::holds_alternative<String>(data_); }
  bool is_list() const { return std::holds_alternative<List>(data_); }

  bool is_symbol(std::string_view name) const { return is_symbol() && as_symbol() == name; }

  const std::string& as_symbol() const { return std::get<Symbol>(data_).name; }
  double as_number() const { return std::get<double>(data_); }
  bool as_boolean() const { return std::get<bool>(data_); }
  const std::string& as_string() const { return std::get<String>(data_).text; }
  const List& as_list() const { return std::get<List>(data_); }
  List& as_list() { return std::get<List>(data_); }

  /// Head symbol of a non-empty list whose first element is a symbol, else empty.
  std::string_view head() const {
    if (!is_list()) return {};
    const auto& items = as_list();
    if (items.empty() || !items.front().is_symbol()) return {};
    return items.front().as_symbol();
  }

  const Data& data() const { return data_; }
  Span span() const { return span_; }
  void set_span(Span span) { span_ = span; }

  // Structural equality; spans are ignored.
  friend bool operator==(const SExpr& a, const SExpr& b) { return a.data_ == b.data_; }

 private:
  Data data_;
  Span span_;
};

struct Comment {
  Span span;
  std::string text;  // verbatim, including the leading semicolons
};

struct SourceUnit {
  std::string text;
  std::vector<SExpr> forms;
  std::vector<Comment> comments;
};

enum class Tag { Condition, Query, Define, ConstructFragment };

inline std::string_view tag_name(Tag tag) {
  switch (tag) {
    case Tag::Condition: return "Condition";
    case Tag::Query: return "Query";
    case Tag::Define: return "Define";
    case Tag::ConstructFragment: return "ConstructFragment";
  }
  return "?";
}

inline std::optional<Tag> parse_tag(std::string_view name) {
  if (name == "Condition" || name == "condition") return Tag::Condition;
  if (name == "Query" || name == "query") return Tag::Query;
  if (name == "Define" || name == "define") return Tag::Define;
  if (name == "ConstructFragment" || name == "construct" || name == "Construct") return Tag::ConstructFragment;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Number formatting

/// Integers print without a decimal point; everything else uses the shortest
/// representation that round-trips.
inline std::string format_number(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  if (value == 0.0) return "0";
  if (std::floor(value) == value && std::fabs(value) < 1e15) {
    char buf[32];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, static_cast<long long>(value));
    return std::string(buf, end);
  }
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, end);
}

// ---------------------------------------------------------------------------
// Lexing / parsing

namespace detail {

inline bool is_symbol_char(char c) {
  if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9')) return true;
  switch (c) {
    case '-': case '_': case '?': case '!': case '>': case '<': case '=': case '*':
    case '/': case '+': case '.': case ':': case '%': case '&': case '^': case '~': case '#':
      return true;
    default:
      return false;
  }
}

inline bool is_delimiter(char c) {
  return c == '(' || c == ')' || c == '[' || c == ']' || c == '\'' || c == '"' || c == ';' || c == ' ' ||
         c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline std::optional<double> parse_number_token(std::string_view tok) {
  if (tok.empty()) return std::nullopt;
  std::size_t i = 0;
  if (tok[0] == '+' || tok[0] == '-') i = 1;
  if (i >= tok.size()) return std::nullopt;
  const bool digit_start = (tok[i] >= '0' && tok[i] <= '9') ||
                           (tok[i] == '.' && i + 1 < tok.size() && tok[i + 1] >= '0' && tok[i + 1] <= '9');
  if (!digit_start) return std::nullopt;
  std::string_view body = tok[0] == '+' ? tok.substr(1) : tok;
  double value = 0;
  auto [ptr, ec] = std::from_chars(body.data(), body.data() + body.size(), value);
  if (ec != std::errc() || ptr != body.data() + body.size()) return std::nullopt;
  return value;
}

class Parser {
 public:
  explicit Parser(std::string_view text) : text_(text) {}

  SourceUnit parse_unit() {
    SourceUnit unit;
    unit.text = std::string(text_);
    comments_ = &unit.comments;
    while (true) {
      skip_space();
      if (pos_ >= text_.size()) break;
      if (text_[pos_] == ')' || text_[pos_] == ']') fail("unexpected closing parenthesis", pos_);
      unit.forms.push_back(parse_expr());
    }
    return unit;
  }

 private:
  [[noreturn]] void fail(const std::string& what, std::size_t at) const {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < at && i < text_.size(); ++i) {
      if (text_[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ParseError(what, line, col, at);
  }

  void skip_space() {
    while (pos_ < text_.size()) {
      const char c = text_[pos_];
      if (c == ';') {
        const std::size_t start = pos_;
        while (pos_ < text_.size() && text_[pos_] != '\n') ++pos_;
        std::size_t end = pos_;
        while (end > start && (text_[end - 1] == '\r' || text_[end - 1] == ' ' || text_[end - 1] == '\t')) --end;
        if (comments_) comments_->push_back(Comment{{start, end}, std::string(text_.substr(start, end - start))});
      } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
        ++pos_;
      } else {
        break;
      }
    }
  }

  SExpr parse_expr() {
    skip_space();
    if (pos_ >= text_.size()) fail("unexpected end of input", pos_);
    const std::size_t start = pos_;
    const char c = text_[pos_];
    if (c == '(' || c == '[') {
      const char close = c == '(' ? ')' : ']';
      ++pos_;
      SExpr::List items;
      while (true) {
        skip_space();
        if (pos_ >= text_.size()) fail("unbalanced parentheses: missing '" + std::string(1, close) + "'", pos_);
        if (text_[pos_] == ')' || text_[pos_] == ']') {
          if (text_[pos_] != close) fail("mismatched closing bracket", pos_);
          ++pos_;
          break;
        }
        items.push_back(parse_expr());
      }
      return SExpr::list(std::move(items), {start, pos_});
    }
    if (c == '\'') {
      ++pos_;
      SExpr quoted = parse_expr();
      SExpr::List items;
      items.push_back(SExpr::symbol("quote", {start, start + 1}));
      items.push_back(std::move(quoted));
      return SExpr::list(std::move(items), {start, pos_});
    }
    if (c == '"') return parse_string();
    while (pos_ < text_.size() && !is_delimiter(text_[pos_])) {
      if (!is_symbol_char(text_[pos_])) fail(std::string("illegal character '") + text_[pos_] + "'", pos_);
      ++pos_;
    }
    if (pos_ == start) fail(std::string("illegal character '") + c + "'", pos_);
    const std::string_view tok = text_.substr(start, pos_ - start);
    const Span span{start, pos_};
    if (tok == "true" || tok == "#t") return SExpr::boolean(true, span);
    if (tok == "false" || tok == "#f") return SExpr::boolean(false, span);
    if (auto num = parse_number_token(tok)) return SExpr::number(*num, span);
    if (tok[0] == '#') fail("illegal token '" + std::string(tok) + "'", start);
    return SExpr::symbol(std::string(tok), span);
  }

  SExpr parse_string() {
    const std::size_t start = pos_++;
    std::string out;
    while (true) {
      if (pos_ >= text_.size()) fail("unterminated string literal", start);
      const char c = text_[pos_++];
      if (c == '"') break;
      if (c == '\\') {
        if (pos_ >= text_.size()) fail("unterminated string literal", start);
        const char e = text_[pos_++];
        if (e != '"' && e != '\\') fail(std::string("unsupported escape '\\") + e + "'", pos_ - 2);
        out.push_back(e);
      } else {
        out.push_back(c);
      }
    }
    return SExpr::string(std::move(out), {start, pos_});
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  std::vector<Comment>* comments_ = nullptr;
};

inline void print_into(std::string& out, const SExpr& e) {
  if (e.is_symbol()) {
    out += e.as_symbol();
  } else if (e.is_number()) {
    out += format_number(e.as_number());
  } else if (e.is_boolean()) {
    out += e.as_boolean() ? "true" : "false";
  } else if (e.is_string()) {
    out.push_back('"');
    for (char c : e.as_string()) {
      if (c == '"' || c == '\\') out.push_back('\\');
      out.push_back(c);
    }
    out.push_back('"');
  } else {
    const auto& items = e.as_list();
    if (items.size() == 2 && items[0].is_symbol("quote")) {
      out.push_back('\'');
      print_into(out, items[1]);
      return;
    }
    out.push_back('(');
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (i) out.push_back(' ');
      print_into(out, items[i]);
    }
    out.push_back(')');
  }
}

}  // namespace detail

/// Parses every top-level form; throws ParseError carrying line/column.
inline SourceUnit parse(std::string_view text) { return detail::Parser(text).parse_unit(); }

/// Parses text that must contain exactly one form.
inline SExpr parse_one(std::string_view text) {
  SourceUnit unit = parse(text);
  if (unit.forms.size() != 1) {
    throw ParseError("expected exactly one form, found " + std::to_string(unit.forms.size()), 1, 1, 0);
  }
  return std::move(unit.forms.front());
}

/// Canonical single-line rendering.
inline std::string print(const SExpr& e) {
  std::string out;
  detail::print_into(out, e);
  return out;
}

inline std::string print(const std::vector<SExpr>& forms, std::string_view sep = "\n") {
  std::string out;
  for (std::size_t i = 0; i < forms.size(); ++i) {
    if (i) out += sep;
    detail::print_into(out, forms[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tagged comment pairing (";; Condition: ..." followed by code)

struct TaggedForms {
  Tag tag;
  std::string text;  // utterance text after "<Tag>:"
  std::vector<SExpr> forms;
  Span code_span;  // from the first form's start to the last form's end
};

/// Recognises ";; Condition: text" style comments. Returns the tag and text.
inline std::optional<std::pair<Tag, std::string>> parse_tagged_comment(std::string_view comment) {
  std::size_t i = 0;
  while (i < comment.size() && comment[i] == ';') ++i;
  while (i < comment.size() && (comment[i] == ' ' || comment[i] == '\t')) ++i;
  const std::size_t colon = comment.find(':', i);
  if (colon == std::string_view::npos) return std::nullopt;
  const std::string_view word = comment.substr(i, colon - i);
  std::optional<Tag> tag;
  if (word == "Condition") tag = Tag::Condition;
  else if (word == "Query") tag = Tag::Query;
  else if (word == "Define") tag = Tag::Define;
  if (!tag) return std::nullopt;
  std::size_t t = colon + 1;
  while (t < comment.size() && (comment[t] == ' ' || comment[t] == '\t')) ++t;
  std::size_t e = comment.size();
  while (e > t && (comment[e - 1] == ' ' || comment[e - 1] == '\t')) --e;
  return std::make_pair(*tag, std::string(comment.substr(t, e - t)));
}

class TaggedFormError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Pairs each tagged comment with the top-level forms that follow it, up to the
/// next tagged comment.
inline std::vector<TaggedForms> strip_prompt_forms(const SourceUnit& unit) {
  struct Marker {
    std::size_t offset;
    Tag tag;
    std::string text;
  };
  std::vector<Marker> markers;
  for (const auto& c : unit.comments) {
    if (auto parsed = parse_tagged_comment(c.text)) markers.push_back({c.span.begin, parsed->first, parsed->second});
  }
  std::vector<TaggedForms> out;
  for (std::size_t m = 0; m < markers.size(); ++m) {
    const std::size_t lo = markers[m].offset;
    const std::size_t hi = m + 1 < markers.size() ? markers[m + 1].offset : unit.text.size() + 1;
    TaggedForms tf{markers[m].tag, markers[m].text, {}, {}};
    for (const auto& f : unit.forms) {
      if (f.span().begin > lo && f.span().begin < hi) tf.forms.push_back(f);
    }
    if (tf.forms.empty()) {
      throw TaggedFormError("tagged comment '" + markers[m].text + "' has no following form");
    }
    tf.code_span = {tf.forms.front().span().begin, tf.forms.back().span().end};
    out.push_back(std::move(tf));
  }
  return out;
}

}  // namespace wm
