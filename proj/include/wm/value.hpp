#pragma once

// Runtime values of the probabilistic language.

#include <array>
#include <atomic>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <functional>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "wm/random.hpp"
#include "wm/sexpr.hpp"

namespace wm {

// ---------------------------------------------------------------------------
// Symbol interning

using Sym = std::uint32_t;

class SymbolTable {
 public:
  static SymbolTable& instance() {
    static SymbolTable table;
    return table;
  }

  Sym intern(std::string_view name) {
    {
      std::shared_lock lock(mutex_);
      if (auto it = ids_.find(name); it != ids_.end()) return it->second;
    }
    std::unique_lock lock(mutex_);
    if (auto it = ids_.find(name); it != ids_.end()) return it->second;
    const Sym id = count_;
    const std::size_t chunk = id / kChunk;
    if (chunk >= chunks_.size()) throw std::length_error("symbol table exhausted");
    if (!chunks_[chunk]) chunks_[chunk] = std::make_unique<std::array<std::string, kChunk>>();
    (*chunks_[chunk])[id % kChunk] = std::string(name);
    ids_.emplace((*chunks_[chunk])[id % kChunk], id);
    ++count_;
    return id;
  }

  const std::string& name(Sym id) const { return (*chunks_[id / kChunk])[id % kChunk]; }

 private:
  static constexpr std::size_t kChunk = 4096;
  SymbolTable() = default;

  mutable std::shared_mutex mutex_;
  std::unordered_map<std::string_view, Sym> ids_;
  std::array<std::unique_ptr<std::array<std::string, kChunk>>, 4096> chunks_{};
  Sym count_ = 0;
};

inline Sym intern(std::string_view name) { return SymbolTable::instance().intern(name); }
inline const std::string& symbol_name(Sym s) { return SymbolTable::instance().name(s); }

// ---------------------------------------------------------------------------
// Values

enum class Kind : std::uint8_t { Nil, Boolean, Number, Symbol, String, Pair, Closure, Builtin, Memo, Undefined };

std::string_view kind_name(Kind k);

struct Object {
  virtual ~Object() = default;
};

class Value {
 public:
  Value() : n_(0) {}

  static Value nil() { return Value(); }
  static Value undefined() {
    Value v;
    v.kind_ = Kind::Undefined;
    return v;
  }
  static Value boolean(bool b) {
    Value v;
    v.kind_ = Kind::Boolean;
    v.b_ = b;
    return v;
  }
  static Value number(double n) {
    Value v;
    v.kind_ = Kind::Number;
    v.n_ = n;
    return v;
  }
  static Value symbol(Sym s) {
    Value v;
    v.kind_ = Kind::Symbol;
    v.s_ = s;
    return v;
  }
  static Value symbol(std::string_view name) { return symbol(intern(name)); }
  static Value string(std::string text);
  static Value object(Kind kind, std::shared_ptr<const Object> obj) {
    Value v;
    v.kind_ = kind;
    v.obj_ = std::move(obj);
    return v;
  }

  Kind kind() const { return kind_; }
  bool is_nil() const { return kind_ == Kind::Nil; }
  bool is_boolean() const { return kind_ == Kind::Boolean; }
  bool is_number() const { return kind_ == Kind::Number; }
  bool is_symbol() const { return kind_ == Kind::Symbol; }
  bool is_string() const { return kind_ == Kind::String; }
  bool is_pair() const { return kind_ == Kind::Pair; }
  bool is_procedure() const { return kind_ == Kind::Closure || kind_ == Kind::Builtin || kind_ == Kind::Memo; }
  bool is_undefined() const { return kind_ == Kind::Undefined; }

  /// Only boolean false is false.
  bool truthy() const { return !(kind_ == Kind::Boolean && !b_); }
  bool is_false() const { return kind_ == Kind::Boolean && !b_; }

  bool as_boolean() const { return b_; }
  double as_number() const { return n_; }
  Sym as_symbol() const { return s_; }
  const std::string& as_string() const;
  const Object* object() const { return obj_.get(); }
  const std::shared_ptr<const Object>& object_ptr() const { return obj_; }

 private:
  Kind kind_ = Kind::Nil;
  union {
    bool b_;
    double n_;
    Sym s_;
  };
  std::shared_ptr<const Object> obj_;
};

struct StringObj : Object {
  explicit StringObj(std::string t) : text(std::move(t)) {}
  std::string text;
};

struct PairObj : Object {
  PairObj(Value a, Value d) : car(std::move(a)), cdr(std::move(d)) {}
  Value car;
  Value cdr;
  mutable std::atomic<std::uint64_t> hash{0};  // 0 = not yet computed
};

struct MemoObj : Object {
  explicit MemoObj(Value f) : inner(std::move(f)) {}
  Value inner;
};

inline Value Value::string(std::string text) {
  return object(Kind::String, std::make_shared<StringObj>(std::move(text)));
}

inline const std::string& Value::as_string() const { return static_cast<const StringObj*>(obj_.get())->text; }

inline Value cons(Value a, Value d) { return Value::object(Kind::Pair, std::make_shared<PairObj>(std::move(a), std::move(d))); }

inline const PairObj& as_pair(const Value& v) { return *static_cast<const PairObj*>(v.object()); }
inline const Value& car(const Value& v) { return as_pair(v).car; }
inline const Value& cdr(const Value& v) { return as_pair(v).cdr; }

/// Builds a proper list from a range of values.
template <typename Range>
Value make_list(const Range& items) {
  Value out = Value::nil();
  for (auto it = std::rbegin(items); it != std::rend(items); ++it) out = cons(*it, std::move(out));
  return out;
}

inline Value make_list(std::initializer_list<Value> items) {
  Value out = Value::nil();
  for (auto it = std::rbegin(items); it != std::rend(items); ++it) out = cons(*it, std::move(out));
  return out;
}

/// True for Nil-terminated pair chains (including Nil itself).
inline bool is_proper_list(const Value& v) {
  const Value* cur = &v;
  while (cur->is_pair()) cur = &cdr(*cur);
  return cur->is_nil();
}

// ---------------------------------------------------------------------------
// Equality and hashing

bool equal_values(const Value& a, const Value& b);

/// Identity for pairs and procedures, value equality for atoms.
inline bool eq_values(const Value& a, const Value& b) {
  if (a.kind() != b.kind()) return false;
  switch (a.kind()) {
    case Kind::Nil: return true;
    case Kind::Undefined: return true;
    case Kind::Boolean: return a.as_boolean() == b.as_boolean();
    case Kind::Number: return a.as_number() == b.as_number();
    case Kind::Symbol: return a.as_symbol() == b.as_symbol();
    case Kind::String: return a.as_string() == b.as_string();
    default: return a.object() == b.object();
  }
}

inline bool equal_values(const Value& a, const Value& b) {
  const Value* x = &a;
  const Value* y = &b;
  while (true) {
    if (x->kind() != y->kind()) return false;
    if (x->kind() != Kind::Pair) return eq_values(*x, *y);
    if (x->object() == y->object()) return true;
    const auto& px = as_pair(*x);
    const auto& py = as_pair(*y);
    const std::uint64_t hx = px.hash.load(std::memory_order_relaxed);
    const std::uint64_t hy = py.hash.load(std::memory_order_relaxed);
    if (hx && hy && hx != hy) return false;
    if (!equal_values(px.car, py.car)) return false;
    x = &px.cdr;
    y = &py.cdr;
  }
}

inline std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t v) {
  return mix64(seed ^ (v + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2)));
}

std::uint64_t hash_value(const Value& v);

inline std::uint64_t hash_pair(const PairObj& p) {
  std::uint64_t h = p.hash.load(std::memory_order_relaxed);
  if (h) return h;
  h = hash_combine(hash_combine(0x51ed2701ULL, hash_value(p.car)), hash_value(p.cdr));
  if (h == 0) h = 1;
  p.hash.store(h, std::memory_order_relaxed);
  return h;
}

inline std::uint64_t hash_value(const Value& v) {
  switch (v.kind()) {
    case Kind::Nil: return 0x6e696cULL;
    case Kind::Undefined: return 0x756e64ULL;
    case Kind::Boolean: return v.as_boolean() ? 0x74ULL : 0x66ULL;
    case Kind::Number: {
      double d = v.as_number();
      if (d == 0.0) d = 0.0;  // fold -0
      std::uint64_t bits;
      std::memcpy(&bits, &d, sizeof bits);
      return mix64(bits ^ 0x4e554dULL);
    }
    case Kind::Symbol: return mix64(v.as_symbol() ^ 0x53594d00000000ULL);
    case Kind::String: return std::hash<std::string>{}(v.as_string()) ^ 0x535452ULL;
    case Kind::Pair: return hash_pair(as_pair(v));
    default: return mix64(reinterpret_cast<std::uintptr_t>(v.object()));
  }
}

// ---------------------------------------------------------------------------
// Printing and conversion

inline std::string_view kind_name(Kind k) {
  switch (k) {
    case Kind::Nil: return "nil";
    case Kind::Boolean: return "boolean";
    case Kind::Number: return "number";
    case Kind::Symbol: return "symbol";
    case Kind::String: return "string";
    case Kind::Pair: return "pair";
    case Kind::Closure: return "procedure";
    case Kind::Builtin: return "builtin";
    case Kind::Memo: return "memoized procedure";
    case Kind::Undefined: return "undefined";
  }
  return "?";
}

namespace detail {

inline void write_value(std::string& out, const Value& v) {
  switch (v.kind()) {
    case Kind::Nil: out += "()"; return;
    case Kind::Undefined: out += "#<undefined>"; return;
    case Kind::Boolean: out += v.as_boolean() ? "true" : "false"; return;
    case Kind::Number: out += format_number(v.as_number()); return;
    case Kind::Symbol: out += symbol_name(v.as_symbol()); return;
    case Kind::String: {
      out.push_back('"');
      for (char c : v.as_string()) {
        if (c == '"' || c == '\\') out.push_back('\\');
        out.push_back(c);
      }
      out.push_back('"');
      return;
    }
    case Kind::Pair: {
      out.push_back('(');
      const Value* cur = &v;
      bool first = true;
      while (cur->is_pair()) {
        if (!first) out.push_back(' ');
        first = false;
        write_value(out, car(*cur));
        cur = &cdr(*cur);
      }
      if (!cur->is_nil()) {
        out += " . ";
        write_value(out, *cur);
      }
      out.push_back(')');
      return;
    }
    case Kind::Closure: out += "#<procedure>"; return;
    case Kind::Builtin: out += "#<builtin>"; return;
    case Kind::Memo: out += "#<memoized procedure>"; return;
  }
}

}  // namespace detail

inline std::string to_string(const Value& v) {
  std::string out;
  detail::write_value(out, v);
  return out;
}

/// Quoted datum -> runtime value.
inline Value datum_to_value(const SExpr& e) {
  if (e.is_symbol()) return Value::symbol(e.as_symbol());
  if (e.is_number()) return Value::number(e.as_number());
  if (e.is_boolean()) return Value::boolean(e.as_boolean());
  if (e.is_string()) return Value::string(e.as_string());
  const auto& items = e.as_list();
  Value out = Value::nil();
  for (auto it = items.rbegin(); it != items.rend(); ++it) out = cons(datum_to_value(*it), std::move(out));
  return out;
}

}  // namespace wm
