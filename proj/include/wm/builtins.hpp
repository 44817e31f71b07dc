#pragma once

// Primitive procedures. Included from eval.hpp; do not include directly.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "wm/eval.hpp"

namespace wm {
namespace builtins {

using Args = std::span<const Value>;

inline double num(const BuiltinObj& self, const Value& v) {
  if (!v.is_number()) type_error("'" + self.name + "' expects a number, got " + to_string(v));
  return v.as_number();
}

inline Value N(double d) { return Value::number(d); }
inline Value B(bool b) { return Value::boolean(b); }

/// Collects a proper list into a vector.
inline std::vector<Value> items(const BuiltinObj& self, const Value& list) {
  std::vector<Value> out;
  const Value* cur = &list;
  while (cur->is_pair()) {
    out.push_back(car(*cur));
    cur = &cdr(*cur);
  }
  if (!cur->is_nil()) type_error("'" + self.name + "' expects a list, got " + to_string(list));
  return out;
}

template <typename F>
void for_each_item(const BuiltinObj& self, const Value& list, F&& f) {
  const Value* cur = &list;
  while (cur->is_pair()) {
    f(car(*cur));
    cur = &cdr(*cur);
  }
  if (!cur->is_nil()) type_error("'" + self.name + "' expects a list, got " + to_string(list));
}

inline const Value& pair_arg(const BuiltinObj& self, const Value& v) {
  if (!v.is_pair()) type_error("'" + self.name + "' expects a non-empty list or pair, got " + to_string(v));
  return v;
}

inline std::size_t index_arg(const BuiltinObj& self, const Value& v) {
  const double d = num(self, v);
  if (!(d >= 0) || d != std::floor(d)) domain_error("'" + self.name + "' expects a non-negative integer index");
  return static_cast<std::size_t>(d);
}

// --- arithmetic -------------------------------------------------------------

inline Value add(World&, const BuiltinObj& s, Args a) {
  double r = 0;
  for (const auto& v : a) r += num(s, v);
  return N(r);
}
inline Value sub(World&, const BuiltinObj& s, Args a) {
  if (a.size() == 1) return N(-num(s, a[0]));
  double r = num(s, a[0]);
  for (std::size_t i = 1; i < a.size(); ++i) r -= num(s, a[i]);
  return N(r);
}
inline Value mul(World&, const BuiltinObj& s, Args a) {
  double r = 1;
  for (const auto& v : a) r *= num(s, v);
  return N(r);
}
inline Value div(World&, const BuiltinObj& s, Args a) {
  if (a.size() == 1) return N(1.0 / num(s, a[0]));
  double r = num(s, a[0]);
  for (std::size_t i = 1; i < a.size(); ++i) r /= num(s, a[i]);
  return N(r);
}

template <typename Cmp>
Value compare(const BuiltinObj& s, Args a, Cmp cmp) {
  for (std::size_t i = 0; i + 1 < a.size(); ++i)
    if (!cmp(num(s, a[i]), num(s, a[i + 1]))) return B(false);
  return B(true);
}
inline Value gt(World&, const BuiltinObj& s, Args a) { return compare(s, a, std::greater<>{}); }
inline Value lt(World&, const BuiltinObj& s, Args a) { return compare(s, a, std::less<>{}); }
inline Value ge(World&, const BuiltinObj& s, Args a) { return compare(s, a, std::greater_equal<>{}); }
inline Value le(World&, const BuiltinObj& s, Args a) { return compare(s, a, std::less_equal<>{}); }

// `=` compares numbers numerically and anything else structurally.
inline Value num_eq(World&, const BuiltinObj&, Args a) {
  for (std::size_t i = 0; i + 1 < a.size(); ++i) {
    const bool same = a[i].is_number() && a[i + 1].is_number() ? a[i].as_number() == a[i + 1].as_number()
                                                               : equal_values(a[i], a[i + 1]);
    if (!same) return B(false);
  }
  return B(true);
}

inline Value abs_(World&, const BuiltinObj& s, Args a) { return N(std::fabs(num(s, a[0]))); }
inline Value expt(World&, const BuiltinObj& s, Args a) { return N(std::pow(num(s, a[0]), num(s, a[1]))); }
inline Value floor_(World&, const BuiltinObj& s, Args a) { return N(std::floor(num(s, a[0]))); }
inline Value ceil_(World&, const BuiltinObj& s, Args a) { return N(std::ceil(num(s, a[0]))); }
inline Value round_(World&, const BuiltinObj& s, Args a) { return N(std::round(num(s, a[0]))); }
inline Value sqrt_(World&, const BuiltinObj& s, Args a) { return N(std::sqrt(num(s, a[0]))); }
inline Value exp_(World&, const BuiltinObj& s, Args a) { return N(std::exp(num(s, a[0]))); }
inline Value log_(World&, const BuiltinObj& s, Args a) { return N(std::log(num(s, a[0]))); }
inline Value mod(World&, const BuiltinObj& s, Args a) {
  const double x = num(s, a[0]);
  const double y = num(s, a[1]);
  const double r = std::fmod(x, y);
  return N(r != 0 && ((r < 0) != (y < 0)) ? r + y : r);
}
inline Value min_(World&, const BuiltinObj& s, Args a) {
  double r = num(s, a[0]);
  for (std::size_t i = 1; i < a.size(); ++i) r = std::min(r, num(s, a[i]));
  return N(r);
}
inline Value max_(World&, const BuiltinObj& s, Args a) {
  double r = num(s, a[0]);
  for (std::size_t i = 1; i < a.size(); ++i) r = std::max(r, num(s, a[i]));
  return N(r);
}

// --- pairs and lists ----------------------------------------------------------

inline Value pair(World&, const BuiltinObj&, Args a) { return cons(a[0], a[1]); }
inline Value list(World&, const BuiltinObj&, Args a) { return make_list(a); }
inline Value first(World&, const BuiltinObj& s, Args a) { return car(pair_arg(s, a[0])); }
inline Value rest(World&, const BuiltinObj& s, Args a) { return cdr(pair_arg(s, a[0])); }

inline Value nth(const BuiltinObj& s, const Value& list, std::size_t n) {
  const Value* cur = &list;
  for (std::size_t i = 0; i < n; ++i) {
    if (!cur->is_pair()) domain_error("'" + s.name + "': list too short");
    cur = &cdr(*cur);
  }
  if (!cur->is_pair()) domain_error("'" + s.name + "': list too short");
  return car(*cur);
}
inline Value second(World&, const BuiltinObj& s, Args a) { return nth(s, a[0], 1); }
inline Value third(World&, const BuiltinObj& s, Args a) { return nth(s, a[0], 2); }
inline Value fourth(World&, const BuiltinObj& s, Args a) { return nth(s, a[0], 3); }
inline Value list_ref(World&, const BuiltinObj& s, Args a) { return nth(s, a[0], index_arg(s, a[1])); }
inline Value list_elt(World&, const BuiltinObj& s, Args a) {
  const std::size_t i = index_arg(s, a[1]);
  if (i == 0) domain_error("'list-elt' indices start at 1");
  return nth(s, a[0], i - 1);
}

inline Value last(World&, const BuiltinObj& s, Args a) {
  const Value* cur = &pair_arg(s, a[0]);
  while (cdr(*cur).is_pair()) cur = &cdr(*cur);
  return car(*cur);
}

inline Value append(World&, const BuiltinObj& s, Args a) {
  if (a.empty()) return Value::nil();
  Value out = a.back();
  for (std::size_t i = a.size() - 1; i-- > 0;) {
    auto xs = items(s, a[i]);
    for (auto it = xs.rbegin(); it != xs.rend(); ++it) out = cons(*it, std::move(out));
  }
  return out;
}

inline Value length(World&, const BuiltinObj& s, Args a) {
  if (a[0].is_string()) return N(static_cast<double>(a[0].as_string().size()));
  std::size_t n = 0;
  for_each_item(s, a[0], [&](const Value&) { ++n; });
  return N(static_cast<double>(n));
}

inline Value reverse(World&, const BuiltinObj& s, Args a) {
  Value out = Value::nil();
  for_each_item(s, a[0], [&](const Value& v) { out = cons(v, std::move(out)); });
  return out;
}

inline Value range(World&, const BuiltinObj& s, Args a) {
  double lo = 0;
  double hi = num(s, a[0]);
  if (a.size() == 2) {
    lo = hi;
    hi = num(s, a[1]);
  }
  std::vector<Value> out;
  for (double x = lo; x < hi; x += 1) out.push_back(N(x));
  return make_list(out);
}

inline Value null_p(World&, const BuiltinObj&, Args a) { return B(a[0].is_nil()); }
inline Value pair_p(World&, const BuiltinObj&, Args a) { return B(a[0].is_pair()); }
inline Value list_p(World&, const BuiltinObj&, Args a) { return B(is_proper_list(a[0])); }
inline Value number_p(World&, const BuiltinObj&, Args a) { return B(a[0].is_number()); }
inline Value symbol_p(World&, const BuiltinObj&, Args a) { return B(a[0].is_symbol()); }
inline Value boolean_p(World&, const BuiltinObj&, Args a) { return B(a[0].is_boolean()); }
inline Value string_p(World&, const BuiltinObj&, Args a) { return B(a[0].is_string()); }
inline Value procedure_p(World&, const BuiltinObj&, Args a) { return B(a[0].is_procedure()); }

inline Value member(World&, const BuiltinObj& s, Args a) {
  const Value* cur = &a[1];
  while (cur->is_pair()) {
    if (equal_values(car(*cur), a[0])) return *cur;
    cur = &cdr(*cur);
  }
  if (!cur->is_nil()) type_error("'" + s.name + "' expects a list");
  return B(false);
}
inline Value member_p(World& w, const BuiltinObj& s, Args a) { return B(member(w, s, a).truthy()); }
inline Value equal_p(World&, const BuiltinObj&, Args a) { return B(equal_values(a[0], a[1])); }
inline Value eq_p(World&, const BuiltinObj&, Args a) { return B(eq_values(a[0], a[1])); }
inline Value not_(World&, const BuiltinObj&, Args a) { return B(a[0].is_false()); }

// (assoc key alist): the first pair whose car equals key, or false.
inline Value assoc(World&, const BuiltinObj&, Args a) {
  const Value* cur = &a[1];
  while (cur->is_pair()) {
    const Value& entry = car(*cur);
    if (entry.is_pair() && equal_values(car(entry), a[0])) return entry;
    cur = &cdr(*cur);
  }
  return B(false);
}

// (lookup alist key): the value stored under key, or () when absent.
inline Value lookup(World&, const BuiltinObj&, Args a) {
  const Value* cur = &a[0];
  while (cur->is_pair()) {
    const Value& entry = car(*cur);
    if (entry.is_pair() && equal_values(car(entry), a[1])) return cdr(entry);
    cur = &cdr(*cur);
  }
  return Value::nil();
}

// (update-list list index value): a copy with the element at index replaced.
inline Value update_list(World&, const BuiltinObj& s, Args a) {
  auto xs = items(s, a[0]);
  const std::size_t i = index_arg(s, a[1]);
  if (i >= xs.size()) domain_error("'update-list' index out of range");
  xs[i] = a[2];
  return make_list(xs);
}

inline Value shallow_flatten(World&, const BuiltinObj& s, Args a) {
  std::vector<Value> out;
  for_each_item(s, a[0], [&](const Value& v) {
    if (v.is_pair() || v.is_nil()) {
      for_each_item(s, v, [&](const Value& x) { out.push_back(x); });
    } else {
      out.push_back(v);
    }
  });
  return make_list(out);
}

inline Value zip(World&, const BuiltinObj& s, Args a) {
  auto xs = items(s, a[0]);
  auto ys = items(s, a[1]);
  std::vector<Value> out;
  for (std::size_t i = 0; i < std::min(xs.size(), ys.size()); ++i) out.push_back(make_list({xs[i], ys[i]}));
  return make_list(out);
}

inline Value repeat(World& w, const BuiltinObj& s, Args a) {
  const std::size_t n = index_arg(s, a[0]);
  std::vector<Value> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(w.apply(a[1], {}));
  return make_list(out);
}

// --- higher order -------------------------------------------------------------

inline Value map(World& w, const BuiltinObj& s, Args a) {
  std::vector<Value> out;
  if (a.size() == 2) {
    for_each_item(s, a[1], [&](const Value& v) { out.push_back(w.apply(a[0], {v})); });
    return make_list(out);
  }
  auto xs = items(s, a[1]);
  auto ys = items(s, a[2]);
  for (std::size_t i = 0; i < std::min(xs.size(), ys.size()); ++i) out.push_back(w.apply(a[0], {xs[i], ys[i]}));
  return make_list(out);
}

inline Value filter(World& w, const BuiltinObj& s, Args a) {
  std::vector<Value> out;
  for_each_item(s, a[1], [&](const Value& v) {
    if (w.apply(a[0], {v}).truthy()) out.push_back(v);
  });
  return make_list(out);
}

// (fold f init list): f is called as (f element accumulator).
inline Value fold(World& w, const BuiltinObj& s, Args a) {
  Value acc = a[1];
  for_each_item(s, a[2], [&](const Value& v) { acc = w.apply(a[0], {v, acc}); });
  return acc;
}

inline Value apply(World& w, const BuiltinObj& s, Args a) {
  std::vector<Value> args(a.begin() + 1, a.end() - 1);
  for_each_item(s, a.back(), [&](const Value& v) { args.push_back(v); });
  return w.apply(a[0], std::span<const Value>(args));
}

// (some list) / (some pred list), likewise all and count.
template <typename F>
void scan(World& w, const BuiltinObj& s, Args a, F&& f) {
  if (a.size() == 1) {
    for_each_item(s, a[0], [&](const Value& v) { f(v.truthy()); });
  } else {
    for_each_item(s, a[1], [&](const Value& v) { f(w.apply(a[0], {v}).truthy()); });
  }
}
inline Value some(World& w, const BuiltinObj& s, Args a) {
  bool any = false;
  scan(w, s, a, [&](bool t) { any = any || t; });
  return B(any);
}
inline Value all(World& w, const BuiltinObj& s, Args a) {
  bool every = true;
  scan(w, s, a, [&](bool t) { every = every && t; });
  return B(every);
}
inline Value count(World& w, const BuiltinObj& s, Args a) {
  double n = 0;
  scan(w, s, a, [&](bool t) { n += t ? 1 : 0; });
  return N(n);
}

inline Value sum(World&, const BuiltinObj& s, Args a) {
  double r = 0;
  for_each_item(s, a[0], [&](const Value& v) { r += num(s, v); });
  return N(r);
}

// (max_cdr alist): the entry with the largest numeric cdr; earliest wins ties.
inline Value max_cdr(World&, const BuiltinObj& s, Args a) {
  Value best;
  double best_v = -std::numeric_limits<double>::infinity();
  bool found = false;
  for_each_item(s, a[0], [&](const Value& e) {
    const double v = num(s, cdr(pair_arg(s, e)));
    if (!found || v > best_v) {
      best = e;
      best_v = v;
      found = true;
    }
  });
  if (!found) domain_error("'max_cdr' of an empty list");
  return best;
}

// --- strings ------------------------------------------------------------------

inline const std::string& str(const BuiltinObj& s, const Value& v) {
  if (!v.is_string()) type_error("'" + s.name + "' expects a string, got " + to_string(v));
  return v.as_string();
}

inline Value stringify(World&, const BuiltinObj&, Args a) {
  if (a[0].is_string()) return a[0];
  return Value::string(to_string(a[0]));
}
inline Value string_length(World&, const BuiltinObj& s, Args a) {
  return N(static_cast<double>(str(s, a[0]).size()));
}
inline Value string_slice(World&, const BuiltinObj& s, Args a) {
  const std::string& t = str(s, a[0]);
  const std::size_t from = std::min(index_arg(s, a[1]), t.size());
  const std::size_t to = a.size() == 3 ? std::min(index_arg(s, a[2]), t.size()) : t.size();
  return Value::string(to > from ? t.substr(from, to - from) : std::string());
}
inline Value string_to_number(World&, const BuiltinObj& s, Args a) {
  const std::string& t = str(s, a[0]);
  double d = 0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), d);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) return B(false);
  return N(d);
}
inline Value string_append(World&, const BuiltinObj& s, Args a) {
  std::string out;
  for (const auto& v : a) out += str(s, v);
  return Value::string(std::move(out));
}
inline Value symbol_to_string(World&, const BuiltinObj& s, Args a) {
  if (!a[0].is_symbol()) type_error("'symbol->string' expects a symbol");
  (void)s;
  return Value::string(symbol_name(a[0].as_symbol()));
}
inline Value string_to_symbol(World&, const BuiltinObj& s, Args a) { return Value::symbol(str(s, a[0])); }

// --- randomness -----------------------------------------------------------------

inline Value flip(World& w, const BuiltinObj& s, Args a) {
  const double p = a.empty() ? 0.5 : num(s, a[0]);
  if (!(p >= 0 && p <= 1)) domain_error("'flip' needs a probability in [0, 1], got " + format_number(p));
  return B(w.rng().flip(p));
}
inline Value gaussian(World& w, const BuiltinObj& s, Args a) {
  const double sd = num(s, a[1]);
  if (sd < 0) domain_error("'" + s.name + "' needs a non-negative standard deviation");
  return N(w.rng().gaussian(num(s, a[0]), sd));
}
inline Value uniform(World& w, const BuiltinObj& s, Args a) { return N(w.rng().uniform(num(s, a[0]), num(s, a[1]))); }
inline Value uniform_draw(World& w, const BuiltinObj& s, Args a) {
  auto xs = items(s, a[0]);
  if (xs.empty()) domain_error("'uniform-draw' of an empty list");
  return xs[w.rng().below(xs.size())];
}
inline Value exponential(World& w, const BuiltinObj& s, Args a) {
  const double rate = num(s, a[0]);
  if (!(rate > 0)) domain_error("'exponential' needs a positive rate");
  return N(w.rng().exponential(rate));
}
inline Value bounded_geometric(World& w, const BuiltinObj& s, Args a) {
  const double p = num(s, a[0]);
  const double lo = num(s, a[1]);
  const double hi = num(s, a[2]);
  if (!(p > 0 && p <= 1)) domain_error("'bounded-geometric' needs a probability in (0, 1]");
  if (lo > hi) domain_error("'bounded-geometric' needs lo <= hi");
  return N(w.rng().bounded_geometric(p, lo, hi));
}
// Fisher-Yates over a copy.
inline Value shuffle_unique(World& w, const BuiltinObj& s, Args a) {
  auto xs = items(s, a[0]);
  for (std::size_t i = xs.size(); i > 1; --i) std::swap(xs[i - 1], xs[w.rng().below(i)]);
  return make_list(xs);
}

inline Value gensym_next(World& w, const BuiltinObj& s, Args) { return w.gensym(s.data.as_string()); }

inline Value make_gensym(World&, const BuiltinObj& s, Args a) {
  std::string prefix = a.empty() ? "g" : a[0].is_symbol() ? symbol_name(a[0].as_symbol()) : str(s, a[0]);
  auto g = std::make_shared<BuiltinObj>("gensym", 0, 0, &gensym_next, Value::string(std::move(prefix)));
  return Value::object(Kind::Builtin, std::move(g));
}

inline Value mem(World&, const BuiltinObj& s, Args a) {
  if (!a[0].is_procedure()) type_error("'" + s.name + "' expects a procedure");
  return Value::object(Kind::Memo, std::make_shared<MemoObj>(a[0]));
}

}  // namespace builtins

inline const std::vector<std::shared_ptr<const BuiltinObj>>& builtin_catalog() {
  using namespace builtins;
  static const std::vector<std::shared_ptr<const BuiltinObj>> catalog = [] {
    std::vector<std::shared_ptr<const BuiltinObj>> c;
    auto def = [&](const char* name, int lo, int hi, BuiltinFn fn) {
      c.push_back(std::make_shared<BuiltinObj>(name, lo, hi, fn));
    };
    def("+", 0, -1, add);
    def("-", 1, -1, sub);
    def("*", 0, -1, mul);
    def("/", 1, -1, div);
    def(">", 1, -1, gt);
    def("<", 1, -1, lt);
    def(">=", 1, -1, ge);
    def("<=", 1, -1, le);
    def("leq", 2, 2, le);
    def("=", 1, -1, num_eq);
    def("abs", 1, 1, abs_);
    def("expt", 2, 2, expt);
    def("floor", 1, 1, floor_);
    def("ceiling", 1, 1, ceil_);
    def("round", 1, 1, round_);
    def("sqrt", 1, 1, sqrt_);
    def("exp", 1, 1, exp_);
    def("log", 1, 1, log_);
    def("mod", 2, 2, mod);
    def("modulo", 2, 2, mod);
    def("min", 1, -1, min_);
    def("max", 1, -1, max_);

    def("pair", 2, 2, pair);
    def("cons", 2, 2, pair);
    def("list", 0, -1, list);
    def("first", 1, 1, first);
    def("car", 1, 1, first);
    def("rest", 1, 1, rest);
    def("cdr", 1, 1, rest);
    def("second", 1, 1, second);
    def("third", 1, 1, third);
    def("fourth", 1, 1, fourth);
    def("last", 1, 1, last);
    def("append", 0, -1, append);
    def("length", 1, 1, length);
    def("reverse", 1, 1, reverse);
    def("range", 1, 2, range);
    def("list-ref", 2, 2, list_ref);
    def("list-elt", 2, 2, list_elt);
    def("null?", 1, 1, null_p);
    def("pair?", 1, 1, pair_p);
    def("list?", 1, 1, list_p);
    def("number?", 1, 1, number_p);
    def("symbol?", 1, 1, symbol_p);
    def("boolean?", 1, 1, boolean_p);
    def("string?", 1, 1, string_p);
    def("procedure?", 1, 1, procedure_p);
    def("member", 2, 2, member);
    def("member?", 2, 2, member_p);
    def("equal?", 2, 2, equal_p);
    def("eq?", 2, 2, eq_p);
    def("not", 1, 1, not_);
    def("assoc", 2, 2, assoc);
    def("lookup", 2, 2, lookup);
    def("update-list", 3, 3, update_list);
    def("shallow-flatten", 1, 1, shallow_flatten);
    def("zip", 2, 2, zip);
    def("repeat", 2, 2, repeat);

    def("map", 2, 3, map);
    def("filter", 2, 2, filter);
    def("fold", 3, 3, fold);
    def("apply", 2, -1, apply);
    def("some", 1, 2, some);
    def("any", 1, 2, some);
    def("all", 1, 2, all);
    def("count", 1, 2, count);
    def("sum", 1, 1, sum);
    def("max_cdr", 1, 1, max_cdr);

    def("stringify", 1, 1, stringify);
    def("string-length", 1, 1, string_length);
    def("string-slice", 2, 3, string_slice);
    def("string->number", 1, 1, string_to_number);
    def("string-append", 0, -1, string_append);
    def("symbol->string", 1, 1, symbol_to_string);
    def("string->symbol", 1, 1, string_to_symbol);

    def("flip", 0, 1, flip);
    def("gaussian", 2, 2, gaussian);
    def("normal", 2, 2, gaussian);
    def("uniform", 2, 2, uniform);
    def("uniform-draw", 1, 1, uniform_draw);
    def("exponential", 1, 1, exponential);
    def("bounded-geometric", 3, 3, bounded_geometric);
    def("shuffle-unique", 1, 1, shuffle_unique);
    def("make-gensym", 0, 1, make_gensym);
    def("make_gensym", 0, 1, make_gensym);
    def("mem", 1, 1, mem);
    return c;
  }();
  return catalog;
}

/// Names of the random primitives, in the order they are documented.
inline const std::vector<std::string>& sampling_primitives() {
  static const std::vector<std::string> names{"flip",        "gaussian",          "normal",        "uniform",
                                              "uniform-draw", "exponential",       "bounded-geometric",
                                              "shuffle-unique"};
  return names;
}

/// Draws from a named random primitive using the world's stream.
inline Value sample_primitive(World& world, const std::string& name, std::span<const Value> params) {
  for (const auto& b : builtin_catalog()) {
    if (b->name == name && std::find(sampling_primitives().begin(), sampling_primitives().end(), name) !=
                               sampling_primitives().end()) {
      return world.apply(Value::object(Kind::Builtin, b), params);
    }
  }
  throw EvalError(EvalError::Code::Unbound, "unknown sampling primitive '" + name + "'", {}, name);
}

}  // namespace wm
