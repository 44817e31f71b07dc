#pragma once

// Evaluator for the probabilistic language.
//
// Source forms are compiled once into a tree of nodes with lexical addresses
// resolved (locals become (depth, index) pairs, globals become slots in a
// per-world table). A World owns everything that varies between sampled
// worlds: the global table, the random stream, the mem table and the gensym
// counters. Evaluating the same compiled Program in two Worlds with equal
// seeds gives structurally equal results.

#include <boost/container/small_vector.hpp>

#include <cstdint>
#include <cstring>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "wm/random.hpp"
#include "wm/sexpr.hpp"
#include "wm/value.hpp"

namespace wm {

class EvalError : public std::runtime_error {
 public:
  enum class Code { Unbound, Arity, NotProcedure, Type, Domain, Depth, Syntax, Other };

  EvalError(Code code, const std::string& message, Span span = {}, std::string symbol = {})
      : std::runtime_error(message), code_(code), span_(span), symbol_(std::move(symbol)) {}

  Code code() const { return code_; }
  Span span() const { return span_; }
  bool has_span() const { return span_.end > span_.begin; }
  void set_span(Span s) { span_ = s; }
  const std::string& symbol() const { return symbol_; }

 private:
  Code code_;
  Span span_;
  std::string symbol_;
};

[[noreturn]] inline void type_error(const std::string& message) { throw EvalError(EvalError::Code::Type, message); }
[[noreturn]] inline void domain_error(const std::string& message) { throw EvalError(EvalError::Code::Domain, message); }

struct Frame {
  std::shared_ptr<Frame> parent;
  boost::container::small_vector<Value, 4> slots;
};
using FramePtr = std::shared_ptr<Frame>;

class World;
class Program;

struct Node {
  Span span;
  virtual ~Node() = default;
  virtual Value eval(const FramePtr& env, World& w) const = 0;
};
using NodePtr = std::shared_ptr<const Node>;
using Body = std::vector<NodePtr>;

struct BuiltinObj;
using BuiltinFn = Value (*)(World&, const BuiltinObj&, std::span<const Value>);

struct BuiltinObj : Object {
  BuiltinObj(std::string n, int lo, int hi, BuiltinFn f, Value d = {})
      : name(std::move(n)), min_args(lo), max_args(hi), fn(f), data(std::move(d)) {}
  std::string name;
  int min_args;
  int max_args;  // -1 = variadic
  BuiltinFn fn;
  Value data;
};

struct LambdaNode;
struct ClosureObj : Object {
  ClosureObj(std::shared_ptr<const LambdaNode> l, FramePtr e) : lambda(std::move(l)), env(std::move(e)) {}
  std::shared_ptr<const LambdaNode> lambda;
  FramePtr env;
};

/// The builtin catalog, in installation order.
const std::vector<std::shared_ptr<const BuiltinObj>>& builtin_catalog();

// ---------------------------------------------------------------------------
// World

struct WorldLimits {
  std::size_t max_depth = 10'000;             // nested applications
  std::size_t max_stack_bytes = 6u << 20;     // native stack budget for evaluation
};

class World {
 public:
  World(const Program& program, std::uint64_t seed, WorldLimits limits = {});

  Rng& rng() { return rng_; }
  std::uint64_t seed() const { return seed_; }
  const Program& program() const { return *program_; }
  std::vector<Value>& globals() { return globals_; }

  /// Evaluates a compiled top-level node (define or expression).
  Value run(const Node& node);

  Value apply(const Value& fn, std::span<const Value> args, Span where = {});
  Value apply(const Value& fn, std::initializer_list<Value> args) {
    return apply(fn, std::span<const Value>(args.begin(), args.size()));
  }

  /// Next symbol for a gensym prefix: p0, p1, ...
  Value gensym(const std::string& prefix) {
    auto& counter = gensym_counters_[prefix];
    return Value::symbol(prefix + std::to_string(counter++));
  }

  std::size_t memo_size() const { return memo_count_; }
  std::size_t depth() const { return depth_; }

 private:
  friend struct DepthGuard;
  struct MemoEntry {
    const Object* fn;
    std::vector<Value> args;
    Value result;
  };

  Value apply_memo(const Value& fn, std::span<const Value> args, Span where);

  const Program* program_;
  std::uint64_t seed_;
  Rng rng_;
  std::vector<Value> globals_;
  std::unordered_map<std::uint64_t, boost::container::small_vector<MemoEntry, 1>> memo_;
  std::size_t memo_count_ = 0;
  std::unordered_map<std::string, std::uint64_t> gensym_counters_;
  WorldLimits limits_;
  std::size_t depth_ = 0;
  const char* stack_base_ = nullptr;
};

struct DepthGuard {
  explicit DepthGuard(World& w) : world(w) {
    if (++world.depth_ > world.limits_.max_depth) {
      --world.depth_;
      throw EvalError(EvalError::Code::Depth,
                      "recursion depth limit of " + std::to_string(world.limits_.max_depth) + " exceeded");
    }
    char probe;
    if (world.stack_base_ && world.stack_base_ > &probe &&
        static_cast<std::size_t>(world.stack_base_ - &probe) > world.limits_.max_stack_bytes) {
      --world.depth_;
      throw EvalError(EvalError::Code::Depth, "evaluation stack budget exceeded");
    }
  }
  ~DepthGuard() { --world.depth_; }
  World& world;
};

// ---------------------------------------------------------------------------
// Nodes

inline Value eval_body(const Body& body, const FramePtr& env, World& w) {
  Value result;
  for (const auto& n : body) result = n->eval(env, w);
  return result;
}

struct ConstNode final : Node {
  explicit ConstNode(Value v) : value(std::move(v)) {}
  Value value;
  Value eval(const FramePtr&, World&) const override { return value; }
};

struct LocalRefNode final : Node {
  LocalRefNode(std::size_t d, std::size_t i, Sym n) : depth(d), index(i), name(n) {}
  std::size_t depth, index;
  Sym name;
  Value eval(const FramePtr& env, World&) const override {
    const Frame* f = env.get();
    for (std::size_t d = 0; d < depth; ++d) f = f->parent.get();
    const Value& v = f->slots[index];
    if (v.is_undefined()) {
      throw EvalError(EvalError::Code::Unbound, "variable '" + symbol_name(name) + "' used before its definition",
                      span, symbol_name(name));
    }
    return v;
  }
};

struct GlobalRefNode final : Node {
  GlobalRefNode(std::uint32_t s, Sym n) : slot(s), name(n) {}
  std::uint32_t slot;
  Sym name;
  Value eval(const FramePtr&, World& w) const override {
    const Value& v = w.globals()[slot];
    if (v.is_undefined()) {
      throw EvalError(EvalError::Code::Unbound, "unbound symbol '" + symbol_name(name) + "'", span,
                      symbol_name(name));
    }
    return v;
  }
};

struct SetGlobalNode final : Node {
  SetGlobalNode(std::uint32_t s, NodePtr e) : slot(s), expr(std::move(e)) {}
  std::uint32_t slot;
  NodePtr expr;
  Value eval(const FramePtr& env, World& w) const override {
    w.globals()[slot] = expr->eval(env, w);
    return Value::nil();
  }
};

struct SetLocalNode final : Node {
  SetLocalNode(std::size_t i, NodePtr e) : index(i), expr(std::move(e)) {}
  std::size_t index;
  NodePtr expr;
  Value eval(const FramePtr& env, World& w) const override {
    env->slots[index] = expr->eval(env, w);
    return Value::nil();
  }
};

struct IfNode final : Node {
  NodePtr test, then, otherwise;  // otherwise may be null
  Value eval(const FramePtr& env, World& w) const override {
    if (test->eval(env, w).truthy()) return then->eval(env, w);
    return otherwise ? otherwise->eval(env, w) : Value::nil();
  }
};

struct AndNode final : Node {
  Body items;
  Value eval(const FramePtr& env, World& w) const override {
    Value v = Value::boolean(true);
    for (const auto& n : items) {
      v = n->eval(env, w);
      if (v.is_false()) return v;
    }
    return v;
  }
};

struct OrNode final : Node {
  Body items;
  Value eval(const FramePtr& env, World& w) const override {
    for (const auto& n : items) {
      Value v = n->eval(env, w);
      if (v.truthy()) return v;
    }
    return Value::boolean(false);
  }
};

struct BeginNode final : Node {
  Body body;
  Value eval(const FramePtr& env, World& w) const override { return eval_body(body, env, w); }
};

struct LambdaNode final : Node, std::enable_shared_from_this<LambdaNode> {
  std::size_t nparams = 0;
  bool variadic = false;
  bool captures = true;  // body creates closures, so its frame may outlive the call
  std::size_t frame_size = 0;
  Body body;
  Value eval(const FramePtr& env, World&) const override {
    return Value::object(Kind::Closure, std::make_shared<ClosureObj>(shared_from_this(), env));
  }
};

struct LetNode final : Node {
  bool sequential = false;  // let* evaluates each init inside the new frame
  bool captures = true;
  Body inits;
  std::size_t frame_size = 0;
  Body body;
  Value eval(const FramePtr& env, World& w) const override {
    if (captures) {
      auto frame = std::make_shared<Frame>();
      return run(frame, env, w);
    }
    // Nothing can hold on to the frame past this call: keep it on the stack.
    Frame local;
    return run(FramePtr(FramePtr(), &local), env, w);
  }

 private:
  Value run(const FramePtr& frame, const FramePtr& env, World& w) const {
    frame->parent = env;
    frame->slots.resize(frame_size, Value::undefined());
    if (sequential) {
      for (std::size_t i = 0; i < inits.size(); ++i) frame->slots[i] = inits[i]->eval(frame, w);
    } else {
      for (std::size_t i = 0; i < inits.size(); ++i) frame->slots[i] = inits[i]->eval(env, w);
    }
    return eval_body(body, frame, w);
  }
};

struct CaseNode final : Node {
  struct Clause {
    std::vector<Value> datums;
    Body body;
  };
  NodePtr key;
  std::vector<Clause> clauses;
  std::optional<Body> otherwise;
  Value eval(const FramePtr& env, World& w) const override {
    const Value k = key->eval(env, w);
    for (const auto& c : clauses) {
      for (const auto& d : c.datums) {
        if (equal_values(k, d)) return eval_body(c.body, env, w);
      }
    }
    return otherwise ? eval_body(*otherwise, env, w) : Value::nil();
  }
};

struct CondNode final : Node {
  struct Clause {
    NodePtr test;  // null for else
    Body body;
  };
  std::vector<Clause> clauses;
  Value eval(const FramePtr& env, World& w) const override {
    for (const auto& c : clauses) {
      if (!c.test) return eval_body(c.body, env, w);
      Value t = c.test->eval(env, w);
      if (t.truthy()) return c.body.empty() ? t : eval_body(c.body, env, w);
    }
    return Value::nil();
  }
};

struct CallNode final : Node {
  NodePtr fn;
  Body args;
  Value eval(const FramePtr& env, World& w) const override {
    const Value f = fn->eval(env, w);
    boost::container::small_vector<Value, 6> vals;
    vals.reserve(args.size());
    for (const auto& a : args) vals.push_back(a->eval(env, w));
    try {
      return w.apply(f, std::span<const Value>(vals.data(), vals.size()), span);
    } catch (EvalError& e) {
      if (!e.has_span()) e.set_span(span);
      throw;
    }
  }
};

// ---------------------------------------------------------------------------
// Program: global slot layout plus the compiler

struct Compiled {
  NodePtr node;
  std::vector<Sym> global_refs;  // globals referenced (free symbols)
  std::vector<Sym> defines;      // globals defined at top level
};

class Program {
 public:
  Program() {
    for (const auto& b : builtin_catalog()) {
      const auto slot = slot_for(intern(b->name));
      initial_[slot] = Value::object(Kind::Builtin, b);
      defined_[slot] = true;
      builtin_[slot] = true;
    }
  }

  /// Compiles a top-level form. `(define ...)` assigns a global; anything
  /// else is an expression.
  Compiled compile(const SExpr& form) {
    refs_.clear();
    defs_.clear();
    NodePtr node;
    if (form.head() == "define") {
      node = compile_global_define(form);
    } else {
      node = compile_expr(form, nullptr);
    }
    return Compiled{std::move(node), refs_, defs_};
  }

  /// Compiles all forms in order.
  std::vector<Compiled> compile_all(std::span<const SExpr> forms) {
    std::vector<Compiled> out;
    out.reserve(forms.size());
    for (const auto& f : forms) out.push_back(compile(f));
    return out;
  }

  bool is_defined(Sym s) const {
    auto it = slots_.find(s);
    return it != slots_.end() && defined_[it->second];
  }
  bool is_builtin(Sym s) const {
    auto it = slots_.find(s);
    return it != slots_.end() && builtin_[it->second];
  }

  /// Global symbols among `refs` with no builtin and no top-level define.
  std::vector<std::string> unresolved(std::span<const Sym> refs) const {
    std::vector<std::string> out;
    std::unordered_set<Sym> seen;
    for (Sym s : refs) {
      if (!is_defined(s) && seen.insert(s).second) out.push_back(symbol_name(s));
    }
    return out;
  }

  const std::vector<Value>& initial_globals() const { return initial_; }
  std::optional<std::uint32_t> find_slot(Sym s) const {
    auto it = slots_.find(s);
    if (it == slots_.end()) return std::nullopt;
    return it->second;
  }

 private:
  struct Scope {
    std::vector<Sym> names;
    const Scope* parent = nullptr;
  };

  std::uint32_t slot_for(Sym s) {
    auto [it, inserted] = slots_.try_emplace(s, static_cast<std::uint32_t>(initial_.size()));
    if (inserted) {
      initial_.push_back(Value::undefined());
      defined_.push_back(false);
      builtin_.push_back(false);
    }
    return it->second;
  }

  [[noreturn]] static void syntax(const std::string& message, const SExpr& at) {
    throw EvalError(EvalError::Code::Syntax, message, at.span());
  }

  static Sym symbol_of(const SExpr& e, const char* what) {
    if (!e.is_symbol()) syntax(std::string("expected a symbol for ") + what + ", got " + print(e), e);
    return intern(e.as_symbol());
  }

  NodePtr compile_global_define(const SExpr& form) {
    const auto& items = form.as_list();
    if (items.size() < 2) syntax("malformed define", form);
    NodePtr value;
    Sym name;
    if (items[1].is_list()) {
      // (define (f a b) body...)
      const auto& sig = items[1].as_list();
      if (sig.empty()) syntax("malformed define", form);
      name = symbol_of(sig[0], "define");
      const std::uint32_t slot = slot_for(name);
      defined_[slot] = true;
      builtin_[slot] = false;
      value = compile_lambda(std::span<const SExpr>(sig).subspan(1), std::nullopt,
                             std::span<const SExpr>(items).subspan(2), nullptr, form);
      defs_.push_back(name);
      auto node = std::make_shared<SetGlobalNode>(slot, std::move(value));
      node->span = form.span();
      return node;
    }
    name = symbol_of(items[1], "define");
    if (items.size() != 3) syntax("define expects exactly one value expression", form);
    const std::uint32_t slot = slot_for(name);
    defined_[slot] = true;
    builtin_[slot] = false;
    value = compile_expr(items[2], nullptr);
    defs_.push_back(name);
    auto node = std::make_shared<SetGlobalNode>(slot, std::move(value));
    node->span = form.span();
    return node;
  }

  NodePtr compile_ref(const SExpr& e, const Scope* scope) {
    const Sym s = intern(e.as_symbol());
    std::size_t depth = 0;
    for (const Scope* sc = scope; sc; sc = sc->parent, ++depth) {
      for (std::size_t i = sc->names.size(); i-- > 0;) {
        if (sc->names[i] == s) {
          auto n = std::make_shared<LocalRefNode>(depth, i, s);
          n->span = e.span();
          return n;
        }
      }
    }
    refs_.push_back(s);
    auto n = std::make_shared<GlobalRefNode>(slot_for(s), s);
    n->span = e.span();
    return n;
  }

  bool is_local(Sym s, const Scope* scope) const {
    for (const Scope* sc = scope; sc; sc = sc->parent) {
      for (Sym n : sc->names)
        if (n == s) return true;
    }
    return false;
  }

  NodePtr compile_expr(const SExpr& e, Scope* scope) {
    if (e.is_symbol()) return compile_ref(e, scope);
    if (!e.is_list()) {
      auto n = std::make_shared<ConstNode>(datum_to_value(e));
      n->span = e.span();
      return n;
    }
    const auto& items = e.as_list();
    if (items.empty()) {
      auto n = std::make_shared<ConstNode>(Value::nil());
      n->span = e.span();
      return n;
    }
    if (items[0].is_symbol() && !is_local(intern(items[0].as_symbol()), scope)) {
      const std::string& h = items[0].as_symbol();
      if (h == "quote") return compile_quote(e);
      if (h == "if") return compile_if(e, scope);
      if (h == "lambda") return compile_lambda_form(e, scope);
      if (h == "let") return compile_let(e, scope, false);
      if (h == "let*") return compile_let(e, scope, true);
      if (h == "and" || h == "or") return compile_logic(e, scope, h == "and");
      if (h == "begin") return compile_begin(e, scope);
      if (h == "case") return compile_case(e, scope);
      if (h == "cond") return compile_cond(e, scope);
      if (h == "define") syntax("define is only allowed at top level or at the start of a body", e);
      if (h == "condition" || h == "query") {
        syntax("'" + h + "' may only appear as a top-level statement of an utterance", e);
      }
    }
    auto call = std::make_shared<CallNode>();
    call->span = e.span();
    call->fn = compile_expr(items[0], scope);
    call->args.reserve(items.size() - 1);
    for (std::size_t i = 1; i < items.size(); ++i) call->args.push_back(compile_expr(items[i], scope));
    return call;
  }

  NodePtr compile_quote(const SExpr& e) {
    const auto& items = e.as_list();
    if (items.size() != 2) syntax("quote expects one datum", e);
    auto n = std::make_shared<ConstNode>(datum_to_value(items[1]));
    n->span = e.span();
    return n;
  }

  NodePtr compile_if(const SExpr& e, Scope* scope) {
    const auto& items = e.as_list();
    if (items.size() != 3 && items.size() != 4) syntax("if expects a test, a consequent and an optional alternative", e);
    auto n = std::make_shared<IfNode>();
    n->span = e.span();
    n->test = compile_expr(items[1], scope);
    n->then = compile_expr(items[2], scope);
    if (items.size() == 4) n->otherwise = compile_expr(items[3], scope);
    return n;
  }

  NodePtr compile_logic(const SExpr& e, Scope* scope, bool is_and) {
    const auto& items = e.as_list();
    Body body;
    for (std::size_t i = 1; i < items.size(); ++i) body.push_back(compile_expr(items[i], scope));
    if (is_and) {
      auto n = std::make_shared<AndNode>();
      n->span = e.span();
      n->items = std::move(body);
      return n;
    }
    auto n = std::make_shared<OrNode>();
    n->span = e.span();
    n->items = std::move(body);
    return n;
  }

  NodePtr compile_begin(const SExpr& e, Scope* scope) {
    const auto& items = e.as_list();
    auto n = std::make_shared<BeginNode>();
    n->span = e.span();
    for (std::size_t i = 1; i < items.size(); ++i) n->body.push_back(compile_expr(items[i], scope));
    return n;
  }

  NodePtr compile_lambda_form(const SExpr& e, Scope* scope) {
    const auto& items = e.as_list();
    if (items.size() < 3) syntax("lambda expects parameters and a body", e);
    if (items[1].is_symbol()) {
      return compile_lambda({}, symbol_of(items[1], "lambda parameter"), std::span<const SExpr>(items).subspan(2),
                            scope, e);
    }
    if (!items[1].is_list()) syntax("lambda parameters must be a list", e);
    return compile_lambda(items[1].as_list(), std::nullopt, std::span<const SExpr>(items).subspan(2), scope, e);
  }

  NodePtr compile_lambda(std::span<const SExpr> params, std::optional<Sym> rest, std::span<const SExpr> body,
                         Scope* scope, const SExpr& where) {
    if (body.empty()) syntax("empty procedure body", where);
    const std::size_t lambdas_before = ++lambda_count_;
    auto n = std::make_shared<LambdaNode>();
    n->span = where.span();
    Scope inner{{}, scope};
    for (const auto& p : params) inner.names.push_back(symbol_of(p, "parameter"));
    n->nparams = inner.names.size();
    if (rest) {
      inner.names.push_back(*rest);
      n->variadic = true;
    }
    n->body = compile_body(body, inner, where);
    n->frame_size = inner.names.size();
    n->captures = lambda_count_ != lambdas_before;
    return n;
  }

  /// Body with leading/interleaved internal defines (letrec* semantics): the
  /// defined names are added to `scope` before any form is compiled.
  Body compile_body(std::span<const SExpr> forms, Scope& scope, const SExpr& where) {
    if (forms.empty()) syntax("empty body", where);
    std::vector<std::optional<std::size_t>> def_slot(forms.size());
    for (std::size_t i = 0; i < forms.size(); ++i) {
      if (forms[i].head() != "define") continue;
      const auto& items = forms[i].as_list();
      if (items.size() < 2) syntax("malformed define", forms[i]);
      const SExpr& target = items[1].is_list() ? (items[1].as_list().empty() ? items[1] : items[1].as_list()[0])
                                               : items[1];
      def_slot[i] = scope.names.size();
      scope.names.push_back(symbol_of(target, "define"));
    }
    Body body;
    for (std::size_t i = 0; i < forms.size(); ++i) {
      if (!def_slot[i]) {
        body.push_back(compile_expr(forms[i], &scope));
        continue;
      }
      const auto& items = forms[i].as_list();
      NodePtr value;
      if (items[1].is_list()) {
        const auto& sig = items[1].as_list();
        value = compile_lambda(std::span<const SExpr>(sig).subspan(1), std::nullopt,
                               std::span<const SExpr>(items).subspan(2), &scope, forms[i]);
      } else {
        if (items.size() != 3) syntax("define expects exactly one value expression", forms[i]);
        value = compile_expr(items[2], &scope);
      }
      auto set = std::make_shared<SetLocalNode>(*def_slot[i], std::move(value));
      set->span = forms[i].span();
      body.push_back(std::move(set));
    }
    return body;
  }

  NodePtr compile_let(const SExpr& e, Scope* scope, bool sequential) {
    const auto& items = e.as_list();
    if (items.size() < 3 || !items[1].is_list()) syntax("let expects a binding list and a body", e);
    auto n = std::make_shared<LetNode>();
    n->span = e.span();
    n->sequential = sequential;
    const std::size_t lambdas_before = lambda_count_;
    Scope inner{{}, scope};
    for (const auto& b : items[1].as_list()) {
      if (!b.is_list() || b.as_list().size() != 2) syntax("malformed let binding", b);
      const Sym name = symbol_of(b.as_list()[0], "let binding");
      n->inits.push_back(compile_expr(b.as_list()[1], sequential ? &inner : scope));
      inner.names.push_back(name);
    }
    n->body = compile_body(std::span<const SExpr>(items).subspan(2), inner, e);
    n->frame_size = inner.names.size();
    n->captures = lambda_count_ != lambdas_before;
    return n;
  }

  static Value case_datum(const SExpr& d) {
    // `(('lawn) ...)` is written with quoted datums; treat 'x as x.
    if (d.is_list() && d.as_list().size() == 2 && d.as_list()[0].is_symbol("quote")) {
      return datum_to_value(d.as_list()[1]);
    }
    return datum_to_value(d);
  }

  NodePtr compile_case(const SExpr& e, Scope* scope) {
    const auto& items = e.as_list();
    if (items.size() < 2) syntax("case expects a key", e);
    auto n = std::make_shared<CaseNode>();
    n->span = e.span();
    n->key = compile_expr(items[1], scope);
    for (std::size_t i = 2; i < items.size(); ++i) {
      const auto& clause = items[i];
      if (!clause.is_list() || clause.as_list().size() < 2) syntax("malformed case clause", clause);
      const auto& parts = clause.as_list();
      Body body;
      for (std::size_t j = 1; j < parts.size(); ++j) body.push_back(compile_expr(parts[j], scope));
      if (parts[0].is_symbol("else")) {
        n->otherwise = std::move(body);
        continue;
      }
      CaseNode::Clause c;
      if (parts[0].is_list()) {
        for (const auto& d : parts[0].as_list()) c.datums.push_back(case_datum(d));
      } else {
        c.datums.push_back(case_datum(parts[0]));
      }
      c.body = std::move(body);
      n->clauses.push_back(std::move(c));
    }
    return n;
  }

  NodePtr compile_cond(const SExpr& e, Scope* scope) {
    const auto& items = e.as_list();
    auto n = std::make_shared<CondNode>();
    n->span = e.span();
    for (std::size_t i = 1; i < items.size(); ++i) {
      const auto& clause = items[i];
      if (!clause.is_list() || clause.as_list().empty()) syntax("malformed cond clause", clause);
      const auto& parts = clause.as_list();
      CondNode::Clause c;
      if (!parts[0].is_symbol("else")) c.test = compile_expr(parts[0], scope);
      for (std::size_t j = 1; j < parts.size(); ++j) c.body.push_back(compile_expr(parts[j], scope));
      if (!c.test && c.body.empty()) syntax("empty else clause", clause);
      n->clauses.push_back(std::move(c));
    }
    return n;
  }

  std::unordered_map<Sym, std::uint32_t> slots_;
  std::vector<Value> initial_;
  std::vector<bool> defined_;
  std::vector<bool> builtin_;
  std::vector<Sym> refs_;
  std::vector<Sym> defs_;
  std::size_t lambda_count_ = 0;
};

// ---------------------------------------------------------------------------
// World implementation

inline World::World(const Program& program, std::uint64_t seed, WorldLimits limits)
    : program_(&program), seed_(seed), rng_(seed), globals_(program.initial_globals()), limits_(limits) {}

inline Value World::run(const Node& node) {
  char base;
  const bool outermost = stack_base_ == nullptr;
  if (outermost) stack_base_ = &base;
  try {
    Value v = node.eval(nullptr, *this);
    if (outermost) stack_base_ = nullptr;
    return v;
  } catch (...) {
    if (outermost) stack_base_ = nullptr;
    throw;
  }
}

inline Value World::apply(const Value& fn, std::span<const Value> args, Span where) {
  switch (fn.kind()) {
    case Kind::Builtin: {
      const auto& b = *static_cast<const BuiltinObj*>(fn.object());
      const int n = static_cast<int>(args.size());
      if (n < b.min_args || (b.max_args >= 0 && n > b.max_args)) {
        std::string expected = b.max_args == b.min_args ? std::to_string(b.min_args)
                               : b.max_args < 0         ? "at least " + std::to_string(b.min_args)
                                                        : std::to_string(b.min_args) + ".." + std::to_string(b.max_args);
        throw EvalError(EvalError::Code::Arity,
                        "'" + b.name + "' expects " + expected + " argument(s), got " + std::to_string(n), where,
                        b.name);
      }
      DepthGuard guard(*this);
      return b.fn(*this, b, args);
    }
    case Kind::Closure: {
      const auto& c = *static_cast<const ClosureObj*>(fn.object());
      const LambdaNode& lam = *c.lambda;
      if (args.size() < lam.nparams || (!lam.variadic && args.size() != lam.nparams)) {
        throw EvalError(EvalError::Code::Arity,
                        "procedure expects " + std::to_string(lam.nparams) + " argument(s), got " +
                            std::to_string(args.size()),
                        where);
      }
      DepthGuard guard(*this);
      auto enter = [&](Frame& frame, const FramePtr& ptr) {
        frame.parent = c.env;
        frame.slots.reserve(lam.frame_size);
        for (std::size_t i = 0; i < lam.nparams; ++i) frame.slots.push_back(args[i]);
        if (lam.variadic) frame.slots.push_back(make_list(args.subspan(lam.nparams)));
        while (frame.slots.size() < lam.frame_size) frame.slots.push_back(Value::undefined());
        return eval_body(lam.body, ptr, *this);
      };
      if (lam.captures) {
        auto frame = std::make_shared<Frame>();
        return enter(*frame, frame);
      }
      Frame local;
      return enter(local, FramePtr(FramePtr(), &local));
    }
    case Kind::Memo: return apply_memo(fn, args, where);
    default:
      throw EvalError(EvalError::Code::NotProcedure, "cannot apply a " + std::string(kind_name(fn.kind())) + ": " +
                                                         to_string(fn),
                      where);
  }
}

inline Value World::apply_memo(const Value& fn, std::span<const Value> args, Span where) {
  const Object* id = fn.object();
  std::uint64_t h = mix64(reinterpret_cast<std::uintptr_t>(id));
  for (const auto& a : args) h = hash_combine(h, hash_value(a));
  auto matches = [&](const MemoEntry& e) {
    if (e.fn != id || e.args.size() != args.size()) return false;
    for (std::size_t i = 0; i < args.size(); ++i)
      if (!equal_values(e.args[i], args[i])) return false;
    return true;
  };
  if (auto it = memo_.find(h); it != memo_.end()) {
    for (const auto& e : it->second)
      if (matches(e)) return e.result;
  }
  Value result = apply(static_cast<const MemoObj*>(id)->inner, args, where);
  auto& bucket = memo_[h];
  for (const auto& e : bucket)
    if (matches(e)) return e.result;  // filled by a re-entrant call
  bucket.push_back(MemoEntry{id, std::vector<Value>(args.begin(), args.end()), result});
  ++memo_count_;
  return result;
}

}  // namespace wm

#include "wm/builtins.hpp"
