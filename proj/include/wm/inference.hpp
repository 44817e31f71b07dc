#pragma once

// Rejection sampling over compiled programs, posterior summaries, and the
// cumulative define/condition/query session built on top of them.
//
// Attempt indices are global. Attempt `a` lives in block a / kBlockSize at
// position a % kBlockSize and is seeded with
// derive_chain_seed(master, block, position). Blocks are handed to worker
// threads in any order, but results are merged in attempt order and cut off at
// exactly the target number of accepted worlds, so the output does not depend
// on the number of threads.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <exception>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "wm/eval.hpp"
#include "wm/stack.hpp"

namespace wm {

inline constexpr std::size_t kBlockSize = 256;
// Chain index reserved for dry-run worlds; real blocks never get this high.
inline constexpr std::uint64_t kDryRunChain = (std::uint64_t{1} << 24) - 1;

struct SamplingBudget {
  std::size_t target_accepted = 1000;
  std::size_t max_attempts = 1'000'000;
  std::size_t parallel_chains = 0;  // 0 = one per hardware thread

  static std::size_t hardware_chains() {
    const unsigned n = std::thread::hardware_concurrency();
    return n == 0 ? 1 : n;
  }
  std::size_t chains() const { return parallel_chains == 0 ? hardware_chains() : parallel_chains; }

  void validate() const {
    if (target_accepted < 1) throw std::invalid_argument("target_accepted must be at least 1");
    if (max_attempts < target_accepted) throw std::invalid_argument("max_attempts must be >= target_accepted");
  }
};

/// Worlds evaluated inside workers get the full big-stack budget.
inline WorldLimits worker_limits() {
  WorldLimits limits;
  limits.max_stack_bytes = kEvalStackBytes - (std::size_t{16} << 20);
  return limits;
}

struct CompiledCondition {
  SExpr body;
  NodePtr node;
};

struct PosteriorSamples {
  std::string query;
  std::vector<Value> values;
  std::size_t attempts = 0;
  std::size_t accepted = 0;
  std::uint64_t seed = 0;
  bool budget_exhausted = false;  // stopped at max_attempts before the target
  std::vector<std::size_t> condition_evaluations;  // per condition
  std::vector<std::size_t> first_failures;         // per condition
  std::size_t non_boolean_conditions = 0;          // condition results that were not booleans

  double acceptance_rate() const { return attempts == 0 ? 0.0 : static_cast<double>(accepted) / attempts; }
};

struct ConditionDiagnostic {
  std::string source;
  std::size_t evaluations = 0;
  std::size_t first_failures = 0;
};

class ZeroAcceptance : public std::runtime_error {
 public:
  ZeroAcceptance(std::size_t attempts, std::vector<ConditionDiagnostic> conditions,
                 std::vector<std::string> continuous_equalities)
      : std::runtime_error(describe(attempts, conditions, continuous_equalities)),
        attempts_(attempts),
        conditions_(std::move(conditions)),
        continuous_(std::move(continuous_equalities)) {}

  std::size_t attempts() const { return attempts_; }
  const std::vector<ConditionDiagnostic>& conditions() const { return conditions_; }
  const std::vector<std::string>& continuous_equalities() const { return continuous_; }

 private:
  static std::string describe(std::size_t attempts, const std::vector<ConditionDiagnostic>& conds,
                              const std::vector<std::string>& continuous) {
    std::string msg = "no world satisfied the conditions in " + std::to_string(attempts) + " attempts";
    for (const auto& c : conds) {
      if (c.first_failures > 0) msg += "; " + c.source + " rejected " + std::to_string(c.first_failures);
    }
    for (const auto& c : continuous) msg += "; equality on a continuous value: " + c;
    return msg;
  }

  std::size_t attempts_;
  std::vector<ConditionDiagnostic> conditions_;
  std::vector<std::string> continuous_;
};

namespace detail {

struct AttemptOutcome {
  std::int32_t failed_at;  // -1 = accepted
  std::uint16_t non_boolean;
};

struct BlockResult {
  std::vector<AttemptOutcome> outcomes;
  std::vector<Value> values;  // one per accepted attempt
  std::exception_ptr error;   // stops the block at outcomes.size()
};

inline BlockResult run_block(const Program& program, std::span<const NodePtr> model,
                             std::span<const CompiledCondition> conditions, const Node* query, std::uint64_t seed,
                             std::size_t block, std::size_t max_attempts) {
  BlockResult r;
  const std::size_t first = block * kBlockSize;
  const std::size_t count = std::min(kBlockSize, max_attempts - first);
  r.outcomes.reserve(count);
  for (std::size_t j = 0; j < count; ++j) {
    try {
      World world(program, derive_chain_seed(seed, block, j), worker_limits());
      for (const auto& n : model) world.run(*n);
      AttemptOutcome out{-1, 0};
      for (std::size_t c = 0; c < conditions.size(); ++c) {
        const Value v = world.run(*conditions[c].node);
        if (!v.is_boolean()) ++out.non_boolean;
        if (v.is_false()) {
          out.failed_at = static_cast<std::int32_t>(c);
          break;
        }
      }
      if (out.failed_at < 0) r.values.push_back(query ? world.run(*query) : Value::nil());
      r.outcomes.push_back(out);
    } catch (...) {
      r.error = std::current_exception();
      break;
    }
  }
  return r;
}

inline bool is_non_integer_number(const Value& v) {
  return v.is_number() && std::isfinite(v.as_number()) && v.as_number() != std::floor(v.as_number());
}

inline void collect_equalities(const SExpr& e, std::vector<const SExpr*>& out) {
  if (!e.is_list()) return;
  const auto h = e.head();
  if (h == "lambda" || h == "let" || h == "let*" || h == "define" || h == "quote") return;
  if ((h == "=" || h == "equal?") && e.as_list().size() == 3) out.push_back(&e);
  for (const auto& c : e.as_list()) collect_equalities(c, out);
}

}  // namespace detail

/// Equalities (`=`/`equal?`) inside the conditions whose operands take
/// non-integer values that differ from world to world. Such conditions have
/// probability zero under a continuous prior.
inline std::vector<std::string> suspect_continuous_equalities(const Program& program, std::span<const NodePtr> model,
                                                              std::span<const CompiledCondition> conditions,
                                                              std::uint64_t seed) {
  std::vector<std::string> found;
  Program scratch = program;
  constexpr std::size_t kProbeWorlds = 4;
  for (const auto& cond : conditions) {
    std::vector<const SExpr*> equalities;
    detail::collect_equalities(cond.body, equalities);
    for (const SExpr* eq : equalities) {
      bool suspicious = false;
      for (std::size_t side = 1; side <= 2 && !suspicious; ++side) {
        try {
          auto c = scratch.compile(eq->as_list()[side]);
          if (!scratch.unresolved(c.global_refs).empty()) continue;
          std::vector<Value> seen;
          for (std::size_t i = 0; i < kProbeWorlds; ++i) {
            World world(scratch, derive_chain_seed(seed, kDryRunChain - 1, i), worker_limits());
            for (const auto& n : model) world.run(*n);
            seen.push_back(world.run(*c.node));
          }
          const bool continuous = std::all_of(seen.begin(), seen.end(), detail::is_non_integer_number);
          const bool varies = std::any_of(seen.begin(), seen.end(),
                                          [&](const Value& v) { return !equal_values(v, seen.front()); });
          suspicious = continuous && varies;
        } catch (const std::exception&) {
          // operands that depend on local bindings or fail to evaluate are skipped
        }
      }
      if (suspicious) found.push_back(print(*eq));
    }
  }
  return found;
}

/// Draws worlds until `budget.target_accepted` satisfy every condition (or
/// `budget.max_attempts` are spent) and evaluates `query` in each accepted
/// world. A null query records Nil per accepted world.
inline PosteriorSamples rejection_sample(const Program& program, std::span<const NodePtr> model,
                                         std::span<const CompiledCondition> conditions, const NodePtr& query,
                                         const SamplingBudget& budget, std::uint64_t seed,
                                         std::string query_text = {}) {
  budget.validate();
  const std::size_t nblocks = (budget.max_attempts + kBlockSize - 1) / kBlockSize;
  const std::size_t nthreads = std::max<std::size_t>(1, std::min(budget.chains(), nblocks));

  std::vector<std::optional<detail::BlockResult>> blocks(nblocks);
  std::mutex mutex;
  std::atomic<std::size_t> next_block{0};
  std::atomic<bool> stop{false};
  std::size_t prefix = 0;           // blocks [0, prefix) are complete
  std::size_t prefix_accepted = 0;  // accepted worlds in that prefix

  auto worker = [&] {
    while (!stop.load(std::memory_order_relaxed)) {
      const std::size_t b = next_block.fetch_add(1);
      if (b >= nblocks) return;
      auto result = detail::run_block(program, model, conditions, query.get(), seed, b, budget.max_attempts);
      std::lock_guard lock(mutex);
      blocks[b] = std::move(result);
      while (prefix < nblocks && blocks[prefix]) {
        prefix_accepted += blocks[prefix]->values.size();
        const bool failed = static_cast<bool>(blocks[prefix]->error);
        ++prefix;
        if (failed || prefix_accepted >= budget.target_accepted) {
          stop = true;
          break;
        }
      }
    }
  };

  std::vector<std::unique_ptr<BigStackThread>> threads;
  for (std::size_t t = 0; t < nthreads; ++t) threads.push_back(std::make_unique<BigStackThread>(worker));
  for (auto& t : threads) t->join();

  PosteriorSamples out;
  out.query = std::move(query_text);
  out.seed = seed;
  out.condition_evaluations.assign(conditions.size(), 0);
  out.first_failures.assign(conditions.size(), 0);
  bool done = false;
  for (std::size_t b = 0; b < nblocks && !done && blocks[b]; ++b) {
    auto& block = *blocks[b];
    std::size_t v = 0;
    for (const auto& o : block.outcomes) {
      ++out.attempts;
      out.non_boolean_conditions += o.non_boolean;
      const std::size_t evaluated = o.failed_at < 0 ? conditions.size() : static_cast<std::size_t>(o.failed_at) + 1;
      for (std::size_t c = 0; c < evaluated; ++c) ++out.condition_evaluations[c];
      if (o.failed_at >= 0) {
        ++out.first_failures[static_cast<std::size_t>(o.failed_at)];
        continue;
      }
      out.values.push_back(std::move(block.values[v++]));
      if (out.values.size() == budget.target_accepted) {
        done = true;
        break;
      }
    }
    if (!done && block.error) std::rethrow_exception(block.error);
  }
  out.accepted = out.values.size();
  out.budget_exhausted = out.accepted < budget.target_accepted;

  if (out.accepted == 0) {
    std::vector<ConditionDiagnostic> diag;
    for (std::size_t c = 0; c < conditions.size(); ++c) {
      diag.push_back({print(conditions[c].body), out.condition_evaluations[c], out.first_failures[c]});
    }
    auto continuous =
        on_big_stack([&] { return suspect_continuous_equalities(program, model, conditions, seed); });
    throw ZeroAcceptance(out.attempts, std::move(diag), std::move(continuous));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Summaries

struct Histogram {
  std::vector<double> edges;  // counts.size() + 1 entries
  std::vector<std::size_t> counts;
};

struct PosteriorSummary {
  enum class Kind { BooleanProbability, Numeric, Categorical, Generic };
  Kind kind = Kind::Generic;
  std::size_t n = 0;
  double acceptance_rate = 0;

  double p = 0;  // boolean
  double stderr_ = 0;

  double mean = 0;  // numeric
  double stdev = 0;
  double min = 0;
  double max = 0;
  Histogram histogram;

  std::vector<std::pair<std::string, double>> frequencies;  // categorical, by proportion then name
  std::vector<std::pair<std::string, std::size_t>> counts;  // generic, by count then first appearance
};

inline std::string_view summary_kind_name(PosteriorSummary::Kind k) {
  switch (k) {
    case PosteriorSummary::Kind::BooleanProbability: return "boolean-probability";
    case PosteriorSummary::Kind::Numeric: return "numeric";
    case PosteriorSummary::Kind::Categorical: return "categorical";
    case PosteriorSummary::Kind::Generic: return "generic";
  }
  return "generic";
}

inline std::size_t histogram_bin_count(std::size_t n) {
  const auto bins = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
  return std::clamp<std::size_t>(bins, 10, 40);
}

inline Histogram make_histogram(const std::vector<double>& xs) {
  Histogram h;
  const std::size_t bins = histogram_bin_count(xs.size());
  double lo = *std::min_element(xs.begin(), xs.end());
  double hi = *std::max_element(xs.begin(), xs.end());
  if (lo == hi) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double width = (hi - lo) / static_cast<double>(bins);
  for (std::size_t i = 0; i <= bins; ++i) h.edges.push_back(i == bins ? hi : lo + width * static_cast<double>(i));
  h.counts.assign(bins, 0);
  for (double x : xs) {
    auto i = static_cast<std::size_t>((x - lo) / width);
    if (i >= bins) i = bins - 1;  // the maximum lands in the last bin
    ++h.counts[i];
  }
  return h;
}

inline PosteriorSummary summarize(const std::vector<Value>& values, double acceptance_rate = 1.0) {
  if (values.empty()) throw std::invalid_argument("cannot summarize an empty sample");
  PosteriorSummary s;
  s.n = values.size();
  s.acceptance_rate = acceptance_rate;
  const double n = static_cast<double>(s.n);

  auto all = [&](auto pred) { return std::all_of(values.begin(), values.end(), pred); };
  if (all([](const Value& v) { return v.is_boolean(); })) {
    s.kind = PosteriorSummary::Kind::BooleanProbability;
    const auto t = std::count_if(values.begin(), values.end(), [](const Value& v) { return v.as_boolean(); });
    s.p = static_cast<double>(t) / n;
    s.stderr_ = std::sqrt(s.p * (1 - s.p) / n);
    return s;
  }
  if (all([](const Value& v) { return v.is_number(); })) {
    s.kind = PosteriorSummary::Kind::Numeric;
    std::vector<double> xs;
    xs.reserve(values.size());
    for (const auto& v : values) xs.push_back(v.as_number());
    double sum = 0;
    for (double x : xs) sum += x;
    s.mean = sum / n;
    double ss = 0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.stdev = xs.size() > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
    s.min = *std::min_element(xs.begin(), xs.end());
    s.max = *std::max_element(xs.begin(), xs.end());
    s.histogram = make_histogram(xs);
    return s;
  }
  if (all([](const Value& v) { return v.is_symbol(); })) {
    s.kind = PosteriorSummary::Kind::Categorical;
    std::map<std::string, std::size_t> counts;
    for (const auto& v : values) ++counts[symbol_name(v.as_symbol())];
    for (const auto& [name, c] : counts) s.frequencies.emplace_back(name, static_cast<double>(c) / n);
    std::stable_sort(s.frequencies.begin(), s.frequencies.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    return s;
  }
  s.kind = PosteriorSummary::Kind::Generic;
  std::unordered_map<std::string, std::size_t> index;
  for (const auto& v : values) {
    auto key = to_string(v);
    auto [it, inserted] = index.try_emplace(key, s.counts.size());
    if (inserted) s.counts.emplace_back(std::move(key), 0);
    ++s.counts[it->second].second;
  }
  std::stable_sort(s.counts.begin(), s.counts.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  return s;
}

inline PosteriorSummary summarize(const PosteriorSamples& samples) {
  return summarize(samples.values, samples.acceptance_rate());
}

// ---------------------------------------------------------------------------
// Session

class SessionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Statement {
  enum class Kind { Define, Condition, Query };
  Kind kind;
  SExpr form;  // the define form, or the body of condition/query
};

struct QueryResult {
  PosteriorSamples samples;
  PosteriorSummary summary;
};

/// Span of the first occurrence of symbol `name` inside `e`, if any.
inline std::optional<Span> find_symbol(const SExpr& e, const std::string& name) {
  if (e.is_symbol(name)) return e.span();
  if (!e.is_list()) return std::nullopt;
  for (const auto& c : e.as_list())
    if (auto s = find_symbol(c, name)) return s;
  return std::nullopt;
}

/// A world model plus the ordered defines and conditions accepted so far.
class InferenceSession {
 public:
  InferenceSession(std::vector<SExpr> model_forms, std::uint64_t seed, SamplingBudget budget = {})
      : seed_(seed), budget_(budget), model_forms_(std::move(model_forms)) {
    budget_.validate();
    for (const auto& f : model_forms_) model_.push_back(program_.compile(f).node);
  }

  std::uint64_t seed() const { return seed_; }
  const SamplingBudget& budget() const { return budget_; }
  void set_budget(const SamplingBudget& b) {
    b.validate();
    budget_ = b;
  }
  const Program& program() const { return program_; }
  std::span<const NodePtr> model() const { return model_; }
  const std::vector<SExpr>& extensions() const { return extensions_; }
  const std::vector<CompiledCondition>& conditions() const { return conditions_; }

  /// Statically resolves and dry-runs `statements` (in order) against the
  /// current state without changing it. Throws EvalError or SessionError.
  void check(std::span<const Statement> statements) const {
    Program scratch = program_;
    std::vector<std::pair<const Statement*, NodePtr>> compiled;
    std::vector<Sym> refs;
    for (const auto& st : statements) {
      if (st.kind == Statement::Kind::Define && st.form.head() != "define") {
        throw SessionError("expected a define form, got " + print(st.form));
      }
      auto c = scratch.compile(st.form);
      refs.insert(refs.end(), c.global_refs.begin(), c.global_refs.end());
      compiled.emplace_back(&st, std::move(c.node));
    }
    if (auto missing = scratch.unresolved(refs); !missing.empty()) {
      Span where{};
      for (const auto& st : statements)
        if (auto s = find_symbol(st.form, missing.front())) {
          where = *s;
          break;
        }
      throw EvalError(EvalError::Code::Unbound, "unbound symbol '" + missing.front() + "'", where, missing.front());
    }
    on_big_stack([&] {
      World world(scratch, derive_chain_seed(seed_, kDryRunChain, 0), worker_limits());
      for (const auto& n : model_) world.run(*n);
      for (const auto& [st, node] : compiled) world.run(*node);
    });
  }

  void add_condition(const SExpr& body) {
    const Statement st{Statement::Kind::Condition, body};
    check(std::span<const Statement>(&st, 1));
    conditions_.push_back({body, program_.compile(body).node});
  }

  void add_definition(std::span<const SExpr> forms) {
    if (forms.empty()) throw SessionError("no definitions given");
    std::vector<Statement> sts;
    for (const auto& f : forms) sts.push_back({Statement::Kind::Define, f});
    check(sts);
    for (const auto& f : forms) {
      model_.push_back(program_.compile(f).node);
      extensions_.push_back(f);
    }
  }

  QueryResult run_query(const SExpr& body) const { return run_query(body, budget_); }

  QueryResult run_query(const SExpr& body, const SamplingBudget& budget) const {
    const Statement st{Statement::Kind::Query, body};
    check(std::span<const Statement>(&st, 1));
    Program scratch = program_;
    auto node = scratch.compile(body).node;
    auto samples = rejection_sample(scratch, model_, conditions_, node, budget, seed_, print(body));
    auto summary = summarize(samples);
    return {std::move(samples), std::move(summary)};
  }

  /// Up to `n` worlds satisfying the current conditions, each reduced to the
  /// value of `expr`.
  PosteriorSamples sample_conditioned(const SExpr& expr, std::size_t n, std::size_t max_attempts,
                                      std::uint64_t seed) const {
    Program scratch = program_;
    auto node = scratch.compile(expr).node;
    SamplingBudget b{n, std::max(n, max_attempts), budget_.parallel_chains};
    return rejection_sample(scratch, model_, conditions_, node, b, seed, print(expr));
  }

 private:
  std::uint64_t seed_;
  SamplingBudget budget_;
  std::vector<SExpr> model_forms_;
  Program program_;
  std::vector<NodePtr> model_;
  std::vector<SExpr> extensions_;
  std::vector<CompiledCondition> conditions_;
};

}  // namespace wm
