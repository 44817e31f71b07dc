#pragma once

// The bundled world models, their example translations and mock fixtures.
//
// Sources are compiled into the binary from assets/ (see the generated
// wm/assets_data.hpp). The physics and agents models share a prelude of list
// helpers that is prepended to their source.

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "wm/assets_data.hpp"
#include "wm/inference.hpp"
#include "wm/sexpr.hpp"
#include "wm/stack.hpp"

namespace wm {

inline std::optional<std::string_view> find_asset(std::string_view path) {
  for (const auto& [name, text] : assets_data::kFiles)
    if (name == path) return text;
  return std::nullopt;
}

inline std::string_view require_asset(std::string_view path) {
  if (auto a = find_asset(path)) return *a;
  throw std::logic_error("missing bundled asset " + std::string(path));
}

enum class RenderKind { None, TableScene, FrameSequence, FamilyTree, Gridworld };

inline std::string_view render_kind_name(RenderKind k) {
  switch (k) {
    case RenderKind::None: return "none";
    case RenderKind::TableScene: return "table-scene";
    case RenderKind::FrameSequence: return "frame-sequence";
    case RenderKind::FamilyTree: return "family-tree";
    case RenderKind::Gridworld: return "gridworld";
  }
  return "none";
}

class UnknownWorld : public std::runtime_error {
 public:
  explicit UnknownWorld(const std::string& id) : std::runtime_error("unknown world '" + id + "'"), id_(id) {}
  const std::string& id() const { return id_; }

 private:
  std::string id_;
};

/// World used for building a model from scratch. Loadable but not listed.
inline constexpr std::string_view kScratchWorld = "scratch";

struct WorldModel {
  std::string id;
  std::string description;
  std::optional<SourceUnit> prelude;
  SourceUnit model;
  SourceUnit examples;
  std::string fixtures_text;
  RenderKind render_kind = RenderKind::None;
  std::string root_expr;  // empty when there is nothing to render
  bool construct = false;

  /// Prelude forms followed by model forms.
  std::vector<SExpr> forms() const {
    std::vector<SExpr> out;
    if (prelude) out = prelude->forms;
    out.insert(out.end(), model.forms.begin(), model.forms.end());
    return out;
  }

  /// Model text as it appears in prompts.
  std::string prompt_model_text() const {
    if (!prelude) return model.text;
    return prelude->text + "\n" + model.text;
  }
};

using WorldPtr = std::shared_ptr<const WorldModel>;

inline const std::vector<std::string>& list_worlds() {
  static const std::vector<std::string> ids{"tug-of-war", "kinship", "scenes-static", "scenes-physics", "agents"};
  return ids;
}

namespace detail {

struct WorldSpec {
  std::string_view id;
  std::string_view description;
  bool prelude;
  RenderKind render;
  std::string_view root;
};

inline const std::vector<WorldSpec>& world_specs() {
  static const std::vector<WorldSpec> specs{
      {"tug-of-war", "Players with latent strength and laziness compete in team matches.", false, RenderKind::None, ""},
      {"kinship", "Random family trees with partner, parent and sibling relations.", false, RenderKind::FamilyTree,
       "T"},
      {"scenes-static", "Tabletop scenes of colored mugs, cans and bowls.", false, RenderKind::TableScene,
       "(objects-in-scene 'scene)"},
      {"scenes-physics", "Two objects on a line, pushed and colliding under friction.", true,
       RenderKind::FrameSequence, "base_states_for_times"},
      {"agents", "A rational agent plans a route to lunch on a small city grid.", true, RenderKind::Gridworld,
       "(optimal_policy_with_trajectory 'bob gridworld initial_x initial_y)"},
      {"scratch", "An empty model, built up from language one definition at a time.", false, RenderKind::None, ""},
  };
  return specs;
}

inline WorldPtr build_world(const WorldSpec& spec) {
  auto w = std::make_shared<WorldModel>();
  w->id = std::string(spec.id);
  w->description = std::string(spec.description);
  w->render_kind = spec.render;
  w->root_expr = std::string(spec.root);
  if (spec.prelude) w->prelude = parse(require_asset("worlds/prelude.church"));
  if (spec.id == kScratchWorld) {
    w->construct = true;
    w->examples = parse(require_asset("worlds/construct-example.church"));
  } else {
    w->model = parse(require_asset("worlds/" + std::string(spec.id) + ".church"));
    w->examples = parse(require_asset("worlds/" + std::string(spec.id) + ".examples.church"));
  }
  if (auto f = find_asset("fixtures/" + std::string(spec.id) + ".fixtures.church")) w->fixtures_text = std::string(*f);
  return w;
}

}  // namespace detail

/// Evaluates `exprs` in the worlds seeded first_seed .. first_seed + n - 1 and
/// hands each world's values to `fn(seed, values)`. Runs on one large-stack
/// thread.
template <typename F>
void for_each_world(const WorldModel& world, std::span<const SExpr> extra_model, std::uint64_t first_seed,
                    std::size_t n, std::span<const SExpr> exprs, F&& fn) {
  Program program;
  std::vector<NodePtr> model;
  for (const auto& f : world.forms()) model.push_back(program.compile(f).node);
  for (const auto& f : extra_model) model.push_back(program.compile(f).node);
  std::vector<NodePtr> nodes;
  for (const auto& e : exprs) nodes.push_back(program.compile(e).node);
  on_big_stack([&] {
    std::vector<Value> values(nodes.size());
    for (std::size_t i = 0; i < n; ++i) {
      World w(program, first_seed + i, worker_limits());
      for (const auto& m : model) w.run(*m);
      for (std::size_t k = 0; k < nodes.size(); ++k) values[k] = w.run(*nodes[k]);
      fn(first_seed + i, std::span<const Value>(values));
    }
  });
}

template <typename F>
void for_each_world(const WorldModel& world, std::uint64_t first_seed, std::size_t n, std::span<const SExpr> exprs,
                    F&& fn) {
  for_each_world(world, std::span<const SExpr>(), first_seed, n, exprs, std::forward<F>(fn));
}

/// The world's renderable state in the world with the given seed.
inline Value sample_world_state(const WorldModel& world, std::uint64_t seed) {
  if (world.root_expr.empty()) throw std::invalid_argument("world '" + world.id + "' has no renderable state");
  const SExpr root = parse_one(world.root_expr);
  Value out;
  for_each_world(world, seed, 1, std::span<const SExpr>(&root, 1),
                 [&](std::uint64_t, std::span<const Value> v) { out = v[0]; });
  return out;
}

/// Loads (once) and dry-runs a bundled world. Throws UnknownWorld.
inline WorldPtr load_world(const std::string& id) {
  static std::mutex mu;
  static std::map<std::string, WorldPtr> cache;
  std::lock_guard<std::mutex> lock(mu);
  if (auto it = cache.find(id); it != cache.end()) return it->second;
  for (const auto& spec : detail::world_specs()) {
    if (spec.id != id) continue;
    auto w = detail::build_world(spec);
    const SExpr probe = w->root_expr.empty() ? SExpr::boolean(true) : parse_one(w->root_expr);
    for_each_world(*w, 0, 1, std::span<const SExpr>(&probe, 1), [](std::uint64_t, std::span<const Value>) {});
    cache.emplace(id, w);
    return w;
  }
  throw UnknownWorld(id);
}

// ---------------------------------------------------------------------------
// Prior statistics

struct StatCheck {
  std::string world;
  std::string name;
  double observed = 0;
  double expected = 0;
  double tolerance = 0;  // four standard errors, or 0 for exact checks
  bool pass = false;
};

namespace detail {

inline StatCheck proportion_check(std::string world, std::string name, std::size_t hits, std::size_t n, double p) {
  const double obs = static_cast<double>(hits) / static_cast<double>(n);
  const double tol = 4.0 * std::sqrt(p * (1 - p) / static_cast<double>(n));
  return {std::move(world), std::move(name), obs, p, tol, std::fabs(obs - p) <= tol};
}

inline StatCheck mean_check(std::string world, std::string name, double sum, std::size_t n, double mu, double sigma) {
  const double obs = sum / static_cast<double>(n);
  const double tol = 4.0 * sigma / std::sqrt(static_cast<double>(n));
  return {std::move(world), std::move(name), obs, mu, tol, std::fabs(obs - mu) <= tol};
}

inline StatCheck all_check(std::string world, std::string name, std::size_t ok, std::size_t n) {
  return {std::move(world), std::move(name), static_cast<double>(ok), static_cast<double>(n), 0, ok == n};
}

}  // namespace detail

/// Empirical prior statistics over `n` seeded worlds against the values the
/// model source implies. Tolerances are four standard errors.
inline std::vector<StatCheck> check_world_statistics(const WorldModel& world, std::size_t n, std::uint64_t seed = 1) {
  using detail::all_check;
  using detail::mean_check;
  using detail::proportion_check;
  std::vector<StatCheck> out;
  const auto& id = world.id;
  if (id == "tug-of-war") {
    const std::vector<SExpr> exprs{parse_one("(strength 'alice)"), parse_one("(strength 'bob)"),
                                   parse_one("(laziness 'alice)"), parse_one("(won-against '(alice) '(bob))")};
    double strength = 0, laziness = 0;
    std::size_t wins = 0;
    for_each_world(world, seed, n, exprs, [&](std::uint64_t, std::span<const Value> v) {
      strength += v[0].as_number() + v[1].as_number();
      laziness += v[2].as_number();
      wins += v[3].truthy();
    });
    out.push_back(mean_check(id, "mean strength", strength, 2 * n, 50, 20));
    out.push_back(mean_check(id, "mean laziness", laziness, n, 0.5, std::sqrt(1.0 / 12)));
    out.push_back(proportion_check(id, "P(alice beats bob)", wins, n, 0.5));
  } else if (id == "kinship") {
    const std::vector<SExpr> exprs{parse_one("(length T)"), parse_one("(lookup (first T) 'partner-id)")};
    std::size_t small = 0, partnered = 0;
    for_each_world(world, seed, n, exprs, [&](std::uint64_t, std::span<const Value> v) {
      small += v[0].as_number() >= 1 && v[0].as_number() <= 27;
      partnered += !v[1].is_nil();
    });
    out.push_back(all_check(id, "tree size in [1, 27]", small, n));
    out.push_back(proportion_check(id, "P(root has partner)", partnered, n, 0.5));
  } else if (id == "scenes-static") {
    const std::vector<SExpr> exprs{parse_one("(objects-in-scene 'scene)")};
    std::size_t bounded = 0, shapes_ok = 0;
    const Sym mug = intern("mug"), can = intern("can"), bowl = intern("bowl");
    for_each_world(world, seed, n, exprs, [&](std::uint64_t, std::span<const Value> v) {
      std::size_t count = 0;
      bool ok = true;
      for (const Value* cur = &v[0]; cur->is_pair(); cur = &cdr(*cur)) {
        ++count;
        const Value* f = &car(*cur);
        for (; f->is_pair(); f = &cdr(*f)) {
          const Value& entry = car(*f);
          if (entry.is_pair() && car(entry).is_symbol() && symbol_name(car(entry).as_symbol()) == "shape") {
            const Value& s = cdr(entry);
            ok = ok && s.is_symbol() && (s.as_symbol() == mug || s.as_symbol() == can || s.as_symbol() == bowl);
          }
        }
      }
      bounded += count <= 12;
      shapes_ok += ok;
    });
    out.push_back(all_check(id, "object count <= 12", bounded, n));
    out.push_back(all_check(id, "shapes in {mug, can, bowl}", shapes_ok, n));
  } else if (id == "scenes-physics") {
    const std::vector<SExpr> exprs{parse_one("(length base_states_for_times)"),
                                   parse_one("(choose_initial_force 'obj-0)")};
    std::size_t frames = 0;
    double force = 0;
    for_each_world(world, seed, n, exprs, [&](std::uint64_t, std::span<const Value> v) {
      frames += v[0].as_number() == 10;
      force += v[1].as_number();
    });
    out.push_back(all_check(id, "10 frames per scene", frames, n));
    // Folded normal |N(5, 3)|.
    const double mu = 5, sd = 3;
    const double mean = sd * std::sqrt(2 / std::numbers::pi) * std::exp(-mu * mu / (2 * sd * sd)) +
                        mu * std::erf(mu / (sd * std::sqrt(2.0)));
    out.push_back(mean_check(id, "mean push force on obj-0", force, n, mean, std::sqrt(mu * mu + sd * sd - mean * mean)));
  } else if (id == "agents") {
    const std::vector<SExpr> exprs{parse_one("(has_bike 'bob)"), parse_one("(is_open 'pizza)")};
    std::size_t bike = 0, open = 0;
    for_each_world(world, seed, n, exprs, [&](std::uint64_t, std::span<const Value> v) {
      bike += v[0].truthy();
      open += v[1].truthy();
    });
    out.push_back(proportion_check(id, "P(has_bike)", bike, n, 0.5));
    out.push_back(proportion_check(id, "P(is_open pizza)", open, n, 0.5));
  }
  return out;
}

}  // namespace wm
