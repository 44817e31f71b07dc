#pragma once

// Helpers shared by the test binaries.

#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "oracles.hpp"
#include "wm/eval.hpp"
#include "wm/inference.hpp"
#include "wm/sexpr.hpp"
#include "wm/stack.hpp"
#include "wm/worlds.hpp"

namespace wm::test {

/// Evaluates every form of `text` in one world and returns the last value.
inline Value run_program(std::string_view text, std::uint64_t seed = 0) {
  const auto unit = parse(text);
  Program program;
  std::vector<NodePtr> nodes;
  for (const auto& f : unit.forms) nodes.push_back(program.compile(f).node);
  return on_big_stack([&] {
    World world(program, seed, worker_limits());
    Value last;
    for (const auto& n : nodes) last = world.run(*n);
    return last;
  });
}

/// Printed value of `text` evaluated in one world.
inline std::string run_print(std::string_view text, std::uint64_t seed = 0) {
  return to_string(run_program(text, seed));
}

/// Names the kinship world assigns to people.
inline const std::set<std::string> kKinNames{"avery", "blake", "charlie", "dana"};

inline std::vector<SExpr> parse_all(std::initializer_list<std::string_view> srcs) {
  std::vector<SExpr> out;
  for (auto s : srcs) out.push_back(parse_one(s));
  return out;
}

/// Frames, both masses, shape and push of a physics world, in the order
/// physics_inputs reads them.
inline const std::vector<SExpr>& physics_exprs() {
  static const auto e = parse_all({"base_states_for_times", "(choose_mass 'obj-0)", "(choose_mass 'obj-1)",
                                   "(choose_shapes 'this_scene)", "(choose_initial_force 'obj-0)"});
  return e;
}

inline oracle::PhysicsInputs physics_inputs(std::span<const Value> v) {
  return {v[1].as_number(), v[2].as_number(), symbol_name(v[3].as_symbol()) == "sphere", v[4].as_number()};
}

/// Copy of `world` with the top-level definition of the same name replaced by
/// `define_code`.
inline WorldModel with_definition(const WorldModel& world, std::string_view define_code) {
  const SExpr replacement = parse_one(define_code);
  auto name_of = [](const SExpr& f) {
    const auto& target = f.as_list().at(1);
    return target.is_list() ? target.as_list().at(0).as_symbol() : target.as_symbol();
  };
  WorldModel out = world;
  for (auto& f : out.model.forms) {
    if (f.head() == "define" && name_of(f) == name_of(replacement)) {
      f = replacement;
      return out;
    }
  }
  throw std::invalid_argument("no definition to replace in " + std::string(define_code));
}

}  // namespace wm::test
