#pragma once

// Reference implementations that recompute world-model results in plain C++,
// plus accessors for reading interpreter values. Shared by the world tests and
// the acceptance runner.

#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "wm/value.hpp"

namespace wm::oracle {

// ---------------------------------------------------------------------------
// Value access

inline std::vector<Value> items(const Value& list) {
  std::vector<Value> out;
  for (const Value* cur = &list; cur->is_pair(); cur = &cdr(*cur)) out.push_back(car(*cur));
  return out;
}

inline bool key_is(const Value& k, std::string_view name) {
  return (k.is_symbol() && symbol_name(k.as_symbol()) == name) || (k.is_string() && k.as_string() == name);
}

/// Value of `key` in an association list, or nil.
inline Value get(const Value& alist, std::string_view key) {
  for (const auto& e : items(alist))
    if (e.is_pair() && key_is(car(e), key)) return cdr(e);
  return Value::nil();
}

inline bool has(const Value& alist, std::string_view key) {
  for (const auto& e : items(alist))
    if (e.is_pair() && key_is(car(e), key)) return true;
  return false;
}

/// Symbol or string text; nullopt for nil.
inline std::optional<std::string> text(const Value& v) {
  if (v.is_symbol()) return symbol_name(v.as_symbol());
  if (v.is_string()) return v.as_string();
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Physics: two objects on a line

struct Body {
  double x = 0;
  double v = 0;
};
using Frame = std::array<Body, 2>;

struct PhysicsInputs {
  double mass0 = 0;
  double mass1 = 0;
  bool sphere = false;
  double push = 0;  // applied to object 0; object 1 starts at rest
};

/// Ten frames of the line-collision model computed with a flat loop.
inline std::vector<Frame> simulate_physics(const PhysicsInputs& in) {
  const double g = 9.8, dt = 0.5, radius = 1;
  const double mu_static = in.sphere ? 0.02 : 0.05;
  const double mu_kinetic = in.sphere ? 0.01 : 0.02;
  const std::array<double, 2> mass{in.mass0, in.mass1};
  const std::array<double, 2> push{in.push, 0.0};

  auto friction_force = [&](double f, double v, double m) {
    if (std::fabs(v) > 0) return f - mu_kinetic * (m * g);
    return f < mu_static * (m * g) ? 0.0 : f - mu_kinetic * (m * g);
  };
  auto step_velocity = [](double v, double a, double h) {
    const double next = v + a * h;
    return v * next >= 0 ? next : 0.0;
  };

  std::vector<Frame> frames(10);
  const std::array<double, 2> x0{-3.0, 0.0};
  for (int i = 0; i < 2; ++i) {
    const double a = friction_force(push[i], 0, mass[i]) / mass[i];
    frames[0][i] = {x0[i], step_velocity(0, a, dt)};
  }
  for (int t = 1; t < 10; ++t) {
    const Frame& prev = frames[t - 1];
    const double d = prev[0].x - prev[1].x;
    const bool touching = d * d <= (radius + radius) * (radius + radius);
    for (int i = 0; i < 2; ++i) {
      const int j = 1 - i;
      Body b;
      if (touching) {
        b.v = (2 * (mass[j] * prev[j].v) + prev[i].v * (mass[i] - mass[j])) / (mass[i] + mass[j]);
        b.x = prev[i].x + b.v * 1;
      } else {
        const double a = friction_force(0, prev[i].v, mass[i]) / mass[i];
        b.v = step_velocity(prev[i].v, a, dt);
        b.x = prev[i].x + prev[i].v * dt;
      }
      frames[t][i] = b;
    }
  }
  return frames;
}

/// Frames read from the interpreter's `base_states_for_times`, ordered by time
/// and object id.
inline std::vector<Frame> physics_frames(const Value& states_for_times) {
  std::map<int, Frame> by_time;
  for (const auto& entry : items(states_for_times)) {
    const int t = static_cast<int>(car(entry).as_number());
    Frame f{};
    for (const auto& obj : items(get(cdr(entry), "scene_states"))) {
      const auto id = text(get(obj, "object_id")).value_or("");
      const int i = id == "obj-0" ? 0 : id == "obj-1" ? 1 : -1;
      if (i < 0) throw std::runtime_error("unexpected object id '" + id + "'");
      f[i] = {get(obj, "x").as_number(), get(obj, "v").as_number()};
    }
    by_time[t] = f;
  }
  std::vector<Frame> out;
  for (const auto& [t, f] : by_time) out.push_back(f);
  return out;
}

/// Largest absolute difference in x or v; infinity if frame counts differ.
inline double max_frame_error(const std::vector<Frame>& a, const std::vector<Frame>& b) {
  if (a.size() != b.size()) return INFINITY;
  double e = 0;
  for (std::size_t t = 0; t < a.size(); ++t)
    for (int i = 0; i < 2; ++i)
      e = std::max({e, std::fabs(a[t][i].x - b[t][i].x), std::fabs(a[t][i].v - b[t][i].v)});
  return e;
}

// ---------------------------------------------------------------------------
// Agents: value iteration on the lunch grid

inline constexpr int kGridW = 5;
inline constexpr int kGridH = 6;

inline const std::array<std::array<const char*, kGridW>, kGridH>& lunch_grid() {
  static const std::array<std::array<const char*, kGridW>, kGridH> g{{
      {"ames", "lawn", "lawn", "lawn", "sushi"},
      {"ames", "lawn", "lawn", "lawn", "danner"},
      {"office", "barlow", "barlow", "barlow", "danner"},
      {"ames", "lawn", "lawn", "lawn", "danner"},
      {"ames", "lawn", "lawn", "lawn", "vegetarian"},
      {"pizza", "carson", "carson", "carson", "danner"},
  }};
  return g;
}

struct AgentInputs {
  bool bike = false;
  std::map<std::string, bool> open;
  std::map<std::string, double> utility;  // restaurant utility when open
};

struct Action {
  std::string motion;
  std::string direction;
  bool operator==(const Action&) const = default;
};

using ValueGrid = std::array<std::array<double, kGridW>, kGridH>;  // [y-1][x-1]

struct Plan {
  std::vector<Action> actions;       // excluding the start marker
  std::vector<std::string> visited;  // including the start cell
  bool loops = false;
};

class LunchPlanner {
 public:
  explicit LunchPlanner(AgentInputs in) : in_(std::move(in)) {
    actions_.push_back({"stay", "stay"});
    std::vector<std::string> motions{"is_walking"};
    if (in_.bike) motions.push_back("is_biking");
    for (auto m = motions.rbegin(); m != motions.rend(); ++m)
      for (const char* d : {"south", "north", "east", "west"}) actions_.push_back({*m, d});
  }

  const std::vector<Action>& actions() const { return actions_; }

  static std::string cell(int x, int y) { return lunch_grid()[y - 1][x - 1]; }

  double food(const std::string& type) const {
    auto it = in_.open.find(type);
    if (it == in_.open.end()) return 0;
    return it->second ? in_.utility.at(type) : -10.0;
  }

  static double motion(const std::string& type, const std::string& m) {
    if (m == "is_walking") return -0.2;
    if (m == "is_biking") return type == "lawn" ? -1.0 : -0.01;
    return 0;
  }

  static std::pair<int, int> move(int x, int y, const std::string& dir) {
    const int dx = dir == "west" ? -1 : dir == "east" ? 1 : 0;
    const int dy = dir == "north" ? -1 : dir == "south" ? 1 : 0;
    int nx = x >= kGridW ? x : x + dx;
    if (nx < 1) nx = x;
    int ny = y >= kGridH ? y : y + dy;
    if (ny < 1) ny = y;
    return {nx, ny};
  }

  /// Values after iterations 0..`last` of undiscounted value iteration
  /// starting from zero.
  ValueGrid values(int last) const {
    ValueGrid v{};
    for (int i = 0; i <= last; ++i) {
      ValueGrid next{};
      for (int y = 1; y <= kGridH; ++y)
        for (int x = 1; x <= kGridW; ++x) next[y - 1][x - 1] = best(x, y, v).second;
      v = next;
    }
    return v;
  }

  /// Best action by Q-value; the earliest action wins ties.
  std::pair<Action, double> best(int x, int y, const ValueGrid& v) const {
    std::pair<Action, double> out{actions_.front(), -INFINITY};
    bool first = true;
    for (const auto& a : actions_) {
      const auto [nx, ny] = move(x, y, a.direction);
      const auto type = cell(x, y);
      const double q = (food(type) + motion(type, a.motion)) + v[ny - 1][nx - 1];
      if (first || q > out.second) out = {a, q};
      first = false;
    }
    return out;
  }

  Plan plan(int x, int y, int iterations = 20) const {
    const auto v = values(iterations);
    Plan p;
    p.visited.push_back(cell(x, y));
    if (v[y - 1][x - 1] <= 0) return p;
    for (int steps = 0; food(cell(x, y)) <= 0; ++steps) {
      if (steps > 200) {
        p.loops = true;
        break;
      }
      const auto a = best(x, y, v).first;
      std::tie(x, y) = move(x, y, a.direction);
      p.actions.push_back(a);
      p.visited.push_back(cell(x, y));
    }
    return p;
  }

 private:
  AgentInputs in_;
  std::vector<Action> actions_;
};

/// Reads the interpreter's zipped (action location) list into a Plan.
inline Plan plan_from_value(const Value& zipped) {
  Plan p;
  bool first = true;
  for (const auto& e : items(zipped)) {
    const auto parts = items(e);
    if (parts.size() != 2) throw std::runtime_error("unexpected policy entry " + to_string(e));
    const Value& action = parts[0];
    if (!first) p.actions.push_back({text(car(action)).value_or(""), text(cdr(action)).value_or("")});
    p.visited.push_back(text(parts[1]).value_or(""));
    first = false;
  }
  return p;
}

// ---------------------------------------------------------------------------
// Kinship trees

struct Person {
  std::string id;
  std::string name;
  std::string gender;
  std::optional<std::string> parent1, parent2, partner;
  std::vector<std::string> children;
  bool has_children_field = false;
};

class FamilyTree {
 public:
  explicit FamilyTree(const Value& tree) {
    for (const auto& p : items(tree)) {
      Person person;
      person.id = text(get(p, "person-id")).value_or("");
      person.name = text(get(p, "name")).value_or("");
      person.gender = text(get(p, "gender")).value_or("");
      person.parent1 = text(get(p, "parent-1-id"));
      person.parent2 = text(get(p, "parent-2-id"));
      person.partner = text(get(p, "partner-id"));
      person.has_children_field = has(p, "child-ids");
      for (const auto& c : items(get(p, "child-ids"))) person.children.push_back(text(c).value_or(""));
      people_.push_back(std::move(person));
    }
  }

  const std::vector<Person>& people() const { return people_; }

  /// Violations of the tree invariants; empty when the tree is well formed.
  std::vector<std::string> problems(const std::set<std::string>& allowed_names) const {
    std::vector<std::string> out;
    if (people_.empty() || people_.size() > 27) out.push_back("size " + std::to_string(people_.size()));
    std::map<std::string, const Person*> by_id;
    for (std::size_t i = 0; i < people_.size(); ++i) {
      const auto& p = people_[i];
      if (p.id != "person-" + std::to_string(i)) out.push_back("id " + p.id + " at position " + std::to_string(i));
      if (!by_id.emplace(p.id, &p).second) out.push_back("duplicate id " + p.id);
      if (p.gender != "male" && p.gender != "female") out.push_back(p.id + " has gender '" + p.gender + "'");
    }
    std::set<std::string> names;
    for (const auto& p : people_) {
      if (p.name == p.id) continue;
      if (!allowed_names.count(p.name)) out.push_back(p.id + " has unknown name " + p.name);
      if (!names.insert(p.name).second) out.push_back("name " + p.name + " used twice");
    }
    auto find = [&](const std::optional<std::string>& id) -> const Person* {
      if (!id) return nullptr;
      auto it = by_id.find(*id);
      return it == by_id.end() ? nullptr : it->second;
    };
    for (const auto& p : people_) {
      if (p.partner) {
        const Person* q = find(p.partner);
        if (!q) out.push_back(p.id + " has dangling partner " + *p.partner);
        else if (q->partner != p.id) out.push_back("partner link " + p.id + " -> " + q->id + " is not symmetric");
        else if (q->children != p.children) out.push_back("partners " + p.id + " and " + q->id + " disagree on children");
      }
      if (p.parent1.has_value() != p.parent2.has_value()) out.push_back(p.id + " has exactly one parent");
      if (p.parent1) {
        const Person* a = find(p.parent1);
        const Person* b = find(p.parent2);
        if (!a || !b) {
          out.push_back(p.id + " has a dangling parent reference");
          continue;
        }
        if (a->partner != b->id) out.push_back(p.id + "'s parents are not partners");
        for (const Person* par : {a, b})
          if (std::find(par->children.begin(), par->children.end(), p.id) == par->children.end())
            out.push_back(par->id + " does not list child " + p.id);
      }
      for (const auto& c : p.children) {
        const Person* child = find(c);
        if (!child) out.push_back(p.id + " lists missing child " + c);
        else if (child->parent1 != p.id && child->parent2 != p.id) out.push_back(c + " does not point back to " + p.id);
      }
    }
    return out;
  }

  // Relations over names. A reference is a given name, or the person id of an
  // unnamed person.
  const Person* lookup(const std::optional<std::string>& ref) const {
    if (!ref) return nullptr;
    for (const auto& p : people_)
      if (p.name == *ref) return &p;
    for (const auto& p : people_)
      if (p.id == *ref) return &p;
    return nullptr;
  }

  std::optional<std::string> name_of(const std::optional<std::string>& ref) const {
    const Person* p = lookup(ref);
    return p ? std::optional<std::string>(p->name) : std::nullopt;
  }

  bool is_female(const std::string& name) const {
    const Person* p = lookup(name);
    return p && p->gender == "female";
  }
  bool is_male(const std::string& name) const {
    const Person* p = lookup(name);
    return p && p->gender == "male";
  }

  bool parent_of(const std::string& a, const std::string& b) const {
    const Person* child = lookup(b);
    if (!child) return false;
    return name_of(child->parent1) == a || name_of(child->parent2) == a;
  }

  /// Sibling via the first parent's child list, as the model defines it.
  bool sibling_of(const std::string& a, const std::string& b) const {
    if (a == b) return false;
    const Person* person = lookup(b);
    if (!person) return false;
    const Person* parent = lookup(person->parent1);
    if (!parent) return false;
    for (const auto& c : parent->children)
      if (name_of(c) == a) return true;
    return false;
  }

  /// a is the sister of b's father.
  bool paani_of(const std::string& a, const std::string& b) const {
    for (const auto& x : people_) {
      if (is_female(a) && sibling_of(a, x.name) && is_male(x.name) && parent_of(x.name, b)) return true;
    }
    return false;
  }

 private:
  std::vector<Person> people_;
};

}  // namespace wm::oracle
